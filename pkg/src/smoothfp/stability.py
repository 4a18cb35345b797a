"""Jacobian of the logit dynamics, rest-point classification, NE enumeration, regularity audit."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .game import (
    InvalidInputError,
    PotentialGame,
    Tag,
    as_profile,
    batch_gradient,
    batch_hessian,
    format_pattern,
    potential_gradient,
    potential_hessian,
    restricted_hessian,
)
from .response import (
    Classification,
    NashDistribution,
    SolverOptions,
    ContinuationError,
    _check_lambda,
    continue_to_ne,
    dedup_points,
    logit_slope,
    residual,
    solve_nash_distributions,
)

MAX_EIG_DIM = 24
MAX_MIXED_ENUM_PLAYERS = 8


class NotARestPointError(ValueError):
    pass


@dataclass(frozen=True)
class StabilityTolerances:
    # hyperbolic iff min |eig| > singular_rel * (1 + spectral radius)
    singular_rel: float = 1e-7
    margin: float = 1e-7
    residual: float = 1e-8


@dataclass(frozen=True)
class RestPointClassification:
    eigenvalues: np.ndarray
    hyperbolic: bool
    linearly_stable: bool
    spectral_margin: float

    @property
    def label(self) -> Classification:
        if not self.hyperbolic:
            return Classification.NONHYPERBOLIC
        return Classification.STABLE if self.linearly_stable else Classification.UNSTABLE


def batch_jacobian(game: PotentialGame, lam: float, xs: np.ndarray) -> np.ndarray:
    """DF at each row of ``xs`` for F(x) = BR(x) - x; shape ``(B, N, N)``."""
    slope = logit_slope(batch_gradient(game, xs), lam) / lam
    jac = slope[:, :, None] * batch_hessian(game, xs)
    n = game.num_players
    jac[:, np.arange(n), np.arange(n)] = -1.0
    return jac


def jacobian(game: PotentialGame, lam: float, x) -> np.ndarray:
    """Entry (i, j) is b_i (1 - b_i) d2U/dx_i dx_j / lam - delta_ij with b the logit response."""
    lam = _check_lambda(lam)
    x = as_profile(game, x)
    slope = logit_slope(potential_gradient(game, x), lam) / lam
    jac = slope[:, None] * potential_hessian(game, x)
    np.fill_diagonal(jac, -1.0)
    return jac


def jacobian_block_form(game: PotentialGame, lam: float, x, pattern: Sequence[Tag]) -> np.ndarray:
    """DF at a fixed point assembled block by block over the mixing / pure split.

    Mixing players first: top-left is R H with R = diag(x_i (1 - x_i)) and H the
    restricted Hessian; the remaining blocks scale Hessian rows by the same
    x_i (1 - x_i) factor of their row player.  Returned in the original player order.
    """
    lam = _check_lambda(lam)
    x = as_profile(game, x)
    pattern = tuple(Tag(t) for t in pattern)
    mix = [i for i, t in enumerate(pattern) if t is Tag.MIXING]
    pure = [i for i, t in enumerate(pattern) if t is not Tag.MIXING]
    order = mix + pure
    w = x * (1.0 - x)
    hess = potential_hessian(game, x)
    nm = len(mix)
    top_left = np.diag(w[mix]) @ restricted_hessian(game, x, pattern) if nm else np.zeros((0, 0))
    b_blk = w[mix][:, None] * hess[np.ix_(mix, pure)]
    lower = w[pure][:, None] * hess[np.ix_(pure, mix)]
    c_blk = w[pure][:, None] * hess[np.ix_(pure, pure)]
    blocks = np.block([[top_left, b_blk], [lower, c_blk]]) / lam - np.eye(len(order))
    inv = np.argsort(order)
    return blocks[np.ix_(inv, inv)]


def eigenvalues(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidInputError(f"eigenvalues need a square matrix, got shape {m.shape}")
    if m.shape[0] > MAX_EIG_DIM:
        raise InvalidInputError(f"matrix dimension {m.shape[0]} exceeds {MAX_EIG_DIM}")
    return np.linalg.eigvals(m)


def classify_rest_point(
    game: PotentialGame, lam: float, x, tols: StabilityTolerances | None = None
) -> RestPointClassification:
    tols = tols or StabilityTolerances()
    r = residual(game, lam, x)
    if r > tols.residual:
        raise NotARestPointError(f"residual {r:.3g} exceeds {tols.residual:.3g}")
    eig = eigenvalues(jacobian(game, lam, x))
    mags = np.abs(eig)
    hyperbolic = bool(mags.min() > tols.singular_rel * (1.0 + mags.max()))
    margin = float(np.max(eig.real))
    stable = hyperbolic and margin < -tols.margin
    return RestPointClassification(eig, hyperbolic, stable, margin)


def classify_nash_distributions(
    game: PotentialGame,
    nds: Sequence[NashDistribution],
    tols: StabilityTolerances | None = None,
    continue_opts: SolverOptions | None = None,
    with_continuation: bool = True,
) -> list[NashDistribution]:
    """Attach stability labels, eigenvalues and (optionally) the continued equilibrium."""
    out = []
    for nd in nds:
        c = classify_rest_point(game, nd.lam, nd.point, tols)
        ne = nd.continued_ne
        if with_continuation and ne is None:
            try:
                ne = continue_to_ne(game, nd, opts=continue_opts).terminal_ne
            except ContinuationError:
                ne = None
        out.append(replace(nd, classification=c.label, eigenvalues=c.eigenvalues, continued_ne=ne))
    return out


def nash_distributions(
    game: PotentialGame,
    lam: float,
    opts: SolverOptions | None = None,
    tols: StabilityTolerances | None = None,
) -> list[NashDistribution]:
    """Solve, classify and continue every Nash distribution at ``lam``."""
    return classify_nash_distributions(game, solve_nash_distributions(game, lam, opts), tols, opts)


# --- equilibrium enumeration -------------------------------------------------------------


def _vertex_coords(game: PotentialGame, p: int) -> np.ndarray:
    bits = (p >> np.arange(game.num_players)) & 1
    return (1 - bits).astype(float)


def _deviation_gaps(game: PotentialGame) -> np.ndarray:
    """gaps[p, i] = u(p) - u(p with player i's action flipped)."""
    u = game.potential
    idx = np.arange(u.size)
    return np.stack([u - u[idx ^ (1 << i)] for i in range(game.num_players)], axis=1)


def tie_margin(game: PotentialGame) -> float:
    """Smallest |u(p) - u(p')| over pure profiles differing in one player's action.

    Small values mean some player is nearly indifferent at some profile,
    equilibrium or not; folds of Nash distributions can then persist down to
    lambda on that scale.
    """
    return float(np.abs(_deviation_gaps(game)).min())


def enumerate_pure_ne(game: PotentialGame) -> list[np.ndarray]:
    """Vertices where no single-player deviation raises the potential (weak inequality)."""
    gaps = _deviation_gaps(game)
    hits = np.flatnonzero(np.all(gaps >= 0.0, axis=1))
    out = [_vertex_coords(game, int(p)) for p in hits]
    return sorted(out, key=tuple)


@dataclass(frozen=True)
class EnumerationOptions:
    # starts per mixing axis; None scales with the number of mixing players
    grid: int | None = None
    interior_eps: float = 1e-9
    ne_tol: float = 1e-9
    newton_tol: float = 1e-12
    max_iter: int = 100
    degeneracy_tol: float = 1e-12
    singular_tol: float = 1e-12
    dedup_radius: float = 1e-7


@dataclass(frozen=True)
class MixedNEResult:
    equilibria: list  # (profile, pattern) pairs
    degeneracies: list  # pattern strings with a continuum of stationary points


def _grid_for(nm: int, opts: EnumerationOptions) -> int:
    if opts.grid is not None:
        return opts.grid
    if nm <= 3:
        return 5
    if nm <= 5:
        return 4
    return 3


def _stationary_points(sub: PotentialGame, grid: int, opts: EnumerationOptions) -> np.ndarray:
    """Zeros of the gradient of ``sub`` inside the open cube, by Newton from a grid.

    Iterates are not confined to the cube: the multilinear extension is defined
    everywhere, and clamping only stalls starts attracted to exterior roots.
    Rows leaving a padded box are abandoned; exterior roots are filtered at the end.
    """
    nm = sub.num_players
    axis = (np.arange(grid) + 0.5) / grid
    y = np.array(list(itertools.product(axis, repeat=nm)), dtype=float)
    g = batch_gradient(sub, y)
    res = np.max(np.abs(g), axis=1)
    alive = np.ones(len(y), dtype=bool)
    for _ in range(opts.max_iter):
        active = alive & (res > opts.newton_tol)
        if not active.any():
            break
        ya, ga = y[active], g[active]
        h = batch_hessian(sub, ya)
        try:
            step = np.linalg.solve(h, -ga[..., None])[..., 0]
        except np.linalg.LinAlgError:
            step = np.zeros_like(ya)
            for r in range(ya.shape[0]):
                try:
                    step[r] = np.linalg.solve(h[r], -ga[r])
                except np.linalg.LinAlgError:
                    step[r] = np.nan
        y[active] = ya + step
        escaped = ~np.all(np.isfinite(y) & (y > -1.0) & (y < 2.0), axis=1)
        alive &= ~escaped
        upd = active & alive
        g[upd] = batch_gradient(sub, y[upd])
        res[upd] = np.max(np.abs(g[upd]), axis=1)
    scale = max(1.0, float(np.max(np.abs(sub.potential))))
    ok = alive & (res <= opts.newton_tol * scale)
    return y[ok]


def enumerate_mixed_ne(game: PotentialGame, opts: EnumerationOptions | None = None) -> MixedNEResult:
    """Equilibria with at least one mixing player, by support-pattern enumeration."""
    opts = opts or EnumerationOptions()
    n = game.num_players
    if n > MAX_MIXED_ENUM_PLAYERS:
        raise InvalidInputError(f"mixed NE enumeration is capped at N={MAX_MIXED_ENUM_PLAYERS}")
    scale = max(1.0, float(np.max(np.abs(game.potential))))
    found = []
    degeneracies = []
    for pattern in itertools.product((Tag.MIXING, Tag.ACTION1, Tag.ACTION2), repeat=n):
        mix = [i for i, t in enumerate(pattern) if t is Tag.MIXING]
        if not mix:
            continue
        sub_tensor = game.tensor
        for i in reversed(range(n)):
            if pattern[i] is not Tag.MIXING:
                sub_tensor = sub_tensor.take(0 if pattern[i] is Tag.ACTION1 else 1, axis=i)
        sub_u = np.ascontiguousarray(sub_tensor.transpose(tuple(reversed(range(len(mix)))))).ravel()
        sub = PotentialGame(len(mix), sub_u)
        if len(mix) == 1:
            # dU/dx_i does not depend on x_i: either no solution or a whole segment
            if abs(sub_u[0] - sub_u[1]) <= opts.degeneracy_tol * scale:
                degeneracies.append(format_pattern(pattern))
            continue
        for y in _stationary_points(sub, _grid_for(len(mix), opts), opts):
            if np.any(y <= opts.interior_eps) or np.any(y >= 1 - opts.interior_eps):
                continue
            x = np.array([1.0 if t is Tag.ACTION1 else 0.0 for t in pattern])
            x[mix] = y
            grad = potential_gradient(game, x)
            if any(
                (t is Tag.ACTION1 and grad[i] < -opts.ne_tol)
                or (t is Tag.ACTION2 and grad[i] > opts.ne_tol)
                for i, t in enumerate(pattern)
            ):
                continue
            if abs(np.linalg.det(restricted_hessian(game, x, pattern))) <= opts.singular_tol * scale:
                # not isolated: report the pattern, not samples of the continuum
                label = format_pattern(pattern)
                if label not in degeneracies:
                    degeneracies.append(label)
                continue
            found.append((x, pattern))
    keep = dedup_points([f[0] for f in found], opts.dedup_radius)
    return MixedNEResult([found[k] for k in keep], degeneracies)


# --- regularity audit ----------------------------------------------------------------------


@dataclass(frozen=True)
class AuditTolerances:
    strict: float = 1e-9
    singular: float = 1e-9
    enumeration: EnumerationOptions = field(default_factory=EnumerationOptions)


@dataclass(frozen=True)
class EquilibriumRecord:
    profile: np.ndarray
    pattern: tuple
    quasi_strict_margin: float | None  # None when every player mixes
    restricted_hessian_det: float | None  # None at vertices
    regular: bool
    hessian_min_singular: float | None = None  # None at vertices
    support_margin: float | None = None  # min distance of mixing coordinates to {0, 1}

    @property
    def conditioning(self) -> float:
        """Smallest of the quantities whose vanishing makes this equilibrium irregular."""
        vals = [v for v in (self.quasi_strict_margin, self.hessian_min_singular,
                            self.support_margin) if v is not None]
        return float(min(vals))

    @property
    def is_pure(self) -> bool:
        return all(t is not Tag.MIXING for t in self.pattern)

    def to_dict(self) -> dict:
        return {
            "profile": self.profile.tolist(),
            "pattern": format_pattern(self.pattern),
            "quasi_strict_margin": self.quasi_strict_margin,
            "restricted_hessian_det": self.restricted_hessian_det,
            "regular": self.regular,
            "hessian_min_singular": self.hessian_min_singular,
            "support_margin": self.support_margin,
        }


@dataclass(frozen=True)
class EquilibriumReport:
    equilibria: list
    degeneracies: list
    game_regular: bool

    @property
    def pure_ne(self) -> list[np.ndarray]:
        return [e.profile for e in self.equilibria if e.is_pure]

    @property
    def mixed_ne(self) -> list[tuple]:
        return [(e.profile, e.pattern) for e in self.equilibria if not e.is_pure]

    @property
    def profiles(self) -> list[np.ndarray]:
        return [e.profile for e in self.equilibria]

    @property
    def conditioning(self) -> float:
        """How far the game is from failing the audit (0 when it fails)."""
        if not self.game_regular:
            return 0.0
        return min(e.conditioning for e in self.equilibria)

    def to_dict(self) -> dict:
        return {
            "equilibria": [e.to_dict() for e in self.equilibria],
            "num_pure": len(self.pure_ne),
            "num_mixed": len(self.mixed_ne),
            "degeneracies": list(self.degeneracies),
            "game_regular": self.game_regular,
            "conditioning": self.conditioning,
        }


def _pattern_of_vertex(v: np.ndarray) -> tuple:
    return tuple(Tag.ACTION1 if c == 1.0 else Tag.ACTION2 for c in v)


def audit_regularity(game: PotentialGame, tols: AuditTolerances | None = None) -> EquilibriumReport:
    """Enumerate equilibria and test quasi-strictness plus nonsingular restricted Hessians."""
    tols = tols or AuditTolerances()
    records = []
    gaps = _deviation_gaps(game)
    for v in enumerate_pure_ne(game):
        p = int(np.sum((v == 0.0) << np.arange(game.num_players)))
        margin = float(gaps[p].min())
        records.append(EquilibriumRecord(v, _pattern_of_vertex(v), margin, None, margin > tols.strict))
    mixed = enumerate_mixed_ne(game, tols.enumeration)
    for x, pattern in mixed.equilibria:
        grad = potential_gradient(game, x)
        margins = [grad[i] if t is Tag.ACTION1 else -grad[i]
                   for i, t in enumerate(pattern) if t is not Tag.MIXING]
        margin = float(min(margins)) if margins else None
        h = restricted_hessian(game, x, pattern)
        det = float(np.linalg.det(h))
        ok = (margin is None or margin > tols.strict) and abs(det) > tols.singular
        mixing = np.array([x[i] for i, t in enumerate(pattern) if t is Tag.MIXING])
        records.append(EquilibriumRecord(
            x, tuple(pattern), margin, det, ok,
            hessian_min_singular=float(np.linalg.svd(h, compute_uv=False).min()),
            support_margin=float(np.minimum(mixing, 1.0 - mixing).min()),
        ))
    records.sort(key=lambda e: tuple(e.profile))
    game_regular = all(e.regular for e in records) and not mixed.degeneracies
    return EquilibriumReport(records, list(mixed.degeneracies), game_regular)


# --- hyperbolicity and the stable-iff-pure split -------------------------------------------


def stability_split_holds(
    game: PotentialGame,
    lam: float,
    opts: SolverOptions | None = None,
    tols: StabilityTolerances | None = None,
) -> bool:
    """All NDs hyperbolic, and stable exactly when they continue to a pure equilibrium."""
    for nd in nash_distributions(game, lam, opts, tols):
        if nd.classification is Classification.NONHYPERBOLIC or nd.continued_ne is None:
            return False
        if (nd.classification is Classification.STABLE) != nd.is_pure:
            return False
    return True


def find_lambda0(
    game: PotentialGame,
    lo: float = 1e-4,
    hi: float = 1.0,
    steps: int = 20,
    opts: SolverOptions | None = None,
    tols: StabilityTolerances | None = None,
) -> float | None:
    """Bisect (geometrically) for the largest lambda in [lo, hi] where the stable-iff-pure split holds.

    Returns None when it already fails at ``lo``.
    """
    if not stability_split_holds(game, lo, opts, tols):
        return None
    if stability_split_holds(game, hi, opts, tols):
        return hi
    for _ in range(steps):
        mid = float(np.sqrt(lo * hi))
        if stability_split_holds(game, mid, opts, tols):
            lo = mid
        else:
            hi = mid
    return lo
