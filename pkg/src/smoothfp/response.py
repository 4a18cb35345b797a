"""Logit best response, Nash distributions, and continuation in the smoothing parameter."""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import expit

from .game import (
    InvalidInputError,
    PotentialGame,
    as_profile,
    batch_gradient,
    batch_hessian,
    expected_potential_pinned,
    _check_player,
)

LOGIT_CLAMP = 500.0


class NoFixedPointError(RuntimeError):
    """No start converged; a fixed point exists, so the solver settings are at fault."""


class ContinuationError(RuntimeError):
    """Newton corrector failed while tracking a Nash distribution in lambda."""

    def __init__(self, message: str, last_good_lambda: float):
        super().__init__(message)
        self.last_good_lambda = last_good_lambda


class Classification(str, enum.Enum):
    STABLE = "stable"
    UNSTABLE = "unstable"
    NONHYPERBOLIC = "nonhyperbolic"


@dataclass(frozen=True)
class SolverOptions:
    """Knobs for the multi-start fixed-point solver and lambda continuation.

    ``grid_density=None`` picks 5 points per axis for N <= 4, 2 for N <= 8 and
    no grid (vertices only) beyond that.
    """

    tolerance: float = 1e-10
    damping: float = 0.5
    damped_steps: int = 200
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    vertex_inset: float = 1e-3
    grid_density: int | None = None
    extra_starts: tuple = ()
    dedup_radius: float = 1e-6
    schedule_ratio: float = 0.7
    schedule_floor: float = 1e-4
    snap_tol: float = 1e-3
    # largest sup-norm move the corrector may make in one substep
    max_jump: float = 0.05
    # times a rejected substep may be halved (in log lambda) before giving up
    max_halvings: int = 30

    @classmethod
    def from_dict(cls, data: dict) -> "SolverOptions":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise InvalidInputError(f"unknown solver options: {sorted(unknown)}")
        data = dict(data)
        if "extra_starts" in data:
            data["extra_starts"] = tuple(tuple(map(float, s)) for s in data["extra_starts"])
        return cls(**data)

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in self.__dataclass_fields__}
        out["extra_starts"] = [list(s) for s in self.extra_starts]
        return out


@dataclass(frozen=True)
class NashDistribution:
    point: np.ndarray
    lam: float
    residual: float
    classification: Classification | None = None
    continued_ne: np.ndarray | None = None
    eigenvalues: np.ndarray | None = field(default=None, compare=False)

    @property
    def is_pure(self) -> bool | None:
        """Whether the continued equilibrium is pure; None until continuation ran."""
        if self.continued_ne is None:
            return None
        return bool(np.all((self.continued_ne == 0.0) | (self.continued_ne == 1.0)))

    def to_dict(self) -> dict:
        return {
            "point": self.point.tolist(),
            "lambda": self.lam,
            "residual": self.residual,
            "classification": None if self.classification is None else self.classification.value,
            "terminal_ne": None if self.continued_ne is None else self.continued_ne.tolist(),
        }


@dataclass(frozen=True)
class ContinuationPath:
    nodes: list  # NashDistribution per lambda, lambda strictly decreasing
    terminal_ne: np.ndarray

    @property
    def lambdas(self) -> np.ndarray:
        return np.array([nd.lam for nd in self.nodes])

    @property
    def points(self) -> np.ndarray:
        return np.stack([nd.point for nd in self.nodes])


def _check_lambda(lam: float) -> float:
    lam = float(lam)
    if not lam > 0.0 or not np.isfinite(lam):
        raise InvalidInputError(f"smoothing parameter must be positive and finite, got {lam}")
    return lam


# largest double below 1; sigma(z) rounds to 1.0 for z > ~37
_BELOW_ONE = float(np.nextafter(1.0, 0.0))


def _clamped(d, lam):
    with np.errstate(over="ignore"):
        return np.clip(d / lam, -LOGIT_CLAMP, LOGIT_CLAMP)


def logit(d: np.ndarray, lam: float) -> np.ndarray:
    """sigma(d / lam) with the argument clamped to +-LOGIT_CLAMP.

    The result is capped at the largest double below 1 so it stays strictly
    inside (0, 1); the lower end is at least sigma(-LOGIT_CLAMP) > 0.
    """
    return np.minimum(expit(_clamped(d, lam)), _BELOW_ONE)


def logit_slope(d: np.ndarray, lam: float) -> np.ndarray:
    """b * (1 - b) for b = sigma(d / lam), computed without cancellation."""
    z = _clamped(d, lam)
    return expit(z) * expit(-z)


def batch_response(game: PotentialGame, lam: float, xs: np.ndarray) -> np.ndarray:
    """Joint logit response at each row of ``xs``; no validation."""
    return logit(batch_gradient(game, xs), lam)


def smoothed_best_response_i(game: PotentialGame, lam: float, x, i: int) -> float:
    """Probability that player ``i`` puts on action a_i^1 under the logit response."""
    lam = _check_lambda(lam)
    x = as_profile(game, x)
    i = _check_player(game, i)
    d = expected_potential_pinned(game, i, 1, x) - expected_potential_pinned(game, i, 2, x)
    return float(logit(np.float64(d), lam))


def smoothed_best_response(game: PotentialGame, lam: float, x) -> np.ndarray:
    lam = _check_lambda(lam)
    x = as_profile(game, x)
    return batch_response(game, lam, x[None, :])[0]


def residual(game: PotentialGame, lam: float, x) -> float:
    """Sup-norm distance between ``x`` and its logit response."""
    return float(np.max(np.abs(smoothed_best_response(game, lam, x) - as_profile(game, x))))


def default_grid_density(n: int) -> int:
    if n <= 4:
        return 5
    if n <= 8:
        return 2
    return 0


def _starts(game: PotentialGame, opts: SolverOptions) -> np.ndarray:
    """Product grid over per-axis levels {inset 0, inset 1} plus g interior levels.

    Mixing the boundary levels into the interior grid gives starts that sit near
    faces of the cube, which is where saddle-type fixed points live at small lam.
    """
    n = game.num_players
    d = opts.vertex_inset
    g = default_grid_density(n) if opts.grid_density is None else opts.grid_density
    levels = [d, 1.0 - d]
    if g > 0:
        levels.extend((np.arange(g) + 0.5) / g)
    starts = [np.array(p) for p in itertools.product(levels, repeat=n)]
    for s in opts.extra_starts:
        s = np.asarray(s, dtype=float)
        if s.shape != (n,):
            raise InvalidInputError(f"extra start {s} has wrong length for N={n}")
        starts.append(np.clip(s, 0.0, 1.0))
    return np.stack(starts)


def newton_batch(game: PotentialGame, lam: float, xs: np.ndarray, tol: float, max_iter: int):
    """Newton refinement of fixed points of the logit response from every row of ``xs``.

    The iteration runs in logit coordinates z = log(x / (1 - x)), on
    G(z) = lam * z - grad U(sigma(z)), whose roots are exactly the fixed points.
    In x itself F is nearly flat along saturated coordinates and very steep
    along mixing ones at small lam, which shrinks Newton basins of saddle-type
    points to almost nothing.  Returns ``(points, residuals)`` with the x-space
    sup-norm residual.
    """
    x = np.clip(np.array(xs, dtype=float), 1e-12, 1 - 1e-12)
    z = np.log(x) - np.log1p(-x)
    n = game.num_players
    eye = lam * np.eye(n)

    def x_residual(xv):
        return np.max(np.abs(batch_response(game, lam, xv) - xv), axis=1)

    def to_x(zv):
        return np.minimum(expit(zv), _BELOW_ONE)

    def step(za):
        xa = expit(za)
        grad = batch_gradient(game, xa)
        g = lam * za - grad
        jac = eye - batch_hessian(game, xa) * (xa * (1 - xa))[:, None, :]
        try:
            dz = np.linalg.solve(jac, -g[..., None])[..., 0]
        except np.linalg.LinAlgError:
            dz = np.empty_like(za)
            for r in range(za.shape[0]):
                try:
                    dz[r] = np.linalg.solve(jac[r], -g[r])
                except np.linalg.LinAlgError:
                    dz[r] = grad[r] / lam - za[r]  # plain fixed-point step
        # fixed points of the clamped response have |z| <= LOGIT_CLAMP
        return np.clip(za + dz, -LOGIT_CLAMP, LOGIT_CLAMP)

    pts = to_x(z)
    res = x_residual(pts)
    alive = np.isfinite(res)
    for _ in range(max_iter):
        active = alive & (res > tol)
        if not active.any():
            break
        z[active] = step(z[active])
        alive &= np.all(np.isfinite(z), axis=1)
        upd = active & alive
        pts[upd] = to_x(z[upd])
        res[upd] = x_residual(pts[upd])
    # one more step on converged rows takes the error well below tol
    done = alive & (res <= tol)
    if max_iter > 0 and done.any():
        zp = step(z[done])
        ok = np.all(np.isfinite(zp), axis=1)
        xp = to_x(zp)
        rp = np.where(ok, x_residual(np.where(ok[:, None], xp, 0.5)), np.inf)
        better = rp <= res[done]
        rows = np.flatnonzero(done)[better]
        pts[rows], res[rows], z[rows] = xp[better], rp[better], zp[better]
    res[~alive] = np.inf
    return pts, res


def dedup_points(
    points: Sequence[np.ndarray], radius: float, scores: Sequence[float] | None = None
) -> list[int]:
    """Indices of a canonical deduplicated subset, ordered by coordinates.

    Within a cluster the point with the lowest score (e.g. residual) wins;
    ties and the unscored case fall back to coordinate order.
    """
    order = sorted(range(len(points)), key=lambda k: tuple(points[k]))
    if scores is not None:
        order.sort(key=lambda k: scores[k])
    kept: list[int] = []
    for k in order:
        if all(np.max(np.abs(points[k] - points[j])) > radius for j in kept):
            kept.append(k)
    return sorted(kept, key=lambda k: tuple(points[k]))


def solve_nash_distributions(
    game: PotentialGame, lam: float, opts: SolverOptions | None = None
) -> list[NashDistribution]:
    """All fixed points of the logit response found by multi-start root finding.

    Every start is refined twice: once after damped fixed-point iteration (which
    drifts toward attracting points) and once by Newton directly (which is how
    saddle-type points are found).  Completeness is best effort.
    """
    lam = _check_lambda(lam)
    opts = opts or SolverOptions()
    starts = _starts(game, opts)

    damped = starts.copy()
    gamma = opts.damping
    for _ in range(opts.damped_steps):
        damped = (1 - gamma) * damped + gamma * batch_response(game, lam, damped)

    cand = np.concatenate([damped, starts])
    pts, res = newton_batch(game, lam, cand, opts.newton_tol, opts.newton_max_iter)
    good = [k for k in range(len(pts)) if res[k] <= opts.tolerance]
    if not good:
        raise NoFixedPointError(f"no start converged at lambda={lam}")
    keep = dedup_points([pts[k] for k in good], opts.dedup_radius, [res[k] for k in good])
    out = []
    for k in keep:
        p = pts[good[k]]
        p.setflags(write=False)
        out.append(NashDistribution(point=p, lam=lam, residual=float(res[good[k]])))
    return out


def default_schedule(lam: float, opts: SolverOptions | None = None) -> list[float]:
    opts = opts or SolverOptions()
    sched = [lam]
    while sched[-1] * opts.schedule_ratio > opts.schedule_floor:
        sched.append(sched[-1] * opts.schedule_ratio)
    if sched[-1] > opts.schedule_floor:
        sched.append(opts.schedule_floor)
    return sched


def snap(x: np.ndarray, tol: float) -> np.ndarray:
    out = np.array(x, dtype=float)
    out[out <= tol] = 0.0
    out[out >= 1.0 - tol] = 1.0
    return out


def continue_to_ne(
    game: PotentialGame,
    nd: NashDistribution,
    schedule: Sequence[float] | None = None,
    opts: SolverOptions | None = None,
) -> ContinuationPath:
    """Track ``nd`` down a decreasing lambda schedule and read off its limit equilibrium.

    Each schedule step runs as one or more substeps: the previous point predicts,
    Newton corrects, and a substep whose corrector fails or moves farther than
    ``opts.max_jump`` is retried with half the step in log lambda.
    """
    opts = opts or SolverOptions()
    sched = default_schedule(nd.lam, opts) if schedule is None else [float(s) for s in schedule]
    if not sched or any(s <= 0 for s in sched):
        raise InvalidInputError("schedule must be a nonempty list of positive lambdas")
    if any(b >= a for a, b in zip(sched, sched[1:])):
        raise InvalidInputError("schedule must be strictly decreasing")

    x = np.array(nd.point, dtype=float)
    nodes = []
    cur = nd.lam
    for target in sched:
        if target > cur:
            raise InvalidInputError("schedule must not start above the Nash distribution's lambda")
        ratio = target / cur
        halvings = 0
        while cur > target:
            lam = max(target, cur * ratio)
            pts, res = newton_batch(game, lam, x[None, :], opts.newton_tol, opts.newton_max_iter)
            new, r = pts[0], float(res[0])
            jump = float(np.max(np.abs(new - x)))
            if r <= opts.tolerance and jump <= opts.max_jump:
                x, cur = np.array(new), lam
                continue
            halvings += 1
            if halvings > opts.max_halvings:
                why = f"residual {r:.3g}" if r > opts.tolerance else f"jump {jump:.3g}"
                raise ContinuationError(f"corrector failed below lambda={cur} ({why})", cur)
            ratio = np.sqrt(ratio)
        pt = np.array(x)
        pt.setflags(write=False)
        nodes.append(NashDistribution(point=pt, lam=float(target), residual=residual(game, target, pt)))
    terminal = snap(nodes[-1].point, opts.snap_tol)
    return ContinuationPath(nodes=nodes, terminal_ne=terminal)


def is_pure_strategy_nd(path: ContinuationPath) -> bool:
    t = path.terminal_ne
    return bool(np.all((t == 0.0) | (t == 1.0)))


def with_continuation(
    game: PotentialGame, nd: NashDistribution, opts: SolverOptions | None = None
) -> NashDistribution:
    """Copy of ``nd`` with ``continued_ne`` filled in; left unset if continuation fails."""
    try:
        path = continue_to_ne(game, nd, opts=opts)
    except ContinuationError:
        return nd
    return replace(nd, continued_ne=path.terminal_ne)
