"""N-player, two-action potential games and exact calculus on the expected potential.

Layout of the potential vector: entry ``p`` holds the potential of the pure
profile in which player ``i`` (0-based) plays action ``a_i^1`` when bit ``i``
of ``p`` is 0 and action ``a_i^2`` when it is 1.  Player 0 is the least
significant bit.

A mixed profile ``x`` is a length-N array; ``x[i]`` is the probability that
player ``i`` plays ``a_i^1``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

MAX_PLAYERS = 24


class InvalidInputError(ValueError):
    """Raised for malformed games, profiles, indices or patterns."""


class Tag(str, enum.Enum):
    """Role of one player in a mixing pattern."""

    MIXING = "M"
    ACTION1 = "1"
    ACTION2 = "0"


MixingPattern = tuple  # tuple[Tag, ...]


def parse_pattern(text: str) -> tuple[Tag, ...]:
    """Parse ``"M,1,0"`` style strings into a tuple of tags."""
    try:
        return tuple(Tag(tok.strip()) for tok in text.split(","))
    except ValueError as exc:
        raise InvalidInputError(f"bad mixing pattern {text!r}") from exc


def format_pattern(pattern: Sequence[Tag]) -> str:
    return ",".join(Tag(t).value for t in pattern)


@dataclass(frozen=True, eq=False)
class PotentialGame:
    """Identical-interest game with ``num_players`` players and two actions each."""

    num_players: int
    potential: np.ndarray
    name: str | None = None
    seed: int | None = None
    _tensor: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        n = self.num_players
        if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
            raise InvalidInputError(f"num_players must be a positive integer, got {n!r}")
        if n > MAX_PLAYERS:
            raise InvalidInputError(f"num_players={n} exceeds the cap of {MAX_PLAYERS}")
        u = np.array(self.potential, dtype=float).reshape(-1)
        if u.size != 2**n:
            raise InvalidInputError(
                f"potential has {u.size} entries, expected 2^{n} = {2**n}"
            )
        bad = np.flatnonzero(~np.isfinite(u))
        if bad.size:
            raise InvalidInputError(f"potential entry {bad[0]} is not finite ({u[bad[0]]})")
        u.setflags(write=False)
        object.__setattr__(self, "num_players", int(n))
        object.__setattr__(self, "potential", u)
        # axis i of the tensor is player i; index 0 on an axis is action a_i^1
        t = u.reshape((2,) * n).transpose(tuple(reversed(range(n))))
        t = np.ascontiguousarray(t)
        t.setflags(write=False)
        object.__setattr__(self, "_tensor", t)

    def __eq__(self, other):
        if not isinstance(other, PotentialGame):
            return NotImplemented
        return self.num_players == other.num_players and np.array_equal(
            self.potential, other.potential
        )

    def __hash__(self):
        return hash((self.num_players, self.potential.tobytes()))

    @property
    def tensor(self) -> np.ndarray:
        """Potential as an array of shape ``(2,) * N`` indexed by action (0 = a^1)."""
        return self._tensor

    @cached_property
    def _gradient_tensors(self) -> list[np.ndarray]:
        # d/dx_i of the multilinear extension: difference along axis i
        t = self._tensor
        return [np.array(t.take(0, axis=i) - t.take(1, axis=i))
                for i in range(self.num_players)]

    @cached_property
    def _monomial_coefficients(self) -> np.ndarray:
        # U(x) = sum_S coef[S] prod_{i in S} x_i, bit i of S <-> player i
        c = self._tensor
        for i in range(self.num_players):
            t0, t1 = c.take(0, axis=i), c.take(1, axis=i)
            c = np.stack([t1, t0 - t1], axis=i)
        return c.transpose(tuple(reversed(range(self.num_players)))).reshape(-1)

    @cached_property
    def _monomial_gradient_matrix(self) -> np.ndarray:
        # G[S, i] = coef[S + {i}] for i not in S
        n = self.num_players
        coef = self._monomial_coefficients
        sets = np.arange(2**n)
        g = np.zeros((2**n, n))
        for i in range(n):
            free = (sets >> i) & 1 == 0
            g[free, i] = coef[sets[free] | (1 << i)]
        return g

    @cached_property
    def _monomial_hessian_matrix(self) -> np.ndarray:
        # H[S, i*N + j] = coef[S + {i, j}] for i != j, both outside S
        n = self.num_players
        coef = self._monomial_coefficients
        sets = np.arange(2**n)
        h = np.zeros((2**n, n * n))
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                free = ((sets >> i) & 1 == 0) & ((sets >> j) & 1 == 0)
                h[free, i * n + j] = coef[sets[free] | (1 << i) | (1 << j)]
        return h

    def shifted(self, c: float) -> "PotentialGame":
        return PotentialGame(self.num_players, self.potential + c, self.name, self.seed)

    def scaled(self, c: float) -> "PotentialGame":
        return PotentialGame(self.num_players, self.potential * c, self.name, self.seed)


def coordination_game() -> PotentialGame:
    """Two-player pure coordination: potential 1 on matching actions, 0 otherwise."""
    return PotentialGame(2, [1.0, 0.0, 0.0, 1.0], name="coordination")


def profile_index(actions: Sequence[int]) -> int:
    """Flat index of a pure profile given per-player action numbers in {1, 2}."""
    idx = 0
    for i, k in enumerate(actions):
        if k not in (1, 2):
            raise InvalidInputError(f"action index must be 1 or 2, got {k!r}")
        idx |= (k - 1) << i
    return idx


def as_profile(game: PotentialGame, x) -> np.ndarray:
    """Validate ``x`` as a mixed profile of ``game`` and return it as a float array."""
    arr = np.asarray(x, dtype=float)
    if arr.shape != (game.num_players,):
        raise InvalidInputError(
            f"profile has shape {arr.shape}, expected ({game.num_players},)"
        )
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InvalidInputError(f"profile coordinates must lie in [0, 1], got {arr}")
    return arr


def _check_player(game: PotentialGame, i: int) -> int:
    if not 0 <= i < game.num_players:
        raise InvalidInputError(f"player index {i} out of range for N={game.num_players}")
    return int(i)


def contract(tensor: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Multilinear extension of ``tensor`` (shape ``(2,)*m``) at a batch of points.

    ``xs`` has shape ``(B, m)``; returns shape ``(B,)``.  Axis ``k`` is weighted
    by ``xs[:, k]`` on index 0 and ``1 - xs[:, k]`` on index 1.
    """
    m = tensor.ndim
    if m == 0:
        return np.full(xs.shape[0], float(tensor))
    out = tensor[..., None]
    # x*hi + (1-x)*lo is exact at x in {0, 1}, so vertices read entries exactly
    for k in range(m - 1, -1, -1):
        out = xs[:, k] * out[..., 0, :] + (1.0 - xs[:, k]) * out[..., 1, :]
    return out


def expected_potential(game: PotentialGame, x) -> float:
    """Expected potential U(x) under independent mixing."""
    x = as_profile(game, x)
    return float(contract(game.tensor, x[None, :])[0])


def expected_potential_pinned(game: PotentialGame, i: int, k: int, x) -> float:
    """U(a_i^k, x_{-i}): expected potential when player ``i`` plays action ``k`` in {1, 2}."""
    x = as_profile(game, x)
    i = _check_player(game, i)
    if k not in (1, 2):
        raise InvalidInputError(f"action index must be 1 or 2, got {k!r}")
    sub = game.tensor.take(k - 1, axis=i)
    others = np.delete(x, i)
    return float(contract(sub, others[None, :])[0])


_MONOMIAL_MAX_PLAYERS = 12


def _monomials(xs: np.ndarray) -> np.ndarray:
    # column S holds prod_{i in S} x_i, bit i of S <-> player i
    m = np.ones((xs.shape[0], 1))
    for k in range(xs.shape[1]):
        m = np.concatenate([m, m * xs[:, k : k + 1]], axis=1)
    return m


def batch_gradient(game: PotentialGame, xs: np.ndarray) -> np.ndarray:
    """Gradient of U at each row of ``xs`` (shape ``(B, N)``), without validation.

    This is the hot path of the simulators.  For small N it evaluates U in the
    monomial basis, where the whole gradient is one matrix product; larger
    games use per-player tensor contraction.
    """
    n = game.num_players
    if n <= _MONOMIAL_MAX_PLAYERS:
        return _monomials(xs) @ game._monomial_gradient_matrix
    out = np.empty(xs.shape, dtype=float)
    for i, d in enumerate(game._gradient_tensors):
        out[:, i] = contract(d, np.delete(xs, i, axis=1))
    return out


def batch_hessian(game: PotentialGame, xs: np.ndarray) -> np.ndarray:
    """Hessians of U at each row of ``xs``; returns shape ``(B, N, N)``."""
    n = game.num_players
    if n <= _MONOMIAL_MAX_PLAYERS:
        return (_monomials(xs) @ game._monomial_hessian_matrix).reshape(-1, n, n)
    return np.stack([potential_hessian(game, x) for x in xs])


def potential_gradient(game: PotentialGame, x) -> np.ndarray:
    """dU/dx_i = U(a_i^1, x_{-i}) - U(a_i^2, x_{-i}) for every player."""
    x = as_profile(game, x)
    row = x[None, :]
    return np.array([contract(d, np.delete(row, i, axis=1))[0]
                     for i, d in enumerate(game._gradient_tensors)])


def potential_hessian(game: PotentialGame, x) -> np.ndarray:
    """Second derivatives of U; the diagonal is exactly zero since U is affine per coordinate."""
    x = as_profile(game, x)
    n = game.num_players
    hess = np.zeros((n, n))
    for i in range(n):
        d_i = game.tensor.take(0, axis=i) - game.tensor.take(1, axis=i)
        for j in range(i + 1, n):
            jj = j - 1  # axis of player j once axis i is removed
            d_ij = d_i.take(0, axis=jj) - d_i.take(1, axis=jj)
            others = np.delete(x, [i, j])
            hess[i, j] = hess[j, i] = contract(d_ij, others[None, :])[0]
    return hess


def restricted_hessian(game: PotentialGame, x, pattern: Sequence[Tag]) -> np.ndarray:
    """Hessian of U restricted to the rows and columns of mixing players."""
    pattern = tuple(Tag(t) for t in pattern)
    if len(pattern) != game.num_players:
        raise InvalidInputError(
            f"pattern length {len(pattern)} does not match N={game.num_players}"
        )
    idx = [i for i, t in enumerate(pattern) if t is Tag.MIXING]
    if not idx:
        raise InvalidInputError("restricted Hessian is empty: no mixing players in pattern")
    hess = potential_hessian(game, x)
    return hess[np.ix_(idx, idx)]
