"""Smooth fictitious play (stochastic) and the logit best-response flow (deterministic).

Random streams
--------------
Each run owns one generator, ``numpy.random.Generator(PCG64(SeedSequence(seed)))``.
It is consumed in a fixed order: N uniforms for the initial actions (drawn even
when ``init`` is given, so the layout never shifts), then N uniforms per stage
in player order.  Player ``i`` plays a_i^1 at stage n+1 iff its uniform is
below BR_i(x(n)).  A run's draws therefore depend only on its own seed, no
matter how runs are batched.  Response probabilities computed for different
batch shapes may differ in the last bit, which could flip a draw lying within
one ulp of the threshold; the experiment harness fixes the batch layout in
its config so results are bit-identical for any worker count.

Run seeds for experiments are derived with :func:`derive_seed`.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .game import InvalidInputError, PotentialGame, as_profile, contract
from .response import NashDistribution, _check_lambda, batch_response

SEED_MASK = (1 << 64) - 1
_CHUNK = 4096


class IntegrationError(RuntimeError):
    pass


def derive_seed(base_seed: int, *keys: int) -> int:
    """64-bit child seed of ``base_seed`` for the stream labelled by ``keys``."""
    ss = np.random.SeedSequence([int(base_seed) & SEED_MASK, *(int(k) & SEED_MASK for k in keys)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def run_generator(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & SEED_MASK)))


@dataclass(frozen=True)
class Trajectory:
    kind: str  # "stochastic" or "flow"
    lam: float
    times: np.ndarray
    states: np.ndarray  # (samples, N)
    step_rule: str
    seed: int | None = None

    @property
    def terminal(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.states.shape[1]
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(n)])
        for t, row in zip(self.times, self.states):
            w.writerow([repr(float(t)) if self.kind == "flow" else int(t)] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def _sample_stages(steps: int, thinning: int) -> np.ndarray:
    stages = np.arange(0, steps + 1, thinning)
    if stages[-1] != steps:
        stages = np.append(stages, steps)
    return stages


def sample_actions(game: PotentialGame, lam: float, xs: np.ndarray, uniforms: np.ndarray) -> np.ndarray:
    """Indicators of a_i^1 for the next stage, one row per run."""
    return (uniforms < batch_response(game, lam, xs)).astype(float)


def smooth_fp_step(game: PotentialGame, lam: float, xs: np.ndarray, n: int, uniforms: np.ndarray) -> np.ndarray:
    """x(n+1) = x(n) + (1{a(n+1) = a^1} - x(n)) / (n+1) for each row of ``xs``."""
    return xs + (sample_actions(game, lam, xs, uniforms) - xs) / (n + 1)


def smooth_fp_batch(
    game: PotentialGame,
    lam: float,
    steps: int,
    seeds: Sequence[int],
    init: Sequence[int] | None = None,
    thinning: int = 1,
) -> list[Trajectory]:
    """Independent smooth FP runs, one per seed, advanced in lockstep.

    ``init`` is an optional pure action profile (numbers in {1, 2}) used by every run.
    The state x(n) is kept as exact action counts divided by n, which is the
    closed form of the 1/(n+1) running-average update.
    """
    lam = _check_lambda(lam)
    if steps < 1 or thinning < 1:
        raise InvalidInputError("steps and thinning must be positive")
    n = game.num_players
    if init is not None:
        init = np.asarray(init)
        if init.shape != (n,) or not np.all((init == 1) | (init == 2)):
            raise InvalidInputError(f"init must be a length-{n} profile of actions in {{1, 2}}")
    gens = [run_generator(s) for s in seeds]
    runs = len(gens)
    first = np.stack([g.random(n) for g in gens])
    x = (first < 0.5).astype(float) if init is None else np.tile((init == 1).astype(float), (runs, 1))

    stages = _sample_stages(steps, thinning)
    samples = np.empty((len(stages), runs, n))
    samples[0] = x
    next_sample = 1
    counts = np.zeros((runs, n))
    done = 0
    while done < steps:
        chunk = min(_CHUNK, steps - done)
        draws = np.stack([g.random((chunk, n)) for g in gens], axis=1)  # (chunk, runs, n)
        for c in range(chunk):
            counts += sample_actions(game, lam, x, draws[c])
            done += 1
            x = counts / done
            if next_sample < len(stages) and stages[next_sample] == done:
                samples[next_sample] = x
                next_sample += 1
    rule = "harmonic 1/(n+1)"
    return [
        Trajectory("stochastic", lam, stages.copy(), samples[:, r, :].copy(), rule, int(seeds[r]))
        for r in range(runs)
    ]


def smooth_fp_run(
    game: PotentialGame,
    lam: float,
    steps: int,
    seed: int,
    init: Sequence[int] | None = None,
    thinning: int = 1,
) -> Trajectory:
    """One smooth FP run; identical to the matching run of :func:`smooth_fp_batch`."""
    return smooth_fp_batch(game, lam, steps, [seed], init, thinning)[0]


def br_flow_batch(
    game: PotentialGame,
    lam: float,
    x0s: np.ndarray,
    horizon: float,
    h: float = 0.01,
    record_every: int = 1,
) -> list[Trajectory]:
    """Classical RK4 on dx/dt = BR(x) - x from several starts at once."""
    lam = _check_lambda(lam)
    if not 0 < h <= 0.1:
        raise InvalidInputError(f"step h must lie in (0, 0.1], got {h}")
    if horizon < h:
        raise InvalidInputError("horizon must be at least one step")
    x = np.array([as_profile(game, x0) for x0 in x0s], dtype=float)
    nsteps = int(round(horizon / h))

    def f(y):
        return batch_response(game, lam, y) - y

    times = [0.0]
    states = [x.copy()]
    for k in range(1, nsteps + 1):
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = np.clip(x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4), 0.0, 1.0)
        if not np.all(np.isfinite(x)):
            raise IntegrationError(f"non-finite state at step {k}")
        if k % record_every == 0 or k == nsteps:
            times.append(k * h)
            states.append(x.copy())
    t = np.array(times)
    st = np.stack(states)
    rule = f"rk4 h={h}"
    return [Trajectory("flow", lam, t, st[:, r, :].copy(), rule) for r in range(st.shape[1])]


def br_flow(
    game: PotentialGame, lam: float, x0, horizon: float, h: float = 0.01, record_every: int = 1
) -> Trajectory:
    return br_flow_batch(game, lam, np.asarray(x0, dtype=float)[None, :], horizon, h, record_every)[0]


def perturbed_potential(game: PotentialGame, lam: float, x) -> float | np.ndarray:
    """V(x) = U(x) + lam * sum_i H(x_i) with binary entropy H; nondecreasing along the flow.

    ``x`` may be one profile or an array of profiles (one per row).
    """
    lam = _check_lambda(lam)
    xs = np.asarray(x, dtype=float)
    single = xs.ndim == 1
    xs = np.atleast_2d(xs)
    for row in (xs[0], xs[-1]):
        as_profile(game, row)
    if np.any(xs < 0) or np.any(xs > 1) or not np.all(np.isfinite(xs)):
        raise InvalidInputError("profiles must lie in [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(xs > 0, xs * np.log(xs), 0.0) - np.where(xs < 1, (1 - xs) * np.log1p(-xs), 0.0)
    v = contract(game.tensor, xs) + lam * h.sum(axis=1)
    return float(v[0]) if single else v


@dataclass(frozen=True)
class RunResult:
    trajectory: Trajectory = field(repr=False)
    nearest_nd: int
    distance: float
    converged_pure: bool
    vertex: np.ndarray | None  # the pure vertex the tail stays near, if any
    settled_nd: int | None  # ND the whole tail stays within settle_tol of, if any

    def to_dict(self) -> dict:
        return {
            "seed": self.trajectory.seed,
            "lambda": self.trajectory.lam,
            "nearest_nd_index": self.nearest_nd,
            "distance": self.distance,
            "converged_pure": self.converged_pure,
            "settled_nd_index": self.settled_nd,
        }


def tail_window(traj: Trajectory, tail_fraction: float) -> np.ndarray:
    if not 0 < tail_fraction <= 1:
        raise InvalidInputError("tail_fraction must lie in (0, 1]")
    s = traj.states.shape[0]
    k = max(1, int(np.ceil(tail_fraction * s)))
    return traj.states[s - k:]


def classify_run(
    traj: Trajectory,
    nds: Sequence[NashDistribution],
    tail_fraction: float = 0.1,
    pure_tol: float = 0.1,
    settle_tol: float = 0.05,
) -> RunResult:
    if traj.states.shape[0] == 0:
        raise InvalidInputError("empty trajectory")
    if not nds:
        raise InvalidInputError("need at least one Nash distribution")
    term = traj.terminal
    dists = [float(np.max(np.abs(term - nd.point))) for nd in nds]
    nearest = int(np.argmin(dists))
    tail = tail_window(traj, tail_fraction)
    vertex = np.round(term)
    converged = bool(np.all(np.max(np.abs(tail - vertex), axis=1) <= pure_tol))
    settled = None
    for k in np.argsort(dists, kind="stable"):
        if np.all(np.max(np.abs(tail - nds[k].point), axis=1) <= settle_tol):
            settled = int(k)
            break
    return RunResult(traj, nearest, dists[nearest], converged, vertex if converged else None, settled)
