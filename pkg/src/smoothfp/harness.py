"""Random games, Monte Carlo experiments and lambda sweeps."""

from __future__ import annotations

import csv
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import classify_run, derive_seed, smooth_fp_batch, tail_window
from .fileio import dumps_report, load_game
from .game import MAX_PLAYERS, InvalidInputError, PotentialGame
from .response import Classification, NashDistribution, SolverOptions
from .stability import (
    AuditTolerances,
    EquilibriumReport,
    StabilityTolerances,
    audit_regularity,
    nash_distributions,
    tie_margin,
)

WORKERS_ENV = "SMOOTHFP_WORKERS"
DISTRIBUTIONS = ("normal", "uniform")


class AuditFailedError(RuntimeError):
    def __init__(self, report: EquilibriumReport):
        super().__init__("game failed the regularity audit")
        self.report = report


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def generate_game(n: int, seed: int, distribution: str = "normal") -> PotentialGame:
    """Potential entries drawn i.i.d. from N(0, 1) ("normal") or U[-1, 1] ("uniform")."""
    if not 1 <= n <= MAX_PLAYERS:
        raise InvalidInputError(f"number of players must lie in [1, {MAX_PLAYERS}], got {n}")
    if distribution not in DISTRIBUTIONS:
        raise InvalidInputError(f"distribution must be one of {DISTRIBUTIONS}, got {distribution!r}")
    rng = np.random.default_rng(np.random.SeedSequence(int(seed) & ((1 << 64) - 1)))
    size = 2**n
    u = rng.standard_normal(size) if distribution == "normal" else rng.uniform(-1.0, 1.0, size)
    return PotentialGame(n, u, name=f"random-{distribution}-n{n}-s{seed}", seed=int(seed))


def pure_strictness_margin(report: EquilibriumReport) -> float:
    return min(e.quasi_strict_margin for e in report.equilibria if e.is_pure)


def small_enough(
    game: PotentialGame,
    lam: float,
    report: EquilibriumReport | None = None,
    pure_margin_factor: float = 5.0,
    opts: SolverOptions | None = None,
) -> bool:
    """Whether ``lam`` is in the small-smoothing regime for ``game``.

    Requires a regular game, the stable-iff-pure split with all rest points
    hyperbolic at ``lam``, and pure-equilibrium strictness margins of at least
    ``pure_margin_factor * lam`` so that pure Nash distributions sit next to
    their vertices.
    """
    from .stability import stability_split_holds

    report = report or audit_regularity(game)
    if not report.game_regular:
        return False
    if pure_strictness_margin(report) < pure_margin_factor * lam:
        return False
    return stability_split_holds(game, lam, opts)


def regular_games(
    n: int,
    count: int,
    base_seed: int,
    min_conditioning: float = 0.0,
    distribution: str = "normal",
    max_tries: int = 100000,
    min_tie_margin: float = 0.0,
) -> list[tuple[PotentialGame, EquilibriumReport]]:
    """First ``count`` games from seeds ``derive_seed(base_seed, n, k)`` that pass the audit
    with ``report.conditioning >= min_conditioning`` and ``tie_margin >= min_tie_margin``."""
    out = []
    for k in range(max_tries):
        game = generate_game(n, derive_seed(base_seed, n, k), distribution)
        if tie_margin(game) < min_tie_margin:
            continue
        rep = audit_regularity(game)
        if rep.game_regular and rep.conditioning >= min_conditioning:
            out.append((game, rep))
            if len(out) == count:
                return out
    raise RuntimeError(f"only {len(out)} admissible games in {max_tries} draws")


# --- experiments ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    lambdas: tuple = (0.05,)
    runs: int = 200
    steps: int = 100_000
    base_seed: int = 0
    thinning: int = 100
    # runs simulated together in one vectorized block; part of the result contract
    batch_size: int = 100
    tail_fraction: float = 0.1
    pure_tol: float = 0.1
    settle_tol: float = 0.05
    game_path: str | None = None
    generator: dict | None = None  # {"n": .., "seed": .., "distribution": ..}
    skip_audit: bool = False
    workers: int | None = None
    out_dir: str | None = None

    def __post_init__(self):
        if self.runs < 1 or self.steps < 1 or self.thinning < 1 or self.batch_size < 1:
            raise InvalidInputError("runs, steps, thinning and batch_size must be positive")
        lams = tuple(float(v) for v in self.lambdas)
        if not lams or any(not v > 0 for v in lams):
            raise InvalidInputError("lambdas must be a nonempty list of positive numbers")
        object.__setattr__(self, "lambdas", lams)
        for name in ("tail_fraction", "pure_tol", "settle_tol"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        if self.tail_fraction > 1:
            raise InvalidInputError("tail_fraction must be at most 1")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise InvalidInputError(f"unknown config fields: {sorted(unknown)}")
        data = dict(data)
        if "lambdas" in data:
            data["lambdas"] = tuple(data["lambdas"])
        return cls(**data)

    def resolve_game(self) -> PotentialGame:
        if self.game_path is not None:
            return load_game(self.game_path)
        if self.generator is not None:
            g = self.generator
            return generate_game(int(g["n"]), int(g.get("seed", 0)), g.get("distribution", "normal"))
        raise InvalidInputError("config needs game_path or generator")


@dataclass(frozen=True)
class RunRecord:
    run: int
    seed: int
    terminal_dist_to_nearest_nd: float
    nearest_nd_index: int
    converged_pure: bool
    settled_nd_index: int | None
    dist_to_nearest_pure_nd: float | None
    dist_to_vertex: float
    # tail stays within settle_tol of some ND that does not continue to a pure NE
    near_non_pure_nd: bool


@dataclass(frozen=True)
class LambdaSummary:
    lam: float
    nash_distributions: list
    runs: list  # RunRecord, sorted by run index
    fraction_converged_pure: float
    nd_visits: list  # runs settled at each ND
    unclassified: int
    mean_dist_to_pure_nd: float | None
    max_dist_to_pure_nd: float | None
    max_vertex_dist_converged: float | None
    mixed_settled: int  # runs whose tail stays near a non-pure-strategy ND

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "nash_distributions": [nd.to_dict() for nd in self.nash_distributions],
            "fraction_converged_pure": self.fraction_converged_pure,
            "nd_visits": self.nd_visits,
            "unclassified": self.unclassified,
            "mean_dist_to_pure_nd": self.mean_dist_to_pure_nd,
            "max_dist_to_pure_nd": self.max_dist_to_pure_nd,
            "max_vertex_dist_converged": self.max_vertex_dist_converged,
            "mixed_settled": self.mixed_settled,
            "runs": [vars(r) for r in self.runs],
        }


@dataclass(frozen=True, eq=False)
class ExperimentSummary:
    per_lambda: list
    audit: dict | None
    config: dict
    wall_clock_s: float = field(default=0.0, compare=False)

    def to_dict(self, include_timing: bool = True) -> dict:
        out = {
            "config": self.config,
            "audit": self.audit,
            "per_lambda": [s.to_dict() for s in self.per_lambda],
        }
        if include_timing:
            out["wall_clock_s"] = self.wall_clock_s
        return out

    def canonical_json(self) -> str:
        """Serialized summary without timing; equal summaries give identical text."""
        return dumps_report(self.to_dict(include_timing=False))

    def __eq__(self, other):
        if not isinstance(other, ExperimentSummary):
            return NotImplemented
        return self.canonical_json() == other.canonical_json()

    __hash__ = None


def _stays_near(tail: np.ndarray, points, tol: float) -> bool:
    return any(bool(np.all(np.max(np.abs(tail - p), axis=1) <= tol)) for p in points)


def _run_chunk(args) -> list[RunRecord]:
    potential, n, lam, steps, thinning, chunk, nds, cfg = args
    game = PotentialGame(n, potential)
    seeds = [s for _, s in chunk]
    trajs = smooth_fp_batch(game, lam, steps, seeds, thinning=thinning)
    pure_pts = [nd.point for nd in nds if nd.is_pure]
    other_pts = [nd.point for nd in nds if nd.is_pure is not True]
    out = []
    for (run, seed), traj in zip(chunk, trajs):
        res = classify_run(traj, nds, cfg["tail_fraction"], cfg["pure_tol"], cfg["settle_tol"])
        term = traj.terminal
        dpure = min((float(np.max(np.abs(term - p))) for p in pure_pts), default=None)
        out.append(RunRecord(
            run=run,
            seed=seed,
            terminal_dist_to_nearest_nd=res.distance,
            nearest_nd_index=res.nearest_nd,
            converged_pure=res.converged_pure,
            settled_nd_index=res.settled_nd,
            dist_to_nearest_pure_nd=dpure,
            dist_to_vertex=float(np.max(np.abs(term - np.round(term)))),
            near_non_pure_nd=_stays_near(tail_window(traj, cfg["tail_fraction"]), other_pts,
                                         cfg["settle_tol"]),
        ))
    return out


def _summarize(lam: float, nds: list, records: list[RunRecord]) -> LambdaSummary:
    records = sorted(records, key=lambda r: r.run)
    visits = [0] * len(nds)
    unclassified = 0
    for r in records:
        if r.settled_nd_index is None:
            unclassified += 1
        else:
            visits[r.settled_nd_index] += 1
    dp = [r.dist_to_nearest_pure_nd for r in records if r.dist_to_nearest_pure_nd is not None]
    conv = [r.dist_to_vertex for r in records if r.converged_pure]
    mixed = sum(r.near_non_pure_nd for r in records)
    return LambdaSummary(
        lam=lam,
        nash_distributions=nds,
        runs=records,
        fraction_converged_pure=sum(r.converged_pure for r in records) / len(records),
        nd_visits=visits,
        unclassified=unclassified,
        mean_dist_to_pure_nd=float(np.mean(dp)) if dp else None,
        max_dist_to_pure_nd=float(np.max(dp)) if dp else None,
        max_vertex_dist_converged=float(np.max(conv)) if conv else None,
        mixed_settled=mixed,
    )


def run_experiment(config: ExperimentConfig, game: PotentialGame | None = None) -> ExperimentSummary:
    """Monte Carlo smooth FP runs per lambda, classified against the Nash distributions.

    Run ``r`` at lambda index ``j`` uses seed ``derive_seed(base_seed, j * runs + r)``.
    Runs are simulated in consecutive blocks of ``batch_size`` and the blocks are
    spread over ``workers`` processes.  Vectorized arithmetic can differ in the
    last bit between batch shapes, so the blocks are fixed by the config alone
    and the summary is bit-identical for any worker count.
    """
    t0 = time.perf_counter()
    game = game or config.resolve_game()
    report = None
    if not config.skip_audit:
        report = audit_regularity(game)
        if not report.game_regular:
            raise AuditFailedError(report)
    workers = config.workers or default_workers()
    cfg = {"tail_fraction": config.tail_fraction, "pure_tol": config.pure_tol,
           "settle_tol": config.settle_tol}
    per_lambda = []
    for j, lam in enumerate(config.lambdas):
        nds = nash_distributions(game, lam)
        jobs = [(r, derive_seed(config.base_seed, j * config.runs + r)) for r in range(config.runs)]
        # fixed blocks, so results never depend on the worker count
        bs = config.batch_size
        chunks = [jobs[k:k + bs] for k in range(0, len(jobs), bs)]
        tasks = [(game.potential, game.num_players, lam, config.steps, config.thinning, c, nds, cfg)
                 for c in chunks]
        if workers > 1 and len(tasks) > 1:
            with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
                results = [rec for part in pool.map(_run_chunk, tasks) for rec in part]
        else:
            results = [rec for t in tasks for rec in _run_chunk(t)]
        per_lambda.append(_summarize(lam, nds, results))
    # worker count and output location do not affect results
    cfg_dict = {k: getattr(config, k) for k in config.__dataclass_fields__
                if k not in ("workers", "out_dir")}
    cfg_dict["lambdas"] = list(config.lambdas)
    summary = ExperimentSummary(
        per_lambda=per_lambda,
        audit=None if report is None else report.to_dict(),
        config=cfg_dict,
        wall_clock_s=time.perf_counter() - t0,
    )
    if config.out_dir is not None:
        write_experiment(summary, config.out_dir)
    return summary


RUN_CSV_COLUMNS = ("run", "seed", "terminal_dist_to_nearest_nd", "nearest_nd_index", "converged_pure")


def write_run_csv(summary: LambdaSummary, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RUN_CSV_COLUMNS)
        for r in summary.runs:
            w.writerow([r.run, r.seed, repr(r.terminal_dist_to_nearest_nd), r.nearest_nd_index,
                        int(r.converged_pure)])


def write_experiment(summary: ExperimentSummary, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.json").write_text(dumps_report(summary) + "\n")
    for j, s in enumerate(summary.per_lambda):
        write_run_csv(s, out / f"runs_lambda{j}.csv")


# --- lambda sweep ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SweepRow:
    lam: float
    num_nd: int
    num_ne: int
    max_pairing_distance: float | None
    pairing_distances: list
    num_stable: int
    num_unstable: int
    num_nonhyperbolic: int
    flagged: bool
    notes: list

    def to_dict(self) -> dict:
        return dict(vars(self))


def pair_to_equilibria(
    nds: Sequence[NashDistribution], equilibria: Sequence[np.ndarray], match_tol: float = 1e-2
):
    """Match each ND's continued equilibrium to an enumerated NE; returns (indices, notes)."""
    idx, notes = [], []
    for k, nd in enumerate(nds):
        if nd.continued_ne is None:
            idx.append(None)
            notes.append(f"nd {k}: continuation failed")
            continue
        d = [float(np.max(np.abs(nd.continued_ne - e))) for e in equilibria]
        j = int(np.argmin(d)) if d else None
        if j is None or d[j] > match_tol:
            idx.append(None)
            notes.append(f"nd {k}: limit matches no enumerated equilibrium")
        else:
            idx.append(j)
    taken = [j for j in idx if j is not None]
    if len(taken) != len(set(taken)):
        notes.append("two Nash distributions continue to the same equilibrium")
    return idx, notes


def lambda_sweep_report(
    game: PotentialGame,
    schedule: Sequence[float],
    opts: SolverOptions | None = None,
    tols: StabilityTolerances | None = None,
    report: EquilibriumReport | None = None,
) -> list[SweepRow]:
    report = report or audit_regularity(game, AuditTolerances())
    eq = report.profiles
    rows = []
    for lam in schedule:
        nds = nash_distributions(game, lam, opts, tols)
        idx, notes = pair_to_equilibria(nds, eq)
        dists = [float(np.max(np.abs(nd.point - eq[j]))) if j is not None else None
                 for nd, j in zip(nds, idx)]
        if len(nds) != len(eq):
            notes.append(f"|ND| = {len(nds)} differs from |NE| = {len(eq)}")
        known = [d for d in dists if d is not None]
        labels = [nd.classification for nd in nds]
        rows.append(SweepRow(
            lam=float(lam),
            num_nd=len(nds),
            num_ne=len(eq),
            max_pairing_distance=max(known) if known else None,
            pairing_distances=dists,
            num_stable=labels.count(Classification.STABLE),
            num_unstable=labels.count(Classification.UNSTABLE),
            num_nonhyperbolic=labels.count(Classification.NONHYPERBOLIC),
            flagged=bool(notes),
            notes=notes,
        ))
    return rows
