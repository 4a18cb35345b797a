"""Command-line interface.

Exit codes: 0 on success, 1 when a solver fails, 2 on invalid input, 3 when a game
fails the regularity audit.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .dynamics import br_flow, smooth_fp_run
from .fileio import dumps_game, dumps_report, load_game, save_game
from .game import InvalidInputError, format_pattern
from .harness import (
    DISTRIBUTIONS,
    AuditFailedError,
    ExperimentConfig,
    generate_game,
    lambda_sweep_report,
    run_experiment,
)
from .response import ContinuationError, NoFixedPointError
from .stability import audit_regularity, nash_distributions

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_AUDIT = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser, need_lambda: bool = True) -> None:
    src = p.add_argument_group("game source")
    src.add_argument("--game", help="game JSON file")
    src.add_argument("--players", type=int, help="generate a random game with this many players")
    src.add_argument("--game-seed", type=int, default=0, help="seed for the generated game")
    src.add_argument("--distribution", choices=DISTRIBUTIONS, default="normal")
    if need_lambda:
        p.add_argument("--lambda", dest="lam", type=float, default=0.05, help="smoothing parameter")
    p.add_argument("--seed", type=int, default=0, help="random seed")
    p.add_argument("--out", help="output file or directory")
    p.add_argument("--json", action="store_true", help="print machine-readable JSON")


def _game(args):
    if args.game and args.players is not None:
        raise InvalidInputError("use either --game or --players, not both")
    if args.game:
        return load_game(args.game)
    if args.players is not None:
        return generate_game(args.players, args.game_seed, args.distribution)
    raise InvalidInputError("a game is required: pass --game PATH or --players N")


def _emit(args, data: dict, table: str) -> None:
    text = dumps_report(data)
    if args.out:
        Path(args.out).write_text(text + "\n")
    print(text if args.json else table)


def _fmt(x) -> str:
    return "(" + ", ".join(f"{v:.6g}" for v in np.asarray(x, dtype=float)) + ")"


def cmd_generate(args) -> int:
    if args.players is None:
        raise InvalidInputError("generate needs --players")
    game = generate_game(args.players, args.seed, args.distribution)
    if args.out:
        save_game(game, args.out)
    else:
        print(dumps_game(game))
    return EXIT_OK


def cmd_audit(args) -> int:
    rep = audit_regularity(_game(args))
    lines = [f"{'profile':<32} {'pattern':<12} {'margin':>10} {'det H':>10} regular"]
    for e in rep.equilibria:
        det = "-" if e.restricted_hessian_det is None else f"{e.restricted_hessian_det:.3g}"
        margin = "-" if e.quasi_strict_margin is None else f"{e.quasi_strict_margin:.3g}"
        lines.append(f"{_fmt(e.profile):<32} {format_pattern(e.pattern):<12} "
                     f"{margin:>10} {det:>10} {e.regular}")
    for d in rep.degeneracies:
        lines.append(f"degeneracy: {d}")
    lines.append(f"game regular: {rep.game_regular}")
    _emit(args, rep.to_dict(), "\n".join(lines))
    return EXIT_OK if rep.game_regular else EXIT_AUDIT


def cmd_nd(args) -> int:
    nds = nash_distributions(_game(args), args.lam)
    lines = [f"{'point':<40} {'class':<15} {'residual':>10}  limit"]
    for nd in nds:
        lim = "-" if nd.continued_ne is None else _fmt(nd.continued_ne)
        lines.append(f"{_fmt(nd.point):<40} {nd.classification.value:<15} {nd.residual:>10.2e}  {lim}")
    _emit(args, {"lambda": args.lam, "nash_distributions": [nd.to_dict() for nd in nds]}, "\n".join(lines))
    return EXIT_OK


def cmd_simulate(args) -> int:
    game = _game(args)
    init = None if args.init is None else [int(v) for v in args.init.split(",")]
    traj = smooth_fp_run(game, args.lam, args.steps, args.seed, init=init, thinning=args.thinning)
    if args.out:
        traj.to_csv(args.out)
    if args.json:
        print(dumps_report({"lambda": args.lam, "seed": args.seed, "steps": args.steps,
                            "terminal": traj.terminal}))
    else:
        print(f"terminal x({args.steps}) = {_fmt(traj.terminal)}")
    return EXIT_OK


def cmd_flow(args) -> int:
    game = _game(args)
    if args.x0 is not None:
        x0 = np.array([float(v) for v in args.x0.split(",")])
    else:
        x0 = np.random.default_rng(args.seed).random(game.num_players)
    traj = br_flow(game, args.lam, x0, args.horizon, args.h)
    if args.out:
        traj.to_csv(args.out)
    if args.json:
        print(dumps_report({"lambda": args.lam, "x0": x0, "terminal": traj.terminal}))
    else:
        print(f"x({args.horizon:g}) = {_fmt(traj.terminal)}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidInputError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise InvalidInputError("config JSON must be an object")
    game = None
    if args.game or args.players is not None:
        game = _game(args)
    overrides = {"lambdas": args.lambdas, "runs": args.runs, "steps": args.steps,
                 "base_seed": args.base_seed, "workers": args.workers, "out_dir": args.out,
                 "batch_size": args.batch_size, "thinning": args.thinning}
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.skip_audit:
        data["skip_audit"] = True
    cfg = ExperimentConfig.from_dict(data)
    summary = run_experiment(cfg, game)
    lines = [f"{'lambda':>8} {'pure frac':>10} {'unclassified':>12} {'mean d':>10} {'max d':>10}  visits"]
    for s in summary.per_lambda:
        md = "-" if s.mean_dist_to_pure_nd is None else f"{s.mean_dist_to_pure_nd:.3g}"
        xd = "-" if s.max_dist_to_pure_nd is None else f"{s.max_dist_to_pure_nd:.3g}"
        lines.append(f"{s.lam:>8g} {s.fraction_converged_pure:>10.3f} {s.unclassified:>12d} "
                     f"{md:>10} {xd:>10}  {s.nd_visits}")
    lines.append(f"wall clock: {summary.wall_clock_s:.1f} s")
    print(summary.canonical_json() if args.json else "\n".join(lines))
    return EXIT_OK


def cmd_sweep(args) -> int:
    game = _game(args)
    rep = audit_regularity(game)
    if not rep.game_regular:
        raise AuditFailedError(rep)
    rows = lambda_sweep_report(game, args.lambdas, report=rep)
    lines = [f"{'lambda':>8} {'|ND|':>5} {'|NE|':>5} {'max dist':>10} {'s/u/n':>8}  flags"]
    for r in rows:
        d = "-" if r.max_pairing_distance is None else f"{r.max_pairing_distance:.3g}"
        split = f"{r.num_stable}/{r.num_unstable}/{r.num_nonhyperbolic}"
        lines.append(f"{r.lam:>8g} {r.num_nd:>5d} {r.num_ne:>5d} {d:>10} {split:>8}  {'; '.join(r.notes)}")
    _emit(args, {"rows": [r.to_dict() for r in rows]}, "\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="smoothfp", description="Smooth fictitious play in N-player two-action potential games.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a random game as JSON")
    p.add_argument("--players", type=int)
    p.add_argument("--distribution", choices=DISTRIBUTIONS, default="normal")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("audit", help="enumerate equilibria and check regularity")
    _add_common(p, need_lambda=False)
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("nd", help="solve and classify Nash distributions")
    _add_common(p)
    p.set_defaults(func=cmd_nd)

    p = sub.add_parser("simulate", help="one smooth fictitious play run")
    _add_common(p)
    p.add_argument("--steps", type=int, default=100_000)
    p.add_argument("--thinning", type=int, default=1)
    p.add_argument("--init", help="initial actions, comma separated, each 1 or 2")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("flow", help="integrate the logit best-response flow")
    _add_common(p)
    p.add_argument("--x0", help="initial profile, comma separated (default: random from --seed)")
    p.add_argument("--horizon", type=float, default=50.0)
    p.add_argument("--h", type=float, default=0.01)
    p.set_defaults(func=cmd_flow)

    p = sub.add_parser("experiment", help="batch Monte Carlo experiment")
    _add_common(p, need_lambda=False)
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--lambda", dest="lambdas", type=float, nargs="+")
    p.add_argument("--runs", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--base-seed", type=int)
    p.add_argument("--thinning", type=int)
    p.add_argument("--batch-size", type=int, help="runs simulated together (affects results, not workers)")
    p.add_argument("--workers", type=int, help="worker processes (default: $SMOOTHFP_WORKERS or 1)")
    p.add_argument("--skip-audit", action="store_true")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("sweep", help="Nash distributions against equilibria over a lambda schedule")
    _add_common(p, need_lambda=False)
    p.add_argument("--lambda", dest="lambdas", type=float, nargs="+", default=[1.0, 0.3, 0.1, 0.03, 0.01])
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except AuditFailedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AUDIT
    except InvalidInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NoFixedPointError, ContinuationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
