import csv
import json

import numpy as np
import pytest

import oracles
from smoothfp.dynamics import derive_seed, smooth_fp_run
from smoothfp.game import MAX_PLAYERS, InvalidInputError, PotentialGame, coordination_game
from smoothfp.harness import (
    RUN_CSV_COLUMNS,
    AuditFailedError,
    ExperimentConfig,
    generate_game,
    lambda_sweep_report,
    regular_games,
    run_experiment,
    small_enough,
)


def test_generate_deterministic():
    a = generate_game(4, 17)
    assert a == generate_game(4, 17)
    assert a != generate_game(4, 18)
    assert a.seed == 17 and a.name
    u = generate_game(6, 3, "uniform").potential
    assert np.all((u >= -1) & (u <= 1))


def test_generate_validation():
    with pytest.raises(InvalidInputError):
        generate_game(MAX_PLAYERS + 1, 0)
    with pytest.raises(InvalidInputError):
        generate_game(0, 0)
    with pytest.raises(InvalidInputError):
        generate_game(3, 0, "cauchy")


def test_generated_entries_have_no_ties():
    for seed in range(1000):
        u = generate_game(3, seed).potential
        assert len(np.unique(u)) == 8


def test_regular_games_filter():
    games = regular_games(3, 5, base_seed=4, min_conditioning=0.1)
    assert len(games) == 5
    candidates = [derive_seed(4, 3, k) for k in range(1000)]
    for g, rep in games:
        assert rep.game_regular and rep.conditioning >= 0.1
        assert g.seed in candidates and g == generate_game(3, g.seed)


def test_small_enough_coordination():
    g = coordination_game()
    # pure margins are 1, so the margin condition binds at lam = 0.2
    assert small_enough(g, 0.05)
    assert not small_enough(g, 0.3)
    assert not small_enough(PotentialGame(2, [1.0, 0.0, 1.0, 0.0]), 0.01)


# --- experiments --------------------------------------------------------------------------


def _config(**kw):
    base = dict(lambdas=(0.1,), runs=12, steps=3000, base_seed=5, thinning=50, batch_size=5)
    base.update(kw)
    return ExperimentConfig(**base)


def test_experiment_summary_invariants():
    s = run_experiment(_config(), coordination_game())
    assert s.audit is not None and s.audit["game_regular"]
    L = s.per_lambda[0]
    assert len(L.runs) == 12
    assert [r.run for r in L.runs] == list(range(12))
    assert sum(L.nd_visits) + L.unclassified == 12
    assert 0 <= L.fraction_converged_pure <= 1
    assert len(L.nd_visits) == len(L.nash_distributions)


def test_runs_use_derived_seeds():
    s = run_experiment(_config(lambdas=(0.1, 0.05)), coordination_game())
    for j, L in enumerate(s.per_lambda):
        for r in L.runs:
            assert r.seed == derive_seed(5, j * 12 + r.run)
    seeds = [r.seed for L in s.per_lambda for r in L.runs]
    assert len(set(seeds)) == len(seeds)


def test_run_matches_single_simulation():
    g = coordination_game()
    s = run_experiment(_config(runs=3, batch_size=1), g)
    for r in s.per_lambda[0].runs:
        t = smooth_fp_run(g, 0.1, 3000, r.seed, thinning=50)
        d = min(np.max(np.abs(t.terminal - nd.point)) for nd in s.per_lambda[0].nash_distributions)
        assert r.terminal_dist_to_nearest_nd == d


def test_single_run_fractions():
    L = run_experiment(_config(runs=1), coordination_game()).per_lambda[0]
    assert L.fraction_converged_pure in (0.0, 1.0)


def test_worker_count_invariance():
    g = generate_game(3, 2)
    a = run_experiment(_config(workers=1), g)
    b = run_experiment(_config(workers=3), g)
    assert a == b
    assert a.canonical_json() == b.canonical_json()


def test_audit_gate():
    bad = PotentialGame(2, [1.0, 0.0, 1.0, 0.0])
    with pytest.raises(AuditFailedError) as info:
        run_experiment(_config(runs=2), bad)
    assert not info.value.report.game_regular
    s = run_experiment(_config(runs=2, skip_audit=True), bad)
    assert s.audit is None


def test_outputs(tmp_path):
    s = run_experiment(_config(out_dir=str(tmp_path)), coordination_game())
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert summary["per_lambda"][0]["nd_visits"] == s.per_lambda[0].nd_visits
    with open(tmp_path / "runs_lambda0.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == RUN_CSV_COLUMNS
    assert len(rows) == 13
    assert rows[1][0] == "0" and rows[1][4] in ("0", "1")


def test_config_validation():
    for bad in (dict(runs=0), dict(lambdas=()), dict(lambdas=(0.1, -1)), dict(pure_tol=0),
                dict(tail_fraction=1.5), dict(batch_size=0)):
        with pytest.raises(InvalidInputError):
            _config(**bad)
    with pytest.raises(InvalidInputError):
        ExperimentConfig.from_dict({"runz": 3})
    cfg = ExperimentConfig.from_dict({"lambdas": [0.1], "generator": {"n": 3, "seed": 9}})
    assert cfg.resolve_game() == generate_game(3, 9)
    with pytest.raises(InvalidInputError):
        ExperimentConfig().resolve_game()


def test_coordination_experiment():
    s = run_experiment(ExperimentConfig(lambdas=(0.05,), runs=1000, steps=100_000, base_seed=1),
                       coordination_game())
    L = s.per_lambda[0]
    assert L.fraction_converged_pure >= 0.99
    pure = [k for k, nd in enumerate(L.nash_distributions) if nd.is_pure]
    assert all(L.nd_visits[k] > 0 for k in pure)
    assert L.mixed_settled == 0


def test_vertex_distance_shrinks_with_lambda():
    cfg = ExperimentConfig(lambdas=(0.3, 0.1, 0.03, 0.01), runs=200, steps=100_000, base_seed=3)
    s = run_experiment(cfg, coordination_game())
    d = [L.max_vertex_dist_converged for L in s.per_lambda]
    assert all(b < a for a, b in zip(d, d[1:]))


# --- lambda sweeps ------------------------------------------------------------------------


def test_sweep_coordination():
    rows = lambda_sweep_report(coordination_game(), [10.0, 0.3, 0.1, 0.03, 0.01])
    first, last = rows[0], rows[-1]
    assert first.num_nd == 1 and first.num_ne == 3 and first.flagged
    assert last.num_nd == 3 and not last.flagged
    assert last.max_pairing_distance <= 0.02
    assert (last.num_stable, last.num_unstable, last.num_nonhyperbolic) == (2, 1, 0)
    d = [r.max_pairing_distance for r in rows[1:]]
    assert all(b <= a + 1e-10 for a, b in zip(d, d[1:]))


def test_sweep_single_player_closed_form():
    g = PotentialGame(1, [1.0, 0.0])
    lams = [2.0, 1.0, 0.5, 0.2, 0.1]
    for lam, row in zip(lams, lambda_sweep_report(g, lams)):
        assert row.num_nd == 1 and not row.flagged
        assert abs(row.max_pairing_distance - (1 - oracles.sigmoid(1 / lam))) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_sweep_distances_nonincreasing(seed):
    g, rep = regular_games(3, 1, base_seed=100 + seed, min_conditioning=0.1)[0]
    rows = lambda_sweep_report(g, [0.05, 0.03, 0.02, 0.01, 0.005], report=rep)
    assert not any(r.flagged for r in rows)
    d = [r.max_pairing_distance for r in rows]
    assert all(b <= a + 1e-10 for a, b in zip(d, d[1:]))


def test_sweep_flags_ambiguity():
    # near the pitchfork the outer branches continue into the mixed equilibrium
    row = lambda_sweep_report(coordination_game(), [0.499])[0]
    assert row.flagged
    assert any("same equilibrium" in n for n in row.notes)
