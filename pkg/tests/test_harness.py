import json

import numpy as np
import pytest

from patrolmarl.baselines import CONTROLLERS
from patrolmarl.config import Config, EnvParams
from patrolmarl.environment import reset
from patrolmarl.grid import STAY, parse_map, sample_map
from patrolmarl.harness import (
    EpisodeMetrics,
    InsufficientSamples,
    InvalidHorizon,
    UnknownStrategy,
    aggregate,
    compare_table,
    episode_seeds,
    make_controller,
    mean_std,
    recompute_from_log,
    run_episode,
    run_experiment,
    write_results,
)


class StayController:
    def __init__(self, grid, cfg, n_agents, seed=None):
        pass

    def act(self, world):
        return {a.id: STAY for a in world.active_agents()}, None

    def observe(self, world, outcome):
        pass


@pytest.fixture
def stay(monkeypatch):
    monkeypatch.setitem(CONTROLLERS, "stay", StayController)
    return "stay"


def still_cfg():
    cfg = Config()
    cfg.env = EnvParams(p_dyn_max=0.0)
    return cfg


def test_two_vertex_closed_form(stay):
    grid = parse_map("C..\n")
    cfg = still_cfg()
    h = 100
    world = reset(grid, 1, cfg.env, 0, positions=[(0, 1)], batteries=[550.0], p_dyn=[0.0])
    m, _ = run_episode(stay, grid, cfg, 1, h, 0, world=world)
    # the idle vertex reads 0.1 t minutes after step t; the occupied one 0
    assert m.avg_idleness == pytest.approx(0.05 * (h + 1) / 2, abs=1e-9)
    assert m.max_bar_idleness == pytest.approx(0.1 * (h + 1) / 2, abs=1e-9)
    assert m.collisions == 0 and m.battery_failures == 0


def test_single_agent_never_collides():
    grid = sample_map("sample8")
    for strategy in ("cr", "part", "sebs"):
        m, _ = run_episode(strategy, grid, Config(), 1, 300, 1)
        assert m.collisions == 0


def test_invalid_horizon_and_strategy():
    grid = sample_map("sample8")
    with pytest.raises(InvalidHorizon):
        run_episode("cr", grid, Config(), 1, 0, 0)
    with pytest.raises(InvalidHorizon):
        run_episode("cr", grid, Config(), 1, 10, 0, burnin=10)
    with pytest.raises(UnknownStrategy):
        make_controller("greedy", grid, Config(), 1, 0)
    with pytest.raises(UnknownStrategy):
        make_controller("rl", grid, Config(), 1, 0)


def test_log_recomputation_is_exact():
    grid = sample_map("sample10")
    m, log = run_episode("cr", grid, Config(), 3, 400, 5, record_events=True)
    avg, mx, coll, fails = recompute_from_log(log)
    assert (avg, mx, coll, fails) == (m.avg_idleness, m.max_bar_idleness, m.collisions, m.battery_failures)
    m2, log2 = run_episode("cr", grid, Config(), 3, 400, 5, burnin=50, record_events=True)
    assert recompute_from_log(log2, 50)[:2] == (m2.avg_idleness, m2.max_bar_idleness)


def test_failure_accounting_matches_events(stay):
    grid = sample_map("sample8")
    cfg = still_cfg()
    world = reset(grid, 3, cfg.env, 0, batteries=[5.0, 40.0, 550.0])
    m, log = run_episode(stay, grid, cfg, 3, 60, 0, world=world, record_events=True)
    failed_events = [ev for rec in log for ev in rec["events"] if ev["event"] == "battery_failed"]
    assert m.battery_failures == len(failed_events) == 2
    assert {ev["agent"] for ev in failed_events} == {0, 1}
    assert m.n_agents_effective[-1] == 1


def test_mean_std_conventions():
    assert mean_std([3.0, 3.0, 3.0]) == (3.0, 0.0)
    assert mean_std([0.0, 2.0]) == (1.0, 1.0)
    with pytest.raises(InsufficientSamples):
        mean_std([1.0])


def _synthetic(i):
    return EpisodeMetrics(avg_idleness=float(i), max_bar_idleness=2.0 * i, collisions=i % 3,
                          battery_failures=1 if i % 10 == 0 else 0, recharge_battery_samples=[0.1, 0.2],
                          horizon=10, n_agents_effective=[2] * 10, strategy="cr", n_agents=2, seed=i, swaps=1)


def test_aggregate_matches_direct_recomputation():
    eps = [_synthetic(i) for i in range(100)]
    agg = aggregate(eps)
    ids = np.arange(100, dtype=np.float64)
    assert agg["avg_idleness"]["mean"] == pytest.approx(ids.mean())
    assert agg["avg_idleness"]["std"] == pytest.approx(ids.std())
    assert agg["max_bar_idleness"]["mean"] == pytest.approx(2 * ids.mean())
    assert agg["collisions"]["mean"] == pytest.approx(np.mean(ids % 3))
    assert agg["battery_failure_rate"] == 10 / 200
    assert agg["recharge_battery"]["count"] == 200
    assert agg["recharge_battery"]["mean"] == pytest.approx(0.15)
    with pytest.raises(InsufficientSamples):
        aggregate(eps[:1])


def test_episode_seeds_independent_and_stable():
    s = episode_seeds(7, 5)
    assert s == episode_seeds(7, 5) and len(set(s)) == 5
    assert episode_seeds(7, 8)[:5] == s


def test_experiment_workers_do_not_change_results():
    grid = sample_map("sample8")
    a = run_experiment("sebs", grid, Config(), 2, 3, 11, horizon=200)
    b = run_experiment("sebs", grid, Config(), 2, 3, 11, horizon=200, workers=2)
    assert a.aggregate == b.aggregate


def test_require_success_discards_failed_episodes(stay):
    grid = parse_map("C..\n...\n")
    cfg = still_cfg()
    cfg.env.b_init_range = (0.9, 1.0)
    r = run_experiment(stay, grid, cfg, 1, 2, 0, horizon=600, require_success=True, max_attempts=4)
    assert r.discarded == r.attempted == 4 and not r.episodes
    r = run_experiment(stay, grid, cfg, 1, 2, 0, horizon=100, require_success=True)
    assert r.discarded == 0 and len(r.episodes) == 2


def test_written_report_schema(tmp_path):
    grid = sample_map("sample8")
    rows = {}
    for strategy in ("cr", "part", "sebs"):
        res = run_experiment(strategy, grid, Config(), 2, 2, 3, horizon=150, record_events=True)
        out = tmp_path / strategy
        write_results(out, res, events=True, csv_path=out / "idleness.csv")
        rows[strategy] = json.loads((out / "metrics.json").read_text())
        lines = (out / "idleness.csv").read_text().splitlines()
        assert lines[0] == "episode,step,clock,idleness_mean,idleness_max"
        assert len(lines) == 1 + 2 * 150
        assert len((out / "events.jsonl").read_text().splitlines()) == 2 * 150
    keys = {s: set(r) for s, r in rows.items()}
    assert keys["cr"] == keys["part"] == keys["sebs"]
    assert {"avg_idleness", "max_bar_idleness", "collisions", "battery_failure_rate",
            "recharge_battery", "episodes", "agent_episodes"} <= keys["cr"]
    table = compare_table(list(rows.values()))
    assert table.count("\n") == 2 + 3
    assert "μ:" in table and "σ:" in table
