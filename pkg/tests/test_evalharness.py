import math

import numpy as np
import pytest

from src.agentenv import AgentState, observation_dim
from src.constants import D_HEADING_MAX
from src.errors import MissingModelError, UsageError
from src.evalharness import (
    TRAJECTORY_CSV_HEADER,
    BaselineKind,
    MetricsTable,
    compare,
    configure_for,
    episode_seeds,
    export_trajectories,
    metrics,
    run_baseline,
    shortest_path_policy,
)
from src.maddpg import ActorPolicy, Trainer
from src.ricbus import run_mission


def test_baseline_names_and_aliases():
    assert BaselineKind.parse("full") is BaselineKind.FULL
    assert BaselineKind.parse(" Shortest ") is BaselineKind.SHORTEST_PATH
    assert BaselineKind.parse("nosem") is BaselineKind.NON_SEMANTIC_RL
    assert BaselineKind.parse("non_sinr_semantic_rl") is BaselineKind.NON_SINR_SEMANTIC_RL
    with pytest.raises(UsageError, match="unknown baseline"):
        BaselineKind.parse("random")


def test_baseline_lists_are_deduplicated_in_order():
    kinds = BaselineKind.parse_list("shortest,full,shortest_path")
    assert kinds == [BaselineKind.SHORTEST_PATH, BaselineKind.FULL]
    with pytest.raises(UsageError):
        BaselineKind.parse_list(" , ")


def test_scenario_variants(small_scenario):
    assert configure_for(BaselineKind.FULL, small_scenario) is small_scenario
    nosem = configure_for(BaselineKind.NON_SEMANTIC_RL, small_scenario)
    assert nosem.semantics.force_closed
    assert nosem.world is small_scenario.world
    nosinr = configure_for(BaselineKind.NON_SINR_SEMANTIC_RL, small_scenario)
    assert not nosinr.env.use_sinr_obs
    assert nosinr.env.reward.w_s == 0.0
    assert nosinr.env.reward.w_p == small_scenario.env.reward.w_p
    shortest = configure_for(BaselineKind.SHORTEST_PATH, small_scenario)
    assert not shortest.env.obstacle_terminal


def test_episode_seeds_are_reproducible():
    seeds = episode_seeds(5, 4)
    assert seeds == episode_seeds(5, 4)
    assert len(set(seeds)) == 4
    assert episode_seeds(6, 4) != seeds
    assert episode_seeds(5, 2) == seeds[:2]


def test_shortest_path_heads_straight_for_the_target():
    state = AgentState(np.array([0.0, 0.0, 50.0]), 0.0)
    action = shortest_path_policy(state, (100.0, 0.0, 60.0))
    assert action.d_heading == 0.0
    assert action.d_alt == 5.0
    assert action.dist == 20.0


def test_shortest_path_turn_rate_and_final_approach():
    state = AgentState(np.array([0.0, 0.0, 50.0]), 0.0)
    behind = shortest_path_policy(state, (-100.0, 1.0, 50.0))
    assert abs(behind.d_heading) == pytest.approx(D_HEADING_MAX)
    near = shortest_path_policy(state, (4.0, 3.0, 48.0))
    assert near.d_heading == pytest.approx(math.atan2(3.0, 4.0))
    assert near.dist == pytest.approx(5.0)
    assert near.d_alt == pytest.approx(-2.0)


def test_learned_baselines_need_a_model(small_scenario):
    with pytest.raises(MissingModelError):
        run_baseline(BaselineKind.NON_SEMANTIC_RL, small_scenario, episodes=1)


def test_metrics_need_at_least_one_log():
    with pytest.raises(UsageError):
        metrics([])


def test_shortest_path_reaches_every_target(small_scenario):
    logs = run_baseline(BaselineKind.SHORTEST_PATH, small_scenario, episodes=2)
    table = metrics(logs)
    assert table.reach_rate == 1.0
    assert table.path_length_ratio == pytest.approx(1.0, abs=1e-6)
    assert table.deadline_violations == 0
    assert table.out_of_area_steps == 0
    assert table.min_separation > 0.0
    assert math.isfinite(table.mean_sinr_db)
    assert table.p5_sinr_db <= table.mean_sinr_db
    assert table.altitude_change_total == pytest.approx(0.0)
    assert set(table.to_dict()) == set(MetricsTable.columns())


def test_compare_writes_paired_rows_and_means(small_scenario, tmp_path):
    trained = {}
    path = compare(small_scenario, list(BaselineKind), episodes=3, out_path=tmp_path / "compare.csv", trained_out=trained)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# scenario_digest=")
    assert lines[1] == ",".join(["kind", "seed", *MetricsTable.columns()])
    rows = [line.split(",") for line in lines[2:]]
    assert len(rows) == 4 * (3 + 1)
    seeds = [str(s) for s in episode_seeds(small_scenario.seed, 3)]
    for kind in BaselineKind:
        kind_rows = [r for r in rows if r[0] == kind.value]
        assert [r[1] for r in kind_rows] == seeds + ["mean"]
        assert all(len(r) == 2 + len(MetricsTable.columns()) for r in kind_rows)
    assert set(trained) == {k for k in BaselineKind if k.learned}


def test_trajectory_export(small_scenario, tmp_path):
    log = run_baseline(BaselineKind.SHORTEST_PATH, small_scenario, episodes=1)[0]
    path = export_trajectories(log, tmp_path / "traj.csv", small_scenario)
    lines = path.read_text(encoding="utf-8").splitlines()
    assert lines[0].startswith("# scenario_digest=")
    assert lines[1] == TRAJECTORY_CSV_HEADER
    assert len(lines) == 2 + len(log.records)
    agent, t_ms, *_ = lines[2].split(",")
    assert (int(agent), int(t_ms)) == (0, log.records[0]["t_ms"])


def test_blind_raster_flies_like_the_non_semantic_variant(make_scenario, small_scenario):
    # Every cell dropped means zero confidence, so every gate is closed.
    blind = make_scenario(lambda p: p["semantics"].update(dropout_frac=1.0))
    nosem = configure_for(BaselineKind.NON_SEMANTIC_RL, small_scenario)
    trainer = Trainer(small_scenario.n_agents, observation_dim(small_scenario.env), small_scenario.rl)
    policy = ActorPolicy(trainer)
    blind_log = run_mission(blind, policy, episode_seed=4)
    nosem_log = run_mission(nosem, policy, episode_seed=4)
    assert blind_log.env_steps == nosem_log.env_steps > 0
    assert blind_log.records == nosem_log.records
    assert [e["open"] for e in blind_log.entries if e.get("msg") == "A1"] == [0]
    full_log = run_mission(small_scenario, policy, episode_seed=4)
    assert full_log.records != blind_log.records
