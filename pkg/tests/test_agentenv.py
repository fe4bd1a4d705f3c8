import dataclasses
import math

import numpy as np
import pytest

from src.agentenv import (
    HOLD,
    Action,
    AgentState,
    EnvParams,
    RewardWeights,
    StepFlags,
    SwarmEnv,
    apply_action,
    build_observation,
    observation_dim,
    reward,
    separation_violations,
)
from src.constants import D_HEADING_MAX
from src.errors import EpisodeTerminatedError, ShapeMismatchError
from src.semantics import SemanticRApp, SemanticsParams


def _env(scenario, positions, headings=None):
    env = SwarmEnv(scenario)
    env.reset(seed=1)
    headings = headings or [0.0] * len(positions)
    env.states = [AgentState(np.array(p, dtype=np.float64), h) for p, h in zip(positions, headings)]
    env.samples = [env.sinr_for(s.position) for s in env.states]
    return env


def test_observation_dimension_for_the_default_layout():
    assert observation_dim(EnvParams()) == 3 + 4 + 1 + 1 + 100 + 9 == 118
    assert observation_dim(EnvParams(use_sinr_obs=False)) == 117
    assert observation_dim(EnvParams(patch_k=3, neighbors_m=1)) == 3 + 4 + 1 + 1 + 36 + 3


def test_observation_is_bounded_and_has_no_semantics_before_the_first_map(small_scenario):
    env = SwarmEnv(small_scenario)
    env.reset(seed=3)
    obs = env.observe(0, a1=None)
    assert obs.shape == (118,)
    assert np.all(np.abs(obs) <= 1.0)
    assert obs[8] == 0.0
    assert not obs[9:109].any()
    # Two agents: one neighbor slot filled, two left at zero.
    assert obs[109:112].any()
    assert not obs[112:118].any()


def test_closed_gates_give_an_all_zero_patch(small_scenario):
    closed = SemanticRApp(small_scenario.world, SemanticsParams(k=4, force_closed=True), small_scenario.seed)
    env = _env(small_scenario, [(100.0, 80.0, 50.0), (30.0, 30.0, 50.0)])
    obs = env.observe(0, closed.publish(0))
    assert obs[8] == 0.0
    assert not obs[9:109].any()


def test_open_gates_expose_nearby_buildings(small_scenario):
    clean = SemanticRApp(small_scenario.world, SemanticsParams(k=4, gate_threshold=0.0), small_scenario.seed)
    env = _env(small_scenario, [(100.0, 80.0, 50.0), (30.0, 30.0, 50.0)])
    obs = env.observe(0, clean.publish(0))
    assert obs[8] == 1.0
    patch = obs[9:109].reshape(5, 5, 4)
    assert patch[:, :, 0].max() > 0.0
    assert np.all((patch >= 0.0) & (patch <= 1.0))


def test_agent_at_its_target_sees_zero_offset(small_scenario):
    target = small_scenario.mission.targets[0]
    states = [AgentState(np.array(target), 0.0), AgentState(np.array([30.0, 30.0, 50.0]), 0.0)]
    obs = build_observation(
        small_scenario.world, None, states, 0, small_scenario.mission, EnvParams(), sinr_db=5.0
    )
    assert not obs[3:7].any()
    assert obs[7] == pytest.approx(2.0 * 15.0 / 40.0 - 1.0)


def test_zero_action_keeps_the_pose():
    state = AgentState(np.array([10.0, 20.0, 50.0]), 0.3)
    out = apply_action(state, HOLD, _mission_stub())
    assert np.array_equal(out.position, state.position)
    assert out.heading == pytest.approx(0.3)
    assert not out.action_clamped and not out.z_clamped


def test_axis_aligned_move():
    state = AgentState(np.array([10.0, 20.0, 50.0]), 0.0)
    out = apply_action(state, Action(0.0, 0.0, 10.0), _mission_stub())
    assert np.allclose(out.position, [20.0, 20.0, 50.0])


def test_descent_below_the_floor_is_clamped():
    state = AgentState(np.array([10.0, 20.0, 20.0]), 0.0)
    out = apply_action(state, Action(0.0, -5.0, 0.0), _mission_stub())
    assert out.position[2] == 20.0
    assert out.z_clamped


def test_out_of_range_actions_are_clamped():
    state = AgentState(np.array([10.0, 20.0, 50.0]), 0.0)
    out = apply_action(state, Action(2.0, 0.0, 100.0), _mission_stub())
    assert out.action_clamped
    assert out.action.d_heading == pytest.approx(D_HEADING_MAX)
    assert out.action.dist == 20.0


def _mission_stub():
    from src.worldmodel import Box, MissionSpec

    return MissionSpec(
        start_zone=Box(0.0, 0.0, 50.0, 50.0, 50.0, 50.0),
        targets=((150.0, 150.0, 50.0),),
        mission_area=Box(0.0, 0.0, 200.0, 200.0),
        z_min=20.0,
        z_max=100.0,
        reach_tolerance=5.0,
        max_steps=10,
    )


def test_reward_is_zero_when_idle_at_the_target():
    weights = RewardWeights()
    here = (50.0, 50.0, 50.0)
    breakdown = reward(here, here, here, HOLD, weights.s_qos, StepFlags(), weights)
    assert breakdown.total == 0.0
    assert all(c == 0.0 for c in breakdown.components())


def test_reward_sums_progress_sinr_and_altitude_terms():
    weights = RewardWeights()
    flags = StepFlags()
    breakdown = reward(
        (0.0, 0.0, 50.0), (10.0, 0.0, 50.0), (100.0, 0.0, 50.0), Action(0.0, 5.0, 10.0), 15.0, flags, weights
    )
    assert breakdown.progress == pytest.approx(0.5)
    assert breakdown.sinr == pytest.approx(0.25)
    assert breakdown.altitude == pytest.approx(-0.1)
    assert breakdown.total == pytest.approx(0.65)


def test_reward_penalties_and_terminal_terms():
    weights = RewardWeights()
    flags = StepFlags(collision=True, obstacle=True, out_of_area=True, first_reach=True)
    here = (0.0, 0.0, 50.0)
    breakdown = reward(here, here, (50.0, 0.0, 50.0), HOLD, 0.0, flags, weights)
    assert breakdown.collision == -weights.c_col
    assert breakdown.obstacle == -weights.c_obs
    assert breakdown.area == -weights.c_area
    assert breakdown.terminal == weights.b_reach
    assert breakdown.total == pytest.approx(-5.0 - 10.0 - 1.0 + 10.0)


def test_sinr_term_saturates():
    weights = RewardWeights()
    here = (0.0, 0.0, 50.0)
    high = reward(here, here, here, HOLD, 90.0, StepFlags(), weights)
    low = reward(here, here, here, HOLD, -90.0, StepFlags(), weights)
    assert high.sinr == weights.w_s
    assert low.sinr == -weights.w_s


def test_separation_is_sampled_along_the_segment():
    prev = [np.array([0.0, 0.0, 50.0]), np.array([20.0, 0.0, 50.0])]
    # The two agents swap places and pass each other mid-segment.
    nxt = [np.array([20.0, 0.0, 50.0]), np.array([0.0, 0.0, 50.0])]
    assert separation_violations(prev, nxt, [True, True], 10.0) == [(0, 1)]
    assert separation_violations(prev, nxt, [True, False], 10.0) == []
    apart = [np.array([0.0, 50.0, 50.0]), np.array([20.0, 50.0, 50.0])]
    assert separation_violations(apart, apart, [True, True], 10.0) == []


def test_reset_points_agents_at_their_targets(small_scenario):
    env = SwarmEnv(small_scenario)
    states = env.reset(seed=9)
    for i, s in enumerate(states):
        tx, ty, _ = small_scenario.mission.targets[i]
        assert s.heading == pytest.approx(math.atan2(ty - s.position[1], tx - s.position[0]))
        assert s.active
    assert env.tick == 0 and not env.done


def test_flying_into_a_building_kills_the_agent(small_scenario):
    env = _env(small_scenario, [(80.0, 100.0, 50.0), (30.0, 180.0, 50.0)])
    outcome = env.step([Action(0.0, 0.0, 15.0), HOLD])
    hit = outcome.results[0]
    assert not hit.alive
    assert hit.flags.obstacle
    assert hit.reward.obstacle == -small_scenario.env.reward.c_obs
    assert hit.done
    assert hit.in_obstacle
    assert not outcome.done
    follow = env.step([Action(0.0, 0.0, 15.0), HOLD]).results[0]
    assert not follow.active
    assert follow.action == HOLD
    assert follow.reward.total == 0.0
    assert follow.position == hit.position


def test_obstacles_can_be_non_terminal(make_scenario):
    scenario = make_scenario(lambda p: p.update(env={"obstacle_terminal": False}))
    env = _env(scenario, [(80.0, 100.0, 50.0), (30.0, 180.0, 50.0)])
    hit = env.step([Action(0.0, 0.0, 15.0), HOLD]).results[0]
    assert hit.alive
    assert hit.flags.obstacle
    assert hit.in_obstacle
    assert not hit.done


def test_close_agents_are_both_penalised(small_scenario):
    env = _env(small_scenario, [(50.0, 50.0, 50.0), (51.0, 50.0, 50.0)])
    outcome = env.step([HOLD, HOLD])
    assert outcome.collision_pairs == ((0, 1),)
    for r in outcome.results:
        assert r.flags.collision
        assert r.reward.collision == -small_scenario.env.reward.c_col
        assert r.alive


def test_leaving_the_mission_area_is_penalised_not_clamped(small_scenario):
    env = _env(small_scenario, [(195.0, 100.0, 50.0), (30.0, 30.0, 50.0)])
    result = env.step([Action(0.0, 0.0, 20.0), HOLD]).results[0]
    assert result.flags.out_of_area
    assert result.position[0] == pytest.approx(215.0)
    assert result.reward.area == -small_scenario.env.reward.c_area
    assert math.isfinite(result.sinr_db)


def test_episode_ends_when_every_agent_reaches_its_target(small_scenario):
    env = _env(small_scenario, [(157.0, 160.0, 50.0), (160.0, 43.0, 50.0)])
    outcome = env.step([HOLD, HOLD])
    assert outcome.done
    for r in outcome.results:
        assert r.flags.first_reach
        assert r.reward.terminal == small_scenario.env.reward.b_reach
        assert r.done
    with pytest.raises(EpisodeTerminatedError):
        env.step([HOLD, HOLD])


def test_truncation_penalises_unreached_agents(make_scenario):
    scenario = make_scenario(lambda p: p["mission"].update(max_steps=2))
    env = _env(scenario, [(30.0, 30.0, 50.0), (160.0, 43.0, 50.0)])
    first = env.step([HOLD, HOLD])
    assert not first.done
    assert first.results[1].flags.first_reach
    second = env.step([HOLD, HOLD])
    assert second.done and second.tick == 2
    assert second.results[0].flags.truncated_unreached
    assert second.results[0].reward.terminal == -scenario.env.reward.c_unreach
    # Agent 1 already reached; it is inactive and gets nothing further.
    assert not second.results[1].active
    assert second.results[1].reward.total == 0.0


def test_step_rejects_a_wrong_number_of_actions(small_scenario):
    env = SwarmEnv(small_scenario)
    env.reset(seed=0)
    with pytest.raises(ShapeMismatchError):
        env.step([HOLD])


def test_step_is_deterministic(small_scenario):
    actions = [Action(0.1, 1.0, 12.0), Action(-0.2, -1.0, 8.0)]
    records = []
    for _ in range(2):
        env = SwarmEnv(small_scenario)
        env.reset(seed=4)
        records.append([r.to_record(0) for _ in range(3) for r in env.step(actions).results])
    assert records[0] == records[1]


def test_step_records_carry_every_field(small_scenario):
    env = SwarmEnv(small_scenario)
    env.reset(seed=4)
    record = env.step([HOLD, HOLD]).results[0].to_record(100)
    assert set(record) == {
        "t_ms", "agent", "x", "y", "z", "heading", "sinr_db", "serving_id", "action",
        "reward", "flags", "done", "active", "in_obstacle", "alive",
    }
    assert record["t_ms"] == 100
    assert set(record["action"]) == {"dh", "dz", "dist"}
    assert dataclasses.asdict(StepFlags()).keys() == record["flags"].keys()


def test_reward_total_is_the_sum_of_its_components():
    rng = np.random.default_rng(2024)
    weights = RewardWeights()
    n = 100_000
    prev = rng.uniform(-500.0, 1500.0, size=(n, 3))
    nxt = prev + rng.uniform(-30.0, 30.0, size=(n, 3))
    targets = rng.uniform(0.0, 1000.0, size=(n, 3))
    moves = rng.uniform(-2.0, 2.0, size=(n, 3)) * np.array([D_HEADING_MAX, 5.0, 20.0])
    sinr = rng.uniform(-60.0, 60.0, size=n)
    bits = rng.random(size=(n, 7)) < 0.3
    for k in range(n):
        flags = StepFlags(*(bool(b) for b in bits[k]))
        action = Action(*(float(v) for v in moves[k]))
        r = reward(prev[k], nxt[k], targets[k], action, float(sinr[k]), flags, weights)
        assert r.total == pytest.approx(sum(r.components()), abs=1e-9)


def test_observations_stay_in_the_unit_box_for_random_states(small_scenario):
    rng = np.random.default_rng(31)
    env = SwarmEnv(small_scenario)
    env.reset(seed=0)
    a1 = SemanticRApp(small_scenario.world, SemanticsParams(k=4, gate_threshold=0.0), small_scenario.seed).publish(0)
    for _ in range(2_000):
        positions = rng.uniform([-100.0, -100.0, 0.0], [300.0, 300.0, 150.0], size=(2, 3))
        env.states = [AgentState(p, float(rng.uniform(-math.pi, math.pi))) for p in positions]
        sinr = float(rng.uniform(-80.0, 80.0))
        for i in range(2):
            obs = env.observe(i, a1 if rng.random() < 0.8 else None, sinr)
            assert obs.shape == (observation_dim(small_scenario.env),)
            assert np.all(np.isfinite(obs))
            assert np.all(np.abs(obs) <= 1.0)


def test_truncate_flag_ends_the_episode_before_max_steps(small_scenario):
    env = _env(small_scenario, [(30.0, 30.0, 50.0), (160.0, 43.0, 50.0)])
    outcome = env.step([HOLD, HOLD], truncate=True)
    assert outcome.done and outcome.tick == 1
    unreached, reached = outcome.results
    assert unreached.flags.truncated_unreached
    assert unreached.reward.terminal == -small_scenario.env.reward.c_unreach
    assert reached.flags.first_reach
    assert not reached.flags.truncated_unreached
    with pytest.raises(EpisodeTerminatedError):
        env.step([HOLD, HOLD])


def test_agent_lost_on_the_last_step_takes_only_the_obstacle_penalty(make_scenario):
    scenario = make_scenario(lambda p: p["mission"].update(max_steps=1))
    env = _env(scenario, [(80.0, 100.0, 50.0), (30.0, 180.0, 50.0)])
    outcome = env.step([Action(0.0, 0.0, 15.0), HOLD])
    assert outcome.done
    crashed, flying = outcome.results
    assert not crashed.alive
    assert not crashed.flags.truncated_unreached
    assert crashed.reward.terminal == 0.0
    assert crashed.reward.obstacle == -scenario.env.reward.c_obs
    assert flying.flags.truncated_unreached
