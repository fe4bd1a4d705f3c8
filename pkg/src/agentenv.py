"""
Constrained-MDP environment for the UAV swarm: observations, kinematic action application,
penalty-shaped rewards, and the obstacle / separation / reach / truncation rules.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.constants import (
    B_REACH,
    C_AREA,
    C_COLLISION,
    C_OBSTACLE,
    C_UNREACH,
    D_ALT_MAX,
    D_HEADING_MAX,
    DIST_MAX,
    DIST_NORM_M,
    NEIGHBORS_M,
    S_HI_DB,
    S_QOS_DB,
    SEMANTIC_FEATURES,
    SEMANTIC_PATCH_K,
    SINR_OBS_HI_DB,
    SINR_OBS_LO_DB,
    W_ALTITUDE,
    W_PROGRESS,
    W_SINR,
)
from src.errors import EpisodeTerminatedError, ScenarioValidationError, ShapeMismatchError
from src.radio import SinrSample, sinr_at
from src.semantics import A1Message
from src.utils import clamp, setup_logging, wrap_angle
from src.worldmodel import MissionSpec, ScenarioConfig, WorldMap, spawn_agents

setup_logging()
logger = logging.getLogger(__name__)

ACTION_LOW = np.array([-D_HEADING_MAX, -D_ALT_MAX, 0.0])
ACTION_HIGH = np.array([D_HEADING_MAX, D_ALT_MAX, DIST_MAX])

# Fractions of the motion segment where pairwise separation is checked.
SEPARATION_SAMPLES = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class RewardWeights:
    w_p: float = W_PROGRESS
    w_s: float = W_SINR
    w_a: float = W_ALTITUDE
    c_col: float = C_COLLISION
    c_obs: float = C_OBSTACLE
    c_area: float = C_AREA
    b_reach: float = B_REACH
    c_unreach: float = C_UNREACH
    s_qos: float = S_QOS_DB
    s_hi: float = S_HI_DB
    dist_norm: float = DIST_NORM_M
    d_alt_max: float = D_ALT_MAX

    def __post_init__(self) -> None:
        for name in ("w_p", "w_s", "w_a", "c_col", "c_obs", "c_area", "b_reach", "c_unreach"):
            if getattr(self, name) < 0:
                raise ScenarioValidationError(f"reward weight {name} >= 0")
        if not self.s_hi > self.s_qos:
            raise ScenarioValidationError("S_hi > S_qos")
        if not (self.dist_norm > 0 and self.d_alt_max > 0):
            raise ScenarioValidationError("dist_norm, d_alt_max > 0")


@dataclass(frozen=True)
class EnvParams:
    patch_k: int = SEMANTIC_PATCH_K
    neighbors_m: int = NEIGHBORS_M
    sinr_obs_lo: float = SINR_OBS_LO_DB
    sinr_obs_hi: float = SINR_OBS_HI_DB
    use_sinr_obs: bool = True
    obstacle_terminal: bool = True
    reward: RewardWeights = field(default_factory=RewardWeights)

    def __post_init__(self) -> None:
        if self.patch_k < 1 or self.neighbors_m < 0:
            raise ScenarioValidationError("patch_k >= 1, neighbors_m >= 0")
        if not self.sinr_obs_hi > self.sinr_obs_lo:
            raise ScenarioValidationError("S_hi > S_lo")


@dataclass
class AgentState:
    position: np.ndarray
    heading: float
    reached: bool = False
    alive: bool = True

    @property
    def active(self) -> bool:
        return self.alive and not self.reached

    def copy(self) -> "AgentState":
        return AgentState(self.position.copy(), self.heading, self.reached, self.alive)


@dataclass(frozen=True)
class Action:
    d_heading: float = 0.0
    d_alt: float = 0.0
    dist: float = 0.0

    def to_array(self) -> np.ndarray:
        return np.array([self.d_heading, self.d_alt, self.dist], dtype=np.float64)

    @classmethod
    def from_array(cls, values: Sequence[float]) -> "Action":
        return cls(float(values[0]), float(values[1]), float(values[2]))

    def clamped(self) -> Tuple["Action", bool]:
        raw = self.to_array()
        bounded = np.clip(raw, ACTION_LOW, ACTION_HIGH)
        return Action.from_array(bounded), bool(np.any(bounded != raw))

    def to_record(self) -> Dict[str, float]:
        return {"dh": self.d_heading, "dz": self.d_alt, "dist": self.dist}


HOLD = Action(0.0, 0.0, 0.0)


@dataclass(frozen=True)
class StepFlags:
    collision: bool = False
    obstacle: bool = False
    out_of_area: bool = False
    first_reach: bool = False
    truncated_unreached: bool = False
    action_clamped: bool = False
    z_clamped: bool = False

    def to_record(self) -> Dict[str, bool]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class RewardBreakdown:
    progress: float = 0.0
    sinr: float = 0.0
    collision: float = 0.0
    altitude: float = 0.0
    area: float = 0.0
    obstacle: float = 0.0
    terminal: float = 0.0
    total: float = 0.0

    def components(self) -> Tuple[float, ...]:
        return (self.progress, self.sinr, self.collision, self.altitude, self.area, self.obstacle, self.terminal)

    def to_record(self) -> Dict[str, float]:
        return dataclasses.asdict(self)


@dataclass(frozen=True)
class ActionOutcome:
    position: np.ndarray
    heading: float
    action: Action
    action_clamped: bool
    z_clamped: bool


@dataclass(frozen=True)
class StepResult:
    agent: int
    position: Tuple[float, float, float]
    heading: float
    sinr_db: float
    serving_id: int
    action: Action
    reward: RewardBreakdown
    flags: StepFlags
    done: bool
    active: bool
    in_obstacle: bool
    alive: bool = True

    def to_record(self, t_ms: int) -> Dict[str, Any]:
        x, y, z = self.position
        return {
            "t_ms": t_ms,
            "agent": self.agent,
            "x": x,
            "y": y,
            "z": z,
            "heading": self.heading,
            "sinr_db": self.sinr_db,
            "serving_id": self.serving_id,
            "action": self.action.to_record(),
            "reward": self.reward.to_record(),
            "flags": self.flags.to_record(),
            "done": self.done,
            "active": self.active,
            "in_obstacle": self.in_obstacle,
            "alive": self.alive,
        }


@dataclass(frozen=True)
class StepOutcome:
    results: Tuple[StepResult, ...]
    done: bool
    tick: int
    collision_pairs: Tuple[Tuple[int, int], ...]


# -----------------------------------------------------------------------------
# Observations
# -----------------------------------------------------------------------------


def observation_dim(params: EnvParams) -> int:
    k = params.patch_k
    sinr = 1 if params.use_sinr_obs else 0
    return 3 + 4 + sinr + 1 + k * k * SEMANTIC_FEATURES + 3 * params.neighbors_m


def _norm(value: float, lo: float, hi: float) -> float:
    return clamp(2.0 * (value - lo) / (hi - lo) - 1.0, -1.0, 1.0)


def _mission_diag(mission: MissionSpec) -> float:
    area = mission.mission_area
    return math.sqrt(area.width**2 + area.depth**2 + (mission.z_max - mission.z_min) ** 2)


def _semantic_patch(
    world: WorldMap, a1: Optional[A1Message], position: np.ndarray, k_patch: int, height_norm: float
) -> Tuple[np.ndarray, float]:
    patch = np.zeros((k_patch, k_patch, SEMANTIC_FEATURES))
    if a1 is None:
        return patch.reshape(-1), 0.0
    x, y = world.clip_xy(float(position[0]), float(position[1]))
    i, j = world.cell_of(x, y)
    ci, cj = i // a1.k, j // a1.k
    cnx, cny = a1.shape
    features = a1.feature_grid()
    scale = np.array([1.0, 1.0 / height_norm, 1.0 / height_norm, 1.0])
    half = k_patch // 2
    for di in range(k_patch):
        for dj in range(k_patch):
            pi, pj = ci + di - half, cj + dj - half
            if 0 <= pi < cnx and 0 <= pj < cny and a1.gate_open[pi, pj]:
                patch[di, dj] = np.clip(np.nan_to_num(features[pi, pj] * scale), 0.0, 1.0)
    gate_flag = 1.0 if (ci < cnx and cj < cny and a1.gate_open[ci, cj]) else 0.0
    return patch.reshape(-1), gate_flag


def build_observation(
    world: WorldMap,
    a1: Optional[A1Message],
    states: Sequence[AgentState],
    i: int,
    mission: MissionSpec,
    params: EnvParams,
    sinr_db: float,
) -> np.ndarray:
    """
    Observation of agent i, every entry in [-1, 1]:
    own position (3), unit vector + distance to target (4), SINR (1, optional), gate flag (1),
    K x K x 4 semantic patch from the latest A1 map, M nearest neighbor offsets (3 each).

    Args:
        world: Height raster (for the agent's coarse cell).
        a1: Latest complete A1 map, or None before the first publish.
        states: All agent states.
        i: Observing agent.
        mission: Mission geometry used for normalization.
        params: Layout switches.
        sinr_db: SINR from the agent's latest KPM report.

    Returns:
        np.ndarray of length observation_dim(params).
    """
    area = mission.mission_area
    me = states[i]
    pos = me.position
    parts: List[float] = [
        _norm(pos[0], area.x_min, area.x_max),
        _norm(pos[1], area.y_min, area.y_max),
        _norm(pos[2], mission.z_min, mission.z_max),
    ]
    diag = _mission_diag(mission)
    offset = np.asarray(mission.targets[i], dtype=np.float64) - pos
    dist = float(np.linalg.norm(offset))
    unit = offset / dist if dist > 1e-9 else np.zeros(3)
    parts.extend(float(u) for u in unit)
    parts.append(clamp(dist / diag, 0.0, 1.0))
    if params.use_sinr_obs:
        parts.append(_norm(sinr_db, params.sinr_obs_lo, params.sinr_obs_hi))
    patch, gate_flag = _semantic_patch(world, a1, pos, params.patch_k, mission.z_max)
    parts.append(gate_flag)
    neighbors = sorted(
        (float(np.linalg.norm(s.position - pos)), j) for j, s in enumerate(states) if j != i and s.alive
    )[: params.neighbors_m]
    rel = np.zeros((params.neighbors_m, 3))
    for row, (_, j) in enumerate(neighbors):
        rel[row] = np.clip((states[j].position - pos) / diag, -1.0, 1.0)
    return np.concatenate([np.array(parts), patch, rel.reshape(-1)])


# -----------------------------------------------------------------------------
# Dynamics and reward
# -----------------------------------------------------------------------------


def apply_action(state: AgentState, action: Action, mission: MissionSpec) -> ActionOutcome:
    """
    Kinematic step: turn, then fly dist along the new heading and change altitude by d_alt.
    Altitude is clamped to [z_min, z_max]; the horizontal position is never clamped.
    """
    bounded, action_clamped = action.clamped()
    heading = wrap_angle(state.heading + bounded.d_heading)
    pos = state.position
    z_target = pos[2] + bounded.d_alt
    z = min(max(z_target, mission.z_min), mission.z_max)
    candidate = np.array(
        [pos[0] + bounded.dist * math.cos(heading), pos[1] + bounded.dist * math.sin(heading), z]
    )
    return ActionOutcome(candidate, heading, bounded, action_clamped, bool(z != z_target))


def reward(
    prev: Sequence[float],
    next_pos: Sequence[float],
    target: Sequence[float],
    action: Action,
    sinr_db: float,
    flags: StepFlags,
    weights: RewardWeights,
) -> RewardBreakdown:
    """Per-agent reward components; total is their plain sum."""
    dist_prev = math.dist(prev, target)
    dist_next = math.dist(next_pos, target)
    progress = weights.w_p * (dist_prev - dist_next) / weights.dist_norm
    sinr = weights.w_s * clamp((sinr_db - weights.s_qos) / (weights.s_hi - weights.s_qos), -1.0, 1.0)
    collision = -weights.c_col if flags.collision else 0.0
    altitude = -weights.w_a * abs(action.d_alt) / weights.d_alt_max
    area = -weights.c_area if flags.out_of_area else 0.0
    obstacle = -weights.c_obs if flags.obstacle else 0.0
    terminal = 0.0
    if flags.first_reach:
        terminal += weights.b_reach
    if flags.truncated_unreached:
        terminal -= weights.c_unreach
    total = progress + sinr + collision + altitude + area + obstacle + terminal
    return RewardBreakdown(progress, sinr, collision, altitude, area, obstacle, terminal, total)


def separation_violations(
    prev: Sequence[np.ndarray], nxt: Sequence[np.ndarray], present: Sequence[bool], d_safe: float
) -> List[Tuple[int, int]]:
    """Pairs whose 3D distance drops below d_safe at the sampled points of their motion segments."""
    pairs: List[Tuple[int, int]] = []
    s = np.array(SEPARATION_SAMPLES)[:, None]
    tracks = [p[None, :] + s * (n - p)[None, :] for p, n in zip(prev, nxt)]
    n = len(tracks)
    for a in range(n):
        if not present[a]:
            continue
        for b in range(a + 1, n):
            if present[b] and float(np.min(np.linalg.norm(tracks[a] - tracks[b], axis=1))) < d_safe:
                pairs.append((a, b))
    return pairs


class SwarmEnv:
    """
    Single-owner environment. One logical writer calls reset() then step() until done.
    """

    def __init__(self, scenario: ScenarioConfig, params: Optional[EnvParams] = None) -> None:
        self.scenario = scenario
        self.world = scenario.world
        self.mission = scenario.mission
        self.sites = scenario.sites
        self.radio = scenario.radio
        self.params = params or scenario.env
        self.states: List[AgentState] = []
        self.samples: List[SinrSample] = []
        self.tick = 0
        self.done = False

    @property
    def n_agents(self) -> int:
        return self.mission.n_agents

    @property
    def obs_dim(self) -> int:
        return observation_dim(self.params)

    def sinr_for(self, position: Sequence[float]) -> SinrSample:
        x, y = self.world.clip_xy(float(position[0]), float(position[1]))
        return sinr_at((x, y, float(position[2])), self.sites, self.world, self.radio)

    def reset(self, seed: int) -> List[AgentState]:
        positions = spawn_agents(self.mission, self.n_agents, seed)
        self.states = []
        for i, pos in enumerate(positions):
            tx, ty, _ = self.mission.targets[i]
            self.states.append(AgentState(pos, wrap_angle(math.atan2(ty - pos[1], tx - pos[0]))))
        self.samples = [self.sinr_for(s.position) for s in self.states]
        self.tick = 0
        self.done = False
        return [s.copy() for s in self.states]

    def observe(self, i: int, a1: Optional[A1Message], sinr_db: Optional[float] = None) -> np.ndarray:
        s = self.samples[i].sinr_db if sinr_db is None else sinr_db
        return build_observation(self.world, a1, self.states, i, self.mission, self.params, s)

    def observe_all(self, a1: Optional[A1Message]) -> List[np.ndarray]:
        return [self.observe(i, a1) for i in range(self.n_agents)]

    def in_obstacle(self, position: Sequence[float]) -> bool:
        x, y, z = float(position[0]), float(position[1]), float(position[2])
        if not self.world.contains(x, y):
            return False
        i, j = self.world.cell_of(x, y)
        return bool(z <= self.world.height[i, j])

    def step(self, actions: Sequence[Action], truncate: bool = False) -> StepOutcome:
        """
        Moves every active agent at once, then applies in order: building strikes, pairwise
        separation, target reach, and truncation at max_steps. truncate=True ends the episode
        on this step even before max_steps, as when the run's time horizon cuts it short.
        """
        if self.done:
            raise EpisodeTerminatedError("episode already terminated")
        if len(actions) != self.n_agents:
            raise ShapeMismatchError(f"{len(actions)} actions for {self.n_agents} agents")
        mission = self.mission
        weights = self.params.reward
        prev = [s.position.copy() for s in self.states]
        active = [s.active for s in self.states]
        present = [s.alive for s in self.states]
        outcomes: List[Optional[ActionOutcome]] = []
        candidates: List[np.ndarray] = []
        for s, a, is_active in zip(self.states, actions, active):
            if is_active:
                outcome = apply_action(s, a, mission)
                outcomes.append(outcome)
                candidates.append(outcome.position)
            else:
                outcomes.append(None)
                candidates.append(s.position.copy())

        strikes = [is_active and self.in_obstacle(c) for is_active, c in zip(active, candidates)]
        pairs = separation_violations(prev, candidates, present, mission.d_safe)
        colliding = set()
        for a, b in pairs:
            colliding.update((a, b))

        self.tick += 1
        first_reach = [False] * self.n_agents
        for i, s in enumerate(self.states):
            outcome = outcomes[i]
            if outcome is None:
                continue
            s.position = outcome.position
            s.heading = outcome.heading
            if strikes[i] and self.params.obstacle_terminal:
                s.alive = False
                continue
            if math.dist(s.position, mission.targets[i]) <= mission.reach_tolerance:
                s.reached = True
                first_reach[i] = True

        truncating = truncate or self.tick >= mission.max_steps
        results: List[StepResult] = []
        for i, s in enumerate(self.states):
            outcome = outcomes[i]
            if s.alive:
                self.samples[i] = self.sinr_for(s.position)
            sample = self.samples[i]
            if outcome is None:
                flags = StepFlags()
                breakdown = RewardBreakdown()
                action = HOLD
            else:
                flags = StepFlags(
                    collision=i in colliding,
                    obstacle=strikes[i],
                    out_of_area=not mission.mission_area.contains_xy(s.position[0], s.position[1]),
                    first_reach=first_reach[i],
                    truncated_unreached=truncating and s.active,
                    action_clamped=outcome.action_clamped,
                    z_clamped=outcome.z_clamped,
                )
                action = outcome.action
                breakdown = reward(prev[i], s.position, mission.targets[i], action, sample.sinr_db, flags, weights)
            results.append(
                StepResult(
                    agent=i,
                    position=(float(s.position[0]), float(s.position[1]), float(s.position[2])),
                    heading=s.heading,
                    sinr_db=sample.sinr_db,
                    serving_id=sample.serving_id,
                    action=action,
                    reward=breakdown,
                    flags=flags,
                    done=not s.active or truncating,
                    active=outcome is not None,
                    in_obstacle=outcome is not None and self.in_obstacle(s.position),
                    alive=s.alive,
                )
            )
        self.done = truncating or all(not s.active for s in self.states)
        if pairs:
            logger.info(f"Tick {self.tick}: separation violated by pairs {pairs}.")
        return StepOutcome(tuple(results), self.done, self.tick, tuple(pairs))
