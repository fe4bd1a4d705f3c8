"""
Paired evaluation of the full policy against the shortest-path, non-semantic and non-SINR
baselines: mission metrics, comparison CSV and SINR-annotated trajectory export.
"""
from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np

from src.agentenv import Action, AgentState
from src.constants import D_ALT_MAX, D_HEADING_MAX, DIST_MAX, EVAL_EPISODES, TOOL_VERSION
from src.errors import MissingModelError, UsageError
from src.ricbus import EpisodeLog, run_mission
from src.utils import clamp, make_rng, setup_logging, wrap_angle
from src.worldmodel import MissionSpec, ScenarioConfig, scenario_digest

if TYPE_CHECKING:
    from src.maddpg import Trainer

setup_logging()
logger = logging.getLogger(__name__)

TRAJECTORY_CSV_HEADER = "agent,t_ms,x,y,z,sinr_db"


class BaselineKind(str, Enum):
    FULL = "full"
    SHORTEST_PATH = "shortest_path"
    NON_SEMANTIC_RL = "non_semantic_rl"
    NON_SINR_SEMANTIC_RL = "non_sinr_semantic_rl"

    @property
    def learned(self) -> bool:
        return self is not BaselineKind.SHORTEST_PATH

    @classmethod
    def parse(cls, text: str) -> "BaselineKind":
        key = text.strip().lower()
        aliases = {"shortest": cls.SHORTEST_PATH, "nosem": cls.NON_SEMANTIC_RL, "nosinr": cls.NON_SINR_SEMANTIC_RL}
        if key in aliases:
            return aliases[key]
        try:
            return cls(key)
        except ValueError:
            names = sorted([k.value for k in cls] + list(aliases))
            raise UsageError(f"unknown baseline '{text}' (choose from {', '.join(names)})") from None

    @classmethod
    def parse_list(cls, text: str) -> List["BaselineKind"]:
        kinds: List[BaselineKind] = []
        for part in text.split(","):
            if part.strip():
                kind = cls.parse(part)
                if kind not in kinds:
                    kinds.append(kind)
        if not kinds:
            raise UsageError("empty baseline list")
        return kinds


def configure_for(kind: BaselineKind, scenario: ScenarioConfig) -> ScenarioConfig:
    """
    Scenario variant each kind trains and runs under. World, radio, seeds and mission are
    shared, so runs of different kinds stay paired.
    """
    if kind is BaselineKind.NON_SEMANTIC_RL:
        semantics = dataclasses.replace(scenario.semantics, force_closed=True)
        return dataclasses.replace(scenario, semantics=semantics)
    if kind is BaselineKind.NON_SINR_SEMANTIC_RL:
        weights = dataclasses.replace(scenario.env.reward, w_s=0.0)
        env = dataclasses.replace(scenario.env, use_sinr_obs=False, reward=weights)
        return dataclasses.replace(scenario, env=env)
    if kind is BaselineKind.SHORTEST_PATH:
        env = dataclasses.replace(scenario.env, obstacle_terminal=False)
        return dataclasses.replace(scenario, env=env)
    return scenario


def episode_seeds(base_seed: int, episodes: int, stream: int = 0x6576) -> List[int]:
    """Per-episode seeds derived from one base seed; every kind in a comparison gets the same list."""
    return [int(make_rng(base_seed, stream, e).integers(0, 2**62)) for e in range(episodes)]


# -----------------------------------------------------------------------------
# Shortest-path baseline
# -----------------------------------------------------------------------------


def shortest_path_policy(state: AgentState, target: Sequence[float]) -> Action:
    """Turn toward the target and fly straight at it; radio, semantics and buildings are ignored."""
    dx = float(target[0]) - float(state.position[0])
    dy = float(target[1]) - float(state.position[1])
    remaining = math.hypot(dx, dy)
    d_heading = 0.0
    if remaining > 1e-9:
        d_heading = clamp(wrap_angle(math.atan2(dy, dx) - state.heading), -D_HEADING_MAX, D_HEADING_MAX)
    d_alt = clamp(float(target[2]) - float(state.position[2]), -D_ALT_MAX, D_ALT_MAX)
    return Action(d_heading, d_alt, min(DIST_MAX, remaining))


class ShortestPathPolicy:
    def decide(
        self, observations: Sequence[np.ndarray], states: Sequence[AgentState], mission: MissionSpec
    ) -> List[Action]:
        return [shortest_path_policy(s, mission.targets[i]) for i, s in enumerate(states)]


def run_baseline(
    kind: BaselineKind,
    scenario: ScenarioConfig,
    model: Optional["Trainer"] = None,
    episodes: int = EVAL_EPISODES,
    seeds: Optional[Sequence[int]] = None,
) -> List[EpisodeLog]:
    """
    Deterministic evaluation episodes of one kind under its scenario variant.

    Args:
        kind: Which policy to run.
        scenario: Base scenario; configure_for derives the variant.
        model: Trained learner; required for every kind except shortest_path.
        episodes: Number of episodes when seeds is not given.
        seeds: Explicit per-episode seeds (paired across kinds).

    Returns:
        List[EpisodeLog]: One log per seed.
    """
    from src.maddpg import ActorPolicy

    variant = configure_for(kind, scenario)
    if kind.learned:
        if model is None:
            raise MissingModelError(f"baseline {kind.value} needs a trained model")
        policy = ActorPolicy(model)
    else:
        policy = ShortestPathPolicy()  # type: ignore[assignment]
    run_seeds = list(seeds) if seeds is not None else episode_seeds(scenario.seed, episodes)
    logs = [run_mission(variant, policy, mode="eval", episode_seed=s) for s in run_seeds]
    logger.info(f"Ran {len(logs)} {kind.value} episodes.")
    return logs


# -----------------------------------------------------------------------------
# Metrics
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsTable:
    reach_rate: float
    obstacle_intersections: int
    collision_events: int
    min_separation: float
    mean_sinr_db: float
    p5_sinr_db: float
    path_length_ratio: float
    out_of_area_steps: int
    altitude_change_total: float
    deadline_violations: int

    def to_dict(self) -> Dict[str, float]:
        return dataclasses.asdict(self)

    @classmethod
    def columns(cls) -> List[str]:
        return [f.name for f in dataclasses.fields(cls)]

    def csv_cells(self) -> List[str]:
        cells = []
        for name in self.columns():
            value = getattr(self, name)
            cells.append(str(value) if isinstance(value, int) else f"{value:.6f}")
        return cells


def _nanmean(values: Iterable[float]) -> float:
    finite = [v for v in values if not math.isnan(v)]
    return float(np.mean(finite)) if finite else math.nan


def _mean_row(rows: Sequence[MetricsTable]) -> Dict[str, float]:
    return {name: _nanmean(float(getattr(r, name)) for r in rows) for name in MetricsTable.columns()}


@dataclass
class _EpisodeStats:
    agents: int
    reached: int = 0
    obstacle_intersections: int = 0
    collision_events: int = 0
    min_separation: float = math.inf
    sinr: List[float] = dataclasses.field(default_factory=list)
    ratios: List[float] = dataclasses.field(default_factory=list)
    out_of_area_steps: int = 0
    altitude_change_total: float = 0.0
    deadline_violations: int = 0


def _episode_stats(log: EpisodeLog) -> _EpisodeStats:
    n = log.n_agents
    stats = _EpisodeStats(agents=n, deadline_violations=log.deadline_violations)
    stats.collision_events = sum(len(p) for p in log.collision_pairs)
    tracks: Dict[int, List[np.ndarray]] = {i: [np.array(log.start_positions[i])] for i in range(n)}
    reached = [False] * n
    obstacle_ticks = set()
    by_tick: Dict[int, List[dict]] = {}
    for rec in log.records:
        by_tick.setdefault(rec["t_ms"], []).append(rec)
    for t_ms in sorted(by_tick):
        alive_positions = []
        for rec in by_tick[t_ms]:
            i = rec["agent"]
            pos = np.array([rec["x"], rec["y"], rec["z"]])
            if rec["active"]:
                stats.altitude_change_total += abs(pos[2] - tracks[i][-1][2])
                tracks[i].append(pos)
                stats.sinr.append(rec["sinr_db"])
                if rec["in_obstacle"]:
                    obstacle_ticks.add(t_ms)
                if rec["flags"]["out_of_area"]:
                    stats.out_of_area_steps += 1
            if rec["flags"]["first_reach"]:
                reached[i] = True
            if rec["alive"]:
                alive_positions.append(pos)
        for a in range(len(alive_positions)):
            for b in range(a + 1, len(alive_positions)):
                stats.min_separation = min(
                    stats.min_separation, float(np.linalg.norm(alive_positions[a] - alive_positions[b]))
                )
    stats.obstacle_intersections = len(obstacle_ticks)
    stats.reached = sum(reached)
    for i in range(n):
        path = tracks[i]
        straight = float(np.linalg.norm(path[-1] - path[0]))
        if reached[i] and straight > 1e-9:
            length = sum(float(np.linalg.norm(b - a)) for a, b in zip(path[:-1], path[1:]))
            stats.ratios.append(max(1.0, length / straight))
    return stats


def metrics(logs: Sequence[EpisodeLog]) -> MetricsTable:
    """
    Mission metrics pooled over the given episodes. Counts are summed; SINR statistics are over
    active agent-ticks; path_length_ratio is the mean over reached agents (nan when none reached).
    """
    if not logs:
        raise UsageError("metrics need at least one episode log")
    parts = [_episode_stats(log) for log in logs]
    sinr = [s for p in parts for s in p.sinr]
    ratios = [r for p in parts for r in p.ratios]
    agents = sum(p.agents for p in parts)
    min_sep = min(p.min_separation for p in parts)
    return MetricsTable(
        reach_rate=sum(p.reached for p in parts) / agents if agents else 0.0,
        obstacle_intersections=sum(p.obstacle_intersections for p in parts),
        collision_events=sum(p.collision_events for p in parts),
        min_separation=min_sep if math.isfinite(min_sep) else math.nan,
        mean_sinr_db=float(np.mean(sinr)) if sinr else math.nan,
        p5_sinr_db=float(np.percentile(sinr, 5)) if sinr else math.nan,
        path_length_ratio=float(np.mean(ratios)) if ratios else math.nan,
        out_of_area_steps=sum(p.out_of_area_steps for p in parts),
        altitude_change_total=float(sum(p.altitude_change_total for p in parts)),
        deadline_violations=sum(p.deadline_violations for p in parts),
    )


# -----------------------------------------------------------------------------
# Outputs
# -----------------------------------------------------------------------------


def _comment(scenario: ScenarioConfig) -> str:
    return f"# scenario_digest={scenario_digest(scenario)} tool_version={TOOL_VERSION}"


def compare(
    scenario: ScenarioConfig,
    kinds: Sequence[BaselineKind],
    episodes: int,
    out_path: str | Path,
    base_seed: Optional[int] = None,
    models: Optional[Mapping[BaselineKind, "Trainer"]] = None,
    trained_out: Optional[Dict[BaselineKind, "Trainer"]] = None,
) -> Path:
    """
    Runs every kind on the same episode seeds and writes one CSV row per (kind, seed) plus a
    mean row per kind. Learned kinds without a supplied model are trained first on their
    scenario variant.

    Args:
        scenario: Base scenario.
        kinds: Kinds to compare, in output order.
        episodes: Paired episodes per kind.
        out_path: CSV destination.
        base_seed: Seed the episode seeds derive from; defaults to scenario.seed.
        models: Already trained learners per kind.
        trained_out: If given, receives the learners trained here.

    Returns:
        Path: The written CSV.
    """
    from src.maddpg import train

    seeds = episode_seeds(scenario.seed if base_seed is None else base_seed, episodes)
    supplied = dict(models or {})
    lines = [_comment(scenario), ",".join(["kind", "seed", *MetricsTable.columns()])]
    for kind in kinds:
        model = supplied.get(kind)
        if kind.learned and model is None:
            logger.info(f"No model for {kind.value}; training one.")
            model, _ = train(configure_for(kind, scenario), eval_episodes=0)
            if trained_out is not None:
                trained_out[kind] = model
        logs = run_baseline(kind, scenario, model, seeds=seeds)
        rows = [metrics([log]) for log in logs]
        for seed, row in zip(seeds, rows):
            lines.append(",".join([kind.value, str(seed), *row.csv_cells()]))
        mean = _mean_row(rows)
        lines.append(",".join([kind.value, "mean", *(f"{mean[c]:.6f}" for c in MetricsTable.columns())]))
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Comparison of {len(kinds)} kinds x {episodes} episodes written to {out}.")
    return out


def export_trajectories(log: EpisodeLog, path: str | Path, scenario: Optional[ScenarioConfig] = None) -> Path:
    """One 'agent,t_ms,x,y,z,sinr_db' row per logged agent-tick."""
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    lines = [_comment(scenario)] if scenario is not None else []
    lines.append(TRAJECTORY_CSV_HEADER)
    for rec in log.records:
        lines.append(
            f"{rec['agent']},{rec['t_ms']},{rec['x']:.6f},{rec['y']:.6f},{rec['z']:.6f},{rec['sinr_db']:.6f}"
        )
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"Trajectories ({len(log.records)} rows) written to {out}.")
    return out
