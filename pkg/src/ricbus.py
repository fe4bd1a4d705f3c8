"""
Dual-timescale RIC control plane: a deterministic discrete-event loop that carries A1 maps
from the semantic rApp and E2 KPM/control messages between the RAN, the xApp and the swarm.
"""
from __future__ import annotations

import heapq
import json
import logging
import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Protocol, Sequence, Tuple, Union

import numpy as np

from src.agentenv import HOLD, Action, AgentState, SwarmEnv
from src.constants import (
    CONTROL_DEADLINE_MS,
    INFERENCE_LATENCY_MS,
    MESSAGE_SCHEMA_VERSION,
    T_A1_MIN_MS,
    T_A1_MS,
    T_E2_MAX_MS,
    T_E2_MIN_MS,
    T_E2_MS,
)
from src.errors import (
    MessageParseError,
    MessageVersionError,
    ScenarioValidationError,
    SchedulingError,
    ShapeMismatchError,
)
from src.semantics import A1Message, SemanticRApp
from src.utils import canonical_json, setup_logging

if TYPE_CHECKING:
    from src.maddpg import Trainer
    from src.worldmodel import MissionSpec, ScenarioConfig

setup_logging()
logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClockConfig:
    t_a1_ms: int = T_A1_MS
    t_e2_ms: int = T_E2_MS
    inference_latency_ms: int = INFERENCE_LATENCY_MS
    control_deadline_ms: int = CONTROL_DEADLINE_MS

    def __post_init__(self) -> None:
        if self.t_a1_ms < T_A1_MIN_MS:
            raise ScenarioValidationError(f"t_a1_ms >= {T_A1_MIN_MS}")
        if not T_E2_MIN_MS <= self.t_e2_ms <= T_E2_MAX_MS:
            raise ScenarioValidationError(f"{T_E2_MIN_MS} <= t_e2_ms <= {T_E2_MAX_MS}")
        if self.inference_latency_ms < 0:
            raise ScenarioValidationError("inference_latency_ms >= 0")
        if self.control_deadline_ms <= 0:
            raise ScenarioValidationError("control_deadline_ms > 0")


# -----------------------------------------------------------------------------
# Messages
# -----------------------------------------------------------------------------


@dataclass(frozen=True)
class E2KpmReport:
    agent: int
    timestamp_ms: int
    position: Tuple[float, float, float]
    serving_id: int
    sinr_db: float

    def __post_init__(self) -> None:
        if not all(math.isfinite(v) for v in (*self.position, self.sinr_db)):
            raise MessageParseError("KPM report fields must be finite")


@dataclass(frozen=True)
class E2ControlMessage:
    agent: int
    action: Action
    kpm_timestamp_ms: int
    issue_timestamp_ms: int

    def __post_init__(self) -> None:
        if self.issue_timestamp_ms < self.kpm_timestamp_ms:
            raise MessageParseError("control issued before the KPM report it answers")


Message = Union[E2KpmReport, E2ControlMessage, A1Message]


def serialize(message: Message) -> bytes:
    """Schema-versioned JSON envelope {version, type, ...}."""
    body: Dict[str, Any]
    if isinstance(message, E2KpmReport):
        body = {
            "type": "kpm",
            "agent": message.agent,
            "t_ms": message.timestamp_ms,
            "position": list(message.position),
            "serving_id": message.serving_id,
            "sinr_db": message.sinr_db,
        }
    elif isinstance(message, E2ControlMessage):
        body = {
            "type": "control",
            "agent": message.agent,
            "t_ms": message.issue_timestamp_ms,
            "kpm_t_ms": message.kpm_timestamp_ms,
            "action": message.action.to_record(),
        }
    elif isinstance(message, A1Message):
        body = {"type": "a1", "t_ms": message.timestamp_ms, "map": message.to_payload()}
    else:
        raise MessageParseError(f"cannot serialize {type(message).__name__}")
    body["version"] = MESSAGE_SCHEMA_VERSION
    return canonical_json(body).encode("utf-8")


def deserialize(data: bytes) -> Message:
    """
    Decodes a serialize() payload.

    Raises:
        MessageParseError: Truncated or malformed payload.
        MessageVersionError: Payload declares a different schema version.
    """
    try:
        body = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MessageParseError(f"malformed message: {e}") from e
    if not isinstance(body, dict):
        raise MessageParseError("message is not a JSON object")
    version = body.get("version")
    if version != MESSAGE_SCHEMA_VERSION:
        raise MessageVersionError(f"message version {version!r}, this build speaks version {MESSAGE_SCHEMA_VERSION}")
    try:
        kind = body["type"]
        if kind == "kpm":
            x, y, z = (float(v) for v in body["position"])
            return E2KpmReport(
                int(body["agent"]), int(body["t_ms"]), (x, y, z), int(body["serving_id"]), float(body["sinr_db"])
            )
        if kind == "control":
            a = body["action"]
            return E2ControlMessage(
                int(body["agent"]),
                Action(float(a["dh"]), float(a["dz"]), float(a["dist"])),
                int(body["kpm_t_ms"]),
                int(body["t_ms"]),
            )
        if kind == "a1":
            return A1Message.from_payload(body["map"])
    except (KeyError, TypeError, ValueError) as e:
        raise MessageParseError(f"malformed {body.get('type')} message: {e}") from e
    raise MessageParseError(f"unknown message type {body.get('type')!r}")


class A1Channel:
    """
    Latest published A1 map. publish() swaps the serialized payload and its decoded form in one
    assignment, so snapshot() never sees a half-written map.
    """

    def __init__(self) -> None:
        self._latest: Optional[Tuple[bytes, A1Message]] = None
        self.publishes = 0

    def publish(self, message: A1Message) -> bytes:
        payload = serialize(message)
        decoded = deserialize(payload)
        assert isinstance(decoded, A1Message)
        self._latest = (payload, decoded)
        self.publishes += 1
        return payload

    def snapshot(self) -> Optional[A1Message]:
        latest = self._latest
        return None if latest is None else latest[1]


# -----------------------------------------------------------------------------
# Event queue
# -----------------------------------------------------------------------------


class Priority(IntEnum):
    A1_PUBLISH = 0
    E2_KPM = 1
    XAPP_DECIDE = 2
    E2_CONTROL = 3
    ENV_STEP = 4


@dataclass(frozen=True, order=True)
class Event:
    time_ms: int
    priority: Priority
    seq: int
    payload: Any = field(default=None, compare=False)

    def trace(self) -> str:
        return f"{self.time_ms}:{self.priority.name}:{self.seq}"


class EventQueue:
    """Min-heap of events ordered by (time, priority, insertion sequence)."""

    def __init__(self) -> None:
        self._heap: List[Event] = []
        self._seq = 0
        self.now = 0

    def __len__(self) -> int:
        return len(self._heap)

    def schedule(self, time_ms: int, priority: Priority, payload: Any = None) -> Event:
        if time_ms < self.now:
            raise SchedulingError(f"cannot schedule {priority.name} at {time_ms} ms, clock is at {self.now} ms")
        event = Event(int(time_ms), Priority(priority), self._seq, payload)
        self._seq += 1
        heapq.heappush(self._heap, event)
        return event

    def next_event(self) -> Event:
        if not self._heap:
            raise SchedulingError("event queue is empty")
        event = heapq.heappop(self._heap)
        self.now = event.time_ms
        return event


# -----------------------------------------------------------------------------
# Mission loop
# -----------------------------------------------------------------------------


class Policy(Protocol):
    def decide(
        self, observations: Sequence[np.ndarray], states: Sequence[AgentState], mission: "MissionSpec"
    ) -> List[Action]: ...


ControlHook = Callable[[E2ControlMessage], Optional[E2ControlMessage]]


@dataclass
class EpisodeLog:
    episode_seed: int
    mode: str
    world_digest: str
    start_positions: List[Tuple[float, float, float]] = field(default_factory=list)
    records: List[Dict[str, Any]] = field(default_factory=list)
    entries: List[Dict[str, Any]] = field(default_factory=list)
    trace: List[str] = field(default_factory=list)
    collision_pairs: List[List[Tuple[int, int]]] = field(default_factory=list)
    deadline_violations: int = 0
    env_steps: int = 0
    a1_publishes: int = 0
    kpm_reports: int = 0
    controls_issued: int = 0
    controls_dropped: int = 0
    team_return: float = 0.0
    done: bool = False

    @property
    def n_agents(self) -> int:
        return len(self.start_positions)

    def counters(self) -> Dict[str, Any]:
        return {
            "deadline_violations": self.deadline_violations,
            "env_steps": self.env_steps,
            "a1_publishes": self.a1_publishes,
            "kpm_reports": self.kpm_reports,
            "controls_issued": self.controls_issued,
            "controls_dropped": self.controls_dropped,
            "team_return": self.team_return,
            "done": self.done,
        }

    def to_jsonl(self, path: str | Path) -> Path:
        """Step records interleaved with message summaries, in event order, then a summary line."""
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        lines = [canonical_json(e) for e in self.entries]
        lines.append(canonical_json({"summary": self.counters(), "episode_seed": self.episode_seed}))
        out.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return out


class _MissionRun:
    """State of one run_mission call; handlers are keyed by event priority."""

    def __init__(
        self,
        scenario: "ScenarioConfig",
        policy: Optional[Policy],
        mode: str,
        trainer: Optional["Trainer"],
        horizon_ms: int,
        episode_seed: int,
        control_hook: Optional[ControlHook],
    ) -> None:
        self.scenario = scenario
        self.clocks = scenario.clocks
        self.policy = policy
        self.mode = mode
        self.trainer = trainer
        self.horizon_ms = horizon_ms
        self.episode_seed = episode_seed
        self.control_hook = control_hook
        self.env = SwarmEnv(scenario)
        self.rapp = SemanticRApp(scenario.world, scenario.semantics, scenario.seed)
        self.channel = A1Channel()
        self.queue = EventQueue()
        self.kpm: Dict[int, E2KpmReport] = {}
        self.pending_actions: Dict[int, Action] = {}
        self.pending: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = None
        self.decision_u: Optional[np.ndarray] = None
        self.decision_obs: Optional[np.ndarray] = None
        self.log = EpisodeLog(episode_seed, mode, scenario.world.digest())

    def observations(self) -> np.ndarray:
        a1 = self.channel.snapshot()
        obs = []
        for i in range(self.env.n_agents):
            report = self.kpm.get(i)
            sinr = report.sinr_db if report is not None else None
            obs.append(self.env.observe(i, a1, sinr))
        return np.stack(obs)

    def close_transition(self, next_obs: np.ndarray) -> None:
        if self.pending is None or self.trainer is None:
            return
        from src.maddpg import Transition

        obs, u, rewards, dones = self.pending
        self.trainer.store(Transition(obs, u, rewards, next_obs, dones))
        self.pending = None
        self.trainer.observe_step()

    # -- handlers --------------------------------------------------------

    def on_a1_publish(self, event: Event) -> None:
        index = int(event.payload)
        message = self.rapp.publish(event.time_ms, self.episode_seed, index)
        self.channel.publish(message)
        self.log.a1_publishes += 1
        open_cells = int(np.count_nonzero(message.gate_open))
        self.log.entries.append({"t_ms": event.time_ms, "msg": "A1", "digest": message.digest, "open": open_cells})
        next_time = (index + 1) * self.clocks.t_a1_ms
        if next_time < self.horizon_ms:
            self.queue.schedule(next_time, Priority.A1_PUBLISH, index + 1)

    def on_kpm(self, event: Event) -> None:
        i = int(event.payload)
        state = self.env.states[i]
        sample = self.env.samples[i]
        x, y, z = (float(v) for v in state.position)
        report = E2KpmReport(i, event.time_ms, (x, y, z), sample.serving_id, sample.sinr_db)
        received = deserialize(serialize(report))
        assert isinstance(received, E2KpmReport)
        self.kpm[i] = received
        self.log.kpm_reports += 1
        self.log.entries.append(
            {"t_ms": event.time_ms, "msg": "KPM", "agent": i, "serving_id": received.serving_id, "sinr_db": received.sinr_db}
        )

    def on_decide(self, event: Event) -> None:
        obs = self.observations()
        self.close_transition(obs)
        states = self.env.states
        if self.mode == "train":
            assert self.trainer is not None
            u = self.trainer.select_normalized(obs, explore=True)
            from src.maddpg import HOLD_NORMALIZED, scale_action

            for i, s in enumerate(states):
                if not s.active:
                    u[i] = HOLD_NORMALIZED
            actions = [Action.from_array(scale_action(row)) for row in u]
            self.decision_u = u
        else:
            assert self.policy is not None
            actions = list(self.policy.decide(obs, [s.copy() for s in states], self.scenario.mission))
            if len(actions) != self.env.n_agents:
                raise ShapeMismatchError(f"policy returned {len(actions)} actions for {self.env.n_agents} agents")
        self.decision_obs = obs
        issue = event.time_ms + self.clocks.inference_latency_ms
        for i, s in enumerate(states):
            if s.active:
                control = E2ControlMessage(i, actions[i], event.time_ms, issue)
                self.queue.schedule(issue, Priority.E2_CONTROL, control)
        self.queue.schedule(issue, Priority.ENV_STEP, event.time_ms)

    def on_control(self, event: Event) -> None:
        control = event.payload
        assert isinstance(control, E2ControlMessage)
        if control.issue_timestamp_ms - control.kpm_timestamp_ms > self.clocks.control_deadline_ms:
            self.log.deadline_violations += 1
        self.log.controls_issued += 1
        received = deserialize(serialize(control))
        assert isinstance(received, E2ControlMessage)
        if self.control_hook is not None:
            hooked = self.control_hook(received)
            if hooked is None:
                self.log.controls_dropped += 1
                self.log.entries.append({"t_ms": event.time_ms, "msg": "CONTROL_DROPPED", "agent": control.agent})
                return
            received = hooked
        self.pending_actions[received.agent] = received.action
        self.log.entries.append(
            {"t_ms": event.time_ms, "msg": "CONTROL", "agent": received.agent, "kpm_t_ms": received.kpm_timestamp_ms}
        )

    def on_env_step(self, event: Event) -> None:
        actions = [self.pending_actions.get(i, HOLD) for i in range(self.env.n_agents)]
        self.pending_actions = {}
        t_e2 = self.clocks.t_e2_ms
        next_kpm = (event.time_ms // t_e2 + 1) * t_e2
        last = not self.step_fits(next_kpm)
        outcome = self.env.step(actions, truncate=last)
        self.log.env_steps += 1
        self.log.collision_pairs.append(list(outcome.collision_pairs))
        rewards = np.array([r.reward.total for r in outcome.results])
        dones = np.array([r.done for r in outcome.results], dtype=bool)
        self.log.team_return += float(rewards.mean())
        for r in outcome.results:
            record = r.to_record(event.time_ms)
            self.log.records.append(record)
            self.log.entries.append(record)
        if self.mode == "train" and self.decision_obs is not None and self.decision_u is not None:
            self.pending = (self.decision_obs, self.decision_u, rewards, dones)
        if outcome.done:
            self.log.done = True
            return
        self.schedule_tick(next_kpm)

    def step_fits(self, tick_ms: int) -> bool:
        """A tick is run only if the ENV_STEP it leads to lands within the horizon."""
        return tick_ms < self.horizon_ms and tick_ms + self.clocks.inference_latency_ms <= self.horizon_ms

    def schedule_tick(self, time_ms: int) -> None:
        for i, s in enumerate(self.env.states):
            if s.active:
                self.queue.schedule(time_ms, Priority.E2_KPM, i)
        self.queue.schedule(time_ms, Priority.XAPP_DECIDE, None)

    # -- loop ------------------------------------------------------------

    def run(self) -> EpisodeLog:
        self.env.reset(self.episode_seed)
        self.log.start_positions = [tuple(float(v) for v in s.position) for s in self.env.states]  # type: ignore[misc]
        if self.horizon_ms > 0:
            self.queue.schedule(0, Priority.A1_PUBLISH, 0)
        if self.step_fits(0):
            self.schedule_tick(0)
        handlers = {
            Priority.A1_PUBLISH: self.on_a1_publish,
            Priority.E2_KPM: self.on_kpm,
            Priority.XAPP_DECIDE: self.on_decide,
            Priority.E2_CONTROL: self.on_control,
            Priority.ENV_STEP: self.on_env_step,
        }
        while len(self.queue) and not self.log.done:
            event = self.queue.next_event()
            self.log.trace.append(event.trace())
            handlers[event.priority](event)
        if self.pending is not None:
            self.close_transition(self.observations())
        return self.log


def run_mission(
    scenario: "ScenarioConfig",
    policy: Optional[Policy],
    mode: str = "eval",
    trainer: Optional["Trainer"] = None,
    horizon_ms: Optional[int] = None,
    episode_seed: int = 0,
    control_hook: Optional[ControlHook] = None,
) -> EpisodeLog:
    """
    Runs one episode through the RIC loop: A1 publishes every t_a1, per-agent KPM reports
    every t_e2, one xApp decision per tick, controls issued after the inference latency, then
    one environment step.

    Args:
        scenario: Validated scenario.
        policy: Decision maker for eval mode.
        mode: "train" (explore with the trainer and store transitions) or "eval".
        trainer: Learner for train mode.
        horizon_ms: Simulated horizon; defaults to max_steps * t_e2.
        episode_seed: Seeds agent placement and the A1 observation noise.
        control_hook: Optional rewrite of each delivered control; returning None drops it.

    Returns:
        EpisodeLog: Ordered records, message summaries, event trace and counters.
    """
    if mode not in ("train", "eval"):
        raise ScenarioValidationError(f"mode is train or eval, got {mode!r}")
    if mode == "train" and trainer is None:
        raise ScenarioValidationError("train mode needs a trainer")
    if mode == "eval" and policy is None:
        raise ScenarioValidationError("eval mode needs a policy")
    horizon = scenario.mission.max_steps * scenario.clocks.t_e2_ms if horizon_ms is None else horizon_ms
    log = _MissionRun(scenario, policy, mode, trainer, horizon, episode_seed, control_hook).run()
    logger.debug(
        f"Mission {mode} seed={episode_seed}: {log.env_steps} steps, return {log.team_return:.3f}, "
        f"{log.deadline_violations} deadline violations."
    )
    return log
