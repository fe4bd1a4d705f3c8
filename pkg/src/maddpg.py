"""
MADDPG xApp learner: decentralized tanh actors, one centralized critic over the joint
observation/action, ring replay, lagged targets, and JSON model files.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.agentenv import ACTION_HIGH, ACTION_LOW, Action, AgentState, observation_dim
from src.constants import (
    ACTOR_HIDDEN,
    BATCH_SIZE,
    BUFFER_CAPACITY,
    CRITIC_HIDDEN,
    EVAL_EPISODES,
    GAMMA,
    LR_ACTOR,
    LR_CRITIC,
    MODEL_FILE_VERSION,
    NOISE_SIGMA_END,
    NOISE_SIGMA_START,
    REPLAY_INITIAL_ROWS,
    TAU,
    TRAIN_EPISODES,
    UPDATE_EVERY,
    WARMUP_TRANSITIONS,
)
from src.errors import (
    ArchitectureMismatchError,
    InsufficientBufferError,
    ModelFileError,
    ScenarioValidationError,
    SchemaVersionError,
    ShapeMismatchError,
)
from src.tinynet import (
    AdamState,
    DenseNet,
    adam_state,
    adam_step,
    backward,
    clone,
    forward,
    init,
    net_from_dict,
    net_to_dict,
    soft_update,
)
from src.utils import make_rng, setup_logging

if TYPE_CHECKING:
    from src.worldmodel import MissionSpec, ScenarioConfig

setup_logging()
logger = logging.getLogger(__name__)

ACTION_DIM = 3
# Normalized form of the zero-motion action (dist = 0 sits at the low end of its range).
HOLD_NORMALIZED = np.array([0.0, 0.0, -1.0])


@dataclass(frozen=True)
class MaddpgConfig:
    gamma: float = GAMMA
    tau: float = TAU
    lr_actor: float = LR_ACTOR
    lr_critic: float = LR_CRITIC
    batch: int = BATCH_SIZE
    buffer_capacity: int = BUFFER_CAPACITY
    warmup: int = WARMUP_TRANSITIONS
    noise_sigma_start: float = NOISE_SIGMA_START
    noise_sigma_end: float = NOISE_SIGMA_END
    update_every: int = UPDATE_EVERY
    episodes: int = TRAIN_EPISODES
    eval_episodes: int = EVAL_EPISODES
    seed: int = 0
    actor_hidden: Tuple[int, ...] = ACTOR_HIDDEN
    critic_hidden: Tuple[int, ...] = CRITIC_HIDDEN

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ScenarioValidationError("gamma in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ScenarioValidationError("tau in (0, 1]")
        if self.batch < 1 or self.buffer_capacity < 1:
            raise ScenarioValidationError("batch, buffer_capacity >= 1")
        if self.batch > self.buffer_capacity:
            raise ScenarioValidationError("batch <= buffer_capacity")
        if self.lr_actor <= 0 or self.lr_critic <= 0:
            raise ScenarioValidationError("learning rates > 0")
        if self.noise_sigma_start < 0 or self.noise_sigma_end < 0:
            raise ScenarioValidationError("noise sigma >= 0")
        if self.warmup < 0 or self.update_every < 1 or self.episodes < 0 or self.eval_episodes < 0:
            raise ScenarioValidationError("warmup >= 0, update_every >= 1, episodes >= 0")
        if any(h < 1 for h in self.actor_hidden + self.critic_hidden):
            raise ScenarioValidationError("hidden sizes >= 1")

    def noise_sigma(self, episode: int) -> float:
        """Linear decay from start to end across the training episodes."""
        if self.episodes <= 1:
            return self.noise_sigma_start
        frac = min(max(episode / (self.episodes - 1), 0.0), 1.0)
        return self.noise_sigma_start + frac * (self.noise_sigma_end - self.noise_sigma_start)


@dataclass(frozen=True)
class Transition:
    """Joint sample: obs/next_obs (n, obs_dim), actions (n, 3) normalized, rewards/dones (n,)."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray


@dataclass
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_obs: np.ndarray
    dones: np.ndarray

    @property
    def size(self) -> int:
        return int(self.obs.shape[0])


class ReplayBuffer:
    """
    Fixed-capacity ring of joint transitions with uniform sampling. Storage starts small and
    doubles as the ring fills, up to capacity.
    """

    def __init__(self, capacity: int, n_agents: int, obs_dim: int) -> None:
        self.capacity = capacity
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        rows = min(capacity, REPLAY_INITIAL_ROWS)
        self.obs = np.zeros((rows, n_agents, obs_dim))
        self.actions = np.zeros((rows, n_agents, ACTION_DIM))
        self.rewards = np.zeros((rows, n_agents))
        self.next_obs = np.zeros((rows, n_agents, obs_dim))
        self.dones = np.zeros((rows, n_agents), dtype=bool)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    @property
    def allocated(self) -> int:
        return self.obs.shape[0]

    def _grow(self) -> None:
        rows = min(self.capacity, 2 * self.allocated)
        for name in ("obs", "actions", "rewards", "next_obs", "dones"):
            old = getattr(self, name)
            new = np.zeros((rows, *old.shape[1:]), dtype=old.dtype)
            new[: old.shape[0]] = old
            setattr(self, name, new)

    def push(self, t: Transition) -> None:
        expected = {
            "obs": (self.n_agents, self.obs_dim),
            "actions": (self.n_agents, ACTION_DIM),
            "rewards": (self.n_agents,),
            "next_obs": (self.n_agents, self.obs_dim),
            "dones": (self.n_agents,),
        }
        for name, shape in expected.items():
            got = np.shape(getattr(t, name))
            if got != shape:
                raise ShapeMismatchError(f"transition {name} has shape {got}, expected {shape}")
        k = self.cursor
        if k >= self.allocated:
            self._grow()
        self.obs[k] = t.obs
        self.actions[k] = t.actions
        self.rewards[k] = t.rewards
        self.next_obs[k] = t.next_obs
        self.dones[k] = t.dones
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator) -> Batch:
        if self.size < batch_size:
            raise InsufficientBufferError(f"buffer holds {self.size} transitions, batch needs {batch_size}")
        idx = rng.integers(0, self.size, size=batch_size)
        return Batch(self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.dones[idx])


def scale_action(u: np.ndarray) -> np.ndarray:
    """Maps tanh outputs in [-1, 1] onto the action bounds."""
    return ACTION_LOW + (np.asarray(u) + 1.0) * 0.5 * (ACTION_HIGH - ACTION_LOW)


def normalize_action(action: Action) -> np.ndarray:
    return np.clip(2.0 * (action.to_array() - ACTION_LOW) / (ACTION_HIGH - ACTION_LOW) - 1.0, -1.0, 1.0)


def _joint_input(obs: np.ndarray, actions: np.ndarray) -> np.ndarray:
    b = obs.shape[0]
    return np.concatenate([obs.reshape(b, -1), actions.reshape(b, -1)], axis=1)


def critic_loss_and_grads(critic: DenseNet, x: np.ndarray, y: np.ndarray) -> Tuple[float, List[np.ndarray]]:
    """Mean squared TD error of critic(x) against targets y (batch,), and its parameter gradients."""
    q, cache = forward(critic, x)
    diff = q[:, 0] - y
    loss = float(np.mean(diff**2))
    grads, _ = backward(critic, cache, (2.0 * diff / diff.shape[0])[:, None])
    return loss, grads


def actor_objective_and_grads(
    actor: DenseNet, critic: DenseNet, obs: np.ndarray, actions: np.ndarray, i: int
) -> Tuple[float, List[np.ndarray]]:
    """
    Deterministic policy gradient for agent i: objective is mean Q with agent i's batch action
    replaced by actor(o_i). Gradients are of the negated objective, ready for descent.

    Args:
        actor: Agent i's online actor.
        critic: Centralized critic, not modified.
        obs: (batch, n, obs_dim) joint observations.
        actions: (batch, n, 3) normalized joint actions from the buffer.
        i: Agent index.

    Returns:
        (objective, actor parameter gradients).
    """
    u_i, actor_cache = forward(actor, obs[:, i, :])
    joint = actions.copy()
    joint[:, i, :] = u_i
    q, critic_cache = forward(critic, _joint_input(obs, joint))
    b = obs.shape[0]
    objective = float(np.mean(q))
    _, dx = backward(critic, critic_cache, np.full((b, 1), -1.0 / b))
    offset = obs.shape[1] * obs.shape[2] + ACTION_DIM * i
    grads, _ = backward(actor, actor_cache, dx[:, offset : offset + ACTION_DIM])
    return objective, grads


@dataclass
class TrainingReport:
    episode_returns: List[float] = field(default_factory=list)
    critic_loss: List[float] = field(default_factory=list)
    eval_metrics: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "episode_returns": list(self.episode_returns),
            "critic_loss": list(self.critic_loss),
            "eval_metrics": dict(self.eval_metrics),
        }

    def save(self, path: str | Path) -> Path:
        out = Path(path)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        logger.info(f"Training report saved to {out}.")
        return out


class Trainer:
    """
    Owns every piece of mutable learning state for one run: actors, critic, their targets,
    optimizer moments, the replay buffer and the exploration/sampling generator.
    """

    def __init__(
        self,
        n_agents: int,
        obs_dim: int,
        config: MaddpgConfig,
        actors: Optional[List[DenseNet]] = None,
        critic: Optional[DenseNet] = None,
    ) -> None:
        if n_agents < 1:
            raise ShapeMismatchError("n_agents >= 1")
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.config = config
        actor_sizes = [obs_dim, *config.actor_hidden, ACTION_DIM]
        actor_acts = ["relu"] * len(config.actor_hidden) + ["tanh"]
        critic_sizes = [n_agents * (obs_dim + ACTION_DIM), *config.critic_hidden, 1]
        critic_acts = ["relu"] * len(config.critic_hidden) + ["linear"]
        self.actors = actors or [init(actor_sizes, actor_acts, config.seed * 131 + i) for i in range(n_agents)]
        self.critic = critic or init(critic_sizes, critic_acts, config.seed * 131 + 0x63)
        if len(self.actors) != n_agents:
            raise ArchitectureMismatchError(f"{len(self.actors)} actors for {n_agents} agents")
        for actor in self.actors:
            if actor.input_size != obs_dim or actor.output_size != ACTION_DIM:
                raise ArchitectureMismatchError(f"actor {actor.layer_sizes} does not fit obs_dim {obs_dim}")
        if self.critic.input_size != n_agents * (obs_dim + ACTION_DIM) or self.critic.output_size != 1:
            raise ArchitectureMismatchError(f"critic {self.critic.layer_sizes} does not fit {n_agents} agents")
        self.target_actors = [clone(a) for a in self.actors]
        self.target_critic = clone(self.critic)
        self.actor_opt: List[AdamState] = [adam_state(a) for a in self.actors]
        self.critic_opt = adam_state(self.critic)
        self.buffer = ReplayBuffer(config.buffer_capacity, n_agents, obs_dim)
        self.rng = make_rng(config.seed, 0x6D64)
        self.noise_sigma = config.noise_sigma_start
        self.env_steps = 0
        self.updates = 0
        self.critic_losses: List[float] = []

    # -- inference -------------------------------------------------------

    def _check_obs(self, observations: Sequence[np.ndarray]) -> np.ndarray:
        obs = np.asarray(observations, dtype=np.float64)
        if obs.shape != (self.n_agents, self.obs_dim):
            raise ShapeMismatchError(f"observations have shape {obs.shape}, expected {(self.n_agents, self.obs_dim)}")
        return obs

    def select_normalized(self, observations: Sequence[np.ndarray], explore: bool) -> np.ndarray:
        obs = self._check_obs(observations)
        u = np.stack([forward(actor, obs[i])[0] for i, actor in enumerate(self.actors)])
        if explore and self.noise_sigma > 0:
            u = np.clip(u + self.rng.normal(0.0, self.noise_sigma, size=u.shape), -1.0, 1.0)
        return u

    def select_actions(self, observations: Sequence[np.ndarray], explore: bool) -> List[Action]:
        return [Action.from_array(scale_action(u)) for u in self.select_normalized(observations, explore)]

    # -- learning --------------------------------------------------------

    def store(self, transition: Transition) -> None:
        self.buffer.push(transition)

    def td_targets(self, batch: Batch) -> np.ndarray:
        next_u = np.stack(
            [forward(self.target_actors[i], batch.next_obs[:, i, :])[0] for i in range(self.n_agents)], axis=1
        )
        next_u[batch.dones] = HOLD_NORMALIZED
        q_next, _ = forward(self.target_critic, _joint_input(batch.next_obs, next_u))
        r_team = batch.rewards.mean(axis=1)
        done_all = batch.dones.all(axis=1)
        return r_team + self.config.gamma * (1.0 - done_all) * q_next[:, 0]

    def critic_update(self, batch: Batch) -> float:
        y = self.td_targets(batch)
        loss, grads = critic_loss_and_grads(self.critic, _joint_input(batch.obs, batch.actions), y)
        adam_step(self.critic, grads, self.critic_opt, self.config.lr_critic)
        return loss

    def actor_update(self, batch: Batch, i: int) -> float:
        objective, grads = actor_objective_and_grads(self.actors[i], self.critic, batch.obs, batch.actions, i)
        adam_step(self.actors[i], grads, self.actor_opt[i], self.config.lr_actor)
        return objective

    def update_targets(self) -> None:
        for target, online in zip(self.target_actors, self.actors):
            soft_update(target, online, self.config.tau)
        soft_update(self.target_critic, self.critic, self.config.tau)

    def update(self) -> float:
        batch = self.buffer.sample(self.config.batch, self.rng)
        loss = self.critic_update(batch)
        for i in range(self.n_agents):
            self.actor_update(batch, i)
        self.update_targets()
        self.updates += 1
        self.critic_losses.append(loss)
        return loss

    def observe_step(self) -> Optional[float]:
        """Counts one stored environment step and runs an update when one is due."""
        self.env_steps += 1
        ready = len(self.buffer) >= max(self.config.warmup, self.config.batch)
        if ready and self.env_steps % self.config.update_every == 0:
            return self.update()
        return None


class ActorPolicy:
    """Decentralized deterministic inference with a trainer's online actors."""

    def __init__(self, trainer: Trainer) -> None:
        self.trainer = trainer

    def decide(
        self, observations: Sequence[np.ndarray], states: Sequence[AgentState], mission: "MissionSpec"
    ) -> List[Action]:
        return self.trainer.select_actions(observations, explore=False)


def train(
    scenario: "ScenarioConfig", config: Optional[MaddpgConfig] = None, eval_episodes: Optional[int] = None
) -> Tuple[Trainer, TrainingReport]:
    """
    Trains the swarm through the RIC loop in training mode and evaluates the result.

    Args:
        scenario: Validated scenario (its env block fixes the observation layout).
        config: Learner settings; defaults to scenario.rl.
        eval_episodes: Evaluation episodes after training; defaults to config.eval_episodes.

    Returns:
        (trainer, report): the trained learner and its TrainingReport.
    """
    from src.evalharness import episode_seeds, metrics
    from src.ricbus import run_mission

    cfg = config or scenario.rl
    trainer = Trainer(scenario.n_agents, observation_dim(scenario.env), cfg)
    report = TrainingReport()
    seeds = episode_seeds(cfg.seed, cfg.episodes, stream=0x7472)
    for e, episode_seed in enumerate(seeds):
        trainer.noise_sigma = cfg.noise_sigma(e)
        log = run_mission(scenario, None, mode="train", trainer=trainer, episode_seed=episode_seed)
        report.episode_returns.append(log.team_return)
        if (e + 1) % max(1, cfg.episodes // 10) == 0:
            logger.info(
                f"Episode {e + 1}/{cfg.episodes}: return {log.team_return:.3f}, "
                f"{trainer.updates} updates, buffer {len(trainer.buffer)}."
            )
    report.critic_loss = list(trainer.critic_losses)
    n_eval = cfg.eval_episodes if eval_episodes is None else eval_episodes
    if n_eval > 0:
        policy = ActorPolicy(trainer)
        logs = [
            run_mission(scenario, policy, mode="eval", episode_seed=s)
            for s in episode_seeds(cfg.seed, n_eval, stream=0x6576)
        ]
        report.eval_metrics = metrics(logs).to_dict()
    logger.info(f"Training finished: {cfg.episodes} episodes, {trainer.updates} updates.")
    return trainer, report


# -----------------------------------------------------------------------------
# Model files
# -----------------------------------------------------------------------------


def model_to_dict(trainer: Trainer) -> Dict[str, Any]:
    return {
        "version": MODEL_FILE_VERSION,
        "kind": "maddpg_model",
        "n_agents": trainer.n_agents,
        "obs_dim": trainer.obs_dim,
        "config": json.loads(json.dumps(asdict(trainer.config))),
        "actors": [net_to_dict(a) for a in trainer.actors],
        "target_actors": [net_to_dict(a) for a in trainer.target_actors],
        "critic": net_to_dict(trainer.critic),
        "target_critic": net_to_dict(trainer.target_critic),
    }


def save_model(trainer: Trainer, path: str | Path) -> Path:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(model_to_dict(trainer), sort_keys=True), encoding="utf-8")
    logger.info(f"Model for {trainer.n_agents} agents saved to {out}.")
    return out


def load_model(path: str | Path, scenario: Optional["ScenarioConfig"] = None) -> Trainer:
    """
    Reads a model file into an inference-ready Trainer.

    Raises:
        ModelFileError: Unreadable or malformed file.
        SchemaVersionError: Unknown model file version.
        ArchitectureMismatchError: Agent count or observation size differs from the scenario.
    """
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        logger.error(f"Cannot read model {path}: {e}")
        raise ModelFileError(f"cannot read model file {path}: {e}") from e
    if not isinstance(payload, dict) or payload.get("kind") != "maddpg_model":
        raise ModelFileError(f"{path} is not a MADDPG model file")
    if payload.get("version") != MODEL_FILE_VERSION:
        raise SchemaVersionError(f"model file version {payload.get('version')!r}, expected {MODEL_FILE_VERSION}")
    try:
        raw = dict(payload["config"])
        for key in ("actor_hidden", "critic_hidden"):
            raw[key] = tuple(raw[key])
        config = MaddpgConfig(**raw)
        n_agents = int(payload["n_agents"])
        obs_dim = int(payload["obs_dim"])
        actors = [net_from_dict(a) for a in payload["actors"]]
        critic = net_from_dict(payload["critic"])
        target_actors = [net_from_dict(a) for a in payload["target_actors"]]
        target_critic = net_from_dict(payload["target_critic"])
    except (KeyError, TypeError, ValueError, ScenarioValidationError) as e:
        raise ModelFileError(f"malformed model file {path}: {e}") from e
    if scenario is not None:
        if n_agents != scenario.n_agents:
            raise ArchitectureMismatchError(f"model has {n_agents} agents, scenario has {scenario.n_agents}")
        expected_dim = observation_dim(scenario.env)
        if obs_dim != expected_dim:
            raise ArchitectureMismatchError(f"model observation size {obs_dim}, scenario needs {expected_dim}")
    trainer = Trainer(n_agents, obs_dim, config, actors=actors, critic=critic)
    if len(target_actors) != n_agents:
        raise ModelFileError(f"{len(target_actors)} target actors for {n_agents} agents")
    for i, (target, online) in enumerate(zip(target_actors, trainer.actors)):
        if not target.same_architecture(online):
            raise ArchitectureMismatchError(
                f"target actor {i} is {target.layer_sizes}/{target.activations}, "
                f"online actor is {online.layer_sizes}/{online.activations}"
            )
    if not target_critic.same_architecture(trainer.critic):
        raise ArchitectureMismatchError(
            f"target critic is {target_critic.layer_sizes}, online critic is {trainer.critic.layer_sizes}"
        )
    trainer.target_actors = target_actors
    trainer.target_critic = target_critic
    logger.info(f"Model loaded from {path} ({n_agents} agents).")
    return trainer
