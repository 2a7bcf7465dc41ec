"""Shared pieces for the learners: configuration, replay memory, the episode loop."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, TextIO

import numpy as np

from ..env import AttackEnv, EnvState, StepOutcome, trace_line

R_NEG = -1e6  # stands in for the "minus infinity" reward of infeasible requests


@dataclass
class AgentConfig:
    episodes: int = 500
    episode_limit: int = 10000
    seed: int = 0
    gamma: float = 0.99
    tau: float = 0.01
    batch_size: int = 64
    capacity: int = 100_000
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    noise_start: float = 0.3
    noise_end: float = 0.01
    eps_start: float = 1.0
    eps_end: float = 0.05
    target_sync: int = 1000
    n_step: int = 5
    entropy: float = 0.0
    train_every: int = 4
    warmup: int = 1000
    logit_l2: float = 0.0  # actor penalty on pre-sigmoid scores
    context_obs: bool = False  # append location one-hot and active ACL bits to the network input
    augment: bool = True  # store infeasible theory actions (IDDPG only)
    critic_action: str = "onehot"  # where DDPG evaluates its critic: executed one-hot or soft module output
    reward_transform: str = "symlog"
    reward_scale: float = 1.0
    grad_clip: float | None = 10.0

    def __post_init__(self):
        if self.episodes < 0:
            raise ValueError("episodes must be >= 0")
        if self.episode_limit < 1:
            raise ValueError("episode_limit must be >= 1")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError("gamma must lie in (0, 1]")
        if not 0.0 <= self.tau <= 1.0:
            raise ValueError("tau must lie in [0, 1]")
        if self.batch_size < 1 or self.capacity < self.batch_size:
            raise ValueError("need 1 <= batch_size <= capacity")
        if self.reward_transform not in ("symlog", "linear"):
            raise ValueError(f"unknown reward transform {self.reward_transform!r}")
        if self.critic_action not in ("expected", "onehot", "soft"):
            raise ValueError(f"unknown critic action {self.critic_action!r}")
        if self.train_every < 1 or self.target_sync < 1 or self.n_step < 1:
            raise ValueError("train_every, target_sync and n_step must be >= 1")

    @property
    def total_steps(self) -> int:
        return self.episodes * self.episode_limit

    def shape_reward(self, r: np.ndarray) -> np.ndarray:
        """Learner-side reward compression; the environment's rewards are reported unchanged."""
        r = np.asarray(r, dtype=np.float64) * self.reward_scale
        if self.reward_transform == "symlog":
            return np.sign(r) * np.log1p(np.abs(r))
        return r


@dataclass
class Transition:
    s: np.ndarray
    a: np.ndarray  # one-hot over the action table
    r: float
    s2: np.ndarray
    terminal: bool = False
    penalty: bool = False  # augmented record for an infeasible theory action

    def __post_init__(self):
        if np.count_nonzero(self.a) != 1:
            raise ValueError("action must be one-hot")
        if not math.isfinite(self.r):
            raise ValueError("reward must be finite")

    @property
    def action_index(self) -> int:
        return int(np.flatnonzero(self.a)[0])


def one_hot(indices: np.ndarray | int, n: int) -> np.ndarray:
    indices = np.atleast_1d(indices)
    out = np.zeros((len(indices), n))
    out[np.arange(len(indices)), indices] = 1.0
    return out


class ReplayMemory:
    """Ring buffer of transitions; extra per-record arrays ride along by name."""

    def __init__(self, capacity: int, n_state: int, n_actions: int,
                 extras: dict[str, int | tuple[int, type]] | None = None):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.n_actions = n_actions
        self.s = np.zeros((capacity, n_state), dtype=np.uint8)
        self.s2 = np.zeros((capacity, n_state), dtype=np.uint8)
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.penalty = np.zeros(capacity, dtype=bool)
        self.extras = {}
        for k, spec in (extras or {}).items():
            width, dtype = spec if isinstance(spec, tuple) else (spec, np.float64)
            self.extras[k] = np.zeros((capacity, width), dtype=dtype)
        self.cursor = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def push(self, t: Transition, **extras: np.ndarray) -> int:
        i = self.cursor
        self.s[i] = t.s
        self.s2[i] = t.s2
        self.a[i] = t.action_index
        self.r[i] = t.r
        self.terminal[i] = t.terminal
        self.penalty[i] = t.penalty
        for k, v in extras.items():
            self.extras[k][i] = v
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)
        return i

    def get(self, i: int) -> Transition:
        if not 0 <= i < self.size:
            raise IndexError(i)
        return Transition(self.s[i].astype(float), one_hot(self.a[i], self.n_actions)[0], float(self.r[i]),
                          self.s2[i].astype(float), bool(self.terminal[i]), bool(self.penalty[i]))

    def sample_indices(self, m: int, rng: np.random.Generator) -> np.ndarray:
        if m > self.size:
            raise ValueError(f"cannot draw {m} distinct records from {self.size}")
        return rng.choice(self.size, size=m, replace=False)


@dataclass
class TrainingResult:
    agent: str
    seed: int
    episode_rewards: list[float] = field(default_factory=list)
    episode_successes: list[int] = field(default_factory=list)
    episode_min_steps: list[int | None] = field(default_factory=list)
    success_steps: list[int] = field(default_factory=list)
    infeasible_executions: int = 0
    total_steps: int = 0
    checkpoint: str | None = None

    @property
    def attack_successfully_number(self) -> int:
        return len(self.success_steps)

    @property
    def minimum_steps(self) -> int | None:
        return min(self.success_steps) if self.success_steps else None

    @property
    def mean_success_steps(self) -> float | None:
        return float(np.mean(self.success_steps)) if self.success_steps else None

    def to_dict(self) -> dict:
        out = asdict(self)
        out["attack_successfully_number"] = self.attack_successfully_number
        out["minimum_steps"] = self.minimum_steps
        out["mean_success_steps"] = self.mean_success_steps
        return out

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainingResult":
        keys = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in keys})

    @classmethod
    def load(cls, path: str | Path) -> "TrainingResult":
        return cls.from_dict(json.loads(Path(path).read_text()))


class Learner(Protocol):
    name: str

    def start_attempt(self) -> None: ...

    def act(self, obs: np.ndarray, mask: np.ndarray, progress: float) -> int: ...

    def observe(self, obs: np.ndarray, mask: np.ndarray, action: int, outcome: StepOutcome,
                next_obs: np.ndarray, next_mask: np.ndarray) -> None: ...


def linear_schedule(start: float, end: float, progress: float) -> float:
    p = min(max(progress, 0.0), 1.0)
    return (1.0 - p) * start + p * end


def run_episodes(env: AttackEnv, learner: Learner, config: AgentConfig, trace: TextIO | None = None) -> TrainingResult:
    """Episode protocol: success sends the attacker back to the start while the
    episode clock keeps running until ``episode_limit`` steps have elapsed."""
    result = TrainingResult(agent=learner.name, seed=config.seed)
    total = max(config.total_steps, 1)
    step = 0
    for episode in range(config.episodes):
        state: EnvState = env.reset()
        learner.start_attempt()
        obs = env.observation(state, config.context_obs)
        mask = env.action_mask(state)
        ep_reward, ep_successes, ep_min = 0.0, 0, None
        while True:
            action = learner.act(obs, mask, step / total)
            out = env.step(state, action)
            step += 1
            if not out.feasible:
                result.infeasible_executions += 1
            next_obs = env.observation(out.state, config.context_obs)
            next_mask = env.action_mask(out.state)
            learner.observe(obs, mask, action, out, next_obs, next_mask)
            if trace is not None:
                trace.write(trace_line(episode, out.state.steps_episode, env.actions[action], out) + "\n")
            ep_reward += out.reward
            if out.success:
                ep_successes += 1
                result.success_steps.append(out.attack_steps)
                ep_min = out.attack_steps if ep_min is None else min(ep_min, out.attack_steps)
                learner.start_attempt()
            state, obs, mask = out.state, next_obs, next_mask
            if out.done:
                break
        result.episode_rewards.append(ep_reward)
        result.episode_successes.append(ep_successes)
        result.episode_min_steps.append(ep_min)
    result.total_steps = step
    return result
