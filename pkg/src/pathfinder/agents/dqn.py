"""DQN baseline: masked epsilon-greedy over a Q-network with a hard-synced target."""

from __future__ import annotations

from pathlib import Path
from typing import TextIO

import numpy as np

from ..env import AttackEnv, StepOutcome
from ..model import CyberspaceModel
from ..nn import MLP, Adam, hard_update, save_params
from .common import AgentConfig, ReplayMemory, TrainingResult, Transition, linear_schedule, one_hot, run_episodes
from .ddpg import masked_argmax


def epsilon_greedy(q: np.ndarray, mask: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Uniform over feasible actions with probability ``epsilon``, else the masked greedy action."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask has no feasible action")
    if rng.random() < epsilon:
        return int(rng.choice(np.flatnonzero(mask)))
    return masked_argmax(q, mask)


class DQNLearner:
    name = "dqn"

    def __init__(self, env: AttackEnv, config: AgentConfig, width: int = 48):
        self.env = env
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        n_s, n_a = env.observation_size(config.context_obs), env.n_actions
        self.n_actions = n_a
        self.q = MLP([n_s, width, width, n_a], rng=self.rng)
        self.q_target = self.q.copy()
        self.opt = Adam(self.q.params, config.critic_lr, max_norm=config.grad_clip)
        self.memory = ReplayMemory(config.capacity, n_s, n_a, extras={"mask2": (n_a, np.bool_)})
        self.steps = 0

    def start_attempt(self) -> None:
        pass

    def act(self, obs, mask, progress: float) -> int:
        eps = linear_schedule(self.config.eps_start, self.config.eps_end, progress)
        return epsilon_greedy(self.q.forward(obs)[0], mask, eps, self.rng)

    def observe(self, obs, mask, action, outcome: StepOutcome, next_obs, next_mask) -> None:
        t = Transition(obs, one_hot(action, self.n_actions)[0], outcome.reward, next_obs, terminal=outcome.success)
        self.memory.push(t, mask2=next_mask)
        self.steps += 1
        cfg = self.config
        if len(self.memory) >= max(cfg.warmup, cfg.batch_size) and self.steps % cfg.train_every == 0:
            self.update()
        if self.steps % cfg.target_sync == 0:
            hard_update(self.q_target, self.q)

    def update(self) -> float:
        cfg, mem = self.config, self.memory
        idx = mem.sample_indices(cfg.batch_size, self.rng)
        s, s2 = mem.s[idx].astype(np.float64), mem.s2[idx].astype(np.float64)
        a = mem.a[idx]
        r = cfg.shape_reward(mem.r[idx])
        q2 = np.where(mem.extras["mask2"][idx], self.q_target.forward(s2), -np.inf).max(axis=1)
        y = r + cfg.gamma * np.where(mem.terminal[idx], 0.0, q2)
        q = self.q.forward(s)
        rows = np.arange(len(idx))
        err = q[rows, a] - y
        grad = np.zeros_like(q)
        grad[rows, a] = 2.0 * err / len(idx)
        grads, _ = self.q.backward(grad)
        self.opt.step(grads)
        return float(np.mean(err ** 2))

    def save(self, directory: str | Path) -> str:
        path = Path(directory) / f"dqn_seed{self.config.seed}.pfck"
        save_params(path, {f"q.{k}": v for k, v in self.q.params.items()})
        return str(path)


def train_dqn(model: CyberspaceModel, config: AgentConfig, trace: TextIO | None = None,
              checkpoint_dir: str | Path | None = None) -> TrainingResult:
    env = AttackEnv(model, episode_limit=config.episode_limit)
    learner = DQNLearner(env, config)
    result = run_episodes(env, learner, config, trace)
    if checkpoint_dir is not None:
        result.checkpoint = learner.save(checkpoint_dir)
    return result
