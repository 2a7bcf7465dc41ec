"""A2C baseline: masked softmax policy and a state-value net, n-step returns."""

from __future__ import annotations

from pathlib import Path
from typing import TextIO

import numpy as np

from ..env import AttackEnv, StepOutcome
from ..model import CyberspaceModel
from ..nn import MLP, Adam, save_params
from .common import AgentConfig, TrainingResult, run_episodes


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("mask has no feasible action")
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def policy_logit_grad(probs: np.ndarray, actions: np.ndarray, advantages: np.ndarray,
                      entropy: float = 0.0) -> np.ndarray:
    """Gradient of  -A * log pi(a|s) - entropy * H(pi)  w.r.t. the logits (row-wise)."""
    probs = np.atleast_2d(probs)
    rows = np.arange(len(probs))
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    g = np.asarray(advantages).reshape(-1, 1) * (probs - onehot)
    if entropy:
        logp = np.log(np.where(probs > 0, probs, 1.0))
        h = -(probs * logp).sum(axis=1, keepdims=True)
        g += entropy * probs * (logp + h)
    return g


def n_step_returns(rewards: np.ndarray, terminals: np.ndarray, bootstrap: float, gamma: float) -> np.ndarray:
    out = np.zeros(len(rewards))
    running = bootstrap
    for i in reversed(range(len(rewards))):
        running = rewards[i] + gamma * (0.0 if terminals[i] else running)
        out[i] = running
    return out


class A2CLearner:
    name = "a2c"

    def __init__(self, env: AttackEnv, config: AgentConfig, width: int = 48):
        self.env = env
        self.config = config
        self.rng = np.random.default_rng(config.seed)
        n_s, n_a = env.observation_size(config.context_obs), env.n_actions
        self.policy = MLP([n_s, width, width, n_a], rng=self.rng)
        self.value = MLP([n_s, width, width, 1], rng=self.rng)
        self.policy_opt = Adam(self.policy.params, config.actor_lr, max_norm=config.grad_clip)
        self.value_opt = Adam(self.value.params, config.critic_lr, max_norm=config.grad_clip)
        self._rollout: list[tuple] = []

    def start_attempt(self) -> None:
        pass

    def act(self, obs, mask, progress: float) -> int:
        p = masked_softmax(self.policy.forward(obs)[0], mask)
        return int(self.rng.choice(len(p), p=p))

    def observe(self, obs, mask, action, outcome: StepOutcome, next_obs, next_mask) -> None:
        self._rollout.append((obs, mask, action, outcome.reward, outcome.success))
        if len(self._rollout) >= self.config.n_step or outcome.success or outcome.done:
            self.update(next_obs)

    def update(self, next_obs: np.ndarray) -> None:
        cfg = self.config
        obs, masks, actions, rewards, terms = map(np.array, zip(*self._rollout))
        self._rollout = []
        bootstrap = 0.0 if terms[-1] else float(self.value.forward(next_obs)[0, 0])
        returns = n_step_returns(cfg.shape_reward(rewards), terms, bootstrap, cfg.gamma)
        v = self.value.forward(obs)[:, 0]
        adv = returns - v
        n = len(returns)
        grads, _ = self.value.backward((2.0 * (v - returns) / n).reshape(-1, 1))
        self.value_opt.step(grads)
        probs = masked_softmax(self.policy.forward(obs), masks)
        grads, _ = self.policy.backward(policy_logit_grad(probs, actions, adv, cfg.entropy) / n)
        self.policy_opt.step(grads)

    def save(self, directory: str | Path) -> str:
        path = Path(directory) / f"a2c_seed{self.config.seed}.pfck"
        params = {f"policy.{k}": v for k, v in self.policy.params.items()}
        params.update({f"value.{k}": v for k, v in self.value.params.items()})
        save_params(path, params)
        return str(path)


def train_a2c(model: CyberspaceModel, config: AgentConfig, trace: TextIO | None = None,
              checkpoint_dir: str | Path | None = None) -> TrainingResult:
    env = AttackEnv(model, episode_limit=config.episode_limit)
    learner = A2CLearner(env, config)
    result = run_episodes(env, learner, config, trace)
    if checkpoint_dir is not None:
        result.checkpoint = learner.save(checkpoint_dir)
    return result
