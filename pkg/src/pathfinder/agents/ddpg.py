"""DDPG over discrete attack actions, with and without the action-selection module."""

from __future__ import annotations

from pathlib import Path
from typing import TextIO

import numpy as np

from ..env import AttackEnv, StepOutcome
from ..model import CyberspaceModel
from ..nn import Adam, CriticNet, PolicyNet, save_params, soft_update
from .common import (R_NEG, AgentConfig, ReplayMemory, TrainingResult, Transition, linear_schedule, one_hot,
                     run_episodes)


def masked_argmax(values: np.ndarray, mask: np.ndarray) -> int:
    """Index of the largest value among the allowed entries."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask has no feasible action")
    allowed = np.flatnonzero(mask)
    return int(allowed[np.argmax(np.asarray(values)[allowed])])


def select_action_iddpg(scores: np.ndarray, mask: np.ndarray, noise: float | np.ndarray = 0.0,
                        rng: np.random.Generator | None = None) -> tuple[int, int]:
    """Return (theory action, executed action).

    ``noise`` is either a Gaussian scale (needs ``rng``) or an explicit
    perturbation vector. The executed action is the best noisy score among
    feasible actions.
    """
    scores = np.asarray(scores, dtype=np.float64)
    mask = np.asarray(mask)
    if scores.shape != mask.shape:
        raise ValueError(f"scores {scores.shape} and mask {mask.shape} differ in shape")
    if not mask.any():
        raise ValueError("mask has no feasible action")
    if np.ndim(noise) == 0:
        if noise and rng is None:
            raise ValueError("a noise scale needs an rng")
        noisy = scores + rng.normal(0.0, noise, size=scores.shape) if noise else scores
    else:
        noisy = scores + np.asarray(noise)
    return int(np.argmax(noisy)), masked_argmax(noisy, mask)


def record_infeasible(memory: ReplayMemory, s_t: np.ndarray, a_t: int, mask: np.ndarray, **extras) -> int:
    """Store the augmented record for an infeasible theory action: reward R_NEG, next state s_t."""
    if mask[a_t]:
        raise ValueError(f"action {a_t} is feasible; only infeasible actions are recorded")
    t = Transition(s_t, one_hot(a_t, memory.n_actions)[0], R_NEG, s_t, terminal=False, penalty=True)
    for key in ("mask", "mask2"):
        if key in memory.extras:
            extras.setdefault(key, mask)
    return memory.push(t, **extras)


SCORE_FLOOR = 1e-12  # saturated sigmoids can reach exactly zero on every feasible entry


def module_output(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Action vector handed to the critic: masked scores rescaled to sum to one.

    The rescaling leaves the argmax alone and keeps the critic's input inside
    the convex hull of the one-hot actions it is trained on.
    """
    masked = np.maximum(scores, SCORE_FLOOR) * mask
    return masked / masked.sum(axis=-1, keepdims=True)


def module_backward(scores: np.ndarray, mask: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient of ``module_output`` pulled back onto the scores."""
    masked = np.maximum(scores, SCORE_FLOOR) * mask
    total = masked.sum(axis=-1, keepdims=True)
    p = masked / total
    return mask * (grad_out - (grad_out * p).sum(axis=-1, keepdims=True)) / total


def batch_masked_argmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, scores, -np.inf).argmax(axis=-1)


def centred_masked(grad: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Gradient restricted to the feasible entries, minus its mean over them."""
    mean = (grad * mask).sum(axis=-1, keepdims=True) / mask.sum(axis=-1, keepdims=True)
    return mask * (grad - mean)


class DDPGLearner:
    def __init__(self, env: AttackEnv, config: AgentConfig, masked: bool = True):
        self.env = env
        self.config = config
        self.masked = masked
        self.name = "iddpg" if masked else "ddpg"
        self.rng = np.random.default_rng(config.seed)
        n_s, n_a = env.observation_size(config.context_obs), env.n_actions
        self.n_actions = n_a
        self.actor = PolicyNet(n_s, n_a, self.rng)
        self.critic = CriticNet(n_s, n_a, self.rng)
        self.actor_target = self.actor.copy()
        self.critic_target = self.critic.copy()
        self.actor_opt = Adam(self.actor.params, config.actor_lr, max_norm=config.grad_clip)
        self.critic_opt = Adam(self.critic.params, config.critic_lr, max_norm=config.grad_clip)
        hidden = self.actor.hidden
        self.memory = ReplayMemory(config.capacity, n_s, n_a, extras={
            "h": hidden, "h2": hidden, "mask": (n_a, np.bool_), "mask2": (n_a, np.bool_)})
        self._all = np.ones(n_a, dtype=bool)
        self.h = self.actor.initial_hidden()
        self.steps = 0
        self.updates = 0
        self._pending: tuple[int, np.ndarray, np.ndarray] | None = None

    def start_attempt(self) -> None:
        self.h = self.actor.initial_hidden()

    def act(self, obs: np.ndarray, mask: np.ndarray, progress: float) -> int:
        scores, h_new = self.actor.forward(obs, self.h)
        sigma = linear_schedule(self.config.noise_start, self.config.noise_end, progress)
        scores = scores[0] + self.rng.normal(0.0, sigma, size=self.n_actions)
        theory = int(np.argmax(scores))
        executed = masked_argmax(scores, mask) if self.masked else theory
        self._pending = (theory, self.h, h_new[0])
        self.h = h_new[0]
        return executed

    def observe(self, obs, mask, action, outcome: StepOutcome, next_obs, next_mask) -> None:
        theory, h, h2 = self._pending
        t = Transition(obs, one_hot(action, self.n_actions)[0], outcome.reward, next_obs, terminal=outcome.success)
        if not self.masked:
            mask = next_mask = self._all
        self.memory.push(t, h=h, h2=h2, mask=mask, mask2=next_mask)
        if self.masked and self.config.augment and theory != action:
            record_infeasible(self.memory, obs, theory, mask, h=h, h2=h)
        self.steps += 1
        cfg = self.config
        if len(self.memory) >= max(cfg.warmup, cfg.batch_size) and self.steps % cfg.train_every == 0:
            self.update()

    def update(self) -> tuple[float, float]:
        cfg, mem = self.config, self.memory
        idx = mem.sample_indices(cfg.batch_size, self.rng)
        s, s2 = mem.s[idx].astype(np.float64), mem.s2[idx].astype(np.float64)
        a = one_hot(mem.a[idx], self.n_actions)
        r = cfg.shape_reward(mem.r[idx])
        stop = mem.terminal[idx] | mem.penalty[idx]
        ex = mem.extras
        h, h2, mask, mask2 = ex["h"][idx], ex["h2"][idx], ex["mask"][idx], ex["mask2"][idx]
        m = len(idx)

        onehot = cfg.critic_action != "soft"
        mu2, _ = self.actor_target.forward(s2, h2)
        a2 = one_hot(batch_masked_argmax(mu2, mask2), self.n_actions) if onehot else module_output(mu2, mask2)
        q2 = self.critic_target.q(s2, a2)
        y = r + cfg.gamma * np.where(stop, 0.0, q2)

        q = self.critic.q(s, a)
        critic_loss = float(np.mean((y - q) ** 2))
        grads, _ = self.critic.backward_q(2.0 * (q - y) / m)
        self.critic_opt.step(grads)

        mu, _ = self.actor.forward(s, h)
        if cfg.critic_action == "expected":
            # the critic extended linearly over the simplex: its slope along a_i is Q(s, e_i)
            rows, cols = np.nonzero(mask)
            q_all = np.zeros((m, self.n_actions))
            q_all[rows, cols] = self.critic.q(s[rows], one_hot(cols, self.n_actions))
            grad_scores = module_backward(mu, mask, -q_all / m)
            q_mu = (module_output(mu, mask) * q_all).sum(axis=1)
        elif onehot:
            # straight-through: the critic's slope at the executed action drives the feasible scores
            q_mu = self.critic.q(s, one_hot(batch_masked_argmax(mu, mask), self.n_actions))
            _, dq_da = self.critic.backward_q(np.full(m, -1.0 / m))
            grad_scores = centred_masked(dq_da, mask)
        else:
            q_mu = self.critic.q(s, module_output(mu, mask))
            _, dq_da = self.critic.backward_q(np.full(m, -1.0 / m))
            grad_scores = module_backward(mu, mask, dq_da)
        grad_logits = 2.0 * cfg.logit_l2 * self.actor.logits / m if cfg.logit_l2 else None
        self.actor_opt.step(self.actor.backward(grad_scores, grad_logits=grad_logits))

        soft_update(self.critic_target, self.critic, cfg.tau)
        soft_update(self.actor_target, self.actor, cfg.tau)
        self.updates += 1
        return critic_loss, float(q_mu.mean())

    def save(self, directory: str | Path) -> str:
        path = Path(directory) / f"{self.name}_seed{self.config.seed}.pfck"
        params = {f"actor.{k}": v for k, v in self.actor.params.items()}
        params.update({f"critic.{k}": v for k, v in self.critic.params.items()})
        save_params(path, params)
        return str(path)


def _train(model: CyberspaceModel, config: AgentConfig, masked: bool, trace: TextIO | None,
           checkpoint_dir: str | Path | None) -> TrainingResult:
    env = AttackEnv(model, episode_limit=config.episode_limit)
    learner = DDPGLearner(env, config, masked=masked)
    result = run_episodes(env, learner, config, trace)
    if checkpoint_dir is not None:
        result.checkpoint = learner.save(checkpoint_dir)
    return result


def train_iddpg(model: CyberspaceModel, config: AgentConfig, trace: TextIO | None = None,
                checkpoint_dir: str | Path | None = None) -> TrainingResult:
    return _train(model, config, True, trace, checkpoint_dir)


def train_ddpg(model: CyberspaceModel, config: AgentConfig, trace: TextIO | None = None,
               checkpoint_dir: str | Path | None = None) -> TrainingResult:
    return _train(model, config, False, trace, checkpoint_dir)
