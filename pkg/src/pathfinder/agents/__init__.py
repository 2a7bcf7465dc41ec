from .a2c import train_a2c
from .common import R_NEG, AgentConfig, ReplayMemory, TrainingResult, Transition, run_episodes
from .ddpg import DDPGLearner, masked_argmax, record_infeasible, select_action_iddpg, train_ddpg, train_iddpg
from .dqn import train_dqn

__all__ = [
    "R_NEG", "AgentConfig", "ReplayMemory", "TrainingResult", "Transition", "run_episodes",
    "DDPGLearner", "masked_argmax", "record_infeasible", "select_action_iddpg", "train_ddpg", "train_iddpg",
    "train_a2c", "train_dqn",
]
