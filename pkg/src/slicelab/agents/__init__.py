"""Slicing agents: PPO, DQN, tabular Q-learning, constant policies and the offline sampler."""

from .dqn import DQNAgent, ReplayBuffer, dqn_update, linear_epsilon
from .fixed import ConstantAgent
from .offline import OfflineIndex, sample_offline_transition, train_ppo_offline
from .ppo import PPOAgent, Rollout, gae, ppo_update, select_action, surrogate_logit_grad
from .qlearning import QLearningAgent, QTable, qlearning_update
from .reward import reward
from ..rlcore import PolicyParams

_KINDS = {"ppo": PPOAgent, "dqn": DQNAgent, "qtab": QLearningAgent, "const": ConstantAgent}


def save_agent(agent, path) -> None:
    agent.params().save(path)


def load_agent(path, rng=None):
    p = PolicyParams.load(path)
    kind = p.descriptor.get("kind")
    if kind not in _KINDS:
        raise ValueError(f"{path}: unknown agent kind {kind!r}")
    return _KINDS[kind].from_params(p, rng=rng)


__all__ = [
    "ConstantAgent", "DQNAgent", "OfflineIndex", "PPOAgent", "QLearningAgent", "QTable",
    "ReplayBuffer", "Rollout", "dqn_update", "gae", "linear_epsilon", "load_agent",
    "ppo_update", "qlearning_update", "reward", "sample_offline_transition", "save_agent",
    "select_action", "surrogate_logit_grad", "train_ppo_offline",
]
