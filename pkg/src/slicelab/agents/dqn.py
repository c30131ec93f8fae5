"""DQN baseline: replay buffer, hard-synced target network, linear epsilon-greedy."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..core import DqnConfig, Observation
from ..rlcore import Adam, DenseNet, PolicyParams, RunningNorm, mlp
from .ppo import select_action


class InsufficientDataError(ValueError):
    pass


class ReplayBuffer:
    """Ring buffer of ``(s, a, r, s', done)`` with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int = 9):
        self.capacity = int(capacity)
        self.s = np.zeros((capacity, obs_dim))
        self.a = np.zeros(capacity, dtype=np.int64)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, obs_dim))
        self.done = np.zeros(capacity)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, s, a, r, s2, done=False) -> None:
        i = self._next
        self.s[i], self.a[i], self.r[i], self.s2[i], self.done[i] = s, a, r, s2, float(done)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch: int, rng):
        if self._size < batch:
            raise InsufficientDataError(f"buffer holds {self._size} < batch {batch}")
        idx = rng.integers(0, self._size, size=batch)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]


def linear_epsilon(step: int, start: float, end: float, decay_steps: int) -> float:
    if decay_steps <= 0:
        return end
    if step >= decay_steps:
        return end
    return start + (step / decay_steps) * (end - start)


def dqn_update(buffer: ReplayBuffer, online: DenseNet, target: DenseNet, gamma: float,
               batch: int, opt: Adam, rng, transform=None) -> float:
    """One TD(0) regression step towards ``r + gamma * max_a' Q_target(s', a')``."""
    s, a, r, s2, done = buffer.sample(batch, rng)
    if transform is not None:
        s, s2 = transform(s), transform(s2)
    q_next = target(s2).max(axis=1)
    y = r + gamma * (1.0 - done) * q_next
    q, cache = online.forward_with_cache(s)
    idx = np.arange(batch)
    err = q[idx, a] - y
    g = np.zeros_like(q)
    g[idx, a] = 2.0 * err / batch
    opt.step(online.backward_cached(cache, g))
    return float(np.mean(err**2))


class DQNAgent:
    kind = "dqn"

    def __init__(self, n_actions: int, cfg: Optional[DqnConfig] = None, rng=None, obs_dim: int = 9):
        self.cfg = cfg or DqnConfig()
        self.n_actions = int(n_actions)
        self.obs_dim = obs_dim
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.online = mlp(obs_dim, self.cfg.hidden, n_actions, self.rng, out_scale=0.01)
        self.target = self.online.copy()
        self.opt = Adam(self.online, lr=self.cfg.lr, max_grad_norm=10.0)
        self.buffer = ReplayBuffer(self.cfg.buffer_capacity, obs_dim)
        self.norm = RunningNorm(obs_dim)
        self.steps = 0
        self.updates = 0

    def preprocess(self, obs) -> np.ndarray:
        x = obs.as_array() if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64)
        return self.norm(x)

    @property
    def epsilon(self) -> float:
        c = self.cfg
        return linear_epsilon(self.steps, c.eps_start, c.eps_end, c.eps_decay_steps)

    def act(self, obs, mode: str = "greedy") -> int:
        q = self.online(self.preprocess(obs))
        if mode == "sample" and self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.n_actions)) + 1
        return select_action(q, "greedy", self.rng) + 1

    def observe(self, s: np.ndarray, a_index: int, r: float, s2: np.ndarray, done=False) -> Optional[float]:
        """Store a raw transition and run one learning step once warm."""
        self.buffer.add(s, a_index, r, s2, done)
        self.steps += 1
        if self.steps <= self.cfg.warmup:
            self.norm.update(s)
            return None
        self.norm.frozen = True
        if len(self.buffer) < self.cfg.batch_size:
            return None
        loss = dqn_update(self.buffer, self.online, self.target, self.cfg.gamma,
                          self.cfg.batch_size, self.opt, self.rng, transform=self.norm)
        self.updates += 1
        if self.updates % self.cfg.target_sync == 0:
            self.sync_target()
        return loss

    def sync_target(self) -> None:
        self.target = self.online.copy()

    def params(self) -> PolicyParams:
        return PolicyParams(
            {"kind": self.kind, "n_actions": self.n_actions, "obs_dim": self.obs_dim,
             "online": self.online.descriptor()},
            {"online": self.online.get_flat(), "norm_mean": self.norm.mean,
             "norm_var": self.norm.var, "norm_count": np.array([self.norm.count])},
        )

    @classmethod
    def from_params(cls, p: PolicyParams, cfg=None, rng=None) -> "DQNAgent":
        d = p.descriptor
        cfg = cfg or DqnConfig(hidden=tuple(d["online"]["sizes"][1:-1]))
        agent = cls(d["n_actions"], cfg, rng, obs_dim=d["obs_dim"])
        agent.online = DenseNet.from_descriptor(d["online"], p.blocks["online"])
        agent.target = agent.online.copy()
        agent.opt.net = agent.online
        agent.norm.load_state_dict(
            {"mean": p.blocks["norm_mean"], "var": p.blocks["norm_var"], "count": p.blocks["norm_count"]}
        )
        agent.norm.frozen = True
        return agent
