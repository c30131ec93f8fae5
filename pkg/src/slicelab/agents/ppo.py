"""Clipped-surrogate PPO with a categorical PRB head and a separate critic."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..core import Observation, PpoConfig
from ..rlcore import Adam, DenseNet, PolicyParams, RunningNorm, log_softmax, mlp, softmax


def gae(rewards, values, next_values, dones, ends=None, gamma=0.99, lam=0.95):
    """Generalized advantage estimates and value targets.

    ``dones[t]`` marks a terminal successor (no bootstrap); ``ends[t]`` marks
    the last step of a stored segment, e.g. a time-limit truncation that still
    bootstraps from ``next_values[t]``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    next_values = np.asarray(next_values, dtype=np.float64)
    dones = np.asarray(dones, dtype=np.float64)
    ends = dones if ends is None else np.maximum(np.asarray(ends, dtype=np.float64), dones)
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        delta = rewards[t] + gamma * (1.0 - dones[t]) * next_values[t] - values[t]
        running = delta + gamma * lam * (1.0 - ends[t]) * running
        adv[t] = running
    return adv, adv + values


def surrogate_logit_grad(logits, actions, old_logp, adv, clip):
    """Clipped surrogate loss ``-mean(min(rho*A, clip(rho)*A))`` and its gradient w.r.t. logits."""
    logits = np.atleast_2d(logits)
    n = logits.shape[0]
    logp_all = log_softmax(logits)
    probs = np.exp(logp_all)
    idx = np.arange(n)
    logp = logp_all[idx, actions]
    rho = np.exp(logp - old_logp)
    unclipped = rho * adv
    clipped = np.clip(rho, 1.0 - clip, 1.0 + clip) * adv
    loss = -np.mean(np.minimum(unclipped, clipped))
    # the unclipped branch carries gradient only while rho is inside the trust region on the A side
    active = np.where(adv >= 0, rho <= 1.0 + clip, rho >= 1.0 - clip)
    coeff = -(rho * adv * active) / n
    onehot = np.zeros_like(logits)
    onehot[idx, actions] = 1.0
    grad = coeff[:, None] * (onehot - probs)
    return loss, grad, rho


@dataclass
class Rollout:
    obs: list = field(default_factory=list)  # normalised inputs
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    logps: list = field(default_factory=list)
    next_values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    ends: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.actions)

    def add(self, obs, action, reward, value, logp, next_value, done=False, end=False):
        self.obs.append(obs)
        self.actions.append(action)
        self.rewards.append(reward)
        self.values.append(value)
        self.logps.append(logp)
        self.next_values.append(next_value)
        self.dones.append(float(done))
        self.ends.append(float(end))


class PPOAgent:
    """Actor-critic with a categorical head over PRB counts ``1..n_actions``."""

    kind = "ppo"

    def __init__(self, n_actions: int, cfg: Optional[PpoConfig] = None, rng=None, obs_dim: int = 9):
        self.cfg = cfg or PpoConfig()
        self.n_actions = int(n_actions)
        self.obs_dim = obs_dim
        self.rng = np.random.default_rng(0) if rng is None else rng
        self.actor = mlp(obs_dim, self.cfg.hidden, n_actions, self.rng, out_scale=0.01)
        self.critic = mlp(obs_dim, self.cfg.hidden, 1, self.rng, out_scale=1.0)
        self.actor_opt = Adam(self.actor, lr=self.cfg.lr, max_grad_norm=self.cfg.max_grad_norm)
        self.critic_opt = Adam(self.critic, lr=self.cfg.lr, max_grad_norm=self.cfg.max_grad_norm)
        self.norm = RunningNorm(obs_dim)

    # -- acting -----------------------------------------------------------
    def preprocess(self, obs) -> np.ndarray:
        x = obs.as_array() if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64)
        return self.norm(x)

    def probs(self, obs) -> np.ndarray:
        return softmax(self.actor(self.preprocess(obs)))

    def act(self, obs, mode: str = "greedy") -> int:
        logits = self.actor(self.preprocess(obs))
        return select_action(logits, mode, self.rng) + 1

    def sample(self, x_norm: np.ndarray):
        """Behaviour-policy step on a normalised input: ``(index, logp, value)``."""
        logits = self.actor(x_norm)
        logp_all = log_softmax(logits)
        a = int(self.rng.choice(self.n_actions, p=np.exp(logp_all)))
        v = float(self.critic(x_norm)[0])
        return a, float(logp_all[a]), v

    def value(self, x_norm: np.ndarray) -> float:
        return float(self.critic(x_norm)[0])

    # -- learning ---------------------------------------------------------
    def update(self, rollout: Rollout) -> dict:
        return ppo_update(self, rollout, self.cfg)

    def params(self) -> PolicyParams:
        return PolicyParams(
            {
                "kind": self.kind,
                "n_actions": self.n_actions,
                "obs_dim": self.obs_dim,
                "actor": self.actor.descriptor(),
                "critic": self.critic.descriptor(),
            },
            {
                "actor": self.actor.get_flat(),
                "critic": self.critic.get_flat(),
                "norm_mean": self.norm.mean,
                "norm_var": self.norm.var,
                "norm_count": np.array([self.norm.count]),
            },
        )

    @classmethod
    def from_params(cls, p: PolicyParams, cfg: Optional[PpoConfig] = None, rng=None) -> "PPOAgent":
        d = p.descriptor
        cfg = cfg or PpoConfig(hidden=tuple(d["actor"]["sizes"][1:-1]))
        agent = cls(d["n_actions"], cfg, rng, obs_dim=d["obs_dim"])
        agent.actor = DenseNet.from_descriptor(d["actor"], p.blocks["actor"])
        agent.critic = DenseNet.from_descriptor(d["critic"], p.blocks["critic"])
        agent.actor_opt.net = agent.actor
        agent.critic_opt.net = agent.critic
        agent.norm.load_state_dict(
            {"mean": p.blocks["norm_mean"], "var": p.blocks["norm_var"], "count": p.blocks["norm_count"]}
        )
        agent.norm.frozen = True
        return agent


def select_action(values: np.ndarray, mode: str, rng) -> int:
    """Index from a score vector; greedy ties go to the lowest index (fewest PRBs)."""
    if mode == "greedy":
        return int(np.argmax(values))  # argmax returns the first maximum
    if mode == "sample":
        p = softmax(values)
        return int(rng.choice(len(p), p=p))
    raise ValueError(f"unknown mode {mode!r}")


def ppo_update(agent: PPOAgent, rollout: Rollout, cfg: PpoConfig) -> dict:
    if len(rollout) == 0:
        raise ValueError("empty PPO batch")
    obs = np.asarray(rollout.obs, dtype=np.float64)
    actions = np.asarray(rollout.actions, dtype=np.int64)
    old_logp = np.asarray(rollout.logps, dtype=np.float64)
    values = np.asarray(rollout.values, dtype=np.float64)
    adv, returns = gae(
        rollout.rewards, values, rollout.next_values, rollout.dones, rollout.ends,
        gamma=cfg.gamma, lam=cfg.gae_lambda,
    )
    if not np.all(np.isfinite(adv)):
        raise ValueError("non-finite advantage")
    if len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)

    n = len(actions)
    mb = min(cfg.minibatch_size, n)
    stats = {"actor_loss": 0.0, "critic_loss": 0.0, "entropy": 0.0, "clip_frac": 0.0, "approx_kl": 0.0}
    count = 0
    for _ in range(cfg.update_epochs):
        perm = agent.rng.permutation(n)
        for start in range(0, n, mb):
            idx = perm[start : start + mb]
            b = len(idx)
            logits, cache = agent.actor.forward_with_cache(obs[idx])
            loss, g_logits, rho = surrogate_logit_grad(
                logits, actions[idx], old_logp[idx], adv[idx], cfg.clip
            )
            logp_all = log_softmax(logits)
            probs = np.exp(logp_all)
            ent = -(probs * logp_all).sum(axis=1)
            # minimising -c * mean(H): dH/dz_j = -p_j (log p_j + H)
            g_logits = g_logits + cfg.entropy_coef / b * probs * (logp_all + ent[:, None])
            agent.actor_opt.step(agent.actor.backward_cached(cache, g_logits))

            v, vcache = agent.critic.forward_with_cache(obs[idx])
            err = v[:, 0] - returns[idx]
            g_v = (2.0 * cfg.value_coef / b) * err[:, None]
            agent.critic_opt.step(agent.critic.backward_cached(vcache, g_v))

            stats["actor_loss"] += loss
            stats["critic_loss"] += float(cfg.value_coef * np.mean(err**2))
            stats["entropy"] += float(ent.mean())
            stats["clip_frac"] += float(np.mean(np.abs(rho - 1.0) > cfg.clip))
            stats["approx_kl"] += float(np.mean(old_logp[idx] - logp_all[np.arange(b), actions[idx]]))
            count += 1
    return {k: v / count for k, v in stats.items()}
