"""Offline transition model: successors drawn from recorded (state, action) matches."""

from __future__ import annotations

from collections import defaultdict
from typing import Optional, Sequence

import numpy as np

from ..core import Observation, Transition
from .qlearning import discretize, uniform_edges


class MissingActionError(LookupError):
    pass


class OfflineIndex:
    """Dataset indexed by (bucketed state, action).

    Buckets are ``n_bins`` uniform bins per feature over the dataset min-max.
    """

    def __init__(self, transitions: Sequence[Transition], n_bins: int = 8):
        if not transitions:
            raise ValueError("empty dataset")
        self.transitions = list(transitions)
        self.states = np.array([t.state.as_array() for t in self.transitions])
        self.lo = self.states.min(axis=0)
        self.hi = self.states.max(axis=0)
        span = self.hi - self.lo
        self.span = np.where(span > 0, span, 1.0)
        self.edges = uniform_edges(self.lo, self.hi, n_bins)
        self.by_bucket: dict[tuple, list[int]] = defaultdict(list)
        self.by_action: dict[int, list[int]] = defaultdict(list)
        for i, t in enumerate(self.transitions):
            self.by_bucket[(self.bucket(self.states[i]), t.action)].append(i)
            self.by_action[t.action].append(i)
        self._action_states = {a: self.scaled(self.states[idx]) for a, idx in self.by_action.items()}

    def bucket(self, x: np.ndarray) -> tuple[int, ...]:
        return discretize(x, self.edges)

    def scaled(self, x: np.ndarray) -> np.ndarray:
        return (x - self.lo) / self.span

    @property
    def actions(self) -> list[int]:
        return sorted(self.by_action)

    def candidates(self, state: Observation, action: int) -> list[int]:
        """Indices eligible for ``(state, action)``: the bucket, else the nearest same-action row."""
        if action not in self.by_action:
            raise MissingActionError(f"dataset has no row with action {action}")
        x = state.as_array()
        hits = self.by_bucket.get((self.bucket(x), action))
        if hits:
            return hits
        d = np.linalg.norm(self._action_states[action] - self.scaled(x), axis=1)
        return [self.by_action[action][int(np.argmin(d))]]


def sample_offline_transition(index: OfflineIndex, state: Observation, action: int, rng) -> Transition:
    """Draw ``(r, s')`` uniformly among recorded instances of ``action`` in ``state``'s bucket."""
    cands = index.candidates(state, action)
    t = index.transitions[cands[int(rng.integers(len(cands)))]]
    return Transition(state, action, t.reward, t.next_state, t.episode, t.epoch, t.slice)


def nearest_action(index: OfflineIndex, action: int) -> int:
    acts = np.array(index.actions)
    return int(acts[np.argmin(np.abs(acts - action))])


def train_ppo_offline(agent, index: OfflineIndex, episodes: int, episode_len: int, rng,
                      callback=None) -> list[dict]:
    """Train ``agent`` (a PPOAgent) on the sampled model; returns per-episode stats.

    Actions absent from the dataset are replaced by the nearest recorded PRB count.
    """
    from .ppo import Rollout

    history = []
    rollout = Rollout()
    for ep in range(episodes):
        state = index.transitions[int(rng.integers(len(index.transitions)))].state
        rewards, prbs = [], []
        raw = []
        for n in range(episode_len):
            raw.append(state.as_array())
            x = agent.norm(state.as_array())
            a_idx, logp, v = agent.sample(x)
            prb = nearest_action(index, a_idx + 1)
            t = sample_offline_transition(index, state, prb, rng)
            nv = agent.value(agent.norm(t.next_state.as_array()))
            rollout.add(x, a_idx, t.reward, v, logp, nv, done=False, end=(n == episode_len - 1))
            rewards.append(t.reward)
            prbs.append(prb)
            state = t.next_state
        agent.norm.update(np.array(raw))
        stats = {"episode": ep, "mean_reward": float(np.mean(rewards)), "mean_prbs": float(np.mean(prbs))}
        if (ep + 1) % agent.cfg.rollout_episodes == 0:
            stats.update(agent.update(rollout))
            rollout = Rollout()
        history.append(stats)
        if callback is not None:
            callback(stats)
    return history
