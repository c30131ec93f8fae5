"""Tabular Q-learning over uniformly binned observations."""

from __future__ import annotations

import json
from typing import Optional

import numpy as np

from ..core import Observation, QTableConfig, Transition
from ..rlcore import PolicyParams
from .dqn import linear_epsilon


def uniform_edges(lo, hi, n_bins: int) -> list[np.ndarray]:
    """Interior bin edges per feature; constant features collapse to one bin."""
    edges = []
    for a, b in zip(np.asarray(lo, float), np.asarray(hi, float)):
        if b > a:
            edges.append(np.linspace(a, b, n_bins + 1)[1:-1])
        else:
            edges.append(np.array([]))
    return edges


def discretize(x: np.ndarray, edges: list[np.ndarray]) -> tuple[int, ...]:
    return tuple(int(np.searchsorted(e, v, side="right")) for e, v in zip(edges, x))


class QTable:
    def __init__(self, n_actions: int, edges: list[np.ndarray]):
        self.n_actions = int(n_actions)
        self.edges = [np.asarray(e, dtype=np.float64) for e in edges]
        self.values: dict[tuple[int, ...], np.ndarray] = {}

    @classmethod
    def from_range(cls, n_actions: int, lo, hi, n_bins: int = 8) -> "QTable":
        return cls(n_actions, uniform_edges(lo, hi, n_bins))

    def key(self, obs) -> tuple[int, ...]:
        x = obs.as_array() if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64)
        return discretize(x, self.edges)

    def row(self, obs) -> np.ndarray:
        """Action values for ``obs``; unseen states read as zeros."""
        return self.values.get(self.key(obs), np.zeros(self.n_actions))

    def get(self, obs, a_index: int) -> float:
        return float(self.row(obs)[a_index])

    def _row_mut(self, key) -> np.ndarray:
        row = self.values.get(key)
        if row is None:
            row = self.values[key] = np.zeros(self.n_actions)
        return row


def qlearning_update(table: QTable, t: Transition, alpha: float, gamma: float, done: bool = False) -> None:
    """Q(s,a) += alpha * (r + gamma * max_a' Q(s',a') - Q(s,a)); ``t.action`` is a PRB count."""
    if alpha == 0.0:
        return
    a = t.action - 1
    future = 0.0 if done else float(np.max(table.row(t.next_state)))
    row = table._row_mut(table.key(t.state))
    row[a] += alpha * (t.reward + gamma * future - row[a])


class QLearningAgent:
    kind = "qtab"

    def __init__(self, n_actions: int, cfg: Optional[QTableConfig] = None, rng=None, table: Optional[QTable] = None):
        self.cfg = cfg or QTableConfig()
        self.n_actions = int(n_actions)
        self.rng = np.random.default_rng(0) if rng is None else rng
        if table is not None and table.n_actions != self.n_actions:
            raise ValueError(f"table has {table.n_actions} actions, agent {self.n_actions}")
        self.table = table
        self.steps = 0

    def calibrate(self, observations) -> None:
        arr = np.array([o.as_array() if isinstance(o, Observation) else o for o in observations])
        self.table = QTable.from_range(self.n_actions, arr.min(axis=0), arr.max(axis=0), self.cfg.n_bins)

    @property
    def epsilon(self) -> float:
        c = self.cfg
        return linear_epsilon(self.steps, c.eps_start, c.eps_end, c.eps_decay_steps)

    def act(self, obs, mode: str = "greedy") -> int:
        if mode == "sample" and self.rng.random() < self.epsilon:
            return int(self.rng.integers(self.n_actions)) + 1
        return int(np.argmax(self.table.row(obs))) + 1

    def observe(self, t: Transition, done: bool = False) -> None:
        qlearning_update(self.table, t, self.cfg.alpha, self.cfg.gamma, done)
        self.steps += 1

    def params(self) -> PolicyParams:
        keys = sorted(self.table.values)
        flat_keys = np.array([k for key in keys for k in key], dtype=np.float64)
        vals = np.concatenate([self.table.values[k] for k in keys]) if keys else np.zeros(0)
        edges = [e.tolist() for e in self.table.edges]
        return PolicyParams(
            {"kind": self.kind, "n_actions": self.n_actions, "edges": json.loads(json.dumps(edges)),
             "n_keys": len(keys), "key_len": len(self.table.edges)},
            {"keys": flat_keys, "values": vals},
        )

    @classmethod
    def from_params(cls, p: PolicyParams, cfg=None, rng=None) -> "QLearningAgent":
        d = p.descriptor
        table = QTable(d["n_actions"], [np.array(e) for e in d["edges"]])
        keys = p.blocks["keys"].astype(np.int64).reshape(d["n_keys"], d["key_len"]) if d["n_keys"] else []
        vals = p.blocks["values"].reshape(d["n_keys"], d["n_actions"]) if d["n_keys"] else []
        for k, v in zip(keys, vals):
            table.values[tuple(int(i) for i in k)] = v.copy()
        return cls(d["n_actions"], cfg, rng, table)
