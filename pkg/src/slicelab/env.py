"""Episodic environment over the simulator, used for training and evaluation.

``reset`` runs epoch 0 under an even split and returns its observations.
``step(actions)`` applies the actions to the next epoch and returns that
epoch's observations, so an action chosen after seeing epoch ``n`` is only
felt in epoch ``n + 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .agents.reward import reward as slice_reward
from .core import LabConfig, Observation, SlaSpec, check_action
from .kpm import build_observation, window_from_report
from .ransim import RanSimulator, fill_allocation, joint_allocation


@dataclass
class StepInfo:
    allocation: dict[int, int]
    conformance: dict[int, float]
    violated: dict[int, bool]


class SlicingEnv:
    def __init__(self, lab: LabConfig):
        self.lab = lab
        self.sim = RanSimulator(lab.sim, seed=lab.seed)
        self.controlled = lab.controlled_slices
        self.n_slices = len(lab.sim.slices)
        self.capacity = lab.sim.capacity
        self.slas: dict[int, SlaSpec] = {}
        self.epoch = 0

    def initial_allocation(self) -> dict[int, int]:
        return fill_allocation({}, self.capacity, self.n_slices)

    def reset(self, seed: int, slas: Mapping[int, SlaSpec]) -> dict[int, Observation]:
        self.sim.reset(seed)
        self.slas = dict(slas)
        self.epoch = 0
        reports = self.sim.step_epoch(self.initial_allocation())
        return self._observe(reports)

    def _observe(self, reports) -> dict[int, Observation]:
        return {
            s: build_observation(window_from_report(reports[s], self.epoch), self.slas[s])
            for s in range(self.n_slices)
        }

    def step(self, actions: Mapping[int, int]):
        for s, a in actions.items():
            check_action(a, self.capacity, self.n_slices)
        alloc = fill_allocation(joint_allocation(actions, self.capacity), self.capacity, self.n_slices)
        reports = self.sim.step_epoch(alloc)
        self.epoch += 1
        obs = self._observe(reports)
        k, mode = self.lab.agent.reward_k, self.lab.agent.reward_indicator
        rewards, conf, violated = {}, {}, {}
        for s in actions:
            o = obs[s]
            rewards[s] = slice_reward(o.phi_sla, o.phi_meas, alloc[s], self.capacity, k, mode)
            conf[s] = o.phi_meas
            violated[s] = o.phi_meas < o.phi_sla
        return obs, rewards, StepInfo(alloc, conf, violated)
