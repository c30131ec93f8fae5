"""Constant-allocation reference policies."""

from __future__ import annotations

from ..rlcore import PolicyParams


class ConstantAgent:
    """Always requests the same PRB count."""

    kind = "const"

    def __init__(self, prbs: int):
        self.prbs = int(prbs)

    def act(self, obs, mode: str = "greedy") -> int:
        return self.prbs

    def params(self) -> PolicyParams:
        return PolicyParams({"kind": self.kind, "prbs": self.prbs}, {})

    @classmethod
    def from_params(cls, p: PolicyParams, cfg=None, rng=None) -> "ConstantAgent":
        return cls(p.descriptor["prbs"])
