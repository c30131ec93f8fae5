"""Latency-SLA network slicing lab: packet-level RAN simulator, KPM pipeline,
numpy reinforcement-learning agents and an E2/A1-style closed control loop."""

from .core import (
    LabConfig,
    Observation,
    SimConfig,
    SlaConfig,
    SlaSpec,
    SliceConfig,
    Transition,
    load_config,
    save_config,
    seeded_rng,
    substream,
)
from .env import SlicingEnv
from .ransim import RanSimulator

__version__ = "0.1.0"

__all__ = [
    "LabConfig", "Observation", "RanSimulator", "SimConfig", "SlaConfig", "SlaSpec", "SliceConfig",
    "SlicingEnv", "Transition", "load_config", "save_config", "seeded_rng", "substream",
]
