"""Shared domain types, configuration schema and seeded random sources."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import numpy as np

# Slice and epoch identifiers are plain ints; validation happens at the
# boundaries that receive them (simulator, loop, recorder).
SliceId = int
EpochIndex = int

OBSERVATION_FIELDS = (
    "tb",
    "rt",
    "dl",
    "d_min_ms",
    "d_max_ms",
    "d_mean_ms",
    "phi_sla",
    "phi_meas",
    "lambda_ms",
)


class ConfigError(ValueError):
    pass


class InvalidActionError(ValueError):
    """An agent produced a PRB count outside the admissible range."""


@dataclass(frozen=True)
class SlaSpec:
    """Latency SLA of one slice: packets must beat ``lambda_ms`` with rate ``phi_sla``."""

    lambda_ms: float
    phi_sla: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lambda_ms) and self.lambda_ms > 0):
            raise ConfigError(f"lambda_ms must be > 0, got {self.lambda_ms}")
        if not (0.0 < self.phi_sla <= 1.0):
            raise ConfigError(f"phi_sla must be in (0, 1], got {self.phi_sla}")


@dataclass(frozen=True)
class Observation:
    """The nine-feature agent observation, in fixed order."""

    tb: float
    rt: float
    dl: float
    d_min_ms: float
    d_max_ms: float
    d_mean_ms: float
    phi_sla: float
    phi_meas: float
    lambda_ms: float

    def __post_init__(self) -> None:
        if not (self.d_min_ms <= self.d_mean_ms <= self.d_max_ms):
            # tolerate rounding of the mean
            if not (
                math.isclose(self.d_mean_ms, self.d_min_ms, rel_tol=1e-12)
                or math.isclose(self.d_mean_ms, self.d_max_ms, rel_tol=1e-12)
            ):
                raise ValueError(
                    f"latency stats out of order: min={self.d_min_ms} "
                    f"mean={self.d_mean_ms} max={self.d_max_ms}"
                )

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in OBSERVATION_FIELDS], dtype=np.float64)

    @classmethod
    def from_array(cls, values) -> "Observation":
        values = [float(v) for v in values]
        if len(values) != len(OBSERVATION_FIELDS):
            raise ValueError(f"expected {len(OBSERVATION_FIELDS)} values, got {len(values)}")
        return cls(*values)


@dataclass(frozen=True)
class Transition:
    state: Observation
    action: int
    reward: float
    next_state: Observation
    episode: int = 0
    epoch: EpochIndex = 0
    slice: SliceId = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.reward):
            raise ValueError("transition reward must be finite")
        if self.epoch < 0:
            raise ValueError("epoch index must be non-negative")


def action_bounds(capacity: int, n_slices: int) -> tuple[int, int]:
    """Inclusive PRB range for one slice, leaving at least one PRB per other slice."""
    hi = capacity - (n_slices - 1)
    if hi < 1:
        raise ConfigError(f"capacity {capacity} cannot serve {n_slices} slices")
    return 1, hi


def check_action(prbs: int, capacity: int, n_slices: int) -> int:
    lo, hi = action_bounds(capacity, n_slices)
    if isinstance(prbs, (bool, np.bool_)) or int(prbs) != prbs or not lo <= prbs <= hi:
        raise InvalidActionError(f"PRB count {prbs!r} outside [{lo}, {hi}]")
    return int(prbs)


# --------------------------------------------------------------------------
# random sources


def _name_key(name: str) -> int:
    return int.from_bytes(hashlib.sha256(name.encode("utf-8")).digest()[:8], "little")


def seeded_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed) & (2**64 - 1))))


def substream(name: str, seed: int, *extra: int) -> np.random.Generator:
    """Independent generator for component ``name``; equal inputs give equal streams."""
    entropy = [int(seed) & (2**64 - 1), _name_key(name), *[int(e) & (2**64 - 1) for e in extra]]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy)))


# --------------------------------------------------------------------------
# configuration


@dataclass
class SliceConfig:
    n_ues: int = 2
    bitrate_mbps: float = 1.5
    packet_bytes: int = 1500


@dataclass
class SimConfig:
    capacity: int = 50
    epoch_ms: int = 250
    backhaul_ms: float = 5.0
    eta_min: float = 0.5
    eta_max: float = 6.0
    eta_init_lo: float = 2.0
    eta_init_hi: float = 4.0
    sigma_eta: float = 0.1
    bits_per_prb_unit: float = 200.0
    slices: list[SliceConfig] = field(default_factory=lambda: [SliceConfig(), SliceConfig()])

    def __post_init__(self) -> None:
        if self.capacity < len(self.slices):
            raise ConfigError("capacity must be at least one PRB per slice")
        if not self.slices:
            raise ConfigError("at least one slice required")
        if not 0 < self.eta_min <= self.eta_max:
            raise ConfigError("need 0 < eta_min <= eta_max")
        if self.epoch_ms <= 0:
            raise ConfigError("epoch_ms must be positive")


@dataclass
class SlaConfig:
    """Per-slice SLA; ``lambda_range`` switches to per-episode uniform draws."""

    lambda_ms: float = 110.0
    phi_sla: float = 0.99
    lambda_range: Optional[tuple[float, float]] = None

    def __post_init__(self) -> None:
        if self.lambda_range is not None:
            lo, hi = self.lambda_range
            self.lambda_range = (float(lo), float(hi))
            if not 0 < lo < hi:
                raise ConfigError(f"lambda_range must satisfy 0 < lo < hi, got {self.lambda_range}")
        SlaSpec(self.lambda_ms, self.phi_sla)

    def draw(self, rng: np.random.Generator) -> SlaSpec:
        if self.lambda_range is None:
            return SlaSpec(self.lambda_ms, self.phi_sla)
        lo, hi = self.lambda_range
        return SlaSpec(float(rng.uniform(lo, hi)), self.phi_sla)


@dataclass
class PpoConfig:
    clip: float = 0.2
    gamma: float = 0.9
    gae_lambda: float = 0.95
    update_epochs: int = 8
    minibatch_size: int = 256
    rollout_episodes: int = 4
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    lr: float = 3e-4
    max_grad_norm: float = 0.5
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 < self.clip < 1:
            raise ConfigError("clip must be in (0, 1)")
        if not 0 < self.gamma <= 1:
            raise ConfigError("gamma must be in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigError("gae_lambda must be in [0, 1]")


@dataclass
class DqnConfig:
    gamma: float = 0.9
    lr: float = 5e-4
    batch_size: int = 64
    buffer_capacity: int = 20000
    target_sync: int = 250
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10000
    warmup: int = 500
    hidden: tuple[int, ...] = (64, 64)

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)


@dataclass
class QTableConfig:
    alpha: float = 0.1
    gamma: float = 0.9
    n_bins: int = 8
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_steps: int = 10000


@dataclass
class AgentConfig:
    reward_k: float = 20.0
    reward_indicator: str = "corrected"
    ppo: PpoConfig = field(default_factory=PpoConfig)
    dqn: DqnConfig = field(default_factory=DqnConfig)
    qtab: QTableConfig = field(default_factory=QTableConfig)

    def __post_init__(self) -> None:
        if self.reward_indicator not in ("as-written", "corrected"):
            raise ConfigError(f"unknown reward indicator {self.reward_indicator!r}")
        if self.reward_k <= 0:
            raise ConfigError("reward_k must be positive")


@dataclass
class LabConfig:
    """Top-level configuration; serialized as JSON."""

    sim: SimConfig = field(default_factory=SimConfig)
    slas: list[SlaConfig] = field(
        default_factory=lambda: [SlaConfig(110.0, 0.99), SlaConfig(50.0, 0.99)]
    )
    controlled: Optional[list[int]] = None
    episode_len: int = 100
    train_episodes: int = 300
    eval_every: int = 50
    eval_episodes: int = 10
    eval_lambdas: Optional[list[float]] = None
    seed: int = 0
    agent: AgentConfig = field(default_factory=AgentConfig)

    def __post_init__(self) -> None:
        if len(self.slas) != len(self.sim.slices):
            raise ConfigError(
                f"{len(self.slas)} SLA entries for {len(self.sim.slices)} slices"
            )
        if self.controlled is not None:
            for i in self.controlled:
                if not 0 <= i < len(self.sim.slices):
                    raise ConfigError(f"controlled slice {i} does not exist")
        if self.episode_len <= 0:
            raise ConfigError("episode_len must be positive")

    @property
    def controlled_slices(self) -> list[int]:
        if self.controlled is None:
            return list(range(len(self.sim.slices)))
        return list(self.controlled)


def _to_plain(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    return obj


_NESTED = {
    ("LabConfig", "sim"): SimConfig,
    ("LabConfig", "agent"): AgentConfig,
    ("AgentConfig", "ppo"): PpoConfig,
    ("AgentConfig", "dqn"): DqnConfig,
    ("AgentConfig", "qtab"): QTableConfig,
}
_NESTED_LISTS = {
    ("SimConfig", "slices"): SliceConfig,
    ("LabConfig", "slas"): SlaConfig,
}


def _from_plain(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"{cls.__name__}: expected an object, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        key = (cls.__name__, name)
        if key in _NESTED:
            value = _from_plain(_NESTED[key], value)
        elif key in _NESTED_LISTS:
            value = [_from_plain(_NESTED_LISTS[key], v) for v in value]
        elif name in ("hidden", "lambda_range") and value is not None:
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(config: LabConfig) -> dict:
    return _to_plain(config)


def config_from_dict(data: dict) -> LabConfig:
    return _from_plain(LabConfig, data)


def dumps_config(config: LabConfig) -> str:
    return json.dumps(config_to_dict(config), indent=2, sort_keys=True)


def loads_config(text: str) -> LabConfig:
    return config_from_dict(json.loads(text))


def load_config(path) -> LabConfig:
    return loads_config(Path(path).read_text(encoding="utf-8"))


def save_config(config: LabConfig, path) -> None:
    Path(path).write_text(dumps_config(config) + "\n", encoding="utf-8")
