"""Packet-level emulator of one multi-slice base station.

Time advances in 1 ms TTIs. Each slice owns a PRB budget for the whole
decision epoch; inside a slice the budget is shared among backlogged UEs by
water-filling (the fluid limit of PRB round-robin), so a slice's PRBs only
idle when all its queues are empty. Clock values are integer microseconds.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

from .core import SimConfig, SliceId, substream

TTI_US = 1000


class AllocationError(ValueError):
    """The requested slicing exceeds the cell capacity or is malformed."""


@dataclass(frozen=True, slots=True)
class PacketRecord:
    slice: SliceId
    arrival_us: int
    departure_us: int
    size_bits: int
    backhaul_ms: float = 0.0
    ue: int = 0

    @property
    def latency_ms(self) -> float:
        return (self.departure_us - self.arrival_us) / 1000.0 + self.backhaul_ms


@dataclass
class EpochReport:
    slice: SliceId
    delivered: list[PacketRecord]
    tb_count: int
    prbs_requested: int
    prbs_granted: int
    bits_delivered: int
    prbs_allocated: int = 0
    bits_served: int = 0
    bits_generated: int = 0
    epoch_ms: int = 250

    @property
    def latencies_ms(self) -> list[float]:
        return [p.latency_ms for p in self.delivered]


@dataclass
class UeState:
    slice: SliceId
    bitrate_mbps: float
    efficiency: float
    packet_bits: int
    phase_us: int
    queue: deque = field(default_factory=deque)  # [arrival_us, remaining_bits, size_bits]
    backlog_bits: int = 0
    n_generated: int = 0

    @property
    def bitrate_bps(self) -> int:
        return int(round(self.bitrate_mbps * 1e6))

    def arrival_time(self, k: int) -> int:
        # exact integer CBR schedule: phase + floor(k * size / rate)
        return self.phase_us + (k * self.packet_bits * 1_000_000) // self.bitrate_bps


def evolve_efficiency(
    eta: np.ndarray, sigma: float, lo: float, hi: float, rng: np.random.Generator
) -> np.ndarray:
    """One step of the clamped Gaussian random walk of spectral efficiency."""
    if sigma == 0.0:
        return eta.copy()
    return np.clip(eta + rng.normal(0.0, sigma, size=eta.shape), lo, hi)


def water_fill(needs: list[float], budget: float) -> float:
    """PRB level L with sum(min(need, L)) == budget; ``inf`` if everything fits."""
    total = sum(needs)
    if total <= budget:
        return math.inf
    remaining = budget
    order = sorted(needs)
    m = len(order)
    for idx, need in enumerate(order):
        share = remaining / (m - idx)
        if need >= share:
            return share
        remaining -= need
    return math.inf  # pragma: no cover - unreachable when total > budget


def fill_allocation(partial: Mapping[SliceId, int], capacity: int, n_slices: int) -> dict[SliceId, int]:
    """Complete a partial slicing: leftover PRBs split evenly over the other slices.

    The remainder of the integer split goes to the lowest slice ids.
    """
    alloc = {int(k): int(v) for k, v in partial.items()}
    for s in alloc:
        if not 0 <= s < n_slices:
            raise AllocationError(f"unknown slice {s}")
    used = sum(alloc.values())
    if used > capacity:
        raise AllocationError(f"allocation {used} PRBs exceeds capacity {capacity}")
    others = [s for s in range(n_slices) if s not in alloc]
    if others:
        left = capacity - used
        base, extra = divmod(left, len(others))
        for rank, s in enumerate(others):
            alloc[s] = base + (1 if rank < extra else 0)
    return alloc


def joint_allocation(requests: Mapping[SliceId, int], capacity: int) -> dict[SliceId, int]:
    """Scale simultaneous per-slice requests down proportionally when they exceed ``capacity``."""
    total = sum(requests.values())
    if total <= capacity:
        return dict(requests)
    scale = capacity / total
    return {s: max(1, int(math.floor(a * scale))) for s, a in requests.items()}


class RanSimulator:
    """One base station with ``len(config.slices)`` slices.

    Two seeded substreams are used: ``traffic`` (UE phases and initial
    efficiency) and ``channel`` (the per-epoch efficiency walk). Neither depends
    on the slicing decisions, so runs with different actions see identical
    traffic and channel realisations.
    """

    def __init__(self, config: SimConfig, seed: int = 0):
        self.config = config
        self.reset(seed)

    @property
    def n_slices(self) -> int:
        return len(self.config.slices)

    @property
    def capacity(self) -> int:
        return self.config.capacity

    def reset(self, seed: int) -> None:
        cfg = self.config
        self.seed = int(seed)
        self.clock_us = 0
        self.epoch = 0
        traffic_rng = substream("traffic", seed)
        self._channel_rng = substream("channel", seed)
        self.ues: list[UeState] = []
        for s, sc in enumerate(cfg.slices):
            packet_bits = sc.packet_bytes * 8
            interarrival = packet_bits * 1_000_000 // int(round(sc.bitrate_mbps * 1e6))
            for _ in range(sc.n_ues):
                eta = float(traffic_rng.uniform(cfg.eta_init_lo, cfg.eta_init_hi))
                eta = min(max(eta, cfg.eta_min), cfg.eta_max)
                phase = int(traffic_rng.integers(0, max(interarrival, 1)))
                self.ues.append(UeState(s, sc.bitrate_mbps, eta, packet_bits, phase))
        self._by_slice: list[list[UeState]] = [
            [u for u in self.ues if u.slice == s] for s in range(self.n_slices)
        ]
        self._ids_by_slice = [
            [i for i, u in enumerate(self.ues) if u.slice == s] for s in range(self.n_slices)
        ]
        self.generated_bits = [0] * self.n_slices
        self.served_bits = [0] * self.n_slices
        self.delivered_bits = [0] * self.n_slices

    # -- channel ---------------------------------------------------------
    def efficiencies(self) -> np.ndarray:
        return np.array([u.efficiency for u in self.ues], dtype=np.float64)

    def evolve_channel(self) -> None:
        cfg = self.config
        eta = evolve_efficiency(
            self.efficiencies(), cfg.sigma_eta, cfg.eta_min, cfg.eta_max, self._channel_rng
        )
        for u, e in zip(self.ues, eta):
            u.efficiency = float(e)

    # -- queues ----------------------------------------------------------
    def backlog_bits(self, slice_id: Optional[SliceId] = None) -> int:
        ues = self.ues if slice_id is None else self._by_slice[slice_id]
        return sum(u.backlog_bits for u in ues)

    def step_epoch(
        self, slicing: Mapping[SliceId, int], epoch_len_ms: Optional[int] = None
    ) -> dict[SliceId, EpochReport]:
        """Advance the clock by one decision epoch under ``slicing``."""
        epoch_ms = self.config.epoch_ms if epoch_len_ms is None else int(epoch_len_ms)
        if epoch_ms <= 0:
            raise AllocationError("epoch length must be positive")
        for s, a in slicing.items():
            if int(a) != a or a < 0:
                raise AllocationError(f"slice {s}: PRB count must be a non-negative integer, got {a!r}")
        alloc = fill_allocation(slicing, self.capacity, self.n_slices)
        start = self.clock_us
        end = start + epoch_ms * 1000
        reports = {
            s: self._run_slice(s, alloc[s], start, end, epoch_ms) for s in range(self.n_slices)
        }
        self.clock_us = end
        self.epoch += 1
        self.evolve_channel()
        return reports

    def _run_slice(self, s: int, prbs: int, start: int, end: int, epoch_ms: int) -> EpochReport:
        cfg = self.config
        ues = self._by_slice[s]
        unit = cfg.bits_per_prb_unit
        backhaul = cfg.backhaul_ms
        capacity = cfg.capacity
        delivered: list[PacketRecord] = []
        tb = requested = granted = served_total = delivered_bits = generated = 0
        bpp = [unit * u.efficiency for u in ues]
        ue_ids = self._ids_by_slice[s]

        t = start
        while t < end:
            # admit everything that arrived by the start of this TTI
            next_arrival = end
            for u in ues:
                k = u.n_generated
                arr = u.arrival_time(k)
                while arr <= t:
                    u.queue.append([arr, u.packet_bits, u.packet_bits])
                    u.backlog_bits += u.packet_bits
                    generated += u.packet_bits
                    k += 1
                    arr = u.arrival_time(k)
                u.n_generated = k
                if arr < next_arrival:
                    next_arrival = arr
            busy = [i for i, u in enumerate(ues) if u.backlog_bits > 0]
            if not busy:
                # idle until the next TTI boundary at or after the next arrival
                if next_arrival >= end:
                    break
                t = start + -(-(next_arrival - start) // TTI_US) * TTI_US
                continue
            needs = [ues[i].backlog_bits / bpp[i] for i in busy]
            req = min(capacity, math.ceil(sum(needs)))
            requested += req
            granted += min(prbs, req)
            if prbs > 0:
                level = water_fill(needs, float(prbs))
                done_at = t + TTI_US
                for i, need in zip(busy, needs):
                    u = ues[i]
                    if need <= level:
                        budget = u.backlog_bits
                    else:
                        budget = min(u.backlog_bits, int(level * bpp[i]))
                    if budget <= 0:
                        continue
                    tb += 1
                    served_total += budget
                    u.backlog_bits -= budget
                    q = u.queue
                    while budget > 0:
                        head = q[0]
                        if head[1] <= budget:
                            budget -= head[1]
                            q.popleft()
                            delivered.append(PacketRecord(s, head[0], done_at, head[2], backhaul, ue_ids[i]))
                            delivered_bits += head[2]
                        else:
                            head[1] -= budget
                            budget = 0
            t += TTI_US

        self.generated_bits[s] += generated
        self.served_bits[s] += served_total
        self.delivered_bits[s] += delivered_bits
        return EpochReport(
            slice=s,
            delivered=delivered,
            tb_count=tb,
            prbs_requested=requested,
            prbs_granted=granted,
            bits_delivered=delivered_bits,
            prbs_allocated=prbs,
            bits_served=served_total,
            bits_generated=generated,
            epoch_ms=epoch_ms,
        )
