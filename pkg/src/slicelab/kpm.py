"""KPM pipeline: conformance ratio, observation assembly and the CSV dataset.

Dataset rows are trajectory steps, one per (episode, epoch, slice). A row holds
the observation at ``epoch``, the action taken after seeing it and the reward
that action earned. The next state of a row is the observation on the row for
``epoch + 1`` of the same episode and slice. A terminal row (no successor
transition) leaves ``action`` and ``reward`` empty.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import EpochIndex, Observation, SlaSpec, SliceId, Transition
from .ransim import EpochReport

DATASET_COLUMNS = (
    "episode",
    "epoch",
    "slice",
    "tb",
    "rt",
    "dl",
    "d_min",
    "d_max",
    "d_mean",
    "phi_sla",
    "phi_meas",
    "lambda",
    "action",
    "reward",
)


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class KpmWindow:
    slice: SliceId
    epoch: EpochIndex
    latencies_ms: tuple[float, ...]
    tb: int
    rt: float
    dl_mbps: float


def ratio(granted: int, requested: int) -> float:
    if requested == 0:
        return 1.0
    return min(1.0, granted / requested)


def window_from_report(report: EpochReport, epoch: EpochIndex) -> KpmWindow:
    return KpmWindow(
        slice=report.slice,
        epoch=epoch,
        latencies_ms=tuple(report.latencies_ms),
        tb=report.tb_count,
        rt=ratio(report.prbs_granted, report.prbs_requested),
        dl_mbps=report.bits_delivered / (report.epoch_ms * 1000.0),
    )


def conformance_ratio(latencies_ms: Sequence[float], lambda_ms: float) -> float:
    """Fraction of packets strictly faster than ``lambda_ms``; 1.0 for no packets."""
    if not lambda_ms > 0:
        raise ValueError(f"lambda_ms must be positive, got {lambda_ms}")
    n = len(latencies_ms)
    if n == 0:
        return 1.0
    ok = 0
    for d in latencies_ms:
        if d < 0 or math.isnan(d):
            raise ValueError(f"corrupt latency record: {d}")
        if d < lambda_ms:
            ok += 1
    return ok / n


def build_observation(window: KpmWindow, sla: SlaSpec) -> Observation:
    lat = window.latencies_ms
    if lat:
        d_min, d_max = min(lat), max(lat)
        d_mean = math.fsum(lat) / len(lat)
        # keep the ordering invariant under summation rounding
        d_mean = min(max(d_mean, d_min), d_max)
    else:
        d_min = d_max = d_mean = 0.0
    return Observation(
        tb=float(window.tb),
        rt=float(window.rt),
        dl=float(window.dl_mbps),
        d_min_ms=float(d_min),
        d_max_ms=float(d_max),
        d_mean_ms=float(d_mean),
        phi_sla=float(sla.phi_sla),
        phi_meas=conformance_ratio(lat, sla.lambda_ms),
        lambda_ms=float(sla.lambda_ms),
    )


# --------------------------------------------------------------------------
# CSV dataset


def _row(episode: int, epoch: int, slice_id: int, obs: Observation, action, reward) -> list[str]:
    vals = [str(int(episode)), str(int(epoch)), str(int(slice_id))]
    vals += [repr(float(v)) for v in obs.as_array()]
    vals.append("" if action is None else str(int(action)))
    vals.append("" if reward is None else repr(float(reward)))
    return vals


class DatasetWriter:
    """Append-only writer for the dataset/trace CSV.

    ``write_step`` appends one trajectory row. ``record_transition`` accepts
    free-standing ``(s, a, r, s')`` tuples: the successor observation is held
    back so that a following transition starting from it continues the same
    run, and is otherwise emitted as a terminal row.
    """

    def __init__(self, path, append: bool = False):
        self.path = Path(path)
        exists = self.path.exists() and self.path.stat().st_size > 0
        mode = "a" if append else "w"
        self._fh = open(self.path, mode, newline="", encoding="utf-8")
        self._csv = csv.writer(self._fh, lineterminator="\n")
        if not (append and exists):
            self._csv.writerow(DATASET_COLUMNS)
        self._pending: dict[tuple[int, int], tuple[int, Observation]] = {}

    def write_step(self, episode, epoch, slice_id, obs, action=None, reward=None) -> None:
        self._csv.writerow(_row(episode, epoch, slice_id, obs, action, reward))

    def record_transition(self, t: Transition) -> None:
        key = (t.episode, t.slice)
        pending = self._pending.pop(key, None)
        if pending is not None and not (pending[0] == t.epoch and pending[1] == t.state):
            self.write_step(t.episode, pending[0], t.slice, pending[1])
        self.write_step(t.episode, t.epoch, t.slice, t.state, t.action, t.reward)
        self._pending[key] = (t.epoch + 1, t.next_state)

    def flush(self) -> None:
        for (episode, slice_id), (epoch, obs) in sorted(self._pending.items()):
            self.write_step(episode, epoch, slice_id, obs)
        self._pending.clear()
        self._fh.flush()

    def close(self) -> None:
        if not self._fh.closed:
            self.flush()
            self._fh.close()

    def __enter__(self) -> "DatasetWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def record_transition(store: DatasetWriter, transition: Transition) -> None:
    store.record_transition(transition)


@dataclass(frozen=True)
class DatasetRow:
    episode: int
    epoch: int
    slice: int
    obs: Observation
    action: Optional[int]
    reward: Optional[float]


def read_rows(path) -> list[DatasetRow]:
    rows: list[DatasetRow] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file (header row is mandatory)") from None
        if tuple(header) != DATASET_COLUMNS:
            raise DatasetError(f"{path}: line 1: header {header} does not match schema {list(DATASET_COLUMNS)}")
        for lineno, rec in enumerate(reader, start=2):
            if len(rec) != len(DATASET_COLUMNS):
                raise DatasetError(f"{path}: line {lineno}: expected {len(DATASET_COLUMNS)} fields, got {len(rec)}")
            try:
                episode, epoch, slice_id = int(rec[0]), int(rec[1]), int(rec[2])
                obs = Observation(*map(float, rec[3:12]))
                action = int(rec[12]) if rec[12] != "" else None
                reward = float(rec[13]) if rec[13] != "" else None
            except ValueError as exc:
                raise DatasetError(f"{path}: line {lineno}: {exc}") from None
            if (action is None) != (reward is None):
                raise DatasetError(f"{path}: line {lineno}: action and reward must both be set or both empty")
            rows.append(DatasetRow(episode, epoch, slice_id, obs, action, reward))
    return rows


def transitions_from_rows(rows: Iterable[DatasetRow]) -> list[Transition]:
    rows = list(rows)
    index = {(r.episode, r.slice, r.epoch): r for r in rows}
    out = []
    for r in rows:
        if r.action is None:
            continue
        nxt = index.get((r.episode, r.slice, r.epoch + 1))
        if nxt is not None:
            out.append(Transition(r.obs, r.action, r.reward, nxt.obs, r.episode, r.epoch, r.slice))
    return out


def load_dataset(path) -> list[Transition]:
    return transitions_from_rows(read_rows(path))
