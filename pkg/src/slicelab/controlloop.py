"""Closed control loop between the RAN simulator and an xApp-style agent host.

Per epoch the RAN side emits one E2 report (RAN KPMs) and one A1 enrichment
(per-packet latencies) per slice. The xApp builds observations with the SLA in
force at that epoch, queries its agents and answers with one CONTROL message
per controlled slice. Controls computed at epoch ``n`` take effect at ``n + 1``.

The same exchange runs either in-process or over a TCP byte stream carrying
UTF-8 JSON, one message per line.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from .agents.reward import reward as slice_reward
from .core import InvalidActionError, Observation, SlaSpec, action_bounds, check_action
from .kpm import DatasetWriter, KpmWindow, build_observation, ratio
from .ransim import RanSimulator, fill_allocation, joint_allocation

log = logging.getLogger(__name__)

PROTOCOL_VERSION = 1
DEFAULT_TIMEOUT_S = 5.0
MESSAGE_TYPES = ("E2_REPORT", "A1_ENRICHMENT", "CONTROL")


class ProtocolError(RuntimeError):
    pass


class LoopAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class E2Report:
    epoch: int
    slice: int
    tb: int
    rt: float
    dl: float

    type = "E2_REPORT"


@dataclass(frozen=True)
class A1Enrichment:
    epoch: int
    slice: int
    latencies_ms: tuple[float, ...]

    type = "A1_ENRICHMENT"


@dataclass(frozen=True)
class ControlMessage:
    epoch: int
    slice: int
    prbs: int

    type = "CONTROL"


_FIELDS = {
    "E2_REPORT": (E2Report, {"epoch": int, "slice": int, "tb": int, "rt": float, "dl": float}),
    "A1_ENRICHMENT": (A1Enrichment, {"epoch": int, "slice": int, "latencies_ms": list}),
    "CONTROL": (ControlMessage, {"epoch": int, "slice": int, "prbs": int}),
}


def encode(msg) -> bytes:
    body = {"type": msg.type, "v": PROTOCOL_VERSION}
    for name in _FIELDS[msg.type][1]:
        value = getattr(msg, name)
        body[name] = list(value) if isinstance(value, tuple) else value
    return json.dumps(body, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8") + b"\n"


def decode(line: bytes):
    try:
        body = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ProtocolError(f"malformed message: {exc}") from None
    if not isinstance(body, dict):
        raise ProtocolError("malformed message: not a JSON object")
    tag = body.get("type")
    if tag not in _FIELDS:
        raise ProtocolError(f"unknown message type {tag!r}")
    if body.get("v") != PROTOCOL_VERSION:
        raise ProtocolError(f"protocol version mismatch: got {body.get('v')!r}, expected {PROTOCOL_VERSION}")
    cls, spec = _FIELDS[tag]
    kwargs = {}
    for name, typ in spec.items():
        if name not in body:
            raise ProtocolError(f"{tag}: missing field {name!r}")
        value = body[name]
        if typ is int and (not isinstance(value, int) or isinstance(value, bool)):
            raise ProtocolError(f"{tag}: field {name!r} must be an integer")
        if typ is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ProtocolError(f"{tag}: field {name!r} must be a number")
            value = float(value)
        if typ is list:
            if not isinstance(value, list):
                raise ProtocolError(f"{tag}: field {name!r} must be a list")
            value = tuple(float(v) for v in value)
        kwargs[name] = value
    extra = set(body) - set(spec) - {"type", "v"}
    if extra:
        raise ProtocolError(f"{tag}: unexpected fields {sorted(extra)}")
    return cls(**kwargs)


# --------------------------------------------------------------------------
# SLA schedule


class SlaSchedule:
    """Per-slice SLAs with step changes: ``changes`` holds ``(epoch, slice, SlaSpec)``."""

    def __init__(self, initial: Mapping[int, SlaSpec], changes: Sequence[tuple[int, int, SlaSpec]] = ()):
        self.initial = dict(initial)
        self.changes = sorted(changes, key=lambda c: (c[0], c[1]))

    def at(self, epoch: int) -> dict[int, SlaSpec]:
        current = dict(self.initial)
        for when, s, spec in self.changes:
            if when <= epoch:
                current[s] = spec
        return current


# --------------------------------------------------------------------------
# the two ends of the loop


@dataclass
class TraceRow:
    episode: int
    epoch: int
    slice: int
    obs: Observation
    action: int
    requested: int
    reward: Optional[float] = None


@dataclass
class Trace:
    rows: list[TraceRow] = field(default_factory=list)
    # full per-epoch allocation actually applied by the RAN, including epoch 0
    applied: list[dict[int, int]] = field(default_factory=list)

    def complete_rows(self) -> list[TraceRow]:
        return [r for r in self.rows if r.reward is not None]

    def for_slice(self, s: int) -> list[TraceRow]:
        return [r for r in self.complete_rows() if r.slice == s]

    def to_csv(self, path) -> None:
        with DatasetWriter(path) as w:
            for r in self.complete_rows():
                w.write_step(r.episode, r.epoch, r.slice, r.obs, r.action, r.reward)

    def key(self) -> list[tuple]:
        """Bit-exact comparison key."""
        return [
            (r.episode, r.epoch, r.slice, tuple(r.obs.as_array().tolist()), r.action, r.requested, r.reward)
            for r in self.complete_rows()
        ]


class RanNode:
    """RAN side: steps the simulator and emits E2/A1 messages."""

    def __init__(self, sim: RanSimulator):
        self.sim = sim
        self.allocation = fill_allocation({}, sim.capacity, sim.n_slices)
        self.epoch = 0
        self.applied: list[dict[int, int]] = []

    def run_epoch(self) -> tuple[list[E2Report], list[A1Enrichment]]:
        self.applied.append(dict(self.allocation))
        reports = self.sim.step_epoch(self.allocation)
        e2, a1 = [], []
        for s in range(self.sim.n_slices):
            r = reports[s]
            e2.append(E2Report(self.epoch, s, r.tb_count, ratio(r.prbs_granted, r.prbs_requested),
                               r.bits_delivered / (r.epoch_ms * 1000.0)))
            a1.append(A1Enrichment(self.epoch, s, tuple(r.latencies_ms)))
        self.epoch += 1
        return e2, a1

    def apply(self, controls: Sequence[ControlMessage]) -> None:
        partial = {}
        for c in controls:
            if c.epoch != self.epoch - 1:
                raise ProtocolError(f"CONTROL for epoch {c.epoch} received at epoch {self.epoch - 1}")
            if c.slice in partial:
                raise ProtocolError(f"duplicate CONTROL for slice {c.slice}")
            partial[c.slice] = c.prbs
        self.allocation = fill_allocation(partial, self.sim.capacity, self.sim.n_slices)


class XApp:
    """Agent host: turns E2 + A1 data into observations, actions and trace rows."""

    def __init__(
        self,
        agents: Mapping[int, object],
        schedule: SlaSchedule,
        capacity: int,
        n_slices: int,
        reward_k: float = 20.0,
        reward_indicator: str = "corrected",
        strict: bool = True,
        mode: str = "greedy",
        episode: int = 0,
    ):
        self.agents = dict(agents)
        self.schedule = schedule
        self.capacity = capacity
        self.n_slices = n_slices
        self.reward_k = reward_k
        self.reward_indicator = reward_indicator
        self.strict = strict
        self.mode = mode
        self.episode = episode
        self.trace = Trace()
        self._pending: dict[int, TraceRow] = {}

    def on_epoch(self, e2: Sequence[E2Report], a1: Sequence[A1Enrichment]) -> list[ControlMessage]:
        e2_by = {m.slice: m for m in e2}
        a1_by = {m.slice: m for m in a1}
        epochs = {m.epoch for m in e2} | {m.epoch for m in a1}
        if len(epochs) != 1:
            raise ProtocolError(f"E2/A1 epochs do not align: {sorted(epochs)}")
        epoch = epochs.pop()
        slas = self.schedule.at(epoch)
        requests = {}
        obs_by = {}
        for s in sorted(self.agents):
            if s not in e2_by or s not in a1_by:
                raise ProtocolError(f"epoch {epoch}: missing E2/A1 data for slice {s}")
            m = e2_by[s]
            window = KpmWindow(s, epoch, a1_by[s].latencies_ms, m.tb, m.rt, m.dl)
            obs = build_observation(window, slas[s])
            obs_by[s] = obs
            prev = self._pending.pop(s, None)
            if prev is not None:
                prev.reward = slice_reward(obs.phi_sla, obs.phi_meas, prev.action, self.capacity,
                                           self.reward_k, self.reward_indicator)
            requests[s] = self._validated(self.agents[s].act(obs, self.mode), s, epoch)
        alloc = joint_allocation(requests, self.capacity)
        controls = []
        for s in sorted(self.agents):
            row = TraceRow(self.episode, epoch, s, obs_by[s], alloc[s], requests[s])
            self.trace.rows.append(row)
            self._pending[s] = row
            controls.append(ControlMessage(epoch, s, alloc[s]))
        return controls

    def _validated(self, prbs, s: int, epoch: int) -> int:
        try:
            return check_action(prbs, self.capacity, self.n_slices)
        except InvalidActionError as exc:
            if self.strict:
                raise LoopAborted(f"epoch {epoch}, slice {s}: agent returned invalid action: {exc}") from None
            lo, hi = action_bounds(self.capacity, self.n_slices)
            clamped = int(min(max(round(float(prbs)), lo), hi))
            log.warning("epoch %d slice %d: clamped invalid action %r to %d", epoch, s, prbs, clamped)
            return clamped


def run_closed_loop(sim: RanSimulator, agents: Mapping[int, object], sla_schedule: SlaSchedule,
                    n_epochs: int, **xapp_kwargs) -> Trace:
    """In-process loop; the trace holds ``n_epochs`` complete rows per controlled slice."""
    ran = RanNode(sim)
    xapp = XApp(agents, sla_schedule, sim.capacity, sim.n_slices, **xapp_kwargs)
    for n in range(n_epochs + 1):
        e2, a1 = ran.run_epoch()
        controls = xapp.on_epoch(e2, a1)
        if n < n_epochs:
            ran.apply(controls)
    xapp.trace.applied = ran.applied
    return xapp.trace


# --------------------------------------------------------------------------
# byte-stream transport: the RAN listens, the xApp connects


class _LineChannel:
    def __init__(self, sock: socket.socket, timeout: float):
        sock.settimeout(timeout)
        self.sock = sock
        self.rfile = sock.makefile("rb")

    def send(self, msgs) -> None:
        self.sock.sendall(b"".join(encode(m) for m in msgs))

    def recv(self):
        """Next message, or ``None`` on a clean end of stream."""
        try:
            line = self.rfile.readline()
        except socket.timeout:
            raise ProtocolError("timed out waiting for peer") from None
        except OSError as exc:
            raise LoopAborted(f"connection lost: {exc}") from None
        if not line:
            return None
        if not line.endswith(b"\n"):
            raise LoopAborted("connection lost mid-message")
        return decode(line)

    def close(self) -> None:
        try:
            self.rfile.close()
        finally:
            self.sock.close()


def listen(host: str = "127.0.0.1", port: int = 0) -> socket.socket:
    srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    srv.bind((host, port))
    srv.listen(1)
    return srv


def serve(sim: RanSimulator, n_epochs: int, controlled: Sequence[int], server: socket.socket,
          timeout: float = DEFAULT_TIMEOUT_S) -> RanNode:
    """RAN end: accept one xApp session and drive ``n_epochs`` controlled epochs."""
    server.settimeout(timeout)
    try:
        conn, _ = server.accept()
    except socket.timeout:
        raise ProtocolError("no xApp connected before timeout") from None
    chan = _LineChannel(conn, timeout)
    ran = RanNode(sim)
    expected = sorted(controlled)
    try:
        for n in range(n_epochs + 1):
            e2, a1 = ran.run_epoch()
            chan.send([*e2, *a1])
            controls = []
            for _ in expected:
                msg = chan.recv()
                if msg is None:
                    raise LoopAborted(f"xApp disconnected during epoch {n}")
                if not isinstance(msg, ControlMessage):
                    raise ProtocolError(f"expected CONTROL, got {msg.type}")
                controls.append(msg)
            if sorted(c.slice for c in controls) != expected:
                raise ProtocolError(f"epoch {n}: CONTROL slices {[c.slice for c in controls]} != {expected}")
            if n < n_epochs:
                ran.apply(controls)
    finally:
        chan.close()
    return ran


def connect(xapp: XApp, address: tuple[str, int], timeout: float = DEFAULT_TIMEOUT_S) -> Trace:
    """xApp end: answer every epoch batch until the RAN closes the stream."""
    sock = socket.create_connection(address, timeout=timeout)
    chan = _LineChannel(sock, timeout)
    n_msgs = 2 * xapp.n_slices
    try:
        while True:
            batch = []
            for _ in range(n_msgs):
                msg = chan.recv()
                if msg is None:
                    if batch:
                        raise LoopAborted("connection closed mid-epoch")
                    return xapp.trace
                batch.append(msg)
            e2 = [m for m in batch if isinstance(m, E2Report)]
            a1 = [m for m in batch if isinstance(m, A1Enrichment)]
            if len(e2) != xapp.n_slices or len(a1) != xapp.n_slices:
                raise ProtocolError("epoch batch must hold one E2_REPORT and one A1_ENRICHMENT per slice")
            chan.send(xapp.on_epoch(e2, a1))
    finally:
        chan.close()


def run_socket_loop(sim_factory: Callable[[], RanSimulator], xapp: XApp, n_epochs: int,
                    timeout: float = DEFAULT_TIMEOUT_S) -> Trace:
    """Both ends on localhost, the RAN in a helper thread; mirrors :func:`run_closed_loop`."""
    server = listen()
    address = server.getsockname()
    result: dict = {}

    def ran_side():
        try:
            result["ran"] = serve(sim_factory(), n_epochs, sorted(xapp.agents), server, timeout)
        except BaseException as exc:  # surfaced in the caller
            result["error"] = exc
        finally:
            server.close()

    th = threading.Thread(target=ran_side, daemon=True)
    th.start()
    try:
        trace = connect(xapp, address, timeout)
    finally:
        th.join(timeout=timeout + 1.0)
    if "error" in result:
        raise result["error"]
    trace.applied = result["ran"].applied
    return trace
