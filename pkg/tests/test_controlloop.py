import json
import socket
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slicelab.agents import ConstantAgent, PPOAgent
from slicelab.controlloop import (
    A1Enrichment,
    ControlMessage,
    E2Report,
    LoopAborted,
    ProtocolError,
    SlaSchedule,
    XApp,
    connect,
    decode,
    encode,
    listen,
    run_closed_loop,
    run_socket_loop,
    serve,
)
from slicelab.core import PpoConfig, SimConfig, SlaSpec
from slicelab.kpm import load_dataset, read_rows
from slicelab.ransim import RanSimulator

SLAS = {0: SlaSpec(110.0, 0.99), 1: SlaSpec(50.0, 0.99)}


def sim(seed=0):
    return RanSimulator(SimConfig(), seed=seed)


MESSAGES = [
    E2Report(3, 1, 17, 0.75, 1.2345678901234567),
    A1Enrichment(3, 1, (5.0, 6.123456789, 120.5)),
    A1Enrichment(0, 0, ()),
    ControlMessage(3, 1, 12),
]


@pytest.mark.parametrize("msg", MESSAGES)
def test_encode_decode_identity(msg):
    line = encode(msg)
    assert line.endswith(b"\n") and line.count(b"\n") == 1
    assert decode(line) == msg


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10**6), st.integers(0, 8), st.lists(st.floats(0, 1e4, allow_nan=False), max_size=20),
       st.floats(0, 1), st.floats(0, 100))
def test_round_trip_property(epoch, s, lat, rt, dl):
    for msg in (E2Report(epoch, s, epoch % 97, rt, dl), A1Enrichment(epoch, s, tuple(lat))):
        assert decode(encode(msg)) == msg


def test_unknown_tag_named():
    with pytest.raises(ProtocolError, match="BOGUS"):
        decode(b'{"type":"BOGUS","v":1}\n')


def test_version_mismatch():
    body = json.loads(encode(ControlMessage(0, 0, 5)))
    body["v"] = 2
    with pytest.raises(ProtocolError, match="version"):
        decode(json.dumps(body).encode())


@pytest.mark.parametrize(
    "line",
    [b"not json\n", b"[1,2]\n", b'{"type":"CONTROL","v":1,"epoch":0,"slice":0}\n',
     b'{"type":"CONTROL","v":1,"epoch":0,"slice":0,"prbs":2.5}\n',
     b'{"type":"CONTROL","v":1,"epoch":0,"slice":0,"prbs":2,"x":1}\n'],
)
def test_malformed_messages(line):
    with pytest.raises(ProtocolError):
        decode(line)


def test_constant_agent_drives_next_epochs():
    agents = {0: ConstantAgent(7), 1: ConstantAgent(30)}
    trace = run_closed_loop(sim(), agents, SlaSchedule(SLAS), 10)
    assert len(trace.for_slice(0)) == 10 and len(trace.for_slice(1)) == 10
    assert trace.applied[0] == {0: 25, 1: 25}
    assert all(a == {0: 7, 1: 30} for a in trace.applied[1:])
    assert len(trace.applied) == 11


def test_control_applies_to_the_following_epoch():
    class Stepper:
        def __init__(self):
            self.n = 0

        def act(self, obs, mode="greedy"):
            self.n += 1
            return self.n

    trace = run_closed_loop(RanSimulator(SimConfig(slices=SimConfig().slices[:1]), 0), {0: Stepper()},
                            SlaSchedule({0: SLAS[0]}), 5)
    actions = [r.action for r in trace.complete_rows()]
    assert actions == [1, 2, 3, 4, 5]
    assert [a[0] for a in trace.applied] == [50, 1, 2, 3, 4, 5]


def test_schedule_switch_reaches_observations():
    sched = SlaSchedule({0: SlaSpec(110.0, 0.9), 1: SLAS[1]}, [(5, 0, SlaSpec(30.0, 0.9))])
    trace = run_closed_loop(sim(), {0: ConstantAgent(10), 1: ConstantAgent(10)}, sched, 10)
    lams = [r.obs.lambda_ms for r in trace.for_slice(0)]
    assert lams == [110.0] * 5 + [30.0] * 5
    assert all(r.obs.lambda_ms == 50.0 for r in trace.for_slice(1))


def test_partial_control_leaves_rest_to_other_slices():
    trace = run_closed_loop(sim(), {1: ConstantAgent(9)}, SlaSchedule(SLAS), 3)
    assert trace.applied[1:] == [{0: 41, 1: 9}] * 3


def test_trace_csv_is_a_dataset(tmp_path):
    trace = run_closed_loop(sim(), {0: ConstantAgent(10), 1: ConstantAgent(12)}, SlaSchedule(SLAS), 6)
    trace.to_csv(tmp_path / "t.csv")
    rows = read_rows(tmp_path / "t.csv")
    assert len(rows) == 12
    assert len(load_dataset(tmp_path / "t.csv")) == 10


class BadAgent:
    def act(self, obs, mode="greedy"):
        return 99


def test_strict_mode_aborts_on_invalid_action():
    with pytest.raises(LoopAborted, match="invalid action"):
        run_closed_loop(sim(), {0: BadAgent()}, SlaSchedule(SLAS), 3)


def test_lenient_mode_clamps(caplog):
    trace = run_closed_loop(sim(), {0: BadAgent()}, SlaSchedule(SLAS), 3, strict=False)
    assert {r.action for r in trace.complete_rows()} == {49}
    assert "clamped" in caplog.text


def ppo_agents():
    return {s: PPOAgent(49, PpoConfig(hidden=(16,)), np.random.default_rng(s)) for s in (0, 1)}


@pytest.mark.parametrize("mode", ["greedy", "sample"])
def test_transport_equivalence(mode):
    local = run_closed_loop(sim(4), ppo_agents(), SlaSchedule(SLAS), 60, mode=mode)
    xapp = XApp(ppo_agents(), SlaSchedule(SLAS), 50, 2, mode=mode)
    wire = run_socket_loop(lambda: sim(4), xapp, 60)
    assert wire.key() == local.key()
    assert wire.applied == local.applied


def test_connection_loss_aborts_cleanly():
    server = listen()
    address = server.getsockname()

    def fake_ran():
        conn, _ = server.accept()
        conn.sendall(encode(E2Report(0, 0, 1, 1.0, 0.1)))
        conn.close()

    th = threading.Thread(target=fake_ran)
    th.start()
    xapp = XApp({0: ConstantAgent(5)}, SlaSchedule(SLAS), 50, 2)
    with pytest.raises(LoopAborted):
        connect(xapp, address, timeout=2.0)
    th.join()
    server.close()


def test_xapp_disconnect_aborts_ran():
    server = listen()
    address = server.getsockname()

    def quitter():
        sock = socket.create_connection(address)
        sock.recv(10)
        sock.close()

    th = threading.Thread(target=quitter)
    th.start()
    with pytest.raises(LoopAborted):
        serve(sim(), 5, [0], server, timeout=2.0)
    th.join()
    server.close()


def test_serve_times_out_without_client():
    server = listen()
    t0 = time.perf_counter()
    with pytest.raises(ProtocolError, match="timeout"):
        serve(sim(), 5, [0], server, timeout=0.2)
    assert time.perf_counter() - t0 < 2.0
    server.close()
