import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import conformance_oracle
from slicelab.core import Observation, SlaSpec, Transition
from slicelab.kpm import (
    DATASET_COLUMNS,
    DatasetError,
    DatasetWriter,
    KpmWindow,
    build_observation,
    conformance_ratio,
    load_dataset,
    ratio,
    read_rows,
    record_transition,
)


def test_conformance_examples():
    assert conformance_ratio([10, 20, 200], 110) == pytest.approx(2 / 3, abs=1e-15)
    assert conformance_ratio([1, 2, 3], 10) == 1.0
    assert conformance_ratio([50, 50, 50], 50) == 0.0
    assert conformance_ratio([], 50) == 1.0


def test_conformance_errors():
    with pytest.raises(ValueError):
        conformance_ratio([1.0, -0.5], 10)
    with pytest.raises(ValueError):
        conformance_ratio([float("nan")], 10)
    with pytest.raises(ValueError):
        conformance_ratio([1.0], 0)


latencies = st.lists(st.floats(0.0, 500.0), max_size=60)


@settings(max_examples=200, deadline=None)
@given(latencies, st.floats(0.1, 500.0))
def test_conformance_matches_brute_force(lat, lam):
    assert conformance_ratio(lat, lam) == conformance_oracle(lat, lam)


@settings(max_examples=100, deadline=None)
@given(latencies, st.floats(0.1, 250.0), st.floats(0.0, 250.0))
def test_conformance_monotone_in_lambda(lat, lam, delta):
    assert conformance_ratio(lat, lam) <= conformance_ratio(lat, lam + delta)


def window(lat, tb=3, rt=1.0, dl=0.5):
    return KpmWindow(0, 0, tuple(lat), tb, rt, dl)


def test_observation_statistics():
    obs = build_observation(window([10.0, 20.0, 30.0]), SlaSpec(110.0, 0.99))
    assert (obs.d_min_ms, obs.d_max_ms, obs.d_mean_ms) == (10.0, 30.0, 20.0)
    assert obs.phi_sla == 0.99 and obs.lambda_ms == 110.0 and obs.phi_meas == 1.0


def test_empty_window_is_conformant():
    obs = build_observation(window([]), SlaSpec(50.0, 0.99))
    assert (obs.d_min_ms, obs.d_max_ms, obs.d_mean_ms, obs.phi_meas) == (0.0, 0.0, 0.0, 1.0)


def test_build_observation_is_pure():
    w = window([5.0, 70.0, 12.5])
    sla = SlaSpec(60.0, 0.9)
    assert build_observation(w, sla) == build_observation(w, sla)


def test_ratio_defaults():
    assert ratio(0, 0) == 1.0
    assert ratio(3, 4) == 0.75


def rand_obs(rng):
    lat = np.sort(rng.uniform(0, 300, 3))
    return Observation(
        float(rng.integers(0, 500)), rng.random(), rng.random() * 3, lat[0], lat[2], lat[1],
        0.9, rng.random(), rng.uniform(10, 110),
    )


def chain(rng, n, episode=0, slice_id=0):
    states = [rand_obs(rng) for _ in range(n + 1)]
    return [
        Transition(states[i], int(rng.integers(1, 50)), float(rng.normal()), states[i + 1], episode, i, slice_id)
        for i in range(n)
    ]


def test_transitions_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    ts = chain(rng, 3)
    path = tmp_path / "d.csv"
    with DatasetWriter(path) as w:
        for t in ts:
            record_transition(w, t)
    assert load_dataset(path) == ts
    assert len(read_rows(path)) == 4


def test_disjoint_transitions_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    ts = [chain(rng, 1, episode=e, slice_id=s)[0] for e in range(3) for s in range(2)]
    path = tmp_path / "d.csv"
    with DatasetWriter(path) as w:
        for t in ts:
            w.record_transition(t)
    assert sorted(load_dataset(path), key=lambda t: (t.episode, t.slice)) == ts


def test_append_mode(tmp_path):
    rng = np.random.default_rng(2)
    path = tmp_path / "d.csv"
    a, b = chain(rng, 2, episode=0), chain(rng, 2, episode=1)
    with DatasetWriter(path) as w:
        for t in a:
            w.record_transition(t)
    with DatasetWriter(path, append=True) as w:
        for t in b:
            w.record_transition(t)
    assert load_dataset(path) == a + b
    assert path.read_text().count("episode,") == 1


def test_shuffled_header_rejected(tmp_path):
    cols = list(DATASET_COLUMNS)
    cols[3], cols[4] = cols[4], cols[3]
    path = tmp_path / "d.csv"
    path.write_text(",".join(cols) + "\n")
    with pytest.raises(DatasetError, match="line 1"):
        read_rows(path)


def test_malformed_row_names_line(tmp_path):
    rng = np.random.default_rng(3)
    path = tmp_path / "d.csv"
    with DatasetWriter(path) as w:
        for t in chain(rng, 3):
            w.record_transition(t)
    lines = path.read_text().splitlines()
    lines[3] = lines[3].replace(",", ";", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match="line 4"):
        read_rows(path)


def test_half_empty_row_rejected(tmp_path):
    rng = np.random.default_rng(4)
    path = tmp_path / "d.csv"
    with DatasetWriter(path) as w:
        w.write_step(0, 0, 0, rand_obs(rng), action=3, reward=None)
    with pytest.raises(DatasetError, match="line 2"):
        read_rows(path)


def test_twenty_hour_dataset_loads_quickly(tmp_path):
    # 20 h of 250 ms epochs is 288k rows
    rng = np.random.default_rng(5)
    path = tmp_path / "big.csv"
    obs = [rand_obs(rng) for _ in range(64)]
    with DatasetWriter(path) as w:
        for n in range(288_000):
            last = n % 1000 == 999
            w.write_step(n // 1000, n % 1000, 0, obs[n % 64], None if last else 7, None if last else 0.5)
    t0 = time.perf_counter()
    ts = load_dataset(path)
    assert time.perf_counter() - t0 < 10.0
    assert len(ts) == 288_000 - 288
