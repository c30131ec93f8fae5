import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from slicelab.core import (
    OBSERVATION_FIELDS,
    AgentConfig,
    ConfigError,
    InvalidActionError,
    LabConfig,
    Observation,
    PpoConfig,
    SimConfig,
    SlaConfig,
    SlaSpec,
    SliceConfig,
    action_bounds,
    check_action,
    config_from_dict,
    config_to_dict,
    dumps_config,
    load_config,
    loads_config,
    save_config,
    seeded_rng,
    substream,
)


def test_seeded_rng_is_deterministic():
    a = seeded_rng(42).random(100)
    b = seeded_rng(42).random(100)
    assert np.array_equal(a, b)


def test_different_seeds_differ():
    assert not np.array_equal(seeded_rng(1).random(100), seeded_rng(2).random(100))


def test_substreams_are_separated_by_name():
    assert not np.array_equal(substream("sim", 42).random(50), substream("agent", 42).random(50))
    assert np.array_equal(substream("sim", 42, 3).random(50), substream("sim", 42, 3).random(50))
    assert not np.array_equal(substream("sim", 42, 3).random(50), substream("sim", 42, 4).random(50))


def test_observation_vector_has_fixed_order():
    obs = Observation(1, 0.5, 2.0, 5, 9, 7, 0.9, 0.8, 60)
    arr = obs.as_array()
    assert arr.shape == (9,)
    assert list(arr) == [getattr(obs, f) for f in OBSERVATION_FIELDS]
    assert Observation.from_array(arr) == obs


def test_observation_rejects_unordered_latency_stats():
    with pytest.raises(ValueError):
        Observation(1, 1, 1, 10, 5, 7, 0.9, 1, 60)
    with pytest.raises(ValueError):
        Observation.from_array([0.0] * 8)


def test_sla_validation():
    with pytest.raises(ConfigError):
        SlaSpec(0.0, 0.9)
    with pytest.raises(ConfigError):
        SlaSpec(10.0, 1.5)


def test_action_bounds_leave_one_prb_per_other_slice():
    assert action_bounds(50, 2) == (1, 49)
    assert action_bounds(50, 1) == (1, 50)
    assert check_action(49, 50, 2) == 49
    for bad in (0, 50, 2.5, True):
        with pytest.raises(InvalidActionError):
            check_action(bad, 50, 2)


def test_sla_draw_within_range():
    cfg = SlaConfig(60.0, 0.9, (10.0, 110.0))
    rng = seeded_rng(0)
    lams = [cfg.draw(rng).lambda_ms for _ in range(200)]
    assert min(lams) >= 10.0 and max(lams) <= 110.0
    assert SlaConfig(110.0, 0.99).draw(rng) == SlaSpec(110.0, 0.99)


def test_unknown_config_key_rejected():
    data = config_to_dict(LabConfig())
    data["sim"]["bogus"] = 1
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_config_file_round_trip(tmp_path):
    cfg = LabConfig(seed=7, controlled=[1])
    save_config(cfg, tmp_path / "c.json")
    assert load_config(tmp_path / "c.json") == cfg


slice_cfg = st.builds(
    SliceConfig,
    n_ues=st.integers(0, 6),
    bitrate_mbps=st.floats(0.1, 20.0),
    packet_bytes=st.integers(100, 9000),
)


@st.composite
def lab_configs(draw):
    slices = draw(st.lists(slice_cfg, min_size=1, max_size=4))
    sim = SimConfig(
        capacity=draw(st.integers(len(slices), 200)),
        epoch_ms=draw(st.integers(1, 1000)),
        backhaul_ms=draw(st.floats(0.0, 50.0)),
        sigma_eta=draw(st.floats(0.0, 1.0)),
        slices=slices,
    )
    slas = []
    for _ in slices:
        lam = draw(st.floats(1.0, 500.0))
        rng = draw(st.one_of(st.none(), st.tuples(st.floats(1.0, 50.0), st.floats(60.0, 500.0))))
        slas.append(SlaConfig(lam, draw(st.floats(0.01, 1.0)), rng))
    agent = AgentConfig(
        reward_k=draw(st.floats(0.1, 100.0)),
        reward_indicator=draw(st.sampled_from(["corrected", "as-written"])),
        ppo=PpoConfig(hidden=tuple(draw(st.lists(st.integers(1, 128), min_size=1, max_size=3)))),
    )
    return LabConfig(
        sim=sim,
        slas=slas,
        controlled=draw(st.one_of(st.none(), st.just([0]))),
        episode_len=draw(st.integers(1, 1000)),
        seed=draw(st.integers(0, 2**63 - 1)),
        agent=agent,
    )


@settings(max_examples=100, deadline=None)
@given(lab_configs())
def test_config_round_trip_property(cfg):
    assert loads_config(dumps_config(cfg)) == cfg
