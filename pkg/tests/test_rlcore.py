import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import gradient_check_errors
from slicelab.rlcore import (
    Adam,
    AdamState,
    DenseNet,
    PolicyParams,
    RunningNorm,
    ShapeError,
    adam_step,
    log_softmax,
    mlp,
    softmax,
)


def fixed_232():
    net = DenseNet([2, 3, 2], ["tanh", "identity"])
    net.weights[0] = np.array([[0.5, -1.0], [2.0, 0.25], [-0.75, 1.5]])
    net.biases[0] = np.array([0.1, -0.2, 0.3])
    net.weights[1] = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]])
    net.biases[1] = np.array([0.05, -0.05])
    return net


def test_forward_matches_hand_computation():
    x = [1.0, 2.0]
    # hidden pre-activations: 0.5-2+0.1, 2+0.5-0.2, -0.75+3+0.3
    h = [np.tanh(-1.4), np.tanh(2.3), np.tanh(2.55)]
    expected = [
        1.0 * h[0] - 2.0 * h[1] + 0.5 * h[2] + 0.05,
        3.0 * h[1] - 1.0 * h[2] - 0.05,
    ]
    assert np.allclose(fixed_232()(x), expected, rtol=0, atol=1e-15)


def test_zero_weights_output_biases():
    net = DenseNet([4, 3], ["identity"])
    net.weights[0][:] = 0.0
    net.biases[0] = np.array([1.0, -2.0, 3.5])
    assert np.array_equal(net(np.ones(4)), net.biases[0])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=2, max_size=20))
def test_softmax_is_a_distribution(logits):
    p = softmax(np.array(logits))
    assert np.all(p >= 0) and np.all(p <= 1)
    assert abs(p.sum() - 1.0) < 1e-9
    assert np.allclose(np.exp(log_softmax(np.array(logits))), p, atol=1e-12)


def test_softmax_head_sums_to_one():
    net = DenseNet([3, 5, 4], ["relu", "softmax"], rng=np.random.default_rng(0))
    out = net(np.random.default_rng(1).normal(size=(7, 3)))
    assert np.allclose(out.sum(axis=1), 1.0, atol=1e-9)
    assert np.all((out > 0) & (out < 1))


def test_forward_errors():
    net = DenseNet([3, 2], ["identity"])
    with pytest.raises(ShapeError):
        net(np.ones(4))
    with pytest.raises(ValueError):
        net(np.array([1.0, np.nan, 0.0]))
    with pytest.raises(ShapeError):
        net.backward(np.ones(3), np.ones(3))


def test_forward_is_pure():
    net = mlp(5, [8], 3, np.random.default_rng(0))
    x = np.arange(5.0)
    assert np.array_equal(net(x), net(x))


def test_backward_matches_finite_differences():
    assert max(gradient_check_errors()) < 1e-4


def test_backward_zero_and_linear():
    net = mlp(4, [6], 3, np.random.default_rng(2))
    x = np.random.default_rng(3).normal(size=4)
    g = np.array([0.3, -1.0, 2.0])
    zero = DenseNet.flatten_grads(net.backward(x, np.zeros(3)))
    assert np.array_equal(zero, np.zeros_like(zero))
    one = DenseNet.flatten_grads(net.backward(x, g))
    two = DenseNet.flatten_grads(net.backward(x, 2 * g))
    assert np.allclose(two, 2 * one, rtol=1e-14, atol=0)


def test_adam_zero_gradient_keeps_params():
    w = np.array([1.0, -2.0])
    new, state = adam_step(w, np.zeros(2), AdamState.zeros(2), lr=0.1)
    assert np.array_equal(new, w) and state.t == 1


def test_adam_first_step_is_signed_lr():
    w = np.array([1.0, -2.0, 0.5])
    g = np.array([3.0, -0.01, 1e3])
    new, _ = adam_step(w, g, AdamState.zeros(3), lr=1e-3)
    assert np.allclose(new - w, -1e-3 * np.sign(g), rtol=1e-5)


def test_adam_minimises_quadratic_bowl():
    w = np.array([1.0, -1.0, 0.5])
    state = AdamState.zeros(3)
    for _ in range(500):
        w, state = adam_step(w, 2 * w, state, lr=1e-2)
    assert np.linalg.norm(w) < 1e-3


def test_adam_wrapper_clips_gradient():
    net = DenseNet([2, 1], ["identity"])
    opt = Adam(net, lr=0.1, max_grad_norm=1.0)
    norm = opt.step([np.array([[30.0, 40.0]]), np.array([0.0])])
    assert norm == 50.0
    assert np.allclose(opt.state.m, 0.1 * np.array([0.6, 0.8, 0.0]))


def test_running_norm_statistics():
    rng = np.random.default_rng(0)
    data = rng.normal(3.0, 2.0, size=(5000, 2))
    norm = RunningNorm(2)
    for chunk in np.array_split(data, 17):
        norm.update(chunk)
    assert np.allclose(norm.mean, data.mean(axis=0), atol=1e-6)
    assert np.allclose(norm.var, data.var(axis=0), rtol=1e-3)
    norm.frozen = True
    before = norm.mean.copy()
    norm.update(np.full((10, 2), 100.0))
    assert np.array_equal(norm.mean, before)
    assert np.all(np.abs(norm(np.full(2, 1e6))) <= norm.clip)


def test_checkpoint_bytes_round_trip(tmp_path):
    net = mlp(9, [16, 16], 5, np.random.default_rng(4))
    params = PolicyParams({"kind": "test", "net": net.descriptor()}, {"net": net.get_flat()})
    data = params.to_bytes()
    back = PolicyParams.from_bytes(data)
    assert back.to_bytes() == data
    assert np.array_equal(back.blocks["net"], net.get_flat())
    params.save(tmp_path / "p.ckpt")
    restored = DenseNet.from_descriptor(PolicyParams.load(tmp_path / "p.ckpt").descriptor["net"], back.blocks["net"])
    assert np.array_equal(restored(np.ones(9)), net(np.ones(9)))


def test_checkpoint_rejects_garbage():
    with pytest.raises(ValueError):
        PolicyParams.from_bytes(b'{"format": "other"}\n')
    good = PolicyParams({}, {"a": np.ones(3)}).to_bytes()
    with pytest.raises(ValueError):
        PolicyParams.from_bytes(good[:-4])
