"""Dense MLPs with hand-written backprop, Adam, observation normalisation and checkpoints."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

ACTIVATIONS = ("tanh", "relu", "identity", "softmax")
CHECKPOINT_MAGIC = "slicelab-checkpoint"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def _activate(kind: str, z: np.ndarray) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "identity":
        return z
    return softmax(z)


def _activate_grad(kind: str, z: np.ndarray, out: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull ``g`` (gradient w.r.t. the activation output) back to the pre-activation."""
    if kind == "tanh":
        return g * (1.0 - out * out)
    if kind == "relu":
        return g * (z > 0.0)
    if kind == "identity":
        return g
    # softmax Jacobian-vector product
    return out * (g - (g * out).sum(axis=-1, keepdims=True))


class DenseNet:
    """Multi-layer perceptron on float64 arrays.

    Inputs may be a single vector ``(d,)`` or a batch ``(n, d)``.
    """

    def __init__(self, sizes: Sequence[int], activations: Sequence[str], rng=None, init_scale=None):
        sizes = [int(s) for s in sizes]
        if len(activations) != len(sizes) - 1:
            raise ShapeError("need one activation per layer")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        self.sizes = sizes
        self.activations = list(activations)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        rng = np.random.default_rng(0) if rng is None else rng
        for li, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            if init_scale is not None and li == len(sizes) - 2:
                scale = init_scale
            else:
                scale = np.sqrt(2.0 / (n_in + n_out))
            self.weights.append(rng.normal(0.0, scale, size=(n_out, n_in)))
            self.biases.append(np.zeros(n_out))

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def _check_input(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim or x.ndim not in (1, 2):
            raise ShapeError(f"input shape {x.shape} incompatible with input_dim {self.input_dim}")
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite network input")
        return x

    def forward(self, x) -> np.ndarray:
        return self._forward(self._check_input(x))[0]

    __call__ = forward

    def _forward(self, x: np.ndarray):
        cache = []
        h = x
        for w, b, act in zip(self.weights, self.biases, self.activations):
            z = h @ w.T + b
            out = _activate(act, z)
            cache.append((h, z, out))
            h = out
        return h, cache

    def backward(self, x, upstream) -> list[np.ndarray]:
        """Gradient of ``sum(upstream * forward(x))`` w.r.t. all parameters.

        Returned as ``[dW0, db0, dW1, db1, ...]``; batched inputs sum over rows.
        """
        x = self._check_input(x)
        out, cache = self._forward(x)
        return self.backward_cached(cache, upstream, out.shape)

    def backward_cached(self, cache, upstream, out_shape=None) -> list[np.ndarray]:
        g = np.asarray(upstream, dtype=np.float64)
        if out_shape is not None and g.shape != tuple(out_shape):
            raise ShapeError(f"upstream gradient shape {g.shape} != output shape {tuple(out_shape)}")
        grads: list[np.ndarray] = [None] * (2 * len(self.weights))  # type: ignore[list-item]
        for li in range(len(self.weights) - 1, -1, -1):
            h, z, out = cache[li]
            gz = _activate_grad(self.activations[li], z, out, g)
            if gz.ndim == 1:
                grads[2 * li] = np.outer(gz, h)
                grads[2 * li + 1] = gz.copy()
            else:
                grads[2 * li] = gz.T @ h
                grads[2 * li + 1] = gz.sum(axis=0)
            if li:
                g = gz @ self.weights[li]
        return grads

    def forward_with_cache(self, x):
        return self._forward(self._check_input(x))

    # -- flat parameter views -------------------------------------------
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.n_params:
            raise ShapeError(f"expected {self.n_params} parameters, got {flat.size}")
        pos = 0
        for li, (w, b) in enumerate(zip(self.weights, self.biases)):
            self.weights[li] = flat[pos : pos + w.size].reshape(w.shape).copy()
            pos += w.size
            self.biases[li] = flat[pos : pos + b.size].copy()
            pos += b.size

    @staticmethod
    def flatten_grads(grads: list[np.ndarray]) -> np.ndarray:
        return np.concatenate([g.ravel() for g in grads])

    def copy(self) -> "DenseNet":
        other = DenseNet.__new__(DenseNet)
        other.sizes = list(self.sizes)
        other.activations = list(self.activations)
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def descriptor(self) -> dict:
        return {"sizes": list(self.sizes), "activations": list(self.activations)}

    @classmethod
    def from_descriptor(cls, desc: dict, flat: Optional[np.ndarray] = None) -> "DenseNet":
        net = cls(desc["sizes"], desc["activations"])
        if flat is not None:
            net.set_flat(flat)
        return net


def mlp(n_in: int, hidden: Sequence[int], n_out: int, rng, hidden_act="tanh", out_act="identity", out_scale=None):
    sizes = [n_in, *hidden, n_out]
    acts = [hidden_act] * len(hidden) + [out_act]
    return DenseNet(sizes, acts, rng=rng, init_scale=out_scale)


# --------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params, grads, state: AdamState, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam step on flat arrays; returns ``(new_params, new_state)``."""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError("params, grads and optimiser state must share a shape")
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grads
    v = beta2 * state.v + (1.0 - beta2) * grads * grads
    m_hat = m / (1.0 - beta1**t)
    v_hat = v / (1.0 - beta2**t)
    new = params - lr * m_hat / (np.sqrt(v_hat) + eps)
    return new, AdamState(m, v, t)


class Adam:
    """Adam bound to one network."""

    def __init__(self, net: DenseNet, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8, max_grad_norm=None):
        self.net = net
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.max_grad_norm = max_grad_norm
        self.state = AdamState.zeros(net.n_params)

    def step(self, grads: list[np.ndarray]) -> float:
        flat = DenseNet.flatten_grads(grads)
        norm = float(np.linalg.norm(flat))
        if self.max_grad_norm is not None and norm > self.max_grad_norm:
            flat = flat * (self.max_grad_norm / norm)
        new, self.state = adam_step(
            self.net.get_flat(), flat, self.state, self.lr, self.beta1, self.beta2, self.eps
        )
        self.net.set_flat(new)
        return norm


class RunningNorm:
    """Per-feature running mean/variance; ``frozen`` stops updates at evaluation."""

    def __init__(self, dim: int, clip: float = 10.0):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 1e-4
        self.clip = clip
        self.frozen = False

    def update(self, x: np.ndarray) -> None:
        if self.frozen:
            return
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        b_mean, b_var, b_n = x.mean(axis=0), x.var(axis=0), x.shape[0]
        delta = b_mean - self.mean
        tot = self.count + b_n
        self.mean = self.mean + delta * b_n / tot
        m2 = self.var * self.count + b_var * b_n + delta**2 * self.count * b_n / tot
        self.var = m2 / tot
        self.count = tot

    def __call__(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=np.float64) - self.mean) / np.sqrt(self.var + 1e-8)
        return np.clip(z, -self.clip, self.clip)

    def state_dict(self) -> dict:
        return {"mean": self.mean, "var": self.var, "count": np.array([self.count])}

    def load_state_dict(self, d: dict) -> None:
        self.mean = np.array(d["mean"], dtype=np.float64)
        self.var = np.array(d["var"], dtype=np.float64)
        self.count = float(np.asarray(d["count"]).ravel()[0])


# --------------------------------------------------------------------------
# checkpoints: one JSON header line, then raw little-endian float64 blocks


@dataclass
class PolicyParams:
    """Named flat parameter blocks plus a JSON-serialisable descriptor."""

    descriptor: dict
    blocks: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        layout = [[name, int(np.asarray(arr).size)] for name, arr in self.blocks.items()]
        header = {
            "format": CHECKPOINT_MAGIC,
            "version": CHECKPOINT_VERSION,
            "descriptor": self.descriptor,
            "blocks": layout,
        }
        head = json.dumps(header, sort_keys=True).encode("utf-8") + b"\n"
        body = b"".join(np.asarray(arr, dtype="<f8").ravel().tobytes() for arr in self.blocks.values())
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "PolicyParams":
        nl = data.find(b"\n")
        if nl < 0:
            raise ValueError("checkpoint header missing")
        header = json.loads(data[:nl].decode("utf-8"))
        if header.get("format") != CHECKPOINT_MAGIC:
            raise ValueError("not a slicelab checkpoint")
        if header.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {header.get('version')}")
        body = data[nl + 1 :]
        blocks = {}
        pos = 0
        for name, size in header["blocks"]:
            blocks[name] = np.frombuffer(body, dtype="<f8", count=size, offset=pos).astype(np.float64)
            pos += 8 * size
        if pos != len(body):
            raise ValueError("checkpoint body length does not match header")
        return cls(header["descriptor"], blocks)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "PolicyParams":
        return cls.from_bytes(Path(path).read_bytes())
