"""Small numpy neural-network toolkit with hand-written backward passes.

Parameters of a model live in one flat ``dict[str, np.ndarray]`` so that the
optimizer, the gradient checker and the snapshot archive can all treat a
model uniformly.  Layers only hold parameter *names* and look the arrays up in
that dict, which keeps in-place updates by :class:`Adam` visible everywhere.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

Params = dict[str, np.ndarray]

INIT_SCALE = 0.05


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x, axis: int = -1):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] == 0:
        raise ValueError("softmax of an empty vector")
    z = np.exp(x - x.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def _relu(z):
    return np.maximum(z, 0.0)


ACTIVATIONS: dict[str, Callable] = {
    "relu": _relu,
    "tanh": np.tanh,
    "sigmoid": sigmoid,
    "identity": lambda z: z,
    "softmax": softmax,
}


def activation_backward(name: str, z, y, dy):
    """Gradient w.r.t. the pre-activation `z` given output `y` and upstream `dy`."""
    if name == "relu":
        return dy * (z > 0)
    if name == "tanh":
        return dy * (1.0 - y * y)
    if name == "sigmoid":
        return dy * y * (1.0 - y)
    if name == "identity":
        return dy
    if name == "softmax":
        return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))
    raise ValueError(f"unknown activation {name!r}")


class Dense:
    """``activation(x @ W.T + b)`` over a batch of row vectors."""

    def __init__(self, params: Params, name: str, in_dim: int, out_dim: int,
                 activation: str = "relu", rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.name = name
        self.in_dim, self.out_dim = in_dim, out_dim
        self.activation = activation
        self.params = params
        if f"{name}.W" not in params:
            rng = rng if rng is not None else np.random.default_rng(0)
            params[f"{name}.W"] = rng.uniform(-INIT_SCALE, INIT_SCALE, (out_dim, in_dim))
            params[f"{name}.b"] = np.zeros(out_dim)

    @property
    def W(self) -> np.ndarray:
        return self.params[f"{self.name}.W"]

    @property
    def b(self) -> np.ndarray:
        return self.params[f"{self.name}.b"]

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.in_dim:
            raise ValueError(f"{self.name}: expected input width {self.in_dim}, got {x.shape[-1]}")
        z = x @ self.W.T + self.b
        y = ACTIVATIONS[self.activation](z)
        return y, (x, z, y)

    def backward(self, cache, dy, grads: Params):
        """Accumulate dW, db into `grads`; return the gradient w.r.t. the input."""
        if cache is None:
            raise RuntimeError(f"{self.name}: backward called without a recorded forward pass")
        x, z, y = cache
        dz = activation_backward(self.activation, z, y, dy)
        x2 = x.reshape(-1, self.in_dim)
        dz2 = dz.reshape(-1, self.out_dim)
        _acc(grads, f"{self.name}.W", dz2.T @ x2)
        _acc(grads, f"{self.name}.b", dz2.sum(axis=0))
        return dz @ self.W


class Embedding:
    def __init__(self, params: Params, name: str, rows: int, dim: int,
                 rng: np.random.Generator | None = None):
        self.name = name
        self.rows, self.dim = rows, dim
        self.params = params
        if name not in params:
            rng = rng if rng is not None else np.random.default_rng(0)
            params[name] = rng.uniform(-INIT_SCALE, INIT_SCALE, (rows, dim))

    @property
    def table(self) -> np.ndarray:
        return self.params[self.name]

    def forward(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.rows):
            raise IndexError(f"{self.name}: id out of range [0, {self.rows})")
        return self.table[ids]

    def backward(self, ids, drows, grads: Params) -> None:
        g = grads.get(self.name)
        if g is None:
            g = grads[self.name] = np.zeros_like(self.table)
        np.add.at(g, np.asarray(ids, dtype=np.int64), drows)


def _acc(grads: Params, key: str, value) -> None:
    if key in grads:
        grads[key] += value
    else:
        grads[key] = np.array(value, dtype=np.float64)


def init_uniform(params: Params, rng: np.random.Generator, scale: float = INIT_SCALE) -> None:
    """Re-draw weights and embeddings from U(-scale, scale); zero the biases."""
    for key in sorted(params):
        if key.endswith(".b"):
            params[key][...] = 0.0
        else:
            params[key][...] = rng.uniform(-scale, scale, params[key].shape)


@dataclass
class Adam:
    """Adam with bias correction and decoupled L2 shrinkage."""

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    l2: float = 1e-6
    t: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def step(self, params: Params, grads: Params) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for key, p in params.items():
            g = grads.get(key)
            if g is None:
                g = np.zeros_like(p)
            elif g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {key} {p.shape}")
            if key not in self.m:
                self.m[key] = np.zeros_like(p)
                self.v[key] = np.zeros_like(p)
            m, v = self.m[key], self.v[key]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= (self.lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            if self.l2:
                p -= self.lr * self.l2 * p


def adam_step(state: Adam, params: Params, grads: Params) -> Params:
    state.step(params, grads)
    return params


def finite_difference(loss_fn: Callable[[], float], params: Params, key: str,
                      h: float = 1e-5, index=None) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. ``params[key]``.

    Perturbs every entry (or only those in `index`, an iterable of flat
    positions) in place and restores it afterwards.
    """
    p = params[key]
    flat = p.reshape(-1)
    grad = np.full(flat.shape, np.nan)
    positions = range(flat.size) if index is None else index
    for i in positions:
        old = flat[i]
        flat[i] = old + h
        up = loss_fn()
        flat[i] = old - h
        down = loss_fn()
        flat[i] = old
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(p.shape)


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps round-off on gradients that are essentially zero from
    dominating the ratio.
    """
    analytic = np.asarray(analytic)
    numeric = np.asarray(numeric)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def gradient_check(loss_fn: Callable[[], float], grads: Params, params: Params,
                   h: float = 1e-5, keys=None) -> dict[str, float]:
    """Max relative error between `grads` and central differences, per tensor."""
    report = {}
    for key in keys if keys is not None else sorted(params):
        num = finite_difference(loss_fn, params, key, h)
        ana = grads.get(key, np.zeros_like(params[key]))
        report[key] = float(relative_error(ana, num).max())
    return report


def save_archive(path, params: Params, header: dict | None = None) -> None:
    """Write a self-describing ``.npz``: one entry per tensor plus a JSON header."""
    payload = {k: np.ascontiguousarray(v) for k, v in params.items()}
    payload["__header__"] = np.array(json.dumps(header or {}, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_archive(path) -> tuple[Params, dict]:
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__header__"])) if "__header__" in data.files else {}
        params = {k: data[k].astype(np.float64) for k in data.files if k != "__header__"}
    return params, header
