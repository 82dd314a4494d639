"""A small float64 numpy kernel: dense layers, an LSTM cell, truncated BPTT and Adam.

Only what the agents need.  Every forward function returns a cache that the
matching backward function consumes; nothing here is stateful except
:class:`ParameterStore`.
"""

from __future__ import annotations

import hashlib
import zipfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonFiniteInput(ValueError):
    pass


class TapeEmpty(ValueError):
    pass


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape=None) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape if shape is not None else (fan_in, fan_out))


class ParameterStore:
    """Named parameters with gradient buffers and Adam moments."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0

    def add(self, name: str, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64).copy()
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.m[name] = np.zeros_like(value)
        self.v[name] = np.zeros_like(value)
        return value

    def __getitem__(self, name: str) -> np.ndarray:
        return self.params[name]

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def grad_norm(self) -> float:
        return float(np.sqrt(sum(float(np.sum(g * g)) for g in self.grads.values())))

    def clip_grad_norm(self, max_norm: float) -> float:
        """Scale gradients so their global L2 norm is at most ``max_norm``."""
        norm = self.grad_norm()
        if max_norm and norm > max_norm:
            scale = max_norm / norm
            for g in self.grads.values():
                g *= scale
        return norm

    def adam_update(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.step += 1
        c1 = 1.0 - beta1**self.step
        c2 = 1.0 - beta2**self.step
        for name, p in self.params.items():
            g = self.grads[name]
            m, v = self.m[name], self.v[name]
            m *= beta1
            m += (1.0 - beta1) * g
            v *= beta2
            v += (1.0 - beta2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
        self.zero_grad()

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for name in self.params:
            out.params[name] = self.params[name].copy()
            out.grads[name] = self.grads[name].copy()
            out.m[name] = self.m[name].copy()
            out.v[name] = self.v[name].copy()
        out.step = self.step
        return out

    def digest(self) -> str:
        """SHA-256 over parameter names and raw bytes."""
        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        """Write an .npz archive; entries carry a fixed timestamp so equal stores give equal bytes."""
        arrays = {"step": np.array(self.step, dtype=np.int64)}
        for name in sorted(self.params):
            arrays[f"param/{name}"] = self.params[name]
            arrays[f"m/{name}"] = self.m[name]
            arrays[f"v/{name}"] = self.v[name]
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
            for key, arr in arrays.items():
                info = zipfile.ZipInfo(key + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
                with zf.open(info, "w", force_zip64=True) as fh:
                    np.lib.format.write_array(fh, np.asarray(arr), allow_pickle=False)

    @classmethod
    def load(cls, path: str | Path) -> "ParameterStore":
        store = cls()
        with np.load(path, allow_pickle=False) as data:
            store.step = int(data["step"])
            for key in data.files:
                if key.startswith("param/"):
                    name = key[len("param/"):]
                    store.add(name, data[key])
                    store.m[name] = data[f"m/{name}"].copy()
                    store.v[name] = data[f"v/{name}"].copy()
        return store

    def equals(self, other: "ParameterStore") -> bool:
        if self.step != other.step or set(self.params) != set(other.params):
            return False
        return all(
            np.array_equal(self.params[n], other.params[n])
            and np.array_equal(self.m[n], other.m[n])
            and np.array_equal(self.v[n], other.v[n])
            for n in self.params
        )


# ---------------------------------------------------------------- activations

def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(logits: np.ndarray) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NonFiniteInput("softmax received non-finite logits")
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - np.max(logits, axis=-1, keepdims=True)
    return z - np.log(np.sum(np.exp(z), axis=-1, keepdims=True))


def entropy(p: np.ndarray) -> float:
    """Shannon entropy in nats; ``0 * log 0`` counts as 0."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise NonFiniteInput("entropy received non-finite probabilities")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def categorical_sample(p: np.ndarray, rng: np.random.Generator) -> int:
    """Inverse-CDF sample from probabilities ``p``."""
    p = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise NonFiniteInput("categorical_sample received non-finite probabilities")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum()}, not 1")
    cdf = np.cumsum(p)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, len(p) - 1)


# ---------------------------------------------------------------- dense

def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray, relu: bool = False):
    if x.shape[-1] != W.shape[0] or b.shape != (W.shape[1],):
        raise ShapeMismatch(f"input {x.shape} does not fit weights {W.shape} / bias {b.shape}")
    z = x @ W + b
    y = np.maximum(z, 0.0) if relu else z
    return y, (x, W, z, relu)


def dense_backward(cache, dy: np.ndarray):
    """Return ``(dx, dW, db)``; batched inputs sum over the leading axis."""
    x, W, z, relu = cache
    if relu:
        dy = dy * (z > 0)
    if x.ndim == 1:
        dW = np.outer(x, dy)
        db = dy.copy()
    else:
        dW = x.T @ dy
        db = dy.sum(axis=0)
    return dy @ W.T, dW, db


# ---------------------------------------------------------------- LSTM

@dataclass
class RecurrentState:
    h: np.ndarray
    c: np.ndarray

    @classmethod
    def zeros(cls, units: int) -> "RecurrentState":
        return cls(np.zeros(units), np.zeros(units))

    def copy(self) -> "RecurrentState":
        return RecurrentState(self.h.copy(), self.c.copy())


def init_lstm(rng: np.random.Generator, n_in: int, units: int, forget_bias: float = 1.0):
    """Weights ``(n_in + units, 4 * units)`` with gate order input, forget, output, candidate."""
    W = np.concatenate(
        [glorot_uniform(rng, n_in, 4 * units), glorot_uniform(rng, units, 4 * units)], axis=0
    )
    b = np.zeros(4 * units)
    b[units:2 * units] = forget_bias
    return W, b


def lstm_step(W: np.ndarray, b: np.ndarray, x: np.ndarray, state: RecurrentState):
    H = state.h.shape[-1]
    if W.shape != (x.shape[-1] + H, 4 * H):
        raise ShapeMismatch(f"LSTM weights {W.shape} do not fit input {x.shape[-1]} + units {H}")
    xh = np.concatenate([x, state.h], axis=-1)
    z = xh @ W + b
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    o = sigmoid(z[..., 2 * H:3 * H])
    g = np.tanh(z[..., 3 * H:])
    c = f * state.c + i * g
    tc = np.tanh(c)
    h = o * tc
    return h, RecurrentState(h, c), (xh, state.c, i, f, o, g, tc, W)


def lstm_backward(cache, dh: np.ndarray, dc: np.ndarray):
    """Backprop one step; return ``(dx, dh_prev, dc_prev, dW, db)``."""
    xh, c_prev, i, f, o, g, tc, W = cache
    H = i.shape[-1]
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    dg = dc * i
    df = dc * c_prev
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g * g)], axis=-1
    )
    if xh.ndim == 1:
        dW = np.outer(xh, dz)
        db = dz.copy()
    else:
        dW = xh.T @ dz
        db = dz.sum(axis=0)
    dxh = dz @ W.T
    n_in = xh.shape[-1] - H
    return dxh[..., :n_in], dxh[..., n_in:], dc_prev, dW, db


# ---------------------------------------------------------------- networks

class RecurrentActorCritic:
    """LSTM torso shared by a policy head (logits) and a value head (scalar)."""

    def __init__(self, n_in: int, n_actions: int, units: int = 128, rng: np.random.Generator | None = None,
                 store: ParameterStore | None = None):
        self.n_in, self.n_actions, self.units = n_in, n_actions, units
        if store is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            store = ParameterStore()
            W, b = init_lstm(rng, n_in, units)
            store.add("lstm_W", W)
            store.add("lstm_b", b)
            store.add("pi_W", glorot_uniform(rng, units, n_actions))
            store.add("pi_b", np.zeros(n_actions))
            store.add("v_W", glorot_uniform(rng, units, 1))
            store.add("v_b", np.zeros(1))
        self.store = store
        if store["lstm_W"].shape != (n_in + units, 4 * units) or store["pi_W"].shape != (units, n_actions):
            raise ShapeMismatch("parameter store does not match the network dimensions")

    def initial_state(self) -> RecurrentState:
        return RecurrentState.zeros(self.units)

    def step(self, x: np.ndarray, state: RecurrentState):
        """One time step: ``(logits, value, next_state, cache)``."""
        p = self.store.params
        if x.shape != (self.n_in,):
            raise ShapeMismatch(f"expected input of length {self.n_in}, got {x.shape}")
        h, nxt, lcache = lstm_step(p["lstm_W"], p["lstm_b"], x, state)
        logits, pcache = dense_forward(p["pi_W"], p["pi_b"], h)
        value, vcache = dense_forward(p["v_W"], p["v_b"], h)
        return logits, float(value[0]), nxt, (lcache, pcache, vcache)

    def backward(self, tape: list, dlogits: list, dvalues: list) -> None:
        """Accumulate gradients for a segment.

        The state entering the first step of ``tape`` is treated as a
        constant, so gradients never cross the segment boundary.
        """
        if not tape:
            raise TapeEmpty("no recorded steps to differentiate")
        g = self.store.grads
        dh_next = np.zeros(self.units)
        dc_next = np.zeros(self.units)
        for (lcache, pcache, vcache), dl, dv in zip(reversed(tape), reversed(dlogits), reversed(dvalues)):
            dh_p, dW, db = dense_backward(pcache, np.asarray(dl, dtype=np.float64))
            g["pi_W"] += dW
            g["pi_b"] += db
            dh_v, dW, db = dense_backward(vcache, np.array([dv], dtype=np.float64))
            g["v_W"] += dW
            g["v_b"] += db
            _, dh_next, dc_next, dW, db = lstm_backward(lcache, dh_p + dh_v + dh_next, dc_next)
            g["lstm_W"] += dW
            g["lstm_b"] += db


class MLP:
    """``dense(hidden, ReLU) -> dense(out)`` operating on batches."""

    def __init__(self, n_in: int, n_out: int, hidden: int = 128, rng: np.random.Generator | None = None,
                 store: ParameterStore | None = None):
        if store is None:
            rng = rng if rng is not None else np.random.default_rng(0)
            store = ParameterStore()
            store.add("W1", glorot_uniform(rng, n_in, hidden))
            store.add("b1", np.zeros(hidden))
            store.add("W2", glorot_uniform(rng, hidden, n_out))
            store.add("b2", np.zeros(n_out))
        self.store = store

    @classmethod
    def from_store(cls, store: ParameterStore) -> "MLP":
        return cls(0, 0, store=store)

    def forward(self, x: np.ndarray):
        p = self.store.params
        h, c1 = dense_forward(p["W1"], p["b1"], x, relu=True)
        y, c2 = dense_forward(p["W2"], p["b2"], h)
        return y, (c1, c2)

    def backward(self, cache, dy: np.ndarray) -> None:
        c1, c2 = cache
        g = self.store.grads
        dh, dW, db = dense_backward(c2, dy)
        g["W2"] += dW
        g["b2"] += db
        _, dW, db = dense_backward(c1, dh)
        g["W1"] += dW
        g["b1"] += db
