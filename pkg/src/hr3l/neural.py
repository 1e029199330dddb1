"""Small numpy substrate: dense networks with manual backprop, Adam, EMA targets.

Parameters are kept as flat lists of float64 arrays ``[W0, b0, W1, b1, ...]``
with ``W`` shaped ``(fan_in, fan_out)``; every optimizer and checker works on
such lists so models built from several pieces can be handled uniformly.
"""
from __future__ import annotations

import ctypes
import ctypes.util
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


_M_TRIM_THRESHOLD, _M_MMAP_THRESHOLD = -1, -3
_allocator_tuned = False


def tune_allocator(threshold: int = 1 << 28) -> bool:
    """Keep large temporaries on the glibc heap instead of fresh mmaps.

    Batch activations are a few MB each; by default every one is a new mmap
    and its page faults cost more than the matmul. Numerics are unaffected.
    Returns False where glibc's ``mallopt`` is unavailable.
    """
    global _allocator_tuned
    if _allocator_tuned:
        return True
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, threshold) and libc.mallopt(_M_TRIM_THRESHOLD, 2 * threshold)
    except (OSError, AttributeError):
        return False
    _allocator_tuned = bool(ok)
    return _allocator_tuned


class DimensionMismatch(ValueError):
    pass


def _relu(x):
    return np.maximum(x, 0.0)


_ACT = {
    "relu": _relu,
    "tanh": np.tanh,
    "identity": lambda x: x,
}


class Mlp:
    """Fully connected network with one activation tag per layer."""

    def __init__(
        self,
        layer_dims: Sequence[int],
        activations: Sequence[str] | None = None,
        rng: np.random.Generator | None = None,
        hidden: str = "relu",
        out_scale: float = 1.0,
    ):
        self.layer_dims = list(layer_dims)
        n = len(self.layer_dims) - 1
        if n < 1:
            raise ValueError("need at least one layer")
        if activations is None:
            activations = [hidden] * (n - 1) + ["identity"]
        if len(activations) != n:
            raise ValueError("one activation per layer")
        for a in activations:
            if a not in _ACT:
                raise ValueError(f"unknown activation {a!r}")
        self.activations = list(activations)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params: list[np.ndarray] = []
        for i, (fan_in, fan_out) in enumerate(zip(self.layer_dims[:-1], self.layer_dims[1:])):
            bound = 1.0 / np.sqrt(fan_in)
            W = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            b = rng.uniform(-bound, bound, size=fan_out)
            if i == n - 1:
                W *= out_scale
                b *= out_scale
            self.params += [W, b]

    @property
    def n_layers(self) -> int:
        return len(self.activations)

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        new = object.__new__(Mlp)
        new.layer_dims = list(self.layer_dims)
        new.activations = list(self.activations)
        new.params = [p.copy() for p in self.params]
        return new

    def set_params(self, params: Sequence[np.ndarray]) -> None:
        if len(params) != len(self.params):
            raise DimensionMismatch("parameter list length differs")
        for old, new in zip(self.params, params):
            if old.shape != np.shape(new):
                raise DimensionMismatch(f"{np.shape(new)} != {old.shape}")
        self.params = [np.array(p, dtype=np.float64) for p in params]

    def __call__(self, x):
        return self.forward(x)[0]

    def forward(self, x):
        """Return ``(y, cache)``; accepts a single vector or a batch of rows."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.layer_dims[0]:
            raise DimensionMismatch(f"input dim {x.shape[-1]} != {self.layer_dims[0]}")
        inputs, pre = [], []
        h = x
        for i, act in enumerate(self.activations):
            W, b = self.params[2 * i], self.params[2 * i + 1]
            inputs.append(h)
            a = h @ W + b
            pre.append(a)
            h = _ACT[act](a)
        return h, (inputs, pre, h)

    def backward(self, cache, dy, input_grad: bool = True):
        """Reverse-mode pass; returns ``(param_grads, dx)``.

        For batched inputs the parameter gradients are summed over rows.
        With ``input_grad=False`` the last product is skipped and dx is None.
        """
        inputs, pre, out = cache
        g = np.asarray(dy, dtype=np.float64)
        grads: list[np.ndarray] = [None] * len(self.params)
        for i in reversed(range(self.n_layers)):
            act = self.activations[i]
            if act == "relu":
                g = g * (pre[i] > 0)
            elif act == "tanh":
                # the next layer's input is this layer's output
                h = out if i == self.n_layers - 1 else inputs[i + 1]
                g = g * (1.0 - h * h)
            x_in = inputs[i]
            if x_in.ndim == 1:
                grads[2 * i] = np.outer(x_in, g)
                grads[2 * i + 1] = g.copy()
            else:
                grads[2 * i] = x_in.T @ g
                grads[2 * i + 1] = g.sum(axis=0)
            if i > 0 or input_grad:
                g = g @ self.params[2 * i].T
            else:
                g = None
        return grads, g


def forward(net: Mlp, x):
    return net.forward(x)


def backward(net: Mlp, cache, dy):
    return net.backward(cache, dy)


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params, lr: float = 1e-3, **kw) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr=lr, **kw)


def adam_step(params, grads, st: AdamState):
    """Bias-corrected Adam. Returns new parameter list and new state."""
    t = st.step + 1
    b1, b2 = st.beta1, st.beta2
    m = [b1 * mi + (1.0 - b1) * g for mi, g in zip(st.m, grads)]
    v = [b2 * vi + (1.0 - b2) * g * g for vi, g in zip(st.v, grads)]
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    new = [p - st.lr * (mi / c1) / (np.sqrt(vi / c2) + st.eps) for p, mi, vi in zip(params, m, v)]
    return new, AdamState(m, v, t, st.lr, b1, b2, st.eps)


def adam_step_inplace(params, grads, st: AdamState) -> AdamState:
    """Same arithmetic as `adam_step`, writing into `params` and the moment buffers."""
    t = st.step + 1
    b1, b2 = st.beta1, st.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, st.m, st.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
    st.step = t
    return st


def global_norm(grads) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_grad_norm(grads, max_norm: float):
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        grads = [g * scale for g in grads]
    return grads, norm


@dataclass
class TargetPair:
    online: list
    target: list
    rho: float = 0.99

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")
        for a, b in zip(self.online, self.target):
            if np.shape(a) != np.shape(b):
                raise DimensionMismatch("online and target shapes differ")


def ema_update(tp: TargetPair) -> TargetPair:
    """target <- (1 - rho) * online + rho * target, elementwise."""
    rho = tp.rho
    target = [(1.0 - rho) * a + rho * b for a, b in zip(tp.online, tp.target)]
    return TargetPair(tp.online, target, rho)


def grad_check(
    lossfn: Callable,
    params: list,
    eps: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `lossfn(params)` must return ``(loss, grads)``. With `max_coords` set, a
    random subset of that many coordinates is checked.
    """
    params = [np.array(p, dtype=np.float64) for p in params]
    _, analytic = lossfn(params)
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng if rng is not None else np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    worst = 0.0
    for i, j in coords:
        flat = params[i].reshape(-1)
        orig = flat[j]
        flat[j] = orig + eps
        lp = lossfn(params)[0]
        flat[j] = orig - eps
        lm = lossfn(params)[0]
        flat[j] = orig
        num = (lp - lm) / (2.0 * eps)
        ana = float(np.asarray(analytic[i]).reshape(-1)[j])
        err = abs(ana - num) / max(abs(ana), abs(num), floor)
        worst = max(worst, err)
    return worst
