"""Dense-network substrate: parameters, forward, backward, optimizer.

Everything a trainer needs from a network lives here: Glorot-initialized
parameter stacks, batched forward evaluation with a cache, exact
reverse-mode gradients (including the input gradient, which actor-critic
updates need), and a bias-corrected adaptive-moment optimizer.  Values are
immutable; updates return fresh structures, so checkpointing and rollback
are plain assignments.

The arithmetic itself is delegated to the selected kernel backend; see
``backend``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .backend import BACKEND, kernels

ACTIVATIONS = ("identity", "tanh", "relu")
_ACT_ID = {"identity": 0, "tanh": 1, "relu": 2}


def _as_batch(x: np.ndarray, fan_in: int, what: str) -> np.ndarray:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError(f"{what} must be 2-D (batch, features), got shape {arr.shape}")
    if arr.shape[1] != fan_in:
        raise ValueError(f"{what} width {arr.shape[1]} != expected {fan_in}")
    return arr


@dataclass(frozen=True, eq=False)
class Layer:
    """One affine map plus activation; weights are (out, in), bias (out,)."""

    w: np.ndarray
    b: np.ndarray
    activation: str

    def __post_init__(self) -> None:
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.w.ndim != 2 or self.b.ndim != 1 or self.w.shape[0] != self.b.shape[0]:
            raise ValueError(f"layer shape mismatch: w {self.w.shape}, b {self.b.shape}")
        if not (np.all(np.isfinite(self.w)) and np.all(np.isfinite(self.b))):
            raise ValueError("layer parameters must be finite")

    @property
    def fan_in(self) -> int:
        return self.w.shape[1]

    @property
    def fan_out(self) -> int:
        return self.w.shape[0]


@dataclass(frozen=True, eq=False)
class Network:
    """An ordered stack of layers with consistent inner dimensions."""

    layers: tuple[Layer, ...]

    def __post_init__(self) -> None:
        if not self.layers:
            raise ValueError("network needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.fan_out != b.fan_in:
                raise ValueError(
                    f"layer dimension mismatch: {a.fan_out} feeds {b.fan_in}"
                )

    @property
    def input_size(self) -> int:
        return self.layers[0].fan_in

    @property
    def output_size(self) -> int:
        return self.layers[-1].fan_out

    def layer_sizes(self) -> list[int]:
        return [self.input_size] + [l.fan_out for l in self.layers]

    def num_params(self) -> int:
        return sum(l.w.size + l.b.size for l in self.layers)


@dataclass(frozen=True, eq=False)
class ForwardCache:
    """Input plus per-layer pre/post activations from one forward call."""

    x: np.ndarray
    pres: tuple[np.ndarray, ...]
    posts: tuple[np.ndarray, ...]


@dataclass(frozen=True, eq=False)
class Gradients:
    """Parameter gradients plus the gradient with respect to the input."""

    w: tuple[np.ndarray, ...]
    b: tuple[np.ndarray, ...]
    x: np.ndarray


@dataclass(frozen=True, eq=False)
class AdamState:
    """Moment accumulators, one pair per parameter array, plus step count."""

    m_w: tuple[np.ndarray, ...]
    v_w: tuple[np.ndarray, ...]
    m_b: tuple[np.ndarray, ...]
    v_b: tuple[np.ndarray, ...]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_network(
    layer_sizes: Sequence[int], activation: str = "tanh", rng: np.random.Generator = None
) -> Network:
    """Build a network with Glorot-uniform weights and zero biases.

    Hidden layers use ``activation``; the output layer is identity and its
    weights are scaled by 0.01 so fresh policies start near the middle of
    the action range and fresh critics near zero.
    """
    if rng is None:
        raise ValueError("an explicit rng is required for reproducibility")
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ValueError("need at least input and output sizes")
    if any(s < 1 for s in sizes):
        raise ValueError("layer sizes must be positive")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    layers = []
    last = len(sizes) - 2
    for i, (n_in, n_out) in enumerate(zip(sizes, sizes[1:])):
        limit = np.sqrt(6.0 / (n_in + n_out))
        w = rng.uniform(-limit, limit, size=(n_out, n_in))
        if i == last:
            w = w * 0.01
        layers.append(
            Layer(
                w=np.ascontiguousarray(w, dtype=np.float64),
                b=np.zeros(n_out, dtype=np.float64),
                activation=activation if i < last else "identity",
            )
        )
    return Network(layers=tuple(layers))


def forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Evaluate a batch; returns (output batch, cache for backward)."""
    xb = _as_batch(x, net.input_size, "input")
    ws = [l.w for l in net.layers]
    bs = [l.b for l in net.layers]
    acts = [_ACT_ID[l.activation] for l in net.layers]
    pres, posts = kernels.forward(xb, ws, bs, acts)
    return posts[-1], ForwardCache(x=xb, pres=tuple(pres), posts=tuple(posts))


def backward(net: Network, cache: ForwardCache, output_grad: np.ndarray) -> Gradients:
    """Exact gradients of the scalar whose output-gradient is supplied.

    Gradients sum over the batch; put any averaging factor into
    ``output_grad``.
    """
    gy = _as_batch(output_grad, net.output_size, "output_grad")
    if gy.shape[0] != cache.x.shape[0]:
        raise ValueError(
            f"output_grad batch {gy.shape[0]} != cache batch {cache.x.shape[0]}"
        )
    ws = [l.w for l in net.layers]
    acts = [_ACT_ID[l.activation] for l in net.layers]
    gws, gbs, gx = kernels.backward(
        cache.x, ws, acts, list(cache.pres), list(cache.posts), gy
    )
    return Gradients(w=tuple(gws), b=tuple(gbs), x=gx)


def init_adam(
    net: Network, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8
) -> AdamState:
    """Zero moment accumulators shaped like the network's parameters."""
    return AdamState(
        m_w=tuple(np.zeros_like(l.w) for l in net.layers),
        v_w=tuple(np.zeros_like(l.w) for l in net.layers),
        m_b=tuple(np.zeros_like(l.b) for l in net.layers),
        v_b=tuple(np.zeros_like(l.b) for l in net.layers),
        t=0,
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def adam_step(
    net: Network, grads: Gradients, state: AdamState, lr: float
) -> tuple[Network, AdamState]:
    """One optimizer step; returns the updated network and state.

    Non-finite gradients abort loudly: silently absorbing a NaN here would
    poison every later step.
    """
    for g in list(grads.w) + list(grads.b):
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient passed to adam_step")
    t = state.t + 1
    layers = []
    m_w, v_w, m_b, v_b = [], [], [], []
    for i, layer in enumerate(net.layers):
        pw, mw, vw = kernels.adam_update(
            layer.w.ravel(),
            np.ascontiguousarray(grads.w[i], dtype=np.float64).ravel(),
            state.m_w[i].ravel(),
            state.v_w[i].ravel(),
            t,
            lr,
            state.beta1,
            state.beta2,
            state.eps,
        )
        pb, mb, vb = kernels.adam_update(
            layer.b,
            np.ascontiguousarray(grads.b[i], dtype=np.float64),
            state.m_b[i],
            state.v_b[i],
            t,
            lr,
            state.beta1,
            state.beta2,
            state.eps,
        )
        shape = layer.w.shape
        layers.append(
            Layer(w=pw.reshape(shape), b=pb, activation=layer.activation)
        )
        m_w.append(mw.reshape(shape))
        v_w.append(vw.reshape(shape))
        m_b.append(mb)
        v_b.append(vb)
    new_state = AdamState(
        m_w=tuple(m_w),
        v_w=tuple(v_w),
        m_b=tuple(m_b),
        v_b=tuple(v_b),
        t=t,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
    )
    return Network(layers=tuple(layers)), new_state


def adam_update_array(
    p: np.ndarray,
    g: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adaptive-moment step on a bare array (for stray scalar parameters)."""
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite gradient passed to adam_update_array")
    return kernels.adam_update(p, g, m, v, t, lr, beta1, beta2, eps)


__all__ = [
    "ACTIVATIONS",
    "AdamState",
    "BACKEND",
    "ForwardCache",
    "Gradients",
    "Layer",
    "Network",
    "adam_step",
    "adam_update_array",
    "backward",
    "forward",
    "init_adam",
    "init_network",
]
