"""Small numpy neural-net kit with hand-written backward passes.

Every forward function works on a single vector or on a batch whose rows are
examples. Backward functions return gradients in the same layout as the
arguments they differentiate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, MutableMapping, NamedTuple

import numpy as np


class DenseParams(NamedTuple):
    W: np.ndarray  # (out, in)
    b: np.ndarray  # (out,)


def _check_dense(p: DenseParams, x: np.ndarray) -> None:
    if p.W.ndim != 2 or p.b.shape != (p.W.shape[0],):
        raise ValueError(f"inconsistent dense params: W{p.W.shape}, b{p.b.shape}")
    if x.shape[-1] != p.W.shape[1]:
        raise ValueError(f"dense input width {x.shape[-1]} != {p.W.shape[1]}")


def dense(p: DenseParams, x: np.ndarray) -> np.ndarray:
    _check_dense(p, x)
    return x @ p.W.T + p.b


def dense_grad(p: DenseParams, x: np.ndarray, dy: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Return ``(dW, db, dx)`` for ``y = W x + b``; batch gradients are summed."""
    _check_dense(p, x)
    if x.ndim == 1:
        return np.outer(dy, x), dy.copy(), p.W.T @ dy
    return dy.T @ x, dy.sum(axis=0), dy @ p.W


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_grad(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(x > 0.0, dy, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- LSTM --------------------------------------------------------------------


class LstmParams(NamedTuple):
    """Stacked gate weights acting on ``[x; h_prev]``.

    Row blocks of ``W`` and ``b`` are, in order: input gate, forget gate,
    output gate, candidate.
    """

    W: np.ndarray  # (4H, D + H)
    b: np.ndarray  # (4H,)

    @property
    def hidden_size(self) -> int:
        return self.W.shape[0] // 4

    @property
    def input_size(self) -> int:
        return self.W.shape[1] - self.hidden_size


class LstmCache(NamedTuple):
    xh: np.ndarray
    c_prev: np.ndarray
    i: np.ndarray
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray
    tanh_c: np.ndarray


def _check_lstm(p: LstmParams, x, h_prev, c_prev) -> None:
    H, D = p.hidden_size, p.input_size
    if p.W.shape[0] != 4 * H or p.b.shape != (4 * H,) or D <= 0:
        raise ValueError(f"inconsistent LSTM params: W{p.W.shape}, b{p.b.shape}")
    if x.shape[-1] != D or h_prev.shape[-1] != H or c_prev.shape[-1] != H:
        raise ValueError(
            f"LSTM shape mismatch: x{x.shape}, h{h_prev.shape}, c{c_prev.shape} for D={D}, H={H}"
        )


def lstm_step(p: LstmParams, x, h_prev, c_prev) -> tuple[np.ndarray, np.ndarray, LstmCache]:
    """One cell update. Returns ``(h, c, cache)``; pass the cache to :func:`lstm_step_backward`."""
    _check_lstm(p, x, h_prev, c_prev)
    H = p.hidden_size
    xh = np.concatenate([x, h_prev], axis=-1)
    a = xh @ p.W.T + p.b
    i = sigmoid(a[..., :H])
    f = sigmoid(a[..., H:2 * H])
    o = sigmoid(a[..., 2 * H:3 * H])
    g = np.tanh(a[..., 3 * H:])
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, LstmCache(xh, c_prev, i, f, o, g, tanh_c)


def lstm_step_backward(p: LstmParams, cache: LstmCache, dh, dc):
    """Backprop one cell. Returns ``(dW, db, dx, dh_prev, dc_prev)``."""
    H, D = p.hidden_size, p.input_size
    xh, c_prev, i, f, o, g, tanh_c = cache
    do = dh * tanh_c
    dc = dc + dh * o * (1.0 - tanh_c**2)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dc_prev = dc * f
    da = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g**2)], axis=-1
    )
    if xh.ndim == 1:
        dW, db = np.outer(da, xh), da
    else:
        dW, db = da.T @ xh, da.sum(axis=0)
    dxh = da @ p.W
    return dW, db, dxh[..., :D], dxh[..., D:], dc_prev


@dataclass
class LstmTape:
    caches: list[LstmCache]
    mask: np.ndarray  # (B, T)


def lstm_forward(p: LstmParams, xs: np.ndarray, mask: np.ndarray | None = None) -> tuple[np.ndarray, LstmTape]:
    """Run a right-padded batch ``xs`` of shape ``(B, T, D)`` from zero state.

    Where ``mask[b, t]`` is 0 the state is carried through unchanged, so the
    returned ``(B, H)`` hidden state is the one after each row's last valid step.
    """
    B, T, _ = xs.shape
    H = p.hidden_size
    if mask is None:
        mask = np.ones((B, T))
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    caches = []
    for t in range(T):
        h_new, c_new, cache = lstm_step(p, xs[:, t], h, c)
        m = mask[:, t:t + 1]
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
        caches.append(cache)
    return h, LstmTape(caches, mask)


def lstm_backward(p: LstmParams, tape: LstmTape, dh_final: np.ndarray):
    """Backprop through :func:`lstm_forward`. Returns ``(dW, db, dxs)``."""
    T = len(tape.caches)
    B, H = dh_final.shape
    dW = np.zeros_like(p.W)
    db = np.zeros_like(p.b)
    dxs = np.zeros((B, T, p.input_size))
    dh = dh_final.copy()
    dc = np.zeros((B, H))
    for t in reversed(range(T)):
        m = tape.mask[:, t:t + 1]
        dW_t, db_t, dx, dh_prev, dc_prev = lstm_step_backward(p, tape.caches[t], m * dh, m * dc)
        dW += dW_t
        db += db_t
        dxs[:, t] = dx
        dh = dh_prev + (1.0 - m) * dh
        dc = dc_prev + (1.0 - m) * dc
    return dW, db, dxs


# -- loss --------------------------------------------------------------------


def mse(pred: np.ndarray, target: np.ndarray) -> float:
    """Squared L2 error per example, averaged over the batch."""
    pred = np.atleast_2d(pred)
    target = np.atleast_2d(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return float(np.mean(np.sum((pred - target) ** 2, axis=1)))


def mse_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    if np.shape(pred) != np.shape(target):
        raise ValueError(f"shape mismatch: {np.shape(pred)} vs {np.shape(target)}")
    batch = np.atleast_2d(pred).shape[0]
    return 2.0 * (pred - target) / batch


# -- optimizer ---------------------------------------------------------------


@dataclass
class RMSprop:
    """``acc = rho*acc + (1-rho)*g^2``; ``theta -= lr * g / (sqrt(acc) + eps)``.

    ``clip`` rescales the whole gradient to at most that global L2 norm.
    """

    lr: float = 1e-4
    rho: float = 0.9
    eps: float = 1e-8
    clip: float | None = None
    acc: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: MutableMapping[str, np.ndarray], grads: Mapping[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
        scale = 1.0
        if self.clip is not None:
            norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > self.clip:
                scale = self.clip / norm
        for name, g in grads.items():
            if scale != 1.0:
                g = g * scale
            acc = self.acc.get(name)
            if acc is None:
                acc = self.acc[name] = np.zeros_like(params[name])
            acc *= self.rho
            acc += (1.0 - self.rho) * g * g
            params[name] -= self.lr * g / (np.sqrt(acc) + self.eps)


# -- init --------------------------------------------------------------------


def glorot_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def init_params(shapes: Mapping[str, tuple[int, ...]], seed: int | np.random.Generator) -> dict[str, np.ndarray]:
    """Initialize parameters from a ``name -> shape`` spec.

    2-D shapes get Glorot-uniform weights, 1-D shapes zeros. Names ending in
    ``lstm*.b`` get the forget-gate block (second quarter) set to 1. Parameters
    are drawn in the order of ``shapes``.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    out = {}
    for name, shape in shapes.items():
        if len(shape) == 2:
            out[name] = glorot_uniform(rng, *shape)
        else:
            b = np.zeros(shape)
            if name.startswith("lstm") and name.endswith(".b"):
                H = shape[0] // 4
                b[H:2 * H] = 1.0
            out[name] = b
    return out
