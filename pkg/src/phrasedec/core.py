"""Dense numeric helpers, trainable parameters, Adam and a finite-difference gradient check."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

INIT_SCALE = 0.08


class ShapeError(ValueError):
    pass


def affine(W: np.ndarray, x: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """W.x (+ b). `x` may be a single vector or a (batch, cols) matrix of row vectors."""
    if W.ndim != 2 or x.shape[-1] != W.shape[1]:
        raise ShapeError(f"affine: W{W.shape} incompatible with x{x.shape}")
    out = x @ W.T
    if b is not None:
        if b.shape != (W.shape[0],):
            raise ShapeError(f"affine: bias{b.shape} incompatible with W{W.shape}")
        out = out + b
    return out


def tanh_vec(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def sigmoid_vec(x: np.ndarray) -> np.ndarray:
    # exp(-|x|) never overflows; the two branches are selected without masked indexing
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0, e) / (1.0 + e)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, stabilised by max subtraction."""
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / np.sum(ex, axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits, axis=-1, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


class Parameter:
    """A trainable tensor with a same-shape gradient accumulator.

    `sparse_rows` marks embedding tables: Adam only touches rows whose
    gradient is non-zero in a given step.
    """

    __slots__ = ("name", "value", "grad", "sparse_rows")

    def __init__(self, name: str, value: np.ndarray, sparse_rows: bool = False):
        self.name = name
        self.value = np.ascontiguousarray(value, dtype=np.float64)
        self.grad = np.zeros_like(self.value)
        self.sparse_rows = sparse_rows

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    def zero_grad(self) -> None:
        self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def zero_grads(params: Iterable[Parameter]) -> None:
    for p in params:
        p.zero_grad()


def init_uniform(rng: np.random.Generator, shape: tuple[int, ...], scale: float = INIT_SCALE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # per-parameter update counts drive bias correction, since subsets are
    # updated on different schedules
    steps: dict[str, int] = field(default_factory=dict)


class UninitializedStateError(RuntimeError):
    pass


def adam_step(params: Iterable[Parameter], state: AdamState | None) -> None:
    """Bias-corrected Adam on `params` only. Grads are left for the caller to zero."""
    if state is None:
        raise UninitializedStateError("adam_step called without an AdamState")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for p in params:
        if p.name not in state.m:
            state.m[p.name] = np.zeros_like(p.value)
            state.v[p.name] = np.zeros_like(p.value)
            state.steps[p.name] = 0
        k = state.steps[p.name] + 1
        state.steps[p.name] = k
        m, v = state.m[p.name], state.v[p.name]
        c1 = 1.0 - b1**k
        c2 = 1.0 - b2**k
        if p.sparse_rows:
            rows = np.flatnonzero(np.any(p.grad != 0.0, axis=1))
            if rows.size == 0:
                continue
            g = p.grad[rows]
            m[rows] = b1 * m[rows] + (1.0 - b1) * g
            v[rows] = b2 * v[rows] + (1.0 - b2) * g * g
            p.value[rows] -= state.lr * (m[rows] / c1) / (np.sqrt(v[rows] / c2) + state.eps)
        else:
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class NondeterministicLossError(RuntimeError):
    pass


def finite_difference_check(
    loss_fn: Callable[[], float],
    params: Iterable[Parameter],
    eps: float = 1e-4,
    max_coords: int = 40,
    seed: int = 0,
    floor: float = 1e-5,
) -> float:
    """Worst relative error between `p.grad` and central differences of `loss_fn`.

    `p.grad` must already hold the analytic gradient. Up to `max_coords`
    coordinates per parameter are sampled. Relative error is
    |a - n| / max(|a|, |n|, floor).
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps={eps} outside [1e-7, 1e-4]")
    params = list(params)
    analytic = {id(p): p.grad.copy() for p in params}
    base = loss_fn()
    if loss_fn() != base:
        raise NondeterministicLossError("loss_fn returned different values for identical parameters")
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords else rng.choice(n, size=max_coords, replace=False)
        a_flat = analytic[id(p)].reshape(-1)
        for i in coords:
            old = flat[i]
            flat[i] = old + eps
            up = loss_fn()
            flat[i] = old - eps
            down = loss_fn()
            flat[i] = old
            num = (up - down) / (2.0 * eps)
            a = a_flat[i]
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst = max(worst, err)
    return worst
