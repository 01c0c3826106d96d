"""Reverse-mode differentiation over 2-D float64 arrays.

Operations record onto the innermost active :class:`Tape` (held in a context
variable, so each thread or task has its own). Outside a tape, or when no input
requires a gradient, operations run forward-only.

    >>> with Tape() as tape:
    ...     w = Tensor([[2.0]], requires_grad=True)
    ...     loss = (w * w).sum()
    ...     backward(loss)
    >>> w.grad
    array([[4.]])
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import CsrMatrix

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "duallaguerre_tape", default=None
)


class NonFiniteError(FloatingPointError):
    """A forward value, gradient or loss became NaN/inf."""


class Tensor:
    __slots__ = ("value", "requires_grad", "grad", "tape_id", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str = ""):
        v = np.array(value, dtype=np.float64)
        if v.ndim == 0:
            v = v.reshape(1, 1)
        elif v.ndim == 1:
            v = v.reshape(1, -1)
        elif v.ndim != 2:
            raise ValueError(f"tensors are 2-D, got shape {v.shape}")
        self.value = v
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape_id: int | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], None] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def item(self) -> float:
        if self.value.size != 1:
            raise ValueError("item() needs a single-element tensor")
        return float(self.value[0, 0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        tag = f" '{self.name}'" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self):
        return tsum(self)


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Recording order is a valid topological order, so :meth:`backward` walks it
    in reverse and visits every node once.
    """

    nodes: list[Tensor] = field(default_factory=list)
    _token: contextvars.Token | None = field(default=None, repr=False)

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc):
        _ACTIVE_TAPE.reset(self._token)
        self._token = None
        return False

    def record(self, out: Tensor) -> None:
        out.tape_id = len(self.nodes)
        self.nodes.append(out)

    def backward(self, loss: Tensor) -> None:
        if loss.shape != (1, 1):
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if loss.tape_id is None or loss.tape_id >= len(self.nodes) or self.nodes[loss.tape_id] is not loss:
            raise ValueError("loss was not recorded on this tape")
        for node in self.nodes:
            node.grad = None
        loss.grad = np.ones((1, 1))
        for node in reversed(self.nodes[: loss.tape_id + 1]):
            if node.grad is not None:
                node._backward(node.grad)

    def clear(self) -> None:
        for node in self.nodes:
            node._parents = ()
            node._backward = None
        self.nodes.clear()


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE.get()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if g.shape != t.value.shape:
        g = _unbroadcast(g, t.value.shape)
    t.grad = g.copy() if t.grad is None else t.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _make(value: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.tape_id = None
    out.name = ""
    out._parents = ()
    out._backward = None
    tape = _ACTIVE_TAPE.get()
    out.requires_grad = tape is not None and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
        tape.record(out)
    return out


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every ancestor of `loss` that requires a gradient.

    Leaf gradients accumulate across calls; zero them between passes.
    """
    tape = _ACTIVE_TAPE.get()
    if tape is None:
        raise ValueError("backward() must run inside the tape that recorded the loss")
    tape.backward(loss)


# --------------------------------------------------------------------------
# elementwise / structural
# --------------------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(a.value + b.value, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)

    def bw(g):
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(a.value - b.value, (a, b), bw)


def mul(a, b) -> Tensor:
    """Elementwise product; either side may be a (1, 1) scalar or a (1, cols) row."""
    a, b = _as_tensor(a), _as_tensor(b)
    av, bv = a.value, b.value

    def bw(g):
        _accumulate(a, g * bv)
        _accumulate(b, g * av)

    return _make(av * bv, (a, b), bw)


def tsum(x: Tensor) -> Tensor:
    def bw(g):
        _accumulate(x, np.broadcast_to(g, x.value.shape))

    return _make(np.array([[x.value.sum()]]), (x,), bw)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch {a.shape} @ {b.shape}")
    av, bv = a.value, b.value

    def bw(g):
        if a.requires_grad:
            _accumulate(a, g @ bv.T)
        if b.requires_grad:
            _accumulate(b, av.T @ g)

    return _make(av @ bv, (a, b), bw)


def spmm(s: CsrMatrix, x: Tensor) -> Tensor:
    """Constant sparse operator times dense tensor."""
    if s.num_cols != x.shape[0]:
        raise ValueError(f"spmm shape mismatch {s.shape} @ {x.shape}")

    def bw(g):
        _accumulate(x, s.rmatmul(g))

    return _make(s.matmul(x.value), (x,), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.value > 0

    def bw(g):
        _accumulate(x, g * mask)

    return _make(np.where(mask, x.value, 0.0), (x,), bw)


def dropout(x: Tensor, p: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when not training or when ``p == 0``."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout needs an explicit generator")
    scale = (rng.random(x.shape) >= p) / (1.0 - p)

    def bw(g):
        _accumulate(x, g * scale)

    return _make(x.value * scale, (x,), bw)


def layer_norm(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row standardization (population variance), no affine parameters."""
    v = x.value
    mu = v.mean(axis=1, keepdims=True)
    xc = v - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=1, keepdims=True) + eps)
    y = xc * inv

    def bw(g):
        gm = g.mean(axis=1, keepdims=True)
        gy = (g * y).mean(axis=1, keepdims=True)
        _accumulate(x, inv * (g - gm - y * gy))

    return _make(y, (x,), bw)


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ValueError("concat_cols needs at least one part")
    rows = parts[0].shape[0]
    if any(p.shape[0] != rows for p in parts):
        raise ValueError(f"row mismatch in concat_cols: {[p.shape for p in parts]}")
    if len(parts) == 1:
        return parts[0]
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            _accumulate(p, g[:, lo:hi])

    return _make(np.concatenate([p.value for p in parts], axis=1), parts, bw)


def log_softmax(x: Tensor) -> Tensor:
    v = x.value
    shifted = v - v.max(axis=1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    sm = np.exp(out)

    def bw(g):
        _accumulate(x, g - sm * g.sum(axis=1, keepdims=True))

    return _make(out, (x,), bw)


def nll(log_probs: Tensor, labels, mask) -> Tensor:
    """Mean negative log-likelihood over the rows selected by `mask` (ids or booleans)."""
    idx = _mask_ids(mask, log_probs.shape[0])
    lab = np.asarray(labels)[idx]
    picked = log_probs.value[idx, lab]

    def bw(g):
        full = np.zeros_like(log_probs.value)
        np.add.at(full, (idx, lab), -g[0, 0] / idx.size)
        _accumulate(log_probs, full)

    return _make(np.array([[-picked.mean()]]), (log_probs,), bw)


def log_softmax_nll(logits: Tensor, labels, mask) -> Tensor:
    return nll(log_softmax(logits), labels, mask)


def _mask_ids(mask, rows: int) -> np.ndarray:
    m = np.asarray(mask)
    idx = np.flatnonzero(m) if m.dtype == bool else m.astype(np.int64).ravel()
    if idx.size == 0:
        raise ValueError("empty mask")
    if idx.max() >= rows:
        raise ValueError(f"mask id {idx.max()} exceeds {rows} rows")
    return idx


def softplus(x: Tensor) -> Tensor:
    """ln(1 + e^x) without overflow; gradient is the logistic sigmoid."""
    v = x.value
    out = np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))
    sig = np.exp(-np.logaddexp(0.0, -v))

    def bw(g):
        _accumulate(x, g * sig)

    return _make(out, (x,), bw)


def square_sum(x: Tensor) -> Tensor:
    """sum(x**2) as a scalar."""
    v = x.value

    def bw(g):
        _accumulate(x, 2.0 * g[0, 0] * v)

    return _make(np.array([[np.sum(v * v)]]), (x,), bw)


# --------------------------------------------------------------------------
# optimizer and checks
# --------------------------------------------------------------------------


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray | None], state: AdamState) -> None:
    """One bias-corrected Adam update, in place on ``param.value``.

    A ``None`` gradient is treated as zero.
    """
    if len(params) != len(grads):
        raise ValueError("params and grads differ in length")
    if not state.m:
        state.m = [np.zeros_like(p.value) for p in params]
        state.v = [np.zeros_like(p.value) for p in params]
    if len(state.m) != len(params):
        raise ValueError("optimizer state was built for a different parameter list")
    grads = [np.zeros_like(p.value) if g is None else np.asarray(g, dtype=np.float64) for p, g in zip(params, grads)]
    for p, g in zip(params, grads):
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.value.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {p.name or '?'} at step {state.step + 1}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.value -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def grad_check(forward: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    `forward` must build and return the scalar loss from the current parameter
    values; it is called inside fresh tapes. The relative error per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-8)``.
    """
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = forward()
        if not np.isfinite(loss.item()):
            raise NonFiniteError("non-finite loss in grad_check")
        tape.backward(loss)
    analytic = [np.zeros_like(p.value) if p.grad is None else p.grad.copy() for p in params]

    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.value.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = forward().item()
            flat[i] = orig - h
            fm = forward().item()
            flat[i] = orig
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise NonFiniteError("non-finite loss under perturbation")
            num = (fp - fm) / (2.0 * h)
            ai = a.reshape(-1)[i]
            err = abs(ai - num) / max(abs(ai), abs(num), 1e-8)
            worst = max(worst, err)
    return worst
