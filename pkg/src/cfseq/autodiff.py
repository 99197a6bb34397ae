"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A dynamic tape records primitive operations during the forward pass; the
backward pass walks the tape once in reverse topological order.  The primitive
set is exactly what the sequence models in this repo need: matmul, add,
elementwise multiply, concat, slice, sigmoid, tanh, ELU, softmax (and a stable
log-softmax), log, square, mean and masked sums, plus the gradient-reversal
operator used for adversarial balancing.

Everything is float64 and single-threaded within a tape; distinct tapes share
no mutable state.
"""

from __future__ import annotations

import json
import os
import math
from dataclasses import dataclass, field

import numpy as np

DEBUG_CHECKS = bool(os.environ.get("CFSEQ_DEBUG"))


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class GradientError(RuntimeError):
    """A non-finite gradient was produced for a named parameter."""


class Tensor:
    """Dense float64 array value, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of primitive applications.

    Each node is ``(out, parents, vjp)`` where ``vjp(grad_out)`` returns one
    gradient array (or None) per parent.  Nodes are appended in execution
    order, so every node's parents precede it.
    """

    def __init__(self):
        self.nodes: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def record(self, out: Tensor, parents, vjp) -> None:
        self.nodes.append((out, tuple(parents), vjp))


_tape_stack: list[Tape] = []


class tape_context:
    """Makes a tape active; ops executed inside are recorded on it."""

    def __init__(self, tape: Tape | None = None):
        self.tape = tape if tape is not None else Tape()

    def __enter__(self) -> Tape:
        _tape_stack.append(self.tape)
        return self.tape

    def __exit__(self, *exc):
        _tape_stack.pop()


def _active_tape() -> Tape | None:
    return _tape_stack[-1] if _tape_stack else None


def _record(out: Tensor, parents, vjp) -> Tensor:
    tape = _active_tape()
    if tape is not None and any(p.requires_grad for p in parents):
        out.requires_grad = True
        tape.record(out, parents, vjp)
    if DEBUG_CHECKS and not np.all(np.isfinite(out.data)):
        raise FloatingPointError("non-finite value in forward pass")
    return out


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=True, name=name)


# ---------------------------------------------------------------------------
# primitives


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data + b.data)
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data - b.data)
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = Tensor(a.data * b.data)
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return _record(out, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.data.shape),
                              _unbroadcast(g * a.data, b.data.shape)))


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    out = Tensor(a.data @ b.data)
    return _record(out, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    try:
        out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    except ValueError:
        raise ShapeError(
            f"concat: shapes {[t.shape for t in tensors]} do not conform on axis {axis}")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def vjp(g):
        return tuple(np.take(g, range(offsets[i], offsets[i + 1]), axis=axis)
                     for i in range(len(tensors)))

    return _record(out, tuple(tensors), vjp)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    if start < 0 or start + length > a.data.shape[axis]:
        raise ShapeError(f"narrow: [{start}:{start + length}] out of range for "
                         f"shape {a.shape} on axis {axis}")
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(a.data[idx])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _record(out, (a,), vjp)


def take_rows(a: Tensor, indices) -> Tensor:
    """Row gather; rows may repeat."""
    indices = np.asarray(indices, dtype=np.intp)
    out = Tensor(a.data[indices])

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, indices, g)
        return (full,)

    return _record(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * (1.0 - y * y),))


def elu(a: Tensor, alpha: float = 1.0) -> Tensor:
    neg = a.data < 0
    y = np.where(neg, alpha * np.expm1(np.minimum(a.data, 0.0)), a.data)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (np.where(neg, g * (y + alpha), g),))


def softmax(a: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)
    out = Tensor(y)

    def vjp(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (a,), vjp)


def log_softmax(a: Tensor) -> Tensor:
    """Numerically stable log(softmax) over the last axis."""
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    out = Tensor(y)
    sm = np.exp(y)

    def vjp(g):
        return (g - sm * g.sum(axis=-1, keepdims=True),)

    return _record(out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def square(a: Tensor) -> Tensor:
    out = Tensor(a.data * a.data)
    return _record(out, (a,), lambda g: (2.0 * g * a.data,))


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out = Tensor(a.data.mean())
    return _record(out, (a,), lambda g: (np.full_like(a.data, g / n),))


def total(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    return _record(out, (a,), lambda g: (np.full_like(a.data, g),))


def masked_sum(a: Tensor, mask: np.ndarray) -> Tensor:
    """Sum of entries where ``mask`` is nonzero; mask is a constant."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.data.shape and np.broadcast_shapes(mask.shape, a.data.shape) != a.data.shape:
        raise ShapeError(f"masked_sum: mask shape {mask.shape} vs data {a.shape}")
    out = Tensor((a.data * mask).sum())
    return _record(out, (a,), lambda g: (g * mask,))


def gradient_reversal(a: Tensor, lam: float) -> Tensor:
    """Identity in the forward pass; backward multiplies the gradient by -lam."""
    out = Tensor(a.data)
    return _record(out, (a,), lambda g: (-lam * g,))


# ---------------------------------------------------------------------------
# backward


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    """Reverse sweep over the tape from a scalar ``loss``.

    Returns a mapping from ``id(tensor)`` to gradient for every tensor that
    participated in the computation; use :func:`grad_of` for lookups.
    """
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, parents, vjp in reversed(tape.nodes):
        g = grads.get(id(out))
        if g is None:
            continue
        for parent, pg in zip(parents, vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            if acc is None:
                # own the buffer: vjps may hand back the upstream grad or a view
                if pg is g or pg.base is not None:
                    pg = pg.copy()
                grads[id(parent)] = pg
            else:
                acc += pg
    return grads


def grad_of(grads: dict[int, np.ndarray], t: Tensor) -> np.ndarray:
    """Gradient of the loss w.r.t. ``t``; zero if ``t`` did not contribute."""
    g = grads.get(id(t))
    return g if g is not None else np.zeros_like(t.data)


# ---------------------------------------------------------------------------
# parameters, optimizer, checkpoints


@dataclass
class AdamState:
    """Adam optimizer state for a named parameter set."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    max_grad_norm: float | None = None
    step_count: int = 0
    first_moment: dict = field(default_factory=dict)
    second_moment: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict[str, Tensor],
              grads: dict[int, np.ndarray]) -> None:
    """One Adam update with bias correction, in place on ``params``.

    Optionally clips the gradient set by global norm first (used by the
    RMSN training configs).
    """
    gvals = {}
    for name, p in params.items():
        g = grad_of(grads, p)
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient for parameter '{name}'")
        gvals[name] = g
    if state.max_grad_norm is not None:
        norm = math.sqrt(sum(float((g * g).sum()) for g in gvals.values()))
        if norm > state.max_grad_norm and norm > 0:
            c = state.max_grad_norm / norm
            gvals = {k: g * c for k, g in gvals.items()}
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = gvals[name]
        m = state.first_moment.get(name)
        if m is None:
            m = state.first_moment[name] = np.zeros_like(p.data)
        v = state.second_moment.get(name)
        if v is None:
            v = state.second_moment[name] = np.zeros_like(p.data)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.data -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)


def variational_dropout_mask(shape, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted-dropout mask sampled once per sequence and reused every step.

    With ``rate`` = 0 the mask is all ones.  At inference, callers simply skip
    the multiplication (equivalent to an all-ones mask).
    """
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return constant(np.ones(shape))
    keep = 1.0 - rate
    mask = (rng.random(shape) < keep).astype(np.float64) / keep
    return constant(mask)


def save_checkpoint(path, params: dict[str, Tensor], meta: dict | None = None) -> None:
    """Write parameters as a single JSON document: name -> {shape, values}."""
    doc = {"params": {name: {"shape": list(p.data.shape),
                             "values": p.data.ravel().tolist()}
                      for name, p in params.items()}}
    if meta:
        doc["meta"] = meta
    with open(path, "w") as f:
        json.dump(doc, f)


def load_checkpoint(path, params: dict[str, Tensor]) -> dict:
    """Load a checkpoint into an existing parameter set; shapes must match."""
    with open(path) as f:
        doc = json.load(f)
    stored = doc["params"]
    for name, p in params.items():
        if name not in stored:
            raise KeyError(f"checkpoint missing parameter '{name}'")
        entry = stored[name]
        if tuple(entry["shape"]) != p.data.shape:
            raise ShapeError(f"checkpoint shape {tuple(entry['shape'])} does not match "
                             f"parameter '{name}' shape {p.data.shape}")
        p.data[...] = np.asarray(entry["values"], dtype=np.float64).reshape(p.data.shape)
    return doc.get("meta", {})


def read_checkpoint_meta(path) -> dict:
    with open(path) as f:
        return json.load(f).get("meta", {})
