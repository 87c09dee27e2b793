"""Dense tensors with tape-based reverse-mode differentiation.

Every op that touches a tensor with ``requires_grad`` appends a record
``(output, inputs, backward_fn)`` to the module-level tape.  ``backward``
walks the tape in reverse and clears it, so each training step starts from
an empty graph.
"""
from __future__ import annotations

import contextlib
import os
from typing import Callable, Iterable, Sequence

import numpy as np

_DTYPE = np.float32
_GRAD_ENABLED = True
_CHECK_FINITE = os.environ.get("MM2CT_CHECK_FINITE") == "1"


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN/Inf from finite inputs."""


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the working float type (float32 or float64).

    The 64-bit mode exists for gradient-check suites; models built inside the
    context carry float64 parameters.
    """
    global _DTYPE
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    old, _DTYPE = _DTYPE, dtype
    try:
        yield
    finally:
        _DTYPE = old


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


def grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextlib.contextmanager
def check_finite(enabled: bool = True):
    global _CHECK_FINITE
    old, _CHECK_FINITE = _CHECK_FINITE, enabled
    try:
        yield
    finally:
        _CHECK_FINITE = old


class Tape:
    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __len__(self):
        return len(self.records)

    def reset(self):
        self.records.clear()


TAPE = Tape()


def reset_graph():
    """Drop every recorded op (call between steps that never reached backward)."""
    TAPE.reset()


class Tensor:
    """N-d float array that can participate in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad", "_leaf", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _DTYPE)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._leaf = True

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else _raise_item(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def __len__(self):
        return self.shape[0]

    # -- differentiation --------------------------------------------------
    def backward(self, grad=None, retain_graph: bool = False):
        backward(self, grad, retain_graph)

    # -- operator sugar (implemented in functional) ------------------------
    def __add__(self, other):
        return F.add(self, other)

    def __radd__(self, other):
        return F.add(other, self)

    def __sub__(self, other):
        return F.sub(self, other)

    def __rsub__(self, other):
        return F.sub(other, self)

    def __mul__(self, other):
        return F.mul(self, other)

    def __rmul__(self, other):
        return F.mul(other, self)

    def __truediv__(self, other):
        return F.div(self, other)

    def __rtruediv__(self, other):
        return F.div(other, self)

    def __neg__(self):
        return F.neg(self)

    def __pow__(self, p):
        return F.power(self, p)

    def __matmul__(self, other):
        return F.matmul(self, other)

    def __getitem__(self, idx):
        return F.getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return F.sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return F.mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return F.reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return F.transpose(self, axes or None)


def _raise_item(t):
    raise ValueError(f"item() needs a single element, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def make_result(data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap an op's output and record it on the tape when any input needs grad.

    ``backward_fn(grad_out)`` must return one gradient (or None) per input,
    already shaped like that input.
    """
    out = Tensor.__new__(Tensor)
    out.data = data if data.dtype == _DTYPE else data.astype(_DTYPE)
    out.grad = None
    out._leaf = False
    out.requires_grad = False
    if _CHECK_FINITE and not np.all(np.isfinite(out.data)):
        if all(np.all(np.isfinite(t.data)) for t in inputs):
            raise NonFiniteError(f"non-finite output from {getattr(backward_fn, '__qualname__', 'op')}")
    if _GRAD_ENABLED and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        TAPE.records.append((out, tuple(inputs), backward_fn))
    return out


def backward(loss: Tensor, grad=None, retain_graph: bool = False):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    The tape is cleared afterwards unless ``retain_graph`` is set, which lets a
    second loss sharing no path with the first reuse the recorded forward.
    """
    if not loss.requires_grad:
        raise RuntimeError("backward() on a tensor that does not require grad")
    if grad is None:
        if loss.size != 1:
            raise ValueError("backward() without grad needs a scalar output")
        grad = np.ones_like(loss.data)
    grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
    if loss._leaf:
        _accumulate_leaf(loss, grads[id(loss)])
    try:
        for out, inputs, fn in reversed(TAPE.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            in_grads = fn(g)
            for t, gi in zip(inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if t._leaf:
                    _accumulate_leaf(t, gi)
                else:
                    key = id(t)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
    finally:
        if not retain_graph:
            TAPE.reset()


def _accumulate_leaf(t: Tensor, g: np.ndarray):
    if g.shape != t.shape:
        raise RuntimeError(f"gradient shape {g.shape} does not match {t.shape}")
    if t.grad is None:
        t.grad = np.array(g, dtype=t.dtype, copy=True)
    else:
        t.grad += g


def grad(loss: Tensor, inputs: Iterable[Tensor]) -> list[np.ndarray]:
    """Return d(loss)/d(inputs) without leaving grads behind on the inputs."""
    inputs = list(inputs)
    saved = [t.grad for t in inputs]
    for t in inputs:
        t.grad = None
    backward(loss)
    out = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in inputs]
    for t, s in zip(inputs, saved):
        t.grad = s
    return out


from . import functional as F  # noqa: E402  (circular: ops need Tensor)
