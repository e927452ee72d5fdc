"""Dense tensors, the gradient tape, and trainable parameters.

A Tensor is an immutable-by-convention float array (float64 by default,
float32 allowed for training). Differentiable operations executed while a
Tape is active append themselves to it in execution order; `backward` walks
the records in exact reverse, accumulating vector-Jacobian products into the
parameters watched by the tape.

One tape belongs to one training context; tensors themselves are safe to
read concurrently.
"""

from __future__ import annotations

import numpy as np

from ..errors import ContractError

FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


class Tensor:
    """Dense n-dimensional real array, row-major, immutable once built.

    In checked mode (the default for user-facing construction) NaN/Inf are
    rejected; internal ops skip the scan for speed.
    """

    __slots__ = ("data", "requires_grad")

    def __init__(self, data, requires_grad=False, dtype=None, checked=True):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float64)
        arr = np.ascontiguousarray(arr)
        if checked and not np.all(np.isfinite(arr)):
            raise ValueError("tensor rejects non-finite values in checked mode")
        self.data = arr
        self.requires_grad = bool(requires_grad)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Read-only view semantics: callers must not write into the result."""
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Small conveniences; the functional API in ops.py is the primary surface.
    def __add__(self, other):
        from . import ops
        return ops.add(self, _as_tensor(other))

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, _as_tensor(other))

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, _as_tensor(other))

    def __neg__(self):
        from . import ops
        return ops.neg(self)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64), checked=False)


class Parameter:
    """A named trainable value with its gradient accumulator."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value, requires_grad=True):
        if not isinstance(value, Tensor):
            value = Tensor(value)
        self.name = name
        self.value = Tensor(value.data, requires_grad=requires_grad, checked=False)
        self.grad = Tensor(np.zeros_like(self.value.data), checked=False)

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = Tensor(np.zeros_like(self.value.data), checked=False)

    def assign(self, data: np.ndarray):
        """Replace the value (optimizer step); always copies, keeps dtype/shape."""
        if data.shape != self.value.shape:
            raise ContractError(f"assign shape {data.shape} != {self.value.shape}")
        self.value = Tensor(np.array(data, dtype=self.value.dtype, order="C"),
                            requires_grad=True, checked=False)

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"


class TapeEntry:
    __slots__ = ("out", "inputs", "backward")

    def __init__(self, out, inputs, backward):
        self.out = out
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Topologically ordered record of executed differentiable operations."""

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self.reg_terms: list[Tensor] = []
        self._params: list[Parameter] = []

    def watch(self, param: Parameter):
        self._params.append(param)

    def watch_all(self, params):
        for p in params:
            self.watch(p)

    def record(self, out: Tensor, inputs, backward_fn):
        self.entries.append(TapeEntry(out, tuple(inputs), backward_fn))

    def regularization_total(self) -> Tensor:
        """Sum of the L2 terms accumulated by conv ops during this forward."""
        from . import ops
        if not self.reg_terms:
            return Tensor(np.zeros(()), checked=False)
        total = self.reg_terms[0]
        for term in self.reg_terms[1:]:
            total = ops.add(total, term)
        return total

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False


_TAPE_STACK: list[Tape] = []


def current_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def backward(tape: Tape, loss: Tensor) -> dict:
    """Reverse-accumulate d(loss)/d(param) for every parameter on the tape.

    Fills each watched Parameter's `.grad` (zeros for parameters the loss
    does not reach) and returns {name: grad Tensor}.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g_out = grads.pop(id(entry.out), None)
        if g_out is None:
            continue
        contribs = entry.backward(g_out)
        for tensor, contrib in zip(entry.inputs, contribs):
            if contrib is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + contrib
            else:
                grads[key] = contrib
    result = {}
    for param in tape._params:
        g = grads.get(id(param.value))
        if g is None:
            g = np.zeros_like(param.value.data)
        param.grad = Tensor(np.ascontiguousarray(g), checked=False)
        result[param.name] = param.grad
    return result
