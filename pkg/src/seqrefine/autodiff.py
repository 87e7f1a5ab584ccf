"""Reverse-mode automatic differentiation over dense float64 tensors.

A ``Tensor`` wraps a contiguous (row-major) float64 numpy array. Operations
executed while a ``Tape`` is active append one entry each; ``backward`` on a
scalar root replays the tape in reverse, visiting every recorded operation
exactly once and accumulating gradients into leaf tensors.

Broadcasting is deliberately narrow: scalar-with-tensor, row-wise bias add,
and row-wise column scaling. Everything else goes through explicit
concat/slice/transpose ops so every adjoint has an obvious shape.
"""

from __future__ import annotations

import threading

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "no_grad",
    "backward",
    "zero_grads",
    "ShapeError",
    "DomainError",
    "matmul",
    "add",
    "sub",
    "neg",
    "mul",
    "scale_cols",
    "tanh",
    "sigmoid",
    "relu",
    "exp",
    "log",
    "softmax_rows",
    "log_softmax_rows",
    "logsumexp_rows",
    "sum_all",
    "pick_rows",
    "take_rows",
    "concat_rows",
    "concat_cols",
    "slice_rows",
    "slice_cols",
    "transpose",
    "max_over_rows",
    "rel_gather",
    "layer_norm_rows",
]


class ShapeError(ValueError):
    """Operand shapes do not satisfy an operation's contract."""


class DomainError(ValueError):
    """Operand values fall outside an operation's numeric domain."""


class Tensor:
    """Dense float64 tensor with an optional gradient accumulator.

    ``grad`` is ``None`` until a backward pass deposits into it; repeated
    backward passes without ``zero_grads`` keep accumulating.
    """

    __slots__ = ("data", "grad", "requires_grad", "_tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)


_STATE = threading.local()


def _tape_stack():
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = []
        _STATE.stack = stack
    return stack


def _active_tape():
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tape:
    """Ordered record of executed operations for one backward replay.

    Entries are (output, parents, vjp) triples appended in execution order,
    which is a topological order of the data-flow graph by construction.
    """

    def __init__(self):
        self._entries = []

    def __len__(self):
        return len(self._entries)

    def __enter__(self):
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _tape_stack().pop()
        assert popped is self
        return False


class no_grad:
    """Context manager that suspends recording (pure inference)."""

    def __enter__(self):
        _tape_stack().append(None)
        return self

    def __exit__(self, exc_type, exc, tb):
        _tape_stack().pop()
        return False


def _record(out: Tensor, parents, vjp) -> Tensor:
    tape = _active_tape()
    if tape is not None:
        for p in parents:
            if p.requires_grad:
                out.requires_grad = True
                out._tape = tape
                tape._entries.append((out, parents, vjp))
                break
    return out


def backward(root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into every reachable leaf's ``grad``.

    The root must be a single-element tensor with recorded provenance.
    Adjoints of intermediates live only inside this call; leaves alone
    retain gradients, so calling twice exactly doubles every leaf grad.
    """
    if root.data.size != 1:
        raise ShapeError(f"backward needs a scalar root, got shape {root.shape}")
    tape = root._tape
    if tape is None:
        raise ValueError("backward root has no recorded provenance (was a Tape active?)")

    adjoints = {id(root): (root, np.ones_like(root.data))}
    for out, parents, vjp in reversed(tape._entries):
        entry = adjoints.pop(id(out), None)
        if entry is None:
            continue
        grads = vjp(entry[1])
        for parent, g in zip(parents, grads):
            if g is None or not parent.requires_grad:
                continue
            key = id(parent)
            held = adjoints.get(key)
            if held is None:
                adjoints[key] = (parent, g)
            else:
                # Allocate rather than += : vjp outputs may alias each other.
                adjoints[key] = (parent, held[1] + g)

    for tensor, g in adjoints.values():
        if tensor._tape is tape:
            continue  # produced on this tape but never consumed further
        if tensor.grad is None:
            tensor.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            tensor.grad = tensor.grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


# ---------------------------------------------------------------------------
# structural ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got shapes {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not align")
    out = Tensor(a.data @ b.data)

    def vjp(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), vjp)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a 2-D operand, got shape {a.shape}")
    out = Tensor(a.data.T)

    def vjp(g):
        return (g.T,)

    return _record(out, (a,), vjp)


def concat_rows(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_rows needs at least one part")
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    sizes = [p.data.shape[0] for p in parts]

    def vjp(g):
        grads = []
        ofs = 0
        for n in sizes:
            grads.append(g[ofs:ofs + n])
            ofs += n
        return tuple(grads)

    return _record(out, tuple(parts), vjp)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat_cols needs at least one part")
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    sizes = [p.data.shape[1] for p in parts]

    def vjp(g):
        grads = []
        ofs = 0
        for n in sizes:
            grads.append(g[:, ofs:ofs + n])
            ofs += n
        return tuple(grads)

    return _record(out, tuple(parts), vjp)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[start:stop])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[start:stop] = g
        return (full,)

    return _record(out, (a,), vjp)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(a.data[:, start:stop])

    def vjp(g):
        full = np.zeros_like(a.data)
        full[:, start:stop] = g
        return (full,)

    return _record(out, (a,), vjp)


def take_rows(table: Tensor, ids) -> Tensor:
    """Row gather (embedding lookup); backward scatter-adds into the table."""
    ids = np.asarray(ids, dtype=np.intp)
    if ids.ndim != 1:
        raise ShapeError(f"take_rows needs a 1-D id list, got shape {ids.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeError(f"take_rows ids out of range for table with {table.shape[0]} rows")
    out = Tensor(table.data[ids])

    def vjp(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        return (full,)

    return _record(out, (table,), vjp)


def pick_rows(a: Tensor, ids) -> Tensor:
    """Select one column per row: out[i, 0] = a[i, ids[i]]."""
    ids = np.asarray(ids, dtype=np.intp)
    if a.data.ndim != 2 or ids.shape != (a.shape[0],):
        raise ShapeError(f"pick_rows needs [n x c] and n ids, got {a.shape} and {ids.shape}")
    rows = np.arange(a.shape[0])
    out = Tensor(a.data[rows, ids].reshape(-1, 1))

    def vjp(g):
        full = np.zeros_like(a.data)
        full[rows, ids] = g[:, 0]
        return (full,)

    return _record(out, (a,), vjp)


def rel_gather(a: Tensor, n: int) -> Tensor:
    """Map per-offset scores to a position-pair matrix.

    Input columns enumerate offsets -(n-1) .. n-1 (2n-1 of them);
    out[i, j] = a[i, (i - j) + n - 1], or row 0 throughout when the input
    has a single (offset-only) row.
    """
    if a.data.ndim != 2 or a.shape[1] != 2 * n - 1:
        raise ShapeError(f"rel_gather needs [n or 1 x {2 * n - 1}] input, got {a.shape}")
    if a.shape[0] not in (1, n):
        raise ShapeError(f"rel_gather needs 1 or {n} rows, got {a.shape}")
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    cols = (i - j) + n - 1
    rows = np.zeros((n, n), dtype=np.intp) if a.shape[0] == 1 else np.broadcast_to(i, (n, n))
    out = Tensor(a.data[rows, cols])

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, (rows, cols), g)
        return (full,)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        out = Tensor(a.data + float(b))

        def vjp_const(g):
            return (g,)

        return _record(out, (a,), vjp_const)

    if a.shape == b.shape:
        out = Tensor(a.data + b.data)

        def vjp_same(g):
            return g, g

        return _record(out, (a, b), vjp_same)

    if b.data.size == 1:
        out = Tensor(a.data + b.data.reshape(-1)[0])

        def vjp_scalar(g):
            return g, g.sum().reshape(b.shape)

        return _record(out, (a, b), vjp_scalar)

    if a.data.ndim == 2 and b.data.ndim == 2 and b.shape == (1, a.shape[1]):
        out = Tensor(a.data + b.data)

        def vjp_bias(g):
            return g, g.sum(axis=0, keepdims=True)

        return _record(out, (a, b), vjp_bias)

    raise ShapeError(f"add cannot combine shapes {a.shape} and {b.shape}")


def sub(a: Tensor, b) -> Tensor:
    return add(a, neg(b) if isinstance(b, Tensor) else -float(b))


def neg(a: Tensor) -> Tensor:
    out = Tensor(-a.data)

    def vjp(g):
        return (-g,)

    return _record(out, (a,), vjp)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        c = float(b)
        out = Tensor(a.data * c)

        def vjp_const(g):
            return (g * c,)

        return _record(out, (a,), vjp_const)

    if a.shape == b.shape:
        out = Tensor(a.data * b.data)

        def vjp_same(g):
            ga = g * b.data if a.requires_grad else None
            gb = g * a.data if b.requires_grad else None
            return ga, gb

        return _record(out, (a, b), vjp_same)

    if b.data.size == 1:
        c = b.data.reshape(-1)[0]
        out = Tensor(a.data * c)

        def vjp_scalar(g):
            ga = g * c if a.requires_grad else None
            gb = (g * a.data).sum().reshape(b.shape) if b.requires_grad else None
            return ga, gb

        return _record(out, (a, b), vjp_scalar)

    if a.data.size == 1:
        return mul(b, a)

    raise ShapeError(f"mul cannot combine shapes {a.shape} and {b.shape}")


def scale_cols(a: Tensor, s: Tensor) -> Tensor:
    """Row-broadcast column scaling: out[i, j] = a[i, j] * s[0, j]."""
    if a.data.ndim != 2 or s.shape != (1, a.shape[1]):
        raise ShapeError(f"scale_cols needs [n x d] and [1 x d], got {a.shape} and {s.shape}")
    out = Tensor(a.data * s.data)

    def vjp(g):
        ga = g * s.data if a.requires_grad else None
        gs = (g * a.data).sum(axis=0, keepdims=True) if s.requires_grad else None
        return ga, gs

    return _record(out, (a, s), vjp)


# ---------------------------------------------------------------------------
# elementwise nonlinearities


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    out = Tensor(y)

    def vjp(g):
        return (g * (1.0 - y * y),)

    return _record(out, (a,), vjp)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    y = np.empty_like(x)
    pos = x >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)

    def vjp(g):
        return (g * y * (1.0 - y),)

    return _record(out, (a,), vjp)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))

    def vjp(g):
        return (g * (a.data > 0.0),)

    return _record(out, (a,), vjp)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.data)
    out = Tensor(y)

    def vjp(g):
        return (g * y,)

    return _record(out, (a,), vjp)


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0.0):
        raise DomainError(f"log needs strictly positive input, min value was {a.data.min()!r}")
    out = Tensor(np.log(a.data))

    def vjp(g):
        return (g / a.data,)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# reductions and row-wise softmax family


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(np.array([[a.data.sum()]]))

    def vjp(g):
        return (np.full_like(a.data, g.reshape(-1)[0]),)

    return _record(out, (a,), vjp)


def max_over_rows(a: Tensor) -> Tensor:
    """Column-wise max over rows -> [1 x d]; ties route grad to the first row."""
    if a.data.ndim != 2 or a.shape[0] == 0:
        raise ShapeError(f"max_over_rows needs a non-empty 2-D input, got shape {a.shape}")
    idx = np.argmax(a.data, axis=0)
    cols = np.arange(a.shape[1])
    out = Tensor(a.data[idx, cols].reshape(1, -1))

    def vjp(g):
        full = np.zeros_like(a.data)
        full[idx, cols] = g[0]
        return (full,)

    return _record(out, (a,), vjp)


def _rowwise_check(a: Tensor, op: str):
    if a.data.ndim != 2 or a.shape[1] == 0:
        raise ShapeError(f"{op} needs a non-empty 2-D input, got shape {a.shape}")


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    _rowwise_check(a, "softmax_rows")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor(s)

    def vjp(g):
        dot = (g * s).sum(axis=1, keepdims=True)
        return (s * (g - dot),)

    return _record(out, (a,), vjp)


def log_softmax_rows(a: Tensor) -> Tensor:
    _rowwise_check(a, "log_softmax_rows")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    out = Tensor(y)

    def vjp(g):
        return (g - np.exp(y) * g.sum(axis=1, keepdims=True),)

    return _record(out, (a,), vjp)


def logsumexp_rows(a: Tensor) -> Tensor:
    """Row-wise log-sum-exp -> [n x 1], max-shifted for stability."""
    _rowwise_check(a, "logsumexp_rows")
    m = a.data.max(axis=1, keepdims=True)
    e = np.exp(a.data - m)
    z = e.sum(axis=1, keepdims=True)
    out = Tensor(m + np.log(z))

    def vjp(g):
        return (g * (e / z),)

    return _record(out, (a,), vjp)


def layer_norm_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Normalize each row to mean 0, variance 1 (no gain/bias here)."""
    _rowwise_check(a, "layer_norm_rows")
    mu = a.data.mean(axis=1, keepdims=True)
    centered = a.data - mu
    var = (centered * centered).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out = Tensor(xhat)
    d = a.shape[1]

    def vjp(g):
        gm = g.mean(axis=1, keepdims=True)
        gx = (g * xhat).mean(axis=1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)

    return _record(out, (a,), vjp)
