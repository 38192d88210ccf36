"""Dense float64 tensors with tape-based reverse-mode differentiation.

Storage and elementwise arithmetic are delegated to numpy; the tape, the
backward rules, and the op contracts (shape checks, finiteness checks,
gradient accumulation) live here.  Rank is limited to 1-3 and there is no
general broadcasting: the only broadcast form is matrix + row-vector,
which is what bias terms need.

Recording is opt-in: ops executed inside a ``with ComputationTape():``
block are recorded, ops executed outside run forward-only.  A tape and
the tensors written through it form a single-owner unit; independent
tapes may run on separate threads.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ContractError, DimensionError, NumericsError

__all__ = [
    "Tensor",
    "ComputationTape",
    "backward",
    "matmul",
    "matvec",
    "transpose",
    "softmax_rows",
    "add",
    "sub",
    "mul",
    "div",
    "scale",
    "tanh",
    "sigmoid",
    "relu",
    "sqrt",
    "clip",
    "sum",
    "mean",
    "mean_rows",
    "masked_mean_rows",
    "column_max",
    "concat",
    "slice_range",
    "take_rows",
    "row",
    "layer_norm_rows",
]


class Tensor:
    """A dense float64 array of rank 1-3 with an optional gradient buffer.

    ``grad`` is lazily allocated (as zeros) the first time a backward pass
    accumulates into this tensor, so accumulation always starts at zero.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if not 1 <= arr.ndim <= 3:
            raise DimensionError(f"tensor rank must be 1-3, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NumericsError("tensor initialized with non-finite values")
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"


class ComputationTape:
    """Ordered record of executed operations for one forward pass.

    Each record holds the output tensor, its input tensors, and a closure
    implementing the backward rule.  Replaying the records in reverse
    order visits every node exactly once.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], object]] = []

    def __enter__(self) -> "ComputationTape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise ContractError("tape context exited out of order")
        stack.pop()
        return False

    def __len__(self) -> int:
        return len(self._records)


_LOCAL = threading.local()


def _tape_stack() -> list[ComputationTape]:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _active_tape() -> ComputationTape | None:
    stack = _tape_stack()
    return stack[-1] if stack else None


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _make(data: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Wrap an op result, check finiteness, and record it on the active tape."""
    if not np.isfinite(data).all():
        raise NumericsError("operation produced a non-finite value")
    out = Tensor(data)
    tape = _active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._records.append((out, inputs, backward_fn))
    return out


def backward(output: Tensor, tape: ComputationTape) -> None:
    """Populate d(output)/d(leaf) for every requires_grad leaf on the tape.

    ``output`` must be a single-element tensor produced on this tape.
    Leaf gradients accumulate additively across calls; intermediate
    gradients are reset before each replay, so an output disconnected
    from a leaf leaves that leaf's gradient unchanged.
    """
    if output.size != 1:
        raise ContractError(f"backward needs a scalar output, got shape {output.shape}")
    produced = False
    for out, _, _ in tape._records:
        if out is output:
            produced = True
        out.grad = None
    if not produced:
        raise ContractError("backward output was not produced on this tape")
    output.grad = np.ones_like(output.data)
    for out, _, backward_fn in reversed(tape._records):
        if out.grad is None:
            continue
        backward_fn(out.grad)


def _require_rank(x: Tensor, rank: int, op: str) -> None:
    if x.data.ndim != rank:
        raise DimensionError(f"{op} needs a rank-{rank} tensor, got shape {x.shape}")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product [m x k] . [k x n] -> [m x n]."""
    _require_rank(a, 2, "matmul")
    _require_rank(b, 2, "matmul")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out_data = a.data @ b.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), backward_fn)


def matvec(a: Tensor, v: Tensor) -> Tensor:
    """Matrix-vector product [m x k] . [k] -> [m]."""
    _require_rank(a, 2, "matvec")
    _require_rank(v, 1, "matvec")
    if a.shape[1] != v.shape[0]:
        raise DimensionError(f"matvec inner dimensions disagree: {a.shape} vs {v.shape}")
    out_data = a.data @ v.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, np.outer(g, v.data))
        _accumulate(v, a.data.T @ g)

    return _make(out_data, (a, v), backward_fn)


def transpose(x: Tensor) -> Tensor:
    """Rank-2 transpose."""
    _require_rank(x, 2, "transpose")
    out_data = x.data.T.copy()

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g.T)

    return _make(out_data, (x,), backward_fn)


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax of a matrix, stabilized by per-row max subtraction."""
    _require_rank(x, 2, "softmax_rows")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward_fn(g: np.ndarray) -> None:
        inner = (g * y).sum(axis=1, keepdims=True)
        _accumulate(x, y * (g - inner))

    return _make(y, (x,), backward_fn)


# ---------------------------------------------------------------------------
# elementwise arithmetic


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op} shape mismatch: {a.shape} vs {b.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts [m x n] + [n] (row-vector broadcast)."""
    if a.data.ndim == 2 and b.data.ndim == 1:
        if a.shape[1] != b.shape[0]:
            raise DimensionError(f"add row-broadcast mismatch: {a.shape} vs {b.shape}")
        out_data = a.data + b.data

        def backward_fn(g: np.ndarray) -> None:
            _accumulate(a, g)
            _accumulate(b, g.sum(axis=0))

        return _make(out_data, (a, b), backward_fn)

    _check_same_shape(a, b, "add")
    out_data = a.data + b.data

    def backward_same(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, g)

    return _make(out_data, (a, b), backward_same)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out_data = a.data - b.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g)
        _accumulate(b, -g)

    return _make(out_data, (a, b), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of same-shape tensors."""
    _check_same_shape(a, b, "mul")
    out_data = a.data * b.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g * b.data)
        _accumulate(b, g * a.data)

    return _make(out_data, (a, b), backward_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise quotient of same-shape tensors; b must be nonzero."""
    _check_same_shape(a, b, "div")
    if np.any(b.data == 0.0):
        raise NumericsError("div by zero")
    out_data = a.data / b.data

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(a, g / b.data)
        _accumulate(b, -g * a.data / (b.data * b.data))

    return _make(out_data, (a, b), backward_fn)


def scale(x: Tensor, c: float) -> Tensor:
    """Multiply every element by the constant ``c``."""
    c = float(c)
    out_data = x.data * c

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * c)

    return _make(out_data, (x,), backward_fn)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * (1.0 - y * y))

    return _make(y, (x,), backward_fn)


def sigmoid(x: Tensor) -> Tensor:
    # Split by sign so exp never overflows.
    d = x.data
    y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * y * (1.0 - y))

    return _make(y, (x,), backward_fn)


def relu(x: Tensor) -> Tensor:
    """max(0, x); the subgradient at 0 is taken to be 0."""
    y = np.maximum(x.data, 0.0)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * (x.data > 0.0))

    return _make(y, (x,), backward_fn)


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root; inputs must be nonnegative."""
    if np.any(x.data < 0.0):
        raise NumericsError("sqrt of a negative value")
    y = np.sqrt(x.data)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * 0.5 / y)

    return _make(y, (x,), backward_fn)


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes through strictly inside the range."""
    y = np.clip(x.data, lo, hi)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, g * ((x.data > lo) & (x.data < hi)))

    return _make(y, (x,), backward_fn)


# ---------------------------------------------------------------------------
# reductions


def sum(x: Tensor) -> Tensor:
    """Full reduction to a single-element rank-1 tensor."""
    out_data = np.array([x.data.sum()])

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, np.full_like(x.data, g[0]))

    return _make(out_data, (x,), backward_fn)


def mean(x: Tensor) -> Tensor:
    """Full mean, reduced to a single-element rank-1 tensor."""
    out_data = np.array([x.data.mean()])
    n = x.size

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, np.full_like(x.data, g[0] / n))

    return _make(out_data, (x,), backward_fn)


def mean_rows(x: Tensor) -> Tensor:
    """Mean over the rows of [m x n] -> [n]."""
    _require_rank(x, 2, "mean_rows")
    m = x.shape[0]
    out_data = x.data.mean(axis=0)

    def backward_fn(g: np.ndarray) -> None:
        _accumulate(x, np.tile(g / m, (m, 1)))

    return _make(out_data, (x,), backward_fn)


def masked_mean_rows(x: Tensor, mask) -> Tensor:
    """Mean over the rows of [m x n] selected by a 0/1 mask of length m.

    The mask is plain data (no gradient).  An all-zero mask is a contract
    violation: there is nothing to average.
    """
    _require_rank(x, 2, "masked_mean_rows")
    sel = np.asarray(mask).astype(bool).reshape(-1)
    if sel.shape[0] != x.shape[0]:
        raise DimensionError(f"mask length {sel.shape[0]} does not match {x.shape[0]} rows")
    count = int(sel.sum())
    if count == 0:
        raise ContractError("masked_mean_rows: mask selects no rows")
    out_data = x.data[sel].mean(axis=0)

    def backward_fn(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[sel] = g / count
        _accumulate(x, full)

    return _make(out_data, (x,), backward_fn)


def column_max(x: Tensor) -> Tensor:
    """Per-column maximum of [m x n] -> [n]; gradient flows to the argmax row."""
    _require_rank(x, 2, "column_max")
    idx = x.data.argmax(axis=0)
    cols = np.arange(x.shape[1])
    out_data = x.data[idx, cols]

    def backward_fn(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[idx, cols] = g
        _accumulate(x, full)

    return _make(out_data, (x,), backward_fn)


# ---------------------------------------------------------------------------
# shape surgery


def concat(a: Tensor, b: Tensor, axis: int = 0) -> Tensor:
    """Concatenate two tensors of equal rank (1 or 2) along ``axis``."""
    if a.data.ndim != b.data.ndim:
        raise DimensionError(f"concat rank mismatch: {a.shape} vs {b.shape}")
    if a.data.ndim == 1 and axis != 0:
        raise DimensionError("concat of rank-1 tensors only supports axis 0")
    if a.data.ndim == 2 and axis not in (0, 1):
        raise DimensionError(f"concat axis {axis} invalid for rank-2")
    other = 1 - axis
    if a.data.ndim == 2 and a.shape[other] != b.shape[other]:
        raise DimensionError(f"concat off-axis extents disagree: {a.shape} vs {b.shape}")
    out_data = np.concatenate([a.data, b.data], axis=axis)
    split = a.shape[axis] if a.data.ndim == 2 else a.shape[0]

    def backward_fn(g: np.ndarray) -> None:
        ga, gb = np.split(g, [split], axis=axis)
        _accumulate(a, ga)
        _accumulate(b, gb)

    return _make(out_data, (a, b), backward_fn)


def slice_range(x: Tensor, start: int, stop: int, axis: int = 0) -> Tensor:
    """Contiguous slice [start, stop) along ``axis`` of a rank-1 or rank-2 tensor."""
    if x.data.ndim not in (1, 2):
        raise DimensionError(f"slice_range supports rank 1-2, got shape {x.shape}")
    if axis >= x.data.ndim or axis < 0:
        raise DimensionError(f"slice_range axis {axis} invalid for shape {x.shape}")
    extent = x.shape[axis]
    if not (0 <= start < stop <= extent):
        raise DimensionError(f"slice_range bounds [{start}, {stop}) invalid for extent {extent}")
    index = (slice(start, stop),) if axis == 0 else (slice(None), slice(start, stop))
    out_data = x.data[index].copy()

    def backward_fn(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[index] = g
        _accumulate(x, full)

    return _make(out_data, (x,), backward_fn)


def take_rows(table: Tensor, indices) -> Tensor:
    """Gather rows of a [v x d] table -> [len(indices) x d].

    The backward rule scatter-adds into the table, so repeated indices
    accumulate correctly.
    """
    _require_rank(table, 2, "take_rows")
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size == 0:
        raise DimensionError("take_rows needs at least one index")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise DimensionError(
            f"take_rows index out of range [0, {table.shape[0]}): min {idx.min()}, max {idx.max()}"
        )
    out_data = table.data[idx]

    def backward_fn(g: np.ndarray) -> None:
        if not table.requires_grad:
            return
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, idx, g)

    return _make(out_data, (table,), backward_fn)


def row(x: Tensor, i: int) -> Tensor:
    """Extract row i of [m x n] as a rank-1 tensor of length n."""
    _require_rank(x, 2, "row")
    if not 0 <= i < x.shape[0]:
        raise DimensionError(f"row index {i} out of range for shape {x.shape}")
    out_data = x.data[i].copy()

    def backward_fn(g: np.ndarray) -> None:
        full = np.zeros_like(x.data)
        full[i] = g
        _accumulate(x, full)

    return _make(out_data, (x,), backward_fn)


# ---------------------------------------------------------------------------
# normalization


def layer_norm_rows(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row layer normalization of [m x n] with learned gain/bias of length n."""
    _require_rank(x, 2, "layer_norm_rows")
    _require_rank(gain, 1, "layer_norm_rows")
    _require_rank(bias, 1, "layer_norm_rows")
    n = x.shape[1]
    if gain.shape[0] != n or bias.shape[0] != n:
        raise DimensionError(
            f"layer_norm_rows gain/bias must have length {n}, got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=1, keepdims=True)
    var = x.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out_data = xhat * gain.data + bias.data

    def backward_fn(g: np.ndarray) -> None:
        dxhat = g * gain.data
        term = dxhat - dxhat.mean(axis=1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        _accumulate(x, inv * term)
        _accumulate(gain, (g * xhat).sum(axis=0))
        _accumulate(bias, g.sum(axis=0))

    return _make(out_data, (x, gain, bias), backward_fn)
