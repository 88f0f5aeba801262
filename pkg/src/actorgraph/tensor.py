"""Dense 2-D float64 tensors with tape-based reverse-mode differentiation.

Values are C-contiguous ``float64`` numpy matrices (row-major). A :class:`Tape`
records every operation as an append-only list of nodes; :meth:`Tape.backward`
replays the list in strict reverse creation order, which is always a valid
topological order of the recorded graph. Backward rules live in the
module-level ``BACKWARD_RULES`` table keyed by op kind, looked up at call time.

A tape and its values belong to one thread; independent tapes may run
concurrently.
"""

from dataclasses import dataclass, field

import numpy as np

from .backend import kernels
from .errors import LabelError, ShapeError

__all__ = ["Tape", "Var", "as_matrix", "BACKWARD_RULES"]


def as_matrix(value):
    """Validate and convert to a C-contiguous 2-D float64 array."""
    arr = np.ascontiguousarray(value, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


@dataclass
class Node:
    kind: str
    inputs: tuple
    value: np.ndarray
    saved: tuple = ()
    needs_grad: bool = False
    grad: np.ndarray | None = field(default=None, repr=False)


class Var:
    """Handle to one tape node; exposes its value and, after backward, grad."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape, idx):
        self.tape = tape
        self.idx = idx

    @property
    def value(self):
        return self.tape.nodes[self.idx].value

    @property
    def grad(self):
        g = self.tape.nodes[self.idx].grad
        if g is None:
            return np.zeros_like(self.value)
        return g

    @property
    def shape(self):
        return self.value.shape

    def item(self):
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 value, got {self.value.shape}")
        return float(self.value[0, 0])

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __add__(self, other):
        return self.tape.add(self, other)

    def __sub__(self, other):
        return self.tape.sub(self, other)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    @property
    def T(self):
        return self.tape.transpose(self)

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.value.shape})"


class Tape:
    def __init__(self, check_finite=False):
        self.nodes: list[Node] = []
        self.check_finite = check_finite

    # -- node plumbing ------------------------------------------------------

    def _record(self, kind, inputs, value, saved=()):
        needs = any(self.nodes[i.idx].needs_grad for i in inputs)
        if self.check_finite and not np.isfinite(value).all():
            raise FloatingPointError(f"non-finite value out of op {kind!r}")
        self.nodes.append(Node(kind, tuple(i.idx for i in inputs), value, saved, needs))
        return Var(self, len(self.nodes) - 1)

    def _value(self, idx):
        return self.nodes[idx].value

    def constant(self, value):
        arr = as_matrix(value)
        self.nodes.append(Node("constant", (), arr))
        return Var(self, len(self.nodes) - 1)

    def parameter(self, value):
        arr = as_matrix(value)
        self.nodes.append(Node("parameter", (), arr, needs_grad=True))
        return Var(self, len(self.nodes) - 1)

    # -- operations ---------------------------------------------------------

    def matmul(self, a, b):
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner dims disagree: {a.shape} x {b.shape}")
        return self._record("matmul", (a, b), a.value @ b.value)

    def add(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")
        return self._record("add", (a, b), a.value + b.value)

    def add_row(self, x, bias):
        """Add a 1 x n bias row to every row of an m x n matrix."""
        if bias.shape != (1, x.shape[1]):
            raise ShapeError(f"row bias must be (1, {x.shape[1]}), got {bias.shape}")
        return self._record("add_row", (x, bias), x.value + bias.value)

    def sub(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"sub needs equal shapes, got {a.shape} and {b.shape}")
        return self._record("sub", (a, b), a.value - b.value)

    def mul(self, a, b):
        if a.shape != b.shape:
            raise ShapeError(f"mul needs equal shapes, got {a.shape} and {b.shape}")
        return self._record("mul", (a, b), a.value * b.value)

    def scale(self, x, c):
        c = float(c)
        return self._record("scale", (x,), c * x.value, saved=(c,))

    def transpose(self, x):
        return self._record("transpose", (x,), np.ascontiguousarray(x.value.T))

    def concat_cols(self, xs):
        xs = list(xs)
        if not xs:
            raise ShapeError("concat_cols needs at least one input")
        rows = xs[0].shape[0]
        for x in xs:
            if x.shape[0] != rows:
                raise ShapeError(f"concat_cols row counts differ: {x.shape[0]} vs {rows}")
        widths = tuple(x.shape[1] for x in xs)
        return self._record(
            "concat_cols", tuple(xs), np.concatenate([x.value for x in xs], axis=1), saved=(widths,)
        )

    def slice_cols(self, x, start, stop):
        if not (0 <= start < stop <= x.shape[1]):
            raise ShapeError(f"column slice [{start}:{stop}] out of range for {x.shape}")
        return self._record(
            "slice_cols", (x,), np.ascontiguousarray(x.value[:, start:stop]), saved=(start, stop)
        )

    def reshape(self, x, rows, cols):
        if rows * cols != x.shape[0] * x.shape[1]:
            raise ShapeError(f"cannot reshape {x.shape} to ({rows}, {cols})")
        return self._record(
            "reshape", (x,), x.value.reshape(rows, cols).copy(), saved=(x.shape,)
        )

    def relu(self, x):
        return self._record("relu", (x,), kernels.relu_fwd(x.value))

    def exp(self, x):
        return self._record("exp", (x,), np.exp(x.value))

    def log(self, x):
        return self._record("log", (x,), np.log(x.value))

    def row_sum(self, x):
        return self._record("row_sum", (x,), x.value.sum(axis=1, keepdims=True))

    def max_over_rows(self, x):
        """Column-wise max over the rows; gradient flows to the first maximal row."""
        value, idx = kernels.max_over_rows_fwd(x.value)
        return self._record("max_over_rows", (x,), value, saved=(idx,))

    def masked_row_softmax(self, logits, mask):
        """Row softmax over the entries where mask==1; masked entries are exact 0.

        The mask is data, not a differentiable input. A row with no unmasked
        entry is a precondition violation and raises DegenerateRowError.
        """
        mask = as_matrix(mask.value if isinstance(mask, Var) else mask)
        if mask.shape != logits.shape:
            raise ShapeError(f"mask shape {mask.shape} != logits shape {logits.shape}")
        return self._record("masked_softmax", (logits,), kernels.masked_softmax_fwd(logits.value, mask))

    def weighted_row_softmax(self, logits, weights):
        """Row-normalized weights*exp(logits); both inputs are differentiable.

        weights must be elementwise >= 0; a row of all-zero weights raises
        DegenerateRowError rather than inventing a fallback distribution.
        """
        if weights.shape != logits.shape:
            raise ShapeError(f"weights shape {weights.shape} != logits shape {logits.shape}")
        out, ratio = kernels.weighted_softmax_fwd(logits.value, weights.value)
        return self._record("weighted_softmax", (logits, weights), out, saved=(ratio,))

    def row_log_softmax(self, x):
        return self._record("log_softmax", (x,), kernels.log_softmax_fwd(x.value))

    def mean_nll(self, log_probs, labels):
        """Mean negative log-likelihood of the true classes; 1x1 output."""
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        n, c = log_probs.shape
        if labels.shape[0] != n:
            raise ShapeError(f"{labels.shape[0]} labels for {n} rows")
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise LabelError(f"label out of range [0, {c})")
        picked = log_probs.value[np.arange(n), labels]
        value = np.array([[-picked.mean()]])
        return self._record("mean_nll", (log_probs,), value, saved=(labels,))

    # -- reverse pass -------------------------------------------------------

    def backward(self, root):
        """Populate grads of every node reachable from a scalar root."""
        node = self.nodes[root.idx]
        if node.value.shape != (1, 1):
            raise ShapeError(f"backward needs a 1x1 root, got {node.value.shape}")
        node.grad = np.ones((1, 1))
        for idx in range(root.idx, -1, -1):
            n = self.nodes[idx]
            if n.grad is None or not n.needs_grad or not n.inputs:
                continue
            grads = BACKWARD_RULES[n.kind](self, n, n.grad)
            for input_idx, g in zip(n.inputs, grads):
                if g is None:
                    continue
                target = self.nodes[input_idx]
                if not target.needs_grad:
                    continue
                if target.grad is None:
                    # fresh array: rules may hand back views or shared buffers
                    target.grad = np.array(g, dtype=np.float64)
                else:
                    target.grad = target.grad + g


# -- backward rules, one per op kind ----------------------------------------


def _bwd_matmul(tape, node, dy):
    a, b = (tape._value(i) for i in node.inputs)
    return dy @ b.T, a.T @ dy


def _bwd_add(tape, node, dy):
    return dy, dy


def _bwd_add_row(tape, node, dy):
    return dy, dy.sum(axis=0, keepdims=True)


def _bwd_sub(tape, node, dy):
    return dy, -dy


def _bwd_mul(tape, node, dy):
    a, b = (tape._value(i) for i in node.inputs)
    return dy * b, dy * a


def _bwd_scale(tape, node, dy):
    return (node.saved[0] * dy,)


def _bwd_transpose(tape, node, dy):
    return (dy.T,)


def _bwd_concat_cols(tape, node, dy):
    widths = node.saved[0]
    offsets = np.cumsum((0,) + widths)
    return tuple(dy[:, offsets[i] : offsets[i + 1]] for i in range(len(widths)))


def _bwd_slice_cols(tape, node, dy):
    start, stop = node.saved
    dx = np.zeros_like(tape._value(node.inputs[0]))
    dx[:, start:stop] = dy
    return (dx,)


def _bwd_reshape(tape, node, dy):
    return (dy.reshape(node.saved[0]),)


def _bwd_relu(tape, node, dy):
    return (kernels.relu_bwd(tape._value(node.inputs[0]), dy),)


def _bwd_exp(tape, node, dy):
    return (dy * node.value,)


def _bwd_log(tape, node, dy):
    return (dy / tape._value(node.inputs[0]),)


def _bwd_row_sum(tape, node, dy):
    x = tape._value(node.inputs[0])
    return (np.broadcast_to(dy, x.shape),)


def _bwd_max_over_rows(tape, node, dy):
    x = tape._value(node.inputs[0])
    return (kernels.max_over_rows_bwd(x.shape, node.saved[0], dy),)


def _bwd_masked_softmax(tape, node, dy):
    return (kernels.masked_softmax_bwd(node.value, dy),)


def _bwd_weighted_softmax(tape, node, dy):
    return kernels.weighted_softmax_bwd(node.value, node.saved[0], dy)


def _bwd_log_softmax(tape, node, dy):
    return (kernels.log_softmax_bwd(node.value, dy),)


def _bwd_mean_nll(tape, node, dy):
    labels = node.saved[0]
    logp = tape._value(node.inputs[0])
    dx = np.zeros_like(logp)
    dx[np.arange(labels.shape[0]), labels] = -dy[0, 0] / labels.shape[0]
    return (dx,)


BACKWARD_RULES = {
    "matmul": _bwd_matmul,
    "add": _bwd_add,
    "add_row": _bwd_add_row,
    "sub": _bwd_sub,
    "mul": _bwd_mul,
    "scale": _bwd_scale,
    "transpose": _bwd_transpose,
    "concat_cols": _bwd_concat_cols,
    "slice_cols": _bwd_slice_cols,
    "reshape": _bwd_reshape,
    "relu": _bwd_relu,
    "exp": _bwd_exp,
    "log": _bwd_log,
    "row_sum": _bwd_row_sum,
    "max_over_rows": _bwd_max_over_rows,
    "masked_softmax": _bwd_masked_softmax,
    "weighted_softmax": _bwd_weighted_softmax,
    "log_softmax": _bwd_log_softmax,
    "mean_nll": _bwd_mean_nll,
}
