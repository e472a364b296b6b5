"""Dense-matrix computation graph with reverse-mode differentiation.

Values are 2-D, C-contiguous numpy arrays ("matrices"); scalars are 1x1
matrices. Two precisions are supported: float32 for training throughput and
float64 for gradient checking, chosen when leaves are created and enforced
across every operation. Every operation validates shapes, and every output
is checked for NaN/Inf, which is always a hard error.

The graph is built eagerly: each operation returns a :class:`GraphNode`
holding the computed value, references to its parents and a local backward
rule. :func:`backward` walks the graph once in reverse topological order and
accumulates adjoints additively (fan-out sums). A graph is confined to one
thread; values are never mutated after construction, so nodes may be shared
read-only across threads.
"""

import math

import numpy as np

from . import kernels
from .errors import DegenerateVectorError, GraphError, NonFiniteError, ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}


def _check_finite(value, op):
    if not np.isfinite(value).all():
        raise NonFiniteError(f"{op} produced a non-finite value")


def _as_matrix(data, dtype):
    arr = np.ascontiguousarray(data, dtype=dtype)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"matrices are 2-D, got ndim={arr.ndim}")
    return arr


class GraphNode:
    """One node of the computation graph.

    ``value`` is the forward result, ``adjoint`` the gradient accumulator
    (allocated lazily, zero-initialized, same shape as ``value``).
    ``requires_grad`` marks leaves that should receive gradients; interior
    nodes inherit it from their parents.
    """

    __slots__ = ("value", "adjoint", "parents", "requires_grad", "_rule", "_done")

    def __init__(self, value, parents=(), rule=None, requires_grad=False):
        self.value = value
        self.adjoint = None
        self.parents = parents
        self.requires_grad = requires_grad
        self._rule = rule
        self._done = False

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def item(self):
        if self.value.shape != (1, 1):
            raise ShapeError(f"item() needs a 1x1 node, got {self.value.shape}")
        return float(self.value[0, 0])

    def __repr__(self):
        return f"GraphNode(shape={self.value.shape}, requires_grad={self.requires_grad})"


def constant(data, dtype=np.float32):
    """Leaf that never receives a gradient."""
    value = _as_matrix(data, dtype)
    _check_finite(value, "constant")
    return GraphNode(value)


def parameter(data, dtype=np.float32):
    """Trainable leaf; :func:`backward` fills its adjoint."""
    value = _as_matrix(data, dtype)
    _check_finite(value, "parameter")
    return GraphNode(value, requires_grad=True)


def _accum(node, grad):
    if not node.requires_grad:
        return
    if node.adjoint is None:
        node.adjoint = np.zeros_like(node.value)
    node.adjoint += grad


def zero_adjoints(nodes):
    for node in nodes:
        node.adjoint = None


def backward(loss):
    """Populate adjoints of every reachable ``requires_grad`` node.

    ``loss`` must be scalar (1x1). Each node is visited exactly once in
    reverse topological order; fan-out contributions are summed. Calling
    backward twice on the same root without rebuilding the graph is an
    error, because adjoints would silently double.
    """
    if loss.value.shape != (1, 1):
        raise GraphError(f"backward root must be 1x1, got {loss.value.shape}")
    if loss._done:
        raise GraphError("backward already ran on this root; rebuild the graph or reset adjoints")

    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    loss.adjoint = np.ones_like(loss.value)
    for node in reversed(topo):
        if node._rule is not None and node.adjoint is not None:
            node._rule(node.adjoint)
    loss._done = True


def _binary_preflight(a, b, op):
    if a.dtype != b.dtype:
        raise ShapeError(f"{op}: mixed dtypes {a.dtype} vs {b.dtype}")


def _make(value, parents, rule, op):
    _check_finite(value, op)
    requires = any(p.requires_grad for p in parents)
    return GraphNode(value, parents, rule if requires else None, requires)


# ---------------------------------------------------------------------------
# elementwise and scalar ops
# ---------------------------------------------------------------------------

def add(a, b):
    _binary_preflight(a, b, "add")
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} vs {b.shape}")

    def rule(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.value + b.value, (a, b), rule, "add")


def sub(a, b):
    _binary_preflight(a, b, "sub")
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} vs {b.shape}")

    def rule(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.value - b.value, (a, b), rule, "sub")


def mul(a, b):
    """Elementwise product of same-shape matrices."""
    _binary_preflight(a, b, "mul")
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} vs {b.shape}")

    def rule(g):
        _accum(a, g * b.value)
        _accum(b, g * a.value)

    return _make(a.value * b.value, (a, b), rule, "mul")


def smul(a, c):
    """Multiply by a python scalar."""
    c = float(c)

    def rule(g):
        _accum(a, g * c)

    return _make(a.value * c, (a,), rule, "smul")


def sdiv(a, c):
    """Divide by a python scalar (true division, kept distinct from smul
    so reductions match plain numpy means bit for bit)."""
    c = float(c)
    if c == 0.0:
        raise ShapeError("sdiv: divisor is zero")

    def rule(g):
        _accum(a, g / c)

    return _make(a.value / c, (a,), rule, "sdiv")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    _binary_preflight(a, b, "matmul")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} x {b.shape}")

    def rule(g):
        if a.requires_grad:
            _accum(a, g @ b.value.T)
        if b.requires_grad:
            _accum(b, a.value.T @ g)

    return _make(a.value @ b.value, (a, b), rule, "matmul")


def transpose(a):
    def rule(g):
        _accum(a, np.ascontiguousarray(g.T))

    return _make(np.ascontiguousarray(a.value.T), (a,), rule, "transpose")


# ---------------------------------------------------------------------------
# row-structured ops
# ---------------------------------------------------------------------------

def softmax_rows(a):
    """Row softmax, computed with row-max subtraction; rows sum to 1."""
    p = kernels.softmax_rows(a.value)

    def rule(g):
        _accum(a, kernels.softmax_rows_grad(p, g))

    return _make(p, (a,), rule, "softmax_rows")


def log_softmax_rows(a):
    y = kernels.log_softmax_rows(a.value)

    def rule(g):
        _accum(a, kernels.log_softmax_rows_grad(y, g))

    return _make(y, (a,), rule, "log_softmax_rows")


def mean_rows(a):
    """Arithmetic mean over rows, returned as a 1 x cols matrix."""
    n = a.shape[0]
    if n == 0:
        raise ShapeError("mean_rows: zero rows")

    def rule(g):
        _accum(a, np.broadcast_to(g / n, a.shape))

    return _make(a.value.mean(axis=0, keepdims=True), (a,), rule, "mean_rows")


def rowsum(a):
    """Sum over columns, returned as a rows x 1 matrix."""

    def rule(g):
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(a.value.sum(axis=1, keepdims=True), (a,), rule, "rowsum")


def sum_all(a):
    def rule(g):
        _accum(a, np.broadcast_to(g, a.shape))

    return _make(a.value.sum().reshape(1, 1), (a,), rule, "sum_all")


def mean_all(a):
    size = a.value.size
    if size == 0:
        raise ShapeError("mean_all: empty matrix")

    def rule(g):
        _accum(a, np.broadcast_to(g / size, a.shape))

    return _make(a.value.mean().reshape(1, 1), (a,), rule, "mean_all")


def normalize_rows(a):
    """Scale each row to unit L2 norm; a zero row is a degenerate input."""
    sq = (a.value * a.value).sum(axis=1, keepdims=True)
    if (sq == 0.0).any():
        raise DegenerateVectorError("normalize_rows: zero-norm row")
    norms = np.sqrt(sq)
    y = a.value / norms

    def rule(g):
        s = (g * y).sum(axis=1, keepdims=True)
        _accum(a, (g - y * s) / norms)

    return _make(y, (a,), rule, "normalize_rows")


# ---------------------------------------------------------------------------
# structural ops
# ---------------------------------------------------------------------------

def hconcat(nodes):
    nodes = list(nodes)
    if not nodes:
        raise ShapeError("hconcat: no inputs")
    rows = nodes[0].shape[0]
    for n in nodes:
        if n.shape[0] != rows:
            raise ShapeError("hconcat: row counts differ")
        _binary_preflight(nodes[0], n, "hconcat")
    offsets = np.cumsum([0] + [n.shape[1] for n in nodes])

    def rule(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            _accum(n, g[:, lo:hi])

    value = np.concatenate([n.value for n in nodes], axis=1)
    return _make(value, tuple(nodes), rule, "hconcat")


def vconcat(nodes):
    nodes = list(nodes)
    if not nodes:
        raise ShapeError("vconcat: no inputs")
    cols = nodes[0].shape[1]
    for n in nodes:
        if n.shape[1] != cols:
            raise ShapeError("vconcat: column counts differ")
        _binary_preflight(nodes[0], n, "vconcat")
    offsets = np.cumsum([0] + [n.shape[0] for n in nodes])

    def rule(g):
        for n, lo, hi in zip(nodes, offsets[:-1], offsets[1:]):
            _accum(n, g[lo:hi, :])

    value = np.concatenate([n.value for n in nodes], axis=0)
    return _make(value, tuple(nodes), rule, "vconcat")


def take_rows(a, idx):
    """Gather rows by index; backward scatter-adds (indices may repeat)."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.ndim != 1:
        raise ShapeError("take_rows: index must be 1-D")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise ShapeError(f"take_rows: index out of range for {a.shape[0]} rows")

    def rule(g):
        if not a.requires_grad:
            return
        if a.adjoint is None:
            a.adjoint = np.zeros_like(a.value)
        np.add.at(a.adjoint, idx, g)

    return _make(a.value[idx].copy(), (a,), rule, "take_rows")


def take_col(a, j):
    j = int(j)
    if not 0 <= j < a.shape[1]:
        raise ShapeError(f"take_col: column {j} out of range for {a.shape[1]} columns")

    def rule(g):
        if not a.requires_grad:
            return
        if a.adjoint is None:
            a.adjoint = np.zeros_like(a.value)
        a.adjoint[:, j : j + 1] += g

    return _make(a.value[:, j : j + 1].copy(), (a,), rule, "take_col")


def take_diag(a):
    n, m = a.shape
    if n != m:
        raise ShapeError(f"take_diag: matrix must be square, got {a.shape}")

    def rule(g):
        if not a.requires_grad:
            return
        if a.adjoint is None:
            a.adjoint = np.zeros_like(a.value)
        a.adjoint[np.arange(n), np.arange(n)] += g[:, 0]

    return _make(np.diag(a.value).reshape(-1, 1).copy(), (a,), rule, "take_diag")


def bmul_col(w, a):
    """Scale row r of ``a`` by scalar ``w[r, 0]`` (column broadcast)."""
    _binary_preflight(w, a, "bmul_col")
    if w.shape != (a.shape[0], 1):
        raise ShapeError(f"bmul_col: weight shape {w.shape} vs rows {a.shape[0]}")

    def rule(g):
        _accum(a, g * w.value)
        if w.requires_grad:
            _accum(w, (g * a.value).sum(axis=1, keepdims=True))

    return _make(a.value * w.value, (w, a), rule, "bmul_col")


# ---------------------------------------------------------------------------
# composites
# ---------------------------------------------------------------------------

def cosine(a, b):
    """Cosine similarity of two row vectors (1 x d nodes), as a scalar node.

    Both inputs must have the same length >= 1 and nonzero norm; a zero
    vector raises :class:`DegenerateVectorError`. The result lies in
    [-1, 1] up to roundoff.
    """
    if a.shape[0] != 1 or b.shape[0] != 1:
        raise ShapeError(f"cosine: expects row vectors, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"cosine: lengths differ, {a.shape[1]} vs {b.shape[1]}")
    return matmul(normalize_rows(a), transpose(normalize_rows(b)))


def attention_scale(d):
    """The 1/sqrt(d) logit scale shared by both encoder levels."""
    return math.sqrt(float(d))
