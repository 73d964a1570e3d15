"""Dense tensors with tape-based reverse-mode differentiation.

Values are numpy arrays, float32 by default; float64 is used where
gradients are checked against finite differences. Operations record
onto the innermost active :class:`Graph`; creation order on the tape is
a valid topological order, so backward simply replays the records in
reverse, accumulating gradients into every reachable leaf.

Broadcasting is deliberately narrow: binary operations accept equal
shapes or a 0-d scalar on either side, nothing else. Row-vector
addition onto a matrix is its own op (`add_rowvec`) with an explicit
backward rule.
"""

from __future__ import annotations

import itertools
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    ConfigError,
    DataError,
    DegenerateInputError,
    DimensionError,
    EmptySequenceError,
    GraphError,
    NumericalError,
)
from . import kernels as _kernels

DEFAULT_DTYPE = np.float32
NORM_EPS = 1e-8

_node_ids = itertools.count()
_graph_stack: list["Graph"] = []


class Record:
    """One differentiable op on the tape.

    `backward` is a closure over the activations the op saved; it maps
    the output gradient to one gradient array per input (None for
    inputs that need no gradient).
    """

    __slots__ = ("kind", "input_ids", "output_id", "inputs", "backward")

    def __init__(self, kind, inputs, output_id, backward):
        self.kind = kind
        self.inputs = inputs
        self.input_ids = tuple(t.node_id for t in inputs)
        self.output_id = output_id
        self.backward = backward


class Graph:
    """Tape of recorded operations for one forward computation."""

    def __init__(self):
        self.records: list[Record] = []
        self._produced: set[int] = set()

    def __enter__(self):
        _graph_stack.append(self)
        return self

    def __exit__(self, *exc):
        popped = _graph_stack.pop()
        assert popped is self
        return False


def active_graph() -> Graph | None:
    return _graph_stack[-1] if _graph_stack else None


class Tensor:
    """Multi-dimensional float array, optionally tracked for gradients."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "graph")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        # float32 by default; an explicit float64 numpy array keeps its
        # precision (gradient-checking mode)
        if dtype is not None:
            arr = np.asarray(data, dtype=dtype)
        elif isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            arr = data
        else:
            arr = np.asarray(data, dtype=DEFAULT_DTYPE)
        _check_finite(arr, "tensor")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.graph: Graph | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # light operator sugar; everything routes through the module ops
    def __add__(self, other):
        return add(self, _as_tensor_like(other, self))

    def __sub__(self, other):
        return sub(self, _as_tensor_like(other, self))

    def __mul__(self, other):
        return mul(self, _as_tensor_like(other, self))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _as_tensor_like(value, ref: Tensor) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=ref.dtype))


def _check_finite(arr: np.ndarray, kind: str):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values produced by '{kind}'")


def _emit(kind: str, inputs: Sequence[Tensor], out_data: np.ndarray,
          backward_fn: Callable[[np.ndarray], tuple]) -> Tensor:
    _check_finite(out_data, kind)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.grad = None
    out.node_id = next(_node_ids)
    graph = active_graph()
    needs = any(t.requires_grad for t in inputs)
    if graph is not None and needs:
        out.requires_grad = True
        out.graph = graph
        graph.records.append(Record(kind, tuple(inputs), out.node_id, backward_fn))
        graph._produced.add(out.node_id)
    else:
        out.requires_grad = False
        out.graph = None
    return out


def backward(loss: Tensor):
    """Accumulate d(loss)/d(leaf) into every reachable leaf's .grad.

    Repeated calls keep accumulating; zero grads between steps.
    """
    if loss.data.shape != ():
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    graph = loss.graph
    if graph is None:
        raise GraphError("loss is not part of a live graph")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones((), dtype=loss.dtype)}
    leaves: dict[int, Tensor] = {}
    for rec in reversed(graph.records):
        out_grad = grads.get(rec.output_id)
        if out_grad is None:
            continue
        for tin, gin in zip(rec.inputs, rec.backward(out_grad)):
            if gin is None or not tin.requires_grad:
                continue
            held = grads.get(tin.node_id)
            grads[tin.node_id] = gin if held is None else held + gin
            if tin.node_id not in graph._produced:
                leaves[tin.node_id] = tin
    for node_id, leaf in leaves.items():
        g = grads[node_id]
        if g.shape != leaf.data.shape:
            g = g.reshape(leaf.data.shape)
        if leaf.grad is None:
            leaf.grad = g.astype(leaf.dtype, copy=True)
        else:
            leaf.grad = leaf.grad + g


# ---------------------------------------------------------------------------
# shape/dtype plumbing


def _binary_shapes(kind: str, a: Tensor, b: Tensor):
    if a.dtype != b.dtype:
        raise DimensionError(f"{kind}: dtype mismatch {a.dtype} vs {b.dtype}")
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise DimensionError(f"{kind}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # only scalar-vs-array broadcasting exists, so either shapes match
    # or the target is a scalar
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(), dtype=grad.dtype)


# ---------------------------------------------------------------------------
# elementwise and linear-algebra ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul needs 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dimensions disagree, {a.shape} vs {b.shape}")
    if a.dtype != b.dtype:
        raise DimensionError(f"matmul: dtype mismatch {a.dtype} vs {b.dtype}")
    ad, bd = a.data, b.data

    def bwd(out_grad):
        return out_grad @ bd.T, ad.T @ out_grad

    return _emit("matmul", (a, b), ad @ bd, bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("add", a, b)

    def bwd(out_grad):
        return _reduce_to(out_grad, a.shape), _reduce_to(out_grad, b.shape)

    return _emit("add", (a, b), a.data + b.data, bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("sub", a, b)

    def bwd(out_grad):
        return _reduce_to(out_grad, a.shape), _reduce_to(-out_grad, b.shape)

    return _emit("sub", (a, b), a.data - b.data, bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _binary_shapes("mul", a, b)
    ad, bd = a.data, b.data

    def bwd(out_grad):
        return _reduce_to(out_grad * bd, a.shape), _reduce_to(out_grad * ad, b.shape)

    return _emit("mul", (a, b), ad * bd, bwd)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)

    def bwd(out_grad):
        return (out_grad * factor,)

    return _emit("scale", (a,), a.data * factor, bwd)


def add_const(a: Tensor, value: float) -> Tensor:
    def bwd(out_grad):
        return (out_grad,)

    return _emit("add_const", (a,), a.data + float(value), bwd)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-d vector to every row of an (n, d) matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[1] != v.shape[0]:
        raise DimensionError(f"add_rowvec: incompatible shapes {m.shape} and {v.shape}")

    def bwd(out_grad):
        return out_grad, out_grad.sum(axis=0)

    return _emit("add_rowvec", (m, v), m.data + v.data, bwd)


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def bwd(out_grad):
        return (out_grad * y * (1.0 - y),)

    return _emit("sigmoid", (x,), y, bwd)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def bwd(out_grad):
        return (out_grad * (1.0 - y * y),)

    return _emit("tanh", (x,), y, bwd)


def relu(x: Tensor) -> Tensor:
    xd = x.data

    def bwd(out_grad):
        # subgradient 0 at the kink: strict inequality
        return (out_grad * (xd > 0),)

    return _emit("relu", (x,), np.maximum(xd, 0), bwd)


def concat(parts: Sequence[Tensor], axis: int = -1) -> Tensor:
    if not parts:
        raise EmptySequenceError("concat of zero tensors")
    if axis != -1:
        raise DimensionError("concat supports the last axis only")
    widths = [t.shape[-1] for t in parts]
    splits = np.cumsum(widths)[:-1]

    def bwd(out_grad):
        return tuple(np.split(out_grad, splits, axis=-1))

    return _emit("concat", tuple(parts), np.concatenate([t.data for t in parts], axis=-1), bwd)


def stack_rows(rows: Sequence[Tensor]) -> Tensor:
    """Stack equal-length 1-d tensors into an (n, d) matrix."""
    if not rows:
        raise EmptySequenceError("stack_rows of zero tensors")
    for t in rows:
        if t.data.ndim != 1 or t.shape != rows[0].shape:
            raise DimensionError("stack_rows needs equal-length 1-d tensors")

    def bwd(out_grad):
        return tuple(out_grad[i] for i in range(len(rows)))

    return _emit("stack_rows", tuple(rows), np.stack([t.data for t in rows]), bwd)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape)) != x.size:
        raise DimensionError(f"cannot reshape {x.shape} to {shape}")
    old = x.data.shape

    def bwd(out_grad):
        return (out_grad.reshape(old),)

    return _emit("reshape", (x,), x.data.reshape(shape), bwd)


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    shape = x.data.shape

    def bwd(out_grad):
        if axis is None:
            return (np.broadcast_to(out_grad, shape).astype(out_grad.dtype),)
        return (np.repeat(np.expand_dims(out_grad, axis), shape[axis], axis=axis),)

    return _emit("sum", (x,), np.asarray(x.data.sum(axis=axis)), bwd)


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    if x.size == 0:
        raise EmptySequenceError("mean of an empty tensor")
    shape = x.data.shape
    count = x.size if axis is None else shape[axis]

    def bwd(out_grad):
        og = out_grad / count
        if axis is None:
            return (np.broadcast_to(og, shape).astype(out_grad.dtype),)
        return (np.repeat(np.expand_dims(og, axis), shape[axis], axis=axis),)

    return _emit("mean", (x,), np.asarray(x.data.mean(axis=axis)), bwd)


def reduce_max(x: Tensor, axis: int | None = None) -> Tensor:
    """Max reduction; ties route the gradient to the first maximum."""
    if x.size == 0:
        raise EmptySequenceError("max of an empty tensor")
    xd = x.data

    if axis is None:
        flat_idx = int(np.argmax(xd))

        def bwd(out_grad):
            g = np.zeros_like(xd)
            g.reshape(-1)[flat_idx] = out_grad
            return (g,)

        return _emit("max", (x,), np.asarray(xd.max()), bwd)

    idx = np.argmax(xd, axis=axis)

    def bwd_axis(out_grad):
        g = np.zeros_like(xd)
        np.put_along_axis(g, np.expand_dims(idx, axis), np.expand_dims(out_grad, axis), axis)
        return (g,)

    return _emit("max", (x,), xd.max(axis=axis), bwd_axis)


def take(x: Tensor, flat_indices) -> Tensor:
    """Gather entries of the flattened tensor into a 1-d tensor."""
    idx = np.asarray(flat_indices, dtype=np.intp)
    if idx.ndim != 1:
        raise DimensionError("take needs a 1-d index list")
    if idx.size and (idx.min() < 0 or idx.max() >= x.size):
        raise DataError(f"take: index out of range for size {x.size}")
    xd = x.data

    def bwd(out_grad):
        g = np.zeros_like(xd)
        np.add.at(g.reshape(-1), idx, out_grad)
        return (g,)

    return _emit("take", (x,), xd.reshape(-1)[idx], bwd)


def gather_rows(x: Tensor, row_indices) -> Tensor:
    idx = np.asarray(row_indices, dtype=np.intp)
    if x.data.ndim != 2:
        raise DimensionError(f"gather_rows needs a matrix, got {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DataError(f"gather_rows: row index out of range for {x.shape}")
    xd = x.data

    def bwd(out_grad):
        g = np.zeros_like(xd)
        np.add.at(g, idx, out_grad)
        return (g,)

    return _emit("gather_rows", (x,), xd[idx], bwd)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather embedding rows; ids may have any shape (typically B×T)."""
    idx = np.asarray(ids, dtype=np.intp)
    if table.data.ndim != 2:
        raise DimensionError(f"embedding table must be 2-d, got {table.shape}")
    if idx.size == 0:
        raise EmptySequenceError("embedding lookup on an empty id sequence")
    if idx.min() < 0 or idx.max() >= table.shape[0]:
        raise DataError(
            f"token id out of vocabulary (max id {idx.max()}, vocab {table.shape[0]})"
        )
    td = table.data

    def bwd(out_grad):
        g = np.zeros_like(td)
        np.add.at(g, idx.reshape(-1), out_grad.reshape(-1, td.shape[1]))
        return (g,)

    return _emit("embedding", (table,), td[idx], bwd)


def softmax(x: Tensor) -> Tensor:
    """Stable softmax of a 1-d tensor."""
    if x.data.ndim != 1 or x.size == 0:
        raise DimensionError(f"softmax needs a non-empty 1-d tensor, got shape {x.shape}")
    shifted = x.data - x.data.max()
    e = np.exp(shifted)
    y = e / e.sum()

    def bwd(out_grad):
        return (y * (out_grad - np.dot(out_grad, y)),)

    return _emit("softmax", (x,), y, bwd)


def matvec_lastdim(x: Tensor, v: Tensor) -> Tensor:
    """Contract the last axis of x with vector v: (..., H) x (H,) -> (...)."""
    if v.data.ndim != 1 or x.shape[-1] != v.shape[0]:
        raise DimensionError(f"matvec_lastdim: incompatible shapes {x.shape} and {v.shape}")
    xd, vd = x.data, v.data

    def bwd(out_grad):
        gx = out_grad[..., None] * vd
        gv = np.tensordot(out_grad, xd, axes=(tuple(range(out_grad.ndim)),
                                              tuple(range(out_grad.ndim))))
        return gx, gv

    return _emit("matvec_lastdim", (x, v), xd @ vd, bwd)


def softmax_rows(x: Tensor, lengths=None) -> Tensor:
    """Row-wise stable softmax of a (B, T) tensor.

    With `lengths`, positions t >= lengths[b] get weight exactly 0 and
    receive zero gradient (padding for variable-length sequences).
    """
    if x.data.ndim != 2:
        raise DimensionError(f"softmax_rows needs a matrix, got {x.shape}")
    bsz, tmax = x.shape
    if lengths is None:
        valid = np.ones((bsz, tmax), dtype=bool)
    else:
        lens = np.asarray(lengths, dtype=np.intp)
        if lens.shape != (bsz,) or lens.min() < 1 or lens.max() > tmax:
            raise DimensionError(f"softmax_rows: bad lengths for shape {x.shape}")
        valid = np.arange(tmax)[None, :] < lens[:, None]
    masked = np.where(valid, x.data, -np.inf)
    shifted = masked - masked.max(axis=1, keepdims=True)
    e = np.where(valid, np.exp(shifted), 0.0).astype(x.dtype)
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(out_grad):
        inner = (out_grad * y).sum(axis=1, keepdims=True)
        return (y * (out_grad - inner),)

    return _emit("softmax_rows", (x,), y, bwd)


def weighted_rows_sum(rows: Tensor, weights: Tensor) -> Tensor:
    """Pool (B, T, H) rows with (B, T) weights into (B, H)."""
    if rows.data.ndim != 3 or weights.data.ndim != 2 or rows.shape[:2] != weights.shape:
        raise DimensionError(
            f"weighted_rows_sum: incompatible shapes {rows.shape} and {weights.shape}"
        )
    rd, wd = rows.data, weights.data

    def bwd(out_grad):
        g_rows = wd[:, :, None] * out_grad[:, None, :]
        g_w = np.einsum("bth,bh->bt", rd, out_grad)
        return g_rows, g_w

    return _emit("weighted_rows_sum", (rows, weights),
                 np.einsum("bth,bt->bh", rd, wd), bwd)


# ---------------------------------------------------------------------------
# similarity and loss primitives


def _clamped_norm(v: np.ndarray):
    n = np.sqrt(np.dot(v, v))
    return n, np.maximum(n, NORM_EPS)


def cosine_similarity(u: Tensor, v: Tensor) -> Tensor:
    """cos(u, v) with norm denominators clamped at 1e-8.

    Gradients flow through the clamped denominator: a clamped norm is
    treated as a constant.
    """
    if u.data.ndim != 1 or v.data.ndim != 1 or u.shape != v.shape:
        raise DimensionError(f"cosine_similarity: incompatible shapes {u.shape} and {v.shape}")
    if u.size < 1:
        raise DimensionError("cosine_similarity of empty vectors")
    ud, vd = u.data, v.data
    nu, nuc = _clamped_norm(ud)
    nv, nvc = _clamped_norm(vd)
    if nu < NORM_EPS and nv < NORM_EPS:
        raise DegenerateInputError("cosine_similarity: both inputs have ~zero norm")
    dot = np.dot(ud, vd)
    s = dot / (nuc * nvc)

    def bwd(out_grad):
        gu = vd / (nuc * nvc)
        if nu > NORM_EPS:
            gu = gu - ud * (s / (nuc * nuc))
        gv = ud / (nuc * nvc)
        if nv > NORM_EPS:
            gv = gv - vd * (s / (nvc * nvc))
        return out_grad * gu, out_grad * gv

    return _emit("cosine_similarity", (u, v), np.asarray(s), bwd)


def cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    """All-pairs cosine similarities: (n, d) x (m, d) -> (n, m).

    Each entry is computed with the same scalar arithmetic as
    `cosine_similarity` (per-pair np.dot), so the two agree bitwise;
    BLAS matrix products accumulate differently and would not.
    """
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise DimensionError(f"cosine_matrix: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    n, m = ad.shape[0], bd.shape[0]
    na = np.empty(n, dtype=ad.dtype)
    nb = np.empty(m, dtype=bd.dtype)
    for i in range(n):
        na[i] = np.sqrt(np.dot(ad[i], ad[i]))
    for j in range(m):
        nb[j] = np.sqrt(np.dot(bd[j], bd[j]))
    if na.min() < NORM_EPS and nb.min() < NORM_EPS:
        raise DegenerateInputError("cosine_matrix: a zero-norm row on each side")
    nac = np.maximum(na, NORM_EPS)
    nbc = np.maximum(nb, NORM_EPS)
    out = np.empty((n, m), dtype=ad.dtype)
    brows = [bd[j] for j in range(m)]
    for i in range(n):
        ai = ad[i]
        nai = nac[i]
        row = out[i]
        for j in range(m):
            row[j] = np.dot(ai, brows[j]) / (nai * nbc[j])

    def bwd(out_grad):
        w = out_grad / (nac[:, None] * nbc[None, :])
        live_a = (na > NORM_EPS).astype(ad.dtype)
        live_b = (nb > NORM_EPS).astype(bd.dtype)
        ga = w @ bd - ad * (((out_grad * out).sum(axis=1) / (nac * nac)) * live_a)[:, None]
        gb = w.T @ ad - bd * (((out_grad * out).sum(axis=0) / (nbc * nbc)) * live_b)[:, None]
        return ga, gb

    return _emit("cosine_matrix", (a, b), out, bwd)


def hinge_margin(s_neg: Tensor, s_pos: Tensor, alpha: float) -> Tensor:
    """max(0, alpha + s_neg - s_pos), elementwise; 0 subgradient at the kink."""
    if alpha < 0:
        raise ConfigError(f"hinge margin must be >= 0, got {alpha}")
    _binary_shapes("hinge_margin", s_neg, s_pos)
    raw = alpha + s_neg.data - s_pos.data
    active = raw > 0

    def bwd(out_grad):
        g = out_grad * active
        return _reduce_to(g, s_neg.shape), _reduce_to(-g, s_pos.shape)

    return _emit("hinge_margin", (s_neg, s_pos), np.maximum(raw, 0), bwd)


def cross_entropy_rows(logits: Tensor, targets) -> Tensor:
    """Row-wise softmax cross-entropy: (B, C) logits -> (B,) losses.

    Backward is the textbook softmax(logits) - one_hot(target).
    """
    if logits.data.ndim != 2:
        raise DimensionError(f"cross_entropy_rows needs (B, C) logits, got {logits.shape}")
    idx = np.asarray(targets, dtype=np.intp)
    bsz, ncls = logits.shape
    if idx.shape != (bsz,):
        raise DimensionError(f"targets shape {idx.shape} does not match batch {bsz}")
    if idx.size and (idx.min() < 0 or idx.max() >= ncls):
        raise DataError(f"class index out of range for {ncls} classes")
    ld = logits.data
    shifted = ld - ld.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    losses = log_z - shifted[np.arange(bsz), idx]
    probs = np.exp(shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True)))

    def bwd(out_grad):
        g = probs.copy()
        g[np.arange(bsz), idx] -= 1.0
        return (g * out_grad[:, None],)

    return _emit("cross_entropy", (logits,), losses.astype(ld.dtype), bwd)


def cross_entropy(logits: Tensor, target: int) -> Tensor:
    """Softmax cross-entropy of 1-d logits against one class index."""
    if logits.data.ndim != 1:
        raise DimensionError(f"cross_entropy needs 1-d logits, got {logits.shape}")
    rows = reshape(logits, (1, logits.shape[0]))
    return reshape(cross_entropy_rows(rows, [int(target)]), ())


# ---------------------------------------------------------------------------
# fused recurrent sequence (kernel-backed)


def lstm_sequence(x: Tensor, wx: Tensor, wh: Tensor, bias: Tensor) -> Tensor:
    """Run a gated recurrent cell over (B, T, D) inputs -> (B, T, H) states.

    Zero initial state. Padded steps of shorter sequences are computed
    but carry no gradient as long as downstream consumers mask them out
    (the pooled attention does). Gate blocks are [input, forget,
    candidate, output]; the pointwise cell math runs on the selected
    kernel backend, the matmuls on BLAS.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"lstm_sequence needs (B, T, D) input, got {x.shape}")
    bsz, tmax, din = x.shape
    h4 = wx.shape[1]
    hdim = h4 // 4
    if wx.shape != (din, h4) or wh.shape != (hdim, h4) or bias.shape != (h4,):
        raise DimensionError(
            f"lstm_sequence: weight shapes {wx.shape}/{wh.shape}/{bias.shape} "
            f"do not fit input {x.shape}"
        )
    xd, wxd, whd, bd = x.data, wx.data, wh.data, bias.data
    dt = xd.dtype
    # time-major internals keep every per-step 2-d slab C-contiguous
    # for the compiled kernel
    xt = np.ascontiguousarray(xd.transpose(1, 0, 2))
    hs = np.zeros((tmax, bsz, hdim), dtype=dt)
    cs = np.zeros((tmax, bsz, hdim), dtype=dt)
    gates_all = np.empty((tmax, bsz, h4), dtype=dt)
    h = np.zeros((bsz, hdim), dtype=dt)
    c = np.zeros((bsz, hdim), dtype=dt)
    for t in range(tmax):
        gates = xt[t] @ wxd + h @ whd + bd
        _kernels.lstm_cell_forward(gates, c, cs[t], hs[t])
        gates_all[t] = gates
        h = hs[t]
        c = cs[t]

    def bwd(out_grad):
        ogt = np.ascontiguousarray(out_grad.transpose(1, 0, 2))
        dx = np.empty_like(xt)
        dwx = np.zeros_like(wxd)
        dwh = np.zeros_like(whd)
        db = np.zeros_like(bd)
        dh_next = np.zeros((bsz, hdim), dtype=dt)
        dc_next = np.zeros((bsz, hdim), dtype=dt)
        dgates = np.empty((bsz, h4), dtype=dt)
        dc_prev = np.empty((bsz, hdim), dtype=dt)
        zero_state = np.zeros((bsz, hdim), dtype=dt)
        for t in range(tmax - 1, -1, -1):
            dh = ogt[t] + dh_next
            c_prev = cs[t - 1] if t > 0 else zero_state
            _kernels.lstm_cell_backward(gates_all[t], c_prev, cs[t], dh,
                                        dc_next, dgates, dc_prev)
            dx[t] = dgates @ wxd.T
            dwx += xt[t].T @ dgates
            h_prev = hs[t - 1] if t > 0 else zero_state
            dwh += h_prev.T @ dgates
            db += dgates.sum(axis=0)
            dh_next = dgates @ whd.T
            dc_next, dc_prev = dc_prev, dc_next
        return dx.transpose(1, 0, 2), dwx, dwh, db

    return _emit("lstm_sequence", (x, wx, wh, bias),
                 np.ascontiguousarray(hs.transpose(1, 0, 2)), bwd)
