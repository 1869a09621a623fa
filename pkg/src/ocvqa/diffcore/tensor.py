"""Array type, primitive operations and reverse-mode gradient propagation.

Every primitive records a node on the tape (when grad mode is on) carrying an
op tag, its parents and whatever it cached for the backward pass.  Backward
rules live in ``RULES`` keyed by op tag and are looked up at backward time, so
a rule can be swapped out (tests use this for negative controls).
"""
from __future__ import annotations

import contextlib
import threading
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64
MASK_LOGIT = -1e30  # stands in for -inf in masked softmax logits

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


def compute_dtype():
    return getattr(_state, "dtype", DTYPE)


@contextlib.contextmanager
def precision(dtype):
    """Evaluate new tensors in ``dtype`` (e.g. ``np.longdouble``) inside the block."""
    prev = compute_dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class DimensionError(ValueError):
    pass


class Tensor:
    """Dense float64 array (or the active ``precision``) plus the tape bookkeeping needed for backward."""

    __slots__ = ("data", "grad", "parents", "op", "ctx", "name", "requires_grad")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=compute_dtype())
        self.grad = None
        self.parents: tuple[Tensor, ...] = ()
        self.op = "leaf"
        self.ctx: dict = {}
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self.op}{label})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data: np.ndarray, op: str, parents: Sequence[Tensor], **ctx) -> Tensor:
    out = Tensor(data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.op = op
        out.ctx = ctx
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def seq_reduce(x: np.ndarray, axis: int, keepdims: bool = False) -> np.ndarray:
    """Sum along ``axis`` by accumulating slices in index order.

    Unlike ``np.sum`` the result does not depend on the extent of ``axis``
    beyond the values themselves, so appending exact zeros never changes it.
    """
    axis = axis % x.ndim
    moved = np.moveaxis(x, axis, 0)
    if moved.shape[0] == 0:
        acc = np.zeros(moved.shape[1:], dtype=x.dtype)
    else:
        acc = moved[0].copy()
        for i in range(1, moved.shape[0]):
            acc += moved[i]
    return np.expand_dims(acc, axis) if keepdims else acc


RULES: dict[str, Callable] = {}


def rule(tag: str):
    def register(fn):
        RULES[tag] = fn
        return fn

    return register


# -- elementwise arithmetic -------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data + b.data, "add", (a, b))


@rule("add")
def _add_rule(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data - b.data, "sub", (a, b))


@rule("sub")
def _sub_rule(node, g):
    a, b = node.parents
    return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data * b.data, "mul", (a, b))


@rule("mul")
def _mul_rule(node, g):
    a, b = node.parents
    return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.data / b.data, "div", (a, b))


@rule("div")
def _div_rule(node, g):
    a, b = node.parents
    return (
        _unbroadcast(g / b.data, a.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, "neg", (a,))


@rule("neg")
def _neg_rule(node, g):
    return (-g,)


# -- nonlinearities ---------------------------------------------------------


def tanh(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.tanh(a.data), "tanh", (a,))


@rule("tanh")
def _tanh_rule(node, g):
    return (g * (1.0 - node.data * node.data),)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # exp of a nonpositive argument only
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    return _node(_sigmoid(a.data), "sigmoid", (a,))


@rule("sigmoid")
def _sigmoid_rule(node, g):
    s = node.data
    return (g * s * (1.0 - s),)


def elu(a, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.where(x > 0, x, alpha * np.expm1(np.minimum(x, 0.0)))
    return _node(out, "elu", (a,), alpha=alpha)


@rule("elu")
def _elu_rule(node, g):
    (a,) = node.parents
    alpha = node.ctx["alpha"]
    return (g * np.where(a.data > 0, 1.0, node.data + alpha),)


def exp(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.exp(a.data), "exp", (a,))


@rule("exp")
def _exp_rule(node, g):
    return (g * node.data,)


def log(a) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), "log", (a,))


@rule("log")
def _log_rule(node, g):
    return (g / node.parents[0].data,)


# -- linear algebra and reductions -----------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs matrices, got shapes {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner extents disagree: {a.shape} @ {b.shape}"
        )
    return _node(np.matmul(a.data, b.data), "matmul", (a, b))


@rule("matmul")
def _matmul_rule(node, g):
    a, b = node.parents
    ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
    gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    return _node(np.sum(a.data, axis=axis, keepdims=keepdims), "sum", (a,),
                 axis=axis, keepdims=keepdims)


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        for ax in sorted(axes):
            g = np.expand_dims(g, ax)
    return np.broadcast_to(g, shape)


@rule("sum")
def _sum_rule(node, g):
    (a,) = node.parents
    return (np.array(_expand_reduced(g, a.shape, node.ctx["axis"], node.ctx["keepdims"])),)


def seqsum(a, axis: int, keepdims: bool = False) -> Tensor:
    """Order-stable sum along one axis (see ``seq_reduce``)."""
    a = as_tensor(a)
    return _node(seq_reduce(a.data, axis, keepdims), "seqsum", (a,), axis=axis,
                 keepdims=keepdims)


@rule("seqsum")
def _seqsum_rule(node, g):
    (a,) = node.parents
    return (np.array(_expand_reduced(g, a.shape, node.ctx["axis"], node.ctx["keepdims"])),)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis, keepdims) * (1.0 / n)


# -- shape manipulation -----------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _node(a.data.reshape(shape), "reshape", (a,))


@rule("reshape")
def _reshape_rule(node, g):
    return (g.reshape(node.parents[0].shape),)


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    return _node(np.transpose(a.data, axes), "transpose", (a,), axes=tuple(axes))


@rule("transpose")
def _transpose_rule(node, g):
    return (np.transpose(g, np.argsort(node.ctx["axes"])),)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    return _node(a.data[index], "getitem", (a,), index=index)


@rule("getitem")
def _getitem_rule(node, g):
    (a,) = node.parents
    out = np.zeros(a.shape, dtype=compute_dtype())
    np.add.at(out, node.ctx["index"], g)
    return (out,)


def concat(parts: Iterable, axis: int = -1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    return _node(data, "concat", parts, axis=axis, sizes=sizes)


@rule("concat")
def _concat_rule(node, g):
    cuts = np.cumsum(node.ctx["sizes"])[:-1]
    return tuple(np.split(g, cuts, axis=node.ctx["axis"]))


def stack(parts: Iterable, axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    expanded = [reshape(p, _expand_shape(p.shape, axis)) for p in parts]
    return concat(expanded, axis=axis)


def _expand_shape(shape, axis):
    shape = list(shape)
    axis = axis if axis >= 0 else len(shape) + 1 + axis
    shape.insert(axis, 1)
    return tuple(shape)


def where(cond, a, b) -> Tensor:
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is constant."""
    a, b = as_tensor(a), as_tensor(b)
    cond = np.asarray(cond, dtype=bool)
    return _node(np.where(cond, a.data, b.data), "where", (a, b), cond=cond)


@rule("where")
def _where_rule(node, g):
    a, b = node.parents
    cond = node.ctx["cond"]
    return (
        _unbroadcast(np.where(cond, g, 0.0), a.shape),
        _unbroadcast(np.where(cond, 0.0, g), b.shape),
    )


def embedding(table, ids) -> Tensor:
    table = as_tensor(table)
    ids = np.asarray(ids, dtype=np.int64)
    return _node(table.data[ids], "embedding", (table,), ids=ids)


@rule("embedding")
def _embedding_rule(node, g):
    (table,) = node.parents
    out = np.zeros(table.shape, dtype=compute_dtype())
    np.add.at(out, node.ctx["ids"], g)
    return (out,)


# -- attention and recurrence ----------------------------------------------


def softmax_np(x: np.ndarray, axis: int = -1, mask=None) -> np.ndarray:
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, MASK_LOGIT)
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    if mask is not None:
        # exact zeros even when every entry of the slice is masked
        e = np.where(mask, e, 0.0)
    denom = seq_reduce(e, axis, keepdims=True)
    return np.divide(e, denom, out=np.zeros_like(e), where=denom > 0)


def softmax(x, axis: int = -1, mask=None) -> Tensor:
    """Softmax along ``axis``; masked entries get zero probability.

    A slice whose entries are all masked comes back as all zeros.
    """
    x = as_tensor(x)
    return _node(softmax_np(x.data, axis, mask), "softmax", (x,), axis=axis)


@rule("softmax")
def _softmax_rule(node, g):
    p = node.data
    axis = node.ctx["axis"]
    inner = seq_reduce(g * p, axis, keepdims=True)
    return (p * (g - inner),)


def lstm_cell(x, h_prev, c_prev, w_x, w_h, b):
    """One LSTM step with gate blocks ordered (input, forget, output, candidate).

    ``x``: (..., d_in), ``h_prev``/``c_prev``: (..., d_h), ``w_x``: (d_in, 4 d_h),
    ``w_h``: (d_h, 4 d_h), ``b``: (4 d_h,).  Returns ``(h, c)``.
    """
    x, h_prev, c_prev = as_tensor(x), as_tensor(h_prev), as_tensor(c_prev)
    w_x, w_h, b = as_tensor(w_x), as_tensor(w_h), as_tensor(b)
    d_h = h_prev.shape[-1]
    if w_x.shape != (x.shape[-1], 4 * d_h) or w_h.shape != (d_h, 4 * d_h) or b.shape != (4 * d_h,):
        raise DimensionError(
            f"lstm_cell parameter shapes {w_x.shape}, {w_h.shape}, {b.shape} "
            f"do not fit input {x.shape} and state {h_prev.shape}"
        )
    z = np.matmul(x.data, w_x.data) + np.matmul(h_prev.data, w_h.data) + b.data
    i = _sigmoid(z[..., :d_h])
    f = _sigmoid(z[..., d_h:2 * d_h])
    o = _sigmoid(z[..., 2 * d_h:3 * d_h])
    cand = np.tanh(z[..., 3 * d_h:])
    c = f * c_prev.data + i * cand
    tc = np.tanh(c)
    h = o * tc
    parents = (x, h_prev, c_prev, w_x, w_h, b)
    c_out = _node(c, "lstm_c", parents, gates=(i, f, o, cand), tc=tc, role="c")
    h_out = _node(h, "lstm_h", parents, gates=(i, f, o, cand), tc=tc, role="h")
    return h_out, c_out


def _lstm_backward(node, gh, gc):
    x, h_prev, c_prev, w_x, w_h, _ = node.parents
    i, f, o, cand = node.ctx["gates"]
    tc = node.ctx["tc"]
    gc = gc + gh * o * (1.0 - tc * tc)
    go = gh * tc
    dz = np.concatenate(
        [
            gc * cand * i * (1.0 - i),
            gc * c_prev.data * f * (1.0 - f),
            go * o * (1.0 - o),
            gc * i * (1.0 - cand * cand),
        ],
        axis=-1,
    )
    gx = np.matmul(dz, w_x.data.T)
    gh_prev = np.matmul(dz, w_h.data.T)
    gc_prev = gc * f
    lead = dz.reshape(-1, dz.shape[-1])
    gwx = np.matmul(np.broadcast_to(x.data, dz.shape[:-1] + x.shape[-1:]).reshape(-1, x.shape[-1]).T, lead)
    gwh = np.matmul(np.broadcast_to(h_prev.data, dz.shape[:-1] + h_prev.shape[-1:]).reshape(-1, h_prev.shape[-1]).T, lead)
    gb = lead.sum(axis=0)
    return (
        _unbroadcast(gx, x.shape),
        _unbroadcast(gh_prev, h_prev.shape),
        _unbroadcast(gc_prev, c_prev.shape),
        gwx,
        gwh,
        gb,
    )


@rule("lstm_h")
def _lstm_h_rule(node, g):
    return _lstm_backward(node, g, np.zeros_like(g))


@rule("lstm_c")
def _lstm_c_rule(node, g):
    return _lstm_backward(node, np.zeros_like(g), g)


def cross_entropy(probs, labels, floor: float = 1e-12) -> Tensor:
    """Mean of ``-log(max(p[label], floor))`` over the leading axis."""
    probs = as_tensor(probs)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise DimensionError(f"cross_entropy expects (B, A) probs and (B,) labels, got {probs.shape}, {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= probs.shape[1]):
        raise ValueError(f"label out of range [0, {probs.shape[1]}): {labels}")
    picked = probs.data[np.arange(len(labels)), labels]
    clipped = np.maximum(picked, floor)
    value = -np.log(clipped).mean()
    return _node(np.asarray(value), "cross_entropy", (probs,), labels=labels,
                 picked=picked, floor=floor)


@rule("cross_entropy")
def _cross_entropy_rule(node, g):
    (probs,) = node.parents
    labels, picked = node.ctx["labels"], node.ctx["picked"]
    out = np.zeros(probs.shape, dtype=compute_dtype())
    n = len(labels)
    live = picked > node.ctx["floor"]
    out[np.arange(n)[live], labels[live]] = -g / (picked[live] * n)
    return (out,)


# -- backward ---------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root: Tensor, params=None) -> dict[str, np.ndarray]:
    """Propagate d(root)/d(.) through the tape.

    Returns gradients keyed by parameter name.  ``params`` may be a mapping of
    name -> Tensor (for instance a ``ParamStore``); every entry then appears in
    the result, with zeros for parameters the root does not depend on.
    Named leaves reached from ``root`` also get their ``.grad`` set.
    """
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    grads: dict[int, np.ndarray] = {}
    named: dict[str, Tensor] = {}
    if root.requires_grad:
        grads[id(root)] = np.ones_like(root.data)
        for node in reversed(_topo_order(root)):
            g = grads.pop(id(node), None) if node.parents else grads.get(id(node))
            if g is None:
                continue
            if not node.parents:
                if node.name is not None:
                    named[node.name] = node
                continue
            for parent, pg in zip(node.parents, RULES[node.op](node, g)):
                if pg is None or not parent.requires_grad:
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = np.array(pg, dtype=DTYPE)
    out: dict[str, np.ndarray] = {}
    for name, leaf in named.items():
        leaf.grad = grads[id(leaf)]
        out[name] = leaf.grad
    if params is not None:
        for name, p in params.items():
            if name not in out:
                out[name] = np.zeros_like(p.data)
    return out
