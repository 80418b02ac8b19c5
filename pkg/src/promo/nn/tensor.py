"""Reverse-mode automatic differentiation over dense numpy arrays.

The primitive set is deliberately closed: matmul, elementwise add/sub/mul,
GELU, softmax (with optional key mask), layer normalization, embedding
gather, dropout, a fused GRU cell, and shape plumbing (reshape, axis swap,
concat, narrow, sum, mean). That set covers every network in this library
while keeping finite-difference verification tractable.

Recording is explicit: ops executed inside a :class:`GradientTape` block
append to the tape in creation order, which is a valid topological order, so
walking the tape backwards visits nodes in reverse topological order. Outside
a tape, the same ops run without building any graph, which is the fast path
used during sampling.
"""

from __future__ import annotations

import numpy as np

from promo import kernels
from promo.errors import NonFiniteError, ShapeError

DEFAULT_DTYPE = np.float32

_ACTIVE_TAPE = None


class Tensor:
    """A dense float array, optionally a node in the recorded graph."""

    __slots__ = ("data", "_parents", "_bwd")

    def __init__(self, data, dtype=None):
        self.data = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self._parents = ()
        self._bwd = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def check_finite(self, what: str = "tensor") -> "Tensor":
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite values in {what}")
        return self

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """A trainable leaf tensor."""

    __slots__ = ("name",)

    def __init__(self, data, name: str = "", dtype=None):
        super().__init__(data, dtype=dtype)
        self.name = name


class GradientTape:
    """Records primitive ops so gradients can be replayed once, in reverse."""

    def __init__(self):
        self._nodes: list[Tensor] = []
        self._params: list[Parameter] = []
        self._param_ids: set[int] = set()
        self._consumed = False

    def __enter__(self):
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("gradient tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def _record(self, node: Tensor):
        self._nodes.append(node)
        for p in node._parents:
            if isinstance(p, Parameter) and id(p) not in self._param_ids:
                self._param_ids.add(id(p))
                self._params.append(p)

    def gradients(self, loss: Tensor, sources=None, seed_grad=None):
        """Gradients of ``loss`` w.r.t. every parameter seen on the tape.

        Returns ``{Parameter: ndarray}``; pass ``sources`` to additionally
        get gradients for arbitrary tensors as a second return value. A tape
        can be consumed only once.
        """
        global _SOURCE_IDS
        if self._consumed:
            raise RuntimeError("tape already consumed")
        self._consumed = True
        if seed_grad is None:
            seed_grad = np.ones_like(loss.data)
        grads: dict[int, np.ndarray] = {id(loss): np.asarray(seed_grad, dtype=loss.dtype)}
        source_ids = {id(s) for s in (sources or ())}
        kept: dict[int, np.ndarray] = {}
        _SOURCE_IDS = source_ids
        try:
            for node in reversed(self._nodes):
                g = grads.pop(id(node), None)
                if g is None:
                    continue
                if id(node) in source_ids:
                    kept[id(node)] = g
                if node._bwd is None:
                    continue
                for parent, pg in zip(node._parents, node._bwd(g)):
                    if pg is None:
                        continue
                    acc = grads.get(id(parent))
                    grads[id(parent)] = pg if acc is None else acc + pg
        finally:
            _SOURCE_IDS = frozenset()
        out = {}
        for p in self._params:
            g = grads.get(id(p))
            if g is None:
                g = np.zeros_like(p.data)
            elif not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for parameter {p.name!r}")
            out[p] = g
        if sources is None:
            return out
        src_grads = [kept.get(id(s), grads.get(id(s))) for s in sources]
        return out, src_grads


def _make(data, parents, bwd):
    out = Tensor.__new__(Tensor)
    out.data = data
    tape = _ACTIVE_TAPE
    if tape is not None:
        out._parents = parents
        out._bwd = bwd
        tape._record(out)
    else:
        out._parents = ()
        out._bwd = None
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


_SOURCE_IDS: frozenset = frozenset()


def _needs_grad(t: Tensor) -> bool:
    """Whether a gradient for ``t`` can reach a parameter or a requested
    source. Constant leaves fail this, letting heavy ops skip dead work."""
    return isinstance(t, Parameter) or bool(t._parents) or id(t) in _SOURCE_IDS


# ---------------------------------------------------------------------------
# arithmetic
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; ``b`` may be a Tensor, array, or scalar."""
    a = _as_tensor(a)
    if isinstance(b, Tensor):
        return _make(
            a.data * b.data,
            (a, b),
            lambda g: (
                _unbroadcast(g * b.data, a.shape),
                _unbroadcast(g * a.data, b.shape),
            ),
        )
    const = np.asarray(b, dtype=a.dtype) if not np.isscalar(b) else b
    return _make(a.data * const, (a,), lambda g: (_unbroadcast(g * const, a.shape),))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.data.ndim > 1 else 0]:
        raise ShapeError(f"matmul inner dims disagree: {a.shape} @ {b.shape}")

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if _needs_grad(a) else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if _needs_grad(b) else None
        return ga, gb

    return _make(a.data @ b.data, (a, b), bwd)


def sum_(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).astype(a.dtype, copy=True),)

    return _make(a.data.sum(axis=axis), (a,), bwd)


def mean(a: Tensor, axis=None) -> Tensor:
    a = _as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]

    def bwd(g):
        if axis is None:
            full = np.broadcast_to(g, a.shape)
        else:
            full = np.broadcast_to(np.expand_dims(g, axis), a.shape)
        return ((full / count).astype(a.dtype, copy=False),)

    return _make(a.data.mean(axis=axis), (a,), bwd)


# ---------------------------------------------------------------------------
# nonlinearities and normalization
# ---------------------------------------------------------------------------

def gelu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    x = a.data
    y, tanh_saved = kernels.gelu_forward(x)
    return _make(y, (a,), lambda g: (kernels.gelu_backward(x, tanh_saved, g),))


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis. ``mask`` marks positions to exclude
    (True = masked out); fully masked rows are an error."""
    a = _as_tensor(a)
    x = a.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        if bool(np.all(mask, axis=-1).any()):
            raise ShapeError("softmax row has every position masked")
        x = np.where(mask, np.asarray(-np.inf, dtype=x.dtype), x)
    shape = x.shape
    dim = shape[-1]
    y2d = kernels.softmax_forward(np.ascontiguousarray(x.reshape(-1, dim)))

    def bwd(g):
        gx = kernels.softmax_backward(g.reshape(-1, dim), y2d)
        return (gx.reshape(shape),)

    return _make(y2d.reshape(shape), (a,), bwd)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    dim = shape[-1]
    x2d = np.ascontiguousarray(a.data.reshape(-1, dim))
    y2d, xhat, inv = kernels.layernorm_forward(x2d, gamma.data, beta.data, eps)

    def bwd(g):
        gx, ggamma, gbeta = kernels.layernorm_backward(
            g.reshape(-1, dim), xhat, inv, gamma.data)
        return gx.reshape(shape), ggamma, gbeta

    return _make(y2d.reshape(shape), (a, gamma, beta), bwd)


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,))


def l2_normalize(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Unit-normalize along the last axis."""
    a = _as_tensor(a)
    norm = np.sqrt(np.sum(a.data * a.data, axis=-1, keepdims=True) + eps)
    y = a.data / norm

    def bwd(g):
        dot = (g * y).sum(axis=-1, keepdims=True)
        return ((g - y * dot) / norm,)

    return _make(y, (a,), bwd)


def cross_entropy_logits(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean cross entropy of (B, C) logits against integer targets.

    Fused with the softmax for numerical stability; the backward pass is the
    classic (softmax - onehot) / B.
    """
    logits = _as_tensor(logits)
    targets = np.asarray(targets)
    if logits.data.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError("cross entropy expects (B, C) logits and (B,) targets")
    x = logits.data
    shifted = x - x.max(axis=-1, keepdims=True)
    logz = np.log(np.sum(np.exp(shifted), axis=-1))
    batch = x.shape[0]
    rows = np.arange(batch)
    losses = logz - shifted[rows, targets]

    def bwd(g):
        p = np.exp(shifted - logz[:, None])
        p[rows, targets] -= 1.0
        return ((g / batch) * p,)

    return _make(np.asarray(losses.mean(), dtype=x.dtype), (logits,), bwd)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.min() < 0 or ids.max() >= table.shape[0]:
        raise ShapeError("embedding id out of range")

    def bwd(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids, g)
        return (gt,)

    return _make(table.data[ids], (table,), bwd)


def dropout(a: Tensor, p: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; the mask comes only from the supplied generator."""
    a = _as_tensor(a)
    if not 0.0 <= p < 1.0:
        raise ValueError("dropout probability must be in [0, 1)")
    if p == 0.0:
        return a
    draw_dtype = a.dtype if a.dtype in (np.float32, np.float64) else np.float64
    keep = (rng.random(a.shape, dtype=draw_dtype) >= p).astype(a.dtype) / (1.0 - p)
    return _make(a.data * keep, (a,), lambda g: (g * keep,))


def gru_cell(x: Tensor, h: Tensor, wi: Tensor, wh: Tensor, bi: Tensor, bh: Tensor) -> Tensor:
    """One GRU step. Gate layout along the last axis is [reset|update|new]."""
    hidden = h.shape[-1]
    gi = x.data @ wi.data + bi.data
    gh = h.data @ wh.data + bh.data
    a_r = gi[..., :hidden] + gh[..., :hidden]
    a_z = gi[..., hidden:2 * hidden] + gh[..., hidden:2 * hidden]
    hn_pre = gh[..., 2 * hidden:]
    r = 1.0 / (1.0 + np.exp(-a_r))
    z = 1.0 / (1.0 + np.exp(-a_z))
    n = np.tanh(gi[..., 2 * hidden:] + r * hn_pre)
    out = (1.0 - z) * n + z * h.data

    def bwd(g):
        dn = g * (1.0 - z)
        dz = g * (h.data - n)
        dh = g * z
        dn_pre = dn * (1.0 - n * n)
        dr = dn_pre * hn_pre
        dhn_pre = dn_pre * r
        dz_pre = dz * z * (1.0 - z)
        dr_pre = dr * r * (1.0 - r)
        dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=-1)
        dgh = np.concatenate([dr_pre, dz_pre, dhn_pre], axis=-1)
        dx = dgi @ wi.data.T
        dh = dh + dgh @ wh.data.T
        dwi = x.data.T @ dgi
        dwh = h.data.T @ dgh
        dbi = dgi.sum(axis=tuple(range(dgi.ndim - 1)))
        dbh = dgh.sum(axis=tuple(range(dgh.ndim - 1)))
        return dx, dh, dwi, dwh, dbi, dbh

    return _make(out, (x, h, wi, wh, bi, bh), bwd)


# ---------------------------------------------------------------------------
# shape plumbing
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def swap_axes(a: Tensor, ax1: int, ax2: int) -> Tensor:
    a = _as_tensor(a)
    return _make(
        np.swapaxes(a.data, ax1, ax2),
        (a,),
        lambda g: (np.swapaxes(g, ax1, ax2),),
    )


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    a = _as_tensor(a)
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _make(np.ascontiguousarray(a.data[index]), (a,), bwd)
