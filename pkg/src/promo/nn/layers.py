"""Network layers and containers built on the autodiff primitives."""

from __future__ import annotations

import numpy as np

from promo.errors import ShapeError
from promo.nn import tensor as T
from promo.nn.tensor import Parameter, Tensor

DEFAULT_DTYPE = T.DEFAULT_DTYPE


def sinusoidal_embedding(t, dim: int) -> np.ndarray:
    """Interleaved sine/cosine embedding with geometric frequency spacing.

    ``t`` may be a scalar timestep or an array of them; output gains a
    trailing axis of size ``dim``. Not differentiated: timestep embeddings
    feed trainable layers but are themselves constants.
    """
    if dim % 2 != 0:
        raise ShapeError("sinusoidal embedding dimension must be even")
    t_arr = np.asarray(t, dtype=np.float64)
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    args = t_arr[..., None] * freqs
    out = np.empty(t_arr.shape + (dim,), dtype=DEFAULT_DTYPE)
    out[..., 0::2] = np.sin(args)
    out[..., 1::2] = np.cos(args)
    return out


class Module:
    """Base class providing recursive parameter discovery."""

    def named_parameters(self, prefix: str = "") -> dict[str, Parameter]:
        out: dict[str, Parameter] = {}
        for key, value in vars(self).items():
            name = f"{prefix}{key}"
            if isinstance(value, Parameter):
                out[name] = value
            elif isinstance(value, Module):
                out.update(value.named_parameters(f"{name}."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.named_parameters(f"{name}.{i}."))
                    elif isinstance(item, Parameter):
                        out[f"{name}.{i}"] = item
        return out

    def parameters(self) -> list[Parameter]:
        return list(self.named_parameters().values())

    def param_count(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
        return self

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator, bias: bool = True):
        bound = 1.0 / np.sqrt(in_dim)
        self.weight = Parameter(rng.uniform(-bound, bound, size=(in_dim, out_dim)))
        self.bias = Parameter(rng.uniform(-bound, bound, size=(out_dim,))) if bias else None
        self.in_dim = in_dim
        self.out_dim = out_dim

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        y = T.matmul(x, self.weight)
        if self.bias is not None:
            y = T.add(y, self.bias)
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(dim))
        self.beta = Parameter(np.zeros(dim))
        self.eps = eps
        self.dim = dim

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, eps=self.eps)


class GELU(Module):
    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        return T.gelu(x)


class Dropout(Module):
    def __init__(self, p: float):
        self.p = p

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        if not train or self.p == 0.0:
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an explicit rng")
        return T.dropout(x, self.p, rng)


class Embedding(Module):
    def __init__(self, vocab_size: int, dim: int, rng: np.random.Generator):
        self.table = Parameter(rng.normal(0.0, 0.02, size=(vocab_size, dim)))
        self.vocab_size = vocab_size
        self.dim = dim

    def forward(self, ids, train: bool = False, rng=None) -> Tensor:
        return T.embedding(self.table, np.asarray(ids))


class MultiHeadAttention(Module):
    """Scaled dot-product attention; self-attention when ``kv`` is omitted."""

    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dropout: float = 0.0):
        if dim % heads != 0:
            raise ShapeError(f"model dim {dim} not divisible by {heads} heads")
        self.wq = Linear(dim, dim, rng)
        # a key-projection bias shifts every score row by a constant, which
        # softmax cancels; the parameter would be unidentifiable
        self.wk = Linear(dim, dim, rng, bias=False)
        self.wv = Linear(dim, dim, rng)
        self.wo = Linear(dim, dim, rng)
        self.dim = dim
        self.heads = heads
        self.head_dim = dim // heads
        self.p_drop = dropout

    def _split(self, x: Tensor, batch: int, seq: int) -> Tensor:
        x = T.reshape(x, (batch, seq, self.heads, self.head_dim))
        return T.swap_axes(x, 1, 2)

    def project_kv_arrays(self, kv_arr: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Inference helper: precompute key/value tensors for a fixed
        condition sequence, shaped (B, heads, S, head_dim)."""
        batch, seq, _ = kv_arr.shape
        k = (kv_arr @ self.wk.weight.data)
        v = (kv_arr @ self.wv.weight.data) + self.wv.bias.data
        k = np.swapaxes(k.reshape(batch, seq, self.heads, self.head_dim), 1, 2)
        v = np.swapaxes(v.reshape(batch, seq, self.heads, self.head_dim), 1, 2)
        return np.ascontiguousarray(k), np.ascontiguousarray(v)

    def attend_with_cache(self, q_arr: np.ndarray, k: np.ndarray, v: np.ndarray,
                          pad_mask: np.ndarray | None = None) -> np.ndarray:
        """Inference attention against precomputed (k, v); pure arrays."""
        from promo import kernels

        batch, q_len, _ = q_arr.shape
        q = (q_arr @ self.wq.weight.data) + self.wq.bias.data
        q = np.swapaxes(q.reshape(batch, q_len, self.heads, self.head_dim), 1, 2)
        scores = (q @ np.swapaxes(k, -1, -2)) * (1.0 / np.sqrt(self.head_dim))
        if pad_mask is not None:
            scores = np.where(pad_mask[:, None, None, :],
                              np.asarray(-np.inf, dtype=scores.dtype), scores)
        shape = scores.shape
        attn = kernels.softmax_forward(
            np.ascontiguousarray(scores.reshape(-1, shape[-1]))).reshape(shape)
        out = attn @ v
        out = np.swapaxes(out, 1, 2).reshape(batch, q_len, self.dim)
        return (out @ self.wo.weight.data) + self.wo.bias.data

    def forward(self, x: Tensor, train: bool = False, rng=None, kv: Tensor | None = None,
                pad_mask: np.ndarray | None = None) -> Tensor:
        kv = x if kv is None else kv
        batch, q_len = x.shape[0], x.shape[1]
        k_len = kv.shape[1]
        q = self._split(self.wq(x), batch, q_len)
        k = self._split(self.wk(kv), batch, k_len)
        v = self._split(self.wv(kv), batch, k_len)
        scores = T.mul(T.matmul(q, T.swap_axes(k, -1, -2)), 1.0 / np.sqrt(self.head_dim))
        mask = None
        if pad_mask is not None:
            mask = np.asarray(pad_mask, dtype=bool).reshape(batch, 1, 1, k_len)
        attn = T.softmax(scores, mask=mask)
        out = T.matmul(attn, v)
        out = self.wo(T.reshape(T.swap_axes(out, 1, 2), (batch, q_len, self.dim)))
        # residual-style dropout on the projected output, not on the (much
        # larger) weight tensor
        if train and self.p_drop > 0.0:
            out = T.dropout(out, self.p_drop, rng)
        return out


class BiGRU(Module):
    """Single-layer bidirectional GRU; output concatenates both directions."""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator):
        self.in_dim = in_dim
        self.hidden = hidden
        bound = 1.0 / np.sqrt(hidden)

        def w(shape):
            return Parameter(rng.uniform(-bound, bound, size=shape))

        self.wi_f, self.wh_f = w((in_dim, 3 * hidden)), w((hidden, 3 * hidden))
        self.bi_f, self.bh_f = w((3 * hidden,)), w((3 * hidden,))
        self.wi_b, self.wh_b = w((in_dim, 3 * hidden)), w((hidden, 3 * hidden))
        self.bi_b, self.bh_b = w((3 * hidden,)), w((3 * hidden,))

    def _run(self, steps, wi, wh, bi, bh):
        batch = steps[0].shape[0]
        h = Tensor(np.zeros((batch, self.hidden), dtype=steps[0].dtype))
        outs = []
        for step in steps:
            h = T.gru_cell(step, h, wi, wh, bi, bh)
            outs.append(T.reshape(h, (batch, 1, self.hidden)))
        return outs

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        batch, seq = x.shape[0], x.shape[1]
        steps = [T.reshape(T.narrow(x, 1, t, 1), (batch, self.in_dim)) for t in range(seq)]
        fwd = self._run(steps, self.wi_f, self.wh_f, self.bi_f, self.bh_f)
        bwd = self._run(steps[::-1], self.wi_b, self.wh_b, self.bi_b, self.bh_b)[::-1]
        fwd_seq = T.concat(fwd, axis=1)
        bwd_seq = T.concat(bwd, axis=1)
        return T.concat([fwd_seq, bwd_seq], axis=2)


class Residual(Module):
    def __init__(self, inner: Module):
        self.inner = inner

    def forward(self, x: Tensor, train: bool = False, rng=None) -> Tensor:
        return T.add(x, self.inner(x, train=train, rng=rng))


class Sequential(Module):
    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, train: bool = False, rng=None) -> Tensor:
        if not isinstance(x, Tensor) and not isinstance(x, np.ndarray):
            x = np.asarray(x)
        if isinstance(x, np.ndarray) and x.dtype.kind in "iu":
            pass  # id inputs go straight into an Embedding layer
        elif not isinstance(x, Tensor):
            x = Tensor(x)
        for layer in self.layers:
            x = layer(x, train=train, rng=rng)
        return x.check_finite("network output")


_BUILDERS = {
    "linear": lambda cfg, rng: Linear(cfg["in_dim"], cfg["out_dim"], rng),
    "layer_norm": lambda cfg, rng: LayerNorm(cfg["dim"]),
    "gelu": lambda cfg, rng: GELU(),
    "attention": lambda cfg, rng: MultiHeadAttention(cfg["dim"], cfg["heads"], rng,
                                                     dropout=cfg.get("dropout", 0.0)),
    "bigru": lambda cfg, rng: BiGRU(cfg["in_dim"], cfg["hidden"], rng),
    "embedding": lambda cfg, rng: Embedding(cfg["vocab_size"], cfg["dim"], rng),
    "dropout": lambda cfg, rng: Dropout(cfg["p"]),
}


def _layer_dims(kind: str, cfg: dict):
    """(expected input dim, output dim); None means unconstrained."""
    if kind == "linear":
        return cfg["in_dim"], cfg["out_dim"]
    if kind == "layer_norm":
        return cfg["dim"], cfg["dim"]
    if kind == "attention":
        return cfg["dim"], cfg["dim"]
    if kind == "bigru":
        return cfg["in_dim"], 2 * cfg["hidden"]
    if kind == "embedding":
        return None, cfg["dim"]
    return None, None


def build_network(spec, rng: np.random.Generator) -> Sequential:
    """Assemble a Sequential from ordered layer descriptions.

    Each entry is ``(kind, config)`` with kind in {linear, layer_norm, gelu,
    attention, bigru, embedding, residual, dropout}. Adjacent feature
    dimensions must agree.
    """
    layers = []
    cur = None
    for kind, cfg in spec:
        if kind == "residual":
            inner = build_network(cfg["layers"], rng)
            layers.append(Residual(inner))
            continue
        if kind not in _BUILDERS:
            raise ValueError(f"unknown layer kind {kind!r}")
        want_in, out = _layer_dims(kind, cfg)
        if want_in is not None and cur is not None and want_in != cur:
            raise ShapeError(f"layer {kind!r} expects dim {want_in}, previous produced {cur}")
        layers.append(_BUILDERS[kind](cfg, rng))
        if out is not None:
            cur = out
    return Sequential(layers)
