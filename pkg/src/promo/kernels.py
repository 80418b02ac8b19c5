"""Dual-backend numeric kernels.

Each kernel exists as a vectorized numpy implementation (``*_np``) and a loop
implementation compiled by numba when available (``*_nb``). The public
functions dispatch on :data:`promo.accel.USE_NUMBA`. Inputs are converted to
contiguous float64 (the rotation/FK/Viterbi kernels) or kept in the caller's
dtype (the elementwise ones).
"""

from __future__ import annotations

import numpy as np

from promo.accel import NUMBA_AVAILABLE, USE_NUMBA

_GELU_C0 = 0.7978845608028654  # sqrt(2/pi)
_GELU_C1 = 0.044715

# thresholds for degenerate 6D inputs: near-zero first column, or columns
# within ~1e-4 rad of parallel
_SIXD_NORM_EPS = 1e-6
_SIXD_SIN_EPS = 1e-4


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------

def _sixd_to_rotmat_np(r6):
    n = r6.shape[0]
    a = r6[:, 0:3]
    b = r6[:, 3:6]
    na = np.sqrt(np.sum(a * a, axis=1))
    nb = np.sqrt(np.sum(b * b, axis=1))
    bad = (na < _SIXD_NORM_EPS) | (nb < _SIXD_NORM_EPS)
    safe_na = np.where(na > 0.0, na, 1.0)
    c1 = a / safe_na[:, None]
    dot = np.sum(c1 * b, axis=1)
    r = b - dot[:, None] * c1
    nr = np.sqrt(np.sum(r * r, axis=1))
    bad = bad | (nr < _SIXD_SIN_EPS * np.where(nb > 0.0, nb, 1.0))
    safe_nr = np.where(nr > 0.0, nr, 1.0)
    c2 = r / safe_nr[:, None]
    c3 = np.cross(c1, c2)
    out = np.empty((n, 3, 3))
    out[:, :, 0] = c1
    out[:, :, 1] = c2
    out[:, :, 2] = c3
    return out, bad


def _fk_positions_np(local_rot, parents, offsets, root_pos):
    n = local_rot.shape[0]
    j_count = parents.shape[0]
    pos = np.empty((n, j_count, 3))
    glob = np.empty((n, j_count, 3, 3))
    pos[:, 0] = root_pos
    glob[:, 0] = local_rot[:, 0]
    for j in range(1, j_count):
        p = parents[j]
        pos[:, j] = pos[:, p] + np.einsum("nab,b->na", glob[:, p], offsets[j])
        glob[:, j] = np.matmul(glob[:, p], local_rot[:, j])
    return pos


def _viterbi_np(log_emit, log_trans):
    f_count, l_count = log_emit.shape
    path = np.zeros(f_count, dtype=np.int64)
    if f_count == 1:
        path[0] = int(np.argmax(log_emit[0]))
        return path, float(log_emit[0, path[0]])
    # backward DP so the forward readout breaks ties toward the smallest
    # index at the earliest frame
    psi = np.zeros((f_count - 1, l_count), dtype=np.int64)
    delta = log_emit[f_count - 1].copy()
    for i in range(f_count - 2, -1, -1):
        cand = log_trans[i] + delta[None, :]
        psi[i] = np.argmax(cand, axis=1)
        delta = log_emit[i] + cand[np.arange(l_count), psi[i]]
    path[0] = int(np.argmax(delta))
    score = float(delta[path[0]])
    for i in range(f_count - 1):
        path[i + 1] = psi[i, path[i]]
    return path, score


def _gelu_fwd_np(x):
    u = _GELU_C0 * (x + _GELU_C1 * x * x * x)
    t = np.tanh(u)
    return 0.5 * x * (1.0 + t), t


def _gelu_bwd_np(x, t, gy):
    du = _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * x * x)
    return gy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def _softmax_fwd_np(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _softmax_bwd_np(g, y):
    dot = (g * y).sum(axis=1, keepdims=True)
    return y * (g - dot)


def _layernorm_fwd_np(x, gamma, beta, eps):
    mu = x.mean(axis=1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=1)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv[:, None]
    return xhat * gamma + beta, xhat, inv


def _layernorm_bwd_np(g, xhat, inv, gamma):
    gxhat = g * gamma
    m1 = gxhat.mean(axis=1, keepdims=True)
    m2 = (gxhat * xhat).mean(axis=1, keepdims=True)
    gx = inv[:, None] * (gxhat - m1 - xhat * m2)
    ggamma = (g * xhat).sum(axis=0)
    gbeta = g.sum(axis=0)
    return gx, ggamma, gbeta


def _adamw_update_np(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    denom = np.sqrt(v / bc2) + eps
    p -= lr * ((m / bc1) / denom + weight_decay * p)


# ---------------------------------------------------------------------------
# loop implementations (numba targets)
# ---------------------------------------------------------------------------

# resolved to numba.prange under the JIT; plain range in the fallback
_prange = range


def _sixd_to_rotmat_loop(r6):
    n = r6.shape[0]
    out = np.empty((n, 3, 3))
    bad = np.zeros(n, dtype=np.bool_)
    for i in range(n):
        ax = r6[i, 0]
        ay = r6[i, 1]
        az = r6[i, 2]
        bx = r6[i, 3]
        by = r6[i, 4]
        bz = r6[i, 5]
        na = np.sqrt(ax * ax + ay * ay + az * az)
        nb = np.sqrt(bx * bx + by * by + bz * bz)
        if na < _SIXD_NORM_EPS or nb < _SIXD_NORM_EPS:
            bad[i] = True
            out[i, 0, 0] = 1.0
            out[i, 1, 1] = 1.0
            out[i, 2, 2] = 1.0
            out[i, 0, 1] = out[i, 0, 2] = out[i, 1, 0] = 0.0
            out[i, 1, 2] = out[i, 2, 0] = out[i, 2, 1] = 0.0
            continue
        c1x = ax / na
        c1y = ay / na
        c1z = az / na
        dot = c1x * bx + c1y * by + c1z * bz
        rx = bx - dot * c1x
        ry = by - dot * c1y
        rz = bz - dot * c1z
        nr = np.sqrt(rx * rx + ry * ry + rz * rz)
        if nr < _SIXD_SIN_EPS * nb:
            bad[i] = True
            out[i, 0, 0] = 1.0
            out[i, 1, 1] = 1.0
            out[i, 2, 2] = 1.0
            out[i, 0, 1] = out[i, 0, 2] = out[i, 1, 0] = 0.0
            out[i, 1, 2] = out[i, 2, 0] = out[i, 2, 1] = 0.0
            continue
        c2x = rx / nr
        c2y = ry / nr
        c2z = rz / nr
        c3x = c1y * c2z - c1z * c2y
        c3y = c1z * c2x - c1x * c2z
        c3z = c1x * c2y - c1y * c2x
        out[i, 0, 0] = c1x
        out[i, 1, 0] = c1y
        out[i, 2, 0] = c1z
        out[i, 0, 1] = c2x
        out[i, 1, 1] = c2y
        out[i, 2, 1] = c2z
        out[i, 0, 2] = c3x
        out[i, 1, 2] = c3y
        out[i, 2, 2] = c3z
    return out, bad


def _fk_positions_loop(local_rot, parents, offsets, root_pos):
    n = local_rot.shape[0]
    j_count = parents.shape[0]
    pos = np.empty((n, j_count, 3))
    glob = np.empty((n, j_count, 3, 3))
    for s in range(n):
        for r in range(3):
            pos[s, 0, r] = root_pos[s, r]
            for c in range(3):
                glob[s, 0, r, c] = local_rot[s, 0, r, c]
        for j in range(1, j_count):
            p = parents[j]
            for r in range(3):
                acc = pos[s, p, r]
                for c in range(3):
                    acc += glob[s, p, r, c] * offsets[j, c]
                pos[s, j, r] = acc
            for r in range(3):
                for c in range(3):
                    acc = 0.0
                    for k in range(3):
                        acc += glob[s, p, r, k] * local_rot[s, j, k, c]
                    glob[s, j, r, c] = acc
    return pos


def _viterbi_loop(log_emit, log_trans):
    f_count, l_count = log_emit.shape
    path = np.zeros(f_count, dtype=np.int64)
    if f_count == 1:
        best = 0
        for j in range(1, l_count):
            if log_emit[0, j] > log_emit[0, best]:
                best = j
        path[0] = best
        return path, log_emit[0, best]
    psi = np.zeros((f_count - 1, l_count), dtype=np.int64)
    delta = np.empty(l_count)
    for j in range(l_count):
        delta[j] = log_emit[f_count - 1, j]
    nxt = np.empty(l_count)
    for i in range(f_count - 2, -1, -1):
        for j in range(l_count):
            best_k = 0
            best_v = log_trans[i, j, 0] + delta[0]
            for k in range(1, l_count):
                v = log_trans[i, j, k] + delta[k]
                if v > best_v:
                    best_v = v
                    best_k = k
            psi[i, j] = best_k
            nxt[j] = log_emit[i, j] + best_v
        for j in range(l_count):
            delta[j] = nxt[j]
    best = 0
    for j in range(1, l_count):
        if delta[j] > delta[best]:
            best = j
    path[0] = best
    for i in range(f_count - 1):
        path[i + 1] = psi[i, path[i]]
    return path, delta[best]


def _gelu_fwd_loop(x):
    out = np.empty_like(x)
    tanh_saved = np.empty_like(x)
    flat_x = x.ravel()
    flat_out = out.ravel()
    flat_t = tanh_saved.ravel()
    for i in _prange(flat_x.shape[0]):
        xi = flat_x[i]
        u = _GELU_C0 * (xi + _GELU_C1 * xi * xi * xi)
        t = np.tanh(u)
        flat_t[i] = t
        flat_out[i] = 0.5 * xi * (1.0 + t)
    return out, tanh_saved


def _gelu_bwd_loop(x, t, gy):
    out = np.empty_like(x)
    flat_x = x.ravel()
    flat_t = t.ravel()
    flat_gy = gy.ravel()
    flat_out = out.ravel()
    for i in _prange(flat_x.shape[0]):
        xi = flat_x[i]
        ti = flat_t[i]
        du = _GELU_C0 * (1.0 + 3.0 * _GELU_C1 * xi * xi)
        flat_out[i] = flat_gy[i] * (0.5 * (1.0 + ti) + 0.5 * xi * (1.0 - ti * ti) * du)
    return out


def _softmax_fwd_loop(x):
    n, d = x.shape
    y = np.empty_like(x)
    for i in _prange(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = np.exp(x[i, j] - m)
            y[i, j] = e
            s += e
        for j in range(d):
            y[i, j] /= s
    return y


def _softmax_bwd_loop(g, y):
    n, d = g.shape
    gx = np.empty_like(g)
    for i in _prange(n):
        dot = 0.0
        for j in range(d):
            dot += g[i, j] * y[i, j]
        for j in range(d):
            gx[i, j] = y[i, j] * (g[i, j] - dot)
    return gx


def _layernorm_fwd_loop(x, gamma, beta, eps):
    n, d = x.shape
    y = np.empty_like(x)
    xhat = np.empty_like(x)
    inv = np.empty(n, dtype=x.dtype)
    for i in _prange(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            c = x[i, j] - mu
            var += c * c
        var /= d
        s = 1.0 / np.sqrt(var + eps)
        inv[i] = s
        for j in range(d):
            h = (x[i, j] - mu) * s
            xhat[i, j] = h
            y[i, j] = h * gamma[j] + beta[j]
    return y, xhat, inv


def _layernorm_bwd_loop(g, xhat, inv, gamma):
    n, d = g.shape
    gx = np.empty_like(g)
    ggamma = np.zeros(d, dtype=g.dtype)
    gbeta = np.zeros(d, dtype=g.dtype)
    for i in range(n):
        m1 = 0.0
        m2 = 0.0
        for j in range(d):
            gh = g[i, j] * gamma[j]
            m1 += gh
            m2 += gh * xhat[i, j]
            ggamma[j] += g[i, j] * xhat[i, j]
            gbeta[j] += g[i, j]
        m1 /= d
        m2 /= d
        for j in range(d):
            gx[i, j] = inv[i] * (g[i, j] * gamma[j] - m1 - xhat[i, j] * m2)
    return gx, ggamma, gbeta


def _adamw_update_loop(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    for i in range(p.shape[0]):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        denom = np.sqrt(v[i] / bc2) + eps
        p[i] -= lr * ((m[i] / bc1) / denom + weight_decay * p[i])


if NUMBA_AVAILABLE:
    import numba
    from numba import njit

    _prange = numba.prange

    _sixd_to_rotmat_nb = njit(cache=True)(_sixd_to_rotmat_loop)
    _fk_positions_nb = njit(cache=True)(_fk_positions_loop)
    _viterbi_nb = njit(cache=True)(_viterbi_loop)
    _parallel = numba.config.NUMBA_NUM_THREADS > 1
    _gelu_fwd_nb = njit(cache=True, parallel=_parallel)(_gelu_fwd_loop)
    _gelu_bwd_nb = njit(cache=True, parallel=_parallel)(_gelu_bwd_loop)
    _softmax_fwd_nb = njit(cache=True, parallel=_parallel)(_softmax_fwd_loop)
    _softmax_bwd_nb = njit(cache=True, parallel=_parallel)(_softmax_bwd_loop)
    _layernorm_fwd_nb = njit(cache=True)(_layernorm_fwd_loop)
    _layernorm_bwd_nb = njit(cache=True)(_layernorm_bwd_loop)
    _adamw_update_nb = njit(cache=True)(_adamw_update_loop)
else:  # pragma: no cover - exercised only without numba installed
    _sixd_to_rotmat_nb = None
    _fk_positions_nb = None
    _viterbi_nb = None
    _gelu_fwd_nb = None
    _gelu_bwd_nb = None
    _softmax_fwd_nb = None
    _softmax_bwd_nb = None
    _layernorm_fwd_nb = None
    _layernorm_bwd_nb = None
    _adamw_update_nb = None


# ---------------------------------------------------------------------------
# public dispatchers
# ---------------------------------------------------------------------------

def _c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def sixd_to_rotmat_batch(r6: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gram-Schmidt (N, 6) -> (N, 3, 3) plus a per-row degeneracy mask."""
    r6 = _c64(r6)
    if USE_NUMBA:
        return _sixd_to_rotmat_nb(r6)
    return _sixd_to_rotmat_np(r6)


def fk_positions_batch(local_rot, parents, offsets, root_pos) -> np.ndarray:
    """Joint world positions for a batch of poses on one skeleton."""
    local_rot = _c64(local_rot)
    parents = np.ascontiguousarray(parents, dtype=np.int64)
    offsets = _c64(offsets)
    root_pos = _c64(root_pos)
    if USE_NUMBA:
        return _fk_positions_nb(local_rot, parents, offsets, root_pos)
    return _fk_positions_np(local_rot, parents, offsets, root_pos)


def viterbi_dp(log_emit, log_trans) -> tuple[np.ndarray, float]:
    """Max-sum path through (F, L) emissions and (F-1, L, L) transitions."""
    log_emit = _c64(log_emit)
    log_trans = _c64(log_trans)
    if USE_NUMBA:
        path, score = _viterbi_nb(log_emit, log_trans)
    else:
        path, score = _viterbi_np(log_emit, log_trans)
    return path, float(score)


def gelu_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(gelu(x), tanh term saved for the backward pass)."""
    if USE_NUMBA:
        return _gelu_fwd_nb(np.ascontiguousarray(x))
    return _gelu_fwd_np(x)


def gelu_backward(x: np.ndarray, t: np.ndarray, gy: np.ndarray) -> np.ndarray:
    if USE_NUMBA:
        return _gelu_bwd_nb(np.ascontiguousarray(x), t, np.ascontiguousarray(gy))
    return _gelu_bwd_np(x, t, gy)


def softmax_forward(x2d: np.ndarray) -> np.ndarray:
    """Row softmax of a 2-D view."""
    if USE_NUMBA:
        return _softmax_fwd_nb(x2d)
    return _softmax_fwd_np(x2d)


def softmax_backward(g2d: np.ndarray, y2d: np.ndarray) -> np.ndarray:
    if USE_NUMBA:
        return _softmax_bwd_nb(np.ascontiguousarray(g2d), y2d)
    return _softmax_bwd_np(g2d, y2d)


def layernorm_forward(x2d, gamma, beta, eps: float):
    """(normalized output, xhat, inverse std) over rows of a 2-D view."""
    if USE_NUMBA:
        return _layernorm_fwd_nb(np.ascontiguousarray(x2d), gamma, beta, eps)
    return _layernorm_fwd_np(x2d, gamma, beta, eps)


def layernorm_backward(g2d, xhat, inv, gamma):
    if USE_NUMBA:
        return _layernorm_bwd_nb(np.ascontiguousarray(g2d), xhat, inv, gamma)
    return _layernorm_bwd_np(g2d, xhat, inv, gamma)


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay) -> None:
    """In-place fused AdamW update on flat float arrays."""
    if USE_NUMBA:
        _adamw_update_nb(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay)
    else:
        _adamw_update_np(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay)
