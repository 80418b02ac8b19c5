"""Finite-difference verification of analytic gradients.

The check runs in float64 regardless of the network's working precision:
central differences at step 1e-3 are meaningless at float32 resolution, and
the analytic backward pass is dtype-agnostic anyway. Parameters are restored
to their original arrays afterwards.
"""

from __future__ import annotations

import numpy as np

from promo.errors import ShapeError
from promo.nn.tensor import GradientTape, Tensor, sum_
from promo.seeding import rng_from

MAX_CHECK_PARAMS = 10_000


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))


def analytic_and_numeric_grads(net, x, seed: int, train: bool = False, fd_step: float = 1e-4):
    """(analytic, numeric) gradient dicts keyed by parameter name.

    The loss is the plain sum of the network output; dropout masks (when
    ``train``) are re-derived from ``seed`` on every evaluation so the loss
    is a deterministic function of the parameters.
    """
    named = net.named_parameters()
    total = sum(p.data.size for p in named.values())
    if total >= MAX_CHECK_PARAMS:
        raise ShapeError(f"network too large for finite differences ({total} params)")

    originals = {name: p.data for name, p in named.items()}
    for p in named.values():
        p.data = p.data.astype(np.float64)
    x_in = np.asarray(x)
    if x_in.dtype.kind == "f":
        x_in = x_in.astype(np.float64)

    def run():
        t = x_in if x_in.dtype.kind in "iu" else Tensor(x_in, dtype=np.float64)
        return net(t, train=train, rng=rng_from(seed, "dropout"))

    try:
        with GradientTape() as tape:
            loss = sum_(run())
        raw = tape.gradients(loss)
        by_param = {id(p): g for p, g in raw.items()}
        analytic = {name: by_param[id(p)] for name, p in named.items()}

        numeric = {}
        for name, p in named.items():
            flat = p.data.reshape(-1)
            num = np.zeros_like(flat)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + fd_step
                hi = float(run().data.sum())
                flat[i] = orig - fd_step
                lo = float(run().data.sum())
                flat[i] = orig
                num[i] = (hi - lo) / (2.0 * fd_step)
            numeric[name] = num.reshape(p.data.shape)
    finally:
        for name, p in named.items():
            p.data = originals[name]
    return analytic, numeric


def gradient_check(net, x, seed: int, train: bool = False, fd_step: float = 1e-4) -> float:
    """Max over parameters of the relative analytic/numeric disagreement."""
    analytic, numeric = analytic_and_numeric_grads(net, x, seed, train=train, fd_step=fd_step)
    return max(max_relative_error(analytic[name], numeric[name]) for name in analytic)
