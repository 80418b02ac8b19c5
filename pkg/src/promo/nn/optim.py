"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from promo import kernels
from promo.errors import NonFiniteError, ShapeError
from promo.nn.tensor import Parameter


class AdamW:
    """Bias-corrected Adam update plus weight decay applied directly to the
    parameters (never through the moments)."""

    def __init__(self, params: dict[str, Parameter], lr: float = 1e-4,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.01):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self, grads: dict[Parameter, np.ndarray]) -> None:
        self.step_count += 1
        for name, p in self.params.items():
            g = grads.get(p)
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ShapeError(f"gradient shape {g.shape} != param {name!r} shape {p.data.shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient for {name!r}")
            kernels.adamw_update(
                p.data.reshape(-1),
                np.ascontiguousarray(g, dtype=p.data.dtype).reshape(-1),
                self._m[name].reshape(-1),
                self._v[name].reshape(-1),
                self.step_count,
                self.lr, self.beta1, self.beta2, self.eps, self.weight_decay,
            )
