"""AdamW update rules: bias correction, decoupled decay, error handling."""

import numpy as np
import pytest

from promo.errors import NonFiniteError, ShapeError
from promo.nn import AdamW, Linear
from promo.nn.tensor import Parameter
from promo.seeding import rng_from


def _single_param(value):
    p = Parameter(np.array([value], dtype=np.float32))
    return p, {"p": p}


class TestAdamW:
    def test_zero_grad_zero_decay_is_identity(self):
        rng = rng_from(0)
        layer = Linear(4, 4, rng)
        before = {n: p.data.copy() for n, p in layer.named_parameters().items()}
        opt = AdamW(layer.named_parameters(), lr=0.5, weight_decay=0.0)
        for _ in range(3):
            opt.step({p: np.zeros_like(p.data) for p in layer.parameters()})
        for n, p in layer.named_parameters().items():
            np.testing.assert_array_equal(p.data, before[n])

    def test_first_step_is_bias_corrected_unit_update(self):
        # closed form: m_hat = v_hat = 1 after one step with g = 1, so the
        # update is lr / (1 + eps) regardless of betas
        p, params = _single_param(1.0)
        opt = AdamW(params, lr=0.1, weight_decay=0.0)
        opt.step({p: np.array([1.0], dtype=np.float32)})
        np.testing.assert_allclose(p.data, [1.0 - 0.1], atol=1e-6)

    def test_decay_only_scales_parameter(self):
        p, params = _single_param(2.0)
        opt = AdamW(params, lr=0.1, weight_decay=0.01)
        opt.step({p: np.array([0.0], dtype=np.float32)})
        np.testing.assert_allclose(p.data, [2.0 * (1.0 - 0.001)], rtol=1e-6)

    def test_decay_is_decoupled_from_moments(self):
        # two parameters, same gradient, different values: the gradient part
        # of the update must be identical, only the decay part differs
        p1 = Parameter(np.array([1.0], dtype=np.float32))
        p2 = Parameter(np.array([5.0], dtype=np.float32))
        opt = AdamW({"a": p1, "b": p2}, lr=0.1, weight_decay=0.01)
        g = np.array([1.0], dtype=np.float32)
        opt.step({p1: g, p2: g})
        moved1 = 1.0 - float(p1.data[0])
        moved2 = 5.0 - float(p2.data[0])
        np.testing.assert_allclose(moved2 - moved1, 0.1 * 0.01 * (5.0 - 1.0), rtol=1e-4)

    def test_moment_shapes_match_parameters(self):
        rng = rng_from(1)
        layer = Linear(3, 5, rng)
        opt = AdamW(layer.named_parameters())
        for name, p in layer.named_parameters().items():
            assert opt._m[name].shape == p.data.shape
            assert opt._v[name].shape == p.data.shape

    def test_non_finite_gradient_rejected(self):
        p, params = _single_param(1.0)
        opt = AdamW(params)
        with pytest.raises(NonFiniteError):
            opt.step({p: np.array([np.nan], dtype=np.float32)})

    def test_shape_mismatch_rejected(self):
        p, params = _single_param(1.0)
        opt = AdamW(params)
        with pytest.raises(ShapeError):
            opt.step({p: np.zeros(3, dtype=np.float32)})

    def test_converges_on_quadratic(self):
        p, params = _single_param(4.0)
        opt = AdamW(params, lr=0.05, weight_decay=0.0)
        for _ in range(400):
            g = 2.0 * (p.data - 1.5)  # d/dp (p - 1.5)^2
            opt.step({p: g.astype(np.float32)})
        np.testing.assert_allclose(p.data, [1.5], atol=1e-2)
