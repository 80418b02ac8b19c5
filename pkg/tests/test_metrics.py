"""Evaluation metrics: hand-derived oracles and invariants."""

import numpy as np
import pytest

from promo.errors import ShapeError
from promo.metrics import (
    GaussianStats,
    ape,
    ave,
    fid,
    metric_report,
    multimodal_distance,
    r_precision,
    similarity_filter,
    smoothness,
)
from promo.seeding import rng_from


def _traj(n, f, j=22, seed=0):
    return rng_from(seed, "traj").standard_normal((n, f, j, 3))


class TestApe:
    def test_identical_trajectories_zero(self):
        t = _traj(3, 10)
        for variant in ("root_joint", "global_traj", "mean_local", "mean_global"):
            assert ape(t, t, variant) == 0.0

    def test_constant_world_offset(self):
        t = _traj(2, 8, seed=1)
        offset = np.array([0.3, -0.4, 1.2])
        shifted = t + offset
        norm = np.linalg.norm(offset)
        assert ape(shifted, t, "root_joint") == pytest.approx(norm, rel=1e-9)
        assert ape(shifted, t, "mean_global") == pytest.approx(norm, rel=1e-9)
        assert ape(shifted, t, "mean_local") == pytest.approx(0.0, abs=1e-12)
        assert ape(shifted, t, "global_traj") == pytest.approx(
            np.hypot(0.3, -0.4), rel=1e-9)

    def test_two_frame_hand_case(self):
        # oracle: one joint, errors of 3 and 4 -> (3 + 4) / 2
        ref = np.zeros((1, 2, 1, 3))
        gen = np.zeros((1, 2, 1, 3))
        gen[0, 0, 0, 0] = 3.0
        gen[0, 1, 0, 1] = 4.0
        assert ape(gen, ref, "root_joint") == pytest.approx(3.5)

    def test_triangle_inequality_per_variant(self):
        a, b, c = _traj(2, 6, seed=2), _traj(2, 6, seed=3), _traj(2, 6, seed=4)
        for variant in ("root_joint", "mean_global"):
            assert ape(a, c, variant) <= ape(a, b, variant) + ape(b, c, variant) + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            ape(_traj(1, 4), _traj(1, 5))


class TestAve:
    def test_identical_zero(self):
        t = _traj(2, 6, seed=5)
        assert ave(t, t) == 0.0

    def test_offset_invariance(self):
        t = _traj(2, 6, seed=6)
        assert ave(t + np.array([1.0, 2.0, 3.0]), t) == pytest.approx(0.0, abs=1e-10)

    def test_hand_variance_case(self):
        # oracle: ref (0, 2) has variance 2; gen (0, 4) has variance 8
        ref = np.zeros((1, 2, 1, 3))
        gen = np.zeros((1, 2, 1, 3))
        ref[0, 1, 0, 0] = 2.0
        gen[0, 1, 0, 0] = 4.0
        assert ave(gen, ref, "root_joint") == pytest.approx(6.0)

    def test_needs_two_frames(self):
        with pytest.raises(ShapeError):
            ave(_traj(1, 1), _traj(1, 1))


class TestSmoothness:
    def test_constant_trajectory(self):
        t = np.ones((1, 8, 4, 3))
        assert smoothness(t) == 0.0

    def test_uniform_linear_motion(self):
        f = np.arange(8, dtype=float)
        t = np.zeros((1, 8, 2, 3))
        t[0, :, :, 0] = f[:, None] * 0.3
        assert smoothness(t) == pytest.approx(0.0, abs=1e-12)

    def test_hand_second_difference(self):
        # positions 0, 0, 1 -> single second difference of 1 -> mean 1.0
        t = np.zeros((1, 3, 1, 1 * 3))[..., :3].reshape(1, 3, 1, 3)
        t[0, 2, 0, 0] = 1.0
        val = smoothness(t)
        # mean over 1 frame-diff x 1 joint x 3 coords: (1 + 0 + 0) / 3
        assert val == pytest.approx(1.0 / 3.0)

    def test_needs_three_frames(self):
        with pytest.raises(ShapeError):
            smoothness(np.zeros((1, 2, 1, 3)))


class TestFid:
    def test_self_distance_zero(self):
        feats = rng_from(7).standard_normal((64, 8))
        stats = GaussianStats.from_features(feats)
        assert fid(stats, stats) == pytest.approx(0.0, abs=1e-6)

    def test_equal_covariance_mean_shift(self):
        # closed form: equal covariances cancel, leaving the squared shift
        d = 6
        mu = np.linspace(0.5, -0.8, d)
        eye = np.eye(d)
        a = GaussianStats(mean=np.zeros(d), cov=eye)
        b = GaussianStats(mean=mu, cov=eye.copy())
        assert fid(a, b) == pytest.approx(float(np.sum(mu ** 2)), abs=1e-6)

    def test_scalar_variance_case(self):
        # 1-D closed form: (sigma_a - sigma_b)^2 with sigmas 1 and 2
        a = GaussianStats(mean=np.zeros(1), cov=np.array([[1.0]]))
        b = GaussianStats(mean=np.zeros(1), cov=np.array([[4.0]]))
        assert fid(a, b) == pytest.approx(1.0, abs=1e-9)

    def test_symmetry_and_nonnegativity(self):
        x = rng_from(8).standard_normal((100, 5))
        y = rng_from(9).standard_normal((100, 5)) * 1.5 + 0.3
        a, b = GaussianStats.from_features(x), GaussianStats.from_features(y)
        assert fid(a, b) == pytest.approx(fid(b, a), abs=1e-6)
        assert fid(a, b) >= 0.0

    def test_dimension_mismatch(self):
        a = GaussianStats(mean=np.zeros(2), cov=np.eye(2))
        b = GaussianStats(mean=np.zeros(3), cov=np.eye(3))
        with pytest.raises(ShapeError):
            fid(a, b)

    def test_asymmetric_covariance_rejected(self):
        cov = np.eye(2)
        cov[0, 1] = 0.5
        with pytest.raises(ShapeError):
            GaussianStats(mean=np.zeros(2), cov=cov)


class TestMultimodalDistance:
    def test_identical_features(self):
        f = rng_from(10).standard_normal((5, 4))
        assert multimodal_distance(f, f) == 0.0

    def test_antipodal_unit_vectors(self):
        f = rng_from(11).standard_normal((6, 4))
        f /= np.linalg.norm(f, axis=1, keepdims=True)
        assert multimodal_distance(f, -f) == pytest.approx(2.0, rel=1e-9)

    def test_hand_pairs(self):
        m = np.array([[0.0, 0.0], [1.0, 1.0]])
        t = np.array([[3.0, 4.0], [1.0, 1.0]])
        assert multimodal_distance(m, t) == pytest.approx(2.5)


class TestRPrecision:
    def test_perfect_features(self):
        f = rng_from(12).standard_normal((40, 8))
        out = r_precision(f, f, k_values=(1, 5, 10))
        assert out["R@1"] == 1.0 and out["R@10"] == 1.0
        assert out["MedR"] == 1.0

    def test_single_item_pool(self):
        f = rng_from(13).standard_normal((1, 4))
        out = r_precision(f, f, k_values=(1,))
        assert out["R@1"] == 1.0 and out["MedR"] == 1.0

    def test_random_features_near_chance(self):
        # uniform ranks: E[R@10] = 10/320
        hits = []
        for seed in range(20):
            rng = rng_from(seed, "rprec")
            m = rng.standard_normal((320, 16))
            t = rng.standard_normal((320, 16))
            m /= np.linalg.norm(m, axis=1, keepdims=True)
            t /= np.linalg.norm(t, axis=1, keepdims=True)
            hits.append(r_precision(m, t, k_values=(10,))["R@10"])
        assert abs(np.mean(hits) - 10.0 / 320.0) < 0.015

    def test_monotone_in_k_and_medr_range(self):
        rng = rng_from(14)
        m = rng.standard_normal((50, 6))
        t = m + 0.5 * rng.standard_normal((50, 6))
        out = r_precision(m, t, k_values=(1, 5, 25, 50))
        assert out["R@1"] <= out["R@5"] <= out["R@25"] <= out["R@50"] == 1.0
        assert 1.0 <= out["MedR"] <= 50.0

    def test_pool_too_small(self):
        f = np.zeros((5, 3))
        with pytest.raises(ShapeError):
            r_precision(f, f, k_values=(10,))


class TestSimilarityFilter:
    class _StubEncoder:
        """Deterministic unit embedding derived from the rendered text."""

        def __call__(self, tokens):
            from promo.nn import Tensor

            rows = []
            for row in np.atleast_2d(tokens):
                rng = np.random.default_rng(int(row.sum()) % (2 ** 31))
                v = rng.standard_normal(8)
                rows.append(v / np.linalg.norm(v))
            return Tensor(np.stack(rows))

    def _scripts(self, n, seed=0):
        from promo.synth import generate_pose_dataset

        return [s for _, s in generate_pose_dataset(n, seed)]

    def test_empty_reference_keeps_all(self):
        texts = self._scripts(4)
        out = similarity_filter(texts, [], self._StubEncoder())
        np.testing.assert_array_equal(out, np.arange(4))

    def test_duplicate_is_dropped(self):
        texts = self._scripts(5)
        out = similarity_filter(texts, [texts[2]], self._StubEncoder(), alpha=0.45)
        assert 2 not in out

    def test_alpha_one_keeps_all(self):
        texts = self._scripts(5)
        out = similarity_filter(texts, texts, self._StubEncoder(), alpha=1.0)
        np.testing.assert_array_equal(out, np.arange(5))


class TestMetricReport:
    def test_record_shape(self):
        rec = metric_report("ape", 0.25, variant="root_joint", n=12)
        assert rec == {"metric": "ape", "value": 0.25, "variant": "root_joint", "n": 12}
