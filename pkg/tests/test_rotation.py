"""6D rotation representation, quaternion helpers, slerp."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promo.errors import DegenerateRotationError
from promo.rotation import (
    axis_angle_matrix,
    identity_sixd,
    rotmat_to_sixd,
    rotmat_to_sixd_batch,
    sixd_to_rotmat,
    sixd_to_rotmat_batch,
    slerp_matrices,
)
from promo.seeding import rng_from


def random_rotations(n, seed=0):
    rng = rng_from(seed, "rot")
    a = rng.standard_normal((n, 3, 3))
    q, r = np.linalg.qr(a)
    d = np.sign(np.diagonal(r, axis1=1, axis2=2))
    q = q * d[:, None, :]
    q[np.linalg.det(q) < 0, :, 2] *= -1
    return q


class TestSixdToRotmat:
    def test_identity(self):
        np.testing.assert_allclose(sixd_to_rotmat([1, 0, 0, 0, 1, 0]), np.eye(3), atol=1e-12)

    def test_gram_schmidt_example(self):
        # [2,0,0, 1,1,0]: normalize -> e1; orthogonalize (1,1,0) against e1 -> e2
        out = sixd_to_rotmat([2, 0, 0, 1, 1, 0])
        np.testing.assert_allclose(out, np.eye(3), atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_output_always_orthonormal(self, seed):
        r6 = rng_from(seed).standard_normal((200, 6))
        mats = sixd_to_rotmat_batch(r6)
        gram = np.einsum("nji,njk->nik", mats, mats)
        assert np.abs(gram - np.eye(3)).max() < 1e-5
        assert np.abs(np.linalg.det(mats) - 1.0).max() < 1e-5

    def test_near_zero_first_column_rejected(self):
        with pytest.raises(DegenerateRotationError):
            sixd_to_rotmat([1e-9, 0, 0, 0, 1, 0])

    def test_near_parallel_columns_rejected(self):
        with pytest.raises(DegenerateRotationError):
            sixd_to_rotmat([1, 0, 0, 1, 1e-7, 0])


class TestRotmatToSixd:
    def test_identity(self):
        np.testing.assert_array_equal(rotmat_to_sixd(np.eye(3)), identity_sixd())

    def test_quarter_turn_about_z(self):
        mat = axis_angle_matrix([0, 0, 1], np.pi / 2)
        np.testing.assert_allclose(rotmat_to_sixd(mat), [0, 1, 0, -1, 0, 0], atol=1e-12)

    def test_non_rotation_rejected(self):
        with pytest.raises(DegenerateRotationError):
            rotmat_to_sixd(np.eye(3) * 1.5)
        with pytest.raises(DegenerateRotationError):
            rotmat_to_sixd(np.diag([1.0, 1.0, -1.0]))  # reflection

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=10_000))
    def test_round_trips_are_identities(self, seed):
        mats = random_rotations(16, seed)
        r6 = rotmat_to_sixd_batch(mats)
        back = sixd_to_rotmat_batch(r6)
        assert np.abs(back - mats).max() < 1e-6
        r6_again = rotmat_to_sixd_batch(back)
        assert np.abs(r6_again - r6).max() < 1e-6


class TestSlerp:
    def test_midpoint_of_quarter_turn(self):
        a = np.eye(3)
        b = axis_angle_matrix([0, 0, 1], np.pi / 2)
        mid = slerp_matrices(a, b, 0.5)
        np.testing.assert_allclose(mid, axis_angle_matrix([0, 0, 1], np.pi / 4), atol=1e-5)

    def test_endpoints(self):
        mats = random_rotations(2, seed=3)
        np.testing.assert_allclose(slerp_matrices(mats[0], mats[1], 0.0), mats[0], atol=1e-9)
        np.testing.assert_allclose(slerp_matrices(mats[0], mats[1], 1.0), mats[1], atol=1e-9)

    def test_interpolates_angle_linearly(self):
        b = axis_angle_matrix([1, 0, 0], 1.2)
        for t in (0.25, 0.5, 0.75):
            out = slerp_matrices(np.eye(3), b, t)
            np.testing.assert_allclose(out, axis_angle_matrix([1, 0, 0], 1.2 * t), atol=1e-9)
