"""6D rotation representation and rotation utilities.

A rotation is stored as the first two columns of its matrix, column-major
(six floats). Reconstruction is Gram-Schmidt: normalize the first column,
orthogonalize and normalize the second, complete with the cross product.
Degenerate inputs (near-zero or near-parallel columns) raise instead of
snapping: they indicate upstream model failure and must surface.
"""

from __future__ import annotations

import numpy as np

from promo import kernels
from promo.errors import DegenerateRotationError

ROTATION_TOL = 1e-3  # max deviation from orthonormality accepted on input matrices


def sixd_to_rotmat_batch(r6: np.ndarray) -> np.ndarray:
    """(..., 6) -> (..., 3, 3) via Gram-Schmidt; raises on degenerate rows."""
    r6 = np.asarray(r6, dtype=np.float64)
    lead = r6.shape[:-1]
    flat = r6.reshape(-1, 6)
    mats, bad = kernels.sixd_to_rotmat_batch(flat)
    if bad.any():
        idx = int(np.argmax(bad))
        raise DegenerateRotationError(
            f"{int(bad.sum())} degenerate 6D block(s); first at flat index {idx}: {flat[idx]}"
        )
    return mats.reshape(lead + (3, 3))


def sixd_to_rotmat(r6: np.ndarray) -> np.ndarray:
    return sixd_to_rotmat_batch(np.asarray(r6).reshape(1, 6))[0]


def check_rotation(mats: np.ndarray, tol: float = ROTATION_TOL) -> None:
    mats = np.asarray(mats, dtype=np.float64)
    gram = np.einsum("...ji,...jk->...ik", mats, mats)
    err = np.abs(gram - np.eye(3)).max()
    if err > tol:
        raise DegenerateRotationError(f"matrix is not orthonormal (deviation {err:.2e})")
    if np.min(np.linalg.det(mats)) <= 0:
        raise DegenerateRotationError("matrix has non-positive determinant")


def rotmat_to_sixd_batch(mats: np.ndarray) -> np.ndarray:
    """(..., 3, 3) -> (..., 6): the first two columns, column-major."""
    mats = np.asarray(mats, dtype=np.float64)
    check_rotation(mats)
    return np.concatenate([mats[..., :, 0], mats[..., :, 1]], axis=-1)


def rotmat_to_sixd(mat: np.ndarray) -> np.ndarray:
    return rotmat_to_sixd_batch(np.asarray(mat).reshape(1, 3, 3))[0]


def identity_sixd() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about ``axis`` by ``angle`` radians."""
    axis = np.asarray(axis, dtype=np.float64)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        raise DegenerateRotationError("rotation axis is zero")
    x, y, z = axis / n
    c, s = np.cos(angle), np.sin(angle)
    cc = 1.0 - c
    return np.array([
        [c + x * x * cc, x * y * cc - z * s, x * z * cc + y * s],
        [y * x * cc + z * s, c + y * y * cc, y * z * cc - x * s],
        [z * x * cc - y * s, z * y * cc + x * s, c + z * z * cc],
    ])


def mat_to_quat(mat: np.ndarray) -> np.ndarray:
    """Rotation matrix -> unit quaternion (w, x, y, z)."""
    m = np.asarray(mat, dtype=np.float64)
    t = np.trace(m)
    if t > 0:
        s = np.sqrt(t + 1.0) * 2.0
        q = np.array([0.25 * s,
                      (m[2, 1] - m[1, 2]) / s,
                      (m[0, 2] - m[2, 0]) / s,
                      (m[1, 0] - m[0, 1]) / s])
    else:
        i = int(np.argmax(np.diag(m)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = np.sqrt(max(m[i, i] - m[j, j] - m[k, k] + 1.0, 0.0)) * 2.0
        q = np.empty(4)
        q[0] = (m[k, j] - m[j, k]) / s
        q[1 + i] = 0.25 * s
        q[1 + j] = (m[j, i] + m[i, j]) / s
        q[1 + k] = (m[k, i] + m[i, k]) / s
    return q / np.linalg.norm(q)


def quat_to_mat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = np.asarray(q, dtype=np.float64) / np.linalg.norm(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def slerp_matrices(mat_a: np.ndarray, mat_b: np.ndarray, t: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between two rotations."""
    qa, qb = mat_to_quat(mat_a), mat_to_quat(mat_b)
    dot = float(qa @ qb)
    if dot < 0.0:
        qb, dot = -qb, -dot
    dot = min(dot, 1.0)
    theta = np.arccos(dot)
    if theta < 1e-7:
        q = (1.0 - t) * qa + t * qb
    else:
        s = np.sin(theta)
        q = (np.sin((1.0 - t) * theta) * qa + np.sin(t * theta) * qb) / s
    return quat_to_mat(q)
