"""Small SO(3) helpers shared by the simplified-model and whole-body layers."""

import numpy as np

ORTHONORMALITY_TOL = 1e-9


def skew(v):
    """3-vector -> antisymmetric matrix such that skew(v) @ u == cross(v, u)."""
    x, y, z = np.asarray(v, dtype=float).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(W):
    """Inverse of skew for antisymmetric matrices."""
    W = np.asarray(W, dtype=float)
    return np.array([W[2, 1], W[0, 2], W[1, 0]])


def sk(A):
    """Antisymmetric part of a square matrix, (A - A^T) / 2."""
    A = np.asarray(A, dtype=float)
    return 0.5 * (A - A.T)


def is_rotation(R, tol=ORTHONORMALITY_TOL):
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        return False
    if np.linalg.norm(R.T @ R - np.eye(3), ord=np.inf) > tol:
        return False
    return abs(np.linalg.det(R) - 1.0) <= tol


def check_rotation(R, tol=ORTHONORMALITY_TOL, name="rotation"):
    R = np.asarray(R, dtype=float)
    if not is_rotation(R, tol):
        raise ValueError(f"{name} is not orthonormal within {tol}")
    return R


def project_rotation(R):
    """Nearest rotation matrix (polar projection via SVD)."""
    U, _, Vt = np.linalg.svd(np.asarray(R, dtype=float))
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


def exp_so3(w):
    """Rodrigues formula: rotation matrix of the axis-angle vector w."""
    w = np.asarray(w, dtype=float).reshape(3)
    theta = np.sqrt(w[0] * w[0] + w[1] * w[1] + w[2] * w[2])
    if theta < 1e-12:
        return np.eye(3) + skew(w)
    x, y, z = w / theta
    c, s = np.cos(theta), np.sin(theta)
    C = 1.0 - c
    return np.array([
        [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
        [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
        [z * x * C - y * s, z * y * C + x * s, c + z * z * C]])


def rot_x(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rpy_to_rotation(roll, pitch, yaw):
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)
