"""Planar LIPM/DCM state, exact discrete propagation and rotation-error feedback.

The walking-plane dynamics used throughout the stack:

    xdot  = -w (x - xi)         (CoM converges to the DCM)
    xidot =  w (xi - r_zmp)     (DCM diverges away from the ZMP)

with w = sqrt(g / z0) the pendulum constant.
"""

from dataclasses import dataclass

import numpy as np

from .so3 import check_rotation, sk, vee


def _planar(v, name="vector"):
    a = np.asarray(v, dtype=float).reshape(-1)
    if a.shape != (2,):
        raise ValueError(f"{name} must be a 2-vector, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} has non-finite components")
    return a


@dataclass(frozen=True)
class PendulumParams:
    """Gravity, CoM height and the cached pendulum constant omega = sqrt(g/z0)."""

    gravity: float
    com_height: float
    omega: float

    @classmethod
    def from_height(cls, com_height, gravity=9.80665):
        if gravity <= 0.0:
            raise ValueError("gravity must be positive")
        if com_height <= 0.0:
            raise ValueError("com_height must be positive")
        return cls(gravity=gravity, com_height=com_height,
                   omega=float(np.sqrt(gravity / com_height)))

    def __post_init__(self):
        if self.gravity <= 0.0 or self.com_height <= 0.0:
            raise ValueError("gravity and com_height must be positive")
        if abs(self.omega - np.sqrt(self.gravity / self.com_height)) > 1e-9 * self.omega:
            raise ValueError("omega inconsistent with sqrt(gravity / com_height)")


@dataclass(frozen=True)
class SimplifiedState:
    """CoM position, CoM velocity and DCM on the walking plane."""

    com: np.ndarray
    com_velocity: np.ndarray
    dcm: np.ndarray

    @classmethod
    def from_com(cls, com, com_velocity, omega):
        com = _planar(com, "com")
        com_velocity = _planar(com_velocity, "com_velocity")
        return cls(com=com, com_velocity=com_velocity,
                   dcm=dcm_from_com(com, com_velocity, omega))

    def check(self, omega, tol=1e-9):
        if np.linalg.norm(self.dcm - (self.com + self.com_velocity / omega)) > tol:
            raise ValueError("dcm inconsistent with com + com_velocity / omega")


def dcm_from_com(com, com_velocity, omega):
    """xi = x + xdot / w."""
    if omega <= 0.0:
        raise ValueError("omega must be positive")
    return _planar(com, "com") + _planar(com_velocity, "com_velocity") / omega


def com_velocity_from_dcm(com, dcm, omega):
    """Inverse relation: xdot = w (xi - x)."""
    if omega <= 0.0:
        raise ValueError("omega must be positive")
    return omega * (_planar(dcm, "dcm") - _planar(com, "com"))


def continuous_dynamics(state, r_zmp, params):
    """Time derivatives (xdot, xidot) under a given ZMP."""
    r = _planar(r_zmp, "r_zmp")
    w = params.omega
    com_dot = -w * (state.com - state.dcm)
    dcm_dot = w * (state.dcm - r)
    return com_dot, dcm_dot


def step_exact(state, r_zmp, params, duration):
    """Exact flow of the planar dynamics under a constant ZMP over `duration`.

    The DCM row is the scalar exponential xi+ = e^{wT} xi + (1 - e^{wT}) r.
    The CoM row is the closed-form solution of the lower-triangular system:
        x(T) = r + e^{-wT}(x0 - r) + w T e^{-wT} * 0 ...  computed via the
    particular solution driven by the diverging DCM mode.
    """
    if duration <= 0.0:
        raise ValueError("duration must be positive")
    r = _planar(r_zmp, "r_zmp")
    w = params.omega
    ep = np.exp(w * duration)
    em = np.exp(-w * duration)
    dcm_next = r + ep * (state.dcm - r)
    # x' = -w x + w xi(t), xi(t) = r + e^{wt}(xi0 - r):
    # x(T) = e^{-wT}(x0 - r) + r + (xi0 - r) * (e^{wT} - e^{-wT}) / 2
    com_next = (r + em * (state.com - r)
                + 0.5 * (state.dcm - r) * (ep - em))
    vel_next = com_velocity_from_dcm(com_next, dcm_next, w)
    return SimplifiedState(com=com_next, com_velocity=vel_next, dcm=dcm_next)


def state_matrix(omega):
    """4x4 matrix of the stacked (x, xi) linear dynamics."""
    I2 = np.eye(2)
    Z2 = np.zeros((2, 2))
    return np.block([[-omega * I2, omega * I2], [Z2, omega * I2]])


def skew_vee_error(R, R_des):
    """Rotation-error feedback term vee(sk(R R_des^T))."""
    R = check_rotation(R, name="R")
    R_des = check_rotation(R_des, name="R_des")
    return vee(sk(R @ R_des.T))
