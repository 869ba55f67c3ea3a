"""Whole-body differential-IK layer.

Feet poses and the CoM are hard (equality) tasks, torso orientation and a
postural term are weighted soft tasks, joint velocities are box-bounded; the
resulting QP over the robot velocity nu is solved every control cycle.

In "velocity" mode the starred references are built from the measured state
and the joint velocities are the command; in "position" mode they are built
from an internally integrated state and the integrated joint positions are
the command (differential IK).
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import qr as scipy_qr

from .kinematics import KinematicsCache, integrate_state
from .lipm import skew_vee_error
from .qp import QpProblem, QpSolver, QpStatus

LEFT_FOOT = "left_foot"
RIGHT_FOOT = "right_foot"
TORSO = "torso"

# Keeps the reduced Hessian positive definite when the soft tasks leave the
# base directions unweighted; small enough not to disturb the task optima.
BASE_REGULARIZATION = 1e-8


class ControlMode(Enum):
    POSITION = "position"
    VELOCITY = "velocity"


class RankDeficientTasksError(RuntimeError):
    def __init__(self, task):
        super().__init__(f"hard task rows are rank deficient: {task}")
        self.task = task


@dataclass(frozen=True)
class TaskGains:
    torso_weight: np.ndarray = None        # K_T, 3x3 SPD soft-task weight
    postural_weight: float = 1.0           # Lambda (scalar -> diagonal)
    postural_gain: float = 2.0             # K_s
    torso_rotation_gain: float = 3.0       # K_omega_T
    foot_position_gain: float = 10.0       # K^p_x
    foot_integral_gain: float = 0.1        # K^i_x
    foot_rotation_gain: float = 5.0        # K_omega_f
    com_position_gain: float = 4.0         # K^p_C (planar)
    com_integral_gain: float = 0.5         # K^i_C (planar)
    com_height_gain: float = 2.0           # vertical proportional hold
    integral_bound: float = 0.05           # anti-windup clamp, m*s

    def __post_init__(self):
        W = np.asarray(self.torso_weight, dtype=float) if self.torso_weight is not None \
            else 5.0 * np.eye(3)
        if W.shape != (3, 3) or np.linalg.eigvalsh(0.5 * (W + W.T)).min() <= 0.0:
            raise ValueError("torso_weight must be 3x3 positive definite")
        object.__setattr__(self, "torso_weight", W)
        for name in ("postural_weight", "postural_gain", "torso_rotation_gain",
                     "foot_position_gain", "foot_rotation_gain",
                     "com_position_gain", "com_height_gain", "integral_bound"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("foot_integral_gain", "com_integral_gain"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class FootReference:
    position: np.ndarray
    rotation: np.ndarray
    linear_velocity: np.ndarray
    angular_velocity: np.ndarray

    @classmethod
    def stationary(cls, position, rotation):
        return cls(position=np.asarray(position, dtype=float),
                   rotation=np.asarray(rotation, dtype=float),
                   linear_velocity=np.zeros(3), angular_velocity=np.zeros(3))


@dataclass(frozen=True)
class WholeBodyReferences:
    com_velocity_cmd: np.ndarray     # planar xdot* from the ZMP-CoM law
    left_foot: FootReference
    right_foot: FootReference
    torso_rotation: np.ndarray
    posture: np.ndarray
    # Optional planar CoM position reference. When omitted the controller
    # integrates com_velocity_cmd internally, which is fine standalone but
    # drifts from the simplified model whenever its tracking error is biased.
    com_position: np.ndarray = None


def _clamp_norm(v, bound):
    n = np.linalg.norm(v)
    return v if n <= bound else v * (bound / n)


@dataclass
class _Integrators:
    com_ref: np.ndarray = None       # integrated planar x*
    com_err: np.ndarray = field(default_factory=lambda: np.zeros(2))
    foot_err: dict = field(default_factory=lambda: {LEFT_FOOT: np.zeros(3),
                                                    RIGHT_FOOT: np.zeros(3)})
    prev_com_err: np.ndarray = None
    prev_foot_err: dict = field(default_factory=dict)


def feet_velocity_star(pose, reference, gains, integral):
    """Starred 6D foot velocity from the pose error and its integral."""
    p, R = pose
    e_p = p - reference.position
    linear = (reference.linear_velocity
              - gains.foot_position_gain * e_p
              - gains.foot_integral_gain * integral)
    angular = (reference.angular_velocity
               - gains.foot_rotation_gain * skew_vee_error(R, reference.rotation))
    return np.concatenate([linear, angular]), e_p


def com_velocity_star(com, com_ref_planar, com_velocity_cmd, gains, integral, z0):
    """Starred 3D CoM velocity: planar tracking plus a height hold."""
    e = com[:2] - np.asarray(com_ref_planar, dtype=float)
    planar = (np.asarray(com_velocity_cmd, dtype=float)
              - gains.com_position_gain * e
              - gains.com_integral_gain * integral)
    vertical = -gains.com_height_gain * (com[2] - z0)
    return np.array([planar[0], planar[1], vertical]), e


def build_wholebody_qp(model, cache, v_torso_star, v_com_star, v_left_star,
                       v_right_star, sdot_star, gains,
                       check_rank=True):
    """Assemble the QP over nu = (base twist, joint velocities)."""
    n = model.n_joints
    nv = model.n_velocities
    J_torso = cache.frame_jacobian(TORSO)[3:6]
    J_com = cache.com_jacobian()
    J_lf = cache.frame_jacobian(LEFT_FOOT)
    J_rf = cache.frame_jacobian(RIGHT_FOOT)

    K_T = gains.torso_weight
    H = J_torso.T @ K_T @ J_torso
    H[6:, 6:] += gains.postural_weight * np.eye(n)
    H += BASE_REGULARIZATION * np.eye(nv)
    H = 0.5 * (H + H.T)
    g = -J_torso.T @ K_T @ v_torso_star
    g[6:] += -gains.postural_weight * sdot_star

    A_eq = np.vstack([J_com, J_lf, J_rf])
    b_eq = np.concatenate([v_com_star, v_left_star, v_right_star])
    if check_rank:
        _check_task_ranks((("com", J_com), ("left_foot", J_lf), ("right_foot", J_rf)))
    lo, hi = model.velocity_limits()
    lb = np.concatenate([np.full(6, -np.inf), lo])
    ub = np.concatenate([np.full(6, np.inf), hi])
    return QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq, lb=lb, ub=ub)


def _check_task_ranks(blocks):
    stacked = np.vstack([J for _, J in blocks])
    if np.linalg.matrix_rank(stacked, tol=1e-10) == stacked.shape[0]:
        return
    # Deficient: walk the blocks to name the first offender.
    partial = None
    rank = 0
    for name, J in blocks:
        partial = J if partial is None else np.vstack([partial, J])
        new_rank = np.linalg.matrix_rank(partial, tol=1e-10)
        if new_rank < rank + J.shape[0]:
            raise RankDeficientTasksError(name)
        rank = new_rank
    raise RankDeficientTasksError(blocks[-1][0])


class WholeBodyController:
    """One instance per control loop; owns the mode-dependent internal state."""

    def __init__(self, model, gains, mode, dt, z0, initial_state):
        self.model = model
        self.gains = gains
        self.mode = ControlMode(mode)
        self.dt = dt
        self.z0 = z0
        self.internal_state = initial_state.copy()
        self._integ = _Integrators()
        self._solver = QpSolver()
        self._warm = None

    def reset(self, state):
        self.internal_state = state.copy()
        self._integ = _Integrators()
        self._warm = None

    def cycle(self, refs, measured_state):
        """One control cycle; returns (command vector, diagnostics dict)."""
        state = self.internal_state if self.mode is ControlMode.POSITION else measured_state
        cache = KinematicsCache(self.model, state)
        gains = self.gains

        v_torso = -gains.torso_rotation_gain * skew_vee_error(
            cache.frame_pose(TORSO)[1], refs.torso_rotation)

        com = cache.com()
        if self._integ.com_ref is None:
            self._integ.com_ref = com[:2].copy()
        com_ref = (self._integ.com_ref if refs.com_position is None
                   else np.asarray(refs.com_position, dtype=float).reshape(2))
        v_com, com_err = com_velocity_star(com, com_ref,
                                           refs.com_velocity_cmd, gains,
                                           self._integ.com_err, self.z0)
        stars = {}
        errs = {}
        for frame, ref in ((LEFT_FOOT, refs.left_foot), (RIGHT_FOOT, refs.right_foot)):
            stars[frame], errs[frame] = feet_velocity_star(
                cache.frame_pose(frame), ref, gains, self._integ.foot_err[frame])

        sdot_star = -gains.postural_gain * (state.joint_positions - refs.posture)

        try:
            problem = build_wholebody_qp(self.model, cache, v_torso, v_com,
                                         stars[LEFT_FOOT], stars[RIGHT_FOOT],
                                         sdot_star, gains)
            fallback = False
        except RankDeficientTasksError:
            # Documented fallback: hold the measured stance (zero feet/CoM
            # velocity references keeps nu = 0 feasible). With b_eq = 0 the
            # dependent equality rows carry no information, so reduce to an
            # independent subset to keep the KKT systems nonsingular.
            problem = build_wholebody_qp(self.model, cache, v_torso,
                                         np.zeros(3), np.zeros(6), np.zeros(6),
                                         sdot_star, gains, check_rank=False)
            _, _, piv = scipy_qr(problem.A_eq.T, pivoting=True)
            rank = np.linalg.matrix_rank(problem.A_eq, tol=1e-10)
            keep = sorted(piv[:rank])
            problem = QpProblem(H=problem.H, g=problem.g,
                                A_eq=problem.A_eq[keep],
                                b_eq=problem.b_eq[keep],
                                lb=problem.lb, ub=problem.ub)
            fallback = True
        sol = self._solver.solve(problem, warm_start=self._warm)
        if sol.status is not QpStatus.OPTIMAL:
            raise RuntimeError(f"whole-body QP failed: {sol.status.value}")
        self._warm = {"w": sol.w, "active_set": sol.active_set}
        nu = sol.w

        self._advance_integrators(com_err, errs, refs)
        if self.mode is ControlMode.POSITION:
            self.internal_state = integrate_state(self.internal_state, nu, self.dt)
            command = self.internal_state.joint_positions.copy()
        else:
            command = nu[6:].copy()
        diag = {
            "nu": nu,
            "hard_residual": float(np.linalg.norm(
                problem.A_eq @ nu - problem.b_eq, ord=np.inf)),
            "qp_iterations": sol.iterations,
            "fallback": fallback,
            "com_error": com_err,
            "foot_errors": errs,
        }
        return command, diag

    def _advance_integrators(self, com_err, foot_errs, refs):
        integ = self._integ
        dt = self.dt
        prev = com_err if integ.prev_com_err is None else integ.prev_com_err
        integ.com_err = _clamp_norm(integ.com_err + 0.5 * dt * (prev + com_err),
                                    self.gains.integral_bound)
        integ.prev_com_err = com_err
        for frame, err in foot_errs.items():
            prev = integ.prev_foot_err.get(frame, err)
            integ.foot_err[frame] = _clamp_norm(
                integ.foot_err[frame] + 0.5 * dt * (prev + err),
                self.gains.integral_bound)
            integ.prev_foot_err[frame] = err
        integ.com_ref = integ.com_ref + dt * np.asarray(refs.com_velocity_cmd, dtype=float)

    @property
    def com_reference(self):
        return None if self._integ.com_ref is None else self._integ.com_ref.copy()
