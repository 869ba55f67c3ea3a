"""Whole-body differential-IK layer: QP assembly, modes, fallback."""

import numpy as np
import pytest

from dcmwalk.kinematics import KinematicsCache, home_state, load_model, sample_biped
from dcmwalk.so3 import rot_z
from dcmwalk.wholebody import (ControlMode, FootReference, RankDeficientTasksError,
                               TaskGains, WholeBodyController, WholeBodyReferences,
                               build_wholebody_qp)


def consistent_refs(model, state, com_velocity=None, posture=None):
    """References that make the current state an exact fixed point."""
    cache = KinematicsCache(model, state)
    lf = FootReference.stationary(*cache.frame_pose("left_foot"))
    rf = FootReference.stationary(*cache.frame_pose("right_foot"))
    return WholeBodyReferences(
        com_velocity_cmd=np.zeros(2) if com_velocity is None else com_velocity,
        left_foot=lf, right_foot=rf,
        torso_rotation=cache.frame_pose("torso")[1],
        posture=state.joint_positions.copy() if posture is None else posture,
        com_position=cache.com()[:2].copy())


def make_controller(model=None, mode="velocity", gains=None, state=None, dt=0.01):
    model = model or sample_biped()
    state = state or home_state(model)
    z0 = KinematicsCache(model, state).com()[2]
    ctrl = WholeBodyController(model, gains or TaskGains(), mode, dt, z0, state)
    return ctrl, model, state


class TestFixedPoint:
    def test_nu_zero_at_consistent_references(self):
        ctrl, model, state = make_controller(mode="velocity")
        refs = consistent_refs(model, state)
        command, diag = ctrl.cycle(refs, state)
        assert np.linalg.norm(diag["nu"], np.inf) < 1e-10
        assert np.linalg.norm(command, np.inf) < 1e-10
        assert diag["hard_residual"] < 1e-10
        assert not diag["fallback"]

    def test_position_mode_holds_posture(self):
        ctrl, model, state = make_controller(mode="position")
        refs = consistent_refs(model, state)
        for _ in range(5):
            command, diag = ctrl.cycle(refs, state)
            assert np.linalg.norm(diag["nu"], np.inf) < 1e-10
        assert np.allclose(command, state.joint_positions, atol=1e-10)


class TestHardTasks:
    def test_residuals_with_active_references(self):
        ctrl, model, state = make_controller(mode="velocity")
        cache = KinematicsCache(model, state)
        refs = consistent_refs(model, state)
        # Shift the CoM command and one foot: hard rows must still be met.
        p, R = cache.frame_pose("left_foot")
        moved = FootReference(position=p + [0.02, 0.0, 0.01], rotation=R,
                              linear_velocity=np.array([0.1, 0.0, 0.0]),
                              angular_velocity=np.zeros(3))
        refs = WholeBodyReferences(
            com_velocity_cmd=np.array([0.1, -0.05]), left_foot=moved,
            right_foot=refs.right_foot, torso_rotation=refs.torso_rotation,
            posture=refs.posture, com_position=refs.com_position + [0.01, 0.0])
        _, diag = ctrl.cycle(refs, state)
        assert diag["hard_residual"] <= 1e-8
        assert np.linalg.norm(diag["nu"]) > 1e-3  # actually moving

    def test_velocity_bounds_respected_under_saturation(self):
        model = sample_biped()
        state = home_state(model)
        ctrl, _, _ = make_controller(model=model, state=state, mode="velocity")
        refs = consistent_refs(model, state,
                               posture=state.joint_positions + 10.0)
        _, diag = ctrl.cycle(refs, state)
        lo, hi = model.velocity_limits()
        sdot = diag["nu"][6:]
        assert np.all(sdot <= hi + 1e-9) and np.all(sdot >= lo - 1e-9)
        assert diag["hard_residual"] <= 1e-8

    def test_soft_task_yields_to_hard_tasks(self):
        # Large torso reference error: the hard rows stay exact while the
        # torso task is left with a visible residual.
        ctrl, model, state = make_controller(mode="velocity")
        cache = KinematicsCache(model, state)
        refs = consistent_refs(model, state)
        refs = WholeBodyReferences(
            com_velocity_cmd=refs.com_velocity_cmd, left_foot=refs.left_foot,
            right_foot=refs.right_foot,
            torso_rotation=rot_z(1.0) @ refs.torso_rotation,
            posture=refs.posture, com_position=refs.com_position)
        _, diag = ctrl.cycle(refs, state)
        assert diag["hard_residual"] <= 1e-8
        J_torso = cache.frame_jacobian("torso")[3:6]
        achieved = J_torso @ diag["nu"]
        # The starred torso rate is K * sin(1.0) about z; it is not met.
        gains = TaskGains()
        star = gains.torso_rotation_gain * np.array([0.0, 0.0, np.sin(1.0)])
        assert np.linalg.norm(achieved - star) > 1e-3


class TestModes:
    def perturbed_refs(self, model, state):
        refs = consistent_refs(model, state)
        return WholeBodyReferences(
            com_velocity_cmd=np.array([0.05, 0.0]), left_foot=refs.left_foot,
            right_foot=refs.right_foot, torso_rotation=refs.torso_rotation,
            posture=refs.posture, com_position=refs.com_position)

    def test_position_mode_integrates_commands(self):
        model = sample_biped()
        state = home_state(model)
        ctrl, _, _ = make_controller(model=model, state=state, mode="position",
                                     dt=0.01)
        refs = self.perturbed_refs(model, state)
        q_prev = state.joint_positions.copy()
        for _ in range(3):
            command, diag = ctrl.cycle(refs, state)
            assert np.allclose(command, q_prev + 0.01 * diag["nu"][6:], atol=1e-12)
            q_prev = command

    def test_velocity_mode_returns_rates(self):
        model = sample_biped()
        state = home_state(model)
        ctrl, _, _ = make_controller(model=model, state=state, mode="velocity")
        command, diag = ctrl.cycle(self.perturbed_refs(model, state), state)
        assert np.array_equal(command, diag["nu"][6:])

    def test_mode_parse(self):
        assert ControlMode("position") is ControlMode.POSITION
        with pytest.raises(ValueError):
            ControlMode("torque")

    def test_reset_clears_integrators(self):
        ctrl, model, state = make_controller(mode="velocity")
        refs = self.perturbed_refs(model, state)
        for _ in range(10):
            ctrl.cycle(refs, state)
        ctrl.reset(state)
        _, diag = ctrl.cycle(consistent_refs(model, state), state)
        assert np.linalg.norm(diag["nu"], np.inf) < 1e-10


class TestRankDeficiency:
    def degenerate_model(self):
        # Both foot frames on the same link: the stacked hard rows cannot be
        # independent (and 15 rows exceed the 7 available velocities anyway).
        doc = {
            "base_link": "pelvis",
            "links": [{"name": "pelvis", "mass": 1.0},
                      {"name": "torso_link", "mass": 1.0}],
            "joints": [{"name": "j1", "type": "revolute", "parent": "pelvis",
                        "child": "torso_link", "axis": [0, 0, 1]}],
            "frames": {"torso": {"link": "torso_link"},
                       "left_foot": {"link": "pelvis", "xyz": [0.0, 0.07, -0.4]},
                       "right_foot": {"link": "pelvis", "xyz": [0.0, -0.07, -0.4]}},
        }
        return load_model(doc)

    def test_builder_raises_named_offender(self):
        from dcmwalk.kinematics import RobotState
        model = self.degenerate_model()
        state = RobotState(base_position=np.zeros(3), base_rotation=np.eye(3),
                           joint_positions=np.zeros(1))
        cache = KinematicsCache(model, state)
        with pytest.raises(RankDeficientTasksError):
            build_wholebody_qp(model, cache, np.zeros(3), np.zeros(3),
                               np.zeros(6), np.zeros(6), np.zeros(1), TaskGains())

    def test_controller_fallback_flag(self):
        from dcmwalk.kinematics import RobotState
        model = self.degenerate_model()
        state = RobotState(base_position=np.zeros(3), base_rotation=np.eye(3),
                           joint_positions=np.zeros(1))
        ctrl = WholeBodyController(model, TaskGains(), "velocity", 0.01, 0.4, state)
        refs = consistent_refs(model, state)
        _, diag = ctrl.cycle(refs, state)
        assert diag["fallback"]
        assert np.all(np.isfinite(diag["nu"]))


class TestTaskGains:
    def test_validation(self):
        with pytest.raises(ValueError):
            TaskGains(torso_weight=-np.eye(3))
        with pytest.raises(ValueError):
            TaskGains(torso_weight=np.eye(2))
        with pytest.raises(ValueError):
            TaskGains(postural_weight=0.0)
        with pytest.raises(ValueError):
            TaskGains(foot_integral_gain=-0.1)
        TaskGains(com_integral_gain=0.0)  # integral gains may be zero

    def test_integral_clamped(self):
        gains = TaskGains(integral_bound=0.02)
        ctrl, model, state = make_controller(mode="velocity", gains=gains)
        refs = consistent_refs(model, state)
        p, R = KinematicsCache(model, state).frame_pose("left_foot")
        far = FootReference.stationary(p + [0.5, 0.0, 0.0], R)
        refs = WholeBodyReferences(
            com_velocity_cmd=refs.com_velocity_cmd, left_foot=far,
            right_foot=refs.right_foot, torso_rotation=refs.torso_rotation,
            posture=refs.posture, com_position=refs.com_position)
        for _ in range(200):
            ctrl.cycle(refs, state)
        assert np.linalg.norm(ctrl._integ.foot_err["left_foot"]) <= 0.02 + 1e-12
