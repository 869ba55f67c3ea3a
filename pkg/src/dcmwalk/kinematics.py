"""Floating-base kinematic tree: frame poses, geometric Jacobians, CoM.

Conventions: the robot velocity is nu = (base linear velocity, base angular
velocity, joint velocities), all coordinates in the inertial frame; a frame
Jacobian maps nu to the stacked linear/angular frame velocity.
"""

from dataclasses import dataclass, field
from importlib import resources

import numpy as np
import yaml

from .so3 import exp_so3, rpy_to_rotation, skew


@dataclass(frozen=True)
class Joint:
    name: str
    kind: str                 # "revolute" | "prismatic"
    parent: str
    child: str
    axis: np.ndarray
    origin_xyz: np.ndarray
    origin_rpy: np.ndarray
    limits: tuple = (-2.5, 2.5)
    velocity_limit: float = 10.0

    def __post_init__(self):
        if self.kind not in ("revolute", "prismatic"):
            raise ValueError(f"unknown joint type {self.kind!r}")
        axis = np.asarray(self.axis, dtype=float).reshape(3)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValueError(f"joint {self.name}: axis must be a unit vector")
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "origin_xyz", np.asarray(self.origin_xyz, dtype=float).reshape(3))
        object.__setattr__(self, "origin_rpy", np.asarray(self.origin_rpy, dtype=float).reshape(3))
        object.__setattr__(self, "origin_rotation", rpy_to_rotation(*self.origin_rpy))


@dataclass(frozen=True)
class Link:
    name: str
    mass: float
    com: np.ndarray  # in the link frame

    def __post_init__(self):
        object.__setattr__(self, "com", np.asarray(self.com, dtype=float).reshape(3))


@dataclass(frozen=True)
class FrameDef:
    link: str
    xyz: np.ndarray
    rpy: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "xyz", np.asarray(self.xyz, dtype=float).reshape(3))
        object.__setattr__(self, "rpy", np.asarray(self.rpy, dtype=float).reshape(3))
        object.__setattr__(self, "rotation", rpy_to_rotation(*self.rpy))


class UnknownFrameError(KeyError):
    pass


@dataclass
class KinematicModel:
    base_link: str
    links: dict
    joints: list
    frames: dict = field(default_factory=dict)  # name -> FrameDef

    def __post_init__(self):
        self._validate_tree()
        self._joint_index = {j.name: i for i, j in enumerate(self.joints)}
        # Per-link chain of joint indices from the base, for Jacobian columns.
        self._parent_joint = {j.child: j for j in self.joints}
        self._chains = {}
        for name in self.links:
            chain = []
            link = name
            while link != self.base_link:
                j = self._parent_joint[link]
                chain.append(self._joint_index[j.name])
                link = j.parent
            self._chains[name] = tuple(reversed(chain))
        if self.total_mass <= 0.0:
            raise ValueError("total mass must be positive")
        # Per-joint subtree (links moved by the joint), for the CoM Jacobian.
        self._link_order = list(self.links)
        self._mass_vector = np.array([self.links[n].mass for n in self._link_order])
        link_index = {n: i for i, n in enumerate(self._link_order)}
        subtree = {j: [] for j in range(len(self.joints))}
        for name, chain in self._chains.items():
            for j in chain:
                subtree[j].append(link_index[name])
        self._subtree_idx = {j: np.array(v, dtype=int) for j, v in subtree.items()}
        self._subtree_mass = {j: float(self._mass_vector[v].sum())
                              for j, v in self._subtree_idx.items()}

    def _validate_tree(self):
        seen = {self.base_link}
        remaining = list(self.joints)
        progressed = True
        while remaining and progressed:
            progressed = False
            for j in list(remaining):
                if j.parent in seen:
                    if j.child in seen:
                        raise ValueError(f"kinematic loop at link {j.child}")
                    seen.add(j.child)
                    remaining.remove(j)
                    progressed = True
        if remaining:
            raise ValueError("kinematic tree is disconnected or cyclic")
        missing = set(self.links) - seen
        if missing:
            raise ValueError(f"links not reachable from base: {sorted(missing)}")

    @property
    def n_joints(self):
        return len(self.joints)

    @property
    def n_velocities(self):
        return 6 + len(self.joints)

    @property
    def total_mass(self):
        return sum(l.mass for l in self.links.values())

    def joint_limits(self):
        lo = np.array([j.limits[0] for j in self.joints])
        hi = np.array([j.limits[1] for j in self.joints])
        return lo, hi

    def velocity_limits(self):
        v = np.array([j.velocity_limit for j in self.joints])
        return -v, v

    def frame_def(self, name):
        if name in self.frames:
            return self.frames[name]
        if name in self.links:
            return FrameDef(link=name, xyz=np.zeros(3), rpy=np.zeros(3))
        raise UnknownFrameError(name)


@dataclass
class RobotState:
    base_position: np.ndarray
    base_rotation: np.ndarray
    joint_positions: np.ndarray
    joint_velocities: np.ndarray = None

    def __post_init__(self):
        self.base_position = np.asarray(self.base_position, dtype=float).reshape(3)
        self.base_rotation = np.asarray(self.base_rotation, dtype=float).reshape(3, 3)
        self.joint_positions = np.asarray(self.joint_positions, dtype=float).reshape(-1)
        if self.joint_velocities is None:
            self.joint_velocities = np.zeros_like(self.joint_positions)
        else:
            self.joint_velocities = np.asarray(self.joint_velocities, dtype=float).reshape(-1)

    def copy(self):
        return RobotState(self.base_position.copy(), self.base_rotation.copy(),
                          self.joint_positions.copy(), self.joint_velocities.copy())


class KinematicsCache:
    """All link poses plus world joint axes/origins for one robot state."""

    def __init__(self, model, state):
        self.model = model
        self.state = state
        self.link_pose = {model.base_link: (state.base_position.copy(),
                                            state.base_rotation.copy())}
        self.joint_origin = np.zeros((model.n_joints, 3))
        self.joint_axis_world = np.zeros((model.n_joints, 3))
        s = state.joint_positions
        self._com_points = None
        for idx, joint in enumerate(model.joints):
            p_par, R_par = self.link_pose[joint.parent]
            p_j = p_par + R_par @ joint.origin_xyz
            R_j = R_par @ joint.origin_rotation
            if joint.kind == "revolute":
                R_child = R_j @ exp_so3(joint.axis * s[idx])
                p_child = p_j
            else:
                R_child = R_j
                p_child = p_j + R_j @ (joint.axis * s[idx])
            self.joint_origin[idx] = p_j
            self.joint_axis_world[idx] = R_j @ joint.axis
            self.link_pose[joint.child] = (p_child, R_child)

    def frame_pose(self, name):
        fd = self.model.frame_def(name)
        p, R = self.link_pose[fd.link]
        return p + R @ fd.xyz, R @ fd.rotation

    def point_jacobian(self, link, point_world):
        """Linear-velocity rows (3 x (6+n)) of a point rigidly on `link`."""
        model = self.model
        J = np.zeros((3, model.n_velocities))
        J[:, 0:3] = np.eye(3)
        J[:, 3:6] = -skew(point_world - self.state.base_position)
        for idx in model._chains[link]:
            joint = model.joints[idx]
            a = self.joint_axis_world[idx]
            if joint.kind == "revolute":
                r = point_world - self.joint_origin[idx]
                J[:, 6 + idx] = (a[1] * r[2] - a[2] * r[1],
                                 a[2] * r[0] - a[0] * r[2],
                                 a[0] * r[1] - a[1] * r[0])
            else:
                J[:, 6 + idx] = a
        return J

    def frame_jacobian(self, name):
        """6 x (6+n) geometric Jacobian (linear rows then angular rows)."""
        fd = self.model.frame_def(name)
        p, _ = self.frame_pose(name)
        model = self.model
        J = np.zeros((6, model.n_velocities))
        J[0:3] = self.point_jacobian(fd.link, p)
        J[3:6, 3:6] = np.eye(3)
        for idx in model._chains[fd.link]:
            if model.joints[idx].kind == "revolute":
                J[3:6, 6 + idx] = self.joint_axis_world[idx]
        return J

    def _link_coms(self):
        if self._com_points is None:
            model = self.model
            pts = np.empty((len(model._link_order), 3))
            for i, name in enumerate(model._link_order):
                p, R = self.link_pose[name]
                pts[i] = p + R @ model.links[name].com
            self._com_points = pts
        return self._com_points

    def com(self):
        model = self.model
        return model._mass_vector @ self._link_coms() / model.total_mass

    def com_jacobian(self):
        """Mass-weighted point Jacobian, accumulated per joint subtree."""
        model = self.model
        masses = model._mass_vector
        total = model.total_mass
        pts = self._link_coms()
        com = masses @ pts / total
        J = np.zeros((3, model.n_velocities))
        J[:, 0:3] = np.eye(3)
        J[:, 3:6] = -skew(com - self.state.base_position)
        for idx, joint in enumerate(model.joints):
            sub = model._subtree_idx[idx]
            m_sub = model._subtree_mass[idx]
            a = self.joint_axis_world[idx]
            if joint.kind == "revolute":
                c_sub = masses[sub] @ pts[sub] / m_sub
                r = c_sub - self.joint_origin[idx]
                J[:, 6 + idx] = (m_sub / total) * np.array(
                    (a[1] * r[2] - a[2] * r[1],
                     a[2] * r[0] - a[0] * r[2],
                     a[0] * r[1] - a[1] * r[0]))
            else:
                J[:, 6 + idx] = (m_sub / total) * a
        return J


def forward_kinematics(model, state, frame):
    return KinematicsCache(model, state).frame_pose(frame)


def jacobian(model, state, frame):
    return KinematicsCache(model, state).frame_jacobian(frame)


def integrate_state(state, nu, dt):
    """Explicit Euler on R^3 x joints, exponential map on the base rotation."""
    nu = np.asarray(nu, dtype=float).reshape(-1)
    v, w, sdot = nu[0:3], nu[3:6], nu[6:]
    return RobotState(
        base_position=state.base_position + dt * v,
        base_rotation=exp_so3(dt * w) @ state.base_rotation,
        joint_positions=state.joint_positions + dt * sdot,
        joint_velocities=sdot.copy())


def load_model(source):
    """Model from the documented YAML schema (path, file object or dict)."""
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        doc = yaml.safe_load(source)
    else:
        with open(source) as f:
            doc = yaml.safe_load(f)
    links = {l["name"]: Link(name=l["name"], mass=float(l["mass"]),
                             com=l.get("com", [0.0, 0.0, 0.0]))
             for l in doc["links"]}
    joints = [Joint(name=j["name"], kind=j["type"], parent=j["parent"], child=j["child"],
                    axis=j["axis"], origin_xyz=j.get("origin_xyz", [0.0, 0.0, 0.0]),
                    origin_rpy=j.get("origin_rpy", [0.0, 0.0, 0.0]),
                    limits=tuple(j.get("limits", (-2.5, 2.5))),
                    velocity_limit=float(j.get("velocity_limit", 10.0)))
              for j in doc["joints"]]
    frames = {name: FrameDef(link=spec["link"], xyz=spec.get("xyz", [0.0, 0.0, 0.0]),
                             rpy=spec.get("rpy", [0.0, 0.0, 0.0]))
              for name, spec in doc.get("frames", {}).items()}
    return KinematicModel(base_link=doc["base_link"], links=links, joints=joints,
                          frames=frames)


def sample_biped():
    """The packaged desk-scale biped (14 actuated joints, child-sized links)."""
    with resources.files("dcmwalk").joinpath("models/sample_biped.yaml").open() as f:
        return load_model(f)


# Bent-knee stance: keeps the legs well away from the straight-knee
# singularity over the stride lengths the planner produces.
HOME_POSTURE = {
    "torso_pitch": 0.0, "torso_roll": 0.0,
    "l_hip_roll": 0.0, "l_hip_pitch": -0.5, "l_knee_pitch": 1.0,
    "l_ankle_pitch": -0.5, "l_ankle_roll": 0.0,
    "r_hip_roll": 0.0, "r_hip_pitch": -0.5, "r_knee_pitch": 1.0,
    "r_ankle_pitch": -0.5, "r_ankle_roll": 0.0,
}


def home_state(model):
    """Home posture, feet soles on the ground plane z = 0 and their planar
    midpoint at the origin (the footstep planner's initial stance frame)."""
    s = np.array([HOME_POSTURE.get(j.name, 0.0) for j in model.joints])
    state = RobotState(base_position=np.zeros(3), base_rotation=np.eye(3),
                       joint_positions=s)
    cache = KinematicsCache(model, state)
    lf = cache.frame_pose("left_foot")[0]
    rf = cache.frame_pose("right_foot")[0]
    mid = 0.5 * (lf + rf)
    state.base_position = np.array([-mid[0], -mid[1], -min(lf[2], rf[2])])
    return state
