"""Simplified-model control layer.

Two DCM stabilizers producing a reference ZMP each control cycle:

  * instantaneous: r = xi_ref - xid_ref/w + Kp (xi - xi_ref) + Ki int(xi - xi_ref)
  * predictive: receding-horizon QP over the discrete DCM dynamics
        xi_{k+1} = e^{wT} xi_k + (1 - e^{wT}) r_k
    with support-polygon constraints on every predicted ZMP,

followed by the cascaded ZMP-CoM law
    xdot* = xdot_ref - Kzmp (r_ref - r) + Kcom (x_ref - x).
"""

from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial import ConvexHull

from .qp import QpProblem, QpSolver, QpStatus


def _check_spd(M, name, strict=True):
    M = np.asarray(M, dtype=float)
    if M.shape != (2, 2):
        raise ValueError(f"{name} must be 2x2")
    if np.linalg.norm(M - M.T, ord=np.inf) > 1e-12 * max(1.0, np.abs(M).max()):
        raise ValueError(f"{name} must be symmetric")
    lo = np.linalg.eigvalsh(M).min()
    if strict and lo <= 0.0:
        raise ValueError(f"{name} must be positive definite")
    if not strict and lo < -1e-12:
        raise ValueError(f"{name} must be positive semidefinite")
    return M


@dataclass(frozen=True)
class SupportPolygon:
    """Convex support region, stored as vertices and unit-norm half-planes."""

    vertices: np.ndarray  # (k, 2), counter-clockwise
    A: np.ndarray         # (k, 2), unit rows
    b: np.ndarray         # (k,), A v <= b for every vertex

    @classmethod
    def from_points(cls, points):
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        if pts.shape[0] < 3:
            raise ValueError("need at least three points")
        hull = ConvexHull(pts)
        verts = pts[hull.vertices]
        rows, offs = [], []
        k = verts.shape[0]
        for i in range(k):
            p, q = verts[i], verts[(i + 1) % k]
            edge = q - p
            normal = np.array([edge[1], -edge[0]])  # outward for CCW hulls
            normal /= np.linalg.norm(normal)
            rows.append(normal)
            offs.append(normal @ p)
        A = np.vstack(rows)
        b = np.asarray(offs)
        if np.max(A @ verts.T - b[:, None]) > 1e-9:
            raise ValueError("inconsistent half-plane form")
        return cls(vertices=verts, A=A, b=b)

    @classmethod
    def from_rectangle(cls, center, yaw, length, width):
        if length <= 0.0 or width <= 0.0:
            raise ValueError("rectangle sides must be positive")
        c, s = np.cos(yaw), np.sin(yaw)
        R = np.array([[c, -s], [s, c]])
        half = 0.5 * np.array([length, width])
        corners = np.array([[1, 1], [-1, 1], [-1, -1], [1, -1]]) * half
        verts = np.asarray(center, dtype=float) + corners @ R.T
        # The corner order above is counter-clockwise, so the hull is known.
        edges = np.roll(verts, -1, axis=0) - verts
        A = np.stack([edges[:, 1], -edges[:, 0]], axis=1)
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        b = np.einsum("ij,ij->i", A, verts)
        return cls(vertices=verts, A=A, b=b)

    @classmethod
    def union_hull(cls, *polygons):
        return cls.from_points(np.vstack([p.vertices for p in polygons]))

    def contains(self, point, tol=1e-9):
        return self.violation(point) <= tol

    def violation(self, point):
        """Max half-plane violation; <= 0 inside, distance-like outside."""
        p = np.asarray(point, dtype=float).reshape(2)
        return float(np.max(self.A @ p - self.b))

    def shrunk(self, margin):
        return replace(self, b=self.b - margin)

    def project(self, point):
        """Closest point of the polygon (Euclidean); identity when inside."""
        p = np.asarray(point, dtype=float).reshape(2)
        if self.violation(p) <= 0.0:
            return p.copy()
        verts = self.vertices
        best = None
        best_d = np.inf
        k = verts.shape[0]
        for i in range(k):
            a, bpt = verts[i], verts[(i + 1) % k]
            edge = bpt - a
            t = np.clip((p - a) @ edge / (edge @ edge), 0.0, 1.0)
            cand = a + t * edge
            d = (p - cand) @ (p - cand)
            if d < best_d:
                best_d = d
                best = cand
        return best


@dataclass(frozen=True)
class InstantaneousGains:
    kp: np.ndarray
    ki: np.ndarray
    anti_windup: float = 0.05  # m*s bound on the integral norm

    def __post_init__(self):
        kp = _check_spd(self.kp, "kp")
        _check_spd(self.ki, "ki", strict=False)
        if np.linalg.eigvalsh(kp - np.eye(2)).min() <= 0.0:
            raise ValueError("kp - I must be positive definite")
        if self.anti_windup <= 0.0:
            raise ValueError("anti_windup must be positive")


class InstantaneousDcmController:
    """Proportional-integral DCM stabilizer; no feasibility guarantee."""

    def __init__(self, gains, omega):
        if omega <= 0.0:
            raise ValueError("omega must be positive")
        self.gains = gains
        self.omega = omega
        self.reset()

    def reset(self):
        self.integral = np.zeros(2)
        self._prev_error = None

    def control(self, xi_meas, xi_ref, xid_ref, dt):
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        e = np.asarray(xi_meas, dtype=float) - np.asarray(xi_ref, dtype=float)
        prev = e if self._prev_error is None else self._prev_error
        self.integral = self.integral + 0.5 * dt * (prev + e)
        norm = np.linalg.norm(self.integral)
        if norm > self.gains.anti_windup:
            self.integral = self.integral * (self.gains.anti_windup / norm)
        self._prev_error = e
        return (np.asarray(xi_ref, dtype=float) - np.asarray(xid_ref, dtype=float) / self.omega
                + np.asarray(self.gains.kp) @ e + np.asarray(self.gains.ki) @ self.integral)


@dataclass(frozen=True)
class MpcConfig:
    horizon: int = 20
    sample_time: float = 0.1
    Q: np.ndarray = None
    R: np.ndarray = None
    Q_terminal: np.ndarray = None

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.sample_time <= 0.0:
            raise ValueError("sample_time must be positive")
        object.__setattr__(self, "Q", _check_spd(
            np.eye(2) if self.Q is None else self.Q, "Q"))
        object.__setattr__(self, "R", _check_spd(
            0.1 * np.eye(2) if self.R is None else self.R, "R", strict=False))
        object.__setattr__(self, "Q_terminal", _check_spd(
            np.eye(2) if self.Q_terminal is None else self.Q_terminal, "Q_terminal"))


class MpcInfeasibleError(RuntimeError):
    def __init__(self, message, violation=None):
        super().__init__(message)
        self.violation = violation


class PredictiveDcmController:
    """Receding-horizon DCM stabilizer; ZMP kept inside the support polygon."""

    def __init__(self, config, omega):
        if omega <= 0.0:
            raise ValueError("omega must be positive")
        self.config = config
        self.omega = omega
        self._solver = QpSolver()
        self._warm = None

    def reset(self):
        self._warm = None

    def assemble(self, xi_meas, r_prev, xi_refs, polygons=None):
        """Sparse QP over w = [xi_0 .. xi_N, r_0 .. r_{N-1}]."""
        N = self.config.horizon
        refs = np.asarray(xi_refs, dtype=float).reshape(-1, 2)
        if refs.shape[0] != N + 1:
            raise ValueError(f"need {N + 1} DCM reference samples, got {refs.shape[0]}")
        T = self.config.sample_time
        f = np.exp(self.omega * T)
        g_gain = 1.0 - f
        n_xi = 2 * (N + 1)
        n = n_xi + 2 * N
        Q, R, QN = self.config.Q, self.config.R, self.config.Q_terminal

        H = np.zeros((n, n))
        grad = np.zeros(n)
        for j in range(N):
            H[2 * j:2 * j + 2, 2 * j:2 * j + 2] = 2.0 * Q
            grad[2 * j:2 * j + 2] = -2.0 * Q @ refs[j]
        H[2 * N:2 * N + 2, 2 * N:2 * N + 2] = 2.0 * QN
        grad[2 * N:2 * N + 2] = -2.0 * QN @ refs[N]
        # Rate cost sum_j |r_j - r_{j-1}|^2_R with r_{-1} = r_prev: each chain
        # term adds 2R to both endpoint diagonals and -2R off-diagonal.
        for j in range(N):
            k = n_xi + 2 * j
            H[k:k + 2, k:k + 2] += 2.0 * R
            if j + 1 < N:
                k2 = n_xi + 2 * (j + 1)
                H[k:k + 2, k:k + 2] += 2.0 * R
                H[k:k + 2, k2:k2 + 2] += -2.0 * R
                H[k2:k2 + 2, k:k + 2] += -2.0 * R
        grad[n_xi:n_xi + 2] += -2.0 * R @ np.asarray(r_prev, dtype=float)

        A_eq = np.zeros((2 * N + 2, n))
        b_eq = np.zeros(2 * N + 2)
        for i in range(N):
            rows = slice(2 * i, 2 * i + 2)
            A_eq[rows, 2 * (i + 1):2 * (i + 1) + 2] = np.eye(2)
            A_eq[rows, 2 * i:2 * i + 2] = -f * np.eye(2)
            A_eq[rows, n_xi + 2 * i:n_xi + 2 * i + 2] = -g_gain * np.eye(2)
        A_eq[2 * N:2 * N + 2, 0:2] = np.eye(2)
        b_eq[2 * N:2 * N + 2] = np.asarray(xi_meas, dtype=float).reshape(2)

        A_in, b_in = None, None
        if polygons is not None:
            rows, offs = [], []
            for j, poly in enumerate(polygons[:N]):
                if poly is None:
                    continue
                block = np.zeros((poly.A.shape[0], n))
                block[:, n_xi + 2 * j:n_xi + 2 * j + 2] = poly.A
                rows.append(block)
                offs.append(poly.b)
            if rows:
                A_in = np.vstack(rows)
                b_in = np.concatenate(offs)
        return QpProblem(H=H, g=grad, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in)

    def control(self, xi_meas, r_prev, xi_refs, polygons=None):
        problem = self.assemble(xi_meas, r_prev, xi_refs, polygons)
        sol = self._solver.solve(problem, warm_start=self._warm)
        if sol.status is QpStatus.INFEASIBLE:
            self._warm = None
            raise MpcInfeasibleError("support polygon constraints are infeasible",
                                     violation=sol.residuals.get("infeasible"))
        if sol.status is not QpStatus.OPTIMAL:
            self._warm = None
            raise MpcInfeasibleError("QP solver failed to converge")
        self._warm = {"w": sol.w, "active_set": sol.active_set}
        n_xi = 2 * (self.config.horizon + 1)
        return sol.w[n_xi:n_xi + 2].copy(), sol


@dataclass(frozen=True)
class ZmpComGains:
    k_zmp: np.ndarray
    k_com: np.ndarray
    zmp_term_sign: float = -1.0  # as printed; exposed for sensitivity studies

    def validate(self, omega):
        k_zmp = _check_spd(self.k_zmp, "k_zmp")
        k_com = _check_spd(self.k_com, "k_com")
        if np.linalg.eigvalsh(k_com - omega * np.eye(2)).min() <= 0.0:
            raise ValueError("k_com - omega I must be positive definite")
        if np.linalg.eigvalsh(omega * np.eye(2) - k_zmp).min() <= 0.0:
            raise ValueError("omega I - k_zmp must be positive definite")
        return self


def zmp_com_control(x_meas, x_ref, xd_ref, r_zmp_meas, r_zmp_ref, gains):
    """Cascaded ZMP-CoM law giving the desired CoM velocity."""
    x_meas = np.asarray(x_meas, dtype=float).reshape(2)
    x_ref = np.asarray(x_ref, dtype=float).reshape(2)
    xd_ref = np.asarray(xd_ref, dtype=float).reshape(2)
    r_meas = np.asarray(r_zmp_meas, dtype=float).reshape(2)
    r_ref = np.asarray(r_zmp_ref, dtype=float).reshape(2)
    return (xd_ref
            + gains.zmp_term_sign * np.asarray(gains.k_zmp) @ (r_ref - r_meas)
            + np.asarray(gains.k_com) @ (x_ref - x_meas))


def minimum_jerk(u):
    """Quintic time scaling 10u^3 - 15u^4 + 6u^5 on [0, 1]."""
    if not 0.0 <= u <= 1.0:
        raise ValueError("blend must be in [0, 1]")
    return u**3 * (10.0 + u * (-15.0 + 6.0 * u))


def gain_schedule(blend, standing, walking, omega):
    """Blend standing and walking gain sets with the minimum-jerk scaling."""
    sigma = minimum_jerk(blend)
    blended = ZmpComGains(
        k_zmp=(1.0 - sigma) * np.asarray(standing.k_zmp) + sigma * np.asarray(walking.k_zmp),
        k_com=(1.0 - sigma) * np.asarray(standing.k_com) + sigma * np.asarray(walking.k_com),
        zmp_term_sign=standing.zmp_term_sign)
    return blended.validate(omega)
