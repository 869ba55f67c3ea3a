"""DCM reference generation: backward recursion, exponential single-support
segments and cubic double-support blending.

Each step i has a stance ZMP r_i, a duration t_i and DCM boundary values
(ios, eos) linked by the exponential solution

    xi(tau) = r_i + e^{w (tau - t_i)} (eos_i - r_i),   tau in [0, t_i]

with step-local time tau. The recursion pins the last end-of-step DCM on the
final ZMP and chains eos_{i-1} = ios_i backwards. Double-support windows are
placed symmetrically around each junction and filled with a Hermite cubic
matching position and velocity of the adjacent exponentials, which makes the
trajectory C1 and the implied ZMP r = xi - xidot / w continuous.
"""

import csv
from bisect import bisect_right
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class StepDcmBoundary:
    xi_ios: np.ndarray
    xi_eos: np.ndarray
    r_zmp: np.ndarray
    t_step: float

    def __post_init__(self):
        if self.t_step <= 0.0:
            raise ValueError("t_step must be positive")
        for v in (self.xi_ios, self.xi_eos, self.r_zmp):
            if not np.all(np.isfinite(v)):
                raise ValueError("boundary values must be finite")


def backward_recursion(zmp_refs, durations, omega):
    """Per-step DCM boundaries from stance ZMPs.

    `zmp_refs` holds one ZMP per stance interval plus the terminal ZMP the
    DCM comes to rest on (M entries); `durations` holds the M-1 interval
    lengths. Returns M-1 boundaries ordered in time.
    """
    if len(zmp_refs) < 2:
        raise ValueError("need at least two ZMP references")
    if len(durations) != len(zmp_refs) - 1:
        raise ValueError("need exactly one duration per stance interval")
    if any(t <= 0.0 for t in durations):
        raise ValueError("durations must be positive")
    if omega <= 0.0:
        raise ValueError("omega must be positive")
    refs = [np.asarray(r, dtype=float).reshape(2) for r in zmp_refs]
    n_steps = len(refs) - 1
    boundaries = [None] * n_steps
    eos = refs[-1]
    for i in range(n_steps - 1, -1, -1):
        r = refs[i]
        t = durations[i]
        ios = r + np.exp(-omega * t) * (eos - r)
        boundaries[i] = StepDcmBoundary(xi_ios=ios, xi_eos=eos, r_zmp=r, t_step=t)
        eos = ios
    return boundaries


@dataclass(frozen=True)
class ExponentialSegment:
    """Single-support DCM segment, evaluable (extrapolation included)."""

    r_zmp: np.ndarray
    xi_eos: np.ndarray
    t_step: float
    t_origin: float   # global time of step-local tau = 0
    t_start: float    # active interval
    t_end: float

    def eval_with(self, t, omega):
        tau = t - self.t_origin
        e = np.exp(omega * (tau - self.t_step))
        delta = self.xi_eos - self.r_zmp
        return self.r_zmp + e * delta, omega * e * delta


@dataclass(frozen=True)
class CubicSegment:
    """Double-support blending segment: per-axis cubic in local time."""

    coeffs: np.ndarray  # (2, 4): a0..a3 per axis
    t_start: float
    t_end: float

    def eval_with(self, t, omega):
        tau = t - self.t_start
        a = self.coeffs
        pos = a[:, 0] + tau * (a[:, 1] + tau * (a[:, 2] + tau * a[:, 3]))
        vel = a[:, 1] + tau * (2.0 * a[:, 2] + 3.0 * tau * a[:, 3])
        return pos, vel


def ss_segment(boundary, omega, t_origin=0.0):
    """Exponential segment of one step, active on its full interval."""
    if omega <= 0.0:
        raise ValueError("omega must be positive")
    return ExponentialSegment(r_zmp=boundary.r_zmp, xi_eos=boundary.xi_eos,
                              t_step=boundary.t_step, t_origin=t_origin,
                              t_start=t_origin, t_end=t_origin + boundary.t_step)


def ds_segment(xi_start, xid_start, xi_end, xid_end, interval):
    """Hermite cubic matching the four position/velocity boundary conditions."""
    t0, t1 = interval
    T = t1 - t0
    if T <= 0.0:
        raise ValueError("degenerate double-support interval")
    p0 = np.asarray(xi_start, dtype=float).reshape(2)
    v0 = np.asarray(xid_start, dtype=float).reshape(2)
    p1 = np.asarray(xi_end, dtype=float).reshape(2)
    v1 = np.asarray(xid_end, dtype=float).reshape(2)
    a0 = p0
    a1 = v0
    a2 = (3.0 * (p1 - p0) - (2.0 * v0 + v1) * T) / T**2
    a3 = (2.0 * (p0 - p1) + (v0 + v1) * T) / T**3
    return CubicSegment(coeffs=np.stack([a0, a1, a2, a3], axis=1), t_start=t0, t_end=t1)


@dataclass(frozen=True)
class DcmTrajectory:
    """Piecewise DCM reference, evaluable for position and velocity."""

    segments: tuple
    omega: float

    def _segment_at(self, t):
        starts = [s.t_start for s in self.segments]
        i = bisect_right(starts, t) - 1
        i = min(max(i, 0), len(self.segments) - 1)
        return self.segments[i]

    def eval(self, t):
        return self._segment_at(t).eval_with(t, self.omega)

    def dcm(self, t):
        return self.eval(t)[0]

    def dcm_velocity(self, t):
        return self.eval(t)[1]

    def implied_zmp(self, t):
        xi, xid = self.eval(t)
        return xi - xid / self.omega

    @property
    def t_start(self):
        return self.segments[0].t_start

    @property
    def t_end(self):
        return self.segments[-1].t_end

    def shifted(self, delta):
        shifted = []
        for s in self.segments:
            if isinstance(s, ExponentialSegment):
                shifted.append(ExponentialSegment(
                    r_zmp=s.r_zmp, xi_eos=s.xi_eos, t_step=s.t_step,
                    t_origin=s.t_origin + delta,
                    t_start=s.t_start + delta, t_end=s.t_end + delta))
            else:
                shifted.append(CubicSegment(coeffs=s.coeffs,
                                            t_start=s.t_start + delta,
                                            t_end=s.t_end + delta))
        return DcmTrajectory(segments=tuple(shifted), omega=self.omega)

    def to_csv(self, path, dt=0.01):
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["t", "dcm_x", "dcm_y", "dcm_vx", "dcm_vy",
                             "zmp_x", "zmp_y", "phase"])
            t = self.t_start
            while t <= self.t_end + 1e-12:
                seg = self._segment_at(t)
                xi, xid = seg.eval_with(t, self.omega)
                zmp = xi - xid / self.omega
                label = "ss" if isinstance(seg, ExponentialSegment) else "ds"
                writer.writerow([f"{t:.6f}"] + [f"{v:.9f}" for v in (*xi, *xid, *zmp)] + [label])
                t += dt


def build_trajectory(timeline, omega, ds_ratio=0.2):
    """DCM reference for a whole gait timeline.

    The double-support blending window at each junction has total width
    ds_ratio times the shorter adjacent interval, split symmetrically around
    the junction; the terminal stance holds the final ZMP.
    """
    zmps, durations = timeline.step_sequence()
    horizon = timeline.horizon
    if len(zmps) == 0:
        raise ValueError("timeline has no stance phases")
    if len(zmps) == 1:
        # Stationary timeline: DCM rests on the only ZMP.
        final = np.asarray(zmps[0], dtype=float).reshape(2)
        rest = ExponentialSegment(r_zmp=final, xi_eos=final, t_step=1.0,
                                  t_origin=0.0, t_start=0.0, t_end=horizon)
        return DcmTrajectory(segments=(rest,), omega=omega)

    boundaries = backward_recursion(zmps, durations, omega)
    n = len(boundaries)
    origins = np.concatenate([[0.0], np.cumsum(durations)])
    final = np.asarray(zmps[-1], dtype=float).reshape(2)
    terminal = ExponentialSegment(r_zmp=final, xi_eos=final, t_step=1.0,
                                  t_origin=origins[-1], t_start=origins[-1], t_end=horizon)

    exp_segments = [ss_segment(b, omega, t_origin=origins[i])
                    for i, b in enumerate(boundaries)] + [terminal]
    final_stand = horizon - origins[-1]
    widths = []
    for j in range(1, n + 1):
        left = durations[j - 1]
        right = durations[j] if j < n else max(final_stand, 1e-9)
        widths.append(0.5 * ds_ratio * min(left, right))

    segments = []
    cursor_start = 0.0
    for j in range(1, n + 1):
        junction = origins[j]
        h = widths[j - 1]
        prev_seg = exp_segments[j - 1]
        next_seg = exp_segments[j]
        seg = ExponentialSegment(r_zmp=prev_seg.r_zmp, xi_eos=prev_seg.xi_eos,
                                 t_step=prev_seg.t_step, t_origin=prev_seg.t_origin,
                                 t_start=cursor_start, t_end=junction - h)
        segments.append(seg)
        if h > 0.0:
            xi_a, xid_a = prev_seg.eval_with(junction - h, omega)
            xi_b, xid_b = next_seg.eval_with(junction + h, omega)
            segments.append(ds_segment(xi_a, xid_a, xi_b, xid_b,
                                       (junction - h, junction + h)))
        cursor_start = junction + h
    segments.append(ExponentialSegment(r_zmp=terminal.r_zmp, xi_eos=terminal.xi_eos,
                                       t_step=terminal.t_step, t_origin=terminal.t_origin,
                                       t_start=cursor_start, t_end=horizon))
    return DcmTrajectory(segments=tuple(segments), omega=omega)
