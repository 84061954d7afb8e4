"""Bézier curves and piecewise time-parametrized trajectories."""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np


class BezierError(ValueError):
    pass


def _check_s(s):
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0) or np.any(s > 1.0):
        raise BezierError("curve parameter s must lie in [0, 1]")
    return s


def bezier_eval(points, s):
    """Evaluate a Bézier curve by de Casteljau's algorithm.

    ``points`` has shape ``(d + 1,)`` or ``(d + 1, m)``; ``s`` is a scalar or
    an array of parameters in ``[0, 1]``.
    """
    pts = np.asarray(points, dtype=float)
    s = _check_s(s)
    scalar_pts = pts.ndim == 1
    if scalar_pts:
        pts = pts[:, None]
    ss = np.atleast_1d(s)[:, None, None]
    work = np.broadcast_to(pts, (ss.shape[0],) + pts.shape).copy()
    for r in range(1, pts.shape[0]):
        work = (1.0 - ss) * work[:, :-1] + ss * work[:, 1:]
    out = work[:, 0]
    if scalar_pts:
        out = out[:, 0]
    return out[0] if np.ndim(s) == 0 else out


def derivative_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    d = pts.shape[0] - 1
    if d < 1:
        return np.zeros((1,) + pts.shape[1:])
    return d * np.diff(pts, axis=0)


def bezier_derivative(points, s):
    """Tangent ``d/ds`` of the curve, itself a degree ``d - 1`` Bézier."""
    return bezier_eval(derivative_points(points), s)


def elevate(points, times: int = 1) -> np.ndarray:
    """Degree elevation; returns control points of the same curve."""
    pts = np.asarray(points, dtype=float)
    for _ in range(times):
        d = pts.shape[0] - 1
        k = np.arange(1, d + 1, dtype=float)[:, None] if pts.ndim > 1 else np.arange(1, d + 1, dtype=float)
        mid = (k / (d + 1)) * pts[:-1] + (1.0 - k / (d + 1)) * pts[1:]
        pts = np.concatenate((pts[:1], mid, pts[-1:]))
    return pts


def elevation_matrix(d: int, e: int) -> np.ndarray:
    """Matrix ``E`` with ``elevated = E @ points`` from degree ``d`` to ``e``."""
    E = np.zeros((e + 1, d + 1))
    for k in range(e + 1):
        for j in range(max(0, k - (e - d)), min(d, k) + 1):
            E[k, j] = comb(d, j) * comb(e - d, k - j) / comb(e, k)
    return E


@dataclass
class BezierSegment:
    """One segment: spatial curve ``r(s)`` and monotone time curve ``h(s)``."""

    r: np.ndarray  # (d_r + 1, m)
    h: np.ndarray  # (d_h + 1,)
    index: int = 0

    def __post_init__(self):
        self.r = np.asarray(self.r, dtype=float)
        self.h = np.asarray(self.h, dtype=float)
        if self.r.ndim == 1:
            self.r = self.r[:, None]

    @property
    def t_start(self) -> float:
        return float(self.h[0])

    @property
    def t_end(self) -> float:
        return float(self.h[-1])

    def is_monotone(self, tol: float = 1e-9) -> bool:
        return bool(np.all(np.diff(self.h) >= -tol))

    def position(self, s):
        return bezier_eval(self.r, s)

    def time(self, s):
        return bezier_eval(self.h, s)

    def velocity(self, s):
        """World-time velocity ``r'(s) / h'(s)``."""
        rd = np.atleast_2d(bezier_derivative(self.r, s))
        hd = np.atleast_1d(bezier_derivative(self.h, s))
        out = rd / hd[:, None]
        return out[0] if np.ndim(s) == 0 else out

    def s_of_t(self, t, tol: float = 1e-10):
        """Invert the monotone time curve by bisection."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        lo = np.zeros_like(t)
        hi = np.ones_like(t)
        while np.max(hi - lo) > tol:
            mid = 0.5 * (lo + hi)
            below = bezier_eval(self.h, mid) < t
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        return 0.5 * (lo + hi)


@dataclass
class Trajectory:
    """Concatenated segments of one or more agents sharing a time grid."""

    segments: list[list[BezierSegment]]  # [agent][segment]
    agent_names: list[str] = field(default_factory=lambda: ["p1"])

    @property
    def knot_times(self) -> np.ndarray:
        segs = self.segments[0]
        return np.array([segs[0].t_start] + [s.t_end for s in segs])

    def sample(self, times):
        """Positions and velocities of all agents at ``times``.

        Returns arrays of shape ``(len(times), n_agents, m)``.
        """
        times = np.asarray(times, dtype=float)
        n_a = len(self.segments)
        m = self.segments[0][0].r.shape[1]
        pos = np.empty((times.size, n_a, m))
        vel = np.empty((times.size, n_a, m))
        knots = self.knot_times
        seg_idx = np.clip(np.searchsorted(knots, times, side="right") - 1, 0, len(knots) - 2)
        for i in np.unique(seg_idx):
            sel = seg_idx == i
            ref = self.segments[0][i]
            if not ref.is_monotone():
                raise BezierError(f"segment {i} has a non-monotone time curve")
            s = np.clip(ref.s_of_t(times[sel]), 0.0, 1.0)
            for a in range(n_a):
                seg = self.segments[a][i]
                pos[sel, a] = np.atleast_2d(seg.position(s))
                vel[sel, a] = np.atleast_2d(seg.velocity(s))
        return pos, vel


def compose_trajectory(traj: Trajectory, sample_dt: float, include_knots: bool = True):
    """Sample a trajectory on a uniform grid (plus the knot times).

    Returns ``(t, pos, vel)``; see :meth:`Trajectory.sample`.
    """
    if sample_dt <= 0:
        raise BezierError("sample_dt must be positive")
    for a, segs in enumerate(traj.segments):
        for seg in segs:
            if not seg.is_monotone():
                raise BezierError(f"agent {a} segment {seg.index} has a non-monotone time curve")
    knots = traj.knot_times
    t0, tf = knots[0], knots[-1]
    n = int(np.floor((tf - t0) / sample_dt + 1e-9))
    t = t0 + sample_dt * np.arange(n + 1)
    if include_knots:
        t = np.union1d(t, knots)
    if t[-1] < tf:
        t = np.append(t, tf)
    t = t[np.concatenate(([True], np.diff(t) > 1e-9))]
    pos, vel = traj.sample(t)
    return t, pos, vel
