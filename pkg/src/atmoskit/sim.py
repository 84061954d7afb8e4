"""Closed-loop simulation of a free-flyer on a flat floor.

The controller runs at the control period with zero-order hold; the plant
is the wrench model integrated at a finer sub-step with the force that the
thrusters actually deliver (ideal or plenum-coupled) plus a floor-tilt
disturbance. Rate-setpoint controllers are closed through a proportional
rate loop.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .allocation import ThrusterLayout, coupled_thrust, default_layout, pairs_to_duty, realized_wrench, \
    wrench_to_pairs
from .dynamics import Disturbance, DynamicsError, InertialParams, Model, RigidState, quat_from_yaw, quat_multiply, quat_yaw
from .estimator import AugmentedEstimate, Measurement, default_measurement_noise, default_process_noise, \
    offset_free_step
from .nmpc import Controller, OcpProblem, Reference

G = 9.81
AIR_FLOW = 3.5  # g/s per open thruster
MAX_SLOPE = 10.0  # mm/m
CONTROLLER_KINDS = ("da", "wrench", "rate", "offset-free-wrench", "planner-tracking")
NOISE_PRESETS = {
    "none": None,
    "mocap": {"p": 5e-4, "v": 1e-3, "att": 1e-3, "omega": 2e-3},
}

CSV_COLUMNS = (
    ["t", "p_x", "p_y", "p_z", "v_x", "v_y", "v_z", "q_w", "q_x", "q_y", "q_z", "w_x", "w_y", "w_z",
     "ref_p_x", "ref_p_y", "ref_p_z", "ref_yaw"]
    + [f"u_{i}" for i in range(8)]
    + ["f_cmd_x", "f_cmd_y", "f_cmd_z", "tau_cmd_x", "tau_cmd_y", "tau_cmd_z"]
    + ["d_hat_vx", "d_hat_vy", "d_hat_vz", "d_hat_wx", "d_hat_wy", "d_hat_wz"]
    + ["sqp_iters", "kkt_res", "cost"]
)


class SimError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# disturbances


@dataclass
class HeightField:
    """Floor height ``heights[i, j]`` in mm at ``origin + (j, i) * spacing`` (m).

    Heights are interpolated bilinearly; outside the grid the border cell
    is extended.
    """

    origin: Sequence[float]
    spacing: float
    heights: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(2)
        self.heights = np.asarray(self.heights, dtype=float)
        if self.heights.ndim != 2 or min(self.heights.shape) < 2:
            raise SimError("height field needs at least a 2x2 grid")
        if not self.spacing > 0:
            raise SimError("grid spacing must be positive")

    def _cell(self, p):
        u = (np.asarray(p[:2], dtype=float) - self.origin) / self.spacing
        r = np.round(u)
        u = np.where(np.abs(u - r) < 1e-9, r, u)  # snap to nodes lost in rounding
        ny, nx = self.heights.shape
        j = int(np.clip(np.floor(u[0]), 0, nx - 2))
        i = int(np.clip(np.floor(u[1]), 0, ny - 2))
        return i, j, u[0] - j, u[1] - i

    def height(self, p) -> float:
        i, j, a, b = self._cell(p)
        h = self.heights
        return float((1 - a) * (1 - b) * h[i, j] + a * (1 - b) * h[i, j + 1]
                     + (1 - a) * b * h[i + 1, j] + a * b * h[i + 1, j + 1])

    def gradient(self, p) -> np.ndarray:
        """Height gradient in mm/m; at a node the cell to its upper right is used."""
        i, j, a, b = self._cell(p)
        h = self.heights
        gx = ((1 - b) * (h[i, j + 1] - h[i, j]) + b * (h[i + 1, j + 1] - h[i + 1, j])) / self.spacing
        gy = ((1 - a) * (h[i + 1, j] - h[i, j]) + a * (h[i + 1, j + 1] - h[i, j + 1])) / self.spacing
        return np.array([gx, gy])


@dataclass
class DisturbanceSchedule:
    """World-frame acceleration ``d_v`` (and optional ``d_omega``) acting on the plant.

    ``d_v`` is constant unless a height field is given, in which case the
    platform slides down the local gradient. ``t_on`` delays the onset.
    """

    d_v: np.ndarray = field(default_factory=lambda: np.zeros(3))
    d_omega: np.ndarray = field(default_factory=lambda: np.zeros(3))
    field_: HeightField | None = None
    t_on: float = 0.0

    def __post_init__(self):
        self.d_v = np.asarray(self.d_v, dtype=float).reshape(3)
        self.d_omega = np.asarray(self.d_omega, dtype=float).reshape(3)

    @property
    def constant(self) -> bool:
        return self.field_ is None

    def at(self, t: float, p=None) -> Disturbance:
        if t < self.t_on:
            return Disturbance()
        d_v = self.d_v
        if self.field_ is not None:
            g = self.field_.gradient(p)
            d_v = d_v + np.array([-G * 1e-3 * g[0], -G * 1e-3 * g[1], 0.0])
        return Disturbance(d_v, self.d_omega)


def floor_tilt_disturbance(slope=(0.0, 0.0), height_field: HeightField | None = None) -> DisturbanceSchedule:
    """Disturbance of a floor falling by ``slope`` mm per m along x and y.

    The constant part is ``d_v = g * slope * 1e-3``; a height field adds the
    downhill pull of its local gradient.
    """
    s = np.asarray(slope, dtype=float).reshape(2)
    if np.any(np.abs(s) > MAX_SLOPE):
        raise SimError(f"floor slope above {MAX_SLOPE} mm/m is not a flat floor")
    return DisturbanceSchedule(np.array([G * s[0] * 1e-3, G * s[1] * 1e-3, 0.0]), field_=height_field)


# ---------------------------------------------------------------------------
# scenario and log


@dataclass
class Setpoint:
    """Pose to regulate from time ``t`` on; ``yaw`` in radians."""

    t: float
    p: Sequence[float]
    yaw: float = 0.0

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).ravel()
        self.p = np.concatenate((p, np.zeros(3 - p.size))) if p.size < 3 else p[:3]

    def state(self) -> np.ndarray:
        return np.concatenate((self.p, np.zeros(3), quat_from_yaw(self.yaw), np.zeros(3)))


def step_setpoints() -> list[Setpoint]:
    """1 m along x, then 1 m along y, then a 45 degree turn, 20 s apart."""
    return [Setpoint(0.0, (1.0, 0.0)), Setpoint(20.0, (1.0, 1.0)), Setpoint(40.0, (1.0, 1.0), math.pi / 4)]


@dataclass
class Scenario:
    """Everything that defines one closed-loop run.

    ``controller`` holds extra :class:`~atmoskit.nmpc.OcpProblem` fields
    (``N``, ``Q``, ``f_max``...). ``trajectory`` maps a time to a planar
    position and velocity for ``planner-tracking``. ``noise`` is a preset
    name or a dict of standard deviations. With ``pwm`` on, each thruster
    is open for the first ``lam * dt`` of the control period instead of
    delivering its window-averaged force.
    """

    kind: str = "da"
    params: InertialParams = field(default_factory=InertialParams)
    layout: ThrusterLayout = field(default_factory=default_layout)
    coupling: bool = False
    pwm: bool = False
    setpoints: list[Setpoint] = field(default_factory=step_setpoints)
    trajectory: Callable[[float], tuple[np.ndarray, np.ndarray]] | None = None
    tracking_model: str = "rate"
    disturbance: DisturbanceSchedule = field(default_factory=DisturbanceSchedule)
    duration: float = 60.0
    dt: float = 0.1
    substep: float = 0.01
    initial: np.ndarray | None = None
    controller: dict = field(default_factory=dict)
    rate_gain: float = 2.0
    W: np.ndarray | None = None
    V: np.ndarray | None = None
    estimate_d_omega: bool = True
    noise: str | dict | None = None
    seed: int = 0
    planar: bool = True

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise SimError(f"unknown controller kind {self.kind!r}; choose from {CONTROLLER_KINDS}")
        if not (self.dt > 0 and self.substep > 0 and self.duration > 0):
            raise SimError("durations and steps must be positive")
        n = round(self.dt / self.substep)
        if n < 1 or abs(n * self.substep - self.dt) > 1e-12:
            raise SimError("plant sub-step must divide the control period")
        if self.kind == "planner-tracking":
            if self.trajectory is None:
                raise SimError("planner-tracking needs a trajectory")
            if self.tracking_model not in ("da", "wrench", "rate"):
                raise SimError("tracking model must be da, wrench or rate")
        else:
            if not self.setpoints:
                raise SimError("need at least one setpoint")
            ts = [s.t for s in self.setpoints]
            if ts[0] != 0.0 or any(b <= a for a, b in zip(ts, ts[1:])) or ts[-1] >= self.duration:
                raise SimError("setpoint times must start at 0, increase and lie within the duration")
        if not self.rate_gain > 0:
            raise SimError("rate gain must be positive")
        if isinstance(self.noise, str):
            if self.noise not in NOISE_PRESETS:
                raise SimError(f"unknown noise preset {self.noise!r}")
            self.noise = NOISE_PRESETS[self.noise]

    @property
    def n_sub(self) -> int:
        return round(self.dt / self.substep)

    @property
    def model_kind(self) -> str:
        if self.kind == "planner-tracking":
            return self.tracking_model
        return "wrench" if self.kind == "offset-free-wrench" else self.kind

    def windows(self) -> list[tuple[float, float]]:
        if self.kind == "planner-tracking":
            return [(0.0, self.duration)]
        ts = [s.t for s in self.setpoints] + [self.duration]
        return list(zip(ts[:-1], ts[1:]))

    def reference_state(self, t: float) -> np.ndarray:
        if self.trajectory is not None and self.kind == "planner-tracking":
            p, v = self.trajectory(t)
            return np.concatenate((np.append(p, 0.0), np.append(v, 0.0), [1.0, 0, 0, 0], np.zeros(3)))
        sp = self.setpoints[0]
        for s in self.setpoints:
            if s.t <= t + 1e-9:
                sp = s
        return sp.state()


@dataclass
class SimLog:
    """Per-tick record of a closed-loop run (row ``k`` covers ``[t_k, t_k + dt)``)."""

    t: np.ndarray
    x: np.ndarray  # (K, 13) plant state at t_k
    ref: np.ndarray  # (K, 4) [p_x, p_y, p_z, yaw]
    duty: np.ndarray  # (K, 8)
    wrench_cmd: np.ndarray  # (K, 6)
    d_hat: np.ndarray  # (K, 6)
    sqp_iters: np.ndarray
    kkt: np.ndarray
    cost: np.ndarray
    thrust: np.ndarray  # (K, 8) realized per-thruster force
    status: list[str]
    windows: list[tuple[float, float]]
    dt: float
    x_final: np.ndarray | None = None

    @property
    def degraded_ticks(self) -> int:
        return sum(s != "optimal" for s in self.status)

    @property
    def max_iter_ticks(self) -> int:
        return sum(s == "max_iter" for s in self.status)

    def rows(self):
        for k in range(self.t.size):
            yield ([self.t[k]] + list(self.x[k]) + list(self.ref[k]) + list(self.duty[k])
                   + list(self.wrench_cmd[k]) + list(self.d_hat[k])
                   + [int(self.sqp_iters[k]), self.kkt[k], self.cost[k]])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for row in self.rows():
                w.writerow([v if isinstance(v, int) else repr(float(v)) for v in row])


def read_log_csv(path) -> dict[str, np.ndarray]:
    """Columns of a SimLog CSV keyed by header name."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != CSV_COLUMNS:
        raise SimError(f"{path}: not a SimLog file")
    data = np.array([[float(v) for v in r] for r in rows[1:]]) if len(rows) > 1 else np.zeros((0, len(CSV_COLUMNS)))
    return {name: data[:, i] for i, name in enumerate(CSV_COLUMNS)}


# ---------------------------------------------------------------------------
# closed loop


def _planarize(x: np.ndarray) -> np.ndarray:
    x = x.copy()
    x[2] = 0.0
    x[5] = 0.0
    x[10:12] = 0.0
    q = np.array([x[6], 0.0, 0.0, x[9]])
    x[6:10] = q / np.linalg.norm(q)
    return x


def _measure(x: np.ndarray, noise: dict | None, rng: np.random.Generator, planar: bool) -> np.ndarray:
    if noise is None:
        return x.copy()
    z = x.copy()
    z[0:3] += noise["p"] * rng.standard_normal(3)
    z[3:6] += noise["v"] * rng.standard_normal(3)
    half = 0.5 * noise["att"] * rng.standard_normal(3)
    dq = np.concatenate(([1.0], half))
    z[6:10] = quat_multiply(z[6:10], dq / np.linalg.norm(dq))
    z[10:13] += noise["omega"] * rng.standard_normal(3)
    return _planarize(z) if planar else z


def _build_controller(sc: Scenario) -> Controller:
    kw = dict(sc.controller)
    kw.setdefault("dt", sc.dt)
    return Controller(OcpProblem(kind=sc.model_kind, params=sc.params, **kw))


def run_closed_loop(sc: Scenario) -> SimLog:
    """Run ``sc`` and return its log.

    A controller tick that does not converge keeps the previous input (the
    tick is still logged with its solver status). A non-finite plant state
    aborts the run with :class:`SimError`.
    """
    rng = np.random.default_rng(sc.seed)
    ctl = _build_controller(sc)
    prob = ctl.problem
    kind = sc.model_kind
    plant_params = sc.params
    x = RigidState().as_array() if sc.initial is None else np.asarray(sc.initial, dtype=float).copy()
    if isinstance(sc.initial, RigidState):
        x = sc.initial.as_array()
    if sc.planar:
        x = _planarize(x)
    K = int(round(sc.duration / sc.dt))
    nsub = sc.n_sub
    offset_free = sc.kind == "offset-free-wrench"
    est = None
    W = V = None
    if offset_free:
        W = default_process_noise(sc.estimate_d_omega) if sc.W is None else sc.W
        V = default_measurement_noise() if sc.V is None else sc.V
        est = AugmentedEstimate.from_state(_measure(x, sc.noise, rng, sc.planar))
        if not sc.estimate_d_omega:
            est.cov[15:18, :] = 0.0
            est.cov[:, 15:18] = 0.0

    cols = {name: np.zeros((K,) + shape) for name, shape in
            (("x", (13,)), ("ref", (4,)), ("duty", (8,)), ("wrench", (6,)), ("dhat", (6,)),
             ("iters", ()), ("kkt", ()), ("cost", ()), ("thrust", (8,)))}
    status = []
    const_model = Model("wrench", plant_params, sc.disturbance.at(np.inf)) if sc.disturbance.constant else None
    lay = sc.layout
    for k in range(K):
        t = k * sc.dt
        xr = sc.reference_state(t)
        if sc.kind == "planner-tracking":
            states = [sc.reference_state(t + i * sc.dt) for i in range(prob.N + 1)]
            ref = Reference.from_states(states, kind)
        else:
            ref = Reference.constant(xr, prob.N, kind)
        z = _measure(x, sc.noise, rng, sc.planar)
        if offset_free:
            u, est = offset_free_step(est, ctl, Measurement.from_state(z), ref, W=W, V=V)
            cols["dhat"][k] = est.mean[12:18]
        else:
            u = ctl.step(z[:prob.nx], ref)
        sol = ctl.last
        status.append(sol.status)
        cols["iters"][k] = sol.iterations
        cols["kkt"][k] = sol.kkt
        cols["cost"][k] = sol.cost

        if kind == "da":
            pairs = np.asarray(u, dtype=float)
            wcmd = plant_params.alloc @ pairs
        else:
            if kind == "rate":
                tau = plant_params.inertia @ (sc.rate_gain * (u[3:6] - z[10:13]))
                wcmd = np.concatenate((u[0:3], tau))
            else:
                wcmd = np.asarray(u, dtype=float)
            pairs, _ = wrench_to_pairs(wcmd[:3], wcmd[3:], lay)
        duty = pairs_to_duty(pairs, lay.f_max)
        f, tau = realized_wrench(duty, lay, coupling=sc.coupling)
        ur = np.concatenate((f, tau))
        cols["thrust"][k] = coupled_thrust(duty, lay.f_max) if sc.coupling else lay.f_max * duty.duty
        cols["x"][k] = x
        cols["ref"][k] = np.concatenate((xr[0:3], [quat_yaw(xr[6:10])]))
        cols["duty"][k] = duty.duty
        cols["wrench"][k] = wcmd

        h = sc.substep
        try:
            for j in range(nsub):
                if sc.pwm:
                    # open fraction of this sub-step for every thruster
                    on = np.clip((duty.duty * sc.dt - j * h) / h, 0.0, 1.0)
                    ur = np.concatenate(realized_wrench(on, lay, coupling=sc.coupling))
                if const_model is not None and t + j * h >= sc.disturbance.t_on:
                    x = const_model.step(x, ur, h)
                else:
                    x = Model("wrench", plant_params, sc.disturbance.at(t + j * h, x[0:2])).step(x, ur, h)
                if sc.planar:
                    x = _planarize(x)
        except DynamicsError:
            x = np.full(13, np.nan)
        if not np.all(np.isfinite(x)):
            raise SimError(f"plant state became non-finite at t = {t + sc.dt:.3f} s")

    return SimLog(
        t=sc.dt * np.arange(K), x=cols["x"], ref=cols["ref"], duty=cols["duty"], wrench_cmd=cols["wrench"],
        d_hat=cols["dhat"], sqp_iters=cols["iters"], kkt=cols["kkt"], cost=cols["cost"],
        thrust=cols["thrust"], status=status, windows=sc.windows(), dt=sc.dt, x_final=x,
    )


# ---------------------------------------------------------------------------
# metrics


def _wrap(a):
    return (np.asarray(a) + np.pi) % (2 * np.pi) - np.pi


def tracking_errors(log: SimLog) -> tuple[np.ndarray, np.ndarray]:
    """Position error norm (m) and absolute yaw error (deg) per row."""
    ep = np.linalg.norm(log.x[:, 0:3] - log.ref[:, 0:3], axis=1)
    yaw = np.array([quat_yaw(q) for q in log.x[:, 6:10]])
    ey = np.degrees(np.abs(_wrap(yaw - log.ref[:, 3])))
    return ep, ey


def _window_rows(log: SimLog, a: float, b: float) -> np.ndarray:
    idx = np.nonzero((log.t >= a - 1e-9) & (log.t < b - 1e-9))[0]
    if idx.size == 0:
        raise SimError(f"log has no samples in the window [{a}, {b})")
    return idx


def settle_time(t, err, band: float) -> float:
    """Time from ``t[0]`` after which ``err`` stays within ``band``; ``nan`` if never."""
    out = np.nonzero(np.asarray(err) > band)[0]
    if out.size == 0:
        return 0.0
    last = out[-1]
    if last + 1 >= len(t):
        return float("nan")
    return float(t[last + 1] - t[0])


def rise_time(log: SimLog, axis: int = 0, window: int = 0, lo: float = 0.1, hi: float = 0.9) -> float:
    """10%-90% rise time of position ``axis`` in setpoint window ``window``.

    Crossing instants are interpolated linearly between samples.
    """
    a, b = log.windows[window]
    idx = _window_rows(log, a, b)
    y = log.x[idx, axis]
    y0, yf = y[0], log.ref[idx[0], axis]
    if abs(yf - y0) < 1e-12:
        raise SimError("window has no step along this axis")
    r = (y - y0) / (yf - y0)
    t = log.t[idx]

    def cross(level):
        k = np.nonzero(r >= level)[0]
        if k.size == 0:
            return float("nan")
        k = k[0]
        if k == 0:
            return float(t[0])
        return float(t[k - 1] + (level - r[k - 1]) / (r[k] - r[k - 1]) * (t[k] - t[k - 1]))

    return cross(hi) - cross(lo)


def metrics(log: SimLog) -> dict:
    """Summary numbers of a run; error metrics are the worst over the setpoint windows.

    Steady-state errors average the final 20% of each window. Overshoot is
    the excursion past the new setpoint along the step direction in percent
    of the step (position steps, or yaw steps when the position is held).
    Settling uses a 2% band around the setpoint, relative to the step.
    """
    if log.t.size == 0:
        raise SimError("empty log")
    ep, ey = tracking_errors(log)
    ss_p, ss_y, over, settle = [], [], [], []
    yaw = np.array([quat_yaw(q) for q in log.x[:, 6:10]])
    prev_p, prev_yaw = log.x[0, 0:3], yaw[0]
    for a, b in log.windows:
        idx = _window_rows(log, a, b)
        tail = idx[idx >= idx[0] + int(np.floor(0.8 * idx.size))]
        ss_p.append(float(np.mean(ep[tail])))
        ss_y.append(float(np.mean(ey[tail])))
        ref_p, ref_yaw = log.ref[idx[0], 0:3], log.ref[idx[0], 3]
        step = ref_p - prev_p
        n = np.linalg.norm(step)
        dyaw = float(_wrap(ref_yaw - prev_yaw))
        if n > 1e-9:
            proj = (log.x[idx, 0:3] - prev_p) @ (step / n)
            over.append(100.0 * max(0.0, proj.max() - n) / n)
            settle.append(settle_time(log.t[idx], ep[idx], 0.02 * n))
        elif abs(dyaw) > 1e-9:
            prog = _wrap(yaw[idx] - prev_yaw) * np.sign(dyaw)
            over.append(100.0 * max(0.0, prog.max() - abs(dyaw)) / abs(dyaw))
            settle.append(settle_time(log.t[idx], np.radians(ey[idx]), 0.02 * abs(dyaw)))
        prev_p, prev_yaw = ref_p, ref_yaw
    # a window that never settles makes the whole run unsettled
    settle_max = None if not settle or any(math.isnan(s) for s in settle) else max(settle)
    return {
        "steady_state_error_p": max(ss_p),
        "steady_state_error_yaw": max(ss_y),
        "overshoot": max(over) if over else 0.0,
        "settle_time_2%": settle_max,
        "total_impulse": float(np.sum(log.thrust) * log.dt),
        "air_mass_used": float(np.sum(log.duty) * log.dt * AIR_FLOW),
        "degraded_ticks": log.degraded_ticks,
        "max_iter_ticks": log.max_iter_ticks,
        "windows": [{"t_start": a, "t_end": b, "steady_state_error_p": p, "steady_state_error_yaw": y}
                    for (a, b), p, y in zip(log.windows, ss_p, ss_y)],
    }
