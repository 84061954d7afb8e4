"""Experiment configuration: YAML files with a fixed schema.

Every key has a default (see :data:`DEFAULTS`, printed by
``atmoskit config --dump-defaults``). Unknown keys are rejected with their
dotted path; ``--set a.b=value`` overrides parse ``value`` as YAML.
"""
from __future__ import annotations

import copy
import math
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from . import stl
from .allocation import ThrusterLayout
from .dynamics import InertialParams, quat_from_yaw
from .nmpc import ERROR_DIMS, TANGENT_DIMS
from .planner.encode import PlanScenario
from .sim import HeightField, Scenario, Setpoint, floor_tilt_disturbance

DEFAULTS: dict[str, Any] = {
    "name": "run",
    "seed": 0,
    "plant": {
        "mass": 16.8,
        "inertia": [0.297, 0.297, 0.297],
        "f_max": 1.7,
        "edge": 0.24,
        "coupling": False,
        "pwm": False,
        "substep": 0.01,
    },
    "controller": {
        "kind": "da",
        "N": 15,
        "dt": 0.1,
        "Q": None,
        "R": None,
        "Q_N": None,
        "f_max": None,
        "tau_max": 0.4,
        "omega_max": 0.5,
        "max_iter": 30,
        "kkt_tol": 1.0e-6,
        "rate_gain": 2.0,
        "tracking_model": "rate",
    },
    "estimator": {
        "W": None,
        "V": None,
        "estimate_d_omega": True,
    },
    "scenario": {
        "duration": 60.0,
        "initial": [0.0, 0.0, 0.0],
        "setpoints": [[0.0, 1.0, 0.0, 0.0], [20.0, 1.0, 1.0, 0.0], [40.0, 1.0, 1.0, 45.0]],
        "tilt": [0.0, 0.0],
        "height_field": None,
        "noise": "none",
        "compare_nominal": False,
        "plan": None,
        "agent": None,
    },
    "output": {
        "dir": "out",
        "csv": True,
        "metrics": True,
    },
}

PLAN_DEFAULTS: dict[str, Any] = {
    "workspace": None,
    "regions": {},
    "obstacles": [],
    "t0": 0.0,
    "tf": 60.0,
    "n_segments": 8,
    "degree_r": 5,
    "degree_h": 3,
    "vmax": [0.2, 0.2],
    "w_acc": 1.0e-3,
    "agents": [],
    "min_sep": None,
    "solver": None,
    "node_cap": 100000,
    "sample_dt": 0.1,
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        key = f"{path}{k}"
        if k not in base:
            raise ConfigError(f"{key}: unknown key")
        if isinstance(base[k], dict) and base[k]:
            if not isinstance(v, dict):
                raise ConfigError(f"{key}: expected a mapping")
            out[k] = _merge(base[k], v, key + ".")
        else:
            out[k] = _check_type(base[k], v, key)
    return out


def _check_type(default, value, key):
    if default is None or value is None:
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true or false, got {value!r}")
    elif isinstance(default, (int, float)):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        if isinstance(default, int) and not isinstance(value, int):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
    elif isinstance(default, list):
        if not isinstance(value, list):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
    elif isinstance(default, dict):
        if not isinstance(value, dict):
            raise ConfigError(f"{key}: expected a mapping")
    return value


def _read_yaml(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return data


def bundled(name: str) -> Path:
    """Path of a scenario file shipped with the package."""
    return Path(str(resources.files("atmoskit") / "scenarios" / name))


def resolve_path(path) -> Path:
    """``path`` itself if it exists, else the bundled scenario of that name."""
    p = Path(path)
    if p.exists():
        return p
    b = bundled(p.name)
    if b.exists():
        return b
    raise ConfigError(f"no such file: {path}")


def apply_overrides(data: dict, overrides) -> dict:
    data = copy.deepcopy(data)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{key}: {p} is not a section")
        try:
            node[parts[-1]] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"{key}: cannot parse value {raw!r} ({exc})") from None
    return data


def load_config(path=None, overrides=()) -> dict:
    """Defaults, updated from the file at ``path`` and then from ``overrides``."""
    data = _read_yaml(resolve_path(path)) if path is not None else {}
    data = apply_overrides(data, overrides)
    return _merge(DEFAULTS, data)


def dump_config(cfg: dict | None = None) -> str:
    return yaml.safe_dump(DEFAULTS if cfg is None else cfg, sort_keys=False, default_flow_style=None)


def _diag(v, n, key):
    if v is None:
        return None
    a = np.asarray(v, dtype=float)
    if a.shape != (n,):
        raise ConfigError(f"{key}: expected a diagonal of {n} numbers")
    return np.diag(a)


def build_scenarios(cfg: dict, base_dir: Path | None = None) -> dict[str, Scenario]:
    """Scenarios described by a config, keyed by run label.

    A config with ``scenario.compare_nominal`` yields a nominal wrench run
    and an offset-free run on the same disturbance.
    """
    P, C, E, S = cfg["plant"], cfg["controller"], cfg["estimator"], cfg["scenario"]
    try:
        layout = ThrusterLayout(edge=P["edge"], f_max=P["f_max"])
        params = InertialParams(mass=P["mass"], inertia=np.asarray(P["inertia"], dtype=float),
                                alloc_force=layout.D, alloc_torque=layout.L)
    except ValueError as exc:
        raise ConfigError(f"plant: {exc}") from None
    kind = C["kind"]
    model_kind = C["tracking_model"] if kind == "planner-tracking" else ("wrench" if "wrench" in kind else kind)
    if model_kind not in ("da", "wrench", "rate"):
        raise ConfigError(f"controller.kind: unknown controller {kind!r}")
    ne, nt = ERROR_DIMS[model_kind], TANGENT_DIMS[model_kind]
    nu = 4 if model_kind == "da" else 6
    ctl = {
        "N": C["N"], "dt": C["dt"], "tau_max": C["tau_max"], "omega_max": C["omega_max"],
        "max_iter": C["max_iter"], "kkt_tol": C["kkt_tol"],
        "f_max": P["f_max"] if C["f_max"] is None else C["f_max"],
        "Q": _diag(C["Q"], ne, "controller.Q"), "R": _diag(C["R"], nu, "controller.R"),
        "Q_N": _diag(C["Q_N"], nt, "controller.Q_N"),
    }
    ctl = {k: v for k, v in ctl.items() if v is not None}

    init = np.asarray(S["initial"], dtype=float)
    if init.shape != (3,):
        raise ConfigError("scenario.initial: expected [x, y, yaw_deg]")
    x0 = np.concatenate(([init[0], init[1], 0.0], np.zeros(3), quat_from_yaw(math.radians(init[2])), np.zeros(3)))
    hf = None
    if S["height_field"] is not None:
        h = S["height_field"]
        if not isinstance(h, dict) or set(h) != {"origin", "spacing", "heights"}:
            raise ConfigError("scenario.height_field: needs exactly origin, spacing and heights")
        hf = HeightField(h["origin"], h["spacing"], np.asarray(h["heights"], dtype=float))
    try:
        dist = floor_tilt_disturbance(S["tilt"], hf)
    except ValueError as exc:
        raise ConfigError(f"scenario.tilt: {exc}") from None

    common = dict(params=params, layout=layout, coupling=P["coupling"], pwm=P["pwm"], substep=P["substep"], dt=C["dt"],
                  duration=S["duration"], initial=x0, controller=ctl, rate_gain=C["rate_gain"],
                  disturbance=dist, noise=S["noise"], seed=cfg["seed"],
                  W=_diag(E["W"], 18, "estimator.W"), V=_diag(E["V"], 12, "estimator.V"),
                  estimate_d_omega=E["estimate_d_omega"])
    if kind == "planner-tracking":
        if S["plan"] is None:
            raise ConfigError("scenario.plan: planner-tracking needs a plan spec")
        spec_path = Path(S["plan"])
        if base_dir is not None and not spec_path.is_absolute() and not spec_path.exists():
            spec_path = base_dir / spec_path
        traj = plan_trajectory(spec_path, S["agent"])
        common.update(kind=kind, trajectory=traj, tracking_model=model_kind)
    else:
        sps = []
        for i, row in enumerate(S["setpoints"]):
            if not isinstance(row, list) or len(row) != 4:
                raise ConfigError(f"scenario.setpoints[{i}]: expected [t, x, y, yaw_deg]")
            sps.append(Setpoint(float(row[0]), (float(row[1]), float(row[2])), math.radians(row[3])))
        common.update(setpoints=sps)
    try:
        if S["compare_nominal"]:
            if kind not in ("wrench", "offset-free-wrench"):
                raise ConfigError("scenario.compare_nominal: needs a wrench or offset-free-wrench controller")
            return {"nominal": Scenario(kind="wrench", **common),
                    "offset_free": Scenario(kind="offset-free-wrench", **common)}
        if kind != "planner-tracking":
            common["kind"] = kind
        return {cfg["name"]: Scenario(**common)}
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"scenario: {exc}") from None


# ---------------------------------------------------------------------------
# planner specifications


def load_plan_spec(path, overrides=()) -> dict:
    data = apply_overrides(_read_yaml(resolve_path(path)), overrides)
    spec = _merge(PLAN_DEFAULTS, data)
    if spec["workspace"] is None:
        raise ConfigError("workspace: required")
    if not spec["agents"]:
        raise ConfigError("agents: at least one agent is required")
    for i, a in enumerate(spec["agents"]):
        if not isinstance(a, dict) or set(a) != {"name", "start", "goal", "formula"}:
            raise ConfigError(f"agents[{i}]: needs exactly name, start, goal and formula")
    return spec


def plan_problem(spec: dict) -> list[tuple[stl.StlFormula, PlanScenario]]:
    """One ``(formula, scenario)`` pair per agent of a plan specification."""
    out = []
    for a in spec["agents"]:
        sc = PlanScenario(workspace=spec["workspace"], regions=spec["regions"], start={a["name"]: a["start"]},
                          goal={a["name"]: a["goal"]}, t0=spec["t0"], tf=spec["tf"], vmax=spec["vmax"],
                          n_segments=spec["n_segments"], degree_r=spec["degree_r"], degree_h=spec["degree_h"],
                          obstacles=tuple(spec["obstacles"]), w_acc=spec["w_acc"])
        out.append((stl.parse_formula(a["formula"], sc.regions), sc))
    return out


def spec_formula(spec: dict) -> stl.StlFormula:
    """Conjunction of all agents' formulas."""
    regions = {k: np.asarray(v, dtype=float) for k, v in spec["regions"].items()}
    parts = [stl.parse_formula(a["formula"], regions) for a in spec["agents"]]
    return parts[0] if len(parts) == 1 else stl.And(tuple(parts))


def load_monitor_formula(path) -> tuple[stl.StlFormula, float | None]:
    """Formula to monitor and its evaluation time.

    ``path`` is either a plan specification (the conjunction of its agents'
    formulas, evaluated at its ``t0``) or a file holding one bare formula.
    """
    path = resolve_path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from None
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError:
        data = None
    if isinstance(data, dict):
        spec = _merge(PLAN_DEFAULTS, data)
        if not spec["agents"]:
            raise ConfigError(f"{path}: no agents with formulas")
        return spec_formula(spec), float(spec["t0"])
    return stl.parse_formula(text.strip()), None


def run_plan(spec: dict):
    """Plan a specification; returns a list with one result per agent."""
    from .planner.plan import plan, plan_multi

    problems = plan_problem(spec)
    if len(problems) == 1:
        phi, sc = problems[0]
        solver = spec["solver"] or "bnb"
        return [plan(phi, sc, solver=solver, node_cap=spec["node_cap"], sample_dt=spec["sample_dt"])]
    min_sep = 0.0 if spec["min_sep"] is None else spec["min_sep"]
    return plan_multi(problems, min_sep, solver=spec["solver"] or "highs", node_cap=spec["node_cap"],
                      sample_dt=spec["sample_dt"])


def plan_trajectory(path, agent: str | None = None):
    """Time-to-(position, velocity) map of one agent of a freshly planned spec."""
    spec = load_plan_spec(path)
    results = run_plan(spec)
    names = [a["name"] for a in spec["agents"]]
    k = 0 if agent is None else names.index(agent) if agent in names else -1
    if k < 0:
        raise ConfigError(f"scenario.agent: {agent!r} is not in the plan")
    res = results[k]
    traj = res.trajectory
    col = traj.agent_names.index(names[k])
    t0, tf = traj.knot_times[0], traj.knot_times[-1]

    def at(t):
        tc = min(max(t, t0), tf)
        pos, vel = traj.sample([tc])
        v = vel[0, col] if t <= tf else np.zeros(2)
        return pos[0, col], v

    return at
