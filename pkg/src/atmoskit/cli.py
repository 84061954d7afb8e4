"""Command-line experiment runner.

Exit codes:

* 0 success
* 1 error (bad config, unreadable file, malformed input)
* 2 ``simulate`` finished but some controller tick hit the iteration cap
* 3 ``plan`` found the specification infeasible
* 4 ``monitor`` found robustness ``<= 0``
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import stl
from .config import ConfigError, build_scenarios, dump_config, load_config, load_monitor_formula, load_plan_spec, \
    resolve_path, run_plan
from .planner.encode import PlanError
from .planner.plan import PlanInfeasible
from .sim import SimError, metrics, run_closed_loop

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEGRADED = 2
EXIT_INFEASIBLE = 3
EXIT_UNSATISFIED = 4

ENV_OUT_DIR = "ATMOSKIT_OUT_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _out_dir(flag, cfg_dir) -> Path:
    # flag beats environment beats config
    d = Path(flag or os.environ.get(ENV_OUT_DIR) or cfg_dir or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _say(args, msg):
    if not args.quiet:
        print(msg)


def _err(msg) -> None:
    print(f"atmoskit: error: {msg}", file=sys.stderr)


def _config_arg(args, parser):
    path = args.config_opt or args.config
    if path is None:
        parser.print_usage(sys.stderr)
        _err("a config file is required")
        return None
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def cmd_simulate(args, parser) -> int:
    path = _config_arg(args, parser)
    if path is None:
        return EXIT_ERROR
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    try:
        cfg = load_config(path, overrides)
        base = resolve_path(path).parent
        scenarios = build_scenarios(cfg, base)
        out = _out_dir(args.out_dir, cfg["output"]["dir"])
        name = cfg["name"]
        report, degraded = {}, 0
        for label, sc in scenarios.items():
            t0 = time.perf_counter()
            log = run_closed_loop(sc)
            m = metrics(log)
            m["runtime_s"] = time.perf_counter() - t0
            m["kind"] = sc.kind
            report[label] = m
            degraded += log.max_iter_ticks
            stem = name if len(scenarios) == 1 else f"{name}_{label}"
            if cfg["output"]["csv"]:
                log.to_csv(out / f"{stem}.csv")
            _say(args, f"{stem}: steady-state error {m['steady_state_error_p']:.4g} m, "
                       f"{m['steady_state_error_yaw']:.4g} deg, overshoot {m['overshoot']:.3g}%, "
                       f"{log.max_iter_ticks} capped ticks, {m['runtime_s']:.1f} s")
        body = report[name] if len(scenarios) == 1 else report
        if cfg["output"]["metrics"]:
            with open(out / f"{name}_metrics.json", "w") as fh:
                json.dump(_jsonable(body), fh, indent=2)
    except (ConfigError, SimError, PlanError, ValueError, OSError) as exc:
        _err(exc)
        return EXIT_ERROR
    return EXIT_DEGRADED if degraded else EXIT_OK


def write_signal_csv(path, sig: stl.SampledSignal) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + sig.names)
        for t, row in zip(sig.t, sig.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def read_signal_csv(path) -> stl.SampledSignal:
    """Signal from a CSV with a ``t`` column; every row must be complete."""
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc.strerror}") from None
    if not rows or not rows[0] or rows[0][0] != "t":
        raise ValueError(f"{path}: header must start with a 't' column")
    names = rows[0][1:]
    data = []
    for i, r in enumerate(rows[1:], start=2):
        if len(r) != len(rows[0]):
            raise ValueError(f"{path}:{i}: expected {len(rows[0])} fields, found {len(r)}")
        try:
            data.append([float(v) for v in r])
        except ValueError:
            raise ValueError(f"{path}:{i}: non-numeric field") from None
    if len(data) < 2:
        raise ValueError(f"{path}: need at least two samples")
    a = np.array(data)
    try:
        return stl.SampledSignal(a[:, 0], a[:, 1:], names)
    except stl.StlError as exc:
        raise ValueError(f"{path}: {exc}") from None


def cmd_plan(args, parser) -> int:
    path = _config_arg(args, parser)
    if path is None:
        return EXIT_ERROR
    try:
        spec = load_plan_spec(path, args.set or ())
        out = _out_dir(args.out_dir, None)
        results = run_plan(spec)
    except PlanInfeasible as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        for c in exc.clauses:
            print(f"  binding clause: {c}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, PlanError, stl.StlError, ValueError, OSError) as exc:
        _err(exc)
        return EXIT_ERROR
    stem = Path(path).stem
    joint = results[0]
    doc = {
        "status": joint.status,
        "rho": joint.rho,
        "monitored_rho": joint.metadata.get("joint_monitored_rho", joint.monitored_rho),
        "agents": [{"name": r.agent or r.trajectory.agent_names[0], "monitored_rho": r.monitored_rho}
                   for r in results],
        "stats": joint.stats,
        "metadata": joint.metadata,
        "segments": {
            "knot_times": joint.trajectory.knot_times.tolist(),
            "agents": {a: [{"index": s.index, "r": s.r.tolist(), "h": s.h.tolist()}
                           for s in joint.trajectory.segments[k]]
                       for k, a in enumerate(joint.trajectory.agent_names)},
        },
    }
    with open(out / f"{stem}_plan.json", "w") as fh:
        json.dump(_jsonable(doc), fh, indent=2)
    write_signal_csv(out / f"{stem}_trajectory.csv", joint.signal)
    _say(args, f"planned rho = {doc['rho']:.6f} m, monitored rho = {doc['monitored_rho']:.6f} m "
               f"({joint.stats.get('solver')}, {joint.stats.get('seconds', 0.0):.1f} s)")
    return EXIT_OK


def cmd_monitor(args, parser) -> int:
    try:
        phi, t0 = load_monitor_formula(args.formula)
        sig = read_signal_csv(args.trajectory)
        rho = stl.robustness(phi, sig, t=sig.t[0] if t0 is None else t0)
    except (ConfigError, stl.StlError, ValueError, OSError) as exc:
        _err(exc)
        return EXIT_ERROR
    print(f"{rho:.9g}")
    return EXIT_OK if rho > 0 else EXIT_UNSATISFIED


def cmd_config(args, parser) -> int:
    if args.dump_defaults:
        sys.stdout.write(dump_config())
        return EXIT_OK
    if args.validate:
        try:
            cfg = load_config(args.validate, args.set)
            if cfg["controller"]["kind"] != "planner-tracking":  # tracking configs would plan here
                build_scenarios(cfg, resolve_path(args.validate).parent)
        except (ConfigError, SimError, ValueError) as exc:
            _err(exc)
            return EXIT_ERROR
        _say(args, f"{args.validate}: ok")
        return EXIT_OK
    parser.print_usage(sys.stderr)
    return EXIT_ERROR


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", dest="config_opt", metavar="PATH", help="config or spec file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config entry")
    common.add_argument("--out-dir", help=f"output directory (else ${ENV_OUT_DIR}, else the config's)")
    common.add_argument("--seed", type=int, help="random seed")
    common.add_argument("--quiet", action="store_true", help="suppress summaries")

    p = _Parser(prog="atmoskit", description="Free-flyer NMPC simulation, STL planning and monitoring.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    s = sub.add_parser("simulate", parents=[common], help="run a closed-loop scenario")
    s.add_argument("config", nargs="?", help="scenario config (YAML)")
    s.set_defaults(func=cmd_simulate)
    s = sub.add_parser("plan", parents=[common], help="plan a trajectory for an STL specification")
    s.add_argument("config", nargs="?", help="plan specification (YAML)")
    s.set_defaults(func=cmd_plan)
    s = sub.add_parser("monitor", parents=[common], help="robustness of a trajectory CSV")
    s.add_argument("formula", help="plan specification or a bare formula file")
    s.add_argument("trajectory", help="CSV with a t column and signal columns")
    s.set_defaults(func=cmd_monitor)
    s = sub.add_parser("config", parents=[common], help="print or check configuration")
    s.add_argument("--dump-defaults", action="store_true", help="print every default")
    s.add_argument("--validate", metavar="PATH", help="check a config file")
    s.set_defaults(func=cmd_config)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_ERROR
    return args.func(args, parser)


if __name__ == "__main__":
    sys.exit(main())
