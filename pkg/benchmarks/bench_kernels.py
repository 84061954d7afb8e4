"""Compiled kernels against the numpy fallback.

Kernel-level timings call both implementations directly. The end-to-end
timing runs the 60 s direct-allocation setpoint scenario in two fresh
interpreters, one with ``ATMOSKIT_PURE_PYTHON=1``.

    python3 benchmarks/bench_kernels.py [--repeat 200] [--skip-closed-loop]
"""
from __future__ import annotations

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from atmoskit import _kernels_py

try:
    from atmoskit import _core
except ImportError:  # pragma: no cover - extension not built
    _core = None

CLOSED_LOOP = """
import time
from atmoskit.kernels import BACKEND
from atmoskit.sim import Scenario, run_closed_loop
t0 = time.perf_counter()
run_closed_loop(Scenario(kind="da"))
print(BACKEND, time.perf_counter() - t0)
"""


def _inputs(K: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(K, 13))
    X[:, 6:10] /= np.linalg.norm(X[:, 6:10], axis=1)[:, None]
    U = rng.normal(size=(K, 6))
    d = rng.normal(scale=0.01, size=6)
    M = np.diag([0.297, 0.297, 0.297])
    return X, U, d, M, np.linalg.inv(M)


def _time(fn, repeat: int) -> float:
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e6


def bench_kernels(repeat: int) -> list[tuple[str, float, float]]:
    rows = []
    for K in (1, 15, 60):
        X, U, d, M, Mi = _inputs(K)
        args = (X, U, d, 16.8, M, Mi, 0.1, True)
        rows.append((f"wrench_rk4 K={K} +jac", _time(lambda: _kernels_py.wrench_rk4(*args), repeat),
                     _time(lambda: _core.wrench_rk4(*args), repeat)))
    X, U, d, _, _ = _inputs(15)
    args = (X[:, :10], U, d[:3], 16.8, 0.1, True)
    rows.append(("rate_rk4 K=15 +jac", _time(lambda: _kernels_py.rate_rk4(*args), repeat),
                 _time(lambda: _core.rate_rk4(*args), repeat)))
    rng = np.random.default_rng(1)
    n = 400
    w, lam = rng.normal(size=n), rng.normal(size=n)
    side, ws = rng.integers(-1, 2, size=n), rng.permutation(n)
    rows.append(("dual_ratio n=400", _time(lambda: _kernels_py.dual_ratio(w, lam, side, 1.0, ws, 1e-7, False), repeat),
                 _time(lambda: _core.dual_ratio(w, lam, side, 1.0, ws, 1e-7, False), repeat)))
    B = rng.normal(size=(n, n))
    dd, ww = rng.normal(size=n), rng.normal(size=n)
    dd[7] = 2.0
    rows.append(("rank1_update n=400", _time(lambda: _kernels_py.rank1_update(B.copy(), dd, ww, 7, 0.5), repeat),
                 _time(lambda: _core.rank1_update(B.copy(), dd, ww, 7, 0.5), repeat)))
    return rows


def bench_closed_loop() -> dict[str, float]:
    out = {}
    for pure in ("0", "1"):
        env = dict(os.environ, ATMOSKIT_PURE_PYTHON=pure)
        res = subprocess.run([sys.executable, "-c", CLOSED_LOOP], env=env, capture_output=True, text=True, check=True)
        backend, secs = res.stdout.split()
        out[backend] = float(secs)
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--skip-closed-loop", action="store_true")
    args = ap.parse_args(argv)
    if _core is None:
        print("compiled extension not built; run `pip install -e . --no-build-isolation` first")
        return 1
    print(f"{'kernel':<24}{'numpy [us]':>12}{'compiled [us]':>15}{'speed-up':>10}")
    for name, py, c in bench_kernels(args.repeat):
        print(f"{name:<24}{py:>12.1f}{c:>15.1f}{py / c:>9.1f}x")
    if not args.skip_closed_loop:
        cl = bench_closed_loop()
        print(f"\n60 s da scenario: numpy {cl['python']:.2f} s, compiled {cl['compiled']:.2f} s "
              f"({cl['python'] / cl['compiled']:.1f}x)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
