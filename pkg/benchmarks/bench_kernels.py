"""Compiled vs numpy CILQR kernel: per-solve latency on representative problems.

Usage::

    python3 benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from itube import cilqr
from itube.interp import design_bracket
from itube.params import ControlParams, cost_weights
from itube.vehicle import VehicleParams, build_model


def problems():
    model = build_model(VehicleParams())
    ctrl = ControlParams()
    w = cost_weights(model, ctrl)
    det = (3.6, 2.04, 0.423)
    yield "P1", cilqr.make_problem(model, ctrl, w, ctrl.constraints.rate_bounds, "P1")
    yield "P2", cilqr.make_problem(model, ctrl, w, det, "P2")
    yield "P4", cilqr.make_problem(model, ctrl, w, design_bracket(det, ctrl.constraints.rate_bounds), "P4")


def time_solves(prob, backend, x0s, warm):
    out = []
    prev = None
    for x0 in x0s:
        t0 = time.perf_counter()
        sol = cilqr.solve(prob, x0, prev if warm else None, backend=backend)
        out.append(time.perf_counter() - t0)
        prev = sol
    return np.array(out), sol


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    x0s = [np.array([2.0, 0.0, 0.0, 0.0]) * np.exp(-0.01 * i) + rng.normal(0, 0.01, 4) for i in range(args.repeats)]
    print(f"backends available: {cilqr.BACKENDS}")
    print(f"{'problem':8s} {'mode':6s} {'backend':9s} {'mean_us':>10s} {'p90_us':>10s} {'speedup':>8s} {'max|dU|':>10s}")
    for name, prob in problems():
        for warm in (False, True):
            ref = None
            ref_sol = None
            for backend in ("python",) + tuple(b for b in cilqr.BACKENDS if b != "python"):
                t, sol = time_solves(prob, backend, x0s, warm)
                if ref is None:
                    ref, ref_sol = t.mean(), sol
                du = float(np.abs(sol.U - ref_sol.U).max())
                print(
                    f"{name:8s} {'warm' if warm else 'cold':6s} {backend:9s} {1e6 * t.mean():10.1f} "
                    f"{1e6 * np.percentile(t, 90):10.1f} {ref / t.mean():8.1f} {du:10.2e}"
                )


if __name__ == "__main__":
    main()
