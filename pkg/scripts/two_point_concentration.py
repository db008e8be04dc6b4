#!/usr/bin/env python3
"""Concentration constant of the two-point flow as the grid is refined.

The constant on a single gap dt is (1/2)(1 - exp(-C dt))/dt, which increases
to C/2 as dt -> 0: the flow is (C/2)-concentrated in the limit but strictly
less concentrated at any finite resolution. The script tabulates the
measured constant against the closed form and the limit, then runs the
gradient-bound battery at a few mixing constants around the critical value
256/e to show where violations become detectable.
"""

from __future__ import annotations

import argparse
import math

import numpy as np

from metricflow import (
    TimeGrid,
    h_concentration_constant,
    min_C,
    static_cycle_flow,
    two_point_flow,
    verify_flow_axioms,
)


def refinement_table(C: float, coarsest: float, finest: float, count: int) -> None:
    print(f"C = {C!r}, limit C/2 = {C / 2!r}")
    print(f"{'dt':>12} {'measured H':>16} {'closed form':>16} {'gap to C/2':>12}")
    for dt in np.geomspace(coarsest, finest, count):
        flow = two_point_flow(C, 1.0, TimeGrid((0.0, float(dt))))
        h, _ = h_concentration_constant(flow)
        closed = 0.5 * (1.0 - math.exp(-C * dt)) / dt
        print(f"{dt:12.6g} {h:16.10f} {closed:16.10f} {C / 2 - h:12.3e}")


def battery_sweep(steps: int) -> None:
    print("\ngradient-bound battery (two-point flow, 10 uniform steps on [0,1]):")
    print("(the bound is sharp only as dt -> 0: mildly subcritical constants")
    print(" pass at this resolution and are reported via the unverified flag)")
    c_min = min_C()
    for scale in (0.02, 0.25, 0.9, 1.0 + 1e-6, 4.0):
        flow = two_point_flow(scale * c_min, 1.0, TimeGrid.uniform(0.0, 1.0, steps))
        rep = verify_flow_axioms(flow)
        worst = max((e.worst_excess for e in rep.axiom6), default=0.0)
        flag = " [flagged axiom6_unverified]" if flow.flagged("axiom6_unverified") else ""
        print(
            f"  C = {scale:g} * 256/e: {'PASS' if rep.ok else 'FAIL'} "
            f"(worst excess {worst:+.3e}){flag}"
        )
    print("\nsame battery on cycle walks (5 points, 4 steps):")
    for rate in (2.0, 8.0):
        flow = static_cycle_flow(5, rate, 0.7, TimeGrid.uniform(0.0, 1.0, 4))
        rep = verify_flow_axioms(flow)
        worst = max((e.worst_excess for e in rep.axiom6), default=0.0)
        print(f"  rate {rate:g}: {'PASS' if rep.ok else 'FAIL'} (worst excess {worst:+.3e})")


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--C", type=float, default=min_C() * (1 + 1e-6))
    ap.add_argument("--coarsest", type=float, default=0.1)
    ap.add_argument("--finest", type=float, default=None, help="default: 1/(100 C)")
    ap.add_argument("--count", type=int, default=10)
    ap.add_argument("--steps", type=int, default=10)
    args = ap.parse_args()
    finest = args.finest if args.finest is not None else 1.0 / (100.0 * args.C)
    refinement_table(args.C, args.coarsest, finest, args.count)
    battery_sweep(args.steps)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
