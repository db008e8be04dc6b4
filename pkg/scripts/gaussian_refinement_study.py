#!/usr/bin/env python3
"""Refinement study for the lattice diffusion flow.

Builds the discretized heat-kernel flow on [-L, L] with spacings h, h/2,
h/4, ..., measures the worst relative variance error against the continuum
values |x - x'|^2 + 4*tau over pairs within the comparison window, and
prints the observed convergence order between consecutive spacings.

Cell quantization contributes h^2/6 to each variance, so the expected order
is 2 until the box-truncation floor takes over; at L = 14 the floor sits
below 1e-5 relative and three halvings stay cleanly second order. Optionally
spot-checks W1 between two kernel rows (exact transport solves get slow on
fine lattices, so only the coarser spacings are used).
"""

from __future__ import annotations

import argparse
import csv
import math

import numpy as np

from metricflow import ProbMeasure, TimeGrid, gaussian_flow_discrete, w1_distance


def variance_errors(flow, sidecar, window: float) -> float:
    """Worst relative variance error over rows within |x| <= window."""
    coords = sidecar.coords[:, 0]
    idx = np.nonzero(np.abs(coords) <= window + 1e-12)[0]
    gap2 = (coords[idx][:, None] - coords[idx][None, :]) ** 2
    d2 = flow.slices[0].dist ** 2
    worst = 0.0
    for t_idx in range(1, flow.grid.n):
        tau = flow.grid.times[t_idx] - flow.grid.times[0]
        k = flow.kernel(0, t_idx)[idx]
        var = k @ d2 @ k.T
        exact = gap2 + 4.0 * tau
        worst = max(worst, float(np.max(np.abs(var - exact) / exact)))
    return worst


def w1_spot_check(flow, sidecar, offset: float) -> tuple:
    """W1 between the kernel rows of two lattice points ``offset`` apart
    (continuum value: exactly the offset)."""
    coords = sidecar.coords[:, 0]
    i = int(np.argmin(np.abs(coords)))
    j = int(np.argmin(np.abs(coords - offset)))
    k = flow.kernel(0, 1)
    value = w1_distance(flow.slices[0], ProbMeasure(k[i]), ProbMeasure(k[j])).value
    exact = abs(coords[j] - coords[i])
    return value, exact


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--L", type=float, default=14.0, help="box half-width")
    ap.add_argument("--h", type=float, default=0.2, help="coarsest spacing")
    ap.add_argument("--halvings", type=int, default=2, help="number of h -> h/2 steps")
    ap.add_argument("--times", default="0,0.5,1,2", help="comma-separated grid times")
    ap.add_argument("--window", type=float, default=3.0, help="|x| range compared")
    ap.add_argument("--with-w1", action="store_true", help="spot-check W1 on the two coarsest h")
    ap.add_argument("--csv", default=None, help="optional CSV output path")
    args = ap.parse_args()

    grid = TimeGrid(tuple(float(x) for x in args.times.split(",")))
    spacings = [args.h / 2.0**k for k in range(args.halvings + 1)]
    rows = []
    print(f"L = {args.L}, times = {grid.times}, window |x| <= {args.window}")
    print(f"{'h':>8} {'points':>7} {'worst rel var err':>18} {'order':>6} {'W1 err':>10}")
    prev = None
    for pos, h in enumerate(spacings):
        flow, sidecar = gaussian_flow_discrete(1, args.L, h, grid)
        err = variance_errors(flow, sidecar, args.window)
        order = math.log2(prev / err) if prev else float("nan")
        w1_err = float("nan")
        if args.with_w1 and pos < 2:
            value, exact = w1_spot_check(flow, sidecar, 1.5)
            w1_err = abs(value - exact)
        print(
            f"{h:8.4f} {sidecar.coords.shape[0]:7d} {err:18.3e} "
            f"{order:6.2f} {w1_err:10.2e}"
        )
        rows.append([h, sidecar.coords.shape[0], err, order, w1_err])
        prev = err
    print(
        "note: the error is quantization-dominated (h^2/6 per variance); "
        "below ~1e-5 relative the box-truncation floor of L = 14 appears "
        "and further halvings stop helping."
    )
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["h", "points", "worst_rel_var_err", "order", "w1_err"])
            writer.writerows(rows)
        print(f"wrote {args.csv}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
