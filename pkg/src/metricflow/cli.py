"""Command-line front door: flow I/O, verification, distances, reports.

Flow files are JSON documents (``format_version`` 1):

    {
      "format_version": 1,
      "times": [0.0, 0.1, ...],
      "slices": [{"labels": [...], "dist": [[...], ...]}, ...],
      "kernels": {"mode": "markov", "matrices": [[[...]], ...]}
                 or {"mode": "full", "pairs": {"0:2": [[...]], ...}},
      "metadata": {...}
    }

Floats are serialized with ``repr`` (shortest round-trip), so
parse(serialize(flow)) reproduces every matrix bit-identically.

Exit codes: 0 success / all checks pass; 1 a verification or certification
check failed (witness on stderr/stdout); 2 usage, parse, or input errors.
The environment variable METRICFLOW_THREADS caps BLAS parallelism (it must
be set before numpy is first imported to take effect).
"""

from __future__ import annotations

import os

if os.environ.get("METRICFLOW_THREADS"):
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["METRICFLOW_THREADS"])

import argparse
import csv
import json
import sys

import numpy as np

from .correspondence import (
    build_union_correspondence,
    combine_correspondences,
    f_distance_within,
    f_triangle_check,
)
from .flow_core import (
    MetricFlow,
    MetricFlowPair,
    TimeGrid,
    conj_backward,
    d_integral,
    h_concentration_constant,
    verify_flow_axioms,
)
from .generators import (
    gaussian_flow_discrete,
    min_C,
    static_cycle_flow,
    two_point_flow,
)
from .ot_core import (
    BFunction,
    CertificateError,
    FiniteMetricSpace,
    InputError,
    InternalInvariantError,
    MetricflowError,
    ProbMeasure,
    StructuralError,
    mass_distribution_fn,
    variance,
    w1_distance,
)

FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# document I/O
# ---------------------------------------------------------------------------


def flow_to_document(flow: MetricFlow) -> dict:
    doc = {
        "format_version": FORMAT_VERSION,
        "times": [float(t) for t in flow.grid.times],
        "slices": [
            {"labels": list(s.labels), "dist": s.dist.tolist()} for s in flow.slices
        ],
        "metadata": dict(flow.metadata),
    }
    if flow.is_markov:
        doc["kernels"] = {
            "mode": "markov",
            "matrices": [flow.kernel(i, i + 1).tolist() for i in range(flow.grid.n - 1)],
        }
    else:
        doc["kernels"] = {
            "mode": "full",
            "pairs": {
                f"{s}:{t}": flow.kernel(s, t).tolist() for s, t in flow.stored_pairs()
            },
        }
    return doc


def save_flow(flow: MetricFlow, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(flow_to_document(flow), fh, indent=1)
        fh.write("\n")


def load_document(path: str) -> dict:
    """Read and schema-check a flow document. Raises :class:`InputError` for
    anything that is not a well-formed version-1 document."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: not valid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise InputError(f"{path}: top level must be an object")
    if doc.get("format_version") != FORMAT_VERSION:
        raise InputError(
            f"{path}: unsupported format_version {doc.get('format_version')!r} "
            f"(expected {FORMAT_VERSION})"
        )
    for key in ("times", "slices", "kernels"):
        if key not in doc:
            raise InputError(f"{path}: missing required key {key!r}")
    kern = doc["kernels"]
    if not isinstance(kern, dict) or kern.get("mode") not in ("markov", "full"):
        raise InputError(f"{path}: kernels.mode must be 'markov' or 'full'")
    if kern["mode"] == "markov" and "matrices" not in kern:
        raise InputError(f"{path}: markov kernels need a 'matrices' array")
    if kern["mode"] == "full" and "pairs" not in kern:
        raise InputError(f"{path}: full kernels need a 'pairs' object")
    return doc


def document_to_flow(doc: dict) -> MetricFlow:
    """Build the flow, running all structural content validation. Content
    that parses but is not a valid flow raises a :class:`MetricflowError`."""
    grid = TimeGrid(tuple(float(t) for t in doc["times"]))
    slices = []
    for i, rec in enumerate(doc["slices"]):
        try:
            labels = tuple(rec["labels"])
            dist = np.array(rec["dist"], dtype=float)
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f"slice {i}: malformed record ({e})") from None
        slices.append(FiniteMetricSpace(labels=labels, dist=dist))
    kern = doc["kernels"]
    meta = dict(doc.get("metadata", {}))
    if kern["mode"] == "markov":
        try:
            mats = [np.array(m, dtype=float) for m in kern["matrices"]]
        except (TypeError, ValueError) as e:
            raise InputError(f"markov kernel matrices malformed ({e})") from None
        return MetricFlow(grid, slices, adjacent_kernels=mats, metadata=meta)
    pairs = {}
    for key, mat in kern["pairs"].items():
        try:
            s_str, t_str = key.split(":")
            pair = (int(s_str), int(t_str))
        except ValueError:
            raise InputError(f"kernel pair key {key!r}: expected 's:t' integers") from None
        try:
            pairs[pair] = np.array(mat, dtype=float)
        except (TypeError, ValueError) as e:
            raise InputError(f"kernel {key!r}: malformed matrix ({e})") from None
    return MetricFlow(grid, slices, pair_kernels=pairs, metadata=meta)


def load_flow(path: str) -> MetricFlow:
    return document_to_flow(load_document(path))


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------


def _basepoint_measure(flow: MetricFlow, spec: str, t_idx: int) -> ProbMeasure:
    n = flow.slices[t_idx].n
    if spec == "uniform":
        return ProbMeasure.uniform(n)
    try:
        idx = int(spec)
    except ValueError:
        raise InputError(f"--basepoint must be 'uniform' or a point index, got {spec!r}") from None
    if not (0 <= idx < n):
        raise InputError(f"--basepoint index {idx} out of range for a {n}-point slice")
    return ProbMeasure.delta(idx, n)


def _time_or_top(flow: MetricFlow, value: float | None) -> int:
    if value is None:
        return flow.grid.n - 1
    return flow.grid.index_of(float(value))


def _parse_times_list(text: str) -> tuple:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip() != "")
    except ValueError:
        raise InputError(f"expected a comma-separated list of times, got {text!r}") from None


def _default_relation(flow1: MetricFlow, flow2: MetricFlow) -> dict:
    """Label-matching relation per time (requires equal label sets)."""
    rel = {}
    for t_idx in range(flow1.grid.n):
        l1, l2 = flow1.slices[t_idx].labels, flow2.slices[t_idx].labels
        lookup = {lab: j for j, lab in enumerate(l2)}
        if sorted(map(str, l1)) != sorted(map(str, l2)):
            raise InputError(
                f"slices at index {t_idx} carry different label sets; pass --relation"
            )
        rel[t_idx] = [(i, lookup[lab]) for i, lab in enumerate(l1)]
    return rel


def _load_relation(path: str, flow1: MetricFlow) -> dict | list:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as e:
        raise InputError(f"cannot read relation file {path}: {e}") from None
    if isinstance(doc, dict) and "per_time" in doc:
        return {int(k): [tuple(p) for p in v] for k, v in doc["per_time"].items()}
    if isinstance(doc, dict) and "pairs" in doc:
        return [tuple(p) for p in doc["pairs"]]
    raise InputError(f"{path}: relation file needs a 'pairs' list or 'per_time' object")


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(float(x)) if isinstance(x, float) else x for x in row])


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------


def cmd_generate(args) -> int:
    kind = args.kind
    if kind == "two-point":
        if args.C == "auto":
            c_val = min_C() * (1.0 + 1e-6)
        else:
            c_val = float(args.C)
        grid = TimeGrid.uniform(args.t0, args.t1, args.steps)
        flow = two_point_flow(c_val, args.D, grid)
    elif kind == "gaussian":
        times = _parse_times_list(args.times)
        flow, _ = gaussian_flow_discrete(args.dim, args.L, args.h, TimeGrid(times))
    elif kind == "static":
        grid = TimeGrid.uniform(args.t0, args.t1, args.steps)
        flow = static_cycle_flow(args.m, args.rate, args.edge, grid)
    elif kind == "product":
        from .flow_core import cartesian_product_flow

        f1 = load_flow(args.files[0])
        f2 = load_flow(args.files[1])
        flow = cartesian_product_flow(f1, f2)
    else:  # pragma: no cover - argparse restricts choices
        raise InputError(f"unknown generator kind {kind!r}")
    save_flow(flow, args.out)
    print(f"wrote {args.out}: {flow.grid.n} times, generator={flow.metadata.get('generator')}")
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def cmd_verify(args) -> int:
    doc = load_document(args.flow)  # schema problems exit 2
    try:
        flow = document_to_flow(doc)  # content problems are check failures
    except MetricflowError as e:
        print(f"structural check FAIL: {e}")
        print("summary: FAIL")
        return 1

    approximate = flow.flagged("approximate")
    mode = args.mode
    if mode is None:
        mode = "skip" if approximate else "exhaustive-2pt"
    report = verify_flow_axioms(
        flow, mode=mode, seeds=args.seeds, rng_seed=args.seed
    )
    h_value, h_witness = h_concentration_constant(flow)

    gate_names = {"points-nonempty", "time-grid-increasing", "slice-metrics",
                  "kernel-stochastic", "delta-at-equal-times"}
    if not approximate:
        gate_names.add("reproduction")

    failed = False
    lines = []
    for rec in report.records:
        gating = rec.name in gate_names
        status = "PASS" if rec.passed else "FAIL"
        note = "" if gating else " (informational)"
        if gating and not rec.passed:
            failed = True
        lines.append(f"axiom check {rec.name}: {status}{note} (worst residual {rec.worst:.3e})")
        if not rec.passed and rec.details:
            lines.append(f"  witness: {rec.details[0]}")
    for entry in report.axiom6:
        gating = not approximate
        status = "PASS" if entry.passed else "FAIL"
        note = "" if gating else " (informational)"
        if gating and not entry.passed:
            failed = True
        lines.append(
            f"axiom (6) pair (s={entry.s_idx}, t={entry.t_idx}) [{entry.verdict}]: "
            f"{status}{note} (worst ratio excess {entry.worst_excess:.3e}, "
            f"{entry.n_cases} cases, +{len(entry.duplicates)} duplicate pairs)"
        )
    if mode == "skip":
        lines.append("axiom (6): skipped (pass --mode to run the battery)")
    lines.append(f"H-concentration constant: {h_value!r} (witness {h_witness})")
    if approximate:
        lines.append("flow is flagged 'approximate': quantitative residuals informational")
    for name in ("axiom6_unverified", "truncation_warning"):
        if flow.flagged(name):
            lines.append(f"flag: {name}")
    summary = "FAIL" if failed else "PASS"
    lines.append(f"summary: {summary}")
    print("\n".join(lines))

    if args.json_out:
        payload = {
            "records": [
                {
                    "name": r.name,
                    "passed": bool(r.passed),
                    "worst": float(r.worst),
                    "gating": r.name in gate_names,
                }
                for r in report.records
            ],
            "axiom6": [
                {
                    "s_idx": e.s_idx,
                    "t_idx": e.t_idx,
                    "verdict": e.verdict,
                    "passed": bool(e.passed),
                    "worst_ratio": float(e.worst_ratio),
                    "worst_excess": float(e.worst_excess),
                    "n_cases": int(e.n_cases),
                    "gating": not approximate,
                }
                for e in report.axiom6
            ],
            "h_concentration_constant": float(h_value),
            "mode": mode,
            "approximate": bool(approximate),
            "summary": summary,
        }
        with open(args.json_out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    return 1 if failed else 0


# ---------------------------------------------------------------------------
# distance
# ---------------------------------------------------------------------------


def _pair_from(flow: MetricFlow, basepoint: str) -> MetricFlowPair:
    top = flow.grid.n - 1
    mu0 = _basepoint_measure(flow, basepoint, top)
    return MetricFlowPair(flow=flow, mu=conj_backward(flow, flow.grid.times[top], mu0))


def cmd_distance(args) -> int:
    flows = [load_flow(p) for p in args.files]
    needed = [(0, 1)] if len(flows) == 2 else [(0, 1), (1, 2)]
    relations = []
    for i, j in needed:
        if args.relation:
            relations.append(_load_relation(args.relation, flows[i]))
        else:
            relations.append(_default_relation(flows[i], flows[j]))
    J = _parse_times_list(args.J) if args.J else ()
    pairs = [_pair_from(f, args.basepoint) for f in flows]

    if len(flows) == 2:
        c = build_union_correspondence(flows[0], flows[1], relations[0])
        rep = f_distance_within(c, pairs[0], pairs[1], J=J, e_mode=args.e_mode)
        worst = max(rep.per_pair_integrals.items(), key=lambda kv: kv[1]) if rep.per_pair_integrals else None
        print(f"value r = {rep.value!r}")
        print(f"|E| = {len(rep.E_indices)} times, measure {rep.E_measure!r}")
        if worst is not None:
            print(f"worst pair (s,t) = {worst[0]} with integral {worst[1]!r}")
        if rep.flags:
            print(f"flags: {', '.join(rep.flags)}")
        if args.out:
            with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
                json.dump(rep.to_json_dict(include_couplings=args.include_couplings), fh, indent=1)
                fh.write("\n")
        return 0

    # three files: pairwise distances + triangle audit in a combined ambient
    c12 = build_union_correspondence(flows[0], flows[1], relations[0])
    c23 = build_union_correspondence(flows[1], flows[2], relations[1])
    c123 = combine_correspondences(c12, c23)
    tri = f_triangle_check(c123, pairs[0], pairs[1], pairs[2], J=J, e_mode=args.e_mode)
    print(f"d(1,2) = {tri.d12.value!r}")
    print(f"d(2,3) = {tri.d23.value!r}")
    print(f"d(1,3) = {tri.d13.value!r}")
    print(f"triangle d(1,3) <= d(1,2) + d(2,3): {'holds' if tri.holds else 'VIOLATED'}")
    print(
        f"glued-coupling certificate: value {tri.certificate_value!r} "
        f"({'admissible' if tri.certificate_ok else 'INADMISSIBLE'})"
    )
    if args.out:
        payload = {
            "d12": tri.d12.to_json_dict(),
            "d23": tri.d23.to_json_dict(),
            "d13": tri.d13.to_json_dict(),
            "holds": tri.holds,
            "certificate_value": tri.certificate_value,
            "certificate_ok": tri.certificate_ok,
            "E_union": [int(i) for i in tri.E_union],
        }
        with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, indent=1)
            fh.write("\n")
    return 0 if (tri.holds and tri.certificate_ok) else 1


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def cmd_report(args) -> int:
    flow = load_flow(args.flow)
    top_idx = _time_or_top(flow, args.time)
    quantity = args.quantity

    if quantity == "var-curve":
        mu0 = _basepoint_measure(flow, args.basepoint, top_idx)
        chf = conj_backward(flow, flow.grid.times[top_idx], mu0)
        if args.H == "auto":
            h_value, _ = h_concentration_constant(flow)
        else:
            h_value = float(args.H)
        rows = []
        for idx in chf.time_indices:
            t = flow.grid.times[idx]
            v = variance(flow.slices[idx], chf.measure_at(idx))
            rows.append([t, v, v + h_value * t])
        _write_csv(args.csv, ["time", "var", "var_plus_Ht"], rows)
    elif quantity == "dW1-curve":
        n_top = flow.slices[top_idx].n
        for name, idx in (("--x1", args.x1), ("--x2", args.x2)):
            if not (0 <= idx < n_top):
                raise InputError(f"{name} index {idx} out of range for a {n_top}-point slice")
        chf1 = conj_backward(flow, flow.grid.times[top_idx], ProbMeasure.delta(args.x1, n_top))
        chf2 = conj_backward(flow, flow.grid.times[top_idx], ProbMeasure.delta(args.x2, n_top))
        rows = []
        for idx in chf1.time_indices:
            t = flow.grid.times[idx]
            d = w1_distance(flow.slices[idx], chf1.measure_at(idx), chf2.measure_at(idx)).value
            rows.append([t, d])
        _write_csv(args.csv, ["time", "dW1"], rows)
    elif quantity == "b-function":
        mu = _basepoint_measure(flow, args.basepoint, top_idx)
        try:
            lo, hi, step = (float(x) for x in args.eps_grid.split(":"))
        except ValueError:
            raise InputError(
                f"--eps-grid must be 'start:stop:step', got {args.eps_grid!r}"
            ) from None
        eps_values = np.arange(lo, hi + 0.5 * step, step)
        eps_values = eps_values[(eps_values > 0.0) & (eps_values <= 1.0)]
        if eps_values.size == 0:
            raise InputError("--eps-grid selects no eps values in (0, 1]")
        rows = []
        for eps in eps_values:
            b = mass_distribution_fn(flow.slices[top_idx], mu, args.r, float(eps))
            rows.append([float(eps), b])
        _write_csv(args.csv, ["eps", "b"], rows)
    elif quantity == "d-integral":
        mu0 = _basepoint_measure(flow, args.basepoint, top_idx)
        chf = conj_backward(flow, flow.grid.times[top_idx], mu0)
        rows = []
        for idx in chf.time_indices:
            t = flow.grid.times[idx]
            rows.append([t, d_integral(flow, chf, t)])
        _write_csv(args.csv, ["time", "int_d"], rows)
    else:  # pragma: no cover - argparse restricts choices
        raise InputError(f"unknown quantity {quantity!r}")
    print(f"wrote {args.csv}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="metricflow",
        description="Finite metric flows: generation, verification, distances, reports.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a flow document")
    gsub = g.add_subparsers(dest="kind", required=True)
    g2 = gsub.add_parser("two-point", help="two-point mixing flow")
    g2.add_argument("--C", default="auto", help="mixing constant, or 'auto' for min_C*(1+1e-6)")
    g2.add_argument("--D", type=float, default=1.0, help="slice distance")
    g2.add_argument("--t0", type=float, default=0.0)
    g2.add_argument("--t1", type=float, default=1.0)
    g2.add_argument("--steps", type=int, default=10)
    g2.add_argument("--out", required=True)
    g2.set_defaults(func=cmd_generate)
    gg = gsub.add_parser("gaussian", help="discretized heat-kernel flow (approximate)")
    gg.add_argument("--dim", type=int, default=1)
    gg.add_argument("--L", type=float, default=12.0)
    gg.add_argument("--h", type=float, default=0.1)
    gg.add_argument("--times", default="0,1,1.5,2", help="comma-separated grid times")
    gg.add_argument("--out", required=True)
    gg.set_defaults(func=cmd_generate)
    gs = gsub.add_parser("static", help="static cycle-walk flow")
    gs.add_argument("--m", type=int, default=6)
    gs.add_argument("--rate", type=float, default=8.0)
    gs.add_argument("--edge", type=float, default=1.0)
    gs.add_argument("--t0", type=float, default=0.0)
    gs.add_argument("--t1", type=float, default=1.0)
    gs.add_argument("--steps", type=int, default=4)
    gs.add_argument("--out", required=True)
    gs.set_defaults(func=cmd_generate)
    gp = gsub.add_parser("product", help="cartesian product of two flow files")
    gp.add_argument("files", nargs=2, metavar="FLOW.json")
    gp.add_argument("--out", required=True)
    gp.set_defaults(func=cmd_generate)

    v = sub.add_parser("verify", help="audit a flow document against the axioms")
    v.add_argument("flow")
    v.add_argument(
        "--mode",
        choices=["exhaustive-2pt", "randomized", "skip"],
        default=None,
        help="smoothing-axiom mode (default: exhaustive-2pt, or skip for approximate flows)",
    )
    v.add_argument("--seeds", type=int, default=256, help="random cone count for the battery")
    v.add_argument("--seed", type=int, default=0, help="rng seed for the battery")
    v.add_argument("--json", dest="json_out", default=None, help="write machine-readable report")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("distance", help="flow distance (2 files) or triangle audit (3 files)")
    d.add_argument("files", nargs="+", metavar="FLOW.json")
    d.add_argument("--relation", default=None, help="JSON file with matched point pairs")
    d.add_argument("--J", default=None, help="comma-separated protected times")
    d.add_argument("--e-mode", dest="e_mode", choices=["empty", "exhaustive", "greedy"], default="empty")
    d.add_argument("--basepoint", default="uniform", help="'uniform' or a top-slice point index")
    d.add_argument("--out", default=None, help="write the JSON report here")
    d.add_argument("--include-couplings", action="store_true")
    d.set_defaults(func=cmd_distance)

    r = sub.add_parser("report", help="CSV curves: var, dW1, b-function, distance integral")
    r.add_argument("flow")
    r.add_argument(
        "--quantity",
        required=True,
        choices=["var-curve", "dW1-curve", "b-function", "d-integral"],
    )
    r.add_argument("--csv", required=True, help="output CSV path")
    r.add_argument("--basepoint", default="uniform")
    r.add_argument("--time", type=float, default=None, help="reference time (default: top)")
    r.add_argument("--x1", type=int, default=0)
    r.add_argument("--x2", type=int, default=1)
    r.add_argument("--r", type=float, default=1.0, help="scale for the b-function")
    r.add_argument("--eps-grid", dest="eps_grid", default="0.05:1.0:0.05")
    r.add_argument("--H", default="auto", help="'auto' (computed constant) or a number")
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "distance" and not (2 <= len(args.files) <= 3):
        parser.error("distance takes two or three flow files")
    try:
        return args.func(args)
    except (InputError, StructuralError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (CertificateError, InternalInvariantError) as e:
        print(f"check failed: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
