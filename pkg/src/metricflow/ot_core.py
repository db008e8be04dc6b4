"""Exact optimal transport and metric-measure primitives on finite spaces.

Everything in this module is finite and exact-up-to-LP-tolerance: a metric
space is a labelled symmetric matrix, a measure is a probability vector, a
coupling is a joint mass matrix, and Wasserstein distances are computed by a
dense LP whose optimality is certified through the dual (Kantorovich
potential) rather than trusted blindly.

Core objects
------------
FiniteMetricSpace      labelled points + distance matrix (structure-checked)
ProbMeasure            probability vector on a space's points
Coupling               joint mass matrix with prescribed marginals
TransportCertificate   primal value + 1-Lipschitz potential + duality gap
BFunction              sampled lower mass-distribution profile on (0, 1]

Core operations
---------------
check_metric_axioms    audit symmetry / diagonal / positivity / triangle
w1_distance            first Wasserstein distance, coupling + dual certificate
wp_distance            p-th Wasserstein distance (p >= 1)
variance               joint second moment  Var(mu1, mu2) = ∬ d² dmu1 dmu2
glue_couplings         tri-index gluing of couplings sharing a middle marginal
mass_distribution_fn   b_r(eps): largest mass threshold that eps-most points'
                       (eps r)-balls exceed
in_class_M             membership in the class {full support, Var <= V r²,
                       b_r >= b}
finite_approximation   replace mu by a controlled finite atomic measure with a
                       transport-certified error bound
product_space          l²-product of two spaces

Conventions
-----------
Distances are float64 throughout. Probability vectors must sum to 1 within
1e-12; entries in [-1e-12, 0) are treated as solver noise and clamped to 0.
All randomness is caller-supplied; nothing in this module draws random
numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

__all__ = [
    "MetricflowError",
    "StructuralError",
    "InputError",
    "CertificateError",
    "InternalInvariantError",
    "MetricAxiomViolation",
    "MetricAxiomReport",
    "FiniteMetricSpace",
    "ProbMeasure",
    "Coupling",
    "TransportCertificate",
    "W1Result",
    "BFunction",
    "MClassReport",
    "FiniteApproximation",
    "check_metric_axioms",
    "w1_distance",
    "wp_distance",
    "variance",
    "glue_couplings",
    "mass_distribution_fn",
    "in_class_M",
    "finite_approximation",
    "product_space",
]

# Absolute tolerance for "exact" float bookkeeping (measure sums, marginals,
# symmetry, diagonals).
EXACT_TOL = 1e-12
# Relative duality-gap budget for transport certificates.
GAP_REL_TOL = 1e-8


# ---------------------------------------------------------------------------
# exceptions
# ---------------------------------------------------------------------------


class MetricflowError(Exception):
    """Base class for all errors raised by this package."""


class StructuralError(MetricflowError, ValueError):
    """Malformed numeric data: wrong shape, non-finite or negative entries."""


class InputError(MetricflowError, ValueError):
    """Structurally sound but semantically invalid argument."""


class CertificateError(MetricflowError, RuntimeError):
    """An LP solve or its certification failed beyond tolerance."""


class InternalInvariantError(MetricflowError, RuntimeError):
    """A mathematically guaranteed post-condition failed (a bug, not bad input)."""


# ---------------------------------------------------------------------------
# small array helpers
# ---------------------------------------------------------------------------


def _as_matrix(obj, name: str) -> np.ndarray:
    a = np.asarray(obj, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise StructuralError(f"{name}: expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise StructuralError(f"{name}: non-finite entries")
    return a


def _as_vector(obj, name: str) -> np.ndarray:
    a = np.asarray(obj, dtype=float)
    if a.ndim != 1:
        raise StructuralError(f"{name}: expected a 1-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise StructuralError(f"{name}: non-finite entries")
    return a


def _clamp_noise(a: np.ndarray, name: str, floor: float = -EXACT_TOL) -> np.ndarray:
    """Zero out entries in [floor, 0); raise on anything more negative."""
    worst = float(a.min(initial=0.0))
    if worst < floor:
        raise InputError(f"{name}: negative entry {worst:.3e} below tolerance {floor:.0e}")
    if worst < 0.0:
        a = np.where(a < 0.0, 0.0, a)
    return a


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


# ---------------------------------------------------------------------------
# metric spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricAxiomViolation:
    """One failed metric axiom: kind in {symmetry, diagonal, positivity, triangle}."""

    kind: str
    indices: tuple
    magnitude: float

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        return f"{self.kind} violated at {self.indices} by {self.magnitude:.3e}"


@dataclass(frozen=True)
class MetricAxiomReport:
    """Audit result; ``ok`` iff no violations were recorded."""

    violations: tuple
    checked_positivity: bool
    truncated: bool = False

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0

    def worst(self) -> MetricAxiomViolation | None:
        if not self.violations:
            return None
        return max(self.violations, key=lambda v: v.magnitude)


@dataclass(frozen=True, eq=False)
class FiniteMetricSpace:
    """A finite metric space: point labels and a distance matrix.

    The constructor enforces *structure* only (square, finite, nonnegative,
    matching label count, unique labels). The metric axioms themselves are
    audited by :func:`check_metric_axioms`; constructions in this package that
    must output a genuine metric run that audit and raise on violations.
    """

    labels: tuple
    dist: np.ndarray

    def __post_init__(self):
        d = _as_matrix(self.dist, "dist")
        if float(d.min(initial=0.0)) < 0.0:
            raise StructuralError("dist: negative entries")
        labels = tuple(self.labels)
        if len(labels) != d.shape[0]:
            raise InputError(
                f"labels: {len(labels)} labels for a {d.shape[0]}-point distance matrix"
            )
        if len(set(labels)) != len(labels):
            raise InputError("labels: point labels must be unique")
        if len(labels) == 0:
            raise InputError("a metric space needs at least one point")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "dist", _readonly(d))

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def diameter(self) -> float:
        return float(self.dist.max(initial=0.0))

    def index_of(self, label) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise InputError(f"unknown point label {label!r}") from None

    def subspace(self, indices: Sequence[int]) -> "FiniteMetricSpace":
        idx = np.asarray(list(indices), dtype=int)
        if idx.size == 0:
            raise InputError("subspace: empty index set")
        return FiniteMetricSpace(
            labels=tuple(self.labels[i] for i in idx),
            dist=self.dist[np.ix_(idx, idx)],
        )

    def scaled(self, factor: float) -> "FiniteMetricSpace":
        if not (factor > 0.0 and math.isfinite(factor)):
            raise InputError(f"scale factor must be positive and finite, got {factor}")
        return FiniteMetricSpace(labels=self.labels, dist=factor * self.dist)


def check_metric_axioms(
    space,
    *,
    require_positive: bool = True,
    tol: float = EXACT_TOL,
    max_violations: int = 256,
) -> MetricAxiomReport:
    """Audit a distance matrix against the metric axioms.

    Accepts a :class:`FiniteMetricSpace` or a raw square matrix (raw input is
    structure-checked first and raises :class:`StructuralError` if malformed).

    Checks, with witnesses:
      * symmetry              |d[i,j] - d[j,i]| <= tol
      * zero diagonal         |d[i,i]| <= tol
      * positivity (optional) d[i,j] > 0 for i != j
      * triangle inequality   d[i,k] <= d[i,j] + d[j,k] + tol·max(1, max d)

    The triangle slack scales with the magnitude of the distances so that
    spaces assembled in float arithmetic (glued or product spaces) are not
    flagged for ~1 ulp rounding. Set ``require_positive=False`` to audit
    pseudometrics (distinct points at distance zero are then legal).
    """
    if isinstance(space, FiniteMetricSpace):
        d = space.dist
    else:
        d = _as_matrix(space, "dist")
        if float(d.min(initial=0.0)) < 0.0:
            raise StructuralError("dist: negative entries")
    n = d.shape[0]
    out: list[MetricAxiomViolation] = []
    truncated = False

    def push(kind, idx, mag) -> bool:
        nonlocal truncated
        if len(out) >= max_violations:
            truncated = True
            return False
        out.append(MetricAxiomViolation(kind, idx, float(mag)))
        return True

    asym = np.abs(d - d.T)
    for i, j in zip(*np.nonzero(asym > tol)):
        if i < j and not push("symmetry", (int(i), int(j)), asym[i, j]):
            break
    diag = np.abs(np.diagonal(d))
    for i in np.nonzero(diag > tol)[0]:
        if not push("diagonal", (int(i),), diag[i]):
            break
    if require_positive:
        off = d + np.where(np.eye(n, dtype=bool), np.inf, 0.0)
        for i, j in zip(*np.nonzero(off <= 0.0)):
            if i < j and not push("positivity", (int(i), int(j)), -d[i, j]):
                break

    tri_tol = tol * max(1.0, float(d.max(initial=0.0)))
    # d[i,k] <= min_j d[i,j] + d[j,k]; chunk rows to bound memory at n^2·chunk.
    chunk = max(1, int(2_000_000 // max(1, n * n)))
    for i0 in range(0, n, chunk):
        i1 = min(n, i0 + chunk)
        through = d[i0:i1, :, None] + d[None, :, :]  # (rows, j, k)
        best = through.min(axis=1)
        arg = through.argmin(axis=1)
        bad = d[i0:i1, :] > best + tri_tol
        for r, k in zip(*np.nonzero(bad)):
            i = i0 + int(r)
            j = int(arg[r, k])
            if not push("triangle", (i, j, int(k)), d[i, k] - best[r, k]):
                break
        if truncated:
            break

    return MetricAxiomReport(
        violations=tuple(out), checked_positivity=require_positive, truncated=truncated
    )


# ---------------------------------------------------------------------------
# measures and couplings
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ProbMeasure:
    """A probability vector. Sum must be 1 within 1e-12; tiny negative noise
    (>= -1e-12) is clamped to zero at construction."""

    weights: np.ndarray

    def __post_init__(self):
        w = _as_vector(self.weights, "weights")
        w = _clamp_noise(w, "weights")
        s = float(w.sum())
        if abs(s - 1.0) > EXACT_TOL:
            raise InputError(f"weights must sum to 1 within {EXACT_TOL:.0e}; got {s!r}")
        object.__setattr__(self, "weights", _readonly(w))

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def support(self) -> np.ndarray:
        return np.nonzero(self.weights > 0.0)[0]

    @staticmethod
    def delta(i: int, n: int) -> "ProbMeasure":
        if not (0 <= i < n):
            raise InputError(f"delta: index {i} out of range for {n} points")
        w = np.zeros(n)
        w[i] = 1.0
        return ProbMeasure(w)

    @staticmethod
    def uniform(n: int) -> "ProbMeasure":
        if n <= 0:
            raise InputError("uniform: need at least one point")
        return ProbMeasure(np.full(n, 1.0 / n))


@dataclass(frozen=True, eq=False)
class Coupling:
    """A joint mass matrix with unit total mass.

    ``marginal_first``/``marginal_second`` return the induced marginals;
    :meth:`check_marginals` reports the residual against prescribed ones.
    """

    matrix: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.matrix, dtype=float)
        if q.ndim != 2:
            raise StructuralError(f"coupling: expected a matrix, got shape {q.shape}")
        if not np.all(np.isfinite(q)):
            raise StructuralError("coupling: non-finite entries")
        q = _clamp_noise(q, "coupling")
        total = float(q.sum())
        if abs(total - 1.0) > EXACT_TOL:
            raise InputError(f"coupling mass must be 1 within {EXACT_TOL:.0e}; got {total!r}")
        object.__setattr__(self, "matrix", _readonly(q))

    @property
    def shape(self) -> tuple:
        return self.matrix.shape

    def marginal_first(self) -> np.ndarray:
        return self.matrix.sum(axis=1)

    def marginal_second(self) -> np.ndarray:
        return self.matrix.sum(axis=0)

    def check_marginals(self, mu1: ProbMeasure, mu2: ProbMeasure, tol: float = EXACT_TOL):
        if mu1.n != self.matrix.shape[0] or mu2.n != self.matrix.shape[1]:
            raise InputError(
                f"marginal sizes ({mu1.n}, {mu2.n}) do not match the "
                f"{self.matrix.shape} coupling"
            )
        r1 = float(np.abs(self.marginal_first() - mu1.weights).max())
        r2 = float(np.abs(self.marginal_second() - mu2.weights).max())
        return max(r1, r2) <= tol, max(r1, r2)

    @staticmethod
    def diagonal(mu: ProbMeasure) -> "Coupling":
        return Coupling(np.diag(mu.weights))

    @staticmethod
    def independent(mu1: ProbMeasure, mu2: ProbMeasure) -> "Coupling":
        return Coupling(np.outer(mu1.weights, mu2.weights))


@dataclass(frozen=True, eq=False)
class TransportCertificate:
    """Optimality certificate for a first-Wasserstein solve.

    ``primal_value``  cost of the returned coupling,
    ``dual_potential`` a 1-Lipschitz potential f with
                       dual = sum f d(mu1 - mu2) <= primal (weak duality),
    ``gap``            primal - dual, in [0, 1e-8·max(1, primal)].
    """

    primal_value: float
    dual_potential: np.ndarray
    gap: float

    def __post_init__(self):
        object.__setattr__(self, "dual_potential", _readonly(self.dual_potential))

    def validate(self, space: FiniteMetricSpace, mu1: ProbMeasure, mu2: ProbMeasure) -> None:
        f = self.dual_potential
        scale = max(1.0, space.diameter)
        lip = np.abs(f[:, None] - f[None, :]) - space.dist
        worst = float(lip.max(initial=0.0))
        if worst > EXACT_TOL * scale:
            raise CertificateError(f"dual potential not 1-Lipschitz (excess {worst:.3e})")
        dual = float(f @ (mu1.weights - mu2.weights))
        gap = self.primal_value - dual
        if abs(gap - self.gap) > 1e-9 * max(1.0, abs(self.primal_value)):
            raise CertificateError("stored gap inconsistent with potential")
        if self.gap < 0.0 or self.gap > GAP_REL_TOL * max(1.0, self.primal_value):
            raise CertificateError(f"duality gap {self.gap:.3e} outside certified range")


class W1Result(NamedTuple):
    value: float
    coupling: Coupling
    certificate: TransportCertificate


# ---------------------------------------------------------------------------
# transport solves
# ---------------------------------------------------------------------------


def _transport_lp(cost: np.ndarray, a: np.ndarray, b: np.ndarray):
    """Solve min <cost, q> over couplings of (a, b). Returns (plan, duals)."""
    n1, n2 = cost.shape
    rows = sp.vstack(
        [
            sp.kron(sp.eye(n1, format="csr"), np.ones((1, n2)), format="csr"),
            sp.kron(np.ones((1, n1)), sp.eye(n2, format="csr"), format="csr"),
        ],
        format="csr",
    )
    res = linprog(
        c=cost.ravel(),
        A_eq=rows,
        b_eq=np.concatenate([a, b]),
        bounds=(0, None),
        method="highs",
        options={
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    if not res.success:
        raise CertificateError(f"transport LP failed: {res.message}")
    plan = res.x.reshape(n1, n2)
    duals = np.asarray(res.eqlin.marginals, dtype=float)
    return plan, duals[:n1], duals[n1:]


def _fit_marginals(plan: np.ndarray, a: np.ndarray, b: np.ndarray, tol: float = 1e-13):
    """Proportionally refit a near-coupling to its prescribed marginals.

    Solver output usually satisfies the marginal equations to ~1e-15 already;
    this loop is a guard that nudges the plan when it does not, moving
    O(residual) mass and therefore perturbing the cost far below the
    certified gap budget.
    """
    q = np.array(plan, dtype=float)
    q[q < 0.0] = 0.0
    for _ in range(100):
        rows = q.sum(axis=1)
        cols = q.sum(axis=0)
        if (
            float(np.abs(rows - a).max()) <= tol
            and float(np.abs(cols - b).max()) <= tol
        ):
            return q
        # scale away surpluses (always possible), then fill the remaining
        # deficits with a rank-1 patch — this repairs support-deficient plans
        # (e.g. a diagonal plan between unequal marginals) where plain
        # proportional fitting stalls
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(rows > a, a / np.where(rows > 0.0, rows, 1.0), 1.0)
        q *= scale[:, None]
        cols = q.sum(axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(cols > b, b / np.where(cols > 0.0, cols, 1.0), 1.0)
        q *= scale[None, :]
        r = a - q.sum(axis=1)
        r[r < 0.0] = 0.0
        c = b - q.sum(axis=0)
        c[c < 0.0] = 0.0
        sr, sc = float(r.sum()), float(c.sum())
        if sr > 0.0 and sc > 0.0:
            q += np.outer(r, c) / max(sr, sc)
    raise CertificateError("could not refit coupling marginals to tolerance")


def w1_distance(space: FiniteMetricSpace, mu1: ProbMeasure, mu2: ProbMeasure) -> W1Result:
    """First Wasserstein distance between two measures on one finite space.

    Returns ``(value, coupling, certificate)``. The coupling attains the
    value; the certificate carries a 1-Lipschitz potential whose dual value
    matches the primal up to a gap in [0, 1e-8·max(1, value)].

    Symmetry is exact: the argument pair is canonically oriented internally
    (byte order of the weight vectors), so swapping the measures returns
    bit-identical values. Bit-equal measures short-circuit to value 0 with
    the diagonal coupling.
    """
    _check_measure_space(space, mu1, "mu1")
    _check_measure_space(space, mu2, "mu2")
    if np.array_equal(mu1.weights, mu2.weights):
        cert = TransportCertificate(0.0, np.zeros(space.n), 0.0)
        return W1Result(0.0, Coupling.diagonal(mu1), cert)

    swapped = mu1.weights.tobytes() > mu2.weights.tobytes()
    a, b = (mu2, mu1) if swapped else (mu1, mu2)

    plan, _, beta = _transport_lp(space.dist, a.weights, b.weights)
    plan = _fit_marginals(plan, a.weights, b.weights)
    value = float(np.sum(plan * space.dist))

    # Kantorovich potential by c-transform of the column duals: f is a min of
    # 1-Lipschitz functions of the first index (triangle inequality), hence
    # 1-Lipschitz, and its dual value dominates the LP dual optimum.
    f = (space.dist - beta[None, :]).min(axis=1)
    dual = float(f @ (a.weights - b.weights))
    gap = value - dual
    if -EXACT_TOL <= gap < 0.0:
        gap = 0.0
    if gap < 0.0:
        raise CertificateError(f"negative duality gap {gap:.3e}")
    if swapped:
        f = -f
        coupling = Coupling(plan.T)
    else:
        coupling = Coupling(plan)
    cert = TransportCertificate(value, f, gap)
    cert.validate(space, mu1, mu2)
    ok, res = coupling.check_marginals(mu1, mu2)
    if not ok:
        raise CertificateError(f"coupling marginals off by {res:.3e}")
    return W1Result(value, coupling, cert)


def wp_distance(space: FiniteMetricSpace, mu1: ProbMeasure, mu2: ProbMeasure, p: float) -> float:
    """p-th Wasserstein distance, ``inf over couplings of (∬ d^p dq)^{1/p}``.

    Requires p >= 1. For p == 1 this agrees with :func:`w1_distance` (same
    LP, no certificate returned here).
    """
    if not (isinstance(p, (int, float)) and math.isfinite(p)):
        raise InputError(f"p must be a finite real, got {p!r}")
    if p < 1.0:
        raise InputError(f"wp_distance requires p >= 1, got {p}")
    _check_measure_space(space, mu1, "mu1")
    _check_measure_space(space, mu2, "mu2")
    if np.array_equal(mu1.weights, mu2.weights):
        return 0.0
    swapped = mu1.weights.tobytes() > mu2.weights.tobytes()
    a, b = (mu2, mu1) if swapped else (mu1, mu2)
    cost = space.dist if p == 1.0 else space.dist**p
    plan, _, _ = _transport_lp(cost, a.weights, b.weights)
    plan = _fit_marginals(plan, a.weights, b.weights)
    total = float(np.sum(plan * cost))
    return total if p == 1.0 else total ** (1.0 / p)


def _check_measure_space(space: FiniteMetricSpace, mu: ProbMeasure, name: str) -> None:
    if mu.n != space.n:
        raise InputError(f"{name}: measure on {mu.n} points but space has {space.n}")


# ---------------------------------------------------------------------------
# variance functional
# ---------------------------------------------------------------------------


def variance(space: FiniteMetricSpace, mu1: ProbMeasure, mu2: ProbMeasure | None = None) -> float:
    """Joint second moment ``Var(mu1, mu2) = ∬ d(x, y)² dmu1(x) dmu2(y)``.

    With one argument this is Var(mu, mu). Bilinear in (mu1, mu2); satisfies
    d_W1 <= sqrt(Var(mu1, mu2)) <= d_W1 + sqrt(Var(mu1)) + sqrt(Var(mu2)).
    """
    _check_measure_space(space, mu1, "mu1")
    if mu2 is None:
        mu2 = mu1
    else:
        _check_measure_space(space, mu2, "mu2")
    d2 = space.dist * space.dist
    return float(mu1.weights @ d2 @ mu2.weights)


# ---------------------------------------------------------------------------
# gluing couplings
# ---------------------------------------------------------------------------


def glue_couplings(q12: Coupling, q23: Coupling, tol: float = 1e-10) -> np.ndarray:
    """Glue two couplings along their shared middle marginal.

    Returns the three-index joint mass array
    ``q[i, j, k] = q12[i, j] · q23[j, k] / mid[j]`` (zero where ``mid[j] = 0``),
    whose (1,2)-marginal is q12 and whose (2,3)-marginal is q23 whenever the
    middle marginals agree. Raises :class:`InputError` when the second
    marginal of ``q12`` and the first of ``q23`` differ by more than ``tol``.
    """
    mid_a = q12.marginal_second()
    mid_b = q23.marginal_first()
    if q12.shape[1] != q23.shape[0]:
        raise InputError(
            f"middle dimensions differ: {q12.shape[1]} vs {q23.shape[0]}"
        )
    res = float(np.abs(mid_a - mid_b).max())
    if res > tol:
        raise InputError(f"middle marginals differ by {res:.3e} > {tol:.0e}")
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(mid_a > 0.0, 1.0 / np.where(mid_a > 0.0, mid_a, 1.0), 0.0)
    return q12.matrix[:, :, None] * (q23.matrix * inv[:, None])[None, :, :]


# ---------------------------------------------------------------------------
# mass distribution function and the class M
# ---------------------------------------------------------------------------


def mass_distribution_fn(space: FiniteMetricSpace, mu: ProbMeasure, r: float, eps: float) -> float:
    """Lower mass-distribution value ``b_r(eps)`` at scale r.

    ``b_r(eps) = sup { delta > 0 : mu({x : mu(D(x, eps·r)) < delta}) <= eps }``
    with D a closed ball, capped at 1 (the codomain is (0, 1]; at eps = 1
    every delta qualifies, so the cap binds and b_r(1) = 1).

    On a finite space ``G(delta) = mu({x : B_x < delta})`` is a left-continuous
    step function of delta jumping exactly at the distinct ball masses
    ``B_x = mu(D(x, eps·r))``, so the sup is attained at one of those values
    or at the cap.
    """
    _check_measure_space(space, mu, "mu")
    if not (r > 0.0 and math.isfinite(r)):
        raise InputError(f"r must be positive and finite, got {r}")
    if not (0.0 < eps <= 1.0):
        raise InputError(f"eps must lie in (0, 1], got {eps}")
    ball_mass = (space.dist <= eps * r) @ mu.weights  # B_x, closed balls
    order = np.argsort(ball_mass, kind="stable")
    sorted_mass = ball_mass[order]
    sorted_w = mu.weights[order]
    # distinct ball-mass values v_1 < ... < v_m and c_k = mu({B <= v_k})
    values, starts = np.unique(sorted_mass, return_index=True)
    cums = np.cumsum(sorted_w)
    c = cums[np.append(starts[1:] - 1, len(sorted_w) - 1)]
    # G(delta) <= eps holds on (v_k, v_{k+1}] iff c_k <= eps; scan for the
    # largest admissible right endpoint.
    best = float(values[0])  # (0, v_1] always admissible since G there is 0
    for k in range(len(values)):
        if c[k] <= eps + EXACT_TOL:
            best = float(values[k + 1]) if k + 1 < len(values) else 1.0
        else:
            break
    return min(best, 1.0)


@dataclass(frozen=True)
class BFunction:
    """A sampled lower-bound profile b on (0, 1].

    Stored as samples on an increasing eps-grid with the piecewise-constant
    right-continuous extension: b(eps) = values[i] for eps in
    [eps_grid[i], eps_grid[i+1]), constant beyond the ends.
    """

    eps_grid: tuple
    values: tuple

    def __post_init__(self):
        e = _as_vector(np.asarray(self.eps_grid, dtype=float), "eps_grid")
        v = _as_vector(np.asarray(self.values, dtype=float), "values")
        if e.size == 0 or e.size != v.size:
            raise InputError("eps_grid and values must be equal-length and nonempty")
        if np.any(np.diff(e) <= 0.0):
            raise InputError("eps_grid must be strictly increasing")
        if e[0] <= 0.0 or e[-1] > 1.0:
            raise InputError("eps_grid must lie in (0, 1]")
        if np.any(v <= 0.0) or np.any(v > 1.0):
            raise InputError("values must lie in (0, 1]")
        object.__setattr__(self, "eps_grid", tuple(float(x) for x in e))
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    def __call__(self, eps: float) -> float:
        if not (0.0 < eps <= 1.0):
            raise InputError(f"eps must lie in (0, 1], got {eps}")
        grid = np.asarray(self.eps_grid)
        i = int(np.searchsorted(grid, eps, side="right")) - 1
        return self.values[max(0, i)]

    @staticmethod
    def constant(value: float) -> "BFunction":
        return BFunction((1.0,), (value,))


@dataclass(frozen=True)
class MClassReport:
    """Outcome of an M-class membership test.

    ``ok`` iff the (support-restricted) measure has Var <= V·r² and its mass
    distribution dominates b at every sampled eps. ``restricted`` records
    whether zero-mass points had to be dropped to obtain full support.
    """

    ok: bool
    var_value: float
    var_bound: float
    b_failures: tuple
    restricted: bool
    support_indices: tuple


def in_class_M(
    space: FiniteMetricSpace, mu: ProbMeasure, r: float, V: float, b: BFunction
) -> MClassReport:
    """Test membership of (space, mu) in the class of (V, b)-controlled spaces
    at scale r: full support, Var(mu) <= V·r², and b_r >= b.

    Domination ``b_r >= b`` is evaluated at each sampled eps of ``b`` through
    the equivalent finite criterion
    ``mu({x : mu(D(x, eps·r)) < b(eps)}) <= eps``, which avoids computing
    b_r where it is flat. If ``mu`` lacks full support the test is performed
    on the support restriction and reported as such.
    """
    _check_measure_space(space, mu, "mu")
    if not (r > 0.0 and math.isfinite(r)):
        raise InputError(f"r must be positive and finite, got {r}")
    if not (V >= 0.0 and math.isfinite(V)):
        raise InputError(f"V must be nonnegative and finite, got {V}")
    supp = mu.support()
    restricted = supp.size < space.n
    if restricted:
        space_r = space.subspace(supp)
        mu_r = ProbMeasure(mu.weights[supp])
    else:
        space_r, mu_r = space, mu
    var_value = variance(space_r, mu_r)
    var_bound = V * r * r
    failures = []
    for eps in b.eps_grid:
        need = b(eps)
        ball_mass = (space_r.dist <= eps * r) @ mu_r.weights
        low = float(mu_r.weights[ball_mass < need].sum())
        if low > eps:
            failures.append((float(eps), float(need), low))
    ok = (var_value <= var_bound) and not failures
    return MClassReport(
        ok=ok,
        var_value=var_value,
        var_bound=var_bound,
        b_failures=tuple(failures),
        restricted=restricted,
        support_indices=tuple(int(i) for i in supp),
    )


# ---------------------------------------------------------------------------
# finite approximation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FiniteApproximation:
    """Result of :func:`finite_approximation`.

    ``measure`` lives on the original space (zeros off ``subset_indices``),
    with weights that are integer multiples of 1/N; ``bound`` is the
    LP-certified transport distance d_W1(mu, measure), guaranteed <= alpha·r.
    """

    subset_indices: tuple
    measure: ProbMeasure
    bound: float
    eps: float
    N: int
    anchor_index: int


def finite_approximation(
    space: FiniteMetricSpace,
    mu: ProbMeasure,
    r: float,
    alpha: float,
    V: float,
    b: BFunction,
) -> FiniteApproximation:
    """Replace mu by a measure on few points, with a certified error <= alpha·r.

    Requires (space, mu) to lie in the (V, b)-class at scale r (checked;
    :class:`InputError` otherwise). The construction follows the covering
    argument behind that class:

    1. rescale distances by 1/r, pick the largest eps <= 1 with
       sqrt(eps·V) + 3·eps <= alpha/2 (bisection);
    2. greedily select points with ball mass mu(D(x, eps)) >= b(eps), in
       descending ball-mass order (ties by index), keeping closed eps-balls
       pairwise disjoint — the selection is maximal, with at most 1/b(eps)
       points;
    3. add an anchor x0 minimizing Var(delta_x, mu); partition the 3·eps
       neighborhoods of the selected points, dump the uncovered remainder
       (mass <= eps) onto the anchor;
    4. round the resulting weights to multiples of 1/N by largest remainder,
       where N is the smallest power of two with
       (b(eps)^{-2} V + 2 eps)/N <= alpha/2, raised if needed so that
       N >= #X' and N >= diameter(X')/r;
    5. certify d_W1(mu, mu') by an exact transport solve on the original
       space.
    """
    report = in_class_M(space, mu, r, V, b)
    if not report.ok:
        raise InputError(
            "finite_approximation requires class membership: "
            f"Var {report.var_value:.6g} vs bound {report.var_bound:.6g}, "
            f"{len(report.b_failures)} mass-distribution failures"
        )
    if not (alpha > 0.0 and math.isfinite(alpha)):
        raise InputError(f"alpha must be positive and finite, got {alpha}")

    supp = np.asarray(report.support_indices, dtype=int)
    d = space.dist[np.ix_(supp, supp)] / r  # dimensionless working copy
    w = mu.weights[supp]
    n = supp.size

    # -- step 1: eps by bisection on sqrt(eps V) + 3 eps <= alpha/2
    target = alpha / 2.0

    def margin(e: float) -> float:
        return math.sqrt(e * V) + 3.0 * e - target

    if margin(1.0) <= 0.0:
        eps = 1.0
    else:
        lo, hi = 0.0, 1.0  # margin(lo) < 0 <= margin(hi)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if margin(mid) <= 0.0:
                lo = mid
            else:
                hi = mid
        eps = lo
    if eps <= 0.0:
        raise InputError(f"alpha={alpha} too small to admit any eps > 0")

    b_eps = b(eps)

    # -- step 2: greedy maximal disjoint closed eps-balls with mass >= b(eps)
    balls = d <= eps
    ball_mass = balls @ w
    order = sorted(range(n), key=lambda i: (-ball_mass[i], i))
    chosen: list[int] = []
    blocked = np.zeros(n, dtype=bool)  # points covered by an accepted ball
    for i in order:
        if ball_mass[i] < b_eps:
            break  # descending order: nothing later qualifies
        if not np.any(balls[i] & blocked):
            chosen.append(i)
            blocked |= balls[i]

    # -- step 3: anchor and partition of the 3-eps neighborhoods
    second_moment = (d * d) @ w  # Var(delta_x, mu) per point
    anchor = int(np.argmin(second_moment))
    wide = d <= 3.0 * eps
    masses = []
    taken = np.zeros(n, dtype=bool)
    for i in chosen:
        cell = wide[i] & ~taken
        masses.append(float(w[cell].sum()))
        taken |= wide[i]
    leftover = float(w[~taken].sum())

    # atoms: anchor carries the uncovered remainder
    atom_local = [anchor] + chosen
    atom_mass = np.array([leftover] + masses, dtype=float)
    # merge duplicates (the anchor may coincide with a selected point)
    uniq: dict[int, float] = {}
    for i, m in zip(atom_local, atom_mass):
        uniq[i] = uniq.get(i, 0.0) + m
    atom_local = list(uniq.keys())
    atom_mass = np.array(list(uniq.values()), dtype=float)

    # -- step 4: N and largest-remainder rounding to multiples of 1/N
    rounding_need = (b_eps ** (-2) * V + 2.0 * eps) / target
    N = 1
    while N < rounding_need:
        N *= 2
    sub_diam = float(d[np.ix_(atom_local, atom_local)].max(initial=0.0))
    while N < len(atom_local) or N < sub_diam:
        N *= 2
    scaled = atom_mass * N
    base = np.floor(scaled).astype(int)
    rem = scaled - base
    short = N - int(base.sum())
    if short > 0:
        top = sorted(range(len(rem)), key=lambda i: (-rem[i], i))[:short]
        for i in top:
            base[i] += 1
    weights_sub = base / N

    out = np.zeros(space.n)
    subset = supp[np.asarray(atom_local, dtype=int)]
    out[subset] = weights_sub
    mu_prime = ProbMeasure(out)

    bound = w1_distance(space, mu, mu_prime).value
    if bound > alpha * r + EXACT_TOL * max(1.0, alpha * r):
        raise InternalInvariantError(
            f"approximation bound {bound!r} exceeds guaranteed {alpha * r!r}"
        )
    return FiniteApproximation(
        subset_indices=tuple(int(i) for i in subset),
        measure=mu_prime,
        bound=bound,
        eps=float(eps),
        N=int(N),
        anchor_index=int(supp[anchor]),
    )


# ---------------------------------------------------------------------------
# products
# ---------------------------------------------------------------------------


def product_space(s1: FiniteMetricSpace, s2: FiniteMetricSpace) -> FiniteMetricSpace:
    """l²-product: points are pairs, d((x1,x2),(y1,y2))² = d1(x1,y1)² + d2(x2,y2)².

    Point order is row-major in (index1, index2); labels are rendered as
    ``"(a,b)"`` strings so products remain serializable.
    """
    d1, d2 = s1.dist, s2.dist
    block = np.sqrt(
        (d1 * d1)[:, None, :, None] + (d2 * d2)[None, :, None, :]
    ).reshape(s1.n * s2.n, s1.n * s2.n)
    labels = tuple(f"({a},{b})" for a in s1.labels for b in s2.labels)
    return FiniteMetricSpace(labels=labels, dist=block)
