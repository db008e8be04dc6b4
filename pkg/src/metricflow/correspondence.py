"""Common ambient spaces, gluing constructions, and the flow distance.

The comparison story, bottom to top:

* ``GluedSpace`` — one ambient metric space containing isometric copies of
  k constituent spaces (index maps record where each point went). The
  ambient may be a pseudometric: points glued at distance zero are kept
  distinct rather than quotiented.

* ``glue_two_slices`` — the flow-specific gluing of a later slice X_t onto
  an earlier slice X_s through a set W of points with kernels nu_{w;s},
  with cross-distance  min_w (d_t(y, w) + W1(delta_x, nu_{w;s})) + delta.
  Valid whenever 0 <= d_t(w1, w2) - W1(nu_{w1;s}, nu_{w2;s}) <= delta on W
  (checked), in which case all mixed triangles hold.

* ``build_union_correspondence`` — per-time disjoint-union ambients for two
  flows glued along a relation of matched points, with additive constant
  eps_t = half the relation's metric distortion (the smallest constant
  making the union a pseudometric).

* ``combine_correspondences`` — the quotient-and-complete combination of a
  (1,2)- and a (2,3)-correspondence into a three-way one: cross-distance
  between the outer ambients is the infimum over routes through the shared
  middle slice.

* ``gw1_upper_bound`` — W1 between pushforwards into a glued ambient; with
  exhaustive bijection search (n <= 6) this upper-bounds the Gromov-W1
  distance, exactly zero on isometric inputs.

* ``f_distance_within`` — the flow distance within a fixed correspondence:
  the smallest r for which there are an exceptional time set E (of measure
  <= r²) and couplings q_t of the two conjugate heat flows with

      integral of W1^{Z_s}(pushed kernels) dq_t  <=  r

  for all s <= t in the participating times outside E. For fixed E and t
  the optimal q_t solves a min-max transport LP (auxiliary variable r_t
  bounding every s-integral); E is then the empty set, an exhaustive search
  (small grids), or a greedy heuristic (flagged). All reported values are
  certified a posteriori from the couplings themselves.

* ``f_triangle_check`` — the triangle inequality for three pairs inside a
  combined correspondence, plus an explicit certificate for the outer pair
  obtained by gluing the two chains of couplings time-by-time.

Values are upper bounds for the correspondence-free distances (the infimum
over ambient choices is not searched); within a fixed correspondence the
LP values are exact at this scale.
"""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .flow_core import ConjHeatFlowField, MetricFlow, MetricFlowPair, TimeGrid
from .ot_core import (
    EXACT_TOL,
    CertificateError,
    Coupling,
    FiniteMetricSpace,
    InputError,
    InternalInvariantError,
    ProbMeasure,
    _fit_marginals,
    check_metric_axioms,
    glue_couplings,
    w1_distance,
)

__all__ = [
    "GluedSpace",
    "Correspondence",
    "FDistanceReport",
    "FTriangleReport",
    "GWBound",
    "glue_two_slices",
    "build_union_correspondence",
    "combine_correspondences",
    "gw1_upper_bound",
    "f_distance_within",
    "f_triangle_check",
]


# ---------------------------------------------------------------------------
# glued ambient spaces
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GluedSpace:
    """An ambient (pseudo)metric space with isometric copies of k spaces.

    ``embeddings[i]`` is the index map of constituent i into ``ambient``;
    each must be exactly distance-preserving for the constituent it came
    from (checked by :meth:`validate`).
    """

    ambient: FiniteMetricSpace
    embeddings: tuple

    @property
    def embed1(self) -> tuple:
        return self.embeddings[0]

    @property
    def embed2(self) -> tuple:
        return self.embeddings[1]

    def validate(self, spaces: Sequence[FiniteMetricSpace]) -> None:
        if len(spaces) != len(self.embeddings):
            raise InputError(
                f"{len(spaces)} constituent spaces for {len(self.embeddings)} embeddings"
            )
        for k, (space, emb) in enumerate(zip(spaces, self.embeddings)):
            idx = np.asarray(emb, dtype=int)
            if idx.shape != (space.n,):
                raise InputError(f"embedding {k}: {idx.size} indices for {space.n} points")
            sub = self.ambient.dist[np.ix_(idx, idx)]
            if not np.array_equal(sub, space.dist):
                worst = float(np.abs(sub - space.dist).max())
                raise InputError(f"embedding {k} is not isometric (worst offset {worst:.3e})")

    def push(self, which: int, mu: ProbMeasure) -> ProbMeasure:
        """Pushforward of a constituent measure into the ambient."""
        idx = np.asarray(self.embeddings[which], dtype=int)
        w = np.zeros(self.ambient.n)
        np.add.at(w, idx, mu.weights)
        return ProbMeasure(w)

    def push_weights(self, which: int, weights: np.ndarray) -> np.ndarray:
        idx = np.asarray(self.embeddings[which], dtype=int)
        w = np.zeros(self.ambient.n)
        np.add.at(w, idx, weights)
        return w


def _audit_ambient(dist: np.ndarray, labels: tuple, where: str) -> FiniteMetricSpace:
    """Wrap an ambient distance matrix, failing loudly if the construction
    broke the (pseudo)metric axioms — that would be a bug, not bad input."""
    space = FiniteMetricSpace(labels=labels, dist=dist)
    report = check_metric_axioms(space, require_positive=False)
    if not report.ok:
        raise InternalInvariantError(
            f"{where}: glued ambient violates metric axioms: {report.worst}"
        )
    return space


def glue_two_slices(
    space_s: FiniteMetricSpace,
    space_t: FiniteMetricSpace,
    link: dict,
    delta: float,
    *,
    hypothesis_slack: float = 1e-9,
) -> GluedSpace:
    """Glue a later slice onto an earlier one through kernels on a subset W.

    ``link`` maps indices w of ``space_t`` (the set W) to probability weight
    vectors nu_{w;s} on ``space_s``. Requires the two-sided hypothesis

        0 <= d_t(w1, w2) - d_W1(nu_{w1;s}, nu_{w2;s}) <= delta   on W

    (checked within ``hypothesis_slack``; violation raises
    :class:`InputError` with the worst witness pair). The ambient keeps both
    point sets disjoint with cross-distance

        d_Z(x, y) = min_{w in W} ( d_t(y, w) + E_{nu_w} d_s(x, ·) ) + delta,

    the W1 distance from delta_x to nu_w being exactly its expected
    distance. All triangle inequalities then hold; this is audited.
    """
    if not (delta >= 0.0 and math.isfinite(delta)):
        raise InputError(f"delta must be a finite nonnegative real, got {delta}")
    if not link:
        raise InputError("link: need at least one kernel point w in W")
    w_idx = sorted(int(w) for w in link)
    if w_idx[0] < 0 or w_idx[-1] >= space_t.n:
        raise InputError(f"link points out of range for a {space_t.n}-point slice")
    kernels = np.zeros((len(w_idx), space_s.n))
    for row, w in enumerate(w_idx):
        vec = np.asarray(link[w], dtype=float)
        if vec.shape != (space_s.n,):
            raise InputError(f"kernel at w={w}: expected {space_s.n} weights")
        kernels[row] = ProbMeasure(vec).weights

    # hypothesis: kernel W1 distances track d_t on W up to delta
    worst_lo, worst_hi, witness = 0.0, 0.0, None
    for a in range(len(w_idx)):
        for b in range(a + 1, len(w_idx)):
            gap = space_t.dist[w_idx[a], w_idx[b]] - w1_distance(
                space_s, ProbMeasure(kernels[a]), ProbMeasure(kernels[b])
            ).value
            if gap < -hypothesis_slack or gap > delta + hypothesis_slack:
                off = max(-gap, gap - delta)
                if witness is None or off > max(worst_lo, worst_hi):
                    witness = (w_idx[a], w_idx[b], float(gap))
                worst_lo = max(worst_lo, -gap)
                worst_hi = max(worst_hi, gap - delta)
    if witness is not None:
        raise InputError(
            "gluing hypothesis fails: d_t - W1(kernels) must lie in "
            f"[0, delta={delta}], worst witness pair {witness[:2]} with gap {witness[2]:.6g}"
        )

    expected = kernels @ space_s.dist.T  # E_{nu_w} d_s(x, ·), shape (|W|, n_s)
    cross = (expected[:, :, None] + space_t.dist[w_idx][:, None, :]).min(axis=0) + delta
    n_s, n_t = space_s.n, space_t.n
    dist = np.zeros((n_s + n_t, n_s + n_t))
    dist[:n_s, :n_s] = space_s.dist
    dist[n_s:, n_s:] = space_t.dist
    dist[:n_s, n_s:] = cross
    dist[n_s:, :n_s] = cross.T
    labels = tuple(f"s:{l}" for l in space_s.labels) + tuple(f"t:{l}" for l in space_t.labels)
    ambient = _audit_ambient(dist, labels, "glue_two_slices")
    glued = GluedSpace(
        ambient=ambient,
        embeddings=(tuple(range(n_s)), tuple(range(n_s, n_s + n_t))),
    )
    glued.validate((space_s, space_t))
    return glued


# ---------------------------------------------------------------------------
# union gluing along a relation; correspondences
# ---------------------------------------------------------------------------


def _union_glue(
    space1: FiniteMetricSpace,
    space2: FiniteMetricSpace,
    pairs: Sequence,
    where: str = "union gluing",
) -> tuple:
    """Disjoint-union ambient glued along matched point pairs.

    Additive constant eps = half the relation's distortion; cross-distance
    min over matched (w1, w2) of d1(x1, w1) + eps + d2(w2, x2). Returns
    ``(GluedSpace, eps)``.
    """
    pairs = [(int(a), int(b)) for a, b in pairs]
    if not pairs:
        raise InputError(f"{where}: empty relation")
    for a, b in pairs:
        if not (0 <= a < space1.n and 0 <= b < space2.n):
            raise InputError(f"{where}: matched pair ({a},{b}) out of range")
    w1_ = np.array([a for a, _ in pairs])
    w2_ = np.array([b for _, b in pairs])
    d1w = space1.dist[np.ix_(w1_, w1_)]
    d2w = space2.dist[np.ix_(w2_, w2_)]
    eps = 0.5 * float(np.abs(d1w - d2w).max())
    cross = (space1.dist[:, w1_][:, :, None] + space2.dist[w2_][None, :, :]).min(axis=1) + eps
    n1, n2 = space1.n, space2.n
    dist = np.zeros((n1 + n2, n1 + n2))
    dist[:n1, :n1] = space1.dist
    dist[n1:, n1:] = space2.dist
    dist[:n1, n1:] = cross
    dist[n1:, :n1] = cross.T
    labels = tuple(f"1:{l}" for l in space1.labels) + tuple(f"2:{l}" for l in space2.labels)
    ambient = _audit_ambient(dist, labels, where)
    glued = GluedSpace(
        ambient=ambient, embeddings=(tuple(range(n1)), tuple(range(n1, n1 + n2)))
    )
    glued.validate((space1, space2))
    return glued, eps


@dataclass(frozen=True, eq=False)
class Correspondence:
    """Per-time ambient spaces with one isometric embedding per flow.

    ``time_indices`` are the participating grid indices I''; ``ambients``
    holds one :class:`GluedSpace` (k embeddings for k flows) per entry.
    """

    grid: TimeGrid
    time_indices: tuple
    ambients: tuple
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.time_indices) != len(self.ambients):
            raise InputError("one ambient per participating time required")
        if list(self.time_indices) != sorted(set(int(i) for i in self.time_indices)):
            raise InputError("time_indices must be strictly increasing")
        for i in self.time_indices:
            if not (0 <= i < self.grid.n):
                raise InputError(f"time index {i} outside the grid")

    @property
    def n_flows(self) -> int:
        return len(self.ambients[0].embeddings)

    def ambient_at(self, t_idx: int) -> GluedSpace:
        return self.ambients[self.time_indices.index(int(t_idx))]

    def pair_view(self, i: int, j: int) -> "Correspondence":
        """The two-flow sub-correspondence using embeddings i and j of each
        ambient (the ambient spaces themselves are shared, not rebuilt)."""
        views = tuple(
            GluedSpace(ambient=g.ambient, embeddings=(g.embeddings[i], g.embeddings[j]))
            for g in self.ambients
        )
        return Correspondence(self.grid, self.time_indices, views)


def build_union_correspondence(
    flow1: MetricFlow,
    flow2: MetricFlow,
    relation,
    *,
    time_indices: Sequence[int] | None = None,
) -> Correspondence:
    """Per-time union gluing of two flows over a relation of matched points.

    ``relation`` is a list of index pairs (x1, x2) applied at every
    participating time, or a dict mapping grid indices to per-time pair
    lists. Each per-time ambient is the disjoint union with additive
    constant eps_t = half the relation's distortion at that time. Flows
    must live on the same time grid.
    """
    if flow1.grid.n != flow2.grid.n or any(
        abs(a - b) > EXACT_TOL * max(1.0, abs(a)) for a, b in zip(flow1.grid.times, flow2.grid.times)
    ):
        raise InputError("flows live on different time grids")
    if time_indices is None:
        time_indices = tuple(range(flow1.grid.n))
    else:
        time_indices = tuple(sorted(int(i) for i in set(time_indices)))
    ambients = []
    eps_by_time = {}
    for t_idx in time_indices:
        pairs = relation.get(t_idx) if isinstance(relation, dict) else relation
        if not pairs:
            raise InputError(f"empty relation at participating time index {t_idx}")
        glued, eps = _union_glue(
            flow1.slices[t_idx], flow2.slices[t_idx], pairs, where=f"union gluing at t_idx={t_idx}"
        )
        ambients.append(glued)
        eps_by_time[t_idx] = eps
    return Correspondence(
        flow1.grid, time_indices, tuple(ambients), extras={"eps_by_time": eps_by_time}
    )


def combine_correspondences(c12: Correspondence, c23: Correspondence) -> Correspondence:
    """Combine a (1,2)- and a (2,3)-correspondence into a three-way one.

    Per common time, the new ambient is the disjoint union of the two old
    ambients with cross-distance the infimum over routes through the shared
    middle slice:  d(z12, z23) = min_x ( d12(z12, phi2(x)) + d23(phi2(x), z23) ).
    The two copies of each middle point end up at distance zero (the
    pseudometric keeps them distinct); the canonical middle embedding is the
    one through the first ambient. All five embedding families remain
    isometric, which is audited.
    """
    common = sorted(set(c12.time_indices) & set(c23.time_indices))
    if not common:
        raise InputError("correspondences share no participating times")
    if c12.n_flows != 2 or c23.n_flows != 2:
        raise InputError("combine_correspondences expects two-flow correspondences")
    ambients = []
    for t_idx in common:
        g12, g23 = c12.ambient_at(t_idx), c23.ambient_at(t_idx)
        mid_a = np.asarray(g12.embeddings[1], dtype=int)
        mid_b = np.asarray(g23.embeddings[0], dtype=int)
        if mid_a.size != mid_b.size:
            raise InputError(
                f"middle slice sizes disagree at t_idx={t_idx}: {mid_a.size} vs {mid_b.size}"
            )
        da, db = g12.ambient.dist, g23.ambient.dist
        mid_dist_a = da[np.ix_(mid_a, mid_a)]
        mid_dist_b = db[np.ix_(mid_b, mid_b)]
        if not np.allclose(mid_dist_a, mid_dist_b, rtol=0.0, atol=EXACT_TOL):
            raise InputError(f"middle embeddings carry different metrics at t_idx={t_idx}")
        cross = (da[:, mid_a][:, :, None] + db[mid_b][None, :, :]).min(axis=1)
        na, nb = g12.ambient.n, g23.ambient.n
        dist = np.zeros((na + nb, na + nb))
        dist[:na, :na] = da
        dist[na:, na:] = db
        dist[:na, na:] = cross
        dist[na:, :na] = cross.T
        labels = tuple(f"L:{l}" for l in g12.ambient.labels) + tuple(
            f"R:{l}" for l in g23.ambient.labels
        )
        ambient = _audit_ambient(dist, labels, f"combine_correspondences at t_idx={t_idx}")
        glued = GluedSpace(
            ambient=ambient,
            embeddings=(
                tuple(int(i) for i in g12.embeddings[0]),
                tuple(int(i) for i in mid_a),
                tuple(int(na + i) for i in g23.embeddings[1]),
            ),
        )
        # the two middle copies must sit at ambient distance zero
        two_copies = dist[mid_a, na + mid_b]
        if float(np.abs(two_copies).max()) > EXACT_TOL:
            raise InternalInvariantError(
                "combined ambient separates the two middle copies "
                f"(worst {float(np.abs(two_copies).max()):.3e})"
            )
        ambients.append(glued)
    return Correspondence(c12.grid, tuple(common), tuple(ambients))


# ---------------------------------------------------------------------------
# Gromov-W1 upper bounds
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class GWBound:
    """An upper bound for the Gromov-W1 distance, with the gluing that
    realized it."""

    value: float
    relation: tuple
    glued: GluedSpace
    exhaustive: bool


def gw1_upper_bound(
    space1: FiniteMetricSpace,
    mu1: ProbMeasure,
    space2: FiniteMetricSpace,
    mu2: ProbMeasure,
    *,
    relation: Sequence | None = None,
) -> GWBound:
    """Upper bound on the Gromov-W1 distance between two metric measure
    spaces: W1 between the pushforwards into a union gluing.

    With an explicit ``relation`` the single corresponding gluing is used.
    Without one, all bijective relations are searched exhaustively (requires
    equal sizes <= 6); the result is exactly zero for isometric inputs with
    matched measures. Either way the value only certifies "Gromov-W1 <=
    value" — no tightness is claimed.
    """
    if mu1.n != space1.n or mu2.n != space2.n:
        raise InputError("measures and spaces have mismatched sizes")
    if relation is not None:
        glued, _ = _union_glue(space1, space2, relation, where="gw1_upper_bound")
        value = w1_distance(glued.ambient, glued.push(0, mu1), glued.push(1, mu2)).value
        return GWBound(
            value=value,
            relation=tuple((int(a), int(b)) for a, b in relation),
            glued=glued,
            exhaustive=False,
        )
    n = space1.n
    if space2.n != n:
        raise InputError("exhaustive mode needs equal point counts (pass a relation otherwise)")
    if n > 6:
        raise InputError(f"exhaustive mode is limited to 6 points, got {n}")
    best = None
    d1, d2 = space1.dist, space2.dist
    for perm in itertools.permutations(range(n)):
        p = np.array(perm)
        eps = 0.5 * float(np.abs(d1 - d2[np.ix_(p, p)]).max())
        if best is not None and eps >= best[0]:
            continue  # every coupling moves all mass across, at cost >= eps
        pairs = tuple((i, int(p[i])) for i in range(n))
        glued, _ = _union_glue(space1, space2, pairs, where="gw1_upper_bound")
        value = w1_distance(glued.ambient, glued.push(0, mu1), glued.push(1, mu2)).value
        if best is None or value < best[0]:
            best = (value, pairs, glued)
    return GWBound(value=best[0], relation=best[1], glued=best[2], exhaustive=True)


# ---------------------------------------------------------------------------
# the flow distance within a correspondence
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FDistanceReport:
    """Certified outcome of a flow-distance computation.

    ``value`` = max(sqrt(measure E), max_t r_t); ``r_by_time`` maps each
    participating non-exceptional grid index t to its certified coupling
    value r_t; ``per_pair_integrals`` maps (s_idx, t_idx) to the integral
    of the s-cost against q_t. Invariants certified before return:
    measure(E) <= value², every integral <= value + 1e-9, J disjoint from E,
    and the s = t specialization W1(pushed top measures) <= value + 1e-9.
    """

    value: float
    E_indices: tuple
    E_measure: float
    r_by_time: dict
    per_pair_integrals: dict
    couplings: dict
    mode: str
    flags: tuple
    J_indices: tuple
    swapped: bool

    def to_json_dict(self, *, include_couplings: bool = False) -> dict:
        out = {
            "value": self.value,
            "E": {
                "indices": [int(i) for i in self.E_indices],
                "measure": self.E_measure,
            },
            "r_by_time": {str(int(t)): float(r) for t, r in self.r_by_time.items()},
            "per_pair_integrals": {
                f"{int(s)}:{int(t)}": float(v) for (s, t), v in self.per_pair_integrals.items()
            },
            "mode": self.mode,
            "flags": list(self.flags),
            "J_indices": [int(i) for i in self.J_indices],
        }
        if include_couplings:
            out["couplings"] = {
                str(int(t)): q.matrix.tolist() for t, q in self.couplings.items()
            }
        return out


def _fingerprint(pair: MetricFlowPair, embeddings: Sequence, idxs: Sequence[int]) -> bytes:
    h = hashlib.sha256()
    for t_idx in idxs:
        h.update(np.ascontiguousarray(pair.flow.slices[t_idx].dist).tobytes())
        h.update(np.ascontiguousarray(pair.mu.measure_at(t_idx).weights).tobytes())
        h.update(np.asarray(embeddings[t_idx], dtype=np.int64).tobytes())
    for s_pos, s_idx in enumerate(idxs):
        for t_idx in idxs[s_pos + 1 :]:
            h.update(np.ascontiguousarray(pair.flow.kernel(s_idx, t_idx)).tobytes())
    return h.digest()


class _FDistanceProblem:
    """Shared state for one f-distance computation: cached cost matrices and
    per-(t, active-s-set) LP solves over a fixed correspondence."""

    def __init__(self, c: Correspondence, pair1: MetricFlowPair, pair2: MetricFlowPair):
        self.c = c
        self.pairs = (pair1, pair2)
        self.idxs = tuple(int(i) for i in c.time_indices)
        self.grid = c.grid
        self._costs: dict = {}
        self._mu = []
        for which, pair in enumerate(self.pairs):
            per_t = {}
            for t_idx in self.idxs:
                try:
                    per_t[t_idx] = pair.mu.measure_at(t_idx)
                except ValueError:
                    raise InputError(
                        f"flow pair {which + 1} has no basepoint measure at grid index {t_idx}"
                    ) from None
                if pair.flow.slices[t_idx].n != per_t[t_idx].n:
                    raise InputError(f"basepoint measure size mismatch at grid index {t_idx}")
            self._mu.append(per_t)
        for pos, t_idx in enumerate(self.idxs):
            glued = c.ambients[pos]
            glued.validate((pair1.flow.slices[t_idx], pair2.flow.slices[t_idx]))

    def mu(self, which: int, t_idx: int) -> ProbMeasure:
        return self._mu[which][t_idx]

    def cost(self, s_idx: int, t_idx: int) -> np.ndarray:
        """Cost matrix c_{s,t}(x1, x2) = W1 on Z_s between the pushed
        kernels nu^1_{x1;s} and nu^2_{x2;s}; ambient distance when s = t."""
        key = (s_idx, t_idx)
        if key in self._costs:
            return self._costs[key]
        glued = self.c.ambient_at(s_idx)
        f1, f2 = self.pairs[0].flow, self.pairs[1].flow
        n1, n2 = f1.slices[t_idx].n, f2.slices[t_idx].n
        if s_idx == t_idx:
            e1 = np.asarray(glued.embeddings[0], dtype=int)
            e2 = np.asarray(glued.embeddings[1], dtype=int)
            out = glued.ambient.dist[np.ix_(e1, e2)]
        else:
            k1 = f1.kernel(s_idx, t_idx)
            k2 = f2.kernel(s_idx, t_idx)
            pushed1 = [glued.push_weights(0, k1[x]) for x in range(n1)]
            pushed2 = [glued.push_weights(1, k2[x]) for x in range(n2)]
            out = np.zeros((n1, n2))
            for i in range(n1):
                for j in range(n2):
                    out[i, j] = w1_distance(
                        glued.ambient, ProbMeasure(pushed1[i]), ProbMeasure(pushed2[j])
                    ).value
        out = np.ascontiguousarray(out)
        out.setflags(write=False)
        self._costs[key] = out
        return out

    def solve_time(self, t_idx: int, s_list: Sequence[int]) -> tuple:
        """Min-max LP at one time: the coupling of the two basepoint
        measures minimizing the largest s-integral. Returns
        ``(r_t, coupling, integrals dict)`` with r_t re-certified from the
        marginal-repaired coupling."""
        mu1, mu2 = self.mu(0, t_idx), self.mu(1, t_idx)
        n1, n2 = mu1.n, mu2.n
        nq = n1 * n2
        costs = {s: self.cost(s, t_idx) for s in s_list}
        a_eq = np.zeros((n1 + n2, nq + 1))
        for i in range(n1):
            a_eq[i, i * n2 : (i + 1) * n2] = 1.0
        for j in range(n2):
            a_eq[n1 + j, j:nq:n2] = 1.0
        b_eq = np.concatenate([mu1.weights, mu2.weights])
        a_ub = np.zeros((len(s_list), nq + 1))
        for row, s in enumerate(s_list):
            a_ub[row, :nq] = costs[s].ravel()
            a_ub[row, nq] = -1.0
        cvec = np.zeros(nq + 1)
        cvec[nq] = 1.0
        res = linprog(
            cvec,
            A_ub=a_ub,
            b_ub=np.zeros(len(s_list)),
            A_eq=a_eq,
            b_eq=b_eq,
            bounds=[(0.0, None)] * nq + [(0.0, None)],
            method="highs",
            options={
                "primal_feasibility_tolerance": 1e-10,
                "dual_feasibility_tolerance": 1e-10,
            },
        )
        if not res.success:  # pragma: no cover - defensive
            raise InternalInvariantError(f"min-max transport LP failed at t_idx={t_idx}: {res.message}")
        plan = _fit_marginals(res.x[:nq].reshape(n1, n2), mu1.weights, mu2.weights)
        coupling = Coupling(matrix=plan)
        integrals = {s: float(np.sum(costs[s] * plan)) for s in s_list}
        r_t = max(integrals.values()) if integrals else 0.0
        return r_t, coupling, integrals


def _resolve_J(grid: TimeGrid, idxs: tuple, J) -> tuple:
    out = []
    for t in J:
        t_idx = int(t) if isinstance(t, (int, np.integer)) else grid.index_of(float(t))
        if t_idx not in idxs:
            raise InputError(f"J contains grid index {t_idx}, outside the participating times")
        out.append(t_idx)
    return tuple(sorted(set(out)))


def f_distance_within(
    c: Correspondence,
    pair1: MetricFlowPair,
    pair2: MetricFlowPair,
    *,
    J: Sequence = (),
    e_mode: str = "empty",
    max_exhaustive: int = 12,
) -> FDistanceReport:
    """Flow distance between two metric flow pairs within a correspondence.

    The value is the smallest certified r with an exceptional set E of
    participating times (measure(E) <= r², E disjoint from the protected
    times J) and couplings q_t of the basepoint measures for every
    participating t outside E such that the integral of

        W1^{Z_s}( pushforward of nu^1_{x1;s}, pushforward of nu^2_{x2;s} )

    against q_t is <= r for every participating s <= t outside E. For each
    candidate E the couplings solve exact min-max LPs; the search over E is
    controlled by ``e_mode``:

    * ``"empty"``      — E = {} (always a valid upper bound);
    * ``"exhaustive"`` — all E of measure <= measure(I'')/2 (participating
      times capped at ``max_exhaustive``), pruned by sqrt(measure);
    * ``"greedy"``     — drop the worst time while it helps; flagged
      ``greedy`` since it may miss the optimum.

    Both orientations produce bit-identical values: the computation runs in
    a fingerprint-canonical order and swaps back afterwards.
    """
    if c.n_flows != 2:
        raise InputError("f_distance_within expects a two-flow correspondence (use pair_view)")
    for pair in (pair1, pair2):
        if pair.flow.grid.n != c.grid.n or any(
            abs(a - b) > EXACT_TOL * max(1.0, abs(a))
            for a, b in zip(pair.flow.grid.times, c.grid.times)
        ):
            raise InputError("flow pair lives on a different time grid than the correspondence")
    idxs = tuple(int(i) for i in c.time_indices)
    J_idx = _resolve_J(c.grid, idxs, J)

    emb1 = {t: c.ambient_at(t).embeddings[0] for t in idxs}
    emb2 = {t: c.ambient_at(t).embeddings[1] for t in idxs}
    fp1 = _fingerprint(pair1, emb1, idxs)
    fp2 = _fingerprint(pair2, emb2, idxs)
    swapped = fp2 < fp1
    if swapped:
        problem = _FDistanceProblem(c.pair_view(1, 0), pair2, pair1)
    else:
        problem = _FDistanceProblem(c, pair1, pair2)

    weights = c.grid.weights()
    measure_total = float(weights[list(idxs)].sum())

    def evaluate(E: frozenset) -> tuple:
        active = [t for t in idxs if t not in E]
        e_measure = float(weights[sorted(E)].sum()) if E else 0.0
        r_by_time, couplings, integrals = {}, {}, {}
        worst = 0.0
        for t in active:
            s_list = [s for s in active if s <= t]
            r_t, q, ints = problem.solve_time(t, s_list)
            r_by_time[t] = r_t
            couplings[t] = q
            for s, v in ints.items():
                integrals[(s, t)] = v
            worst = max(worst, r_t)
        return max(math.sqrt(e_measure), worst), e_measure, r_by_time, couplings, integrals

    flags: list = []
    if e_mode == "empty":
        best_E = frozenset()
        best = evaluate(best_E)
    elif e_mode == "exhaustive":
        free = [t for t in idxs if t not in J_idx]
        if len(idxs) > max_exhaustive:
            raise InputError(
                f"exhaustive E-search limited to {max_exhaustive} participating times, got {len(idxs)}"
            )
        candidates = []
        for size in range(len(free) + 1):
            for combo in itertools.combinations(free, size):
                m = float(weights[list(combo)].sum()) if combo else 0.0
                if m <= 0.5 * measure_total + EXACT_TOL:
                    candidates.append((m, combo))
        candidates.sort(key=lambda c_: (c_[0], c_[1]))
        best, best_E = None, None
        for m, combo in candidates:
            if best is not None and math.sqrt(m) >= best[0]:
                continue
            cand = evaluate(frozenset(combo))
            if best is None or cand[0] < best[0]:
                best, best_E = cand, frozenset(combo)
    elif e_mode == "greedy":
        flags.append("greedy")
        best_E = frozenset()
        best = evaluate(best_E)
        while True:
            droppable = [t for t in idxs if t not in best_E and t not in J_idx]
            if not droppable:
                break
            r_map = best[2]
            worst_t = max(droppable, key=lambda t: r_map.get(t, 0.0))
            if best[1] > 0.0 and r_map.get(worst_t, 0.0) <= math.sqrt(best[1]):
                break  # the sqrt(measure E) term already dominates the value
            E_next = best_E | {worst_t}
            m_next = float(weights[sorted(E_next)].sum())
            if m_next > 0.5 * measure_total + EXACT_TOL:
                break
            cand = evaluate(E_next)
            if cand[0] < best[0] - 1e-15:
                best, best_E = cand, E_next
            else:
                break
    else:
        raise InputError(f"unknown e_mode {e_mode!r} (use empty, exhaustive, or greedy)")

    value, e_measure, r_by_time, couplings, integrals = best
    if swapped:
        couplings = {t: Coupling(matrix=np.ascontiguousarray(q.matrix.T)) for t, q in couplings.items()}

    # certify the report invariants
    if set(best_E) & set(J_idx):
        raise InternalInvariantError("exceptional set intersects the protected times J")
    if e_measure > value * value + 1e-12:
        raise CertificateError(
            f"exceptional measure {e_measure:.6g} exceeds value² = {value * value:.6g}"
        )
    for (s, t), v in integrals.items():
        if v > value + 1e-9:
            raise CertificateError(
                f"integral at (s,t)=({s},{t}) is {v:.12g} > value {value:.12g} + 1e-9"
            )
    for t in r_by_time:
        glued = c.ambient_at(t)
        top = w1_distance(
            glued.ambient, glued.push(0, pair1.mu.measure_at(t)), glued.push(1, pair2.mu.measure_at(t))
        ).value
        if top > value + 1e-9:
            raise CertificateError(
                f"pushed top-measure W1 at t_idx={t} is {top:.12g} > value {value:.12g} + 1e-9"
            )

    return FDistanceReport(
        value=float(value),
        E_indices=tuple(sorted(best_E)),
        E_measure=float(e_measure),
        r_by_time={int(t): float(r) for t, r in r_by_time.items()},
        per_pair_integrals={(int(s), int(t)): float(v) for (s, t), v in integrals.items()},
        couplings={int(t): q for t, q in couplings.items()},
        mode=e_mode,
        flags=tuple(flags),
        J_indices=J_idx,
        swapped=swapped,
    )


@dataclass(frozen=True, eq=False)
class FTriangleReport:
    """Triangle inequality audit for three flow pairs in one combined
    correspondence, with the explicit glued-coupling certificate for the
    outer pair."""

    d12: FDistanceReport
    d23: FDistanceReport
    d13: FDistanceReport
    holds: bool
    certificate_value: float
    certificate_ok: bool
    E_union: tuple


def f_triangle_check(
    c123: Correspondence,
    pair1: MetricFlowPair,
    pair2: MetricFlowPair,
    pair3: MetricFlowPair,
    *,
    J: Sequence = (),
    e_mode: str = "empty",
    slack: float = 1e-8,
) -> FTriangleReport:
    """Audit d(1,3) <= d(1,2) + d(2,3) within a three-way correspondence.

    Beyond comparing the three computed values, the (1,2)- and (2,3)-
    couplings are glued through the middle flow time-by-time (outside the
    union of the two exceptional sets) and the resulting (1,3) couplings
    are certified directly: every cost integral must stay below
    d(1,2) + d(2,3) up to float slack. This realizes the inequality's proof
    as a checkable object rather than trusting the three optimizations.
    """
    if c123.n_flows != 3:
        raise InputError("f_triangle_check expects a three-flow correspondence")
    d12 = f_distance_within(c123.pair_view(0, 1), pair1, pair2, J=J, e_mode=e_mode)
    d23 = f_distance_within(c123.pair_view(1, 2), pair2, pair3, J=J, e_mode=e_mode)
    d13 = f_distance_within(c123.pair_view(0, 2), pair1, pair3, J=J, e_mode=e_mode)
    holds = d13.value <= d12.value + d23.value + slack

    bound = d12.value + d23.value
    idxs = tuple(int(i) for i in c123.time_indices)
    e_union = sorted(set(d12.E_indices) | set(d23.E_indices))
    weights = c123.grid.weights()
    e_measure = float(weights[e_union].sum()) if e_union else 0.0
    problem13 = _FDistanceProblem(c123.pair_view(0, 2), pair1, pair3)
    active = [t for t in idxs if t not in e_union]
    cert_worst = math.sqrt(e_measure)
    cert_ok = True
    for t in active:
        q12 = d12.couplings[t]
        q23 = d23.couplings[t]
        q123 = glue_couplings(q12, q23)
        q13 = q123.sum(axis=1)
        for s in active:
            if s > t:
                continue
            integral = float(np.sum(problem13.cost(s, t) * q13))
            cert_worst = max(cert_worst, integral)
            if integral > bound + 1e-9:
                cert_ok = False
    if cert_worst > bound + 1e-9:
        cert_ok = False
    return FTriangleReport(
        d12=d12,
        d23=d23,
        d13=d13,
        holds=bool(holds),
        certificate_value=float(cert_worst),
        certificate_ok=bool(cert_ok),
        E_union=tuple(e_union),
    )
