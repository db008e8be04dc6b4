"""Shared fixtures: flagship flows and random-instance helpers."""

import numpy as np
import pytest

import metricflow as mf

# flagship two-point parameters: smallest admissible mixing constant with a
# 1e-6 safety factor, unit diameter
C_STAR = mf.min_C() * (1.0 + 1e-6)


def euclidean_space(points: np.ndarray) -> mf.FiniteMetricSpace:
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    dist = np.sqrt(((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2))
    labels = tuple(f"p{i}" for i in range(pts.shape[0]))
    return mf.FiniteMetricSpace(labels=labels, dist=dist)


def random_space(rng: np.random.Generator, n: int) -> mf.FiniteMetricSpace:
    """Euclidean point clouds give valid metrics with probability one."""
    return euclidean_space(rng.normal(size=(n, 3)))


def random_measure(rng: np.random.Generator, n: int, sparse: bool = False) -> mf.ProbMeasure:
    w = rng.dirichlet(np.full(n, 0.8))
    if sparse and n > 2:
        kill = rng.choice(n, size=n // 3, replace=False)
        w[kill] = 0.0
        w = w / w.sum()
    return mf.ProbMeasure(w)


def two_point_space(d: float = 1.0) -> mf.FiniteMetricSpace:
    return mf.FiniteMetricSpace(
        labels=("a", "b"), dist=np.array([[0.0, d], [d, 0.0]])
    )


@pytest.fixture(scope="session")
def two_point_flow_fx():
    grid = mf.TimeGrid.uniform(0.0, 1.0, 10)
    return mf.two_point_flow(C_STAR, 1.0, grid)


@pytest.fixture(scope="session")
def static_cycle_fx():
    return mf.static_cycle_flow(5, 8.0, 0.7, mf.TimeGrid.uniform(0.0, 1.0, 4))


@pytest.fixture(scope="session")
def product_fx(static_cycle_fx):
    tp = mf.two_point_flow(C_STAR, 1.0, mf.TimeGrid.uniform(0.0, 1.0, 4))
    return mf.cartesian_product_flow(tp, static_cycle_fx)


@pytest.fixture(scope="session")
def gaussian_fx():
    flow, sidecar = mf.gaussian_flow_discrete(
        1, 12.0, 0.1, mf.TimeGrid((0.0, 1.0, 1.5, 2.0))
    )
    return flow, sidecar
