"""Vertex enumeration for low-dimensional box-intersected subspaces."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

MAX_SUBSPACE_DIM = 12  # candidate count grows as C(d, r) * 2^r


@dataclass(frozen=True)
class PolytopeVertexSet:
    """Vertices of {w = basis @ theta : ||w||_inf <= bound}."""

    dimension: int
    vertices: np.ndarray  # (count, dimension)
    basis: np.ndarray
    bound: float

    def __len__(self) -> int:
        return self.vertices.shape[0]


def enumerate_box_subspace_vertices(basis, bound: float) -> PolytopeVertexSet:
    """Enumerate all vertices of a subspace sliced by an inf-norm box.

    basis is d x r with full column rank r <= 12. Works in theta-coordinates:
    every vertex activates r independent facets |(basis theta)_i| = bound, so
    all r-subsets of rows are solved against all sign patterns, filtered for
    feasibility, and deduplicated.
    """
    basis = np.atleast_2d(np.asarray(basis, dtype=float))
    d, r = basis.shape
    if r > d:
        raise ValueError(f"basis must be tall or square, got {d}x{r}")
    if r > MAX_SUBSPACE_DIM:
        raise ValueError(f"subspace dimension {r} exceeds guard {MAX_SUBSPACE_DIM}")
    sing = np.linalg.svd(basis, compute_uv=False)
    if sing[-1] <= sing[0] * max(d, r) * np.finfo(float).eps:
        raise ValueError("basis is rank deficient: polytope has empty interior")

    feas_tol = 1e-9
    found: list[np.ndarray] = []
    for rows in combinations(range(d), r):
        sub = basis[list(rows), :]
        if abs(np.linalg.det(sub)) < 1e-12 * max(1.0, np.abs(sub).max() ** r):
            continue
        for signs in product((-1.0, 1.0), repeat=r):
            theta = np.linalg.solve(sub, bound * np.asarray(signs))
            w = basis @ theta
            if np.abs(w).max() <= bound + feas_tol:
                found.append(w)
    # dedupe: vertices closer than 1e-7 are the same point
    vertices: list[np.ndarray] = []
    for w in found:
        if all(np.abs(w - v).max() > 1e-7 for v in vertices):
            vertices.append(w)
    return PolytopeVertexSet(
        dimension=d,
        vertices=np.array(vertices) if vertices else np.zeros((0, d)),
        basis=basis,
        bound=float(bound),
    )
