"""Exact squared Wasserstein-2 distance between equal-size point clouds.

Two uniform empirical measures with the same number of atoms are coupled
optimally by a permutation, so W2^2 reduces to a linear assignment problem
on the squared-distance matrix. ``squared_w2`` solves it exactly; the sort
based 1-D formula and exhaustive enumeration serve as independent checks.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial.distance import cdist

from .errors import DimensionError, NumericalError

BRUTE_FORCE_MAX = 8


@dataclass(frozen=True)
class Coupling:
    """Optimal matching: row ``i`` of the source goes to row ``perm[i]`` of the target."""

    perm: np.ndarray
    cost: float


def as_measure(points) -> np.ndarray:
    """Validate an ``N x d`` point cloud (1-D input is read as ``N x 1``)."""
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P[:, None]
    if P.ndim != 2 or P.shape[0] < 1:
        raise DimensionError(f"empirical measure must be N x d with N >= 1, got shape {P.shape}")
    if not np.all(np.isfinite(P)):
        raise NumericalError("empirical measure has non-finite entries")
    return P


def _pair(A, B) -> tuple[np.ndarray, np.ndarray]:
    A, B = as_measure(A), as_measure(B)
    if A.shape != B.shape:
        raise DimensionError(f"measures must have equal size and dimension: {A.shape} vs {B.shape}")
    return A, B


def cost_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    C = cdist(A, B, "sqeuclidean")
    if not np.all(np.isfinite(C)):
        raise NumericalError("cost matrix has non-finite entries")
    return C


def solve_assignment(C: np.ndarray) -> np.ndarray:
    """Shortest-augmenting-path (Jonker-Volgenant style) assignment.

    Returns ``perm`` minimising ``sum C[i, perm[i]]``. Rows are inserted in
    index order and ties among columns go to the lowest index, preferring a
    free column, so the result is deterministic. Pure numpy; intended for
    small problems and cross-checking.
    """
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    if C.shape != (n, n):
        raise DimensionError(f"cost matrix must be square, got {C.shape}")
    u = np.zeros(n)
    v = np.zeros(n)
    row4col = np.full(n, -1)
    col4row = np.full(n, -1)
    for cur in range(n):
        shortest = np.full(n, np.inf)
        path = np.full(n, -1)
        seen_rows = np.zeros(n, dtype=bool)
        seen_cols = np.zeros(n, dtype=bool)
        i, min_val, sink = cur, 0.0, -1
        while sink < 0:
            seen_rows[i] = True
            reduced = min_val + C[i] - u[i] - v
            better = ~seen_cols & (reduced < shortest)
            path[better] = i
            shortest[better] = reduced[better]
            cand = np.where(seen_cols, np.inf, shortest)
            min_val = cand.min()
            if not np.isfinite(min_val):
                raise NumericalError("assignment infeasible")
            ties = np.flatnonzero(cand == min_val)
            free = ties[row4col[ties] < 0]
            j = free[0] if free.size else ties[0]
            seen_cols[j] = True
            if row4col[j] < 0:
                sink = j
            else:
                i = row4col[j]
        u[cur] += min_val
        others = seen_rows.copy()
        others[cur] = False
        u[others] += min_val - shortest[col4row[others]]
        v[seen_cols] -= min_val - shortest[seen_cols]
        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur:
                break
    return col4row


def squared_w2(A, B, backend: str = "scipy") -> Coupling:
    """W2^2 between two equal-size uniform empirical measures.

    ``backend="scipy"`` uses :func:`scipy.optimize.linear_sum_assignment`
    (a shortest augmenting path solver); ``"jv"`` uses
    :func:`solve_assignment`.
    """
    A, B = _pair(A, B)
    C = cost_matrix(A, B)
    if backend == "scipy":
        _, perm = linear_sum_assignment(C)
    elif backend == "jv":
        perm = solve_assignment(C)
    else:
        raise ValueError(f"unknown backend {backend!r}")
    diff = A - B[perm]
    cost = float(np.einsum("ij,ij->", diff, diff) / A.shape[0])
    return Coupling(perm=np.asarray(perm), cost=cost)


def squared_w2_grad(A, B, coupling: Coupling | None = None) -> np.ndarray:
    """Gradient of W2^2 with respect to the rows of ``A``, matching held fixed."""
    A, B = _pair(A, B)
    if coupling is None:
        coupling = squared_w2(A, B)
    return (2.0 / A.shape[0]) * (A - B[coupling.perm])


def squared_w2_1d(a, b) -> float:
    """1-D W2^2: mean squared gap between order statistics."""
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.shape != b.shape:
        raise DimensionError(f"samples must have equal length: {a.size} vs {b.size}")
    return float(np.mean((a - b) ** 2))


def brute_force_w2(A, B) -> float:
    """Minimum over all N! matchings. Only for N <= 8."""
    A, B = _pair(A, B)
    n = A.shape[0]
    if n > BRUTE_FORCE_MAX:
        raise ValueError(f"brute force limited to N <= {BRUTE_FORCE_MAX}, got {n}")
    C = cost_matrix(A, B)
    perms = np.array(list(itertools.permutations(range(n))))
    totals = C[np.arange(n), perms].sum(axis=1)
    return float(totals.min() / n)


def ensemble_w2(A, B) -> float:
    """W2^2 choosing the exact sort formula in 1-D and assignment otherwise."""
    A, B = _pair(A, B)
    if A.shape[1] == 1:
        return squared_w2_1d(A[:, 0], B[:, 0])
    return squared_w2(A, B).cost
