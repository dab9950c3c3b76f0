"""Neighbourhoods, minibatch selection and the local W2 losses."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError
from .ot import squared_w2
from .rng import ordered_map

GRID_THRESHOLD = 2000


@dataclass
class Dataset:
    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self):
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=np.float64))
        self.ys = np.asarray(self.ys, dtype=np.float64)
        if self.ys.ndim == 1:
            self.ys = self.ys[:, None]
        if self.xs.shape[0] != self.ys.shape[0]:
            raise DimensionError(f"xs has {self.xs.shape[0]} rows, ys has {self.ys.shape[0]}")
        if not (np.all(np.isfinite(self.xs)) and np.all(np.isfinite(self.ys))):
            raise ValueError("dataset has non-finite entries")

    def __len__(self) -> int:
        return self.xs.shape[0]


@dataclass
class NeighborhoodIndex:
    delta: float
    neighbors: list[np.ndarray]

    @property
    def counts(self) -> np.ndarray:
        return np.array([len(b) for b in self.neighbors])

    def __len__(self) -> int:
        return len(self.neighbors)


@dataclass
class MinibatchSelection:
    indices: np.ndarray
    n_batch: int
    N0: int
    batch_id: int = 0


def _within(xs: np.ndarray, i: int, cand: np.ndarray, delta: float) -> np.ndarray:
    diff = xs[cand] - xs[i]
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    return np.sort(cand[dist <= delta])


def build_index(xs, delta: float, method: str = "auto") -> NeighborhoodIndex:
    """Exact radius search: ``B_i = {j : ||x_j - x_i|| <= delta}`` (boundary included)."""
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta}")
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    n, dim = xs.shape
    if method == "auto":
        method = "grid" if n > GRID_THRESHOLD and dim <= 3 else "pairs"
    everyone = np.arange(n)
    if method == "pairs":
        return NeighborhoodIndex(float(delta), [_within(xs, i, everyone, delta) for i in range(n)])
    if method != "grid":
        raise ValueError(f"unknown method {method!r}")
    # cells a hair wider than delta: a float distance that rounds down to delta must stay one cell away
    cells = np.floor(xs / (delta * (1 + 1e-9))).astype(np.int64)
    buckets: dict[tuple, list[int]] = {}
    for i, c in enumerate(map(tuple, cells)):
        buckets.setdefault(c, []).append(i)
    offsets = list(itertools.product((-1, 0, 1), repeat=dim))
    neighbors = []
    for i in range(n):
        base = cells[i]
        cand = [j for off in offsets for j in buckets.get(tuple(base + off), ())]
        neighbors.append(_within(xs, i, np.array(cand, dtype=np.int64), delta))
    return NeighborhoodIndex(float(delta), neighbors)


def uniform_index(n: int) -> NeighborhoodIndex:
    """Every point's neighbourhood is the whole set."""
    everyone = np.arange(n)
    return NeighborhoodIndex(np.inf, [everyone] * n)


def eligible(index: NeighborhoodIndex, N0: int) -> np.ndarray:
    if N0 < 1:
        raise ConfigError(f"N0 must be >= 1, got {N0}")
    return np.flatnonzero(index.counts >= N0)


def select_minibatch(eligible_idx, n_batch: int, rng: np.random.Generator, N0: int = 1,
                     batch_id: int = 0) -> MinibatchSelection:
    """Uniform draw without replacement of ``min(n_batch, |eligible|)`` points."""
    eligible_idx = np.asarray(eligible_idx, dtype=np.int64)
    if eligible_idx.size == 0:
        raise ConfigError("no training point has enough neighbours; increase delta or lower N0")
    k = min(int(n_batch), eligible_idx.size)
    if k == eligible_idx.size:
        chosen = eligible_idx.copy()
    else:
        chosen = np.sort(rng.choice(eligible_idx, size=k, replace=False))
    return MinibatchSelection(chosen, int(n_batch), int(N0), batch_id)


def union_rows(index: NeighborhoodIndex, sel: MinibatchSelection) -> np.ndarray:
    """Sorted dataset rows touched by the selected neighbourhoods."""
    return np.unique(np.concatenate([index.neighbors[i] for i in sel.indices]))


def _local_terms(ys_true, pred_data, sel, index, pos, threads):
    # identical neighbourhoods give identical terms; solve each distinct one once
    groups: dict[tuple, int] = {}
    for i in sel.indices:
        key = tuple(index.neighbors[i])
        groups[key] = groups.get(key, 0) + 1
    keys = list(groups)

    def solve(key):
        rows = np.asarray(key)
        coupling = squared_w2(pred_data[pos[rows]], ys_true[rows])
        return rows, coupling

    results = ordered_map(solve, keys, threads)
    m = len(sel.indices)
    loss = 0.0
    grad = np.zeros_like(pred_data)
    for key, (rows, coupling) in zip(keys, results):
        w = groups[key] / m
        loss += w * coupling.cost
        P = pred_data[pos[rows]]
        grad[pos[rows]] += w * (2.0 / len(rows)) * (P - ys_true[rows][coupling.perm])
    return loss, grad


def local_w2_loss(ys_true, preds: ad.Value, sel: MinibatchSelection, index: NeighborhoodIndex,
                  rows: np.ndarray | None = None, threads: int = 1) -> ad.Value:
    """Mean over selected points of W2^2 between truth and predictions in their neighbourhoods.

    ``preds`` row ``m`` is the prediction at dataset row ``rows[m]`` (all
    rows when ``rows`` is None). The optimal matching is held fixed in the
    backward pass.
    """
    ys_true = np.asarray(ys_true, dtype=np.float64)
    if ys_true.ndim == 1:
        ys_true = ys_true[:, None]
    P = preds.data
    if P.ndim != 2 or P.shape[1] != ys_true.shape[1]:
        raise DimensionError(f"predictions {P.shape} do not match truth {ys_true.shape}")
    pos = np.full(ys_true.shape[0], -1, dtype=np.int64)
    if rows is None:
        if P.shape[0] != ys_true.shape[0]:
            raise DimensionError(f"{P.shape[0]} predictions for {ys_true.shape[0]} truth rows")
        pos[:] = np.arange(P.shape[0])
    else:
        pos[np.asarray(rows)] = np.arange(len(rows))
    needed = union_rows(index, sel)
    if np.any(pos[needed] < 0):
        raise DimensionError("predictions missing for rows inside selected neighbourhoods")
    loss, grad = _local_terms(ys_true, P, sel, index, pos, threads)

    def vjp(g):
        preds._accumulate(float(g) * grad)

    return ad.attach(np.array(loss), (preds,), vjp, op="local_w2")


def time_decoupled_loss(truth_states, preds: Sequence[ad.Value], sel: MinibatchSelection,
                        index: NeighborhoodIndex, threads: int = 1) -> ad.Value:
    """Average over time slices of :func:`local_w2_loss`.

    ``truth_states`` has shape ``(n_traj, N_T, D)``; ``preds`` holds one
    ``(n_traj, D)`` node per slice. Neighbourhoods are over trajectories.
    """
    truth_states = np.asarray(truth_states, dtype=np.float64)
    if truth_states.ndim != 3:
        raise DimensionError(f"truth states must be (n_traj, N_T, D), got {truth_states.shape}")
    n_traj, n_slices, _ = truth_states.shape
    if len(preds) != n_slices:
        raise DimensionError(f"time grids differ: truth has {n_slices} slices, prediction {len(preds)}")
    total = None
    for t, p in enumerate(preds):
        if p.shape[0] != n_traj:
            raise DimensionError(f"slice {t}: {p.shape[0]} predicted trajectories, expected {n_traj}")
        term = local_w2_loss(truth_states[:, t, :], p, sel, index, threads=threads)
        total = term if total is None else ad.add(total, term)
    return ad.scale(total, 1.0 / n_slices)
