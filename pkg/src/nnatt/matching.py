"""Exact 1-nearest-neighbour matching of treated events to control events.

A k-d tree proposes candidates; every candidate whose tree distance is within
a small relative slack of the best is then re-scored with
:func:`squared_distances`, and the winner is the lexicographic minimum of
(squared distance, control event id). That is the same ordering a brute-force
scan with the same kernel produces, so results are bit-identical to it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

# Tree and kernel distances differ by a few ulps; this comfortably covers it.
_REL_SLACK = 1e-9
_ABS_SLACK = 1e-300


def squared_distances(points: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, accumulated dimension by dimension in order.

    The fixed accumulation order makes the result reproducible by any scalar
    loop that sums ``(p[k] - q[k])**2`` for k = 0, 1, ... .
    """
    points = np.asarray(points, dtype=np.float64)
    acc = np.zeros(points.shape[0])
    for k in range(points.shape[1]):
        diff = points[:, k] - query[k]
        acc += diff * diff
    return acc


def pair_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise Euclidean distance between two equally shaped arrays."""
    acc = np.zeros(a.shape[0])
    for k in range(a.shape[1]):
        diff = a[:, k] - b[:, k]
        acc += diff * diff
    return np.sqrt(acc)


@dataclass(frozen=True)
class MatchResult:
    treated_ids: np.ndarray
    control_ids: np.ndarray
    distances: np.ndarray
    control_rows: np.ndarray  # positions of the matched controls inside the index
    with_replacement: bool = True

    def __len__(self) -> int:
        return len(self.treated_ids)

    @property
    def pairs(self) -> list[tuple[int, int, float]]:
        return list(zip(self.treated_ids.tolist(), self.control_ids.tolist(), self.distances.tolist()))

    def write(self, path, delimiter: str = ",") -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(("treated_id", "control_id", "distance"))
            for t, c, d in self.pairs:
                w.writerow((t, c, repr(d)))


class NeighborIndex:
    """Immutable exact nearest-neighbour index over control covariates."""

    def __init__(self, controls: np.ndarray, event_ids=None):
        controls = np.ascontiguousarray(controls, dtype=np.float64)
        if controls.ndim != 2 or controls.shape[0] == 0:
            raise ValueError("control set must be a non-empty 2-D array")
        if not np.all(np.isfinite(controls)):
            raise ValueError("control covariates must be finite")
        self.points = controls
        self.points.setflags(write=False)
        ids = np.arange(len(controls)) if event_ids is None else np.asarray(event_ids, dtype=np.int64)
        if len(ids) != len(controls):
            raise ValueError("event_ids and controls differ in length")
        self.event_ids = ids
        self._tree = cKDTree(controls, balanced_tree=True, compact_nodes=True)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def _best(self, q: np.ndarray, candidates) -> int:
        cand = np.asarray(candidates, dtype=np.int64)
        d2 = squared_distances(self.points[cand], q)
        order = np.lexsort((self.event_ids[cand], d2))
        return int(cand[order[0]])

    def query(self, queries: np.ndarray, workers: int = 1) -> tuple[np.ndarray, np.ndarray]:
        """Row of the nearest control and its distance for each query row."""
        queries = np.ascontiguousarray(queries, dtype=np.float64)
        if queries.ndim != 2 or queries.shape[1] != self.dim:
            raise ValueError(f"query dimension {queries.shape[-1]} does not match index dimension {self.dim}")
        if len(self) == 1:
            rows = np.zeros(len(queries), dtype=np.int64)
        else:
            dist, idx = self._tree.query(queries, k=2, workers=workers)
            rows = idx[:, 0].astype(np.int64)
            radius = dist[:, 0] * (1 + _REL_SLACK) + _ABS_SLACK
            # Unambiguous when the runner-up is clearly farther; the rest get a ball search.
            for i in np.flatnonzero(dist[:, 1] <= radius):
                cand = self._tree.query_ball_point(queries[i], radius[i])
                rows[i] = self._best(queries[i], cand)
        dists = pair_distances(queries, self.points[rows])
        return rows, dists


def build_index(controls: np.ndarray, event_ids=None) -> NeighborIndex:
    return NeighborIndex(controls, event_ids)


def match_treated(index: NeighborIndex, treated: np.ndarray, treated_ids=None, workers: int = 1) -> MatchResult:
    """Pair each treated covariate with its nearest control, with replacement."""
    treated = np.asarray(treated, dtype=np.float64)
    if treated.ndim != 2 or treated.shape[0] == 0:
        raise ValueError("treated set must be a non-empty 2-D array")
    rows, dists = index.query(treated, workers=workers)
    ids = np.arange(len(treated)) if treated_ids is None else np.asarray(treated_ids, dtype=np.int64)
    return MatchResult(
        treated_ids=ids,
        control_ids=index.event_ids[rows],
        distances=dists,
        control_rows=rows,
    )


def brute_force_match(controls: np.ndarray, treated: np.ndarray, control_ids=None) -> np.ndarray:
    """Reference scan: matched control row per treated row."""
    controls = np.asarray(controls, dtype=np.float64)
    ids = np.arange(len(controls)) if control_ids is None else np.asarray(control_ids)
    out = np.empty(len(treated), dtype=np.int64)
    for i, q in enumerate(np.asarray(treated, dtype=np.float64)):
        out[i] = np.lexsort((ids, squared_distances(controls, q)))[0]
    return out
