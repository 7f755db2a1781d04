"""Per-event covariates: a user profile followed by cyclic time-of-event features.

Two profile kinds are supported. ``genre`` is the share of each genre in the
user's history; ``latent`` is the user's row of U·Σ from a rank-d truncated
SVD of the binary user × program matrix.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import svds

from .ingest import JoinedTable

DEFAULT_RANK = 16
SECONDS_PER_DAY = 86400
# 1970-01-01 was a Thursday; with Monday as day 0 that is day 3.
_EPOCH_WEEKDAY = 3
# Dense LAPACK below this many matrix cells, ARPACK above.
_DENSE_LIMIT = 4_000_000

TIME_FEATURES = ("hour_sin", "hour_cos", "weekday_sin", "weekday_cos")


class ProfileKind(str, Enum):
    GENRE = "genre"
    LATENT = "latent"


@dataclass(frozen=True)
class InteractionMatrix:
    entries: sps.csr_matrix  # binary, n_users x n_programs
    user_index: dict[str, int]
    program_index: dict[str, int]

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class LatentProfileMatrix:
    factors: np.ndarray  # U_d * sigma_d, n_users x d
    singular_values: np.ndarray
    left_vectors: np.ndarray  # unscaled U_d
    right_vectors: np.ndarray  # V_d, n_programs x d

    @property
    def rank(self) -> int:
        return self.factors.shape[1]

    def reconstruction(self) -> np.ndarray:
        return self.factors @ self.right_vectors.T


@dataclass(frozen=True)
class Covariates:
    matrix: np.ndarray  # (n_events, dim), rows aligned with the joined table
    schema: tuple[str, ...]
    event_ids: np.ndarray

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def write(self, path, delimiter: str = ",") -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(("event_id", *self.schema))
            for eid, row in zip(self.event_ids.tolist(), self.matrix.tolist()):
                w.writerow((eid, *(repr(v) for v in row)))


def genre_frequency_profile(events: JoinedTable, user_id: str) -> np.ndarray:
    mask = events.events.user_id == user_id
    if not mask.any():
        raise KeyError(f"user {user_id!r} has no events")
    codes = events.genre_codes()[mask]
    counts = np.bincount(codes, minlength=len(events.genre_vocabulary))
    return counts / counts.sum()


def _genre_profiles(events: JoinedTable) -> tuple[np.ndarray, np.ndarray]:
    """All users' genre shares at once. Returns (profiles per user, user row per event)."""
    users, user_rows = np.unique(events.events.user_id.astype(str), return_inverse=True)
    counts = np.zeros((len(users), len(events.genre_vocabulary)))
    np.add.at(counts, (user_rows, events.genre_codes()), 1.0)
    return counts / counts.sum(axis=1, keepdims=True), user_rows


def build_interaction_matrix(events: JoinedTable) -> InteractionMatrix:
    if len(events) == 0:
        raise ValueError("cannot build an interaction matrix from an empty table")
    users, u = np.unique(events.events.user_id.astype(str), return_inverse=True)
    programs, p = np.unique(events.events.program_id.astype(str), return_inverse=True)
    m = sps.coo_matrix((np.ones(len(u)), (u, p)), shape=(len(users), len(programs))).tocsr()
    m.sum_duplicates()
    m.data[:] = 1.0
    return InteractionMatrix(
        entries=m,
        user_index={str(x): k for k, x in enumerate(users)},
        program_index={str(x): k for k, x in enumerate(programs)},
    )


def truncated_svd(m: InteractionMatrix | np.ndarray | sps.spmatrix, d: int = DEFAULT_RANK) -> LatentProfileMatrix:
    """Best rank-``d`` factorization, returned as U·Σ with columns by descending σ.

    Signs are fixed so that the largest-magnitude entry of every right singular
    vector is positive (first such entry on exact ties).
    """
    a = m.entries if isinstance(m, InteractionMatrix) else m
    n_u, n_p = a.shape
    if not 1 <= d <= min(n_u, n_p):
        raise ValueError(f"rank d={d} outside [1, {min(n_u, n_p)}]")

    if n_u * n_p <= _DENSE_LIMIT or d >= min(n_u, n_p) - 1:
        dense = a.toarray() if sps.issparse(a) else np.asarray(a, dtype=np.float64)
        u, s, vt = np.linalg.svd(dense, full_matrices=False)
        u, s, vt = u[:, :d], s[:d], vt[:d]
    else:
        v0 = np.full(min(n_u, n_p), 1.0 / np.sqrt(min(n_u, n_p)))
        u, s, vt = svds(sps.csr_matrix(a, dtype=np.float64), k=d, v0=v0)
        order = np.argsort(-s, kind="stable")
        u, s, vt = u[:, order], s[order], vt[order]

    v = vt.T.copy()
    pivot = np.argmax(np.abs(v), axis=0)
    signs = np.sign(v[pivot, np.arange(d)])
    signs[signs == 0] = 1.0
    u = u * signs
    v = v * signs
    return LatentProfileMatrix(factors=u * s, singular_values=s, left_vectors=u, right_vectors=v)


def time_features(timestamp, utc_offset: float = 0.0) -> np.ndarray:
    """Cyclic (sin, cos) of hour-of-day and of day-of-week, Monday = 0.

    ``utc_offset`` is in hours. Accepts a scalar or an array of timestamps; the
    result has a trailing axis of length 4.
    """
    ts = np.asarray(timestamp, dtype=np.int64)
    local = ts + int(round(utc_offset * 3600))
    day, sec = np.divmod(local, SECONDS_PER_DAY)
    hour_angle = 2 * np.pi * (sec / 3600.0) / 24.0
    weekday_angle = 2 * np.pi * ((day + _EPOCH_WEEKDAY) % 7) / 7.0
    return np.stack(
        [np.sin(hour_angle), np.cos(hour_angle), np.sin(weekday_angle), np.cos(weekday_angle)],
        axis=-1,
    )


def standardize(x: np.ndarray) -> np.ndarray:
    """Column-wise z-score (population variance). Constant columns become 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for j in range(x.shape[1]):
        col = x[:, j]
        if col.max() == col.min():
            continue
        centered = col - col.mean()
        out[:, j] = centered / np.sqrt(np.mean(centered**2))
    return out


def assemble_covariates(
    events: JoinedTable,
    profile_kind: ProfileKind | str = ProfileKind.GENRE,
    d: int = DEFAULT_RANK,
    utc_offset: float = 0.0,
) -> Covariates:
    kind = ProfileKind(profile_kind)
    if kind is ProfileKind.GENRE:
        per_user, user_rows = _genre_profiles(events)
        names = [f"genre:{g}" for g in events.genre_vocabulary]
    else:
        im = build_interaction_matrix(events)
        per_user = truncated_svd(im, d).factors
        user_rows = np.fromiter(
            (im.user_index[u] for u in events.events.user_id.astype(str)), dtype=np.int64, count=len(events)
        )
        names = [f"latent:{k}" for k in range(d)]
    raw = np.hstack([per_user[user_rows], time_features(events.events.timestamp, utc_offset)])
    return Covariates(
        matrix=standardize(raw),
        schema=(*names, *TIME_FEATURES),
        event_ids=events.events.event_id.copy(),
    )
