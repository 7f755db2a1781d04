"""ATT estimation over matched pairs, significance grids and balance checks."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .ingest import JoinedTable
from .matching import MatchResult, build_index, match_treated, pair_distances
from .profiles import Covariates
from .treatment import TreatmentAssignment, TreatmentSpec, assign

DEFAULT_SIGNIFICANCE = 2.0

HEATMAP_COLUMNS = ("treatment", "genre", "att", "std_error", "normalized_att", "z", "significant")


def att(diffs) -> float:
    """Mean paired difference Y_i(1) - Y_pi(i)(0) over treated units."""
    diffs = np.asarray(diffs, dtype=np.float64)
    if diffs.size == 0:
        raise ValueError("att needs at least one paired difference")
    return math.fsum(diffs.tolist()) / diffs.size


def std_error(diffs) -> float:
    """Sample standard deviation of the differences (n - 1 denominator) over sqrt(n)."""
    diffs = np.asarray(diffs, dtype=np.float64)
    n = diffs.size
    if n < 2:
        raise ValueError("std_error needs at least two paired differences")
    mean = math.fsum(diffs.tolist()) / n
    ss = math.fsum(((diffs - mean) ** 2).tolist())
    return math.sqrt(ss / (n - 1)) / math.sqrt(n)


def normalized_att(value: float, genre_frequency: float) -> float:
    if genre_frequency <= 0:
        raise ValueError("genre frequency must be positive (genre never watched?)")
    return value / genre_frequency


def z_score(value: float, se: float) -> float:
    if se <= 0:
        raise ValueError("z-score undefined for a non-positive standard error")
    return value / se


@dataclass(frozen=True)
class AttReport:
    treatment: str
    genre: str
    att: float
    std_error: float
    genre_frequency: float
    normalized_att: float
    z: float
    significant: bool

    def row(self) -> tuple:
        return (
            self.treatment,
            self.genre,
            repr(self.att),
            repr(self.std_error),
            repr(self.normalized_att),
            repr(self.z),
            "true" if self.significant else "false",
        )


def report_cell(treatment: str, genre: str, diffs, genre_frequency: float, threshold: float) -> AttReport:
    a = att(diffs)
    se = std_error(diffs)
    if se > 0:
        z = z_score(a, se)
    else:
        # Every difference identical: no evidence either way unless they are all nonzero.
        z = 0.0 if a == 0 else math.copysign(math.inf, a)
    norm = normalized_att(a, genre_frequency) if genre_frequency > 0 else math.nan
    return AttReport(treatment, genre, a, se, genre_frequency, norm, z, abs(z) >= threshold)


@dataclass
class TreatmentRun:
    """Everything computed for one treatment spec; shared by all genres."""

    spec: TreatmentSpec
    assignment: TreatmentAssignment
    match: MatchResult
    treated_rows: np.ndarray
    control_rows: np.ndarray  # rows of the matched controls in the joined table


@dataclass
class Heatmap:
    cells: list[AttReport]
    treatments: tuple[str, ...]
    genres: tuple[str, ...]
    profile_kind: str = ""
    runs: dict[str, TreatmentRun] = field(default_factory=dict, repr=False)

    def cell(self, treatment: str, genre: str) -> AttReport:
        i = self.treatments.index(treatment)
        j = self.genres.index(genre)
        return self.cells[i * len(self.genres) + j]

    def z_grid(self) -> np.ndarray:
        return np.array([c.z for c in self.cells]).reshape(len(self.treatments), len(self.genres))

    def att_grid(self) -> np.ndarray:
        return np.array([c.att for c in self.cells]).reshape(len(self.treatments), len(self.genres))

    def write(self, path, delimiter: str = ",") -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(HEATMAP_COLUMNS)
            for c in self.cells:
                w.writerow(c.row())

    def write_long(self, path, delimiter: str = ",") -> None:
        """Plot-ready long format: one (treatment, genre, metric, value) row per number."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            w.writerow(("profile", "treatment", "genre", "metric", "value"))
            for c in self.cells:
                for metric in ("att", "std_error", "normalized_att", "z"):
                    w.writerow((self.profile_kind, c.treatment, c.genre, metric, repr(getattr(c, metric))))
                w.writerow((self.profile_kind, c.treatment, c.genre, "significant", int(c.significant)))

    @classmethod
    def read(cls, path, delimiter: str = ",") -> "Heatmap":
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh, delimiter=delimiter)
            if reader.fieldnames is None or tuple(reader.fieldnames) != HEATMAP_COLUMNS:
                raise ValueError(f"{path}: expected header {','.join(HEATMAP_COLUMNS)}")
            cells = []
            for rec in reader:
                a = float(rec["att"])
                norm = float(rec["normalized_att"])
                freq = a / norm if norm not in (0.0,) and math.isfinite(norm) else math.nan
                cells.append(
                    AttReport(
                        treatment=rec["treatment"],
                        genre=rec["genre"],
                        att=a,
                        std_error=float(rec["std_error"]),
                        genre_frequency=freq,
                        normalized_att=norm,
                        z=float(rec["z"]),
                        significant=rec["significant"].strip().lower() in ("true", "1"),
                    )
                )
        treatments = tuple(dict.fromkeys(c.treatment for c in cells))
        genres = tuple(dict.fromkeys(c.genre for c in cells))
        expected = [(t, g) for t in treatments for g in genres]
        if [(c.treatment, c.genre) for c in cells] != expected:
            raise ValueError(f"{path}: cells do not form a complete treatment x genre grid")
        return cls(cells=cells, treatments=treatments, genres=genres)


def run_treatment(joined: JoinedTable, covariates: Covariates, spec: TreatmentSpec) -> TreatmentRun:
    """Assign, then match every treated event to its nearest control."""
    assignment = assign(joined.attribute(spec.attribute), spec, joined.events.event_id)
    treated_rows = np.flatnonzero(assignment.treated)
    control_pool = np.flatnonzero(assignment.control)
    index = build_index(covariates.matrix[control_pool], joined.events.event_id[control_pool])
    result = match_treated(index, covariates.matrix[treated_rows], joined.events.event_id[treated_rows])
    return TreatmentRun(spec, assignment, result, treated_rows, control_pool[result.control_rows])


def paired_differences(outcomes: np.ndarray, run: TreatmentRun) -> np.ndarray:
    """Per-genre differences, shape (n_treated, n_genres)."""
    return outcomes[run.treated_rows].astype(np.float64) - outcomes[run.control_rows].astype(np.float64)


def build_heatmap(
    joined: JoinedTable,
    covariates: Covariates,
    specs: Sequence[TreatmentSpec],
    significance_threshold: float = DEFAULT_SIGNIFICANCE,
    profile_kind: str = "",
) -> Heatmap:
    """One matching per treatment, reused across every genre's outcome."""
    outcomes = joined.outcomes()
    freqs = joined.genre_frequencies()
    cells: list[AttReport] = []
    runs: dict[str, TreatmentRun] = {}
    for spec in specs:
        run = run_treatment(joined, covariates, spec)
        runs[spec.attribute] = run
        diffs = paired_differences(outcomes, run)
        for j, genre in enumerate(joined.genre_vocabulary):
            cells.append(report_cell(spec.attribute, genre, diffs[:, j], float(freqs[j]), significance_threshold))
    return Heatmap(
        cells=cells,
        treatments=tuple(s.attribute for s in specs),
        genres=tuple(joined.genre_vocabulary),
        profile_kind=profile_kind,
        runs=runs,
    )


def heatmap_correlation(a: Heatmap | Sequence[float], b: Heatmap | Sequence[float]) -> float:
    """Pearson correlation of the paired z-values of two identically shaped grids."""
    if isinstance(a, Heatmap) and isinstance(b, Heatmap):
        if a.treatments != b.treatments or a.genres != b.genres:
            raise ValueError("heatmaps cover different treatment/genre grids")
        x, y = a.z_grid().ravel(), b.z_grid().ravel()
    else:
        x, y = np.asarray(a, dtype=np.float64).ravel(), np.asarray(b, dtype=np.float64).ravel()
        if x.shape != y.shape:
            raise ValueError("value sequences differ in length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("correlation undefined for non-finite z-values")
    xc, yc = x - x.mean(), y - y.mean()
    sxx, syy = float(xc @ xc), float(yc @ yc)
    if sxx == 0 or syy == 0:
        raise ValueError("correlation undefined for a constant heatmap")
    return float(xc @ yc) / math.sqrt(sxx * syy)


@dataclass(frozen=True)
class BalanceReport:
    mean_matched_distance: float
    mean_random_distance: float
    improvement: float


def balance_diagnostic(
    match: MatchResult,
    treated_covs: np.ndarray,
    control_covs: np.ndarray,
    seed: int,
) -> BalanceReport:
    """Compare matched-pair distance with one seeded uniform random pairing."""
    if len(match) == 0:
        raise ValueError("empty match result")
    treated_covs = np.asarray(treated_covs, dtype=np.float64)
    control_covs = np.asarray(control_covs, dtype=np.float64)
    rng = np.random.default_rng(seed)
    partners = rng.integers(0, len(control_covs), size=len(treated_covs))
    matched = float(np.mean(match.distances))
    random = float(np.mean(pair_distances(treated_covs, control_covs[partners])))
    return BalanceReport(matched, random, improvement_fraction(matched, random))


def improvement_fraction(matched: float, random: float) -> float:
    if random == 0:
        return 0.0
    return 1.0 - matched / random


def run_balance(covariates: Covariates, run: TreatmentRun, seed: int) -> BalanceReport:
    control_pool = np.flatnonzero(run.assignment.control)
    return balance_diagnostic(
        run.match,
        covariates.matrix[run.treated_rows],
        covariates.matrix[control_pool],
        seed,
    )
