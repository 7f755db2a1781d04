"""Run configuration and the end-to-end analysis used by the CLI."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import platform
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Mapping

import numpy as np
import scipy
import yaml

from . import __version__
from .ingest import DEFAULT_ATTRIBUTES, DEFAULT_WINDOW_SECONDS, JoinedTable, join_nearest, parse_attributes, parse_events
from .profiles import DEFAULT_RANK, Covariates, ProfileKind, assemble_covariates
from .stats import DEFAULT_SIGNIFICANCE, BalanceReport, Heatmap, TreatmentRun, build_heatmap, run_balance, run_treatment
from .synth import REFERENCE_GENRES
from .treatment import DEFAULT_QUANTILE, Tail, TreatmentSpec, default_specs


@dataclass
class RunConfig:
    events: str | None = None
    attributes: str | None = None
    output_dir: str | None = None
    profile_kind: str = ProfileKind.GENRE.value
    svd_rank: int = DEFAULT_RANK
    quantile: float = DEFAULT_QUANTILE
    treatments: list[str] = field(default_factory=list)  # "attribute" or "attribute:tail"
    significance_threshold: float = DEFAULT_SIGNIFICANCE
    window_seconds: int = DEFAULT_WINDOW_SECONDS
    utc_offset: float = 0.0
    seed: int = 0
    genres: list[str] = field(default_factory=lambda: list(REFERENCE_GENRES))
    attribute_names: list[str] = field(default_factory=lambda: list(DEFAULT_ATTRIBUTES))
    delimiter: str = ","
    export_covariates: bool = False
    dump_pairs: bool = False

    def __post_init__(self):
        self.profile_kind = ProfileKind(self.profile_kind).value
        if isinstance(self.genres, str):
            self.genres = [g.strip() for g in self.genres.split(",") if g.strip()]
        if isinstance(self.treatments, str):
            self.treatments = [self.treatments]
        if self.window_seconds <= 0:
            raise ValueError("window_seconds must be positive")
        if self.svd_rank < 1:
            raise ValueError("svd_rank must be >= 1")

    @classmethod
    def load(cls, path: str | os.PathLike | None, overrides: Mapping[str, Any] | None = None) -> "RunConfig":
        """Config file values, then non-None ``overrides`` on top."""
        data: dict[str, Any] = {}
        if path is not None:
            with open(path, encoding="utf-8") as fh:
                data = yaml.safe_load(fh) or {}
            if not isinstance(data, dict):
                raise ValueError(f"{path}: config must be a flat key: value mapping")
        for key, value in (overrides or {}).items():
            if value is not None:
                data[key] = value
        unknown = set(data) - {f.name for f in dataclasses.fields(cls)}
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        return cls(**data)

    def specs(self) -> list[TreatmentSpec]:
        defaults = default_specs(self.quantile)
        if not self.treatments:
            return defaults
        by_name = {s.attribute: s for s in defaults}
        out = []
        for item in self.treatments:
            name, _, tail = item.partition(":")
            if tail:
                out.append(TreatmentSpec(name, Tail(tail.lower()), self.quantile))
            elif name in by_name:
                out.append(by_name[name])
            else:
                raise ValueError(f"treatment {name!r} has no default tail; write it as {name}:low or {name}:high")
        return out

    def echo(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d.pop("output_dir")
        return d


@dataclass
class AnalysisResult:
    config: RunConfig
    joined: JoinedTable
    covariates: Covariates
    runs: dict[str, TreatmentRun]
    balance: dict[str, BalanceReport]
    heatmap: Heatmap | None = None


def _require_file(path: str | None, what: str) -> Path:
    if not path:
        raise ValueError(f"no {what} file given")
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} file not found: {path}")
    return p


def load_joined(cfg: RunConfig) -> JoinedTable:
    ev_path = _require_file(cfg.events, "events")
    at_path = _require_file(cfg.attributes, "attributes")
    with open(ev_path, "rb") as fh:
        events = parse_events(fh, cfg.genres, cfg.delimiter)
    with open(at_path, "rb") as fh:
        attrs = parse_attributes(fh, cfg.attribute_names, cfg.delimiter)
    return join_nearest(events, attrs, cfg.genres, cfg.window_seconds)


def analyze(cfg: RunConfig, joined: JoinedTable | None = None) -> AnalysisResult:
    joined = load_joined(cfg) if joined is None else joined
    covs = assemble_covariates(joined, cfg.profile_kind, cfg.svd_rank, cfg.utc_offset)
    heatmap = build_heatmap(joined, covs, cfg.specs(), cfg.significance_threshold, cfg.profile_kind)
    balance = {name: run_balance(covs, run, cfg.seed) for name, run in heatmap.runs.items()}
    return AnalysisResult(cfg, joined, covs, heatmap.runs, balance, heatmap)


def diagnose(cfg: RunConfig, joined: JoinedTable | None = None) -> AnalysisResult:
    """Matching and balance only; no outcome statistics."""
    joined = load_joined(cfg) if joined is None else joined
    covs = assemble_covariates(joined, cfg.profile_kind, cfg.svd_rank, cfg.utc_offset)
    runs = {spec.attribute: run_treatment(joined, covs, spec) for spec in cfg.specs()}
    balance = {name: run_balance(covs, run, cfg.seed) for name, run in runs.items()}
    return AnalysisResult(cfg, joined, covs, runs, balance)


def atomic_write(path: Path, writer: Callable[[Path], None]) -> None:
    """Write via a temporary sibling file, then rename into place."""
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    try:
        writer(Path(tmp))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, payload: Mapping) -> None:
    def writer(p: Path) -> None:
        with open(p, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")

    atomic_write(path, writer)


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def versions() -> dict[str, str]:
    return {
        "nnatt": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


def write_balance(path: Path, balance: Mapping[str, BalanceReport], delimiter: str = ",") -> None:
    def writer(p: Path) -> None:
        with open(p, "w", encoding="utf-8") as fh:
            fh.write(delimiter.join(("treatment", "mean_matched_distance", "mean_random_distance", "improvement")) + "\n")
            for name, b in balance.items():
                fields = (name, repr(b.mean_matched_distance), repr(b.mean_random_distance), repr(b.improvement))
                fh.write(delimiter.join(fields) + "\n")

    atomic_write(path, writer)


def write_outputs(result: AnalysisResult, out_dir: str | os.PathLike) -> dict[str, Path]:
    cfg = result.config
    out = Path(out_dir)
    written: dict[str, Path] = {}
    if result.heatmap is not None:
        written["heatmap"] = out / "heatmap.csv"
        atomic_write(written["heatmap"], lambda p: result.heatmap.write(p, cfg.delimiter))
        written["heatmap_long"] = out / "heatmap_long.csv"
        atomic_write(written["heatmap_long"], lambda p: result.heatmap.write_long(p, cfg.delimiter))
    written["balance"] = out / "balance.csv"
    write_balance(written["balance"], result.balance, cfg.delimiter)
    if cfg.export_covariates:
        written["covariates"] = out / "covariates.csv"
        atomic_write(written["covariates"], lambda p: result.covariates.write(p, cfg.delimiter))
    if cfg.dump_pairs:
        for name, run in result.runs.items():
            key = f"pairs_{name}"
            written[key] = out / f"{key}.csv"
            atomic_write(written[key], lambda p, run=run: run.match.write(p, cfg.delimiter))

    manifest = {
        "versions": versions(),
        "config": cfg.echo(),
        "inputs": {
            "events_sha256": file_digest(cfg.events) if cfg.events else None,
            "attributes_sha256": file_digest(cfg.attributes) if cfg.attributes else None,
        },
        "n_events_joined": len(result.joined),
        "dropped": result.joined.dropped,
        "covariate_dimension": result.covariates.dim,
        "covariate_schema": list(result.covariates.schema),
        "n_treated": {name: run.assignment.n_treated for name, run in result.runs.items()},
        "thresholds": {name: run.assignment.threshold for name, run in result.runs.items()},
        "outputs": sorted(p.name for p in written.values()),
    }
    written["manifest"] = out / "manifest.json"
    write_json(written["manifest"], manifest)
    return written
