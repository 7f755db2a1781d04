"""Synthetic viewing logs with planted treatment effects and tunable confounding.

Model, per seed:

* each user draws a latent preference ``z`` (``latent_dim`` normals); genre
  logits are ``base + W @ z``, and the softmax is mixed with a uniform
  floor (``uniform_mix``) so no genre probability sits at 0 or 1. Column 0 of ``W`` is fixed: the first genre
  loads +``preference_loading`` on ``z[0]``, the third genre loads the
  negative of that, so confounding has a known direction;
* users live at the location whose climate index is nearest ``tanh(z[0])``
  (plus noise). Every attribute at location ``l`` is shifted by
  ``confounding_strength * climate[l]`` standard units, so with strength 0
  the weather is independent of who watches;
* weather is an hourly AR(1) series per location and attribute;
* for each planted ``(attribute, genre) -> tau`` the watch probability of
  ``genre`` rises by exactly ``tau`` on events in that attribute's treated
  tail, the other genres shrinking proportionally.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .ingest import DEFAULT_ATTRIBUTES, AttributeTable, EventTable, JoinedTable, join_nearest
from .treatment import DEFAULT_QUANTILE, TreatmentAssignment, assign, default_specs

REFERENCE_GENRES = (
    "Drama",
    "News",
    "Kids",
    "Sport",
    "Documentary",
    "Comedy",
    "Movie",
    "Entertainment",
    "Lifestyle",
    "Panel",
    "Reality",
    "Music",
    "Travel",
    "Religion",
)

# Monday 2012-02-06 00:00 UTC.
DEFAULT_START = 1328486400
HOUR = 3600

# (center, spread) per attribute in natural units.
_ATTRIBUTE_SCALE = {
    "temperature": (18.0, 6.0),
    "feels_like_temperature": (17.0, 7.0),
    "wind_speed": (15.0, 6.0),
    "cloud_cover": (50.0, 20.0),
    "pressure": (1015.0, 7.0),
    "humidity": (65.0, 12.0),
    "visibility": (10.0, 2.5),
    "precipitation": (1.0, 0.8),
}


@dataclass
class SynthConfig:
    n_users: int = 500
    n_programs: int = 700
    n_events: int = 50_000
    n_genres: int = 14
    n_locations: int = 10
    planted_effects: dict[tuple[str, str], float] = field(default_factory=dict)
    confounding_strength: float = 0.0
    seed: int = 0
    n_weeks: int = 26
    quantile: float = DEFAULT_QUANTILE
    latent_dim: int = 3
    preference_loading: float = 1.5
    weather_persistence: float = 0.97
    uniform_mix: float = 0.1

    def __post_init__(self):
        for name in ("n_users", "n_programs", "n_events", "n_genres", "n_locations", "n_weeks", "latent_dim"):
            if int(getattr(self, name)) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.n_programs < self.n_genres:
            raise ValueError("need at least one program per genre")
        if self.confounding_strength < 0:
            raise ValueError("confounding_strength must be >= 0")
        if not 0 <= self.uniform_mix <= 1:
            raise ValueError("uniform_mix must lie in [0, 1]")
        if not 0 <= self.weather_persistence < 1:
            raise ValueError("weather_persistence must lie in [0, 1)")
        self.planted_effects = {tuple(k): float(v) for k, v in dict(self.planted_effects).items()}
        genres = set(self.genres)
        attrs = set(DEFAULT_ATTRIBUTES)
        per_genre: dict[str, float] = {}
        for (attr, genre), tau in self.planted_effects.items():
            if attr not in attrs:
                raise ValueError(f"planted effect on unknown attribute {attr!r}")
            if genre not in genres:
                raise ValueError(f"planted effect on unknown genre {genre!r}")
            per_genre[genre] = per_genre.get(genre, 0.0) + abs(tau)
        for genre, total in per_genre.items():
            if total >= 1:
                raise ValueError(f"planted effects on {genre!r} sum to {total}; probabilities would leave [0, 1]")

    @property
    def genres(self) -> tuple[str, ...]:
        names = list(REFERENCE_GENRES[: self.n_genres])
        names += [f"Genre{k:02d}" for k in range(len(names), self.n_genres)]
        return tuple(names)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SynthConfig":
        data = dict(data)
        effects = data.pop("planted_effects", {}) or {}
        data["planted_effects"] = parse_effects(effects)
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown synth config key(s): {', '.join(sorted(unknown))}")
        return cls(**data)


def parse_effects(effects) -> dict[tuple[str, str], float]:
    """Accept ``{"attr:genre": tau}``, ``{(attr, genre): tau}``, or a list of ``attr:genre=tau`` strings."""
    out: dict[tuple[str, str], float] = {}
    if isinstance(effects, Mapping):
        items = effects.items()
    else:
        items = []
        for text in effects:
            key, _, val = str(text).partition("=")
            items.append((key, val))
    for key, val in items:
        if isinstance(key, str):
            attr, sep, genre = key.partition(":")
            if not sep:
                raise ValueError(f"planted effect key {key!r} must look like attribute:genre")
            key = (attr.strip(), genre.strip())
        out[tuple(key)] = float(val)
    return out


@dataclass(frozen=True)
class GroundTruth:
    true_att: dict[tuple[str, str], float]

    def get(self, attribute: str, genre: str) -> float:
        return self.true_att.get((attribute, genre), 0.0)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("attribute", "genre", "true_att"))
            for (attr, genre), v in sorted(self.true_att.items()):
                w.writerow((attr, genre, repr(v)))


@dataclass(frozen=True)
class SynthDataset:
    config: SynthConfig
    events: EventTable
    attributes: AttributeTable
    ground_truth: GroundTruth
    user_preference: np.ndarray

    @property
    def genre_vocabulary(self) -> tuple[str, ...]:
        return self.config.genres

    def joined(self, window_seconds: int = HOUR) -> JoinedTable:
        return join_nearest(self.events, self.attributes, self.genre_vocabulary, window_seconds)

    def write(self, out_dir) -> dict[str, Path]:
        from .ingest import write_attributes, write_events

        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "events": out / "events.csv",
            "attributes": out / "attributes.csv",
            "ground_truth": out / "ground_truth.csv",
        }
        for key, writer in (
            ("events", lambda p: write_events(self.events, p)),
            ("attributes", lambda p: write_attributes(self.attributes, p)),
            ("ground_truth", self.ground_truth.write),
        ):
            tmp = paths[key].with_suffix(".tmp")
            writer(tmp)
            os.replace(tmp, paths[key])
        return paths


def shift_probability(p: np.ndarray, genre: int, tau: float) -> np.ndarray:
    """Add ``tau`` to column ``genre``; rescale the rest so rows still sum to 1."""
    out = p.copy()
    pg = p[:, genre]
    rest = 1.0 - pg
    new = pg + tau
    if np.any(new < 0) or np.any(new > 1):
        raise ValueError("planted effect pushes a watch probability outside [0, 1]")
    scale = np.divide(1.0 - new, rest, out=np.zeros_like(rest), where=rest > 0)
    out *= scale[:, None]
    out[:, genre] = new
    return out


def _softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _weather(rng, cfg: SynthConfig, climate: np.ndarray, n_hours: int) -> np.ndarray:
    """Standardized AR(1) weather, shape (n_locations, n_hours, n_attributes)."""
    n_attr = len(DEFAULT_ATTRIBUTES)
    rho = cfg.weather_persistence
    shocks = rng.standard_normal((cfg.n_locations, n_hours, n_attr)) * np.sqrt(1 - rho**2)
    series = np.empty_like(shocks)
    series[:, 0] = rng.standard_normal((cfg.n_locations, n_attr))
    for t in range(1, n_hours):
        series[:, t] = rho * series[:, t - 1] + shocks[:, t]
    # Feels-like tracks temperature closely.
    series[:, :, 1] = 0.9 * series[:, :, 0] + np.sqrt(1 - 0.81) * series[:, :, 1]
    return series + cfg.confounding_strength * climate[:, None, None]


def generate(cfg: SynthConfig, start: int = DEFAULT_START) -> SynthDataset:
    rng = np.random.default_rng(cfg.seed)
    genres = cfg.genres
    n_g = cfg.n_genres
    attrs = DEFAULT_ATTRIBUTES

    # Users and their genre preferences.
    z = rng.standard_normal((cfg.n_users, cfg.latent_dim))
    base = rng.normal(0.0, 0.5, n_g)
    loadings = rng.normal(0.0, 0.6, (n_g, cfg.latent_dim))
    loadings[:, 0] = rng.normal(0.0, 0.2, n_g)
    loadings[0, 0] = cfg.preference_loading
    if n_g > 2:
        loadings[2, 0] = -cfg.preference_loading
    pref = (1 - cfg.uniform_mix) * _softmax(base + z @ loadings.T) + cfg.uniform_mix / n_g

    # Locations ordered by climate index; users settle by their first preference axis.
    climate = np.linspace(-1.0, 1.0, cfg.n_locations) if cfg.n_locations > 1 else np.zeros(1)
    target = np.tanh(z[:, 0] + 0.3 * rng.standard_normal(cfg.n_users))
    home = np.argmin(np.abs(target[:, None] - climate[None, :]), axis=1)
    location_names = np.array([f"L{k:03d}" for k in range(cfg.n_locations)], dtype=object)

    # Hourly weather, one record per location per hour over the whole period.
    n_hours = cfg.n_weeks * 7 * 24 + 1
    std_weather = _weather(rng, cfg, climate, n_hours)
    center = np.array([_ATTRIBUTE_SCALE[a][0] for a in attrs])
    spread = np.array([_ATTRIBUTE_SCALE[a][1] for a in attrs])
    natural = center + spread * std_weather
    precip = attrs.index("precipitation")
    natural[:, :, precip] = center[precip] * np.exp(spread[precip] * std_weather[:, :, precip])
    rec_loc = np.repeat(location_names, n_hours)
    rec_ts = np.tile(start + HOUR * np.arange(n_hours, dtype=np.int64), cfg.n_locations)
    attributes = AttributeTable(
        location_id=rec_loc,
        timestamp=rec_ts,
        values=natural.reshape(-1, len(attrs)),
        attribute_names=attrs,
    )

    # Events: who and when. Genres are drawn after the treatment tails are known.
    user = rng.integers(0, cfg.n_users, cfg.n_events)
    span = (n_hours - 1) * HOUR
    ts = start + rng.integers(0, span, cfg.n_events)
    user_names = np.array([f"u{k:05d}" for k in range(cfg.n_users)], dtype=object)
    placeholder = np.full(cfg.n_events, genres[0], dtype=object)
    skeleton = EventTable.from_columns(
        np.arange(cfg.n_events),
        user_names[user],
        ts,
        placeholder,
        placeholder,
        location_names[home[user]],
    )
    joined = join_nearest(skeleton, attributes, genres, window_seconds=HOUR)
    assert joined.dropped == 0 and np.array_equal(joined.events.event_id, np.arange(cfg.n_events))

    specs = {s.attribute: s for s in default_specs(cfg.quantile)}
    treated = {
        attr: assign(joined.attribute(attr), specs[attr], joined.events.event_id).treated
        for attr in sorted({a for a, _ in cfg.planted_effects})
    }

    def probabilities(skip: str | None = None) -> np.ndarray:
        p = pref[user]
        for (attr, genre), tau in sorted(cfg.planted_effects.items()):
            if attr == skip:
                continue
            mask = treated[attr]
            p[mask] = shift_probability(p[mask], genres.index(genre), tau)
        return p

    probs = probabilities()
    truth = {}
    for attr, genre in sorted(cfg.planted_effects):
        g = genres.index(genre)
        mask = treated[attr]
        truth[(attr, genre)] = float(np.mean(probs[mask, g] - probabilities(skip=attr)[mask, g]))

    u = rng.random(cfg.n_events)
    genre_idx = np.minimum((probs.cumsum(axis=1) < u[:, None]).sum(axis=1), n_g - 1)

    # Programs are split evenly across genres, with Zipf-like popularity inside each.
    program_genre = np.arange(cfg.n_programs) % n_g
    popularity = 1.0 / (1.0 + rng.permutation(cfg.n_programs))
    program = np.empty(cfg.n_events, dtype=np.int64)
    for g in range(n_g):
        members = np.flatnonzero(program_genre == g)
        w = popularity[members] / popularity[members].sum()
        rows = np.flatnonzero(genre_idx == g)
        program[rows] = rng.choice(members, size=len(rows), p=w)
    program_names = np.array([f"p{k:05d}" for k in range(cfg.n_programs)], dtype=object)
    genre_names = np.array(genres, dtype=object)

    events = EventTable.from_columns(
        np.arange(cfg.n_events),
        user_names[user],
        ts,
        program_names[program],
        genre_names[genre_idx],
        location_names[home[user]],
    )
    return SynthDataset(cfg, events, attributes, GroundTruth(truth), z)


def naive_difference(joined: JoinedTable, assignment: TreatmentAssignment, genre: str) -> float:
    """Mean outcome among treated minus mean outcome among control."""
    y = joined.genre_codes() == joined.genre_vocabulary.index(genre)
    t = assignment.treated
    if not t.any() or t.all():
        raise ValueError("naive difference needs both a treated and a control group")
    return float(y[t].mean() - y[~t].mean())


def naive_std_error(joined: JoinedTable, assignment: TreatmentAssignment, genre: str) -> float:
    """Unpooled two-sample standard error of :func:`naive_difference`."""
    y = (joined.genre_codes() == joined.genre_vocabulary.index(genre)).astype(np.float64)
    t = assignment.treated
    if t.sum() < 2 or (~t).sum() < 2:
        raise ValueError("naive standard error needs two units per group")
    return float(np.sqrt(y[t].var(ddof=1) / t.sum() + y[~t].var(ddof=1) / (~t).sum()))
