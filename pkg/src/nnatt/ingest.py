"""Event-log and attribute-table parsing, plus the nearest-in-time join.

Both inputs are delimiter-separated UTF-8 text with a header row. Tables are
held column-wise as numpy arrays; nothing here mutates its inputs.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

EVENT_COLUMNS = ("event_id", "user_id", "timestamp", "program_id", "genre", "location_id")

DEFAULT_ATTRIBUTES = (
    "temperature",
    "feels_like_temperature",
    "wind_speed",
    "cloud_cover",
    "pressure",
    "humidity",
    "visibility",
    "precipitation",
)

DEFAULT_WINDOW_SECONDS = 3600


class IngestError(ValueError):
    """A row or header could not be parsed. ``line`` is 1-based and counts the header."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class EventTable:
    event_id: np.ndarray
    user_id: np.ndarray
    timestamp: np.ndarray
    program_id: np.ndarray
    genre: np.ndarray
    location_id: np.ndarray

    def __len__(self) -> int:
        return len(self.event_id)

    @classmethod
    def from_columns(cls, event_id, user_id, timestamp, program_id, genre, location_id) -> "EventTable":
        ids = np.asarray(event_id, dtype=np.int64)
        if len(np.unique(ids)) != len(ids):
            raise IngestError("event_id values are not unique")
        return cls(
            event_id=ids,
            user_id=np.asarray(user_id, dtype=object),
            timestamp=np.asarray(timestamp, dtype=np.int64),
            program_id=np.asarray(program_id, dtype=object),
            genre=np.asarray(genre, dtype=object),
            location_id=np.asarray(location_id, dtype=object),
        )

    def take(self, idx: np.ndarray) -> "EventTable":
        return EventTable(
            self.event_id[idx],
            self.user_id[idx],
            self.timestamp[idx],
            self.program_id[idx],
            self.genre[idx],
            self.location_id[idx],
        )


@dataclass(frozen=True)
class AttributeTable:
    location_id: np.ndarray
    timestamp: np.ndarray
    values: np.ndarray  # (n_records, n_attributes)
    attribute_names: tuple[str, ...]

    def __len__(self) -> int:
        return len(self.timestamp)


@dataclass(frozen=True)
class JoinedTable:
    """Events with the attribute values of their matched record, sorted by event_id."""

    events: EventTable
    values: np.ndarray  # (n_events, n_attributes)
    genre_vocabulary: tuple[str, ...]
    attribute_names: tuple[str, ...]
    dropped: int = 0
    matched_timestamp: np.ndarray = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.events)

    def attribute(self, name: str) -> np.ndarray:
        try:
            j = self.attribute_names.index(name)
        except ValueError:
            raise KeyError(f"unknown attribute {name!r}") from None
        return self.values[:, j]

    def genre_codes(self) -> np.ndarray:
        """Integer code per event, indexing into ``genre_vocabulary``."""
        lookup = {g: k for k, g in enumerate(self.genre_vocabulary)}
        return np.fromiter((lookup[g] for g in self.events.genre), dtype=np.int64, count=len(self))

    def outcomes(self) -> np.ndarray:
        """One-hot genre indicators, shape (n_events, n_genres)."""
        out = np.zeros((len(self), len(self.genre_vocabulary)), dtype=np.int8)
        out[np.arange(len(self)), self.genre_codes()] = 1
        return out

    def genre_frequencies(self) -> np.ndarray:
        """Share of all joined events falling in each genre."""
        counts = np.bincount(self.genre_codes(), minlength=len(self.genre_vocabulary))
        return counts / max(len(self), 1)


def _text(source: IO | bytes | str) -> io.TextIOBase:
    if isinstance(source, bytes):
        return io.StringIO(source.decode("utf-8"))
    if isinstance(source, str):
        return io.StringIO(source)
    if isinstance(source, io.TextIOBase):
        return source
    return io.TextIOWrapper(source, encoding="utf-8", newline="")


def _rows(source, delimiter: str) -> tuple[list[str], Iterable[tuple[int, list[str]]]]:
    reader = csv.reader(_text(source), delimiter=delimiter)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise IngestError("missing header row", line=1) from None

    def body():
        for row in reader:
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            yield reader.line_num, row

    return header, body()


def _parse_timestamp(raw: str, line: int) -> int:
    raw = raw.strip()
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        value = float(raw)
    except ValueError:
        raise IngestError(f"unparseable timestamp {raw!r}", line=line) from None
    if not math.isfinite(value) or value != int(value):
        raise IngestError(f"timestamp must be integer seconds, got {raw!r}", line=line)
    return int(value)


def parse_events(
    source: IO | bytes | str,
    genre_vocabulary: Sequence[str],
    delimiter: str = ",",
) -> EventTable:
    """Read an event log.

    The ``event_id`` column may be omitted, in which case ids 0, 1, 2, ... are
    assigned in file order.
    """
    header, rows = _rows(source, delimiter)
    required = [c for c in EVENT_COLUMNS if c != "event_id"]
    missing = [c for c in required if c not in header]
    if missing:
        raise IngestError(f"event header is missing column(s): {', '.join(missing)}", line=1)
    pos = {name: header.index(name) for name in EVENT_COLUMNS if name in header}
    has_ids = "event_id" in pos
    vocab = set(genre_vocabulary)

    cols: dict[str, list] = {name: [] for name in EVENT_COLUMNS}
    for line, row in rows:
        if len(row) != len(header):
            raise IngestError(f"expected {len(header)} fields, found {len(row)}", line=line)
        genre = row[pos["genre"]].strip()
        if genre not in vocab:
            raise IngestError(f"genre {genre!r} is not in the configured vocabulary", line=line)
        if has_ids:
            try:
                cols["event_id"].append(int(row[pos["event_id"]]))
            except ValueError:
                raise IngestError(f"unparseable event_id {row[pos['event_id']]!r}", line=line) from None
        else:
            cols["event_id"].append(len(cols["user_id"]))
        cols["user_id"].append(row[pos["user_id"]].strip())
        cols["timestamp"].append(_parse_timestamp(row[pos["timestamp"]], line))
        cols["program_id"].append(row[pos["program_id"]].strip())
        cols["genre"].append(genre)
        cols["location_id"].append(row[pos["location_id"]].strip())

    return EventTable.from_columns(**cols)


def parse_attributes(
    source: IO | bytes | str,
    attribute_names: Sequence[str] = DEFAULT_ATTRIBUTES,
    delimiter: str = ",",
) -> AttributeTable:
    header, rows = _rows(source, delimiter)
    for col in ("location_id", "timestamp", *attribute_names):
        if col not in header:
            raise IngestError(f"attribute header is missing column {col!r}", line=1)
    loc_pos = header.index("location_id")
    ts_pos = header.index("timestamp")
    attr_pos = [header.index(a) for a in attribute_names]

    locations, stamps, values = [], [], []
    for line, row in rows:
        if len(row) != len(header):
            raise IngestError(f"expected {len(header)} fields, found {len(row)}", line=line)
        rec = []
        for name, p in zip(attribute_names, attr_pos):
            raw = row[p].strip()
            try:
                v = float(raw)
            except ValueError:
                raise IngestError(f"non-numeric value {raw!r} for {name!r}", line=line) from None
            if not math.isfinite(v):
                raise IngestError(f"non-finite value {raw!r} for {name!r}", line=line)
            rec.append(v)
        locations.append(row[loc_pos].strip())
        stamps.append(_parse_timestamp(row[ts_pos], line))
        values.append(rec)

    return AttributeTable(
        location_id=np.asarray(locations, dtype=object),
        timestamp=np.asarray(stamps, dtype=np.int64),
        values=np.asarray(values, dtype=np.float64).reshape(len(stamps), len(attribute_names)),
        attribute_names=tuple(attribute_names),
    )


def join_nearest(
    events: EventTable,
    attrs: AttributeTable,
    genre_vocabulary: Sequence[str],
    window_seconds: int = DEFAULT_WINDOW_SECONDS,
) -> JoinedTable:
    """Attach to each event the same-location record closest in time.

    Equal gaps resolve to the earlier record. Events with no record within
    ``window_seconds`` are dropped; the count is kept on ``JoinedTable.dropped``.
    """
    if window_seconds <= 0:
        raise ValueError("window_seconds must be positive")
    n = len(events)
    n_attr = len(attrs.attribute_names)
    chosen = np.full(n, -1, dtype=np.int64)

    # Records sorted by (location, timestamp, values) so input row order never matters.
    keys = [attrs.values[:, j] for j in reversed(range(n_attr))]
    loc_codes, loc_uniques = _codes(attrs.location_id)
    order = np.lexsort((*keys, attrs.timestamp, loc_codes))
    sorted_loc = loc_codes[order]
    sorted_ts = attrs.timestamp[order]
    bounds = np.searchsorted(sorted_loc, np.arange(len(loc_uniques) + 1), side="left")
    loc_lookup = {loc: k for k, loc in enumerate(loc_uniques)}

    ev_loc = np.fromiter((loc_lookup.get(l, -1) for l in events.location_id), dtype=np.int64, count=n)
    for k in range(len(loc_uniques)):
        ev_idx = np.flatnonzero(ev_loc == k)
        if len(ev_idx) == 0:
            continue
        lo, hi = bounds[k], bounds[k + 1]
        ts = sorted_ts[lo:hi]
        t = events.timestamp[ev_idx]
        right = np.searchsorted(ts, t, side="left")
        left = right - 1
        # First occurrence among equal timestamps is the canonical record.
        left_first = np.searchsorted(ts, ts[np.clip(left, 0, len(ts) - 1)], side="left")
        gap_right = np.where(right < len(ts), ts[np.minimum(right, len(ts) - 1)] - t, np.iinfo(np.int64).max)
        gap_left = np.where(left >= 0, t - ts[np.clip(left, 0, len(ts) - 1)], np.iinfo(np.int64).max)
        use_left = gap_left <= gap_right
        pick = np.where(use_left, left_first, right)
        gap = np.minimum(gap_left, gap_right)
        ok = gap <= window_seconds
        chosen[ev_idx[ok]] = lo + pick[ok]

    keep = np.flatnonzero(chosen >= 0)
    keep = keep[np.argsort(events.event_id[keep], kind="stable")]
    rec = order[chosen[keep]]
    return JoinedTable(
        events=events.take(keep),
        values=attrs.values[rec],
        genre_vocabulary=tuple(genre_vocabulary),
        attribute_names=attrs.attribute_names,
        dropped=n - len(keep),
        matched_timestamp=attrs.timestamp[rec],
    )


def _codes(labels: np.ndarray) -> tuple[np.ndarray, list[str]]:
    uniques = sorted(set(labels.tolist()))
    lookup = {u: k for k, u in enumerate(uniques)}
    return np.fromiter((lookup[x] for x in labels), dtype=np.int64, count=len(labels)), uniques


def write_events(table: EventTable, path, delimiter: str = ",") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(EVENT_COLUMNS)
        for row in zip(
            table.event_id.tolist(),
            table.user_id,
            table.timestamp.tolist(),
            table.program_id,
            table.genre,
            table.location_id,
        ):
            w.writerow(row)


def write_attributes(table: AttributeTable, path, delimiter: str = ",") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow(("location_id", "timestamp", *table.attribute_names))
        for loc, ts, vals in zip(table.location_id, table.timestamp.tolist(), table.values.tolist()):
            w.writerow((loc, ts, *(repr(v) for v in vals)))
