"""Tail-quantile treatment assignment on one contextual attribute."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction

import numpy as np

DEFAULT_QUANTILE = 0.2


class Tail(str, Enum):
    LOW = "low"
    HIGH = "high"


@dataclass(frozen=True)
class TreatmentSpec:
    attribute: str
    tail: Tail
    quantile: float = DEFAULT_QUANTILE

    def __post_init__(self):
        if not isinstance(self.tail, Tail):
            object.__setattr__(self, "tail", Tail(str(self.tail).lower()))
        if not 0 < self.quantile <= 0.5:
            raise ValueError(f"quantile must lie in (0, 0.5], got {self.quantile}")

    @property
    def label(self) -> str:
        return f"{self.attribute}:{self.tail.value}"


@dataclass(frozen=True)
class TreatmentAssignment:
    treated: np.ndarray  # bool per event, aligned with the input values
    threshold: float
    spec: TreatmentSpec

    @property
    def n_treated(self) -> int:
        return int(self.treated.sum())

    @property
    def control(self) -> np.ndarray:
        return ~self.treated


def default_specs(quantile: float = DEFAULT_QUANTILE) -> list[TreatmentSpec]:
    """The eight weather treatments and the tail each one treats."""
    tails = [
        ("temperature", Tail.HIGH),
        ("feels_like_temperature", Tail.HIGH),
        ("wind_speed", Tail.HIGH),
        ("cloud_cover", Tail.HIGH),
        ("pressure", Tail.LOW),
        ("humidity", Tail.LOW),
        ("visibility", Tail.LOW),
        ("precipitation", Tail.HIGH),
    ]
    return [TreatmentSpec(attr, tail, quantile) for attr, tail in tails]


def treated_count(n: int, quantile: float) -> int:
    # Decimal reading of the quantile, so 0.29 * 100 gives 29 and not 28.
    return math.floor(Fraction(repr(float(quantile))) * n)


def assign(values, spec: TreatmentSpec, event_ids=None) -> TreatmentAssignment:
    """Treat exactly floor(quantile * n) events from the requested tail.

    Ties at the cut are resolved by ascending event id (input position when no
    ids are given).
    """
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    if not np.all(np.isfinite(values)):
        raise ValueError("attribute values must be finite")
    if n < math.ceil(1 / spec.quantile):
        raise ValueError(f"need at least {math.ceil(1 / spec.quantile)} events for quantile {spec.quantile}, got {n}")
    ids = np.arange(n) if event_ids is None else np.asarray(event_ids)
    k = treated_count(n, spec.quantile)

    key = values if spec.tail is Tail.LOW else -values
    order = np.lexsort((ids, key))
    treated = np.zeros(n, dtype=bool)
    treated[order[:k]] = True
    return TreatmentAssignment(treated=treated, threshold=float(values[order[k - 1]]), spec=spec)
