"""View identifiers, the per-view score record, and score normalizations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence


class View(str, Enum):
    RELEVANCE = "relevance"
    UTILITY = "utility"
    SUPPLEMENT = "supplement"
    AUTHORITY = "authority"
    TIMELINESS = "timeliness"


# Weight vectors are ordered like this tuple.
VIEW_ORDER: tuple[View, ...] = (View.RELEVANCE, View.UTILITY, View.SUPPLEMENT, View.AUTHORITY, View.TIMELINESS)

GRADE_SCORES = {"A": 1.0, "B": 0.75, "C": 0.5, "D": 0.25, "E": 0.0}


@dataclass(frozen=True)
class ViewScore:
    query_id: str
    doc_id: str
    view: View
    raw: float
    normalized: float
    scorer_id: str

    def __post_init__(self) -> None:
        if not 0.0 <= self.normalized <= 1.0:
            raise ValueError(f"normalized score {self.normalized} outside [0, 1]")
        if not self.scorer_id:
            raise ValueError("scorer_id must be non-empty")

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.query_id, self.doc_id, self.view.value, self.scorer_id)

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "doc_id": self.doc_id,
            "view": self.view.value,
            "scorer_id": self.scorer_id,
            "raw": self.raw,
            "normalized": self.normalized,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ViewScore":
        return cls(
            query_id=rec["query_id"],
            doc_id=rec["doc_id"],
            view=View(rec["view"]),
            raw=float(rec["raw"]),
            normalized=float(rec["normalized"]),
            scorer_id=rec["scorer_id"],
        )


def clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


def cosine_to_unit(cos: float) -> float:
    """Affine map of a cosine in [-1, 1] onto [0, 1]."""
    return clamp01((1.0 + cos) / 2.0)


def half_life_decay(age_days: float, half_life_days: float) -> float:
    return clamp01(math.pow(2.0, -max(age_days, 0.0) / half_life_days))


def minmax(values: Sequence[float]) -> list[float]:
    """Rescale to [0, 1]; a constant sequence maps to 0.5 everywhere."""
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.5] * len(values)
    span = hi - lo
    return [clamp01((v - lo) / span) for v in values]
