"""Fusing per-view scores and picking a topic-diverse top-k."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from polyview.errors import ConfigError, DataError, MissingViewError
from polyview.views import VIEW_ORDER, View, clamp01, cosine_to_unit, minmax

GEOMETRIC_FLOOR = 1e-6
MODES = ("linear", "geometric")

ViewTable = Mapping[str, Mapping[View, float]]


@dataclass(frozen=True)
class WeightProfile:
    """View weights in ``VIEW_ORDER`` plus fusion and selection settings."""

    profile_id: str
    weights: tuple[float, ...]
    mode: str = "linear"
    composibility: bool = True
    k: int = 3
    eps: float = 0.3
    min_pts: int = 2

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if len(self.weights) != len(VIEW_ORDER):
            raise ConfigError(f"profile {self.profile_id!r}: expected {len(VIEW_ORDER)} weights, got {len(self.weights)}")
        if any(not math.isfinite(w) or w < 0 for w in self.weights):
            raise ConfigError(f"profile {self.profile_id!r}: weights must be finite and >= 0")
        if not any(w > 0 for w in self.weights):
            raise ConfigError(f"profile {self.profile_id!r}: at least one weight must be > 0")
        if self.mode not in MODES:
            raise ConfigError(f"profile {self.profile_id!r}: mode must be one of {MODES}")
        if self.k < 1:
            raise ConfigError(f"profile {self.profile_id!r}: k must be >= 1")
        if not self.eps > 0 or self.min_pts < 1:
            raise ConfigError(f"profile {self.profile_id!r}: eps must be > 0 and min_pts >= 1")

    def weight_map(self) -> dict[View, float]:
        return dict(zip(VIEW_ORDER, self.weights))

    def active_views(self) -> list[View]:
        return [v for v, w in self.weight_map().items() if w > 0]

    def to_record(self) -> dict:
        return {
            "profile_id": self.profile_id,
            "weights": list(self.weights),
            "mode": self.mode,
            "composibility": self.composibility,
            "k": self.k,
            "eps": self.eps,
            "min_pts": self.min_pts,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "WeightProfile":
        try:
            return cls(
                profile_id=str(rec["profile_id"]),
                weights=tuple(rec["weights"]),
                mode=rec.get("mode", "linear"),
                composibility=bool(rec.get("composibility", True)),
                k=int(rec.get("k", 3)),
                eps=float(rec.get("eps", 0.3)),
                min_pts=int(rec.get("min_pts", 2)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad weight profile record {rec!r}: {exc}") from None


def load_profiles(path: str | Path | None = None) -> dict[str, WeightProfile]:
    """Read named profiles (one JSON record per line); default is the shipped presets."""
    if path is None:
        text = resources.files("polyview").joinpath("data/profiles.jsonl").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    profiles: dict[str, WeightProfile] = {}
    for line_no, raw in enumerate(text.splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}:{line_no}: {exc.msg}") from None
        p = WeightProfile.from_record(rec)
        if p.profile_id in profiles:
            raise ConfigError(f"{path}:{line_no}: duplicate profile {p.profile_id!r}")
        profiles[p.profile_id] = p
    return profiles


PRESETS = load_profiles()


# ---------------------------------------------------------------------------
# normalization and fusion


def normalize_scores(
    raw_scores: ViewTable,
    method: str = "fixed",
    transforms: Mapping[View, Callable[[float], float]] | None = None,
) -> dict[str, dict[View, float]]:
    """Bring raw per-view values onto [0, 1] for one query's candidates.

    ``fixed`` applies a per-view transform (cosine views are mapped
    affinely, everything else is clamped unless ``transforms`` says
    otherwise). ``minmax`` rescales each view across the candidates.
    """
    if not raw_scores:
        raise DataError("normalize_scores needs at least one candidate")
    doc_ids = list(raw_scores)
    out: dict[str, dict[View, float]] = {d: {} for d in doc_ids}
    views = {v for per_doc in raw_scores.values() for v in per_doc}
    if method == "fixed":
        table = {View.RELEVANCE: cosine_to_unit, View.UTILITY: cosine_to_unit}
        table.update(transforms or {})
        for d in doc_ids:
            for v, x in raw_scores[d].items():
                out[d][v] = clamp01(table.get(v, clamp01)(x))
    elif method == "minmax":
        for v in views:
            present = [d for d in doc_ids if v in raw_scores[d]]
            for d, x in zip(present, minmax([raw_scores[d][v] for d in present])):
                out[d][v] = x
    else:
        raise ConfigError(f"unknown normalization method {method!r}")
    return out


def _checked(profile: WeightProfile, views: ViewTable) -> list[tuple[str, list[tuple[float, float]]]]:
    rows = []
    wm = profile.weight_map()
    for doc_id in views:
        pairs = []
        for v, w in wm.items():
            if w == 0:
                continue
            if v not in views[doc_id]:
                raise MissingViewError(doc_id, v.value)
            pairs.append((w, views[doc_id][v]))
        rows.append((doc_id, pairs))
    return rows


def integrate_linear(profile: WeightProfile, views: ViewTable) -> dict[str, float]:
    """Weighted sum of view scores; weights are used as given."""
    return {doc_id: math.fsum(w * s for w, s in pairs) for doc_id, pairs in _checked(profile, views)}


def integrate_geometric(profile: WeightProfile, views: ViewTable) -> dict[str, float]:
    """Weighted geometric mean with weights renormalized to sum to 1.

    Scores are floored at ``GEOMETRIC_FLOOR`` so a single zero cannot veto
    a document outright.
    """
    total = math.fsum(profile.weights)
    out = {}
    for doc_id, pairs in _checked(profile, views):
        out[doc_id] = math.prod(max(min(s, 1.0), GEOMETRIC_FLOOR) ** (w / total) for w, s in pairs)
    return out


def integrate(profile: WeightProfile, views: ViewTable) -> dict[str, float]:
    if profile.mode == "geometric":
        return integrate_geometric(profile, views)
    return integrate_linear(profile, views)


# ---------------------------------------------------------------------------
# topics


def _distance_matrix(vectors: np.ndarray, metric: str) -> np.ndarray:
    if metric == "cosine":
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0):
            raise DataError("cannot cluster a zero-norm embedding", code="zero_norm")
        unit = vectors / norms[:, None]
        return 1.0 - np.clip(unit @ unit.T, -1.0, 1.0)
    if metric == "euclidean":
        diff = vectors[:, None, :] - vectors[None, :, :]
        return np.sqrt((diff**2).sum(axis=-1))
    raise ConfigError(f"unknown metric {metric!r}")


def assign_topics(
    embeddings: Mapping[str, Sequence[float]],
    eps: float = 0.3,
    min_pts: int = 2,
    metric: str = "cosine",
) -> dict[str, int]:
    """Density clustering (DBSCAN) of candidate documents into topics.

    A point's neighbourhood is every point within ``eps`` including itself;
    core points have at least ``min_pts`` neighbours. Clusters are grown from
    core points in ascending doc-id order, so a border point reachable from
    two clusters joins the one seeded first. Noise points get singleton
    topic ids numbered after the clusters, again in doc-id order.
    """
    if not eps > 0:
        raise ConfigError("eps must be > 0")
    if min_pts < 1:
        raise ConfigError("min_pts must be >= 1")
    ids = sorted(embeddings)
    if not ids:
        return {}
    arrays = [np.asarray(embeddings[i], dtype=float).ravel() for i in ids]
    if len({a.shape for a in arrays}) != 1:
        raise DataError("embeddings have differing dimensions", code="dimension_mismatch")
    dist = _distance_matrix(np.vstack(arrays), metric)
    n = len(ids)
    neighbours = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = [len(nb) >= min_pts for nb in neighbours]

    label = [-1] * n
    next_id = 0
    for i in range(n):
        if label[i] != -1 or not core[i]:
            continue
        label[i] = next_id
        frontier = [i]
        while frontier:
            p = frontier.pop()
            for q in neighbours[p]:
                if label[q] == -1:
                    label[q] = next_id
                    if core[q]:
                        frontier.append(q)
        next_id += 1
    for i in range(n):
        if label[i] == -1:
            label[i] = next_id
            next_id += 1
    return {doc_id: label[i] for i, doc_id in enumerate(ids)}


# ---------------------------------------------------------------------------
# selection


@dataclass(frozen=True)
class RankedEntry:
    doc_id: str
    score: float
    topic_id: int


@dataclass(frozen=True)
class RankedList:
    query_id: str
    profile_id: str
    entries: tuple[RankedEntry, ...] = field(default_factory=tuple)

    @property
    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "profile_id": self.profile_id,
            "entries": [{"doc_id": e.doc_id, "score": e.score, "topic_id": e.topic_id} for e in self.entries],
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "RankedList":
        return cls(
            rec["query_id"],
            rec["profile_id"],
            tuple(RankedEntry(e["doc_id"], float(e["score"]), int(e["topic_id"])) for e in rec["entries"]),
        )


def _order_key(scores: Mapping[str, float]) -> Callable[[str], tuple[float, str]]:
    return lambda d: (-scores[d], d)


def select_topk(
    scores: Mapping[str, float],
    topics: Mapping[str, int],
    k: int,
    composibility: bool,
    *,
    query_id: str = "",
    profile_id: str = "",
) -> RankedList:
    """Top-k by score (ties by doc id), optionally forcing topic coverage.

    With ``composibility`` the best document of each topic is taken first,
    topics ordered by that best score, until ``min(k, #topics)`` topics are
    covered; the remaining slots follow global score order.
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}", code="bad_k")
    if set(scores) != set(topics):
        raise DataError("scores and topics cover different documents")
    key = _order_key(scores)
    ranked = sorted(scores, key=key)
    if composibility:
        best: dict[int, str] = {}
        for d in ranked:
            best.setdefault(topics[d], d)
        leaders = sorted(best.values(), key=key)[: min(k, len(best))]
        picked = set(leaders)
        fill = [d for d in ranked if d not in picked][: k - len(leaders)]
        chosen = sorted(leaders + fill, key=key)
    else:
        chosen = ranked[:k]
    return RankedList(query_id, profile_id, tuple(RankedEntry(d, scores[d], topics[d]) for d in chosen))


def topic_count(docs: Iterable[str], topics: Mapping[str, int]) -> int:
    return len({topics[d] for d in docs})
