"""HIT@k / NDCG@k and the per-domain retrieval report."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from polyview.corpus import Corpus, Document, Domain
from polyview.errors import DataError

GAIN_MODES = ("graded", "binary")
HIT_VARIANTS = ("capped_recall", "any_hit")

_GRADED = {"A": 4.0, "B": 3.0, "C": 2.0, "D": 1.0, "E": 0.0}


@dataclass(frozen=True)
class RelevanceGains:
    gains: Mapping[str, float]
    mode: str

    def __getitem__(self, doc_id: str) -> float:
        return self.gains.get(doc_id, 0.0)

    @property
    def relevant(self) -> set[str]:
        return {d for d, g in self.gains.items() if g > 0}


def gains_from_documents(docs: Sequence[Document], mode: str = "graded") -> RelevanceGains:
    """Graded: A..E -> 4..0. Binary: A or B -> 1, anything else 0. Ungraded docs get 0."""
    if mode not in GAIN_MODES:
        raise DataError(f"gain mode must be one of {GAIN_MODES}, got {mode!r}")
    out: dict[str, float] = {}
    for d in docs:
        grade = d.annotations.relevance_grade if d.annotations else None
        if mode == "graded":
            out[d.id] = _GRADED.get(grade, 0.0)
        else:
            out[d.id] = 1.0 if grade in ("A", "B") else 0.0
    return RelevanceGains(out, mode)


def _as_gains(gains: RelevanceGains | Mapping[str, float]) -> RelevanceGains:
    return gains if isinstance(gains, RelevanceGains) else RelevanceGains(dict(gains), "custom")


def is_evaluable(gains: RelevanceGains | Mapping[str, float]) -> bool:
    return bool(_as_gains(gains).relevant)


def hit_at_k(
    ranking: Sequence[str],
    gains: RelevanceGains | Mapping[str, float],
    k: int,
    variant: str = "capped_recall",
) -> float:
    """Relevant documents in the top k over min(k, #relevant).

    ``any_hit`` is the binary variant: 1 if any top-k document is relevant.
    Queries without relevant documents score 0 and should be excluded from
    averages (see ``is_evaluable``).
    """
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    g = _as_gains(gains)
    relevant = g.relevant
    if not relevant:
        return 0.0
    hits = sum(1 for d in ranking[:k] if d in relevant)
    if variant == "any_hit":
        return 1.0 if hits else 0.0
    if variant != "capped_recall":
        raise DataError(f"unknown HIT variant {variant!r}")
    return hits / min(k, len(relevant))


def dcg(gains: Sequence[float]) -> float:
    return math.fsum(g / math.log2(i + 2) for i, g in enumerate(gains))


def ndcg_at_k(ranking: Sequence[str], gains: RelevanceGains | Mapping[str, float], k: int) -> float:
    if k < 1:
        raise DataError(f"k must be >= 1, got {k}")
    g = _as_gains(gains)
    ideal = dcg(sorted(g.gains.values(), reverse=True)[:k])
    if ideal == 0:
        return 0.0
    return dcg([g[d] for d in ranking[:k]]) / ideal


@dataclass(frozen=True)
class DomainRetrieval:
    hit: float
    ndcg: float
    n_queries: int
    n_excluded: int


@dataclass
class RetrievalReport:
    k: int
    gain_mode: str
    hit_variant: str
    domains: dict[str, DomainRetrieval] = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "k": self.k,
            "gain_mode": self.gain_mode,
            "hit_variant": self.hit_variant,
            "domains": {
                name: {"hit": d.hit, "ndcg": d.ndcg, "n_queries": d.n_queries, "n_excluded": d.n_excluded}
                for name, d in self.domains.items()
            },
        }


def evaluate_retrieval(
    corpus: Corpus,
    rankings: Mapping[str, Sequence[str]],
    k: int = 3,
    mode: str = "graded",
    hit_variant: str = "capped_recall",
) -> RetrievalReport:
    """Per-domain mean HIT@k and NDCG@k in percent.

    Queries without any relevant document are left out of the means and
    counted in ``n_excluded``.
    """
    known = {q.id for q in corpus.queries}
    stray = sorted(set(rankings) - known)
    if stray:
        raise DataError(f"rankings for unknown queries: {', '.join(stray)}", code="ranking_mismatch")

    per_domain: dict[Domain, tuple[list[float], list[float], list[int]]] = {}
    for q in sorted(corpus.queries, key=lambda q: q.id):
        hits, ndcgs, excluded = per_domain.setdefault(q.domain, ([], [], [0]))
        gains = gains_from_documents(corpus.docs_for(q.id), mode)
        if not is_evaluable(gains):
            excluded[0] += 1
            continue
        if q.id not in rankings:
            raise DataError(f"no ranking for query {q.id!r}", code="ranking_mismatch")
        ranking = list(rankings[q.id])
        hits.append(hit_at_k(ranking, gains, k, hit_variant))
        ndcgs.append(ndcg_at_k(ranking, gains, k))

    report = RetrievalReport(k=k, gain_mode=mode, hit_variant=hit_variant)
    for domain in Domain:
        if domain not in per_domain:
            continue
        hits, ndcgs, excluded = per_domain[domain]
        n = len(hits)
        report.domains[domain.value] = DomainRetrieval(
            hit=100.0 * math.fsum(hits) / n if n else 0.0,
            ndcg=100.0 * math.fsum(ndcgs) / n if n else 0.0,
            n_queries=n,
            n_excluded=excluded[0],
        )
    return report


def format_table(reports: Mapping[str, RetrievalReport]) -> str:
    """Aligned text table: one row per retrieval strategy, HIT/NDCG per domain."""
    domains = [d.value for d in Domain]
    header1 = ["Retrieval"] + [f"{d:^13}" for d in domains]
    header2 = [""] + ["  HIT   NDCG" for _ in domains]
    rows = []
    for name, rep in reports.items():
        cells = [name]
        for d in domains:
            r = rep.domains.get(d)
            cells.append(f"{r.hit:5.1f}  {r.ndcg:5.1f}" if r and r.n_queries else "    -      -")
        rows.append(cells)
    width = max(len(r[0]) for r in rows + [header1])
    lines = []
    for cells in [header1, header2] + rows:
        lines.append(cells[0].ljust(width) + " | " + " | ".join(c.ljust(12) for c in cells[1:]))
    lines.insert(2, "-" * len(lines[0]))
    return "\n".join(line.rstrip() for line in lines) + "\n"
