"""Per-view document scorers.

Each scorer returns a ``ViewScore`` whose ``normalized`` value lies in
[0, 1]. Backends are interchangeable per view: lexical (BM25), embedding
providers, an LLM client, or the annotation oracle that reads the corpus's
own labels.
"""

from __future__ import annotations

import hashlib
import math
import re
from collections import Counter
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Callable, Sequence, TypeVar

import numpy as np

from polyview.corpus import AuthorityTable, Document, Query, extract_publish_date
from polyview.embeddings import EmbeddingProvider
from polyview.errors import BackendError, DataError, LogprobsUnsupportedError, MissingAnnotationError, ReplyParseError
from polyview.llmgate import LlmClient, render_prompt
from polyview.views import GRADE_SCORES, View, ViewScore, cosine_to_unit, half_life_decay, minmax

T = TypeVar("T")

TOKENIZERS = ("unicode_words", "char_bigrams")
ORACLE_ID = "oracle/annotation"
MISSING_DATE_RAW = -1.0  # raw timeliness value recorded when no date is known


class AnnotationOracle:
    """Backend that reads scores straight from document annotations."""

    scorer_id = ORACLE_ID


ORACLE = AnnotationOracle()


# ---------------------------------------------------------------------------
# BM25


@dataclass(frozen=True)
class Bm25Params:
    k1: float = 1.2
    b: float = 0.75
    tokenizer: str = "unicode_words"

    def __post_init__(self) -> None:
        if not self.k1 > 0:
            raise ValueError(f"k1 must be > 0, got {self.k1}")
        if not 0.0 <= self.b <= 1.0:
            raise ValueError(f"b must lie in [0, 1], got {self.b}")
        if self.tokenizer not in TOKENIZERS:
            raise ValueError(f"tokenizer must be one of {TOKENIZERS}, got {self.tokenizer!r}")

    @property
    def scorer_id(self) -> str:
        return f"bm25/k1={self.k1:g},b={self.b:g},tok={self.tokenizer}"


def tokenize(text: str, tokenizer: str = "unicode_words") -> list[str]:
    words = re.findall(r"\w+", text.lower())
    if tokenizer == "unicode_words":
        return words
    grams: list[str] = []
    for w in words:
        if len(w) == 1:
            grams.append(w)
        else:
            grams.extend(w[i : i + 2] for i in range(len(w) - 1))
    return grams


def bm25_raw(query_tokens: Sequence[str], doc_tokens: Sequence[Sequence[str]], k1: float, b: float) -> list[float]:
    """Okapi BM25 over a fixed candidate set, idf = ln((N - df + 0.5)/(df + 0.5) + 1)."""
    n = len(doc_tokens)
    lengths = [len(t) for t in doc_tokens]
    avgdl = sum(lengths) / n
    tfs = [Counter(t) for t in doc_tokens]
    df = Counter(term for tf in tfs for term in tf)
    idf = {term: math.log((n - c + 0.5) / (c + 0.5) + 1.0) for term, c in df.items()}

    scores = []
    for tf, dl in zip(tfs, lengths):
        norm = k1 * (1.0 - b + b * dl / avgdl) if avgdl > 0 else k1
        s = 0.0
        for term in query_tokens:
            f = tf.get(term, 0)
            if f:
                s += idf[term] * f * (k1 + 1.0) / (f + norm)
        scores.append(s)
    return scores


def score_bm25(query: Query, docs: Sequence[Document], params: Bm25Params = Bm25Params()) -> list[ViewScore]:
    if not docs:
        raise DataError(f"query {query.id!r} has no candidate documents", code="empty_candidates")
    for d in docs:
        if d.query_id != query.id:
            raise DataError(f"document {d.id!r} belongs to {d.query_id!r}, not {query.id!r}")
    q_tokens = tokenize(query.text, params.tokenizer)
    raw = bm25_raw(q_tokens, [tokenize(d.full_text, params.tokenizer) for d in docs], params.k1, params.b)
    return [
        ViewScore(query.id, d.id, View.RELEVANCE, r, n, params.scorer_id)
        for d, r, n in zip(docs, raw, minmax(raw))
    ]


# ---------------------------------------------------------------------------
# embedding views


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise BackendError(f"embedding dimensions differ: {u.shape} vs {v.shape}", code="dimension_mismatch")
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        raise BackendError("zero-norm embedding", code="zero_norm")
    return max(-1.0, min(1.0, float(np.dot(u, v)) / (nu * nv)))


def _embedding_score(query: Query, doc: Document, provider: EmbeddingProvider, view: View, prefix: str) -> ViewScore:
    c = cosine(provider.embed_query(query.text), provider.embed_document(doc.full_text))
    return ViewScore(query.id, doc.id, view, c, cosine_to_unit(c), f"{prefix}/{provider.provider_id}")


def score_relevance_embedding(query: Query, doc: Document, provider: EmbeddingProvider) -> ViewScore:
    return _embedding_score(query, doc, provider, View.RELEVANCE, "embed")


def score_relevance_oracle(query: Query, doc: Document) -> ViewScore:
    grade = doc.annotations.relevance_grade if doc.annotations else None
    if grade is None:
        raise MissingAnnotationError(f"document {doc.id!r} has no relevance_grade annotation")
    return ViewScore(query.id, doc.id, View.RELEVANCE, float("ABCDE".index(grade) + 1), GRADE_SCORES[grade], ORACLE_ID)


def score_utility(query: Query, doc: Document, backend: EmbeddingProvider | AnnotationOracle) -> ViewScore:
    if isinstance(backend, AnnotationOracle):
        u = doc.annotations.utility if doc.annotations else None
        if u is None:
            raise MissingAnnotationError(f"document {doc.id!r} has no utility annotation")
        return ViewScore(query.id, doc.id, View.UTILITY, u, u, ORACLE_ID)
    return _embedding_score(query, doc, backend, View.UTILITY, "utility-embed")


# ---------------------------------------------------------------------------
# LLM-graded views

_JUDGE_RE = re.compile(r"Judge\s*[:：]?", re.IGNORECASE)
_GRADE_TOKEN = re.compile(r"(?<![A-Za-z])([A-E])(?![A-Za-z])")
_BINARY_TOKEN = re.compile(r"(?<![0-9.])([01])(?![0-9.])")


def _parse_judged(text: str, token: re.Pattern, allowed: str, what: str) -> str:
    m = _JUDGE_RE.search(text)
    if m:
        t = token.search(text, m.end())
        if t:
            return t.group(1)
    else:
        bare = text.strip().rstrip(".。")
        if len(bare) == 1 and bare in allowed:
            return bare
    raise ReplyParseError(f"no {what} found in reply", text)


def parse_grade(text: str) -> str:
    """First standalone A-E after ``Judge``, or the whole reply being one letter."""
    return _parse_judged(text, _GRADE_TOKEN, "ABCDE", "A-E grade")


def parse_binary(text: str) -> int:
    return int(_parse_judged(text, _BINARY_TOKEN, "01", "0/1 judgement"))


def ask_with_retry(client: LlmClient, prompt, parse: Callable[[str], T]) -> T:
    """One retry on a parse failure; the second failure propagates."""
    try:
        return parse(client.chat(prompt).text)
    except ReplyParseError:
        return parse(client.chat(prompt).text)


def grade_relevance_llm(query: Query, doc: Document, client: LlmClient, template_dir: str | Path | None = None) -> ViewScore:
    prompt = render_prompt("relevance_grade", {"QUESTION": query.text, "CONTEXTS": [doc]}, template_dir)
    grade = ask_with_retry(client, prompt, parse_grade)
    return ViewScore(
        query.id, doc.id, View.RELEVANCE, float("ABCDE".index(grade) + 1), GRADE_SCORES[grade], f"llm-grade/{client.client_id}"
    )


def score_supplement(
    query: Query,
    doc: Document,
    backend: LlmClient | AnnotationOracle,
    template_dir: str | Path | None = None,
) -> ViewScore:
    if isinstance(backend, AnnotationOracle):
        s = doc.annotations.supplement if doc.annotations else None
        if s is None:
            raise MissingAnnotationError(f"document {doc.id!r} has no supplement annotation")
        return ViewScore(query.id, doc.id, View.SUPPLEMENT, float(s), float(s), ORACLE_ID)
    prompt = render_prompt("supplement_binary", {"QUESTION": query.text, "CONTEXTS": [doc]}, template_dir)
    flag = ask_with_retry(backend, prompt, parse_binary)
    return ViewScore(query.id, doc.id, View.SUPPLEMENT, float(flag), float(flag), f"llm-supplement/{backend.client_id}")


@dataclass(frozen=True)
class UtilityLabel:
    query_id: str
    doc_id: str
    with_ctx_meanlp: float
    without_ctx_meanlp: float
    delta: float
    utility: float

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "doc_id": self.doc_id,
            "with_ctx_meanlp": self.with_ctx_meanlp,
            "without_ctx_meanlp": self.without_ctx_meanlp,
            "delta": self.delta,
            "utility": self.utility,
        }


def _mean_logprob(client: LlmClient, prompt) -> float:
    reply = client.chat(prompt, want_logprobs=True)
    if not reply.token_logprobs:
        raise BackendError("reply carried no token log-probabilities", code="missing_logprobs")
    return math.fsum(reply.token_logprobs) / len(reply.token_logprobs)


def label_utility_llm(
    query: Query,
    doc: Document,
    answer: str,
    client: LlmClient,
    template_dir: str | Path | None = None,
) -> UtilityLabel:
    """Answer likelihood with and without the document in context.

    A positive ``delta`` means the document makes the reference answer more
    likely. ``utility`` is the per-token geometric-mean probability of the
    answer given the document.
    """
    if not answer or not answer.strip():
        raise DataError("reference answer is empty", code="empty_answer")
    if not client.supports_logprobs:
        raise LogprobsUnsupportedError(f"client {client.client_id} does not return token log-probabilities")
    with_p = render_prompt("utility_with_ctx", {"QUESTION": query.text, "CONTEXTS": [doc], "ANSWER": answer}, template_dir)
    without_p = render_prompt("utility_without_ctx", {"QUESTION": query.text, "ANSWER": answer}, template_dir)
    with_lp = _mean_logprob(client, with_p)
    without_lp = _mean_logprob(client, without_p)
    return UtilityLabel(query.id, doc.id, with_lp, without_lp, with_lp - without_lp, min(1.0, math.exp(with_lp)))


# ---------------------------------------------------------------------------
# metadata views


def authority_scorer_id(table: AuthorityTable) -> str:
    digest = hashlib.sha256(repr(sorted(table.entries.items())).encode("utf-8")).hexdigest()[:12]
    return f"authority/max={table.max_level},default={table.default_level},table={digest}"


def score_authority(doc: Document, table: AuthorityTable, query_id: str | None = None) -> ViewScore:
    level = doc.annotations.authority_level if doc.annotations else None
    if level is None:
        level = table.level_of(doc.source)
    return ViewScore(
        query_id or doc.query_id, doc.id, View.AUTHORITY, float(level), min(1.0, level / table.max_level), authority_scorer_id(table)
    )


def timeliness_scorer_id(reference_date: date, half_life_days: float, missing_date_score: float) -> str:
    return f"timeliness/hl={half_life_days:g},missing={missing_date_score:g},ref={reference_date.isoformat()}"


def resolve_publish_date(doc: Document, reference_date: date) -> date | None:
    """Annotated date first, else the first date in the text.

    Extracted dates after the reference date are treated as extraction noise.
    """
    if doc.publish_date is not None:
        if doc.publish_date > reference_date:
            raise DataError(f"document {doc.id!r} published {doc.publish_date}, after {reference_date}", code="future_date")
        return doc.publish_date
    found = extract_publish_date(doc.full_text)
    if found is not None and found > reference_date:
        return None
    return found


def score_timeliness(
    doc: Document,
    reference_date: date,
    half_life_days: float = 365.0,
    missing_date_score: float = 0.5,
    query_id: str | None = None,
) -> ViewScore:
    if not half_life_days > 0:
        raise ValueError("half_life_days must be > 0")
    sid = timeliness_scorer_id(reference_date, half_life_days, missing_date_score)
    published = resolve_publish_date(doc, reference_date)
    if published is None:
        return ViewScore(query_id or doc.query_id, doc.id, View.TIMELINESS, MISSING_DATE_RAW, missing_date_score, sid)
    age = float((reference_date - published).days)
    return ViewScore(query_id or doc.query_id, doc.id, View.TIMELINESS, age, half_life_decay(age, half_life_days), sid)
