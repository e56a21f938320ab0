"""Query/document data model, JSONL loading, validation and synthetic fixtures."""

from __future__ import annotations

import json
import math
import random
import re
from dataclasses import dataclass, field
from datetime import date, timedelta
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from polyview.errors import CorpusError

GRADES = ("A", "B", "C", "D", "E")


class Domain(str, Enum):
    CARE = "CARE"
    INQUIRY = "INQUIRY"
    POLICY = "POLICY"


@dataclass(frozen=True)
class AnnotationSet:
    relevance_grade: str | None = None
    supplement: int | None = None
    utility: float | None = None
    authority_level: int | None = None


@dataclass(frozen=True)
class Query:
    id: str
    domain: Domain
    intent: str
    text: str
    ground_truth: str | None = None


@dataclass(frozen=True)
class Document:
    id: str
    query_id: str
    text: str
    source: str
    title: str | None = None
    publish_date: date | None = None
    annotations: AnnotationSet | None = None

    @property
    def full_text(self) -> str:
        """Title and body as one string, the unit that scorers embed."""
        if self.title:
            return f"{self.title}\n{self.text}"
        return self.text


@dataclass(frozen=True)
class Corpus:
    queries: tuple[Query, ...]
    documents: tuple[Document, ...]
    reference_date: date

    def query(self, query_id: str) -> Query:
        for q in self.queries:
            if q.id == query_id:
                return q
        raise KeyError(query_id)

    def docs_for(self, query_id: str) -> list[Document]:
        return [d for d in self.documents if d.query_id == query_id]


@dataclass(frozen=True)
class Finding:
    record_id: str
    rule: str
    detail: str = ""


@dataclass
class ValidationReport:
    findings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.findings

    def rules(self) -> list[str]:
        return [f.rule for f in self.findings]


@dataclass(frozen=True)
class AuthorityTable:
    entries: Mapping[str, int]
    max_level: int
    default_level: int = 0

    def __post_init__(self) -> None:
        if self.max_level < 1:
            raise ValueError("max_level must be >= 1")
        if not 0 <= self.default_level <= self.max_level:
            raise ValueError("default_level must lie in [0, max_level]")
        for source, level in self.entries.items():
            if not 0 <= level <= self.max_level:
                raise ValueError(f"level {level} of {source!r} outside [0, {self.max_level}]")

    def level_of(self, source: str) -> int:
        return self.entries.get(source, self.default_level)


# ---------------------------------------------------------------------------
# record parsing


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


class _RecordReader:
    """Field accessors that raise line-anchored ``CorpusError``s."""

    def __init__(self, record: Any, path: str, line: int) -> None:
        self.path = path
        self.line = line
        if not isinstance(record, dict):
            self.fail("not_an_object", f"expected a JSON object, got {type(record).__name__}")
        self.record: dict = record
        self.record_id: str | None = record.get("id") if isinstance(record.get("id"), str) else None

    def fail(self, code: str, message: str, field: str | None = None) -> None:
        raise CorpusError(
            code, message, path=self.path, line=self.line, field=field, record_id=getattr(self, "record_id", None)
        )

    def string(self, key: str, *, required: bool = True, nonempty: bool = True) -> str | None:
        value = self.record.get(key)
        if value is None:
            if required:
                self.fail("missing_field", "required field absent", key)
            return None
        if not isinstance(value, str):
            self.fail("type_error", f"expected string, got {type(value).__name__}", key)
        if nonempty and not value.strip():
            self.fail("empty_value", "must be a non-empty string", key)
        return value

    def iso_date(self, key: str) -> date | None:
        raw = self.string(key, required=False)
        if raw is None:
            return None
        if not re.fullmatch(r"[0-9]{4}-[0-9]{2}-[0-9]{2}", raw):
            self.fail("type_error", f"expected YYYY-MM-DD date, got {raw!r}", key)
        try:
            return date.fromisoformat(raw)
        except ValueError:
            self.fail("range_error", f"invalid calendar date {raw!r}", key)
        return None  # pragma: no cover


def _parse_annotations(reader: _RecordReader) -> AnnotationSet | None:
    raw = reader.record.get("annotations")
    if raw is None:
        return None
    if not isinstance(raw, dict):
        reader.fail("type_error", "expected an object", "annotations")

    grade = raw.get("relevance_grade")
    if grade is not None and grade not in GRADES:
        reader.fail("range_error", f"relevance_grade must be one of A-E, got {grade!r}", "annotations.relevance_grade")

    supplement = raw.get("supplement")
    if supplement is not None:
        if isinstance(supplement, bool):
            supplement = int(supplement)
        if not _is_int(supplement) or supplement not in (0, 1):
            reader.fail("range_error", f"supplement must be 0 or 1, got {supplement!r}", "annotations.supplement")

    utility = raw.get("utility")
    if utility is not None:
        if not _is_number(utility) or not math.isfinite(utility) or not 0.0 <= utility <= 1.0:
            reader.fail("range_error", f"utility must be a real in [0, 1], got {utility!r}", "annotations.utility")
        utility = float(utility)

    level = raw.get("authority_level")
    if level is not None and (not _is_int(level) or level < 0):
        reader.fail("range_error", f"authority_level must be an integer >= 0, got {level!r}", "annotations.authority_level")

    return AnnotationSet(relevance_grade=grade, supplement=supplement, utility=utility, authority_level=level)


def parse_query(record: Any, *, path: str = "<memory>", line: int = 0) -> Query:
    reader = _RecordReader(record, path, line)
    qid = reader.string("id")
    domain_raw = reader.string("domain")
    try:
        domain = Domain(domain_raw)
    except ValueError:
        reader.fail("unknown_domain", f"domain must be one of CARE, INQUIRY, POLICY, got {domain_raw!r}", "domain")
    intent = reader.string("intent", nonempty=False)
    text = reader.string("text")
    ground_truth = reader.string("ground_truth", required=False, nonempty=False)
    return Query(id=qid, domain=domain, intent=intent, text=text, ground_truth=ground_truth)


def parse_document(record: Any, *, path: str = "<memory>", line: int = 0) -> Document:
    reader = _RecordReader(record, path, line)
    return Document(
        id=reader.string("id"),
        query_id=reader.string("query_id"),
        title=reader.string("title", required=False, nonempty=False),
        text=reader.string("text"),
        source=reader.string("source"),
        publish_date=reader.iso_date("publish_date"),
        annotations=_parse_annotations(reader),
    )


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, Any]]:
    """Yield ``(line_number, decoded_json)`` for every non-blank line.

    Raises ``CorpusError`` carrying the 1-based line number on undecodable
    bytes or invalid JSON.
    """
    path_str = str(path)
    data = Path(path).read_bytes()
    for line_no, raw in enumerate(data.split(b"\n"), start=1):
        if not raw.strip():
            continue
        try:
            text = raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CorpusError("encoding_error", f"line is not valid UTF-8 ({exc.reason})", path=path_str, line=line_no) from None
        try:
            yield line_no, json.loads(text)
        except (ValueError, RecursionError) as exc:  # ValueError also covers over-long integer literals
            if isinstance(exc, json.JSONDecodeError):
                msg = exc.msg
            else:
                msg = "nesting too deep" if isinstance(exc, RecursionError) else str(exc)
            raise CorpusError("malformed_json", msg, path=path_str, line=line_no) from None


# ---------------------------------------------------------------------------
# validation


def validate_corpus(corpus: Corpus) -> ValidationReport:
    """Check every type invariant; problems come back as findings, never raised."""
    report = ValidationReport()
    add = report.findings.append

    query_ids: set[str] = set()
    for q in corpus.queries:
        if q.id in query_ids:
            add(Finding(q.id, "duplicate_id", "query id repeated"))
        query_ids.add(q.id)
        if not isinstance(q.domain, Domain):
            add(Finding(q.id, "unknown_domain", repr(q.domain)))
        if not q.text or not q.text.strip():
            add(Finding(q.id, "empty_text"))

    doc_ids: set[str] = set()
    for d in corpus.documents:
        if d.id in doc_ids:
            add(Finding(d.id, "duplicate_id", "document id repeated"))
        doc_ids.add(d.id)
        if d.query_id not in query_ids:
            add(Finding(d.id, "dangling_reference", f"query {d.query_id!r} does not exist"))
        if not d.text or not d.text.strip():
            add(Finding(d.id, "empty_text"))
        if d.publish_date is not None and d.publish_date > corpus.reference_date:
            add(Finding(d.id, "future_date", f"{d.publish_date} is after {corpus.reference_date}"))
        a = d.annotations
        if a is not None:
            bad = (
                (a.relevance_grade is not None and a.relevance_grade not in GRADES)
                or (a.supplement is not None and a.supplement not in (0, 1))
                or (a.utility is not None and not (math.isfinite(a.utility) and 0.0 <= a.utility <= 1.0))
                or (a.authority_level is not None and a.authority_level < 0)
            )
            if bad:
                add(Finding(d.id, "annotation_range", repr(a)))
    return report


# ---------------------------------------------------------------------------
# loading and serialization


def load_corpus(queries_path: str | Path, docs_path: str | Path, reference_date: date) -> Corpus:
    queries: list[Query] = []
    seen_q: set[str] = set()
    for line_no, record in iter_jsonl(queries_path):
        q = parse_query(record, path=str(queries_path), line=line_no)
        if q.id in seen_q:
            raise CorpusError("duplicate_id", f"query id {q.id!r} repeated", path=str(queries_path), line=line_no, field="id", record_id=q.id)
        seen_q.add(q.id)
        queries.append(q)

    documents: list[Document] = []
    seen_d: set[str] = set()
    for line_no, record in iter_jsonl(docs_path):
        d = parse_document(record, path=str(docs_path), line=line_no)
        anchor = dict(path=str(docs_path), line=line_no, record_id=d.id)
        if d.id in seen_d:
            raise CorpusError("duplicate_id", f"document id {d.id!r} repeated", field="id", **anchor)
        if d.query_id not in seen_q:
            raise CorpusError("dangling_reference", f"query {d.query_id!r} does not exist", field="query_id", **anchor)
        if d.publish_date is not None and d.publish_date > reference_date:
            raise CorpusError("future_date", f"{d.publish_date} is after reference date {reference_date}", field="publish_date", **anchor)
        seen_d.add(d.id)
        documents.append(d)

    corpus = Corpus(tuple(queries), tuple(documents), reference_date)
    report = validate_corpus(corpus)
    if not report.ok:  # every rule above is enforced per line, so this is a safety net
        first = report.findings[0]
        raise CorpusError(first.rule, first.detail, record_id=first.record_id)
    return corpus


def query_to_record(q: Query) -> dict:
    rec: dict[str, Any] = {"id": q.id, "domain": q.domain.value, "intent": q.intent, "text": q.text}
    if q.ground_truth is not None:
        rec["ground_truth"] = q.ground_truth
    return rec


def document_to_record(d: Document) -> dict:
    rec: dict[str, Any] = {"id": d.id, "query_id": d.query_id}
    if d.title is not None:
        rec["title"] = d.title
    rec["text"] = d.text
    rec["source"] = d.source
    if d.publish_date is not None:
        rec["publish_date"] = d.publish_date.isoformat()
    if d.annotations is not None:
        ann = {
            k: v
            for k, v in (
                ("relevance_grade", d.annotations.relevance_grade),
                ("supplement", d.annotations.supplement),
                ("utility", d.annotations.utility),
                ("authority_level", d.annotations.authority_level),
            )
            if v is not None
        }
        rec["annotations"] = ann
    return rec


def dumps_jsonl(records: Iterable[Mapping]) -> str:
    return "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in records)


def write_corpus(corpus: Corpus, queries_path: str | Path, docs_path: str | Path) -> None:
    Path(queries_path).write_text(dumps_jsonl(query_to_record(q) for q in corpus.queries), encoding="utf-8")
    Path(docs_path).write_text(dumps_jsonl(document_to_record(d) for d in corpus.documents), encoding="utf-8")


# ---------------------------------------------------------------------------
# authority table


def _parse_authority_line(text: str, path: str, line_no: int) -> dict:
    try:
        obj = json.loads(text)
    except (ValueError, RecursionError):
        obj = None
    if isinstance(obj, dict):
        return obj
    parts = text.split()
    if len(parts) != 2:
        raise CorpusError("malformed_line", "expected a {source, level} record or 'source level'", path=path, line=line_no)
    try:
        level = int(parts[1])
    except ValueError:
        raise CorpusError("type_error", f"level {parts[1]!r} is not an integer", path=path, line=line_no, field="level") from None
    return {"source": parts[0], "level": level}


def load_authority_table(path: str | Path, *, max_level: int | None = None) -> AuthorityTable:
    """Read a source -> authority level table.

    The first line may be a header object ``{"max_level": .., "default_level": ..}``.
    Without an explicit ``max_level`` the largest level present is used.
    """
    path_str = str(path)
    entries: dict[str, int] = {}
    header: dict = {}
    try:
        data = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise CorpusError("encoding_error", "table is not valid UTF-8", path=path_str) from None

    first = True
    for line_no, raw in enumerate(data.splitlines(), start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        rec = _parse_authority_line(text, path_str, line_no)
        if first and "source" not in rec:
            header = rec
            first = False
            continue
        first = False
        source, level = rec.get("source"), rec.get("level")
        if not isinstance(source, str) or not source:
            raise CorpusError("missing_field", "source must be a non-empty string", path=path_str, line=line_no, field="source")
        if not _is_int(level):
            raise CorpusError("type_error", f"level must be an integer, got {level!r}", path=path_str, line=line_no, field="level")
        if level < 0:
            raise CorpusError("negative_level", f"{source!r} has level {level}", path=path_str, line=line_no, field="level")
        if source in entries:
            raise CorpusError("duplicate_id", f"source {source!r} repeated", path=path_str, line=line_no, field="source")
        entries[source] = level

    if not entries:
        raise CorpusError("empty_authority_table", "no source entries", path=path_str)

    top = max_level if max_level is not None else header.get("max_level", max(entries.values()))
    default = header.get("default_level", 0)
    if not _is_int(top) or top < 1:
        raise CorpusError("range_error", f"max_level must be an integer >= 1, got {top!r}", path=path_str, field="max_level")
    if not _is_int(default) or not 0 <= default <= top:
        raise CorpusError("range_error", f"default_level must lie in [0, {top}], got {default!r}", path=path_str, field="default_level")
    for source, level in entries.items():
        if level > top:
            raise CorpusError("level_above_max", f"{source!r} has level {level} > max_level {top}", path=path_str, field="level")
    return AuthorityTable(entries=entries, max_level=top, default_level=default)


def authority_table_records(table: AuthorityTable) -> list[dict]:
    header = {"max_level": table.max_level, "default_level": table.default_level}
    return [header] + [{"source": s, "level": lvl} for s, lvl in table.entries.items()]


# ---------------------------------------------------------------------------
# publish date extraction

_MONTHS = {
    name: i
    for i, name in enumerate(
        ["january", "february", "march", "april", "may", "june", "july",
         "august", "september", "october", "november", "december"],
        start=1,
    )
}

_DATE_RE = re.compile(
    r"(?<![0-9])(?P<iy>[0-9]{4})-(?P<im>[0-9]{2})-(?P<id>[0-9]{2})(?![0-9])"
    r"|(?<![0-9])(?P<sy>[0-9]{4})/(?P<sm>[0-9]{1,2})/(?P<sd>[0-9]{1,2})(?![0-9])"
    r"|(?<![0-9])(?P<cy>[0-9]{4})年(?P<cm>[0-9]{1,2})月(?P<cd>[0-9]{1,2})日"
    r"|(?<![A-Za-z])(?P<en_m>" + "|".join(_MONTHS) + r")\s+(?P<en_d>[0-9]{1,2}),\s*(?P<en_y>[0-9]{4})(?![0-9])",
    re.IGNORECASE,
)


def extract_publish_date(text: str) -> date | None:
    """Return the first date found in ``text``, or None.

    Only the first match counts: if it names an impossible day the result is
    None even when a later match would be valid.
    """
    m = _DATE_RE.search(text)
    if m is None:
        return None
    g = m.groupdict()
    if g["iy"] is not None:
        y, mo, d = g["iy"], g["im"], g["id"]
    elif g["sy"] is not None:
        y, mo, d = g["sy"], g["sm"], g["sd"]
    elif g["cy"] is not None:
        y, mo, d = g["cy"], g["cm"], g["cd"]
    else:
        y, mo, d = g["en_y"], _MONTHS[g["en_m"].lower()], g["en_d"]
    try:
        return date(int(y), int(mo), int(d))
    except ValueError:
        return None


# ---------------------------------------------------------------------------
# synthetic fixtures

FIXTURE_AUTHORITY = {"gov": 3, "hospital": 2, "news": 1, "ugc": 0}

_TOPIC_WORDS = [
    ["insulin", "dosage", "glucose", "meter", "injection", "pen", "needle", "morning", "fasting", "reading"],
    ["reimbursement", "claim", "receipt", "deadline", "outpatient", "ratio", "ceiling", "annual", "settlement", "form"],
    ["referral", "specialist", "appointment", "clinic", "department", "registration", "queue", "doctor", "schedule", "ward"],
    ["eye", "drops", "dryness", "inflammation", "interval", "minutes", "ointment", "cornea", "lens", "pressure"],
    ["vaccine", "booster", "schedule", "fever", "site", "swelling", "dose", "interval", "record", "certificate"],
    ["diet", "sodium", "fiber", "portion", "sugar", "snack", "breakfast", "vegetable", "protein", "weight"],
]
_FILLER = ["general", "advice", "note", "update", "patients", "family", "local", "service", "check", "info", "guide", "tips"]
_QUESTION_WORDS = ["can", "how", "when", "should", "which", "whether", "where"]
DEFAULT_REFERENCE_DATE = date(2025, 1, 1)


@dataclass(frozen=True)
class ConflictSpec:
    """Controls for the spread a synthetic corpus exhibits.

    With ``authority`` or ``date`` on, each query gets a conflict pair: two
    documents with identical text, the first stale and low-authority, the
    second fresh and (if ``authority``) at the maximum authority level.
    ``topics`` is the number of distinct topics the remaining documents span.
    """

    authority: bool = True
    date: bool = True
    topics: int = 2
    reference_date: date = DEFAULT_REFERENCE_DATE


def synth_authority_table() -> AuthorityTable:
    return AuthorityTable(entries=dict(FIXTURE_AUTHORITY), max_level=3, default_level=0)


def synth_fixture(
    seed: int,
    n_queries: int,
    docs_per_query: int,
    conflict: ConflictSpec | None = None,
) -> Corpus:
    if n_queries < 1 or docs_per_query < 1:
        raise ValueError("n_queries and docs_per_query must be >= 1")
    spec = conflict or ConflictSpec()
    rng = random.Random(seed)
    ref = spec.reference_date
    domains = list(Domain)
    low_sources = [s for s, lvl in FIXTURE_AUTHORITY.items() if lvl < 3]
    n_topics = max(1, min(spec.topics, len(_TOPIC_WORDS)))

    queries: list[Query] = []
    documents: list[Document] = []
    for qi in range(n_queries):
        qid = f"q{qi:03d}"
        domain = domains[qi % len(domains)]
        topic_ids = rng.sample(range(len(_TOPIC_WORDS)), n_topics)
        main = _TOPIC_WORDS[topic_ids[0]]
        q_text = " ".join([rng.choice(_QUESTION_WORDS)] + rng.sample(main, 4)) + "?"
        truth = f"For {' '.join(main[:3])}, follow the current {main[3]} {main[4]} guidance."
        queries.append(Query(id=qid, domain=domain, intent=f"{domain.value.lower()}-{topic_ids[0]}", text=q_text, ground_truth=truth))

        has_pair = (spec.authority or spec.date) and docs_per_query >= 2
        j0 = 0
        if has_pair:
            stale_age = rng.randint(3 * 365, 6 * 365)
            fresh_age = rng.randint(0, 30)
            stale_src = "ugc" if spec.authority else "hospital"
            fresh_src = "gov" if spec.authority else stale_src
            utility = round(rng.uniform(0.6, 0.9), 3)
            for j, (src, age) in enumerate(((stale_src, stale_age), (fresh_src, fresh_age if spec.date else stale_age))):
                documents.append(
                    Document(
                        id=f"{qid}-d{j:02d}",
                        query_id=qid,
                        text=q_text,
                        source=src,
                        publish_date=ref - timedelta(days=age),
                        annotations=AnnotationSet("A", 1, utility, FIXTURE_AUTHORITY[src]),
                    )
                )
            j0 = 2

        for j in range(j0, docs_per_query):
            words = _TOPIC_WORDS[topic_ids[(j - j0) % n_topics]]
            text = " ".join(words + rng.sample(_FILLER, 2))
            src = rng.choice(low_sources)
            published = ref - timedelta(days=rng.randint(60, 5 * 365))
            stored_date: date | None = published
            if j % 3 == 2:  # date only recoverable from the body
                text = f"Published {published.isoformat()}. {text}"
                stored_date = None
            documents.append(
                Document(
                    id=f"{qid}-d{j:02d}",
                    query_id=qid,
                    title=f"{words[0]} {words[1]}",
                    text=text,
                    source=src,
                    publish_date=stored_date,
                    annotations=AnnotationSet(
                        rng.choice(GRADES[1:]),
                        rng.randint(0, 1),
                        round(rng.uniform(0.0, 0.5), 3),  # below the pair, so metadata decides the top
                        FIXTURE_AUTHORITY[src],
                    ),
                )
            )
    return Corpus(tuple(queries), tuple(documents), ref)
