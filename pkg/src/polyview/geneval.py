"""Answer generation from reranked documents and statement-level judging."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from polyview.corpus import Document, Domain, Query
from polyview.errors import BackendError, DataError
from polyview.llmgate import LlmClient, parse_answer_tag, render_prompt
from polyview.mixture import RankedList


class Verdict(str, Enum):
    CORRECT = "correct"
    INCORRECT = "incorrect"
    NOT_MENTIONED = "not_mentioned"


VERDICT_ORDER = (Verdict.CORRECT, Verdict.INCORRECT, Verdict.NOT_MENTIONED)


@dataclass(frozen=True)
class GeneratedAnswer:
    query_id: str
    answer_text: str
    used_doc_ids: tuple[str, ...]
    domain: Domain
    untagged: bool = False

    def __post_init__(self) -> None:
        if not self.answer_text.strip():
            raise DataError(f"answer for {self.query_id!r} is empty", code="empty_answer")
        object.__setattr__(self, "used_doc_ids", tuple(self.used_doc_ids))

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "answer_text": self.answer_text,
            "used_doc_ids": list(self.used_doc_ids),
            "untagged": self.untagged,
        }

    @classmethod
    def from_record(cls, rec: Mapping, domain: Domain) -> "GeneratedAnswer":
        return cls(rec["query_id"], rec["answer_text"], tuple(rec["used_doc_ids"]), domain, bool(rec.get("untagged", False)))


def generation_template(domain: Domain, with_context: bool) -> str:
    return f"gen_{domain.value.lower()}_{'ctx' if with_context else 'noctx'}"


def generate_answer(
    query: Query,
    top_docs: RankedList,
    client: LlmClient,
    with_context: bool,
    documents: Mapping[str, Document],
    template_dir: str | Path | None = None,
) -> GeneratedAnswer:
    """Answer ``query`` with the domain's generation prompt.

    With context the reranked documents are numbered into the prompt in rank
    order; without it no document text reaches the model and
    ``used_doc_ids`` is empty.
    """
    if top_docs.query_id and top_docs.query_id != query.id:
        raise DataError(f"ranking is for {top_docs.query_id!r}, not {query.id!r}", code="ranking_mismatch")
    variables: dict = {"QUESTION": query.text}
    used: tuple[str, ...] = ()
    if with_context:
        if not top_docs.entries:
            raise DataError(f"no ranked documents for {query.id!r} to ground the answer on", code="empty_context")
        try:
            docs = [documents[d] for d in top_docs.doc_ids]
        except KeyError as exc:
            raise DataError(f"ranked document {exc.args[0]!r} not in corpus", code="dangling_reference") from None
        variables["CONTEXTS"] = docs
        used = tuple(top_docs.doc_ids)
    prompt = render_prompt(generation_template(query.domain, with_context), variables, template_dir)
    reply = client.chat(prompt)
    tagged = parse_answer_tag(reply.text)
    if not tagged.text:
        raise BackendError(f"model returned an empty answer for {query.id!r}", code="empty_answer")
    return GeneratedAnswer(query.id, tagged.text, used, query.domain, tagged.untagged)


# ---------------------------------------------------------------------------
# statements

_NUMBERED = re.compile(r"^\s*(\d+)\s*[.)、．]\s*(.*)$")
_HEADER = re.compile(r"^\s*(statements|judg(e)?ment)\s*[:：]?\s*$", re.IGNORECASE)


def parse_statement_list(text: str) -> list[str]:
    """Numbered lines if any are present (unnumbered lines continue the
    previous statement), else one statement per non-empty line."""
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not _HEADER.match(ln)]
    if any(_NUMBERED.match(ln) for ln in lines):
        out: list[str] = []
        for ln in lines:
            m = _NUMBERED.match(ln)
            if m:
                out.append(m.group(2).strip())
            elif out:
                out[-1] = f"{out[-1]} {ln}"
        return [s for s in out if s]
    return lines


def gen_statements(
    query: Query,
    answer: GeneratedAnswer,
    judge: LlmClient,
    template_dir: str | Path | None = None,
) -> list[str]:
    prompt = render_prompt("statement_gen", {"QUESTION": query.text, "ANSWER": answer.answer_text}, template_dir)
    reply = judge.chat(prompt)
    statements = parse_statement_list(reply.text)
    if not statements:
        raise BackendError(f"judge produced no statements for {query.id!r}", code="no_statements")
    return statements


@dataclass(frozen=True)
class JudgedStatement:
    index: int
    statement_text: str
    verdict: Verdict
    rationale: str

    def to_record(self) -> dict:
        return {"index": self.index, "statement": self.statement_text, "verdict": self.verdict.value, "rationale": self.rationale}


@dataclass(frozen=True)
class Judgement:
    """Judged statements of one answer plus the verdict lines that could not be read."""

    query_id: str
    domain: Domain
    statements: tuple[JudgedStatement, ...]
    parse_failures: int = 0

    def count(self, verdict: Verdict) -> int:
        return sum(1 for s in self.statements if s.verdict is verdict)

    def to_record(self) -> dict:
        return {
            "query_id": self.query_id,
            "domain": self.domain.value,
            "statements": [s.to_record() for s in self.statements],
            "parse_failures": self.parse_failures,
        }


_VERDICT = re.compile(r"^(not[\s_]+mentioned|incorrect|correct)\s*(?:[;；:：,，]|$)\s*(.*)$", re.IGNORECASE | re.DOTALL)


def _verdict(word: str) -> Verdict:
    word = re.sub(r"[\s_]+", " ", word.lower())
    return Verdict.NOT_MENTIONED if word == "not mentioned" else Verdict(word)


def parse_judgement(
    text: str,
    statements: Sequence[str],
    *,
    query_id: str = "",
    domain: Domain = Domain.CARE,
) -> Judgement:
    """Read ``N. <Verdict>; <reason>`` lines.

    Every numbered line is an attempted verdict. It is dropped (and counted
    as a parse failure) when the verdict word is not one of the three, the
    number does not name a statement, or the number was already judged.
    Unnumbered lines extend the previous rationale.
    """
    judged: list[JudgedStatement] = []
    seen: set[int] = set()
    failures = 0
    last: int | None = None
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        m = _NUMBERED.match(line)
        if not m:
            if last is not None:
                prev = judged[last]
                judged[last] = JudgedStatement(prev.index, prev.statement_text, prev.verdict, f"{prev.rationale} {line}".strip())
            continue
        last = None
        index = int(m.group(1))
        v = _VERDICT.match(m.group(2).strip())
        if v is None or not 1 <= index <= len(statements) or index in seen:
            failures += 1
            continue
        seen.add(index)
        judged.append(JudgedStatement(index, statements[index - 1], _verdict(v.group(1)), v.group(2).strip()))
        last = len(judged) - 1
    return Judgement(query_id, domain, tuple(judged), failures)


def judge_statements(
    query: Query,
    ground_truth: str,
    statements: Sequence[str],
    judge: LlmClient,
    template_dir: str | Path | None = None,
) -> Judgement:
    if not ground_truth or not ground_truth.strip():
        raise DataError(f"query {query.id!r} has no reference answer", code="missing_ground_truth")
    if not statements:
        raise DataError("nothing to judge: statement list is empty", code="no_statements")
    prompt = render_prompt(
        "statement_judge",
        {"QUESTION": query.text, "GROUNDTRUTH": ground_truth, "STATEMENT": list(statements)},
        template_dir,
    )
    judgement = parse_judgement(judge.chat(prompt).text, statements, query_id=query.id, domain=query.domain)
    if not judgement.statements:
        raise BackendError(f"no parseable verdict in judge reply for {query.id!r}", code="no_verdicts")
    return judgement


# ---------------------------------------------------------------------------
# aggregation


@dataclass(frozen=True)
class GenerationStats:
    """N_x: judged statements per query by verdict; R_x: percent of judged statements."""

    n_correct: float
    n_incorrect: float
    n_not_mentioned: float
    r_correct: float
    r_incorrect: float
    r_not_mentioned: float
    total_queries: int
    total_statements: int
    parse_failures: int

    def to_record(self) -> dict:
        return {
            "N_c": self.n_correct,
            "N_i": self.n_incorrect,
            "N_n": self.n_not_mentioned,
            "R_c": self.r_correct,
            "R_i": self.r_incorrect,
            "R_n": self.r_not_mentioned,
            "total_queries": self.total_queries,
            "total_statements": self.total_statements,
            "parse_failures": self.parse_failures,
        }


@dataclass
class GenerationReport:
    overall: GenerationStats
    domains: dict[str, GenerationStats] = field(default_factory=dict)
    skipped_queries: int = 0

    def to_record(self) -> dict:
        return {
            "overall": self.overall.to_record(),
            "domains": {d: s.to_record() for d, s in self.domains.items()},
            "skipped_queries": self.skipped_queries,
        }


def _stats(judgements: Sequence[Judgement]) -> GenerationStats:
    counts = [sum(j.count(v) for j in judgements) for v in VERDICT_ORDER]
    total = sum(counts)
    if total == 0:
        raise DataError("no judged statements to aggregate", code="no_judged_statements")
    nq = len(judgements)
    n = [c / nq for c in counts]
    r = [100.0 * c / total for c in counts]
    return GenerationStats(*n, *r, nq, total, sum(j.parse_failures for j in judgements))


def generation_metrics(judgements: Iterable[Judgement], skipped_queries: int = 0) -> GenerationReport:
    """Fold per-query judgements (in query-id order) into per-domain and overall stats.

    Parse failures are reported but excluded from both N and R.
    """
    ordered = sorted(judgements, key=lambda j: j.query_id)
    if not ordered:
        raise DataError("no judged queries to aggregate", code="no_judged_statements")
    report = GenerationReport(overall=_stats(ordered), skipped_queries=skipped_queries)
    for domain in Domain:
        group = [j for j in ordered if j.domain is domain]
        if group and any(j.statements for j in group):
            report.domains[domain.value] = _stats(group)
    return report


def verdict_sums_ok(stats: GenerationStats, tol: float = 1e-9) -> bool:
    """R sums to 100 and N sums to mean judged statements per query."""
    r_ok = abs(math.fsum((stats.r_correct, stats.r_incorrect, stats.r_not_mentioned)) - 100.0) <= tol
    n_sum = math.fsum((stats.n_correct, stats.n_incorrect, stats.n_not_mentioned))
    return r_ok and abs(n_sum - stats.total_statements / stats.total_queries) <= tol
