"""Pipeline stages over files: ingest, score, rerank, evaluate, generate, judge.

Every stage reads the corpus named by the config and writes its artifacts
under ``output_dir`` in a fixed order, so identical inputs produce
identical files.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar
from urllib.parse import quote

from polyview import geneval
from polyview.cache import ScoreCache, atomic_write_text, dump_json
from polyview.config import EMBED_PREFIX, PipelineConfig
from polyview.corpus import (
    Corpus,
    Document,
    Query,
    document_to_record,
    dumps_jsonl,
    load_authority_table,
    load_corpus,
    query_to_record,
    validate_corpus,
)
from polyview.embeddings import provider_from_spec
from polyview.errors import BackendError, ConfigError, DataError, PolyviewError
from polyview.llmgate import LlmClient, MockLlmClient, make_client
from polyview.mixture import RankedList, assign_topics, integrate, select_topk
from polyview.retmetrics import RetrievalReport, evaluate_retrieval, format_table
from polyview.scorers import (
    ORACLE,
    Bm25Params,
    authority_scorer_id,
    grade_relevance_llm,
    label_utility_llm,
    score_authority,
    score_bm25,
    score_relevance_embedding,
    score_relevance_oracle,
    score_supplement,
    score_timeliness,
    score_utility,
    timeliness_scorer_id,
)
from polyview.views import VIEW_ORDER, View, ViewScore

log = logging.getLogger(__name__)

T = TypeVar("T")

MISSING_PROMPTS_DIR = "missing_prompts"


@dataclass
class StageResult:
    outputs: list[Path] = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def ranking_path(out_dir: Path, query_id: str) -> Path:
    return out_dir / "rankings" / f"{quote(query_id, safe='')}.json"


def _require_files(cfg: PipelineConfig, *paths: Path | None) -> None:
    for p in paths:
        if p is not None and not p.is_file():
            raise ConfigError(f"referenced file does not exist: {p}", code="missing_input")


def load_inputs(cfg: PipelineConfig) -> Corpus:
    _require_files(cfg, cfg.queries, cfg.documents, cfg.authority_table, cfg.profiles_path)
    return load_corpus(cfg.queries, cfg.documents, cfg.reference_date)


# ---------------------------------------------------------------------------
# LLM clients


def _client(cfg: PipelineConfig, endpoint: str | None, model: str, max_tokens: int, purpose: str) -> LlmClient:
    if not endpoint:
        raise ConfigError(f"{purpose} needs llm.endpoint (an http(s) URL or mock:<transcript>)")
    return make_client(
        endpoint,
        model_id=model,
        temperature=cfg.llm.temperature,
        max_tokens=max_tokens,
        concurrency_limit=cfg.concurrency_limit,
        supports_logprobs=cfg.llm.supports_logprobs,
    )


def grading_client(cfg: PipelineConfig) -> LlmClient:
    return _client(cfg, cfg.llm.endpoint, cfg.llm.model, cfg.llm.grading_max_tokens, "LLM grading")


def generation_client(cfg: PipelineConfig) -> LlmClient:
    return _client(cfg, cfg.llm.endpoint, cfg.llm.model, cfg.llm.generation_max_tokens, "generation")


def judge_client(cfg: PipelineConfig) -> LlmClient:
    return _client(
        cfg,
        cfg.llm.judge_endpoint or cfg.llm.endpoint,
        cfg.llm.judge_model or cfg.llm.model,
        cfg.llm.generation_max_tokens,
        "statement judging",
    )


# ---------------------------------------------------------------------------
# task execution


@dataclass(frozen=True)
class TaskFailure:
    label: str
    error: PolyviewError


def run_tasks(
    cfg: PipelineConfig,
    tasks: Sequence[tuple[str, Callable[[], T]]],
) -> tuple[list[T], list[TaskFailure]]:
    """Run labelled tasks on a pool of ``concurrency_limit`` workers.

    Results come back in task order; failures are collected rather than
    aborting the batch so one run reports every problem.
    """

    def guarded(fn: Callable[[], T]) -> T | PolyviewError:
        try:
            return fn()
        except PolyviewError as exc:
            return exc

    with ThreadPoolExecutor(max_workers=cfg.concurrency_limit) as pool:
        outcomes = list(pool.map(guarded, [fn for _, fn in tasks]))
    results: list[T] = []
    failures: list[TaskFailure] = []
    for (label, _), outcome in zip(tasks, outcomes):
        if isinstance(outcome, PolyviewError):
            failures.append(TaskFailure(label, outcome))
        else:
            results.append(outcome)
    return results, failures


def missing_prompts_path(out_dir: Path, stage: str) -> Path:
    return out_dir / MISSING_PROMPTS_DIR / f"{stage}.jsonl"


def raise_failures(
    cfg: PipelineConfig, stage: str, failures: Sequence[TaskFailure], clients: Iterable[LlmClient], total: int
) -> None:
    """Turn collected failures into one error; mock misses are exported first."""
    if not failures:
        return
    for f in failures:
        log.error("%s: %s", f.label, f.error)
    misses: dict = {}
    for c in clients:
        if isinstance(c, MockLlmClient):
            misses.update(c.misses)
    if misses:
        path = missing_prompts_path(cfg.output_dir, stage)
        records = [
            {"prompt_hash": h, "template_id": p.template_id, "system": p.system, "user": p.user}
            for h, p in sorted(misses.items())
        ]
        atomic_write_text(path, dumps_jsonl(records))
        listed = ", ".join(sorted(misses))
        raise BackendError(
            f"{len(misses)} prompt(s) missing from the mock transcript (written to {MISSING_PROMPTS_DIR}/{stage}.jsonl): {listed}",
            code="mock_miss",
        )
    first = failures[0].error
    summary = f"{len(failures)} of {total} task(s) failed; first: {failures[0].label}: {first}"
    for base in (ConfigError, BackendError, DataError):
        if isinstance(first, base):
            raise base(summary, code=first.code)
    raise DataError(summary, code=first.code)


# ---------------------------------------------------------------------------
# ingest


def cmd_ingest(cfg: PipelineConfig) -> StageResult:
    corpus = load_inputs(cfg)
    table = load_authority_table(cfg.authority_table)
    report = validate_corpus(corpus)
    out = cfg.output_dir / "corpus"
    q_path, d_path = out / "queries.jsonl", out / "documents.jsonl"
    atomic_write_text(q_path, dumps_jsonl(query_to_record(q) for q in sorted(corpus.queries, key=lambda q: q.id)))
    atomic_write_text(d_path, dumps_jsonl(document_to_record(d) for d in sorted(corpus.documents, key=lambda d: d.id)))
    summary = {
        "queries": len(corpus.queries),
        "documents": len(corpus.documents),
        "authority_sources": len(table.entries),
        "findings": [{"record_id": f.record_id, "rule": f.rule, "detail": f.detail} for f in report.findings],
    }
    report_path = cfg.output_dir / "ingest_report.json"
    atomic_write_text(report_path, dump_json(summary))
    return StageResult([q_path, d_path, report_path], summary)


# ---------------------------------------------------------------------------
# score


@dataclass
class Scorers:
    """Scorer ids and per-document callables for each view under one config."""

    cfg: PipelineConfig
    corpus: Corpus
    clients: list[LlmClient] = field(default_factory=list)

    def __post_init__(self) -> None:
        s = self.cfg.scorers
        self.table = load_authority_table(self.cfg.authority_table)
        self.bm25 = Bm25Params(s.bm25_k1, s.bm25_b, s.bm25_tokenizer) if s.relevance == "bm25" else None
        self.rel_embed = provider_from_spec(s.relevance[len(EMBED_PREFIX):]) if s.relevance.startswith(EMBED_PREFIX) else None
        self.util_backend = provider_from_spec(s.utility[len(EMBED_PREFIX):]) if s.utility.startswith(EMBED_PREFIX) else ORACLE
        self._grader: LlmClient | None = None

    @property
    def grader(self) -> LlmClient:
        if self._grader is None:
            self._grader = grading_client(self.cfg)
            self.clients.append(self._grader)
        return self._grader

    def scorer_id(self, view: View) -> str:
        s = self.cfg.scorers
        if view is View.RELEVANCE:
            if self.bm25:
                return self.bm25.scorer_id
            if self.rel_embed:
                return f"embed/{self.rel_embed.provider_id}"
            if s.relevance == "llm":
                return f"llm-grade/{self.grader.client_id}"
            return ORACLE.scorer_id
        if view is View.UTILITY:
            return ORACLE.scorer_id if self.util_backend is ORACLE else f"utility-embed/{self.util_backend.provider_id}"
        if view is View.SUPPLEMENT:
            return f"llm-supplement/{self.grader.client_id}" if s.supplement == "llm" else ORACLE.scorer_id
        if view is View.AUTHORITY:
            return authority_scorer_id(self.table)
        return timeliness_scorer_id(self.cfg.reference_date, s.half_life_days, s.missing_date_score)

    def score_one(self, view: View, query: Query, doc: Document) -> ViewScore:
        s = self.cfg.scorers
        if view is View.RELEVANCE:
            if self.rel_embed:
                return score_relevance_embedding(query, doc, self.rel_embed)
            if s.relevance == "llm":
                return grade_relevance_llm(query, doc, self.grader)
            return score_relevance_oracle(query, doc)
        if view is View.UTILITY:
            return score_utility(query, doc, self.util_backend)
        if view is View.SUPPLEMENT:
            return score_supplement(query, doc, self.grader if s.supplement == "llm" else ORACLE)
        if view is View.AUTHORITY:
            return score_authority(doc, self.table, query.id)
        return score_timeliness(doc, self.cfg.reference_date, s.half_life_days, s.missing_date_score, query.id)


def parse_views(spec: str | None) -> list[View]:
    if not spec:
        return list(VIEW_ORDER)
    views = []
    for name in spec.split(","):
        name = name.strip().lower()
        try:
            view = View(name)
        except ValueError:
            raise ConfigError(f"unknown view {name!r} (choose from {', '.join(v.value for v in VIEW_ORDER)})") from None
        if view not in views:
            views.append(view)
    return sorted(views, key=VIEW_ORDER.index)


def cmd_score(cfg: PipelineConfig, views: Sequence[View] | None = None) -> StageResult:
    corpus = load_inputs(cfg)
    views = list(views or VIEW_ORDER)
    scorers = Scorers(cfg, corpus)
    cache = ScoreCache(cfg.cache_dir)
    tasks: list[tuple[str, Callable[[], list[ViewScore]]]] = []
    cached = 0
    for view in views:
        sid = scorers.scorer_id(view)
        have = cache.lookup(view, sid)
        for q in sorted(corpus.queries, key=lambda q: q.id):
            docs = sorted(corpus.docs_for(q.id), key=lambda d: d.id)
            todo = [d for d in docs if (q.id, d.id) not in have]
            cached += len(docs) - len(todo)
            if not todo:
                continue
            if view is View.RELEVANCE and scorers.bm25:
                # BM25 scores are normalized over the whole candidate set, so rescore it together
                tasks.append((f"{q.id}/*/{view.value}", lambda q=q, docs=docs: score_bm25(q, docs, scorers.bm25)))
                continue
            for d in todo:
                tasks.append((f"{q.id}/{d.id}/{view.value}", lambda v=view, q=q, d=d: [scorers.score_one(v, q, d)]))

    results, failures = run_tasks(cfg, tasks)
    computed = [vs for batch in results for vs in batch]
    cache.put_many(computed)
    cache.flush(views)
    raise_failures(cfg, "score", failures, scorers.clients, len(tasks))
    summary = {
        "views": [v.value for v in views],
        "scorer_ids": {v.value: scorers.scorer_id(v) for v in views},
        "rows": {v.value: len(cache.lookup(v, scorers.scorer_id(v))) for v in views},
    }
    log.info("score: %d computed, %d reused from cache", len(computed), cached)
    return StageResult([cache.path_for(v) for v in views], summary | {"computed": len(computed), "cached": cached})


# ---------------------------------------------------------------------------
# rerank


def cmd_rerank(cfg: PipelineConfig, k: int | None = None, profile_id: str | None = None) -> StageResult:
    corpus = load_inputs(cfg)
    scorers = Scorers(cfg, corpus)
    cache = ScoreCache(cfg.cache_dir)
    topic_provider = provider_from_spec(cfg.scorers.topic_embedding)
    outputs = []
    for q in sorted(corpus.queries, key=lambda q: q.id):
        profile = cfg.profile_for(q.domain, profile_id)
        docs = sorted(corpus.docs_for(q.id), key=lambda d: d.id)
        if not docs:
            continue
        table: dict[str, dict[View, float]] = {d.id: {} for d in docs}
        for view in profile.active_views():
            sid = scorers.scorer_id(view)
            rows = cache.lookup(view, sid)
            missing = [d.id for d in docs if (q.id, d.id) not in rows]
            if missing:
                raise DataError(
                    f"no cached {view.value!r} scores under {sid!r} for {len(missing)} document(s) of {q.id!r}; "
                    f"run `polyview score --views {view.value}` first",
                    code="missing_cache",
                )
            for d in docs:
                table[d.id][view] = rows[(q.id, d.id)].normalized
        fused = integrate(profile, table)
        eps = cfg.scorers.eps if cfg.scorers.eps is not None else profile.eps
        min_pts = cfg.scorers.min_pts if cfg.scorers.min_pts is not None else profile.min_pts
        topics = assign_topics({d.id: topic_provider.embed_document(d.full_text) for d in docs}, eps, min_pts)
        ranked = select_topk(fused, topics, k or profile.k, profile.composibility, query_id=q.id, profile_id=profile.profile_id)
        path = ranking_path(cfg.output_dir, q.id)
        atomic_write_text(path, dump_json(ranked.to_record()))
        outputs.append(path)
    return StageResult(outputs, {"rankings": len(outputs)})


def load_rankings(cfg: PipelineConfig, corpus: Corpus) -> dict[str, RankedList]:
    rankings = {}
    for q in corpus.queries:
        path = ranking_path(cfg.output_dir, q.id)
        if path.exists():
            rankings[q.id] = RankedList.from_record(json.loads(path.read_text(encoding="utf-8")))
    return rankings


# ---------------------------------------------------------------------------
# evaluation and generation


def cmd_eval_retrieval(cfg: PipelineConfig, k: int | None = None, mode: str = "graded", hit_variant: str = "capped_recall") -> StageResult:
    corpus = load_inputs(cfg)
    rankings = {qid: r.doc_ids for qid, r in load_rankings(cfg, corpus).items()}
    report: RetrievalReport = evaluate_retrieval(corpus, rankings, k or cfg.k, mode, hit_variant)
    rec_path = cfg.output_dir / "retrieval_report.json"
    txt_path = cfg.output_dir / "retrieval_table.txt"
    atomic_write_text(rec_path, dump_json(report.to_record()))
    atomic_write_text(txt_path, format_table({"polyview": report}))
    return StageResult([rec_path, txt_path], report.to_record())


def cmd_generate(cfg: PipelineConfig) -> StageResult:
    corpus = load_inputs(cfg)
    rankings = load_rankings(cfg, corpus)
    docs = {d.id: d for d in corpus.documents}
    queries = sorted(corpus.queries, key=lambda q: q.id)
    if cfg.with_context:
        absent = [q.id for q in queries if q.id not in rankings]
        if absent:
            raise DataError(f"no ranking for {', '.join(absent)}; run `polyview rerank` first", code="missing_ranking")
    client = generation_client(cfg)
    empty = RankedList("", "")
    tasks = [
        (q.id, lambda q=q: geneval.generate_answer(q, rankings.get(q.id, empty), client, cfg.with_context, docs))
        for q in queries
    ]
    answers, failures = run_tasks(cfg, tasks)
    raise_failures(cfg, "generate", failures, [client], len(tasks))
    path = cfg.output_dir / "answers.jsonl"
    atomic_write_text(path, dumps_jsonl(a.to_record() for a in answers))
    return StageResult([path], {"answers": len(answers), "untagged": sum(a.untagged for a in answers)})


def load_answers(cfg: PipelineConfig, corpus: Corpus) -> list[geneval.GeneratedAnswer]:
    path = cfg.output_dir / "answers.jsonl"
    if not path.exists():
        raise DataError(f"{path.name} not found; run `polyview generate` first", code="missing_answers")
    out = []
    for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            rec = json.loads(raw)
            out.append(geneval.GeneratedAnswer.from_record(rec, corpus.query(rec["query_id"]).domain))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise DataError(f"{path.name}:{line_no}: bad answer record ({exc})", code="malformed_answer") from None
    return out


def cmd_eval_generation(cfg: PipelineConfig) -> StageResult:
    corpus = load_inputs(cfg)
    answers = load_answers(cfg, corpus)
    judge = judge_client(cfg)
    judged_answers = [a for a in answers if corpus.query(a.query_id).ground_truth]
    skipped = len(answers) - len(judged_answers)

    def judge_one(answer: geneval.GeneratedAnswer) -> geneval.Judgement:
        q = corpus.query(answer.query_id)
        statements = geneval.gen_statements(q, answer, judge)
        return geneval.judge_statements(q, q.ground_truth, statements, judge)

    tasks = [(a.query_id, lambda a=a: judge_one(a)) for a in judged_answers]
    judgements, failures = run_tasks(cfg, tasks)
    raise_failures(cfg, "eval-generation", failures, [judge], len(tasks))
    report = geneval.generation_metrics(judgements, skipped_queries=skipped)
    j_path = cfg.output_dir / "judgements.jsonl"
    r_path = cfg.output_dir / "generation_report.json"
    atomic_write_text(j_path, dumps_jsonl(j.to_record() for j in sorted(judgements, key=lambda j: j.query_id)))
    atomic_write_text(r_path, dump_json(report.to_record()))
    return StageResult([j_path, r_path], report.to_record())


def cmd_label_utility(cfg: PipelineConfig) -> StageResult:
    corpus = load_inputs(cfg)
    client = generation_client(cfg)
    tasks = []
    skipped = 0
    for q in sorted(corpus.queries, key=lambda q: q.id):
        if not q.ground_truth:
            skipped += 1
            continue
        for d in sorted(corpus.docs_for(q.id), key=lambda d: d.id):
            tasks.append((f"{q.id}/{d.id}", lambda q=q, d=d: label_utility_llm(q, d, q.ground_truth, client)))
    labels, failures = run_tasks(cfg, tasks)
    raise_failures(cfg, "label-utility", failures, [client], len(tasks))
    path = cfg.output_dir / "utility_labels.jsonl"
    atomic_write_text(path, dumps_jsonl(lab.to_record() for lab in labels))
    return StageResult([path], {"labels": len(labels), "skipped_queries": skipped})
