"""``polyview`` command line.

Exit codes: 0 success, 1 data error, 2 backend error, 3 config error.
Every command writes ``<output_dir>/manifests/<command>.json``, also when
it fails.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import platform
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from polyview import __version__, pipeline
from polyview.cache import atomic_write_text, dump_json
from polyview.config import PipelineConfig, default_fixture_config, dump_config, load_config
from polyview.corpus import authority_table_records, dumps_jsonl, synth_authority_table, synth_fixture, write_corpus
from polyview.errors import ConfigError, PolyviewError

log = logging.getLogger("polyview")

COMMANDS = ("ingest", "score", "rerank", "eval-retrieval", "generate", "eval-generation", "label-utility", "fixture")


def file_sha256(path: Path) -> str | None:
    try:
        return hashlib.sha256(path.read_bytes()).hexdigest()
    except OSError:
        return None


def _input_hashes(cfg: PipelineConfig) -> dict[str, str | None]:
    inputs = {
        "queries": cfg.queries,
        "documents": cfg.documents,
        "authority_table": cfg.authority_table,
    }
    if cfg.profiles_path:
        inputs["profiles"] = cfg.profiles_path
    for name, endpoint in (("transcript", cfg.llm.endpoint), ("judge_transcript", cfg.llm.judge_endpoint)):
        if endpoint and endpoint.startswith("mock:"):
            inputs[name] = Path(endpoint[len("mock:"):])
    return {name: file_sha256(p) for name, p in sorted(inputs.items())}


def _relative(path: Path, root: Path) -> str:
    try:
        return path.resolve().relative_to(root.resolve()).as_posix()
    except ValueError:
        return path.name


def _scrub(message: str, roots: Sequence[Path]) -> str:
    """Drop machine-specific directory prefixes from a diagnostic."""
    for root in sorted({str(r.resolve()) for r in roots} | {str(r) for r in roots}, key=len, reverse=True):
        if root not in (".", ""):
            message = message.replace(root.rstrip("/") + "/", "")
    return message


def write_manifest(
    out_dir: Path,
    command: str,
    *,
    args: dict,
    cfg: PipelineConfig | None,
    result: pipeline.StageResult | None,
    error: PolyviewError | None,
    roots: Sequence[Path],
) -> Path:
    manifest = {
        "command": command,
        "status": "error" if error else "ok",
        "exit_code": error.exit_code if error else 0,
        "args": args,
        "config_hash": cfg.config_hash() if cfg else None,
        "inputs": _input_hashes(cfg) if cfg else {},
        "outputs": sorted(_relative(p, out_dir) for p in result.outputs) if result else [],
        "versions": {
            "polyview": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    if error:
        manifest["error"] = {"code": error.code, "message": _scrub(str(error), roots)}
    path = out_dir / "manifests" / f"{command}.json"
    atomic_write_text(path, dump_json(manifest))
    return path


def cmd_fixture(args: argparse.Namespace) -> pipeline.StageResult:
    out = Path(args.out or "fixture")
    out.mkdir(parents=True, exist_ok=True)
    corpus = synth_fixture(args.seed, args.queries, args.docs_per_query)
    write_corpus(corpus, out / "queries.jsonl", out / "documents.jsonl")
    atomic_write_text(out / "authority.jsonl", dumps_jsonl(authority_table_records(synth_authority_table())))
    raw = default_fixture_config()
    raw["seed"] = args.seed
    raw["reference_date"] = corpus.reference_date.isoformat()
    atomic_write_text(out / "config.yaml", dump_config(raw))
    names = ("queries.jsonl", "documents.jsonl", "authority.jsonl", "config.yaml")
    return pipeline.StageResult([out / n for n in names], {"queries": len(corpus.queries), "documents": len(corpus.documents)})


def run_stage(args: argparse.Namespace, cfg: PipelineConfig) -> pipeline.StageResult:
    cmd = args.command
    if cmd == "ingest":
        return pipeline.cmd_ingest(cfg)
    if cmd == "score":
        return pipeline.cmd_score(cfg, pipeline.parse_views(args.views))
    if cmd == "rerank":
        return pipeline.cmd_rerank(cfg, args.k, args.profile)
    if cmd == "eval-retrieval":
        return pipeline.cmd_eval_retrieval(cfg, args.k, args.gains, args.hit)
    if cmd == "generate":
        return pipeline.cmd_generate(cfg)
    if cmd == "eval-generation":
        return pipeline.cmd_eval_generation(cfg)
    if cmd == "label-utility":
        return pipeline.cmd_label_utility(cfg)
    raise ConfigError(f"unknown command {cmd!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polyview", description="Multi-view reranking and RAG evaluation pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def stage(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="pipeline YAML config")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--mock", help="replay this transcript for every LLM call instead of the configured endpoint")
        return p

    stage("ingest", "load, validate and normalize the corpus")
    p = stage("score", "compute per-view scores into the cache")
    p.add_argument("--views", help="comma-separated subset of relevance,utility,supplement,authority,timeliness")
    p = stage("rerank", "fuse cached scores and write one ranked list per query")
    p.add_argument("--k", type=int, help="list length (default: the profile's k)")
    p.add_argument("--profile", help="weight profile for every query (default: per-domain active profile)")
    p = stage("eval-retrieval", "HIT@k / NDCG@k per domain")
    p.add_argument("--k", type=int, help="cutoff (default: config k)")
    p.add_argument("--gains", choices=("graded", "binary"), default="graded")
    p.add_argument("--hit", choices=("capped_recall", "any_hit"), default="capped_recall")
    stage("generate", "answer each query from its ranked documents")
    stage("eval-generation", "split answers into statements and judge them against the reference")
    stage("label-utility", "log-probability utility labels for every (query, document)")

    p = sub.add_parser("fixture", help="write a synthetic corpus, authority table and config")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--queries", type=int, default=6)
    p.add_argument("--docs-per-query", type=int, default=6)
    p.add_argument("--out", help="directory to write into (default: ./fixture)")
    return parser


def _manifest_args(args: argparse.Namespace) -> dict:
    skip = {"command", "config", "out", "mock", "verbose"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")

    cfg: PipelineConfig | None = None
    result: pipeline.StageResult | None = None
    error: PolyviewError | None = None
    if args.command == "fixture":
        out_dir = Path(args.out or "fixture")
        roots = [out_dir, Path.cwd()]
    else:
        config_path = Path(args.config)
        out_dir = Path(args.out) if args.out else config_path.parent / "out"
        roots = [config_path.parent, out_dir, Path.cwd()]
    try:
        if args.command == "fixture":
            result = cmd_fixture(args)
        else:
            cfg = load_config(config_path).with_overrides(output_dir=args.out, mock=args.mock)
            out_dir = cfg.output_dir
            roots.append(out_dir)
            result = run_stage(args, cfg)
    except PolyviewError as exc:
        error = exc
    except OSError as exc:
        error = ConfigError(f"{exc.strerror}: {exc.filename}", code="io_error")

    manifest = write_manifest(out_dir, args.command, args=_manifest_args(args), cfg=cfg, result=result, error=error, roots=roots)
    if error is None and args.command != "fixture":
        stale = pipeline.missing_prompts_path(out_dir, args.command)
        stale.unlink(missing_ok=True)
        if stale.parent.is_dir() and not any(stale.parent.iterdir()):
            stale.parent.rmdir()
    if error:
        print(f"polyview {args.command}: {error.code}: {error}", file=sys.stderr)
        return error.exit_code
    if args.command == "eval-retrieval" and cfg is not None:
        sys.stdout.write((cfg.output_dir / "retrieval_table.txt").read_text(encoding="utf-8"))
    else:
        print(f"polyview {args.command}: ok ({_relative(manifest, out_dir)})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
