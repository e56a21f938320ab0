"""Pipeline configuration: one YAML file, paths relative to the file itself."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, replace
from datetime import date
from pathlib import Path
from typing import Any, Mapping

import yaml

from polyview.corpus import Domain
from polyview.errors import ConfigError
from polyview.mixture import PRESETS, WeightProfile, load_profiles

RELEVANCE_BACKENDS = ("bm25", "oracle", "llm")  # or "embed:<provider spec>"
UTILITY_BACKENDS = ("oracle",)  # or "embed:<provider spec>"
SUPPLEMENT_BACKENDS = ("oracle", "llm")
EMBED_PREFIX = "embed:"


@dataclass(frozen=True)
class ScorerConfig:
    relevance: str = "bm25"
    utility: str = "oracle"
    supplement: str = "oracle"
    bm25_k1: float = 1.2
    bm25_b: float = 0.75
    bm25_tokenizer: str = "unicode_words"
    topic_embedding: str = "hash:dim=64,seed=0"
    half_life_days: float = 365.0
    missing_date_score: float = 0.5
    eps: float | None = None  # None: take eps/min_pts from the weight profile
    min_pts: int | None = None


@dataclass(frozen=True)
class LlmConfig:
    endpoint: str | None = None
    model: str = "default"
    judge_endpoint: str | None = None
    judge_model: str | None = None
    supports_logprobs: bool = False
    grading_max_tokens: int = 1
    generation_max_tokens: int = 1024
    temperature: float = 0.0


@dataclass(frozen=True)
class PipelineConfig:
    queries: Path
    documents: Path
    authority_table: Path
    reference_date: date
    profiles_path: Path | None = None
    active_profiles: Mapping[str, str] = field(default_factory=lambda: {d.value: d.value.lower() for d in Domain})
    scorers: ScorerConfig = ScorerConfig()
    llm: LlmConfig = LlmConfig()
    cache_dir: Path = Path("cache")
    output_dir: Path = Path("out")
    concurrency_limit: int = 4
    seed: int = 7
    k: int = 3
    with_context: bool = True
    source: Path | None = None
    raw: Mapping[str, Any] = field(default_factory=dict, repr=False)

    def profiles(self) -> dict[str, WeightProfile]:
        return load_profiles(self.profiles_path) if self.profiles_path else dict(PRESETS)

    def profile_for(self, domain: Domain, override: str | None = None) -> WeightProfile:
        profiles = self.profiles()
        name = override or self.active_profiles.get(domain.value)
        if name not in profiles:
            raise ConfigError(f"weight profile {name!r} not defined (have: {', '.join(sorted(profiles))})")
        return profiles[name]

    def config_hash(self) -> str:
        """Hash of the parsed settings, independent of where the file lives."""
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True, default=str).encode()).hexdigest()

    def with_overrides(self, *, output_dir: str | Path | None = None, mock: str | Path | None = None) -> "PipelineConfig":
        cfg = self
        if output_dir is not None:
            cfg = replace(cfg, output_dir=Path(output_dir))
        if mock is not None:
            endpoint = f"mock:{mock}"
            cfg = replace(cfg, llm=replace(cfg.llm, endpoint=endpoint, judge_endpoint=endpoint, supports_logprobs=True))
        return cfg


_TOP_KEYS = {
    "corpus", "authority_table", "reference_date", "profiles", "active_profiles", "scorers", "llm",
    "cache_dir", "output_dir", "concurrency_limit", "seed", "k", "with_context",
}


def _section(raw: Mapping, name: str, cls: type) -> Any:
    values = raw.get(name) or {}
    if not isinstance(values, Mapping):
        raise ConfigError(f"config section {name!r} must be a mapping")
    known = set(cls.__dataclass_fields__)
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"bad {name!r} section: {exc}") from None


def _resolve_endpoint(endpoint: str | None, base: Path) -> str | None:
    if endpoint and endpoint.startswith("mock:"):
        return "mock:" + str(base / endpoint[len("mock:"):])
    return endpoint


def _check_backends(s: ScorerConfig) -> None:
    def ok(value: str, allowed: tuple[str, ...]) -> bool:
        return value in allowed or value.startswith(EMBED_PREFIX)

    if not ok(s.relevance, RELEVANCE_BACKENDS):
        raise ConfigError(f"scorers.relevance must be one of {RELEVANCE_BACKENDS} or embed:<spec>, got {s.relevance!r}")
    if not ok(s.utility, UTILITY_BACKENDS):
        raise ConfigError(f"scorers.utility must be 'oracle' or embed:<spec>, got {s.utility!r}")
    if s.supplement not in SUPPLEMENT_BACKENDS:
        raise ConfigError(f"scorers.supplement must be one of {SUPPLEMENT_BACKENDS}, got {s.supplement!r}")
    if s.half_life_days <= 0 or not 0 <= s.missing_date_score <= 1:
        raise ConfigError("scorers.half_life_days must be > 0 and missing_date_score in [0, 1]")


def config_from_mapping(raw: Mapping[str, Any], base: Path, source: Path | None = None) -> PipelineConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a mapping at the top level")
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    corpus = raw.get("corpus") or {}
    try:
        queries, documents = corpus["queries"], corpus["documents"]
        authority = raw["authority_table"]
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"config is missing required key {exc}") from None
    ref = raw.get("reference_date")
    if isinstance(ref, str):
        try:
            ref = date.fromisoformat(ref)
        except ValueError:
            raise ConfigError(f"reference_date {ref!r} is not YYYY-MM-DD") from None
    if not isinstance(ref, date):
        raise ConfigError("reference_date is required (YYYY-MM-DD)")

    scorers = _section(raw, "scorers", ScorerConfig)
    _check_backends(scorers)
    llm = _section(raw, "llm", LlmConfig)
    llm = replace(llm, endpoint=_resolve_endpoint(llm.endpoint, base), judge_endpoint=_resolve_endpoint(llm.judge_endpoint, base))

    active = dict(PipelineConfig.__dataclass_fields__["active_profiles"].default_factory())
    active.update({str(k).upper(): str(v) for k, v in (raw.get("active_profiles") or {}).items()})
    bad = sorted(set(active) - {d.value for d in Domain})
    if bad:
        raise ConfigError(f"active_profiles has unknown domain(s): {', '.join(bad)}")

    try:
        cfg = PipelineConfig(
            queries=base / queries,
            documents=base / documents,
            authority_table=base / authority,
            reference_date=ref,
            profiles_path=base / raw["profiles"] if raw.get("profiles") else None,
            active_profiles=active,
            scorers=scorers,
            llm=llm,
            cache_dir=base / raw.get("cache_dir", "cache"),
            output_dir=base / raw.get("output_dir", "out"),
            concurrency_limit=int(raw.get("concurrency_limit", 4)),
            seed=int(raw.get("seed", 7)),
            k=int(raw.get("k", 3)),
            with_context=bool(raw.get("with_context", True)),
            source=source,
            raw=json.loads(json.dumps(raw, default=str)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from None
    if cfg.concurrency_limit < 1 or cfg.k < 1:
        raise ConfigError("concurrency_limit and k must be >= 1")
    for domain in Domain:
        cfg.profile_for(domain)
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    return config_from_mapping(raw or {}, path.parent, source=path)


def dump_config(raw: Mapping[str, Any]) -> str:
    return yaml.safe_dump(dict(raw), sort_keys=False, allow_unicode=True)


def default_fixture_config() -> dict:
    """Config written next to a generated fixture; every path is relative."""
    return {
        "corpus": {"queries": "queries.jsonl", "documents": "documents.jsonl"},
        "authority_table": "authority.jsonl",
        "reference_date": "2025-01-01",
        "scorers": {k: v for k, v in asdict(ScorerConfig()).items() if v is not None},
        "llm": {"endpoint": "mock:transcript.jsonl", "model": "mock", "supports_logprobs": True},
        "cache_dir": "cache",
        "output_dir": "out",
        "concurrency_limit": 4,
        "seed": 7,
        "k": 3,
    }
