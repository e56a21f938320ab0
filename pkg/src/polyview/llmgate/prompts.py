"""Prompt template registry and rendering.

Templates are plain text assets (one file per template id) so translated
or original-language variants can be dropped in via ``template_dir``.
A file that starts with a ``system:`` line is split at the ``user:`` line;
otherwise the whole file is the user message.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Mapping, Sequence

from polyview.errors import ConfigError, DataError

TEMPLATE_IDS: tuple[str, ...] = (
    "relevance_grade",
    "supplement_binary",
    "utility_with_ctx",
    "utility_without_ctx",
    "gen_care_ctx",
    "gen_care_noctx",
    "gen_inquiry_ctx",
    "gen_inquiry_noctx",
    "gen_policy_ctx",
    "gen_policy_noctx",
    "statement_gen",
    "statement_judge",
)
PLACEHOLDERS: tuple[str, ...] = ("QUESTION", "CONTEXTS", "ANSWER", "GROUNDTRUTH", "STATEMENT")

_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDERS) + r")\}")
_DEFAULT_DIR = Path(__file__).parent / "templates"


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    system_text: str
    user_text: str

    @property
    def placeholders(self) -> set[str]:
        return set(_PLACEHOLDER_RE.findall(self.system_text)) | set(_PLACEHOLDER_RE.findall(self.user_text))


@dataclass(frozen=True)
class RenderedPrompt:
    template_id: str
    system: str
    user: str

    def messages(self) -> list[dict[str, str]]:
        msgs = []
        if self.system:
            msgs.append({"role": "system", "content": self.system})
        msgs.append({"role": "user", "content": self.user})
        return msgs

    @property
    def hash(self) -> str:
        return prompt_hash(self)


def prompt_hash(prompt: RenderedPrompt) -> str:
    """Stable key for a rendered prompt; the template id is not part of it."""
    payload = json.dumps({"system": prompt.system, "user": prompt.user}, ensure_ascii=False, sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def parse_template(template_id: str, text: str) -> PromptTemplate:
    lines = text.splitlines()
    if lines and lines[0].strip() == "system:":
        try:
            split = next(i for i, ln in enumerate(lines) if ln.strip() == "user:")
        except StopIteration:
            raise ConfigError(f"template {template_id!r} has a system section but no 'user:' line") from None
        system = "\n".join(lines[1:split]).strip()
        user = "\n".join(lines[split + 1 :]).strip()
    else:
        system, user = "", text.strip()
    return PromptTemplate(template_id, system, user)


@lru_cache(maxsize=None)
def _load(template_dir: str, template_id: str) -> PromptTemplate:
    path = Path(template_dir) / f"{template_id}.txt"
    if not path.is_file():
        raise ConfigError(f"template file missing: {path}")
    return parse_template(template_id, path.read_text(encoding="utf-8"))


def get_template(template_id: str, template_dir: str | Path | None = None) -> PromptTemplate:
    if template_id not in TEMPLATE_IDS:
        raise ConfigError(f"unknown template_id {template_id!r}", code="unknown_template")
    return _load(str(template_dir or _DEFAULT_DIR), template_id)


def format_contexts(contexts: Sequence[Any]) -> str:
    """Number documents as ``[i] title\\ntext`` blocks separated by blank lines.

    Items may be objects with ``title``/``text`` attributes, ``(title, text)``
    pairs, or bare strings.
    """
    blocks = []
    for i, item in enumerate(contexts, start=1):
        if isinstance(item, str):
            title, text = None, item
        elif isinstance(item, tuple):
            title, text = item
        else:
            title, text = getattr(item, "title", None), item.text
        blocks.append(f"[{i}] {title}\n{text}" if title else f"[{i}] {text}")
    return "\n\n".join(blocks)


def format_statements(statements: Sequence[str]) -> str:
    return "\n".join(f"{i}. {s}" for i, s in enumerate(statements, start=1))


def _coerce(name: str, value: Any) -> str:
    if isinstance(value, str):
        return value
    if name == "CONTEXTS":
        return format_contexts(value)
    if name == "STATEMENT":
        return format_statements(value)
    raise DataError(f"placeholder {name} needs a string, got {type(value).__name__}")


def render_prompt(
    template_id: str,
    variables: Mapping[str, Any],
    template_dir: str | Path | None = None,
) -> RenderedPrompt:
    """Substitute placeholders in one pass; substituted text is never re-scanned."""
    tpl = get_template(template_id, template_dir)
    missing = sorted(tpl.placeholders - set(variables))
    if missing:
        raise DataError(f"template {template_id!r} needs placeholder(s) {', '.join(missing)}", code="missing_placeholder")
    values = {k: _coerce(k, v) for k, v in variables.items() if k in tpl.placeholders}

    def sub(text: str) -> str:
        return _PLACEHOLDER_RE.sub(lambda m: values[m.group(1)], text)

    return RenderedPrompt(template_id, sub(tpl.system_text), sub(tpl.user_text))
