"""File-backed score cache: one sorted JSONL file per view.

A cached row is reused only when its ``scorer_id`` matches the scorer
currently configured for that view, so changing a backend or one of its
parameters invalidates exactly the affected rows.
"""

from __future__ import annotations

import json
import os
import tempfile
import threading
from pathlib import Path
from typing import Iterable, Mapping

from polyview.errors import ConfigError
from polyview.views import View, ViewScore

CacheKey = tuple[str, str, str, str]  # (query_id, doc_id, view value, scorer_id)


def atomic_write_text(path: str | Path, text: str) -> None:
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def dump_json(obj: object) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n"


class ScoreCache:
    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)
        self._rows: dict[View, dict[CacheKey, ViewScore]] = {}
        self._lock = threading.Lock()

    def path_for(self, view: View) -> Path:
        return self.root / f"{view.value}.jsonl"

    def _load(self, view: View) -> dict[CacheKey, ViewScore]:
        if view not in self._rows:
            rows: dict[CacheKey, ViewScore] = {}
            path = self.path_for(view)
            if path.exists():
                for line_no, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
                    if not raw.strip():
                        continue
                    try:
                        vs = ViewScore.from_record(json.loads(raw))
                    except (ValueError, KeyError, TypeError) as exc:
                        raise ConfigError(f"{path}:{line_no}: corrupt cache row ({exc}); delete the file to rebuild") from None
                    rows[vs.key] = vs
            self._rows[view] = rows
        return self._rows[view]

    def get(self, query_id: str, doc_id: str, view: View, scorer_id: str) -> ViewScore | None:
        with self._lock:
            return self._load(view).get((query_id, doc_id, view.value, scorer_id))

    def lookup(self, view: View, scorer_id: str) -> dict[tuple[str, str], ViewScore]:
        """All rows for ``view`` produced by ``scorer_id``, keyed by (query_id, doc_id)."""
        with self._lock:
            return {(k[0], k[1]): vs for k, vs in self._load(view).items() if k[3] == scorer_id}

    def put_many(self, scores: Iterable[ViewScore]) -> None:
        with self._lock:
            for vs in scores:
                self._load(vs.view)[vs.key] = vs

    def flush(self, views: Iterable[View] | None = None) -> None:
        with self._lock:
            for view in views if views is not None else list(self._rows):
                rows = self._load(view)
                ordered = sorted(rows.values(), key=lambda vs: (vs.query_id, vs.doc_id, vs.scorer_id))
                text = "".join(json.dumps(vs.to_record(), ensure_ascii=False, sort_keys=True) + "\n" for vs in ordered)
                atomic_write_text(self.path_for(view), text)

    def counts(self) -> Mapping[View, int]:
        with self._lock:
            return {v: len(rows) for v, rows in self._rows.items()}
