"""Embedding providers: text in, fixed-dimension vector out."""

from __future__ import annotations

import hashlib
import re
from abc import ABC, abstractmethod
from typing import Mapping, Sequence

import numpy as np

from polyview.errors import ConfigError

_TOKEN_RE = re.compile(r"\w+")
_CJK_RE = re.compile(r"[㐀-鿿]")


class EmbeddingProvider(ABC):
    """Interface every embedding backend implements.

    ``embed_query`` and ``embed_document`` are separate so asymmetric
    backends can encode the two sides differently; symmetric ones alias both
    to ``embed``.
    """

    provider_id: str
    dimension: int

    @abstractmethod
    def embed(self, text: str) -> np.ndarray: ...

    def embed_query(self, text: str) -> np.ndarray:
        return self.embed(text)

    def embed_document(self, text: str) -> np.ndarray:
        return self.embed(text)


def hash_tokens(text: str) -> list[str]:
    """Lowercased word tokens; CJK runs are split into single characters."""
    out: list[str] = []
    for tok in _TOKEN_RE.findall(text.lower()):
        if _CJK_RE.search(tok):
            out.extend(tok)
        else:
            out.append(tok)
    return out


class HashEmbedding(EmbeddingProvider):
    """Seeded bag-of-words random projection.

    Each token maps to a Gaussian vector drawn from a generator seeded by a
    hash of (seed, token); a text embeds to the sum over its tokens. Texts
    sharing most tokens land close in cosine distance. A text without tokens
    embeds to the zero vector.
    """

    def __init__(self, dimension: int = 64, seed: int = 0, name: str = "hash") -> None:
        if dimension < 1:
            raise ConfigError(f"embedding dimension must be >= 1, got {dimension}")
        self.dimension = dimension
        self.seed = seed
        self.provider_id = f"{name}-v1/d{dimension}/s{seed}"
        self._cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(f"{self.seed}\x00{token}".encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dimension)
            self._cache[token] = vec
        return vec

    def embed(self, text: str) -> np.ndarray:
        out = np.zeros(self.dimension)
        for tok in hash_tokens(text):
            out += self._token_vector(tok)
        return out


class StaticEmbedding(EmbeddingProvider):
    """Fixed text -> vector table; unknown texts raise ``KeyError``."""

    def __init__(self, vectors: Mapping[str, Sequence[float]], provider_id: str = "static") -> None:
        arrays = {k: np.asarray(v, dtype=float) for k, v in vectors.items()}
        dims = {a.shape for a in arrays.values()}
        if len(dims) != 1:
            raise ConfigError("static embedding vectors must share one dimension")
        self._vectors = arrays
        self.dimension = dims.pop()[0]
        self.provider_id = provider_id

    def embed(self, text: str) -> np.ndarray:
        return self._vectors[text]


def provider_from_spec(spec: str) -> EmbeddingProvider:
    """Build a provider from a config string such as ``hash:dim=64,seed=1``."""
    kind, _, params = spec.partition(":")
    opts: dict[str, str] = {}
    for part in filter(None, params.split(",")):
        key, sep, value = part.partition("=")
        if not sep:
            raise ConfigError(f"bad embedding option {part!r} in {spec!r}")
        opts[key.strip()] = value.strip()
    if kind == "hash":
        try:
            return HashEmbedding(dimension=int(opts.get("dim", 64)), seed=int(opts.get("seed", 0)), name=opts.get("name", "hash"))
        except ValueError as exc:
            raise ConfigError(f"bad embedding spec {spec!r}: {exc}") from None
    raise ConfigError(f"unknown embedding provider {kind!r}")
