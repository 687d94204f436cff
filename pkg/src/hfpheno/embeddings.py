"""Pluggable n-gram embedding providers.

The training and explanation pipelines only require a provider exposing a
fixed dimension and a deterministic embed(text) -> vector mapping, so any
encoder can sit behind the seam: the hashed backend for self-contained
runs, a file store of precomputed vectors, or a remote encoder service.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import urllib.request
from pathlib import Path
from typing import Callable, Optional, Protocol, Sequence

import numpy as np

from .text import Vocabulary

STORE_FLOAT_FORMAT = "%.9g"


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, ngram: str) -> np.ndarray: ...


class HashedEmbedder:
    """Character 3-gram hashing into signed buckets, L2-normalized.

    Deterministic across processes (keyed blake2 digests, not Python's
    salted hash).  Non-empty input always yields a unit vector; the empty
    string maps to the zero vector.
    """

    def __init__(self, dim: int = 256, seed: int = 0):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed

    def get_params(self, deep: bool = True) -> dict:
        return {"dim": self.dim, "seed": self.seed}

    def _grams(self, text: str) -> list[str]:
        if len(text) < 3:
            return [text]
        return [text[i : i + 3] for i in range(len(text) - 2)] + [text]

    def embed(self, ngram: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        if not ngram:
            return vec
        for gram in self._grams(ngram):
            digest = hashlib.blake2b(
                gram.encode("utf-8"), digest_size=8, key=str(self.seed).encode("utf-8")
            ).digest()
            value = int.from_bytes(digest, "big")
            bucket = value % self.dim
            sign = 1.0 if (value >> 63) & 1 else -1.0
            vec[bucket] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # Pathological full cancellation: fall back to a one-hot bucket
            # so the unit-norm contract holds.
            digest = hashlib.blake2b(
                ngram.encode("utf-8"), digest_size=8, key=str(self.seed).encode("utf-8")
            ).digest()
            vec[int.from_bytes(digest, "big") % self.dim] = 1.0
            return vec
        return vec / norm


class FileEmbedder:
    """In-memory store of precomputed vectors; unknown n-grams are errors.

    A lookup miss signals a pipeline bug (inference must only request
    in-vocabulary n-grams), so it raises instead of returning zeros.
    """

    def __init__(self, vectors: dict[str, np.ndarray], dim: int):
        for ngram, vec in vectors.items():
            if vec.shape != (dim,):
                raise ValueError(f"vector for '{ngram}' has dim {vec.shape[0]}, expected {dim}")
        self.dim = dim
        self._vectors = vectors

    def embed(self, ngram: str) -> np.ndarray:
        vec = self._vectors.get(ngram)
        if vec is None:
            raise KeyError(f"n-gram not in embedding store: '{ngram}'")
        return vec

    def __contains__(self, ngram: str) -> bool:
        return ngram in self._vectors

    def __len__(self) -> int:
        return len(self._vectors)


Transport = Callable[[str, list[str]], list[list[float]]]


def _urllib_transport(url: str, ngrams: list[str], timeout: float) -> list[list[float]]:
    payload = json.dumps(ngrams).encode("utf-8")
    request = urllib.request.Request(
        url, data=payload, headers={"Content-Type": "application/json"}
    )
    with urllib.request.urlopen(request, timeout=timeout) as response:
        return json.loads(response.read().decode("utf-8"))


class RemoteEmbedder:
    """Client for an embedding sidecar: POST a JSON array of strings, get a
    JSON array of float arrays back.

    Responses are cached on disk per n-gram; cache files are written via
    temp-file-plus-rename so a failed request can never poison the cache.
    A custom transport can be injected for testing.
    """

    def __init__(
        self,
        base_url: Optional[str] = None,
        dim: int = 768,
        timeout: float = 30.0,
        cache_dir: Optional[str] = None,
        batch_size: int = 64,
        max_retries: int = 3,
        transport: Optional[Transport] = None,
    ):
        self.base_url = base_url or os.environ.get("EMBED_URL")
        if not self.base_url and transport is None:
            raise ValueError("RemoteEmbedder needs a base URL (or EMBED_URL) or a transport")
        self.dim = dim
        self.timeout = timeout
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self.batch_size = batch_size
        self.max_retries = max_retries
        self._transport = transport

    def _cache_path(self, ngram: str) -> Optional[Path]:
        if self.cache_dir is None:
            return None
        digest = hashlib.sha256(ngram.encode("utf-8")).hexdigest()
        return self.cache_dir / f"{digest}.json"

    def _cache_get(self, ngram: str) -> Optional[np.ndarray]:
        path = self._cache_path(ngram)
        if path is None or not path.exists():
            return None
        data = json.loads(path.read_text(encoding="utf-8"))
        return np.asarray(data, dtype=np.float64)

    def _cache_put(self, ngram: str, values: list[float]) -> None:
        path = self._cache_path(ngram)
        if path is None:
            return
        fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(values, fh)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    def _request(self, ngrams: list[str]) -> list[list[float]]:
        last_error: Optional[Exception] = None
        for _ in range(self.max_retries):
            try:
                if self._transport is not None:
                    return self._transport(self.base_url or "", ngrams)
                return _urllib_transport(self.base_url, ngrams, self.timeout)
            except Exception as exc:  # noqa: BLE001 - transport failures retried
                last_error = exc
        raise RuntimeError(
            f"embedding request failed after {self.max_retries} attempts "
            f"for batch starting with '{ngrams[0]}': {last_error}"
        ) from last_error

    def embed(self, ngram: str) -> np.ndarray:
        return self.embed_many([ngram])[0]

    def embed_many(self, ngrams: Sequence[str]) -> list[np.ndarray]:
        results: dict[str, np.ndarray] = {}
        missing: list[str] = []
        for ngram in dict.fromkeys(ngrams):
            cached = self._cache_get(ngram)
            if cached is not None:
                results[ngram] = cached
            else:
                missing.append(ngram)
        for start in range(0, len(missing), self.batch_size):
            batch = missing[start : start + self.batch_size]
            rows = self._request(batch)
            if len(rows) != len(batch):
                raise RuntimeError("embedding service returned a mismatched batch size")
            for ngram, row in zip(batch, rows):
                vec = np.asarray(row, dtype=np.float64)
                if vec.shape != (self.dim,):
                    raise RuntimeError(
                        f"embedding service returned dim {vec.shape[0]} for '{ngram}', "
                        f"expected {self.dim}"
                    )
                self._cache_put(ngram, row)
                results[ngram] = vec
        return [results[ngram] for ngram in ngrams]


def embed_batch(provider, ngrams: Sequence[str]) -> np.ndarray:
    """Embed a batch; duplicates are computed once and replicated."""
    matrix = np.zeros((len(ngrams), getattr(provider, "dim")), dtype=np.float64)
    if not ngrams:
        return matrix
    if isinstance(provider, RemoteEmbedder):
        rows = provider.embed_many(list(ngrams))
        for i, row in enumerate(rows):
            matrix[i] = row
        return matrix
    cache: dict[str, np.ndarray] = {}
    for i, ngram in enumerate(ngrams):
        vec = cache.get(ngram)
        if vec is None:
            vec = provider.embed(ngram)
            cache[ngram] = vec
        matrix[i] = vec
    return matrix


def ngram_text(ngram: tuple[str, ...]) -> str:
    return " ".join(ngram)


def export_store(provider, vocab: Vocabulary | Sequence[str], path) -> None:
    """Write a TSV embedding store for every vocabulary entry.

    Header line carries the dimension; values use 9 significant digits, so
    import followed by re-export is byte-stable.
    """
    if isinstance(vocab, Vocabulary):
        names = [ngram_text(g) for g in vocab.ordered_ngrams()]
    else:
        names = list(vocab)
    if not names:
        raise ValueError("cannot export an empty vocabulary")
    matrix = embed_batch(provider, names)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"dim={provider.dim}\n")
        for name, row in zip(names, matrix):
            values = ",".join(STORE_FLOAT_FORMAT % v for v in row)
            fh.write(f"{name}\t{values}\n")


def import_store(path) -> FileEmbedder:
    vectors: dict[str, np.ndarray] = {}
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise ValueError(f"{path}: missing 'dim=' header")
        dim = int(header.split("=", 1)[1])
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            try:
                name, values = line.split("\t")
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: expected two tab-separated fields") from exc
            row = np.array([float(v) for v in values.split(",")], dtype=np.float64)
            if row.shape != (dim,):
                raise ValueError(
                    f"{path}:{lineno}: row has {row.shape[0]} values, header says {dim}"
                )
            vectors[name] = row
    return FileEmbedder(vectors, dim)
