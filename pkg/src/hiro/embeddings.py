"""Dense sentence embedding providers.

Three interchangeable sources: a file-backed store (manifest JSON plus raw
little-endian float32 rows), an HTTP service, and a seeded hash-based mock
for offline tests. All providers return float64 arrays of shape
(n_sentences, dim) aligned with the requested sentences.
"""
from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests

from .corpus import Sentence, tokenize
from .errors import HiroError, TransportError
from .util import write_bytes_atomic, write_json_atomic

EMBEDDINGS_FORMAT_VERSION = 1


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, sentences: Sequence[Sentence]) -> np.ndarray: ...


class MockEmbeddings:
    """Deterministic pseudo-embeddings derived from sentence tokens.

    Each token maps to a fixed Gaussian vector seeded from its hash, and a
    sentence embeds as the normalized token-vector sum, so lexically similar
    sentences land close together. Stable across processes and platforms.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._token_cache: dict[str, np.ndarray] = {}

    def _token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.sha256(f"hiro-mock-v1|{self.seed}|{token}".encode("utf-8")).digest()
            rng = np.random.default_rng(int.from_bytes(digest[:8], "big"))
            vec = rng.standard_normal(self.dim)
            self._token_cache[token] = vec
        return vec

    def embed(self, sentences: Sequence[Sentence]) -> np.ndarray:
        out = np.zeros((len(sentences), self.dim))
        for i, sent in enumerate(sentences):
            tokens = sent.tokens or tuple(tokenize(sent.text)) or ("",)
            acc = np.zeros(self.dim)
            for tok in tokens:
                acc += self._token_vector(tok)
            norm = np.linalg.norm(acc)
            out[i] = acc / norm if norm > 0 else self._token_vector("")
        return out


class FileEmbeddings:
    """Embeddings stored as a manifest JSON plus a raw float32 matrix."""

    def __init__(self, manifest_path: str | Path):
        manifest_path = Path(manifest_path)
        doc = json.loads(manifest_path.read_text(encoding="utf-8"))
        if doc.get("version") != EMBEDDINGS_FORMAT_VERSION:
            raise HiroError(f"unsupported embeddings version {doc.get('version')!r}")
        self.dim = int(doc["dim"])
        ids = list(doc["ids"])
        data_path = manifest_path.parent / doc["data_file"]
        raw = np.fromfile(data_path, dtype="<f4")
        if raw.size != len(ids) * self.dim:
            raise HiroError(
                f"embedding data size mismatch: expected {len(ids) * self.dim} floats, "
                f"found {raw.size} in {data_path}"
            )
        self._matrix = raw.reshape(len(ids), self.dim).astype(np.float64)
        self._row_of = {sid: i for i, sid in enumerate(ids)}

    def embed(self, sentences: Sequence[Sentence]) -> np.ndarray:
        rows = []
        for sent in sentences:
            idx = self._row_of.get(sent.id)
            if idx is None:
                raise HiroError(f"no embedding stored for sentence {sent.id!r}")
            rows.append(self._matrix[idx])
        return np.asarray(rows).reshape(len(sentences), self.dim)


def write_embedding_file(manifest_path: str | Path, ids: Sequence[str], matrix: np.ndarray) -> None:
    """Persist embeddings in the file-provider layout next to the manifest."""
    manifest_path = Path(manifest_path)
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != len(ids):
        raise HiroError("embedding matrix must be 2-D with one row per id")
    data_file = manifest_path.stem + ".f32"
    write_bytes_atomic(manifest_path.parent / data_file, matrix.astype("<f4").tobytes())
    write_json_atomic(
        manifest_path,
        {
            "version": EMBEDDINGS_FORMAT_VERSION,
            "dim": int(matrix.shape[1]),
            "count": len(ids),
            "ids": list(ids),
            "data_file": data_file,
        },
    )


class HttpEmbeddings:
    """Embedding service client: POST {"texts": [...]} -> {"embeddings": [[...]]}."""

    def __init__(
        self,
        endpoint: str,
        dim: int,
        batch_size: int = 64,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 0.5,
    ):
        self.endpoint = endpoint
        self.dim = dim
        self.batch_size = batch_size
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def _post(self, texts: list[str]) -> list[list[float]]:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = requests.post(self.endpoint, json={"texts": texts}, timeout=self.timeout)
                resp.raise_for_status()
                return resp.json()["embeddings"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * (2**attempt))
        raise TransportError(
            f"embedding request failed after {self.max_retries + 1} attempts: {last_error}"
        )

    def embed(self, sentences: Sequence[Sentence]) -> np.ndarray:
        texts = [s.text for s in sentences]
        rows: list[list[float]] = []
        for start in range(0, len(texts), self.batch_size):
            rows.extend(self._post(texts[start : start + self.batch_size]))
        out = np.asarray(rows, dtype=np.float64)
        if out.shape != (len(sentences), self.dim):
            raise HiroError(
                f"embedding service returned shape {out.shape}, expected {(len(sentences), self.dim)}"
            )
        return out
