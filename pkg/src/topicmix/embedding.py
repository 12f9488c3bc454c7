"""Document embeddings: a deterministic local featurizer, a remote
embeddings-service client, and the binary matrix container (magic "EMB1").

Rows are always unit L2 norm and ordered by document id, so downstream
clustering and classification see the same matrix no matter how the
vectors were produced.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import os
import struct
import time
from collections.abc import Iterable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .corpus import Document
from .errors import DataError, ServiceError

MAGIC = b"EMB1"
FORMAT_VERSION = 1

TOKEN_ENV_VAR = "MIX_EMBED_TOKEN"

RETRYABLE_STATUS = {408, 429, 500, 502, 503, 504}
MAX_ATTEMPTS = 5


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense row-major embeddings keyed by document id."""

    ids: tuple[str, ...]
    vectors: np.ndarray  # (n, dim) float32

    def __post_init__(self):
        if self.vectors.ndim != 2:
            raise DataError("embedding matrix must be 2-D")
        if len(self.ids) != self.vectors.shape[0]:
            raise DataError("row count does not match id count")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.ids)

    def row(self, doc_id: str) -> np.ndarray:
        try:
            return self.vectors[self.ids.index(doc_id)]
        except ValueError:
            raise DataError(f"no embedding for document id {doc_id!r}") from None

    def index(self) -> dict[str, int]:
        return {doc_id: i for i, doc_id in enumerate(self.ids)}

    def take(self, doc_ids: Iterable[str]) -> np.ndarray:
        """Rows for the given ids, in the given order."""
        idx = self.index()
        missing = [d for d in doc_ids if d not in idx]
        if missing:
            shown = ", ".join(missing[:10])
            more = "" if len(missing) <= 10 else f" (+{len(missing) - 10} more)"
            raise DataError(f"documents without embedding: {shown}{more}")
        return self.vectors[[idx[d] for d in doc_ids]]


def _normalize_rows(vectors: np.ndarray) -> np.ndarray:
    """Unit-normalize float32 rows; idempotent on already-normalized rows.

    Rows whose norm is already within 1e-6 of one are returned verbatim so
    that write/read round-trips stay bit-exact.
    """
    vectors = np.asarray(vectors, dtype=np.float32)
    norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise DataError(f"cannot normalize zero embedding row (row {bad})")
    needs = np.abs(norms - 1.0) > 1e-6
    if not np.any(needs):
        return vectors
    out = vectors.copy()
    out[needs] = (vectors[needs].astype(np.float64) / norms[needs, None]).astype(np.float32)
    return out


def write_embeddings(path: str | Path, mat: EmbeddingMatrix, normalize: bool = True) -> None:
    """Write the EMB1 container plus the ".ids" sidecar (both atomically).

    Layout: magic "EMB1", u32 version, u32 dim, u64 count, then count
    rows of little-endian float32.
    """
    from .ioutil import atomic_open

    path = Path(path)
    vectors = _normalize_rows(mat.vectors) if normalize else np.asarray(mat.vectors, np.float32)
    with atomic_open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQ", FORMAT_VERSION, mat.dim, len(mat.ids)))
        fh.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())
    with atomic_open(str(path) + ".ids", "w") as fh:
        for doc_id in mat.ids:
            fh.write(doc_id + "\n")


def read_embeddings(path: str | Path) -> EmbeddingMatrix:
    path = Path(path)
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        version, dim, count = struct.unpack("<IIQ", fh.read(16))
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported version {version}")
        data = fh.read(4 * dim * count)
        if len(data) != 4 * dim * count:
            raise DataError(f"{path}: truncated matrix payload")
        vectors = np.frombuffer(data, dtype="<f4").reshape(count, dim).copy()
    ids_path = str(path) + ".ids"
    with open(ids_path, "r", encoding="utf-8") as fh:
        ids = tuple(line.rstrip("\n") for line in fh)
    if len(ids) != count:
        raise DataError(f"{ids_path}: id count {len(ids)} does not match matrix rows {count}")
    return EmbeddingMatrix(ids=ids, vectors=vectors)


# ---------------------------------------------------------------------------
# Local featurizer: hashed bag of words
# ---------------------------------------------------------------------------

def _hash_token(token: str, dim: int, key: bytes) -> tuple[int, float]:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=9, key=key).digest()
    bucket = int.from_bytes(digest[:8], "little") % dim
    sign = 1.0 if digest[8] & 1 else -1.0
    return bucket, sign


def local_features(text: str, dim: int, seed: int) -> np.ndarray:
    """Hashed bag-of-words vector for one text, unit L2 norm, float32.

    Pure function of (text, dim, seed): every whitespace token is hashed to
    a bucket with a +/-1 sign from a keyed hash and accumulated. Texts with
    no tokens map to the first basis vector (documented degenerate rule).
    """
    if dim < 2:
        raise DataError("embedding dim must be >= 2")
    key = int(seed).to_bytes(8, "little", signed=False)
    acc = np.zeros(dim, dtype=np.float64)
    for token in text.split():
        bucket, sign = _hash_token(token, dim, key)
        acc[bucket] += sign
    norm = np.linalg.norm(acc)
    if norm == 0.0:
        acc[0] = 1.0
        norm = 1.0
    return (acc / norm).astype(np.float32)


def embed_local(docs: Iterable[Document], dim: int = 64, seed: int = 0) -> EmbeddingMatrix:
    """Embed documents with the local featurizer; rows sorted by id."""
    pairs = sorted((doc.id, doc.text) for doc in docs)
    vectors = np.zeros((len(pairs), dim), dtype=np.float32)
    for i, (_, text) in enumerate(pairs):
        vectors[i] = local_features(text, dim, seed)
    return EmbeddingMatrix(ids=tuple(p[0] for p in pairs), vectors=_normalize_rows(vectors))


# ---------------------------------------------------------------------------
# Remote embeddings service
# ---------------------------------------------------------------------------

def _auth_headers(env_var: str) -> dict[str, str]:
    token = os.environ.get(env_var, "")
    return {"Authorization": f"Bearer {token}"} if token else {}


def post_with_retries(
    url: str,
    payload: dict,
    *,
    headers: dict[str, str] | None = None,
    timeout: float = 30.0,
    max_attempts: int = MAX_ATTEMPTS,
    retry_base: float = 0.5,
    session: requests.Session | None = None,
) -> dict:
    """POST JSON with exponential backoff on transient failures.

    Retryable: connection errors, timeouts, and HTTP 408/429/5xx. A
    non-retryable status raises immediately with the body excerpt.
    """
    post = (session or requests).post
    last: Exception | None = None
    for attempt in range(max_attempts):
        if attempt:
            time.sleep(retry_base * (2 ** (attempt - 1)))
        try:
            resp = post(url, json=payload, headers=headers or {}, timeout=timeout)
        except requests.RequestException as exc:
            last = exc
            continue
        if resp.status_code == 200:
            try:
                return resp.json()
            except ValueError as exc:
                raise ServiceError(f"{url}: response is not JSON: {exc}") from exc
        excerpt = resp.text[:200]
        if resp.status_code in RETRYABLE_STATUS:
            last = ServiceError(f"{url}: HTTP {resp.status_code}: {excerpt}")
            continue
        raise ServiceError(f"{url}: HTTP {resp.status_code}: {excerpt}")
    raise ServiceError(f"{url}: failed after {max_attempts} attempts: {last}")


def embed_remote(
    docs: Iterable[Document],
    endpoint: str,
    batch: int = 64,
    *,
    model: str | None = None,
    max_in_flight: int = 8,
    timeout: float = 30.0,
    retry_base: float = 0.5,
) -> EmbeddingMatrix:
    """Embed documents through a JSON embeddings API.

    Request: POST {"input": [texts...]} (plus "model" when configured);
    response: {"data": [{"index": i, "embedding": [...]}, ...]}. Batches
    are issued concurrently (at most ``max_in_flight`` in flight) and the
    output rows are sorted by document id regardless of completion order.
    Auth comes from the MIX_EMBED_TOKEN environment variable.
    """
    pairs = [(doc.id, doc.text) for doc in docs]
    if not pairs:
        raise DataError("no documents to embed")
    headers = _auth_headers(TOKEN_ENV_VAR)
    batches = [pairs[i:i + batch] for i in range(0, len(pairs), batch)]

    def run_batch(chunk: list[tuple[str, str]]) -> list[tuple[str, np.ndarray]]:
        payload: dict = {"input": [text for _, text in chunk]}
        if model:
            payload["model"] = model
        reply = post_with_retries(
            endpoint, payload, headers=headers, timeout=timeout, retry_base=retry_base
        )
        data = reply.get("data")
        if not isinstance(data, list) or len(data) != len(chunk):
            raise ServiceError(
                f"{endpoint}: expected {len(chunk)} embeddings, got "
                f"{len(data) if isinstance(data, list) else type(data).__name__}"
            )
        rows = sorted(data, key=lambda d: d["index"])
        return [
            (chunk[i][0], np.asarray(row["embedding"], dtype=np.float64))
            for i, row in enumerate(rows)
        ]

    results: dict[str, np.ndarray] = {}
    with concurrent.futures.ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        for out in pool.map(run_batch, batches):
            for doc_id, vec in out:
                results[doc_id] = vec

    dims = {v.shape[0] for v in results.values()}
    if len(dims) != 1:
        raise ServiceError(f"{endpoint}: dimension mismatch across batches: {sorted(dims)}")

    ids = tuple(sorted(results))
    vectors = np.stack([results[d] for d in ids]).astype(np.float32)
    return EmbeddingMatrix(ids=ids, vectors=_normalize_rows(vectors))
