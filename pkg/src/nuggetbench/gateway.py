"""Embedding and chat-completion gateway with retries, bounded parallelism,
an on-disk embedding cache, and exact dense search.

Two backends ship: ``HttpBackend`` speaks the OpenAI-compatible
``/embeddings`` and ``/chat/completions`` endpoints, and ``MockBackend``
(see :mod:`nuggetbench.mock`) answers deterministically offline.
"""

from __future__ import annotations

import logging
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence, TypeVar

import numpy as np

from .errors import ConfigurationError, ContractError, ProviderContractError, TransportError
from .io import atomic_write_bytes, sha256_text
from .runs import ScoredDoc

logger = logging.getLogger(__name__)

T = TypeVar("T")

DEFAULT_TEMPERATURE = 0.1


class TransientError(Exception):
    """A provider failure worth retrying (5xx, 429, network)."""


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    dims: int
    query_prefix: str = ""
    doc_prefix: str = ""
    max_chars: int = 32000


@dataclass
class GatewayConfig:
    backend: str = "mock"
    endpoint: str = ""
    credentials_env_var: str = ""
    max_parallel_requests: int = 4
    max_attempts: int = 3
    backoff: tuple[float, ...] = (1.0, 4.0, 16.0)
    timeout: float = 120.0
    batch_size: int = 32
    cache_dir: str | None = None
    models: dict[str, ModelSpec] = field(default_factory=dict)
    mock_fixtures: str | None = None
    mock_default_dims: int = 64

    def __post_init__(self):
        if self.backend not in ("mock", "http_provider"):
            raise ConfigurationError(f"unknown backend {self.backend!r}")
        if self.max_parallel_requests < 1:
            raise ConfigurationError("max_parallel_requests must be >= 1")
        if self.max_attempts < 1:
            raise ConfigurationError("max_attempts must be >= 1")

    @classmethod
    def from_dict(cls, data: dict) -> "GatewayConfig":
        data = dict(data)
        models = {}
        for model_id, spec in (data.pop("models", None) or {}).items():
            models[model_id] = ModelSpec(model_id=model_id, **spec)
        if "backoff" in data:
            data["backoff"] = tuple(float(x) for x in data["backoff"])
        return cls(models=models, **data)


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    system_text: str
    user_text: str
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = 2048

    def __post_init__(self):
        if not 0.0 <= self.temperature <= 2.0:
            raise ContractError(f"temperature {self.temperature} outside [0, 2]")

    @property
    def prompt(self) -> str:
        return f"{self.system_text}\n\n{self.user_text}"

    @property
    def prompt_sha(self) -> str:
        return sha256_text(self.prompt)


@dataclass
class ChatResponse:
    text: str
    finish_reason: str = "stop"
    usage: dict = field(default_factory=dict)
    attempt_count: int = 1


class Backend(Protocol):
    def embed(self, texts: Sequence[str], model: ModelSpec) -> np.ndarray: ...

    def complete(self, request: ChatRequest) -> ChatResponse: ...


class HttpBackend:
    def __init__(self, config: GatewayConfig):
        import httpx

        if not config.endpoint:
            raise ConfigurationError("http_provider backend needs an endpoint")
        headers = {}
        if config.credentials_env_var:
            key = os.environ.get(config.credentials_env_var)
            if not key:
                raise ConfigurationError(f"environment variable {config.credentials_env_var} is not set")
            headers["Authorization"] = f"Bearer {key}"
        self._httpx = httpx
        self._client = httpx.Client(base_url=config.endpoint.rstrip("/"), headers=headers, timeout=config.timeout)

    def _post(self, path: str, payload: dict) -> dict:
        try:
            resp = self._client.post(path, json=payload)
        except self._httpx.TransportError as exc:
            raise TransientError(f"{type(exc).__name__}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransientError(f"HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:300]}")
        return resp.json()

    def embed(self, texts, model):
        data = self._post("/embeddings", {"model": model.model_id, "input": list(texts)})
        rows = sorted(data["data"], key=lambda r: r.get("index", 0))
        return np.asarray([r["embedding"] for r in rows], dtype=np.float64)

    def complete(self, request):
        data = self._post(
            "/chat/completions",
            {
                "model": request.model_id,
                "messages": [
                    {"role": "system", "content": request.system_text},
                    {"role": "user", "content": request.user_text},
                ],
                "temperature": request.temperature,
                "max_tokens": request.max_output_tokens,
            },
        )
        choice = data["choices"][0]
        return ChatResponse(
            text=(choice.get("message") or {}).get("content") or "",
            finish_reason=choice.get("finish_reason") or "",
            usage=dict(data.get("usage") or {}),
        )


def row_dots(matrix: np.ndarray, vec: np.ndarray, block: int = 4096) -> np.ndarray:
    """``matrix @ vec`` without BLAS.

    BLAS kernels pick a summation order per CPU, so the last bits of a dot
    product can differ between machines. An elementwise product followed by
    numpy's own reduction adds in a fixed order, which keeps scores and the
    files derived from them byte-identical everywhere.
    """
    out = np.empty(matrix.shape[0], dtype=np.float64)
    for i in range(0, matrix.shape[0], block):
        out[i : i + block] = (matrix[i : i + block] * vec).sum(axis=1)
    return out


def l2_normalize(matrix: np.ndarray) -> np.ndarray:
    matrix = np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(matrix)):
        raise ProviderContractError("embedding contains non-finite values")
    norms = np.sqrt((matrix * matrix).sum(axis=-1, keepdims=True))
    if np.any(norms == 0):
        raise ProviderContractError("zero-length embedding")
    return matrix / norms


class EmbeddingCache:
    """One ``.npy`` file per (model_id, text) under ``root``."""

    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)

    def _path(self, model_id: str, text: str) -> Path:
        digest = sha256_text(text)
        safe_model = "".join(c if c.isalnum() or c in "-._" else "_" for c in model_id)
        return self.root / safe_model / digest[:2] / f"{digest}.npy"

    def get(self, model_id: str, text: str) -> np.ndarray | None:
        p = self._path(model_id, text)
        if not p.exists():
            return None
        return np.load(p)

    def put(self, model_id: str, text: str, vec: np.ndarray) -> None:
        import io

        buf = io.BytesIO()
        np.save(buf, np.asarray(vec, dtype=np.float64))
        atomic_write_bytes(self._path(model_id, text), buf.getvalue())


class Gateway:
    def __init__(self, config: GatewayConfig, backend: Backend | None = None, sleep: Callable[[float], None] = time.sleep):
        self.config = config
        if backend is None:
            if config.backend == "mock":
                from .mock import MockBackend

                backend = MockBackend.from_file(config.mock_fixtures) if config.mock_fixtures else MockBackend()
            else:
                backend = HttpBackend(config)
        self.backend = backend
        self.cache = EmbeddingCache(config.cache_dir) if config.cache_dir else None
        self._sleep = sleep
        self._slots = threading.BoundedSemaphore(config.max_parallel_requests)
        self._lock = threading.Lock()
        self.in_flight = 0
        self.peak_in_flight = 0
        self.request_log: list[dict] = []

    def model(self, model_id: str) -> ModelSpec:
        spec = self.config.models.get(model_id)
        if spec is None and self.config.backend == "mock":
            spec = ModelSpec(model_id, self.config.mock_default_dims)
        if spec is None:
            raise ConfigurationError(f"model {model_id!r} is not registered")
        return spec

    def _call(self, fn: Callable[[], T], what: str) -> tuple[T, int]:
        attempts = []
        for attempt in range(1, self.config.max_attempts + 1):
            with self._slots:
                with self._lock:
                    self.in_flight += 1
                    self.peak_in_flight = max(self.peak_in_flight, self.in_flight)
                try:
                    return fn(), attempt
                except TransientError as exc:
                    attempts.append({"attempt": attempt, "error": str(exc)})
                    logger.warning("%s failed (attempt %d/%d): %s", what, attempt, self.config.max_attempts, exc)
                finally:
                    with self._lock:
                        self.in_flight -= 1
            if attempt < self.config.max_attempts and self.config.backoff:
                self._sleep(self.config.backoff[min(attempt - 1, len(self.config.backoff) - 1)])
        raise TransportError(f"{what} failed after {len(attempts)} attempts", attempts)

    def complete(self, request: ChatRequest) -> ChatResponse:
        response, attempts = self._call(lambda: self.backend.complete(request), f"chat {request.model_id}")
        response.attempt_count = attempts
        with self._lock:
            self.request_log.append(
                {
                    "model_id": request.model_id,
                    "prompt_sha": request.prompt_sha,
                    "temperature": request.temperature,
                    "max_output_tokens": request.max_output_tokens,
                    "attempt_count": attempts,
                }
            )
        if not response.text or not response.text.strip():
            raise ProviderContractError(f"empty response from {request.model_id}")
        return response

    def map(self, fn: Callable[[T], object], items: Sequence[T]) -> list:
        """Apply ``fn`` to every item with at most ``max_parallel_requests`` workers; order is preserved."""
        if len(items) <= 1 or self.config.max_parallel_requests == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(max_workers=self.config.max_parallel_requests) as pool:
            return list(pool.map(fn, items))

    def embed_texts(self, texts: Sequence[str], model_id: str, kind: str = "document") -> np.ndarray:
        """Embed ``texts`` in order and return a unit-normalised ``(len(texts), dims)`` matrix."""
        spec = self.model(model_id)
        prefix = spec.query_prefix if kind == "query" else spec.doc_prefix
        prepared = []
        for t in texts:
            if not t:
                raise ContractError("cannot embed an empty text")
            prepared.append((prefix + t)[: spec.max_chars])

        out: list[np.ndarray | None] = [None] * len(prepared)
        missing = []
        for i, text in enumerate(prepared):
            cached = self.cache.get(model_id, text) if self.cache else None
            if cached is not None and cached.shape == (spec.dims,):
                out[i] = cached
            else:
                missing.append(i)

        batches = [missing[i : i + self.config.batch_size] for i in range(0, len(missing), self.config.batch_size)]

        def run_batch(idx: list[int]) -> np.ndarray:
            batch = [prepared[i] for i in idx]
            vecs, _ = self._call(lambda: self.backend.embed(batch, spec), f"embed {model_id}")
            vecs = np.asarray(vecs, dtype=np.float64)
            if vecs.shape != (len(batch), spec.dims):
                raise ContractError(
                    f"{model_id}: expected {(len(batch), spec.dims)} embeddings, got {vecs.shape}"
                )
            return l2_normalize(vecs)

        for idx, vecs in zip(batches, self.map(run_batch, batches)):
            for i, v in zip(idx, vecs):
                out[i] = v
                if self.cache:
                    self.cache.put(model_id, prepared[i], v)
        if not out:
            return np.zeros((0, spec.dims))
        return np.vstack(out)


@dataclass
class DenseIndex:
    matrix: np.ndarray
    doc_ids: list[str]
    model_id: str

    def __post_init__(self):
        if self.matrix.shape[0] != len(self.doc_ids):
            raise ContractError("row count does not match doc count")
        # rank of each row in ascending doc_id order, for tie-breaking
        order = sorted(range(len(self.doc_ids)), key=self.doc_ids.__getitem__)
        self._id_rank = np.empty(len(order), dtype=np.int64)
        self._id_rank[order] = np.arange(len(order))

    @property
    def dims(self) -> int:
        return self.matrix.shape[1]

    def save(self, path: str | os.PathLike) -> None:
        import io

        buf = io.BytesIO()
        np.savez(buf, matrix=self.matrix, doc_ids=np.array(self.doc_ids, dtype=str), model_id=np.array(self.model_id))
        atomic_write_bytes(path, buf.getvalue())

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DenseIndex":
        with np.load(path, allow_pickle=False) as data:
            return cls(data["matrix"], [str(x) for x in data["doc_ids"]], str(data["model_id"]))


def build_dense_index(docs: Sequence[tuple[str, str]], gateway: Gateway, model_id: str) -> DenseIndex:
    ids = [d for d, _ in docs]
    matrix = gateway.embed_texts([t if t.strip() else d for d, t in docs], model_id, kind="document")
    return DenseIndex(matrix, ids, model_id)


def search_dense(index: DenseIndex, query_vec: np.ndarray, k: int) -> list[ScoredDoc]:
    """Exact inner-product search; with unit vectors the score is the cosine."""
    q = np.asarray(query_vec, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dims:
        raise ContractError(f"query has {q.shape[0]} dims, index has {index.dims}")
    if k < 1:
        raise ValueError("k must be >= 1")
    scores = row_dots(index.matrix, q)
    order = np.lexsort((index._id_rank, -scores))[:k]
    return [ScoredDoc(index.doc_ids[i], float(scores[i]), r) for r, i in enumerate(order, 1)]
