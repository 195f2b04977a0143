"""Query variants, judgment pools, nugget-level support judging, qrels and
the two post-judging dataset filters."""

from __future__ import annotations

import logging
import math
import os
import re
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from .errors import (
    ContractError,
    IntegrityError,
    JudgingError,
    NuggetBenchError,
    ParseError,
    PoolingError,
    ProviderContractError,
)
from .gateway import ChatRequest, Gateway
from .io import atomic_write_text
from .nuggets import Nugget, QuestionRecord, parse_nugget_response
from .prompts import load_template
from .runs import ScoredDoc

logger = logging.getLogger(__name__)

VARIANT_KINDS = ("raw_question", "sub_questions", "closed_book_answer", "so_answer", "so_nuggets")
ORACLE_KINDS = frozenset({"so_answer", "so_nuggets"})
MAX_JUDGE_BATCH = 20

_CELL_RE = re.compile(
    r"nugget[\s_#-]*(\d+)\W+doc(?:ument)?[\s_#-]*(\d+)\s*[:=\-]+\s*\**\s*(yes|no|true|false|supported|unsupported)\b",
    re.IGNORECASE,
)
_POSITIVE = {"yes", "true", "supported"}


@dataclass(frozen=True)
class QueryVariant:
    kind: str
    text: str

    def __post_init__(self):
        if self.kind not in VARIANT_KINDS:
            raise ContractError(f"unknown variant kind {self.kind!r}")
        if not self.text.strip():
            raise ContractError(f"{self.kind} variant is empty")

    @property
    def oracle(self) -> bool:
        return self.kind in ORACLE_KINDS


def make_variant(
    q: QuestionRecord,
    kind: str,
    gateway: Gateway | None = None,
    model_id: str = "",
    nuggets: Sequence[Nugget] | None = None,
    temperature: float = 0.1,
) -> QueryVariant:
    if kind == "raw_question":
        return QueryVariant(kind, q.text)
    if kind == "so_answer":
        return QueryVariant(kind, q.accepted_answer)
    if kind == "so_nuggets":
        if not nuggets:
            raise ContractError(f"{q.question_id}: so_nuggets needs generated nuggets")
        return QueryVariant(kind, "\n".join(n.text for n in sorted(nuggets, key=lambda n: n.ordinal)))
    if gateway is None:
        raise ContractError(f"{kind} variant needs a gateway")
    if kind == "sub_questions":
        system, user = load_template("sub_questions").render(title=q.title, body=q.body)
        raw = gateway.complete(ChatRequest(model_id, system, user, temperature)).text
        return QueryVariant(kind, "\n".join(parse_nugget_response(raw)))
    if kind == "closed_book_answer":
        system, user = load_template("closed_book").render(title=q.title, body=q.body)
        return QueryVariant(kind, gateway.complete(ChatRequest(model_id, system, user, temperature)).text.strip())
    raise ContractError(f"unknown variant kind {kind!r}")


def make_variants(
    q: QuestionRecord,
    kinds: Iterable[str],
    gateway: Gateway | None,
    model_id: str,
    nuggets: Sequence[Nugget] | None = None,
    temperature: float = 0.1,
) -> tuple[dict[str, QueryVariant], list[str]]:
    """Build every requested variant; failures are logged and returned as unavailable."""
    variants, unavailable = {}, []
    for kind in kinds:
        try:
            variants[kind] = make_variant(q, kind, gateway, model_id, nuggets, temperature)
        except (NuggetBenchError, ParseError) as exc:
            logger.warning("%s: %s variant unavailable: %s", q.question_id, kind, exc)
            unavailable.append(kind)
    return variants, unavailable


@dataclass
class JudgmentPool:
    question_id: str
    entries: dict[str, tuple[str, ...]] = field(default_factory=dict)

    @property
    def doc_ids(self) -> list[str]:
        return list(self.entries)

    def to_json(self) -> dict:
        return {
            "question_id": self.question_id,
            "entries": [{"doc_id": d, "provenance": list(p)} for d, p in self.entries.items()],
        }

    @classmethod
    def from_json(cls, row: dict) -> "JudgmentPool":
        return cls(row["question_id"], {e["doc_id"]: tuple(e["provenance"]) for e in row["entries"]})


def pool_from_runs(question_id: str, variant_runs: Mapping[str, Sequence[ScoredDoc]], per_variant_k: int = 20) -> JudgmentPool:
    """Union of each variant's top ``per_variant_k`` docs.

    Entries keep first-seen order, walking variants in canonical kind order and
    each list in rank order; every doc carries the kinds that retrieved it.
    """
    if not variant_runs:
        raise PoolingError(f"{question_id}: no query variants available")
    prov: dict[str, list[str]] = {}
    kinds = [k for k in VARIANT_KINDS if k in variant_runs] + sorted(set(variant_runs) - set(VARIANT_KINDS))
    for kind in kinds:
        for d in list(variant_runs[kind])[:per_variant_k]:
            tags = prov.setdefault(d.doc_id, [])
            if kind not in tags:
                tags.append(kind)
    return JudgmentPool(question_id, {d: tuple(t) for d, t in prov.items()})


def assemble_pool(
    q: QuestionRecord,
    variants: Mapping[str, QueryVariant],
    retrieve: Callable[[str], Sequence[ScoredDoc]],
    per_variant_k: int = 20,
) -> JudgmentPool:
    """Retrieve with every variant through ``retrieve`` (the fused stack) and pool the results."""
    if not variants:
        raise PoolingError(f"{q.question_id}: all variants unavailable")
    runs = {kind: retrieve(v.text) for kind, v in variants.items()}
    return pool_from_runs(q.question_id, runs, per_variant_k)


@dataclass(frozen=True)
class SupportJudgment:
    question_id: str
    nugget_id: str
    doc_id: str
    supported: bool
    judge_model_id: str = ""
    batch_id: str = ""

    def to_json(self) -> dict:
        return asdict(self)


def _render_judge_prompt(q: QuestionRecord, nuggets: Sequence[Nugget], docs: Sequence[tuple[str, str]]):
    nugget_block = "\n".join(f"[Nugget {i}] {n.text}" for i, n in enumerate(nuggets, 1))
    doc_block = "\n".join(f"[Document {j}] {doc_id}\n{text}\n[/Document {j}]" for j, (doc_id, text) in enumerate(docs, 1))
    return load_template("judge_support").render(
        question=q.text, nuggets=nugget_block, documents=doc_block, n_nuggets=len(nuggets), n_docs=len(docs)
    )


def parse_support_grid(raw: str, n_nuggets: int, n_docs: int) -> dict[tuple[int, int], bool]:
    """Parse ``nugget_i doc_j: yes|no`` lines into {(i, j): bool} (1-based).

    Only text after a ``JUDGMENTS:`` marker is read when the marker exists, so
    chain-of-thought reasoning above it cannot leak cells. Later lines win.
    """
    idx = raw.upper().rfind("JUDGMENTS:")
    body = raw[idx:] if idx >= 0 else raw
    cells = {}
    for m in _CELL_RE.finditer(body):
        i, j = int(m.group(1)), int(m.group(2))
        if 1 <= i <= n_nuggets and 1 <= j <= n_docs:
            cells[(i, j)] = m.group(3).lower() in _POSITIVE
    return cells


def judge_support_batch(
    q: QuestionRecord,
    nuggets: Sequence[Nugget],
    docs: Sequence[tuple[str, str]],
    gateway: Gateway,
    model_id: str,
    batch_id: str = "",
    temperature: float = 0.1,
) -> list[SupportJudgment]:
    """Judge every (nugget, doc) pair of one batch with a single LLM call."""
    if not nuggets:
        raise ContractError(f"{q.question_id}: no nuggets to judge")
    if not 1 <= len(docs) <= MAX_JUDGE_BATCH:
        raise ContractError(f"judge batch must hold 1..{MAX_JUDGE_BATCH} docs, got {len(docs)}")
    system, user = _render_judge_prompt(q, nuggets, docs)
    expected = {(i, j) for i in range(1, len(nuggets) + 1) for j in range(1, len(docs) + 1)}
    cells: dict[tuple[int, int], bool] = {}
    for attempt in range(2):
        prompt = user
        if attempt:
            prompt += (
                "\n\nYour previous reply was incomplete. After \"JUDGMENTS:\" list every pair "
                "as \"nugget_<i> doc_<j>: yes\" or \"nugget_<i> doc_<j>: no\"."
            )
        try:
            raw = gateway.complete(ChatRequest(model_id, system, prompt, temperature)).text
        except ProviderContractError as exc:
            logger.warning("%s %s: empty judge reply: %s", q.question_id, batch_id, exc)
            raw = ""
        parsed = parse_support_grid(raw, len(nuggets), len(docs))
        for key, value in parsed.items():
            cells.setdefault(key, value)
        if expected <= cells.keys():
            break
    if not cells:
        raise JudgingError(f"{q.question_id} {batch_id}: judge reply unparseable twice")
    missing = expected - cells.keys()
    if missing:
        logger.warning("%s %s: %d cells missing, defaulting to unsupported", q.question_id, batch_id, len(missing))
    out = []
    for i, n in enumerate(nuggets, 1):
        for j, (doc_id, _) in enumerate(docs, 1):
            out.append(SupportJudgment(q.question_id, n.nugget_id, doc_id, cells.get((i, j), False), model_id, batch_id))
    return out


def judge_pool(
    q: QuestionRecord,
    nuggets: Sequence[Nugget],
    pool: JudgmentPool,
    doc_text: Mapping[str, str],
    gateway: Gateway,
    model_id: str,
    batch_size: int = MAX_JUDGE_BATCH,
    temperature: float = 0.1,
) -> list[SupportJudgment]:
    """Split the pool into ceil(n / batch_size) calls; batches run in pool order."""
    batch_size = min(batch_size, MAX_JUDGE_BATCH)
    ids = pool.doc_ids
    out = []
    for b in range(math.ceil(len(ids) / batch_size)):
        chunk = ids[b * batch_size : (b + 1) * batch_size]
        docs = [(d, doc_text[d]) for d in chunk]
        out.extend(judge_support_batch(q, nuggets, docs, gateway, model_id, f"{q.question_id}:b{b}", temperature))
    return out


@dataclass
class NuggetQrels:
    """Binary nugget-level relevance: (question_id, nugget_id) -> relevant doc_ids."""

    by_nugget: dict[tuple[str, str], set[str]] = field(default_factory=dict)

    def question_ids(self) -> list[str]:
        return sorted({q for q, _ in self.by_nugget})

    def nugget_docs(self, question_id: str) -> dict[str, set[str]]:
        return {n: docs for (q, n), docs in self.by_nugget.items() if q == question_id}

    def relevant_docs(self, question_id: str) -> set[str]:
        out: set[str] = set()
        for (q, _), docs in self.by_nugget.items():
            if q == question_id:
                out |= docs
        return out

    def rows(self) -> list[tuple[str, str, str]]:
        return sorted((q, n, d) for (q, n), docs in self.by_nugget.items() for d in docs)

    def __len__(self) -> int:
        return sum(len(d) for d in self.by_nugget.values())


def build_qrels(judgments: Iterable[SupportJudgment], corpus_ids: set[str] | None = None) -> NuggetQrels:
    seen: dict[tuple[str, str, str], bool] = {}
    for j in judgments:
        if corpus_ids is not None and j.doc_id not in corpus_ids:
            raise IntegrityError(f"{j.doc_id} is not in the corpus")
        key = (j.question_id, j.nugget_id, j.doc_id)
        if key in seen and seen[key] != j.supported:
            logger.warning("conflicting judgments for %s; keeping supported", key)
        seen[key] = seen.get(key, False) or j.supported
    qrels = NuggetQrels()
    for (q, n, d), ok in seen.items():
        if ok:
            qrels.by_nugget.setdefault((q, n), set()).add(d)
    return qrels


def format_qrels(qrels: NuggetQrels) -> str:
    return "".join(f"{q}\t{n}\t{d}\t1\n" for q, n, d in qrels.rows())


def write_qrels(qrels: NuggetQrels, path: str | os.PathLike) -> None:
    atomic_write_text(path, format_qrels(qrels))


def read_qrels(path: str | os.PathLike) -> NuggetQrels:
    qrels = NuggetQrels()
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise ValueError(f"{path}:{lineno}: expected 4 tab-separated columns")
            q, n, d, rel = parts
            if int(rel) > 0:
                qrels.by_nugget.setdefault((q, n), set()).add(d)
    return qrels


@dataclass
class FilterReport:
    total: int
    removed_unsupported_question: int
    removed_unsupported_nugget: int
    kept: int

    @property
    def step1_fraction(self) -> float:
        return self.removed_unsupported_question / self.total if self.total else 0.0

    @property
    def step2_fraction(self) -> float:
        return self.removed_unsupported_nugget / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {
            "total_questions": self.total,
            "step1_removed": self.removed_unsupported_question,
            "step1_fraction": self.step1_fraction,
            "step2_removed": self.removed_unsupported_nugget,
            "step2_fraction": self.step2_fraction,
            "kept": self.kept,
        }


def filter_dataset(
    questions: Sequence[QuestionRecord],
    nuggets: Mapping[str, Sequence[Nugget]],
    qrels: NuggetQrels,
) -> tuple[list[QuestionRecord], dict[str, list[Nugget]], NuggetQrels, FilterReport]:
    """Drop questions without any relevant doc, then questions with an unsupported nugget.

    Both fractions in the report are relative to the starting question count.
    """
    step1, step2 = 0, 0
    kept = []
    for q in questions:
        if not qrels.relevant_docs(q.question_id):
            step1 += 1
            continue
        q_nuggets = nuggets.get(q.question_id, [])
        if not q_nuggets or any(not qrels.by_nugget.get((q.question_id, n.nugget_id)) for n in q_nuggets):
            step2 += 1
            continue
        kept.append(q)
    keep_ids = {q.question_id for q in kept}
    kept_nuggets = {qid: list(ns) for qid, ns in nuggets.items() if qid in keep_ids}
    valid = {(qid, n.nugget_id) for qid, ns in kept_nuggets.items() for n in ns}
    kept_qrels = NuggetQrels({k: set(v) for k, v in qrels.by_nugget.items() if k in valid})
    report = FilterReport(len(questions), step1, step2, len(kept))
    if not kept:
        logger.warning("filtering removed every question")
    return kept, kept_nuggets, kept_qrels, report
