"""Ranked lists and TREC run files."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import ContractError
from .io import atomic_write_text


@dataclass(frozen=True)
class ScoredDoc:
    doc_id: str
    score: float
    rank: int


@dataclass
class RetrievalRun:
    run_tag: str
    results: dict[str, list[ScoredDoc]] = field(default_factory=dict)

    def question_ids(self) -> list[str]:
        return sorted(self.results)

    def ranking(self, qid: str) -> list[str]:
        return [d.doc_id for d in self.results.get(qid, [])]


def rank_scores(scores: dict[str, float] | Iterable[tuple[str, float]], k: int | None = None) -> list[ScoredDoc]:
    """Sort by descending score, breaking ties by ascending doc_id, and assign 1-based ranks."""
    items = scores.items() if isinstance(scores, dict) else scores
    ordered = sorted(items, key=lambda kv: (-kv[1], kv[0]))
    if k is not None:
        ordered = ordered[:k]
    return [ScoredDoc(doc_id, float(score), i) for i, (doc_id, score) in enumerate(ordered, 1)]


def check_ranked_list(docs: Sequence[ScoredDoc]) -> None:
    seen = set()
    for i, d in enumerate(docs):
        if d.rank != i + 1:
            raise ContractError(f"rank {d.rank} at position {i + 1}")
        if d.doc_id in seen:
            raise ContractError(f"duplicate doc_id {d.doc_id}")
        seen.add(d.doc_id)
        if i and docs[i - 1].score < d.score:
            raise ContractError(f"scores increase at rank {d.rank}")


def format_trec(run: RetrievalRun) -> str:
    lines = []
    for qid in run.question_ids():
        for d in run.results[qid]:
            lines.append(f"{qid} Q0 {d.doc_id} {d.rank} {d.score!r} {run.run_tag}\n")
    return "".join(lines)


def write_trec(run: RetrievalRun, path: str | os.PathLike) -> None:
    atomic_write_text(path, format_trec(run))


def parse_trec(text: str, run_tag: str | None = None) -> RetrievalRun:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    tag = run_tag
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 6:
            raise ValueError(f"line {lineno}: expected 6 columns, got {len(parts)}")
        qid, _, doc_id, rank, score, line_tag = parts
        tag = tag or line_tag
        rows.setdefault(qid, []).append((int(rank), doc_id, float(score)))
    run = RetrievalRun(tag or "run")
    for qid, entries in rows.items():
        entries.sort()
        run.results[qid] = [ScoredDoc(doc_id, score, i) for i, (_, doc_id, score) in enumerate(entries, 1)]
    return run


def read_trec(path: str | os.PathLike, run_tag: str | None = None) -> RetrievalRun:
    with open(path, encoding="utf-8") as f:
        return parse_trec(f.read(), run_tag)
