"""Okapi BM25 over an in-memory inverted index.

The analyzer lowercases and splits on runs of non-alphanumeric characters;
there is no stemming and no stopword list.
"""

from __future__ import annotations

import bisect
import json
import math
import os
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import EmptyCorpusError
from .io import atomic_write_text
from .runs import ScoredDoc, rank_scores

DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

_SPLIT_RE = re.compile(r"[^0-9a-z]+")


def analyze(text: str) -> list[str]:
    return [t for t in _SPLIT_RE.split(text.lower()) if t]


@dataclass
class InvertedIndex:
    postings: dict[str, list[tuple[int, int]]]
    doc_lengths: list[int]
    doc_ids: list[str]
    avg_doc_len: float
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    @property
    def N(self) -> int:
        return len(self.doc_ids)

    def df(self, term: str) -> int:
        return len(self.postings.get(term, ()))

    def tf(self, term: str, ordinal: int) -> int:
        plist = self.postings.get(term)
        if not plist:
            return 0
        i = bisect.bisect_left(plist, (ordinal, 0))
        if i < len(plist) and plist[i][0] == ordinal:
            return plist[i][1]
        return 0

    def to_json(self) -> dict:
        return {
            "doc_ids": self.doc_ids,
            "doc_lengths": self.doc_lengths,
            "avg_doc_len": self.avg_doc_len,
            "k1": self.k1,
            "b": self.b,
            "postings": {t: [list(p) for p in plist] for t, plist in sorted(self.postings.items())},
        }

    @classmethod
    def from_json(cls, data: dict) -> "InvertedIndex":
        return cls(
            postings={t: [tuple(p) for p in plist] for t, plist in data["postings"].items()},
            doc_lengths=list(data["doc_lengths"]),
            doc_ids=list(data["doc_ids"]),
            avg_doc_len=float(data["avg_doc_len"]),
            k1=float(data.get("k1", DEFAULT_K1)),
            b=float(data.get("b", DEFAULT_B)),
        )


def build_lexical_index(
    docs: Iterable[tuple[str, str]], k1: float = DEFAULT_K1, b: float = DEFAULT_B
) -> InvertedIndex:
    """Index ``(doc_id, text)`` pairs; ordinals follow input order."""
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths = []
    doc_ids = []
    for ordinal, (doc_id, text) in enumerate(docs):
        terms = analyze(text)
        doc_ids.append(doc_id)
        doc_lengths.append(len(terms))
        for term, tf in Counter(terms).items():
            postings.setdefault(term, []).append((ordinal, tf))
    if not doc_ids:
        raise EmptyCorpusError("cannot index an empty corpus")
    if len(set(doc_ids)) != len(doc_ids):
        raise ValueError("duplicate doc_id in corpus")
    return InvertedIndex(
        postings=postings,
        doc_lengths=doc_lengths,
        doc_ids=doc_ids,
        avg_doc_len=sum(doc_lengths) / len(doc_lengths),
        k1=k1,
        b=b,
    )


def idf(df: int, n: int) -> float:
    return math.log(1.0 + (n - df + 0.5) / (df + 0.5))


def _term_weight(tf: int, df: int, n: int, dl: int, avgdl: float, k1: float, b: float) -> float:
    norm = 1.0 - b + b * dl / avgdl if avgdl > 0 else 1.0
    return idf(df, n) * (tf * (k1 + 1.0)) / (tf + k1 * norm)


def bm25_score(index: InvertedIndex, query_terms: Sequence[str], ordinal: int) -> float:
    """BM25 score of one document. Each query token occurrence contributes separately."""
    if not 0 <= ordinal < index.N:
        raise IndexError(f"ordinal {ordinal} out of range")
    score = 0.0
    dl = index.doc_lengths[ordinal]
    for term in query_terms:
        tf = index.tf(term, ordinal)
        if tf:
            score += _term_weight(tf, index.df(term), index.N, dl, index.avg_doc_len, index.k1, index.b)
    return score


def search_lexical(index: InvertedIndex, query: str, k: int) -> list[ScoredDoc]:
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = analyze(query)
    acc: dict[int, float] = {}
    n, avgdl = index.N, index.avg_doc_len
    for term in terms:
        plist = index.postings.get(term)
        if not plist:
            continue
        df = len(plist)
        for ordinal, tf in plist:
            w = _term_weight(tf, df, n, index.doc_lengths[ordinal], avgdl, index.k1, index.b)
            acc[ordinal] = acc.get(ordinal, 0.0) + w
    scores = {index.doc_ids[o]: s for o, s in acc.items() if s > 0}
    return rank_scores(scores, k)


def save_index(index: InvertedIndex, directory: str | os.PathLike) -> Path:
    path = Path(directory) / "bm25.json"
    atomic_write_text(path, json.dumps(index.to_json(), separators=(",", ":"), sort_keys=True))
    return path


def load_index(directory: str | os.PathLike) -> InvertedIndex:
    with open(Path(directory) / "bm25.json", encoding="utf-8") as f:
        return InvertedIndex.from_json(json.load(f))
