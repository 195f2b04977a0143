"""Score fusion: per-question min-max normalisation of each model's top
``depth`` list, then a plain sum across models."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ContractError
from .runs import RetrievalRun, ScoredDoc, rank_scores

NORMALIZATIONS = ("min_max",)


@dataclass(frozen=True)
class FusionConfig:
    depth: int = 100
    output_depth: int = 100
    normalization: str = "min_max"

    def __post_init__(self):
        if not self.depth >= self.output_depth >= 1:
            raise ContractError("need depth >= output_depth >= 1")
        if self.normalization not in NORMALIZATIONS:
            raise ContractError(f"unsupported normalization {self.normalization!r}")


def normalize_list(docs: Sequence[ScoredDoc], depth: int = 100) -> list[ScoredDoc]:
    """Min-max scale the top ``depth`` entries into [0, 1].

    A list whose retained scores are all equal maps every entry to 1.0.
    """
    kept = list(docs[:depth])
    if not kept:
        return []
    lo = min(d.score for d in kept)
    hi = max(d.score for d in kept)
    if hi == lo:
        return [ScoredDoc(d.doc_id, 1.0, d.rank) for d in kept]
    span = hi - lo
    return [ScoredDoc(d.doc_id, (d.score - lo) / span, d.rank) for d in kept]


def normalize_run(run: RetrievalRun, depth: int = 100) -> RetrievalRun:
    return RetrievalRun(run.run_tag, {qid: normalize_list(docs, depth) for qid, docs in run.results.items()})


def fuse(runs: Sequence[RetrievalRun], output_depth: int = 100) -> RetrievalRun:
    """Sum already-normalised scores per document; a missing document adds 0."""
    if not runs:
        raise ContractError("fusion needs at least one run")
    qsets = [set(r.results) for r in runs]
    union = set().union(*qsets)
    common = set.intersection(*qsets)
    if union != common:
        raise ContractError(f"runs cover different questions: {sorted(union - common)}")
    tag = "fusion(" + "+".join(r.run_tag for r in runs) + ")"
    fused = RetrievalRun(tag)
    for qid in sorted(common):
        totals: dict[str, float] = {}
        for run in runs:
            for d in run.results[qid]:
                totals[d.doc_id] = totals.get(d.doc_id, 0.0) + d.score
        fused.results[qid] = rank_scores(totals, output_depth)
    return fused


def fuse_runs(runs: Sequence[RetrievalRun], config: FusionConfig = FusionConfig()) -> RetrievalRun:
    return fuse([normalize_run(r, config.depth) for r in runs], config.output_depth)
