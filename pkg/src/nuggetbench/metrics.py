"""Nugget-level retrieval metrics: alpha-nDCG@k, Coverage@k and Recall@k.

``judgments`` arguments map every nugget of a question to the set of doc_ids
that support it (an unsupported nugget maps to an empty set).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .errors import ContractError
from .pooling import NuggetQrels
from .runs import RetrievalRun

logger = logging.getLogger(__name__)

Judgments = Mapping[str, "set[str] | frozenset[str]"]

DEFAULT_ALPHA = 0.5


def _check_ranking(ranking: Sequence[str]) -> None:
    if len(set(ranking)) != len(ranking):
        raise ContractError("ranking contains duplicate doc_ids")


def _doc_nuggets(judgments: Judgments) -> dict[str, list[str]]:
    out: dict[str, list[str]] = {}
    for nugget, docs in judgments.items():
        for d in docs:
            out.setdefault(d, []).append(nugget)
    return out


def alpha_dcg(ranking: Sequence[str], judgments: Judgments, k: int, alpha: float) -> float:
    doc_nuggets = _doc_nuggets(judgments)
    seen: dict[str, int] = {}
    dcg = 0.0
    for i, doc in enumerate(ranking[:k], 1):
        gain = 0.0
        for n in doc_nuggets.get(doc, ()):
            c = seen.get(n, 0)
            gain += (1.0 - alpha) ** c
            seen[n] = c + 1
        dcg += gain / math.log2(i + 1)
    return dcg


def ideal_ranking(judgments: Judgments, k: int, alpha: float) -> list[str]:
    """Greedy ideal: repeatedly take the doc with the largest residual gain, ties to the smaller doc_id."""
    doc_nuggets = _doc_nuggets(judgments)
    remaining = sorted(doc_nuggets)
    seen: dict[str, int] = {}
    order = []
    while remaining and len(order) < k:
        best, best_gain = None, -1.0
        for doc in remaining:
            gain = sum((1.0 - alpha) ** seen.get(n, 0) for n in doc_nuggets[doc])
            if gain > best_gain:
                best, best_gain = doc, gain
        order.append(best)
        remaining.remove(best)
        for n in doc_nuggets[best]:
            seen[n] = seen.get(n, 0) + 1
    return order


def alpha_ndcg_at_k(ranking: Sequence[str], judgments: Judgments, k: int = 10, alpha: float = DEFAULT_ALPHA) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ContractError("alpha must lie in [0, 1]")
    if k < 1:
        raise ContractError("k must be >= 1")
    _check_ranking(ranking)
    idcg = alpha_dcg(ideal_ranking(judgments, k, alpha), judgments, k, alpha)
    if idcg == 0.0:
        return 0.0
    return alpha_dcg(ranking, judgments, k, alpha) / idcg


def coverage_at_k(ranking: Sequence[str], judgments: Judgments, k: int = 20) -> float:
    """Fraction of the question's nuggets supported by at least one top-k doc."""
    if not judgments:
        raise ContractError("coverage needs at least one nugget")
    if k < 1:
        raise ContractError("k must be >= 1")
    _check_ranking(ranking)
    top = set(ranking[:k])
    covered = sum(1 for docs in judgments.values() if top & set(docs))
    return covered / len(judgments)


def recall_at_k(ranking: Sequence[str], judgments: Judgments, k: int = 50) -> float:
    relevant = set().union(*judgments.values()) if judgments else set()
    if not relevant:
        raise ContractError("recall needs at least one relevant doc")
    if k < 1:
        raise ContractError("k must be >= 1")
    _check_ranking(ranking)
    return len(relevant & set(ranking[:k])) / len(relevant)


@dataclass(frozen=True)
class EvalConfig:
    alpha: float = DEFAULT_ALPHA
    ndcg_k: int = 10
    coverage_k: int = 20
    recall_k: int = 50


@dataclass
class EvalResult:
    run_tag: str
    alpha: float
    k: dict[str, int]
    per_question: dict[str, dict[str, float]] = field(default_factory=dict)
    mean: dict[str, float] = field(default_factory=dict)
    skipped: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "run_tag": self.run_tag,
            "alpha": self.alpha,
            "k": dict(sorted(self.k.items())),
            "mean": {m: self.mean[m] for m in self.metric_names()},
            "per_question": {q: {m: s[m] for m in self.metric_names() if m in s} for q, s in sorted(self.per_question.items())},
            "skipped": sorted(self.skipped),
            "warnings": self.warnings,
        }

    def metric_names(self) -> list[str]:
        return [f"alpha_ndcg@{self.k['alpha_ndcg']}", f"coverage@{self.k['coverage']}", f"recall@{self.k['recall']}"]


def question_judgments(qrels: NuggetQrels, question_id: str, nugget_ids: Sequence[str] | None = None) -> dict[str, set[str]]:
    j = {n: set(d) for n, d in qrels.nugget_docs(question_id).items()}
    for n in nugget_ids or ():
        j.setdefault(n, set())
    return j


def evaluate_run(
    run: RetrievalRun,
    qrels: NuggetQrels,
    config: EvalConfig = EvalConfig(),
    nugget_ids: Mapping[str, Sequence[str]] | None = None,
) -> EvalResult:
    """Score every question in the qrels; a question the run lacks scores 0.

    ``nugget_ids`` supplies nuggets that have no qrels row, so Coverage
    denominators count them.
    """
    names = {"alpha_ndcg": config.ndcg_k, "coverage": config.coverage_k, "recall": config.recall_k}
    result = EvalResult(run.run_tag, config.alpha, names)
    nd, cov, rec = result.metric_names()
    qids = sorted(set(qrels.question_ids()) | set(nugget_ids or ()))
    result.skipped = sorted(set(run.results) - set(qids))
    for qid in result.skipped:
        logger.warning("run question %s has no judgments; skipped", qid)
    for qid in qids:
        judgments = question_judgments(qrels, qid, (nugget_ids or {}).get(qid))
        ranking = run.ranking(qid)
        scores = {}
        if judgments:
            scores[nd] = alpha_ndcg_at_k(ranking, judgments, config.ndcg_k, config.alpha)
            scores[cov] = coverage_at_k(ranking, judgments, config.coverage_k)
        else:
            result.warnings.append(f"{qid}: no nuggets; excluded from alpha-nDCG and coverage")
        if any(judgments.values()):
            scores[rec] = recall_at_k(ranking, judgments, config.recall_k)
        else:
            result.warnings.append(f"{qid}: no relevant docs; excluded from recall")
        result.per_question[qid] = scores
    for m in (nd, cov, rec):
        vals = [s[m] for s in result.per_question.values() if m in s]
        result.mean[m] = sum(vals) / len(vals) if vals else 0.0
    return result


def format_table(results: Sequence[EvalResult]) -> str:
    """Aligned plain-text table: one row per run, columns aN@k, C@k, R@k."""
    if not results:
        return ""
    first = results[0]
    headers = ["Run", f"aN@{first.k['alpha_ndcg']}", f"C@{first.k['coverage']}", f"R@{first.k['recall']}"]
    rows = [[r.run_tag] + [f"{r.mean[m]:.3f}" for m in r.metric_names()] for r in results]
    widths = [max(len(str(row[i])) for row in [headers] + rows) for i in range(len(headers))]
    lines = []
    for row in [headers] + rows:
        cells = [row[0].ljust(widths[0])] + [c.rjust(w) for c, w in zip(row[1:], widths[1:])]
        lines.append("  ".join(cells).rstrip())
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
