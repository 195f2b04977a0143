"""Dataset statistics in the layout of a per-topic summary table."""

from __future__ import annotations

import logging
import re
from typing import Mapping, Sequence

from .nuggets import Nugget, QuestionRecord
from .pooling import NuggetQrels
from .tokenize import DEFAULT_TOKENIZER, Tokenizer

logger = logging.getLogger(__name__)

_FENCE_RE = re.compile(r"^\s*(```|~~~)", re.MULTILINE)
_INDENT_RE = re.compile(r"^(?: {4,}|\t)\S", re.MULTILINE)
_HTML_CODE_RE = re.compile(r"<pre[\s>]|<code[\s>]", re.IGNORECASE)

COLUMNS = [
    ("topic", "Topic", "{}"),
    ("n_questions", "#Q", "{:d}"),
    ("n_docs", "#Docs", "{:,d}"),
    ("n_repos", "#GH", "{:d}"),
    ("avg_nuggets_per_question", "Avg. N/Q", "{:.1f}"),
    ("avg_query_tokens", "Query len", "{:.1f}"),
    ("avg_answer_tokens", "Answer len", "{:.1f}"),
    ("pct_query_code", "Query code", "{:.1f}%"),
    ("pct_answer_code", "Answer code", "{:.1f}%"),
    ("rel_docs_per_nugget", "Rel. Docs/N", "{:.1f}"),
    ("rel_docs_per_question", "Rel. Docs/Q", "{:.1f}"),
]


def has_code(text: str) -> bool:
    """Fenced block, an indented (4+ spaces or tab) line, or an HTML pre/code tag."""
    return bool(_FENCE_RE.search(text) or _INDENT_RE.search(text) or _HTML_CODE_RE.search(text))


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def compute_stats(
    questions: Sequence[QuestionRecord],
    nuggets: Mapping[str, Sequence[Nugget]],
    qrels: NuggetQrels,
    n_docs: int,
    n_repos: int,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> dict:
    if not questions:
        logger.warning("no questions survived filtering; reporting zeros")
    qids = [q.question_id for q in questions]
    per_nugget = [
        len(qrels.by_nugget.get((qid, n.nugget_id), ())) for qid in qids for n in nuggets.get(qid, ())
    ]
    return {
        "n_questions": len(questions),
        "n_docs": n_docs,
        "n_repos": n_repos,
        "avg_nuggets_per_question": _mean([len(nuggets.get(qid, ())) for qid in qids]),
        "avg_query_tokens": _mean([tokenizer.count(q.text) for q in questions]),
        "avg_answer_tokens": _mean([tokenizer.count(q.accepted_answer) for q in questions]),
        "pct_query_code": 100.0 * _mean([has_code(q.body) for q in questions]),
        "pct_answer_code": 100.0 * _mean([has_code(q.accepted_answer) for q in questions]),
        "rel_docs_per_nugget": _mean(per_nugget),
        "rel_docs_per_question": _mean([len(qrels.relevant_docs(qid)) for qid in qids]),
        "tokenizer_id": tokenizer.tokenizer_id,
    }


def format_stats(rows: Sequence[dict]) -> str:
    header = [h for _, h, _ in COLUMNS]
    body = [[fmt.format(row.get(key, "")) for key, _, fmt in COLUMNS] for row in rows]
    widths = [max(len(r[i]) for r in [header] + body) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) if i else c.ljust(w) for i, (c, w) in enumerate(zip(r, widths))).rstrip() for r in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"
