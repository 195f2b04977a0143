"""Nugget generation from question/answer pairs and nugget-quality metrics."""

from __future__ import annotations

import csv
import logging
import os
import re
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .errors import ContractError, NuggetizationError, ParseError, ProviderContractError
from .gateway import ChatRequest, Gateway
from .io import read_jsonl
from .prompts import PromptTemplate, load_template

logger = logging.getLogger(__name__)

DEFAULT_MAX_NUGGETS = 10

_MARKER_RE = re.compile(r"^\s*(?:\d+[.)]|[-*])\s+(.*)$")
_REASK = (
    "\n\nYour previous reply could not be parsed. Reply with a numbered list only, "
    "one fact per line, formatted as \"1. ...\"."
)


@dataclass(frozen=True)
class QuestionRecord:
    question_id: str
    title: str
    body: str
    accepted_answer: str
    asked_at: str = ""
    topic: str = ""

    def __post_init__(self):
        if not self.accepted_answer or not self.accepted_answer.strip():
            raise ContractError(f"question {self.question_id} has no accepted answer")

    @property
    def text(self) -> str:
        return f"{self.title}\n{self.body}"


@dataclass(frozen=True)
class Nugget:
    question_id: str
    ordinal: int
    text: str
    prompt_hash: str = ""
    model_id: str = ""

    @property
    def nugget_id(self) -> str:
        return f"{self.question_id}:{self.ordinal}"

    def to_json(self) -> dict:
        return {
            "question_id": self.question_id,
            "nugget_id": self.nugget_id,
            "ordinal": self.ordinal,
            "text": self.text,
            "prompt_hash": self.prompt_hash,
            "model_id": self.model_id,
        }

    @classmethod
    def from_json(cls, row: dict) -> "Nugget":
        return cls(row["question_id"], int(row["ordinal"]), row["text"], row.get("prompt_hash", ""), row.get("model_id", ""))


def load_questions(path: str | os.PathLike) -> list[QuestionRecord]:
    questions = []
    seen = set()
    for row in read_jsonl(path):
        q = QuestionRecord(
            question_id=str(row["question_id"]),
            title=row.get("title", ""),
            body=row.get("body", ""),
            accepted_answer=row.get("accepted_answer", ""),
            asked_at=row.get("asked_at", ""),
            topic=row.get("topic", ""),
        )
        if q.question_id in seen:
            raise ContractError(f"duplicate question_id {q.question_id}")
        seen.add(q.question_id)
        questions.append(q)
    return questions


def load_nuggets(path: str | os.PathLike) -> dict[str, list[Nugget]]:
    out: dict[str, list[Nugget]] = {}
    for row in read_jsonl(path):
        n = Nugget.from_json(row)
        out.setdefault(n.question_id, []).append(n)
    for items in out.values():
        items.sort(key=lambda n: n.ordinal)
    return out


def parse_nugget_response(raw: str) -> list[str]:
    """Pull list items out of an LLM reply.

    Lines starting with ``1.``, ``1)``, ``-`` or ``*`` open a new item and
    indented unmarked lines continue the previous one; anything else
    (preambles, blank lines) is ignored. Later case-insensitive duplicates
    are dropped.
    """
    items: list[str] = []
    for line in raw.splitlines():
        m = _MARKER_RE.match(line)
        if m:
            items.append(m.group(1).strip())
        elif items and line[:1].isspace() and line.strip():
            items[-1] = f"{items[-1]} {line.strip()}"
    out, seen = [], set()
    for item in items:
        item = " ".join(item.split())
        key = item.lower()
        if item and key not in seen:
            seen.add(key)
            out.append(item)
    if not out:
        raise ParseError("no list items found in response")
    return out


def format_nuggets(texts: Iterable[str]) -> str:
    return "\n".join(f"{i}. {t}" for i, t in enumerate(texts, 1))


def generate_nuggets(
    q: QuestionRecord,
    gateway: Gateway,
    model_id: str,
    max_nuggets: int = DEFAULT_MAX_NUGGETS,
    template: PromptTemplate | None = None,
    temperature: float = 0.1,
) -> list[Nugget]:
    template = template or load_template("nuggetize")
    system, user = template.render(title=q.title, body=q.body, answer=q.accepted_answer, max_nuggets=max_nuggets)
    texts = None
    for attempt in range(2):
        request = ChatRequest(model_id, system, user if attempt == 0 else user + _REASK, temperature)
        try:
            texts = parse_nugget_response(gateway.complete(request).text)
            break
        except (ParseError, ProviderContractError) as exc:
            logger.warning("nuggetization of %s unparseable (attempt %d): %s", q.question_id, attempt + 1, exc)
    if texts is None:
        raise NuggetizationError(q.question_id, "no parseable nugget list after re-ask")
    if len(texts) > max_nuggets:
        logger.warning("%s: truncating %d nuggets to %d", q.question_id, len(texts), max_nuggets)
        texts = texts[:max_nuggets]
    return [Nugget(q.question_id, i, t, template.sha, model_id) for i, t in enumerate(texts, 1)]


@dataclass
class NuggetQualityAnnotation:
    """Human labels for one question's nugget list.

    ``hallucinated`` (A) and ``redundant`` (B) hold one flag per nugget;
    ``missing`` (C) counts the extra nuggets needed to cover the answer.
    """

    question_id: str
    hallucinated: list[bool]
    redundant: list[bool]
    missing: int = 0

    def __post_init__(self):
        if self.missing < 0:
            raise ContractError("missing-nugget count must be >= 0")
        if len(self.hallucinated) != len(self.redundant):
            raise ContractError(f"{self.question_id}: A and B must cover the same nuggets")


@dataclass
class QualityReport:
    precision: float
    recall: float
    groundedness: float
    n_questions: int
    per_question: dict[str, dict[str, float]] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


def question_quality(ann: NuggetQualityAnnotation) -> tuple[float, float, float, list[str]]:
    n = len(ann.hallucinated)
    b = sum(ann.redundant)
    a = sum(ann.hallucinated)
    warns = []
    p = (n - b) / n
    denom = n - b + ann.missing
    if denom == 0:
        warns.append(f"{ann.question_id}: every nugget redundant and none missing; recall set to 0")
        r = 0.0
    else:
        r = (n - b) / denom
    g = (n - a) / n
    return p, r, g, warns


def nugget_quality(annotations: Sequence[NuggetQualityAnnotation]) -> QualityReport:
    """Macro-averaged precision, recall and groundedness of nugget lists."""
    per_q = {}
    warnings = []
    for ann in annotations:
        if not ann.hallucinated:
            msg = f"{ann.question_id}: no nuggets; excluded"
            logger.warning(msg)
            warnings.append(msg)
            continue
        p, r, g, w = question_quality(ann)
        for msg in w:
            logger.warning(msg)
        warnings.extend(w)
        per_q[ann.question_id] = {"precision": p, "recall": r, "groundedness": g}
    if not per_q:
        return QualityReport(0.0, 0.0, 0.0, 0, {}, warnings)
    n = len(per_q)
    return QualityReport(
        precision=sum(v["precision"] for v in per_q.values()) / n,
        recall=sum(v["recall"] for v in per_q.values()) / n,
        groundedness=sum(v["groundedness"] for v in per_q.values()) / n,
        n_questions=n,
        per_question=per_q,
        warnings=warnings,
    )


def _flag(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "y", "t"):
        return True
    if v in ("0", "false", "no", "n", "f", ""):
        return False
    raise ValueError(f"not a boolean: {value!r}")


def load_annotations(path: str | os.PathLike) -> list[NuggetQualityAnnotation]:
    """Read an annotation CSV with columns ``question_id,nugget_id,A,B,C``.

    Rows with a nugget_id carry that nugget's A/B flags. C may sit on any row
    of the question (commonly one with an empty nugget_id); conflicting C
    values are an error.
    """
    rows: dict[str, list[tuple[str, bool, bool]]] = {}
    missing: dict[str, int] = {}
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            qid = row["question_id"].strip()
            rows.setdefault(qid, [])
            c = (row.get("C") or "").strip()
            if c:
                if qid in missing and missing[qid] != int(c):
                    raise ValueError(f"{qid}: conflicting C values")
                missing[qid] = int(c)
            nid = (row.get("nugget_id") or "").strip()
            if nid:
                rows[qid].append((nid, _flag(row.get("A", "")), _flag(row.get("B", ""))))
    out = []
    for qid, entries in rows.items():
        entries.sort(key=lambda e: _nugget_sort_key(e[0]))
        out.append(
            NuggetQualityAnnotation(qid, [e[1] for e in entries], [e[2] for e in entries], missing.get(qid, 0))
        )
    return out


def _nugget_sort_key(nugget_id: str):
    tail = nugget_id.rsplit(":", 1)[-1]
    return (0, int(tail), nugget_id) if tail.isdigit() else (1, 0, nugget_id)
