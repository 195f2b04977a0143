"""RAG answer generation from retrieved context and strict nugget recall."""

from __future__ import annotations

import logging
import re
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

from .errors import AssignmentError, ContractError, GenerationError, NuggetBenchError, ProviderContractError
from .gateway import ChatRequest, Gateway
from .nuggets import Nugget, QuestionRecord
from .prompts import load_template
from .tokenize import DEFAULT_TOKENIZER, Tokenizer

logger = logging.getLogger(__name__)

MAX_CONTEXT_DOCS = 20
LABELS = ("support", "partial_support", "no_support")
MAX_ASSIGN_BATCH = 20

_LABEL_RE = re.compile(r"nugget[\s_#-]*(\d+)\s*[:=\-]+\s*\**\s*(partial[_ ]support|no[_ ]support|support)\b", re.IGNORECASE)


@dataclass(frozen=True)
class RagAnswer:
    question_id: str
    generator_model_id: str
    context_doc_ids: tuple[str, ...]
    answer_text: str
    prompt_hash: str

    def to_json(self) -> dict:
        d = asdict(self)
        d["context_doc_ids"] = list(self.context_doc_ids)
        return d

    @classmethod
    def from_json(cls, row: dict) -> "RagAnswer":
        return cls(row["question_id"], row["generator_model_id"], tuple(row["context_doc_ids"]), row["answer_text"], row["prompt_hash"])


@dataclass(frozen=True)
class NuggetAssignment:
    question_id: str
    nugget_id: str
    label: str
    judge_model_id: str = ""

    def __post_init__(self):
        if self.label not in LABELS:
            raise ContractError(f"unknown label {self.label!r}")

    def to_json(self) -> dict:
        return asdict(self)


def render_rag_prompt(
    q: QuestionRecord,
    docs: Sequence[tuple[str, str]],
    max_context_tokens: int | None = None,
    tokenizer: Tokenizer = DEFAULT_TOKENIZER,
) -> tuple[str, str, list[str]]:
    """Return ``(system, user, doc_ids_used)``; docs are deduplicated and dropped from the tail to fit."""
    if len(docs) > MAX_CONTEXT_DOCS:
        raise ContractError(f"at most {MAX_CONTEXT_DOCS} context documents, got {len(docs)}")
    unique, seen = [], set()
    for doc_id, text in docs:
        if doc_id not in seen:
            seen.add(doc_id)
            unique.append((doc_id, text))
    if max_context_tokens is not None:
        while unique and sum(tokenizer.count(t) for _, t in unique) > max_context_tokens:
            dropped = unique.pop()
            logger.warning("%s: context over budget, dropping %s", q.question_id, dropped[0])
    template = load_template("rag_answer")
    if unique:
        blocks = "\n".join(f"[Document {j}] {doc_id}\n{text}\n[/Document {j}]" for j, (doc_id, text) in enumerate(unique, 1))
        section = f"\n### Context\n{blocks}"
        instructions = " Use the context documents below when they are relevant."
    else:
        section, instructions = "", ""
    system, user = template.render(title=q.title, body=q.body, context_section=section, context_instructions=instructions)
    return system, user, [d for d, _ in unique]


def generate_rag_answer(
    q: QuestionRecord,
    docs: Sequence[tuple[str, str]],
    gateway: Gateway,
    generator_model_id: str,
    max_context_tokens: int | None = None,
    temperature: float = 0.1,
) -> RagAnswer:
    """Answer ``q`` from up to 20 ranked ``(doc_id, text)`` pairs; no docs means closed-book."""
    system, user, used = render_rag_prompt(q, docs, max_context_tokens)
    try:
        resp = gateway.complete(ChatRequest(generator_model_id, system, user, temperature))
    except NuggetBenchError as exc:
        raise GenerationError(f"{q.question_id}: {exc}") from exc
    return RagAnswer(q.question_id, generator_model_id, tuple(used), resp.text.strip(), load_template("rag_answer").sha)


def parse_assignments(raw: str, n_nuggets: int) -> dict[int, str]:
    out = {}
    for m in _LABEL_RE.finditer(raw):
        i = int(m.group(1))
        if 1 <= i <= n_nuggets:
            out[i] = m.group(2).lower().replace(" ", "_")
    return out


def _assign_batch(answer: RagAnswer, question: str, nuggets: Sequence[Nugget], gateway: Gateway, model_id: str, temperature: float) -> list[NuggetAssignment]:
    block = "\n".join(f"[Nugget {i}] {n.text}" for i, n in enumerate(nuggets, 1))
    system, user = load_template("assign_nuggets").render(
        question=question, answer=answer.answer_text, nuggets=block, n_nuggets=len(nuggets)
    )
    labels: dict[int, str] = {}
    for attempt in range(2):
        prompt = user if attempt == 0 else user + "\n\nReply with one line per nugget: \"nugget_<i>: support|partial_support|no_support\"."
        try:
            raw = gateway.complete(ChatRequest(model_id, system, prompt, temperature)).text
        except ProviderContractError:
            raw = ""
        for i, lab in parse_assignments(raw, len(nuggets)).items():
            labels.setdefault(i, lab)
        if len(labels) == len(nuggets):
            break
    if not labels:
        raise AssignmentError(f"{answer.question_id}: assignment reply unparseable twice")
    if len(labels) < len(nuggets):
        logger.warning("%s: %d nugget labels missing, using no_support", answer.question_id, len(nuggets) - len(labels))
    return [
        NuggetAssignment(answer.question_id, n.nugget_id, labels.get(i, "no_support"), model_id)
        for i, n in enumerate(nuggets, 1)
    ]


def assign_nuggets(
    answer: RagAnswer,
    nuggets: Sequence[Nugget],
    gateway: Gateway,
    judge_model_id: str,
    question: QuestionRecord | None = None,
    temperature: float = 0.1,
) -> list[NuggetAssignment]:
    """Label every nugget as support / partial_support / no_support against the answer."""
    if not nuggets:
        raise ContractError(f"{answer.question_id}: no nuggets to assign")
    if not answer.answer_text.strip():
        return [NuggetAssignment(answer.question_id, n.nugget_id, "no_support", judge_model_id) for n in nuggets]
    qtext = question.text if question else ""
    out = []
    for start in range(0, len(nuggets), MAX_ASSIGN_BATCH):
        out.extend(_assign_batch(answer, qtext, nuggets[start : start + MAX_ASSIGN_BATCH], gateway, judge_model_id, temperature))
    return out


@dataclass
class RagScore:
    per_question: dict[str, float] = field(default_factory=dict)
    mean: float = 0.0
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"a_strict": self.mean, "per_question": dict(sorted(self.per_question.items())), "warnings": self.warnings}


def a_strict(labels_by_question: Mapping[str, Sequence[str]]) -> RagScore:
    """Per question, the fraction of nuggets labelled ``support``; the run score is their mean.

    ``labels_by_question`` maps question_id to one label per nugget.
    """
    score = RagScore()
    for qid, labels in labels_by_question.items():
        if not labels:
            msg = f"{qid}: no nuggets; excluded"
            logger.warning(msg)
            score.warnings.append(msg)
            continue
        for lab in labels:
            if lab not in LABELS:
                raise ContractError(f"unknown label {lab!r}")
        score.per_question[qid] = sum(1 for lab in labels if lab == "support") / len(labels)
    if score.per_question:
        score.mean = sum(score.per_question.values()) / len(score.per_question)
    return score


def a_strict_from_assignments(assignments: Sequence[NuggetAssignment]) -> RagScore:
    grouped: dict[str, list[str]] = {}
    for a in assignments:
        grouped.setdefault(a.question_id, []).append(a.label)
    return a_strict(grouped)
