"""Deterministic offline backend.

Chat: an exact-match fixture table keyed by the SHA-256 of the prompt is
consulted first. Otherwise a small rule-based responder reads the task
marker and sections of our own prompt templates and produces a plausible,
well-formed answer. Everything is a pure function of (model_id, prompt).

Embeddings: feature hashing. Each analyzed token maps to a Gaussian vector
seeded by (model_id, token); a text embeds to the sum of its token vectors,
so texts that share words land close together.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from functools import lru_cache

import numpy as np

from .gateway import ChatRequest, ChatResponse, ModelSpec
from .lexical import analyze

_TASK_RE = re.compile(r"^### Task: (\w+)\s*$", re.MULTILINE)
_SECTION_RE = re.compile(r"^### (.+?)\s*$", re.MULTILINE)
_NUGGET_LINE_RE = re.compile(r"^\[Nugget (\d+)\] (.*)$", re.MULTILINE)
_DOC_BLOCK_RE = re.compile(r"^\[Document (\d+)\] (\S+)\n(.*?)\n?\[/Document \1\]$", re.MULTILINE | re.DOTALL)
_FENCE_RE = re.compile(r"```.*?(```|$)", re.DOTALL)
_SPAN_RE = re.compile(r"`([^`\n]+)`|\"([^\"\n]+)\"|“([^”\n]+)”")

_STOPWORDS = frozenset(
    """a an the and or but if then else of to in on for with by from at as is are was were be been
    being this that these those it its into than so such can could should would will may might must
    do does did not no yes you your we our they their he she his her them use using used when which
    what how why where who also only just more most other some any each all both either""".split()
)


def _seed(*parts: str) -> int:
    return int.from_bytes(hashlib.sha256("\x00".join(parts).encode("utf-8")).digest()[:8], "little")


@lru_cache(maxsize=200_000)
def _token_vector(model_id: str, token: str, dims: int) -> np.ndarray:
    return np.random.default_rng(_seed(model_id, token)).standard_normal(dims)


def mock_embedding(model_id: str, text: str, dims: int) -> np.ndarray:
    tokens = analyze(text) or [text]
    vec = np.zeros(dims)
    for tok in tokens:
        vec += _token_vector(model_id, tok, dims)
    norm = np.sqrt((vec * vec).sum())
    if norm == 0:
        vec = _token_vector(model_id, "\x00" + text, dims)
        norm = np.sqrt((vec * vec).sum())
    return vec / norm


def _sections(prompt: str) -> dict[str, str]:
    out = {}
    marks = list(_SECTION_RE.finditer(prompt))
    for i, m in enumerate(marks):
        end = marks[i + 1].start() if i + 1 < len(marks) else len(prompt)
        out.setdefault(m.group(1), prompt[m.end():end].strip("\n"))
    return out


def _prose(text: str) -> str:
    return _FENCE_RE.sub(" ", text)


def _sentences(text: str) -> list[str]:
    flat = " ".join(_prose(text).split())
    parts = re.split(r"(?<=[.!?])\s+", flat)
    return [p.strip() for p in parts if len(p.split()) >= 3]


def key_terms(nugget: str) -> tuple[list[str], bool]:
    """Literal spans (backticked or quoted) if present, else content words."""
    spans = [next(g for g in m.groups() if g) for m in _SPAN_RE.finditer(nugget)]
    if spans:
        return spans, True
    words = [w for w in analyze(nugget) if len(w) >= 4 and w not in _STOPWORDS]
    return list(dict.fromkeys(words)), False


def coverage(nugget: str, text: str) -> float:
    terms, literal = key_terms(nugget)
    if not terms:
        return 0.0
    if literal:
        hits = sum(1 for t in terms if t in text)
    else:
        vocab = set(analyze(text))
        hits = sum(1 for t in terms if t in vocab)
    return hits / len(terms)


class MockBackend:
    def __init__(self, responses: dict[str, str] | None = None, support_overrides: dict[tuple[str, str], bool] | None = None):
        self.responses = dict(responses or {})
        self.support_overrides = dict(support_overrides or {})

    @classmethod
    def from_file(cls, path: str | os.PathLike) -> "MockBackend":
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
        overrides = {(o["nugget"], o["doc_id"]): bool(o["supported"]) for o in data.get("support_overrides", [])}
        return cls(data.get("responses", {}), overrides)

    def embed(self, texts, model: ModelSpec) -> np.ndarray:
        return np.vstack([mock_embedding(model.model_id, t, model.dims) for t in texts])

    def complete(self, request: ChatRequest) -> ChatResponse:
        sha = request.prompt_sha
        if sha in self.responses:
            text = self.responses[sha]
        else:
            text = self.respond(request.user_text)
        return ChatResponse(
            text=text,
            finish_reason="stop",
            usage={"prompt_tokens": len(request.prompt.split()), "completion_tokens": len(text.split())},
        )

    # rule-based responders, one per template task
    def respond(self, prompt: str) -> str:
        m = _TASK_RE.search(prompt)
        task = m.group(1) if m else ""
        handler = getattr(self, f"_task_{task}", None)
        if handler is None:
            return "I can only answer prompts built from the bundled templates."
        return handler(prompt, _sections(prompt))

    @staticmethod
    def _title_body(question: str) -> tuple[str, str]:
        lines = question.split("\n", 1)
        title = lines[0].removeprefix("Title:").strip()
        return title, lines[1] if len(lines) > 1 else ""

    def _task_nuggetize(self, prompt, sec):
        title, _ = self._title_body(sec.get("Question", ""))
        cap = re.search(r"at most (\d+) notes", prompt)
        limit = min(5, int(cap.group(1))) if cap else 5
        facts = _sentences(sec.get("Accepted Answer", ""))[:limit] or [f"The question asks: {title}"]
        return "\n".join(f"{i}. {f}" for i, f in enumerate(facts, 1))

    def _task_sub_questions(self, prompt, sec):
        title, body = self._title_body(sec.get("Question", ""))
        subs = [f"What causes the problem described in \"{title}\"?", f"How can \"{title}\" be fixed?"]
        first = _sentences(body)[:1]
        if first:
            subs.append(f"What does this mean: {first[0].rstrip('.?!')}?")
        return "\n".join(f"{i}. {s}" for i, s in enumerate(subs, 1))

    def _task_closed_book_answer(self, prompt, sec):
        title, body = self._title_body(sec.get("Question", ""))
        lead = _sentences(body)[:2]
        return " ".join([f"Regarding {title}:"] + lead + ["Check the library documentation for the current API."])

    def _task_judge_support(self, prompt, sec):
        nuggets = [(int(i), t) for i, t in _NUGGET_LINE_RE.findall(sec.get("Nuggets", ""))]
        docs = [(int(j), doc_id, text) for j, doc_id, text in _DOC_BLOCK_RE.findall(prompt)]
        lines = ["Reasoning: compared the key terms of each nugget with each document.", "JUDGMENTS:"]
        for i, nugget in nuggets:
            for j, doc_id, text in docs:
                supported = self.support_overrides.get((nugget, doc_id))
                if supported is None:
                    terms, literal = key_terms(nugget)
                    supported = coverage(nugget, text) >= (1.0 if literal else 0.6)
                lines.append(f"nugget_{i} doc_{j}: {'yes' if supported else 'no'}")
        return "\n".join(lines)

    def _task_rag_answer(self, prompt, sec):
        title, body = self._title_body(sec.get("Question", ""))
        docs = _DOC_BLOCK_RE.findall(prompt)
        parts = [f"To address \"{title}\":"]
        if docs:
            for _, doc_id, text in docs[:3]:
                lines = [ln.strip() for ln in text.splitlines() if ln.strip()][:4]
                parts.append(f"From {doc_id}: " + " ".join(lines))
        else:
            parts.extend(_sentences(body)[:1] or ["No context was provided."])
        return "\n".join(parts)

    def _task_assign_nuggets(self, prompt, sec):
        answer = sec.get("Answer", "")
        out = []
        for i, nugget in _NUGGET_LINE_RE.findall(sec.get("Nuggets", "")):
            c = coverage(nugget, answer)
            label = "support" if c >= 1.0 else "partial_support" if c >= 0.5 else "no_support"
            out.append(f"nugget_{i}: {label}")
        return "\n".join(out)
