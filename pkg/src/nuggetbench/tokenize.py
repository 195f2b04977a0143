"""Pluggable tokenizers used for chunk budgets and length statistics.

The default tokenizer is self-contained: runs of word characters form one
token and every other non-space character is a token of its own. It never
needs a download, so chunk boundaries are reproducible offline.
"""

from __future__ import annotations

import re
from typing import Protocol

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class Tokenizer(Protocol):
    tokenizer_id: str

    def spans(self, text: str) -> list[tuple[int, int]]:
        """Character spans of each token, in order."""

    def count(self, text: str) -> int: ...


class RegexTokenizer:
    tokenizer_id = "regex-wordpunct-v1"

    def spans(self, text: str) -> list[tuple[int, int]]:
        return [m.span() for m in _TOKEN_RE.finditer(text)]

    def count(self, text: str) -> int:
        return sum(1 for _ in _TOKEN_RE.finditer(text))


class TiktokenTokenizer:
    """Exact BPE counts via ``tiktoken`` (optional dependency).

    BPE tokens can straddle any character, so span ends are taken from the
    decoder's character offsets. The chunker recounts every chunk, which keeps
    the budget honest even where BPE merges differ across a cut.
    """

    def __init__(self, encoding_name: str = "o200k_base"):
        import tiktoken

        self._enc = tiktoken.get_encoding(encoding_name)
        self.tokenizer_id = f"tiktoken-{encoding_name}"

    def spans(self, text: str) -> list[tuple[int, int]]:
        tokens = self._enc.encode(text, disallowed_special=())
        _, offsets = self._enc.decode_with_offsets(tokens)
        ends = offsets[1:] + [len(text)]
        out = []
        for start, end in zip(offsets, ends):
            if end > start:
                out.append((start, end))
        return out

    def count(self, text: str) -> int:
        return len(self._enc.encode(text, disallowed_special=()))


DEFAULT_TOKENIZER = RegexTokenizer()


def get_tokenizer(tokenizer_id: str | None = None) -> Tokenizer:
    if tokenizer_id in (None, "", RegexTokenizer.tokenizer_id):
        return DEFAULT_TOKENIZER
    if tokenizer_id.startswith("tiktoken-"):
        return TiktokenTokenizer(tokenizer_id[len("tiktoken-"):])
    raise ValueError(f"unknown tokenizer: {tokenizer_id}")
