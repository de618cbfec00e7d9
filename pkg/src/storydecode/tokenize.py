"""Pluggable tokenization.

Token caps throughout the pipeline are expressed in units of the active
tokenizer. The whitespace tokenizer is the desk-scale default; a
subword tokenizer can be attached through the model bridge.
"""

from __future__ import annotations

import re
from typing import Protocol


class Tokenizer(Protocol):
    name: str

    def tokenize(self, text: str) -> list[str]: ...

    def count(self, text: str) -> int: ...

    def truncate(self, text: str, max_tokens: int) -> str: ...


_TOKEN_RE = re.compile(r"\S+")


class WhitespaceTokenizer:
    """Splits on runs of whitespace; truncation returns a character prefix."""

    name = "whitespace"

    def tokenize(self, text: str) -> list[str]:
        return _TOKEN_RE.findall(text)

    def count(self, text: str) -> int:
        return len(self.tokenize(text))

    def truncate(self, text: str, max_tokens: int) -> str:
        if max_tokens <= 0:
            return ""
        for i, m in enumerate(_TOKEN_RE.finditer(text)):
            if i == max_tokens - 1:
                return text[: m.end()]
        return text


def get_tokenizer(name: str) -> Tokenizer:
    if name == "whitespace":
        return WhitespaceTokenizer()
    raise ValueError(f"unknown tokenizer: {name!r}")
