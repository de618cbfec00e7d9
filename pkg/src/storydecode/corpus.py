"""Prompt/response corpus ingestion and preprocessing.

Raw pairs are filtered by tag, responses are truncated to a length
class (line-break rule first, then a token cap; the stricter wins), and
each pair is combined into a single marker-delimited training string.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Iterator, Sequence

from .errors import EmptyCorpus, EmptyField
from .tokenize import Tokenizer, WhitespaceTokenizer

START_MARKER = "<|startoftext|>"
END_MARKER = "<|endoftext|>"
PROMPT_MARKER = "[WP]"
RESPONSE_MARKER = "[RESPONSE]"

# One or more consecutive newlines count as a single line break
# (blank-line paragraphing).
_BREAK_RE = re.compile(r"\n+")
_TAG_CHARS_RE = re.compile(r"[\[\]\s]+")


@dataclass(frozen=True)
class RawPair:
    """One tagged prompt/response pair as found in the source data."""

    tag: str
    prompt: str
    response: str


@dataclass(frozen=True)
class LengthClass:
    """Response truncation regime: keep text before the break_count-th
    line break (None = no break limit) and at most token_cap tokens."""

    name: str
    break_count: int | None
    token_cap: int

    @staticmethod
    def from_name(name: str) -> "LengthClass":
        try:
            return LENGTH_CLASSES[name]
        except KeyError:
            raise ValueError(f"unknown length class: {name!r}") from None


LENGTH_CLASSES = {
    "small": LengthClass("small", 1, 100),
    "medium": LengthClass("medium", 3, 256),
    "large": LengthClass("large", None, 1024),
}


@dataclass(frozen=True)
class ProcessedExample:
    """A combined, marker-delimited training/evaluation string."""

    text: str
    length_class: str
    prompt_token_count: int
    response_token_count: int

    def __post_init__(self) -> None:
        if not (self.text.startswith(START_MARKER) and self.text.endswith(END_MARKER)):
            raise ValueError("example text must be wrapped in start/end markers")
        if self.text.count(PROMPT_MARKER) != 1 or self.text.count(RESPONSE_MARKER) != 1:
            raise ValueError("example text must contain exactly one prompt and one response marker")
        if self.text.index(PROMPT_MARKER) > self.text.index(RESPONSE_MARKER):
            raise ValueError("prompt marker must precede response marker")
        cap = LengthClass.from_name(self.length_class).token_cap
        if self.response_token_count > cap:
            raise ValueError(
                f"response has {self.response_token_count} tokens, class cap is {cap}"
            )

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "text": self.text,
            "length_class": self.length_class,
            "prompt_token_count": self.prompt_token_count,
            "response_token_count": self.response_token_count,
        }

    @staticmethod
    def from_json(obj: dict) -> "ProcessedExample":
        return ProcessedExample(
            text=obj["text"],
            length_class=obj["length_class"],
            prompt_token_count=obj["prompt_token_count"],
            response_token_count=obj["response_token_count"],
        )


@dataclass(frozen=True)
class CorpusStats:
    example_count: int
    mean_tokens_per_example: float
    std_tokens_per_example: float
    total_tokens: int

    def to_json(self) -> dict:
        return {
            "example_count": self.example_count,
            "mean_tokens_per_example": self.mean_tokens_per_example,
            "std_tokens_per_example": self.std_tokens_per_example,
            "total_tokens": self.total_tokens,
        }


def normalize_tag(tag: str) -> str:
    """Strip brackets and whitespace and casefold: '[ WP ]' -> 'wp'."""
    return _TAG_CHARS_RE.sub("", tag).casefold()


def filter_wp(pairs: Sequence[RawPair]) -> list[RawPair]:
    """Keep only pairs tagged as unconstrained writing prompts."""
    return [p for p in pairs if normalize_tag(p.tag) == "wp"]


def truncate_response(response: str, length_class: LengthClass, tokenizer: Tokenizer) -> str:
    """Truncate at the class's line break first, then apply the token cap.

    Both cuts are character prefixes of the input, so outputs nest
    across classes for a fixed response.
    """
    text = response
    if length_class.break_count is not None:
        breaks = list(_BREAK_RE.finditer(text))
        if len(breaks) >= length_class.break_count:
            text = text[: breaks[length_class.break_count - 1].start()]
    return tokenizer.truncate(text, length_class.token_cap)


def format_example(
    prompt: str,
    response: str,
    *,
    start: str = START_MARKER,
    end: str = END_MARKER,
    prompt_marker: str = PROMPT_MARKER,
    response_marker: str = RESPONSE_MARKER,
) -> str:
    """Combine a pair into the single model-facing string."""
    if not prompt.strip():
        raise EmptyField("prompt is empty")
    if not response.strip():
        raise EmptyField("response is empty")
    return f"{start} {prompt_marker} {prompt} {response_marker} {response} {end}"


def parse_example(
    text: str,
    *,
    start: str = START_MARKER,
    end: str = END_MARKER,
    prompt_marker: str = PROMPT_MARKER,
    response_marker: str = RESPONSE_MARKER,
) -> tuple[str, str]:
    """Inverse of format_example for marker-free prompt/response pairs."""
    head = f"{start} {prompt_marker} "
    tail = f" {end}"
    sep = f" {response_marker} "
    if not (text.startswith(head) and text.endswith(tail)):
        raise ValueError("text does not carry the expected markers")
    body = text[len(head) : len(text) - len(tail)]
    prompt, found, response = body.partition(sep)
    if not found:
        raise ValueError("response marker not found")
    return prompt, response


def prompt_prefix(prompt: str) -> str:
    """The conditioning prefix fed to a model before generation starts."""
    if not prompt.strip():
        raise EmptyField("prompt is empty")
    return f"{START_MARKER} {PROMPT_MARKER} {prompt} {RESPONSE_MARKER}"


def process_pair(
    pair: RawPair, length_class: LengthClass, tokenizer: Tokenizer
) -> ProcessedExample:
    response = truncate_response(pair.response, length_class, tokenizer)
    text = format_example(pair.prompt, response)
    return ProcessedExample(
        text=text,
        length_class=length_class.name,
        prompt_token_count=tokenizer.count(pair.prompt),
        response_token_count=tokenizer.count(response),
    )


def process_corpus(
    pairs: Iterable[RawPair],
    length_class: LengthClass,
    tokenizer: Tokenizer | None = None,
    *,
    wp_only: bool = True,
) -> Iterator[ProcessedExample]:
    tokenizer = tokenizer or WhitespaceTokenizer()
    for pair in pairs:
        if wp_only and normalize_tag(pair.tag) != "wp":
            continue
        if not pair.prompt.strip() or not pair.response.strip():
            continue
        yield process_pair(pair, length_class, tokenizer)


def corpus_stats(examples: Sequence[ProcessedExample]) -> CorpusStats:
    """Per-example token counts (prompt + response) summarized with a
    population standard deviation."""
    if not examples:
        raise EmptyCorpus("no examples")
    counts = [ex.prompt_token_count + ex.response_token_count for ex in examples]
    n = len(counts)
    total = sum(counts)
    mean = total / n
    var = math.fsum((c - mean) ** 2 for c in counts) / n
    return CorpusStats(
        example_count=n,
        mean_tokens_per_example=mean,
        std_tokens_per_example=math.sqrt(var),
        total_tokens=total,
    )


def read_pairs_jsonl(path: str) -> Iterator[RawPair]:
    """One JSON object per line with tag/prompt/response fields."""
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            yield RawPair(
                tag=obj.get("tag", ""),
                prompt=obj["prompt"],
                response=obj["response"],
            )


_SOURCE_TAG_RE = re.compile(r"^\s*(\[[^\]]*\])\s*(.*)$", re.DOTALL)


def read_pairs_paired(source_path: str, target_path: str) -> Iterator[RawPair]:
    """Two aligned files: source lines carry an inline leading tag,
    target lines are the responses (escaped newlines allowed)."""
    with open(source_path, encoding="utf-8") as src, open(target_path, encoding="utf-8") as tgt:
        for source_line, target_line in zip(src, tgt):
            source_line = source_line.rstrip("\n")
            response = target_line.rstrip("\n").replace("<newline>", "\n")
            m = _SOURCE_TAG_RE.match(source_line)
            if m:
                tag, prompt = m.group(1), m.group(2)
            else:
                tag, prompt = "", source_line
            yield RawPair(tag=tag, prompt=prompt.strip(), response=response)


def paired_input_paths(input_path: str) -> tuple[str, str]:
    """Resolve a stem or a .wp_source path to the (source, target) pair."""
    if input_path.endswith(".wp_source"):
        stem = input_path[: -len(".wp_source")]
    elif input_path.endswith(".wp_target"):
        stem = input_path[: -len(".wp_target")]
    else:
        stem = input_path
    return stem + ".wp_source", stem + ".wp_target"


def write_examples_jsonl(examples: Iterable[ProcessedExample], path: str) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(ex.to_json(), sort_keys=True) + "\n")
            n += 1
    return n


def read_examples_jsonl(path: str) -> list[ProcessedExample]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ProcessedExample.from_json(json.loads(line)))
    return out


def bundled_pairs_path() -> str:
    """Path of the prompt/response corpus shipped inside the package."""
    return str(resources.files("storydecode") / "data" / "fixture_corpus.jsonl")
