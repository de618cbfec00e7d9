"""Token vocabularies, next-token distributions, and n-gram models.

A distribution is a dense natural-log probability vector over the whole
vocabulary. Model outputs floor impossible tokens at FLOOR nats instead
of -inf; exact -inf entries only appear after explicit filtering.
"""

from __future__ import annotations

import functools
import json
import math
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Protocol, Sequence, runtime_checkable

import numpy as np
from scipy.special import logsumexp

from .corpus import END_MARKER, PROMPT_MARKER, RESPONSE_MARKER, START_MARKER
from .errors import DegenerateDistribution, EmptyCorpus, OutOfVocab
from .tokenize import Tokenizer, WhitespaceTokenizer

FLOOR = -30.0
LOGSUMEXP_TOL = 1e-9
POSITIVE_TOL = 1e-9

SPECIAL_TOKENS = (START_MARKER, PROMPT_MARKER, RESPONSE_MARKER, END_MARKER)


class TokenDistribution:
    """Validated log-probability vector over token ids 0..V-1."""

    __slots__ = ("logprobs",)

    def __init__(self, logprobs: np.ndarray, *, _validated: bool = False):
        arr = np.asarray(logprobs, dtype=np.float64)
        if not _validated:
            _validate_logprobs(arr)
        arr.setflags(write=False)
        self.logprobs = arr

    @property
    def size(self) -> int:
        return int(self.logprobs.shape[0])

    @property
    def support_size(self) -> int:
        return int(np.count_nonzero(self.logprobs > -np.inf))

    def argmax(self) -> int:
        # np.argmax already returns the lowest index among ties.
        return int(np.argmax(self.logprobs))

    def probs(self) -> np.ndarray:
        return np.exp(self.logprobs)

    @staticmethod
    def from_probs(probs: np.ndarray) -> "TokenDistribution":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 1 or probs.size == 0:
            raise DegenerateDistribution("probability vector must be 1-d and non-empty")
        if np.any(~np.isfinite(probs)) or np.any(probs < 0):
            raise DegenerateDistribution("probabilities must be finite and non-negative")
        with np.errstate(divide="ignore"):
            logprobs = np.log(probs)
        return TokenDistribution(np.maximum(logprobs, FLOOR))

    @staticmethod
    def from_logits(logits: np.ndarray) -> "TokenDistribution":
        logits = np.asarray(logits, dtype=np.float64)
        if logits.ndim != 1 or logits.size == 0:
            raise DegenerateDistribution("logit vector must be 1-d and non-empty")
        if np.any(np.isnan(logits)):
            raise DegenerateDistribution("logits contain NaN")
        norm = logsumexp(logits)
        if not np.isfinite(norm):
            raise DegenerateDistribution("logits have no probability mass")
        return TokenDistribution(np.maximum(logits - norm, FLOOR))


def _validate_logprobs(arr: np.ndarray) -> None:
    if arr.ndim != 1 or arr.size == 0:
        raise DegenerateDistribution("log-probability vector must be 1-d and non-empty")
    if np.any(np.isnan(arr)):
        raise DegenerateDistribution("log-probability vector contains NaN")
    if np.any(arr > POSITIVE_TOL):
        raise DegenerateDistribution("log probabilities above zero")
    finite = arr[arr > -np.inf]
    if finite.size == 0:
        raise DegenerateDistribution("all tokens have zero probability")
    total = logsumexp(arr)
    if abs(total) > LOGSUMEXP_TOL:
        raise DegenerateDistribution(f"log mass {total!r} is not within {LOGSUMEXP_TOL} of 0")


class Vocab:
    """Immutable token <-> id table with the four structural markers.

    Marker tokens occupy ids 0..3 in a fixed order; remaining tokens are
    sorted so that construction from the same token set is deterministic.
    """

    def __init__(self, tokens: Sequence[str]):
        seen = dict.fromkeys(SPECIAL_TOKENS)
        for tok in tokens:
            seen.setdefault(tok)
        specials = list(SPECIAL_TOKENS)
        rest = sorted(t for t in seen if t not in SPECIAL_TOKENS)
        self._tokens: tuple[str, ...] = tuple(specials + rest)
        self._ids = {tok: i for i, tok in enumerate(self._tokens)}

    def __len__(self) -> int:
        return len(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    @property
    def tokens(self) -> tuple[str, ...]:
        return self._tokens

    @property
    def start_id(self) -> int:
        return self._ids[START_MARKER]

    @property
    def end_id(self) -> int:
        return self._ids[END_MARKER]

    @property
    def prompt_id(self) -> int:
        return self._ids[PROMPT_MARKER]

    @property
    def response_id(self) -> int:
        return self._ids[RESPONSE_MARKER]

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise OutOfVocab(f"token not in vocabulary: {token!r}") from None

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._tokens):
            raise OutOfVocab(f"token id out of range: {token_id}")
        return self._tokens[token_id]

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.id_of(t) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.token_of(i) for i in ids]


@runtime_checkable
class LanguageModel(Protocol):
    """Anything that maps a token-id context to a next-token distribution."""

    @property
    def vocab_size(self) -> int: ...

    @property
    def start_id(self) -> int: ...

    @property
    def end_id(self) -> int: ...

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution: ...

    def encode_text(self, text: str) -> list[int]: ...

    def decode_text(self, ids: Sequence[int]) -> str: ...


class UniformModel:
    """Every context yields the same flat distribution. Useful as a
    worst-case baseline: its perplexity equals the vocabulary size."""

    def __init__(self, vocab: Vocab):
        self.vocab = vocab
        self._dist = TokenDistribution(
            np.full(len(vocab), -math.log(len(vocab)), dtype=np.float64)
        )

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def start_id(self) -> int:
        return self.vocab.start_id

    @property
    def end_id(self) -> int:
        return self.vocab.end_id

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        for i in context:
            self.vocab.token_of(i)
        return self._dist

    def encode_text(self, text: str) -> list[int]:
        return self.vocab.encode(text.split())

    def decode_text(self, ids: Sequence[int]) -> str:
        return " ".join(self.vocab.decode(ids))


class TableModel:
    """Fixture model: an explicit context -> probability-row lookup.

    Rows are given as {token: prob} over a shared vocabulary; contexts
    use the most recent `context_size` tokens. Unlisted contexts fall
    back to a designated default row.
    """

    def __init__(
        self,
        vocab: Vocab,
        rows: dict[tuple[str, ...], dict[str, float]],
        *,
        context_size: int = 1,
        default_row: dict[str, float] | None = None,
    ):
        self.vocab = vocab
        self.context_size = context_size
        self._rows = {
            tuple(vocab.encode(ctx)): self._build(vocab, row) for ctx, row in rows.items()
        }
        self._default = self._build(vocab, default_row) if default_row else None

    @staticmethod
    def _build(vocab: Vocab, row: dict[str, float]) -> TokenDistribution:
        probs = np.zeros(len(vocab), dtype=np.float64)
        for token, p in row.items():
            probs[vocab.id_of(token)] = p
        total = probs.sum()
        if total <= 0:
            raise DegenerateDistribution("table row has no mass")
        return TokenDistribution.from_probs(probs / total)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def start_id(self) -> int:
        return self.vocab.start_id

    @property
    def end_id(self) -> int:
        return self.vocab.end_id

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        key = tuple(context[-self.context_size :]) if self.context_size else ()
        dist = self._rows.get(key, self._default)
        if dist is None:
            raise DegenerateDistribution(f"no table row for context {key!r}")
        return dist

    def encode_text(self, text: str) -> list[int]:
        return self.vocab.encode(text.split())

    def decode_text(self, ids: Sequence[int]) -> str:
        return " ".join(self.vocab.decode(ids))


class NGramLM:
    """Additively smoothed n-gram model with strict (no-backoff) contexts.

    P(t | ctx) = (count(ctx, t) + alpha) / (count(ctx, *) + alpha * V).
    Contexts shorter than order-1 are left-padded with the start marker,
    matching how generation conditions on a formatted prompt prefix.
    """

    def __init__(self, vocab: Vocab, order: int, alpha: float):
        if order < 1:
            raise ValueError("order must be >= 1")
        if alpha <= 0:
            raise ValueError("alpha must be positive")
        self.vocab = vocab
        self.order = order
        self.alpha = float(alpha)
        self._counts: dict[tuple[int, ...], dict[int, int]] = defaultdict(dict)
        self._totals: dict[tuple[int, ...], int] = defaultdict(int)
        self._dist_cached = functools.lru_cache(maxsize=4096)(self._dist_for)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)

    @property
    def start_id(self) -> int:
        return self.vocab.start_id

    @property
    def end_id(self) -> int:
        return self.vocab.end_id

    def _pad(self, ids: Sequence[int]) -> tuple[int, ...]:
        need = self.order - 1
        ctx = tuple(ids[-need:]) if need else ()
        if len(ctx) < need:
            ctx = (self.start_id,) * (need - len(ctx)) + ctx
        return ctx

    def observe(self, ids: Sequence[int]) -> None:
        self._dist_cached.cache_clear()
        history: list[int] = []
        for token_id in ids:
            ctx = self._pad(history)
            row = self._counts[ctx]
            row[token_id] = row.get(token_id, 0) + 1
            self._totals[ctx] += 1
            history.append(token_id)

    def _dist_for(self, ctx: tuple[int, ...]) -> TokenDistribution:
        v = len(self.vocab)
        probs = np.full(v, self.alpha, dtype=np.float64)
        for token_id, count in self._counts.get(ctx, {}).items():
            probs[token_id] += count
        probs /= self._totals.get(ctx, 0) + self.alpha * v
        return TokenDistribution.from_probs(probs)

    def next_distribution(self, context: Sequence[int]) -> TokenDistribution:
        for i in context:
            self.vocab.token_of(i)
        return self._dist_cached(self._pad(context))

    def encode_text(self, text: str) -> list[int]:
        return self.vocab.encode(text.split())

    def decode_text(self, ids: Sequence[int]) -> str:
        return " ".join(self.vocab.decode(ids))

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "model_type": "ngram",
            "order": self.order,
            "alpha": self.alpha,
            "tokens": list(self.vocab.tokens),
            "counts": [
                {"context": list(ctx), "row": sorted(row.items())}
                for ctx, row in sorted(self._counts.items())
            ],
        }

    @staticmethod
    def from_json(obj: dict) -> "NGramLM":
        if obj.get("model_type") != "ngram":
            raise ValueError(f"not an n-gram model file: {obj.get('model_type')!r}")
        model = NGramLM(Vocab(obj["tokens"]), obj["order"], obj["alpha"])
        for entry in obj["counts"]:
            ctx = tuple(entry["context"])
            for token_id, count in entry["row"]:
                model._counts[ctx][token_id] = count
                model._totals[ctx] += count
        return model

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @staticmethod
    def load(path: str) -> "NGramLM":
        with open(path, encoding="utf-8") as fh:
            return NGramLM.from_json(json.load(fh))


def train_ngram(
    texts: Iterable[str],
    *,
    order: int = 3,
    alpha: float = 1e-6,
    tokenizer: Tokenizer | None = None,
) -> NGramLM:
    """Build the vocabulary and count n-grams over whole example strings."""
    tokenizer = tokenizer or WhitespaceTokenizer()
    token_lists = [tokenizer.tokenize(t) for t in texts]
    if not token_lists:
        raise EmptyCorpus("no training texts")
    vocab = Vocab([tok for toks in token_lists for tok in toks])
    model = NGramLM(vocab, order, alpha)
    for toks in token_lists:
        model.observe(vocab.encode(toks))
    return model


class PerplexityScope(Enum):
    RESPONSE_ONLY = "response_only"
    FULL_SEQUENCE = "full_sequence"


def sequence_logprob(
    model: LanguageModel, context: Sequence[int], target: Sequence[int]
) -> float:
    """Sum of log probabilities of the target ids given the context.

    Token i of the target is conditioned on context + target[:i]; an
    empty target scores 0.0.
    """
    prefix = list(context)
    parts = []
    for token_id in target:
        dist = model.next_distribution(prefix)
        parts.append(min(float(dist.logprobs[token_id]), 0.0))
        prefix.append(token_id)
    return math.fsum(parts)


def _split_for_scope(
    model: LanguageModel, text: str, scope: PerplexityScope
) -> tuple[list[int], list[int]]:
    """Split encoded text into (conditioning context, scored target)."""
    ids = model.encode_text(text)
    if len(ids) < 2:
        raise ValueError("need at least two tokens to score")
    if scope is PerplexityScope.FULL_SEQUENCE:
        return ids[:1], ids[1:]
    marker = model.encode_text(RESPONSE_MARKER)[0]
    for pos, token_id in enumerate(ids):
        if token_id == marker:
            if pos + 1 >= len(ids):
                raise ValueError("response is empty")
            return ids[: pos + 1], ids[pos + 1 :]
    raise ValueError("sequence has no response marker")


def perplexity(
    model: LanguageModel,
    examples: Iterable,
    scope: PerplexityScope = PerplexityScope.RESPONSE_ONLY,
) -> float:
    """Pooled exp of the mean per-token negative log probability.

    Accepts processed examples (their formatted text is scored) or plain
    strings. RESPONSE_ONLY scores only tokens after the response marker
    (end marker included) while conditioning them on the full prefix;
    FULL_SEQUENCE scores everything after the leading start marker. The
    pool is a single mean over every scored token, so the result is
    invariant under permutation of the examples.
    """
    parts: list[float] = []
    count = 0
    for example in examples:
        text = example.text if hasattr(example, "text") else example
        context, target = _split_for_scope(model, text, scope)
        parts.append(sequence_logprob(model, context, target))
        count += len(target)
    if count == 0:
        raise EmptyCorpus("no examples to score")
    return math.exp(-math.fsum(parts) / count)
