"""Decoding strategies over next-token distributions.

The per-step pipeline is: anti-LM adjustment (when a weight and an
unconditioned model are given), temperature, truncation filter, then a
single inverse-CDF draw. Exactly one uniform variate is consumed per
emitted token no matter how the candidate set was truncated, so traces
with the same seed stay aligned across strategies.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .corpus import LENGTH_CLASSES, prompt_prefix
from .errors import (
    DegenerateDistribution,
    InvalidK,
    InvalidP,
    InvalidTemperature,
    UsageError,
    VocabMismatch,
)
from .lm import FLOOR, LanguageModel, TokenDistribution

STRATEGIES = ("greedy", "top_k", "nucleus", "random")


@dataclass(frozen=True)
class DecoderConfig:
    strategy: str = "nucleus"
    p: float = 0.7
    k: int = 40
    temperature: float = 1.0
    mmi_lambda: float = 0.0
    mmi_window: int = 20
    length_class: str = "medium"
    max_tokens: int | None = None
    seed: int = 42
    mmi_after_filter: bool = False

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise UsageError(f"unknown strategy: {self.strategy!r}")
        if not (isinstance(self.p, (int, float)) and 0.0 <= self.p <= 1.0):
            raise InvalidP(f"p must be in [0, 1], got {self.p!r}")
        if not (isinstance(self.k, int) and self.k >= 1):
            raise InvalidK(f"k must be a positive integer, got {self.k!r}")
        if not (
            isinstance(self.temperature, (int, float))
            and math.isfinite(self.temperature)
            and self.temperature > 0
        ):
            raise InvalidTemperature(f"temperature must be positive, got {self.temperature!r}")
        if self.mmi_lambda < 0:
            raise UsageError(f"lambda must be non-negative, got {self.mmi_lambda!r}")
        if self.mmi_window < 0:
            raise UsageError(f"window must be non-negative, got {self.mmi_window!r}")
        if self.length_class not in LENGTH_CLASSES:
            raise UsageError(f"unknown length class: {self.length_class!r}")
        if self.max_tokens is not None and self.max_tokens < 1:
            raise UsageError(f"max_tokens must be positive, got {self.max_tokens!r}")

    @property
    def token_budget(self) -> int:
        if self.max_tokens is not None:
            return self.max_tokens
        return LENGTH_CLASSES[self.length_class].token_cap

    def to_json(self) -> dict:
        return {
            "strategy": self.strategy,
            "p": self.p,
            "k": self.k,
            "temperature": self.temperature,
            "lambda": self.mmi_lambda,
            "mmi_window": self.mmi_window,
            "length_class": self.length_class,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
            "mmi_after_filter": self.mmi_after_filter,
        }

    @staticmethod
    def from_json(obj: dict) -> "DecoderConfig":
        return DecoderConfig(
            strategy=obj.get("strategy", "nucleus"),
            p=obj.get("p", 0.7),
            k=obj.get("k", 40),
            temperature=obj.get("temperature", 1.0),
            mmi_lambda=obj.get("lambda", 0.0),
            mmi_window=obj.get("mmi_window", 20),
            length_class=obj.get("length_class", "medium"),
            max_tokens=obj.get("max_tokens"),
            seed=obj.get("seed", 42),
            mmi_after_filter=obj.get("mmi_after_filter", False),
        )


def _stable_order(logprobs: np.ndarray) -> np.ndarray:
    """Token ids sorted by probability descending, id ascending on ties."""
    return np.lexsort((np.arange(logprobs.shape[0]), -logprobs))


def nucleus_filter(
    dist: TokenDistribution, p: float
) -> tuple[set[int], TokenDistribution]:
    """Keep the smallest highest-probability set whose mass reaches p.

    The token that crosses the threshold is kept, so p=0 degenerates to
    the single most likely token and p=1 keeps the full support. Returns
    the kept token ids and the distribution renormalized over them.
    """
    if not (isinstance(p, (int, float)) and 0.0 <= p <= 1.0):
        raise InvalidP(f"p must be in [0, 1], got {p!r}")
    order = _stable_order(dist.logprobs)
    if p == 1.0:
        kept = order[dist.logprobs[order] > -np.inf]
    else:
        probs = np.exp(dist.logprobs[order])
        cum = np.cumsum(probs)
        cut = int(np.searchsorted(cum, p, side="left"))
        cut = min(cut, dist.support_size - 1)
        kept = order[: cut + 1]
    return {int(t) for t in kept}, _renormalize_subset(dist, kept)


def top_k_filter(
    dist: TokenDistribution, k: int
) -> tuple[set[int], TokenDistribution]:
    """Keep the k most likely tokens (ties broken toward lower ids)."""
    if not (isinstance(k, int) and k >= 1):
        raise InvalidK(f"k must be a positive integer, got {k!r}")
    order = _stable_order(dist.logprobs)
    kept = order[: min(k, dist.support_size)]
    return {int(t) for t in kept}, _renormalize_subset(dist, kept)


def _renormalize_subset(dist: TokenDistribution, kept: np.ndarray) -> TokenDistribution:
    out = np.full(dist.size, -np.inf, dtype=np.float64)
    kept_lp = dist.logprobs[kept]
    out[kept] = kept_lp - logsumexp(kept_lp)
    return TokenDistribution(out)


def apply_temperature(dist: TokenDistribution, temperature: float) -> TokenDistribution:
    """Sharpen (<1) or flatten (>1) by scaling log probabilities."""
    if not (
        isinstance(temperature, (int, float))
        and math.isfinite(temperature)
        and temperature > 0
    ):
        raise InvalidTemperature(f"temperature must be positive, got {temperature!r}")
    if temperature == 1.0:
        return dist
    return TokenDistribution.from_logits(dist.logprobs / temperature)


def mmi_adjust(
    cond: TokenDistribution, uncond: TokenDistribution, weight: float
) -> TokenDistribution:
    """Penalize each token by `weight` times its unconditioned log
    probability, then renormalize.

    Unconditioned scores are floored first so an impossible-under-the-
    anti-model token cannot earn an unbounded bonus, while tokens that
    are impossible under the conditioned distribution stay impossible.
    weight=0 returns the conditioned distribution untouched.
    """
    if weight < 0:
        raise UsageError(f"lambda must be non-negative, got {weight!r}")
    if cond.size != uncond.size:
        raise VocabMismatch(
            f"distribution sizes differ: {cond.size} vs {uncond.size}"
        )
    if weight == 0.0:
        return cond
    scores = cond.logprobs - weight * np.maximum(uncond.logprobs, FLOOR)
    scores = np.where(cond.logprobs > -np.inf, scores, -np.inf)
    norm = logsumexp(scores)
    if np.any(np.isnan(scores)) or not np.isfinite(norm):
        raise DegenerateDistribution("adjusted scores have no probability mass")
    return TokenDistribution(scores - norm)


def step_distribution(
    cond: TokenDistribution,
    config: DecoderConfig,
    uncond: TokenDistribution | None = None,
) -> TokenDistribution:
    """Apply the configured per-step pipeline to one model output."""

    def adjust(dist: TokenDistribution) -> TokenDistribution:
        if uncond is None or config.mmi_lambda == 0.0:
            return dist
        return mmi_adjust(dist, uncond, config.mmi_lambda)

    def truncate(dist: TokenDistribution) -> TokenDistribution:
        if config.strategy == "nucleus":
            return nucleus_filter(dist, config.p)[1]
        if config.strategy == "top_k":
            return top_k_filter(dist, config.k)[1]
        if config.strategy == "greedy":
            return top_k_filter(dist, 1)[1]
        return dist

    if config.mmi_after_filter:
        return adjust(truncate(apply_temperature(cond, config.temperature)))
    return truncate(apply_temperature(adjust(cond), config.temperature))


def sample(dist: TokenDistribution, rng: np.random.Generator) -> int:
    """One inverse-CDF draw over the support in stable order."""
    order = _stable_order(dist.logprobs)
    order = order[dist.logprobs[order] > -np.inf]
    if order.size == 0:
        raise DegenerateDistribution("nothing to sample from")
    u = rng.random()
    cum = np.cumsum(np.exp(dist.logprobs[order]))
    idx = int(np.searchsorted(cum, u * cum[-1], side="right"))
    return int(order[min(idx, order.size - 1)])


@dataclass(frozen=True)
class StepTrace:
    step_index: int
    chosen_token: int
    sampled_space_size: int
    chosen_logprob: float

    def to_json(self) -> dict:
        return {
            "step_index": self.step_index,
            "chosen_token": self.chosen_token,
            "sampled_space_size": self.sampled_space_size,
            "chosen_logprob": self.chosen_logprob,
        }

    @staticmethod
    def from_json(obj: dict) -> "StepTrace":
        return StepTrace(
            step_index=obj["step_index"],
            chosen_token=obj["chosen_token"],
            sampled_space_size=obj["sampled_space_size"],
            chosen_logprob=obj["chosen_logprob"],
        )


@dataclass(frozen=True)
class GenerationRecord:
    prompt: str
    response: str
    config: DecoderConfig
    steps: tuple[StepTrace, ...] = field(repr=False)
    terminated_by: str

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "prompt": self.prompt,
            "response": self.response,
            "config": self.config.to_json(),
            "steps": [s.to_json() for s in self.steps],
            "terminated_by": self.terminated_by,
        }

    def to_line(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_json(obj: dict) -> "GenerationRecord":
        return GenerationRecord(
            prompt=obj["prompt"],
            response=obj["response"],
            config=DecoderConfig.from_json(obj["config"]),
            steps=tuple(StepTrace.from_json(s) for s in obj["steps"]),
            terminated_by=obj["terminated_by"],
        )


def generate(
    model: LanguageModel,
    prompt: str,
    config: DecoderConfig,
    *,
    uncond_model: LanguageModel | None = None,
    rng: np.random.Generator | None = None,
) -> GenerationRecord:
    """Decode one response for a prompt.

    The conditioned context is the marker-delimited prompt prefix; the
    unconditioned context is the same structural skeleton without the
    prompt body, so the anti-model sees only what was generated. By
    default the model is its own anti-model (same weights, promptless
    context). The end token terminates without entering the response,
    and the adjustment weight only acts for the first mmi_window steps.
    """
    if config.mmi_lambda > 0 and uncond_model is None:
        uncond_model = model
    if uncond_model is not None and uncond_model.vocab_size != model.vocab_size:
        raise VocabMismatch(
            f"model vocabularies differ: {model.vocab_size} vs {uncond_model.vocab_size}"
        )
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    context = model.encode_text(prompt_prefix(prompt))
    uncond_context = [model.start_id, context[-1]]
    generated: list[int] = []
    steps: list[StepTrace] = []
    terminated_by = "max_tokens"
    for step_index in range(config.token_budget):
        cond = model.next_distribution(context)
        uncond = None
        if (
            uncond_model is not None
            and config.mmi_lambda > 0
            and step_index < config.mmi_window
        ):
            uncond = uncond_model.next_distribution(uncond_context)
        dist = step_distribution(cond, config, uncond)
        token = sample(dist, rng)
        steps.append(
            StepTrace(
                step_index=step_index,
                chosen_token=token,
                sampled_space_size=dist.support_size,
                chosen_logprob=float(dist.logprobs[token]),
            )
        )
        if token == model.end_id:
            terminated_by = "end_token"
            break
        generated.append(token)
        context.append(token)
        uncond_context.append(token)
    return GenerationRecord(
        prompt=prompt,
        response=model.decode_text(generated),
        config=config,
        steps=tuple(steps),
        terminated_by=terminated_by,
    )


def greedy_config(config: DecoderConfig) -> DecoderConfig:
    """The argmax-only counterpart of a config (shared seed and budget)."""
    return replace(config, strategy="greedy", mmi_lambda=0.0)


def write_records_jsonl(records: Sequence[GenerationRecord], path: str) -> int:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_line() + "\n")
    return len(records)


def read_records_jsonl(path: str) -> list[GenerationRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(GenerationRecord.from_json(json.loads(line)))
    return out
