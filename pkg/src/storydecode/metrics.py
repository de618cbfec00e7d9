"""Diversity metrics, agreement statistics, and significance tests."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from hashlib import blake2b
from itertools import combinations, permutations
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import (
    ConstantInput,
    DegenerateInput,
    DegenerateMatrix,
    EmptyInput,
    InvalidN,
    LengthMismatch,
    TooFewRecords,
)

EMBED_DIM = 64
LIKERT_SCALE = 4


def _ngrams(tokens: Sequence[str], n: int) -> Iterable[tuple[str, ...]]:
    return (tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _as_tokens(response) -> list[str]:
    """A response may arrive as a token sequence, a plain string, or a
    generation record; strings are whitespace-tokenized."""
    if isinstance(response, str):
        return response.split()
    if hasattr(response, "response"):
        return response.response.split()
    return list(response)


def dist_n(response_tokens, n: int) -> float:
    """Distinct n-grams over total n-grams for one response; responses
    shorter than n score 0."""
    if not (isinstance(n, int) and n >= 1):
        raise InvalidN(f"n must be a positive integer, got {n!r}")
    tokens = _as_tokens(response_tokens)
    total = len(tokens) - n + 1
    if total < 1:
        return 0.0
    return len(set(_ngrams(tokens, n))) / total


def corpus_dist_n(records: Sequence, n: int, *, pooled: bool = False) -> float:
    """Average the per-response ratio (default), or pool all n-grams into
    one global distinct/total ratio. Pooling punishes cross-response
    repetition that per-response averaging cannot see."""
    if not (isinstance(n, int) and n >= 1):
        raise InvalidN(f"n must be a positive integer, got {n!r}")
    if not records:
        raise EmptyInput("no records")
    if not pooled:
        return math.fsum(dist_n(r, n) for r in records) / len(records)
    seen: set[tuple[str, ...]] = set()
    total = 0
    for record in records:
        for gram in _ngrams(_as_tokens(record), n):
            seen.add(gram)
            total += 1
    if total == 0:
        return 0.0
    return len(seen) / total


class BuiltinEmbedder:
    """Deterministic hash-seeded random projection of tokens.

    Each token's vector is drawn from a generator seeded by the token's
    own hash, so embeddings are stable across processes without any
    model file. Sentences are mean-pooled over their tokens.
    """

    name = "builtin"

    def __init__(self, dim: int = EMBED_DIM):
        self.dim = dim
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._cache.get(token)
        if vec is None:
            seed = int.from_bytes(
                blake2b(token.encode("utf-8"), digest_size=8).digest(), "little"
            )
            vec = np.random.default_rng(seed).standard_normal(self.dim)
            vec.setflags(write=False)
            self._cache[token] = vec
        return vec

    def embed(self, text: str) -> np.ndarray:
        tokens = text.split()
        if not tokens:
            return np.zeros(self.dim)
        return np.mean([self.token_vector(t) for t in tokens], axis=0)


def _as_text(record) -> str:
    if isinstance(record, str):
        return record
    if hasattr(record, "response"):
        return record.response
    return " ".join(record)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Zero vectors are treated as identical to each other and opposite
    to everything else, keeping the metric total."""
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 and nb == 0.0:
        return 1.0
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def sent_diversity(records: Sequence, embedder=None) -> float:
    """Mean pairwise cosine distance between response embeddings."""
    if len(records) < 2:
        raise TooFewRecords(f"need at least 2 records, got {len(records)}")
    embedder = embedder or BuiltinEmbedder()
    vectors = [embedder.embed(_as_text(r)) for r in records]
    dists = [1.0 - cosine_similarity(a, b) for a, b in combinations(vectors, 2)]
    return math.fsum(dists) / len(dists)


@dataclass(frozen=True)
class RatingMatrix:
    """Items x categories count matrix for one rated metric."""

    metric: str
    item_ids: tuple[str, ...]
    counts: np.ndarray
    scale: int = LIKERT_SCALE

    def __post_init__(self) -> None:
        if self.counts.shape != (len(self.item_ids), self.scale):
            raise DegenerateMatrix(
                f"count matrix shape {self.counts.shape} does not match "
                f"{len(self.item_ids)} items x {self.scale} categories"
            )

    @property
    def raters_per_item(self) -> int:
        sums = self.counts.sum(axis=1)
        if not np.all(sums == sums[0]):
            raise DegenerateMatrix("items were rated by different numbers of annotators")
        return int(sums[0])


def read_ratings_csv(path: str, *, scale: int = LIKERT_SCALE) -> dict[str, RatingMatrix]:
    """Long-format ratings (item_id, metric, annotator_id, score) grouped
    into one count matrix per metric."""
    per_metric: dict[str, dict[str, list[int]]] = {}
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"item_id", "metric", "annotator_id", "score"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise EmptyInput(f"ratings file must have columns {sorted(required)}")
        for row in reader:
            score = int(row["score"])
            if not 1 <= score <= scale:
                raise DegenerateMatrix(f"score {score} outside 1..{scale}")
            per_metric.setdefault(row["metric"], {}).setdefault(row["item_id"], []).append(score)
    if not per_metric:
        raise EmptyInput("ratings file has no rows")
    out = {}
    for metric, items in per_metric.items():
        item_ids = tuple(sorted(items))
        counts = np.zeros((len(item_ids), scale), dtype=np.int64)
        for i, item in enumerate(item_ids):
            for score in items[item]:
                counts[i, score - 1] += 1
        out[metric] = RatingMatrix(metric=metric, item_ids=item_ids, counts=counts)
    return out


def fleiss_kappa(matrix: RatingMatrix) -> float:
    """Chance-corrected agreement for fixed-size annotator panels."""
    counts = matrix.counts
    n_items = counts.shape[0]
    if n_items < 2:
        raise TooFewRecords(f"need at least 2 items, got {n_items}")
    r = matrix.raters_per_item
    if r < 2:
        raise DegenerateMatrix("need at least 2 ratings per item")
    p_i = (np.sum(counts * counts, axis=1) - r) / (r * (r - 1))
    p_bar = float(np.mean(p_i))
    p_j = counts.sum(axis=0) / (n_items * r)
    p_e = float(np.sum(p_j * p_j))
    if p_e == 1.0:
        if p_bar == 1.0:
            return 1.0
        raise DegenerateMatrix("expected agreement is 1; kappa undefined")
    return (p_bar - p_e) / (1.0 - p_e)


def likert_mean(ratings, *, scale: int = LIKERT_SCALE) -> float:
    """Mean of all individual ratings, from a RatingMatrix or a flat
    sequence of scores."""
    if isinstance(ratings, RatingMatrix):
        counts = ratings.counts
        total = int(counts.sum())
        if total == 0:
            raise EmptyInput("no scores")
        categories = np.arange(1, ratings.scale + 1)
        return float(np.sum(counts.sum(axis=0) * categories)) / total
    if not ratings:
        raise EmptyInput("no scores")
    for s in ratings:
        if not 1 <= s <= scale:
            raise DegenerateInput(f"score {s!r} outside 1..{scale}")
    return math.fsum(ratings) / len(ratings)


def _average_ranks(values: Sequence[float]) -> np.ndarray:
    return stats.rankdata(values, method="average")


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    p_value: float
    n: int
    exact: bool

    def __iter__(self):
        return iter((self.rho, self.p_value))

    def to_json(self) -> dict:
        return {"rho": self.rho, "p_value": self.p_value, "n": self.n, "exact": self.exact}


def _rank_rho(rx: np.ndarray, ry: np.ndarray) -> float:
    rx = rx - rx.mean()
    ry = ry - ry.mean()
    denom = math.sqrt(float(np.sum(rx * rx)) * float(np.sum(ry * ry)))
    return float(np.sum(rx * ry)) / denom


def spearman(x: Sequence[float], y: Sequence[float]) -> CorrelationResult:
    """Rank correlation with ties sharing average ranks.

    For n <= 8 the two-sided P value is exact, counting permutations of
    one margin whose |rho| reaches the observed one; larger samples use
    the t approximation on n-2 degrees of freedom.
    """
    if len(x) != len(y):
        raise LengthMismatch(f"length mismatch: {len(x)} vs {len(y)}")
    n = len(x)
    if n < 3:
        raise TooFewRecords(f"need at least 3 pairs, got {n}")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    if np.all(rx == rx[0]) or np.all(ry == ry[0]):
        raise ConstantInput("rank correlation undefined for a constant margin")
    rho = _rank_rho(rx, ry)
    if n <= 8:
        observed = abs(rho)
        hits = 0
        total = 0
        for perm in permutations(ry):
            total += 1
            if abs(_rank_rho(rx, np.asarray(perm))) >= observed - 1e-12:
                hits += 1
        return CorrelationResult(rho=rho, p_value=hits / total, n=n, exact=True)
    t = rho * math.sqrt((n - 2) / max(1.0 - rho * rho, 1e-300))
    p = 2.0 * float(stats.t.sf(abs(t), df=n - 2))
    return CorrelationResult(rho=rho, p_value=min(p, 1.0), n=n, exact=False)


@dataclass(frozen=True)
class TTestResult:
    statistic: float
    df: float
    p_value: float

    def __iter__(self):
        return iter((self.statistic, self.p_value))

    def to_json(self) -> dict:
        return {"statistic": self.statistic, "df": self.df, "p_value": self.p_value}


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Unequal-variance two-sample t test.

    Computed so that swapping the samples flips the statistic's sign
    bit-for-bit: the standard error is a commutative sum and the
    numerator is an exact negation.
    """
    if len(a) < 2 or len(b) < 2:
        raise TooFewRecords("each sample needs at least 2 observations")
    xa = np.asarray(a, dtype=np.float64)
    xb = np.asarray(b, dtype=np.float64)
    va = float(np.var(xa, ddof=1)) / xa.size
    vb = float(np.var(xb, ddof=1)) / xb.size
    se2 = va + vb
    if se2 == 0.0:
        raise DegenerateInput("both samples are constant; statistic undefined")
    t = (float(xa.mean()) - float(xb.mean())) / math.sqrt(se2)
    df = se2 * se2 / (va * va / (xa.size - 1) + vb * vb / (xb.size - 1))
    p = 2.0 * float(stats.t.sf(abs(t), df=df))
    return TTestResult(statistic=t, df=df, p_value=min(p, 1.0))


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """One-sample t test on pairwise differences."""
    if len(a) != len(b):
        raise LengthMismatch(f"length mismatch: {len(a)} vs {len(b)}")
    if len(a) < 2:
        raise TooFewRecords("need at least 2 pairs")
    d = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    sd = float(np.std(d, ddof=1))
    if sd == 0.0:
        raise DegenerateInput("differences are constant; statistic undefined")
    n = d.size
    t = float(d.mean()) / (sd / math.sqrt(n))
    p = 2.0 * float(stats.t.sf(abs(t), df=n - 1))
    return TTestResult(statistic=t, df=float(n - 1), p_value=min(p, 1.0))


@dataclass(frozen=True)
class MetricReport:
    """Aggregated automatic metrics for one batch of responses."""

    record_count: int
    dist1: float
    dist2: float
    config_key: str | None = None
    sent_div: float | None = None
    ppl: float | None = None
    mean_ratings: Mapping[str, float] | None = None
    dist_extra: Mapping[int, float] | None = None
    dist_pooled: Mapping[int, float] | None = None

    def to_json(self) -> dict:
        out: dict = {
            "record_count": self.record_count,
            "dist1": self.dist1,
            "dist2": self.dist2,
        }
        if self.config_key is not None:
            out["config_key"] = self.config_key
        if self.sent_div is not None:
            out["sent_div"] = self.sent_div
        if self.ppl is not None:
            out["ppl"] = self.ppl
        if self.mean_ratings is not None:
            out["mean_ratings"] = dict(sorted(self.mean_ratings.items()))
        if self.dist_extra is not None:
            out["dist_extra"] = {str(n): v for n, v in sorted(self.dist_extra.items())}
        if self.dist_pooled is not None:
            out["dist_pooled"] = {str(n): v for n, v in sorted(self.dist_pooled.items())}
        return out


def report_for_records(
    records: Sequence,
    *,
    ns: Sequence[int] = (1, 2),
    config_key: str | None = None,
    pooled: bool = False,
    diversity: bool = False,
    embedder=None,
    ppl: float | None = None,
    mean_ratings: Mapping[str, float] | None = None,
) -> MetricReport:
    if not records:
        raise EmptyInput("no records")
    extra = {n: corpus_dist_n(records, n) for n in ns if n not in (1, 2)}
    return MetricReport(
        record_count=len(records),
        dist1=corpus_dist_n(records, 1),
        dist2=corpus_dist_n(records, 2),
        config_key=config_key,
        sent_div=sent_diversity(records, embedder) if diversity else None,
        ppl=ppl,
        mean_ratings=mean_ratings,
        dist_extra=extra or None,
        dist_pooled={n: corpus_dist_n(records, n, pooled=True) for n in ns} if pooled else None,
    )
