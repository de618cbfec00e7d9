"""Grid sweeps over decoding parameters, with resumable shard output.

A sweep is a (grid value x prompt x story) cube of generations. Every
generation derives its own seed from the cube coordinates, so any cell
can be recomputed in isolation, reruns are byte-identical, and the
worker count never changes the output. Cells are persisted as one JSONL
shard per grid value, written atomically; an interrupted sweep resumes
by reloading complete shards.
"""

from __future__ import annotations

import json
import math
import os
import struct
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from hashlib import blake2b
from typing import Mapping, Sequence

from .decode import DecoderConfig, GenerationRecord, generate, read_records_jsonl
from .errors import EmptyInput, StoryDecodeError
from .lm import LanguageModel
from .metrics import corpus_dist_n

P_GRID = (0.0, 0.3, 0.5, 0.7, 0.9, 0.95, 1.0)
LAMBDA_GRID = (0.0, 0.1, 0.2, 0.35, 0.5)


def cell_seed(base_seed: int, prompt_idx: int, grid_idx: int, story_idx: int) -> int:
    """Stable per-generation seed from the sweep-cube coordinates."""
    digest = blake2b(
        struct.pack("<3q", prompt_idx, grid_idx, story_idx), digest_size=8
    ).digest()
    return base_seed ^ int.from_bytes(digest, "little")


@dataclass(frozen=True)
class SweepSpec:
    prompts: tuple[str, ...]
    p_grid: tuple[float, ...] = P_GRID
    lambda_grid: tuple[float, ...] = LAMBDA_GRID
    lambda_base_p: float = 0.7
    stories_per_cell: int = 1
    base_seed: int = 42
    length_class: str = "medium"

    def __post_init__(self) -> None:
        if not self.prompts:
            raise EmptyInput("sweep needs at least one prompt")
        if self.stories_per_cell < 1:
            raise EmptyInput("stories_per_cell must be positive")

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "prompts": list(self.prompts),
            "p_grid": list(self.p_grid),
            "lambda_grid": list(self.lambda_grid),
            "lambda_base_p": self.lambda_base_p,
            "stories_per_cell": self.stories_per_cell,
            "base_seed": self.base_seed,
            "length_class": self.length_class,
        }

    @staticmethod
    def from_json(obj: dict) -> "SweepSpec":
        return SweepSpec(
            prompts=tuple(obj["prompts"]),
            p_grid=tuple(obj.get("p_grid", P_GRID)),
            lambda_grid=tuple(obj.get("lambda_grid", LAMBDA_GRID)),
            lambda_base_p=obj.get("lambda_base_p", 0.7),
            stories_per_cell=obj.get("stories_per_cell", 1),
            base_seed=obj.get("base_seed", 42),
            length_class=obj.get("length_class", "medium"),
        )

    @staticmethod
    def load(path: str) -> "SweepSpec":
        with open(path, encoding="utf-8") as fh:
            return SweepSpec.from_json(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")


@dataclass(frozen=True)
class CellReport:
    param: str
    value: float
    record_count: int
    dist1: float
    dist2: float
    mean_space_size: float
    mean_response_tokens: float

    def to_json(self) -> dict:
        return {
            "param": self.param,
            "value": self.value,
            "record_count": self.record_count,
            "dist1": self.dist1,
            "dist2": self.dist2,
            "mean_space_size": self.mean_space_size,
            "mean_response_tokens": self.mean_response_tokens,
        }


@dataclass(frozen=True)
class SweepCell:
    param: str
    value: float
    records: tuple[GenerationRecord, ...] = field(repr=False)
    report: CellReport


@dataclass(frozen=True)
class CellFailure:
    param: str
    value: float
    prompt_idx: int
    story_idx: int
    error: str

    def to_json(self) -> dict:
        return {
            "param": self.param,
            "value": self.value,
            "prompt_idx": self.prompt_idx,
            "story_idx": self.story_idx,
            "error": self.error,
        }


@dataclass(frozen=True)
class SweepResult:
    param: str
    cells: tuple[SweepCell, ...]
    failures: tuple[CellFailure, ...]

    @property
    def reports(self) -> list[CellReport]:
        return [c.report for c in self.cells]

    @property
    def records(self) -> list[GenerationRecord]:
        return [r for c in self.cells for r in c.records]


def _cell_report(param: str, value: float, records: Sequence[GenerationRecord]) -> CellReport:
    texts = [r.response for r in records]
    sizes = [s.sampled_space_size for r in records for s in r.steps]
    lengths = [len(r.response.split()) for r in records]
    return CellReport(
        param=param,
        value=value,
        record_count=len(records),
        dist1=corpus_dist_n(texts, 1) if texts else 0.0,
        dist2=corpus_dist_n(texts, 2) if texts else 0.0,
        mean_space_size=math.fsum(sizes) / len(sizes) if sizes else 0.0,
        mean_response_tokens=math.fsum(lengths) / len(lengths) if lengths else 0.0,
    )


def _atomic_write_records(records: Sequence[GenerationRecord], path: str) -> None:
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            for rec in records:
                fh.write(rec.to_line() + "\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _shard_path(out_dir: str, param: str, grid_idx: int, value: float) -> str:
    return os.path.join(out_dir, f"{param}_{grid_idx:03d}_{value:g}.jsonl")


def _run_sweep(
    model: LanguageModel,
    spec: SweepSpec,
    *,
    param: str,
    grid: Sequence[float],
    make_config,
    out_dir: str | None,
    uncond_model: LanguageModel | None,
    jobs: int | None = None,
) -> SweepResult:
    expected = len(spec.prompts) * spec.stories_per_cell
    workers = max(1, jobs if jobs is not None else os.cpu_count() or 1)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    cells: list[SweepCell] = []
    failures: list[CellFailure] = []

    def run_one(task: tuple[int, DecoderConfig, int, str, int]):
        grid_idx, base, prompt_idx, prompt, story_idx = task
        seed = cell_seed(spec.base_seed, prompt_idx, grid_idx, story_idx)
        config = replace(base, seed=seed)
        try:
            return generate(model, prompt, config, uncond_model=uncond_model)
        except StoryDecodeError as exc:
            return CellFailure(param, base.p if param == "p" else base.mmi_lambda,
                               prompt_idx, story_idx, str(exc))

    with ThreadPoolExecutor(max_workers=workers) as pool:
        for grid_idx, value in enumerate(grid):
            shard = _shard_path(out_dir, param, grid_idx, value) if out_dir else None
            if shard and os.path.exists(shard):
                cached = read_records_jsonl(shard)
                if len(cached) == expected:
                    cells.append(
                        SweepCell(param, value, tuple(cached), _cell_report(param, value, cached))
                    )
                    continue
            base = make_config(value)
            tasks = [
                (grid_idx, base, prompt_idx, prompt, story_idx)
                for prompt_idx, prompt in enumerate(spec.prompts)
                for story_idx in range(spec.stories_per_cell)
            ]
            records: list[GenerationRecord] = []
            for outcome in pool.map(run_one, tasks):
                if isinstance(outcome, CellFailure):
                    failures.append(outcome)
                else:
                    records.append(outcome)
            if shard and len(records) == expected:
                _atomic_write_records(records, shard)
            cells.append(
                SweepCell(param, value, tuple(records), _cell_report(param, value, records))
            )
    return SweepResult(param=param, cells=tuple(cells), failures=tuple(failures))


def run_p_sweep(
    model: LanguageModel,
    spec: SweepSpec,
    *,
    out_dir: str | None = None,
    jobs: int | None = None,
) -> SweepResult:
    """Vary the nucleus threshold over the spec's p grid."""

    def make_config(p: float) -> DecoderConfig:
        return DecoderConfig(strategy="nucleus", p=p, length_class=spec.length_class)

    return _run_sweep(
        model,
        spec,
        param="p",
        grid=spec.p_grid,
        make_config=make_config,
        out_dir=out_dir,
        uncond_model=None,
        jobs=jobs,
    )


def run_lambda_sweep(
    model: LanguageModel,
    spec: SweepSpec,
    *,
    uncond_model: LanguageModel | None = None,
    out_dir: str | None = None,
    jobs: int | None = None,
) -> SweepResult:
    """Vary the anti-model weight at the spec's base nucleus threshold."""

    def make_config(lam: float) -> DecoderConfig:
        return DecoderConfig(
            strategy="nucleus",
            p=spec.lambda_base_p,
            mmi_lambda=lam,
            length_class=spec.length_class,
        )

    return _run_sweep(
        model,
        spec,
        param="lambda",
        grid=spec.lambda_grid,
        make_config=make_config,
        out_dir=out_dir,
        uncond_model=uncond_model,
        jobs=jobs,
    )


@dataclass(frozen=True)
class CdfSeries:
    """Empirical CDF over per-step candidate-set sizes for one grid value."""

    p: float | None
    sorted_sizes: tuple[int, ...]
    cumulative_fraction: tuple[float, ...]
    total_steps: int

    def fraction_at_or_below(self, size: int) -> float:
        lo, hi = 0, len(self.sorted_sizes)
        while lo < hi:
            mid = (lo + hi) // 2
            if self.sorted_sizes[mid] <= size:
                lo = mid + 1
            else:
                hi = mid
        return self.cumulative_fraction[lo - 1] if lo else 0.0

    def median_size(self) -> int:
        """Smallest size with cumulative fraction >= 0.5."""
        for size, frac in zip(self.sorted_sizes, self.cumulative_fraction):
            if frac >= 0.5:
                return size
        return self.sorted_sizes[-1]


def _cdf_for(records: Sequence[GenerationRecord], p: float | None) -> CdfSeries:
    sizes = sorted(s.sampled_space_size for r in records for s in r.steps)
    if not sizes:
        raise EmptyInput("no decoding steps to pool")
    uniq: list[int] = []
    counts: list[int] = []
    for s in sizes:
        if uniq and uniq[-1] == s:
            counts[-1] += 1
        else:
            uniq.append(s)
            counts.append(1)
    total = len(sizes)
    running = 0
    cumulative = []
    for c in counts:
        running += c
        cumulative.append(running / total)
    return CdfSeries(
        p=p,
        sorted_sizes=tuple(uniq),
        cumulative_fraction=tuple(cumulative),
        total_steps=total,
    )


def token_space_cdf(
    records_by_p: Mapping[float, Sequence[GenerationRecord]],
) -> list[CdfSeries]:
    """One pooled, unaveraged CDF per grid value, ordered by ascending p.

    Steps are pooled across every record in a group; the caller decides
    which grid values to include (the full-support point is typically
    excluded from plots because its size is constant at |V|).
    """
    ordered = sorted(records_by_p, key=lambda v: (v is None, v if v is not None else 0.0))
    return [_cdf_for(records_by_p[p], p) for p in ordered]


def write_cdf_csv(series: Sequence[CdfSeries], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("p,size,cumulative_fraction\n")
        for s in series:
            label = "" if s.p is None else f"{s.p:g}"
            for size, frac in zip(s.sorted_sizes, s.cumulative_fraction):
                fh.write(f"{label},{size},{frac!r}\n")
