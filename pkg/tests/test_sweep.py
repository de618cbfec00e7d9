import json
import math
import os

import numpy as np
import pytest

from storydecode.decode import DecoderConfig, GenerationRecord, StepTrace, generate
from storydecode.errors import EmptyInput
from storydecode.lm import TableModel, Vocab
from storydecode.metrics import corpus_dist_n
from storydecode.sweep import (
    LAMBDA_GRID,
    P_GRID,
    CdfSeries,
    SweepSpec,
    cell_seed,
    run_lambda_sweep,
    run_p_sweep,
    token_space_cdf,
    write_cdf_csv,
)


def small_spec(prompts, **overrides) -> SweepSpec:
    defaults = dict(
        prompts=tuple(prompts[:2]),
        p_grid=(0.0, 0.7, 1.0),
        lambda_grid=(0.0, 0.35),
        stories_per_cell=2,
        base_seed=42,
        length_class="medium",
    )
    defaults.update(overrides)
    return SweepSpec(**defaults)


class TestCellSeed:
    def test_deterministic(self):
        assert cell_seed(42, 3, 1, 7) == cell_seed(42, 3, 1, 7)

    def test_distinct_across_cube(self):
        seeds = {
            cell_seed(42, p, g, s)
            for p in range(5)
            for g in range(7)
            for s in range(10)
        }
        assert len(seeds) == 5 * 7 * 10

    def test_base_seed_shifts_everything(self):
        assert cell_seed(1, 0, 0, 0) != cell_seed(2, 0, 0, 0)


class TestSweepSpec:
    def test_defaults(self, fixture_prompts):
        spec = SweepSpec(prompts=tuple(fixture_prompts))
        assert spec.p_grid == P_GRID
        assert spec.lambda_grid == LAMBDA_GRID
        assert spec.lambda_base_p == 0.7
        assert spec.stories_per_cell == 1

    def test_validation(self):
        with pytest.raises(EmptyInput):
            SweepSpec(prompts=())
        with pytest.raises(EmptyInput):
            SweepSpec(prompts=("a",), stories_per_cell=0)

    def test_save_load_round_trip(self, tmp_path, fixture_prompts):
        spec = small_spec(fixture_prompts, base_seed=7)
        path = tmp_path / "spec.json"
        spec.save(str(path))
        assert SweepSpec.load(str(path)) == spec

    def test_from_json_defaults_missing_fields(self):
        spec = SweepSpec.from_json({"prompts": ["a"]})
        assert spec.p_grid == P_GRID
        assert spec.base_seed == 42


class TestPSweep:
    def test_record_count_is_the_full_cube(self, fixture_model, fixture_prompts):
        spec = small_spec(fixture_prompts)
        result = run_p_sweep(fixture_model, spec)
        assert not result.failures
        assert len(result.records) == 2 * 3 * 2
        for cell in result.cells:
            assert cell.report.record_count == 2 * 2

    def test_two_record_example(self, fixture_model, fixture_prompts):
        spec = small_spec(
            [fixture_prompts[0]], p_grid=(0.0, 1.0), stories_per_cell=1
        )
        result = run_p_sweep(fixture_model, spec)
        assert len(result.records) == 2
        greedy_cell = result.cells[0]
        assert greedy_cell.value == 0.0
        assert all(
            s.sampled_space_size == 1
            for r in greedy_cell.records
            for s in r.steps
        )

    def test_rerun_is_byte_identical(self, fixture_model, fixture_prompts):
        spec = small_spec(fixture_prompts)
        first = [r.to_line() for r in run_p_sweep(fixture_model, spec).records]
        second = [r.to_line() for r in run_p_sweep(fixture_model, spec).records]
        assert first == second

    def test_worker_count_does_not_change_output(self, fixture_model, fixture_prompts):
        spec = small_spec(fixture_prompts)
        serial = [r.to_line() for r in run_p_sweep(fixture_model, spec, jobs=1).records]
        parallel = [r.to_line() for r in run_p_sweep(fixture_model, spec, jobs=4).records]
        assert serial == parallel

    def test_cell_reports_match_records(self, fixture_model, fixture_prompts):
        spec = small_spec(fixture_prompts)
        result = run_p_sweep(fixture_model, spec)
        for cell in result.cells:
            texts = [r.response for r in cell.records]
            sizes = [s.sampled_space_size for r in cell.records for s in r.steps]
            assert cell.report.dist1 == corpus_dist_n(texts, 1)
            assert cell.report.dist2 == corpus_dist_n(texts, 2)
            assert cell.report.mean_space_size == pytest.approx(
                math.fsum(sizes) / len(sizes)
            )
            assert cell.report.mean_response_tokens == pytest.approx(
                np.mean([len(t.split()) for t in texts])
            )

    def test_failed_cells_enumerated_separately(self, fixture_model, fixture_prompts):
        spec = small_spec([fixture_prompts[0], "prompt with unknownzzz token"])
        result = run_p_sweep(fixture_model, spec)
        # The second prompt is out of vocabulary: every one of its
        # generations fails, the rest of the cube still completes.
        assert len(result.failures) == 3 * 2
        assert len(result.records) == 3 * 2
        assert len(result.records) + len(result.failures) == 2 * 3 * 2
        for failure in result.failures:
            assert failure.prompt_idx == 1
            assert "vocabulary" in failure.error
        for cell in result.cells:
            assert cell.report.record_count == 2


class TestShards:
    def test_one_shard_per_grid_value(self, tmp_path, fixture_model, fixture_prompts):
        spec = small_spec(fixture_prompts)
        out = tmp_path / "shards"
        run_p_sweep(fixture_model, spec, out_dir=str(out))
        names = sorted(os.listdir(out))
        assert names == ["p_000_0.jsonl", "p_001_0.7.jsonl", "p_002_1.jsonl"]
        with open(out / "p_001_0.7.jsonl", encoding="utf-8") as fh:
            assert len(fh.readlines()) == 4

    def test_resume_reuses_complete_shards(self, tmp_path, fixture_model, fixture_prompts):
        spec = small_spec(fixture_prompts)
        out = tmp_path / "shards"
        baseline = [r.to_line() for r in run_p_sweep(fixture_model, spec, out_dir=str(out)).records]
        stamp = os.path.getmtime(out / "p_000_0.jsonl")
        resumed = run_p_sweep(fixture_model, spec, out_dir=str(out))
        assert [r.to_line() for r in resumed.records] == baseline
        assert os.path.getmtime(out / "p_000_0.jsonl") == stamp

    def test_incomplete_shard_recomputed(self, tmp_path, fixture_model, fixture_prompts):
        spec = small_spec(fixture_prompts)
        out = tmp_path / "shards"
        baseline = [r.to_line() for r in run_p_sweep(fixture_model, spec, out_dir=str(out)).records]
        shard = out / "p_001_0.7.jsonl"
        lines = shard.read_text().splitlines()
        shard.write_text("\n".join(lines[:2]) + "\n")
        resumed = run_p_sweep(fixture_model, spec, out_dir=str(out))
        assert [r.to_line() for r in resumed.records] == baseline
        assert len(shard.read_text().splitlines()) == 4

    def test_incomplete_cells_leave_no_shard(self, tmp_path, fixture_model, fixture_prompts):
        spec = small_spec([fixture_prompts[0], "prompt with unknownzzz token"])
        out = tmp_path / "shards"
        run_p_sweep(fixture_model, spec, out_dir=str(out))
        assert sorted(os.listdir(out)) == []


class TestLambdaSweep:
    def test_zero_weight_cell_equals_plain_run(self, fixture_model, fixture_prompts):
        spec = small_spec(fixture_prompts)
        result = run_lambda_sweep(fixture_model, spec)
        zero_cell = result.cells[0]
        assert zero_cell.value == 0.0
        for record in zero_cell.records:
            twin = generate(
                fixture_model,
                record.prompt,
                DecoderConfig(
                    strategy="nucleus",
                    p=spec.lambda_base_p,
                    length_class=spec.length_class,
                    seed=record.config.seed,
                ),
            )
            assert twin.to_line() == record.to_line()

    def test_record_count(self, fixture_model, fixture_prompts):
        spec = small_spec(fixture_prompts)
        result = run_lambda_sweep(fixture_model, spec)
        assert not result.failures
        assert len(result.records) == 2 * 2 * 2
        assert result.param == "lambda"
        assert [c.value for c in result.cells] == [0.0, 0.35]

    def test_weight_acts_only_inside_window(self):
        # Context-free tables: every step sees the same rows, so traces
        # after the window must agree token-for-token.
        vocab_words = ["ask", "a", "b"]
        cond = TableModel(
            Vocab(vocab_words), {}, default_row={"a": 0.7, "b": 0.3}
        )
        uncond = TableModel(
            Vocab(vocab_words), {}, default_row={"a": 0.99, "b": 0.01}
        )
        window = 3
        base = DecoderConfig(
            strategy="random", mmi_window=window, max_tokens=10, seed=7
        )
        plain = generate(cond, "ask", base)
        adjusted = generate(
            cond,
            "ask",
            DecoderConfig(
                strategy="random", mmi_lambda=0.9, mmi_window=window,
                max_tokens=10, seed=7,
            ),
            uncond_model=uncond,
        )
        assert len(plain.steps) == len(adjusted.steps) == 10
        inside = [
            (p.chosen_token, a.chosen_token)
            for p, a in zip(plain.steps[:window], adjusted.steps[:window])
        ]
        assert any(p != a for p, a in inside)
        for p, a in zip(plain.steps[window:], adjusted.steps[window:]):
            assert p.chosen_token == a.chosen_token
            assert p.chosen_logprob == a.chosen_logprob


def record_with_sizes(sizes, p: float) -> GenerationRecord:
    steps = tuple(
        StepTrace(step_index=i, chosen_token=4, sampled_space_size=s, chosen_logprob=-1.0)
        for i, s in enumerate(sizes)
    )
    return GenerationRecord(
        prompt="p", response="x " * len(sizes), config=DecoderConfig(p=p),
        steps=steps, terminated_by="max_tokens",
    )


class TestCdf:
    def test_hand_counted_series(self):
        records = [record_with_sizes([1, 2], 0.5), record_with_sizes([1, 5], 0.5)]
        series = token_space_cdf({0.5: records})
        assert len(series) == 1
        cdf = series[0]
        assert cdf.p == 0.5
        assert cdf.sorted_sizes == (1, 2, 5)
        assert cdf.cumulative_fraction == (0.5, 0.75, 1.0)
        assert cdf.total_steps == 4

    def test_final_fraction_is_one_and_monotone(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            sizes = [int(rng.integers(1, 30)) for _ in range(int(rng.integers(1, 40)))]
            cdf = token_space_cdf({0.3: [record_with_sizes(sizes, 0.3)]})[0]
            assert cdf.cumulative_fraction[-1] == 1.0
            assert all(
                a < b for a, b in zip(cdf.sorted_sizes, cdf.sorted_sizes[1:])
            )
            assert all(
                a <= b
                for a, b in zip(cdf.cumulative_fraction, cdf.cumulative_fraction[1:])
            )

    def test_greedy_records_collapse_to_one_point(self):
        cdf = token_space_cdf({0.0: [record_with_sizes([1, 1, 1], 0.0)]})[0]
        assert cdf.sorted_sizes == (1,)
        assert cdf.cumulative_fraction == (1.0,)

    def test_fraction_at_or_below(self):
        cdf = CdfSeries(
            p=0.5, sorted_sizes=(1, 2, 5), cumulative_fraction=(0.5, 0.75, 1.0),
            total_steps=4,
        )
        assert cdf.fraction_at_or_below(0) == 0.0
        assert cdf.fraction_at_or_below(1) == 0.5
        assert cdf.fraction_at_or_below(3) == 0.75
        assert cdf.fraction_at_or_below(99) == 1.0

    def test_median_size(self):
        cdf = token_space_cdf({0.5: [record_with_sizes([1, 1, 4, 9], 0.5)]})[0]
        assert cdf.median_size() == 1
        skewed = token_space_cdf({0.5: [record_with_sizes([3, 8, 8, 8], 0.5)]})[0]
        assert skewed.median_size() == 8

    def test_series_ordered_by_p(self):
        groups = {
            0.9: [record_with_sizes([4], 0.9)],
            0.3: [record_with_sizes([2], 0.3)],
            0.7: [record_with_sizes([3], 0.7)],
        }
        series = token_space_cdf(groups)
        assert [s.p for s in series] == [0.3, 0.7, 0.9]

    def test_caller_controls_which_values_pool(self):
        groups = {
            p: [record_with_sizes([2, 3], p)] for p in (0.3, 0.7, 1.0)
        }
        included = {p: g for p, g in groups.items() if p != 1.0}
        series = token_space_cdf(included)
        assert [s.p for s in series] == [0.3, 0.7]

    def test_empty_group_rejected(self):
        with pytest.raises(EmptyInput):
            token_space_cdf({0.5: []})

    def test_csv_round_trips_fractions(self, tmp_path):
        records = [record_with_sizes([1, 2, 2, 7], 0.5)]
        series = token_space_cdf({0.5: records})
        path = tmp_path / "cdf.csv"
        write_cdf_csv(series, str(path))
        lines = path.read_text().splitlines()
        assert lines[0] == "p,size,cumulative_fraction"
        assert len(lines) == 4
        for line, size, frac in zip(
            lines[1:], series[0].sorted_sizes, series[0].cumulative_fraction
        ):
            label, size_text, frac_text = line.split(",")
            assert label == "0.5"
            assert int(size_text) == size
            assert float(frac_text) == frac
