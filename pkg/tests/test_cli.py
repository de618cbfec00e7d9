import json
import os

import pytest

from conftest import TINY_ROWS, fake_bridge_cmd, write_pairs_file
from storydecode.cli import main
from storydecode.decode import read_records_jsonl
from storydecode.sweep import SweepSpec


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A corpus, processed examples, and a trained model built by the CLI."""
    root = tmp_path_factory.mktemp("cli")
    pairs = str(root / "pairs.jsonl")
    write_pairs_file(pairs, TINY_ROWS)
    examples = str(root / "examples.jsonl")
    model = str(root / "model.json")
    assert main(["preprocess", "--input", pairs, "--out", examples]) == 0
    assert main(["train", "--input", examples, "--out", model]) == 0
    return {"root": root, "pairs": pairs, "examples": examples, "model": model}


def run_json(capsys, argv) -> dict:
    assert main(argv) == 0
    return json.loads(capsys.readouterr().out)


class TestParsing:
    def test_no_command_exits_one(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 1

    def test_unknown_flag_exits_one(self):
        with pytest.raises(SystemExit) as info:
            main(["train", "--bogus", "x"])
        assert info.value.code == 1

    def test_missing_required_flag_exits_one(self):
        with pytest.raises(SystemExit) as info:
            main(["train"])
        assert info.value.code == 1


class TestPipelineCommands:
    def test_preprocess_reports_counts(self, capsys, workspace, tmp_path):
        out = str(tmp_path / "examples.jsonl")
        body = run_json(
            capsys,
            ["preprocess", "--input", workspace["pairs"], "--out", out, "--stats"],
        )
        assert body["example_count"] == 3
        assert body["stats"]["example_count"] == 3
        assert os.path.exists(out)
        assert os.path.exists(out + ".manifest.json")

    def test_train_reports_vocab(self, capsys, workspace, tmp_path):
        out = str(tmp_path / "model.json")
        body = run_json(
            capsys, ["train", "--input", workspace["examples"], "--out", out]
        )
        assert body["vocab_size"] > 0
        assert body["example_count"] == 3
        assert os.path.exists(out)


class TestGenerateCommand:
    def test_plain_output_is_response_text(self, capsys, workspace):
        rc = main(
            [
                "generate",
                "--model",
                workspace["model"],
                "--prompt",
                "ask the stone",
                "--max-tokens",
                "8",
                "--count",
                "2",
                "--seed",
                "3",
            ]
        )
        assert rc == 0
        lines = capsys.readouterr().out.splitlines()
        assert len(lines) == 2

    def test_json_output_carries_config(self, capsys, workspace):
        rc = main(
            [
                "generate",
                "--model",
                workspace["model"],
                "--prompt",
                "ask the stone",
                "--max-tokens",
                "6",
                "--count",
                "2",
                "--seed",
                "3",
                "--json",
            ]
        )
        assert rc == 0
        records = [json.loads(line) for line in capsys.readouterr().out.splitlines()]
        assert [r["config"]["seed"] for r in records] == [3, 4]
        assert all(r["config"]["max_tokens"] == 6 for r in records)

    def test_flags_beat_config_file(self, capsys, workspace, tmp_path):
        config_path = str(tmp_path / "config.json")
        with open(config_path, "w", encoding="utf-8") as fh:
            json.dump({"p": 0.95, "seed": 7, "max_tokens": 5}, fh)
        rc = main(
            [
                "generate",
                "--model",
                workspace["model"],
                "--prompt",
                "ask the stone",
                "--config",
                config_path,
                "--p",
                "0.2",
                "--json",
            ]
        )
        assert rc == 0
        record = json.loads(capsys.readouterr().out.splitlines()[0])
        assert record["config"]["p"] == 0.2
        assert record["config"]["seed"] == 7
        assert record["config"]["max_tokens"] == 5
        assert record["config"]["temperature"] == 1.0

    def test_base_seed_feeds_seed(self, capsys, workspace, tmp_path):
        config_path = str(tmp_path / "config.json")
        with open(config_path, "w", encoding="utf-8") as fh:
            json.dump({"base_seed": 99, "max_tokens": 4}, fh)
        rc = main(
            [
                "generate",
                "--model",
                workspace["model"],
                "--prompt",
                "ask the stone",
                "--config",
                config_path,
                "--json",
            ]
        )
        assert rc == 0
        record = json.loads(capsys.readouterr().out.splitlines()[0])
        assert record["config"]["seed"] == 99

    def test_stories_per_cell_sets_count(self, capsys, workspace, tmp_path):
        config_path = str(tmp_path / "config.json")
        with open(config_path, "w", encoding="utf-8") as fh:
            json.dump({"stories_per_cell": 3, "max_tokens": 4}, fh)
        rc = main(
            [
                "generate",
                "--model",
                workspace["model"],
                "--prompt",
                "ask the stone",
                "--config",
                config_path,
            ]
        )
        assert rc == 0
        assert len(capsys.readouterr().out.splitlines()) == 3

    def test_unknown_config_keys_are_usage_errors(self, capsys, workspace, tmp_path):
        config_path = str(tmp_path / "config.json")
        with open(config_path, "w", encoding="utf-8") as fh:
            json.dump({"nucleus": 0.7}, fh)
        rc = main(
            [
                "generate",
                "--model",
                workspace["model"],
                "--prompt",
                "ask the stone",
                "--config",
                config_path,
            ]
        )
        assert rc == 1
        assert "error (usage)" in capsys.readouterr().err

    def test_prompt_read_from_file(self, capsys, workspace, tmp_path):
        prompt_path = str(tmp_path / "prompt.txt")
        with open(prompt_path, "w", encoding="utf-8") as fh:
            fh.write("ask the stone\n")
        rc = main(
            [
                "generate",
                "--model",
                workspace["model"],
                "--prompt",
                prompt_path,
                "--max-tokens",
                "4",
                "--json",
            ]
        )
        assert rc == 0
        record = json.loads(capsys.readouterr().out.splitlines()[0])
        assert record["prompt"] == "ask the stone"

    def test_trace_writes_records(self, capsys, workspace, tmp_path):
        trace_path = str(tmp_path / "records.jsonl")
        rc = main(
            [
                "generate",
                "--model",
                workspace["model"],
                "--prompt",
                "ask the stone",
                "--max-tokens",
                "4",
                "--count",
                "2",
                "--trace",
                trace_path,
            ]
        )
        assert rc == 0
        captured = capsys.readouterr()
        assert "wrote 2 records" in captured.err
        assert len(read_records_jsonl(trace_path)) == 2
        assert os.path.exists(trace_path + ".manifest.json")


class TestExitCodes:
    def test_usage_error_is_one(self, capsys, workspace, tmp_path):
        trace = str(tmp_path / "r.jsonl")
        assert (
            main(
                [
                    "generate",
                    "--model",
                    workspace["model"],
                    "--prompt",
                    "ask the stone",
                    "--max-tokens",
                    "4",
                    "--trace",
                    trace,
                ]
            )
            == 0
        )
        capsys.readouterr()
        rc = main(["metrics", "--records", trace, "--dist", "a,b"])
        assert rc == 1
        assert "error (usage)" in capsys.readouterr().err

    def test_data_error_is_two(self, capsys, tmp_path):
        rc = main(["metrics", "--records", str(tmp_path / "missing.jsonl")])
        assert rc == 2
        assert "error (data)" in capsys.readouterr().err

    def test_bridge_error_is_three(self, capsys):
        rc = main(
            [
                "generate",
                "--model",
                "stdio:/nonexistent/model-server",
                "--prompt",
                "ask",
            ]
        )
        assert rc == 3
        assert "error (bridge)" in capsys.readouterr().err

    def test_oov_prompt_is_two(self, capsys, workspace):
        rc = main(
            [
                "generate",
                "--model",
                workspace["model"],
                "--prompt",
                "zeppelin cascade",
            ]
        )
        assert rc == 2


class TestSweepCommands:
    @pytest.fixture()
    def spec_path(self, tmp_path):
        spec = SweepSpec(
            prompts=("ask the stone",),
            p_grid=(0.0, 0.7),
            lambda_grid=(0.0, 0.4),
            stories_per_cell=1,
            base_seed=42,
            length_class="small",
        )
        path = str(tmp_path / "spec.json")
        spec.save(path)
        return path

    def test_sweep_p(self, capsys, workspace, tmp_path, spec_path):
        out_dir = str(tmp_path / "shards")
        body = run_json(
            capsys,
            [
                "sweep-p",
                "--spec",
                spec_path,
                "--model",
                workspace["model"],
                "--out",
                out_dir,
                "--jobs",
                "1",
            ],
        )
        assert body["param"] == "p"
        assert [r["value"] for r in body["reports"]] == [0.0, 0.7]
        assert os.path.exists(os.path.join(out_dir, "p_000_0.jsonl"))

    def test_sweep_lambda(self, capsys, workspace, tmp_path, spec_path):
        out_dir = str(tmp_path / "shards")
        body = run_json(
            capsys,
            [
                "sweep-lambda",
                "--spec",
                spec_path,
                "--model",
                workspace["model"],
                "--uncond",
                workspace["model"],
                "--out",
                out_dir,
            ],
        )
        assert body["param"] == "lambda"
        assert [r["value"] for r in body["reports"]] == [0.0, 0.4]

    def test_failures_exit_two(self, capsys, workspace, tmp_path):
        spec = SweepSpec(
            prompts=("ask the zeppelin",),
            p_grid=(0.0,),
            stories_per_cell=1,
            base_seed=42,
            length_class="small",
        )
        spec_path = str(tmp_path / "spec.json")
        spec.save(spec_path)
        rc = main(
            [
                "sweep-p",
                "--spec",
                spec_path,
                "--model",
                workspace["model"],
                "--out",
                str(tmp_path / "shards"),
            ]
        )
        assert rc == 2
        assert "generations failed" in capsys.readouterr().err

    def test_cdf_from_shards(self, capsys, workspace, tmp_path, spec_path):
        out_dir = str(tmp_path / "shards")
        run_json(
            capsys,
            [
                "sweep-p",
                "--spec",
                spec_path,
                "--model",
                workspace["model"],
                "--out",
                out_dir,
            ],
        )
        csv_path = str(tmp_path / "cdf.csv")
        body = run_json(
            capsys,
            [
                "cdf",
                "--records",
                out_dir,
                "--exclude",
                "0.7",
                "--out",
                csv_path,
            ],
        )
        assert body["p_values"] == [0.0]
        assert os.path.exists(csv_path)


class TestAnalysisCommands:
    def test_correlate(self, capsys, tmp_path):
        csv_path = str(tmp_path / "table.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("p,rating\n")
            rows = zip(
                [0.0, 0.3, 0.5, 0.7, 0.9, 0.95, 1.0],
                [1.6, 2.2, 2.5, 2.8, 3.1, 2.9, 2.7],
            )
            for x, y in rows:
                fh.write(f"{x},{y}\n")
        body = run_json(
            capsys, ["correlate", "--input", csv_path, "--x", "p", "--y", "rating"]
        )
        assert body["rho"] == 0.75
        assert body["exact"] is True

    def test_agreement(self, capsys, tmp_path):
        ratings = str(tmp_path / "ratings.csv")
        with open(ratings, "w", encoding="utf-8") as fh:
            fh.write("item_id,metric,annotator_id,score\n")
            fh.write("s1,overall,r1,4\ns1,overall,r2,4\n")
            fh.write("s2,overall,r1,2\ns2,overall,r2,3\n")
        body = run_json(capsys, ["agreement", "--ratings", ratings])
        assert "overall" in body
        assert body["overall"]["raters"] == 2

    def test_metrics(self, capsys, workspace, tmp_path):
        trace = str(tmp_path / "records.jsonl")
        assert (
            main(
                [
                    "generate",
                    "--model",
                    workspace["model"],
                    "--prompt",
                    "ask the stone",
                    "--max-tokens",
                    "6",
                    "--count",
                    "3",
                    "--trace",
                    trace,
                ]
            )
            == 0
        )
        capsys.readouterr()
        body = run_json(capsys, ["metrics", "--records", trace, "--dist", "1,2"])
        assert body["record_count"] == 3


class TestBridgeCheckCommand:
    def test_clean_server_exit_zero(self, capsys):
        address = "stdio:" + " ".join(fake_bridge_cmd())
        rc = main(["bridge-check", "--address", address])
        assert rc == 0
        out = capsys.readouterr().out
        assert "PASS handshake_fields" in out
        assert "FAIL" not in out

    def test_quirky_server_exit_three(self, capsys):
        address = "stdio:" + " ".join(fake_bridge_cmd("--quirk", "bad_mass"))
        rc = main(["bridge-check", "--address", address])
        assert rc == 3
        assert "FAIL full_row_mass" in capsys.readouterr().out


class TestRemoteMode:
    def test_server_flag_uses_http_client(self, capsys, tmp_path, monkeypatch):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            from fastapi.testclient import TestClient

        import httpx

        from storydecode.service import create_app

        seen = {}

        def fake_client(*, base_url, timeout):
            seen["base_url"] = base_url
            return TestClient(create_app(), raise_server_exceptions=False)

        monkeypatch.setattr(httpx, "Client", fake_client)
        csv_path = str(tmp_path / "table.csv")
        with open(csv_path, "w", encoding="utf-8") as fh:
            fh.write("a,b\n1,1\n2,2\n3,3\n4,5\n")
        body = run_json(
            capsys,
            [
                "--server",
                "http://story.test",
                "correlate",
                "--input",
                csv_path,
                "--x",
                "a",
                "--y",
                "b",
            ],
        )
        assert seen["base_url"] == "http://story.test"
        assert body["rho"] == 1.0
