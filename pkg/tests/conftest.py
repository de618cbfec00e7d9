"""Shared fixtures.

The expensive pieces (the trigram trained on the bundled corpus and the
full threshold-grid sweep) are session-scoped so the trend tests and
the behavioral tests reuse one computation.
"""

from __future__ import annotations

import os
import sys
import time

import numpy as np
import pytest

from storydecode.corpus import (
    LengthClass,
    RawPair,
    bundled_pairs_path,
    normalize_tag,
    process_corpus,
    read_pairs_jsonl,
)
from storydecode.lm import train_ngram
from storydecode.sweep import P_GRID, SweepSpec, run_p_sweep

TESTS_DIR = os.path.dirname(os.path.abspath(__file__))
REPO_ROOT = os.path.dirname(TESTS_DIR)
MOCK_MODEL_PATH = os.path.join(REPO_ROOT, "docs", "golden", "mock_model.json")
GOLDEN_SESSION_PATH = os.path.join(REPO_ROOT, "docs", "golden", "session.ndjson")
FAKE_BRIDGE = os.path.join(TESTS_DIR, "fake_bridge.py")


def fake_bridge_cmd(*extra: str) -> list[str]:
    return [sys.executable, FAKE_BRIDGE, "--model", MOCK_MODEL_PATH, *extra]


def mock_vocab() -> list[str]:
    """Full vocabulary of the canned bridge model, markers included."""
    import json

    with open(MOCK_MODEL_PATH, encoding="utf-8") as fh:
        return json.load(fh)["vocab"]


TINY_ROWS = [
    (
        "[ WP ]",
        "ask the stone",
        "the stone sang low and the river heard it <p> the night kept the song",
    ),
    ("[WP]", "ask the stone", "a lantern by the door burned past morning"),
    ("[WP]", "ask the moon", "the moon walked the field and the wind followed"),
]


def write_pairs_file(path, rows) -> None:
    import json

    with open(path, "w", encoding="utf-8") as fh:
        for tag, prompt, response in rows:
            fh.write(
                json.dumps({"tag": tag, "prompt": prompt, "response": response}) + "\n"
            )


@pytest.fixture(scope="session")
def bundled_pairs() -> list[RawPair]:
    return list(read_pairs_jsonl(bundled_pairs_path()))


@pytest.fixture(scope="session")
def fixture_examples(bundled_pairs):
    return list(process_corpus(bundled_pairs, LengthClass.from_name("medium")))


@pytest.fixture(scope="session")
def fixture_model(fixture_examples):
    return train_ngram([ex.text for ex in fixture_examples], order=3, alpha=1e-6)


@pytest.fixture(scope="session")
def fixture_prompts(bundled_pairs) -> list[str]:
    return sorted({p.prompt for p in bundled_pairs if normalize_tag(p.tag) == "wp"})


@pytest.fixture(scope="session")
def trend_sweep(fixture_model, fixture_prompts):
    """200 stories per threshold over the full grid, with wall time."""
    spec = SweepSpec(
        prompts=tuple(fixture_prompts),
        p_grid=P_GRID,
        stories_per_cell=10,
        base_seed=42,
        length_class="medium",
    )
    started = time.monotonic()
    result = run_p_sweep(fixture_model, spec)
    elapsed = time.monotonic() - started
    assert not result.failures, result.failures[:3]
    by_p: dict[float, list] = {}
    for record in result.records:
        by_p.setdefault(record.config.p, []).append(record)
    return {"by_p": by_p, "elapsed": elapsed, "result": result}


def make_pairs_50() -> list[RawPair]:
    """Fifty deterministic pairs spanning paragraph counts and lengths,
    wide enough to exercise every length-class cap."""
    rng = np.random.default_rng(42)
    words = [
        "drift", "ember", "hollow", "lumen", "marsh", "novel", "orchid",
        "prism", "quartz", "ripple", "slate", "thicket", "umber", "vessel",
    ]
    pairs = []
    for i in range(50):
        n_tokens = int(rng.integers(5, 1500))
        n_breaks = int(rng.integers(0, 6))
        tokens = [words[int(j)] for j in rng.integers(0, len(words), n_tokens)]
        if n_breaks and n_tokens > n_breaks:
            cuts = sorted(
                int(c) for c in rng.choice(np.arange(1, n_tokens), n_breaks, replace=False)
            )
            parts = []
            prev = 0
            for cut in cuts:
                parts.append(" ".join(tokens[prev:cut]))
                prev = cut
            parts.append(" ".join(tokens[prev:]))
            response = "\n\n".join(part for part in parts if part)
        else:
            response = " ".join(tokens)
        pairs.append(
            RawPair(
                tag="[ WP ]",
                prompt=f"prompt number {i} about the {words[i % len(words)]}",
                response=response,
            )
        )
    return pairs


@pytest.fixture(scope="session")
def pairs_50() -> list[RawPair]:
    return make_pairs_50()
