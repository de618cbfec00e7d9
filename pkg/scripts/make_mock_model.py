"""Regenerate the mock model table used by bridge servers in tests.

The table fully determines a tiny deterministic "language model": a
32-token vocabulary, eight precomputed log-probability rows, and one
8-dimensional embedding vector per token. Servers pick the row for a
context with one shared rule:

    row_index = 0 if the context is empty else last_token_id % len(rows)

and embed text as the mean of the per-token vectors of its encoded ids.
Because both the Python test server and the external mock server read
this same file and apply the same rules, their wire behavior is
interchangeable and can be pinned by one golden transcript.

The output is committed at docs/golden/mock_model.json; run this script
only to regenerate it after a design change.
"""

from __future__ import annotations

import argparse
import json
import os

import numpy as np
from scipy.special import logsumexp

SPECIALS = ["<|startoftext|>", "<|endoftext|>", "[WP]", "[RESPONSE]"]
WORDS = [
    "the", "quick", "brown", "fox", "jumps", "over", "lazy", "dog",
    "a", "river", "stone", "moon", "lantern", "story", "night", "wind",
    "garden", "door", "light", "path", "voice", "morning", "rain", "bird",
    "tree", "song", "shadow", "field",
]
N_ROWS = 8
EMBED_DIM = 8


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out",
        default=os.path.join(
            os.path.dirname(__file__), os.pardir, "docs", "golden", "mock_model.json"
        ),
    )
    args = parser.parse_args()

    vocab = SPECIALS + WORDS
    rng = np.random.default_rng(7)
    raw = rng.normal(0.0, 2.0, size=(N_ROWS, len(vocab)))
    rows = raw - logsumexp(raw, axis=1, keepdims=True)
    for row in rows:
        assert abs(logsumexp(row)) < 1e-12
        assert len(set(row.tolist())) == len(vocab), "rows must be tie-free"
    vectors = 0.5 * rng.standard_normal(size=(len(vocab), EMBED_DIM))

    table = {
        "model_name": "clockwork-lm",
        "protocol_version": 1,
        "vocab": vocab,
        "special_tokens": {"start": 0, "end": 1, "wp": 2, "response": 3},
        "rows": [row.tolist() for row in rows],
        "embedding_dim": EMBED_DIM,
        "token_vectors": [vec.tolist() for vec in vectors],
    }
    os.makedirs(os.path.dirname(args.out), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(table, fh, indent=1)
        fh.write("\n")
    print(f"wrote {len(vocab)}-token table to {os.path.abspath(args.out)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
