"""Regenerate the bundled prompt/response fixture corpus.

The corpus is a deterministic walk over a 20-clause story graph. Every
clause emits six tokens (name, verb, "the", slot adjective, object,
period); the slot adjective and the next clause are chosen by quota
schedulers that reproduce one fixed 9-way probability profile, so a
trigram model trained on the corpus has the same branching shape at
every decision point:

    probs   [0.26, 0.18, 0.16, 0.14, 0.12, 0.06, 0.05, 0.02, 0.01]
    cums    [0.26, 0.44, 0.60, 0.74, 0.86, 0.92, 0.97, 0.99, 1.00]

Every cumulative sum sits at least 0.02 away from each truncation
threshold in {0.3, 0.5, 0.7, 0.9, 0.95}, so the kept-set sizes over the
grid {0, 0.3, 0.5, 0.7, 0.9, 0.95} are exactly [1, 2, 3, 4, 6, 7] at
every branch point, stable under the small quota drift. Four of the
nine branch options are terminal clauses placed at profile indices 4,
6, 7 and 8: termination only becomes reachable at p >= 0.9, and the
kept termination mass rises with p (0.130 -> 0.175 -> 0.200), so
stories get shorter and more distinct as the threshold grows.

The output is committed at src/storydecode/data/fixture_corpus.jsonl;
run this script only to regenerate it after a design change. All text
in the corpus is original and dedicated to the public domain (CC0).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), os.pardir, "src"))

from storydecode.corpus import LengthClass, RawPair, process_corpus  # noqa: E402
from storydecode.decode import nucleus_filter  # noqa: E402
from storydecode.lm import train_ngram  # noqa: E402

PROFILE = (0.26, 0.18, 0.16, 0.14, 0.12, 0.06, 0.05, 0.02, 0.01)
GRID = (0.3, 0.5, 0.7, 0.9, 0.95)
KEPT_SIZES = (2, 3, 4, 6, 7)
MARGIN = 0.015

NAMES = (
    "arden", "briar", "calla", "doran", "elowen", "farrow", "galen", "hale",
    "isolde", "junip", "kestrel", "larkin", "mosswood", "nerine", "orin",
    "perrin", "quillon", "rowan", "sorrel", "tamsin",
)
VERBS = (
    "crossed", "climbed", "watched", "carried", "followed", "traced",
    "guarded", "sketched", "mended", "painted", "measured", "circled",
    "repaired", "explored", "admired", "avoided", "studied", "cleaned",
    "decorated", "remembered",
)
OBJECTS = (
    "bridge", "garden", "harbor", "meadow", "tower", "orchard", "valley",
    "market", "lantern", "archway", "fountain", "stairwell", "gallery",
    "courtyard", "mill", "chapel", "cellar", "rooftop", "causeway", "pier",
)
COLORS = (
    "amber", "ashen", "azure", "bronze", "cobalt", "copper", "crimson",
    "dusky", "emerald", "frosted", "gilded", "hazel", "indigo", "ivory",
    "jade", "obsidian", "pearl", "russet", "scarlet", "umber",
)
TEXTURES = (
    "braided", "brindled", "burnished", "dappled", "feathered", "latticed",
    "marbled", "speckled", "veined",
)
PLACES = (
    "lighthouse", "abbey", "foundry", "observatory", "vineyard", "quarry",
    "amphitheater", "bathhouse", "monastery", "aqueduct", "greenhouse",
    "watchtower", "bakery", "smithy", "library", "planetarium", "arboretum",
    "catacombs", "boathouse", "belfry",
)

TERMINALS = {
    "E1": "then the tale found its ending .",
    "E2": "thus one journey reached completion .",
    "E3": "so every wanderer finally rested .",
    "E4": "and quiet settled over everything .",
}

# profile index -> clause offset (mod 20) or terminal key
BRANCH_TARGETS = ("+5", "+1", "+3", "+7", "E1", "+9", "E2", "E3", "E4")

N_CLAUSES = 20
STORIES_PER_PROMPT = 120
EXTRA_EVERY = 20
MAX_CLAUSES = 28
EXTRA_TAGS = ("[ CW ]", "[ EU ]", "[ OT ]")


class QuotaScheduler:
    """Deterministically emits options so realized fractions track the
    target weights within one count at every prefix."""

    def __init__(self, options, weights):
        self.options = list(options)
        self.weights = list(weights)
        self.emitted = [0] * len(self.options)
        self.total = 0

    def pick(self, allowed=None):
        indices = range(len(self.options)) if allowed is None else allowed
        best = max(
            indices,
            key=lambda j: (self.weights[j] * (self.total + 1) - self.emitted[j], -j),
        )
        self.emitted[best] += 1
        self.total += 1
        return self.options[best]


def build_pairs() -> list[RawPair]:
    slot_banks = [
        [f"{COLORS[i]}-{TEXTURES[j]}" for j in range(9)] for i in range(N_CLAUSES)
    ]
    slot_scheds = [QuotaScheduler(bank, PROFILE) for bank in slot_banks]
    branch_scheds = [QuotaScheduler(BRANCH_TARGETS, PROFILE) for _ in range(N_CLAUSES)]
    terminal_idxs = [j for j, t in enumerate(BRANCH_TARGETS) if t in TERMINALS]

    def tell_story(start: int) -> str:
        tokens: list[str] = []
        current = start
        for step in range(MAX_CLAUSES):
            tokens += [
                NAMES[current],
                VERBS[current],
                "the",
                slot_scheds[current].pick(),
                OBJECTS[current],
                ".",
            ]
            sched = branch_scheds[current]
            if step == MAX_CLAUSES - 1:
                target = sched.pick(allowed=terminal_idxs)
            else:
                target = sched.pick()
            if target in TERMINALS:
                tokens += TERMINALS[target].split()
                break
            current = (current + int(target)) % N_CLAUSES
        return " ".join(tokens)

    pairs: list[RawPair] = []
    extra_count = 0
    for round_idx in range(STORIES_PER_PROMPT):
        for k in range(N_CLAUSES):
            pairs.append(
                RawPair(
                    tag="[ WP ]",
                    prompt=f"write about the {PLACES[k]}",
                    response=tell_story(k),
                )
            )
        tag = EXTRA_TAGS[extra_count % len(EXTRA_TAGS)]
        pairs.append(
            RawPair(
                tag=tag,
                prompt=f"offtopic request number {round_idx}",
                response=f"offtopic reply number {round_idx} about nothing in particular",
            )
        )
        extra_count += 1
    return pairs


def verify(pairs: list[RawPair]) -> dict:
    examples = list(process_corpus(pairs, LengthClass.from_name("medium")))
    wp_count = len(examples)
    model = train_ngram([ex.text for ex in examples], order=3, alpha=1e-6)
    contexts = []
    for i in range(N_CLAUSES):
        contexts.append(("slot", (VERBS[i], "the")))
        contexts.append(("branch", (OBJECTS[i], ".")))
    worst_margin = math.inf
    for kind, (first, second) in contexts:
        ids = [model.vocab.id_of(first), model.vocab.id_of(second)]
        dist = model.next_distribution(ids)
        probs = sorted((float(p) for p in np.exp(dist.logprobs)), reverse=True)
        cums = []
        running = 0.0
        for p in probs[:9]:
            running += p
            cums.append(running)
        for threshold in GRID:
            for c in cums:
                worst_margin = min(worst_margin, abs(c - threshold))
        for threshold, expect in zip(GRID, KEPT_SIZES):
            kept, _ = nucleus_filter(dist, threshold)
            if len(kept) != expect:
                raise AssertionError(
                    f"{kind} context {(first, second)}: kept {len(kept)} at p={threshold}, want {expect}"
                )
        kept0, _ = nucleus_filter(dist, 0.0)
        if len(kept0) != 1:
            raise AssertionError(f"{kind} context {(first, second)}: argmax not unique")
    if worst_margin < MARGIN:
        raise AssertionError(f"threshold margin {worst_margin:.4f} below {MARGIN}")
    token_counts = [ex.response_token_count for ex in examples]
    if max(token_counts) > 256:
        raise AssertionError("a story exceeded the medium cap")
    return {
        "wp_examples": wp_count,
        "total_pairs": len(pairs),
        "vocab_size": model.vocab_size,
        "worst_margin": worst_margin,
        "mean_response_tokens": sum(token_counts) / len(token_counts),
    }


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out",
        default=os.path.join(
            os.path.dirname(__file__), os.pardir, "src", "storydecode", "data",
            "fixture_corpus.jsonl",
        ),
    )
    args = parser.parse_args()
    pairs = build_pairs()
    stats = verify(pairs)
    os.makedirs(os.path.dirname(args.out), exist_ok=True)
    with open(args.out, "w", encoding="utf-8") as fh:
        for pair in pairs:
            fh.write(
                json.dumps(
                    {"tag": pair.tag, "prompt": pair.prompt, "response": pair.response},
                    sort_keys=True,
                    separators=(",", ":"),
                )
                + "\n"
            )
    print(json.dumps(stats, indent=2, sort_keys=True))
    print(f"wrote {stats['total_pairs']} pairs to {os.path.abspath(args.out)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
