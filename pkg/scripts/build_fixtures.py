#!/usr/bin/env python3
"""Regenerate the committed replay fixtures.

Runs the offline scripted backend in recording mode through the same library
calls the CLI makes, so a replay of `synth scratch --seed 7` + `annotate
--seed 7` over the bundled pools hits every recorded key.

Usage: python3 scripts/build_fixtures.py [fixtures_dir]
"""

from __future__ import annotations

import sys
import tempfile
from pathlib import Path

from syncse import ChatGateway, ScriptedLLM, load_default_pools
from syncse.seeding import derive_rng
from syncse.synthesis import annotate_hard_negative, annotate_positive, assemble_dataset, generate_unlabeled

CORPUS_SEED = 7
CORPUS_N = 40
EXAMPLES_SEED = 11

EXAMPLE_POSITIVES = [
    "One of our number will carry out your instructions minutely.",
    "You have access to the facts.",
    "A young man is getting ready to release a red kite.",
]
EXAMPLE_NEGATIVES = [
    "A young man is getting ready to release a red kite.",
    "One of the hotel's rooms",
]


def build_corpus_fixture(fixtures_dir: Path):
    path = fixtures_dir / "corpus40.jsonl"
    path.unlink(missing_ok=True)
    pools = load_default_pools()
    gateway = ChatGateway(ScriptedLLM(), record_path=path)
    sentences = generate_unlabeled(CORPUS_N, pools, gateway, CORPUS_SEED)
    with tempfile.TemporaryDirectory() as tmp:
        manifest = assemble_dataset(sentences, pools, gateway, CORPUS_SEED, tmp)
    print(f"{path}: {CORPUS_N} sentences, {manifest.n} triplets, {manifest.skipped} skipped")


def build_examples_fixture(fixtures_dir: Path):
    path = fixtures_dir / "examples.jsonl"
    path.unlink(missing_ok=True)
    pools = load_default_pools()
    gateway = ChatGateway(ScriptedLLM(), record_path=path)
    for i, sentence in enumerate(EXAMPLE_POSITIVES):
        text, _ = annotate_positive(sentence, pools, gateway, derive_rng(EXAMPLES_SEED, "positive", i))
        print(f"  positive: {sentence!r} -> {text!r}")
    for i, sentence in enumerate(EXAMPLE_NEGATIVES):
        text, _ = annotate_hard_negative(
            sentence, pools, gateway, derive_rng(EXAMPLES_SEED, "hard_negative", i)
        )
        print(f"  negative: {sentence!r} -> {text!r}")
    print(f"{path}: {len(EXAMPLE_POSITIVES) + len(EXAMPLE_NEGATIVES)} annotation examples")


def main():
    fixtures_dir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(__file__).parent.parent / "fixtures"
    fixtures_dir.mkdir(parents=True, exist_ok=True)
    build_corpus_fixture(fixtures_dir)
    build_examples_fixture(fixtures_dir)


if __name__ == "__main__":
    main()
