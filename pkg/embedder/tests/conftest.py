"""Shared test helpers: corpus fixtures and a deterministic stand-in encoder."""

from __future__ import annotations

import hashlib
import json

import numpy as np
import pytest


class FakeEncoder:
    """Deterministic encoder double: a seeded unit vector per distinct text.

    Matches the real encoder's contract (identical inputs give identical
    vectors; output is (n, dim) float32) without any model download.
    """

    def __init__(self, dim: int = 24):
        self.dim = dim

    def encode(self, texts, batch_size=32, convert_to_numpy=True, show_progress_bar=False):
        out = np.empty((len(texts), self.dim), dtype=np.float32)
        for i, text in enumerate(texts):
            seed = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:8], "big")
            v = np.random.default_rng(seed).standard_normal(self.dim)
            out[i] = v / np.linalg.norm(v)
        return out


def write_corpus(path, turns_per_debate):
    """Write a minimal corpus file in the primary's line-delimited format."""
    with open(path, "w", encoding="utf-8") as fh:
        for i, turns in enumerate(turns_per_debate):
            record = {
                "id": f"d{i}",
                "topic": "bridge test",
                "winner": "pros",
                "votes_pros": 7,
                "votes_cons": 2,
                "total_voters": 9,
                "turns": [
                    {"side": "pros" if t % 2 == 0 else "cons", "sentences": list(sentences)}
                    for t, sentences in enumerate(turns)
                ],
            }
            fh.write(json.dumps(record) + "\n")


@pytest.fixture
def small_corpus(tmp_path):
    path = tmp_path / "corpus.jsonl"
    write_corpus(
        path,
        [
            [
                ["alpha point one.", "beta point two.", "gamma point three."],
                ["delta reply one.", "epsilon reply two.", "zeta reply three."],
            ],
            [
                ["eta claim one.", "theta claim two."],
                ["iota rebuttal one.", "kappa rebuttal two."],
            ],
        ],
    )
    return path
