"""Shared fixtures and independent oracles used across test modules."""

from __future__ import annotations

import numpy as np
import pytest

from sga.corpus import Side, make_debate
from sga.graph import GraphConfig, cosine_similarity


def toy_debate(turn_sizes, winner=Side.PROS, debate_id="toy"):
    """A debate with the given sentence count per turn and distinct texts."""
    turn_texts = [
        [f"turn {t} sentence {j} filler words" for j in range(m)]
        for t, m in enumerate(turn_sizes)
    ]
    votes = (7, 2) if winner is Side.PROS else (2, 7)
    return make_debate(debate_id, "toy topic", winner, votes[0], votes[1], turn_texts)


def unit_embeddings(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return (v / np.linalg.norm(v, axis=1, keepdims=True)).astype(np.float32)


# ---------------------------------------------------------------------------
# Brute-force edge oracles (independent of the vectorized implementations)
# ---------------------------------------------------------------------------

def oracle_intra_pairs(m: int, d: int, offset: int = 0) -> set[tuple[int, int]]:
    """Every ordered pair of distinct positions within distance d."""
    pairs = set()
    for i in range(m):
        for j in range(m):
            if i != j and abs(i - j) <= d:
                pairs.add((offset + j, offset + i))
    return pairs


def oracle_cross_pairs(
    turn_index: np.ndarray,
    embeddings: np.ndarray,
    source_turn: int,
    target_turn: int,
    config: GraphConfig,
) -> set[tuple[int, int]]:
    """Exhaustive pairwise cosine computation, one pair at a time."""
    src = [i for i in range(len(turn_index)) if turn_index[i] == source_turn]
    dst = [i for i in range(len(turn_index)) if turn_index[i] == target_turn]
    pairs: set[tuple[int, int]] = set()
    if config.cross_mode == "threshold":
        for i in src:
            for j in dst:
                if cosine_similarity(embeddings[i], embeddings[j]) >= config.threshold:
                    pairs.add((i, j))
        return pairs
    for j in dst:
        scored = sorted(
            ((-cosine_similarity(embeddings[i], embeddings[j]), i) for i in src),
        )
        for _, i in scored[: config.top_k]:
            pairs.add((i, j))
    return pairs


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
