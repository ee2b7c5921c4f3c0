"""Compile a debate plus its sentence embeddings into a typed directed graph.

Three edge types: intra edges link positionally close sentences of one turn,
counter edges link an opponent's previous-turn sentences to the current turn,
support edges link the same debater's sentences two turns back. Cross edges
always point forward in time and are gated by cosine similarity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import Debate, Side, Turn

PROS_CODE = 0
CONS_CODE = 1

COUNTER_DELTA = 1
SUPPORT_DELTA = 2


class GraphError(ValueError):
    """Raised for invalid graph configurations or construction failures."""


@dataclass(frozen=True)
class GraphConfig:
    intra_distance: int = 3
    cross_mode: str = "threshold"  # "threshold" or "topk"
    threshold: float = 0.85
    top_k: int = 3
    topk_combined: bool = False  # one k budget across counter+support per target

    def __post_init__(self):
        if self.intra_distance < 1:
            raise GraphError(f"intra_distance must be >= 1, got {self.intra_distance}")
        if not (-1.0 < self.threshold <= 1.0):
            raise GraphError(f"threshold must be in (-1, 1], got {self.threshold}")
        if self.top_k < 1:
            raise GraphError(f"top_k must be >= 1, got {self.top_k}")
        if self.cross_mode not in ("threshold", "topk"):
            raise GraphError(f"unknown cross_mode {self.cross_mode!r}")

    def describe(self) -> str:
        if self.cross_mode == "threshold":
            return f"d={self.intra_distance} threshold={self.threshold}"
        combined = " combined" if self.topk_combined else ""
        return f"d={self.intra_distance} topk={self.top_k}{combined}"


@dataclass(frozen=True)
class DebateGraph:
    debate_id: str
    node_count: int
    turn_index: np.ndarray  # (N,) int
    side: np.ndarray  # (N,) int, 0 = pros, 1 = cons
    position_in_turn: np.ndarray  # (N,) int
    embeddings: np.ndarray  # (N, B) float32, raw sentence vectors
    edges_intra: np.ndarray  # (E, 2) int, (src, dst)
    edges_counter: np.ndarray
    edges_support: np.ndarray
    config_used: GraphConfig

    @property
    def num_turns(self) -> int:
        return int(self.turn_index.max()) + 1 if self.node_count else 0

    def nodes_of_turn(self, t: int) -> np.ndarray:
        return np.nonzero(self.turn_index == t)[0]

    def nodes_of_side(self, code: int) -> np.ndarray:
        return np.nonzero(self.side == code)[0]


def cosine_similarity(u: np.ndarray, v: np.ndarray) -> float:
    """u.v / (|u||v|); undefined (an error) for zero vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise GraphError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise GraphError("cosine similarity is undefined for a zero vector")
    return float(np.dot(u, v) / (nu * nv))


def _empty_edges() -> np.ndarray:
    return np.empty((0, 2), dtype=np.int64)


def _as_edges(pairs: list[tuple[int, int]]) -> np.ndarray:
    if not pairs:
        return _empty_edges()
    return np.array(sorted(pairs), dtype=np.int64)


def build_intra_edges(turn: Turn, d: int, offset: int = 0) -> np.ndarray:
    """Directed edges between every pair of same-turn sentences within
    positional distance d, both directions, no self-loops. `offset` shifts
    local positions into global node indices."""
    m = len(turn.sentences)
    pairs = [
        (offset + j, offset + i)
        for i in range(m)
        for j in range(m)
        if i != j and abs(i - j) <= d
    ]
    return _as_edges(pairs)


def _similarity_matrix(embeddings: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    e = embeddings.astype(np.float64, copy=False)
    norms = np.linalg.norm(e, axis=1)
    if np.any(norms[src] == 0.0) or np.any(norms[dst] == 0.0):
        raise GraphError("cosine similarity is undefined for a zero vector")
    return (e[src] @ e[dst].T) / np.outer(norms[src], norms[dst])


def build_cross_edges(
    turn_index: np.ndarray,
    embeddings: np.ndarray,
    source_turn: int,
    target_turn: int,
    config: GraphConfig,
) -> np.ndarray:
    """Cross edges from `source_turn` nodes into `target_turn` nodes.

    Threshold mode keeps every pair whose cosine similarity meets the
    threshold (>= rule). Top-k mode keeps, per target node, the k most similar
    sources (all of them when the source turn is smaller than k), breaking
    exact ties by lower source index. Edges are directed source -> target.
    """
    src = np.nonzero(turn_index == source_turn)[0]
    dst = np.nonzero(turn_index == target_turn)[0]
    if len(src) == 0 or len(dst) == 0:
        return _empty_edges()
    sims = _similarity_matrix(embeddings, src, dst)
    pairs: list[tuple[int, int]] = []
    if config.cross_mode == "threshold":
        hit_src, hit_dst = np.nonzero(sims >= config.threshold)
        pairs = list(zip(src[hit_src].tolist(), dst[hit_dst].tolist()))
    else:
        k = min(config.top_k, len(src))
        for col, target in enumerate(dst):
            order = np.lexsort((src, -sims[:, col]))  # similarity desc, index asc
            pairs.extend((int(src[row]), int(target)) for row in order[:k])
    return _as_edges(pairs)


def _build_cross_combined(
    turn_index: np.ndarray,
    embeddings: np.ndarray,
    t: int,
    config: GraphConfig,
) -> tuple[np.ndarray, np.ndarray]:
    """Top-k with one shared budget over counter and support candidates."""
    dst = np.nonzero(turn_index == t)[0]
    counter_pairs: list[tuple[int, int]] = []
    support_pairs: list[tuple[int, int]] = []
    candidates: list[tuple[np.ndarray, np.ndarray, list]] = []
    for delta, sink in ((COUNTER_DELTA, counter_pairs), (SUPPORT_DELTA, support_pairs)):
        if t - delta < 0:
            continue
        src = np.nonzero(turn_index == t - delta)[0]
        if len(src) == 0:
            continue
        candidates.append((src, _similarity_matrix(embeddings, src, dst), sink))
    if not candidates:
        return _empty_edges(), _empty_edges()
    all_src = np.concatenate([c[0] for c in candidates])
    all_sims = np.concatenate([c[1] for c in candidates], axis=0)
    sinks = np.concatenate([np.full(len(c[0]), i) for i, c in enumerate(candidates)])
    k = min(config.top_k, len(all_src))
    for col, target in enumerate(dst):
        order = np.lexsort((all_src, -all_sims[:, col]))
        for row in order[:k]:
            candidates[sinks[row]][2].append((int(all_src[row]), int(target)))
    return _as_edges(counter_pairs), _as_edges(support_pairs)


def build_debate_graph(
    debate: Debate, embeddings: np.ndarray, config: GraphConfig = GraphConfig()
) -> DebateGraph:
    """Nodes in global-index order; intra edges per turn; counter edges into
    every turn t >= 1 from the opponent's turn t-1; support edges into every
    turn t >= 2 from the same debater's turn t-2. Validates all graph
    invariants before returning."""
    sentences = debate.sentences()
    n = len(sentences)
    if embeddings.shape[0] != n:
        raise GraphError(
            f"debate {debate.id}: {n} sentences but {embeddings.shape[0]} embedding rows"
        )
    turn_index = np.array([s.turn_index for s in sentences], dtype=np.int64)
    position = np.array([s.position_in_turn for s in sentences], dtype=np.int64)
    side = np.array(
        [PROS_CODE if debate.turns[s.turn_index].side is Side.PROS else CONS_CODE for s in sentences],
        dtype=np.int64,
    )

    intra_parts = []
    offset = 0
    for turn in debate.turns:
        intra_parts.append(build_intra_edges(turn, config.intra_distance, offset))
        offset += len(turn.sentences)
    edges_intra = (
        np.concatenate([p for p in intra_parts if len(p)], axis=0)
        if any(len(p) for p in intra_parts)
        else _empty_edges()
    )

    counter_parts, support_parts = [], []
    num_turns = len(debate.turns)
    if config.cross_mode == "topk" and config.topk_combined:
        for t in range(1, num_turns):
            c, s = _build_cross_combined(turn_index, embeddings, t, config)
            counter_parts.append(c)
            support_parts.append(s)
    else:
        for t in range(1, num_turns):
            counter_parts.append(
                build_cross_edges(turn_index, embeddings, t - COUNTER_DELTA, t, config)
            )
        for t in range(2, num_turns):
            support_parts.append(
                build_cross_edges(turn_index, embeddings, t - SUPPORT_DELTA, t, config)
            )

    def _cat(parts):
        parts = [p for p in parts if len(p)]
        return np.concatenate(parts, axis=0) if parts else _empty_edges()

    graph = DebateGraph(
        debate_id=debate.id,
        node_count=n,
        turn_index=turn_index,
        side=side,
        position_in_turn=position,
        embeddings=np.ascontiguousarray(embeddings, dtype=np.float32),
        edges_intra=edges_intra,
        edges_counter=_cat(counter_parts),
        edges_support=_cat(support_parts),
        config_used=config,
    )
    violations = validate_graph(graph)
    if violations:
        raise GraphError(f"debate {debate.id}: invalid graph: {violations[0]}")
    return graph


def validate_graph(graph: DebateGraph) -> list[str]:
    """Check every structural invariant; returns violations (empty = valid)."""
    violations = []
    n = graph.node_count
    turn = graph.turn_index
    side = graph.side
    pos = graph.position_in_turn
    d = graph.config_used.intra_distance

    def check_range(edges, label):
        if len(edges) and (edges.min() < 0 or edges.max() >= n):
            violations.append(f"{label} edge references a node outside [0, {n})")
            return False
        return True

    for edges, label in (
        (graph.edges_intra, "intra"),
        (graph.edges_counter, "counter"),
        (graph.edges_support, "support"),
    ):
        if not check_range(edges, label):
            continue
        if len(edges) and len(np.unique(edges, axis=0)) != len(edges):
            violations.append(f"duplicate {label} edge")

    e = graph.edges_intra
    if len(e):
        src, dst = e[:, 0], e[:, 1]
        if np.any(turn[src] != turn[dst]):
            violations.append("intra edge crosses turns")
        gap = np.abs(pos[src] - pos[dst])
        if np.any(gap < 1) or np.any(gap > d):
            violations.append(f"intra edge outside distance window [1, {d}]")

    for e, label, delta, same_side in (
        (graph.edges_counter, "counter", COUNTER_DELTA, False),
        (graph.edges_support, "support", SUPPORT_DELTA, True),
    ):
        if not len(e):
            continue
        src, dst = e[:, 0], e[:, 1]
        if np.any(turn[src] >= turn[dst]):
            violations.append(f"{label} cross edge not forward in time")
        if np.any(turn[dst] - turn[src] != delta):
            violations.append(f"{label} edge turn gap is not {delta}")
        same = side[src] == side[dst]
        if same_side and not np.all(same):
            violations.append("support edge links different debaters")
        if not same_side and np.any(same):
            violations.append("counter edge links the same debater")

    expected_side = np.where(turn % 2 == 0, PROS_CODE, CONS_CODE)
    if np.any(side != expected_side):
        violations.append("node side does not match turn parity")
    order = np.lexsort((pos, turn))
    if np.any(order != np.arange(n)):
        violations.append("nodes are not in (turn, position) order")
    return violations


def dump_graph(graph: DebateGraph) -> str:
    """Stable text dump: NODES / INTRA / COUNTER / SUPPORT sections."""
    lines = [f"# debate {graph.debate_id} ({graph.config_used.describe()})", "NODES"]
    for i in range(graph.node_count):
        side = "pros" if graph.side[i] == PROS_CODE else "cons"
        lines.append(f"{i} {graph.turn_index[i]} {graph.position_in_turn[i]} {side}")
    for label, edges in (
        ("INTRA", graph.edges_intra),
        ("COUNTER", graph.edges_counter),
        ("SUPPORT", graph.edges_support),
    ):
        lines.append(label)
        for src, dst in edges.tolist():
            lines.append(f"{src} {dst}")
    return "\n".join(lines) + "\n"


def build_graphs(
    debates: Sequence[Debate],
    store,
    config: GraphConfig = GraphConfig(),
) -> dict[str, DebateGraph]:
    """Build one graph per debate from an EmbeddingStore."""
    return {d.id: build_debate_graph(d, store.for_debate(d.id), config) for d in debates}
