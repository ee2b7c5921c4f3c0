"""Graph construction tests against exhaustive pairwise oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sga.graph import (
    GraphConfig,
    GraphError,
    build_cross_edges,
    build_debate_graph,
    build_intra_edges,
    cosine_similarity,
    dump_graph,
    validate_graph,
)

from conftest import oracle_cross_pairs, oracle_intra_pairs, toy_debate, unit_embeddings


class TestCosineSimilarity:
    def test_orthogonal(self):
        assert cosine_similarity(np.array([1.0, 0.0]), np.array([0.0, 1.0])) == 0.0

    def test_parallel(self):
        assert cosine_similarity(np.array([2.0, 2.0]), np.array([1.0, 1.0])) == pytest.approx(1.0)

    def test_formula_value(self):
        # Oracle: 32 / (sqrt(14) * sqrt(77)) evaluated directly.
        u, v = np.array([1.0, 2.0, 3.0]), np.array([4.0, 5.0, 6.0])
        expected = float(u @ v / (np.sqrt(u @ u) * np.sqrt(v @ v)))
        got = cosine_similarity(u, v)
        assert got == pytest.approx(expected, abs=1e-12)
        assert got == pytest.approx(0.97463, abs=1e-5)

    def test_zero_vector_error(self):
        with pytest.raises(GraphError):
            cosine_similarity(np.zeros(3), np.ones(3))

    def test_dim_mismatch(self):
        with pytest.raises(GraphError):
            cosine_similarity(np.ones(3), np.ones(4))

    def test_range(self, rng):
        for _ in range(100):
            u, v = rng.standard_normal(8), rng.standard_normal(8)
            assert -1.0 - 1e-12 <= cosine_similarity(u, v) <= 1.0 + 1e-12


class TestIntraEdges:
    def test_five_sentences_distance_three(self):
        turn = toy_debate([5]).turns[0]
        edges = build_intra_edges(turn, d=3)
        assert len(edges) == 18  # brute force: 20 ordered pairs, 2 exceed distance 3
        assert set(map(tuple, edges.tolist())) == oracle_intra_pairs(5, 3)

    def test_single_sentence(self):
        turn = toy_debate([1]).turns[0]
        assert len(build_intra_edges(turn, d=4)) == 0

    def test_two_sentences_both_directions(self):
        turn = toy_debate([2]).turns[0]
        assert set(map(tuple, build_intra_edges(turn, d=3).tolist())) == {(0, 1), (1, 0)}

    def test_boundary_distance_included(self):
        turn = toy_debate([5]).turns[0]
        edges = set(map(tuple, build_intra_edges(turn, d=2).tolist()))
        assert (0, 2) in edges and (2, 0) in edges  # |i-j| == d
        assert (0, 3) not in edges

    @given(st.integers(1, 9), st.integers(1, 6))
    @settings(max_examples=40, deadline=None)
    def test_matches_oracle(self, m, d):
        turn = toy_debate([m]).turns[0]
        edges = set(map(tuple, build_intra_edges(turn, d=d).tolist()))
        assert edges == oracle_intra_pairs(m, d)


class TestCrossEdges:
    def _instance(self, rng, sizes=(6, 6), dim=8):
        turn_index = np.concatenate([np.full(m, t) for t, m in enumerate(sizes)])
        emb = unit_embeddings(rng, int(turn_index.size), dim)
        return turn_index, emb

    def test_threshold_rule_above_below(self):
        # Two vectors at a known angle straddle the threshold.
        emb = np.array([[1.0, 0.0], [0.86, float(np.sqrt(1 - 0.86**2))], [0.84, float(np.sqrt(1 - 0.84**2))]], dtype=np.float32)
        turn_index = np.array([0, 1, 1])
        config = GraphConfig(threshold=0.85)
        edges = set(map(tuple, build_cross_edges(turn_index, emb, 0, 1, config).tolist()))
        assert (0, 1) in edges  # cos ~= 0.86
        assert (0, 2) not in edges  # cos ~= 0.84

    def test_threshold_boundary_equality_is_an_edge(self):
        # cos((3,4),(3,4)) is exactly 1.0; threshold 1.0 keeps it (>= rule).
        emb = np.array([[3.0, 4.0], [3.0, 4.0]], dtype=np.float32)
        turn_index = np.array([0, 1])
        edges = build_cross_edges(turn_index, emb, 0, 1, GraphConfig(threshold=1.0))
        assert edges.tolist() == [[0, 1]]
        # orthogonal pair at threshold 0.0 is also kept
        emb2 = np.array([[1.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        edges2 = build_cross_edges(turn_index, emb2, 0, 1, GraphConfig(threshold=0.0))
        assert edges2.tolist() == [[0, 1]]

    def test_topk_small_source_turn(self):
        rng = np.random.default_rng(0)
        turn_index = np.array([0, 0, 1, 1, 1])
        emb = unit_embeddings(rng, 5, 8)
        config = GraphConfig(cross_mode="topk", top_k=3)
        edges = build_cross_edges(turn_index, emb, 0, 1, config)
        in_degree = {j: 0 for j in (2, 3, 4)}
        for _, dst in edges.tolist():
            in_degree[dst] += 1
        assert all(v == 2 for v in in_degree.values())  # cap exceeds candidates

    def test_topk_tie_breaks_by_lower_source_index(self):
        # Identical source vectors tie exactly; lower indices win.
        emb = np.array([[1.0, 0.0]] * 4 + [[1.0, 0.0]], dtype=np.float32)
        turn_index = np.array([0, 0, 0, 0, 1])
        config = GraphConfig(cross_mode="topk", top_k=2)
        edges = build_cross_edges(turn_index, emb, 0, 1, config)
        assert set(map(tuple, edges.tolist())) == {(0, 4), (1, 4)}

    def test_matches_oracle_threshold(self, rng):
        for trial in range(20):
            turn_index, emb = self._instance(rng)
            config = GraphConfig(threshold=float(rng.uniform(0.1, 0.7)))
            got = set(map(tuple, build_cross_edges(turn_index, emb, 0, 1, config).tolist()))
            assert got == oracle_cross_pairs(turn_index, emb, 0, 1, config)

    def test_matches_oracle_topk(self, rng):
        for trial in range(20):
            turn_index, emb = self._instance(rng)
            config = GraphConfig(cross_mode="topk", top_k=int(rng.integers(1, 5)))
            got = set(map(tuple, build_cross_edges(turn_index, emb, 0, 1, config).tolist()))
            assert got == oracle_cross_pairs(turn_index, emb, 0, 1, config)

    def test_zero_vector_propagates(self):
        emb = np.zeros((2, 4), dtype=np.float32)
        with pytest.raises(GraphError):
            build_cross_edges(np.array([0, 1]), emb, 0, 1, GraphConfig())

    def test_threshold_monotonicity(self, rng):
        turn_index, emb = self._instance(rng)
        loose = set(
            map(tuple, build_cross_edges(turn_index, emb, 0, 1, GraphConfig(threshold=0.2)).tolist())
        )
        tight = set(
            map(tuple, build_cross_edges(turn_index, emb, 0, 1, GraphConfig(threshold=0.5)).tolist())
        )
        assert tight <= loose


class TestBuildDebateGraph:
    def test_cross_edge_turn_windows(self, rng):
        debate = toy_debate([5] * 6)
        emb = unit_embeddings(rng, debate.num_sentences, 8)
        g = build_debate_graph(debate, emb, GraphConfig(threshold=0.0))
        counter_turns = set(g.turn_index[g.edges_counter[:, 1]].tolist())
        support_turns = set(g.turn_index[g.edges_support[:, 1]].tolist())
        assert counter_turns == {1, 2, 3, 4, 5}
        assert support_turns == {2, 3, 4, 5}
        assert validate_graph(g) == []

    def test_orthogonal_embeddings_no_cross_edges(self):
        debate = toy_debate([2, 2])
        emb = np.eye(4, dtype=np.float32)
        g = build_debate_graph(debate, emb, GraphConfig(threshold=0.85))
        assert len(g.edges_counter) == 0
        assert len(g.edges_support) == 0
        assert len(g.edges_intra) == 4  # both turns, both directions

    def test_intra_edge_count_formula(self, rng):
        sizes = [5, 7, 6, 5, 8, 5]
        debate = toy_debate(sizes)
        emb = unit_embeddings(rng, debate.num_sentences, 8)
        d = 3
        g = build_debate_graph(debate, emb, GraphConfig(intra_distance=d, threshold=0.99))
        expected = sum(len(oracle_intra_pairs(m, d)) for m in sizes)
        assert len(g.edges_intra) == expected

    def test_embedding_count_mismatch(self, rng):
        debate = toy_debate([5, 5])
        with pytest.raises(GraphError):
            build_debate_graph(debate, unit_embeddings(rng, 9, 8))

    def test_deterministic(self, rng):
        debate = toy_debate([5, 6, 5, 5, 7, 5])
        emb = unit_embeddings(rng, debate.num_sentences, 12)
        g1 = build_debate_graph(debate, emb, GraphConfig(threshold=0.2))
        g2 = build_debate_graph(debate, emb, GraphConfig(threshold=0.2))
        assert np.array_equal(g1.edges_counter, g2.edges_counter)
        assert np.array_equal(g1.edges_support, g2.edges_support)
        assert dump_graph(g1) == dump_graph(g2)

    def test_independent_of_other_debates(self, rng):
        debate = toy_debate([5, 5], debate_id="solo")
        emb = unit_embeddings(rng, debate.num_sentences, 8)
        g_alone = build_debate_graph(debate, emb, GraphConfig(threshold=0.3))
        g_again = build_debate_graph(debate, emb.copy(), GraphConfig(threshold=0.3))
        assert dump_graph(g_alone) == dump_graph(g_again)

    def test_topk_in_degree_cap(self, rng):
        debate = toy_debate([6, 6, 6, 6])
        emb = unit_embeddings(rng, debate.num_sentences, 8)
        k = 2
        g = build_debate_graph(debate, emb, GraphConfig(cross_mode="topk", top_k=k))
        for edges in (g.edges_counter, g.edges_support):
            if not len(edges):
                continue
            _, counts = np.unique(edges[:, 1], return_counts=True)
            assert counts.max() <= k

    def test_topk_combined_budget(self, rng):
        debate = toy_debate([6, 6, 6, 6])
        emb = unit_embeddings(rng, debate.num_sentences, 8)
        k = 3
        g = build_debate_graph(
            debate, emb, GraphConfig(cross_mode="topk", top_k=k, topk_combined=True)
        )
        both = np.concatenate([g.edges_counter, g.edges_support], axis=0)
        targets, counts = np.unique(both[:, 1], return_counts=True)
        assert counts.max() <= k
        # turns with two source turns available must still spend the full budget
        for t in (2, 3):
            t_targets = np.nonzero(g.turn_index == t)[0]
            for node in t_targets:
                assert counts[targets == node].sum() == k


class TestValidateGraph:
    def _valid(self, rng):
        debate = toy_debate([5, 5, 5, 5])
        emb = unit_embeddings(rng, debate.num_sentences, 8)
        return build_debate_graph(debate, emb, GraphConfig(threshold=0.3))

    def test_valid_graph_no_violations(self, rng):
        assert validate_graph(self._valid(rng)) == []

    def test_backward_counter_edge_detected(self, rng):
        import dataclasses

        g = self._valid(rng)
        bad = dataclasses.replace(g, edges_counter=np.array([[5, 0]]))
        assert any("forward" in v for v in validate_graph(bad))

    def test_duplicate_edge_detected(self, rng):
        import dataclasses

        g = self._valid(rng)
        dup = np.concatenate([g.edges_intra[:1], g.edges_intra], axis=0)
        bad = dataclasses.replace(g, edges_intra=dup)
        assert any("duplicate" in v for v in validate_graph(bad))

    def test_dump_sections(self, rng):
        text = dump_graph(self._valid(rng))
        for section in ("NODES", "INTRA", "COUNTER", "SUPPORT"):
            assert section in text
