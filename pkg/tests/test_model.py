"""Network tests: hand-worked attention/GRU oracles, masking, readout,
scorers, loss algebra, and forward-pass invariances."""

import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import sga.autodiff as ad
from sga.autodiff import Parameter
from sga.corpus import Side
from sga.graph import GraphConfig, build_debate_graph
from sga.model import (
    AttentionRecord,
    EdgeType,
    GatLayerParams,
    ModelConfig,
    ModelDims,
    ModelError,
    SgaRun,
    debate_loss,
    encode_nodes,
    forward_debate,
    gat_forward,
    init_sga_params,
    params_from_arrays,
    pce_loss,
    readout_topr,
    sga_step,
)

from conftest import toy_debate, unit_embeddings

LN2 = math.log(2.0)


def small_graph(rng, turn_sizes=(5, 5, 5, 5, 5, 5), dim=8, threshold=0.3, winner=Side.PROS):
    debate = toy_debate(list(turn_sizes), winner=winner)
    emb = unit_embeddings(rng, debate.num_sentences, dim)
    graph = build_debate_graph(debate, emb, GraphConfig(threshold=threshold))
    return debate, graph


def small_params(dim=8, seed=0, dtype=np.float32, r=3):
    return init_sga_params(ModelDims(embed_dim=dim, readout_r=r), seed=seed, dtype=dtype)


class TestEncodeNodes:
    def test_concatenated_width(self, rng):
        _, graph = small_graph(rng, (3, 3), dim=384)
        params = small_params(dim=384)
        assert params.proj_w.data.shape == (414, 32)
        states = encode_nodes(graph, params)
        assert states.data.shape == (6, 32)

    def test_same_sentence_same_turn_identical(self, rng):
        debate = toy_debate([3, 3])
        emb = unit_embeddings(rng, 6, 8)
        emb[1] = emb[0]  # duplicate sentence embedding within turn 0
        graph = build_debate_graph(debate, emb, GraphConfig(threshold=0.99))
        states = encode_nodes(graph, small_params())
        assert np.array_equal(states.data[0], states.data[1])

    def test_zero_projection_gives_zero_states(self, rng):
        _, graph = small_graph(rng, (3, 3))
        params = small_params()
        params.proj_w.data[:] = 0
        params.proj_b.data[:] = 0
        assert np.all(encode_nodes(graph, params).data == 0)

    def test_turn_index_out_of_table(self, rng):
        debate = toy_debate([1] * 8)
        emb = unit_embeddings(rng, 8, 8)
        graph = build_debate_graph(debate, emb, GraphConfig(threshold=0.99))
        with pytest.raises(ModelError):
            encode_nodes(graph, small_params())


class TestGatForward:
    def test_single_in_edge_passes_projection_through(self, rng):
        states = ad.constant(rng.standard_normal((3, 4)).astype(np.float32))
        layer = GatLayerParams(
            weight=Parameter("w", rng.standard_normal((4, 4)).astype(np.float32)),
            attn=Parameter("a", rng.standard_normal(8).astype(np.float32)),
        )
        edges = np.array([[0, 2]])
        out, alpha, _ = gat_forward(layer, states, states, edges, 3)
        assert alpha.tolist() == [1.0]
        assert np.allclose(out.data[2], states.data[0] @ layer.weight.data, atol=1e-6)

    def test_no_in_edges_zero_vector(self, rng):
        states = ad.constant(rng.standard_normal((3, 4)).astype(np.float32))
        layer = GatLayerParams(
            weight=Parameter("w", rng.standard_normal((4, 4)).astype(np.float32)),
            attn=Parameter("a", rng.standard_normal(8).astype(np.float32)),
        )
        out, _, _ = gat_forward(layer, states, states, np.array([[0, 2]]), 3)
        assert np.all(out.data[1] == 0)

    def test_pencil_and_paper_two_edge_instance(self):
        # W = identity, a = (1, 0, 0, 1): logit(src->dst) = h_dst[0] + h_src[1].
        # Nodes: h0 = (0, ln 3), h1 = (0, 0), h2 = (1, 0); edges 0->2 and 1->2.
        # Logits 1 + ln 3 vs 1, so alpha = (3/4, 1/4) and
        # out[2] = 0.75 * h0 + 0.25 * h1 = (0, 0.75 * ln 3).
        states = ad.constant(
            np.array([[0.0, math.log(3.0)], [0.0, 0.0], [1.0, 0.0]], dtype=np.float32)
        )
        layer = GatLayerParams(
            weight=Parameter("w", np.eye(2, dtype=np.float32)),
            attn=Parameter("a", np.array([1.0, 0.0, 0.0, 1.0], dtype=np.float32)),
        )
        out, alpha, _ = gat_forward(layer, states, states, np.array([[0, 2], [1, 2]]), 3)
        assert np.allclose(alpha, [0.75, 0.25], atol=1e-5)
        assert np.allclose(out.data[2], [0.0, 0.75 * math.log(3.0)], atol=1e-5)

    def test_attention_normalization_random_instances(self, rng):
        for _ in range(10):
            n = 8
            states = ad.constant(rng.standard_normal((n, 4)).astype(np.float32))
            layer = GatLayerParams(
                weight=Parameter("w", rng.standard_normal((4, 4)).astype(np.float32)),
                attn=Parameter("a", rng.standard_normal(8).astype(np.float32)),
            )
            edges = np.array([(s, d) for s in range(4) for d in range(4, 8)])
            _, alpha, _ = gat_forward(layer, states, states, edges, n)
            for dst in range(4, 8):
                assert abs(alpha[edges[:, 1] == dst].sum() - 1.0) < 1e-5


def _manual_gat(states, W, a, edges):
    """Loop-based oracle for one attention layer."""
    k = W.shape[1]
    out = np.zeros((states.shape[0], k))
    by_dst = {}
    for s, d in edges:
        by_dst.setdefault(d, []).append(s)
    for d, srcs in by_dst.items():
        logits = []
        for s in srcs:
            z = a[:k] @ (states[d] @ W) + a[k:] @ (states[s] @ W)
            logits.append(z if z >= 0 else 0.2 * z)
        logits = np.array(logits)
        e = np.exp(logits - logits.max())
        alpha = e / e.sum()
        for s, w in zip(srcs, alpha):
            out[d] += w * (states[s] @ W)
    return out


def _manual_gru(hx, hprev, g):
    z = 1.0 / (1.0 + np.exp(-(hx @ g.w_update.data + g.b_update.data + hprev @ g.u_update.data)))
    r = 1.0 / (1.0 + np.exp(-(hx @ g.w_reset.data + g.b_reset.data + hprev @ g.u_reset.data)))
    n = np.tanh(hx @ g.w_cand.data + g.b_cand.data + r * (hprev @ g.u_cand.data))
    return (1.0 - z) * hprev + z * n


class TestSgaStep:
    def test_two_turn_manual_unroll(self, rng):
        # Independent loop-based recomputation of the full two-turn update.
        debate, graph = small_graph(rng, (3, 3), dim=8, threshold=0.2)
        params = small_params(dim=8, seed=4, dtype=np.float64)
        result = forward_debate(graph, params, ModelConfig(dropout=0.0))

        emb = graph.embeddings.astype(np.float64)
        enc = np.concatenate(
            [emb, params.turn_table.data[graph.turn_index]], axis=1
        ) @ params.proj_w.data + params.proj_b.data
        states = enc.copy()
        for t in (0, 1):
            turn_nodes = np.nonzero(graph.turn_index == t)[0]
            blocks = []
            for edges, layer in (
                (graph.edges_intra, params.gat_intra),
                (graph.edges_counter, params.gat_counter),
                (graph.edges_support, params.gat_support),
            ):
                edges_t = [e for e in edges.tolist() if graph.turn_index[e[1]] == t]
                full = _manual_gat(states, layer.weight.data, layer.attn.data, edges_t)
                blocks.append(full[turn_nodes])
            hx = np.concatenate(blocks, axis=1)
            states[turn_nodes] = _manual_gru(hx, states[turn_nodes], params.gru)
        assert np.allclose(result.states.data, states, atol=1e-5)

    def test_masking_exact_zeros(self, rng):
        _, graph = small_graph(rng, (5, 5, 5, 5, 5, 5), threshold=0.2)
        params = small_params()
        result = forward_debate(
            graph, params, ModelConfig(dropout=0.0), capture_components=True
        )
        trace = result.component_trace
        assert np.all(trace[(0, EdgeType.COUNTER)] == 0.0)
        assert np.all(trace[(0, EdgeType.SUPPORT)] == 0.0)
        assert np.all(trace[(1, EdgeType.SUPPORT)] == 0.0)
        # with edges present these components are generically nonzero later
        assert np.any(trace[(1, EdgeType.COUNTER)] != 0.0)

    def test_update_gate_zero_is_identity_carry(self, rng):
        _, graph = small_graph(rng, (4, 4), threshold=0.3)
        params = small_params()
        params.gru.w_update.data[:] = 0
        params.gru.u_update.data[:] = 0
        params.gru.b_update.data[:] = -1e9  # sigmoid underflows to exactly 0
        result = forward_debate(graph, params, ModelConfig(dropout=0.0))
        assert np.array_equal(result.states.data, encode_nodes(graph, params).data)

    def test_out_of_order_turn_rejected(self, rng):
        _, graph = small_graph(rng, (3, 3))
        params = small_params()
        run = SgaRun(states=encode_nodes(graph, params))
        with pytest.raises(ModelError):
            sga_step(run, 1, graph, params)

    def test_single_write_earlier_states_untouched(self, rng):
        _, graph = small_graph(rng, (3, 3, 3, 3), threshold=0.2)
        params = small_params()
        run = SgaRun(states=encode_nodes(graph, params))
        snapshots = {}
        for t in range(graph.num_turns):
            sga_step(run, t, graph, params)
            snapshots[t] = run.states.data[graph.nodes_of_turn(t)].copy()
        for t in range(graph.num_turns):
            assert np.array_equal(run.states.data[graph.nodes_of_turn(t)], snapshots[t])


class TestReadout:
    def test_dominant_source_selected_first(self, rng):
        # Four hand-set attention edges; node 1 accumulates the most weight.
        _, graph = small_graph(rng, (4, 4), threshold=0.99)
        params = small_params()
        states = encode_nodes(graph, params)
        record = AttentionRecord()
        record.record(
            EdgeType.COUNTER,
            src=np.array([0, 1, 1, 2]),
            dst=np.array([4, 4, 5, 6]),
            alpha=np.array([0.3, 0.7, 1.0, 0.4]),
        )
        readout = readout_topr(states, record, graph, r=2)
        # alpha sums by source: node0 = 0.3, node1 = 1.7, node2 = 0.4
        assert readout.selected[(0, EdgeType.COUNTER)] == (1, 2)
        # no intra attention recorded: zero scores, index tie-break
        assert readout.selected[(0, EdgeType.INTRA)] == (0, 1)

    def test_readout_width(self, rng):
        _, graph = small_graph(rng, (5, 5), threshold=0.3)
        params = small_params(r=3)
        result = forward_debate(graph, params, ModelConfig(dropout=0.0))
        assert result.readout.q_pros.data.shape == (1, 288)
        assert result.readout.q_cons.data.shape == (1, 288)

    def test_selected_nodes_belong_to_debater(self, rng):
        _, graph = small_graph(rng, (5, 5, 5, 5), threshold=0.2)
        result = forward_debate(graph, small_params(), ModelConfig(dropout=0.0))
        for (side, _), nodes in result.readout.selected.items():
            for n in nodes:
                assert graph.side[n] == side

    def test_too_few_nodes_for_readout(self, rng):
        _, graph = small_graph(rng, (2, 2), threshold=0.3)
        with pytest.raises(ModelError, match="readout"):
            forward_debate(graph, small_params(r=3), ModelConfig(dropout=0.0))


class TestClassifier:
    def test_score_in_range(self, rng):
        from sga.model import classifier_forward

        params = small_params()
        for _ in range(20):
            q = ad.constant(rng.standard_normal((1, 288)).astype(np.float32) * 10)
            score = classifier_forward(q, params.mlp_pros)
            assert -1.0 <= score.data.item() <= 1.0

    def test_zero_weights_score_zero(self, rng):
        from sga.model import classifier_forward

        params = small_params()
        for p in (params.mlp_pros.w3, params.mlp_pros.b3):
            p.data[:] = 0
        q = ad.constant(rng.standard_normal((1, 288)).astype(np.float32))
        assert classifier_forward(q, params.mlp_pros).data.item() == 0.0

    def test_twin_scorers_are_independent(self, rng):
        from sga.model import classifier_forward

        params = small_params(seed=2)
        q = ad.constant(rng.standard_normal((1, 288)).astype(np.float32))
        pros = classifier_forward(q, params.mlp_pros).data.item()
        cons = classifier_forward(q, params.mlp_cons).data.item()
        assert pros != cons

    def test_width_mismatch(self, rng):
        from sga.model import classifier_forward

        params = small_params()
        with pytest.raises(ad.AutodiffError):
            classifier_forward(ad.constant(np.ones((1, 100), dtype=np.float32)), params.mlp_pros)


class TestPceLoss:
    def _loss(self, w, l):
        return float(pce_loss(ad.constant(np.array([[w]])), ad.constant(np.array([[l]]))).data)

    def test_symmetry_point(self):
        assert self._loss(0.3, 0.3) == pytest.approx(LN2, abs=1e-12)

    def test_closed_form_values(self):
        assert self._loss(1.0, -1.0) == pytest.approx(math.log(1 + math.exp(-2)), abs=1e-9)
        assert self._loss(-1.0, 1.0) == pytest.approx(math.log(1 + math.exp(2)), abs=1e-9)

    @given(
        st.floats(-1, 1, allow_nan=False),
        st.floats(-1, 1, allow_nan=False),
        st.floats(0.01, 0.5),
    )
    @settings(max_examples=100)
    def test_monotonicity(self, w, l, delta):
        assert self._loss(w + delta, l) < self._loss(w, l)
        assert self._loss(w, l + delta) > self._loss(w, l)

    @given(st.floats(-1, 1, allow_nan=False), st.floats(-1, 1, allow_nan=False))
    @settings(max_examples=100)
    def test_below_ln2_iff_winner_ahead(self, w, l):
        # Strict ordering is only representable once the gap clears float
        # resolution; below that exp(w - l) rounds to exactly 1.
        if abs(w - l) < 1e-12:
            return
        loss = self._loss(w, l)
        if w > l:
            assert loss < LN2
        else:
            assert loss > LN2

    def test_label_swap_algebra(self, rng):
        for _ in range(20):
            a, b = rng.uniform(-1, 1, 2)
            forward = self._loss(a, b)
            swapped = self._loss(b, a)
            assert swapped == pytest.approx(math.log(1 + math.exp(a - b)), abs=1e-9)
            if a != b:
                assert forward != swapped


class TestForwardDebate:
    def test_eval_deterministic(self, rng):
        _, graph = small_graph(rng, (5, 5, 5, 5), threshold=0.3)
        params = small_params()
        r1 = forward_debate(graph, params, ModelConfig(dropout=0.0))
        r2 = forward_debate(graph, params, ModelConfig(dropout=0.0))
        assert r1.scores() == r2.scores()

    def test_edge_order_invariance(self, rng):
        _, graph = small_graph(rng, (5, 5, 5, 5, 5, 5), threshold=0.2)
        params = small_params()
        base = forward_debate(graph, params, ModelConfig(dropout=0.0)).scores()
        perm = np.random.default_rng(0)
        shuffled = dataclasses.replace(
            graph,
            edges_intra=perm.permutation(graph.edges_intra),
            edges_counter=perm.permutation(graph.edges_counter),
            edges_support=perm.permutation(graph.edges_support),
        )
        other = forward_debate(shuffled, params, ModelConfig(dropout=0.0)).scores()
        assert base == pytest.approx(other, abs=1e-6)

    def test_ablation_invariant_to_that_edge_type(self, rng):
        _, graph = small_graph(rng, (5, 5, 5, 5), threshold=0.2)
        params = small_params()
        config = ModelConfig(dropout=0.0, disable_gatc=True)
        base = forward_debate(graph, params, config).scores()
        # deleting, permuting, or inventing counter edges must not matter
        variants = [
            dataclasses.replace(graph, edges_counter=np.empty((0, 2), dtype=np.int64)),
            dataclasses.replace(
                graph, edges_counter=np.random.default_rng(1).permutation(graph.edges_counter)
            ),
            dataclasses.replace(graph, edges_counter=np.array([[0, 5], [1, 6]])),
        ]
        for variant in variants:
            assert forward_debate(variant, params, config).scores() == base

    def test_all_disabled_still_runs(self, rng):
        _, graph = small_graph(rng, (5, 5), threshold=0.3)
        config = ModelConfig(
            dropout=0.0, disable_gati=True, disable_gatc=True, disable_gats=True
        )
        result = forward_debate(graph, small_params(), config)
        scores = result.scores()
        assert all(-1 <= s <= 1 for s in scores)

    def test_train_mode_requires_rng(self, rng):
        _, graph = small_graph(rng, (5, 5), threshold=0.3)
        with pytest.raises(ModelError):
            forward_debate(graph, small_params(), ModelConfig(dropout=0.2), train_mode=True)

    def test_full_model_grad_check(self, rng):
        debate, graph = small_graph(rng, (3, 4, 3, 5), dim=8, threshold=0.25)
        params = small_params(dim=8, seed=1, dtype=np.float64)
        config = ModelConfig(dropout=0.0)

        def forward():
            return debate_loss(forward_debate(graph, params, config), debate.winner)

        err = ad.grad_check(forward, params.named_parameters(), probes=80, seed=3)
        assert err < 1e-3

    def test_params_round_trip_through_arrays(self, rng):
        params = small_params(seed=9)
        arrays = {p.name: p.data for p in params.named_parameters()}
        rebuilt = params_from_arrays(params.dims, arrays)
        _, graph = small_graph(rng, (5, 5), threshold=0.3)
        a = forward_debate(graph, params, ModelConfig(dropout=0.0)).scores()
        b = forward_debate(graph, rebuilt, ModelConfig(dropout=0.0)).scores()
        assert a == b
