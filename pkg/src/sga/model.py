"""The sequence-graph attention network.

Nodes start from projected sentence+turn encodings. Turn by turn, three
edge-typed attention layers gather evidence (same-turn coherence, rebuttal of
the opponent's previous turn, reinforcement of the same debater's turn before
that) and a GRU fuses that evidence into the node state. A top-r readout per
debater feeds twin scorers trained under a pairwise ranking loss.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .graph import CONS_CODE, PROS_CODE, DebateGraph
from .corpus import Side


class ModelError(ValueError):
    """Raised for invalid model configuration or forward-pass misuse."""


class EdgeType(str, enum.Enum):
    INTRA = "intra"
    COUNTER = "counter"
    SUPPORT = "support"


EDGE_TYPE_ORDER = (EdgeType.INTRA, EdgeType.COUNTER, EdgeType.SUPPORT)


@dataclass(frozen=True)
class ModelDims:
    embed_dim: int = 384
    turn_dim: int = 30
    max_turns: int = 6
    state_dim: int = 32
    readout_r: int = 3

    @property
    def input_dim(self) -> int:
        return self.embed_dim + self.turn_dim

    @property
    def interaction_dim(self) -> int:
        return 3 * self.state_dim

    @property
    def readout_dim(self) -> int:
        return 3 * self.readout_r * self.state_dim

    @property
    def classifier_widths(self) -> tuple[int, int, int, int]:
        w = self.readout_dim
        return (w, w // 2, w // 4, 1)


@dataclass(frozen=True)
class ModelConfig:
    dropout: float = 0.2
    disable_gati: bool = False
    disable_gatc: bool = False
    disable_gats: bool = False
    readout_by_target: bool = False  # accumulate attention on targets instead of sources

    def disabled(self, edge_type: EdgeType) -> bool:
        return {
            EdgeType.INTRA: self.disable_gati,
            EdgeType.COUNTER: self.disable_gatc,
            EdgeType.SUPPORT: self.disable_gats,
        }[edge_type]


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------

@dataclass
class GatLayerParams:
    weight: Parameter  # (state, state)
    attn: Parameter  # (2 * state,); first half scores targets, second sources


@dataclass
class GruParams:
    w_update: Parameter
    w_reset: Parameter
    w_cand: Parameter
    u_update: Parameter
    u_reset: Parameter
    u_cand: Parameter
    b_update: Parameter
    b_reset: Parameter
    b_cand: Parameter


@dataclass
class MlpParams:
    w1: Parameter
    b1: Parameter
    ln1_gain: Parameter
    ln1_bias: Parameter
    w2: Parameter
    b2: Parameter
    ln2_gain: Parameter
    ln2_bias: Parameter
    w3: Parameter
    b3: Parameter


@dataclass
class SgaParams:
    dims: ModelDims
    turn_table: Parameter  # (max_turns, turn_dim)
    proj_w: Parameter  # (embed_dim + turn_dim, state)
    proj_b: Parameter
    gat_intra: GatLayerParams
    gat_counter: GatLayerParams
    gat_support: GatLayerParams
    gru: GruParams
    mlp_pros: MlpParams
    mlp_cons: MlpParams

    def gat(self, edge_type: EdgeType) -> GatLayerParams:
        return {
            EdgeType.INTRA: self.gat_intra,
            EdgeType.COUNTER: self.gat_counter,
            EdgeType.SUPPORT: self.gat_support,
        }[edge_type]

    def named_parameters(self) -> list[Parameter]:
        out = [self.turn_table, self.proj_w, self.proj_b]
        for layer in (self.gat_intra, self.gat_counter, self.gat_support):
            out += [layer.weight, layer.attn]
        g = self.gru
        out += [
            g.w_update, g.w_reset, g.w_cand,
            g.u_update, g.u_reset, g.u_cand,
            g.b_update, g.b_reset, g.b_cand,
        ]
        for mlp in (self.mlp_pros, self.mlp_cons):
            out += [
                mlp.w1, mlp.b1, mlp.ln1_gain, mlp.ln1_bias,
                mlp.w2, mlp.b2, mlp.ln2_gain, mlp.ln2_bias,
                mlp.w3, mlp.b3,
            ]
        return out

    def astype(self, dtype) -> "SgaParams":
        arrays = {p.name: p.data.astype(dtype) for p in self.named_parameters()}
        return params_from_arrays(self.dims, arrays)

    def copy(self) -> "SgaParams":
        return self.astype(self.named_parameters()[0].data.dtype)


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], dtype) -> np.ndarray:
    fan_in = shape[0] if len(shape) > 1 else shape[0]
    fan_out = shape[1] if len(shape) > 1 else 1
    limit = float(np.sqrt(6.0 / (fan_in + fan_out)))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def init_sga_params(dims: ModelDims, seed: int, dtype=np.float32) -> SgaParams:
    """Seeded fan-based uniform init for matrices, zeros for biases,
    ones for layer-norm gains. Draw order is fixed, so a seed fully
    determines the parameters."""
    rng = np.random.default_rng(seed)
    s = dims.state_dim

    def mat(name, shape):
        return Parameter(name, _glorot(rng, shape, dtype))

    def zeros(name, shape):
        return Parameter(name, np.zeros(shape, dtype=dtype))

    def ones(name, shape):
        return Parameter(name, np.ones(shape, dtype=dtype))

    def gat(tag):
        return GatLayerParams(
            weight=mat(f"{tag}.weight", (s, s)),
            attn=mat(f"{tag}.attn", (2 * s,)),
        )

    def mlp(tag):
        w_in, w_mid, w_half, _ = dims.classifier_widths
        return MlpParams(
            w1=mat(f"{tag}.w1", (w_in, w_mid)),
            b1=zeros(f"{tag}.b1", (w_mid,)),
            ln1_gain=ones(f"{tag}.ln1_gain", (w_mid,)),
            ln1_bias=zeros(f"{tag}.ln1_bias", (w_mid,)),
            w2=mat(f"{tag}.w2", (w_mid, w_half)),
            b2=zeros(f"{tag}.b2", (w_half,)),
            ln2_gain=ones(f"{tag}.ln2_gain", (w_half,)),
            ln2_bias=zeros(f"{tag}.ln2_bias", (w_half,)),
            w3=mat(f"{tag}.w3", (w_half, 1)),
            b3=zeros(f"{tag}.b3", (1,)),
        )

    x = dims.interaction_dim
    return SgaParams(
        dims=dims,
        turn_table=mat("turn_table", (dims.max_turns, dims.turn_dim)),
        proj_w=mat("proj.w", (dims.input_dim, s)),
        proj_b=zeros("proj.b", (s,)),
        gat_intra=gat("gat_intra"),
        gat_counter=gat("gat_counter"),
        gat_support=gat("gat_support"),
        gru=GruParams(
            w_update=mat("gru.w_update", (x, s)),
            w_reset=mat("gru.w_reset", (x, s)),
            w_cand=mat("gru.w_cand", (x, s)),
            u_update=mat("gru.u_update", (s, s)),
            u_reset=mat("gru.u_reset", (s, s)),
            u_cand=mat("gru.u_cand", (s, s)),
            b_update=zeros("gru.b_update", (s,)),
            b_reset=zeros("gru.b_reset", (s,)),
            b_cand=zeros("gru.b_cand", (s,)),
        ),
        mlp_pros=mlp("mlp_pros"),
        mlp_cons=mlp("mlp_cons"),
    )


def params_from_arrays(dims: ModelDims, arrays: dict[str, np.ndarray]) -> SgaParams:
    """Rebuild a parameter container from checkpoint arrays."""
    template = init_sga_params(dims, seed=0)
    rebuilt: dict[str, Parameter] = {}
    for p in template.named_parameters():
        if p.name not in arrays:
            raise ModelError(f"checkpoint is missing parameter {p.name!r}")
        data = arrays[p.name]
        if data.shape != p.data.shape:
            raise ModelError(
                f"checkpoint parameter {p.name!r} has shape {data.shape}, expected {p.data.shape}"
            )
        rebuilt[p.name] = Parameter(p.name, data.copy())

    def take(name):
        return rebuilt[name]

    def gat(tag):
        return GatLayerParams(weight=take(f"{tag}.weight"), attn=take(f"{tag}.attn"))

    def mlp(tag):
        return MlpParams(
            w1=take(f"{tag}.w1"), b1=take(f"{tag}.b1"),
            ln1_gain=take(f"{tag}.ln1_gain"), ln1_bias=take(f"{tag}.ln1_bias"),
            w2=take(f"{tag}.w2"), b2=take(f"{tag}.b2"),
            ln2_gain=take(f"{tag}.ln2_gain"), ln2_bias=take(f"{tag}.ln2_bias"),
            w3=take(f"{tag}.w3"), b3=take(f"{tag}.b3"),
        )

    return SgaParams(
        dims=dims,
        turn_table=take("turn_table"),
        proj_w=take("proj.w"),
        proj_b=take("proj.b"),
        gat_intra=gat("gat_intra"),
        gat_counter=gat("gat_counter"),
        gat_support=gat("gat_support"),
        gru=GruParams(
            w_update=take("gru.w_update"), w_reset=take("gru.w_reset"), w_cand=take("gru.w_cand"),
            u_update=take("gru.u_update"), u_reset=take("gru.u_reset"), u_cand=take("gru.u_cand"),
            b_update=take("gru.b_update"), b_reset=take("gru.b_reset"), b_cand=take("gru.b_cand"),
        ),
        mlp_pros=mlp("mlp_pros"),
        mlp_cons=mlp("mlp_cons"),
    )


# ---------------------------------------------------------------------------
# Attention bookkeeping
# ---------------------------------------------------------------------------

@dataclass
class AttentionRecord:
    """Per-edge attention weights grouped by edge type (detached values)."""

    entries: dict[EdgeType, list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = field(
        default_factory=lambda: {t: [] for t in EDGE_TYPE_ORDER}
    )

    def record(self, edge_type: EdgeType, src: np.ndarray, dst: np.ndarray, alpha: np.ndarray):
        self.entries[edge_type].append((src, dst, alpha))

    def alpha_sums(self, num_nodes: int, by_target: bool = False) -> dict[EdgeType, np.ndarray]:
        """Total attention per node and type, accumulated over the edges where
        the node is the source (the weight targets gave it), or over its
        target role when `by_target` is set."""
        sums = {t: np.zeros(num_nodes) for t in EDGE_TYPE_ORDER}
        for edge_type, chunks in self.entries.items():
            for src, dst, alpha in chunks:
                np.add.at(sums[edge_type], dst if by_target else src, alpha)
        return sums

    def segment_totals(self) -> list[tuple[EdgeType, int, float]]:
        """Sum of attention per (target, type) segment; for normalization checks."""
        out = []
        for edge_type, chunks in self.entries.items():
            for _, dst, alpha in chunks:
                totals: dict[int, float] = {}
                for d, a in zip(dst.tolist(), alpha.tolist()):
                    totals[d] = totals.get(d, 0.0) + a
                out.extend((edge_type, d, total) for d, total in totals.items())
        return out


@dataclass(frozen=True)
class ReadoutVectors:
    q_pros: Tensor  # (1, 3 * r * state)
    q_cons: Tensor
    selected: dict[tuple[int, EdgeType], tuple[int, ...]]  # (side code, type) -> node ids


@dataclass(frozen=True)
class ForwardResult:
    c_pros: Tensor  # (1, 1), in [-1, 1]
    c_cons: Tensor
    readout: ReadoutVectors
    attention: AttentionRecord
    states: Tensor  # (N, state) final node states
    component_trace: dict[tuple[int, EdgeType], np.ndarray] | None = None

    def scores(self) -> tuple[float, float]:
        return self.c_pros.data.item(), self.c_cons.data.item()


# ---------------------------------------------------------------------------
# Forward operations
# ---------------------------------------------------------------------------

def encode_nodes(graph: DebateGraph, params: SgaParams) -> Tensor:
    """Initial node states: concat(sentence embedding, turn row), projected."""
    dims = params.dims
    if graph.node_count and int(graph.turn_index.max()) >= dims.max_turns:
        raise ModelError(
            f"turn index {int(graph.turn_index.max())} exceeds the turn table "
            f"(max_turns={dims.max_turns})"
        )
    if graph.embeddings.shape[1] != dims.embed_dim:
        raise ModelError(
            f"graph embeddings have dim {graph.embeddings.shape[1]}, model expects {dims.embed_dim}"
        )
    dtype = params.proj_w.data.dtype
    emb = ad.constant(graph.embeddings, dtype=dtype)
    turn_rows = ad.gather_rows(params.turn_table, graph.turn_index)
    return ad.affine(ad.concat([emb, turn_rows], axis=1), params.proj_w, params.proj_b)


def gat_forward(
    layer: GatLayerParams,
    src_states: Tensor,
    dst_states: Tensor,
    edges: np.ndarray,
    num_nodes: int,
    train_mode: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, np.ndarray, Tensor | None]:
    """Single-head attention aggregation along one edge type.

    Per edge, logit = LeakyReLU(a . [W h_dst || W h_src]); weights come from a
    softmax over each target's in-edges (dropped out in train mode); outputs
    are attention-weighted sums of projected source states. Targets with no
    in-edges get the zero vector. Returns (features, edge attention values,
    attention tensor).
    """
    s = layer.weight.data.shape[1]
    if len(edges) == 0:
        dtype = src_states.data.dtype
        return ad.constant(np.zeros((num_nodes, s), dtype=dtype)), np.empty(0), None
    src_idx = edges[:, 0]
    dst_idx = edges[:, 1]
    wh_src = ad.affine(src_states, layer.weight)
    wh_dst = wh_src if dst_states is src_states else ad.affine(dst_states, layer.weight)
    a_dst = ad.slice_vec(layer.attn, 0, s)
    a_src = ad.slice_vec(layer.attn, s, 2 * s)
    score_dst = ad.matvec(wh_dst, a_dst)
    score_src = ad.matvec(wh_src, a_src)
    logits = ad.leaky_relu(
        ad.add(ad.gather_rows(score_dst, dst_idx), ad.gather_rows(score_src, src_idx))
    )
    alpha = ad.segmented_softmax(logits, dst_idx, num_nodes)
    weights = ad.dropout(alpha, dropout_rate, train_mode, rng)
    messages = ad.scale_rows(ad.gather_rows(wh_src, src_idx), weights)
    out = ad.segment_sum(messages, dst_idx, num_nodes)
    return out, alpha.data.astype(np.float64), alpha


def gru_update(h_x: Tensor, h_prev: Tensor, gru: GruParams) -> Tensor:
    """Gated fusion: new = (1 - z) * previous + z * candidate, so a zero
    update gate carries the previous state through unchanged."""
    z = ad.sigmoid(ad.add(ad.affine(h_x, gru.w_update, gru.b_update), ad.affine(h_prev, gru.u_update)))
    r = ad.sigmoid(ad.add(ad.affine(h_x, gru.w_reset, gru.b_reset), ad.affine(h_prev, gru.u_reset)))
    cand = ad.tanh(
        ad.add(ad.affine(h_x, gru.w_cand, gru.b_cand), ad.mul(r, ad.affine(h_prev, gru.u_cand)))
    )
    keep = ad.add_scalar(ad.scale(z, -1.0), 1.0)
    return ad.add(ad.mul(keep, h_prev), ad.mul(z, cand))


_EDGE_DELTAS = {EdgeType.COUNTER: 1, EdgeType.SUPPORT: 2}


@dataclass
class SgaRun:
    """Mutable state of one sequential pass over a debate graph."""

    states: Tensor
    next_turn: int = 0
    attention: AttentionRecord = field(default_factory=AttentionRecord)
    component_trace: dict[tuple[int, EdgeType], np.ndarray] | None = None


def sga_step(
    run: SgaRun,
    t: int,
    graph: DebateGraph,
    params: SgaParams,
    config: ModelConfig = ModelConfig(),
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
) -> None:
    """Update turn-t node states in place (functionally, via a row rewrite).

    Counter evidence is identically zero at t = 0 and support evidence at
    t in {0, 1}: those turns have no earlier opponent/own turn to draw on.
    Turns must be processed in order; each node is written exactly once.
    """
    if t != run.next_turn:
        raise ModelError(f"turns must be processed in order: expected {run.next_turn}, got {t}")
    turn_nodes = graph.nodes_of_turn(t)
    if len(turn_nodes) == 0:
        raise ModelError(f"turn {t} has no nodes")
    n = graph.node_count
    s = params.dims.state_dim
    dtype = run.states.data.dtype
    zero_block = ad.constant(np.zeros((len(turn_nodes), s), dtype=dtype))

    edge_lists = {
        EdgeType.INTRA: graph.edges_intra,
        EdgeType.COUNTER: graph.edges_counter,
        EdgeType.SUPPORT: graph.edges_support,
    }
    components = []
    for edge_type in EDGE_TYPE_ORDER:
        delta = _EDGE_DELTAS.get(edge_type, 0)
        if config.disabled(edge_type) or t - delta < 0:
            components.append(zero_block)
            continue
        edges = edge_lists[edge_type]
        edges_t = edges[graph.turn_index[edges[:, 1]] == t] if len(edges) else edges
        out, alpha_values, _ = gat_forward(
            params.gat(edge_type),
            run.states,
            run.states,
            edges_t,
            n,
            train_mode=train_mode,
            dropout_rate=config.dropout,
            rng=rng,
        )
        if len(edges_t):
            run.attention.record(edge_type, edges_t[:, 0], edges_t[:, 1], alpha_values)
            components.append(ad.gather_rows(out, turn_nodes))
        else:
            components.append(zero_block)
    if run.component_trace is not None:
        for edge_type, block in zip(EDGE_TYPE_ORDER, components):
            run.component_trace[(t, edge_type)] = block.data.copy()

    h_x = ad.concat(components, axis=1)
    h_prev = ad.gather_rows(run.states, turn_nodes)
    h_new = gru_update(h_x, h_prev, params.gru)
    run.states = ad.set_rows(run.states, turn_nodes, h_new)
    run.next_turn = t + 1


def readout_topr(
    states: Tensor,
    attention: AttentionRecord,
    graph: DebateGraph,
    r: int = 3,
    by_target: bool = False,
) -> ReadoutVectors:
    """Concatenate the final states of each debater's top-r nodes per type.

    A node's score for a type is its total attention over that type's edges;
    nodes without such edges score zero and remain selectable. Ties break
    toward the lower node index. Types concatenate in intra/counter/support
    order, giving a 3 * r * state vector per debater.
    """
    sums = attention.alpha_sums(graph.node_count, by_target=by_target)
    selected: dict[tuple[int, EdgeType], tuple[int, ...]] = {}
    vectors = {}
    for code in (PROS_CODE, CONS_CODE):
        side_nodes = graph.nodes_of_side(code)
        if len(side_nodes) < r:
            raise ModelError(
                f"debater side {code} has {len(side_nodes)} nodes; readout needs at least {r}"
            )
        picks: list[int] = []
        for edge_type in EDGE_TYPE_ORDER:
            scores = sums[edge_type][side_nodes]
            order = np.lexsort((side_nodes, -scores))
            chosen = [int(side_nodes[i]) for i in order[:r]]
            selected[(code, edge_type)] = tuple(chosen)
            picks.extend(chosen)
        rows = ad.gather_rows(states, np.array(picks, dtype=np.int64))
        vectors[code] = ad.reshape(rows, (1, len(picks) * states.data.shape[1]))
    return ReadoutVectors(q_pros=vectors[PROS_CODE], q_cons=vectors[CONS_CODE], selected=selected)


def classifier_forward(
    q: Tensor,
    mlp: MlpParams,
    train_mode: bool = False,
    dropout_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Three stacked layers, halving then halving again, tanh at the end so
    the score lands in [-1, 1]."""
    h = ad.relu(ad.affine(q, mlp.w1, mlp.b1))
    h = ad.layer_norm(h, mlp.ln1_gain, mlp.ln1_bias)
    h = ad.dropout(h, dropout_rate, train_mode, rng)
    h = ad.relu(ad.affine(h, mlp.w2, mlp.b2))
    h = ad.layer_norm(h, mlp.ln2_gain, mlp.ln2_bias)
    h = ad.dropout(h, dropout_rate, train_mode, rng)
    return ad.tanh(ad.affine(h, mlp.w3, mlp.b3))


def pce_loss(c_winner: Tensor, c_loser: Tensor) -> Tensor:
    """Pairwise ranking loss log(1 + exp(loser - winner)), overflow-safe."""
    diff = ad.sub(c_loser, c_winner)
    return ad.sum_all(ad.softplus(diff))


def forward_debate(
    graph: DebateGraph,
    params: SgaParams,
    config: ModelConfig = ModelConfig(),
    train_mode: bool = False,
    rng: np.random.Generator | None = None,
    capture_components: bool = False,
) -> ForwardResult:
    """Full pass: encode, update every turn in order, read out, score both sides."""
    if train_mode and config.dropout > 0.0 and rng is None:
        raise ModelError("train-mode forward needs an rng for dropout")
    run = SgaRun(states=encode_nodes(graph, params))
    if capture_components:
        run.component_trace = {}
    for t in range(graph.num_turns):
        sga_step(run, t, graph, params, config, train_mode=train_mode, rng=rng)
    readout = readout_topr(
        run.states,
        run.attention,
        graph,
        r=params.dims.readout_r,
        by_target=config.readout_by_target,
    )
    c_pros = classifier_forward(
        readout.q_pros, params.mlp_pros, train_mode, config.dropout, rng
    )
    c_cons = classifier_forward(
        readout.q_cons, params.mlp_cons, train_mode, config.dropout, rng
    )
    return ForwardResult(
        c_pros=c_pros,
        c_cons=c_cons,
        readout=readout,
        attention=run.attention,
        states=run.states,
        component_trace=run.component_trace,
    )


def debate_loss(result: ForwardResult, winner: Side) -> Tensor:
    if winner is Side.PROS:
        return pce_loss(result.c_pros, result.c_cons)
    return pce_loss(result.c_cons, result.c_pros)
