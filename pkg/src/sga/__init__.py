"""Sequence-graph attention networks for two-party debate winner prediction."""

from .corpus import (
    CorpusSplit,
    Debate,
    FilterRules,
    Sentence,
    Side,
    SynthConfig,
    Turn,
    augment_corpus,
    compute_stats,
    filter_corpus,
    generate_synthetic,
    load_corpus,
    make_debate,
    normalize_text,
    save_corpus,
    segment_sentences,
    split_corpus,
)
from .graph import (
    DebateGraph,
    GraphConfig,
    build_cross_edges,
    build_debate_graph,
    build_intra_edges,
    cosine_similarity,
    validate_graph,
)
from .model import (
    ModelConfig,
    ModelDims,
    SgaParams,
    forward_debate,
    init_sga_params,
    pce_loss,
)
from .train import EvalReport, TrainConfig, evaluate_model, predict, train_model

__version__ = "0.1.0"
