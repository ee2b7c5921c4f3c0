"""Training loop, evaluation metrics, early stopping, ablation and sweeps."""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, adam_step, backward
from .corpus import CorpusSplit, Debate, Side
from .embeddings import EmbeddingStore
from .graph import GraphConfig, DebateGraph, build_graphs
from .model import (
    ModelConfig,
    ModelDims,
    SgaParams,
    debate_loss,
    forward_debate,
    init_sga_params,
)


class TrainingError(RuntimeError):
    """Raised when training cannot proceed (non-finite loss, bad folds)."""


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0
    dropout: float = 0.2
    readout_r: int = 3
    disable_gati: bool = False
    disable_gatc: bool = False
    disable_gats: bool = False
    graph: GraphConfig = field(default_factory=GraphConfig)

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.patience) <= 0:
            raise ValueError("learning_rate, batch_size, max_epochs, patience must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience cannot exceed max_epochs")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            dropout=self.dropout,
            disable_gati=self.disable_gati,
            disable_gatc=self.disable_gatc,
            disable_gats=self.disable_gats,
        )

    def to_text(self) -> str:
        lines = [
            f"learning_rate = {self.learning_rate}",
            f"batch_size = {self.batch_size}",
            f"max_epochs = {self.max_epochs}",
            f"patience = {self.patience}",
            f"seed = {self.seed}",
            f"dropout = {self.dropout}",
            f"readout_r = {self.readout_r}",
            f"disable_gati = {self.disable_gati}",
            f"disable_gatc = {self.disable_gatc}",
            f"disable_gats = {self.disable_gats}",
            f"intra_distance = {self.graph.intra_distance}",
            f"cross_mode = {self.graph.cross_mode}",
            f"threshold = {self.graph.threshold}",
            f"top_k = {self.graph.top_k}",
            f"topk_combined = {self.graph.topk_combined}",
        ]
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    val_f1: float
    seconds: float

    def to_record(self) -> dict:
        # Deterministic fields only; wall-clock time stays out of the
        # reproducibility contract and is reported separately.
        return {
            "epoch": self.epoch,
            "train_loss": self.train_loss,
            "val_loss": self.val_loss,
            "val_accuracy": self.val_accuracy,
            "val_f1": self.val_f1,
        }


@dataclass(frozen=True)
class EvalReport:
    accuracy: float
    f1_macro: float
    confusion: dict[str, int]  # keys like "true_pros_pred_cons"
    majority_share: float
    size: int

    def to_record(self) -> dict:
        rec = {
            "accuracy": self.accuracy,
            "f1_macro": self.f1_macro,
            "majority_share": self.majority_share,
            "size": self.size,
        }
        rec.update(self.confusion)
        return rec


@dataclass
class TrainResult:
    params: SgaParams
    log: list[EpochRecord]
    best_epoch: int
    best_val_loss: float
    dims: ModelDims


def _eval_loss(
    ids: Sequence[str],
    debates: dict[str, Debate],
    graphs: dict[str, DebateGraph],
    params: SgaParams,
    config: ModelConfig,
) -> tuple[float, list[Side]]:
    losses = []
    predictions = []
    for debate_id in ids:
        result = forward_debate(graphs[debate_id], params, config, train_mode=False)
        losses.append(float(debate_loss(result, debates[debate_id].winner).data))
        c_pros, c_cons = result.scores()
        predictions.append(Side.PROS if c_pros > c_cons else Side.CONS)
    return float(np.mean(losses)), predictions


def _metrics(truth: Sequence[Side], predictions: Sequence[Side]) -> EvalReport:
    confusion = {
        f"true_{a.value}_pred_{b.value}": 0 for a in (Side.PROS, Side.CONS) for b in (Side.PROS, Side.CONS)
    }
    for t, p in zip(truth, predictions):
        confusion[f"true_{t.value}_pred_{p.value}"] += 1
    total = len(truth)
    correct = confusion["true_pros_pred_pros"] + confusion["true_cons_pred_cons"]
    f1s = []
    for side in (Side.PROS, Side.CONS):
        tp = confusion[f"true_{side.value}_pred_{side.value}"]
        fp = sum(
            confusion[f"true_{o.value}_pred_{side.value}"]
            for o in (Side.PROS, Side.CONS)
            if o is not side
        )
        fn = sum(
            confusion[f"true_{side.value}_pred_{o.value}"]
            for o in (Side.PROS, Side.CONS)
            if o is not side
        )
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    counts = [sum(1 for t in truth if t is side) for side in (Side.PROS, Side.CONS)]
    return EvalReport(
        accuracy=correct / total if total else 0.0,
        f1_macro=float(np.mean(f1s)),
        confusion=confusion,
        majority_share=max(counts) / total if total else 0.0,
        size=total,
    )


def train_model(
    split: CorpusSplit,
    debates: dict[str, Debate],
    graphs: dict[str, DebateGraph],
    config: TrainConfig,
    log_fn: Callable[[EpochRecord], None] | None = None,
) -> TrainResult:
    """Seeded epochs of batched ranking-loss training with early stopping.

    Per epoch: shuffle the training fold, step on batch-mean losses, then
    score the validation fold in eval mode. Stops once validation loss has
    not improved for `patience` epochs and returns the best-validation
    parameters. Fully determined by (corpus, config, seed).
    """
    if not split.train or not split.val:
        raise TrainingError("train and validation folds must be non-empty")
    sample = graphs[split.train[0]]
    dims = ModelDims(embed_dim=sample.embeddings.shape[1], readout_r=config.readout_r)
    params = init_sga_params(dims, seed=config.seed)
    adam = AdamState(learning_rate=config.learning_rate)
    shuffle_rng = np.random.default_rng(config.seed + 1)
    dropout_rng = np.random.default_rng(config.seed + 2)
    model_config = config.model_config()

    log: list[EpochRecord] = []
    best_val = np.inf
    best_epoch = -1
    best_params = params.copy()
    stale = 0
    for epoch in range(config.max_epochs):
        started = time.perf_counter()
        order = list(split.train)
        shuffle_rng.shuffle(order)
        epoch_losses: list[float] = []
        for lo in range(0, len(order), config.batch_size):
            batch = order[lo : lo + config.batch_size]
            losses = []
            for debate_id in batch:
                result = forward_debate(
                    graphs[debate_id],
                    params,
                    model_config,
                    train_mode=True,
                    rng=dropout_rng,
                )
                losses.append(debate_loss(result, debates[debate_id].winner))
            batch_loss = ad.mean_scalars(losses)
            if not np.isfinite(batch_loss.data):
                culprits = [d for d, l in zip(batch, losses) if not np.isfinite(l.data)]
                raise TrainingError(
                    f"non-finite loss at epoch {epoch} for debate(s) {', '.join(culprits)}"
                )
            backward(batch_loss)
            adam_step(params.named_parameters(), adam)
            epoch_losses.extend(float(l.data) for l in losses)
        val_loss, val_preds = _eval_loss(split.val, debates, graphs, params, model_config)
        val_report = _metrics([debates[i].winner for i in split.val], val_preds)
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(epoch_losses)),
            val_loss=val_loss,
            val_accuracy=val_report.accuracy,
            val_f1=val_report.f1_macro,
            seconds=time.perf_counter() - started,
        )
        log.append(record)
        if log_fn:
            log_fn(record)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    return TrainResult(
        params=best_params, log=log, best_epoch=best_epoch, best_val_loss=float(best_val), dims=dims
    )


def predict(graph: DebateGraph, params: SgaParams, config: ModelConfig = ModelConfig()) -> Side:
    """Winner by score argmax; an exact tie goes to the majority class (Cons)."""
    if graph.embeddings.shape[1] != params.dims.embed_dim:
        raise TrainingError(
            f"checkpoint expects embedding dim {params.dims.embed_dim}, "
            f"graph has {graph.embeddings.shape[1]}"
        )
    result = forward_debate(graph, params, config, train_mode=False)
    c_pros, c_cons = result.scores()
    return Side.PROS if c_pros > c_cons else Side.CONS


def evaluate_model(
    ids: Sequence[str],
    debates: dict[str, Debate],
    graphs: dict[str, DebateGraph],
    params: SgaParams,
    config: ModelConfig = ModelConfig(),
) -> EvalReport:
    """Accuracy, macro F1, confusion counts, and the majority-class share."""
    if not ids:
        raise TrainingError("cannot evaluate an empty fold")
    predictions = [predict(graphs[i], params, config) for i in ids]
    return _metrics([debates[i].winner for i in ids], predictions)


def _worker_count() -> int:
    raw = os.environ.get("SGA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _run_cells(cells: Sequence[tuple[str, Callable[[], EvalReport]]]) -> list[tuple[str, EvalReport | str]]:
    """Run independent train+eval cells, catching failures per cell."""

    def guarded(fn):
        try:
            return fn()
        except Exception as e:  # keep remaining cells running
            return f"error: {e}"

    workers = _worker_count()
    if workers == 1:
        return [(label, guarded(fn)) for label, fn in cells]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [(label, pool.submit(guarded, fn)) for label, fn in cells]
        return [(label, f.result()) for label, f in futures]


ABLATION_VARIANTS: tuple[tuple[str, dict], ...] = (
    ("full", {}),
    ("no_intra", {"disable_gati": True}),
    ("no_counter", {"disable_gatc": True}),
    ("no_support", {"disable_gats": True}),
)


def run_ablation_suite(
    split: CorpusSplit,
    debates: dict[str, Debate],
    graphs: dict[str, DebateGraph],
    base_config: TrainConfig,
) -> list[tuple[str, EvalReport | str]]:
    """Train and test the full model and each single-layer removal under
    identical seeds and splits."""

    def cell(overrides):
        def run():
            config = replace(base_config, **overrides)
            trained = train_model(split, debates, graphs, config)
            return evaluate_model(split.test, debates, graphs, trained.params, config.model_config())

        return run

    return _run_cells([(label, cell(overrides)) for label, overrides in ABLATION_VARIANTS])


def run_sweep(
    split: CorpusSplit,
    debates: dict[str, Debate],
    store: EmbeddingStore,
    base_config: TrainConfig,
    mode: str,
    values: Sequence[float],
) -> list[tuple[str, EvalReport | str]]:
    """Rebuild graphs and retrain per cross-edge construction value."""
    if mode not in ("threshold", "topk"):
        raise ValueError(f"sweep mode must be 'threshold' or 'topk', got {mode!r}")
    if not values:
        raise ValueError("sweep needs at least one value")
    ordered = list(debates.values())

    def cell(value):
        def run():
            if mode == "threshold":
                graph_config = replace(base_config.graph, cross_mode="threshold", threshold=float(value))
            else:
                graph_config = replace(base_config.graph, cross_mode="topk", top_k=int(value))
            config = replace(base_config, graph=graph_config)
            graphs = build_graphs(ordered, store, graph_config)
            trained = train_model(split, debates, graphs, config)
            return evaluate_model(split.test, debates, graphs, trained.params, config.model_config())

        return run

    fmt = (lambda v: f"{v:g}") if mode == "threshold" else (lambda v: str(int(v)))
    return _run_cells([(fmt(v), cell(v)) for v in values])
