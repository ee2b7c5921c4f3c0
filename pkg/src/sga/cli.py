"""Command-line interface: the full pipeline as batch subcommands.

Every run writes into a run directory that appears atomically (work happens
in a sibling temp directory, renamed on success) and carries the fully
resolved configuration and seed.
"""

from __future__ import annotations

import argparse
import json
import shutil
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import corpus as corpus_mod
from . import embeddings as emb_mod
from . import graph as graph_mod
from . import model as model_mod
from . import report as report_mod
from . import train as train_mod
from .corpus import FilterRules, Side, SynthConfig
from .graph import GraphConfig
from .model import ModelDims
from .train import TrainConfig

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2

EVAL_COLUMNS = (
    "accuracy",
    "f1_macro",
    "majority_share",
    "size",
    "true_pros_pred_pros",
    "true_pros_pred_cons",
    "true_cons_pred_pros",
    "true_cons_pred_cons",
)


class CliError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# Run directories and config files
# ---------------------------------------------------------------------------

class RunDir:
    """Stage outputs in a temp directory; rename into place on success."""

    def __init__(self, path: Path, force: bool):
        self.final = path
        self.force = force
        self.work = path.with_name(path.name + ".partial")

    def __enter__(self) -> Path:
        if self.final.exists():
            if not self.force:
                raise CliError(f"output directory {self.final} exists (use --force to replace)")
            shutil.rmtree(self.final)
        if self.work.exists():
            shutil.rmtree(self.work)
        self.work.mkdir(parents=True)
        return self.work

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.work.replace(self.final)
        else:
            shutil.rmtree(self.work, ignore_errors=True)
        return False


def parse_config_file(path: Path) -> dict[str, str]:
    values = {}
    for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{i}: expected 'key = value'")
        key, _, value = line.partition("=")
        values[key.strip()] = value.strip()
    return values


_CONFIG_COERCERS = {
    "learning_rate": float,
    "batch_size": int,
    "max_epochs": int,
    "patience": int,
    "seed": int,
    "dropout": float,
    "readout_r": int,
    "disable_gati": lambda v: v.lower() == "true",
    "disable_gatc": lambda v: v.lower() == "true",
    "disable_gats": lambda v: v.lower() == "true",
    "intra_distance": int,
    "cross_mode": str,
    "threshold": float,
    "top_k": int,
    "topk_combined": lambda v: v.lower() == "true",
}

_GRAPH_KEYS = ("intra_distance", "cross_mode", "threshold", "top_k", "topk_combined")


def resolve_train_config(args) -> TrainConfig:
    """Config file values first, then command-line flags on top."""
    resolved: dict = {}
    if getattr(args, "config", None):
        for key, raw in parse_config_file(Path(args.config)).items():
            if key not in _CONFIG_COERCERS:
                raise CliError(f"unknown config key {key!r}")
            resolved[key] = _CONFIG_COERCERS[key](raw)
    for key in _CONFIG_COERCERS:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    graph_kwargs = {k: resolved.pop(k) for k in list(resolved) if k in _GRAPH_KEYS}
    return TrainConfig(graph=GraphConfig(**graph_kwargs), **resolved)


def _log_config(workdir: Path, config: TrainConfig) -> None:
    (workdir / "config.txt").write_text(config.to_text(), encoding="utf-8")
    print(config.to_text(), end="")


# ---------------------------------------------------------------------------
# Shared loading helpers
# ---------------------------------------------------------------------------

def _load_inputs(args, graph_config: GraphConfig):
    debates = corpus_mod.load_corpus(args.corpus)
    if not debates:
        raise CliError(f"{args.corpus}: empty corpus")
    store = emb_mod.load_store(
        debates,
        getattr(args, "embeddings", None),
        corpus_path=args.corpus,
        hash_dim=getattr(args, "hash_dim", 384),
        verify_digest=not getattr(args, "no_verify_digest", False),
    )
    graphs = graph_mod.build_graphs(debates, store, graph_config)
    return debates, store, graphs


def _load_params(checkpoint: str) -> tuple[model_mod.SgaParams, dict[str, str]]:
    arrays, config_text = ad.load_checkpoint(checkpoint)
    meta = {}
    for line in config_text.splitlines():
        if "=" in line:
            key, _, value = line.partition("=")
            meta[key.strip()] = value.strip()
    dims = ModelDims(
        embed_dim=int(meta.get("embed_dim", 384)),
        turn_dim=int(meta.get("turn_dim", 30)),
        max_turns=int(meta.get("max_turns", 6)),
        state_dim=int(meta.get("state_dim", 32)),
        readout_r=int(meta.get("readout_r", 3)),
    )
    return model_mod.params_from_arrays(dims, arrays), meta


def _dims_sidecar(dims: ModelDims, config: TrainConfig) -> str:
    head = (
        f"embed_dim = {dims.embed_dim}\n"
        f"turn_dim = {dims.turn_dim}\n"
        f"max_turns = {dims.max_turns}\n"
        f"state_dim = {dims.state_dim}\n"
        f"readout_r = {dims.readout_r}\n"
    )
    return head + config.to_text()


def _eval_rows(results: list[tuple[str, object]], key_name: str) -> list[dict]:
    rows = []
    for label, rep in results:
        if isinstance(rep, train_mod.EvalReport):
            rows.append({key_name: label, **rep.to_record()})
        else:
            rows.append({key_name: label, "error": rep})
    return rows


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def cmd_preprocess(args) -> int:
    rules = FilterRules(
        min_voters=args.min_voters,
        min_margin=args.margin,
        min_rounds=args.min_rounds,
        min_sentences=args.min_sentences,
    )
    debates = corpus_mod.load_corpus(args.corpus)
    first = corpus_mod.filter_corpus(debates, rules, truncate=False)
    augmented = (
        first.debates if args.no_augment else corpus_mod.augment_corpus(first.debates, rules)
    )
    final = corpus_mod.filter_corpus(augmented, rules, truncate=True)
    normalized = [
        corpus_mod.make_debate(
            d.id,
            d.topic,
            d.winner,
            d.votes_pros,
            d.votes_cons,
            [[s.normalized_text for s in t.sentences] for t in d.turns],
            total_voters=d.total_voters,
        )
        for d in final.debates
    ]
    with RunDir(Path(args.out), args.force) as work:
        corpus_mod.save_corpus(work / "corpus.jsonl", normalized)
        counts = {
            "loaded": len(debates),
            **{f"first_pass_{k}": v for k, v in first.counts().items()},
            "after_augment": len(augmented),
            **{f"final_{k}": v for k, v in final.counts().items()},
        }
        report_mod.write_records(work / "preprocess.tsv", [counts], list(counts))
        for key, value in counts.items():
            print(f"{key}: {value}")
    return EXIT_OK


def cmd_synth(args) -> int:
    config = SynthConfig(
        debates=args.debates,
        sentences_per_turn=args.sentences,
        dim=args.dim,
        signal=args.signal,
    )
    debates, vectors = corpus_mod.generate_synthetic(config, args.seed)
    with RunDir(Path(args.out), args.force) as work:
        corpus_path = work / "corpus.jsonl"
        corpus_mod.save_corpus(corpus_path, debates)
        digest = emb_mod.corpus_digest(corpus_path)
        emb_mod.write_embedding_file(work / "embeddings.sgae", vectors, digest, "synthetic")
        (work / "synth.txt").write_text(
            f"debates = {config.debates}\nsentences_per_turn = {config.sentences_per_turn}\n"
            f"dim = {config.dim}\nsignal = {config.signal}\nseed = {args.seed}\n",
            encoding="utf-8",
        )
    print(f"wrote {len(debates)} debates and {len(vectors)} vectors to {args.out}")
    return EXIT_OK


def cmd_build_graphs(args) -> int:
    config = resolve_train_config(args)
    debates, _, graphs = _load_inputs(args, config.graph)
    rows = []
    with RunDir(Path(args.out), args.force) as work:
        dumps = work / "graphs"
        dumps.mkdir()
        for d in debates:
            g = graphs[d.id]
            (dumps / f"{d.id}.txt").write_text(graph_mod.dump_graph(g), encoding="utf-8")
            rows.append(
                {
                    "id": d.id,
                    "nodes": g.node_count,
                    "intra": len(g.edges_intra),
                    "counter": len(g.edges_counter),
                    "support": len(g.edges_support),
                }
            )
        report_mod.write_records(
            work / "summary.tsv", rows, ("id", "nodes", "intra", "counter", "support")
        )
        _log_config(work, config)
    print(f"built {len(rows)} graphs under {args.out}")
    return EXIT_OK


def cmd_stats(args) -> int:
    config = resolve_train_config(args)
    debates, _, graphs = _load_inputs(args, config.graph)
    stats = corpus_mod.compute_stats(debates, [graphs[d.id] for d in debates])
    with RunDir(Path(args.out), args.force) as work:
        (work / "stats.txt").write_text(stats.to_text() + "\n", encoding="utf-8")
        report_mod.write_records(
            work / "stats.tsv",
            stats.to_records(),
            ("role", "sentences_per_turn", "counter_per_turn", "support_per_turn"),
        )
        report_mod.plot_stats(stats, work / "stats.png")
        _log_config(work, config)
    print(stats.to_text())
    return EXIT_OK


def cmd_train(args) -> int:
    config = resolve_train_config(args)
    debates, _, graphs = _load_inputs(args, config.graph)
    by_id = {d.id: d for d in debates}
    split = corpus_mod.split_corpus(debates, config.seed)
    result = train_mod.train_model(
        split,
        by_id,
        graphs,
        config,
        log_fn=lambda r: print(
            f"epoch {r.epoch:3d}  train {r.train_loss:.4f}  val {r.val_loss:.4f}  "
            f"acc {r.val_accuracy:.3f}  f1 {r.val_f1:.3f}  ({r.seconds:.1f}s)"
        ),
    )
    with RunDir(Path(args.out), args.force) as work:
        ad.save_checkpoint(
            work / "checkpoint.sgaw",
            result.params.named_parameters(),
            _dims_sidecar(result.dims, config),
        )
        with open(work / "train_log.jsonl", "w", encoding="utf-8") as fh:
            for record in result.log:
                fh.write(json.dumps(record.to_record()))
                fh.write("\n")
        with open(work / "timings.txt", "w", encoding="utf-8") as fh:
            for record in result.log:
                fh.write(f"epoch {record.epoch}: {record.seconds:.3f}s\n")
        (work / "split.json").write_text(
            json.dumps(
                {"train": split.train, "val": split.val, "test": split.test, "seed": split.seed}
            ),
            encoding="utf-8",
        )
        report_mod.plot_training_curves(result.log, work / "curves.png")
        _log_config(work, config)
    print(f"best epoch {result.best_epoch} (val loss {result.best_val_loss:.4f}) -> {args.out}")
    return EXIT_OK


def _resolve_fold(args, debates) -> list[str]:
    if args.split_file:
        folds = json.loads(Path(args.split_file).read_text(encoding="utf-8"))
        return list(folds[args.fold])
    if args.fold != "all":
        split = corpus_mod.split_corpus(debates, args.seed)
        return list(split.fold(args.fold))
    return [d.id for d in debates]


def cmd_eval(args) -> int:
    params, meta = _load_params(args.checkpoint)
    graph_config = GraphConfig(
        intra_distance=int(meta.get("intra_distance", 3)),
        cross_mode=meta.get("cross_mode", "threshold"),
        threshold=float(meta.get("threshold", 0.85)),
        top_k=int(meta.get("top_k", 3)),
        topk_combined=meta.get("topk_combined", "False") == "True",
    )
    debates, _, graphs = _load_inputs(args, graph_config)
    by_id = {d.id: d for d in debates}
    fold_ids = _resolve_fold(args, debates)
    model_config = model_mod.ModelConfig(
        dropout=float(meta.get("dropout", 0.2)),
        disable_gati=meta.get("disable_gati", "False") == "True",
        disable_gatc=meta.get("disable_gatc", "False") == "True",
        disable_gats=meta.get("disable_gats", "False") == "True",
    )
    report = train_mod.evaluate_model(fold_ids, by_id, graphs, params, model_config)
    with RunDir(Path(args.out), args.force) as work:
        report_mod.write_records(work / "eval.tsv", [report.to_record()], EVAL_COLUMNS)
        (work / "eval.txt").write_text(
            f"fold: {args.fold}  size: {report.size}\n"
            f"accuracy: {report.accuracy:.4f}\nmacro F1: {report.f1_macro:.4f}\n"
            f"majority share: {report.majority_share:.4f}\n",
            encoding="utf-8",
        )
    print(
        f"fold {args.fold}: accuracy {report.accuracy:.4f}, macro F1 {report.f1_macro:.4f} "
        f"(majority {report.majority_share:.4f}, n={report.size})"
    )
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    synth_config = SynthConfig(debates=1, sentences_per_turn=3, dim=8, signal=0.8)
    debates, vectors = corpus_mod.generate_synthetic(synth_config, args.seed)
    debate = debates[0]
    graph = graph_mod.build_debate_graph(debate, vectors, GraphConfig(threshold=0.3))
    dims = ModelDims(embed_dim=synth_config.dim, readout_r=3)
    params = model_mod.init_sga_params(dims, seed=args.seed, dtype=np.float64)
    config = model_mod.ModelConfig(dropout=0.0)

    def forward():
        result = model_mod.forward_debate(graph, params, config, train_mode=False)
        return model_mod.debate_loss(result, debate.winner)

    worst = ad.grad_check(forward, params.named_parameters(), probes=args.probes, seed=args.seed)
    print(f"max relative gradient error: {worst:.3e}")
    return EXIT_OK if worst < 1e-3 else EXIT_ERROR


def cmd_sweep(args) -> int:
    config = resolve_train_config(args)
    debates, store, _ = _load_inputs(args, config.graph)
    by_id = {d.id: d for d in debates}
    split = corpus_mod.split_corpus(debates, config.seed)
    values = [float(v) for v in args.values.split(",")]
    results = train_mod.run_sweep(split, by_id, store, config, args.mode, values)
    key = "threshold" if args.mode == "threshold" else "top_k"
    with RunDir(Path(args.out), args.force) as work:
        report_mod.write_records(
            work / "sweep.tsv", _eval_rows(results, key), (key,) + EVAL_COLUMNS + ("error",)
        )
        report_mod.plot_sweep(results, args.mode, work / "sweep.png")
        _log_config(work, config)
    for label, rep in results:
        desc = (
            f"acc {rep.accuracy:.4f} f1 {rep.f1_macro:.4f}"
            if isinstance(rep, train_mod.EvalReport)
            else rep
        )
        print(f"{key}={label}: {desc}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = resolve_train_config(args)
    debates, _, graphs = _load_inputs(args, config.graph)
    by_id = {d.id: d for d in debates}
    split = corpus_mod.split_corpus(debates, config.seed)
    results = train_mod.run_ablation_suite(split, by_id, graphs, config)
    with RunDir(Path(args.out), args.force) as work:
        report_mod.write_records(
            work / "ablation.tsv",
            _eval_rows(results, "variant"),
            ("variant",) + EVAL_COLUMNS + ("error",),
        )
        report_mod.plot_ablation(results, work / "ablation.png")
        _log_config(work, config)
    for label, rep in results:
        desc = (
            f"acc {rep.accuracy:.4f} f1 {rep.f1_macro:.4f}"
            if isinstance(rep, train_mod.EvalReport)
            else rep
        )
        print(f"{label}: {desc}")
    return EXIT_OK


def cmd_inspect(args) -> int:
    config = resolve_train_config(args)
    debates, _, graphs = _load_inputs(args, config.graph)
    by_id = {d.id: d for d in debates}
    if args.debate not in by_id:
        raise CliError(f"debate {args.debate!r} not found in corpus")
    debate = by_id[args.debate]
    g = graphs[args.debate]
    with RunDir(Path(args.out), args.force) as work:
        (work / "graph.txt").write_text(graph_mod.dump_graph(g), encoding="utf-8")
        if args.checkpoint:
            params, meta = _load_params(args.checkpoint)
            result = model_mod.forward_debate(g, params, model_mod.ModelConfig(), train_mode=False)
            sentences = debate.sentences()
            rows = []
            for (side_code, edge_type), nodes in sorted(
                result.readout.selected.items(), key=lambda kv: (kv[0][0], kv[0][1].value)
            ):
                sums = result.attention.alpha_sums(g.node_count)[edge_type]
                side = Side.PROS if side_code == 0 else Side.CONS
                for rank, node in enumerate(nodes):
                    rows.append(
                        {
                            "side": side.value,
                            "edge_type": edge_type.value,
                            "rank": rank,
                            "node": node,
                            "turn": int(g.turn_index[node]),
                            "position": int(g.position_in_turn[node]),
                            "attention": f"{sums[node]:.6f}",
                            "sentence": sentences[node].normalized_text,
                        }
                    )
            report_mod.write_records(
                work / "representatives.tsv",
                rows,
                ("side", "edge_type", "rank", "node", "turn", "position", "attention", "sentence"),
            )
            c_pros, c_cons = result.scores()
            lines = [f"scores: pros {c_pros:.4f} cons {c_cons:.4f}"]
            for row in rows:
                lines.append(
                    f"{row['side']:4s} {row['edge_type']:8s} #{row['rank']} "
                    f"(turn {row['turn']}, pos {row['position']}, attention {row['attention']}): "
                    f"{row['sentence']}"
                )
            text = "\n".join(lines) + "\n"
            (work / "representatives.txt").write_text(text, encoding="utf-8")
            print(text, end="")
        _log_config(work, config)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, *, corpus=True, out=True):
    if corpus:
        p.add_argument("--corpus", required=True, help="corpus file (.jsonl or debate.org export)")
        p.add_argument("--embeddings", help="embedding file (.sgae); omit for the hash embedder")
        p.add_argument("--hash-dim", type=int, default=384, dest="hash_dim")
        p.add_argument("--no-verify-digest", action="store_true", dest="no_verify_digest")
    if out:
        p.add_argument("--out", required=True, help="run directory (created atomically)")
        p.add_argument("--force", action="store_true", help="replace an existing run directory")


def _add_train_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file; flags override it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None, dest="learning_rate")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.add_argument("--max-epochs", type=int, default=None, dest="max_epochs")
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--readout-r", type=int, default=None, dest="readout_r")
    p.add_argument("--disable-gati", action="store_const", const=True, default=None, dest="disable_gati")
    p.add_argument("--disable-gatc", action="store_const", const=True, default=None, dest="disable_gatc")
    p.add_argument("--disable-gats", action="store_const", const=True, default=None, dest="disable_gats")
    p.add_argument("--intra-distance", type=int, default=None, dest="intra_distance")
    p.add_argument("--cross-mode", choices=("threshold", "topk"), default=None, dest="cross_mode")
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--top-k", type=int, default=None, dest="top_k")
    p.add_argument(
        "--topk-combined", action="store_const", const=True, default=None, dest="topk_combined"
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sga", description="Debate-winner prediction with sequence-graph attention"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="normalize, filter, augment a corpus")
    _add_common(p)
    p.add_argument("--min-voters", type=int, default=5, dest="min_voters")
    p.add_argument("--min-rounds", type=int, default=3, dest="min_rounds")
    p.add_argument("--min-sentences", type=int, default=5, dest="min_sentences")
    p.add_argument("--margin", type=int, default=2)
    p.add_argument("--no-augment", action="store_true", dest="no_augment")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("synth", help="generate a planted-signal corpus")
    _add_common(p, corpus=False)
    p.add_argument("--debates", type=int, default=200)
    p.add_argument("--sentences", type=int, default=5)
    p.add_argument("--dim", type=int, default=32)
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(handler=cmd_synth)

    p = sub.add_parser("build-graphs", help="compile debate graphs and dump them")
    _add_common(p)
    _add_train_flags(p)
    p.set_defaults(handler=cmd_build_graphs)

    p = sub.add_parser("stats", help="per-side sentence and edge statistics")
    _add_common(p)
    _add_train_flags(p)
    p.set_defaults(handler=cmd_stats)

    p = sub.add_parser("train", help="train a model with early stopping")
    _add_common(p)
    _add_train_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a fold")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fold", choices=("train", "val", "test", "all"), default="all")
    p.add_argument("--split-file", dest="split_file", help="split.json from a training run")
    p.add_argument("--seed", type=int, default=0, help="recompute the split when no split file")
    p.set_defaults(handler=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--probes", type=int, default=60)
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser("sweep", help="retrain across cross-edge construction values")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--mode", choices=("threshold", "topk"), required=True)
    p.add_argument("--values", required=True, help="comma-separated values")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("ablate", help="train full model and single-layer removals")
    _add_common(p)
    _add_train_flags(p)
    p.set_defaults(handler=cmd_ablate)

    p = sub.add_parser("inspect", help="dump one debate's graph and representatives")
    _add_common(p)
    _add_train_flags(p)
    p.add_argument("--debate", required=True)
    p.add_argument("--checkpoint")
    p.set_defaults(handler=cmd_inspect)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_USAGE if e.code not in (0, None) else EXIT_OK
    try:
        return args.handler(args)
    except (
        CliError,
        corpus_mod.CorpusError,
        graph_mod.GraphError,
        emb_mod.EmbeddingFileError,
        ad.AutodiffError,
        model_mod.ModelError,
        train_mod.TrainingError,
        FileNotFoundError,
        ValueError,
    ) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
