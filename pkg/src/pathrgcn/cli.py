"""Command-line entry point: ``python -m pathrgcn <command> [flags]``.

Exit codes: 0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .autodiff import grad_check
from .corpus import ParseError, parse_sample
from .embeddings import EmbeddingProvider, HashEmbeddings, load_word_vectors
from .formats import (
    build_example,
    example_to_record,
    load_examples,
    read_records,
    tokenize_sample,
    tokenized_from_record,
    tokenized_to_record,
    write_records,
)
from .graph import EdgeMode
from .model import (
    AblationFlags,
    CheckpointError,
    DataError,
    GatedRGCN,
    ModelConfig,
    UnanswerableError,
    encode_example,
    load_checkpoint,
    save_checkpoint,
)
from .synth import SynthSpec, VocabularyError, generate_corpus, write_corpus
from .training import TrainConfig, analyze_by_bucket, evaluate, sweep_layers, train

logger = logging.getLogger("pathrgcn")

PRESETS = {
    "full": {"d": 256, "layers": 4},
    "tiny": {"d": 32, "layers": 4, "max_docs": 3},
}

# a six-node graph covering all six relation types
GRADCHECK_SAMPLE = {
    "id": "gradcheck",
    "query": "died_in sam hill",
    "supports": [
        "Sam Hill is buried in Kel Park.",
        "Kel Park is located in Tor Vale.",
        "Tor Vale is big. Mor Dun is far.",
    ],
    "candidates": ["tor vale", "mor dun"],
    "answer": "tor vale",
}


class UsageError(Exception):
    pass


# -- argument parsing --------------------------------------------------------------------
def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0, help="governs all randomness")
    p.add_argument("--threads", type=int, default=1, help="evaluation worker threads")
    p.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def _embedding_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embeddings", type=Path, help="word-vector text file (token then floats)")
    p.add_argument("--embed-dim", type=int, default=None, help="embedding width (default 300 or the file's)")


def _graph_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--max-docs", type=int, default=None, help="documents per reasoning path (default 2)")
    p.add_argument("--max-nodes", type=int, default=None, help="graph node cap (default 600)")


def _ablation_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-reasoning-entities", action="store_true")
    p.add_argument("--no-question-gate", action="store_true")
    p.add_argument("--no-question-attention", action="store_true")
    p.add_argument("--edge-mode", choices=[m.value for m in EdgeMode], default=None)


def _model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", choices=sorted(PRESETS), default=None)
    p.add_argument("--d", type=int, default=None, help="hidden width (default 256)")
    p.add_argument("--layers", type=int, default=None, help="graph layers L (default 4)")
    p.add_argument("--max-query", type=int, default=None, help="question token cap (default 25)")
    p.add_argument("--scalar-question-gate", action="store_true")
    p.add_argument("--candidate-scoring", choices=["node_softmax", "max_logit"], default="node_softmax")
    _graph_flags(p)
    _ablation_flags(p)
    _embedding_flags(p)


def _train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--batch", type=int, default=16)
    p.add_argument("--lr", type=float, default=2e-4)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=5, help="early-stopping patience; 0 disables")
    p.add_argument("--clip-norm", type=float, default=None)
    p.add_argument("--dev", type=Path, help="dev set for early stopping and reporting")
    p.add_argument("--metrics", type=Path, help="write per-epoch JSON lines here (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pathrgcn",
        description="Path-based entity graphs and a question-gated relational GCN for multi-hop QA.",
    )
    sub = parser.add_subparsers(dest="command", metavar="command")

    p = sub.add_parser("ingest", help="tokenise samples and detect mentions")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    _common(p)

    p = sub.add_parser("build-graph", help="extract paths and build entity graphs")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--no-reasoning-entities", action="store_true")
    _graph_flags(p)
    _common(p)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="checkpoint path")
    _model_flags(p)
    _train_flags(p)
    _common(p)

    p = sub.add_parser("eval", help="accuracy of a checkpoint")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--out", type=Path, help="write the report as JSON")
    _graph_flags(p)
    _ablation_flags(p)
    _embedding_flags(p)
    _common(p)

    p = sub.add_parser("analyze", help="accuracy per document-count or hop-count bucket")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--bucket", choices=["doc_count", "hop_count"], default="doc_count")
    p.add_argument("--out", type=Path)
    _graph_flags(p)
    _embedding_flags(p)
    _common(p)

    p = sub.add_parser("sweep-layers", help="train one model per layer count")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--L-values", dest="l_values", default="1,2,3,4,5,6")
    p.add_argument("--out", type=Path)
    _model_flags(p)
    _train_flags(p)
    _common(p)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    p.add_argument("--input", type=Path, help="sample file (first record used); default: built-in fixture")
    p.add_argument("--d", type=int, default=8)
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--embed-dim", type=int, default=8)
    p.add_argument("--max-docs", type=int, default=3)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.add_argument("--tol", type=float, default=1e-3)
    _common(p)

    p = sub.add_parser("synth", help="generate a synthetic multi-hop corpus")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--candidates", type=int, default=5)
    p.add_argument("--hop-depth", type=int, default=2)
    p.add_argument("--distractor-docs", type=int, default=3)
    p.add_argument("--vocab-size", type=int, default=2000)
    p.add_argument("--no-strict", action="store_true")
    p.add_argument("--decoy-chain", action="store_true", help="add a same-length chain to a wrong candidate")
    p.add_argument("--out", type=Path, help="default: synth_<seed>.jsonl in the working directory")
    _common(p)
    return parser


# -- configuration helpers ------------------------------------------------------------------
def _pick(value, preset: dict, key: str, default):
    if value is not None:
        return value
    return preset.get(key, default)


def _ablation(args) -> AblationFlags:
    return AblationFlags(
        use_reasoning_entities=not args.no_reasoning_entities,
        use_question_gate=not getattr(args, "no_question_gate", False),
        use_question_attention_pooling=not getattr(args, "no_question_attention", False),
        edge_mode=EdgeMode(args.edge_mode or "full"),
    )


def _embedder(args, default_dim: int = 300) -> EmbeddingProvider:
    if getattr(args, "embeddings", None):
        vectors = load_word_vectors(args.embeddings, args.embed_dim)
        return vectors
    return HashEmbeddings(args.embed_dim or default_dim)


def _model_config(args, embed_dim: int) -> ModelConfig:
    preset = PRESETS.get(args.preset or "", {})
    return ModelConfig(
        d=_pick(args.d, preset, "d", 256),
        L=_pick(args.layers, preset, "layers", 4),
        max_nodes=_pick(args.max_nodes, preset, "max_nodes", 600),
        max_query_len=_pick(args.max_query, preset, "max_query", 25),
        max_docs=_pick(args.max_docs, preset, "max_docs", 2),
        embed_dim=embed_dim,
        scalar_question_gate=args.scalar_question_gate,
        candidate_scoring=args.candidate_scoring,
        init_seed=args.seed,
        ablation=_ablation(args),
    )


def _train_config(args, model: ModelConfig) -> TrainConfig:
    return TrainConfig(
        batch_size=args.batch,
        learning_rate=args.lr,
        epochs=args.epochs,
        seed=args.seed,
        patience=args.patience or None,
        clip_norm=args.clip_norm,
        model=model,
    )


class _Metrics:
    def __init__(self, path: Path | None):
        self.fh = open(path, "w", encoding="utf-8") if path else sys.stdout
        self.own = path is not None

    def __call__(self, record: dict) -> None:
        self.fh.write(json.dumps(record, sort_keys=True) + "\n")
        self.fh.flush()

    def close(self) -> None:
        if self.own:
            self.fh.close()


def _echo(command: str, config: dict) -> None:
    logger.info("%s %s", command, json.dumps(config, sort_keys=True, default=str))


# -- commands ------------------------------------------------------------------------------
def cmd_ingest(args) -> int:
    records = read_records(args.input)
    _echo("ingest", {"input": str(args.input), "records": len(records)})
    out = [tokenized_to_record(tokenize_sample(parse_sample(r))) for r in records]
    write_records(args.out, out)
    logger.info("wrote %d tokenized samples to %s", len(out), args.out)
    return 0


def cmd_build_graph(args) -> int:
    max_docs = args.max_docs or 2
    max_nodes = args.max_nodes or 600
    _echo("build-graph", {"input": str(args.input), "max_docs": max_docs, "max_nodes": max_nodes})
    out = []
    for rec in read_records(args.input):
        tok = tokenized_from_record(rec)
        ex = build_example(tok, max_docs, max_nodes, not args.no_reasoning_entities)
        out.append(example_to_record(ex, tok.sample))
    write_records(args.out, out)
    logger.info("wrote %d graphs to %s", len(out), args.out)
    return 0


def cmd_train(args) -> int:
    embedder = _embedder(args)
    config = _train_config(args, _model_config(args, embedder.dim))
    _echo("train", config.to_dict())
    data = read_records(args.input)
    dev = read_records(args.dev) if args.dev else None
    sink = _Metrics(args.metrics)
    try:
        result = train(data, config, embedder, dev=dev, metrics=sink)
    finally:
        sink.close()
    extra = {
        "train_config": config.to_dict(),
        "loss_trace": result.loss_trace,
        "dev_trace": result.dev_trace,
        "skipped": result.skipped,
        "best_epoch": result.best_epoch,
    }
    save_checkpoint(args.out, result.model, extra)
    logger.info("checkpoint written to %s", args.out)
    return 0


def _restricted(model: GatedRGCN, args) -> GatedRGCN:
    cfg = model.config
    if args.max_docs:
        cfg = replace(cfg, max_docs=args.max_docs)
    if args.max_nodes:
        cfg = replace(cfg, max_nodes=args.max_nodes)
    return model if cfg is model.config else GatedRGCN(cfg, model.params)


def _eval_embedder(args, model: GatedRGCN) -> EmbeddingProvider:
    embedder = _embedder(args, model.config.embed_dim)
    if embedder.dim != model.config.embed_dim:
        raise DataError(f"embedding width {embedder.dim} differs from the checkpoint's {model.config.embed_dim}")
    return embedder


def _write_report(report: dict, out: Path | None) -> None:
    text = json.dumps(report, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_eval(args) -> int:
    model = _restricted(load_checkpoint(args.checkpoint), args)
    flags = _ablation(args)
    _echo("eval", {"checkpoint": str(args.checkpoint), "flags": flags.to_dict()})
    report = evaluate(read_records(args.input), model, flags, _eval_embedder(args, model), threads=args.threads)
    _write_report({"split": "eval", **report.to_dict()}, args.out)
    return 0


def cmd_analyze(args) -> int:
    model = _restricted(load_checkpoint(args.checkpoint), args)
    _echo("analyze", {"checkpoint": str(args.checkpoint), "bucket": args.bucket})
    report = analyze_by_bucket(read_records(args.input), model, args.bucket, _eval_embedder(args, model))
    _write_report({"split": "eval", "bucket": args.bucket, **report.to_dict()}, args.out)
    return 0


def cmd_sweep(args) -> int:
    try:
        values = [int(v) for v in args.l_values.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--L-values must be comma-separated integers, got {args.l_values!r}") from None
    if not values or min(values) < 1:
        raise UsageError("--L-values needs integers >= 1")
    if not args.dev:
        raise UsageError("sweep-layers needs --dev")
    embedder = _embedder(args)
    config = _train_config(args, _model_config(args, embedder.dim))
    _echo("sweep-layers", {"L_values": values, **config.to_dict()})
    sink = _Metrics(args.metrics)
    try:
        result = sweep_layers(read_records(args.input), config, values, read_records(args.dev), embedder, sink)
    finally:
        sink.close()
    if args.out:
        Path(args.out).write_text(json.dumps({str(k): v for k, v in result.items()}, sort_keys=True) + "\n")
    return 0


def cmd_gradcheck(args) -> int:
    record = read_records(args.input)[0] if args.input else GRADCHECK_SAMPLE
    config = ModelConfig(d=args.d, L=args.layers, embed_dim=args.embed_dim, max_docs=args.max_docs, init_seed=args.seed)
    _echo("gradcheck", {**config.to_dict(), "epsilon": args.epsilon})
    examples = load_examples([record], config.max_docs, config.max_nodes)
    enc = encode_example(examples[0], HashEmbeddings(config.embed_dim), config)
    model = GatedRGCN(config)
    worst = grad_check(lambda: model.loss(enc), model.params, args.epsilon)
    ok = worst < args.tol
    print(json.dumps({"max_relative_error": worst, "tolerance": args.tol, "parameters": model.parameter_count(),
                      "nodes": enc.graph.size, "question_tokens": int(enc.question.shape[0]), "pass": ok}))
    return 0 if ok else 1


def cmd_synth(args) -> int:
    spec = SynthSpec(
        num_samples=args.samples,
        num_candidates=args.candidates,
        hop_depth=args.hop_depth,
        num_distractor_docs=args.distractor_docs,
        vocab_size=args.vocab_size,
        seed=args.seed,
        strict=not args.no_strict,
        decoy_chain=args.decoy_chain,
    )
    out = args.out or Path(f"synth_{args.seed}.jsonl")
    _echo("synth", {"out": str(out), "max_docs_needed": spec.max_docs, **spec.__dict__})
    meta = write_corpus(out, generate_corpus(spec), spec)
    logger.info("wrote %d samples to %s (metadata %s)", spec.num_samples, out, meta)
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "eval": cmd_eval,
    "analyze": cmd_analyze,
    "sweep-layers": cmd_sweep,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, DataError, UnanswerableError, CheckpointError, VocabularyError,
            FileNotFoundError, IsADirectoryError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())
