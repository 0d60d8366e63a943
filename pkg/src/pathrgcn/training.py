"""Adam training loop, evaluation, bucketed analysis and the layer sweep."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .corpus import Sample
from .embeddings import EmbeddingProvider
from .formats import load_examples
from .graph import drop_reasoning, truncate_graph
from .model import (
    AblationFlags,
    DataError,
    EncodedExample,
    Example,
    GatedRGCN,
    ModelConfig,
    UnanswerableError,
    encode_example,
    init_params,
)

logger = logging.getLogger(__name__)

__all__ = [
    "TrainConfig",
    "AdamState",
    "EvalReport",
    "TrainResult",
    "adam_step",
    "prepare",
    "train",
    "evaluate",
    "analyze_by_bucket",
    "doc_count_bucket",
    "hop_count_bucket",
    "sweep_layers",
]

MetricsSink = Callable[[dict], None]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    learning_rate: float = 2e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    epochs: int = 30
    seed: int = 0
    patience: int | None = 5
    clip_norm: float | None = None
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k != "model"}
        d["model"] = self.model.to_dict()
        return d


# -- optimiser -------------------------------------------------------------------------
@dataclass
class AdamState:
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: ad.ParameterSet | Iterable[ad.Parameter],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> AdamState:
    """One bias-corrected Adam update, in place on ``params``.

    Parameters absent from ``grads`` see a zero gradient.
    """
    lr, b1, b2, eps = config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps
    state.t += 1
    t = state.t
    for p in params:
        if not p.trainable:
            continue
        g = grads.get(p.name)
        g = np.zeros_like(p.data) if g is None else np.asarray(g, dtype=np.float64)
        if g.shape != p.data.shape:
            raise ad.DimensionError(f"gradient for {p.name!r} has shape {g.shape}, expected {p.data.shape}")
        m = state.m.get(p.name, np.zeros_like(p.data))
        v = state.v.get(p.name, np.zeros_like(p.data))
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[p.name], state.v[p.name] = m, v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


# -- data preparation --------------------------------------------------------------------
def _apply_flags(example: Example, config: ModelConfig) -> Example:
    graph = example.graph
    if not config.ablation.use_reasoning_entities:
        graph = drop_reasoning(graph)
    graph = truncate_graph(graph, config.max_nodes)
    if graph is example.graph:
        return example
    return replace(example, graph=graph)


def prepare(
    dataset: Sequence[Example] | Sequence[Sample] | Sequence[Mapping],
    config: ModelConfig,
) -> list[Example]:
    """Examples consistent with ``config`` (graph ablation and truncation applied)."""
    items = list(dataset)
    if items and all(isinstance(x, Example) for x in items):
        return [_apply_flags(x, config) for x in items]
    return load_examples(items, config.max_docs, config.max_nodes, config.ablation.use_reasoning_entities)


def _encode_all(
    examples: Sequence[Example], embedder: EmbeddingProvider, config: ModelConfig
) -> tuple[list[EncodedExample | None], dict[str, str]]:
    encoded: list[EncodedExample | None] = []
    reasons: dict[str, str] = {}
    for ex in examples:
        try:
            enc = encode_example(ex, embedder, config)
        except (UnanswerableError, DataError, ValueError) as exc:
            reasons[ex.id] = _reason(exc)
            encoded.append(None)
            continue
        if ex.answer is not None and not enc.candidate_index.get(ex.answer):
            reasons[ex.id] = "answer_not_in_graph"
        encoded.append(enc)
    return encoded, reasons


def _reason(exc: Exception) -> str:
    if isinstance(exc, UnanswerableError):
        return "unanswerable"
    if isinstance(exc, DataError):
        return "bad_sample"
    return "graph_error"


# -- training ------------------------------------------------------------------------------
@dataclass
class TrainResult:
    model: GatedRGCN
    loss_trace: list[float]
    dev_trace: list[float]
    skipped: dict[str, int]
    best_epoch: int | None = None


def _global_clip(grads: dict[str, np.ndarray], max_norm: float) -> None:
    norm = np.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        scale = max_norm / norm
        for k in grads:
            grads[k] = grads[k] * scale


def train(
    dataset: Sequence,
    config: TrainConfig,
    embedder: EmbeddingProvider,
    dev: Sequence | None = None,
    metrics: MetricsSink | None = None,
) -> TrainResult:
    """Mini-batch Adam on the mean per-sample cross-entropy.

    Each epoch reshuffles with a generator seeded from ``config.seed``.  With a
    dev set the parameters of the best dev epoch are kept, and training stops
    after ``patience`` epochs without improvement.  Samples whose answer has
    no node in the graph are skipped and counted.
    """
    mcfg = config.model
    examples = prepare(dataset, mcfg)
    if not examples:
        raise ValueError("training set is empty")
    init_seq, shuffle_seq = np.random.SeedSequence(config.seed).spawn(2)
    model = GatedRGCN(mcfg, init_params(mcfg, seed=int(init_seq.generate_state(1)[0])))
    rng = np.random.default_rng(shuffle_seq)

    encoded, reasons = _encode_all(examples, embedder, mcfg)
    usable = [e for e in encoded if e is not None and e.example.id not in reasons and e.example.answer is not None]
    skipped: dict[str, int] = {}
    for r in reasons.values():
        skipped[r] = skipped.get(r, 0) + 1
    unlabeled = sum(1 for e in encoded if e is not None and e.example.answer is None)
    if unlabeled:
        skipped["unlabeled"] = unlabeled
    if not usable:
        raise ValueError("no trainable samples (all skipped)")

    dev_encoded = None
    if dev is not None:
        dev_encoded = _encode_all(prepare(dev, mcfg), embedder, mcfg)

    state = AdamState()
    loss_trace: list[float] = []
    dev_trace: list[float] = []
    best = (-1.0, None, None)  # accuracy, epoch, params
    stale = 0
    for epoch in range(config.epochs):
        order = rng.permutation(len(usable))
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [usable[k] for k in order[start: start + config.batch_size]]
            model.params.zero_grad()
            for enc in batch:
                value = model.loss(enc)
                ad.backward(value)
                total += float(value.data)
            grads = {p.name: p.grad / len(batch) for p in model.params if p.grad is not None}
            if config.clip_norm is not None:
                _global_clip(grads, config.clip_norm)
            adam_step(model.params, grads, state, config)
        model.params.zero_grad()
        epoch_loss = total / len(usable)
        loss_trace.append(epoch_loss)
        record = {"epoch": epoch + 1, "split": "train", "loss": epoch_loss}
        if dev_encoded is not None:
            acc = _evaluate_encoded(model, *dev_encoded).accuracy
            dev_trace.append(acc)
            record["dev_accuracy"] = acc
            if acc > best[0]:
                best = (acc, epoch + 1, model.params.state())
                stale = 0
            else:
                stale += 1
        logger.info("epoch %d loss %.6f", epoch + 1, epoch_loss)
        if metrics is not None:
            metrics(record)
        if config.patience is not None and dev_encoded is not None and stale >= config.patience:
            break
    if best[2] is not None:
        model.params.load_state(best[2])
    return TrainResult(model, loss_trace, dev_trace, skipped, best[1])


# -- evaluation ----------------------------------------------------------------------------
@dataclass
class EvalReport:
    """``accuracy = correct / scored``.

    Unanswerable samples count as scored and wrong; samples without a gold
    label are not scored.  Both are listed in ``skipped`` by reason.
    """

    accuracy: float
    correct: int
    scored: int
    per_bucket: dict[str, tuple[int, float]] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)
    predictions: dict[str, str | None] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "correct": self.correct,
            "scored": self.scored,
            "per_bucket": {k: {"count": c, "accuracy": a} for k, (c, a) in self.per_bucket.items()},
            "skipped": dict(self.skipped),
        }


def _predict_one(model: GatedRGCN, enc: EncodedExample | None) -> str | None:
    if enc is None:
        return None
    try:
        best, _ = model.predict(enc)
    except UnanswerableError:
        return None
    return best


def _evaluate_encoded(
    model: GatedRGCN,
    encoded: Sequence[EncodedExample | None],
    reasons: Mapping[str, str],
    examples: Sequence[Example] | None = None,
    bucket_fn: Callable[[Example], str] | None = None,
    threads: int = 1,
) -> EvalReport:
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            preds = list(pool.map(lambda e: _predict_one(model, e), encoded))
    else:
        preds = [_predict_one(model, e) for e in encoded]
    if examples is None:
        examples = [e.example for e in encoded if e is not None]
        preds = [p for p, e in zip(preds, encoded) if e is not None]
    skipped: dict[str, int] = {}
    correct = scored = 0
    buckets: dict[str, list[int]] = {}
    predictions = {}
    for ex, pred in zip(examples, preds):
        predictions[ex.id] = pred
        if ex.answer is None:
            skipped["unlabeled"] = skipped.get("unlabeled", 0) + 1
            continue
        reason = reasons.get(ex.id) or (None if pred is not None else "unanswerable")
        if reason is not None:
            skipped[reason] = skipped.get(reason, 0) + 1
        hit = int(pred is not None and pred == ex.answer)
        correct += hit
        scored += 1
        if bucket_fn is not None:
            b = buckets.setdefault(bucket_fn(ex), [0, 0])
            b[0] += 1
            b[1] += hit
    per_bucket = {k: (n, c / n) for k, (n, c) in buckets.items()}
    return EvalReport(correct / scored if scored else 0.0, correct, scored, per_bucket, skipped, predictions)


def _resolve_model(checkpoint, flags: AblationFlags | None) -> GatedRGCN:
    from .model import load_checkpoint

    model = checkpoint if isinstance(checkpoint, GatedRGCN) else load_checkpoint(checkpoint)
    if flags is not None and flags != model.config.ablation:
        model = GatedRGCN(replace(model.config, ablation=flags), model.params)
    return model


def evaluate(
    dataset: Sequence,
    checkpoint,
    flags: AblationFlags | None = None,
    embedder: EmbeddingProvider | None = None,
    bucket_fn: Callable[[Example], str] | None = None,
    threads: int = 1,
) -> EvalReport:
    """Accuracy of the argmax candidate.  ``checkpoint`` is a model or a path."""
    from .embeddings import HashEmbeddings

    model = _resolve_model(checkpoint, flags)
    embedder = embedder or HashEmbeddings(model.config.embed_dim)
    examples = prepare(dataset, model.config)
    encoded, reasons = _encode_all(examples, embedder, model.config)
    return _evaluate_encoded(model, encoded, reasons, examples, bucket_fn, threads)


DOC_BUCKETS = ("1-4", "5-8", "9-12", "13-16", ">16")


def doc_count_bucket(example: Example) -> str:
    n = example.num_docs
    if n > 16:
        return ">16"
    for label in DOC_BUCKETS[:-1]:
        lo, hi = (int(x) for x in label.split("-"))
        if lo <= n <= hi:
            return label
    raise ValueError(f"sample {example.id} has no documents")


def hop_count_bucket(example: Example) -> str:
    """Fewest documents spanned by any extracted path; ``inf`` without paths."""
    g = example.graph
    if not g.paths:
        return "inf"
    return str(min(len({g.nodes[k].doc_id for k in p}) for p in g.paths))


_BUCKET_FNS = {"doc_count": doc_count_bucket, "hop_count": hop_count_bucket}


def analyze_by_bucket(
    dataset: Sequence,
    checkpoint,
    bucket_fn: str | Callable[[Example], str] = "doc_count",
    embedder: EmbeddingProvider | None = None,
    flags: AblationFlags | None = None,
) -> EvalReport:
    fn = _BUCKET_FNS[bucket_fn] if isinstance(bucket_fn, str) else bucket_fn
    return evaluate(dataset, checkpoint, flags, embedder, bucket_fn=fn)


def sweep_layers(
    dataset: Sequence,
    config: TrainConfig,
    L_values: Sequence[int],
    dev: Sequence,
    embedder: EmbeddingProvider,
    metrics: MetricsSink | None = None,
) -> dict[int, dict]:
    """Train one model per ``L`` from the same seed; report dev accuracy and size."""
    out = {}
    for L in L_values:
        if L < 1:
            raise ValueError("every L must be >= 1")
        cfg = replace(config, model=replace(config.model, L=L))
        result = train(dataset, cfg, embedder, dev=dev)
        report = evaluate(dev, result.model, embedder=embedder)
        out[L] = {
            "accuracy": report.accuracy,
            "parameters": result.model.parameter_count(),
            "epochs": len(result.loss_trace),
        }
        if metrics is not None:
            metrics({"split": "dev", "L": L, **out[L]})
    return out
