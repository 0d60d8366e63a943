"""Question-gated relational GCN over the entity graph.

Shapes: ``T`` graph nodes, ``M`` question tokens, ``d`` hidden width,
``E`` static embedding width.  All weights act on row vectors (``x @ W + b``)
and one parameter set is shared by every layer of the stack.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, ParameterSet, Tensor
from .corpus import MentionKind, TokenizedDoc
from .embeddings import EmbeddingProvider
from .graph import EdgeMode, EntityGraph, relation_adjacency

__all__ = [
    "CHECKPOINT_FORMAT",
    "CheckpointError",
    "DataError",
    "UnanswerableError",
    "AblationFlags",
    "ModelConfig",
    "Example",
    "EncodedExample",
    "GatedRGCN",
    "init_params",
    "node_inputs",
    "embed_nodes",
    "lstm",
    "encode_question",
    "rgcn_aggregate",
    "combine_update",
    "question_attend",
    "question_gate",
    "layer_gate",
    "gated_rgcn_forward",
    "bidaf_output",
    "candidate_probabilities",
    "loss",
    "save_checkpoint",
    "load_checkpoint",
]

CHECKPOINT_FORMAT = "pathrgcn-checkpoint"
CHECKPOINT_VERSION = 1


class DataError(ValueError):
    """The sample itself is inconsistent (e.g. answer not a candidate)."""


class UnanswerableError(ValueError):
    """The graph gives the model nothing to score."""


class CheckpointError(ValueError):
    pass


class CandidateScoring(str, Enum):
    NODE_SOFTMAX = "node_softmax"
    MAX_LOGIT = "max_logit"


@dataclass(frozen=True)
class AblationFlags:
    use_reasoning_entities: bool = True
    use_question_gate: bool = True
    use_question_attention_pooling: bool = True
    edge_mode: EdgeMode = EdgeMode.FULL

    def __post_init__(self):
        object.__setattr__(self, "edge_mode", EdgeMode(self.edge_mode))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["edge_mode"] = self.edge_mode.value
        return d


@dataclass(frozen=True)
class ModelConfig:
    d: int = 256
    L: int = 4
    max_nodes: int = 600
    max_query_len: int = 25
    embed_dim: int = 300
    num_relations: int = 6
    max_docs: int = 2
    scalar_question_gate: bool = False
    candidate_scoring: CandidateScoring = CandidateScoring.NODE_SOFTMAX
    init_seed: int = 0
    ablation: AblationFlags = field(default_factory=AblationFlags)

    def __post_init__(self):
        if self.d % 2:
            raise ValueError("d must be even (the BiLSTM splits it across directions)")
        if self.L < 1:
            raise ValueError("L must be >= 1")
        object.__setattr__(self, "candidate_scoring", CandidateScoring(self.candidate_scoring))
        if isinstance(self.ablation, Mapping):
            object.__setattr__(self, "ablation", AblationFlags(**self.ablation))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["candidate_scoring"] = self.candidate_scoring.value
        d["ablation"] = self.ablation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        return cls(**dict(d))

    def with_ablation(self, **changes) -> "ModelConfig":
        return replace(self, ablation=replace(self.ablation, **changes))

    def shape_signature(self) -> dict:
        """Fields that determine parameter shapes."""
        return {
            "d": self.d,
            "embed_dim": self.embed_dim,
            "num_relations": self.num_relations,
            "scalar_question_gate": self.scalar_question_gate,
        }


# -- parameters ----------------------------------------------------------------------
def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(config: ModelConfig, seed: int | None = None) -> ParameterSet:
    """Glorot-uniform weights, zero biases (LSTM forget-gate bias 1)."""
    rng = np.random.default_rng(config.init_seed if seed is None else seed)
    d, E, h = config.d, config.embed_dim, config.d // 2
    ps = ParameterSet()
    ps.add(Parameter("proj.W", _glorot(rng, 2 * E, d)))
    ps.add(Parameter("proj.b", np.zeros(d)))
    for direction in ("fwd", "bwd"):
        ps.add(Parameter(f"lstm.{direction}.W", _glorot(rng, E + h, 4 * h)))
        bias = np.zeros(4 * h)
        bias[h: 2 * h] = 1.0
        ps.add(Parameter(f"lstm.{direction}.b", bias))
    for r in range(config.num_relations):
        ps.add(Parameter(f"rgcn.W_r{r}", _glorot(rng, d, d)))
    ps.add(Parameter("rgcn.W_0", _glorot(rng, d, d)))
    ps.add(Parameter("gate.W", _glorot(rng, 2 * d, d)))
    ps.add(Parameter("gate.b", np.zeros(d)))
    ps.add(Parameter("qatt.w", _glorot(rng, 2 * d, 1)))
    ps.add(Parameter("qatt.b", np.zeros(())))
    width = 1 if config.scalar_question_gate else d
    ps.add(Parameter("qgate.W", _glorot(rng, 2 * d, width)))
    ps.add(Parameter("qgate.b", np.zeros(width)))
    ps.add(Parameter("fa.W", _glorot(rng, 3 * d, d)))
    ps.add(Parameter("fa.b", np.zeros(d)))
    ps.add(Parameter("ffn.W1", _glorot(rng, 4 * d, d)))
    ps.add(Parameter("ffn.b1", np.zeros(d)))
    ps.add(Parameter("ffn.W2", _glorot(rng, d, 1)))
    ps.add(Parameter("ffn.b2", np.zeros(1)))
    return ps


# -- prepared inputs --------------------------------------------------------------------
@dataclass
class Example:
    """One sample after graph construction, ready for encoding."""

    id: str
    graph: EntityGraph
    question_tokens: tuple[str, ...]
    candidates: tuple[str, ...]
    answer: str | None
    docs: list[TokenizedDoc]

    @property
    def num_docs(self) -> int:
        return len(self.docs)

    def mention_tokens(self, i: int) -> tuple[str, ...]:
        m = self.graph.nodes[i]
        a, b = m.token_span
        return self.docs[m.doc_id].tokens[a:b]

    def context_tokens(self, i: int) -> tuple[str, ...]:
        m = self.graph.nodes[i]
        return self.docs[m.doc_id].sentence_tokens(m.sentence_index)


@dataclass
class EncodedExample:
    """Numeric view of an :class:`Example` for a fixed embedder and edge mode."""

    example: Example
    features: np.ndarray  # T x 2E
    question: np.ndarray  # M x E
    adjacency: np.ndarray  # R x T x T
    candidate_index: dict[str, list[int]]

    @property
    def graph(self) -> EntityGraph:
        return self.example.graph


def node_inputs(example: Example, embedder: EmbeddingProvider) -> np.ndarray:
    """Per node ``[mean mention-token vector ; mean sentence-token vector]``."""
    rows = []
    for i in range(example.graph.size):
        static = embedder.mean(example.mention_tokens(i))
        context = embedder.mean(example.context_tokens(i))
        rows.append(np.concatenate([static, context]))
    if not rows:
        return np.zeros((0, 2 * embedder.dim))
    return np.stack(rows)


def encode_example(example: Example, embedder: EmbeddingProvider, config: ModelConfig) -> EncodedExample:
    if example.graph.size == 0:
        raise UnanswerableError(f"sample {example.id}: empty graph")
    tokens = example.question_tokens[: config.max_query_len]
    if not tokens:
        raise DataError(f"sample {example.id}: empty question")
    return EncodedExample(
        example=example,
        features=node_inputs(example, embedder),
        question=embedder.matrix(tokens),
        adjacency=relation_adjacency(example.graph, config.ablation.edge_mode, config.num_relations),
        candidate_index=example.graph.candidate_nodes(),
    )


# -- layers --------------------------------------------------------------------------------
def _ones(rows: int, cols: int) -> Tensor:
    return ad.constant(np.ones((rows, cols)))


def embed_nodes(features: np.ndarray | Tensor, params: ParameterSet) -> Tensor:
    """``f_n = [static ; contextual] @ W + b`` (T x d)."""
    return ad.matmul(features, params["proj.W"]) + params["proj.b"]


def lstm(x: Tensor, W: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Single-direction LSTM; rows of the result align with rows of ``x``."""
    steps, _ = x.shape
    h4 = W.shape[1]
    hsz = h4 // 4
    h = ad.constant(np.zeros((1, hsz)))
    c = ad.constant(np.zeros((1, hsz)))
    outs: list[Tensor] = [None] * steps  # type: ignore[list-item]
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    for t in order:
        gates = ad.matmul(ad.concat([x[t: t + 1], h], axis=1), W) + b
        i, f, g, o = ad.split(gates, [hsz] * 4, axis=1)
        c = ad.sigmoid(f) * c + ad.sigmoid(i) * ad.tanh(g)
        h = ad.sigmoid(o) * ad.tanh(c)
        outs[t] = h
    return ad.concat(outs, axis=0)


def encode_question(question: np.ndarray | Tensor, params: ParameterSet) -> Tensor:
    """``p = BiLSTM(q)``: forward and backward states side by side (M x d)."""
    x = ad.tensor(question)
    if x.shape[0] == 0:
        raise DataError("cannot encode an empty question")
    fwd = lstm(x, params["lstm.fwd.W"], params["lstm.fwd.b"])
    bwd = lstm(x, params["lstm.bwd.W"], params["lstm.bwd.b"], reverse=True)
    return ad.concat([fwd, bwd], axis=1)


def rgcn_aggregate(h: Tensor, adjacency: np.ndarray, params: ParameterSet) -> Tensor:
    """``z_i = sum_j sum_{r in R_ij} W_r h_j / |N_i|`` with a pre-normalised adjacency."""
    z = None
    for r in range(adjacency.shape[0]):
        a = adjacency[r]
        if not a.any():
            continue
        term = ad.matmul(ad.matmul(a, h), params[f"rgcn.W_r{r}"])
        z = term if z is None else z + term
    if z is None:
        if h.shape[0] > 1:
            raise ValueError("rgcn_aggregate: graph has no edges")
        z = ad.constant(np.zeros(h.shape))
    return z


def combine_update(h: Tensor, z: Tensor, params: ParameterSet) -> Tensor:
    """``u = W_0 h + z``."""
    return ad.matmul(h, params["rgcn.W_0"]) + z


def question_attend(u: Tensor, p: Tensor, params: ParameterSet, mask: np.ndarray | None = None) -> Tensor:
    """Per-node attention summary of the question (T x d).

    ``w_ij = sigmoid(W_q . [u_i ; p_j] + b_q)``, ``alpha = softmax_j(w)``,
    ``q_i = sum_j alpha_ij p_j``.
    """
    T, d = u.shape
    M = p.shape[0]
    w = params["qatt.w"]
    su = ad.matmul(u, w[:d])
    sp = ad.matmul(p, w[d:])
    scores = ad.sigmoid(ad.matmul(su, _ones(1, M)) + ad.matmul(_ones(T, 1), sp.T) + params["qatt.b"])
    alpha = ad.softmax(scores, axis=1, mask=None if mask is None else mask[None, :])
    return ad.matmul(alpha, p)


def mean_question(u: Tensor, p: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Attention-free stand-in for :func:`question_attend`: the mean of ``p`` on every row."""
    M = p.shape[0]
    weights = np.ones((1, M)) if mask is None else mask[None, :].astype(np.float64)
    weights = weights / weights.sum()
    return ad.matmul(_ones(u.shape[0], 1), ad.matmul(weights, p))


def question_gate(q: Tensor, u: Tensor, params: ParameterSet) -> Tensor:
    """``beta = sigmoid(W_s [q ; u] + b_s)``, ``u' = beta*tanh(q) + (1-beta)*u``."""
    beta = ad.sigmoid(ad.matmul(ad.concat([q, u], axis=1), params["qgate.W"]) + params["qgate.b"])
    if beta.shape[1] != u.shape[1]:
        beta = ad.matmul(beta, _ones(1, u.shape[1]))
    return beta * ad.tanh(q) + (1.0 - beta) * u


def layer_gate(u: Tensor, h: Tensor, params: ParameterSet) -> Tensor:
    """``w = sigmoid(f_g [u ; h])``, ``h' = w*tanh(u) + (1-w)*h``."""
    w = ad.sigmoid(ad.matmul(ad.concat([u, h], axis=1), params["gate.W"]) + params["gate.b"])
    return w * ad.tanh(u) + (1.0 - w) * h


def gated_rgcn_forward(
    f_n: Tensor,
    p: Tensor,
    adjacency: np.ndarray,
    params: ParameterSet,
    config: ModelConfig,
    mask: np.ndarray | None = None,
) -> Tensor:
    flags = config.ablation
    h = f_n
    for _ in range(config.L):
        z = rgcn_aggregate(h, adjacency, params)
        u = combine_update(h, z, params)
        if flags.use_question_gate:
            if flags.use_question_attention_pooling:
                q = question_attend(u, p, params, mask)
            else:
                q = mean_question(u, p, mask)
            u = question_gate(q, u, params)
        h = layer_gate(u, h, params)
    return h


def bidaf_output(h: Tensor, p: Tensor, params: ParameterSet, mask: np.ndarray | None = None) -> Tensor:
    """Bi-directional attention between nodes and question, then a 2-layer scorer.

    Returns one logit per node (shape ``(T,)``).
    """
    T, d = h.shape
    M = p.shape[0]
    rows = np.repeat(np.arange(T), M)
    cols = np.tile(np.arange(M), T)
    hb, pb = h[rows], p[cols]
    pairs = ad.concat([hb, pb, hb * pb], axis=1)
    S = (ad.matmul(pairs, params["fa.W"]) + params["fa.b"]).mean(axis=1).reshape(T, M)
    col_mask = None if mask is None else np.broadcast_to(mask[None, :], (T, M))
    g_n2q = ad.matmul(ad.softmax(S, axis=1, mask=col_mask), p)
    S_max = S if mask is None else S + np.where(col_mask, 0.0, -1e30)
    node_att = ad.softmax(S_max.max(axis=1), axis=0)
    attended = ad.matmul(node_att.reshape(1, T), h)
    g_q2n = ad.matmul(_ones(T, 1), attended)
    G = ad.concat([h, g_n2q, h * g_n2q, h * g_q2n], axis=1)
    hidden = ad.tanh(ad.matmul(G, params["ffn.W1"]) + params["ffn.b1"])
    return (ad.matmul(hidden, params["ffn.W2"]) + params["ffn.b2"]).reshape(T)


def candidate_probabilities(
    logits: Tensor,
    candidate_index: Mapping[str, Sequence[int]],
    candidates: Sequence[str] = (),
    scoring: CandidateScoring | str = CandidateScoring.NODE_SOFTMAX,
) -> tuple[dict[str, Tensor], Tensor]:
    """Per-candidate probability and the softmax it was read from.

    ``node_softmax``: softmax over all candidate nodes, each candidate taking
    the max over its own nodes.  ``max_logit``: max logit per candidate, then a
    softmax over candidates.  Candidates without nodes get probability 0.
    """
    scoring = CandidateScoring(scoring)
    keys = [k for k in candidate_index if candidate_index[k]]
    if not keys:
        raise UnanswerableError("graph has no candidate nodes")
    probs: dict[str, Tensor] = {}
    if scoring is CandidateScoring.NODE_SOFTMAX:
        nodes = [i for k in keys for i in candidate_index[k]]
        dist = ad.softmax(logits[np.asarray(nodes)], axis=0)
        start = 0
        for k in keys:
            n = len(candidate_index[k])
            probs[k] = dist[start] if n == 1 else dist[start: start + n].max(axis=0)
            start += n
    else:
        best = [
            logits[candidate_index[k][0]] if len(candidate_index[k]) == 1
            else logits[np.asarray(candidate_index[k])].max(axis=0)
            for k in keys
        ]
        dist = ad.softmax(ad.concat([b.reshape(1) for b in best], axis=0), axis=0)
        for n, k in enumerate(keys):
            probs[k] = dist[n]
    for c in candidates:
        probs.setdefault(c, ad.constant(0.0))
    return probs, dist


def loss(probs: Mapping[str, Tensor], answer_key: str, floor: float = 1e-12) -> Tensor:
    """Cross-entropy ``-log p(answer)`` with ``p`` floored at ``floor``."""
    if answer_key not in probs:
        raise DataError(f"answer {answer_key!r} is not a candidate")
    p = probs[answer_key]
    if p.op == "leaf" and float(p.data) == 0.0:
        raise UnanswerableError(f"answer {answer_key!r} has no mention in the graph")
    return -ad.log(p, floor=floor)


# -- model wrapper ---------------------------------------------------------------------------
class GatedRGCN:
    """Parameters plus configuration; ``forward`` maps an encoded sample to node logits."""

    def __init__(self, config: ModelConfig, params: ParameterSet | None = None):
        self.config = config
        self.params = params if params is not None else init_params(config)

    def forward(self, enc: EncodedExample) -> Tensor:
        f_n = embed_nodes(enc.features, self.params)
        p = encode_question(enc.question, self.params)
        h = gated_rgcn_forward(f_n, p, enc.adjacency, self.params, self.config)
        return bidaf_output(h, p, self.params)

    def probabilities(self, enc: EncodedExample) -> tuple[dict[str, Tensor], Tensor]:
        return candidate_probabilities(
            self.forward(enc), enc.candidate_index, enc.example.candidates, self.config.candidate_scoring
        )

    def loss(self, enc: EncodedExample) -> Tensor:
        if enc.example.answer is None:
            raise DataError(f"sample {enc.example.id} has no answer")
        probs, _ = self.probabilities(enc)
        return loss(probs, enc.example.answer)

    def predict(self, enc: EncodedExample) -> tuple[str, dict[str, float]]:
        probs, _ = self.probabilities(enc)
        scores = {k: float(v.data) for k, v in probs.items()}
        order = list(enc.example.candidates) or list(scores)
        best = max(order, key=lambda k: (scores.get(k, 0.0), -order.index(k)))
        return best, scores

    def parameter_count(self) -> int:
        return self.params.count()


# -- checkpoints ------------------------------------------------------------------------------
def save_checkpoint(path: str | Path, model: GatedRGCN, extra: Mapping | None = None) -> None:
    """Write parameters and configuration as deterministic JSON."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "extra": dict(extra or {}),
        "params": {
            p.name: {"shape": list(p.shape), "data": p.data.reshape(-1).tolist()}
            for p in model.params
        },
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True))


def load_checkpoint(path: str | Path, expect: ModelConfig | None = None) -> GatedRGCN:
    """Read a checkpoint; with ``expect``, reject any parameter-shape mismatch."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a checkpoint ({exc})") from exc
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: unknown format {doc.get('format')!r}")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {doc.get('version')!r}")
    config = ModelConfig.from_dict(doc["model_config"])
    if expect is not None and expect.shape_signature() != config.shape_signature():
        raise CheckpointError(
            f"{path}: checkpoint config {config.shape_signature()} does not match {expect.shape_signature()}"
        )
    params = init_params(config)
    stored = doc["params"]
    if set(stored) != set(params.names()):
        raise CheckpointError(f"{path}: parameter names differ from the model")
    try:
        params.load_state(
            {k: np.asarray(v["data"], dtype=np.float64).reshape(v["shape"]) for k, v in stored.items()}
        )
    except ad.DimensionError as exc:
        raise CheckpointError(str(exc)) from exc
    return GatedRGCN(config, params)
