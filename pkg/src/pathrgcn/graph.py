"""Reasoning-path extraction and the typed entity graph built from it.

A path starts at a subject mention, moves through reasoning mentions and
stops at the first candidate mention it reaches.  Two moves are allowed:

* a co-sentence hop between two mentions of the same sentence, and
* a document jump between mentions with equal entity keys in different
  documents.

Nodes of the graph are mentions: every subject and candidate mention, plus the
reasoning mentions lying on at least one extracted path.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import Mention, MentionKind

__all__ = [
    "EdgeType",
    "EdgeMode",
    "ReasoningPath",
    "EntityGraph",
    "extract_paths",
    "build_entity_graph",
    "classify_edges",
    "truncate_graph",
    "drop_reasoning",
    "relation_adjacency",
    "graph_from_mentions",
]


class EdgeType(Enum):
    SUBJECT_REASONING_SAME_SENTENCE = 0
    REASONING_ADJACENT_ON_PATH = 1
    REASONING_CANDIDATE_SAME_SENTENCE = 2
    SAME_CANDIDATE = 3
    SAME_DOCUMENT = 4
    FALLBACK = 5

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "EdgeType":
        return _BY_LABEL[label]


_LABELS = {
    EdgeType.SUBJECT_REASONING_SAME_SENTENCE: "SubjectReasoningSameSentence",
    EdgeType.REASONING_ADJACENT_ON_PATH: "ReasoningAdjacentOnPath",
    EdgeType.REASONING_CANDIDATE_SAME_SENTENCE: "ReasoningCandidateSameSentence",
    EdgeType.SAME_CANDIDATE: "SameCandidate",
    EdgeType.SAME_DOCUMENT: "SameDocument",
    EdgeType.FALLBACK: "Fallback",
}
_BY_LABEL = {v: k for k, v in _LABELS.items()}


class EdgeMode(str, Enum):
    """How the six relations are presented to the model.

    ``full``: all six.  ``reduced``: the two edge kinds of a bi-directional
    attention entity graph (within-document and cross-document, i.e. same
    entity) plus the complement edge.  ``single``: one undifferentiated
    relation on every connected pair.
    """

    FULL = "full"
    REDUCED = "reduced"
    SINGLE = "single"


@dataclass(frozen=True)
class ReasoningPath:
    steps: tuple[Mention, ...]
    candidate_key: str

    @property
    def docs(self) -> frozenset[int]:
        return frozenset(m.doc_id for m in self.steps)

    @property
    def reasoning_steps(self) -> tuple[Mention, ...]:
        return tuple(m for m in self.steps if m.kind is MentionKind.REASONING)

    def __len__(self) -> int:
        return len(self.steps)


@dataclass
class EntityGraph:
    nodes: list[Mention]
    relations: dict[tuple[int, int], frozenset[EdgeType]] = field(default_factory=dict)
    paths: list[tuple[int, ...]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return len(self.nodes)

    @property
    def edges(self) -> list[tuple[int, int, EdgeType]]:
        """Directed triples, both directions of every relation."""
        out = []
        for (i, j), rels in sorted(self.relations.items()):
            for r in sorted(rels, key=lambda e: e.value):
                out.append((i, j, r))
                out.append((j, i, r))
        out.sort(key=lambda e: (e[0], e[1], e[2].value))
        return out

    def relation_set(self, i: int, j: int) -> frozenset[EdgeType]:
        if i == j:
            return frozenset()
        return self.relations.get((min(i, j), max(i, j)), frozenset())

    def neighbors(self, i: int) -> list[int]:
        return [j for j in range(self.size) if j != i and self.relation_set(i, j)]

    def index_of(self, mention: Mention) -> int:
        return self.nodes.index(mention)

    def kind_indices(self, kind: MentionKind) -> list[int]:
        return [k for k, m in enumerate(self.nodes) if m.kind is kind]

    def candidate_nodes(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = defaultdict(list)
        for k, m in enumerate(self.nodes):
            if m.kind is MentionKind.CANDIDATE:
                out[m.entity_key].append(k)
        return dict(out)

    def to_dict(self) -> dict:
        return {
            "nodes": [m.to_dict() for m in self.nodes],
            "edges": [[i, j, r.label] for i, j, r in self.edges],
            "paths": [list(p) for p in self.paths],
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "EntityGraph":
        nodes = [Mention.from_dict(n) for n in d["nodes"]]
        rels: dict[tuple[int, int], set[EdgeType]] = defaultdict(set)
        for i, j, label in d["edges"]:
            if i != j:
                rels[(min(i, j), max(i, j))].add(EdgeType.from_label(label))
        return cls(
            nodes,
            {k: frozenset(v) for k, v in rels.items()},
            [tuple(int(x) for x in p) for p in d.get("paths", [])],
        )


# -- path extraction ----------------------------------------------------------------
def _mention_index(mentions: Sequence[Sequence[Mention]]):
    flat = [m for doc in mentions for m in doc]
    by_sentence: dict[tuple[int, int], list[int]] = defaultdict(list)
    by_entity: dict[str, list[int]] = defaultdict(list)
    for k, m in enumerate(flat):
        by_sentence[(m.doc_id, m.sentence_index)].append(k)
        if m.kind is not MentionKind.SUBJECT:
            by_entity[m.entity_key].append(k)
    return flat, by_sentence, by_entity


def _successors(k, flat, by_sentence, by_entity):
    """Mentions reachable from mention ``k`` in one move, in a fixed order."""
    m = flat[k]
    nxt = [j for j in by_sentence[(m.doc_id, m.sentence_index)] if j != k]
    if m.kind is MentionKind.REASONING:
        nxt += [j for j in by_entity[m.entity_key] if flat[j].doc_id != m.doc_id]
    return [j for j in nxt if flat[j].kind is not MentionKind.SUBJECT]


def extract_paths(
    mentions: Sequence[Sequence[Mention]], max_docs: int = 2
) -> list[ReasoningPath]:
    """All shortest subject-to-candidate paths touching at most ``max_docs`` documents.

    ``mentions`` holds one list per support document.  A breadth-first search
    runs from every subject mention over states (mention, documents used so
    far); for each (start, candidate mention) pair every path of minimal length
    is returned.
    """
    if max_docs < 1:
        raise ValueError("max_docs must be >= 1")
    flat, by_sentence, by_entity = _mention_index(mentions)
    starts = [k for k, m in enumerate(flat) if m.kind is MentionKind.SUBJECT]
    paths: list[ReasoningPath] = []
    for s in starts:
        origin = (s, frozenset([flat[s].doc_id]))
        level = {origin: 0}
        preds: dict[tuple, list[tuple]] = {origin: []}
        frontier = [origin]
        best: dict[int, int] = {}
        hits: dict[int, list[tuple]] = defaultdict(list)
        depth = 0
        while frontier:
            depth += 1
            nxt_frontier = []
            for state in frontier:
                k, docs = state
                if flat[k].kind is MentionKind.CANDIDATE:
                    continue
                for j in _successors(k, flat, by_sentence, by_entity):
                    nd = docs | {flat[j].doc_id}
                    if len(nd) > max_docs:
                        continue
                    ns = (j, nd)
                    if ns not in level:
                        level[ns] = depth
                        preds[ns] = [state]
                        nxt_frontier.append(ns)
                        if flat[j].kind is MentionKind.CANDIDATE:
                            if j not in best:
                                best[j] = depth
                            if best[j] == depth:
                                hits[j].append(ns)
                    elif level[ns] == depth:
                        preds[ns].append(state)
            frontier = nxt_frontier

        def unwind(state):
            if not preds[state]:
                return [[state[0]]]
            return [p + [state[0]] for prev in preds[state] for p in unwind(prev)]

        for j in sorted(hits):
            found = set()
            for end in hits[j]:
                for seq in unwind(end):
                    found.add(tuple(seq))
            for seq in sorted(found):
                steps = tuple(flat[k] for k in seq)
                paths.append(ReasoningPath(steps, flat[j].entity_key))
    return paths


# -- graph assembly -------------------------------------------------------------------
def build_entity_graph(
    paths: Iterable[ReasoningPath],
    subject_mentions: Iterable[Mention],
    candidate_mentions: Iterable[Mention],
) -> EntityGraph:
    """Nodes are subject + candidate mentions + reasoning mentions on a path.

    Node order is (kind, entity key, document, span), with subjects first.
    """
    paths = list(paths)
    pool = {m.key: m for m in subject_mentions}
    pool.update({m.key: m for m in candidate_mentions})
    for p in paths:
        for m in p.steps:
            pool.setdefault(m.key, m)
    nodes = [pool[k] for k in sorted(pool)]
    index = {m.key: i for i, m in enumerate(nodes)}
    node_paths = sorted({tuple(index[m.key] for m in p.steps) for p in paths})
    return classify_edges(EntityGraph(nodes), node_paths)


def _pair_relations(a: Mention, b: Mention, adjacent: bool) -> set[EdgeType]:
    S, R, C = MentionKind.SUBJECT, MentionKind.REASONING, MentionKind.CANDIDATE
    kinds = {a.kind, b.kind}
    same_sentence = a.doc_id == b.doc_id and a.sentence_index == b.sentence_index
    rels = set()
    if kinds == {S, R} and same_sentence:
        rels.add(EdgeType.SUBJECT_REASONING_SAME_SENTENCE)
    if a.kind is R and b.kind is R and adjacent:
        rels.add(EdgeType.REASONING_ADJACENT_ON_PATH)
    if kinds == {R, C} and same_sentence:
        rels.add(EdgeType.REASONING_CANDIDATE_SAME_SENTENCE)
    if a.kind is C and b.kind is C and a.entity_key == b.entity_key:
        rels.add(EdgeType.SAME_CANDIDATE)
    if a.doc_id == b.doc_id:
        rels.add(EdgeType.SAME_DOCUMENT)
    return rels


def classify_edges(graph: EntityGraph, paths: Iterable[Sequence[int]]) -> EntityGraph:
    """Attach every applicable relation to every node pair.

    Relations 1-5 are independent predicates; a pair satisfying none of them
    gets exactly the fallback relation.
    """
    adjacent = set()
    for p in paths:
        for a, b in zip(p, p[1:]):
            adjacent.add((min(a, b), max(a, b)))
    relations = {}
    n = graph.size
    for i in range(n):
        for j in range(i + 1, n):
            rels = _pair_relations(graph.nodes[i], graph.nodes[j], (i, j) in adjacent)
            relations[(i, j)] = frozenset(rels or {EdgeType.FALLBACK})
    return EntityGraph(list(graph.nodes), relations, [tuple(p) for p in paths])


def _priority(m: Mention) -> int:
    return {MentionKind.CANDIDATE: 0, MentionKind.SUBJECT: 1, MentionKind.REASONING: 2}[m.kind]


def truncate_graph(graph: EntityGraph, max_nodes: int = 600) -> EntityGraph:
    """Keep at most ``max_nodes`` nodes, candidates first, then subjects.

    Paths through a dropped node are dropped, as are reasoning nodes left on
    no path.  Relations among survivors are carried over, except that a path
    adjacency whose paths all vanished is removed (and a pair left with no
    relation falls back).
    """
    if max_nodes < 1:
        raise ValueError("max_nodes must be >= 1")
    if graph.size <= max_nodes:
        return graph
    order = sorted(range(graph.size), key=lambda i: (_priority(graph.nodes[i]), i))
    keep = set(order[:max_nodes])
    paths = [p for p in graph.paths if all(k in keep for k in p)]
    on_path = {k for p in paths for k in p}
    keep = {
        k for k in keep
        if graph.nodes[k].kind is not MentionKind.REASONING or k in on_path
    }
    survivors = sorted(keep)
    remap = {old: new for new, old in enumerate(survivors)}
    adjacent = set()
    for p in paths:
        for a, b in zip(p, p[1:]):
            adjacent.add((min(remap[a], remap[b]), max(remap[a], remap[b])))
    relations = {}
    for (i, j), rels in graph.relations.items():
        if i in remap and j in remap:
            key = (remap[i], remap[j])
            rels = set(rels)
            if key not in adjacent:
                rels.discard(EdgeType.REASONING_ADJACENT_ON_PATH)
            if not rels - {EdgeType.FALLBACK}:
                rels = {EdgeType.FALLBACK}
            relations[key] = frozenset(rels)
    return EntityGraph(
        [graph.nodes[k] for k in survivors],
        relations,
        [tuple(remap[k] for k in p) for p in paths],
    )


def drop_reasoning(graph: EntityGraph) -> EntityGraph:
    """The same graph without reasoning nodes (and hence without paths)."""
    nodes = [m for m in graph.nodes if m.kind is not MentionKind.REASONING]
    return classify_edges(EntityGraph(nodes), [])


def graph_from_mentions(
    mentions: Sequence[Sequence[Mention]],
    max_docs: int = 2,
    max_nodes: int = 600,
    use_reasoning_entities: bool = True,
) -> EntityGraph:
    flat = [m for doc in mentions for m in doc]
    subjects = [m for m in flat if m.kind is MentionKind.SUBJECT]
    candidates = [m for m in flat if m.kind is MentionKind.CANDIDATE]
    paths = extract_paths(mentions, max_docs) if use_reasoning_entities else []
    graph = build_entity_graph(paths, subjects, candidates)
    return truncate_graph(graph, max_nodes)


# -- model-facing view ------------------------------------------------------------
_REDUCED = {
    EdgeType.SUBJECT_REASONING_SAME_SENTENCE: 0,
    EdgeType.REASONING_CANDIDATE_SAME_SENTENCE: 0,
    EdgeType.SAME_DOCUMENT: 0,
    EdgeType.SAME_CANDIDATE: 1,
    EdgeType.FALLBACK: 5,
}


def _mode_relations(graph: EntityGraph, i: int, j: int, mode: EdgeMode) -> set[int]:
    rels = graph.relation_set(i, j)
    if not rels:
        return set()
    if mode is EdgeMode.FULL:
        return {r.value for r in rels}
    if mode is EdgeMode.SINGLE:
        return {0}
    out = set()
    for r in rels:
        if r is EdgeType.REASONING_ADJACENT_ON_PATH:
            same_entity = graph.nodes[i].entity_key == graph.nodes[j].entity_key
            out.add(1 if same_entity else 0)
        else:
            out.add(_REDUCED[r])
    return out


def relation_adjacency(
    graph: EntityGraph, mode: EdgeMode | str = EdgeMode.FULL, num_relations: int = 6
) -> np.ndarray:
    """Stacked normalised adjacency ``A[r, i, j] = [r in R_ij] / |N_i|``.

    Raises ``ValueError`` if a node has no neighbour at all.
    """
    mode = EdgeMode(mode)
    n = graph.size
    adj = np.zeros((num_relations, n, n))
    if n == 1:
        return adj
    for (i, j), _ in graph.relations.items():
        for r in _mode_relations(graph, i, j, mode):
            adj[r, i, j] = 1.0
            adj[r, j, i] = 1.0
    degree = (adj.sum(axis=0) > 0).sum(axis=1)
    if (degree == 0).any():
        raise ValueError(f"isolated node(s) {np.flatnonzero(degree == 0).tolist()}")
    return adj / degree[None, :, None]
