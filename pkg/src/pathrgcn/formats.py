"""File formats and the sample -> graph pipeline.

Three line-delimited JSON layouts are used, one record per line:

raw
    WikiHop fields ``id``, ``query``, ``supports``, ``candidates``, ``answer``.
    A single JSON array of such records (the public distribution layout) is
    accepted as well.
tokenized
    ``{"kind": "tokenized", "sample": <raw record>, "docs": [...], "mentions": [...]}``
    where each doc is ``{"tokens", "sentences"}`` and ``mentions`` holds one
    list of mention dicts per doc.
graph
    A tokenized record plus ``"graph": {nodes, edges, paths}``.

Every reader accepts any later stage, so ``train`` can be pointed at a raw
file as well as at the output of ``build-graph``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

from .corpus import (
    Mention,
    ParseError,
    Sample,
    TokenizedDoc,
    collect_mentions,
    parse_sample,
    serialize_sample,
    tokenize_and_split,
)
from .graph import EntityGraph, drop_reasoning, graph_from_mentions, truncate_graph
from .model import Example

__all__ = [
    "Tokenized",
    "read_records",
    "write_records",
    "tokenize_sample",
    "tokenized_to_record",
    "tokenized_from_record",
    "build_example",
    "example_to_record",
    "example_from_record",
    "load_examples",
]


def read_records(path: str | Path) -> list[dict]:
    """JSON Lines, or one JSON array."""
    text = Path(path).read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        try:
            data = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc})") from exc
        if not all(isinstance(r, dict) for r in data):
            raise ParseError(f"{path}: array entries must be objects")
        return data
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
        if not isinstance(rec, dict):
            raise ParseError(f"{path}:{lineno}: expected an object")
        out.append(rec)
    return out


def write_records(path: str | Path, records: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, ensure_ascii=False))
            fh.write("\n")


# -- tokenized stage ----------------------------------------------------------------
@dataclass
class Tokenized:
    sample: Sample
    docs: list[TokenizedDoc]
    mentions: list[list[Mention]]


def tokenize_sample(sample: Sample) -> Tokenized:
    docs = [tokenize_and_split(text, k) for k, text in enumerate(sample.supports)]
    return Tokenized(sample, docs, collect_mentions(sample, docs))


def tokenized_to_record(tok: Tokenized) -> dict:
    return {
        "kind": "tokenized",
        "sample": serialize_sample(tok.sample),
        "docs": [
            {"tokens": list(d.tokens), "sentences": [list(s) for s in d.sentence_spans]}
            for d in tok.docs
        ],
        "mentions": [[m.to_dict() for m in doc] for doc in tok.mentions],
    }


def _docs_from_record(rec: Mapping) -> list[TokenizedDoc]:
    return [
        TokenizedDoc(k, tuple(d["tokens"]), tuple((int(a), int(b)) for a, b in d["sentences"]))
        for k, d in enumerate(rec["docs"])
    ]


def tokenized_from_record(rec: Mapping) -> Tokenized:
    if "docs" not in rec:
        return tokenize_sample(parse_sample(rec))
    try:
        sample = parse_sample(rec["sample"])
        docs = _docs_from_record(rec)
        mentions = [[Mention.from_dict(m) for m in doc] for doc in rec["mentions"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed tokenized record: {exc}") from exc
    return Tokenized(sample, docs, mentions)


# -- graph stage ----------------------------------------------------------------------
def build_example(
    tok: Tokenized,
    max_docs: int = 2,
    max_nodes: int = 600,
    use_reasoning_entities: bool = True,
) -> Example:
    graph = graph_from_mentions(tok.mentions, max_docs, max_nodes, use_reasoning_entities)
    s = tok.sample
    return Example(s.id, graph, s.question.tokens, s.candidates, s.answer, tok.docs)


def example_to_record(example: Example, sample: Sample) -> dict:
    rec = tokenized_to_record(Tokenized(sample, example.docs, []))
    rec.pop("mentions")
    rec["kind"] = "graph"
    rec["graph"] = example.graph.to_dict()
    return rec


def example_from_record(rec: Mapping) -> Example:
    try:
        sample = parse_sample(rec["sample"])
        graph = EntityGraph.from_dict(rec["graph"])
        docs = _docs_from_record(rec)
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"malformed graph record: {exc}") from exc
    return Example(sample.id, graph, sample.question.tokens, sample.candidates, sample.answer, docs)


def _adapt(example: Example, max_nodes: int, use_reasoning_entities: bool) -> Example:
    graph = example.graph
    if not use_reasoning_entities:
        graph = drop_reasoning(graph)
    graph = truncate_graph(graph, max_nodes)
    if graph is example.graph:
        return example
    return Example(example.id, graph, example.question_tokens, example.candidates, example.answer, example.docs)


def load_examples(
    source: str | Path | Sequence[Mapping] | Sequence[Sample],
    max_docs: int = 2,
    max_nodes: int = 600,
    use_reasoning_entities: bool = True,
) -> list[Example]:
    """Examples from a file path, parsed samples or records of any stage.

    Graph records are reused as stored (reasoning nodes are removed when
    ``use_reasoning_entities`` is false); earlier stages are built here.
    """
    items = read_records(source) if isinstance(source, (str, Path)) else list(source)
    out = []
    for item in items:
        if isinstance(item, Sample):
            tok = tokenize_sample(item)
        elif "graph" in item:
            out.append(_adapt(example_from_record(item), max_nodes, use_reasoning_entities))
            continue
        else:
            tok = tokenized_from_record(item)
        out.append(build_example(tok, max_docs, max_nodes, use_reasoning_entities))
    return out


def iter_samples(records: Iterable[Mapping]) -> Iterator[Sample]:
    for rec in records:
        yield parse_sample(rec["sample"] if "sample" in rec else rec)
