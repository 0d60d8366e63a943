"""Seeded multi-hop corpora with a known reasoning chain per sample.

Each sample links ``s -> e_1 -> ... -> e_k -> a`` with one fact sentence per
document.  The link ``e_{k-1} -> e_k`` (``s -> e_1`` when ``k == 1``) uses the
phrase of the query relation; every other link uses a neutral phrase.

With ``decoy_chain`` a wrong candidate ``c'`` gets a chain of the same length
that branches off before ``e_k``: ``... -> e_{k-1} -> u -> c'``, whose branching
link uses a neutral phrase instead of the relation's.  Seen from one hop away the
answer and ``c'`` are indistinguishable; the deciding phrase sits two hops
away.  Candidates not on a chain appear once each, next to an unrelated entity,
in a random document; distractor documents hold such facts or only filler.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import Sample, parse_sample, serialize_sample

__all__ = [
    "VocabularyError",
    "SynthSpec",
    "SynthSample",
    "TEMPLATES",
    "FILLERS",
    "make_vocabulary",
    "render_sentence",
    "render_doc",
    "generate_corpus",
    "oracle_answer",
    "check_labels",
    "write_corpus",
    "read_metadata",
]

# Query relation -> phrase used on the link that decides the answer.
RELATION_TEMPLATES = {
    "located_in_the_administrative_territorial_entity": "{x} is located in {y}.",
    "place_of_burial": "{x} is buried in {y}.",
    "country": "{x} lies within {y}.",
    "founded_by": "{x} was founded by {y}.",
    "named_after": "{x} was named after {y}.",
}
RELATIONS = tuple(RELATION_TEMPLATES)

# Phrases for every other link; none of them signals a relation.
NEUTRAL_TEMPLATES = (
    "{x} borders {y}.",
    "{x} lies near {y}.",
    "{x} belongs to {y}.",
    "{x} is managed by {y}.",
    "{x} is linked to {y}.",
    "{x} is close to {y}.",
)

TEMPLATES = NEUTRAL_TEMPLATES + tuple(RELATION_TEMPLATES.values())

FILLERS = (
    "The weather there is mild for most of the year.",
    "It has a long and quiet history.",
    "Many visitors come every summer.",
    "The area is known for its old stone bridges.",
    "Some records were lost in a fire.",
    "It was rebuilt after the war.",
    "This place appears in several local stories.",
    "Most of the buildings date from a later period.",
)

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


class VocabularyError(ValueError):
    pass


@dataclass(frozen=True)
class SynthSpec:
    num_samples: int = 100
    num_candidates: int = 5
    hop_depth: int = 2
    num_distractor_docs: int = 3
    vocab_size: int = 2000
    seed: int = 0
    strict: bool = True
    decoy_chain: bool = False
    max_fillers: int = 1

    def __post_init__(self):
        if self.num_candidates < 2:
            raise ValueError("num_candidates must be >= 2")
        if self.hop_depth < 1 and self.strict:
            raise ValueError("strict corpora need hop_depth >= 1")
        if self.hop_depth < 0 or self.num_samples < 0 or self.num_distractor_docs < 0:
            raise ValueError("counts must be non-negative")

    @property
    def max_docs(self) -> int:
        """Path document budget that admits the gold chain."""
        return self.hop_depth + 1

    @property
    def words_per_sample(self) -> int:
        entities = 2 + self.hop_depth + 2 * self.num_candidates
        return 2 * entities


@dataclass
class SynthSample:
    sample: Sample
    gold_chain: list[str]
    doc_plan: list[list[list]]
    decoy_chain: list[str] | None = None

    def metadata(self) -> dict:
        return {
            "id": self.sample.id,
            "gold_chain": list(self.gold_chain),
            "doc_plan": self.doc_plan,
            "decoy_chain": self.decoy_chain,
            "num_docs": len(self.doc_plan),
        }


def make_vocabulary(size: int, rng: np.random.Generator) -> list[str]:
    """``size`` distinct capitalised pseudo-words of two or three syllables."""
    capacity = (len(_CONSONANTS) * len(_VOWELS)) ** 2 * (1 + len(_CONSONANTS) * len(_VOWELS))
    if size > capacity:
        raise VocabularyError(f"vocab_size {size} exceeds the generator capacity {capacity}")
    words: set[str] = set()
    out = []
    while len(out) < size:
        n = 2 + int(rng.integers(2))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n))
        if w not in words:
            words.add(w)
            out.append(w.capitalize())
    return out


def render_sentence(item: Sequence) -> str:
    """``["fact", template, x, y]`` or ``["filler", index]``."""
    if item[0] == "fact":
        return TEMPLATES[item[1]].format(x=item[2], y=item[3])
    if item[0] == "filler":
        return FILLERS[item[1]]
    raise ValueError(f"unknown plan item {item!r}")


def render_doc(items: Sequence[Sequence]) -> str:
    return " ".join(render_sentence(it) for it in items)


def _names(rng: np.random.Generator, vocab: Sequence[str], count: int, spec: SynthSpec) -> list[str]:
    need = 2 * count
    if need > len(vocab):
        raise VocabularyError(
            f"each sample needs {need} distinct words but vocab_size is {len(vocab)}; "
            f"use vocab_size >= {need}"
        )
    picks = rng.choice(len(vocab), size=need, replace=False)
    return [f"{vocab[picks[2 * k]]} {vocab[picks[2 * k + 1]]}" for k in range(count)]


def _with_fillers(rng: np.random.Generator, facts: list[list], spec: SynthSpec) -> list[list]:
    items = list(facts)
    count = int(rng.integers(spec.max_fillers + 1))
    for _ in range(count if items else max(count, 1)):
        pos = int(rng.integers(len(items) + 1))
        items.insert(pos, ["filler", int(rng.integers(len(FILLERS)))])
    return items


def _fact(template: str, x: str, y: str) -> list:
    return ["fact", TEMPLATES.index(template), x, y]


def _neutral(rng: np.random.Generator, x: str, y: str) -> list:
    return _fact(NEUTRAL_TEMPLATES[int(rng.integers(len(NEUTRAL_TEMPLATES)))], x, y)


def _chain_docs(rng: np.random.Generator, nodes: Sequence[str], deciding: str) -> list[list]:
    """One single-fact document per link; the second-to-last link uses ``deciding``."""
    docs = []
    for i in range(len(nodes) - 1):
        if i == len(nodes) - 3 or (len(nodes) == 2 and i == 0):
            docs.append([_fact(deciding, nodes[i], nodes[i + 1])])
        else:
            docs.append([_neutral(rng, nodes[i], nodes[i + 1])])
    return docs


def _generate_one(index: int, spec: SynthSpec, vocab: Sequence[str]) -> SynthSample:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, index]))
    N, k = spec.num_candidates, spec.hop_depth
    names = _names(rng, vocab, 2 + k + 2 * N, spec)
    subject, chain = names[0], names[1: 1 + k]
    candidates = names[1 + k: 1 + k + N]
    unrelated = names[1 + k + N: 1 + k + 2 * N]
    branch = names[-1]
    answer = candidates[int(rng.integers(N))]
    relation = RELATIONS[int(rng.integers(len(RELATIONS)))]
    nodes = [subject, *chain, answer]

    docs = _chain_docs(rng, nodes, RELATION_TEMPLATES[relation])
    decoy = None
    if spec.decoy_chain and k >= 1:
        others = [c for c in candidates if c != answer]
        wrong = others[int(rng.integers(len(others)))]
        phrase = NEUTRAL_TEMPLATES[int(rng.integers(len(NEUTRAL_TEMPLATES)))]
        decoy = [*nodes[:-2], branch, wrong]
        # the shared prefix already has its documents
        docs += _chain_docs(rng, decoy, phrase)[len(nodes) - 3:]
    # every candidate is mentioned exactly once, so mention counts carry no signal
    on_chain = {answer} | ({decoy[-1]} if decoy else set())
    loose = [_neutral(rng, u, c) for u, c in zip(unrelated, candidates) if c not in on_chain]
    docs += [[] for _ in range(spec.num_distractor_docs)]
    for fact in loose:
        docs[int(rng.integers(len(docs)))].append(fact)
    docs = [_with_fillers(rng, d, spec) for d in docs]
    order = rng.permutation(len(docs))
    plan = [docs[i] for i in order]

    record = {
        "id": f"synth_{spec.seed}_{index}",
        "query": f"{relation} {subject.lower()}",
        "supports": [render_doc(d) for d in plan],
        "candidates": [c.lower() for c in candidates],
        "answer": answer.lower(),
    }
    sample = parse_sample(record)
    return SynthSample(
        sample,
        [n.lower() for n in nodes],
        plan,
        None if decoy is None else [n.lower() for n in decoy],
    )


def generate_corpus(spec: SynthSpec) -> list[SynthSample]:
    """``spec.num_samples`` samples; sample ``i`` depends only on ``(seed, i)``."""
    vocab = make_vocabulary(spec.vocab_size, np.random.default_rng(np.random.SeedSequence([spec.seed])))
    if spec.words_per_sample > len(vocab):
        raise VocabularyError(
            f"each sample needs {spec.words_per_sample} distinct words but vocab_size is "
            f"{spec.vocab_size}; use vocab_size >= {spec.words_per_sample}"
        )
    return [_generate_one(i, spec, vocab) for i in range(spec.num_samples)]


def oracle_answer(sample: SynthSample) -> str:
    return sample.gold_chain[-1]


def check_labels(samples: Sequence[SynthSample]) -> list[str]:
    """Ids whose stored answer disagrees with the chain oracle."""
    return [s.sample.id for s in samples if s.sample.answer != oracle_answer(s)]


def write_corpus(path: str | Path, samples: Sequence[SynthSample], spec: SynthSpec | None = None) -> Path:
    """Sample records to ``path`` and chain metadata to ``<path>.meta.json``."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(json.dumps(serialize_sample(s.sample), sort_keys=True) + "\n")
    meta_path = path.with_name(path.name + ".meta.json")
    meta = {"spec": asdict(spec) if spec is not None else None, "samples": [s.metadata() for s in samples]}
    meta_path.write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return meta_path


def read_metadata(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))
