"""Sample parsing, tokenisation and mention detection.

Records follow the WikiHop field layout: ``id``, ``query``, ``supports``,
``candidates`` and an optional ``answer``.  The query string is
``"<relation> <subject words...>"``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

__all__ = [
    "ParseError",
    "MentionKind",
    "Question",
    "Sample",
    "TokenizedDoc",
    "Mention",
    "normalize",
    "parse_sample",
    "serialize_sample",
    "tokenize_and_split",
    "find_mentions",
    "detect_reasoning_spans",
    "collect_mentions",
]


class ParseError(ValueError):
    pass


class MentionKind(str, Enum):
    SUBJECT = "subject"
    REASONING = "reasoning"
    CANDIDATE = "candidate"

    @property
    def rank(self) -> int:
        return _KIND_RANK[self]


_KIND_RANK = {MentionKind.SUBJECT: 0, MentionKind.REASONING: 1, MentionKind.CANDIDATE: 2}

_TOKEN_RE = re.compile(r"[^\W_]+|[^\w\s]|_", re.UNICODE)
_WS_RE = re.compile(r"\s+")
_OUTER_PUNCT_RE = re.compile(r"^[^\w]+|[^\w]+$", re.UNICODE)


def normalize(text: str) -> str:
    """Lowercase, collapse whitespace, strip leading/trailing punctuation."""
    text = _WS_RE.sub(" ", text.lower()).strip()
    return _OUTER_PUNCT_RE.sub("", text).strip()


@dataclass(frozen=True)
class Question:
    subject: str
    relation: str
    tokens: tuple[str, ...]

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class Sample:
    id: str
    question: Question
    supports: tuple[str, ...]
    candidates: tuple[str, ...]
    answer: str | None = None
    query: str = ""

    @property
    def num_candidates(self) -> int:
        return len(self.candidates)


def parse_sample(raw: Mapping) -> Sample:
    """Build a :class:`Sample` from a WikiHop-style record."""
    for name in ("id", "query", "supports", "candidates"):
        if name not in raw:
            raise ParseError(f"record is missing field {name!r}")
    query = str(raw["query"]).strip()
    parts = query.split(None, 1)
    if not parts:
        raise ParseError("empty query")
    relation = parts[0]
    subject = normalize(parts[1]) if len(parts) > 1 else ""
    supports = tuple(str(s) for s in raw["supports"])
    if not supports:
        raise ParseError("field 'supports' is empty")
    candidates = tuple(normalize(str(c)) for c in raw["candidates"])
    if not candidates:
        raise ParseError("field 'candidates' is empty")
    answer = raw.get("answer")
    if answer is not None:
        answer = normalize(str(answer))
        if answer not in candidates:
            raise ParseError(f"answer {answer!r} is not among the candidates")
    tokens = tuple(t.lower() for t in tokenize(relation.replace("_", " ")))
    tokens += tuple(t.lower() for t in tokenize(subject))
    if not tokens:
        raise ParseError("query has no tokens")
    return Sample(
        id=str(raw["id"]),
        question=Question(subject=subject, relation=relation, tokens=tokens),
        supports=supports,
        candidates=candidates,
        answer=answer,
        query=query,
    )


def serialize_sample(sample: Sample) -> dict:
    record = {
        "id": sample.id,
        "query": f"{sample.question.relation} {sample.question.subject}".strip(),
        "supports": list(sample.supports),
        "candidates": list(sample.candidates),
    }
    if sample.answer is not None:
        record["answer"] = sample.answer
    return record


# -- tokenisation ----------------------------------------------------------------
_ABBREVIATIONS = frozenset(
    """mr mrs ms dr prof sr jr st mt ft gen col lt sgt capt cpt adm gov rev hon
    vs etc inc ltd co corp bros no nos vol fig approx est dept univ jan feb mar
    apr jun jul aug sep sept oct nov dec e g""".split()
)
_SENTENCE_END = frozenset(".!?")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class TokenizedDoc:
    doc_id: int
    tokens: tuple[str, ...]
    sentence_spans: tuple[tuple[int, int], ...]
    offsets: tuple[tuple[int, int], ...] = ()
    text: str = ""

    @property
    def lower(self) -> tuple[str, ...]:
        return tuple(t.lower() for t in self.tokens)

    def sentence_of(self, position: int) -> int:
        for k, (start, end) in enumerate(self.sentence_spans):
            if start <= position < end:
                return k
        raise IndexError(f"token {position} is outside every sentence")

    def span_text(self, start: int, end: int) -> str:
        if self.offsets and self.text:
            return self.text[self.offsets[start][0]: self.offsets[end - 1][1]]
        return " ".join(self.tokens[start:end])

    def sentence_tokens(self, index: int) -> tuple[str, ...]:
        start, end = self.sentence_spans[index]
        return self.tokens[start:end]


def _is_abbreviation(tokens: Sequence[str], dot: int) -> bool:
    if dot == 0:
        return False
    prev = tokens[dot - 1]
    if prev.lower() in _ABBREVIATIONS:
        return True
    # middle initials: "John F. Kennedy"
    return len(prev) == 1 and prev.isalpha() and prev.isupper()


def tokenize_and_split(text: str, doc_id: int = 0) -> TokenizedDoc:
    """Tokenise ``text`` and cut it into sentences.

    A sentence ends at ``.``, ``!`` or ``?`` when the next token starts after
    whitespace with an uppercase letter, or at end of text.  A period after a
    known abbreviation or a single capital initial does not end a sentence.
    """
    matches = list(_TOKEN_RE.finditer(text))
    tokens = tuple(m.group() for m in matches)
    offsets = tuple(m.span() for m in matches)
    spans: list[tuple[int, int]] = []
    start = 0
    for k, tok in enumerate(tokens):
        if tok not in _SENTENCE_END:
            continue
        if k + 1 < len(tokens):
            gap = text[offsets[k][1]: offsets[k + 1][0]]
            nxt = tokens[k + 1]
            if not gap or not gap.isspace() or not nxt[0].isupper():
                continue
            if tok == "." and _is_abbreviation(tokens, k):
                continue
        spans.append((start, k + 1))
        start = k + 1
    if start < len(tokens):
        spans.append((start, len(tokens)))
    return TokenizedDoc(doc_id, tokens, tuple(spans), offsets, text)


# -- mentions ----------------------------------------------------------------------
@dataclass(frozen=True, order=True)
class Mention:
    entity_key: str
    kind: MentionKind
    doc_id: int
    token_span: tuple[int, int]
    sentence_index: int
    text: str = field(default="", compare=False)

    @property
    def key(self) -> tuple:
        """Identity of the mention as a graph node."""
        return (self.kind.rank, self.entity_key, self.doc_id, self.token_span)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "entity_key": self.entity_key,
            "doc_id": self.doc_id,
            "span": list(self.token_span),
            "sentence": self.sentence_index,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "Mention":
        return cls(
            entity_key=d["entity_key"],
            kind=MentionKind(d["kind"]),
            doc_id=int(d["doc_id"]),
            token_span=(int(d["span"][0]), int(d["span"][1])),
            sentence_index=int(d["sentence"]),
            text=d.get("text", ""),
        )


def _target_tokens(key: str) -> tuple[str, ...]:
    return tuple(t.lower() for t in tokenize(key))


def find_mentions(
    doc: TokenizedDoc, targets: Iterable[tuple[str, MentionKind]]
) -> list[Mention]:
    """Exact, case-insensitive token-sequence matches of every target.

    Overlapping hits of one target keep the leftmost; hits of different
    targets may overlap freely.  Matches never cross a sentence boundary.
    """
    targets = list(dict.fromkeys(targets))
    if not targets:
        raise ValueError("find_mentions needs at least one target")
    lower = doc.lower
    sentence_at = [0] * len(lower)
    for s, (a, b) in enumerate(doc.sentence_spans):
        for k in range(a, b):
            sentence_at[k] = s
    found: list[Mention] = []
    for key, kind in targets:
        pattern = _target_tokens(key)
        n = len(pattern)
        if n == 0:
            continue
        k = 0
        while k + n <= len(lower):
            if lower[k: k + n] == pattern and sentence_at[k] == sentence_at[k + n - 1]:
                found.append(
                    Mention(key, kind, doc.doc_id, (k, k + n), sentence_at[k], doc.span_text(k, k + n))
                )
                k += n
            else:
                k += 1
    found.sort(key=lambda m: (m.token_span[0], m.token_span[1], m.kind.rank, m.entity_key))
    return found


_CONNECTORS = frozenset({"of", "the", "&"})
_STOPWORDS = frozenset(
    """a an the this that these those there here it its he she his her him they
    their them we our you your i my me in on at by for from with of to and but or
    nor so yet as after before during when while where since because although
    though if however also then thus meanwhile moreover today later it's some
    many most several one other another each every both all no not""".split()
)


def _capitalized(tok: str) -> bool:
    return tok[:1].isalpha() and tok[:1].isupper()


def detect_reasoning_spans(
    doc: TokenizedDoc, exclude: Iterable[str] = ()
) -> list[Mention]:
    """Maximal runs of capitalised tokens, taken as candidate waypoints.

    Runs of ``of``, ``the`` and ``&`` may join two capitalised tokens.  A
    sentence-initial token whose lowercase form is a stopword never starts a
    run.  Runs whose normalised text is in ``exclude`` (the subject and the
    candidates) are dropped.
    """
    excluded = set(exclude)
    spans: list[Mention] = []
    for s, (a, b) in enumerate(doc.sentence_spans):
        k = a
        while k < b:
            tok = doc.tokens[k]
            if not _capitalized(tok) or (k == a and tok.lower() in _STOPWORDS):
                k += 1
                continue
            end = k + 1
            while end < b:
                if _capitalized(doc.tokens[end]):
                    end += 1
                    continue
                # "Bank of the West": connectors bridge two capitalised tokens
                j = end
                while j < b and doc.tokens[j].lower() in _CONNECTORS:
                    j += 1
                if j == end or j >= b or not _capitalized(doc.tokens[j]):
                    break
                end = j + 1
            text = doc.span_text(k, end)
            key = normalize(text)
            if key and key not in excluded:
                spans.append(Mention(key, MentionKind.REASONING, doc.doc_id, (k, end), s, text))
            k = end
    return spans


def collect_mentions(sample: Sample, docs: Sequence[TokenizedDoc]) -> list[list[Mention]]:
    """Subject, candidate and reasoning mentions of every support document."""
    targets = [(sample.question.subject, MentionKind.SUBJECT)] if sample.question.subject else []
    targets += [(c, MentionKind.CANDIDATE) for c in sample.candidates]
    exclude = {sample.question.subject, *sample.candidates}
    out = []
    for doc in docs:
        found = find_mentions(doc, targets) + detect_reasoning_spans(doc, exclude)
        found.sort(key=lambda m: (m.token_span[0], m.token_span[1], m.kind.rank, m.entity_key))
        out.append(found)
    return out
