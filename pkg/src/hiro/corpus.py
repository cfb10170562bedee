"""Review corpora: ingestion, sentence splitting, tokenization and tf-idf.

A corpus is a three-level structure (entities own reviews, reviews own
sentences) loaded from a JSONL file with one review per line. Everything
here is deterministic and immutable after construction so downstream
stages can rely on byte-identical reruns.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

from .errors import HiroError, IngestError
from .util import write_text_atomic

CORPUS_FORMAT_VERSION = 1

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)
_TERMINATOR_RE = re.compile(r"[.!?]+")

# Trailing-word abbreviations whose dot never ends a sentence.
ABBREVIATIONS = frozenset(
    {
        "mr", "mrs", "ms", "dr", "prof", "st", "vs", "etc", "e.g", "i.e",
        "jr", "sr", "no", "inc", "ltd", "co", "fig", "approx", "dept", "est",
    }
)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on non-alphanumeric characters, dropping empties.

    No stemming and no stop-word removal, so token sequences stay exactly
    re-derivable from the sentence text.
    """
    return _TOKEN_RE.findall(text.lower())


def split_sentences(text: str) -> list[str]:
    """Split review text into sentences with a fixed rule.

    A run of ``.``, ``!`` or ``?`` ends a sentence when it is followed by
    whitespace plus an uppercase letter, or by the end of the text. A lone
    dot directly after a known abbreviation (``Mr.``, ``e.g.``, ...) does
    not split. Whitespace-only segments are dropped.
    """
    boundaries = []
    for m in _TERMINATOR_RE.finditer(text):
        end = m.end()
        if m.group() == ".":
            before = text[: m.start()].rsplit(None, 1)
            word = before[-1] if before else ""
            word = word.lstrip("\"'([{").lower()
            if word in ABBREVIATIONS:
                continue
        rest = text[end:]
        stripped = rest.lstrip()
        if not stripped:
            boundaries.append(end)
        elif len(stripped) < len(rest) and stripped[0].isupper():
            boundaries.append(end)
    sentences = []
    start = 0
    for b in boundaries:
        seg = text[start:b].strip()
        if seg:
            sentences.append(seg)
        start = b
    tail = text[start:].strip()
    if tail:
        sentences.append(tail)
    return sentences


@dataclass(frozen=True)
class Sentence:
    id: str
    entity_id: str
    review_id: str
    text: str
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class Review:
    id: str
    entity_id: str
    sentence_ids: tuple[str, ...]


@dataclass(frozen=True)
class Entity:
    id: str
    name: str
    review_ids: tuple[str, ...]


class Corpus:
    """Immutable container of entities, reviews and sentences.

    All cross references are validated at construction time: every review
    id named by an entity resolves, every sentence id named by a review
    resolves, and sentences carry the entity id of their review.
    """

    def __init__(
        self,
        entities: list[Entity],
        reviews: list[Review],
        sentences: list[Sentence],
    ):
        self.entities: dict[str, Entity] = {e.id: e for e in entities}
        self.reviews: dict[str, Review] = {r.id: r for r in reviews}
        self.sentences: dict[str, Sentence] = {s.id: s for s in sentences}
        self._entity_order = [e.id for e in entities]
        self._validate()

    def _validate(self) -> None:
        for entity in self.entities.values():
            if not entity.review_ids:
                raise HiroError(f"entity {entity.id!r} has no reviews")
            for rid in entity.review_ids:
                if rid not in self.reviews:
                    raise HiroError(f"entity {entity.id!r} references unknown review {rid!r}")
        for review in self.reviews.values():
            if not review.sentence_ids:
                raise HiroError(f"review {review.id!r} has no sentences")
            for sid in review.sentence_ids:
                sent = self.sentences.get(sid)
                if sent is None:
                    raise HiroError(f"review {review.id!r} references unknown sentence {sid!r}")
                if sent.entity_id != review.entity_id:
                    raise HiroError(
                        f"sentence {sid!r} entity {sent.entity_id!r} does not match "
                        f"review {review.id!r} entity {review.entity_id!r}"
                    )

    def entity_ids(self) -> list[str]:
        return list(self._entity_order)

    def sentences_of_review(self, review_id: str) -> list[Sentence]:
        return [self.sentences[sid] for sid in self.reviews[review_id].sentence_ids]

    def sentences_of_entity(self, entity_id: str) -> list[Sentence]:
        out = []
        for rid in self.entities[entity_id].review_ids:
            out.extend(self.sentences_of_review(rid))
        return out

    def all_sentences(self) -> list[Sentence]:
        out = []
        for eid in self._entity_order:
            out.extend(self.sentences_of_entity(eid))
        return out

    def to_json(self) -> str:
        doc = {
            "version": CORPUS_FORMAT_VERSION,
            "entities": [
                {"id": e.id, "name": e.name, "review_ids": list(e.review_ids)}
                for e in (self.entities[eid] for eid in self._entity_order)
            ],
            "reviews": [
                {"id": r.id, "entity_id": r.entity_id, "sentence_ids": list(r.sentence_ids)}
                for e in (self.entities[eid] for eid in self._entity_order)
                for r in (self.reviews[rid] for rid in e.review_ids)
            ],
            "sentences": [
                {"id": s.id, "entity_id": s.entity_id, "review_id": s.review_id, "text": s.text}
                for s in self.all_sentences()
            ],
        }
        return json.dumps(doc, ensure_ascii=False, indent=2) + "\n"

    def save(self, path: str | Path) -> None:
        write_text_atomic(path, self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "Corpus":
        doc = json.loads(text)
        if doc.get("version") != CORPUS_FORMAT_VERSION:
            raise HiroError(f"unsupported corpus version {doc.get('version')!r}")
        sentences = [
            Sentence(
                id=s["id"],
                entity_id=s["entity_id"],
                review_id=s["review_id"],
                text=s["text"],
                tokens=tuple(tokenize(s["text"])),
            )
            for s in doc["sentences"]
        ]
        reviews = [
            Review(id=r["id"], entity_id=r["entity_id"], sentence_ids=tuple(r["sentence_ids"]))
            for r in doc["reviews"]
        ]
        entities = [
            Entity(id=e["id"], name=e["name"], review_ids=tuple(e["review_ids"]))
            for e in doc["entities"]
        ]
        return cls(entities, reviews, sentences)

    @classmethod
    def load(cls, path: str | Path) -> "Corpus":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def ingest(path: str | Path, format: str = "jsonl") -> Corpus:
    """Load a review file into a corpus.

    Each line must be a JSON object with ``entity_id``, ``review_id`` and
    ``text`` (optionally ``entity_name``). Reviews are sentence-split and
    sentence ids are assigned as ``entity/review/ordinal``.
    """
    if format != "jsonl":
        raise IngestError(f"unsupported corpus format {format!r}")
    path = Path(path)
    if not path.exists():
        raise IngestError(f"input file not found: {path}")

    entity_names: dict[str, str] = {}
    entity_reviews: dict[str, list[str]] = {}
    reviews: list[Review] = []
    sentences: list[Sentence] = []
    seen_reviews: set[tuple[str, str]] = set()
    n_lines = 0

    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            n_lines += 1
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestError(f"line {lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(row, dict):
                raise IngestError(f"line {lineno}: expected a JSON object")
            for key in ("entity_id", "review_id", "text"):
                if key not in row:
                    raise IngestError(f"line {lineno}: missing key {key!r}")
            entity_id = str(row["entity_id"])
            review_id = str(row["review_id"])
            text = row["text"]
            if not isinstance(text, str) or not text.strip():
                raise IngestError(f"line {lineno}: 'text' must be a non-empty string")
            if (entity_id, review_id) in seen_reviews:
                raise IngestError(f"line {lineno}: duplicate review {review_id!r} for entity {entity_id!r}")
            seen_reviews.add((entity_id, review_id))

            parts = split_sentences(text)
            if not parts:
                raise IngestError(f"line {lineno}: review text contains no sentences")
            # Review ids are entity-qualified so they stay unique corpus-wide.
            full_review_id = f"{entity_id}/{review_id}"
            sent_ids = []
            for i, part in enumerate(parts):
                sid = f"{entity_id}/{review_id}/{i}"
                sentences.append(
                    Sentence(
                        id=sid,
                        entity_id=entity_id,
                        review_id=full_review_id,
                        text=part,
                        tokens=tuple(tokenize(part)),
                    )
                )
                sent_ids.append(sid)
            reviews.append(Review(id=full_review_id, entity_id=entity_id, sentence_ids=tuple(sent_ids)))
            entity_names.setdefault(entity_id, str(row.get("entity_name", entity_id)))
            entity_reviews.setdefault(entity_id, []).append(full_review_id)

    if n_lines == 0:
        raise IngestError(f"input file is empty: {path}")

    entities = [
        Entity(id=eid, name=entity_names[eid], review_ids=tuple(rids))
        for eid, rids in entity_reviews.items()
    ]
    return Corpus(entities, reviews, sentences)


@dataclass(frozen=True)
class SparseVector:
    """An l2-normalized sparse tf-idf vector over the shared vocabulary."""

    weights: dict[int, float]
    l2_norm: float


class Vectorizer:
    """tf-idf vectorizer with sentence-level document frequencies.

    idf(t) = ln((1 + S) / (1 + df(t))) + 1 where S is the number of
    sentences in the corpus; weights are raw term counts times idf,
    l2-normalized per sentence. Immutable once built.
    """

    def __init__(self, vocabulary: dict[str, int], idf: list[float], sentence_vectors: dict[str, SparseVector]):
        self.vocabulary = vocabulary
        self.idf = idf
        self._sentence_vectors = sentence_vectors

    def vectorize(self, tokens) -> SparseVector:
        """Vectorize a token sequence; out-of-vocabulary tokens are skipped."""
        counts: dict[int, int] = {}
        for tok in tokens:
            idx = self.vocabulary.get(tok)
            if idx is not None:
                counts[idx] = counts.get(idx, 0) + 1
        raw = {idx: c * self.idf[idx] for idx, c in counts.items()}
        norm = math.sqrt(sum(w * w for w in raw.values()))
        if norm == 0.0:
            return SparseVector(weights={}, l2_norm=0.0)
        return SparseVector(weights={i: w / norm for i, w in raw.items()}, l2_norm=1.0)

    def sentence_vector(self, sentence_id: str) -> SparseVector:
        try:
            return self._sentence_vectors[sentence_id]
        except KeyError:
            raise HiroError(f"sentence {sentence_id!r} was not part of the vectorizer's corpus") from None


def build_tfidf(corpus: Corpus) -> Vectorizer:
    """Build an immutable tf-idf vectorizer over every corpus sentence."""
    all_sentences = corpus.all_sentences()
    if not all_sentences:
        raise HiroError("cannot build a vectorizer over an empty corpus")
    vocabulary: dict[str, int] = {}
    for tok in sorted({t for s in all_sentences for t in s.tokens}):
        vocabulary[tok] = len(vocabulary)
    df = [0] * len(vocabulary)
    for s in all_sentences:
        for tok in set(s.tokens):
            df[vocabulary[tok]] += 1
    n = len(all_sentences)
    idf = [math.log((1 + n) / (1 + d)) + 1.0 for d in df]
    vec = Vectorizer(vocabulary, idf, {})
    vec._sentence_vectors.update({s.id: vec.vectorize(s.tokens) for s in all_sentences})
    return vec


def tfidf_sim(a: SparseVector, b: SparseVector) -> float:
    """Cosine similarity between two tf-idf vectors; 0 if either is zero."""
    if a.l2_norm == 0.0 or b.l2_norm == 0.0:
        return 0.0
    small, large = (a.weights, b.weights) if len(a.weights) <= len(b.weights) else (b.weights, a.weights)
    dot = 0.0
    for idx, w in small.items():
        other = large.get(idx)
        if other is not None:
            dot += w * other
    return dot
