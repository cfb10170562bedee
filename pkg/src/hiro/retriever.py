"""Index review sentences into the hierarchy and retrieve popular clusters.

Every sentence is encoded to its full path; a review's indexed form is the
set of all prefixes of its sentences' paths, so the presence of a path
implies the presence of every subpath. Subpaths are scored per entity by
term popularity (fraction of the entity's reviews containing the subpath)
times inverse baseline popularity (smoothed reciprocal of the mean term
popularity across all entities), and the top-k subpaths yield evidential
sentence clusters that are then lexically filtered and merged.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .corpus import Corpus, Vectorizer, tfidf_sim
from .embeddings import EmbeddingProvider
from .errors import HiroError
from .quantizer import QuantizerModel, encode
from .util import write_text_atomic

Subpath = tuple[int, ...]


class IndexedCorpus:
    """Immutable per-sentence path assignments plus subpath statistics."""

    def __init__(self, corpus: Corpus, assignments: dict[str, Subpath]):
        missing = [sid for sid in corpus.sentences if sid not in assignments]
        if missing:
            raise HiroError(f"no path assignment for sentence {missing[0]!r}")
        self.corpus = corpus
        self.assignments = dict(assignments)
        self.review_subpaths: dict[str, frozenset[Subpath]] = {}
        self.entity_subpath_review_counts: dict[str, dict[Subpath, int]] = {}
        self.entity_review_counts: dict[str, int] = {}
        for eid in corpus.entity_ids():
            entity = corpus.entities[eid]
            counts: dict[Subpath, int] = {}
            for rid in entity.review_ids:
                prefixes: set[Subpath] = set()
                for sid in corpus.reviews[rid].sentence_ids:
                    path = self.assignments[sid]
                    prefixes.update(path[:d] for d in range(1, len(path) + 1))
                self.review_subpaths[rid] = frozenset(prefixes)
                for sub in prefixes:
                    counts[sub] = counts.get(sub, 0) + 1
            self.entity_subpath_review_counts[eid] = counts
            self.entity_review_counts[eid] = len(entity.review_ids)

    def entity_ids(self) -> list[str]:
        return self.corpus.entity_ids()


@dataclass(frozen=True)
class SubpathScore:
    subpath: Subpath
    tp: float
    ibp: float
    score: float


@dataclass(frozen=True)
class Cluster:
    subpath: Subpath
    score: float
    sentence_ids: tuple[str, ...]


@dataclass(frozen=True)
class ClusterSelection:
    entity_id: str
    clusters: tuple[Cluster, ...]
    k: int
    alpha: float


def index_corpus(
    model: QuantizerModel,
    corpus: Corpus,
    provider: EmbeddingProvider,
) -> IndexedCorpus:
    """Encode every corpus sentence and materialize subpath statistics."""
    sentences = corpus.all_sentences()
    matrix = provider.embed(sentences)
    assignments = {s.id: encode(model, matrix[i]) for i, s in enumerate(sentences)}
    return IndexedCorpus(corpus, assignments)


def term_popularity(idx: IndexedCorpus, subpath: Subpath, entity_id: str) -> float:
    """Fraction of the entity's indexed reviews containing the subpath."""
    if entity_id not in idx.entity_review_counts:
        raise HiroError(f"unknown entity {entity_id!r}")
    count = idx.entity_subpath_review_counts[entity_id].get(tuple(subpath), 0)
    return count / idx.entity_review_counts[entity_id]


def inverse_baseline_popularity(idx: IndexedCorpus, subpath: Subpath, alpha: float) -> float:
    """Smoothed reciprocal of the subpath's mean popularity over all entities."""
    if alpha < 0:
        raise HiroError("alpha must be nonnegative")
    entity_ids = idx.entity_ids()
    if not entity_ids:
        raise HiroError("index contains no entities")
    total_tp = sum(term_popularity(idx, subpath, eid) for eid in entity_ids)
    numerator = alpha + total_tp
    if numerator == 0.0:
        raise HiroError(
            "inverse baseline popularity is undefined: alpha = 0 and the subpath "
            "occurs in no entity; use alpha > 0"
        )
    return (alpha + len(entity_ids)) / numerator


def score_subpath(idx: IndexedCorpus, subpath: Subpath, entity_id: str, alpha: float) -> SubpathScore:
    tp = term_popularity(idx, subpath, entity_id)
    ibp = inverse_baseline_popularity(idx, subpath, alpha)
    return SubpathScore(subpath=tuple(subpath), tp=tp, ibp=ibp, score=tp * ibp)


def select_top_k(idx: IndexedCorpus, entity_id: str, k: int, alpha: float) -> ClusterSelection:
    """Score every subpath occupied by the entity and keep the k best.

    Ties break toward shallower subpaths, then lexicographically smaller
    code sequences, so the selection is deterministic under permutation of
    the inputs.
    """
    if k < 1:
        raise HiroError("k must be >= 1")
    if entity_id not in idx.entity_review_counts:
        raise HiroError(f"unknown entity {entity_id!r}")
    entity_sentences = idx.corpus.sentences_of_entity(entity_id)
    if not entity_sentences:
        raise HiroError(f"entity {entity_id!r} has no sentences")
    occupied = idx.entity_subpath_review_counts[entity_id]
    scored = [score_subpath(idx, sub, entity_id, alpha) for sub in occupied]
    scored.sort(key=lambda s: (-s.score, len(s.subpath), s.subpath))
    top = scored[:k]
    clusters = []
    for s in top:
        depth = len(s.subpath)
        members = tuple(
            sorted(
                sent.id
                for sent in entity_sentences
                if idx.assignments[sent.id][:depth] == s.subpath
            )
        )
        clusters.append(Cluster(subpath=s.subpath, score=s.score, sentence_ids=members))
    return ClusterSelection(entity_id=entity_id, clusters=tuple(clusters), k=k, alpha=alpha)


def _mean_pairwise_sim(ids_a, ids_b, vectors) -> float:
    total = 0.0
    count = 0
    for a in ids_a:
        for b in ids_b:
            total += tfidf_sim(vectors[a], vectors[b])
            count += 1
    return total / count if count else 0.0


def postprocess_clusters(
    selection: ClusterSelection,
    corpus: Corpus,
    vectorizer: Vectorizer,
    drop_threshold: float = 0.05,
    merge_threshold: float = 0.5,
) -> ClusterSelection:
    """Lexical cleanup of a selection.

    First drop any sentence whose mean tf-idf cosine to the other members
    of its cluster falls below ``drop_threshold`` (singletons are kept).
    Then repeatedly merge the pair of clusters with the highest mean
    cross-cluster cosine above ``merge_threshold`` until none qualifies;
    a merged cluster keeps the higher-scored subpath label and the union
    of sentence ids.
    """
    if not selection.clusters:
        raise HiroError("cannot post-process an empty selection")
    vectors = {
        sid: vectorizer.sentence_vector(sid)
        for cluster in selection.clusters
        for sid in cluster.sentence_ids
    }

    kept: list[Cluster] = []
    for cluster in selection.clusters:
        ids = list(cluster.sentence_ids)
        if len(ids) <= 1:
            kept.append(cluster)
            continue
        surviving = []
        for sid in ids:
            others = [o for o in ids if o != sid]
            mean_sim = _mean_pairwise_sim([sid], others, vectors)
            if mean_sim >= drop_threshold:
                surviving.append(sid)
        if not surviving:
            # A cluster cannot lose every member; keep its most central one.
            surviving = [max(ids, key=lambda s: _mean_pairwise_sim([s], [o for o in ids if o != s], vectors))]
        kept.append(replace(cluster, sentence_ids=tuple(surviving)))

    merged = list(kept)
    while len(merged) > 1:
        best: tuple[float, int, int] | None = None
        for i in range(len(merged)):
            for j in range(i + 1, len(merged)):
                sim = _mean_pairwise_sim(merged[i].sentence_ids, merged[j].sentence_ids, vectors)
                if sim > merge_threshold and (best is None or sim > best[0]):
                    best = (sim, i, j)
        if best is None:
            break
        _, i, j = best
        a, b = merged[i], merged[j]
        winner = a if (a.score, -len(a.subpath)) >= (b.score, -len(b.subpath)) else b
        union = tuple(sorted(set(a.sentence_ids) | set(b.sentence_ids)))
        merged[i] = Cluster(subpath=winner.subpath, score=winner.score, sentence_ids=union)
        del merged[j]
    merged.sort(key=lambda c: (-c.score, len(c.subpath), c.subpath))
    return replace(selection, clusters=tuple(merged))


def depth_histogram(selections: list[ClusterSelection]) -> dict[int, int]:
    """Count selected subpaths per depth across entities."""
    hist: dict[int, int] = {}
    for selection in selections:
        for cluster in selection.clusters:
            depth = len(cluster.subpath)
            hist[depth] = hist.get(depth, 0) + 1
    return dict(sorted(hist.items()))


def save_assignments(path: str | Path, idx: IndexedCorpus) -> None:
    lines = []
    for sent in idx.corpus.all_sentences():
        lines.append(
            json.dumps(
                {
                    "sentence_id": sent.id,
                    "entity_id": sent.entity_id,
                    "review_id": sent.review_id,
                    "path": list(idx.assignments[sent.id]),
                },
                ensure_ascii=False,
            )
        )
    write_text_atomic(path, "".join(line + "\n" for line in lines))


def load_assignments(path: str | Path, corpus: Corpus) -> IndexedCorpus:
    assignments: dict[str, Subpath] = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            assignments[row["sentence_id"]] = tuple(int(c) for c in row["path"])
    return IndexedCorpus(corpus, assignments)


def save_selections(path: str | Path, selections: list[ClusterSelection]) -> None:
    doc = [
        {
            "entity_id": sel.entity_id,
            "clusters": [
                {
                    "subpath": list(c.subpath),
                    "score": c.score,
                    "sentence_ids": list(c.sentence_ids),
                }
                for c in sel.clusters
            ],
        }
        for sel in selections
    ]
    write_text_atomic(path, json.dumps(doc, ensure_ascii=False, indent=2) + "\n")


def load_selections(path: str | Path, k: int = 0, alpha: float = 0.0) -> list[ClusterSelection]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    selections = []
    for row in doc:
        clusters = tuple(
            Cluster(
                subpath=tuple(int(c) for c in cl["subpath"]),
                score=float(cl["score"]),
                sentence_ids=tuple(cl["sentence_ids"]),
            )
            for cl in row["clusters"]
        )
        selections.append(
            ClusterSelection(entity_id=row["entity_id"], clusters=clusters, k=k, alpha=alpha)
        )
    return selections
