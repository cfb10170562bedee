"""Construction of the contrastive training set.

Positive pairs are mined in two steps: tf-idf retrieval proposes candidate
targets for a query sentence, then an entailment backend keeps only the
candidates it labels as entailed by the query. In-batch negatives are not
mined; a boolean mask marks batch members whose tf-idf similarity to the
query stays below a threshold, so topically related sentences are never
pushed apart.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Corpus, Sentence, Vectorizer, tfidf_sim
from .errors import HiroError, TransportError
from .nli import DEFAULT_ENTAIL_THRESHOLD, EntailmentClient, EntailmentVerdict, is_entailed
from .util import write_text_atomic


@dataclass(frozen=True)
class PositivePair:
    query_sentence_id: str
    target_sentence_id: str
    rho: float


def mine_candidates(
    query: Sentence,
    corpus: Corpus,
    vectorizer: Vectorizer,
    k_candidates: int,
    cand_threshold: float,
    upper_cap: float | None = None,
) -> list[str]:
    """Return up to ``k_candidates`` sentence ids similar to the query.

    Candidates come from other reviews only, require tf-idf cosine at least
    ``cand_threshold`` and are sorted by similarity descending (ties by
    sentence id). ``upper_cap`` optionally skips near-duplicates whose
    similarity exceeds it.
    """
    qvec = vectorizer.sentence_vector(query.id)
    scored: list[tuple[float, str]] = []
    for sent in corpus.all_sentences():
        if sent.id == query.id or sent.review_id == query.review_id:
            continue
        sim = tfidf_sim(qvec, vectorizer.sentence_vector(sent.id))
        if sim < cand_threshold:
            continue
        if upper_cap is not None and sim > upper_cap:
            continue
        scored.append((sim, sent.id))
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [sid for _, sid in scored[:k_candidates]]


def filter_entailed(
    query: Sentence,
    candidate_ids: list[str],
    corpus: Corpus,
    vectorizer: Vectorizer,
    nli: EntailmentClient,
    entail_threshold: float = DEFAULT_ENTAIL_THRESHOLD,
) -> list[PositivePair]:
    """Keep candidates the backend labels as entailed by the query.

    Entailment is checked in the query -> candidate direction only. A
    transport failure aborts mining with an error naming the pair.
    """
    pairs = []
    qvec = vectorizer.sentence_vector(query.id)
    for cid in candidate_ids:
        cand = corpus.sentences[cid]
        try:
            p = nli.p_entail(premise=query.text, hypothesis=cand.text)
        except TransportError as exc:
            raise TransportError(
                f"entailment check failed for pair ({query.id}, {cid}): {exc}"
            ) from exc
        verdict = EntailmentVerdict(
            premise_id=query.id,
            hypothesis_id=cid,
            p_entail=p,
            entailed=is_entailed(p, entail_threshold),
        )
        if verdict.entailed:
            pairs.append(
                PositivePair(
                    query_sentence_id=query.id,
                    target_sentence_id=cid,
                    rho=tfidf_sim(qvec, vectorizer.sentence_vector(cid)),
                )
            )
    return pairs


def negative_mask(
    batch: list[Sentence],
    vectorizer: Vectorizer,
    neg_threshold: float = 0.3,
) -> np.ndarray:
    """Boolean matrix marking admissible in-batch negatives.

    mask[i][j] is True iff i != j and the tf-idf cosine between batch
    members i and j is strictly below ``neg_threshold``. Symmetric with an
    all-False diagonal.
    """
    if len(batch) < 2:
        raise HiroError("negative_mask requires a batch of at least 2 sentences")
    vecs = [vectorizer.sentence_vector(s.id) for s in batch]
    n = len(batch)
    mask = np.zeros((n, n), dtype=bool)
    for i in range(n):
        for j in range(i + 1, n):
            below = tfidf_sim(vecs[i], vecs[j]) < neg_threshold
            mask[i, j] = below
            mask[j, i] = below
    return mask


def mine_pairs(
    corpus: Corpus,
    vectorizer: Vectorizer,
    nli: EntailmentClient,
    rng: np.random.Generator,
    pair_budget: int,
    k_candidates: int = 20,
    cand_threshold: float = 0.4,
    upper_cap: float | None = 0.95,
    entail_threshold: float = DEFAULT_ENTAIL_THRESHOLD,
) -> list[PositivePair]:
    """Mine positive pairs from queries sampled uniformly at random.

    Queries are visited in a seeded random order until ``pair_budget``
    pairs are collected or the corpus is exhausted. Output is canonicalized
    by (query id, target id) so concurrent or reordered mining runs yield
    identical files.
    """
    sentences = corpus.all_sentences()
    order = rng.permutation(len(sentences))
    pairs: list[PositivePair] = []
    for idx in order:
        if len(pairs) >= pair_budget:
            break
        query = sentences[idx]
        cand_ids = mine_candidates(query, corpus, vectorizer, k_candidates, cand_threshold, upper_cap)
        if not cand_ids:
            continue
        pairs.extend(
            filter_entailed(query, cand_ids, corpus, vectorizer, nli, entail_threshold)
        )
    pairs = pairs[:pair_budget]
    pairs.sort(key=lambda p: (p.query_sentence_id, p.target_sentence_id))
    return pairs


def save_pairs(path: str | Path, pairs: list[PositivePair]) -> None:
    lines = "".join(
        json.dumps(
            {"query_id": p.query_sentence_id, "target_id": p.target_sentence_id, "rho": p.rho},
            ensure_ascii=False,
        )
        + "\n"
        for p in pairs
    )
    write_text_atomic(path, lines)


def load_pairs(path: str | Path) -> list[PositivePair]:
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            pairs.append(PositivePair(row["query_id"], row["target_id"], float(row["rho"])))
    return pairs
