"""Reference-free and clustering evaluation metrics.

prevalence: mean fraction of input reviews containing entailment support
for each summary sentence. genericness: mean count of other entities'
summaries that entail a summary sentence. SAP combines the two as
prevalence - alpha * genericness. Cluster structure is assessed by purity
(mean intra-cluster pairwise similarity) minus colocation (mean
inter-cluster pairwise similarity), by the adjusted Rand index against a
reference clustering, and summaries additionally by ROUGE-2/L F1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, Vectorizer, tfidf_sim, tokenize
from .errors import HiroError
from .nli import DEFAULT_ENTAIL_THRESHOLD, EntailmentClient, is_entailed

MAX_EXHAUSTIVE_PAIRS = 10**6


# ---------------------------------------------------------------------------
# ROUGE
# ---------------------------------------------------------------------------


def _ngram_counts(tokens: list[str], n: int) -> dict[tuple[str, ...], int]:
    counts: dict[tuple[str, ...], int] = {}
    for i in range(len(tokens) - n + 1):
        gram = tuple(tokens[i : i + n])
        counts[gram] = counts.get(gram, 0) + 1
    return counts


def rouge2_f1(candidate_tokens: list[str], reference_tokens: list[str]) -> float:
    """Bigram overlap F1 with clipped counts."""
    cand = _ngram_counts(candidate_tokens, 2)
    ref = _ngram_counts(reference_tokens, 2)
    if not cand or not ref:
        return 0.0
    overlap = sum(min(c, ref.get(g, 0)) for g, c in cand.items())
    if overlap == 0:
        return 0.0
    precision = overlap / sum(cand.values())
    recall = overlap / sum(ref.values())
    return 2 * precision * recall / (precision + recall)


def _lcs_length(a: list[str], b: list[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_l_f1(candidate_tokens: list[str], reference_tokens: list[str]) -> float:
    """Longest-common-subsequence F1 over token sequences."""
    if not candidate_tokens or not reference_tokens:
        return 0.0
    lcs = _lcs_length(candidate_tokens, reference_tokens)
    if lcs == 0:
        return 0.0
    precision = lcs / len(candidate_tokens)
    recall = lcs / len(reference_tokens)
    return 2 * precision * recall / (precision + recall)


def rouge(candidate: str, references: list[str] | str, variant: str) -> float:
    """ROUGE F1 of a candidate against one or more references (max over
    references). Tokenization matches the corpus tokenizer; no stemming."""
    if isinstance(references, str):
        references = [references]
    if not references:
        raise HiroError("rouge requires at least one reference")
    cand_tokens = tokenize(candidate)
    scorer = {"r2_f1": rouge2_f1, "rL_f1": rouge_l_f1}.get(variant)
    if scorer is None:
        raise HiroError(f"unknown rouge variant {variant!r}")
    return max(scorer(cand_tokens, tokenize(ref)) for ref in references)


# ---------------------------------------------------------------------------
# Adjusted Rand index
# ---------------------------------------------------------------------------


def adjusted_rand_index(labels_a, labels_b) -> float:
    """Pair-counting ARI with expected-index correction.

    Symmetric, invariant to label renaming, 1 iff the two label sequences
    induce identical partitions. Degenerate agreement (both trivial
    partitions) returns 1.
    """
    labels_a = list(labels_a)
    labels_b = list(labels_b)
    if len(labels_a) != len(labels_b):
        raise HiroError("label sequences must have equal length")
    n = len(labels_a)
    if n < 2:
        raise HiroError("adjusted rand index needs at least 2 items")
    contingency: dict[tuple, int] = {}
    count_a: dict[object, int] = {}
    count_b: dict[object, int] = {}
    for la, lb in zip(labels_a, labels_b):
        contingency[(la, lb)] = contingency.get((la, lb), 0) + 1
        count_a[la] = count_a.get(la, 0) + 1
        count_b[lb] = count_b.get(lb, 0) + 1
    index = sum(math.comb(c, 2) for c in contingency.values())
    sum_a = sum(math.comb(c, 2) for c in count_a.values())
    sum_b = sum(math.comb(c, 2) for c in count_b.values())
    expected = sum_a * sum_b / math.comb(n, 2)
    max_index = (sum_a + sum_b) / 2
    if max_index == expected:
        return 1.0
    return (index - expected) / (max_index - expected)


def align_cluster_labels(
    clusters_a: list[list[str]], clusters_b: list[list[str]]
) -> tuple[list[int], list[int]]:
    """Turn two (possibly overlapping) clusterings into aligned label lists.

    Items appearing in both clusterings are kept; an item repeated across
    clusters takes its first cluster in list order.
    """
    def first_assignment(clusters: list[list[str]]) -> dict[str, int]:
        out: dict[str, int] = {}
        for label, members in enumerate(clusters):
            for item in members:
                out.setdefault(item, label)
        return out

    map_a = first_assignment(clusters_a)
    map_b = first_assignment(clusters_b)
    common = [item for item in map_a if item in map_b]
    return [map_a[i] for i in common], [map_b[i] for i in common]


# ---------------------------------------------------------------------------
# Entailment-based summary metrics
# ---------------------------------------------------------------------------


def prevalence(
    summary_sentences: list[str],
    reviews: list[list[str]],
    nli: EntailmentClient,
    threshold: float = DEFAULT_ENTAIL_THRESHOLD,
) -> float:
    """Mean over summary sentences of the fraction of reviews supporting it.

    A review supports a summary sentence when at least one of its sentences,
    used as premise, entails it.
    """
    if not reviews:
        raise HiroError("prevalence requires at least one review")
    if not summary_sentences:
        return 0.0
    per_sentence = []
    for hypothesis in summary_sentences:
        supporting = 0
        for review in reviews:
            if any(
                is_entailed(nli.p_entail(premise, hypothesis), threshold) for premise in review
            ):
                supporting += 1
        per_sentence.append(supporting / len(reviews))
    return sum(per_sentence) / len(per_sentence)


def genericness(
    summaries: dict[str, list[str]],
    nli: EntailmentClient,
    threshold: float = DEFAULT_ENTAIL_THRESHOLD,
) -> dict[str, float]:
    """Per entity: mean count of other entities' summaries entailing each
    sentence. The full other-entity summary text serves as the premise."""
    if len(summaries) < 2:
        raise HiroError("genericness requires summaries for at least 2 entities")
    full_texts = {eid: " ".join(sents) for eid, sents in summaries.items()}
    out: dict[str, float] = {}
    for eid, sentences in summaries.items():
        if not sentences:
            out[eid] = 0.0
            continue
        counts = []
        for hypothesis in sentences:
            count = 0
            for other_id, premise in full_texts.items():
                if other_id == eid:
                    continue
                if is_entailed(nli.p_entail(premise, hypothesis), threshold):
                    count += 1
            counts.append(count)
        out[eid] = sum(counts) / len(counts)
    return out


def sap(prevalence_value: float, genericness_value: float, alpha: float = 0.5) -> float:
    """Specificity-adjusted prevalence: prevalence - alpha * genericness."""
    return prevalence_value - alpha * genericness_value


def attribution_support(
    summary,
    corpus: Corpus,
    nli: EntailmentClient,
    threshold: float = DEFAULT_ENTAIL_THRESHOLD,
) -> tuple[float, float]:
    """Percentages of summary sentences with partial and majority support.

    A cluster sentence supports a summary sentence when entailment holds in
    either direction. For ext/sent summaries each sentence is checked
    against its own evidence cluster; doc summaries take the maximum
    support ratio over all clusters. Returns (partial_pct, majority_pct).
    """
    if not summary.evidence:
        raise HiroError("summary carries no evidence; attribution is undefined")
    if not summary.sentences:
        return 0.0, 0.0

    def support_ratio(sentence: str, evidence_ref) -> float:
        texts = [corpus.sentences[sid].text for sid in evidence_ref.sentence_ids]
        if not texts:
            return 0.0
        supporters = 0
        for text in texts:
            forward = is_entailed(nli.p_entail(text, sentence), threshold)
            backward = is_entailed(nli.p_entail(sentence, text), threshold)
            if forward or backward:
                supporters += 1
        return supporters / len(texts)

    ratios = []
    if summary.mode == "doc":
        for sentence in summary.sentences:
            ratios.append(max(support_ratio(sentence, ref) for ref in summary.evidence))
    else:
        if len(summary.sentences) != len(summary.evidence):
            raise HiroError("ext/sent summaries need one evidence cluster per sentence")
        for sentence, ref in zip(summary.sentences, summary.evidence):
            ratios.append(support_ratio(sentence, ref))
    n = len(ratios)
    partial = 100.0 * sum(1 for r in ratios if r > 0) / n
    majority = 100.0 * sum(1 for r in ratios if r >= 0.5) / n
    return partial, majority


# ---------------------------------------------------------------------------
# Cluster quality
# ---------------------------------------------------------------------------


def cluster_quality(
    clusters: list[list[str]],
    similarity: str = "tfidf",
    vectorizer: Vectorizer | None = None,
    nli: EntailmentClient | None = None,
    rng: np.random.Generator | None = None,
    max_pairs: int = MAX_EXHAUSTIVE_PAIRS,
    ids: list[list[str]] | None = None,
) -> tuple[float, float]:
    """Purity and colocation of a clustering of sentence texts.

    Purity pools every within-cluster pair (size-1 clusters contribute no
    pairs); colocation pools pairs drawn from different clusters,
    exhaustively when their number is at most ``max_pairs`` and otherwise
    from a seeded uniform sample of ``max_pairs`` pairs. tf-idf similarity
    is the cosine of ad hoc vectorized texts; nli similarity averages the
    two directional entailment probabilities.

    When ``ids`` (parallel to ``clusters``) is given, a sentence listed in
    two clusters never pairs with itself across them, so a cluster
    duplicated verbatim has colocation equal to its purity.
    """
    if len(clusters) < 2:
        raise HiroError("cluster_quality requires at least 2 clusters")
    if ids is not None and [len(c) for c in ids] != [len(c) for c in clusters]:
        raise HiroError("ids must parallel the cluster structure")
    if similarity == "tfidf":
        if vectorizer is None:
            raise HiroError("tfidf similarity requires a vectorizer")
        vectors = [[vectorizer.vectorize(tokenize(t)) for t in cluster] for cluster in clusters]

        def sim(ci: int, ii: int, cj: int, jj: int) -> float:
            return tfidf_sim(vectors[ci][ii], vectors[cj][jj])

    elif similarity == "nli":
        if nli is None:
            raise HiroError("nli similarity requires an entailment client")

        def sim(ci: int, ii: int, cj: int, jj: int) -> float:
            a, b = clusters[ci][ii], clusters[cj][jj]
            return 0.5 * (nli.p_entail(a, b) + nli.p_entail(b, a))

    else:
        raise HiroError(f"unknown similarity mode {similarity!r}")

    intra_total = 0.0
    intra_pairs = 0
    for ci, cluster in enumerate(clusters):
        for i in range(len(cluster)):
            for j in range(i + 1, len(cluster)):
                intra_total += sim(ci, i, ci, j)
                intra_pairs += 1
    if intra_pairs == 0:
        raise HiroError("purity is undefined: every cluster is a singleton")
    purity = intra_total / intra_pairs

    def same_item(ci: int, i: int, cj: int, j: int) -> bool:
        return ids is not None and ids[ci][i] == ids[cj][j]

    sizes = [len(c) for c in clusters]
    total_cross = 0
    for ci in range(len(sizes)):
        for cj in range(ci + 1, len(sizes)):
            total_cross += sizes[ci] * sizes[cj]
            if ids is not None:
                shared = set(ids[ci]) & set(ids[cj])
                total_cross -= sum(
                    ids[ci].count(s) * ids[cj].count(s) for s in shared
                )
    if total_cross == 0:
        raise HiroError("colocation is undefined: no cross-cluster pairs")

    if total_cross <= max_pairs:
        cross_total = 0.0
        for ci in range(len(clusters)):
            for cj in range(ci + 1, len(clusters)):
                for i in range(sizes[ci]):
                    for j in range(sizes[cj]):
                        if not same_item(ci, i, cj, j):
                            cross_total += sim(ci, i, cj, j)
        colocation = cross_total / total_cross
    else:
        if rng is None:
            rng = np.random.default_rng(0)
        flat = [(ci, i) for ci, cluster in enumerate(clusters) for i in range(len(cluster))]
        cross_total = 0.0
        drawn = 0
        while drawn < max_pairs:
            a, b = rng.integers(0, len(flat), size=2)
            (ci, i), (cj, j) = flat[a], flat[b]
            if ci == cj or same_item(ci, i, cj, j):
                continue
            cross_total += sim(ci, i, cj, j)
            drawn += 1
        colocation = cross_total / max_pairs
    return purity, colocation


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------


@dataclass
class EntityMetrics:
    prevalence: float
    genericness: float
    sap: float
    rouge2_f1: float | None = None
    rougeL_f1: float | None = None
    partial_support_pct: float | None = None
    majority_support_pct: float | None = None


@dataclass
class EvalReport:
    alpha_sap: float
    nli_backend: str
    per_entity: dict[str, EntityMetrics] = field(default_factory=dict)
    purity: float | None = None
    colocation: float | None = None
    quality: float | None = None
    ari: float | None = None

    def aggregate(self) -> dict[str, float | None]:
        if not self.per_entity:
            return {}
        rows = list(self.per_entity.values())

        def mean_of(name: str) -> float | None:
            values = [getattr(r, name) for r in rows if getattr(r, name) is not None]
            return sum(values) / len(values) if values else None

        return {
            name: mean_of(name)
            for name in (
                "prevalence",
                "genericness",
                "sap",
                "rouge2_f1",
                "rougeL_f1",
                "partial_support_pct",
                "majority_support_pct",
            )
        }

    def to_dict(self) -> dict:
        return {
            "alpha_sap": self.alpha_sap,
            "nli_backend": self.nli_backend,
            "per_entity": {
                eid: {
                    "prevalence": m.prevalence,
                    "genericness": m.genericness,
                    "sap": m.sap,
                    "rouge2_f1": m.rouge2_f1,
                    "rougeL_f1": m.rougeL_f1,
                    "partial_support_pct": m.partial_support_pct,
                    "majority_support_pct": m.majority_support_pct,
                }
                for eid, m in self.per_entity.items()
            },
            "aggregate": self.aggregate(),
            "clusters": {
                "purity": self.purity,
                "colocation": self.colocation,
                "quality": self.quality,
                "ari": self.ari,
            },
        }
