"""Summary generation from retrieved sentence clusters.

Three modes with different attribution granularity: ``ext`` extracts each
cluster's centroid sentence verbatim, ``sent`` asks the LLM for one
sentence per cluster, and ``doc`` asks for a whole summary over all
clusters at once. Prompt templates live as plain text files next to this
module so they can be inspected or swapped without code changes.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

from .corpus import Corpus, Vectorizer, split_sentences, tfidf_sim, tokenize
from .errors import HiroError
from .evalmetrics import rouge2_f1
from .llm import DEFAULT_TEMPERATURE, LlmClient, LlmRequest
from .retriever import Cluster, ClusterSelection

@dataclass(frozen=True)
class EvidenceRef:
    subpath: tuple[int, ...]
    sentence_ids: tuple[str, ...]


@dataclass(frozen=True)
class Summary:
    entity_id: str
    mode: str  # ext | sent | doc
    sentences: tuple[str, ...]
    evidence: tuple[EvidenceRef, ...]
    provenance: dict
    warnings: tuple[str, ...] = ()


def load_prompt(name: str) -> str:
    return resources.files("hiro.prompts").joinpath(f"{name}.txt").read_text(encoding="utf-8")


def render_sentence_prompt(entity_name: str, sentences: list[str]) -> str:
    return load_prompt("sentence").format(entity_name=entity_name, sentences="\n".join(sentences))


def render_document_prompt(entity_name: str, sentences: list[str]) -> str:
    return load_prompt("document").format(entity_name=entity_name, sentences="\n".join(sentences))


def render_zero_shot_prompt(reviews: list[str]) -> str:
    blocks = "".join(f"Review:\n{text}\n" for text in reviews)
    return load_prompt("zero_shot").format(reviews=blocks)


def centroid_sentence(members: list[tuple[str, str]]) -> tuple[str, str]:
    """Pick the member with highest mean pairwise ROUGE-2 F1 to the rest.

    ``members`` are (sentence_id, text) pairs; singletons return their only
    member and exact ties resolve to the earliest member in cluster order.
    """
    if not members:
        raise HiroError("centroid of an empty cluster is undefined")
    if len(members) == 1:
        return members[0]
    token_lists = [tokenize(text) for _, text in members]
    best_idx = 0
    best_mean = -1.0
    for i in range(len(members)):
        total = 0.0
        for j in range(len(members)):
            if i != j:
                total += rouge2_f1(token_lists[i], token_lists[j])
        mean = total / (len(members) - 1)
        if mean > best_mean:
            best_mean = mean
            best_idx = i
    return members[best_idx]


def order_cluster_sentences(
    cluster: Cluster,
    corpus: Corpus,
    vectorizer: Vectorizer | None,
) -> list[tuple[str, str]]:
    """Cluster members by descending tf-idf centrality (stored order if no
    vectorizer is given)."""
    members = [(sid, corpus.sentences[sid].text) for sid in cluster.sentence_ids]
    if vectorizer is None or len(members) <= 1:
        return members
    vecs = {sid: vectorizer.sentence_vector(sid) for sid, _ in members}
    def centrality(sid: str) -> float:
        others = [o for o, _ in members if o != sid]
        return sum(tfidf_sim(vecs[sid], vecs[o]) for o in others) / len(others)
    ranked = sorted(
        range(len(members)), key=lambda i: (-centrality(members[i][0]), i)
    )
    return [members[i] for i in ranked]


def summarize_ext(selection: ClusterSelection, corpus: Corpus) -> Summary:
    """One verbatim centroid sentence per cluster, in cluster score order."""
    if not selection.clusters:
        return Summary(
            entity_id=selection.entity_id,
            mode="ext",
            sentences=(),
            evidence=(),
            provenance={"model": "extractive", "temperature": 0.0, "sample_index": 0},
            warnings=("empty_selection",),
        )
    sentences = []
    evidence = []
    for cluster in selection.clusters:
        members = [(sid, corpus.sentences[sid].text) for sid in cluster.sentence_ids]
        _, text = centroid_sentence(members)
        sentences.append(text)
        evidence.append(EvidenceRef(subpath=cluster.subpath, sentence_ids=cluster.sentence_ids))
    return Summary(
        entity_id=selection.entity_id,
        mode="ext",
        sentences=tuple(sentences),
        evidence=tuple(evidence),
        provenance={"model": "extractive", "temperature": 0.0, "sample_index": 0},
    )


def _first_sentence(text: str) -> str:
    # same boundary rule as corpus splitting, so "Dr." and friends survive
    text = " ".join(text.strip().split())
    parts = split_sentences(text)
    return parts[0] if parts else ""


def summarize_sent(
    selection: ClusterSelection,
    corpus: Corpus,
    llm: LlmClient,
    entity_name: str,
    temperature: float = DEFAULT_TEMPERATURE,
    sample_index: int = 0,
    vectorizer: Vectorizer | None = None,
) -> Summary:
    """One LLM request per cluster; each response is trimmed to a single
    sentence and linked to its evidential cluster."""
    if not selection.clusters:
        return Summary(
            entity_id=selection.entity_id,
            mode="sent",
            sentences=(),
            evidence=(),
            provenance={"model": llm.name, "temperature": temperature, "sample_index": sample_index},
            warnings=("empty_selection",),
        )
    sentences = []
    evidence = []
    warnings: list[str] = []
    for cluster in selection.clusters:
        ordered = order_cluster_sentences(cluster, corpus, vectorizer)
        prompt = render_sentence_prompt(entity_name, [text for _, text in ordered])
        response = llm.complete(
            LlmRequest(prompt=prompt, max_words_hint=10, temperature=temperature), sample_index
        )
        trimmed = _first_sentence(response)
        if not trimmed:
            trimmed = "[no summary returned]"
            warnings.append(f"empty_completion:{'.'.join(map(str, cluster.subpath))}")
        sentences.append(trimmed)
        evidence.append(EvidenceRef(subpath=cluster.subpath, sentence_ids=cluster.sentence_ids))
    return Summary(
        entity_id=selection.entity_id,
        mode="sent",
        sentences=tuple(sentences),
        evidence=tuple(evidence),
        provenance={"model": llm.name, "temperature": temperature, "sample_index": sample_index},
        warnings=tuple(warnings),
    )


def _subsample_evenly(items: list[tuple[str, str]], keep: int) -> list[tuple[str, str]]:
    if keep >= len(items):
        return items
    if keep <= 0:
        return items[:1]
    step = (len(items) - 1) / max(keep - 1, 1)
    picked = sorted({round(i * step) for i in range(keep)})
    return [items[i] for i in picked]


def summarize_doc(
    selection: ClusterSelection,
    corpus: Corpus,
    llm: LlmClient,
    entity_name: str,
    temperature: float = DEFAULT_TEMPERATURE,
    sample_index: int = 0,
    vectorizer: Vectorizer | None = None,
    char_budget: int = 12000,
) -> Summary:
    """A single LLM request over all clusters' sentences.

    Cluster order is preserved and sentences are newline-separated. When
    the joined input exceeds ``char_budget`` characters, sentences are
    evenly subsampled per cluster and the truncation is recorded as a
    warning.
    """
    if not selection.clusters:
        raise HiroError(f"cannot summarize entity {selection.entity_id!r}: empty selection")
    per_cluster = [order_cluster_sentences(c, corpus, vectorizer) for c in selection.clusters]
    warnings: list[str] = []

    def joined(buckets: list[list[tuple[str, str]]]) -> str:
        return "\n".join(text for bucket in buckets for _, text in bucket)

    buckets = per_cluster
    if len(joined(buckets)) > char_budget:
        max_size = max(len(b) for b in buckets)
        for cap in range(max_size - 1, 0, -1):
            buckets = [_subsample_evenly(b, cap) for b in per_cluster]
            if len(joined(buckets)) <= char_budget:
                break
        kept = sum(len(b) for b in buckets)
        total = sum(len(b) for b in per_cluster)
        warnings.append(f"truncated_input:{kept}/{total}")

    prompt = render_document_prompt(entity_name, [text for b in buckets for _, text in b])
    response = llm.complete(
        LlmRequest(prompt=prompt, max_words_hint=60, temperature=temperature), sample_index
    )
    sentences = tuple(split_sentences(response))
    evidence = tuple(
        EvidenceRef(subpath=c.subpath, sentence_ids=c.sentence_ids) for c in selection.clusters
    )
    return Summary(
        entity_id=selection.entity_id,
        mode="doc",
        sentences=sentences,
        evidence=evidence,
        provenance={"model": llm.name, "temperature": temperature, "sample_index": sample_index},
        warnings=tuple(warnings),
    )


def summary_to_row(summary: Summary) -> dict:
    """Serializable record for summaries.jsonl."""
    row = {
        "entity_id": summary.entity_id,
        "mode": summary.mode,
        "sample": summary.provenance.get("sample_index", 0),
        "text": " ".join(summary.sentences),
        "sentences": list(summary.sentences),
        "evidence": [
            {"subpath": list(ref.subpath), "sentence_ids": list(ref.sentence_ids)}
            for ref in summary.evidence
        ],
    }
    if summary.warnings:
        row["warnings"] = list(summary.warnings)
    return row


def summary_from_row(row: dict) -> Summary:
    evidence = tuple(
        EvidenceRef(
            subpath=tuple(int(c) for c in ref["subpath"]),
            sentence_ids=tuple(ref["sentence_ids"]),
        )
        for ref in row["evidence"]
    )
    return Summary(
        entity_id=row["entity_id"],
        mode=row["mode"],
        sentences=tuple(row.get("sentences") or split_sentences(row["text"])),
        evidence=evidence,
        provenance={"sample_index": row.get("sample", 0)},
        warnings=tuple(row.get("warnings", ())),
    )
