"""Pipeline stages and the run manifest.

Each stage reads its upstream artifacts, verifies them against the digest
chain recorded in the manifest, writes its own outputs atomically and then
records them. Running a stage whose inputs are missing or stale raises a
StageError naming the stage to rerun.
"""
from __future__ import annotations

import csv
import io
import json
import time
from pathlib import Path

from . import __version__
from .config import PipelineConfig
from .corpus import Corpus, build_tfidf, ingest
from .embeddings import FileEmbeddings, HttpEmbeddings, MockEmbeddings
from .errors import ConfigError, HiroError, StageError
from .evalmetrics import (
    EntityMetrics,
    EvalReport,
    adjusted_rand_index,
    align_cluster_labels,
    attribution_support,
    cluster_quality,
    genericness,
    prevalence,
    rouge,
    sap,
)
from .generation import summarize_doc, summarize_ext, summarize_sent, summary_from_row, summary_to_row
from .llm import ConstantLlmBackend, EchoLlmBackend, HttpLlmClient, ReplayLlmBackend
from .nli import HttpEntailmentClient, JaccardEntailmentMock
from .pairing import load_pairs, mine_pairs, save_pairs
from .quantizer import QuantizerModel, train
from .retriever import (
    depth_histogram,
    index_corpus,
    load_assignments,
    load_selections,
    postprocess_clusters,
    save_assignments,
    save_selections,
    select_top_k,
)
from .util import sha256_file, substream, write_json_atomic, write_text_atomic

MANIFEST_NAME = "manifest.json"

ARTIFACTS = {
    "corpus": "corpus.json",
    "pairs": "pairs.jsonl",
    "model": "model.json",
    "training_log": "training_log.jsonl",
    "assignments": "assignments.jsonl",
    "selections": "selections.json",
    "summaries": "summaries.jsonl",
    "report": "report.json",
    "report_csv": "report.csv",
    "depth_histogram_csv": "depth_histogram.csv",
}

# artifact key -> stage that produces it
ARTIFACT_OWNER = {
    "corpus": "ingest",
    "pairs": "mine-pairs",
    "model": "train",
    "training_log": "train",
    "assignments": "index",
    "selections": "retrieve",
    "summaries": "summarize",
    "report": "evaluate",
    "report_csv": "report",
    "depth_histogram_csv": "report",
}


def artifact_path(cfg: PipelineConfig, key: str) -> Path:
    return Path(cfg.paths.output_dir) / ARTIFACTS[key]


class Manifest:
    def __init__(self, cfg: PipelineConfig):
        self.path = Path(cfg.paths.output_dir) / MANIFEST_NAME
        if self.path.exists():
            self.doc = json.loads(self.path.read_text(encoding="utf-8"))
        else:
            self.doc = {"version": 1, "stages": {}}

    def recorded_output_digest(self, artifact_key: str) -> str | None:
        stage = ARTIFACT_OWNER[artifact_key]
        entry = self.doc["stages"].get(stage)
        if entry is None:
            return None
        return entry.get("outputs", {}).get(artifact_key)

    def require_inputs(self, stage: str, cfg: PipelineConfig, artifact_keys: list[str]) -> None:
        for key in artifact_keys:
            path = artifact_path(cfg, key)
            owner = ARTIFACT_OWNER[key]
            if not path.exists():
                raise StageError(
                    f"stage '{stage}' needs {path.name}; run '{owner}' first"
                )
            recorded = self.recorded_output_digest(key)
            if recorded is None:
                raise StageError(
                    f"stage '{stage}' found {path.name} but the manifest has no record "
                    f"of it; rerun '{owner}'"
                )
            if sha256_file(path) != recorded:
                raise StageError(
                    f"stage '{stage}' input {path.name} is stale or modified; rerun '{owner}'"
                )

    def record(
        self,
        stage: str,
        cfg: PipelineConfig,
        input_files: dict[str, Path],
        output_keys: list[str],
    ) -> None:
        self.doc["tool_version"] = __version__
        self.doc["seed"] = cfg.seed
        self.doc["config"] = cfg.to_dict()
        self.doc["stages"][stage] = {
            "inputs": {name: sha256_file(p) for name, p in input_files.items()},
            "outputs": {key: sha256_file(artifact_path(cfg, key)) for key in output_keys},
            "completed_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        }
        write_json_atomic(self.path, self.doc)


# ---------------------------------------------------------------------------
# Backend factories
# ---------------------------------------------------------------------------


def make_nli(cfg: PipelineConfig):
    if cfg.nli.backend == "mock":
        return JaccardEntailmentMock(cfg.nli.jaccard_threshold)
    if cfg.nli.backend == "http":
        if not cfg.nli.endpoint:
            raise ConfigError("nli.endpoint is required for the http backend")
        return HttpEntailmentClient(cfg.nli.endpoint, max_retries=cfg.nli.max_retries)
    raise ConfigError(f"unknown nli backend {cfg.nli.backend!r}")


def make_llm(cfg: PipelineConfig):
    gen = cfg.generation
    if gen.backend == "mock-echo":
        return EchoLlmBackend()
    if gen.backend == "mock-constant":
        return ConstantLlmBackend(gen.constant_text)
    if gen.backend == "mock-replay":
        if not gen.replay_fixture:
            raise ConfigError("generation.replay_fixture is required for mock-replay")
        return ReplayLlmBackend(gen.replay_fixture)
    if gen.backend == "http":
        if not gen.endpoint:
            raise ConfigError("generation.endpoint is required for the http backend")
        return HttpLlmClient(gen.endpoint, gen.model, max_retries=gen.max_retries)
    raise ConfigError(f"unknown generation backend {gen.backend!r}")


def make_embeddings(cfg: PipelineConfig):
    emb = cfg.embedding
    if emb.mode == "mock":
        return MockEmbeddings(dim=emb.dim, seed=emb.seed)
    if emb.mode == "file":
        if not cfg.paths.embeddings_manifest:
            raise ConfigError("paths.embeddings_manifest is required for file embeddings")
        return FileEmbeddings(cfg.paths.embeddings_manifest)
    if emb.mode == "http":
        if not emb.endpoint:
            raise ConfigError("embedding.endpoint is required for the http mode")
        return HttpEmbeddings(emb.endpoint, dim=emb.dim)
    raise ConfigError(f"unknown embedding mode {emb.mode!r}")


def _check_dims(cfg: PipelineConfig, provider) -> None:
    if provider.dim != cfg.quantizer.dim:
        raise ConfigError(
            f"embedding dim {provider.dim} does not match quantizer dim {cfg.quantizer.dim}"
        )


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


def cmd_ingest(cfg: PipelineConfig) -> Path:
    manifest = Manifest(cfg)
    reviews_path = Path(cfg.paths.reviews)
    if not reviews_path.exists():
        raise StageError(f"stage 'ingest' input file not found: {reviews_path}")
    corpus = ingest(reviews_path)
    out = artifact_path(cfg, "corpus")
    corpus.save(out)
    manifest.record("ingest", cfg, {"reviews": reviews_path}, ["corpus"])
    return out


def cmd_mine_pairs(cfg: PipelineConfig) -> Path:
    manifest = Manifest(cfg)
    manifest.require_inputs("mine-pairs", cfg, ["corpus"])
    corpus = Corpus.load(artifact_path(cfg, "corpus"))
    vectorizer = build_tfidf(corpus)
    nli = make_nli(cfg)
    rng = substream(cfg.seed, "pairing")
    pairs = mine_pairs(
        corpus,
        vectorizer,
        nli,
        rng,
        pair_budget=cfg.pairing.pair_budget,
        k_candidates=cfg.pairing.k_candidates,
        cand_threshold=cfg.pairing.cand_threshold,
        upper_cap=cfg.pairing.upper_cap,
        entail_threshold=cfg.pairing.entail_threshold,
    )
    out = artifact_path(cfg, "pairs")
    save_pairs(out, pairs)
    manifest.record(
        "mine-pairs", cfg, {"corpus": artifact_path(cfg, "corpus")}, ["pairs"]
    )
    return out


def cmd_train(cfg: PipelineConfig) -> Path:
    manifest = Manifest(cfg)
    manifest.require_inputs("train", cfg, ["corpus", "pairs"])
    corpus = Corpus.load(artifact_path(cfg, "corpus"))
    pairs = load_pairs(artifact_path(cfg, "pairs"))
    vectorizer = build_tfidf(corpus)
    provider = make_embeddings(cfg)
    _check_dims(cfg, provider)

    pair_sids = sorted({sid for p in pairs for sid in (p.query_sentence_id, p.target_sentence_id)})
    for sid in pair_sids:
        if sid not in corpus.sentences:
            raise HiroError(f"pair references unknown sentence {sid!r}")
    sentences = [corpus.sentences[sid] for sid in pair_sids]
    matrix = provider.embed(sentences)
    embeddings_by_id = {sid: matrix[i] for i, sid in enumerate(pair_sids)}

    init_rng = substream(cfg.seed, "train-init")
    model = QuantizerModel.initialize(cfg.quantizer, init_rng)
    rng = substream(cfg.seed, "training")
    trained, log = train(
        model,
        pairs,
        corpus,
        vectorizer,
        embeddings_by_id,
        rng,
        neg_threshold=cfg.pairing.neg_threshold,
    )
    out = artifact_path(cfg, "model")
    trained.save(out)
    write_text_atomic(
        artifact_path(cfg, "training_log"),
        "".join(json.dumps(row) + "\n" for row in log),
    )
    manifest.record(
        "train",
        cfg,
        {"corpus": artifact_path(cfg, "corpus"), "pairs": artifact_path(cfg, "pairs")},
        ["model", "training_log"],
    )
    return out


def cmd_index(cfg: PipelineConfig) -> Path:
    manifest = Manifest(cfg)
    manifest.require_inputs("index", cfg, ["corpus", "model"])
    corpus = Corpus.load(artifact_path(cfg, "corpus"))
    model = QuantizerModel.load(artifact_path(cfg, "model"))
    provider = make_embeddings(cfg)
    _check_dims(cfg, provider)
    idx = index_corpus(model, corpus, provider)
    out = artifact_path(cfg, "assignments")
    save_assignments(out, idx)
    manifest.record(
        "index",
        cfg,
        {"corpus": artifact_path(cfg, "corpus"), "model": artifact_path(cfg, "model")},
        ["assignments"],
    )
    return out


def cmd_retrieve(cfg: PipelineConfig) -> Path:
    manifest = Manifest(cfg)
    manifest.require_inputs("retrieve", cfg, ["corpus", "assignments"])
    corpus = Corpus.load(artifact_path(cfg, "corpus"))
    idx = load_assignments(artifact_path(cfg, "assignments"), corpus)
    vectorizer = build_tfidf(corpus)
    selections = []
    for eid in corpus.entity_ids():
        selection = select_top_k(idx, eid, cfg.retrieval.top_k, cfg.retrieval.alpha)
        selection = postprocess_clusters(
            selection,
            corpus,
            vectorizer,
            drop_threshold=cfg.retrieval.drop_threshold,
            merge_threshold=cfg.retrieval.merge_threshold,
        )
        selections.append(selection)
    out = artifact_path(cfg, "selections")
    save_selections(out, selections)
    manifest.record(
        "retrieve",
        cfg,
        {
            "corpus": artifact_path(cfg, "corpus"),
            "assignments": artifact_path(cfg, "assignments"),
        },
        ["selections"],
    )
    return out


def cmd_summarize(cfg: PipelineConfig) -> Path:
    manifest = Manifest(cfg)
    manifest.require_inputs("summarize", cfg, ["corpus", "selections"])
    corpus = Corpus.load(artifact_path(cfg, "corpus"))
    selections = load_selections(
        artifact_path(cfg, "selections"), k=cfg.retrieval.top_k, alpha=cfg.retrieval.alpha
    )
    vectorizer = build_tfidf(corpus)
    llm = make_llm(cfg)
    gen = cfg.generation
    n_samples = 1 if gen.mode == "ext" else gen.samples
    rows = []
    for selection in selections:
        entity_name = corpus.entities[selection.entity_id].name
        for sample in range(n_samples):
            if gen.mode == "ext":
                summary = summarize_ext(selection, corpus)
            elif gen.mode == "sent":
                summary = summarize_sent(
                    selection,
                    corpus,
                    llm,
                    entity_name,
                    temperature=gen.temperature,
                    sample_index=sample,
                    vectorizer=vectorizer,
                )
            else:
                summary = summarize_doc(
                    selection,
                    corpus,
                    llm,
                    entity_name,
                    temperature=gen.temperature,
                    sample_index=sample,
                    vectorizer=vectorizer,
                    char_budget=gen.char_budget,
                )
            rows.append(summary_to_row(summary))
    out = artifact_path(cfg, "summaries")
    write_text_atomic(out, "".join(json.dumps(r, ensure_ascii=False) + "\n" for r in rows))
    manifest.record(
        "summarize",
        cfg,
        {
            "corpus": artifact_path(cfg, "corpus"),
            "selections": artifact_path(cfg, "selections"),
        },
        ["summaries"],
    )
    return out


def _read_json_input(path: str, label: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise HiroError(f"{label} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise HiroError(f"{label} file {path} is not valid JSON: {exc.msg}") from exc


def _load_summary_rows(path: Path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rows.append(json.loads(line))
    return rows


def cmd_evaluate(cfg: PipelineConfig) -> Path:
    manifest = Manifest(cfg)
    manifest.require_inputs("evaluate", cfg, ["corpus", "selections", "summaries"])
    corpus = Corpus.load(artifact_path(cfg, "corpus"))
    selections = load_selections(artifact_path(cfg, "selections"))
    summary_rows = _load_summary_rows(artifact_path(cfg, "summaries"))
    vectorizer = build_tfidf(corpus)
    nli = make_nli(cfg)
    threshold = cfg.eval.entail_threshold

    references = None
    if cfg.paths.references:
        references = _read_json_input(cfg.paths.references, "paths.references")

    by_sample: dict[int, dict[str, dict]] = {}
    for row in summary_rows:
        by_sample.setdefault(row["sample"], {})[row["entity_id"]] = row

    review_sentences = {
        eid: [
            [s.text for s in corpus.sentences_of_review(rid)]
            for rid in corpus.entities[eid].review_ids
        ]
        for eid in corpus.entity_ids()
    }

    per_entity_samples: dict[str, list[EntityMetrics]] = {}
    for sample, rows_by_entity in sorted(by_sample.items()):
        summaries = {eid: row["sentences"] for eid, row in rows_by_entity.items()}
        gen_by_entity = (
            genericness(summaries, nli, threshold)
            if len(summaries) >= 2
            else {eid: 0.0 for eid in summaries}
        )
        for eid, row in rows_by_entity.items():
            summary = summary_from_row(row)
            prev = prevalence(list(summary.sentences), review_sentences[eid], nli, threshold)
            gen_value = gen_by_entity[eid]
            r2 = rl = None
            if references and eid in references:
                text = row["text"]
                r2 = rouge(text, references[eid], "r2_f1")
                rl = rouge(text, references[eid], "rL_f1")
            partial = majority = None
            if summary.evidence:
                partial, majority = attribution_support(summary, corpus, nli, threshold)
            per_entity_samples.setdefault(eid, []).append(
                EntityMetrics(
                    prevalence=prev,
                    genericness=gen_value,
                    sap=sap(prev, gen_value, cfg.eval.alpha_sap),
                    rouge2_f1=r2,
                    rougeL_f1=rl,
                    partial_support_pct=partial,
                    majority_support_pct=majority,
                )
            )

    report = EvalReport(alpha_sap=cfg.eval.alpha_sap, nli_backend=getattr(nli, "name", cfg.nli.backend))
    for eid, metrics_list in per_entity_samples.items():
        def mean_opt(values):
            present = [v for v in values if v is not None]
            return sum(present) / len(present) if present else None

        report.per_entity[eid] = EntityMetrics(
            prevalence=sum(m.prevalence for m in metrics_list) / len(metrics_list),
            genericness=sum(m.genericness for m in metrics_list) / len(metrics_list),
            sap=sum(m.sap for m in metrics_list) / len(metrics_list),
            rouge2_f1=mean_opt([m.rouge2_f1 for m in metrics_list]),
            rougeL_f1=mean_opt([m.rougeL_f1 for m in metrics_list]),
            partial_support_pct=mean_opt([m.partial_support_pct for m in metrics_list]),
            majority_support_pct=mean_opt([m.majority_support_pct for m in metrics_list]),
        )

    all_clusters = [
        [corpus.sentences[sid].text for sid in cluster.sentence_ids]
        for selection in selections
        for cluster in selection.clusters
    ]
    all_cluster_ids = [
        list(cluster.sentence_ids)
        for selection in selections
        for cluster in selection.clusters
    ]
    try:
        purity, colocation = cluster_quality(
            all_clusters,
            similarity=cfg.eval.similarity,
            vectorizer=vectorizer,
            nli=nli,
            rng=substream(cfg.seed, "eval-sampling"),
            ids=all_cluster_ids,
        )
        report.purity = purity
        report.colocation = colocation
        report.quality = purity - colocation
    except HiroError:
        pass

    if cfg.paths.oracle_clusters:
        oracle = _read_json_input(cfg.paths.oracle_clusters, "paths.oracle_clusters")
        ours: list[list[str]] = []
        theirs: list[list[str]] = []
        for selection in selections:
            for cluster in selection.clusters:
                ours.append(list(cluster.sentence_ids))
        for eid in sorted(oracle):
            for members in oracle[eid]:
                theirs.append(list(members))
        labels_a, labels_b = align_cluster_labels(ours, theirs)
        if len(labels_a) >= 2:
            report.ari = adjusted_rand_index(labels_a, labels_b)

    out = artifact_path(cfg, "report")
    doc = {"version": 1, "config": cfg.to_dict(), **report.to_dict()}
    write_json_atomic(out, doc)
    manifest.record(
        "evaluate",
        cfg,
        {
            "corpus": artifact_path(cfg, "corpus"),
            "selections": artifact_path(cfg, "selections"),
            "summaries": artifact_path(cfg, "summaries"),
        },
        ["report"],
    )
    return out


_CSV_COLUMNS = [
    "entity_id",
    "prevalence",
    "genericness",
    "sap",
    "rouge2_f1",
    "rougeL_f1",
    "partial_support_pct",
    "majority_support_pct",
]


def cmd_report(cfg: PipelineConfig) -> Path:
    manifest = Manifest(cfg)
    manifest.require_inputs("report", cfg, ["report", "selections"])
    doc = json.loads(artifact_path(cfg, "report").read_text(encoding="utf-8"))
    selections = load_selections(artifact_path(cfg, "selections"))

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_COLUMNS)
    for eid in sorted(doc["per_entity"]):
        row = doc["per_entity"][eid]
        writer.writerow([eid] + [row[c] for c in _CSV_COLUMNS[1:]])
    agg = doc["aggregate"]
    writer.writerow(["AGGREGATE"] + [agg.get(c) for c in _CSV_COLUMNS[1:]])
    out_csv = artifact_path(cfg, "report_csv")
    write_text_atomic(out_csv, buf.getvalue())

    hist = depth_histogram(selections)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["depth", "count"])
    for depth, count in hist.items():
        writer.writerow([depth, count])
    write_text_atomic(artifact_path(cfg, "depth_histogram_csv"), buf.getvalue())

    manifest.record(
        "report",
        cfg,
        {
            "report": artifact_path(cfg, "report"),
            "selections": artifact_path(cfg, "selections"),
        },
        ["report_csv", "depth_histogram_csv"],
    )
    return out_csv


STAGES = {
    "ingest": cmd_ingest,
    "mine-pairs": cmd_mine_pairs,
    "train": cmd_train,
    "index": cmd_index,
    "retrieve": cmd_retrieve,
    "summarize": cmd_summarize,
    "evaluate": cmd_evaluate,
    "report": cmd_report,
}
