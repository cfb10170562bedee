"""Hierarchical indexing, retrieval and generation for opinion summarization.

The pipeline learns a discrete hierarchical index over review sentences
with a contrastively trained residual quantizer, retrieves popular opinion
clusters per entity with a popularity-vs-baseline scoring rule, generates
summaries through pluggable LLM backends, and evaluates them with
reference-free entailment metrics.
"""

__version__ = "0.1.0"

from .corpus import Corpus, Entity, Review, Sentence, SparseVector, Vectorizer, build_tfidf, ingest, tfidf_sim, tokenize
from .errors import ConfigError, HiroError, IngestError, StageError, TransportError
from .pairing import PositivePair, mine_candidates, mine_pairs, negative_mask
from .quantizer import (
    QuantizerConfig,
    QuantizerModel,
    contrastive_loss,
    encode,
    level_scores,
    path_embedding,
    sample_path,
    subpath_similarity,
    temperature,
    train,
)
from .retriever import (
    ClusterSelection,
    IndexedCorpus,
    SubpathScore,
    depth_histogram,
    index_corpus,
    inverse_baseline_popularity,
    postprocess_clusters,
    score_subpath,
    select_top_k,
    term_popularity,
)

__all__ = [
    "__version__",
    "Corpus",
    "Entity",
    "Review",
    "Sentence",
    "SparseVector",
    "Vectorizer",
    "build_tfidf",
    "ingest",
    "tfidf_sim",
    "tokenize",
    "HiroError",
    "IngestError",
    "ConfigError",
    "StageError",
    "TransportError",
    "PositivePair",
    "mine_candidates",
    "mine_pairs",
    "negative_mask",
    "QuantizerConfig",
    "QuantizerModel",
    "contrastive_loss",
    "encode",
    "level_scores",
    "path_embedding",
    "sample_path",
    "subpath_similarity",
    "temperature",
    "train",
    "ClusterSelection",
    "IndexedCorpus",
    "SubpathScore",
    "depth_histogram",
    "index_corpus",
    "inverse_baseline_popularity",
    "postprocess_clusters",
    "score_subpath",
    "select_top_k",
    "term_popularity",
]
