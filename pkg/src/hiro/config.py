"""Pipeline configuration: one JSON file, overridable from the CLI.

Secrets (API keys) never live in the config file; they come from the
environment (HIRO_NLI_API_KEY, HIRO_LLM_API_KEY). All randomness derives
from the single top-level seed through named substreams.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .errors import ConfigError
from .quantizer import QuantizerConfig


@dataclass
class PathsConfig:
    reviews: str = "reviews.jsonl"
    output_dir: str = "out"
    embeddings_manifest: str | None = None
    references: str | None = None
    oracle_clusters: str | None = None


@dataclass
class EmbeddingConfig:
    mode: str = "mock"  # mock | file | http
    dim: int = 64
    endpoint: str | None = None
    seed: int = 0


@dataclass
class NliConfig:
    backend: str = "mock"  # mock | http
    endpoint: str | None = None
    jaccard_threshold: float = 0.5
    max_retries: int = 3


@dataclass
class PairingConfig:
    cand_threshold: float = 0.4
    k_candidates: int = 20
    upper_cap: float = 0.95
    neg_threshold: float = 0.3
    entail_threshold: float = 0.5
    pair_budget: int = 10000


@dataclass
class RetrievalConfig:
    top_k: int = 8
    alpha: float = 6.0
    drop_threshold: float = 0.05
    merge_threshold: float = 0.5


@dataclass
class GenerationConfig:
    mode: str = "ext"  # ext | sent | doc
    backend: str = "mock-echo"  # mock-echo | mock-constant | mock-replay | http
    temperature: float = 0.7
    samples: int = 3
    model: str = "mistral-7b-instruct"
    endpoint: str | None = None
    constant_text: str = "The reviews are mixed. Guests mention the location."
    replay_fixture: str | None = None
    char_budget: int = 12000
    max_retries: int = 3


@dataclass
class EvalConfig:
    alpha_sap: float = 0.5
    similarity: str = "tfidf"  # tfidf | nli
    entail_threshold: float = 0.5


@dataclass
class PipelineConfig:
    seed: int = 0
    paths: PathsConfig = field(default_factory=PathsConfig)
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    nli: NliConfig = field(default_factory=NliConfig)
    pairing: PairingConfig = field(default_factory=PairingConfig)
    quantizer: QuantizerConfig = field(default_factory=QuantizerConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> None:
        for name, value in (
            ("pairing.cand_threshold", self.pairing.cand_threshold),
            ("pairing.neg_threshold", self.pairing.neg_threshold),
            ("pairing.entail_threshold", self.pairing.entail_threshold),
            ("retrieval.drop_threshold", self.retrieval.drop_threshold),
            ("retrieval.merge_threshold", self.retrieval.merge_threshold),
            ("nli.jaccard_threshold", self.nli.jaccard_threshold),
        ):
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if self.retrieval.top_k < 1:
            raise ConfigError("retrieval.top_k must be >= 1")
        if self.quantizer.codebook_size < 1 or self.quantizer.depth < 1:
            raise ConfigError("quantizer codebook_size and depth must be >= 1")
        if self.quantizer.tau_min > self.quantizer.tau0:
            raise ConfigError("quantizer.tau_min must not exceed quantizer.tau0")
        if self.embedding.mode not in ("mock", "file", "http"):
            raise ConfigError(f"unknown embedding mode {self.embedding.mode!r}")
        if self.generation.mode not in ("ext", "sent", "doc"):
            raise ConfigError(f"unknown generation mode {self.generation.mode!r}")
        if self.eval.similarity not in ("tfidf", "nli"):
            raise ConfigError(f"unknown eval similarity {self.eval.similarity!r}")

    def to_dict(self) -> dict:
        return asdict(self)


def _from_dict(cls, data: dict):
    if not isinstance(data, dict):
        raise ConfigError(f"expected an object for {cls.__name__}, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for {cls.__name__}")
        if cls is PipelineConfig and key in _NESTED:
            kwargs[key] = _from_dict(_NESTED[key], value)
        else:
            kwargs[key] = value
    return cls(**kwargs)


_NESTED = {
    "paths": PathsConfig,
    "embedding": EmbeddingConfig,
    "nli": NliConfig,
    "pairing": PairingConfig,
    "quantizer": QuantizerConfig,
    "retrieval": RetrievalConfig,
    "generation": GenerationConfig,
    "eval": EvalConfig,
}


def config_from_dict(data: dict) -> PipelineConfig:
    cfg = _from_dict(PipelineConfig, data)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc.msg}") from exc
    return config_from_dict(data)


def apply_overrides(cfg: PipelineConfig, overrides: list[str]) -> PipelineConfig:
    """Apply ``section.key=value`` overrides; values parse as JSON literals
    with a plain-string fallback."""
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        dotted, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        target = cfg
        parts = dotted.split(".")
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise ConfigError(f"unknown config section {part!r} in override {item!r}")
            target = getattr(target, part)
        leaf = parts[-1]
        if not hasattr(target, leaf):
            raise ConfigError(f"unknown config key {dotted!r}")
        setattr(target, leaf, value)
    cfg.validate()
    return cfg
