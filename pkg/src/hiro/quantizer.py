"""Hierarchical residual quantizer.

Maps a dense sentence embedding to a path of discrete codes through a
D-level, K-way hierarchy. Each level scores its K codebook rows by negated
squared Euclidean distance to the residual left over by the rows chosen at
shallower levels. Inference picks the argmax per level; training samples
codes with Gumbel noise and optimizes codebooks (plus an optional square
projection of the input) with a confidence-weighted contrastive objective
over subpath embeddings, an entropy bonus, and a norm regularizer that
ties the scale of adjacent levels.

torch is used purely as the autodiff/optimizer engine inside training;
the public surface consumes and produces numpy arrays.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .corpus import Corpus, Vectorizer
from .errors import HiroError
from .pairing import PositivePair, negative_mask
from .util import write_text_atomic

MODEL_FORMAT_VERSION = 1


@dataclass
class QuantizerConfig:
    codebook_size: int = 12          # K, codes per level
    depth: int = 12                  # D, number of levels
    dim: int = 768                   # embedding dimensionality
    omega: float = 150.0             # negative-term weight in the contrastive loss
    beta_entropy: float = 0.0025     # weight of the (negated) code-entropy bonus
    beta_norm: float = 0.05          # weight of the inter-level norm regularizer
    gamma_norm: float = 1.5          # target shrink factor between adjacent levels
    alpha_init: float = 0.5          # per-level decay of the init scale
    tau0: float = 1.0                # initial sampling temperature
    tau_min: float = 0.5             # temperature floor
    gamma_temp: float = 33333.0      # temperature decay time constant (steps)
    depth_dropout: float = 0.3       # per-example probability of truncating the path
    learning_rate: float = 1e-4
    batch_size: int = 384
    steps: int = 1000
    use_projection: bool = True

    def validate(self) -> None:
        if self.codebook_size < 2:
            raise HiroError("codebook_size must be >= 2")
        if self.depth < 1:
            raise HiroError("depth must be >= 1")
        if self.tau_min > self.tau0:
            raise HiroError("tau_min must not exceed tau0")
        if not 0.0 <= self.depth_dropout <= 1.0:
            raise HiroError("depth_dropout must lie in [0, 1]")


def temperature(step: int, cfg: QuantizerConfig) -> float:
    """Annealed sampling temperature: exponential decay with a floor."""
    return max(cfg.tau_min, cfg.tau0 * math.exp(-step / cfg.gamma_temp))


class QuantizerModel:
    """Codebooks of shape (depth, K, dim) plus an optional square projection."""

    def __init__(
        self,
        codebooks: np.ndarray,
        projection: np.ndarray | None,
        config: QuantizerConfig,
    ):
        codebooks = np.asarray(codebooks, dtype=np.float64)
        if codebooks.shape != (config.depth, config.codebook_size, config.dim):
            raise HiroError(
                f"codebooks shape {codebooks.shape} does not match config "
                f"({config.depth}, {config.codebook_size}, {config.dim})"
            )
        if projection is not None:
            projection = np.asarray(projection, dtype=np.float64)
            if projection.shape != (config.dim, config.dim):
                raise HiroError("projection must be a square dim x dim matrix")
        self.codebooks = codebooks
        self.projection = projection
        self.config = config

    @classmethod
    def initialize(cls, config: QuantizerConfig, rng: np.random.Generator) -> "QuantizerModel":
        """Gaussian init with per-level scale alpha_init**level / sqrt(dim)."""
        config.validate()
        rows = np.empty((config.depth, config.codebook_size, config.dim))
        for d in range(config.depth):
            scale = config.alpha_init ** (d + 1) / math.sqrt(config.dim)
            rows[d] = rng.normal(0.0, scale, size=(config.codebook_size, config.dim))
        projection = np.eye(config.dim) if config.use_projection else None
        return cls(rows, projection, config)

    def project(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        if self.projection is None:
            return z
        return z @ self.projection.T

    def copy(self) -> "QuantizerModel":
        proj = None if self.projection is None else self.projection.copy()
        return QuantizerModel(self.codebooks.copy(), proj, self.config)

    def to_json(self) -> str:
        doc = {
            "version": MODEL_FORMAT_VERSION,
            "K": self.config.codebook_size,
            "D": self.config.depth,
            "dim": self.config.dim,
            "projection": None if self.projection is None else self.projection.tolist(),
            "codebooks": self.codebooks.tolist(),
            "config": asdict(self.config),
        }
        return json.dumps(doc, ensure_ascii=False) + "\n"

    def save(self, path: str | Path) -> None:
        write_text_atomic(path, self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "QuantizerModel":
        doc = json.loads(text)
        if doc.get("version") != MODEL_FORMAT_VERSION:
            raise HiroError(f"unsupported model version {doc.get('version')!r}")
        config = QuantizerConfig(**doc["config"])
        proj = doc["projection"]
        return cls(
            np.asarray(doc["codebooks"]),
            None if proj is None else np.asarray(proj),
            config,
        )

    @classmethod
    def load(cls, path: str | Path) -> "QuantizerModel":
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def level_scores(model: QuantizerModel, z: np.ndarray, prefix: Sequence[int]) -> np.ndarray:
    """Scores for the K codes at level len(prefix)+1.

    score(q) = -|| (z' - sum of chosen rows above) - C_d(q) ||^2 where z' is
    the projected input. All scores are <= 0, with 0 reached exactly when a
    row equals the residual.
    """
    d = len(prefix)
    if d >= model.config.depth:
        raise HiroError(f"prefix of length {d} leaves no level to score (depth {model.config.depth})")
    residual = model.project(z)
    for level, code in enumerate(prefix):
        residual = residual - model.codebooks[level, code]
    diffs = model.codebooks[d] - residual
    return -np.sum(diffs * diffs, axis=1)


def encode(model: QuantizerModel, z: np.ndarray) -> tuple[int, ...]:
    """Greedy per-level argmax path; ties break toward the smaller code."""
    prefix: list[int] = []
    residual = model.project(z)
    for d in range(model.config.depth):
        diffs = model.codebooks[d] - residual
        scores = -np.sum(diffs * diffs, axis=1)
        code = int(np.argmax(scores))
        prefix.append(code)
        residual = residual - model.codebooks[d, code]
    return tuple(prefix)


def sample_path(
    model: QuantizerModel,
    z: np.ndarray,
    tau: float,
    rng: np.random.Generator,
) -> tuple[tuple[int, ...], list[np.ndarray]]:
    """Sample a path with Gumbel noise; also return the soft distributions.

    Per level, p(q) = softmax(scores / tau) and the hard code is the argmax
    of scores / tau + Gumbel noise, which samples exactly from p. The soft
    distributions are what training differentiates through.
    """
    if tau <= 0:
        raise HiroError("temperature must be positive")
    path: list[int] = []
    probs: list[np.ndarray] = []
    residual = model.project(z)
    K = model.config.codebook_size
    for d in range(model.config.depth):
        diffs = model.codebooks[d] - residual
        scores = -np.sum(diffs * diffs, axis=1)
        probs.append(_softmax(scores / tau))
        noisy = scores / tau + rng.gumbel(size=K)
        code = int(np.argmax(noisy))
        path.append(code)
        residual = residual - model.codebooks[d, code]
    return tuple(path), probs


def path_embedding(model: QuantizerModel, path_prefix: Sequence[int]) -> np.ndarray:
    """Sum of the codebook rows selected by the prefix."""
    if not 1 <= len(path_prefix) <= model.config.depth:
        raise HiroError("path prefix length must be in [1, depth]")
    out = np.zeros(model.config.dim)
    for level, code in enumerate(path_prefix):
        out += model.codebooks[level, code]
    return out


def subpath_similarity(model: QuantizerModel, path_a: Sequence[int], path_b: Sequence[int]) -> float:
    """Mean over depths of the floored dot product of cumulative embeddings.

    Each level contributes max(dot, 0), so pushing representations ever
    further apart earns nothing beyond orthogonality.
    """
    D = model.config.depth
    if len(path_a) != D or len(path_b) != D:
        raise HiroError("subpath_similarity expects two full-depth paths")
    acc = 0.0
    ea = np.zeros(model.config.dim)
    eb = np.zeros(model.config.dim)
    for level in range(D):
        ea = ea + model.codebooks[level, path_a[level]]
        eb = eb + model.codebooks[level, path_b[level]]
        acc += max(float(ea @ eb), 0.0)
    return acc / D


def _softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - np.max(x)
    e = np.exp(shifted)
    return e / e.sum()


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class LossResult:
    loss: float
    nce: float
    entropy_term: float
    norm_term: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)


def sample_batch_draws(
    model: QuantizerModel,
    embeddings: np.ndarray,
    n_pairs: int,
    tau: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw the stochastic parts of one training step.

    Returns hard paths (one per batch sentence, queries then positives) and
    per-pair truncation depths for depth dropout. Separated from the loss
    so the loss stays a deterministic, differentiable function of the
    parameters given these draws.
    """
    cfg = model.config
    n = embeddings.shape[0]
    Zp = model.project(embeddings)
    paths = np.zeros((n, cfg.depth), dtype=np.int64)
    cum = np.zeros_like(Zp)
    for d in range(cfg.depth):
        residual = Zp - cum
        diffs = residual[:, None, :] - model.codebooks[d][None, :, :]
        scores = -np.sum(diffs * diffs, axis=2)
        noisy = scores / tau + rng.gumbel(size=(n, cfg.codebook_size))
        hard = np.argmax(noisy, axis=1)
        paths[:, d] = hard
        cum = cum + model.codebooks[d][hard]
    u = rng.random(n_pairs)
    sampled_depths = rng.integers(1, cfg.depth + 1, size=n_pairs)
    depths = np.where(u < cfg.depth_dropout, sampled_depths, cfg.depth)
    return paths, depths.astype(np.int64)


def loss_given_draws(
    codebooks: np.ndarray,
    projection: np.ndarray | None,
    query_embeddings: np.ndarray,
    positive_embeddings: np.ndarray,
    rho: np.ndarray,
    neg_mask: np.ndarray,
    tau: float,
    omega: float,
    beta_entropy: float,
    beta_norm: float,
    gamma_norm: float,
    paths: np.ndarray,
    depths: np.ndarray,
    compute_grads: bool = True,
) -> LossResult:
    """Contrastive objective for one batch, with fixed stochastic draws.

    The batch sentence list is queries followed by positives; ``neg_mask``
    is boolean over that 2B list and row i gives the admissible negatives
    for pair i's query. Soft per-level code distributions follow the hard
    residual path in ``paths``; pair i compares cumulative soft embeddings
    up to ``depths[i]`` levels, flooring each level's dot product at zero.

    Returns the loss split into its three terms, plus gradients for the
    codebooks and projection when requested.
    """
    D, K, dim = codebooks.shape
    B = query_embeddings.shape[0]
    cb = torch.tensor(codebooks, dtype=torch.float64, requires_grad=compute_grads)
    proj = None
    if projection is not None:
        proj = torch.tensor(projection, dtype=torch.float64, requires_grad=compute_grads)
    Z = torch.tensor(
        np.concatenate([query_embeddings, positive_embeddings], axis=0), dtype=torch.float64
    )
    Zp = Z @ proj.T if proj is not None else Z
    paths_t = torch.tensor(paths, dtype=torch.int64)
    mask_t = torch.tensor(np.asarray(neg_mask, dtype=bool))
    rho_t = torch.tensor(np.asarray(rho, dtype=np.float64))

    log_probs = []
    level_soft = []
    cum_hard = torch.zeros_like(Zp)
    for d in range(D):
        residual = Zp - cum_hard
        diffs = residual.unsqueeze(1) - cb[d].unsqueeze(0)
        scores = -(diffs * diffs).sum(-1)
        # log_softmax keeps the entropy backward finite when a code's
        # probability underflows to exactly zero.
        logp = torch.log_softmax(scores / tau, dim=-1)
        log_probs.append(logp)
        level_soft.append(logp.exp() @ cb[d])
        cum_hard = cum_hard + cb[d][paths_t[:, d]]
    soft_paths = torch.cumsum(torch.stack(level_soft, dim=1), dim=1)  # (2B, D, dim)

    depths_t = torch.tensor(depths, dtype=torch.int64)
    level_idx = torch.arange(D).unsqueeze(0)
    depth_w = (level_idx < depths_t.unsqueeze(1)).to(torch.float64) / depths_t.unsqueeze(1)

    dot_pos = (soft_paths[:B] * soft_paths[B:]).sum(-1)  # (B, D)
    s_pos = (torch.relu(dot_pos) * depth_w).sum(-1)  # (B,)
    dot_neg = torch.einsum("bdk,ndk->bnd", soft_paths[:B], soft_paths)  # (B, 2B, D)
    s_neg = (torch.relu(dot_neg) * depth_w.unsqueeze(1)).sum(-1)  # (B, 2B)

    query_mask = mask_t[:B]  # (B, 2B)
    n_neg = query_mask.sum(dim=1)
    log_w = torch.log(torch.tensor(omega) / torch.clamp(n_neg, min=1).to(torch.float64))
    neg_terms = torch.where(
        query_mask, s_neg + log_w.unsqueeze(1), torch.tensor(-torch.inf, dtype=torch.float64)
    )
    all_terms = torch.cat([s_pos.unsqueeze(1), neg_terms], dim=1)
    log_f = s_pos - torch.logsumexp(all_terms, dim=1)
    nce = -(rho_t * log_f).sum()

    entropy = torch.stack([-(lp.exp() * lp).sum(-1) for lp in log_probs]).mean()
    entropy_term = beta_entropy * (-entropy)

    if D > 1:
        mean_norms = cb.norm(dim=2).mean(dim=1)
        norm_term = beta_norm * ((mean_norms[1:] - mean_norms[:-1] / gamma_norm) ** 2).mean()
    else:
        norm_term = torch.zeros((), dtype=torch.float64)

    total = nce + entropy_term + norm_term
    grads: dict[str, np.ndarray] = {}
    if compute_grads:
        total.backward()
        grads["codebooks"] = cb.grad.detach().numpy().copy()
        if proj is not None:
            grads["projection"] = proj.grad.detach().numpy().copy()
    return LossResult(
        loss=float(total.detach()),
        nce=float(nce.detach()),
        entropy_term=float(entropy_term.detach()),
        norm_term=float(norm_term.detach()),
        grads=grads,
    )


def contrastive_loss(
    model: QuantizerModel,
    query_embeddings: np.ndarray,
    positive_embeddings: np.ndarray,
    rho: np.ndarray,
    neg_mask: np.ndarray,
    tau: float,
    rng: np.random.Generator,
) -> LossResult:
    """Sample paths and dropout depths, then evaluate the training loss."""
    cfg = model.config
    batch = np.concatenate([query_embeddings, positive_embeddings], axis=0)
    paths, depths = sample_batch_draws(model, batch, query_embeddings.shape[0], tau, rng)
    return loss_given_draws(
        model.codebooks,
        model.projection,
        query_embeddings,
        positive_embeddings,
        rho,
        neg_mask,
        tau,
        cfg.omega,
        cfg.beta_entropy,
        cfg.beta_norm,
        cfg.gamma_norm,
        paths,
        depths,
    )


@dataclass
class TrainState:
    """Optimizer bookkeeping carried across steps."""

    step: int
    tau: float
    seed: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]


class _Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def update(self, state: TrainState, name: str, param: np.ndarray, grad: np.ndarray) -> None:
        t = state.step + 1
        m = state.m[name] = self.beta1 * state.m[name] + (1 - self.beta1) * grad
        v = state.v[name] = self.beta2 * state.v[name] + (1 - self.beta2) * grad * grad
        m_hat = m / (1 - self.beta1**t)
        v_hat = v / (1 - self.beta2**t)
        param -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def train(
    model: QuantizerModel,
    pairs: list[PositivePair],
    corpus: Corpus,
    vectorizer: Vectorizer,
    embeddings_by_id: dict[str, np.ndarray],
    rng: np.random.Generator,
    neg_threshold: float = 0.3,
    log_every: int = 1,
) -> tuple[QuantizerModel, list[dict]]:
    """Mini-batch training of codebooks and projection.

    ``embeddings_by_id`` must cover every sentence named by a pair. The
    model passed in is left untouched; the trained copy and a per-step loss
    log are returned. Deterministic for a fixed rng state.
    """
    cfg = model.config
    if not pairs and cfg.steps > 0:
        raise HiroError("cannot train on an empty pair list")
    for pair in pairs:
        for sid in (pair.query_sentence_id, pair.target_sentence_id):
            if sid not in embeddings_by_id:
                raise HiroError(f"no embedding available for pair sentence {sid!r}")

    model = model.copy()
    state = TrainState(
        step=0,
        tau=temperature(0, cfg),
        seed=0,
        m={"codebooks": np.zeros_like(model.codebooks)},
        v={"codebooks": np.zeros_like(model.codebooks)},
    )
    if model.projection is not None:
        state.m["projection"] = np.zeros_like(model.projection)
        state.v["projection"] = np.zeros_like(model.projection)
    adam = _Adam(lr=cfg.learning_rate)
    log: list[dict] = []

    n_pairs = len(pairs)
    for step in range(cfg.steps):
        tau = temperature(step, cfg)
        state.tau = tau
        take = min(cfg.batch_size, n_pairs)
        idx = rng.choice(n_pairs, size=take, replace=False)
        batch_pairs = [pairs[i] for i in idx]
        batch_sentences = [corpus.sentences[p.query_sentence_id] for p in batch_pairs] + [
            corpus.sentences[p.target_sentence_id] for p in batch_pairs
        ]
        mask = negative_mask(batch_sentences, vectorizer, neg_threshold)
        zq = np.stack([embeddings_by_id[p.query_sentence_id] for p in batch_pairs])
        zp = np.stack([embeddings_by_id[p.target_sentence_id] for p in batch_pairs])
        rho = np.array([p.rho for p in batch_pairs])

        result = contrastive_loss(model, zq, zp, rho, mask, tau, rng)
        adam.update(state, "codebooks", model.codebooks, result.grads["codebooks"])
        if model.projection is not None:
            adam.update(state, "projection", model.projection, result.grads["projection"])
        state.step = step + 1
        if step % log_every == 0 or step == cfg.steps - 1:
            log.append(
                {
                    "step": step,
                    "tau": tau,
                    "loss": result.loss,
                    "nce": result.nce,
                    "entropy_term": result.entropy_term,
                    "norm_term": result.norm_term,
                }
            )
    return model, log
