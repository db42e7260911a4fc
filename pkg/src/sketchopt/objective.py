"""Prompt model, scoring-backend contract, and the deterministic mock backend.

A scoring backend encodes text into unit-norm embedding vectors and scores
an image batch against compiled prompts, returning the loss plus its exact
gradient with respect to the pixel batch:

    loss = - sum_d sum_pos w_p cos(E(img_d), e_p)
           + scale * sum_d sum_neg w_n cos(E(img_d), e_n)

summed over the D copies (per-copy mean is also reported). The mock
backend stands in for the neural encoder in every core test: its image
embedding is a fixed random projection of a 16x16 average-pooled image,
normalized to unit length, so the whole score has a closed-form gradient.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .errors import ConfigError, ContractError, DomainError
from .prng import text_entropy

EMBED_DIM = 512
DEFAULT_NEGATIVE_SCALE = 0.3

_POOL = 16  # mock backend pools images to _POOL x _POOL x 3 before projecting


def _as_weighted(prompts) -> list[tuple[str, float]]:
    out = []
    for p in prompts:
        text, weight = (p, 1.0) if isinstance(p, str) else p
        if not text:
            raise ConfigError("prompt text must be non-empty")
        weight = float(weight)
        if not np.isfinite(weight) or weight <= 0:
            raise ConfigError(f"prompt weight must be finite and > 0, got {weight}")
        out.append((text, weight))
    return out


@dataclass
class PromptSet:
    positives: list[tuple[str, float]]
    negatives: list[tuple[str, float]] = field(default_factory=list)
    negative_scale: float = DEFAULT_NEGATIVE_SCALE

    def __post_init__(self):
        self.positives = _as_weighted(self.positives)
        self.negatives = _as_weighted(self.negatives)
        if not self.positives:
            raise ConfigError("at least one positive prompt is required")
        if not np.isfinite(self.negative_scale) or self.negative_scale < 0:
            raise ConfigError(f"negative_scale must be finite and >= 0, got {self.negative_scale}")


@dataclass
class CompiledPrompts:
    """PromptSet with embeddings resolved by a backend."""

    positive_texts: list[str]
    positive_weights: np.ndarray  # (P,)
    positive_embeddings: np.ndarray  # (P, dim)
    negative_texts: list[str]
    negative_weights: np.ndarray  # (N,)
    negative_embeddings: np.ndarray  # (N, dim)
    negative_scale: float

    @property
    def labels(self) -> list[str]:
        return [f"pos:{t}" for t in self.positive_texts] + [f"neg:{t}" for t in self.negative_texts]


@dataclass
class ScoreReport:
    loss: float  # summed over the D copies
    n_copies: int
    per_prompt: list[tuple[str, float]]  # label -> mean cosine over copies

    @property
    def loss_per_copy(self) -> float:
        return self.loss / self.n_copies


class ScoringBackend(Protocol):
    embedding_dim: int
    model_id: str

    def encode_text(self, texts: list[str]) -> np.ndarray: ...

    def score_images(
        self, batch: np.ndarray, prompts: CompiledPrompts
    ) -> tuple[ScoreReport, np.ndarray]: ...


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity is undefined for zero vectors")
    return float(a @ b / (na * nb))


def compile_prompts(backend: ScoringBackend, prompts: PromptSet) -> CompiledPrompts:
    pos_texts = [t for t, _ in prompts.positives]
    neg_texts = [t for t, _ in prompts.negatives]
    pos_emb = backend.encode_text(pos_texts)
    neg_emb = (
        backend.encode_text(neg_texts)
        if neg_texts
        else np.zeros((0, backend.embedding_dim))
    )
    return CompiledPrompts(
        positive_texts=pos_texts,
        positive_weights=np.array([w for _, w in prompts.positives], dtype=np.float64),
        positive_embeddings=pos_emb,
        negative_texts=neg_texts,
        negative_weights=np.array([w for _, w in prompts.negatives], dtype=np.float64),
        negative_embeddings=neg_emb,
        negative_scale=prompts.negative_scale,
    )


def _check_batch(batch: np.ndarray) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 4 or batch.shape[3] != 3:
        raise ContractError(f"batch must be (D, H, W, 3), got {batch.shape}")
    if batch.min() < -1e-9 or batch.max() > 1.0 + 1e-9:
        raise ContractError("batch values must lie in [0, 1]")
    return batch


def _loss_from_cosines(cos: np.ndarray, prompts: CompiledPrompts):
    """cos: (D, P+N) cosines -> (loss summed over copies, per-prompt means)."""
    n_pos = len(prompts.positive_texts)
    pos, neg = cos[:, :n_pos], cos[:, n_pos:]
    loss = float(
        -(pos @ prompts.positive_weights).sum()
        + prompts.negative_scale * (neg @ prompts.negative_weights).sum()
    )
    per_prompt = list(zip(prompts.labels, cos.mean(axis=0).tolist()))
    return loss, per_prompt


def prompt_coefficients(prompts: CompiledPrompts) -> np.ndarray:
    """d(loss)/d(cosine) per prompt column: -w for positives, scale*w for negatives."""
    return np.concatenate(
        [-prompts.positive_weights, prompts.negative_scale * prompts.negative_weights]
    )


class MockBackend:
    """Deterministic CLIP stand-in with analytic gradients.

    Image embedding: normalize(P @ flatten(avgpool_16(img))), with P a fixed
    512x768 matrix drawn once from the seeded PRNG. Text embedding: a unit
    random vector seeded from a stable hash of the text. Requires image
    sides divisible by 16 so the pooling stays an exact block mean.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.embedding_dim = EMBED_DIM
        self.model_id = f"mock-pooled-linear-{EMBED_DIM}/seed{self.seed}"
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x70726F6A]))
        self._proj = rng.normal(size=(EMBED_DIM, _POOL * _POOL * 3)) / np.sqrt(_POOL * _POOL * 3)

    def encode_text(self, texts: list[str]) -> np.ndarray:
        if not texts or any(not t for t in texts):
            raise ContractError("texts must be non-empty strings")
        out = np.empty((len(texts), EMBED_DIM))
        for i, text in enumerate(texts):
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, text_entropy(text)]))
            v = rng.normal(size=EMBED_DIM)
            out[i] = v / np.linalg.norm(v)
        return out

    def _pool(self, batch: np.ndarray):
        d, h, w = batch.shape[:3]
        if h % _POOL or w % _POOL:
            raise ContractError(f"mock backend needs sides divisible by {_POOL}, got {h}x{w}")
        bh, bw = h // _POOL, w // _POOL
        pooled = batch.reshape(d, _POOL, bh, _POOL, bw, 3).mean(axis=(2, 4))
        return pooled.reshape(d, -1), (bh, bw)

    def encode_images(self, batch: np.ndarray) -> np.ndarray:
        """Unit-norm embeddings for a (D, H, W, 3) batch (no gradients)."""
        batch = _check_batch(batch)
        pooled, _ = self._pool(batch)
        y = pooled @ self._proj.T
        norms = np.maximum(np.linalg.norm(y, axis=1, keepdims=True), 1e-12)
        return y / norms

    def score_images(
        self, batch: np.ndarray, prompts: CompiledPrompts
    ) -> tuple[ScoreReport, np.ndarray]:
        batch = _check_batch(batch)
        d, h, w = batch.shape[:3]
        pooled, (bh, bw) = self._pool(batch)

        y = pooled @ self._proj.T  # (D, 512)
        norms = np.maximum(np.linalg.norm(y, axis=1, keepdims=True), 1e-12)
        y_hat = y / norms
        embs = np.concatenate([prompts.positive_embeddings, prompts.negative_embeddings])
        cos = y_hat @ embs.T  # (D, P+N)
        loss, per_prompt = _loss_from_cosines(cos, prompts)

        # d(loss)/d(y_hat_d) = q, then through the normalization and projection
        q = prompt_coefficients(prompts) @ embs  # (512,)
        d_yhat = np.broadcast_to(q, y_hat.shape)
        d_y = (d_yhat - y_hat * np.einsum("dk,dk->d", y_hat, d_yhat)[:, None]) / norms
        d_pooled = d_y @ self._proj  # (D, 768)
        d_batch = np.repeat(
            np.repeat(d_pooled.reshape(d, _POOL, 1, _POOL, 1, 3), bh, axis=2), bw, axis=4
        ).reshape(d, h, w, 3) / (bh * bw)
        return ScoreReport(loss, d, per_prompt), d_batch


class PixelTargetObjective:
    """ScoringBackend-shaped MSE objective against a fixed target image.

    loss = mean over copies of MSE(img_d, target); gradient is exact.
    Enables closed-loop reconstruction tests with no encoder at all.
    """

    def __init__(self, target: np.ndarray):
        self.target = np.asarray(target, dtype=np.float64)
        if self.target.ndim != 3 or self.target.shape[2] != 3:
            raise ContractError(f"target must be (H, W, 3), got {self.target.shape}")
        self.embedding_dim = EMBED_DIM
        self.model_id = "pixel-target-mse"

    def encode_text(self, texts: list[str]) -> np.ndarray:
        raise ContractError("the MSE objective has no text encoder")

    def score_images(self, batch: np.ndarray, prompts=None):
        batch = np.asarray(batch, dtype=np.float64)
        if batch.ndim != 4 or batch.shape[1:] != self.target.shape:
            raise ContractError(f"batch shape {batch.shape} does not match target {self.target.shape}")
        d = batch.shape[0]
        m = self.target.size
        diff = batch - self.target
        loss = float((diff**2).sum() / (m * d))
        grad = 2.0 * diff / (m * d)
        return ScoreReport(loss, d, []), grad
