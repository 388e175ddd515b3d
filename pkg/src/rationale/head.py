"""Soft attention rationale head.

Maps contextual token embeddings to per-token scores, pools them into a
document representation, and predicts a document label:

    e_i      = tanh(W_hidden t_i + b_hidden)
    logit_i  = W_score e_i + b_score
    score_i  = sigmoid(logit_i)                    in [0, 1]
    weight_i = score_i**beta / sum_j score_j**beta
    c        = sum_i weight_i t_i
    d        = tanh(W_doc c + b_doc)
    y_hat    = sigmoid(W_out d + b_out)

Two training signals for the scores are provided.  The *weighted* loss
supervises only each document's extreme scores (min toward 0, max toward the
document label).  The *ranked* loss supervises every score: the top k% are
pulled toward the document label and the rest toward 0.

Two document pipelines reuse the same head: the *compositional* forward
encodes sentences independently and concatenates them; the *monolithic*
forward runs the windowed long-document encoder with a CLS token and drops
the CLS row before scoring.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import encoder as enc
from .tensor import ShapeError, Tensor

THRESHOLD = 0.5  # fixed rationale classification threshold (strict >)

ATTENTION_EPS = 1e-12  # added to the pooling denominator against underflow


class DegenerateAttentionError(ValueError):
    """Every token score is exactly zero; the attention distribution is undefined."""


@dataclass(frozen=True)
class HeadConfig:
    h_prime: int = 32
    s: int = 32
    beta: float = 1.0
    gamma: float = 1.0
    gamma_ranked: float = 1.0
    k: float = 8.0
    loss_variant: str = "ranked"

    def __post_init__(self) -> None:
        if self.h_prime <= 0 or self.s <= 0:
            raise ValueError("h_prime and s must be positive")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        if not 0 < self.k <= 100:
            raise ValueError(f"k must lie in (0, 100], got {self.k}")
        if self.gamma < 0 or self.gamma_ranked < 0:
            raise ValueError("gamma and gamma_ranked must be nonnegative")
        if self.loss_variant not in ("weighted", "ranked"):
            raise ValueError(f"unknown loss variant {self.loss_variant!r}")

    @property
    def threshold(self) -> float:
        return THRESHOLD

    def to_dict(self) -> dict:
        return {
            "h_prime": self.h_prime,
            "s": self.s,
            "beta": self.beta,
            "gamma": self.gamma,
            "gamma_ranked": self.gamma_ranked,
            "k": self.k,
            "loss_variant": self.loss_variant,
        }


@dataclass
class SoftAttentionParams:
    """The eight learnable arrays of the head (shapes in math convention)."""

    w_hidden: Tensor  # [h', h]
    b_hidden: Tensor  # [h']
    w_score: Tensor   # [1, h']
    b_score: Tensor   # scalar
    w_doc: Tensor     # [s, h]
    b_doc: Tensor     # [s]
    w_out: Tensor     # [1, s]
    b_out: Tensor     # scalar

    PREFIX = "head."

    @classmethod
    def shapes(cls, h: int, cfg: HeadConfig) -> dict[str, tuple[int, ...]]:
        return {
            cls.PREFIX + "w_hidden": (cfg.h_prime, h),
            cls.PREFIX + "b_hidden": (cfg.h_prime,),
            cls.PREFIX + "w_score": (1, cfg.h_prime),
            cls.PREFIX + "b_score": (),
            cls.PREFIX + "w_doc": (cfg.s, h),
            cls.PREFIX + "b_doc": (cfg.s,),
            cls.PREFIX + "w_out": (1, cfg.s),
            cls.PREFIX + "b_out": (),
        }

    @classmethod
    def from_flat(cls, params: dict[str, Tensor]) -> "SoftAttentionParams":
        p = cls.PREFIX
        return cls(
            w_hidden=params[p + "w_hidden"],
            b_hidden=params[p + "b_hidden"],
            w_score=params[p + "w_score"],
            b_score=params[p + "b_score"],
            w_doc=params[p + "w_doc"],
            b_doc=params[p + "b_doc"],
            w_out=params[p + "w_out"],
            b_out=params[p + "b_out"],
        )


@dataclass
class Prediction:
    """Frozen per-document outputs at evaluation time."""

    doc_id: str
    y_hat: float
    token_scores: np.ndarray      # in [0, 1]
    weights: np.ndarray           # simplex over tokens
    binary_rationale: np.ndarray  # token_scores > THRESHOLD, strict

    @property
    def doc_pred(self) -> int:
        return int(self.y_hat > THRESHOLD)


@dataclass
class HeadForward:
    """Live graph nodes of one document forward pass."""

    y_hat: Tensor        # scalar
    token_scores: Tensor  # [N]
    weights: Tensor       # [N]
    pooled: Tensor        # [h]

    def to_prediction(self, doc_id: str = "") -> Prediction:
        scores = self.token_scores.data.copy()
        return Prediction(
            doc_id=doc_id,
            y_hat=self.y_hat.item(),
            token_scores=scores,
            weights=self.weights.data.copy(),
            binary_rationale=(scores > THRESHOLD).astype(np.int8),
        )


def token_scores(t: Tensor, params: SoftAttentionParams) -> tuple[Tensor, Tensor]:
    """Score every token in (0, 1); also returns the pre-sigmoid logits."""
    n = t.shape[0]
    if n == 0:
        raise ShapeError("cannot score an empty document")
    e = (t @ params.w_hidden.T + params.b_hidden).tanh()
    logits = (e @ params.w_score.T).reshape((n,)) + params.b_score
    return logits.sigmoid(), logits


def attention_pool(t: Tensor, scores: Tensor, beta: float) -> tuple[Tensor, Tensor]:
    """Normalize beta-sharpened scores and pool token embeddings.

    Raises on literally all-zero scores; otherwise an epsilon in the
    denominator guards against underflow of tiny positive scores.
    """
    n = scores.shape[0]
    if n == 0:
        raise ShapeError("cannot pool an empty document")
    if not np.any(scores.data > 0):
        raise DegenerateAttentionError(
            "all token scores are zero; attention weights are undefined"
        )
    powered = scores.power(beta)
    weights = powered / (powered.sum() + ATTENTION_EPS)
    pooled = (weights.reshape((1, n)) @ t).reshape((t.shape[1],))
    return weights, pooled


def document_predict(pooled: Tensor, params: SoftAttentionParams) -> Tensor:
    """Scalar document prediction in (0, 1)."""
    h = pooled.shape[0]
    d = (pooled.reshape((1, h)) @ params.w_doc.T + params.b_doc).tanh()
    return ((d @ params.w_out.T).reshape(()) + params.b_out).sigmoid()


def run_head(t: Tensor, params: SoftAttentionParams, cfg: HeadConfig) -> HeadForward:
    scores, _ = token_scores(t, params)
    weights, pooled = attention_pool(t, scores, cfg.beta)
    y_hat = document_predict(pooled, params)
    return HeadForward(y_hat=y_hat, token_scores=scores, weights=weights, pooled=pooled)


# ---------------------------------------------------------------------------
# Losses


def loss_weighted(y_hat: Tensor, scores: Tensor, label: float, gamma: float) -> Tensor:
    """Document loss plus extremum supervision:

    (y_hat - label)^2 + gamma * [min(scores)^2 + (max(scores) - label)^2]
    """
    l1 = (y_hat - label).square()
    l2 = scores.min().square()
    l3 = (scores.max() - label).square()
    return l1 + (l2 + l3) * gamma


def top_count(k: float, n: int) -> int:
    """ceil(k * n / 100) with a floor of one token."""
    return max(1, math.ceil(k * n / 100.0))


def ranked_partition(score_values: np.ndarray, k: float) -> tuple[np.ndarray, np.ndarray]:
    """Indices of the top-k% scores and of the rest.

    Ties break toward the lower token index (stable sort), so the partition
    is deterministic across runs and platforms.
    """
    n = score_values.size
    order = np.argsort(-score_values, kind="stable")
    n_top = top_count(k, n)
    return order[:n_top], order[n_top:]


def ranked_term(scores: Tensor, label: float, k: float) -> Tensor:
    """Mean squared pull of the top k% toward the label and the rest toward 0."""
    top_idx, rest_idx = ranked_partition(scores.data, k)
    term = (scores[top_idx] - label).square().mean()
    if rest_idx.size:
        term = term + scores[rest_idx].square().mean()
    return term


def loss_ranked(
    y_hat: Tensor,
    scores: Tensor,
    label: float,
    gamma: float,
    gamma_ranked: float,
    k: float,
) -> Tensor:
    """Weighted loss plus the ranked supervision term."""
    return loss_weighted(y_hat, scores, label, gamma) + ranked_term(scores, label, k) * gamma_ranked


def document_loss(fw: HeadForward, label: float, cfg: HeadConfig) -> Tensor:
    if cfg.loss_variant == "weighted":
        return loss_weighted(fw.y_hat, fw.token_scores, label, cfg.gamma)
    return loss_ranked(fw.y_hat, fw.token_scores, label, cfg.gamma, cfg.gamma_ranked, cfg.k)


def loss_terms(fw: HeadForward, label: float, cfg: HeadConfig) -> dict[str, float]:
    """Scalar loss components, for divergence diagnostics."""
    scores = fw.token_scores.data
    terms = {
        "l1": float((fw.y_hat.item() - label) ** 2),
        "l2": float(scores.min() ** 2),
        "l3": float((scores.max() - label) ** 2),
    }
    if cfg.loss_variant == "ranked":
        top_idx, rest_idx = ranked_partition(scores, cfg.k)
        ranked = float(np.mean((scores[top_idx] - label) ** 2))
        if rest_idx.size:
            ranked += float(np.mean(scores[rest_idx] ** 2))
        terms["ranked"] = ranked
    return terms


def supervision_coverage(loss_variant: str, n_tokens: int, k: float | None = None) -> float:
    """Fraction of a document's token scores receiving a direct loss target.

    The weighted loss touches only the argmin and argmax (two positions for
    any document of at least two tokens); the ranked loss touches every
    token.
    """
    if n_tokens < 1:
        raise ShapeError("coverage undefined for an empty document")
    if loss_variant == "weighted":
        return min(2, n_tokens) / n_tokens
    if loss_variant == "ranked":
        return 1.0
    raise ValueError(f"unknown loss variant {loss_variant!r}")


# ---------------------------------------------------------------------------
# Document pipelines


def compositional_forward(
    sentence_ids: Sequence[np.ndarray],
    params: dict[str, Tensor],
    head_params: SoftAttentionParams,
    enc_cfg: enc.EncoderConfig,
    head_cfg: HeadConfig,
) -> HeadForward:
    """Encode sentences independently, concatenate, and run the head."""
    t, _ = enc.encode_sentences(sentence_ids, enc_cfg, params)
    return run_head(t, head_params, head_cfg)


def monolithic_forward(
    flat_ids: np.ndarray,
    cls_id: int,
    params: dict[str, Tensor],
    head_params: SoftAttentionParams,
    enc_cfg: enc.EncoderConfig,
    head_cfg: HeadConfig,
    collect_maps: bool = False,
) -> tuple[HeadForward, list[enc.AttentionMap]]:
    """Windowed-encode the CLS-prefixed document and run the head on the tokens."""
    ids = np.concatenate([[cls_id], np.asarray(flat_ids, dtype=np.int64)])
    encoded, maps = enc.encode_document_windowed(ids, enc_cfg, params, collect_maps=collect_maps)
    t = encoded[1:]  # drop the CLS row
    return run_head(t, head_params, head_cfg), maps
