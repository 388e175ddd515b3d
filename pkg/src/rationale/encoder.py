"""Contextual token encoders.

Two ways to turn token ids into contextual embeddings of width ``h``:

* ``encode_sentence`` / ``encode_sentences``: standard multi-head full
  self-attention applied to one sentence at a time.  Each sentence is encoded
  independently of every other sentence, so a whole document can be packed
  into a single matrix with block-diagonal (per-segment) attention and the
  result is identical to concatenating per-sentence calls.
* ``encode_document_windowed``: one pass over the whole document with a CLS
  token prepended.  Every non-CLS token attends to a fixed window around
  itself plus CLS; CLS attends globally.  Cost is linear in document length
  at fixed window width.

The CLS attention rows of the final layer double as the token scores of the
self-attention top-k baseline (``cls_global_attention_scores``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .tensor import (
    DomainError,
    ShapeError,
    Tensor,
    accumulate_grad,
    embedding_lookup,
    layer_norm_rows,
)

CLS_TOKEN = "<cls>"
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
RESERVED_TOKENS = (CLS_TOKEN, PAD_TOKEN, UNK_TOKEN)

FFN_MULT = 4  # feed-forward inner width as a multiple of h


class SentenceTooLongError(ValueError):
    """A sentence exceeds the encoder's maximum length; re-segment the input."""


class Vocab:
    """Token-to-id map with dense ids and reserved CLS/PAD/UNK entries."""

    def __init__(self, corpus_tokens: Sequence[str]) -> None:
        tokens = list(RESERVED_TOKENS)
        seen = set(tokens)
        for tok in corpus_tokens:
            if tok in seen:
                raise ValueError(f"duplicate or reserved token in vocab input: {tok!r}")
            seen.add(tok)
            tokens.append(tok)
        self._id_to_token = tokens
        self._token_to_id = {tok: i for i, tok in enumerate(tokens)}

    def __len__(self) -> int:
        return len(self._id_to_token)

    @property
    def cls_id(self) -> int:
        return self._token_to_id[CLS_TOKEN]

    @property
    def pad_id(self) -> int:
        return self._token_to_id[PAD_TOKEN]

    @property
    def unk_id(self) -> int:
        return self._token_to_id[UNK_TOKEN]

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        unk = self.unk_id
        t2i = self._token_to_id
        return np.array([t2i.get(tok, unk) for tok in tokens], dtype=np.int64)

    def token(self, idx: int) -> str:
        return self._id_to_token[idx]

    def to_list(self) -> list[str]:
        """Non-reserved tokens in id order (for serialization)."""
        return self._id_to_token[len(RESERVED_TOKENS):]

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocab":
        return cls(tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocab) and self._id_to_token == other._id_to_token

    def __hash__(self):
        return hash(tuple(self._id_to_token))


@dataclass(frozen=True)
class EncoderConfig:
    h: int = 32
    n_layers: int = 2
    n_heads: int = 4
    max_sentence_len: int = 64
    window: int = 17
    use_positional: bool = True

    def __post_init__(self) -> None:
        if self.h <= 0 or self.n_layers <= 0 or self.n_heads <= 0:
            raise ValueError("h, n_layers and n_heads must be positive")
        if self.h % self.n_heads != 0:
            raise ValueError(f"h={self.h} not divisible by n_heads={self.n_heads}")
        if self.max_sentence_len <= 0:
            raise ValueError("max_sentence_len must be positive")
        if self.window <= 0 or self.window % 2 == 0:
            raise ValueError(f"window must be a positive odd integer, got {self.window}")

    @property
    def head_dim(self) -> int:
        return self.h // self.n_heads

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "n_layers": self.n_layers,
            "n_heads": self.n_heads,
            "max_sentence_len": self.max_sentence_len,
            "window": self.window,
            "use_positional": self.use_positional,
        }


@dataclass
class AttentionMap:
    """Post-softmax attention of one windowed layer.

    ``cls_row`` is always present: per-head attention of the CLS token over
    all positions (position 0 is CLS itself).  ``full`` is the dense
    per-head map, materialized only on request since it is quadratic.
    """

    cls_row: np.ndarray  # [n_heads, N+1]
    full: np.ndarray | None = None  # [n_heads, N+1, N+1]


def encoder_param_shapes(cfg: EncoderConfig, vocab_size: int) -> dict[str, tuple[int, ...]]:
    """Shapes of every learnable encoder array, keyed by name."""
    shapes: dict[str, tuple[int, ...]] = {"emb": (vocab_size, cfg.h)}
    h, ff = cfg.h, FFN_MULT * cfg.h
    for i in range(cfg.n_layers):
        p = f"layer{i}."
        shapes.update(
            {
                p + "w_q": (h, h),
                p + "w_k": (h, h),
                p + "w_v": (h, h),
                p + "w_o": (h, h),
                p + "b_q": (h,),
                p + "b_k": (h,),
                p + "b_v": (h,),
                p + "b_o": (h,),
                p + "ln1_gain": (h,),
                p + "ln1_bias": (h,),
                p + "ln2_gain": (h,),
                p + "ln2_bias": (h,),
                p + "ffn_w1": (h, ff),
                p + "ffn_b1": (ff,),
                p + "ffn_w2": (ff, h),
                p + "ffn_b2": (h,),
            }
        )
    return shapes


_PE_SCALE = 0.1  # keeps the positional signal below token embeddings at Glorot scale

_pe_cache: dict[int, np.ndarray] = {}  # h -> table rows (grown on demand)


def _pe_table(h: int, upto: int) -> np.ndarray:
    table = _pe_cache.get(h)
    if table is None or table.shape[0] < upto:
        n = max(upto, 512, 0 if table is None else 2 * table.shape[0])
        pos = np.arange(n, dtype=np.float64)
        pe = np.zeros((n, h))
        div = np.exp(np.arange(0, h, 2, dtype=np.float64) * (-math.log(10000.0) / h))
        pe[:, 0::2] = np.sin(pos[:, None] * div)
        pe[:, 1::2] = np.cos(pos[:, None] * div[: h // 2])
        table = _pe_cache[h] = _PE_SCALE * pe
    return table


def positional_encoding(n: int, h: int, offsets: np.ndarray | None = None) -> np.ndarray:
    """Sinusoidal position features for ``n`` positions (or explicit offsets)."""
    if offsets is None:
        return _pe_table(h, n)[:n]
    offsets = np.asarray(offsets, dtype=np.int64)
    upto = int(offsets.max()) + 1 if offsets.size else 1
    return _pe_table(h, upto)[offsets]


def embed_tokens(
    ids: np.ndarray,
    cfg: EncoderConfig,
    params: dict[str, Tensor],
    positions: np.ndarray | None = None,
) -> Tensor:
    """Look up embedding rows, optionally adding sinusoidal positions.

    ``positions`` overrides the default 0..N-1 numbering; the compositional
    path restarts positions at each sentence boundary.
    """
    ids = np.asarray(ids, dtype=np.int64)
    out = embedding_lookup(params["emb"], ids)
    if cfg.use_positional and ids.size:
        offs = positions if positions is not None else np.arange(ids.size)
        out = out + positional_encoding(ids.size, cfg.h, offsets=offs)
    return out


# ---------------------------------------------------------------------------
# Attention primitives.  Single autodiff node each; heads are handled inside
# with numpy so the per-document graph stays small.


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    n, h = x.shape
    return x.reshape(n, n_heads, h // n_heads)


def mha_segments(q: Tensor, k: Tensor, v: Tensor, n_heads: int, bounds: Sequence[int]) -> Tensor:
    """Multi-head attention restricted to independent row segments.

    ``bounds`` are cumulative segment offsets ``[0, n1, n1+n2, ..., N]``;
    rows of one segment attend only within that segment.  With a single
    segment this is ordinary full self-attention.
    """
    n, h = q.shape
    hd = h // n_heads
    scale = 1.0 / math.sqrt(hd)
    # Head-major [n_heads, n, hd] layout keeps the per-segment work in plain
    # batched matmuls.
    Q, K, V = (_split_heads(t.data, n_heads).transpose(1, 0, 2).copy() for t in (q, k, v))
    out = np.empty((n_heads, n, hd))
    probs: list[np.ndarray] = []
    flops = 0
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        Ks = K[:, lo:hi]
        s = Q[:, lo:hi] @ Ks.transpose(0, 2, 1)
        s *= scale
        s -= s.max(axis=2, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=2, keepdims=True)
        out[:, lo:hi] = p @ V[:, lo:hi]
        probs.append(p)
        flops += 2 * (hi - lo) * (hi - lo) * h

    def merge(heads: np.ndarray) -> np.ndarray:
        return heads.transpose(1, 0, 2).reshape(n, h)

    def backward(g: np.ndarray) -> None:
        G = _split_heads(g, n_heads).transpose(1, 0, 2)
        dQ = np.empty_like(Q)
        dK = np.empty_like(K)
        dV = np.empty_like(V)
        for (lo, hi), p in zip(zip(bounds[:-1], bounds[1:]), probs):
            Gs = G[:, lo:hi]
            dp = Gs @ V[:, lo:hi].transpose(0, 2, 1)
            ds = p * (dp - (dp * p).sum(axis=2, keepdims=True))
            ds *= scale
            dQ[:, lo:hi] = ds @ K[:, lo:hi]
            dK[:, lo:hi] = ds.transpose(0, 2, 1) @ Q[:, lo:hi]
            dV[:, lo:hi] = p.transpose(0, 2, 1) @ Gs
        accumulate_grad(q, merge(dQ))
        accumulate_grad(k, merge(dK))
        accumulate_grad(v, merge(dV))

    return Tensor.from_op(merge(out), (q, k, v), backward, flops=flops)


class _BandPlan:
    """Precomputed index geometry for one (sequence length, window) pair.

    Band column ``c`` of query row ``r`` (token ``r+1``) points at token
    position ``r+1 + c - hw``; column 0 is reserved for the global CLS
    position.  Each band column maps to one contiguous row range, so gradient
    accumulation can use slice adds instead of scattered index adds.
    """

    def __init__(self, m: int, window: int):
        n, hw = m - 1, window // 2
        pos = np.arange(1, m)[:, None] + np.arange(-hw, hw + 1)[None, :]
        valid = (pos >= 1) & (pos <= n)
        self.idx = np.concatenate(
            [np.zeros((n, 1), dtype=np.int64), np.clip(pos, 1, n)], axis=1
        )
        self.mask = np.concatenate([np.ones((n, 1), dtype=bool), valid], axis=1)
        self.col_slices = []  # (band column, query rows lo:hi, source rows lo:hi)
        for j in range(window):
            off = j - hw
            lo, hi = max(0, -off), min(n, n - off)
            if lo < hi:
                self.col_slices.append((j + 1, lo, hi, 1 + lo + off, 1 + hi + off))


_band_plans: dict[tuple[int, int], _BandPlan] = {}


def _band_plan(m: int, window: int) -> _BandPlan:
    key = (m, window)
    plan = _band_plans.get(key)
    if plan is None:
        plan = _band_plans[key] = _BandPlan(m, window)
        if len(_band_plans) > 512:
            _band_plans.clear()
    return plan


def mha_windowed(
    q: Tensor,
    k: Tensor,
    v: Tensor,
    n_heads: int,
    window: int,
    collect_map: bool = False,
) -> tuple[Tensor, AttentionMap]:
    """Sliding-window attention with a global first row.

    Row 0 (CLS) attends to every position; rows ``i >= 1`` attend to CLS plus
    positions within ``window // 2`` of themselves.  Masked positions get
    probability exactly 0 (equivalent to -inf pre-softmax logits).
    """
    m, h = q.shape
    n = m - 1
    hd = h // n_heads
    scale = 1.0 / math.sqrt(hd)
    Q, K, V = (_split_heads(t.data, n_heads) for t in (q, k, v))

    # CLS row: dense over all positions.
    s0 = np.einsum("nd,mnd->nm", Q[0], K) * scale
    s0 -= s0.max(axis=1, keepdims=True)
    p0 = np.exp(s0)
    p0 /= p0.sum(axis=1, keepdims=True)
    out0 = np.einsum("nm,mnd->nd", p0, V)

    if n > 0:
        plan = _band_plan(m, window)
        Qb = Q[1:]
        Kg = K[plan.idx]  # [n, window+1, n_heads, hd]
        Vg = V[plan.idx]
        # Batched matmuls over transpose views beat einsum here by ~4x.
        s = np.matmul(Qb[:, :, None, :], Kg.transpose(0, 2, 3, 1))[:, :, 0, :]
        s *= scale
        s = np.where(plan.mask[:, None, :], s, -np.inf)
        s -= s.max(axis=2, keepdims=True)
        p = np.exp(s)
        p /= p.sum(axis=2, keepdims=True)
        out_band = np.matmul(p[:, :, None, :], Vg.transpose(0, 2, 1, 3))[:, :, 0, :]
        out = np.concatenate([out0.reshape(1, h), out_band.reshape(n, h)], axis=0)
        flops = 2 * n * (window + 1) * h + 2 * m * h
    else:
        plan = p = Kg = Vg = Qb = None
        out = out0.reshape(1, h)
        flops = 2 * m * h

    def backward(g: np.ndarray) -> None:
        dQ = np.zeros_like(Q)
        dK = np.zeros_like(K)
        dV = np.zeros_like(V)
        g0 = _split_heads(g[:1], n_heads)[0]
        dp0 = np.einsum("nd,mnd->nm", g0, V)
        ds0 = p0 * (dp0 - (dp0 * p0).sum(axis=1, keepdims=True))
        dQ[0] = np.einsum("nm,mnd->nd", ds0, K) * scale
        dK += np.einsum("nm,nd->mnd", ds0, Q[0]) * scale
        dV += np.einsum("nm,nd->mnd", p0, g0)
        if n > 0:
            Gb = _split_heads(g[1:], n_heads)
            dp = np.matmul(Gb[:, :, None, :], Vg.transpose(0, 2, 3, 1))[:, :, 0, :]
            ds = p * (dp - (dp * p).sum(axis=2, keepdims=True))
            ds *= scale
            dQ[1:] = np.matmul(ds[:, :, None, :], Kg.transpose(0, 2, 1, 3))[:, :, 0, :]
            # Column-sliced accumulation: each band column touches one
            # contiguous row range (much cheaper than scattered adds).
            dK[0] += np.einsum("nh,nhd->hd", ds[:, :, 0], Qb)
            dV[0] += np.einsum("nh,nhd->hd", p[:, :, 0], Gb)
            for c, qlo, qhi, slo, shi in plan.col_slices:
                dK[slo:shi] += ds[qlo:qhi, :, c, None] * Qb[qlo:qhi]
                dV[slo:shi] += p[qlo:qhi, :, c, None] * Gb[qlo:qhi]
        accumulate_grad(q, dQ.reshape(m, h))
        accumulate_grad(k, dK.reshape(m, h))
        accumulate_grad(v, dV.reshape(m, h))

    attn = AttentionMap(cls_row=p0.copy())
    if collect_map:
        full = np.zeros((n_heads, m, m))
        full[:, 0, :] = p0
        if n > 0:
            heads = np.arange(n_heads)[:, None, None]
            rows = np.arange(1, m)[None, :, None]
            cols = np.broadcast_to(plan.idx[None, :, :], (n_heads, n, window + 1))
            np.add.at(full, (heads, rows, cols),
                      np.where(plan.mask[:, None, :], p, 0.0).transpose(1, 0, 2))
        attn.full = full

    return Tensor.from_op(out, (q, k, v), backward, flops=flops), attn


# ---------------------------------------------------------------------------
# Encoder stacks


def _layer_params(params: dict[str, Tensor], i: int) -> dict[str, Tensor]:
    prefix = f"layer{i}."
    return {name[len(prefix):]: t for name, t in params.items() if name.startswith(prefix)}


def _encoder_layer(x: Tensor, lp: dict[str, Tensor], cfg: EncoderConfig, attn_fn):
    q = x @ lp["w_q"] + lp["b_q"]
    k = x @ lp["w_k"] + lp["b_k"]
    v = x @ lp["w_v"] + lp["b_v"]
    att, attn_info = attn_fn(q, k, v)
    att = att @ lp["w_o"] + lp["b_o"]
    x = layer_norm_rows(x + att, lp["ln1_gain"], lp["ln1_bias"])
    ff = (x @ lp["ffn_w1"] + lp["ffn_b1"]).tanh() @ lp["ffn_w2"] + lp["ffn_b2"]
    x = layer_norm_rows(x + ff, lp["ln2_gain"], lp["ln2_bias"])
    return x, attn_info


def encode_sentences(
    sentence_ids: Sequence[np.ndarray],
    cfg: EncoderConfig,
    params: dict[str, Tensor],
) -> tuple[Tensor, np.ndarray]:
    """Encode each sentence independently, packed into one [N, h] tensor.

    Equivalent to concatenating ``encode_sentence`` over the sentences:
    attention is block-diagonal per sentence and every other layer component
    is token-local.  Returns the packed embeddings and the cumulative
    sentence bounds.
    """
    if not sentence_ids:
        raise ShapeError("encode_sentences needs at least one sentence")
    lens = [int(np.asarray(s).size) for s in sentence_ids]
    for n_k in lens:
        if n_k == 0:
            raise ShapeError("empty sentence")
        if n_k > cfg.max_sentence_len:
            raise SentenceTooLongError(
                f"sentence of {n_k} tokens exceeds max_sentence_len="
                f"{cfg.max_sentence_len}; re-segment the document first"
            )
    bounds = np.cumsum([0] + lens)
    flat = np.concatenate([np.asarray(s, dtype=np.int64) for s in sentence_ids])
    positions = np.concatenate([np.arange(n_k) for n_k in lens])  # restart per sentence
    x = embed_tokens(flat, cfg, params, positions=positions)
    for i in range(cfg.n_layers):
        lp = _layer_params(params, i)
        x, _ = _encoder_layer(
            x, lp, cfg, lambda q, k, v: (mha_segments(q, k, v, cfg.n_heads, bounds), None)
        )
    return x, bounds


def encode_sentence(ids: np.ndarray, cfg: EncoderConfig, params: dict[str, Tensor]) -> Tensor:
    """Full self-attention over a single sentence (no CLS row)."""
    out, _ = encode_sentences([np.asarray(ids, dtype=np.int64)], cfg, params)
    return out


def encode_document_windowed(
    ids_with_cls: np.ndarray,
    cfg: EncoderConfig,
    params: dict[str, Tensor],
    collect_maps: bool = False,
) -> tuple[Tensor, list[AttentionMap]]:
    """Windowed encoding of a CLS-prefixed document.

    Returns the [(N+1), h] output (row 0 is CLS) and one ``AttentionMap``
    per layer.  Dense maps are materialized only when ``collect_maps``.
    """
    ids = np.asarray(ids_with_cls, dtype=np.int64)
    if ids.size == 0:
        raise ShapeError("windowed encoder needs at least the CLS token")
    x = embed_tokens(ids, cfg, params)
    maps: list[AttentionMap] = []
    for i in range(cfg.n_layers):
        lp = _layer_params(params, i)
        x, attn = _encoder_layer(
            x,
            lp,
            cfg,
            lambda q, k, v: mha_windowed(q, k, v, cfg.n_heads, cfg.window, collect_map=collect_maps),
        )
        maps.append(attn)
    return x, maps


def encode_document_dense(
    ids_with_cls: np.ndarray,
    cfg: EncoderConfig,
    params: dict[str, Tensor],
) -> Tensor:
    """Full-attention oracle over a CLS-prefixed document.

    Reference path for the windowed encoder: with a window spanning the whole
    document the two must agree.
    """
    ids = np.asarray(ids_with_cls, dtype=np.int64)
    x = embed_tokens(ids, cfg, params)
    bounds = np.array([0, ids.size])
    for i in range(cfg.n_layers):
        lp = _layer_params(params, i)
        x, _ = _encoder_layer(
            x, lp, cfg, lambda q, k, v: (mha_segments(q, k, v, cfg.n_heads, bounds), None)
        )
    return x


def cls_global_attention_scores(
    attn: AttentionMap | np.ndarray,
    reduce: str = "mean",
) -> np.ndarray:
    """Token scores from the CLS attention row of a (final) layer.

    The per-head CLS rows are reduced over heads (``mean`` by default,
    ``max`` exposed for comparison), restricted to non-CLS positions and
    renormalized to sum to 1.
    """
    rows = attn.cls_row if isinstance(attn, AttentionMap) else np.asarray(attn, dtype=np.float64)
    if rows.ndim != 2:
        raise ShapeError(f"expected per-head CLS rows [n_heads, N+1], got shape {rows.shape}")
    if reduce == "mean":
        scores = rows.mean(axis=0)
    elif reduce == "max":
        scores = rows.max(axis=0)
    else:
        raise ValueError(f"unknown head reduction {reduce!r}")
    scores = scores[1:]  # drop CLS's own position
    if scores.size == 0:
        raise ShapeError("document has no non-CLS tokens")
    total = scores.sum()
    if total <= 0:
        raise DomainError("CLS attention mass over tokens is zero")
    return scores / total
