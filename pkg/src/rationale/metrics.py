"""Evaluation metrics: token P/R/F-beta, average precision, document F1,
top-k thresholding, the uniform-random score baseline, and a paired t-test.

Conventions (flagged where alternatives exist):

* token precision/recall/F are micro-averaged: confusion counts pooled over
  all tokens of all scored documents;
* average precision is macro-averaged per document (``map_mode="pooled"``
  ranks all tokens globally instead);
* any 0/0 ratio is defined as 0;
* score ties rank by token index, ascending.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from typing import Sequence

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class EvalReport:
    doc_f1: float | None = None
    token_p: float | None = None
    token_r: float | None = None
    token_f1: float | None = None
    token_f05: float | None = None
    map: float | None = None
    coverage: float | None = None
    seconds_per_epoch: float | None = None

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if v is None:
                continue
            if f.name == "seconds_per_epoch":
                if v < 0:
                    raise MetricError("seconds_per_epoch must be nonnegative")
            elif not 0.0 <= v <= 1.0:
                raise MetricError(f"{f.name} must lie in [0, 1], got {v}")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(**{f.name: d.get(f.name) for f in fields(cls)})


_TABLE_COLUMNS = (
    ("doc_f1", "Doc F1"),
    ("token_f1", "F1"),
    ("token_f05", "F0.5"),
    ("token_p", "P"),
    ("token_r", "R"),
    ("map", "MAP"),
    ("coverage", "Coverage"),
    ("seconds_per_epoch", "Time"),
)


def render_table(rows: Sequence[tuple[str, EvalReport]], stds: dict[str, float] | None = None) -> str:
    """Aligned plain-text table; metrics scaled to percentages, Time in seconds.

    ``stds`` optionally maps row names to a sample standard deviation shown
    as "±" on the token F1 column.
    """
    stds = stds or {}
    name_w = max([len(n) for n, _ in rows] + [5])
    header = "model".ljust(name_w) + "".join(h.rjust(12) for _, h in _TABLE_COLUMNS)
    lines = [header, "-" * len(header)]
    for name, rep in rows:
        cells = []
        for field_name, _ in _TABLE_COLUMNS:
            v = getattr(rep, field_name)
            if v is None:
                cells.append("-".rjust(12))
            elif field_name == "seconds_per_epoch":
                cells.append(f"{v:.1f}".rjust(12))
            elif field_name == "token_f1" and name in stds:
                cells.append(f"{100 * v:.2f}±{100 * stds[name]:.2f}".rjust(12))
            else:
                cells.append(f"{100 * v:.2f}".rjust(12))
        lines.append(name.ljust(name_w) + "".join(cells))
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Token- and document-level scores


def _as_binary(seq, what: str) -> np.ndarray:
    arr = np.asarray(seq)
    if arr.size and not np.isin(arr, (0, 1)).all():
        raise MetricError(f"{what} must be 0/1")
    return arr.astype(np.int64)


def token_prf(pred, gold, beta_f: float = 1.0) -> tuple[float, float, float]:
    """Precision, recall and F-beta of binary token predictions."""
    pred = _as_binary(pred, "pred")
    gold = _as_binary(gold, "gold")
    if pred.shape != gold.shape:
        raise MetricError(f"pred/gold length mismatch: {pred.shape} vs {gold.shape}")
    tp = int(np.sum((pred == 1) & (gold == 1)))
    fp = int(np.sum((pred == 1) & (gold == 0)))
    fn = int(np.sum((pred == 0) & (gold == 1)))
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    b2 = beta_f * beta_f
    f = (1 + b2) * p * r / (b2 * p + r) if (b2 * p + r) > 0 else 0.0
    return p, r, f


def doc_f1(pred_labels, gold_labels) -> float:
    """Binary F1 on the positive document class."""
    _, _, f = token_prf(pred_labels, gold_labels, beta_f=1.0)
    return f


def average_precision(scores, gold) -> float:
    """AP of the token ranking at gold-positive positions (ties by index)."""
    scores = np.asarray(scores, dtype=np.float64)
    gold = _as_binary(gold, "gold")
    if scores.shape != gold.shape:
        raise MetricError(f"scores/gold length mismatch: {scores.shape} vs {gold.shape}")
    if gold.sum() == 0:
        raise MetricError("average precision undefined without positive tokens")
    order = np.argsort(-scores, kind="stable")
    ranked_gold = gold[order]
    hits = np.cumsum(ranked_gold)
    ranks = np.arange(1, gold.size + 1)
    return float((hits[ranked_gold == 1] / ranks[ranked_gold == 1]).mean())


def mean_average_precision(
    scores_per_doc: Sequence[np.ndarray],
    gold_per_doc: Sequence[np.ndarray],
    mode: str = "per_document",
) -> float:
    """Unweighted mean of per-document APs; documents without positives are skipped.

    ``mode="pooled"`` instead ranks every token of every document in one list.
    """
    if len(scores_per_doc) != len(gold_per_doc):
        raise MetricError("scores/gold document counts differ")
    if mode == "pooled":
        flat_scores = np.concatenate([np.asarray(s, dtype=np.float64) for s in scores_per_doc])
        flat_gold = np.concatenate([_as_binary(g, "gold") for g in gold_per_doc])
        if flat_gold.sum() == 0:
            raise MetricError("no document has a positive token")
        return average_precision(flat_scores, flat_gold)
    if mode != "per_document":
        raise MetricError(f"unknown MAP mode {mode!r}")
    aps = []
    for s, g in zip(scores_per_doc, gold_per_doc):
        g = _as_binary(g, "gold")
        if np.asarray(s).shape != g.shape:
            raise MetricError("per-document score/gold lengths differ")
        if g.sum() > 0:
            aps.append(average_precision(s, g))
    if not aps:
        raise MetricError("no document has a positive token")
    return float(np.mean(aps))


def topk_threshold(scores, k: float) -> np.ndarray:
    """Mark the ceil(k% * N) highest-scoring positions, ties to lower index."""
    if not 0 < k <= 100:
        raise MetricError(f"k must lie in (0, 100], got {k}")
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.size
    n_top = max(1, math.ceil(k * n / 100.0))
    order = np.argsort(-scores, kind="stable")
    out = np.zeros(n, dtype=np.int8)
    out[order[:n_top]] = 1
    return out


def random_baseline_scores(doc_lengths: Sequence[int], seed: int) -> list[np.ndarray]:
    """I.i.d. uniform [0, 1) token scores per document, deterministic under seed."""
    rng = np.random.default_rng(seed)
    return [rng.random(int(n)) for n in doc_lengths]


# ---------------------------------------------------------------------------
# Paired t-test via the regularized incomplete beta function


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-30
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-14:
            break
    return h


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise MetricError(f"betainc argument x={x} outside [0, 1]")
    if x == 0.0 or x == 1.0:
        return float(x)
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed_p(t: float, df: int) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if df < 1:
        raise MetricError(f"degrees of freedom must be >= 1, got {df}")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return betainc_regularized(df / 2.0, 0.5, x)


SD_FLOOR = 1e-12  # stands in for a zero sample standard deviation


def paired_t_test(sample_a: Sequence[float], sample_b: Sequence[float]) -> tuple[float, float]:
    """Two-tailed paired t-test on matched samples.

    All-zero differences give (0, 1); a zero standard deviation with nonzero
    mean uses a tiny floor, yielding p ~ 0 instead of a division error.
    """
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"sample length mismatch: {a.shape} vs {b.shape}")
    n = a.size
    if n < 2:
        raise MetricError(f"paired t-test needs at least 2 pairs, got {n}")
    d = a - b
    if not d.any():
        return 0.0, 1.0
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        sd = SD_FLOOR
    t = float(d.mean() / (sd / math.sqrt(n)))
    return t, student_t_two_tailed_p(t, n - 1)


# ---------------------------------------------------------------------------
# Report assembly


def compute_report(
    doc_preds: Sequence[int] | None,
    doc_gold: Sequence[int] | None,
    token_scores_per_doc: Sequence[np.ndarray] | None,
    token_pred_per_doc: Sequence[np.ndarray] | None,
    token_gold_per_doc: Sequence[np.ndarray | None] | None,
    coverage: float | None = None,
    seconds_per_epoch: float | None = None,
    map_mode: str = "per_document",
) -> EvalReport:
    """Assemble an EvalReport from per-document predictions and gold labels.

    Token metrics pool only documents that carry gold token labels; they are
    omitted when no document does.  MAP is additionally omitted when no
    labeled document has a positive token.
    """
    report = EvalReport(coverage=coverage, seconds_per_epoch=seconds_per_epoch)
    if doc_preds is not None and doc_gold is not None and len(doc_gold):
        report.doc_f1 = doc_f1(doc_preds, doc_gold)
    if token_gold_per_doc is not None and token_scores_per_doc is not None:
        labeled = [i for i, g in enumerate(token_gold_per_doc) if g is not None]
        if labeled:
            pred_flat = np.concatenate([np.asarray(token_pred_per_doc[i]) for i in labeled])
            gold_flat = np.concatenate([np.asarray(token_gold_per_doc[i]) for i in labeled])
            report.token_p, report.token_r, report.token_f1 = token_prf(pred_flat, gold_flat)
            _, _, report.token_f05 = token_prf(pred_flat, gold_flat, beta_f=0.5)
            if any(np.asarray(token_gold_per_doc[i]).sum() > 0 for i in labeled):
                report.map = mean_average_precision(
                    [token_scores_per_doc[i] for i in labeled],
                    [token_gold_per_doc[i] for i in labeled],
                    mode=map_mode,
                )
    return report
