"""Static HTML rationale reports.

One self-contained page per run: every document's tokens with the gold
rationale underlined, true positives and false positives highlighted, and the
raw token score on hover.  No external resources, deterministic bytes for
identical inputs.
"""

from __future__ import annotations

import html
from typing import Mapping

import numpy as np

from .data import Dataset

_STYLE = """
body { font-family: Georgia, serif; margin: 2em auto; max-width: 60em;
       line-height: 1.8; color: #222; }
h1 { font-size: 1.3em; }
h2 { font-size: 1.0em; margin-top: 2em; }
.meta { color: #666; font-size: 0.85em; }
.doc { border-top: 1px solid #ddd; padding-top: 0.7em; }
span.tok { padding: 0 1px; }
span.gold { text-decoration: underline; text-decoration-color: #e69500;
            text-decoration-thickness: 2px; }
span.tp { background: #b5e8b5; }
span.fp { background: #f3b0b0; }
.legend span { margin-right: 1.2em; }
""".strip()


class ReportInputError(ValueError):
    pass


def _token_span(tok: str, score: float | None, gold: int | None, pred: int | None) -> str:
    classes = ["tok"]
    if gold == 1:
        classes.append("gold")
    if pred == 1 and gold is not None:
        classes.append("tp" if gold == 1 else "fp")
    title = f' title="{score:.4f}"' if score is not None else ""
    return f'<span class="{" ".join(classes)}"{title}>{html.escape(tok)}</span>'


def build_html(
    dataset: Dataset,
    predictions: Mapping[str, Mapping],
    title: str = "Rationale report",
) -> str:
    """Render highlight markup for every document of ``dataset``.

    ``predictions`` maps doc_id to an object with ``token_scores``,
    ``binary_rationale`` and ``y_hat`` entries (the predictions-file schema).
    Every document in the dataset must be covered.
    """
    missing = [d.doc_id for d in dataset.documents if d.doc_id not in predictions]
    if missing:
        raise ReportInputError(
            f"predictions missing for {len(missing)} doc_ids: {missing[:10]}"
        )
    parts = [
        "<!DOCTYPE html>",
        '<html lang="en"><head><meta charset="utf-8">',
        f"<title>{html.escape(title)}</title>",
        f"<style>{_STYLE}</style>",
        "</head><body>",
        f"<h1>{html.escape(title)}</h1>",
        '<p class="legend"><span class="tok gold">gold rationale</span>'
        '<span class="tok tp">true positive</span>'
        '<span class="tok fp">false positive</span>'
        " (hover a token for its score)</p>",
    ]
    for doc in dataset.documents:
        pred = predictions[doc.doc_id]
        scores = np.asarray(pred["token_scores"], dtype=np.float64)
        binary = np.asarray(pred["binary_rationale"], dtype=np.int64)
        if scores.size != doc.n_tokens or binary.size != doc.n_tokens:
            raise ReportInputError(
                f"doc {doc.doc_id!r}: prediction covers {scores.size} tokens, "
                f"document has {doc.n_tokens}"
            )
        gold_flat = doc.flat_token_labels()
        y_hat = pred.get("y_hat")
        shown = f"{float(y_hat):.4f}" if y_hat is not None else "-"
        parts.append('<div class="doc">')
        note = "" if gold_flat is not None else " &middot; no gold annotations"
        parts.append(
            f"<h2>{html.escape(doc.doc_id)} "
            f'<span class="meta">gold label {doc.doc_label} &middot; '
            f"prediction {shown}{note}</span></h2>"
        )
        spans = []
        for i, tok in enumerate(doc.flat_tokens()):
            gold_i = int(gold_flat[i]) if gold_flat is not None else None
            spans.append(_token_span(tok, float(scores[i]), gold_i, int(binary[i])))
        parts.append("<p>" + " ".join(spans) + "</p>")
        parts.append("</div>")
    parts.append("</body></html>")
    return "\n".join(parts) + "\n"
