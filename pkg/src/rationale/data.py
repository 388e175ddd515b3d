"""Datasets: JSONL schema, segmentation, vocabulary, splits, and a synthetic
rationale-planting generator.

The on-disk format is UTF-8 JSON Lines, one document per line:

    {"doc_id": "d1",
     "sentences": [["good", "movie", "."], ["loved", "it"]],
     "doc_label": 1,
     "token_labels": [[1, 0, 0], [1, 0]]}          # optional

``token_labels`` exist for evaluation only; loaders never feed them to
training.  The synthetic generator plants tokens from a lexicon disjoint from
the background vocabulary, so metric ground truth is exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .encoder import Vocab

SENTENCE_TERMINATORS = (".", "!", "?")


class DatasetValidationError(ValueError):
    """A document or dataset violates the schema."""


@dataclass
class Document:
    doc_id: str
    sentences: list[list[str]]
    doc_label: int
    token_labels: list[list[int]] | None = None

    def __post_init__(self) -> None:
        if not self.sentences:
            raise DatasetValidationError(f"document {self.doc_id!r} has no sentences")
        if any(len(s) == 0 for s in self.sentences):
            raise DatasetValidationError(f"document {self.doc_id!r} contains an empty sentence")
        if self.doc_label not in (0, 1):
            raise DatasetValidationError(
                f"document {self.doc_id!r} has non-binary doc_label {self.doc_label!r}"
            )
        if self.token_labels is not None:
            shapes_ok = len(self.token_labels) == len(self.sentences) and all(
                len(l) == len(s) for l, s in zip(self.token_labels, self.sentences)
            )
            if not shapes_ok:
                raise DatasetValidationError(
                    f"document {self.doc_id!r}: token_labels shape does not match sentences"
                )
            if any(v not in (0, 1) for row in self.token_labels for v in row):
                raise DatasetValidationError(
                    f"document {self.doc_id!r}: token_labels must be 0/1"
                )

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)

    def flat_tokens(self) -> list[str]:
        return [tok for s in self.sentences for tok in s]

    def flat_token_labels(self) -> np.ndarray | None:
        if self.token_labels is None:
            return None
        return np.array([v for row in self.token_labels for v in row], dtype=np.int8)

    def to_json_dict(self) -> dict:
        d = {"doc_id": self.doc_id, "sentences": self.sentences, "doc_label": self.doc_label}
        if self.token_labels is not None:
            d["token_labels"] = self.token_labels
        return d


@dataclass
class Dataset:
    name: str
    documents: list[Document]
    split: str = "train"

    def __post_init__(self) -> None:
        if self.split not in ("train", "dev", "test"):
            raise DatasetValidationError(f"unknown split tag {self.split!r}")
        ids = [d.doc_id for d in self.documents]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DatasetValidationError(f"duplicate doc_ids in split {self.split!r}: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    @property
    def evidence_fraction(self) -> float | None:
        """Fraction of positive token labels among tokens of labeled documents."""
        total = positive = 0
        for doc in self.documents:
            if doc.token_labels is None:
                continue
            total += doc.n_tokens
            positive += int(sum(sum(row) for row in doc.token_labels))
        if total == 0:
            return None
        return positive / total


def load_jsonl(path: str | Path, split: str = "train", name: str | None = None) -> Dataset:
    """Parse a JSON Lines dataset file, validating every document."""
    path = Path(path)
    documents = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetValidationError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
            try:
                documents.append(
                    Document(
                        doc_id=str(raw["doc_id"]),
                        sentences=[[str(t) for t in s] for s in raw["sentences"]],
                        doc_label=int(raw["doc_label"]),
                        token_labels=raw.get("token_labels"),
                    )
                )
            except KeyError as exc:
                raise DatasetValidationError(f"{path}:{lineno}: missing field {exc}") from exc
    return Dataset(name=name or path.stem, documents=documents, split=split)


def save_jsonl(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for doc in dataset.documents:
            fh.write(json.dumps(doc.to_json_dict(), ensure_ascii=False) + "\n")


def segment_sentences(tokens: Sequence[str], max_len: int = 64) -> list[list[str]]:
    """Split a flat token run into sentences.

    Cuts after terminator tokens (. ! ?); any remaining run longer than
    ``max_len`` is chopped at ``max_len`` boundaries.  Concatenating the
    output reproduces the input exactly and no sentence is empty.
    """
    if not tokens:
        raise DatasetValidationError("cannot segment an empty token sequence")
    runs: list[list[str]] = []
    current: list[str] = []
    for tok in tokens:
        current.append(tok)
        if tok in SENTENCE_TERMINATORS:
            runs.append(current)
            current = []
    if current:
        runs.append(current)
    out: list[list[str]] = []
    for run in runs:
        for i in range(0, len(run), max_len):
            out.append(run[i : i + max_len])
    return out


def build_vocab(train: Dataset, max_size: int) -> Vocab:
    """Most frequent train-split tokens up to ``max_size``, ties lexicographic."""
    if len(train) == 0:
        raise DatasetValidationError("cannot build a vocabulary from an empty split")
    counts: dict[str, int] = {}
    for doc in train.documents:
        for tok in doc.flat_tokens():
            counts[tok] = counts.get(tok, 0) + 1
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return Vocab([tok for tok, _ in ranked[:max_size]])


def split_dataset(
    ds: Dataset, fractions: tuple[float, float, float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic shuffle, then contiguous train/dev/test slices."""
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise DatasetValidationError(f"split fractions must sum to 1, got {fractions}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ds.documents))
    docs = [ds.documents[i] for i in order]
    n = len(docs)
    i1 = round(n * fractions[0])
    i2 = round(n * (fractions[0] + fractions[1]))
    return (
        Dataset(name=ds.name, documents=docs[:i1], split="train"),
        Dataset(name=ds.name, documents=docs[i1:i2], split="dev"),
        Dataset(name=ds.name, documents=docs[i2:], split="test"),
    )


# ---------------------------------------------------------------------------
# Synthetic generator


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for a planted-rationale dataset; the seed fully determines output.

    ``background_tilt`` adds a weak, diffuse class signal to the background
    words (as natural corpora have): a ``tilt_fraction`` share of background
    types is sampled more often in evidence-class documents and less often in
    the others, by a factor of (1 + tilt)/(1 - tilt) per token.  Plants stay
    the only strong per-token evidence and the only labeled rationale.
    """

    n_docs: int = 1500
    mean_doc_len: int = 686
    max_doc_len: int = 1935
    min_sentence_len: int = 6
    max_sentence_len: int = 30
    vocab_size: int = 600
    evidence_fraction: float = 0.08
    positive_lexicon_size: int = 60
    label_threshold: int = 8
    span_len_min: int = 3
    span_len_max: int = 8
    background_tilt: float = 0.8
    tilt_fraction: float = 0.65
    evidence_in_negative: bool = False
    seed: int = 13

    def __post_init__(self) -> None:
        if self.n_docs < 2:
            raise DatasetValidationError("n_docs must be at least 2")
        if not 0 < self.evidence_fraction < 1:
            raise DatasetValidationError(
                f"evidence_fraction must lie in (0, 1), got {self.evidence_fraction}"
            )
        if self.min_sentence_len < 2 or self.max_sentence_len < self.min_sentence_len:
            raise DatasetValidationError("invalid sentence length bounds")
        if self.mean_doc_len > self.max_doc_len:
            raise DatasetValidationError("mean_doc_len exceeds max_doc_len")
        if self.span_len_min < 1 or self.span_len_max < self.span_len_min:
            raise DatasetValidationError("invalid plant span bounds")
        if not 0.0 <= self.background_tilt < 1.0:
            raise DatasetValidationError("background_tilt must lie in [0, 1)")
        if not 0.0 < self.tilt_fraction < 1.0:
            raise DatasetValidationError("tilt_fraction must lie in (0, 1)")
        if self.evidence_fraction * self.mean_doc_len < self.label_threshold:
            raise DatasetValidationError(
                "infeasible spec: evidence_fraction * mean_doc_len "
                f"({self.evidence_fraction * self.mean_doc_len:.1f}) is below "
                f"label_threshold ({self.label_threshold})"
            )

    def to_dict(self) -> dict:
        return {
            "n_docs": self.n_docs,
            "mean_doc_len": self.mean_doc_len,
            "max_doc_len": self.max_doc_len,
            "min_sentence_len": self.min_sentence_len,
            "max_sentence_len": self.max_sentence_len,
            "vocab_size": self.vocab_size,
            "evidence_fraction": self.evidence_fraction,
            "positive_lexicon_size": self.positive_lexicon_size,
            "label_threshold": self.label_threshold,
            "span_len_min": self.span_len_min,
            "span_len_max": self.span_len_max,
            "background_tilt": self.background_tilt,
            "tilt_fraction": self.tilt_fraction,
            "evidence_in_negative": self.evidence_in_negative,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise DatasetValidationError(f"unknown synthetic spec fields: {sorted(unknown)}")
        return cls(**d)


def sentiment_preset(n_docs: int = 1500, seed: int = 13) -> SynthSpec:
    """Long documents, diffuse span-shaped evidence (movie-review-like)."""
    return SynthSpec(n_docs=n_docs, seed=seed)


def ged_preset(n_docs: int = 1000, seed: int = 29) -> SynthSpec:
    """Shorter documents, isolated-token evidence (error-detection-like)."""
    return SynthSpec(
        n_docs=n_docs,
        mean_doc_len=441,
        max_doc_len=725,
        min_sentence_len=4,
        max_sentence_len=25,
        evidence_fraction=0.13,
        label_threshold=4,
        span_len_min=1,
        span_len_max=1,
        background_tilt=0.3,
        seed=seed,
    )


def synth_generate(spec: SynthSpec, name: str = "synthetic") -> Dataset:
    """Plant lexicon tokens into background documents at a target evidence rate.

    Half of the documents receive plants; the label rule marks a document 1
    iff its planted-token count reaches ``label_threshold`` (inverted when
    ``evidence_in_negative``).  Plants are placed at roughly twice the target
    evidence rate inside planted documents so that the dataset-wide fraction
    of positive token labels lands on ``evidence_fraction``.
    """
    rng = np.random.default_rng(spec.seed)
    background = np.array([f"w{i:04d}" for i in range(spec.vocab_size)])
    lexicon = np.array([f"pos{i:03d}" for i in range(spec.positive_lexicon_size)])
    # Zipf-flavored unigram distribution over the background vocabulary,
    # tilted per class: types with index below tilt_fraction * V lean toward
    # the evidence class, the rest lean the other way.
    base = 1.0 / (np.arange(spec.vocab_size) + 2.0)
    leaning = rng.permutation(spec.vocab_size) < spec.tilt_fraction * spec.vocab_size
    tilt = np.where(leaning, 1.0 + spec.background_tilt, 1.0 - spec.background_tilt)
    probs_planted = base * tilt
    probs_planted /= probs_planted.sum()
    probs_clean = base * (2.0 - tilt)
    probs_clean /= probs_clean.sum()

    n_planted = spec.n_docs // 2
    planted_flags = np.zeros(spec.n_docs, dtype=bool)
    planted_flags[:n_planted] = True
    rng.shuffle(planted_flags)

    documents: list[Document] = []
    min_len = max(spec.min_sentence_len + 1, spec.mean_doc_len // 10)
    for i, planted in enumerate(planted_flags):
        length = int(np.clip(round(rng.normal(spec.mean_doc_len, spec.mean_doc_len / 4)),
                             min_len, spec.max_doc_len))
        probs = probs_planted if planted else probs_clean
        words = background[rng.choice(spec.vocab_size, size=length, p=probs)].tolist()

        # Sentence boundaries; the final token of each sentence becomes ".".
        bounds = [0]
        while bounds[-1] < length:
            bounds.append(min(length, bounds[-1] + int(rng.integers(spec.min_sentence_len,
                                                                    spec.max_sentence_len + 1))))
        if bounds[-1] - bounds[-2] == 1 and len(bounds) > 2:
            bounds[-2] -= 1  # avoid a trailing single-token sentence
        for b in bounds[1:]:
            words[b - 1] = "."

        labels = [0] * length
        if planted:
            target = max(spec.label_threshold, round(2 * spec.evidence_fraction * length))
            placed = 0
            attempts = 0
            while placed < target and attempts < 50 * target:
                attempts += 1
                span = int(rng.integers(spec.span_len_min, spec.span_len_max + 1))
                span = min(span, target - placed)
                start = int(rng.integers(0, length))
                cells = [p for p in range(start, min(start + span + span, length))
                         if words[p] != "." and labels[p] == 0][:span]
                for p in cells:
                    words[p] = str(lexicon[rng.integers(spec.positive_lexicon_size)])
                    labels[p] = 1
                placed += len(cells)
            if placed < spec.label_threshold:
                raise DatasetValidationError(
                    f"could not place {spec.label_threshold} plants in a document of {length} tokens"
                )

        sentences = [words[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        token_labels = [labels[a:b] for a, b in zip(bounds[:-1], bounds[1:])]
        doc_label = int(planted) if not spec.evidence_in_negative else int(not planted)
        documents.append(
            Document(
                doc_id=f"synth-{i:05d}",
                sentences=sentences,
                doc_label=doc_label,
                token_labels=token_labels,
            )
        )
    return Dataset(name=name, documents=documents, split="train")
