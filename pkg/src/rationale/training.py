"""Training: initialization, optimizers, the epoch loop, checkpoint selection
and serialization, and frozen-parameter dataset prediction.

The protocol: train for a fixed number of epochs, evaluate the dev split
after each, keep every epoch's parameter snapshot, and select the checkpoint
with the best dev document F1 (ties to the earliest epoch).  Model selection
never touches token labels.  Runs are deterministic given (seed, config,
dataset) on one platform.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data import Dataset, Document
from .encoder import EncoderConfig, Vocab, cls_global_attention_scores, encoder_param_shapes
from .head import (
    HeadConfig,
    HeadForward,
    Prediction,
    SoftAttentionParams,
    compositional_forward,
    document_loss,
    loss_terms,
    monolithic_forward,
    supervision_coverage,
)
from .metrics import EvalReport, compute_report
from .tensor import Tensor

VARIANTS = (
    "weighted-monolithic",
    "ranked-monolithic",
    "compositional-ranked",
    "compositional-weighted",
)


class TrainingDivergedError(RuntimeError):
    """A non-finite loss appeared; carries the offending epoch and document."""

    def __init__(self, epoch: int, doc_id: str, terms: dict[str, float]):
        self.epoch = epoch
        self.doc_id = doc_id
        self.terms = terms
        pretty = ", ".join(f"{k}={v:.6g}" for k, v in terms.items())
        super().__init__(f"non-finite loss at epoch {epoch}, doc {doc_id!r} ({pretty})")


def variant_loss(variant: str) -> str:
    return "weighted" if variant.endswith("weighted") or variant.startswith("weighted") else "ranked"


def variant_is_compositional(variant: str) -> bool:
    return variant.startswith("compositional")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 8
    optimizer: str = "adam"
    seed: int = 0
    repeats: int = 3
    variant: str = "compositional-ranked"

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r} (sgd or adam)")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "optimizer": self.optimizer,
            "seed": self.seed,
            "repeats": self.repeats,
            "variant": self.variant,
        }


# ---------------------------------------------------------------------------
# Parameters


def param_shapes(vocab_size: int, enc_cfg: EncoderConfig, head_cfg: HeadConfig) -> dict[str, tuple[int, ...]]:
    shapes = dict(encoder_param_shapes(enc_cfg, vocab_size))
    shapes.update(SoftAttentionParams.shapes(enc_cfg.h, head_cfg))
    return shapes


def init_params(
    vocab_size: int, enc_cfg: EncoderConfig, head_cfg: HeadConfig, seed: int
) -> dict[str, Tensor]:
    """Glorot-uniform weights, zero biases, unit layer-norm gains.

    Parameters are drawn in sorted name order from one seeded generator, so
    equal seeds give identical parameter sets.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape in sorted(param_shapes(vocab_size, enc_cfg, head_cfg).items()):
        if name.endswith("_gain"):
            params[name] = Tensor(np.ones(shape))
        elif len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            params[name] = Tensor(rng.uniform(-bound, bound, size=shape))
        else:
            params[name] = Tensor(np.zeros(shape))
    return params


def snapshot_params(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: t.data.copy() for name, t in params.items()}


def restore_params(params: dict[str, Tensor], snapshot: dict[str, np.ndarray]) -> None:
    for name, t in params.items():
        t.data = snapshot[name].copy()
        t.zero_grad()


class Sgd:
    def __init__(self, params: dict[str, Tensor], lr: float):
        self.params = params
        self.lr = lr

    def step(self) -> None:
        for t in self.params.values():
            if t.grad is not None:
                t.data = t.data - self.lr * t.grad

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()


class Adam:
    """Adaptive moment estimation with bias correction (b1=0.9, b2=0.999)."""

    def __init__(self, params: dict[str, Tensor], lr: float, b1: float = 0.9,
                 b2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.b1**self.t
        bc2 = 1.0 - self.b2**self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[name] = self.b1 * self.m[name] + (1 - self.b1) * g
            v = self.v[name] = self.b2 * self.v[name] + (1 - self.b2) * g * g
            p.data = p.data - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()


def make_optimizer(name: str, params: dict[str, Tensor], lr: float):
    return Sgd(params, lr) if name == "sgd" else Adam(params, lr)


# ---------------------------------------------------------------------------
# Model


@dataclass
class PreparedDoc:
    doc_id: str
    sentence_ids: list[np.ndarray]
    flat_ids: np.ndarray
    doc_label: int
    token_labels: np.ndarray | None

    @property
    def n_tokens(self) -> int:
        return int(self.flat_ids.size)


@dataclass
class Model:
    variant: str
    vocab: Vocab
    encoder_config: EncoderConfig
    head_config: HeadConfig
    params: dict[str, Tensor]

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        self.head_params = SoftAttentionParams.from_flat(self.params)

    @classmethod
    def build(cls, variant: str, vocab: Vocab, enc_cfg: EncoderConfig,
              head_cfg: HeadConfig, seed: int) -> "Model":
        head_cfg = HeadConfig(**{**head_cfg.to_dict(), "loss_variant": variant_loss(variant)})
        params = init_params(len(vocab), enc_cfg, head_cfg, seed)
        return cls(variant, vocab, enc_cfg, head_cfg, params)

    def prepare(self, dataset: Dataset | Sequence[Document]) -> list[PreparedDoc]:
        docs = dataset.documents if isinstance(dataset, Dataset) else list(dataset)
        out = []
        for doc in docs:
            sent_ids = [self.vocab.encode(s) for s in doc.sentences]
            out.append(
                PreparedDoc(
                    doc_id=doc.doc_id,
                    sentence_ids=sent_ids,
                    flat_ids=np.concatenate(sent_ids),
                    doc_label=doc.doc_label,
                    token_labels=doc.flat_token_labels(),
                )
            )
        return out

    def forward(self, doc: PreparedDoc, collect_maps: bool = False):
        """Run one document; returns (HeadForward, attention maps or None)."""
        if variant_is_compositional(self.variant):
            fw = compositional_forward(
                doc.sentence_ids, self.params, self.head_params,
                self.encoder_config, self.head_config,
            )
            return fw, None
        fw, maps = monolithic_forward(
            doc.flat_ids, self.vocab.cls_id, self.params, self.head_params,
            self.encoder_config, self.head_config, collect_maps=collect_maps,
        )
        return fw, maps

    def loss(self, fw: HeadForward, label: int) -> Tensor:
        return document_loss(fw, float(label), self.head_config)

    def predict(self, doc: PreparedDoc) -> Prediction:
        fw, _ = self.forward(doc)
        return fw.to_prediction(doc.doc_id)

    def coverage(self, n_tokens: int) -> float:
        return supervision_coverage(self.head_config.loss_variant, n_tokens, self.head_config.k)


# ---------------------------------------------------------------------------
# Epoch loop and protocol


def train_epoch(
    model: Model,
    train_docs: Sequence[PreparedDoc],
    cfg: TrainConfig,
    optimizer,
    epoch: int,
) -> tuple[float, float]:
    """One pass over the training documents.

    Documents are shuffled by an epoch-derived seed; per batch the mean
    document loss is backpropagated and one optimizer step taken.  Returns
    (mean per-document loss, wall-clock seconds of compute).
    """
    if not train_docs:
        raise ValueError("train split is empty")
    order = np.random.default_rng([cfg.seed, epoch]).permutation(len(train_docs))
    total_loss = 0.0
    started = time.perf_counter()
    for lo in range(0, len(order), cfg.batch_size):
        batch = [train_docs[i] for i in order[lo : lo + cfg.batch_size]]
        doc_losses = []
        for doc in batch:
            fw, _ = model.forward(doc)
            loss = model.loss(fw, doc.doc_label)
            if not np.isfinite(loss.data):
                raise TrainingDivergedError(
                    epoch, doc.doc_id, loss_terms(fw, float(doc.doc_label), model.head_config)
                )
            doc_losses.append(loss)
        batch_loss = doc_losses[0]
        for extra in doc_losses[1:]:
            batch_loss = batch_loss + extra
        batch_loss = batch_loss * (1.0 / len(doc_losses))
        batch_loss.backward()
        optimizer.step()
        optimizer.zero_grad()
        total_loss += batch_loss.item() * len(doc_losses)
    seconds = time.perf_counter() - started
    return total_loss / len(order), seconds


def predict_dataset(
    model: Model,
    docs: Sequence[PreparedDoc],
    map_mode: str = "per_document",
) -> tuple[list[Prediction], EvalReport]:
    """Frozen-parameter inference plus the full evaluation report.

    Token classification uses the fixed 0.5 threshold (strict greater-than);
    token metrics cover only documents with gold token labels.
    """
    predictions = [model.predict(doc) for doc in docs]
    report = compute_report(
        doc_preds=[p.doc_pred for p in predictions],
        doc_gold=[d.doc_label for d in docs],
        token_scores_per_doc=[p.token_scores for p in predictions],
        token_pred_per_doc=[p.binary_rationale for p in predictions],
        token_gold_per_doc=[d.token_labels for d in docs],
        coverage=float(np.mean([model.coverage(d.n_tokens) for d in docs])),
        map_mode=map_mode,
    )
    return predictions, report


@dataclass
class Checkpoint:
    epoch: int  # 1-based
    params: dict[str, np.ndarray]
    dev_report: EvalReport
    seconds: float  # wall-clock of this epoch's training compute


def select_checkpoint(checkpoints: Sequence[Checkpoint]) -> Checkpoint:
    """Best dev document F1; ties resolve to the earliest epoch."""
    if not checkpoints:
        raise ValueError("no checkpoints to select from")
    best = checkpoints[0]
    for ck in checkpoints[1:]:
        if (ck.dev_report.doc_f1 or 0.0) > (best.dev_report.doc_f1 or 0.0):
            best = ck
    return best


@dataclass
class TrainRun:
    checkpoints: list[Checkpoint]
    best: Checkpoint
    loss_history: list[float]
    mean_epoch_seconds: float


def run_training(
    model: Model,
    train_docs: Sequence[PreparedDoc],
    dev_docs: Sequence[PreparedDoc],
    cfg: TrainConfig,
    log=None,
) -> TrainRun:
    optimizer = make_optimizer(cfg.optimizer, model.params, cfg.learning_rate)
    checkpoints: list[Checkpoint] = []
    losses: list[float] = []
    for epoch in range(1, cfg.epochs + 1):
        mean_loss, seconds = train_epoch(model, train_docs, cfg, optimizer, epoch)
        _, dev_report = predict_dataset(model, dev_docs)
        dev_report.seconds_per_epoch = seconds
        checkpoints.append(
            Checkpoint(epoch=epoch, params=snapshot_params(model.params),
                       dev_report=dev_report, seconds=seconds)
        )
        losses.append(mean_loss)
        if log is not None:
            log(f"epoch {epoch:3d}  loss {mean_loss:.5f}  "
                f"dev doc F1 {dev_report.doc_f1:.4f}  {seconds:.1f}s")
    best = select_checkpoint(checkpoints)
    return TrainRun(
        checkpoints=checkpoints,
        best=best,
        loss_history=losses,
        mean_epoch_seconds=float(np.mean([c.seconds for c in checkpoints])),
    )


# ---------------------------------------------------------------------------
# Self-attention top-k baseline scores


def topk_attention_scores(model: Model, docs: Sequence[PreparedDoc],
                          reduce: str = "mean") -> list[np.ndarray]:
    """CLS global-attention token scores from the final windowed layer."""
    if variant_is_compositional(model.variant):
        raise ValueError(
            "the self-attention top-k baseline needs a windowed-encoder "
            "(monolithic) checkpoint; got a compositional one"
        )
    out = []
    for doc in docs:
        _, maps = model.forward(doc)
        out.append(cls_global_attention_scores(maps[-1], reduce=reduce))
    return out


# ---------------------------------------------------------------------------
# Checkpoint files: a little binary tensor container plus a JSON sidecar


_MAGIC = b"RCKP"
_FORMAT_VERSION = 1


def write_param_container(path: str | Path, params: dict[str, np.ndarray]) -> None:
    """Deterministic binary container: magic, version, then named f64 tensors."""
    path = Path(path)
    blob = bytearray()
    blob += _MAGIC
    blob += struct.pack("<II", _FORMAT_VERSION, len(params))
    for name in sorted(params):
        arr = np.asarray(params[name], dtype=np.float64)  # ascontiguousarray would drop 0-d
        raw_name = name.encode("utf-8")
        blob += struct.pack("<H", len(raw_name))
        blob += raw_name
        blob += struct.pack("<B", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}q", *arr.shape) if arr.ndim else b""
        blob += arr.tobytes(order="C")
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(bytes(blob))
    tmp.replace(path)


def read_param_container(path: str | Path) -> dict[str, np.ndarray]:
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not a checkpoint container")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != _FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    offset = 12
    params: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", raw, offset)
        offset += 2
        name = raw[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", raw, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}q", raw, offset) if ndim else ()
        offset += 8 * ndim
        n_items = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(raw, dtype="<f8", count=n_items, offset=offset).reshape(shape)
        offset += 8 * n_items
        params[name] = arr.copy()
    return params


def config_hash(payload: dict) -> str:
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()


def save_checkpoint(
    path: str | Path,
    model: Model,
    checkpoint: Checkpoint,
    mean_epoch_seconds: float,
    extra: dict | None = None,
) -> None:
    """Write the parameter container and its JSON sidecar (path + '.json')."""
    path = Path(path)
    write_param_container(path, checkpoint.params)
    config_payload = {
        "variant": model.variant,
        "encoder_config": model.encoder_config.to_dict(),
        "head_config": model.head_config.to_dict(),
    }
    sidecar = {
        "format_version": _FORMAT_VERSION,
        "epoch": checkpoint.epoch,
        "seconds": checkpoint.seconds,
        "mean_epoch_seconds": mean_epoch_seconds,
        "config_hash": config_hash(config_payload),
        "dev_report": checkpoint.dev_report.to_dict(),
        "vocab": model.vocab.to_list(),
        **config_payload,
        **(extra or {}),
    }
    tmp = path.with_suffix(path.suffix + ".json.tmp")
    tmp.write_text(json.dumps(sidecar, indent=2), encoding="utf-8")
    tmp.replace(path.with_suffix(path.suffix + ".json"))


def load_checkpoint(path: str | Path) -> tuple[Model, dict]:
    """Rebuild a model (and its sidecar metadata) from a checkpoint file."""
    path = Path(path)
    sidecar_path = path.with_suffix(path.suffix + ".json")
    if not sidecar_path.exists():
        raise FileNotFoundError(f"missing checkpoint sidecar {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    arrays = read_param_container(path)
    vocab = Vocab.from_list(sidecar["vocab"])
    enc_cfg = EncoderConfig(**sidecar["encoder_config"])
    head_cfg = HeadConfig(**sidecar["head_config"])
    params = {name: Tensor(arr) for name, arr in arrays.items()}
    expected = param_shapes(len(vocab), enc_cfg, head_cfg)
    if set(expected) != set(params):
        raise ValueError(f"{path}: parameter names do not match the stored config")
    model = Model(sidecar["variant"], vocab, enc_cfg, head_cfg, params)
    return model, sidecar
