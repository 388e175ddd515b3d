"""Command-line interface.

Five subcommands cover the pipeline end to end:

* ``synth``   generate train/dev/test JSONL from a synthetic spec
* ``train``   run the full protocol (repeats x epochs, best-dev checkpoints)
* ``eval``    score a checkpoint or a baseline on a dataset
* ``report``  render the HTML rationale-highlight page for predictions
* ``bench``   time model variants per epoch on one dataset

Exit codes: 0 success, 1 internal failure, 2 user/input error.  Every command
validates its inputs before writing anything, writes its primary artifacts
atomically, and finishes by writing a run manifest with artifact hashes.
"""

from __future__ import annotations

import argparse
import datetime
import hashlib
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from .data import (
    Dataset,
    DatasetValidationError,
    SynthSpec,
    build_vocab,
    load_jsonl,
    save_jsonl,
    split_dataset,
    synth_generate,
)
from .encoder import EncoderConfig
from .figures import save_bench_bars, save_score_histogram
from .head import HeadConfig
from .metrics import (
    EvalReport,
    MetricError,
    compute_report,
    random_baseline_scores,
    render_table,
    topk_threshold,
)
from .report import ReportInputError, build_html
from .training import (
    Model,
    TrainConfig,
    TrainingDivergedError,
    load_checkpoint,
    predict_dataset,
    run_training,
    save_checkpoint,
    topk_attention_scores,
    variant_is_compositional,
)


class ConfigError(ValueError):
    pass


USER_ERRORS = (
    ConfigError,
    DatasetValidationError,
    MetricError,
    ReportInputError,
    FileNotFoundError,
    json.JSONDecodeError,
)

_TRAIN_FIELDS = {"epochs", "learning_rate", "batch_size", "optimizer", "seed", "repeats", "variant"}
_ENC_FIELDS = {"h", "n_layers", "n_heads", "max_sentence_len", "window", "use_positional"}
_HEAD_FIELDS = {"h_prime", "s", "beta", "gamma", "gamma_ranked", "k"}
_DATA_FIELDS = {"train_path", "dev_path", "test_path", "vocab_size"}
_BENCH_FIELDS = {"variants", "bench_epochs", "max_docs"}


# ---------------------------------------------------------------------------
# Plumbing


def _utcnow() -> str:
    return datetime.datetime.now(datetime.timezone.utc).isoformat(timespec="seconds")


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_atomic(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_manifest(
    path: Path,
    command: str,
    resolved_config: dict,
    inputs: list[Path],
    outputs: list[Path],
    seed: int | None,
    started: str,
) -> None:
    manifest = {
        "command": command,
        "resolved_config": resolved_config,
        "seed": seed,
        "inputs": {str(p): _sha256(Path(p)) for p in inputs},
        "outputs": {str(p): _sha256(Path(p)) for p in outputs},
        "started_utc": started,
        "finished_utc": _utcnow(),
    }
    _write_atomic(path, json.dumps(manifest, indent=2) + "\n")


def _load_json(path: str | Path) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"no such file: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def _merge_overrides(config: dict, args: argparse.Namespace) -> dict:
    """CLI flags override config-file values."""
    merged = dict(config)
    for flag, key in (
        ("seed", "seed"),
        ("k", "k"),
        ("beta", "beta"),
        ("gamma", "gamma"),
        ("gamma_ranked", "gamma_ranked"),
        ("variant", "variant"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            merged[key] = value
    return merged


def _build_setup(config: dict, for_bench: bool = False):
    """Split a flat config dict into the typed configs plus data paths."""
    allowed = _TRAIN_FIELDS | _ENC_FIELDS | _HEAD_FIELDS | _DATA_FIELDS
    if for_bench:
        allowed |= _BENCH_FIELDS
    unknown = set(config) - allowed
    if unknown:
        raise ConfigError(f"unknown config fields: {sorted(unknown)}")
    try:
        tcfg = TrainConfig(**{k: config[k] for k in _TRAIN_FIELDS if k in config})
        enc_cfg = EncoderConfig(**{k: config[k] for k in _ENC_FIELDS if k in config})
        head_kwargs = {k: config[k] for k in _HEAD_FIELDS if k in config}
        head_kwargs.setdefault("h_prime", enc_cfg.h)
        head_kwargs.setdefault("s", enc_cfg.h)
        k_given = "k" in head_kwargs
        head_cfg = HeadConfig(**head_kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    return tcfg, enc_cfg, head_cfg, k_given


def _require_paths(config: dict, keys: tuple[str, ...]) -> dict[str, Path]:
    paths = {}
    for key in keys:
        if key not in config:
            raise ConfigError(f"config is missing required field {key!r}")
        p = Path(config[key])
        if not p.exists():
            raise FileNotFoundError(f"{key}: no such file {p}")
        paths[key] = p
    return paths


def _resolve_k(k_given: bool, head_cfg: HeadConfig, train_ds: Dataset, dev_ds: Dataset | None) -> HeadConfig:
    """Derive k from the evidence fraction when the config does not pin it."""
    if k_given:
        return head_cfg
    for ds in (train_ds, dev_ds):
        if ds is not None and ds.evidence_fraction:
            k = max(0.5, round(100.0 * ds.evidence_fraction, 1))
            return HeadConfig(**{**head_cfg.to_dict(), "k": k})
    return head_cfg


def _predictions_line(doc_id: str, y_hat, scores, binary) -> str:
    return json.dumps(
        {
            "doc_id": doc_id,
            "y_hat": y_hat,
            "token_scores": [float(s) for s in scores],
            "binary_rationale": [int(b) for b in binary],
        }
    )


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    started = _utcnow()
    raw = _load_json(args.spec)
    if args.seed is not None:
        raw["seed"] = args.seed
    spec = SynthSpec.from_dict(raw)
    dataset = synth_generate(spec)
    train, dev, test = split_dataset(dataset, (0.8, 0.1, 0.1), seed=spec.seed)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for split, part in (("train", train), ("dev", dev), ("test", test)):
        path = out_dir / f"{split}.jsonl"
        save_jsonl(part, path)
        outputs.append(path)
        print(f"wrote {path} ({len(part)} docs)")
    write_manifest(
        out_dir / "manifest.json", "synth", spec.to_dict(),
        inputs=[Path(args.spec)], outputs=outputs, seed=spec.seed, started=started,
    )
    return 0


# ---------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    started = _utcnow()
    config = _merge_overrides(_load_json(args.config), args)
    tcfg, enc_cfg, head_cfg, k_given = _build_setup(config)
    paths = _require_paths(config, ("train_path", "dev_path"))
    train_ds = load_jsonl(paths["train_path"], split="train")
    dev_ds = load_jsonl(paths["dev_path"], split="dev")
    if not len(train_ds) or not len(dev_ds):
        raise DatasetValidationError("train and dev splits must be nonempty")
    head_cfg = _resolve_k(k_given, head_cfg, train_ds, dev_ds)
    vocab = build_vocab(train_ds, int(config.get("vocab_size", 2000)))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    print(f"variant {tcfg.variant}  k={head_cfg.k}  beta={head_cfg.beta}  "
          f"gamma={head_cfg.gamma}  gamma_ranked={head_cfg.gamma_ranked}")

    outputs = []
    best_reports: list[EvalReport] = []
    for repeat in range(tcfg.repeats):
        seed_r = tcfg.seed + repeat
        run_cfg = TrainConfig(**{**tcfg.to_dict(), "seed": seed_r})
        model = Model.build(tcfg.variant, vocab, enc_cfg, head_cfg, seed=seed_r)
        train_docs = model.prepare(train_ds)
        dev_docs = model.prepare(dev_ds)
        print(f"-- repeat {repeat + 1}/{tcfg.repeats} (seed {seed_r})")
        run = run_training(model, train_docs, dev_docs, run_cfg, log=print)
        ck_path = out_dir / f"checkpoint-repeat{repeat + 1}.bin"
        save_checkpoint(ck_path, model, run.best, run.mean_epoch_seconds,
                        extra={"repeat": repeat + 1, "train_seed": seed_r})
        outputs += [ck_path, ck_path.with_suffix(".bin.json")]
        best = run.best.dev_report
        best = EvalReport.from_dict({**best.to_dict(), "seconds_per_epoch": run.mean_epoch_seconds})
        best_reports.append(best)
        print(f"   best epoch {run.best.epoch}  dev doc F1 {best.doc_f1:.4f}")

    aggregate, f1_std = _aggregate_reports(best_reports)
    table = render_table([(tcfg.variant, aggregate)], stds={tcfg.variant: f1_std})
    print(table)
    agg_json = out_dir / "aggregate.json"
    _write_atomic(agg_json, json.dumps(
        {"mean": aggregate.to_dict(), "token_f1_std": f1_std,
         "repeats": [r.to_dict() for r in best_reports]}, indent=2) + "\n")
    agg_csv = out_dir / "aggregate.csv"
    _write_atomic(agg_csv, _reports_csv([(tcfg.variant, aggregate)], {tcfg.variant: f1_std}))
    agg_txt = out_dir / "aggregate.txt"
    _write_atomic(agg_txt, table + "\n")
    outputs += [agg_json, agg_csv, agg_txt]

    write_manifest(
        out_dir / "manifest.json", "train",
        {**config, "resolved_k": head_cfg.k, "variant": tcfg.variant},
        inputs=[paths["train_path"], paths["dev_path"]],
        outputs=outputs, seed=tcfg.seed, started=started,
    )
    return 0


def _aggregate_reports(reports: list[EvalReport]) -> tuple[EvalReport, float]:
    """Mean of every metric over repeats, plus the sample std of token F1."""
    fields = ["doc_f1", "token_p", "token_r", "token_f1", "token_f05", "map",
              "coverage", "seconds_per_epoch"]
    mean: dict[str, float | None] = {}
    for f in fields:
        values = [getattr(r, f) for r in reports if getattr(r, f) is not None]
        mean[f] = float(np.mean(values)) if values else None
    f1_values = [r.token_f1 for r in reports if r.token_f1 is not None]
    f1_std = float(np.std(f1_values, ddof=1)) if len(f1_values) > 1 else 0.0
    return EvalReport.from_dict(mean), f1_std


def _reports_csv(rows: list[tuple[str, EvalReport]], stds: dict[str, float] | None = None) -> str:
    stds = stds or {}
    header = "model,doc_f1,token_f1,token_f1_std,token_f05,token_p,token_r,map,coverage,seconds_per_epoch"
    lines = [header]
    for name, r in rows:
        def cell(v):
            return "" if v is None else repr(float(v))
        lines.append(",".join([
            name, cell(r.doc_f1), cell(r.token_f1), cell(stds.get(name, 0.0)),
            cell(r.token_f05), cell(r.token_p), cell(r.token_r), cell(r.map),
            cell(r.coverage), cell(r.seconds_per_epoch),
        ]))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    started = _utcnow()
    dataset_path = Path(args.dataset)
    if not dataset_path.exists():
        raise FileNotFoundError(f"no such dataset: {dataset_path}")
    dataset = load_jsonl(dataset_path, split=args.split)
    has_token_labels = any(d.token_labels is not None for d in dataset.documents)

    if args.baseline is None and args.checkpoint is None:
        raise ConfigError("eval needs --checkpoint unless --baseline random is used")
    if args.baseline == "random" and not has_token_labels:
        raise ConfigError("the random baseline is a token-level evaluation; "
                          "the dataset carries no token_labels")
    if args.baseline == "topk-attn":
        if args.checkpoint is None:
            raise ConfigError("--baseline topk-attn needs a windowed-encoder --checkpoint")
        if not has_token_labels:
            raise ConfigError("the top-k attention baseline is a token-level evaluation; "
                              "the dataset carries no token_labels")
    if args.baseline not in (None, "random", "topk-attn"):
        raise ConfigError(f"unknown baseline {args.baseline!r}")

    model = sidecar = None
    if args.checkpoint is not None:
        model, sidecar = load_checkpoint(args.checkpoint)
        if args.baseline == "topk-attn" and variant_is_compositional(model.variant):
            raise ConfigError("--baseline topk-attn needs a windowed-encoder checkpoint; "
                              f"{model.variant!r} is compositional")

    name, records, report = _evaluate(args, dataset, model, sidecar)

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pred_path = out_dir / "predictions.jsonl"
    _write_atomic(pred_path, "".join(
        _predictions_line(r["doc_id"], r["y_hat"], r["token_scores"], r["binary_rationale"]) + "\n"
        for r in records
    ))
    report_json = out_dir / "report.json"
    _write_atomic(report_json, report.to_json() + "\n")
    table = render_table([(name, report)])
    report_txt = out_dir / "report.txt"
    _write_atomic(report_txt, table + "\n")
    print(table)

    fig_path = out_dir / "score_histogram.png"
    by_class = {}
    for label, tag in ((1, "label-1 docs"), (0, "label-0 docs")):
        scores = [np.asarray(r["token_scores"]) for r, d in zip(records, dataset.documents)
                  if d.doc_label == label]
        if scores:
            by_class[tag] = np.concatenate(scores)
    save_score_histogram(by_class, fig_path, title=f"Token scores: {name}")

    inputs = [dataset_path] + ([Path(args.checkpoint)] if args.checkpoint else [])
    write_manifest(
        out_dir / "manifest.json", "eval",
        {"dataset": str(dataset_path), "checkpoint": args.checkpoint,
         "baseline": args.baseline, "k": args.k, "split": args.split, "seed": args.seed},
        inputs=inputs, outputs=[pred_path, report_json, report_txt, fig_path],
        seed=args.seed, started=started,
    )
    return 0


def _evaluate(args, dataset: Dataset, model: Model | None, sidecar: dict | None):
    """Returns (row name, prediction records, EvalReport)."""
    docs_gold_tokens = [d.flat_token_labels() for d in dataset.documents]
    doc_gold = [d.doc_label for d in dataset.documents]

    if args.baseline == "random":
        seed = args.seed if args.seed is not None else 0
        k = args.k if args.k is not None else _k_from(sidecar, dataset)
        lengths = [d.n_tokens for d in dataset.documents]
        scores = random_baseline_scores(lengths, seed=seed)
        preds = [topk_threshold(s, k) for s in scores]
        records = [
            {"doc_id": d.doc_id, "y_hat": None, "token_scores": s, "binary_rationale": b}
            for d, s, b in zip(dataset.documents, scores, preds)
        ]
        report = compute_report(None, None, scores, preds, docs_gold_tokens)
        return f"random-uniform (k={k})", records, report

    docs = model.prepare(dataset)
    if args.baseline == "topk-attn":
        k = args.k if args.k is not None else _k_from(sidecar, dataset)
        scores = topk_attention_scores(model, docs)
        preds = [topk_threshold(s, k) for s in scores]
        model_preds = [model.predict(doc) for doc in docs]
        records = [
            {"doc_id": d.doc_id, "y_hat": p.y_hat, "token_scores": s, "binary_rationale": b}
            for d, p, s, b in zip(dataset.documents, model_preds, scores, preds)
        ]
        report = compute_report(
            [p.doc_pred for p in model_preds], doc_gold, scores, preds, docs_gold_tokens,
        )
        return f"self-attention top-k (k={k})", records, report

    predictions, report = predict_dataset(model, docs)
    if sidecar is not None:
        report.seconds_per_epoch = sidecar.get("mean_epoch_seconds")
    records = [
        {"doc_id": p.doc_id, "y_hat": p.y_hat, "token_scores": p.token_scores,
         "binary_rationale": p.binary_rationale}
        for p in predictions
    ]
    return model.variant, records, report


def _k_from(sidecar: dict | None, dataset: Dataset) -> float:
    if sidecar is not None and "head_config" in sidecar:
        return float(sidecar["head_config"]["k"])
    if dataset.evidence_fraction:
        return max(0.5, round(100.0 * dataset.evidence_fraction, 1))
    raise ConfigError("cannot derive k: pass --k or use a labeled dataset")


# ---------------------------------------------------------------------------
# report


def cmd_report(args) -> int:
    started = _utcnow()
    dataset_path, pred_path = Path(args.dataset), Path(args.predictions)
    for p in (dataset_path, pred_path):
        if not p.exists():
            raise FileNotFoundError(f"no such file: {p}")
    dataset = load_jsonl(dataset_path, split=args.split)
    predictions = {}
    with pred_path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ReportInputError(f"{pred_path}:{lineno}: malformed JSON: {exc}") from exc
            predictions[rec["doc_id"]] = rec

    html_text = build_html(dataset, predictions, title=f"Rationales: {dataset.name}")
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_atomic(out_path, html_text)
    print(f"wrote {out_path} ({len(dataset)} documents)")

    fig_path = out_path.with_suffix(".scores.png")
    gold_scores, other_scores = [], []
    for doc in dataset.documents:
        scores = np.asarray(predictions[doc.doc_id]["token_scores"], dtype=float)
        gold = doc.flat_token_labels()
        if gold is None:
            other_scores.append(scores)
        else:
            gold = np.asarray(gold, dtype=bool)
            gold_scores.append(scores[gold])
            other_scores.append(scores[~gold])
    by_class = {}
    if gold_scores:
        by_class["gold tokens"] = np.concatenate(gold_scores)
    if other_scores:
        by_class["other tokens"] = np.concatenate(other_scores)
    save_score_histogram(by_class, fig_path, title=f"Token scores: {dataset.name}")

    write_manifest(
        out_path.parent / (out_path.name + ".manifest.json"), "report",
        {"dataset": str(dataset_path), "predictions": str(pred_path), "split": args.split},
        inputs=[dataset_path, pred_path], outputs=[out_path, fig_path],
        seed=None, started=started,
    )
    return 0


# ---------------------------------------------------------------------------
# bench


def cmd_bench(args) -> int:
    started = _utcnow()
    config = _merge_overrides(_load_json(args.config), args)
    variants = config.get("variants")
    if not isinstance(variants, list) or len(variants) < 2:
        raise ConfigError("bench config needs a 'variants' list naming at least two variants")
    bench_epochs = int(config.pop("bench_epochs", 2))
    max_docs = config.pop("max_docs", None)
    config_rest = {k: v for k, v in config.items() if k != "variants"}
    tcfg, enc_cfg, head_cfg, k_given = _build_setup(config_rest)
    paths = _require_paths(config_rest, ("train_path",))
    train_ds = load_jsonl(paths["train_path"], split="train")
    if max_docs is not None:
        train_ds = Dataset(train_ds.name, train_ds.documents[: int(max_docs)], split="train")
    head_cfg = _resolve_k(k_given, head_cfg, train_ds, None)
    vocab = build_vocab(train_ds, int(config_rest.get("vocab_size", 2000)))

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for variant in variants:
        run_cfg = TrainConfig(**{**tcfg.to_dict(), "variant": variant, "epochs": bench_epochs,
                                 "repeats": 1})
        model = Model.build(variant, vocab, enc_cfg, head_cfg, seed=tcfg.seed)
        docs = model.prepare(train_ds)
        run = run_training(model, docs, docs[: max(1, len(docs) // 10)], run_cfg)
        rows.append((variant, run.mean_epoch_seconds))
        print(f"{variant:28s} {run.mean_epoch_seconds:8.2f} s/epoch over {bench_epochs} epochs")

    ratio = _bench_ratio(rows)
    print(f"compositional/monolithic seconds-per-epoch ratio: {ratio:.3f}")

    csv_path = out_dir / "bench.csv"
    lines = ["variant,seconds_per_epoch"] + [f"{n},{s!r}" for n, s in rows]
    lines.append(f"ratio,{ratio!r}")
    _write_atomic(csv_path, "\n".join(lines) + "\n")
    fig_path = out_dir / "bench_seconds.png"
    save_bench_bars([n for n, _ in rows], [s for _, s in rows], fig_path)

    write_manifest(
        out_dir / "manifest.json", "bench",
        {**config, "bench_epochs": bench_epochs, "resolved_k": head_cfg.k},
        inputs=[paths["train_path"]], outputs=[csv_path, fig_path],
        seed=tcfg.seed, started=started,
    )
    return 0


def _bench_ratio(rows: list[tuple[str, float]]) -> float:
    comp = [s for n, s in rows if variant_is_compositional(n)]
    mono = [s for n, s in rows if not variant_is_compositional(n)]
    if comp and mono:
        return float(np.mean(comp) / np.mean(mono))
    return float(rows[1][1] / rows[0][1])


# ---------------------------------------------------------------------------
# Parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rationale",
        description="Token-level rationale extraction: synthesis, training, "
                    "evaluation, reports, and benchmarks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset from a spec file")
    p.add_argument("--spec", required=True, help="path to a SynthSpec JSON file")
    p.add_argument("--out", required=True, help="output directory for the JSONL splits")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model variant with repeats")
    p.add_argument("--config", required=True, help="flat JSON config path")
    p.add_argument("--out", required=True, help="output directory for checkpoints and reports")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--variant", default=None)
    p.add_argument("--k", type=float, default=None, help="top-k%% supervised tokens")
    p.add_argument("--beta", type=float, default=None, help="attention sharpness")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--gamma-ranked", dest="gamma_ranked", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint or a baseline")
    p.add_argument("--dataset", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.add_argument("--baseline", default=None, choices=("random", "topk-attn"))
    p.add_argument("--k", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render the HTML rationale report")
    p.add_argument("--predictions", required=True, help="predictions JSONL path")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True, help="output HTML path")
    p.add_argument("--split", default="test", choices=("train", "dev", "test"))
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("bench", help="time variants per epoch on one dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--k", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--gamma-ranked", dest="gamma_ranked", type=float, default=None)
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except USER_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TrainingDivergedError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
