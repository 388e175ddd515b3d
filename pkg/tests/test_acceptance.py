"""Acceptance suite: one test per acceptance criterion, printed pass lines.

Criteria 6-8 train real models on the synthetic sentiment preset and are
marked ``slow``; everything else runs in seconds.  Each test finishes with a
single ``[acceptance] criterion N`` line so a full run reads as a checklist.
"""

import json
import math
import time

import numpy as np
import pytest
import scipy.stats

from rationale.data import build_vocab, sentiment_preset, split_dataset, synth_generate
from rationale.encoder import EncoderConfig, Vocab, cls_global_attention_scores, encode_document_dense
from rationale.head import (
    HeadConfig,
    SoftAttentionParams,
    attention_pool,
    loss_ranked,
    loss_weighted,
    monolithic_forward,
    ranked_partition,
    supervision_coverage,
)
from rationale.metrics import (
    average_precision,
    doc_f1,
    mean_average_precision,
    paired_t_test,
    random_baseline_scores,
    token_prf,
)
from rationale.tensor import Tensor, finite_difference_grad
from rationale.training import Model, TrainConfig, predict_dataset, run_training
from conftest import random_params


def ok(n, message):
    print(f"\n[acceptance] criterion {n}: PASS — {message}")


# ---------------------------------------------------------------------------
# 1. Gradient correctness for every variant


def test_criterion_1_gradient_correctness_all_variants():
    started = time.perf_counter()
    enc_cfg = EncoderConfig(h=8, n_layers=1, n_heads=2, max_sentence_len=8, window=5)
    vocab = Vocab([f"t{i}" for i in range(9)])
    sentences = [["t0", "t1", "t2", "t3", "t4"],
                 ["t2", "t3", "t4", "t5", "t6"],
                 ["t4", "t5", "t6", "t7", "t8"]]
    checked = 0
    for variant in ("weighted-monolithic", "ranked-monolithic",
                    "compositional-ranked", "compositional-weighted"):
        head_cfg = HeadConfig(h_prime=8, s=8, k=40.0)
        model = Model.build(variant, vocab, enc_cfg, head_cfg, seed=5)
        from rationale.data import Document

        doc = Document("g", sentences, 1)
        pdoc = model.prepare([doc])[0]

        def loss_value():
            fw, _ = model.forward(pdoc)
            return model.loss(fw, pdoc.doc_label)

        loss_value().backward()
        grads = {n: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                 for n, p in model.params.items()}
        for t in model.params.values():
            t.zero_grad()
        for name, param in model.params.items():
            original = param

            def f(v, _name=name, _orig=original):
                model.params[_name] = Tensor(v)
                model.head_params = SoftAttentionParams.from_flat(model.params)
                val = loss_value().item()
                model.params[_name] = _orig
                model.head_params = SoftAttentionParams.from_flat(model.params)
                return val

            fd = finite_difference_grad(f, param.data.copy(), eps=1e-5)
            got = grads[name]
            err = np.abs(got - fd) / np.maximum(np.abs(got) + np.abs(fd), 1e-6)
            sig = np.maximum(np.abs(got), np.abs(fd)) > 1e-6
            assert np.all(err[sig] < 1e-4), f"{variant}/{name}: max err {err[sig].max():.2e}"
            checked += fd.size
    elapsed = time.perf_counter() - started
    assert elapsed < 60.0, f"gradient check took {elapsed:.1f}s"
    ok(1, f"{checked} parameter coordinates across 4 variants match central "
          f"finite differences (rel err < 1e-4) in {elapsed:.1f}s")


# ---------------------------------------------------------------------------
# 2. Normalization and partition invariants


def test_criterion_2_normalization_and_partition():
    rng = np.random.default_rng(202)
    betas = (0.5, 1.0, 2.0, 4.0)
    for case in range(1000):
        n = int(rng.integers(1, 24))
        scores_arr = rng.uniform(0.25, 1.0, n)
        t = Tensor(rng.standard_normal((n, 4)))
        beta = float(betas[case % 4])
        weights, _ = attention_pool(t, Tensor(scores_arr), beta)
        assert abs(weights.data.sum() - 1.0) <= 1e-9
        base_order = np.argsort(scores_arr, kind="stable")
        np.testing.assert_array_equal(np.argsort(weights.data, kind="stable"), base_order)
        k = float(rng.integers(1, 101))
        top, rest = ranked_partition(scores_arr, k)
        assert top.size == max(1, math.ceil(k * n / 100.0))
        if rest.size:
            assert scores_arr[top].min() >= scores_arr[rest].max()
    ok(2, "1000 random cases: weights sum to 1±1e-9, top-k partition sized "
          "ceil(kN/100) with min(top) >= max(rest), ranking invariant for "
          "beta in {0.5, 1, 2, 4}")


# ---------------------------------------------------------------------------
# 3. Supervision coverage


def test_criterion_3_supervision_coverage():
    assert supervision_coverage("weighted", 40) == 0.05  # exactly 2 tokens of 40
    assert 0.05 * 40 == 2.0
    for n in (1, 2, 3, 40, 686, 1935):
        assert supervision_coverage("ranked", n) == 1.0
        expected = min(2, n) / n
        assert supervision_coverage("weighted", n) == expected
    ok(3, "weighted supervises exactly 2 tokens per document (5% at N=40); "
          "ranked reports 100% for every document")


# ---------------------------------------------------------------------------
# 4. Hand-computed loss oracle


def test_criterion_4_loss_worked_examples():
    w = loss_weighted(Tensor(0.9), Tensor([0.3, 0.7, 0.5]), 1.0, 1.0)
    assert abs(w.item() - 0.19) < 1e-12
    from rationale.head import ranked_term

    r = ranked_term(Tensor([0.9, 0.8, 0.1, 0.2]), 1.0, 50.0)
    assert abs(r.item() - 0.05) < 1e-12
    total = loss_ranked(Tensor(0.9), Tensor([0.9, 0.8, 0.1, 0.2]), 1.0, 1.0, 1.0, 50.0)
    assert abs(total.item() - 0.08) < 1e-12

    rng = np.random.default_rng(404)
    for _ in range(100):
        scores = rng.uniform(0.0, 1.0, 2)
        label = float(rng.integers(0, 2))
        ranked = loss_ranked(Tensor(label), Tensor(scores), label, 0.0, 1.0, 50.0)
        pair = loss_weighted(Tensor(label), Tensor(scores), label, 1.0)
        assert abs(ranked.item() - pair.item()) < 1e-12
    ok(4, "worked losses reproduce 0.19 / 0.05 / 0.08 to 1e-12; two-token "
          "ranked loss equals the extremum pair on 100 random cases")


# ---------------------------------------------------------------------------
# 5. Metric oracles


def _prf_oracle(pred, gold, beta):
    tp = sum(1 for p, g in zip(pred, gold) if p == 1 and g == 1)
    fp = sum(1 for p, g in zip(pred, gold) if p == 1 and g == 0)
    fn = sum(1 for p, g in zip(pred, gold) if p == 0 and g == 1)
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    denom = beta * beta * p + r
    return p, r, (1 + beta * beta) * p * r / denom if denom else 0.0


def _ap_oracle(scores, gold):
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, precs = 0, []
    for rank, i in enumerate(order, start=1):
        if gold[i] == 1:
            hits += 1
            precs.append(hits / rank)
    return sum(precs) / len(precs)


def test_criterion_5_metric_oracles():
    rng = np.random.default_rng(505)
    for _ in range(100):
        n = int(rng.integers(1, 30))
        pred = rng.integers(0, 2, n)
        gold = rng.integers(0, 2, n)
        for beta in (0.5, 1.0):
            got = token_prf(pred, gold, beta)
            want = _prf_oracle(pred.tolist(), gold.tolist(), beta)
            assert all(abs(a - b) < 1e-12 for a, b in zip(got, want))
        if gold.sum() == 0:
            gold[int(rng.integers(n))] = 1
        scores = np.round(rng.random(n), 2)
        assert abs(average_precision(scores, gold) - _ap_oracle(scores.tolist(), gold.tolist())) < 1e-12
        labels_a = rng.integers(0, 2, n)
        labels_b = rng.integers(0, 2, n)
        assert abs(doc_f1(labels_a, labels_b) - _prf_oracle(labels_a.tolist(), labels_b.tolist(), 1.0)[2]) < 1e-12

    docs_scores = [rng.random(8) for _ in range(10)]
    docs_gold = [(rng.random(8) < 0.4).astype(int) for _ in range(10)]
    docs_gold[0][0] = 1
    got_map = mean_average_precision(docs_scores, docs_gold)
    want_map = np.mean([_ap_oracle(s.tolist(), g.tolist())
                        for s, g in zip(docs_scores, docs_gold) if g.sum() > 0])
    assert abs(got_map - want_map) < 1e-12

    for _ in range(20):
        n = int(rng.integers(2, 12))
        a, b = rng.standard_normal(n), rng.standard_normal(n)
        t, p = paired_t_test(a, b)
        assert abs(p - 2 * scipy.stats.t.sf(abs(t), df=n - 1)) < 1e-3
    ok(5, "token P/R/F1/F0.5, AP/MAP and doc F1 match brute-force oracles to "
          "1e-12 on 100 random instances; paired t-test matches the t-CDF "
          "oracle to 1e-3 on 20 samples")


# ---------------------------------------------------------------------------
# 6 + 7. Qualitative claims on the synthetic sentiment preset.  One shared
# fixture trains weighted-monolithic and compositional-ranked for 20 epochs
# on 1200 documents (mean length 686, 8% evidence) for three seeds; the
# criteria read the final-epoch models ("after 20 epochs").


@pytest.fixture(scope="module")
def sentiment_runs():
    spec = sentiment_preset(n_docs=1500, seed=13)
    full = synth_generate(spec)
    train, dev, test = split_dataset(full, (0.8, 0.1, 0.1), seed=13)
    assert len(train) == 1200
    vocab = build_vocab(train, 1200)
    k = round(100 * train.evidence_fraction, 1)
    runs = {"k": k, "test": test, "pair_seconds": None}
    pair_started = time.perf_counter()
    for variant in ("weighted-monolithic", "compositional-ranked"):
        for seed in (1, 2, 3):
            model = Model.build(variant, vocab, EncoderConfig(), HeadConfig(k=k), seed=seed)
            tr = model.prepare(train)
            dv = model.prepare(dev)
            te = model.prepare(test)
            cfg = TrainConfig(epochs=20, learning_rate=1e-3, batch_size=8,
                              seed=seed, repeats=1, variant=variant)
            run_training(model, tr, dv, cfg)
            preds, report = predict_dataset(model, te)
            all_scores = np.concatenate([p.token_scores for p in preds])
            pos_scores = np.concatenate(
                [p.token_scores for p, d in zip(preds, te) if d.doc_label == 1]
            )
            runs[(variant, seed)] = {
                "frac_high_all": float((all_scores > 0.9).mean()),
                "frac_high_pos": float((pos_scores > 0.9).mean()),
                "map": report.map,
                "doc_f1": report.doc_f1,
            }
            print(f"\n[acceptance] trained {variant} seed {seed}: "
                  f"test doc F1 {report.doc_f1:.3f}, MAP {report.map:.3f}, "
                  f">0.9 share {runs[(variant, seed)]['frac_high_all']:.3f}",
                  flush=True)
            if variant == "compositional-ranked" and seed == 1:
                runs["pair_seconds"] = time.perf_counter() - pair_started
    return runs


@pytest.mark.slow
def test_criterion_6_score_homogeneity(sentiment_runs):
    weighted = sentiment_runs[("weighted-monolithic", 1)]
    comp = sentiment_runs[("compositional-ranked", 1)]
    assert weighted["frac_high_all"] >= 0.60, weighted
    assert comp["frac_high_all"] < 0.20, comp
    pair_minutes = sentiment_runs["pair_seconds"] / 60.0
    assert pair_minutes <= 30.0, f"criterion-6 training pair took {pair_minutes:.1f} min"
    ok(6, f"after 20 epochs the weighted-monolithic model scores "
          f"{100 * weighted['frac_high_all']:.1f}% of tokens above 0.9 "
          f"(>= 60%) while compositional-ranked scores "
          f"{100 * comp['frac_high_all']:.1f}% (< 20%); "
          f"pair trained in {pair_minutes:.1f} min")


@pytest.mark.slow
def test_criterion_7_ranking_quality(sentiment_runs):
    test = sentiment_runs["test"]
    lengths = [d.n_tokens for d in test.documents]
    gold = [d.flat_token_labels() for d in test.documents]
    random_map = mean_average_precision(random_baseline_scores(lengths, seed=991), gold)
    comp_maps = [sentiment_runs[("compositional-ranked", s)]["map"] for s in (1, 2, 3)]
    weighted_maps = [sentiment_runs[("weighted-monolithic", s)]["map"] for s in (1, 2, 3)]
    assert min(comp_maps) >= 2.0 * random_map, (comp_maps, random_map)
    t, p = paired_t_test(comp_maps, weighted_maps)
    assert np.mean(comp_maps) > np.mean(weighted_maps)
    assert p < 0.05, (comp_maps, weighted_maps, t, p)
    ok(7, f"compositional-ranked MAP {np.mean(comp_maps):.3f} is "
          f"{np.mean(comp_maps) / random_map:.1f}x the random baseline "
          f"({random_map:.3f}) and beats weighted-monolithic "
          f"({np.mean(weighted_maps):.3f}) with paired t-test p = {p:.4f} "
          f"over 3 seeds")


# ---------------------------------------------------------------------------
# 8. Runtime: compositional beats the windowed encoder per epoch


@pytest.mark.slow
def test_criterion_8_bench_runtime(tmp_path):
    from rationale.cli import main

    spec = sentiment_preset(n_docs=100, seed=41)
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec.to_dict()))
    assert main(["synth", "--spec", str(spec_path), "--out", str(tmp_path / "data")]) == 0
    config = {
        "train_path": str(tmp_path / "data" / "train.jsonl"),
        "dev_path": str(tmp_path / "data" / "dev.jsonl"),
        "variants": ["compositional-ranked", "ranked-monolithic"],
        "bench_epochs": 2,
        "h": 32, "n_layers": 2, "n_heads": 4,
        "max_sentence_len": 64, "window": 129,
        "seed": 5,
    }
    cfg_path = tmp_path / "bench.json"
    cfg_path.write_text(json.dumps(config))
    assert main(["bench", "--config", str(cfg_path), "--out", str(tmp_path / "bench")]) == 0
    rows = (tmp_path / "bench" / "bench.csv").read_text().splitlines()
    seconds = {line.split(",")[0]: float(line.split(",")[1]) for line in rows[1:]}
    ratio = seconds["ratio"]
    assert seconds["compositional-ranked"] < seconds["ranked-monolithic"]
    assert ratio < 1.0
    ok(8, f"compositional {seconds['compositional-ranked']:.1f}s/epoch vs "
          f"windowed-monolithic {seconds['ranked-monolithic']:.1f}s/epoch at "
          f"S=64, w=129 (ratio {ratio:.2f} < 1.0)")


# ---------------------------------------------------------------------------
# 9. Windowed-encoder sanity


def test_criterion_9_windowed_sanity():
    rng = np.random.default_rng(909)
    head_cfg = HeadConfig(h_prime=8, s=8, k=20.0)
    for trial in range(10):
        n = int(rng.integers(2, 10))
        enc_cfg = EncoderConfig(h=8, n_layers=2, n_heads=2, max_sentence_len=16,
                                window=2 * n + 1)
        params = random_params(enc_cfg, head_cfg, 12, seed=trial)
        head_params = SoftAttentionParams.from_flat(params)
        ids = rng.integers(3, 12, n)
        fw, _ = monolithic_forward(ids, 0, params, head_params, enc_cfg, head_cfg)
        dense = encode_document_dense(np.concatenate([[0], ids]), enc_cfg, params)
        from rationale.head import run_head

        oracle = run_head(dense[1:], head_params, head_cfg)
        np.testing.assert_allclose(fw.token_scores.data, oracle.token_scores.data, atol=1e-9)
        assert abs(fw.y_hat.item() - oracle.y_hat.item()) <= 1e-9

    enc_cfg = EncoderConfig(h=8, n_layers=1, n_heads=2, max_sentence_len=16, window=5)
    params = random_params(enc_cfg, head_cfg, 12, seed=99)
    head_params = SoftAttentionParams.from_flat(params)
    for trial in range(100):
        n = int(rng.integers(1, 40))
        ids = rng.integers(3, 12, n)
        _, maps = monolithic_forward(ids, 0, params, head_params, enc_cfg, head_cfg)
        scores = cls_global_attention_scores(maps[-1])
        assert abs(scores.sum() - 1.0) <= 1e-9
        assert (scores >= 0).all()
    ok(9, "windowed forward matches the dense-attention oracle within 1e-9 "
          "for w >= 2N+1; top-k baseline scores sum to 1±1e-9 on 100 random "
          "documents")


# ---------------------------------------------------------------------------
# 10. Determinism of cmd_train


def test_criterion_10_cli_train_determinism(tmp_path):
    from rationale.cli import main

    spec = {
        "n_docs": 24, "mean_doc_len": 30, "max_doc_len": 60,
        "min_sentence_len": 4, "max_sentence_len": 10, "vocab_size": 25,
        "evidence_fraction": 0.12, "positive_lexicon_size": 6,
        "label_threshold": 2, "span_len_min": 1, "span_len_max": 2, "seed": 77,
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec))
    assert main(["synth", "--spec", str(spec_path), "--out", str(tmp_path / "data")]) == 0
    config = {
        "epochs": 2, "learning_rate": 1e-3, "batch_size": 4, "optimizer": "adam",
        "seed": 11, "repeats": 2, "variant": "compositional-ranked",
        "h": 8, "n_layers": 1, "n_heads": 2, "max_sentence_len": 12, "window": 5,
        "vocab_size": 50,
        "train_path": str(tmp_path / "data" / "train.jsonl"),
        "dev_path": str(tmp_path / "data" / "dev.jsonl"),
    }
    cfg_path = tmp_path / "config.json"
    cfg_path.write_text(json.dumps(config))
    for i in (1, 2):
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / f"run{i}")]) == 0
    for repeat in (1, 2):
        a = (tmp_path / "run1" / f"checkpoint-repeat{repeat}.bin").read_bytes()
        b = (tmp_path / "run2" / f"checkpoint-repeat{repeat}.bin").read_bytes()
        assert a == b
    reports = []
    for i in (1, 2):
        agg = json.loads((tmp_path / f"run{i}" / "aggregate.json").read_text())
        agg["mean"].pop("seconds_per_epoch")
        for rep in agg["repeats"]:
            rep.pop("seconds_per_epoch")
        reports.append(agg)
    assert reports[0] == reports[1]
    ok(10, "two cmd_train runs with identical config and seed produce "
           "bit-identical checkpoints and identical reports (timing fields "
           "excluded)")
