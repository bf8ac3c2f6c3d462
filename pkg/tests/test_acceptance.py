"""Acceptance suite: one test per criterion, one printed PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -v -s` to see the lines as they
go by.  Every tolerance and runtime budget is pinned here; the random
ensembles are drawn from the package's own seeded generator so the suite
is bit-reproducible.
"""

import json
import time
from dataclasses import replace

import numpy as np
import pytest

from condtokens.attention import LINEAR, SOFTMAX, ModelConfig, init_model, save_config
from condtokens.cli import main as cli_main
from condtokens.conditioning import (
    CorrectionSpec,
    apply_correction,
    check_attention_bounds,
    check_correction_monotonicity,
    exact_correction,
    identity_correction,
)
from condtokens.matrix import condition_number, svd, write_matrix_csv
from condtokens.rng import Xoshiro256StarStar
from condtokens.training import (
    SyntheticTask,
    compare_runs,
    default_comparison_configs,
    gradient_check,
    make_dataset,
    probe_sample,
)

MASTER_SEED = 20240801
SHAPE_POOL = [(16, 8), (12, 12), (24, 6), (32, 16), (8, 20), (10, 10), (32, 4)]


def _report(tag: str, ok: bool, detail: str) -> None:
    print(f"[{tag}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, f"{tag} failed: {detail}"


def _full_rank_matrix(stream, shape):
    while True:
        x = stream.uniform_matrix(shape[0], shape[1], -1.0, 1.0)
        if not condition_number(x).rank_deficient:
            return x


def _weight(stream, d, d_h):
    while True:
        w = stream.uniform_matrix(d, d_h, -1.0, 1.0)
        if not condition_number(w).rank_deficient:
            return w


def _tuple_stream(label):
    stream = Xoshiro256StarStar.for_stream(MASTER_SEED, label)
    i = 0
    while True:
        shape = SHAPE_POOL[i % len(SHAPE_POOL)]
        d = shape[1]
        x = _full_rank_matrix(stream, shape)
        yield (x, _weight(stream, d, d), _weight(stream, d, d), _weight(stream, d, d))
        i += 1


def _tuples(count, label):
    gen = _tuple_stream(label)
    return [next(gen) for _ in range(count)]


def test_a1_exact_correction_identity_and_cap():
    # 200 random full-rank matrices: kappa(X + C) equals 2 s1/(s1+sk)
    # within 1e-9 relative and never exceeds 2 + 1e-9.  Budget: 5 s.
    start = time.monotonic()
    stream = Xoshiro256StarStar.for_stream(MASTER_SEED, "a1")
    worst_rel, worst_kappa = 0.0, 0.0
    for i in range(200):
        x = _full_rank_matrix(stream, SHAPE_POOL[i % len(SHAPE_POOL)])
        sigma = svd(x).sigma
        kappa = condition_number(apply_correction(x, exact_correction(x))).kappa
        predicted = 2.0 * sigma[0] / (sigma[0] + sigma[-1])
        worst_rel = max(worst_rel, abs(kappa - predicted) / kappa)
        worst_kappa = max(worst_kappa, kappa)
    elapsed = time.monotonic() - start
    ok = worst_rel <= 1e-9 and worst_kappa <= 2.0 + 1e-9 and elapsed < 5.0
    _report(
        "A1 exact-correction identity",
        ok,
        f"max rel dev {worst_rel:.2e}, max kappa {worst_kappa:.6f}, {elapsed:.2f}s",
    )


def test_a2_attention_bounds_hold():
    # 200 full-rank tuples (skips redrawn): measured attention condition
    # numbers stay below their bound products with 1e-9 slack.  Budget:
    # 10 s of verification time; ensemble generation is untimed setup.
    tuples = _tuples(210, "a2")
    start = time.monotonic()
    checked = 0
    for x, wq, wk, wv in tuples:
        record = check_attention_bounds(x, wq, wk, wv)
        if record.skipped:
            continue
        assert record.linear_ok, f"linear bound violated: {record.as_dict()}"
        assert record.softmax_ok, f"softmax bound violated: {record.as_dict()}"
        checked += 1
        if checked == 200:
            break
    elapsed = time.monotonic() - start
    ok = checked == 200 and elapsed < 10.0
    _report("A2 attention bounds", ok, f"{checked}/200 tuples checked, {elapsed:.2f}s")


def test_a3_correction_monotonicity():
    # Exact corrections never increase the linear bound; the softmax bound
    # obeys the implication (assumption flag -> non-increase) on every tuple.
    tuples = _tuples(210, "a3")
    start = time.monotonic()
    linear_ok = implication_ok = checked = 0
    for x, wq, wk, wv in tuples:
        record = check_correction_monotonicity(x, wq, wk, wv, CorrectionSpec(kind="exact"))
        if record.skipped:
            continue
        checked += 1
        linear_ok += record.linear_nonincreasing
        implication_ok += (not record.softmax_assumption_holds) or record.softmax_nonincreasing
        if checked == 200:
            break
    elapsed = time.monotonic() - start
    ok = checked == 200 and linear_ok == checked and implication_ok == checked
    _report(
        "A3 bound monotonicity under exact correction",
        ok,
        f"linear {linear_ok}/{checked}, softmax implication {implication_ok}/{checked}, {elapsed:.2f}s",
    )


def test_a4_diagonal_shift_regime():
    # 100 matrices rescaled into the tiny-sigma_k regime (sigma_k < 0.1,
    # sigma_1 < 10): kappa(X + 10 I_k) <= 2, and the Weyl cap
    # (sigma_1+lambda)/(lambda-sigma_1) holds whenever lambda > sigma_1.
    stream = Xoshiro256StarStar.for_stream(MASTER_SEED, "a4")
    lam = 10.0
    worst = 0.0
    bound_checked = 0
    for i in range(100):
        shape = SHAPE_POOL[i % len(SHAPE_POOL)]
        x = _full_rank_matrix(stream, shape)
        sigma = svd(x).sigma
        x = (0.05 / sigma[-1]) * x
        sigma1 = sigma[0] * 0.05 / sigma[-1]
        if sigma1 > 3.2:
            x *= 3.2 / sigma1
        sigma = svd(x).sigma
        assert sigma[-1] < 0.1 and sigma[0] < 10.0
        kappa = condition_number(
            apply_correction(x, identity_correction(shape[0], shape[1], lam))
        ).kappa
        worst = max(worst, kappa)
        if lam > sigma[0]:
            cap = (sigma[0] + lam) / (lam - sigma[0])
            assert kappa <= cap * (1.0 + 1e-9), (kappa, cap)
            bound_checked += 1
    ok = worst <= 2.0 and bound_checked == 100
    _report(
        "A4 diagonal-shift regime",
        ok,
        f"max kappa(X+10I) {worst:.4f} <= 2, Weyl cap held {bound_checked}/100",
    )


def test_a5_gradient_check():
    # Analytic vs central finite-difference gradients on the 3x4 toy model,
    # both attention kinds, layer norm on and off.  Budget: 30 s.
    start = time.monotonic()
    worst = 0.0
    for kind in (LINEAR, SOFTMAX):
        for layer_norm in (False, True):
            config = ModelConfig(seq_len=3, token_dim=2, embed_dim=4, heads=2, layers=1,
                                 attention_kind=kind, layer_norm=layer_norm)
            model = init_model(config, seed=MASTER_SEED)
            tokens, targets = make_dataset(SyntheticTask(seed=MASTER_SEED, num_samples=4), config)
            report = gradient_check(model, (tokens, targets))
            worst = max(worst, report.max_relative_error)
    elapsed = time.monotonic() - start
    ok = worst < 1e-5 and elapsed < 30.0
    _report("A5 gradient check", ok, f"max rel error {worst:.2e} < 1e-5, {elapsed:.2f}s")


def test_a6_toy_comparison_reproduction():
    # Five seeds of the stock comparison (identity correction, lambda=10):
    # epoch-averaged token kappa strictly lower in every seed, first-layer
    # attention kappa lower in at least 4 of 5.  Budget: 5 min.
    start = time.monotonic()
    token_wins = layer1_wins = 0
    for seed in range(5):
        base, cond = default_comparison_configs(seed=seed, lam=10.0, epochs=100)
        x0 = init_model(base.model, base.seed).embed_tokens(probe_sample(base.task, base.model))
        sigma = svd(x0).sigma
        assert sigma[-1] < 0.1, f"seed {seed}: sigma_k(X0) = {sigma[-1]:.3f} not < 0.1"
        summary, _, _ = compare_runs(base, cond)
        token_wins += summary.cond_kappa_tokens < summary.base_kappa_tokens
        layer1_wins += summary.cond_kappa_attn_layer1 < summary.base_kappa_attn_layer1
    elapsed = time.monotonic() - start
    ok = token_wins == 5 and layer1_wins >= 4 and elapsed < 300.0
    _report(
        "A6 toy training comparison",
        ok,
        f"token kappa lower {token_wins}/5, layer-1 kappa lower {layer1_wins}/5, {elapsed:.0f}s",
    )


def test_a7_lambda_sweep_shape(tmp_path):
    # kappa(X + lambda I_k) is non-increasing over the integer grid 1..20 on
    # a fixed tiny-sigma_k matrix.  The accuracy optimum near lambda = 10 is
    # a full-scale result and is deliberately not asserted here.
    stream = Xoshiro256StarStar.for_stream(MASTER_SEED, "a7")
    x = stream.uniform_matrix(16, 8, -1.0, 1.0)
    x *= 0.05 / svd(x).sigma[-1]
    src = tmp_path / "x.csv"
    out = tmp_path / "sweep.csv"
    write_matrix_csv(x, src)
    rc = cli_main(["sweep-lambda", "--in", str(src), "--grid", "1:20", "--out", str(out)])
    assert rc == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "lambda,kappa" and len(lines) == 21
    kappas = [float(line.split(",")[1]) for line in lines[1:]]
    nonincreasing = all(b <= a * (1.0 + 1e-12) for a, b in zip(kappas, kappas[1:]))
    _report(
        "A7 lambda sweep shape",
        nonincreasing,
        f"kappa {kappas[0]:.3f} -> {kappas[-1]:.3f} non-increasing over 1..20",
    )


def test_a8_overhead_formula(capsys):
    # B=1024, N=197, d=768: exactly 619,708,416 bytes and 154,927,104 FLOPs.
    rc = cli_main(["overhead", "--batch", "1024", "--seq", "197", "--dim", "768"])
    captured = capsys.readouterr()
    payload = json.loads(captured.out)
    ok = rc == 0 and payload["bytes"] == 619_708_416 and payload["flops"] == 154_927_104
    with capsys.disabled():
        _report(
            "A8 overhead formulas",
            ok,
            f"bytes {payload['bytes']}, flops {payload['flops']}",
        )


def test_a9_pipeline_determinism(tmp_path):
    # The full comparison pipeline, invoked twice with the same seed,
    # produces byte-identical CSV and JSON outputs.
    config = ModelConfig(seq_len=8, token_dim=4, embed_dim=8, heads=2, layers=2)
    cfg_path = tmp_path / "model.kv"
    save_config(config, cfg_path)

    def run(tag):
        rc = cli_main([
            "compare", "--config", str(cfg_path), "--seed", "7", "--epochs", "5",
            "--samples", "16", "--batch-size", "4", "--lambda", "10",
            "--base-log", str(tmp_path / f"base{tag}.csv"),
            "--cond-log", str(tmp_path / f"cond{tag}.csv"),
            "--out", str(tmp_path / f"summary{tag}.json"),
        ])
        assert rc == 0

    run("1")
    run("2")
    identical = all(
        (tmp_path / f"{stem}1.{ext}").read_bytes() == (tmp_path / f"{stem}2.{ext}").read_bytes()
        for stem, ext in (("base", "csv"), ("cond", "csv"), ("summary", "json"))
    )
    _report("A9 pipeline determinism", identical, "two seeded runs, byte-identical outputs")
