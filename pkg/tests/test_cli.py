"""Exit codes, file round-trips, and machine-readable output."""

import json

import numpy as np
import pytest

from condtokens.cli import main
from condtokens.matrix import read_matrix_csv, write_matrix_csv
from condtokens.attention import ModelConfig, save_config


@pytest.fixture
def id4(tmp_path):
    path = tmp_path / "id4.csv"
    write_matrix_csv(np.eye(4), path)
    return str(path)


@pytest.fixture
def ill(tmp_path):
    path = tmp_path / "ill.csv"
    write_matrix_csv(np.diag([1.0, 0.01]), path)
    return str(path)


@pytest.fixture
def head_files(tmp_path):
    rng = np.random.default_rng(61)
    paths = {}
    write_matrix_csv(rng.standard_normal((5, 3)), tmp_path / "x.csv")
    paths["x"] = str(tmp_path / "x.csv")
    for w in ("wq", "wk", "wv"):
        write_matrix_csv(rng.standard_normal((3, 3)), tmp_path / f"{w}.csv")
        paths[w] = str(tmp_path / f"{w}.csv")
    return paths


def test_kappa_identity(id4, capsys):
    assert main(["kappa", "--in", id4]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["kappa"] == 1.0 and payload["rank_deficient"] is False


def test_kappa_read_only_idempotent(id4, capsys):
    main(["kappa", "--in", id4])
    first = capsys.readouterr().out
    main(["kappa", "--in", id4])
    assert capsys.readouterr().out == first


def test_spectrum_formats(id4, capsys):
    assert main(["spectrum", "--in", id4]) == 0
    assert json.loads(capsys.readouterr().out)["sigma"] == [1.0, 1.0, 1.0, 1.0]
    assert main(["spectrum", "--in", id4, "--format", "csv"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "index,sigma" and len(lines) == 5


def test_sweep_lambda_grid(tmp_path, ill, capsys):
    assert main(["sweep-lambda", "--in", ill, "--grid", "1:20"]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert lines[0] == "lambda,kappa"
    assert len(lines) == 21
    lambdas = [float(line.split(",")[0]) for line in lines[1:]]
    assert lambdas == sorted(lambdas) == [float(v) for v in range(1, 21)]


def test_overhead_exact_bytes(capsys):
    assert main(["overhead", "--batch", "1024", "--seq", "197", "--dim", "768"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["bytes"] == 619708416
    assert payload["flops"] == 154927104


def test_correct_then_kappa_round_trip(tmp_path, capsys):
    rng = np.random.default_rng(62)
    x = rng.standard_normal((6, 4))
    src = tmp_path / "x.csv"
    write_matrix_csv(x, src)
    out = tmp_path / "corrected.csv"
    c_out = tmp_path / "c.csv"
    assert main(["correct", "--in", str(src), "--kind", "exact",
                 "--out", str(out), "--correction-out", str(c_out)]) == 0
    capsys.readouterr()
    assert main(["kappa", "--in", str(out)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["kappa"] <= 2.0 + 1e-9
    np.testing.assert_allclose(read_matrix_csv(out), x + read_matrix_csv(c_out))


def test_mu_reports_bound_factors(head_files, capsys):
    assert main(["mu", "--in", head_files["x"], "--wq", head_files["wq"],
                 "--wk", head_files["wk"], "--wv", head_files["wv"]]) == 0
    payload = json.loads(capsys.readouterr().out)
    product = (payload["kappa_wq"] * payload["kappa_wk"] * payload["kappa_wv"]
               * payload["kappa_x"] ** 3)
    assert payload["linear_bound"] == pytest.approx(product)


def test_verify_includes_monotonicity_when_kind_given(head_files, capsys):
    assert main(["verify", "--in", head_files["x"], "--wq", head_files["wq"],
                 "--wk", head_files["wk"], "--wv", head_files["wv"],
                 "--kind", "exact"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["bounds_linear_ok"] is True
    assert payload["monotonicity_linear_nonincreasing"] is True


def test_unknown_flag_is_usage_error(id4, capsys):
    assert main(["kappa", "--in", id4, "--frobnicate"]) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:") and err.count("\n") == 1


def test_missing_file_is_usage_error(capsys):
    assert main(["kappa", "--in", "nope.csv"]) == 1
    assert "nope.csv" in capsys.readouterr().err


def test_malformed_csv_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\nx,4\n")
    assert main(["kappa", "--in", str(bad)]) == 1
    assert "CSV" in capsys.readouterr().err


def test_rank_deficiency_where_forbidden_is_numerical_failure(tmp_path, capsys):
    rank1 = tmp_path / "rank1.csv"
    write_matrix_csv(np.array([[1.0, 2.0], [2.0, 4.0]]), rank1)
    assert main(["correct", "--in", str(rank1), "--kind", "exact",
                 "--out", str(tmp_path / "out.csv")]) == 2
    assert "rank" in capsys.readouterr().err


def test_randomized_subcommands_require_seed(capsys):
    assert main(["gradcheck"]) == 1
    assert "--seed" in capsys.readouterr().err


def test_gradcheck_passes_tolerance(capsys):
    assert main(["gradcheck", "--seed", "11", "--attention", "softmax"]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["max_relative_error"] < 1e-5


def test_train_writes_epoch_csv(tmp_path, capsys):
    cfg = ModelConfig(seq_len=6, token_dim=3, embed_dim=8, heads=2, layers=1)
    cfg_path = tmp_path / "model.kv"
    save_config(cfg, cfg_path)
    log = tmp_path / "log.csv"
    assert main(["train", "--config", str(cfg_path), "--seed", "4", "--epochs", "3",
                 "--samples", "8", "--batch-size", "4", "--out", str(log)]) == 0
    lines = log.read_text().strip().splitlines()
    assert lines[0] == "epoch,loss,kappa_tokens,kappa_attn_l1,kappa_attn_all"
    assert len(lines) == 4


def test_compare_pipeline_and_determinism(tmp_path, capsys):
    cfg = ModelConfig(seq_len=6, token_dim=3, embed_dim=8, heads=2, layers=1)
    cfg_path = tmp_path / "model.kv"
    save_config(cfg, cfg_path)

    def run(tag):
        args = ["compare", "--config", str(cfg_path), "--seed", "9", "--epochs", "3",
                "--samples", "8", "--batch-size", "4", "--lambda", "10",
                "--base-log", str(tmp_path / f"base{tag}.csv"),
                "--cond-log", str(tmp_path / f"cond{tag}.csv"),
                "--out", str(tmp_path / f"summary{tag}.json")]
        assert main(args) == 0

    run("1")
    run("2")
    for stem in ("base", "cond", "summary"):
        ext = "json" if stem == "summary" else "csv"
        a = (tmp_path / f"{stem}1.{ext}").read_bytes()
        b = (tmp_path / f"{stem}2.{ext}").read_bytes()
        assert a == b

    summary = json.loads((tmp_path / "summary1.json").read_text())
    assert summary["ratio_kappa_tokens"] is not None


def test_compare_rejects_config_with_correction(tmp_path, capsys):
    from condtokens.conditioning import CorrectionSpec

    cfg = ModelConfig(seq_len=6, token_dim=3, embed_dim=8, heads=2, layers=1,
                      correction=CorrectionSpec(kind="identity", lam=10.0))
    cfg_path = tmp_path / "model.kv"
    save_config(cfg, cfg_path)
    assert main(["compare", "--config", str(cfg_path), "--seed", "1"]) == 1
    assert "correction" in capsys.readouterr().err
