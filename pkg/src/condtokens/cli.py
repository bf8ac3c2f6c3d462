"""Command-line front end.

Every subcommand works on headerless CSV matrices and emits JSON or CSV
reports.  Exit codes: 0 success, 1 usage problems (bad flags, missing or
malformed files), 2 numerical failures (rank deficiency where full rank
is required, SVD non-convergence, divergence).  Subcommands that draw
random numbers all require an explicit --seed; nothing is ever seeded
from the clock.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

from . import conditioning, matrix, training
from .attention import (
    LINEAR,
    SOFTMAX,
    ModelConfig,
    init_model,
    load_config,
)
from .conditioning import (
    EXACT_SVD,
    IDENTITY_SCALED,
    CorrectionSpec,
    apply_correction,
    check_attention_bounds,
    check_correction_monotonicity,
    exact_correction,
    identity_correction,
    lambda_sweep,
    linear_attention_bound,
    overhead_report,
)
from .matrix import (
    ConvergenceError,
    NonFiniteError,
    RankDeficientError,
    read_matrix_csv,
    write_matrix_csv,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(text: str, out_path) -> None:
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json_text(payload: dict) -> str:
    return json.dumps(payload, indent=2) + "\n"


def _kv_csv_text(payload: dict) -> str:
    lines = ["key,value"]
    for key, value in payload.items():
        lines.append(f"{key},{value}")
    return "\n".join(lines) + "\n"


def _report_text(payload: dict, fmt: str) -> str:
    return _json_text(payload) if fmt == "json" else _kv_csv_text(payload)


def _load(path):
    try:
        return read_matrix_csv(path)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}")
    except (ValueError, NonFiniteError) as exc:
        raise UsageError(str(exc))


def _parse_grid(text: str):
    try:
        lo, _, hi = text.partition(":")
        lo_i, hi_i = int(lo), int(hi)
    except ValueError:
        raise UsageError(f"--grid wants lo:hi integers, got {text!r}")
    if lo_i > hi_i:
        raise UsageError(f"--grid range is empty: {text}")
    return [float(v) for v in range(lo_i, hi_i + 1)]


def _cmd_spectrum(args) -> int:
    res = matrix.svd(_load(args.infile))
    if args.format == "json":
        _emit(_json_text({"sigma": [float(s) for s in res.sigma]}), args.out)
    else:
        lines = ["index,sigma"]
        lines += [f"{i},{format(float(s), '.17g')}" for i, s in enumerate(res.sigma)]
        _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_kappa(args) -> int:
    report = matrix.condition_number(_load(args.infile))
    _emit(_report_text(report.as_dict(), args.format), args.out)
    return 0


def _cmd_correct(args) -> int:
    x = _load(args.infile)
    if args.kind == EXACT_SVD:
        correction = exact_correction(x)
    else:
        correction = identity_correction(x.shape[0], x.shape[1], args.lam)
    write_matrix_csv(apply_correction(x, correction), args.out)
    if args.correction_out:
        write_matrix_csv(correction.c, args.correction_out)
    return 0


def _cmd_mu(args) -> int:
    bounds = linear_attention_bound(
        _load(args.infile), _load(args.wq), _load(args.wk), _load(args.wv)
    )
    _emit(_report_text(bounds.as_dict(), args.format), args.out)
    return 0


def _cmd_verify(args) -> int:
    x, wq, wk, wv = (_load(p) for p in (args.infile, args.wq, args.wk, args.wv))
    bounds = check_attention_bounds(x, wq, wk, wv)
    payload = {f"bounds_{k}": v for k, v in bounds.as_dict().items()}
    if args.kind:
        spec = CorrectionSpec(kind=args.kind, lam=args.lam)
        mono = check_correction_monotonicity(x, wq, wk, wv, spec)
        payload.update({f"monotonicity_{k}": v for k, v in mono.as_dict().items()})
    _emit(_report_text(payload, args.format), args.out)
    return 0


def _cmd_sweep_lambda(args) -> int:
    grid = _parse_grid(args.grid) if args.grid else None
    try:
        rows = lambda_sweep(_load(args.infile), grid)
    except ValueError as exc:
        raise UsageError(str(exc))
    if args.format == "json":
        _emit(
            _json_text({"lambda": [r[0] for r in rows], "kappa": [r[1] for r in rows]}),
            args.out,
        )
    else:
        lines = ["lambda,kappa"]
        lines += [f"{format(lam, '.17g')},{format(kappa, '.17g')}" for lam, kappa in rows]
        _emit("\n".join(lines) + "\n", args.out)
    return 0


def _cmd_overhead(args) -> int:
    try:
        report = overhead_report(args.batch, args.seq, args.dim)
    except ValueError as exc:
        raise UsageError(str(exc))
    _emit(_report_text(report.as_dict(), args.format), args.out)
    return 0


def _cmd_gradcheck(args) -> int:
    kind = SOFTMAX if args.attention == "softmax" else LINEAR
    config = ModelConfig(
        seq_len=args.seq,
        token_dim=args.token_dim,
        embed_dim=args.dim,
        heads=args.heads,
        layers=args.layers,
        attention_kind=kind,
        layer_norm=args.layer_norm,
    )
    model = init_model(config, seed=args.seed)
    task = training.SyntheticTask(seed=args.seed, num_samples=args.samples)
    tokens, targets = training.make_dataset(task, config)
    report = training.gradient_check(model, (tokens, targets))
    _emit(_report_text(report.as_dict(), args.format), args.out)
    return 0


def _train_config_from_args(args, model_config: ModelConfig) -> training.TrainConfig:
    task = training.SyntheticTask(
        kind=args.task,
        seed=args.seed,
        num_samples=args.samples,
        token_scale=args.token_scale,
    )
    return training.TrainConfig(
        model=model_config,
        task=task,
        optimizer=args.optimizer,
        learning_rate=args.lr,
        weight_decay=args.weight_decay,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )


def _load_model_config(path) -> ModelConfig:
    try:
        return load_config(path)
    except FileNotFoundError:
        raise UsageError(f"no such file: {path}")
    except ValueError as exc:
        raise UsageError(str(exc))


def _cmd_train(args) -> int:
    model_config = _load_model_config(args.config)
    result = training.train(_train_config_from_args(args, model_config))
    training.write_epoch_logs_csv(result.logs, args.out)
    if result.diverged:
        sys.stderr.write("training diverged: non-finite loss; partial logs written\n")
        return 2
    return 0


def _cmd_compare(args) -> int:
    model_config = _load_model_config(args.config)
    if model_config.correction is not None:
        raise UsageError(
            "compare builds its own corrected run; leave correction out of the config"
        )
    base = _train_config_from_args(args, model_config)
    if args.kind == EXACT_SVD:
        spec = CorrectionSpec(kind=EXACT_SVD)
    else:
        spec = CorrectionSpec(kind=IDENTITY_SCALED, lam=args.lam)
    cond = replace(base, model=replace(model_config, correction=spec))
    summary, base_result, cond_result = training.compare_runs(base, cond)
    if args.base_log:
        training.write_epoch_logs_csv(base_result.logs, args.base_log)
    if args.cond_log:
        training.write_epoch_logs_csv(cond_result.logs, args.cond_log)
    _emit(_json_text(summary.as_dict()), args.out)
    if base_result.diverged or cond_result.diverged:
        sys.stderr.write("a run diverged: non-finite loss; partial logs written\n")
        return 2
    return 0


def _add_io_flags(parser, needs_in=True):
    if needs_in:
        parser.add_argument("--in", dest="infile", required=True, help="input matrix CSV")
    parser.add_argument("--out", default=None, help="output path (default: stdout)")
    parser.add_argument("--format", choices=("json", "csv"), default="json")


def build_parser() -> _Parser:
    parser = _Parser(prog="condtokens", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("spectrum", help="singular values of a matrix")
    _add_io_flags(p)
    p.set_defaults(fn=_cmd_spectrum)

    p = sub.add_parser("kappa", help="condition number report")
    _add_io_flags(p)
    p.set_defaults(fn=_cmd_kappa)

    p = sub.add_parser("correct", help="write the corrected matrix X + C")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--kind", choices=(EXACT_SVD, IDENTITY_SCALED), default=EXACT_SVD)
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.add_argument("--out", required=True, help="path for X + C")
    p.add_argument("--correction-out", default=None, help="optional path for C itself")
    p.set_defaults(fn=_cmd_correct)

    p = sub.add_parser("mu", help="condition-number bounds for one attention head")
    _add_io_flags(p)
    for w in ("wq", "wk", "wv"):
        p.add_argument(f"--{w}", required=True, help=f"{w} matrix CSV")
    p.set_defaults(fn=_cmd_mu)

    p = sub.add_parser("verify", help="check the bounds and correction monotonicity")
    _add_io_flags(p)
    for w in ("wq", "wk", "wv"):
        p.add_argument(f"--{w}", required=True)
    p.add_argument("--kind", choices=(EXACT_SVD, IDENTITY_SCALED), default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.set_defaults(fn=_cmd_verify)

    p = sub.add_parser("sweep-lambda", help="kappa(X + lambda I_k) over a lambda grid")
    _add_io_flags(p)
    p.add_argument("--grid", default=None, help="lo:hi integer range (default 1:20)")
    p.set_defaults(fn=_cmd_sweep_lambda, format="csv")

    p = sub.add_parser("overhead", help="correction storage/FLOP overhead")
    p.add_argument("--batch", type=int, required=True)
    p.add_argument("--seq", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(fn=_cmd_overhead)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--attention", choices=("linear", "softmax"), default="softmax")
    p.add_argument("--layer-norm", action="store_true")
    p.add_argument("--seq", type=int, default=3)
    p.add_argument("--token-dim", type=int, default=2)
    p.add_argument("--dim", type=int, default=4)
    p.add_argument("--heads", type=int, default=2)
    p.add_argument("--layers", type=int, default=1)
    p.add_argument("--samples", type=int, default=4)
    p.add_argument("--out", default=None)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(fn=_cmd_gradcheck)

    def add_train_flags(q):
        q.add_argument("--config", required=True, help="model config key=value file")
        q.add_argument("--seed", type=int, required=True)
        q.add_argument("--epochs", type=int, default=100)
        q.add_argument("--task", choices=(training.TEACHER_REGRESSION, training.SEQUENCE_COPY),
                       default=training.TEACHER_REGRESSION)
        q.add_argument("--samples", type=int, default=64)
        q.add_argument("--token-scale", type=float, default=1.0)
        q.add_argument("--optimizer", choices=(training.SGD, training.ADAMW),
                       default=training.ADAMW)
        q.add_argument("--lr", type=float, default=1e-3)
        q.add_argument("--weight-decay", type=float, default=0.01)
        q.add_argument("--batch-size", type=int, default=8)

    p = sub.add_parser("train", help="train on a synthetic task, log per-epoch kappas")
    add_train_flags(p)
    p.add_argument("--out", required=True, help="epoch log CSV path")
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("compare", help="baseline vs corrected training comparison")
    add_train_flags(p)
    p.add_argument("--kind", choices=(EXACT_SVD, IDENTITY_SCALED), default=IDENTITY_SCALED)
    p.add_argument("--lambda", dest="lam", type=float, default=10.0)
    p.add_argument("--base-log", default=None, help="baseline epoch log CSV path")
    p.add_argument("--cond-log", default=None, help="corrected epoch log CSV path")
    p.add_argument("--out", default=None, help="summary JSON path (default: stdout)")
    p.set_defaults(fn=_cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except (RankDeficientError, ConvergenceError, NonFiniteError) as exc:
        sys.stderr.write(f"numerical failure: {exc}\n")
        return 2
    except FileNotFoundError as exc:
        sys.stderr.write(f"error: no such file: {exc.filename}\n")
        return 1
    except ValueError as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 1
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
