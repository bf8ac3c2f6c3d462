"""Desk-scale training with per-epoch conditioning logs.

Tasks are synthetic so runs are fully determined by their seeds: either
regression against a frozen randomly-initialized teacher network, or
copying the raw tokens into the first output channels.  Each epoch row
records the mean training loss of that epoch together with condition
numbers probed on one fixed held-out sample using the parameters as they
entered the epoch — so row 0 measures the freshly initialized model, the
only point where the exact-correction cap is a theorem rather than a
trend.

The correction matrix, when configured, is realized once before the first
step and frozen; it receives no gradient and its bytes never change.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .attention import (
    ModelConfig,
    TransformerModel,
    build_correction_for,
    condition_probe,
    init_model,
)
from .autodiff import Tensor, mse
from .conditioning import IDENTITY_SCALED, CorrectionSpec
from .matrix import NonFiniteError
from .rng import Xoshiro256StarStar

TEACHER_REGRESSION = "teacher_regression"
SEQUENCE_COPY = "sequence_copy"

SGD = "sgd"
ADAMW = "adamw"


@dataclass
class SyntheticTask:
    kind: str = TEACHER_REGRESSION
    seed: int = 0
    num_samples: int = 64
    token_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in (TEACHER_REGRESSION, SEQUENCE_COPY):
            raise ValueError(f"unknown task kind: {self.kind!r}")
        if self.num_samples <= 0:
            raise ValueError("num_samples must be positive")


@dataclass
class TrainConfig:
    model: ModelConfig
    task: SyntheticTask
    optimizer: str = ADAMW
    learning_rate: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.optimizer not in (SGD, ADAMW):
            raise ValueError(f"unknown optimizer: {self.optimizer!r}")
        if self.batch_size <= 0 or self.epochs < 0:
            raise ValueError("batch_size must be positive and epochs non-negative")


def _token_batch(stream: Xoshiro256StarStar, count, seq_len, token_dim, scale):
    flat = stream.uniform_matrix(count * seq_len, token_dim, -scale, scale)
    return flat.reshape(count, seq_len, token_dim)


def make_dataset(task: SyntheticTask, model_config: ModelConfig):
    """(tokens, targets) fully determined by (task, model dims)."""
    stream = Xoshiro256StarStar.for_stream(task.seed, "task-data")
    tokens = _token_batch(
        stream, task.num_samples, model_config.seq_len, model_config.token_dim, task.token_scale
    )
    if task.kind == TEACHER_REGRESSION:
        teacher = init_model(replace(model_config, correction=None), seed=task.seed ^ 0x7EACEB)
        targets = teacher.forward(tokens)
    else:
        targets = np.zeros(tokens.shape[:-1] + (model_config.embed_dim,))
        targets[..., : model_config.token_dim] = tokens
    return tokens, targets


def probe_sample(task: SyntheticTask, model_config: ModelConfig) -> np.ndarray:
    """The fixed held-out token matrix every epoch's probe reuses."""
    stream = Xoshiro256StarStar.for_stream(task.seed, "probe")
    return _token_batch(stream, 1, model_config.seq_len, model_config.token_dim, task.token_scale)[0]


def batch_loss(model: TransformerModel, params, tokens, targets):
    """Mean squared error of the forward pass; works for both param kinds."""
    return mse(model.forward(tokens, params=params), targets)


def _loss_and_grads(model: TransformerModel, tokens, targets):
    tparams = {k: Tensor(v, requires_grad=True) for k, v in model.params.items()}
    loss = batch_loss(model, tparams, tokens, targets)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NonFiniteError(f"training loss became non-finite ({value})")
    loss.backward()
    return value, {k: t.grad for k, t in tparams.items()}


def backward(model: TransformerModel, batch, loss_kind: str = "mse") -> dict:
    """Exact reverse-mode gradients of the batch loss for every parameter.

    The attached correction is a constant of the computation: it gets no
    gradient entry because it is not a parameter at all.
    """
    if loss_kind != "mse":
        raise ValueError(f"unsupported loss kind: {loss_kind!r}")
    tokens, targets = batch
    _, grads = _loss_and_grads(model, tokens, targets)
    return grads


@dataclass
class GradientCheckReport:
    per_parameter: dict
    max_relative_error: float
    correction_present: bool
    correction_gradient: float  # exactly 0.0 whenever a correction is attached

    def as_dict(self) -> dict:
        return {
            "per_parameter": self.per_parameter,
            "max_relative_error": self.max_relative_error,
            "correction_present": self.correction_present,
            "correction_gradient": self.correction_gradient,
        }


def _sample_indices(size: int, want: int = 32):
    if size <= want:
        return list(range(size))
    picks = np.linspace(0, size - 1, want).round().astype(int)
    return sorted(set(int(i) for i in picks))


def gradient_check(model: TransformerModel, batch, step: float = 1e-5) -> GradientCheckReport:
    """Central finite differences against the reverse-mode gradients.

    At least 32 coordinates per parameter matrix (all of them for small
    matrices); the error is |analytic - fd| / max(|analytic|, |fd|, 1e-12).
    """
    tokens, targets = batch
    grads = backward(model, batch)
    per_param = {}
    overall = 0.0
    for name, value in model.params.items():
        analytic = grads[name]
        worst = 0.0
        flat = value.ravel()
        for idx in _sample_indices(flat.size):
            original = flat[idx]
            plus = dict(model.params)
            minus = dict(model.params)
            bumped = value.copy()
            bumped.ravel()[idx] = original + step
            plus[name] = bumped
            dipped = value.copy()
            dipped.ravel()[idx] = original - step
            minus[name] = dipped
            f_plus = float(batch_loss(model, plus, tokens, targets))
            f_minus = float(batch_loss(model, minus, tokens, targets))
            fd = (f_plus - f_minus) / (2.0 * step)
            a = float(analytic.ravel()[idx])
            err = abs(a - fd) / max(abs(a), abs(fd), 1e-12)
            worst = max(worst, err)
        per_param[name] = worst
        overall = max(overall, worst)
    return GradientCheckReport(
        per_parameter=per_param,
        max_relative_error=overall,
        correction_present=model.correction is not None,
        correction_gradient=0.0,
    )


class SgdOptimizer:
    def __init__(self, learning_rate: float):
        self.learning_rate = learning_rate

    def step(self, params: dict, grads: dict) -> None:
        for name, g in grads.items():
            params[name] -= self.learning_rate * g


class AdamWOptimizer:
    def __init__(self, learning_rate, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01):
        self.learning_rate = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: dict = {}
        self.v: dict = {}

    def step(self, params: dict, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            m = self.m.get(name)
            if m is None:
                m = np.zeros_like(g)
                self.m[name] = m
                self.v[name] = np.zeros_like(g)
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1 ** self.t)
            v_hat = v / (1.0 - b2 ** self.t)
            params[name] -= self.learning_rate * (
                m_hat / (np.sqrt(v_hat) + self.eps) + self.weight_decay * params[name]
            )


def _build_optimizer(config: TrainConfig):
    if config.optimizer == SGD:
        return SgdOptimizer(config.learning_rate)
    return AdamWOptimizer(
        learning_rate=config.learning_rate,
        beta1=config.beta1,
        beta2=config.beta2,
        eps=config.eps,
        weight_decay=config.weight_decay,
    )


@dataclass
class EpochLog:
    epoch: int
    loss: float
    kappa_tokens: float | None
    kappa_attn_layer1_mean: float | None
    kappa_attn_alllayers_mean: float | None
    head_detail: list = field(default_factory=list)


EPOCH_CSV_HEADER = "epoch,loss,kappa_tokens,kappa_attn_l1,kappa_attn_all"


def _csv_number(v) -> str:
    if v is None:
        return "nan"
    return format(v, ".17g")


def write_epoch_logs_csv(logs, path) -> None:
    with open(path, "w") as fh:
        fh.write(EPOCH_CSV_HEADER + "\n")
        for log in logs:
            fh.write(
                f"{log.epoch},{_csv_number(log.loss)},{_csv_number(log.kappa_tokens)},"
                f"{_csv_number(log.kappa_attn_layer1_mean)},"
                f"{_csv_number(log.kappa_attn_alllayers_mean)}\n"
            )


@dataclass
class TrainResult:
    logs: list
    model: TransformerModel
    diverged: bool = False


def train(config: TrainConfig) -> TrainResult:
    """Run the full loop; everything downstream of (config, seed) is fixed.

    A non-finite loss stops training immediately; the logs collected so
    far are returned with the diverged flag set.
    """
    model = init_model(config.model, config.seed)
    tokens, targets = make_dataset(config.task, config.model)
    probe_tokens = probe_sample(config.task, config.model)
    if config.model.correction is not None:
        model.attach_correction(build_correction_for(model, probe_tokens))

    optimizer = _build_optimizer(config)
    shuffle_stream = Xoshiro256StarStar.for_stream(config.seed, "shuffle")
    num_samples = tokens.shape[0]

    logs: list[EpochLog] = []
    diverged = False
    for epoch in range(config.epochs):
        record = condition_probe(model, model.embed_tokens(probe_tokens))
        order = list(range(num_samples))
        shuffle_stream.shuffle(order)
        batch_losses = []
        try:
            for start in range(0, num_samples, config.batch_size):
                pick = order[start : start + config.batch_size]
                loss, grads = _loss_and_grads(model, tokens[pick], targets[pick])
                batch_losses.append(loss)
                optimizer.step(model.params, grads)
        except NonFiniteError:
            diverged = True
        if batch_losses:
            logs.append(
                EpochLog(
                    epoch=epoch,
                    loss=float(np.mean(batch_losses)),
                    kappa_tokens=record.kappa_tokens,
                    kappa_attn_layer1_mean=record.kappa_attn_layer1_mean,
                    kappa_attn_alllayers_mean=record.kappa_attn_alllayers_mean,
                    head_detail=record.per_layer_mean_kappas,
                )
            )
        if diverged:
            break
    return TrainResult(logs=logs, model=model, diverged=diverged)


@dataclass
class ComparisonSummary:
    """Epoch-averaged conditioning of a baseline run vs a corrected run."""

    base_kappa_tokens: float | None
    cond_kappa_tokens: float | None
    base_kappa_attn_layer1: float | None
    cond_kappa_attn_layer1: float | None
    base_kappa_attn_alllayers: float | None
    cond_kappa_attn_alllayers: float | None
    ratio_kappa_tokens: float | None
    ratio_kappa_attn_layer1: float | None
    ratio_kappa_attn_alllayers: float | None
    base_final_loss: float | None
    cond_final_loss: float | None
    base_diverged: bool
    cond_diverged: bool

    def as_dict(self) -> dict:
        return {
            "base_kappa_tokens": self.base_kappa_tokens,
            "cond_kappa_tokens": self.cond_kappa_tokens,
            "base_kappa_attn_layer1": self.base_kappa_attn_layer1,
            "cond_kappa_attn_layer1": self.cond_kappa_attn_layer1,
            "base_kappa_attn_alllayers": self.base_kappa_attn_alllayers,
            "cond_kappa_attn_alllayers": self.cond_kappa_attn_alllayers,
            "ratio_kappa_tokens": self.ratio_kappa_tokens,
            "ratio_kappa_attn_layer1": self.ratio_kappa_attn_layer1,
            "ratio_kappa_attn_alllayers": self.ratio_kappa_attn_alllayers,
            "base_final_loss": self.base_final_loss,
            "cond_final_loss": self.cond_final_loss,
            "base_diverged": self.base_diverged,
            "cond_diverged": self.cond_diverged,
        }


def _epoch_mean(logs, attr):
    values = [getattr(log, attr) for log in logs]
    kept = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept else None


def _ratio(a, b):
    if a is None or b is None or b == 0.0:
        return None
    return a / b


def compare_runs(base: TrainConfig, cond: TrainConfig):
    """Train both configs (identical except the correction) and summarize.

    Returns (summary, base_result, cond_result).
    """
    base_stripped = replace(base, model=replace(base.model, correction=None))
    cond_stripped = replace(cond, model=replace(cond.model, correction=None))
    if base_stripped != cond_stripped:
        raise ValueError("configs differ beyond the correction field")

    base_result = train(base)
    cond_result = train(cond)

    base_final = base_result.logs[-1].loss if base_result.logs else None
    cond_final = cond_result.logs[-1].loss if cond_result.logs else None
    b_tok = _epoch_mean(base_result.logs, "kappa_tokens")
    c_tok = _epoch_mean(cond_result.logs, "kappa_tokens")
    b_l1 = _epoch_mean(base_result.logs, "kappa_attn_layer1_mean")
    c_l1 = _epoch_mean(cond_result.logs, "kappa_attn_layer1_mean")
    b_all = _epoch_mean(base_result.logs, "kappa_attn_alllayers_mean")
    c_all = _epoch_mean(cond_result.logs, "kappa_attn_alllayers_mean")
    summary = ComparisonSummary(
        base_kappa_tokens=b_tok,
        cond_kappa_tokens=c_tok,
        base_kappa_attn_layer1=b_l1,
        cond_kappa_attn_layer1=c_l1,
        base_kappa_attn_alllayers=b_all,
        cond_kappa_attn_alllayers=c_all,
        ratio_kappa_tokens=_ratio(c_tok, b_tok),
        ratio_kappa_attn_layer1=_ratio(c_l1, b_l1),
        ratio_kappa_attn_alllayers=_ratio(c_all, b_all),
        base_final_loss=base_final,
        cond_final_loss=cond_final,
        base_diverged=base_result.diverged,
        cond_diverged=cond_result.diverged,
    )
    return summary, base_result, cond_result


def default_comparison_configs(seed: int, lam: float = 10.0, epochs: int = 100):
    """The stock toy comparison: N=16, t=8, d=32, h=4, L=2, batch 8."""
    base_model = ModelConfig(seq_len=16, token_dim=8, embed_dim=32, heads=4, layers=2)
    cond_model = replace(base_model, correction=CorrectionSpec(IDENTITY_SCALED, lam))
    task = SyntheticTask(kind=TEACHER_REGRESSION, seed=seed, num_samples=64)
    base = TrainConfig(model=base_model, task=task, epochs=epochs, batch_size=8, seed=seed)
    cond = TrainConfig(model=cond_model, task=task, epochs=epochs, batch_size=8, seed=seed)
    return base, cond
