"""Minimal transformer with condition-number probes.

The network is deliberately small and explicit: a learnable token
embedding plus a fixed sinusoidal positional encoding, a stack of
residual attention + feedforward layers, and two attention flavors —
"softmax", the usual row-softmaxed score matrix times values, and
"linear", the same five-factor product with no activation.  Scores are
unscaled by default (a 1/sqrt(head_dim) flag exists for parity with
common practice).

Forward functions accept either plain ndarrays or autodiff Tensors for
the parameters, so the exact same code path serves inference, probes and
gradient computation.  A leading batch axis is supported everywhere via
numpy-style broadcasting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matrix
from .autodiff import (
    Tensor,
    concat_last,
    gelu,
    layer_norm_rows,
    softmax_rows,
    transpose_last,
)
from .conditioning import (
    EXACT_SVD,
    IDENTITY_SCALED,
    CorrectionMatrix,
    CorrectionSpec,
    identity_correction,
)
from .matrix import ShapeError
from .rng import Xoshiro256StarStar

LINEAR = "linear"
SOFTMAX = "softmax"


@dataclass
class ModelConfig:
    seq_len: int
    token_dim: int
    embed_dim: int
    heads: int
    layers: int
    attention_kind: str = SOFTMAX
    layer_norm: bool = False
    score_scaling: bool = False
    hidden_dim: int | None = None
    correction: CorrectionSpec | None = None

    def __post_init__(self):
        for name in ("seq_len", "token_dim", "embed_dim", "heads", "layers"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.embed_dim % self.heads != 0:
            raise ValueError(
                f"heads ({self.heads}) must divide embed_dim ({self.embed_dim})"
            )
        if self.attention_kind not in (LINEAR, SOFTMAX):
            raise ValueError(f"unknown attention kind: {self.attention_kind!r}")
        if self.hidden_dim is None:
            self.hidden_dim = 4 * self.embed_dim

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads


def save_config(config: ModelConfig, path) -> None:
    """Flat key=value file; '#' starts a comment."""
    lines = [
        f"seq_len={config.seq_len}",
        f"token_dim={config.token_dim}",
        f"embed_dim={config.embed_dim}",
        f"heads={config.heads}",
        f"layers={config.layers}",
        f"attention_kind={config.attention_kind}",
        f"layer_norm={'true' if config.layer_norm else 'false'}",
        f"score_scaling={'true' if config.score_scaling else 'false'}",
        f"hidden_dim={config.hidden_dim}",
    ]
    if config.correction is not None:
        lines.append(f"correction_kind={config.correction.kind}")
        lines.append(f"correction_lambda={format(config.correction.lam, '.17g')}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_config(path) -> ModelConfig:
    values = {}
    with open(path) as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{line_no}: expected key=value, got {raw.strip()!r}")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()

    def parse_bool(s):
        if s not in ("true", "false"):
            raise ValueError(f"expected true/false, got {s!r}")
        return s == "true"

    try:
        correction = None
        if "correction_kind" in values:
            correction = CorrectionSpec(
                kind=values["correction_kind"],
                lam=float(values.get("correction_lambda", 10.0)),
            )
        return ModelConfig(
            seq_len=int(values["seq_len"]),
            token_dim=int(values["token_dim"]),
            embed_dim=int(values["embed_dim"]),
            heads=int(values["heads"]),
            layers=int(values["layers"]),
            attention_kind=values.get("attention_kind", SOFTMAX),
            layer_norm=parse_bool(values.get("layer_norm", "false")),
            score_scaling=parse_bool(values.get("score_scaling", "false")),
            hidden_dim=int(values["hidden_dim"]) if "hidden_dim" in values else None,
            correction=correction,
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing required config key {exc.args[0]}") from exc


@dataclass
class EmbeddingLayer:
    e: object  # (embed_dim x token_dim)
    p: object  # (seq_len x embed_dim), fixed sinusoidal


@dataclass
class AttentionHead:
    wq: object
    wk: object
    wv: object


@dataclass
class FeedForward:
    w1: object
    b1: object
    w2: object
    b2: object


@dataclass
class TransformerLayer:
    heads: list
    ff: FeedForward


def sinusoidal_positional_encoding(seq_len: int, embed_dim: int) -> np.ndarray:
    """The classic interleaved sin/cos table; parameter-free and fixed."""
    pos = np.arange(seq_len)[:, None].astype(np.float64)
    idx = np.arange(0, embed_dim, 2).astype(np.float64)
    angles = pos / np.power(10000.0, idx / embed_dim)
    p = np.zeros((seq_len, embed_dim))
    p[:, 0::2] = np.sin(angles)
    p[:, 1::2] = np.cos(angles[:, : embed_dim // 2])
    return p


def embed(tokens, layer: EmbeddingLayer, correction: CorrectionMatrix | None = None):
    """tokens . E^T + P, then + C.  The correction lands after the encoding."""
    tok = tokens.data if isinstance(tokens, Tensor) else np.asarray(tokens, dtype=np.float64)
    e_cols = layer.e.shape[-1]
    if tok.shape[-1] != e_cols:
        raise ShapeError(f"token width {tok.shape[-1]} does not match embedding input {e_cols}")
    x = tokens @ transpose_last(layer.e) + layer.p
    if correction is not None:
        x = x + correction.c
    return x


def linear_attention(x, head: AttentionHead):
    """X Wq Wk^T X^T X Wv, nothing else: no scaling, no activation."""
    scores = x @ head.wq @ transpose_last(head.wk) @ transpose_last(x)
    return scores @ x @ head.wv


def softmax_attention(x, head: AttentionHead, scale: bool = False):
    """Row-softmaxed scores times X Wv; score scaling only when asked."""
    scores = x @ head.wq @ transpose_last(head.wk) @ transpose_last(x)
    if scale:
        d_h = head.wq.shape[-1]
        scores = scores * (1.0 / np.sqrt(float(d_h)))
    return softmax_rows(scores) @ x @ head.wv


def attention_internals(x, head: AttentionHead, kind: str, scale: bool = False):
    """(output, probability matrix or None) for one head."""
    if kind == LINEAR:
        return linear_attention(x, head), None
    scores = x @ head.wq @ transpose_last(head.wk) @ transpose_last(x)
    if scale:
        scores = scores * (1.0 / np.sqrt(float(head.wq.shape[-1])))
    probs = softmax_rows(scores)
    return probs @ x @ head.wv, probs


def multi_head(x, heads, kind: str, scale: bool = False, trace_sink: list | None = None):
    """Column-wise concatenation of the per-head outputs, in head order."""
    outputs = []
    for head in heads:
        out, probs = attention_internals(x, head, kind, scale)
        outputs.append(out)
        if trace_sink is not None:
            trace_sink.append((out, probs))
    return concat_last(outputs)


def layer_forward(x, layer: TransformerLayer, config: ModelConfig, trace_sink: list | None = None):
    """One residual block: feedforward applied to (attention(x) + x).

    With the pre-normalization flag on, row layer norm is applied to the
    attention input and to the feedforward input; the residual paths stay
    untouched either way.
    """
    a_in = layer_norm_rows(x) if config.layer_norm else x
    attn = multi_head(a_in, layer.heads, config.attention_kind, config.score_scaling, trace_sink)
    y = attn + x
    f_in = layer_norm_rows(y) if config.layer_norm else y
    hidden = gelu(f_in @ layer.ff.w1 + layer.ff.b1)
    return y + (hidden @ layer.ff.w2 + layer.ff.b2)


class TransformerModel:
    """Parameter store plus the fixed pieces (positional table, correction).

    Parameters live in a flat name -> ndarray dict; forward passes may
    substitute a parallel dict of autodiff Tensors.  The correction matrix
    is not a parameter: it can be attached exactly once and is read-only.
    """

    def __init__(self, config: ModelConfig, params: dict, pos_encoding: np.ndarray):
        self.config = config
        self.params = params
        self.pos_encoding = pos_encoding
        self.correction: CorrectionMatrix | None = None

    def attach_correction(self, correction: CorrectionMatrix) -> None:
        if self.correction is not None:
            raise RuntimeError("correction is frozen; it cannot be replaced")
        if correction.c.shape != (self.config.seq_len, self.config.embed_dim):
            raise ShapeError(
                f"correction shape {correction.c.shape} does not match "
                f"({self.config.seq_len}, {self.config.embed_dim})"
            )
        self.correction = correction

    def embedding_layer(self, params=None) -> EmbeddingLayer:
        p = self.params if params is None else params
        return EmbeddingLayer(e=p["embed.e"], p=self.pos_encoding)

    def transformer_layer(self, index: int, params=None) -> TransformerLayer:
        p = self.params if params is None else params
        heads = [
            AttentionHead(
                wq=p[f"layer{index}.head{h}.wq"],
                wk=p[f"layer{index}.head{h}.wk"],
                wv=p[f"layer{index}.head{h}.wv"],
            )
            for h in range(self.config.heads)
        ]
        ff = FeedForward(
            w1=p[f"layer{index}.ff.w1"],
            b1=p[f"layer{index}.ff.b1"],
            w2=p[f"layer{index}.ff.w2"],
            b2=p[f"layer{index}.ff.b2"],
        )
        return TransformerLayer(heads=heads, ff=ff)

    def forward(self, tokens, params=None):
        x = embed(tokens, self.embedding_layer(params), self.correction)
        for li in range(self.config.layers):
            x = layer_forward(x, self.transformer_layer(li, params), self.config)
        return x

    def embed_tokens(self, tokens, params=None, with_correction: bool = True):
        correction = self.correction if with_correction else None
        return embed(tokens, self.embedding_layer(params), correction)


def parameter_shapes(config: ModelConfig) -> dict:
    shapes = {"embed.e": (config.embed_dim, config.token_dim)}
    d, d_h, m = config.embed_dim, config.head_dim, config.hidden_dim
    for li in range(config.layers):
        for h in range(config.heads):
            for w in ("wq", "wk", "wv"):
                shapes[f"layer{li}.head{h}.{w}"] = (d, d_h)
        shapes[f"layer{li}.ff.w1"] = (d, m)
        shapes[f"layer{li}.ff.b1"] = (m,)
        shapes[f"layer{li}.ff.w2"] = (m, d)
        shapes[f"layer{li}.ff.b2"] = (d,)
    return shapes


def init_model(config: ModelConfig, seed: int) -> TransformerModel:
    """Entries i.i.d. uniform in [-1/sqrt(d), 1/sqrt(d)], one named PRNG
    stream per parameter, so initialization order cannot matter."""
    bound = 1.0 / np.sqrt(config.embed_dim)
    params = {}
    for name, shape in parameter_shapes(config).items():
        stream = Xoshiro256StarStar.for_stream(seed, "init", name)
        rows, cols = shape if len(shape) == 2 else (1, shape[0])
        values = stream.uniform_matrix(rows, cols, -bound, bound)
        params[name] = values.reshape(shape)
    pos = sinusoidal_positional_encoding(config.seq_len, config.embed_dim)
    return TransformerModel(config=config, params=params, pos_encoding=pos)


def build_correction_for(model: TransformerModel, tokens=None) -> CorrectionMatrix:
    """Realize the configured correction.

    The identity-scaled kind needs only the dimensions; the exact kind is
    built from the embedded tokens of the given sample (pre-correction).
    """
    spec = model.config.correction
    if spec is None:
        raise ValueError("model config has no correction spec")
    if spec.kind == IDENTITY_SCALED:
        return identity_correction(model.config.seq_len, model.config.embed_dim, spec.lam)
    if tokens is None:
        raise ValueError("exact correction needs a token sample to decompose")
    from .conditioning import exact_correction

    x0 = model.embed_tokens(tokens, with_correction=False)
    if x0.ndim != 2:
        raise ShapeError("exact correction wants a single (unbatched) token sample")
    return exact_correction(x0)


@dataclass
class ProbeRecord:
    """Condition numbers of the embedded tokens and attention outputs.

    Rank-deficient measurements are recorded as None ("skipped") and left
    out of every mean.  Per-layer means average over that layer's
    non-skipped heads; the all-layer figure averages the per-layer means
    over layers that had at least one valid head.
    """

    kappa_tokens: float | None
    first_layer_head_kappas: list
    kappa_attn_layer1_mean: float | None
    per_layer_mean_kappas: list
    kappa_attn_alllayers_mean: float | None
    first_layer_prob_kappas: list | None = None

    def as_dict(self) -> dict:
        return {
            "kappa_tokens": self.kappa_tokens,
            "first_layer_head_kappas": self.first_layer_head_kappas,
            "kappa_attn_layer1_mean": self.kappa_attn_layer1_mean,
            "per_layer_mean_kappas": self.per_layer_mean_kappas,
            "kappa_attn_alllayers_mean": self.kappa_attn_alllayers_mean,
            "first_layer_prob_kappas": self.first_layer_prob_kappas,
        }


def _kappa_or_none(a: np.ndarray):
    report = matrix.condition_number(a)
    return None if report.rank_deficient else report.kappa


def _mean_or_none(values):
    kept = [v for v in values if v is not None]
    return float(np.mean(kept)) if kept else None


def condition_probe(model: TransformerModel, x_embedded: np.ndarray) -> ProbeRecord:
    """Run the layers on already-embedded tokens, measuring as we go.

    Never raises on rank deficiency: unmeasurable entries become None and
    are excluded from the means.
    """
    x = matrix.as_matrix(x_embedded)
    kappa_tokens = _kappa_or_none(x)

    per_layer_head_kappas = []
    first_layer_probs = None
    for li in range(model.config.layers):
        sink: list = []
        x = layer_forward(x, model.transformer_layer(li), model.config, trace_sink=sink)
        head_kappas = [_kappa_or_none(out) for out, _ in sink]
        per_layer_head_kappas.append(head_kappas)
        if li == 0 and model.config.attention_kind == SOFTMAX:
            first_layer_probs = [_kappa_or_none(probs) for _, probs in sink]

    per_layer_means = [_mean_or_none(hk) for hk in per_layer_head_kappas]
    return ProbeRecord(
        kappa_tokens=kappa_tokens,
        first_layer_head_kappas=per_layer_head_kappas[0],
        kappa_attn_layer1_mean=per_layer_means[0],
        per_layer_mean_kappas=per_layer_means,
        kappa_attn_alllayers_mean=_mean_or_none(per_layer_means),
        first_layer_prob_kappas=first_layer_probs,
    )
