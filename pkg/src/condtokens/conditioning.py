"""Correction matrices for embedded tokens and the derived condition measures.

Two correction recipes are supported.  The exact recipe takes the SVD of
the token matrix X = U diag(sigma) V^T and adds C = sigma_1 * U V^T (over
the thin factors, which equals inserting sigma_1 on the whole diagonal of
the middle factor): X + C then has singular values sigma_1 + sigma_l with
the original singular vectors, so kappa(X + C) = 2*sigma_1/(sigma_1 +
sigma_k) <= 2.  The cheap recipe skips the SVD and adds lambda on the main
k x k diagonal; it relies on the smallest singular value being well below 1
and on lambda dominating the spectrum (lambda around 10 works well).

Corrections are built once and frozen: the realized array is marked
read-only and is meant to be added to every sample of every batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import matrix
from .matrix import RankDeficientError, ShapeError

EXACT_SVD = "exact"
IDENTITY_SCALED = "identity"

DEFAULT_LAMBDA = 10.0
DEFAULT_LAMBDA_GRID = tuple(float(v) for v in range(1, 21))

# sigma_k below this counts as "much less than 1" in diagnostics.
SMALL_SIGMA_THRESHOLD = 0.1

_REL_SLACK = 1e-9  # tolerance used when comparing floating-point kappa products


@dataclass
class CorrectionSpec:
    """How a correction is built: kind is "exact" or "identity"."""

    kind: str
    lam: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.kind not in (EXACT_SVD, IDENTITY_SCALED):
            raise ValueError(f"unknown correction kind: {self.kind!r}")
        if self.kind == IDENTITY_SCALED and not self.lam > 0.0:
            raise ValueError(f"identity-scaled correction needs lambda > 0, got {self.lam}")


@dataclass
class CorrectionMatrix:
    """A realized N x d correction, immutable after construction."""

    c: np.ndarray
    spec: CorrectionSpec

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.float64)
        self.c.setflags(write=False)

    @property
    def frozen(self) -> bool:
        return not self.c.flags.writeable


def exact_correction(x: np.ndarray) -> CorrectionMatrix:
    """SVD-based correction with the kappa(X+C) = 2*s1/(s1+sk) guarantee.

    Requires full rank: with sigma_k ~ 0 the target spectrum sigma_1 +
    sigma_l collapses to "everything equals sigma_1 except one direction",
    which the construction cannot distinguish from noise.
    """
    x = matrix.as_matrix(x)
    res = matrix.svd(x)
    sigma_max, sigma_min = float(res.sigma[0]), float(res.sigma[-1])
    if sigma_max == 0.0 or sigma_min / sigma_max < matrix.RANK_TOLERANCE:
        raise RankDeficientError(
            "exact correction needs a full-rank matrix "
            f"(sigma_min/sigma_max = {sigma_min / max(sigma_max, 1e-300):.2e})"
        )
    c = res.sigma[0] * (res.u @ res.vt)
    return CorrectionMatrix(c=c, spec=CorrectionSpec(kind=EXACT_SVD))


def identity_correction(n: int, d: int, lam: float = DEFAULT_LAMBDA) -> CorrectionMatrix:
    """lambda on the main k x k diagonal of an otherwise zero N x d matrix."""
    if n <= 0 or d <= 0:
        raise ValueError(f"matrix dimensions must be positive, got {n}x{d}")
    if not lam > 0.0:
        raise ValueError(f"lambda must be positive, got {lam}")
    c = np.zeros((n, d))
    k = min(n, d)
    c[np.arange(k), np.arange(k)] = lam
    return CorrectionMatrix(c=c, spec=CorrectionSpec(kind=IDENTITY_SCALED, lam=float(lam)))


def apply_correction(x: np.ndarray, correction: CorrectionMatrix) -> np.ndarray:
    """X + C.  A 3-D batch gets the same single C added to every sample."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2:] != correction.c.shape:
        raise ShapeError(
            f"correction shape {correction.c.shape} does not match input shape {x.shape}"
        )
    return x + correction.c


def _identity_like(x: np.ndarray, lam: float) -> np.ndarray:
    return apply_correction(x, identity_correction(x.shape[0], x.shape[1], lam))


@dataclass
class AttentionConditionBounds:
    """Condition-number upper bounds for one attention head.

    linear_bound = kappa_wq * kappa_wk * kappa_wv * kappa_x**3 bounds the
    condition number of the no-activation attention output
    X Wq Wk^T X^T X Wv; softmax_bound = kappa_softmax_factor * kappa_x *
    kappa_wv bounds the softmax variant.  All factors are stored so the
    products are checkable arithmetic identities; rank-deficient factors
    are stored as inf and propagate.
    """

    linear_bound: float
    softmax_bound: float
    kappa_x: float
    kappa_wq: float
    kappa_wk: float
    kappa_wv: float
    kappa_softmax_factor: float

    def as_dict(self) -> dict:
        def clean(v):
            return v if np.isfinite(v) else None

        return {
            "linear_bound": clean(self.linear_bound),
            "softmax_bound": clean(self.softmax_bound),
            "kappa_x": clean(self.kappa_x),
            "kappa_wq": clean(self.kappa_wq),
            "kappa_wk": clean(self.kappa_wk),
            "kappa_wv": clean(self.kappa_wv),
            "kappa_softmax_factor": clean(self.kappa_softmax_factor),
        }


def _softmax_score_factor(x, wq, wk):
    return matrix.softmax_rows(x @ wq @ wk.T @ x.T)


class _FactorReports:
    """Condition reports for one attention head's factors, each SVD run once."""

    def __init__(self, x, wq, wk, wv):
        self.x = matrix.condition_number(x)
        self.wq = matrix.condition_number(wq)
        self.wk = matrix.condition_number(wk)
        self.wv = matrix.condition_number(wv)
        self.softmax_factor = matrix.condition_number(_softmax_score_factor(x, wq, wk))

    def first_deficient(self, names):
        for name in names:
            if getattr(self, name).rank_deficient:
                return name
        return None

    def bounds(self) -> AttentionConditionBounds:
        kx, kq, kk = self.x.kappa, self.wq.kappa, self.wk.kappa
        kv, ks = self.wv.kappa, self.softmax_factor.kappa
        return AttentionConditionBounds(
            linear_bound=kq * kk * kv * kx ** 3,
            softmax_bound=ks * kx * kv,
            kappa_x=kx,
            kappa_wq=kq,
            kappa_wk=kk,
            kappa_wv=kv,
            kappa_softmax_factor=ks,
        )


def linear_attention_bound(x, wq, wk, wv) -> AttentionConditionBounds:
    """Bounds report, requiring every linear-path factor to be full rank."""
    x, wq, wk, wv = (matrix.as_matrix(a) for a in (x, wq, wk, wv))
    reports = _FactorReports(x, wq, wk, wv)
    bad = reports.first_deficient(("x", "wq", "wk", "wv"))
    if bad is not None:
        raise RankDeficientError(f"factor {bad} is rank-deficient")
    return reports.bounds()


def softmax_attention_bound(x, wq, wk, wv) -> AttentionConditionBounds:
    """Bounds report, requiring x, wv and the softmaxed score matrix full rank."""
    x, wq, wk, wv = (matrix.as_matrix(a) for a in (x, wq, wk, wv))
    reports = _FactorReports(x, wq, wk, wv)
    bad = reports.first_deficient(("x", "wv"))
    if bad is not None:
        raise RankDeficientError(f"factor {bad} is rank-deficient")
    if reports.softmax_factor.rank_deficient:
        raise RankDeficientError("softmaxed score matrix is rank-deficient")
    return reports.bounds()


@dataclass
class BoundCheck:
    """Measured attention condition numbers against their bounds."""

    kappa_linear_actual: float = np.nan
    kappa_softmax_actual: float = np.nan
    linear_bound: float = np.nan
    softmax_bound: float = np.nan
    linear_ok: bool = False
    softmax_ok: bool = False
    skipped: bool = False
    reason: str = ""

    def as_dict(self) -> dict:
        return {
            "kappa_linear_actual": _jsonable(self.kappa_linear_actual),
            "kappa_softmax_actual": _jsonable(self.kappa_softmax_actual),
            "linear_bound": _jsonable(self.linear_bound),
            "softmax_bound": _jsonable(self.softmax_bound),
            "linear_ok": self.linear_ok,
            "softmax_ok": self.softmax_ok,
            "skipped": self.skipped,
            "reason": self.reason,
        }


def _jsonable(v):
    return float(v) if np.isfinite(v) else None


def check_attention_bounds(x, wq, wk, wv) -> BoundCheck:
    """Compare actual attention condition numbers against their bounds.

    Rank deficiency anywhere yields a skipped record (the bound statement
    assumes full rank) rather than a failure.
    """
    x, wq, wk, wv = (matrix.as_matrix(a) for a in (x, wq, wk, wv))
    reports = _FactorReports(x, wq, wk, wv)
    bad = reports.first_deficient(("x", "wq", "wk", "wv"))
    if bad is not None:
        return BoundCheck(skipped=True, reason=f"factor {bad} is rank-deficient")
    bounds = reports.bounds()

    linear_out = x @ wq @ wk.T @ x.T @ x @ wv
    softmax_out = _softmax_score_factor(x, wq, wk) @ x @ wv
    rep_lin = matrix.condition_number(linear_out)
    rep_sm = matrix.condition_number(softmax_out)
    if rep_lin.rank_deficient:
        return BoundCheck(skipped=True, reason="linear attention output is rank-deficient")
    if rep_sm.rank_deficient:
        return BoundCheck(skipped=True, reason="softmax attention output is rank-deficient")

    return BoundCheck(
        kappa_linear_actual=rep_lin.kappa,
        kappa_softmax_actual=rep_sm.kappa,
        linear_bound=bounds.linear_bound,
        softmax_bound=bounds.softmax_bound,
        linear_ok=rep_lin.kappa <= bounds.linear_bound * (1.0 + _REL_SLACK),
        softmax_ok=rep_sm.kappa <= bounds.softmax_bound * (1.0 + _REL_SLACK),
        skipped=False,
    )


@dataclass
class MonotonicityCheck:
    """Condition bounds before and after applying a correction."""

    linear_before: float = np.nan
    linear_after: float = np.nan
    softmax_before: float = np.nan
    softmax_after: float = np.nan
    softmax_assumption_holds: bool = False
    linear_nonincreasing: bool = False
    softmax_nonincreasing: bool = False
    skipped: bool = False
    reason: str = ""

    def as_dict(self) -> dict:
        return {
            "linear_before": _jsonable(self.linear_before),
            "linear_after": _jsonable(self.linear_after),
            "softmax_before": _jsonable(self.softmax_before),
            "softmax_after": _jsonable(self.softmax_after),
            "softmax_assumption_holds": self.softmax_assumption_holds,
            "linear_nonincreasing": self.linear_nonincreasing,
            "softmax_nonincreasing": self.softmax_nonincreasing,
            "skipped": self.skipped,
            "reason": self.reason,
        }


def check_correction_monotonicity(x, wq, wk, wv, spec: CorrectionSpec) -> MonotonicityCheck:
    """Measure how the condition bounds move when X is replaced by X + C.

    The non-increasing flags carry a 1e-9 relative slack.  For the exact
    recipe the linear bound can never increase; the softmax bound is only
    guaranteed when the softmaxed score factor itself did not get worse,
    which is what softmax_assumption_holds records.
    """
    x, wq, wk, wv = (matrix.as_matrix(a) for a in (x, wq, wk, wv))
    before_reports = _FactorReports(x, wq, wk, wv)
    bad = before_reports.first_deficient(("x", "wq", "wk", "wv"))
    if bad is not None:
        return MonotonicityCheck(skipped=True, reason=f"factor {bad} is rank-deficient")

    if spec.kind == EXACT_SVD:
        corrected = apply_correction(x, exact_correction(x))
    else:
        corrected = _identity_like(x, spec.lam)

    before = before_reports.bounds()
    after = _FactorReports(corrected, wq, wk, wv).bounds()
    assumption = after.kappa_softmax_factor <= before.kappa_softmax_factor
    return MonotonicityCheck(
        linear_before=before.linear_bound,
        linear_after=after.linear_bound,
        softmax_before=before.softmax_bound,
        softmax_after=after.softmax_bound,
        softmax_assumption_holds=bool(assumption),
        linear_nonincreasing=bool(
            after.linear_bound <= before.linear_bound * (1.0 + _REL_SLACK)
        ),
        softmax_nonincreasing=bool(
            after.softmax_bound <= before.softmax_bound * (1.0 + _REL_SLACK)
        ),
        skipped=False,
    )


@dataclass
class WeylDiagnostic:
    """How the diagonal-shift correction moved the spectrum.

    The analytic cap (sigma_1 + lambda) / (lambda - sigma_1) follows from
    the additive singular-value perturbation inequalities and is only
    meaningful for lambda > sigma_1.
    """

    sigma_max: float
    sigma_min: float
    lam: float
    kappa_actual: float
    bound: float | None
    small_sigma_min: bool
    bound_applicable: bool
    bound_satisfied: bool | None

    def as_dict(self) -> dict:
        return {
            "sigma_max": self.sigma_max,
            "sigma_min": self.sigma_min,
            "lambda": self.lam,
            "kappa_actual": _jsonable(self.kappa_actual),
            "bound": self.bound,
            "small_sigma_min": self.small_sigma_min,
            "bound_applicable": self.bound_applicable,
            "bound_satisfied": self.bound_satisfied,
        }


def weyl_diagnostic(x: np.ndarray, lam: float) -> WeylDiagnostic:
    x = matrix.as_matrix(x)
    res = matrix.svd(x)
    sigma_max = float(res.sigma[0])
    sigma_min = float(res.sigma[-1])
    kappa_actual = matrix.condition_number(_identity_like(x, lam)).kappa

    applicable = lam > sigma_max
    bound = (sigma_max + lam) / (lam - sigma_max) if applicable else None
    satisfied = None
    if applicable:
        satisfied = bool(kappa_actual <= bound * (1.0 + _REL_SLACK))
    return WeylDiagnostic(
        sigma_max=sigma_max,
        sigma_min=sigma_min,
        lam=float(lam),
        kappa_actual=kappa_actual,
        bound=bound,
        small_sigma_min=bool(sigma_min < SMALL_SIGMA_THRESHOLD),
        bound_applicable=bool(applicable),
        bound_satisfied=satisfied,
    )


def lambda_sweep(x: np.ndarray, lambdas=None) -> list[tuple[float, float]]:
    """kappa(X + lambda*I_k) for each lambda, in the given order.

    Default grid is the integers 1..20.  Rows are computed independently,
    so the table is safe to parallelize, but the output order always
    matches the input order.
    """
    x = matrix.as_matrix(x)
    grid = DEFAULT_LAMBDA_GRID if lambdas is None else [float(v) for v in lambdas]
    if not grid:
        raise ValueError("lambda grid is empty")
    if any(not v > 0.0 for v in grid):
        raise ValueError("lambda values must be positive")
    return [(lam, matrix.condition_number(_identity_like(x, lam)).kappa) for lam in grid]


def write_sweep_csv(rows, path) -> None:
    with open(path, "w") as fh:
        fh.write("lambda,kappa\n")
        for lam, kappa in rows:
            fh.write(f"{format(lam, '.17g')},{format(kappa, '.17g')}\n")


@dataclass
class OverheadReport:
    """Storage and arithmetic overhead of adding one correction per batch.

    bytes counts the 4-byte single-precision entries the correction adds
    across a batch; flops counts the one addition per entry.
    """

    batch_size: int
    seq_len: int
    embed_dim: int
    bytes: int = field(init=False)
    flops: int = field(init=False)

    def __post_init__(self):
        self.flops = self.batch_size * self.seq_len * self.embed_dim
        self.bytes = 4 * self.flops

    def as_dict(self) -> dict:
        return {
            "batch_size": self.batch_size,
            "seq_len": self.seq_len,
            "embed_dim": self.embed_dim,
            "bytes": self.bytes,
            "flops": self.flops,
        }


def overhead_report(batch_size: int, seq_len: int, embed_dim: int) -> OverheadReport:
    for name, v in (("batch_size", batch_size), ("seq_len", seq_len), ("embed_dim", embed_dim)):
        if v <= 0:
            raise ValueError(f"{name} must be positive, got {v}")
    return OverheadReport(batch_size=batch_size, seq_len=seq_len, embed_dim=embed_dim)
