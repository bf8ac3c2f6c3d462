"""Dense double-precision matrix kernels.

Matrices are plain 2-D float64 numpy arrays.  Everything here is a pure
function: inputs are never mutated and outputs are fresh arrays, so values
can be shared freely across threads.  The singular value decomposition is
a one-sided Jacobi iteration written out explicitly (rather than deferring
to LAPACK) so that results are bit-reproducible for identical input bytes
and so tests can cross-check it against independent oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

RANK_TOLERANCE = 1e-12  # sigma_min/sigma_max below this flags rank deficiency
SVD_TOLERANCE = 1e-13   # normalized off-diagonal convergence target
SVD_MAX_SWEEPS = 60

# Columns whose norm falls below NULL_FACTOR * (largest column norm) carry
# no information beyond rounding noise; they are frozen out of the rotation
# schedule so genuinely rank-deficient inputs still converge.
_NULL_FACTOR = 1e-14


class ShapeError(ValueError):
    """Operands with incompatible shapes."""


class NonFiniteError(ValueError):
    """A matrix contains NaN or infinity."""


class ConvergenceError(RuntimeError):
    """Iteration failed to reach tolerance within its sweep budget."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class RankDeficientError(ValueError):
    """An operation that requires full rank received a rank-deficient matrix."""


def as_matrix(values) -> np.ndarray:
    """Coerce to a float64 2-D array and validate finiteness."""
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("matrix contains non-finite entries")
    return a


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Standard matrix product with explicit shape checking."""
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"matmul dimension mismatch: left is {a.shape[0]}x{a.shape[1]}, "
            f"right is {b.shape[0]}x{b.shape[1]}"
        )
    out = a @ b
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("matmul produced non-finite entries")
    return out


def transpose(a: np.ndarray) -> np.ndarray:
    return a.T.copy()


def frobenius_distance(a: np.ndarray, b: np.ndarray) -> float:
    """sqrt of the summed squared entrywise differences."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def softmax_rows(a: np.ndarray) -> np.ndarray:
    """Row-wise softmax with per-row max subtraction for overflow safety."""
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("softmax input contains non-finite entries")
    shifted = a - a.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class SvdResult:
    """Thin SVD: u (m x k), sigma (descending, length k), vt (k x n)."""

    u: np.ndarray
    sigma: np.ndarray
    vt: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return (self.u * self.sigma) @ self.vt


@lru_cache(maxsize=None)
def _round_robin_schedule(k: int):
    """Fixed tournament pairing: k-1 rounds of disjoint column pairs.

    Pairs within a round touch disjoint columns, so applying their
    rotations simultaneously is identical to applying them one by one.
    """
    players = list(range(k))
    if k % 2 == 1:
        players.append(-1)
    n = len(players)
    rounds = []
    arr = players[:]
    for _ in range(n - 1):
        ps, qs = [], []
        for i in range(n // 2):
            a, b = arr[i], arr[n - 1 - i]
            if a >= 0 and b >= 0:
                ps.append(min(a, b))
                qs.append(max(a, b))
        if ps:
            rounds.append((np.array(ps, dtype=np.intp), np.array(qs, dtype=np.intp)))
        arr = [arr[0], arr[-1]] + arr[1:-1]
    return tuple(rounds)


def _householder_qr(a: np.ndarray):
    """Compact QR: returns (reflectors, r) with r upper-triangular n x n."""
    m, n = a.shape
    r = a.copy()
    reflectors = []
    for j in range(n):
        x = r[j:, j]
        norm = np.linalg.norm(x)
        if norm == 0.0:
            reflectors.append(np.zeros(m - j))
            continue
        v = x.copy()
        v[0] += norm if v[0] >= 0.0 else -norm
        v /= np.linalg.norm(v)
        r[j:, j:] -= 2.0 * np.outer(v, v @ r[j:, j:])
        reflectors.append(v)
    return reflectors, np.triu(r[:n, :])


def _apply_q(reflectors, w: np.ndarray) -> np.ndarray:
    """Left-multiply w (m x k, top n rows meaningful) by Q from the QR."""
    out = w.copy()
    for j in reversed(range(len(reflectors))):
        v = reflectors[j]
        if v.any():
            out[j:, :] -= 2.0 * np.outer(v, v @ out[j:, :])
    return out


def svd(a: np.ndarray, tol: float = SVD_TOLERANCE, max_sweeps: int = SVD_MAX_SWEEPS) -> SvdResult:
    """Thin SVD by one-sided Jacobi rotations.

    Column pairs are visited in a fixed round-robin schedule and rotated
    until every normalized off-diagonal product |a_p . a_q| / (|a_p||a_q|)
    falls below ``tol``.  Wide inputs are transposed first so the rotation
    loop always runs over min(rows, cols) columns; strongly tall inputs are
    first reduced by a Householder QR so the rotations act on the square
    triangular factor (the usual preconditioning, exact up to rounding).

    Raises ConvergenceError (carrying the final residual) if the sweep
    budget is exhausted.  Deterministic: identical input bytes give
    identical factors.
    """
    a = as_matrix(a)
    m, n = a.shape
    if m < n:
        res = svd(a.T, tol=tol, max_sweeps=max_sweeps)
        return SvdResult(u=res.vt.T.copy(), sigma=res.sigma, vt=res.u.T.copy())
    if m >= 2 * n and n > 1:
        reflectors, r = _householder_qr(a)
        inner = svd(r, tol=tol, max_sweeps=max_sweeps)
        u_top = np.zeros((m, n))
        u_top[:n, :] = inner.u
        return SvdResult(u=_apply_q(reflectors, u_top), sigma=inner.sigma, vt=inner.vt)

    # Row-major working copy with the V accumulator stacked alongside:
    # row j holds [column j of the input | row j of V^T], so one gather and
    # one scatter per rotated pair batch covers both factors.
    work = np.zeros((n, m + n))
    work[:, :m] = a.T
    work[:, m:] = np.eye(n)
    schedule = _round_robin_schedule(n)

    residual = np.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        for _ in range(max_sweeps):
            norms_sq = np.einsum("ij,ij->i", work[:, :m], work[:, :m])
            null_sq = (_NULL_FACTOR ** 2) * norms_sq.max()
            residual = 0.0
            for ps, qs in schedule:
                pm = work[ps, :m]
                qm = work[qs, :m]
                alpha = np.einsum("ij,ij->i", pm, pm)
                beta = np.einsum("ij,ij->i", qm, qm)
                gamma = np.einsum("ij,ij->i", pm, qm)

                live = (alpha > null_sq) & (beta > null_sq)
                scale = np.sqrt(alpha * beta)
                ratio = np.where(live & (scale > 0.0), np.abs(gamma) / scale, 0.0)
                residual = max(residual, float(ratio.max()))
                rotate = live & (ratio > tol)
                if not rotate.any():
                    continue

                zeta = np.where(rotate, (beta - alpha) / (2.0 * gamma), 0.0)
                sign = np.where(zeta >= 0.0, 1.0, -1.0)
                t = np.where(rotate, sign / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta)), 0.0)
                c = (1.0 / np.sqrt(1.0 + t * t))[:, None]
                s = (c.ravel() * t)[:, None]

                p_rows = work[ps]
                q_rows = work[qs]
                work[ps] = c * p_rows - s * q_rows
                work[qs] = s * p_rows + c * q_rows
            if residual <= tol:
                break
        else:
            raise ConvergenceError(
                f"svd did not converge within {max_sweeps} sweeps "
                f"(off-diagonal residual {residual:.3e}, tolerance {tol:.1e})",
                residual,
            )

    bt = work[:, :m]
    vt = work[:, m:]
    norms = np.linalg.norm(bt, axis=1)
    order = np.argsort(-norms, kind="stable")
    sigma = norms[order]
    u = np.zeros((m, n))
    null_norm = _NULL_FACTOR * norms.max() if norms.max() > 0 else 0.0
    pending = []
    for out_j, j in enumerate(order):
        if norms[j] > null_norm and norms[j] > 0.0:
            u[:, out_j] = bt[j] / norms[j]
        else:
            pending.append(out_j)
    for out_j in pending:
        u[:, out_j] = _orthonormal_completion(u, out_j)
    return SvdResult(u=u, sigma=sigma, vt=vt[order].copy())


def _orthonormal_completion(u: np.ndarray, col: int) -> np.ndarray:
    """Deterministic unit vector orthogonal to the columns of u[:, :col]."""
    m = u.shape[0]
    basis = u[:, :col]
    for i in range(m):
        cand = np.zeros(m)
        cand[i] = 1.0
        cand -= basis @ (basis.T @ cand)
        norm = np.linalg.norm(cand)
        if norm > 0.5:
            return cand / norm
    raise RuntimeError("orthonormal completion failed")  # pragma: no cover


@dataclass
class ConditionReport:
    """kappa = sigma_max / sigma_min, or infinity when rank-deficient."""

    kappa: float
    sigma_max: float
    sigma_min: float
    rank_deficient: bool

    def as_dict(self) -> dict:
        return {
            "kappa": self.kappa if np.isfinite(self.kappa) else None,
            "sigma_max": self.sigma_max,
            "sigma_min": self.sigma_min,
            "rank_deficient": self.rank_deficient,
        }


def condition_number(a: np.ndarray) -> ConditionReport:
    """Condition number from the singular spectrum.

    Inputs whose sigma_min/sigma_max ratio falls below RANK_TOLERANCE are
    flagged rank-deficient and get kappa = inf instead of a division by a
    numerically meaningless denominator.
    """
    res = svd(as_matrix(a))
    sigma_max = float(res.sigma[0])
    sigma_min = float(res.sigma[-1])
    deficient = sigma_max == 0.0 or (sigma_min / sigma_max) < RANK_TOLERANCE
    kappa = np.inf if deficient else sigma_max / sigma_min
    return ConditionReport(
        kappa=float(kappa),
        sigma_max=sigma_max,
        sigma_min=sigma_min,
        rank_deficient=bool(deficient),
    )


def write_matrix_csv(a: np.ndarray, path) -> None:
    """Headerless CSV at 17 significant digits (exact float64 round-trip)."""
    a = as_matrix(a)
    with open(path, "w") as fh:
        for row in a:
            fh.write(",".join(format(x, ".17g") for x in row))
            fh.write("\n")


def read_matrix_csv(path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(tok) for tok in line.split(",")])
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: not a CSV row of numbers") from exc
    if not rows:
        raise ValueError(f"{path}: empty matrix file")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ValueError(f"{path}: ragged rows (expected width {width})")
    return as_matrix(rows)
