"""Gaussian measures, the closed-form 2-Wasserstein (Bures) distance and the
``(mean, covariance)`` chart with its product metric ``d_{2,F}``."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, InvalidCovarianceError

SYM_TOL = 1e-10
EIG_TOL = 1e-10


def _symmetric_checked(M, name="matrix") -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise InvalidCovarianceError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise InvalidCovarianceError(f"{name} has non-finite entries")
    scale = max(np.linalg.norm(M), 1.0)
    if np.linalg.norm(M - M.T) > SYM_TOL * scale:
        raise InvalidCovarianceError(f"{name} is not symmetric")
    return 0.5 * (M + M.T)


def clamp_psd(M, name="covariance") -> np.ndarray:
    """Symmetrize and clamp tiny negative eigenvalues to zero.

    Raises if an eigenvalue is below ``-1e-10 * ||M||_F``.
    """
    S = _symmetric_checked(M, name)
    w, V = np.linalg.eigh(S)
    floor = -EIG_TOL * max(np.linalg.norm(S), 1e-300)
    if w.min(initial=0.0) < floor:
        raise InvalidCovarianceError(
            f"{name} is not positive semi-definite (min eigenvalue {w.min():.3e})")
    if w.min(initial=0.0) >= 0.0:
        return S
    w = np.maximum(w, 0.0)
    out = (V * w) @ V.T
    return 0.5 * (out + out.T)


def psd_sqrt(M) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition, eigenvalues clamped at 0.

    Raises
    ------
    InvalidCovarianceError
        If ``M`` is asymmetric beyond tolerance.
    """
    S = _symmetric_checked(M)
    w, V = np.linalg.eigh(S)
    root = (V * np.sqrt(np.maximum(w, 0.0))) @ V.T
    return 0.5 * (root + root.T)


@dataclass(frozen=True, eq=False)
class Gaussian:
    """``N(mean, cov)`` on ``R^d``; the covariance is clamped to PSD on construction."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).ravel()
        cov = clamp_psd(self.cov)
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(f"mean of length {mean.size} but cov of shape {cov.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return self.mean.size

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "cov": self.cov.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> Gaussian:
        return cls(np.array(d["mean"], dtype=float), np.array(d["cov"], dtype=float))


@dataclass(frozen=True, eq=False)
class ChartPoint:
    """Image of a Gaussian under ``N(m, S) -> (m, S)``."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float)).ravel()
        cov = clamp_psd(self.cov)
        if cov.shape != (mean.size, mean.size):
            raise DimensionError(f"mean of length {mean.size} but cov of shape {cov.shape}")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def chart(g: Gaussian) -> ChartPoint:
    return ChartPoint(g.mean.copy(), g.cov.copy())


def unchart(p: ChartPoint) -> Gaussian:
    return Gaussian(p.mean.copy(), p.cov.copy())


def _check_dims(a, b):
    if a.mean.shape != b.mean.shape:
        raise DimensionError(f"dimension mismatch: {a.mean.size} vs {b.mean.size}")


def w2_closed_form_squared(g1: Gaussian, g2: Gaussian) -> float:
    """``|m1 - m2|^2 + tr S1 + tr S2 - 2 tr (S2^{1/2} S1 S2^{1/2})^{1/2}``, clamped at 0.

    Loses absolute accuracy to cancellation when the two covariances nearly agree;
    :func:`w2` evaluates the same quantity without the subtraction.
    """
    _check_dims(g1, g2)
    root2 = psd_sqrt(g2.cov)
    inner = root2 @ g1.cov @ root2
    inner = 0.5 * (inner + inner.T)
    cross = np.trace(psd_sqrt(inner))
    dm = g1.mean - g2.mean
    val = float(dm @ dm + np.trace(g1.cov) + np.trace(g2.cov) - 2.0 * cross)
    return max(val, 0.0)


def _bures_stack(R1: np.ndarray, R2: np.ndarray) -> np.ndarray:
    # tr (R2 S1 R2)^{1/2} is the nuclear norm of R2 R1 = U diag(s) V^T, and the Bures
    # distance is attained as ||R1 - R2 Q||_F with Q = U V^T; no cancellation.
    U, _, Vt = np.linalg.svd(R2 @ R1)
    D = R1 - R2 @ (U @ Vt)
    return np.sqrt(np.sum(D * D, axis=(-2, -1)))


def _psd_sqrt_stack(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (M + np.swapaxes(M, -1, -2)))
    return (V * np.sqrt(np.maximum(w, 0.0))[..., None, :]) @ np.swapaxes(V, -1, -2)


def w2(g1: Gaussian, g2: Gaussian) -> float:
    """2-Wasserstein distance between ``N(m1, S1)`` and ``N(m2, S2)``.

    Equal to the square root of
    ``|m1 - m2|^2 + tr S1 + tr S2 - 2 tr (S2^{1/2} S1 S2^{1/2})^{1/2}``.  The covariance
    part is evaluated as ``min_Q ||S1^{1/2} - S2^{1/2} Q||_F`` over orthogonal ``Q``
    (attained at a polar factor), which keeps full accuracy for nearby Gaussians.
    Since ``W_p <= W_2`` for ``p <= 2``, the value also bounds the lower-order distances.
    """
    _check_dims(g1, g2)
    bures = _bures_stack(psd_sqrt(g1.cov)[None], psd_sqrt(g2.cov)[None])[0]
    return float(np.hypot(np.linalg.norm(g1.mean - g2.mean), bures))


def w2_batch(means1, covs1, means2, covs2) -> np.ndarray:
    """Vectorised :func:`w2` over stacks ``(n, d)`` / ``(n, d, d)``."""
    means1, means2 = np.asarray(means1, float), np.asarray(means2, float)
    covs1, covs2 = np.asarray(covs1, float), np.asarray(covs2, float)
    if means1.shape != means2.shape or covs1.shape != covs2.shape:
        raise DimensionError("w2_batch arguments have mismatched shapes")
    bures = _bures_stack(_psd_sqrt_stack(covs1), _psd_sqrt_stack(covs2))
    return np.hypot(np.linalg.norm(means1 - means2, axis=-1), bures)


def d2f(a: ChartPoint | Gaussian, b: ChartPoint | Gaussian) -> float:
    """Product metric ``sqrt(|m1 - m2|^2 + ||S1 - S2||_F^2)``."""
    _check_dims(a, b)
    dm = a.mean - b.mean
    dS = a.cov - b.cov
    return float(np.sqrt(dm @ dm + np.sum(dS * dS)))


def pinelis_constants(d: int, r: float, R: float) -> tuple[float, float]:
    """Constants ``(lo, hi)`` with ``lo * d2f <= W2 <= hi * d2f``.

    Valid for Gaussians whose covariances satisfy ``S >= r I`` and ``||S||_F <= R``.
    """
    lo = 1.0 / max(1.0, np.sqrt(d) * 2.0 * np.sqrt(R))
    hi = max(1.0, np.sqrt(d) / (2.0 * np.sqrt(r)))
    return lo, hi


def pinelis_bounds(g1: Gaussian, g2: Gaussian) -> tuple[float, float, float]:
    """Return ``(lower, w2, upper)`` using the tightest ``r, R`` for this pair."""
    r = min(np.linalg.eigvalsh(g1.cov)[0], np.linalg.eigvalsh(g2.cov)[0])
    R = max(np.linalg.norm(g1.cov), np.linalg.norm(g2.cov))
    lo, hi = pinelis_constants(g1.dim, r, R)
    dist = d2f(g1, g2)
    return lo * dist, w2(g1, g2), hi * dist


def write_trajectory_json(times, states, path: str | Path) -> None:
    records = [{"t": float(t), **g.to_dict()} for t, g in zip(times, states)]
    Path(path).write_text(json.dumps(records, indent=1))


def read_trajectory_json(path: str | Path) -> tuple[np.ndarray, list[Gaussian]]:
    records = json.loads(Path(path).read_text())
    times = np.array([r["t"] for r in records], dtype=float)
    return times, [Gaussian.from_dict(r) for r in records]
