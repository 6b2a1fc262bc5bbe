"""Geometric attention: project a score vector onto the probability simplex and mix
Gaussian atoms ``(m_n, A_n^T A_n)`` with the resulting weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .gaussian import Gaussian


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``v`` (or of each row of ``v``) onto the simplex.

    Sort-and-threshold: with ``u`` sorted descending and ``c`` its cumulative sum, the
    support size is the largest ``j`` with ``u_j + (1 - c_j) / j > 0`` and the output is
    ``max(v + theta, 0)`` with ``theta = (1 - c_rho) / rho``.
    """
    v = np.asarray(v, dtype=float)
    single = v.ndim == 1
    V = np.atleast_2d(v)
    u = -np.sort(-V, axis=1)
    css = np.cumsum(u, axis=1)
    j = np.arange(1, V.shape[1] + 1)
    cond = u + (1.0 - css) / j > 0
    rho = V.shape[1] - np.argmax(cond[:, ::-1], axis=1)
    theta = (1.0 - css[np.arange(V.shape[0]), rho - 1]) / rho
    W = np.maximum(V + theta[:, None], 0.0)
    return W[0] if single else W


def project_simplex_vjp(w: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Pull back ``g`` through the projection at output ``w`` (rows or single vector).

    On the support ``S = {w > 0}`` the Jacobian is ``I - 11^T / |S|``; clamped
    coordinates receive zero gradient.
    """
    w, g = np.atleast_2d(w), np.atleast_2d(g)
    active = (w > 0).astype(float)
    mean = np.sum(g * active, axis=1, keepdims=True) / np.sum(active, axis=1, keepdims=True)
    out = (g - mean) * active
    return out[0] if np.ndim(w) == 1 else out


@dataclass(eq=False)
class GeoAttentionParams:
    """Atoms ``(m_n, A_n)``; ``means`` is ``(N, d)`` and ``factors`` is ``(N, d, d)``."""

    means: np.ndarray
    factors: np.ndarray

    def __post_init__(self):
        self.means = np.atleast_2d(np.asarray(self.means, float))
        self.factors = np.asarray(self.factors, float)
        if self.factors.ndim == 1:
            self.factors = self.factors[:, None, None]
        N, d = self.means.shape
        if N < 1 or self.factors.shape != (N, d, d):
            raise DimensionError(f"atoms: means {self.means.shape}, factors {self.factors.shape}")

    @property
    def n_atoms(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def grams(self) -> np.ndarray:
        return np.swapaxes(self.factors, 1, 2) @ self.factors

    def atom(self, n: int) -> Gaussian:
        return Gaussian(self.means[n], self.factors[n].T @ self.factors[n])

    def copy(self) -> GeoAttentionParams:
        return GeoAttentionParams(self.means.copy(), self.factors.copy())

    def to_json(self) -> dict:
        return {"means": self.means.tolist(), "factors": self.factors.tolist()}

    @classmethod
    def from_json(cls, doc: dict) -> GeoAttentionParams:
        return cls(np.array(doc["means"], float), np.array(doc["factors"], float))


def mix(p: GeoAttentionParams, W: np.ndarray):
    """Mixture moments for weight rows ``W``: means ``(n, d)`` and covariances ``(n, d, d)``."""
    W = np.atleast_2d(W)
    means = W @ p.means
    covs = np.einsum("in,njk->ijk", W, p.grams())
    return means, 0.5 * (covs + np.swapaxes(covs, 1, 2))


def geo_attn(p: GeoAttentionParams, v: np.ndarray) -> Gaussian:
    """``N(sum_n w_n m_n, sum_n w_n A_n^T A_n)`` with ``w`` the simplex projection of ``v``."""
    v = np.asarray(v, float)
    if v.shape != (p.n_atoms,):
        raise DimensionError(f"expected a score vector of length {p.n_atoms}, got {v.shape}")
    means, covs = mix(p, project_simplex(v)[None])
    return Gaussian(means[0], covs[0])
