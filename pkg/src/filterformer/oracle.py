"""Exact conditionally Gaussian filter along an observed path.

Given an observation path ``y`` the conditional law of ``X_t`` is ``N(mu_t, Sigma_t)``:

    d mu    = [a0 + a1 mu] dt + [boB + Sigma A1^T] (BoB)^{-1} [dy - (A0 + A1 mu) dt]
    dSigma  = a1 Sigma + Sigma a1^T + bob
              - [boB + Sigma A1^T] (BoB)^{-1} [boB + Sigma A1^T]^T      (per unit time)

``Sigma`` solves a pathwise ODE and is advanced with classical RK4; ``mu`` is driven by
``dy`` and is advanced with an explicit Euler step whose coefficients are frozen at the
start of the step.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AssumptionViolation, DimensionError, RiccatiBlowupError
from .gaussian import Gaussian, w2, w2_batch, write_trajectory_json
from .paths import SampledPath, check_same_grid, sup_distance
from .sde import CoefficientSet, CoefficientValues


@dataclass(frozen=True, eq=False)
class FilterTrajectory:
    grid: np.ndarray
    means: np.ndarray  # (n, dx)
    covs: np.ndarray  # (n, dx, dx)

    def __len__(self):
        return self.grid.size

    @property
    def states(self) -> list[Gaussian]:
        return [Gaussian(m, S) for m, S in zip(self.means, self.covs)]

    def state(self, k: int) -> Gaussian:
        return Gaussian(self.means[k], self.covs[k])

    def min_eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.covs)[:, 0]

    def write_json(self, path: str | Path) -> None:
        write_trajectory_json(self.grid, self.states, path)

    def write_diagnostics_csv(self, path: str | Path) -> None:
        lam = self.min_eigenvalues()
        tr = np.trace(self.covs, axis1=1, axis2=2)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "trace_cov", "min_eig_cov"])
            for row in zip(self.grid, tr, lam):
                w.writerow([repr(float(x)) for x in row])


def _solve_BoB(BoB: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        L = np.linalg.cholesky(BoB)
    except np.linalg.LinAlgError:
        raise AssumptionViolation("BoB is singular") from None
    return np.linalg.solve(L.T, np.linalg.solve(L, rhs))


def riccati_rhs(S: np.ndarray, c: CoefficientValues) -> np.ndarray:
    G = c.boB + S @ c.A1.T
    drift = c.a1 @ S + S @ c.a1.T + c.bob - G @ _solve_BoB(c.BoB, G.T)
    return 0.5 * (drift + drift.T)


def _is_pd(S: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return False
    return True


def run_oracle(coeffs: CoefficientSet, y: SampledPath, init: Gaussian) -> FilterTrajectory:
    """Integrate the filter mean and covariance along ``y``.

    Raises
    ------
    RiccatiBlowupError
        If ``Sigma`` stops being positive definite (or non-finite) at some step.
    AssumptionViolation
        If ``BoB`` is singular at an evaluation point.
    """
    if init.dim != coeffs.dx or y.dim != coeffs.dy:
        raise DimensionError("init / path dimensions do not match the coefficients")
    if not _is_pd(init.cov):
        raise RiccatiBlowupError("initial covariance is not positive definite", step=0)
    n, dt, dx = len(y), y.dt, coeffs.dx
    grid = y.grid
    means = np.empty((n, dx))
    covs = np.empty((n, dx, dx))
    means[0], covs[0] = init.mean, init.cov
    dY = np.diff(y.values, axis=0)
    cached = coeffs.evaluate(0.0, y.prefix(0)) if coeffs.constant else None
    for k in range(n - 1):
        prefix = y.prefix(k)
        if cached is not None:
            c0 = ch = c1 = cached
        else:
            c0 = coeffs.evaluate(grid[k], prefix)
            ch = coeffs.evaluate(grid[k] + 0.5 * dt, prefix)
            c1 = coeffs.evaluate(grid[k + 1], prefix)
        S, m = covs[k], means[k]

        k1 = riccati_rhs(S, c0)
        k2 = riccati_rhs(S + 0.5 * dt * k1, ch)
        k3 = riccati_rhs(S + 0.5 * dt * k2, ch)
        k4 = riccati_rhs(S + dt * k3, c1)
        S_next = S + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        S_next = 0.5 * (S_next + S_next.T)
        if not (np.all(np.isfinite(S_next)) and _is_pd(S_next)):
            raise RiccatiBlowupError(f"covariance lost positive-definiteness at step {k + 1}",
                                     step=k + 1)

        gain = _solve_BoB(c0.BoB, (c0.boB + S @ c0.A1.T).T).T
        innovation = dY[k] - (c0.A0 + c0.A1 @ m) * dt
        means[k + 1] = m + (c0.a0 + c0.a1 @ m) * dt + gain @ innovation
        covs[k + 1] = S_next
    return FilterTrajectory(grid.copy(), means, covs)


def discrete_kalman_reference(coeffs: CoefficientSet, y: SampledPath, init: Gaussian) -> FilterTrajectory:
    """Textbook Kalman filter on the Euler discretisation of a constant-coefficient system.

    State transition ``x_{k+1} = (I + a1 dt) x_k + a0 dt + noise(bob dt)`` and measurement
    ``y_{k+1} - y_k = (A0 + A1 x_k) dt + noise(BoB dt)``.  The state returned at index
    ``k + 1`` is the one-step prediction after absorbing the increment ``y_{k+1} - y_k``.
    Test-only cross-check.
    """
    if not coeffs.constant:
        raise ValueError("discrete Kalman reference needs constant coefficients")
    c = coeffs.evaluate(0.0, y.prefix(0))
    if np.abs(c.boB).max(initial=0.0) > 0:
        raise ValueError("discrete Kalman reference assumes boB = 0")
    n, dt, dx = len(y), y.dt, coeffs.dx
    F = np.eye(dx) + c.a1 * dt
    H = c.A1 * dt
    Q = c.bob * dt
    R = c.BoB * dt
    means = np.empty((n, dx))
    covs = np.empty((n, dx, dx))
    means[0], covs[0] = init.mean, init.cov
    dY = np.diff(y.values, axis=0)
    for k in range(n - 1):
        m, P = means[k], covs[k]
        Sinn = H @ P @ H.T + R
        try:
            L = np.linalg.cholesky(Sinn)
        except np.linalg.LinAlgError:
            raise RiccatiBlowupError(f"innovation covariance not PD at step {k}", step=k) from None
        K = np.linalg.solve(L.T, np.linalg.solve(L, H @ P)).T
        m_upd = m + K @ (dY[k] - c.A0 * dt - H @ m)
        IKH = np.eye(dx) - K @ H
        P_upd = IKH @ P @ IKH.T + K @ R @ K.T
        means[k + 1] = F @ m_upd + c.a0 * dt
        P_next = F @ P_upd @ F.T + Q
        covs[k + 1] = 0.5 * (P_next + P_next.T)
    return FilterTrajectory(y.grid.copy(), means, covs)


def trajectory_gap(a: FilterTrajectory, b: FilterTrajectory) -> np.ndarray:
    """Per-time W2 distance between two filter trajectories on the same grid."""
    if a.means.shape != b.means.shape:
        raise DimensionError("trajectories have different shapes")
    return w2_batch(a.means, a.covs, b.means, b.covs)


def perturbation_stability(coeffs: CoefficientSet, y: SampledPath, y_perturbed: SampledPath,
                           init: Gaussian) -> tuple[np.ndarray, float]:
    """Run the filter on both paths; return per-time W2 gaps and the sup-norm input gap."""
    check_same_grid(y, y_perturbed)
    gap = trajectory_gap(run_oracle(coeffs, y, init), run_oracle(coeffs, y_perturbed, init))
    return gap, sup_distance(y, y_perturbed)


def lipschitz_ladder(coeffs: CoefficientSet, y: SampledPath, direction: SampledPath,
                     init: Gaussian, eps=None) -> tuple[np.ndarray, np.ndarray]:
    """Output/input gap ratios for ``y + eps * direction`` over a ladder of ``eps``.

    ``direction`` should vanish at time 0 so that perturbations do not move ``Y_0``.
    Returns ``(eps, ratios)``.
    """
    eps = np.logspace(-3, -1, 10) if eps is None else np.asarray(eps, dtype=float)
    base = run_oracle(coeffs, y, init)
    ratios = []
    for e in eps:
        yp = SampledPath(y.grid, y.values + e * direction.values)
        gap = trajectory_gap(base, run_oracle(coeffs, yp, init))
        ratios.append(gap.max() / sup_distance(y, yp))
    return eps, np.array(ratios)


def time_lipschitz_ratio(traj: FilterTrajectory, max_lag: int = 8) -> float:
    """Largest ``W2(f_t, f_s) / |t - s|`` over grid pairs with ``|t - s|`` up to ``max_lag`` steps."""
    dt = traj.grid[1] - traj.grid[0]
    best = 0.0
    for lag in range(1, max_lag + 1):
        gap = w2_batch(traj.means[lag:], traj.covs[lag:], traj.means[:-lag], traj.covs[:-lag])
        best = max(best, float(gap.max()) / (lag * dt))
    return best


def w2_at(traj: FilterTrajectory, k: int, g: Gaussian) -> float:
    return w2(traj.state(k), g)
