"""Partially observed, conditionally Gaussian signal/observation systems.

The signal ``X`` (dimension ``d_X``) and the observation ``Y`` (dimension ``d_Y``) follow

    dX = [a0 + a1 X] dt + b1 dW1 + b2 dW2
    dY = [A0 + A1 X] dt + B1 dW1 + B2 dW2

where every coefficient is a nonanticipative functional of the observed path: it is
called as ``f(t, prefix)`` with ``prefix`` the rows ``y(t_0), ..., y(t_k)`` seen so far.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np

from .errors import AssumptionViolation, ConfigError, DimensionError, DivergenceError
from .gaussian import Gaussian
from .paths import SampledPath, uniform_grid

Coefficient = Callable[[float, np.ndarray], np.ndarray]


class CoefficientValues(NamedTuple):
    a0: np.ndarray
    a1: np.ndarray
    b1: np.ndarray
    b2: np.ndarray
    A0: np.ndarray
    A1: np.ndarray
    B1: np.ndarray
    B2: np.ndarray

    @property
    def BoB(self) -> np.ndarray:
        return self.B1 @ self.B1.T + self.B2 @ self.B2.T

    @property
    def boB(self) -> np.ndarray:
        return self.b1 @ self.B1.T + self.b2 @ self.B2.T

    @property
    def bob(self) -> np.ndarray:
        return self.b1 @ self.b1.T + self.b2 @ self.b2.T


def _const(value) -> Coefficient:
    arr = np.array(value, dtype=float)
    arr.flags.writeable = False
    return lambda t, prefix: arr


@dataclass(frozen=True)
class CoefficientSet:
    """The eight coefficient functionals plus the pointwise checks applied on evaluation.

    ``eps_B`` is the required lower bound on the smallest eigenvalue of ``BoB`` and
    ``L`` (if set) bounds the entries of ``a1`` and ``A1``.  The integrability conditions
    of the continuous-time theory cannot be verified from samples and remain the
    caller's responsibility.
    """

    dx: int
    dy: int
    a0: Coefficient
    a1: Coefficient
    b1: Coefficient
    b2: Coefficient
    A0: Coefficient
    A1: Coefficient
    B1: Coefficient
    B2: Coefficient
    eps_B: float = 1e-8
    L: float | None = None
    constant: bool = False
    name: str = "custom"
    params: dict = field(default_factory=dict)

    def evaluate(self, t: float, prefix: np.ndarray, check: bool = True) -> CoefficientValues:
        prefix = np.asarray(prefix)
        vals = CoefficientValues(
            np.asarray(self.a0(t, prefix), dtype=float).reshape(self.dx),
            np.asarray(self.a1(t, prefix), dtype=float).reshape(self.dx, self.dx),
            np.asarray(self.b1(t, prefix), dtype=float).reshape(self.dx, self.dx),
            np.asarray(self.b2(t, prefix), dtype=float).reshape(self.dx, self.dy),
            np.asarray(self.A0(t, prefix), dtype=float).reshape(self.dy),
            np.asarray(self.A1(t, prefix), dtype=float).reshape(self.dy, self.dx),
            np.asarray(self.B1(t, prefix), dtype=float).reshape(self.dy, self.dx),
            np.asarray(self.B2(t, prefix), dtype=float).reshape(self.dy, self.dy),
        )
        if check:
            self._check(vals, t)
        return vals

    def _check(self, v: CoefficientValues, t: float) -> None:
        lam = np.linalg.eigvalsh(v.BoB)[0]
        if not lam >= self.eps_B:
            raise AssumptionViolation(
                f"BoB is not uniformly non-singular at t={t}: min eigenvalue {lam:.3e} < {self.eps_B:.3e}")
        if self.L is not None:
            worst = max(np.abs(v.a1).max(initial=0.0), np.abs(v.A1).max(initial=0.0))
            if worst > self.L:
                raise AssumptionViolation(f"drift entry {worst:.3e} exceeds bound L={self.L} at t={t}")


def constant_coefficients(a0=None, a1=None, b1=None, b2=None, A0=None, A1=None,
                          B1=None, B2=None, *, dx: int, dy: int, name="lti", **kw) -> CoefficientSet:
    """Time- and path-independent coefficients; omitted ones are zero."""
    def arr(v, shape):
        return np.zeros(shape) if v is None else np.array(v, dtype=float).reshape(shape)
    mats = dict(a0=arr(a0, (dx,)), a1=arr(a1, (dx, dx)), b1=arr(b1, (dx, dx)), b2=arr(b2, (dx, dy)),
                A0=arr(A0, (dy,)), A1=arr(A1, (dy, dx)), B1=arr(B1, (dy, dx)), B2=arr(B2, (dy, dy)))
    params = {k: v.tolist() for k, v in mats.items()}
    return CoefficientSet(dx=dx, dy=dy, constant=True, name=name, params=params,
                          **{k: _const(v) for k, v in mats.items()}, **kw)


def scalar_kalman(a=-1.0, b=1.0, A=1.0, B=1.0) -> CoefficientSet:
    """Scalar linear system ``dX = aX dt + b dW1``, ``dY = AX dt + B dW2``."""
    cs = constant_coefficients(a1=a, b1=b, A1=A, B2=B, dx=1, dy=1, name="scalar-kalman")
    object.__setattr__(cs, "params", {"a": a, "b": b, "A": A, "B": B})
    return cs


def stationary_riccati_scalar(a: float, b: float, A: float, B: float) -> float:
    """Positive root of ``2 a S + b^2 - S^2 A^2 / B^2 = 0``."""
    B = abs(B)
    return (a * B**2 + B * np.sqrt(a**2 * B**2 + A**2 * b**2)) / A**2


def path_dependent(kappa=0.5, gain=1.0, noise=1.0, c=1.0) -> CoefficientSet:
    """Scalar conditionally Gaussian system whose coefficients read the observed path.

    ``a1 = -(1 + kappa tanh(y_t)^2)``, ``b1 = noise``, ``A1 = gain``,
    ``B2 = c (1 + 0.5 sin(y_t)^2)``; ``a0 = 0.5 cos(t) tanh(max_{s<=t} y_s)``.
    """
    def a0(t, p):
        return np.array([0.5 * np.cos(t) * np.tanh(p[:, 0].max())])

    def a1(t, p):
        return np.array([[-(1.0 + kappa * np.tanh(p[-1, 0]) ** 2)]])

    def B2(t, p):
        return np.array([[c * (1.0 + 0.5 * np.sin(p[-1, 0]) ** 2)]])

    zero11 = _const(np.zeros((1, 1)))
    return CoefficientSet(
        dx=1, dy=1, a0=a0, a1=a1, b1=_const([[noise]]), b2=zero11, A0=_const([0.0]),
        A1=_const([[gain]]), B1=zero11, B2=B2, L=1.0 + kappa + abs(gain),
        name="path-dependent", params={"kappa": kappa, "gain": gain, "noise": noise, "c": c})


def random_stable_lti(rng: np.random.Generator, dx: int, dy: int, *, cross: bool = False,
                      min_decay: float = 0.2) -> CoefficientSet:
    """A random linear time-invariant system with Hurwitz ``a1`` and ``BoB >= 0.5 I``.

    With ``cross=False`` the signal and observation noises are independent
    (``boB = 0``).
    """
    M = rng.uniform(-1, 1, (dx, dx))
    S = rng.uniform(-1, 1, (dx, dx))
    a1 = -(M @ M.T / dx + min_decay * np.eye(dx)) + 0.5 * (S - S.T)
    a0 = rng.uniform(-0.5, 0.5, dx)
    b1 = rng.uniform(-1, 1, (dx, dx))
    A1 = rng.uniform(-1, 1, (dy, dx))
    A0 = rng.uniform(-0.5, 0.5, dy)
    G = rng.uniform(-0.5, 0.5, (dy, dy))
    B2 = np.linalg.cholesky(G @ G.T + 0.5 * np.eye(dy))
    B1 = 0.3 * rng.uniform(-1, 1, (dy, dx)) if cross else None
    return constant_coefficients(a0=a0, a1=a1, b1=b1, A0=A0, A1=A1, B1=B1, B2=B2,
                                 dx=dx, dy=dy, name="lti")


PRESETS = {
    "scalar-kalman": scalar_kalman,
    "path-dependent": path_dependent,
    "lti": lambda **kw: constant_coefficients(**kw),
}


def make_preset(name: str, params: dict | None = None) -> CoefficientSet:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown system preset {name!r}; choose from {sorted(PRESETS)}") from None
    try:
        return factory(**(params or {}))
    except TypeError as exc:
        raise ConfigError(f"bad parameters for preset {name!r}: {exc}") from None


@dataclass(frozen=True)
class SimConfig:
    T: float
    steps: int
    seed: int
    x0_law: Gaussian
    y0: np.ndarray

    def __post_init__(self):
        if self.steps < 1 or not self.T > 0:
            raise ConfigError(f"need T > 0 and steps >= 1, got T={self.T}, steps={self.steps}")
        object.__setattr__(self, "y0", np.atleast_1d(np.asarray(self.y0, dtype=float)))

    @property
    def dt(self) -> float:
        return self.T / self.steps


def brownian_increments(rng: np.random.Generator, steps: int, dx: int, dy: int, dt: float):
    """``(dW1, dW2)`` with shapes ``(steps, dx)`` and ``(steps, dy)``.

    Draw order is fixed (one ``(steps, dx + dy)`` block of standard normals) so a seed
    always yields the same noise.
    """
    z = rng.standard_normal((steps, dx + dy)) * np.sqrt(dt)
    return z[:, :dx], z[:, dx:]


def simulate(coeffs: CoefficientSet, cfg: SimConfig, *, check: bool = True,
             noise=None) -> tuple[SampledPath, SampledPath]:
    """Euler-Maruyama simulation of the coupled system.

    Randomness comes from ``numpy.random.default_rng(cfg.seed)`` (PCG64 bit generator,
    ziggurat normals): first ``X_0 ~ x0_law``, then the Brownian increments.  Passing
    ``noise=(x0, dW1, dW2)`` bypasses the generator, which is how fine/coarse grids
    share a driving path.

    Returns
    -------
    x_path, y_path : SampledPath
    """
    dx, dy = coeffs.dx, coeffs.dy
    if cfg.x0_law.dim != dx or cfg.y0.size != dy:
        raise DimensionError("initial law / y0 dimensions do not match the coefficients")
    dt = cfg.dt
    if noise is None:
        rng = np.random.default_rng(cfg.seed)
        x0 = rng.multivariate_normal(cfg.x0_law.mean, cfg.x0_law.cov, method="eigh")
        dW1, dW2 = brownian_increments(rng, cfg.steps, dx, dy, dt)
    else:
        x0, dW1, dW2 = noise
    X = np.empty((cfg.steps + 1, dx))
    Y = np.empty((cfg.steps + 1, dy))
    X[0], Y[0] = x0, cfg.y0
    grid = uniform_grid(cfg.T, cfg.steps)
    cached = coeffs.evaluate(0.0, Y[:1], check=check) if coeffs.constant else None
    for k in range(cfg.steps):
        c = cached or coeffs.evaluate(grid[k], Y[: k + 1], check=check)
        x = X[k]
        X[k + 1] = x + (c.a0 + c.a1 @ x) * dt + c.b1 @ dW1[k] + c.b2 @ dW2[k]
        Y[k + 1] = Y[k] + (c.A0 + c.A1 @ x) * dt + c.B1 @ dW1[k] + c.B2 @ dW2[k]
        if not (np.all(np.isfinite(X[k + 1])) and np.all(np.isfinite(Y[k + 1]))):
            raise DivergenceError(f"simulation diverged at step {k + 1}", step=k + 1)
    return SampledPath(grid, X), SampledPath(grid, Y)
