"""The composite model ``g-attn o MLP o attn`` and its training against oracle targets.

The encoder is frozen; the MLP and the decoder atoms are trained by full-batch gradient
descent on the mean squared chart distance

    loss = mean_i ( |m_i - mu_i|^2 + ||S_i - Sigma_i||_F^2 )

between predicted ``N(m_i, S_i)`` and target ``N(mu_i, Sigma_i)``.  Evaluation uses the
2-Wasserstein distance.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .decoder import GeoAttentionParams, mix, project_simplex, project_simplex_vjp
from .encoder import AttentionParams, attn, attn_all_times, encoder_to_json, encoder_from_json
from .errors import ConfigError, DimensionError, DivergenceError
from .gaussian import Gaussian, w2_batch
from .mlp import MLPParams, backward_batch, forward_batch, init_mlp
from .oracle import FilterTrajectory, run_oracle
from .paths import SampledPath
from .sde import CoefficientSet

log = logging.getLogger(__name__)


@dataclass(eq=False)
class FilterformerModel:
    encoder: AttentionParams
    mlp: MLPParams
    decoder: GeoAttentionParams

    def __post_init__(self):
        if self.mlp.dims[0] != self.encoder.encoding_dim + 1:
            raise DimensionError(
                f"MLP input width {self.mlp.dims[0]} != encoding dim + 1 = {self.encoder.encoding_dim + 1}")
        if self.mlp.dims[-1] != self.decoder.n_atoms:
            raise DimensionError(f"MLP output width {self.mlp.dims[-1]} != {self.decoder.n_atoms} atoms")

    def copy(self) -> FilterformerModel:
        return FilterformerModel(self.encoder, self.mlp.copy(), self.decoder.copy())


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    epochs: int = 1000
    batch_size: int | None = None  # None: full batch
    seed: int = 0
    optimizer: str = "momentum"  # "gd" | "momentum"
    momentum: float = 0.9
    loss_tolerance: float = 0.0
    log_every: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.epochs < 0:
            raise ConfigError("learning rate and epochs must be nonnegative")
        if self.optimizer not in ("gd", "momentum"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must lie in [0, 1)")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigError("batch size must be positive")


@dataclass(eq=False)
class FilteringDataset:
    """Samples ``(t_k, y, target)`` stored as index arrays into a list of paths.

    ``features`` caches the frozen encoder's output per sample once an encoder is
    attached with :meth:`encode`.
    """

    paths: list[SampledPath]
    path_index: np.ndarray
    time_index: np.ndarray
    target_means: np.ndarray
    target_covs: np.ndarray
    features: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return self.path_index.size

    def time(self, i: int) -> float:
        return float(self.paths[self.path_index[i]].grid[self.time_index[i]])

    @property
    def times(self) -> np.ndarray:
        return np.array([self.paths[p].grid[k] for p, k in zip(self.path_index, self.time_index)])

    def sample(self, i: int) -> tuple[float, SampledPath, Gaussian]:
        return (self.time(i), self.paths[self.path_index[i]],
                Gaussian(self.target_means[i], self.target_covs[i]))

    def __iter__(self):
        return (self.sample(i) for i in range(len(self)))

    def encode(self, encoder: AttentionParams) -> FilteringDataset:
        feats = np.empty((len(self), encoder.encoding_dim + 1))
        for p, path in enumerate(self.paths):
            rows = np.flatnonzero(self.path_index == p)
            if rows.size:
                feats[rows] = attn_all_times(encoder, path, self.time_index[rows])
        self.features = feats
        return self

    def subset(self, rows) -> FilteringDataset:
        rows = np.asarray(rows)
        return FilteringDataset(self.paths, self.path_index[rows], self.time_index[rows],
                                self.target_means[rows], self.target_covs[rows],
                                None if self.features is None else self.features[rows])


def dataset_from_trajectories(paths, trajectories: list[FilterTrajectory], time_indices=None) -> FilteringDataset:
    """One sample per (path, grid time); ``time_indices`` restricts the times used."""
    pi, ti, means, covs = [], [], [], []
    for p, (path, traj) in enumerate(zip(paths, trajectories)):
        ks = np.arange(len(path)) if time_indices is None else np.asarray(time_indices)
        pi.append(np.full(ks.size, p))
        ti.append(ks)
        means.append(traj.means[ks])
        covs.append(traj.covs[ks])
    return FilteringDataset(list(paths), np.concatenate(pi), np.concatenate(ti),
                            np.concatenate(means), np.concatenate(covs))


def build_dataset(coeffs: CoefficientSet, paths, init: Gaussian, time_indices=None) -> FilteringDataset:
    trajs = [run_oracle(coeffs, y, init) for y in paths]
    return dataset_from_trajectories(paths, trajs, time_indices)


def farthest_point_atoms(means: np.ndarray, covs: np.ndarray, n_atoms: int) -> np.ndarray:
    """Indices of ``n_atoms`` targets chosen by farthest-point traversal in the chart metric."""
    X = np.concatenate([means, covs.reshape(len(covs), -1)], axis=1)
    centroid = X.mean(axis=0)
    chosen = [int(np.argmax(np.sum((X - centroid) ** 2, axis=1)))]
    d = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    while len(chosen) < min(n_atoms, len(X)):
        nxt = int(np.argmax(d))
        chosen.append(nxt)
        d = np.minimum(d, np.sum((X - X[nxt]) ** 2, axis=1))
    while len(chosen) < n_atoms:
        chosen.append(chosen[len(chosen) % len(X)])
    return np.array(chosen)


def _psd_factor(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(S)
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def init_model(encoder: AttentionParams, dataset: FilteringDataset, hidden: list[int], n_atoms: int,
               rng: np.random.Generator, activation: str = "tanh") -> FilterformerModel:
    """Seeded initialisation.

    MLP weights are Glorot/He Gaussian; the first layer is rescaled so each input feature
    enters standardised over the dataset.  Atoms start at ``n_atoms`` dataset targets
    spread out by farthest-point traversal, with ``A_n`` the symmetric square root of the
    target covariance.
    """
    dims = [encoder.encoding_dim + 1] + list(hidden) + [n_atoms]
    mlp = init_mlp(dims, rng, activation)
    if dataset.features is None:
        dataset.encode(encoder)
    mu = dataset.features.mean(axis=0)
    sd = dataset.features.std(axis=0)
    sd = np.where(sd > 1e-12, sd, 1.0)
    mlp.weights[0] = mlp.weights[0] / sd
    mlp.biases[0] = mlp.biases[0] - mlp.weights[0] @ mu
    idx = farthest_point_atoms(dataset.target_means, dataset.target_covs, n_atoms)
    factors = np.stack([_psd_factor(dataset.target_covs[i]) for i in idx])
    decoder = GeoAttentionParams(dataset.target_means[idx].copy(), factors)
    return FilterformerModel(encoder, mlp, decoder)


def predict(m: FilterformerModel, t: float, y: SampledPath) -> Gaussian:
    """``g-attn(decoder, MLP(attn(encoder, t, y)))``."""
    v, _ = forward_batch(m.mlp, attn(m.encoder, t, y)[None])
    means, covs = mix(m.decoder, project_simplex(v))
    return Gaussian(means[0], covs[0])


def predict_features(m: FilterformerModel, features: np.ndarray):
    """Batched prediction from precomputed encoder features: ``(means, covs, weights)``."""
    v, _ = forward_batch(m.mlp, features)
    W = project_simplex(v)
    means, covs = mix(m.decoder, W)
    return means, covs, W


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    atom_means: np.ndarray
    atom_factors: np.ndarray


def loss_and_grad(m: FilterformerModel, features: np.ndarray, target_means: np.ndarray,
                  target_covs: np.ndarray, need_grad: bool = True):
    """Mean squared chart distance over the batch and its gradient (encoder frozen)."""
    n = features.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    v, cache = forward_batch(m.mlp, features)
    W = project_simplex(v)
    grams = m.decoder.grams()
    means = W @ m.decoder.means
    covs = np.einsum("in,njk->ijk", W, grams)
    dm = means - target_means
    dS = covs - target_covs
    loss = float((np.sum(dm * dm) + np.sum(dS * dS)) / n)
    if not need_grad:
        return loss, None
    gm = 2.0 * dm / n
    gS = 2.0 * dS / n
    gW = gm @ m.decoder.means.T + np.einsum("ijk,njk->in", gS, grams)
    g_atom_means = W.T @ gm
    gG = np.einsum("in,ijk->njk", W, gS)
    g_factors = m.decoder.factors @ (gG + np.swapaxes(gG, 1, 2))
    gv = project_simplex_vjp(W, gW)
    dWs, dbs, _ = backward_batch(m.mlp, cache, gv)
    return loss, Gradients(dWs, dbs, g_atom_means, g_factors)


def loss(m: FilterformerModel, batch: FilteringDataset):
    """Loss and gradients on a dataset slice (encodes it if needed)."""
    if batch.features is None:
        batch.encode(m.encoder)
    return loss_and_grad(m, batch.features, batch.target_means, batch.target_covs)


def _param_list(m: FilterformerModel):
    return m.mlp.weights + m.mlp.biases + [m.decoder.means, m.decoder.factors]


def _grad_list(g: Gradients):
    return g.weights + g.biases + [g.atom_means, g.atom_factors]


def train(m: FilterformerModel, dataset: FilteringDataset, cfg: TrainConfig):
    """Gradient descent (plain or heavy-ball momentum) on the chart loss.

    Returns ``(trained_model, history)``; ``history[e]`` is the full-dataset loss before
    update ``e`` and the last entry is the final loss.  The input model is not modified.

    Raises
    ------
    DivergenceError
        If the loss becomes non-finite.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.features is None:
        dataset.encode(m.encoder)
    model = m.copy()
    params = _param_list(model)
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(cfg.seed)
    n = len(dataset)
    F, TM, TC = dataset.features, dataset.target_means, dataset.target_covs
    history = []
    for epoch in range(cfg.epochs):
        if cfg.batch_size is None or cfg.batch_size >= n:
            batches = [slice(None)]
        else:
            order = rng.permutation(n)
            batches = [order[i:i + cfg.batch_size] for i in range(0, n, cfg.batch_size)]
        for bi, rows in enumerate(batches):
            value, g = loss_and_grad(model, F[rows], TM[rows], TC[rows])
            if bi == 0 and isinstance(rows, slice):
                history.append(value)
            if not math.isfinite(value):
                raise DivergenceError(f"training loss is not finite at epoch {epoch}", step=epoch)
            for p, v, gp in zip(params, velocity, _grad_list(g)):
                if cfg.optimizer == "momentum":
                    v *= cfg.momentum
                    v -= cfg.learning_rate * gp
                    p += v
                else:
                    p -= cfg.learning_rate * gp
        if cfg.batch_size is not None and cfg.batch_size < n:
            history.append(loss_and_grad(model, F, TM, TC, need_grad=False)[0])
        if cfg.log_every and epoch % cfg.log_every == 0:
            log.info("epoch %d loss %.3e", epoch, history[-1])
        if history[-1] <= cfg.loss_tolerance:
            break
    final = loss_and_grad(model, F, TM, TC, need_grad=False)[0]
    if not math.isfinite(final):
        raise DivergenceError("training loss is not finite after the last update", step=cfg.epochs)
    history.append(final)
    return model, history


@dataclass
class EvalReport:
    sup_w2: float
    mean_w2: float
    table: list[tuple[int, float, float]]  # (sample id, t, w2)

    @property
    def n(self) -> int:
        return len(self.table)

    def summary(self) -> dict:
        return {"schema": 1, "sup_w2": self.sup_w2, "mean_w2": self.mean_w2, "n": self.n,
                "note": "W2 bounds W_p for every p <= 2"}


def evaluate(m: FilterformerModel, dataset: FilteringDataset) -> EvalReport:
    """Largest and mean ``W2(prediction, target)`` over the dataset, plus the per-sample table."""
    if dataset.features is None:
        dataset.encode(m.encoder)
    means, covs, _ = predict_features(m, dataset.features)
    gaps = w2_batch(means, covs, dataset.target_means, dataset.target_covs)
    times = dataset.times
    table = [(i, float(times[i]), float(gaps[i])) for i in range(len(dataset))]
    return EvalReport(float(gaps.max()), float(gaps.mean()), table)


def model_to_json(m: FilterformerModel, ref_dir: str | Path) -> dict:
    return {"schema": 1, "encoder": encoder_to_json(m.encoder, ref_dir, ref_prefix="encoder_ref"),
            "mlp": m.mlp.to_json(), "decoder": m.decoder.to_json()}


def save_model(m: FilterformerModel, path: str | Path) -> None:
    path = Path(path)
    path.write_text(json.dumps(model_to_json(m, path.parent)))


def load_model(path: str | Path) -> FilterformerModel:
    path = Path(path)
    doc = json.loads(path.read_text())
    return FilterformerModel(encoder_from_json(doc["encoder"], path.parent),
                             MLPParams.from_json(doc["mlp"]), GeoAttentionParams.from_json(doc["decoder"]))
