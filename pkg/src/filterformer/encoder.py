"""Pathwise attention: similarity scores against reference paths, positional samples,
and their product mixed by a linear read-out.

Two constructive builders produce frozen, lossless encoders:

* :func:`build_pl_encoder` for piecewise-linear paths with known knots (samples the
  knots), and
* :func:`build_finite_encoder` for a finite path set (distance vector to every reference
  path, random Gaussian projection, ReLU lift onto a hyperplane, softmax).
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, InvalidPathError, RetryBudgetExhausted
from .paths import PLDomainSpec, SampledPath, frozen_values, read_path_csv, sup_distance, write_path_csv


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_right_inverse(v: np.ndarray) -> np.ndarray:
    """``R(v) = (ln v_i - ln v_last + 1)_i``; inverts softmax on points whose last entry is 1."""
    v = np.asarray(v, dtype=float)
    return np.log(v) - np.log(v[..., -1:]) + 1.0


def relu(z):
    return np.maximum(z, 0.0)


@dataclass(frozen=True, eq=False)
class SimScoreParams:
    """Reference paths and the score network ``Softmax(A ReLU(B dists + b) + a)``.

    ``B`` is ``h x r`` and ``A`` is ``s x h``; ``h`` is the hidden width of the score
    network (``h = s`` in the plain definition, ``h = 2(s - 1)`` for the finite-domain
    construction).
    """

    refs: tuple[SampledPath, ...]
    B: np.ndarray
    b: np.ndarray
    A: np.ndarray
    a: np.ndarray

    def __post_init__(self):
        refs = tuple(self.refs)
        B, b = np.atleast_2d(np.asarray(self.B, float)), np.asarray(self.b, float).ravel()
        A, a = np.atleast_2d(np.asarray(self.A, float)), np.asarray(self.a, float).ravel()
        if B.shape != (b.size, len(refs)) or A.shape != (a.size, b.size):
            raise DimensionError(
                f"score shapes inconsistent: B{B.shape} b{b.shape} A{A.shape} a{a.shape}, {len(refs)} refs")
        object.__setattr__(self, "refs", refs)
        for k, v in dict(B=B, b=b, A=A, a=a).items():
            object.__setattr__(self, k, v)
        ref_vals = np.stack([r.values for r in refs]) if refs else np.zeros((0, 1, 1))
        object.__setattr__(self, "_ref_values", ref_vals)

    @property
    def n_refs(self) -> int:
        return len(self.refs)

    @property
    def width(self) -> int:
        return self.a.size


@dataclass(frozen=True, eq=False)
class PosEncParams:
    """``U (y(t_1); ...; y(t_q)) + V`` with ``U: p x q`` and ``V: p x d_Y``."""

    query_times: tuple[float, ...]
    U: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        qt = tuple(float(t) for t in self.query_times)
        if any(b <= a for a, b in zip(qt, qt[1:])) or (qt and qt[0] < 0):
            raise InvalidPathError("query times must be strictly increasing and nonnegative")
        U = np.asarray(self.U, float).reshape(-1, len(qt)) if qt else np.asarray(self.U, float)
        V = np.atleast_2d(np.asarray(self.V, float))
        if U.ndim != 2 or U.shape[0] != V.shape[0]:
            raise DimensionError(f"U{U.shape} and V{V.shape} disagree")
        object.__setattr__(self, "query_times", qt)
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)


@dataclass(frozen=True, eq=False)
class AttentionParams:
    sim: SimScoreParams
    pos: PosEncParams
    C: np.ndarray
    kind: str = "custom"

    def __post_init__(self):
        C = np.atleast_2d(np.asarray(self.C, float))
        s, dY = self.sim.width, self.pos.V.shape[1]
        if self.pos.V.shape[0] != s:
            raise DimensionError(f"score width {s} != positional rows {self.pos.V.shape[0]}")
        if C.shape[1] != s * dY:
            raise DimensionError(f"C has {C.shape[1]} columns, expected {s * dY}")
        object.__setattr__(self, "C", C)

    @property
    def encoding_dim(self) -> int:
        """Output length minus one (the time coordinate)."""
        return self.C.shape[0]


def _distances(p: SimScoreParams, values: np.ndarray) -> np.ndarray:
    """Sup distances from ``values`` (grid rows) to each reference path."""
    if not p.refs:
        return np.zeros(0)
    if p._ref_values.shape[1:] != values.shape:
        raise InvalidPathError("path is not on the reference grid")
    diff = p._ref_values - values[None]
    return np.sqrt(np.sum(diff * diff, axis=2)).max(axis=1)


def score_logits(p: SimScoreParams, dists: np.ndarray) -> np.ndarray:
    """Pre-softmax score ``A ReLU(B dists + b) + a``; batched over leading axes."""
    return relu(dists @ p.B.T + p.b) @ p.A.T + p.a


def sim_score(p: SimScoreParams, y: SampledPath | np.ndarray) -> np.ndarray:
    values = y.values if isinstance(y, SampledPath) else np.asarray(y, float)
    return softmax(score_logits(p, _distances(p, values)))


def _query_indices(p: PosEncParams, grid: np.ndarray) -> np.ndarray:
    dt = grid[1] - grid[0]
    idx = np.rint(np.array(p.query_times) / dt).astype(int)
    if np.any(idx < 0) or np.any(idx >= grid.size) or np.any(
            np.abs(grid[np.clip(idx, 0, grid.size - 1)] - p.query_times) > 1e-9 * max(1.0, grid[-1])):
        raise InvalidPathError("positional query time is not on the grid")
    return idx


def pos_encoding(p: PosEncParams, y: SampledPath) -> np.ndarray:
    """``p x d_Y`` matrix ``U (stacked samples) + V``."""
    if not p.query_times:
        return p.V.copy()
    idx = _query_indices(p, y.grid)
    return p.U @ y.values[idx] + p.V


def attn(p: AttentionParams, t: float, y: SampledPath) -> np.ndarray:
    """Encode ``(t, y)`` as ``(t, C vec(sim(y_t) * pos(y_t)))``, ``y_t`` the path frozen at ``t``.

    ``vec`` stacks columns (column-major) and ``*`` scales row ``i`` of the positional
    matrix by score ``i``.
    """
    k = y.index_of(t)
    frozen = SampledPath(y.grid, frozen_values(y.values, k))
    prod = sim_score(p.sim, frozen)[:, None] * pos_encoding(p.pos, frozen)
    return np.concatenate([[float(t)], p.C @ prod.ravel(order="F")])


def attn_all_times(p: AttentionParams, y: SampledPath, indices=None) -> np.ndarray:
    """Rows ``attn(t_k, y)`` for every grid index ``k`` (or the given ``indices``).

    Equivalent to calling :func:`attn` per time; the distance over ``[0, t_k]`` comes
    from a running maximum so each row costs one pass over the future segment.
    """
    indices = np.arange(len(y)) if indices is None else np.asarray(indices)
    vals = y.values
    refs = p.sim._ref_values  # (r, n, d)
    if not p.sim.refs:
        refs = np.zeros((0,) + vals.shape)
    elif refs.shape[1:] != vals.shape:
        raise InvalidPathError("path is not on the reference grid")
    past = np.sqrt(np.sum((refs - vals[None]) ** 2, axis=2))  # (r, n)
    past = np.maximum.accumulate(past, axis=1)
    dists = np.empty((indices.size, p.sim.n_refs))
    for row, k in enumerate(indices):
        future = np.sqrt(np.sum((refs[:, k:, :] - vals[k]) ** 2, axis=2)).max(axis=1)
        dists[row] = np.maximum(past[:, k], future)
    scores = softmax(score_logits(p.sim, dists))  # (m, s)
    out = np.empty((indices.size, 1 + p.encoding_dim))
    out[:, 0] = y.grid[indices]
    qidx = _query_indices(p.pos, y.grid) if p.pos.query_times else None
    for row, k in enumerate(indices):
        if qidx is None:
            pos = p.pos.V
        else:
            pos = p.pos.U @ vals[np.minimum(qidx, k)] + p.pos.V
        out[row, 1:] = p.C @ (scores[row][:, None] * pos).ravel(order="F")
    return out


def build_pl_encoder(spec: PLDomainSpec, grid: np.ndarray) -> AttentionParams:
    """Lossless encoder for piecewise-linear paths with the knots of ``spec``.

    Score parameters are all zero, so every score equals ``1 / P``; the positional
    encoding samples the ``P`` knots after ``t_0`` and ``C = P * I`` undoes the uniform
    score.  At ``t = T`` the output is ``(T, vec(knot values))``.
    """
    P, dY = spec.pieces, spec.dim
    sim = SimScoreParams(refs=(), B=np.zeros((P, 0)), b=np.zeros(P), A=np.zeros((P, P)), a=np.zeros(P))
    pos = PosEncParams(query_times=spec.knots[1:], U=np.eye(P), V=np.zeros((P, dY)))
    _query_indices(pos, grid)
    return AttentionParams(sim=sim, pos=pos, C=P * np.eye(P * dY), kind="pl")


def finite_score_dim(n_refs: int) -> int:
    """Projection dimension ``ceil(48 ln r)`` used by the finite-domain construction."""
    return max(1, math.ceil(48.0 * math.log(n_refs)))


def kuratowski(paths, refs) -> np.ndarray:
    """Matrix of sup distances ``[i, n] = ||paths[i] - refs[n]||``."""
    return np.array([[sup_distance(p, q) for q in refs] for p in paths])


def distortion_band(n_refs: int) -> tuple[float, float]:
    return 2 ** -0.5 - 0.05, math.sqrt(1.5 * n_refs) + 0.05


def embedding_distortion(kur: np.ndarray, proj: np.ndarray, sup_d: np.ndarray) -> tuple[float, float]:
    """Min and max of ``|proj(k_i) - proj(k_j)| / ||y_i - y_j||`` over distinct pairs."""
    emb = kur @ proj.T
    i, j = np.triu_indices(len(kur), 1)
    ratios = np.linalg.norm(emb[i] - emb[j], axis=1) / sup_d[i, j]
    return float(ratios.min()), float(ratios.max())


def build_finite_encoder(training_paths, rng: np.random.Generator, max_retries: int = 64) -> AttentionParams:
    """Lossless encoder for a finite path set.

    A path maps to its distance vector to every training path, then through a Gaussian
    random projection ``J`` (``k = ceil(48 ln r)`` rows, entries ``N(0, 1/k)``).  The
    score network ``A ReLU(B u) + a`` with ``B = (J; -J)``, ``A = (I, -I; 0)`` and
    ``a = e_last`` reproduces ``(J u, 1)`` exactly; softmax is injective on that
    hyperplane.  A projection whose pairwise distortion on the training set falls
    outside ``[2^{-1/2} - 0.05, (3r/2)^{1/2} + 0.05]`` is redrawn.

    Raises
    ------
    InvalidPathError
        Fewer than two paths, or two coincident paths.
    RetryBudgetExhausted
        No acceptable projection in ``max_retries`` draws.
    """
    refs = tuple(training_paths)
    r = len(refs)
    if r < 2:
        raise InvalidPathError("finite encoder needs at least two training paths")
    kur = kuratowski(refs, refs)
    off = kur[~np.eye(r, dtype=bool)]
    if np.any(off <= 0):
        raise InvalidPathError("training paths must be pairwise distinct")
    k = finite_score_dim(r)
    lo, hi = distortion_band(r)
    for _ in range(max_retries):
        J = rng.standard_normal((k, r)) / math.sqrt(k)
        dmin, dmax = embedding_distortion(kur, J, kur)
        if lo <= dmin and dmax <= hi:
            break
    else:
        raise RetryBudgetExhausted(f"no projection within distortion band after {max_retries} draws")
    s = k + 1
    B = np.vstack([J, -J])
    A = np.zeros((s, 2 * k))
    A[:k, :k] = np.eye(k)
    A[:k, k:] = -np.eye(k)
    a = np.zeros(s)
    a[-1] = 1.0
    dY = refs[0].dim
    sim = SimScoreParams(refs=refs, B=B, b=np.zeros(2 * k), A=A, a=a)
    pos = PosEncParams(query_times=(), U=np.zeros((s, 0)), V=np.ones((s, dY)))
    # C keeps the first of the d_Y identical copies of each score
    C = np.zeros((s, s * dY))
    C[np.arange(s), np.arange(s)] = 1.0
    return AttentionParams(sim=sim, pos=pos, C=C, kind="finite")


def projection_matrix(p: AttentionParams) -> np.ndarray:
    """Recover ``J`` from a finite-domain encoder (the top half of ``B``)."""
    k = p.sim.B.shape[0] // 2
    return p.sim.B[:k]


def pre_softmax_embedding(p: AttentionParams, y: SampledPath) -> np.ndarray:
    """``J (||y - y_n||)_n`` for a finite-domain encoder."""
    return projection_matrix(p) @ _distances(p.sim, y.values)


def _path_digest(p: SampledPath) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(p.grid).tobytes())
    h.update(np.ascontiguousarray(p.values).tobytes())
    return h.hexdigest()


def encoder_to_json(p: AttentionParams, ref_dir: str | Path, ref_prefix="ref") -> dict:
    """Serialisable document; reference paths are written as CSVs next to it."""
    ref_dir = Path(ref_dir)
    ref_dir.mkdir(parents=True, exist_ok=True)
    refs = []
    for i, r in enumerate(p.sim.refs):
        name = f"{ref_prefix}_{i:04d}.csv"
        write_path_csv(r, ref_dir / name)
        refs.append({"file": name, "sha256": _path_digest(r)})
    return {
        "kind": p.kind,
        "refs": refs,
        "B": p.sim.B.tolist(), "b": p.sim.b.tolist(), "A": p.sim.A.tolist(), "a": p.sim.a.tolist(),
        "query_times": list(p.pos.query_times), "U": p.pos.U.tolist(), "V": p.pos.V.tolist(),
        "C": p.C.tolist(),
    }


def encoder_from_json(doc: dict, ref_dir: str | Path) -> AttentionParams:
    ref_dir = Path(ref_dir)
    refs = []
    for entry in doc["refs"]:
        path = read_path_csv(ref_dir / entry["file"])
        if _path_digest(path) != entry["sha256"]:
            raise InvalidPathError(f"reference path {entry['file']} does not match its hash")
        refs.append(path)
    n_q = len(doc["query_times"])
    U = np.array(doc["U"], float).reshape(len(doc["V"]), n_q)
    sim = SimScoreParams(refs=tuple(refs), B=np.array(doc["B"], float).reshape(len(doc["b"]), len(refs)),
                         b=doc["b"], A=doc["A"], a=doc["a"])
    pos = PosEncParams(query_times=tuple(doc["query_times"]), U=U, V=doc["V"])
    return AttentionParams(sim=sim, pos=pos, C=doc["C"], kind=doc.get("kind", "custom"))


def save_encoder(p: AttentionParams, path: str | Path) -> None:
    path = Path(path)
    doc = encoder_to_json(p, path.parent, ref_prefix=path.stem + "_ref")
    path.write_text(json.dumps(doc))


def load_encoder(path: str | Path) -> AttentionParams:
    path = Path(path)
    return encoder_from_json(json.loads(path.read_text()), path.parent)
