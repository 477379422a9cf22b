"""Clipped BIC local scores and CPDAG operator score gains."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, Tuple

import numpy as np

from .graphs import DELETE, INSERT, Cpdag, InvalidOperator, Operator, is_valid, neighbors_na

MAX_TRIM_ITER = 50


class InfiniteClip(ValueError):
    """Raised when a finite sensitivity is requested for an unclipped score."""


@dataclass(frozen=True, eq=False)
class Dataset:
    """An ``n x d`` sample with known noise variance."""

    x: np.ndarray
    sigma2: float = 1.0

    def __post_init__(self):
        x = np.ascontiguousarray(np.asarray(self.x, dtype=float))
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError(f"data must be a non-empty 2-D array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("data contains non-finite entries")
        if not self.sigma2 > 0:
            raise ValueError("sigma2 must be positive")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def rows(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.sigma2)


@dataclass(frozen=True)
class ScoreConfig:
    clip: float = math.inf
    penalty_scale: float = 1.0

    def __post_init__(self):
        if not self.clip > 0:
            raise ValueError("clip must be positive (use math.inf for no clipping)")

    @classmethod
    def log_n_over_3(cls, n: int, **kw) -> "ScoreConfig":
        return cls(clip=math.log(n) / 3, **kw)


@dataclass(frozen=True)
class LocalScoreKey:
    target: int
    parent_set: Tuple[int, ...]

    def __post_init__(self):
        ps = tuple(sorted(set(int(p) for p in self.parent_set)))
        if self.target in ps:
            raise ValueError("target cannot be its own parent")
        object.__setattr__(self, "parent_set", ps)


def solve_ols(m: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Least squares via Cholesky on the normal equations, ridge on failure."""
    gram = m.T @ m
    rhs = m.T @ y
    try:
        lower = np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        gram = gram + 1e-10 * max(m.shape[0], 1) * np.eye(gram.shape[0])
        lower = np.linalg.cholesky(gram)
    z = np.linalg.solve(lower, rhs)
    return np.linalg.solve(lower.T, z)


def clipped_loss(resid: np.ndarray, clip: float) -> float:
    return float(np.minimum(resid * resid, clip).sum())


def _trimmed_fit(m: np.ndarray, y: np.ndarray, clip: float) -> Tuple[np.ndarray, float]:
    theta = solve_ols(m, y)
    resid = y - m @ theta
    loss = clipped_loss(resid, clip)
    if math.isinf(clip):
        return theta, loss
    best_theta, best_loss = theta, loss
    active = None
    for _ in range(MAX_TRIM_ITER):
        keep = resid * resid < clip
        if not keep.any():
            break
        if active is not None and np.array_equal(keep, active):
            break
        active = keep
        theta = solve_ols(m[keep], y[keep])
        resid = y - m @ theta
        loss = clipped_loss(resid, clip)
        if loss < best_loss:
            best_theta, best_loss = theta, loss
    return best_theta, best_loss


def _sweep_1d(x: np.ndarray, y: np.ndarray, clip: float) -> np.ndarray:
    """Candidate minimizers of sum_k min((y_k - t x_k)^2, C) over scalar t.

    The objective is a continuous piecewise quadratic whose pieces change
    where a row's squared residual crosses C; each piece is minimized in
    closed form and the few best pieces are returned for exact re-scoring.
    """
    nz = x != 0
    x, y = x[nz], y[nz]
    if x.size == 0:
        return np.zeros(1)
    s = math.sqrt(clip)
    a, b = (y - s) / x, (y + s) / x
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    pos = np.concatenate([lo, hi])
    sign = np.concatenate([np.ones_like(lo), -np.ones_like(hi)])
    xx = np.concatenate([x * x, x * x])
    xy = np.concatenate([x * y, x * y])
    yy = np.concatenate([y * y, y * y])
    order = np.argsort(pos, kind="stable")
    pos, sign = pos[order], sign[order]
    sxx = np.concatenate([[0.0], np.cumsum(sign * xx[order])])
    sxy = np.concatenate([[0.0], np.cumsum(sign * xy[order])])
    syy = np.concatenate([[0.0], np.cumsum(sign * yy[order])])
    cnt = np.concatenate([[0.0], np.cumsum(sign)])
    left = np.concatenate([[-np.inf], pos])
    right = np.concatenate([pos, [np.inf]])
    flat = sxx <= 1e-12 * max(float(np.max(xx)), 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(flat, 0.0, sxy / np.where(flat, 1.0, sxx))
    t = np.clip(t, left, right)
    t = np.where(np.isfinite(t), t, np.where(np.isfinite(left), left, right))
    val = sxx * t * t - 2 * sxy * t + syy + clip * (x.size - cnt)
    best = np.argsort(val, kind="stable")[:4]
    return t[best]


def _vertex_candidates_2d(m: np.ndarray, y: np.ndarray, clip: float) -> np.ndarray:
    """Exact candidates for two parents from the vertices of the strip arrangement.

    Every cell of the arrangement of lines ``m_k . t = y_k +/- sqrt(C)`` has a
    vertex; the active row set of each cell adjacent to a vertex is refit by
    OLS.  Cost is quadratic in the row count.
    """
    n = m.shape[0]
    s = math.sqrt(clip)
    rows = np.repeat(np.arange(n), 2)
    offs = np.tile([-s, s], n)
    normals = m[rows]
    rhs = y[rows] + offs
    i, j = np.triu_indices(rows.size, k=1)
    keep = rows[i] != rows[j]
    i, j = i[keep], j[keep]
    a11, a12 = normals[i, 0], normals[i, 1]
    a21, a22 = normals[j, 0], normals[j, 1]
    det = a11 * a22 - a12 * a21
    ok = np.abs(det) > 1e-12 * (np.abs(a11 * a22) + np.abs(a12 * a21) + 1e-300)
    i, j, det = i[ok], j[ok], det[ok]
    a11, a12, a21, a22 = a11[ok], a12[ok], a21[ok], a22[ok]
    b1, b2 = rhs[i], rhs[j]
    verts = np.stack([(b1 * a22 - a12 * b2) / det, (a11 * b2 - a21 * b1) / det], axis=1)
    resid = y[None, :] - verts @ m.T
    inside = resid * resid < clip
    ri, rj = rows[i], rows[j]
    masks = []
    for in_i in (False, True):
        for in_j in (False, True):
            mk = inside.copy()
            mk[np.arange(len(ri)), ri] = in_i
            mk[np.arange(len(rj)), rj] = in_j
            masks.append(mk)
    if not masks:
        return np.zeros((0, 2))
    mk = np.unique(np.concatenate(masks, axis=0), axis=0).astype(float)
    g11 = mk @ (m[:, 0] ** 2)
    g12 = mk @ (m[:, 0] * m[:, 1])
    g22 = mk @ (m[:, 1] ** 2)
    r1 = mk @ (m[:, 0] * y)
    r2 = mk @ (m[:, 1] * y)
    ridge = 1e-10 * n
    gdet = g11 * g22 - g12 * g12
    bad = gdet <= 1e-12 * (g11 * g22 + 1e-300)
    g11 = np.where(bad, g11 + ridge, g11)
    g22 = np.where(bad, g22 + ridge, g22)
    gdet = g11 * g22 - g12 * g12
    with np.errstate(divide="ignore", invalid="ignore"):
        th = np.stack([(g22 * r1 - g12 * r2) / gdet, (g11 * r2 - g12 * r1) / gdet], axis=1)
    return th[np.all(np.isfinite(th), axis=1)]


EXACT_2D_MAX_ROWS = 60


def fit_clipped_ols(data: Dataset, cfg: ScoreConfig, key: LocalScoreKey) -> Tuple[np.ndarray, float]:
    """Minimize the clipped squared loss for one local regression.

    Iterative trimming from the OLS start, returning the best iterate.  With
    one parent the exact minimizer from a breakpoint sweep is also a
    candidate, and likewise the strip-arrangement vertices with two parents
    and at most ``EXACT_2D_MAX_ROWS`` rows; in those cases the result is the
    global minimum.
    """
    y = data.x[:, key.target]
    if not key.parent_set:
        return np.zeros(0), clipped_loss(y, cfg.clip)
    m = data.x[:, list(key.parent_set)]
    theta, loss = _trimmed_fit(m, y, cfg.clip)
    if math.isinf(cfg.clip):
        return theta, loss
    p = m.shape[1]
    if p == 1:
        cands = _sweep_1d(m[:, 0], y, cfg.clip)[:, None]
    elif p == 2 and data.n <= EXACT_2D_MAX_ROWS:
        cands = _vertex_candidates_2d(m, y, cfg.clip)
    else:
        return theta, loss
    if cands.size:
        losses = np.minimum((y[None, :] - cands @ m.T) ** 2, cfg.clip).sum(axis=1)
        k = int(np.argmin(losses))
        if losses[k] < loss:
            theta, loss = cands[k], float(losses[k])
    return theta, loss


def local_clipped_bic(data: Dataset, cfg: ScoreConfig, key: LocalScoreKey) -> float:
    _check_key(data, key)
    _, loss = fit_clipped_ols(data, cfg, key)
    n = data.n
    return -loss / (n * data.sigma2) - cfg.penalty_scale * len(key.parent_set) * math.log(n) / n


def local_score_sensitivity(data: Dataset, cfg: ScoreConfig) -> float:
    if math.isinf(cfg.clip):
        raise InfiniteClip("an unclipped score has unbounded sensitivity")
    return cfg.clip / (data.n * data.sigma2)


def _check_key(data: Dataset, key: LocalScoreKey) -> None:
    for v in (key.target, *key.parent_set):
        if not 0 <= v < data.d:
            raise IndexError(f"node {v} out of range for d={data.d}")


@dataclass
class Scorer:
    """Memoizing local-score evaluator for one dataset and config."""

    data: Dataset
    cfg: ScoreConfig
    _cache: Dict[Tuple[int, FrozenSet[int]], float] = field(default_factory=dict, repr=False)

    def local(self, target: int, parents: Iterable[int]) -> float:
        ps = frozenset(parents)
        k = (target, ps)
        val = self._cache.get(k)
        if val is None:
            val = local_clipped_bic(self.data, self.cfg, LocalScoreKey(target, tuple(ps)))
            self._cache[k] = val
        return val

    def graph_score(self, parents_of) -> float:
        """Decomposable score given a callable or sequence of parent sets."""
        get = parents_of if callable(parents_of) else parents_of.__getitem__
        return sum(self.local(j, get(j)) for j in range(self.data.d))

    def gain(self, g: Cpdag, op: Operator, check: bool = False) -> float:
        if check and not is_valid(g, op):
            raise InvalidOperator(f"{op} is not valid for this graph")
        a, b = op.a, op.b
        pa_b = g.parents(b)
        na = neighbors_na(g, a, b)
        if op.kind == INSERT:
            base = na | op.aux | pa_b
            return self.local(b, base | {a}) - self.local(b, base)
        if op.kind == DELETE:
            base = (na - op.aux) | (pa_b - {a})
            return self.local(b, base) - self.local(b, base | {a})
        raise InvalidOperator(f"unknown operator kind {op.kind!r}")

    def __len__(self):
        return len(self._cache)


def score_gain(data: Dataset, cfg: ScoreConfig, g: Cpdag, op: Operator) -> float:
    return Scorer(data, cfg).gain(g, op, check=True)
