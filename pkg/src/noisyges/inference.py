"""Effect estimation on a selected graph with naive and
max-information-corrected confidence intervals."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import FrozenSet, Optional, Tuple, Union

import numpy as np
from scipy.special import ndtri_exp

from . import graphs as gr
from .graphs import Cpdag, Dag
from .mechanisms import RngStream, max_info_bound
from .scoring import Dataset, solve_ols

GAMMA_GRID_SIZE = 1000
GAMMA_GRID_FLOOR = 1e-12

REPORT_FIELDS = ("i", "j", "adjustment", "beta_hat", "se", "alpha", "alpha_tilde",
                 "naive_lo", "naive_hi", "corr_lo", "corr_hi")


class NoSuchEdge(ValueError):
    pass


class ChunkTooSmall(ValueError):
    pass


@dataclass(frozen=True)
class EffectTarget:
    i: int
    j: int
    adjustment: FrozenSet[int] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "adjustment", frozenset(int(a) for a in self.adjustment))
        if self.i == self.j:
            raise ValueError("cause and outcome must differ")
        if self.i in self.adjustment or self.j in self.adjustment:
            raise ValueError("adjustment set may not contain the cause or outcome")


@dataclass(frozen=True)
class CorrectionInputs:
    n: int
    eps_total: float
    alpha: float = 0.05
    gamma: Optional[float] = None
    log_arg_two: bool = True

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.gamma is not None and not 0 < self.gamma < self.alpha:
            raise ValueError("gamma must lie in (0, alpha)")
        if not self.eps_total >= 0:
            raise ValueError("eps_total must be non-negative")
        if self.n < 1:
            raise ValueError("n must be >= 1")


@dataclass(frozen=True)
class EffectReport:
    target: EffectTarget
    beta_hat: float
    se: float
    naive_interval: Tuple[float, float]
    corrected_interval: Tuple[float, float]
    alpha: float
    alpha_tilde: float
    log_alpha_tilde: float = field(default=math.nan, compare=False)
    ridge_fallback: bool = field(default=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "i": self.target.i,
            "j": self.target.j,
            "adjustment": sorted(self.target.adjustment),
            "beta_hat": self.beta_hat,
            "se": self.se,
            "alpha": self.alpha,
            "alpha_tilde": self.alpha_tilde,
            "naive_lo": self.naive_interval[0],
            "naive_hi": self.naive_interval[1],
            "corr_lo": self.corrected_interval[0],
            "corr_hi": self.corrected_interval[1],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def z_upper(log_tail: float) -> float:
    """z with P(Z > z) = exp(log_tail); stays finite far below float underflow."""
    return float(-ndtri_exp(log_tail))


def z_two_sided(alpha: float = None, log_alpha: float = None) -> float:
    """z_{1 - alpha/2}, from alpha or its logarithm."""
    if log_alpha is None:
        log_alpha = math.log(alpha)
    return z_upper(log_alpha - math.log(2.0))


def extension(g: Union[Cpdag, Dag]) -> Dag:
    return g if isinstance(g, Dag) else gr.pdag_to_dag(g)


def choose_adjustment(g: Union[Cpdag, Dag], i: int, j: int) -> EffectTarget:
    """Target for edge i -> j with the cause's parents as adjustment set.

    Parents are read from the deterministic consistent extension of ``g``.
    """
    dag = extension(g)
    if i not in dag.parents[j]:
        raise NoSuchEdge(f"no edge {i}->{j} in the consistent extension")
    return EffectTarget(i, j, dag.parents[i])


def _ols_fit(data: Dataset, target: EffectTarget, intercept: bool = False):
    cols = [target.i] + sorted(target.adjustment)
    m = data.x[:, cols]
    if intercept:
        m = np.column_stack([m, np.ones(data.n)])
    p = m.shape[1]
    if data.n <= p + 1:
        raise ValueError(f"need n > {p + 1} rows, got {data.n}")
    y = data.x[:, target.j]
    gram = m.T @ m
    ridge = False
    try:
        np.linalg.cholesky(gram)
    except np.linalg.LinAlgError:
        ridge = True
        gram = gram + 1e-10 * data.n * np.eye(p)
    coef = solve_ols(m, y)
    resid = y - m @ coef
    sigma2 = float(resid @ resid) / (data.n - p)
    cov = np.linalg.inv(gram)
    se = math.sqrt(max(sigma2 * cov[0, 0], 0.0))
    return float(coef[0]), se, ridge


def ols_effect(data: Dataset, target: EffectTarget, intercept: bool = False) -> Tuple[float, float]:
    """OLS coefficient of the cause in the regression of outcome on cause and
    adjustment set, with its classical standard error."""
    beta, se, _ = _ols_fit(data, target, intercept)
    return beta, se


def log_corrected_alpha(ci: CorrectionInputs) -> Tuple[float, float]:
    """(log alpha_tilde, gamma) maximizing (alpha - gamma) exp(-I_gamma)."""
    alpha = ci.alpha
    if ci.eps_total == 0:
        return math.log(alpha), 0.0

    def objective(g):
        return math.log(alpha - g) - max_info_bound(ci.n, ci.eps_total, g, ci.log_arg_two)

    if ci.gamma is not None:
        return objective(ci.gamma), ci.gamma
    grid = np.logspace(math.log10(GAMMA_GRID_FLOOR * alpha), math.log10(alpha), GAMMA_GRID_SIZE + 2)[1:-1]
    vals = [objective(float(g)) for g in grid]
    k = int(np.argmax(vals))
    return vals[k], float(grid[k])


def corrected_alpha(ci: CorrectionInputs) -> Tuple[float, float]:
    """Discounted level alpha_tilde and the gamma achieving it.

    alpha_tilde = (alpha - gamma) exp(-I), I the max-information bound at
    ``eps_total``; optimized over a log-spaced gamma grid unless gamma is
    given.  May underflow to 0.0; see :func:`log_corrected_alpha`.
    """
    if ci.eps_total == 0:
        return ci.alpha, 0.0
    log_at, gamma = log_corrected_alpha(ci)
    return math.exp(log_at), gamma


def build_report(data: Dataset, g, target, alpha: float = 0.05,
                 correction: Optional[CorrectionInputs] = None, intercept: bool = False) -> EffectReport:
    """Estimate an effect and attach naive and corrected intervals.

    ``target`` is an :class:`EffectTarget` or an ``(i, j)`` pair, in which
    case the adjustment set comes from :func:`choose_adjustment`.
    """
    if not isinstance(target, EffectTarget):
        target = choose_adjustment(g, *target)
    beta, se, ridge = _ols_fit(data, target, intercept)
    if correction is None:
        log_at = math.log(alpha)
    else:
        if correction.alpha != alpha:
            correction = CorrectionInputs(correction.n, correction.eps_total, alpha, correction.gamma,
                                          correction.log_arg_two)
        log_at, _ = log_corrected_alpha(correction)
    w_naive = z_two_sided(alpha) * se
    uncorrected = log_at == math.log(alpha)
    w_corr = w_naive if uncorrected else z_two_sided(log_alpha=log_at) * se
    return EffectReport(
        target, beta, se, (beta - w_naive, beta + w_naive), (beta - w_corr, beta + w_corr),
        alpha, alpha if uncorrected else math.exp(log_at), log_at, ridge,
    )


def fair_split_fraction(i_bound: float, alpha: float, gamma: float) -> float:
    """Inference share p making split-sample intervals as wide as corrected ones."""
    if not i_bound >= 0:
        raise ValueError("max-information must be non-negative")
    if not 0 < gamma < alpha < 1:
        raise ValueError("need 0 < gamma < alpha < 1")
    num = z_two_sided(alpha)
    den = z_upper(math.log((alpha - gamma) / 2) - i_bound)
    p = (num / den) ** 2
    return min(max(p, np.nextafter(0.0, 1.0)), 1.0)


def split_sizes(n: int, p: float) -> Tuple[int, int]:
    """Rows for discovery and for inference: ceil((1 - p) n) and the rest."""
    n_disc = min(n, int(math.ceil((1 - p) * n - 1e-9)))
    return n_disc, n - n_disc


def split_pipeline(data: Dataset, p: float, alpha: float, cfg, rng: RngStream,
                   target: Optional[Tuple[int, int]] = None):
    """Discover on the first chunk, estimate on the second.

    Returns ``(graph, report)``; the report is None when the graph has no
    edges.  Without ``target`` an edge of the extension is drawn uniformly.
    """
    from .discovery import PLAIN_GES, DiscoveryConfig, discover

    if not 0 < p < 1:
        raise ValueError("p must lie in (0, 1)")
    n_disc, n_inf = split_sizes(data.n, p)
    if n_disc < 3 or n_inf < 3:
        raise ChunkTooSmall(f"split of n={data.n} at p={p} gives chunks {n_disc}/{n_inf}")
    plain = DiscoveryConfig(PLAIN_GES, cfg.budget, cfg.score_cfg, cfg.graph_mode)
    g, _ = discover(data.rows(slice(0, n_disc)), plain, rng)
    inf_data = data.rows(slice(n_disc, None))
    dag = extension(g)
    if target is None:
        edges = dag.edges
        if not edges:
            return g, None
        target = edges[rng.child("edge").integers(len(edges))]
    return g, build_report(inf_data, g, target, alpha)
