"""Linear Gaussian SEM generators and the coverage / graph-recovery
experiment runners."""

from __future__ import annotations

import csv
import io
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from . import graphs as gr
from .discovery import NOISY_GES, PLAIN_GES, DiscoveryConfig, discover
from .graphs import Cpdag, Dag
from .inference import (
    CorrectionInputs,
    EffectTarget,
    build_report,
    choose_adjustment,
    extension,
    fair_split_fraction,
    log_corrected_alpha,
    split_sizes,
)
from .mechanisms import PrivacyBudget, RngStream, max_info_bound, total_epsilon
from .scoring import Dataset, ScoreConfig

EMPTY = "empty"
ER = "er"
CHAIN = "chain"
MODELS = (EMPTY, ER, CHAIN)

NAIVE = "naive"
NOISY_CORRECTED = "noisy-corrected"
SPLIT = "split"
FIXED = "fixed"
METHODS = (NAIVE, NOISY_CORRECTED, SPLIT, FIXED)

CSV_HEADER = ("n", "d", "method", "metric", "value", "stderr", "trials", "seed")


@dataclass(frozen=True, eq=False)
class SemModel:
    d: int
    w: np.ndarray
    true_dag: Dag
    true_cpdag: Cpdag

    @classmethod
    def from_weights(cls, w: np.ndarray) -> "SemModel":
        w = np.array(w, dtype=float)
        d = w.shape[0]
        dag = Dag.from_edges(d, zip(*np.nonzero(w)))
        w.setflags(write=False)
        return cls(d, w, dag, gr.dag_to_cpdag(dag))

    def covariance(self) -> np.ndarray:
        a = np.eye(self.d) - self.w
        return np.linalg.inv(a @ a.T)


def gen_empty(d: int) -> SemModel:
    return SemModel.from_weights(np.zeros((d, d)))


def gen_chain(d: int, weight: float = 3.0) -> SemModel:
    w = np.zeros((d, d))
    for k in range(d - 1):
        w[k, k + 1] = weight
    return SemModel.from_weights(w)


def gen_er(d: int, edge_prob: float, weight: float, rng: RngStream) -> SemModel:
    """Erdos-Renyi skeleton oriented along a uniformly random node ordering."""
    if not 0 <= edge_prob <= 1:
        raise ValueError("edge_prob must lie in [0, 1]")
    if d < 2:
        raise ValueError("d must be >= 2")
    iu, ju = np.triu_indices(d, k=1)
    present = rng.uniforms(len(iu)) < edge_prob
    rank = np.empty(d, dtype=int)
    rank[rng.permutation(d)] = np.arange(d)
    w = np.zeros((d, d))
    for a, b in zip(iu[present], ju[present]):
        if rank[a] < rank[b]:
            w[a, b] = weight
        else:
            w[b, a] = weight
    return SemModel.from_weights(w)


def sample_sem(model: SemModel, n: int, rng: RngStream, sigma2: float = 1.0) -> Dataset:
    """Draw n rows via the structural equations in topological order."""
    eps = rng.normal((n, model.d)) * math.sqrt(sigma2)
    x = np.zeros((n, model.d))
    for b in gr.topological_order(model.true_dag):
        x[:, b] = x @ model.w[:, b] + eps[:, b]
    return Dataset(x, sigma2)


def population_effect(model: SemModel, target: EffectTarget) -> float:
    """Population OLS coefficient of the cause given the adjustment set."""
    sigma = model.covariance()
    cols = [target.i] + sorted(target.adjustment)
    coef = np.linalg.solve(sigma[np.ix_(cols, cols)], sigma[cols, target.j])
    return float(coef[0])


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class DiscoveryRecipe:
    """Per-n discovery settings.

    ``clip`` is a number or ``"log_n_over_3"``; ``eps_score=None`` means
    1/sqrt(n) and ``eps_thresh=None`` means ``e_max * eps_score``.
    ``split_fraction=None`` uses the fair split fraction.  Plain GES scores
    with ``plain_clip`` (unclipped by default; ``None`` reuses ``clip``).
    """

    clip: object = "log_n_over_3"
    e_max: int = 10
    eps_score: Optional[float] = None
    eps_thresh: Optional[float] = None
    sigma2: float = 1.0
    noiseless: bool = False
    log_arg_two: bool = True
    graph_mode: str = "cpdag"
    split_fraction: Optional[float] = None
    plain_clip: object = math.inf

    def score_cfg(self, n: int, plain: bool = False) -> ScoreConfig:
        clip = self.plain_clip if plain and self.plain_clip is not None else self.clip
        if clip == "log_n_over_3":
            return ScoreConfig.log_n_over_3(n)
        return ScoreConfig(clip=float(clip))

    def budget(self, n: int) -> PrivacyBudget:
        if self.noiseless:
            return PrivacyBudget.plain(self.e_max)
        eps_s = self.eps_score if self.eps_score is not None else 1.0 / math.sqrt(n)
        eps_t = self.eps_thresh if self.eps_thresh is not None else self.e_max * eps_s
        return PrivacyBudget(eps_s, eps_t, self.e_max, tau=1.0)

    def config(self, n: int, mode: str) -> DiscoveryConfig:
        budget = PrivacyBudget.plain(self.e_max) if mode == PLAIN_GES else self.budget(n)
        return DiscoveryConfig(mode, budget, self.score_cfg(n, plain=mode == PLAIN_GES), self.graph_mode)

    def correction(self, n: int, alpha: float) -> CorrectionInputs:
        b = self.budget(n)
        eps = 0.0 if b.noiseless else total_epsilon(b)
        return CorrectionInputs(n, eps, alpha, None, self.log_arg_two)

    def split_p(self, n: int, alpha: float) -> float:
        """Inference share of the split arm.

        Without noise there is nothing to correct for, so the split arm
        degenerates to reusing all rows for both steps (p = 0).
        """
        if self.split_fraction is not None:
            return self.split_fraction
        ci = self.correction(n, alpha)
        if ci.eps_total == 0:
            return 0.0
        _, gamma = log_corrected_alpha(ci)
        i_bound = max_info_bound(n, ci.eps_total, gamma, self.log_arg_two)
        return fair_split_fraction(i_bound, alpha, gamma)


@dataclass(frozen=True)
class ExperimentGrid:
    ns: Tuple[int, ...]
    ds: Tuple[int, ...]
    trials: int = 500
    alpha: float = 0.05
    model: str = EMPTY
    method: str = NAIVE
    edge_prob: Optional[float] = None
    weight: float = 3.0
    fixed_edges: Optional[Tuple[Tuple[int, int], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "ns", tuple(int(n) for n in self.ns))
        object.__setattr__(self, "ds", tuple(int(d) for d in self.ds))
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if not self.ns or not self.ds or min(self.ns) < 10:
            raise ValueError("need non-empty ns (each >= 10) and ds")
        if min(self.ds) < 1:
            raise ValueError("dimensions must be >= 1")
        if self.model not in MODELS:
            raise ValueError(f"model must be one of {MODELS}")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if self.method == FIXED and not self.fixed_edges:
            raise ValueError("method 'fixed' needs fixed_edges")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.edge_prob is not None and not 0 <= self.edge_prob <= 1:
            raise ValueError("edge_prob must lie in [0, 1]")

    def er_prob(self, d: int, recovery: bool) -> float:
        if self.edge_prob is not None:
            return self.edge_prob
        return min(1.0, 5.0 / (d * (d - 1))) if recovery else 0.5


def make_model(grid: ExperimentGrid, d: int, rng: RngStream, recovery: bool = False) -> SemModel:
    if grid.model == EMPTY:
        return gen_empty(d)
    if grid.model == CHAIN:
        return gen_chain(d, grid.weight)
    return gen_er(d, grid.er_prob(d, recovery), grid.weight, rng.child("model"))


# ---------------------------------------------------------------------------
# trials


def coverage_trial(grid: ExperimentGrid, recipe: DiscoveryRecipe, n: int, d: int, seed: int,
                   trial: int) -> Tuple[bool, bool]:
    """One coverage trial; returns ``(miscovered, had_edge)``."""
    rng = RngStream(seed).child("coverage", n, d, grid.method, trial)
    model = make_model(grid, d, rng)
    data = sample_sem(model, n, rng.child("data"), recipe.sigma2)
    inf_data, correction = data, None
    if grid.method == FIXED:
        g = Dag.from_edges(d, grid.fixed_edges)
    elif grid.method == NAIVE:
        g, _ = discover(data, recipe.config(n, PLAIN_GES), rng.child("disc"))
    elif grid.method == NOISY_CORRECTED:
        g, _ = discover(data, recipe.config(n, NOISY_GES), rng.child("disc"))
        correction = recipe.correction(n, grid.alpha)
    else:
        n_disc, n_inf = split_sizes(n, recipe.split_p(n, grid.alpha))
        g, _ = discover(data.rows(slice(0, n_disc)), recipe.config(n, PLAIN_GES), rng.child("disc"))
        if n_inf:
            inf_data = data.rows(slice(n_disc, None))
    edges = extension(g).edges
    if not edges:
        return False, False
    i, j = edges[rng.child("edge").integers(len(edges))]
    target = choose_adjustment(g, i, j)
    report = build_report(inf_data, g, target, grid.alpha, correction)
    truth = population_effect(model, target)
    lo, hi = report.corrected_interval
    return not (lo <= truth <= hi), True


def recovery_trial(grid: ExperimentGrid, recipe: DiscoveryRecipe, n: int, d: int, seed: int,
                   trial: int) -> Tuple[int, int]:
    """SHD to the true CPDAG of noisy GES and of split-sample plain GES."""
    rng = RngStream(seed).child("recovery", n, d, trial)
    model = make_model(grid, d, rng, recovery=True)
    data = sample_sem(model, n, rng.child("data"), recipe.sigma2)
    g_noisy, _ = discover(data, recipe.config(n, NOISY_GES), rng.child("noisy"))
    n_disc, _ = split_sizes(n, recipe.split_p(n, grid.alpha))
    g_split, _ = discover(data.rows(slice(0, n_disc)), recipe.config(n, PLAIN_GES), rng.child("split"))
    return gr.shd(model.true_cpdag, g_noisy), gr.shd(model.true_cpdag, g_split)


def _run_trials(fn, args_list: Sequence[tuple], threads: Optional[int]) -> list:
    workers = threads or os.cpu_count() or 1
    if workers <= 1 or len(args_list) < 2:
        return [fn(*a) for a in args_list]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*args_list), chunksize=max(1, len(args_list) // (4 * workers))))


@dataclass(frozen=True)
class ResultRow:
    n: int
    d: int
    method: str
    metric: str
    value: float
    stderr: float
    trials: int
    seed: int

    def as_tuple(self):
        return (self.n, self.d, self.method, self.metric, float(self.value), float(self.stderr),
                self.trials, self.seed)


def _mean_se(vals: Sequence[float]) -> Tuple[float, float]:
    arr = np.asarray(vals, dtype=float)
    if arr.size < 2:
        return float(arr.mean()), 0.0
    return float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size))


def run_coverage_grid(grid: ExperimentGrid, recipe: DiscoveryRecipe = DiscoveryRecipe(), seed: int = 0,
                      threads: Optional[int] = None) -> List[ResultRow]:
    """Miscoverage rate (and share of trials with an edge) per (n, d) cell.

    Trials whose graph has no edge count as covered.
    """
    rows = []
    for d in grid.ds:
        for n in grid.ns:
            args = [(grid, recipe, n, d, seed, t) for t in range(grid.trials)]
            res = _run_trials(coverage_trial, args, threads)
            miss = sum(m for m, _ in res) / grid.trials
            edge_rate = sum(e for _, e in res) / grid.trials
            se = math.sqrt(miss * (1 - miss) / grid.trials)
            se_e = math.sqrt(edge_rate * (1 - edge_rate) / grid.trials)
            rows.append(ResultRow(n, d, grid.method, "miscoverage", miss, se, grid.trials, seed))
            rows.append(ResultRow(n, d, grid.method, "edge_rate", edge_rate, se_e, grid.trials, seed))
    return rows


def run_recovery_compare(grid: ExperimentGrid, recipe: DiscoveryRecipe = DiscoveryRecipe(), seed: int = 0,
                         threads: Optional[int] = None) -> List[ResultRow]:
    """Mean SHD(noisy GES) - SHD(split GES) per cell, plus the arms' means."""
    rows = []
    for d in grid.ds:
        for n in grid.ns:
            args = [(grid, recipe, n, d, seed, t) for t in range(grid.trials)]
            res = _run_trials(recovery_trial, args, threads)
            noisy = [a for a, _ in res]
            split = [b for _, b in res]
            delta = [a - b for a, b in res]
            tag = "noisy-vs-split"
            for metric, vals in (("delta_shd", delta), ("shd_noisy", noisy), ("shd_split", split)):
                m, se = _mean_se(vals)
                rows.append(ResultRow(n, d, tag, metric, m, se, grid.trials, seed))
            rows.append(ResultRow(n, d, tag, "split_fraction", recipe.split_p(n, grid.alpha), 0.0,
                                  grid.trials, seed))
    return rows


def rows_to_csv(rows: Iterable[ResultRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in rows:
        w.writerow(r.as_tuple())
    return buf.getvalue()
