"""Noisy score-based structure search: exact noisy selection over a candidate
family and noisy greedy equivalence search."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from . import graphs as gr
from .graphs import DELETE, INSERT, Cpdag, Dag, InvalidOperator, Operator
from .mechanisms import (
    AboveThreshold,
    EmptyCandidates,
    PrivacyBudget,
    RngStream,
    laplace,
    laplace_vector,
    noisy_argmax,
)
from .scoring import Dataset, InfiniteClip, ScoreConfig, Scorer, local_score_sensitivity

EXACT = "exact"
NOISY_GES = "noisy-ges"
PLAIN_GES = "plain-ges"
MODES = (EXACT, NOISY_GES, PLAIN_GES)

CPDAG_MODE = "cpdag"
DAG_MODE = "dag"

SIGN_KIND = {"+": INSERT, "-": DELETE}


@dataclass(frozen=True)
class DiscoveryConfig:
    mode: str = PLAIN_GES
    budget: PrivacyBudget = field(default_factory=PrivacyBudget.plain)
    score_cfg: ScoreConfig = field(default_factory=ScoreConfig)
    graph_mode: str = CPDAG_MODE
    candidate_family: Optional[Tuple[Union[Cpdag, Dag], ...]] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.graph_mode not in (CPDAG_MODE, DAG_MODE):
            raise ValueError("graph_mode must be 'cpdag' or 'dag'")
        if self.mode == EXACT and not self.candidate_family:
            raise EmptyCandidates("exact search needs a non-empty candidate family")
        if self.mode == PLAIN_GES and not self.budget.noiseless:
            object.__setattr__(self, "budget", PrivacyBudget.plain(self.budget.e_max))
        if self.candidate_family is not None:
            object.__setattr__(self, "candidate_family", tuple(self.candidate_family))

    def resolved_budget(self, data: Dataset) -> PrivacyBudget:
        """Budget with tau set to the local clipped-BIC sensitivity for ``data``."""
        if self.budget.noiseless:
            return self.budget
        try:
            tau = local_score_sensitivity(data, self.score_cfg)
        except InfiniteClip:
            raise InfiniteClip("finite privacy parameters require a finite clip") from None
        return self.budget.with_tau(tau)


@dataclass
class StepRecord:
    sign: str
    operators: List[Operator]
    gains: List[float]
    xi: List[float]
    chosen: int
    eta: float
    accepted: bool

    def to_dict(self) -> dict:
        return {
            "sign": self.sign,
            "operators": [op.to_dict() for op in self.operators],
            "gains": list(self.gains),
            "xi": list(self.xi),
            "chosen": self.chosen,
            "eta": self.eta,
            "accepted": self.accepted,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "StepRecord":
        return cls(obj["sign"], [Operator.from_dict(o) for o in obj["operators"]], list(obj["gains"]),
                   list(obj["xi"]), int(obj["chosen"]), float(obj["eta"]), bool(obj["accepted"]))


@dataclass
class DiscoveryTrace:
    steps: List[StepRecord] = field(default_factory=list)
    nu: dict = field(default_factory=dict)
    final: Optional[Cpdag] = None

    def to_dict(self) -> dict:
        return {
            "nu": dict(self.nu),
            "steps": [s.to_dict() for s in self.steps],
            "final": None if self.final is None else self.final.to_dict(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, obj: dict) -> "DiscoveryTrace":
        final = obj.get("final")
        return cls([StepRecord.from_dict(s) for s in obj["steps"]], dict(obj["nu"]),
                   None if final is None else Cpdag.from_dict(final))


class LiveNoise:
    """Laplace draws from per-purpose substreams of one pass.

    ``nu`` comes from the ``"nu"`` substream, the selection noise of step t
    from ``("xi", t)`` and the query noise from ``("eta", t)``, so the
    coupled and decoupled passes see identical noise.
    """

    def __init__(self, rng: RngStream, budget: PrivacyBudget, sign: str):
        self.root = rng.child("pass", sign)
        self.budget = budget

    def nu(self) -> float:
        return laplace(self.root.child("nu"), self.budget.threshold_scale)

    def xi(self, t: int, k: int) -> np.ndarray:
        return laplace_vector(self.root.child("xi", t), self.budget.score_scale, k)

    def eta(self, t: int) -> float:
        return laplace(self.root.child("eta", t), self.budget.query_scale)


class RecordedNoise:
    """Replays the noise stored in a trace."""

    def __init__(self, trace: DiscoveryTrace, sign: str):
        self._nu = trace.nu.get(sign, 0.0)
        self._steps = [s for s in trace.steps if s.sign == sign]

    def nu(self) -> float:
        return self._nu

    def xi(self, t: int, k: int) -> np.ndarray:
        return np.asarray(self._steps[t - 1].xi, dtype=float)

    def eta(self, t: int) -> float:
        return self._steps[t - 1].eta


def valid_operators(g: Cpdag, sign: str, graph_mode: str) -> List[Operator]:
    kind = SIGN_KIND[sign]
    if graph_mode == DAG_MODE:
        return gr.enumerate_dag_operators(g, kind)
    return gr.enumerate_valid_operators(g, kind)


def apply_move(g: Cpdag, op: Operator, graph_mode: str) -> Cpdag:
    if graph_mode == DAG_MODE:
        return gr.apply_dag_operator(g, op)
    return gr.apply_operator(g, op, check=False)


def _as_graph(g, graph_mode: str) -> Cpdag:
    if isinstance(g, Dag):
        return g.to_cpdag_form() if graph_mode == DAG_MODE else gr.dag_to_cpdag(g)
    return g


def greedy_pass(g0, data: Dataset, cfg: DiscoveryConfig, rng: RngStream, sign: str,
                scorer: Optional[Scorer] = None, noise=None) -> Tuple[Cpdag, DiscoveryTrace]:
    """One forward (``"+"``) or backward (``"-"``) pass of noisy GES."""
    if sign not in SIGN_KIND:
        raise ValueError("sign must be '+' or '-'")
    budget = cfg.resolved_budget(data)
    scorer = scorer or Scorer(data, cfg.score_cfg)
    noise = noise or LiveNoise(rng, budget, sign)
    g = _as_graph(g0, cfg.graph_mode)
    trace = DiscoveryTrace()
    nu = noise.nu()
    trace.nu[sign] = nu
    for t in range(1, budget.e_max + 1):
        ops = valid_operators(g, sign, cfg.graph_mode)
        if not ops:
            break
        gains = [scorer.gain(g, op) for op in ops]
        xi = noise.xi(t, len(ops))
        k = noisy_argmax(gains, xi)
        eta = noise.eta(t)
        accepted = gains[k] + eta > nu
        trace.steps.append(StepRecord(sign, ops, gains, [float(v) for v in xi], k, eta, accepted))
        if not accepted:
            break
        g = apply_move(g, ops[k], cfg.graph_mode)
    trace.final = g
    return g, trace


def noisy_ges(data: Dataset, cfg: DiscoveryConfig, rng: RngStream) -> Tuple[Cpdag, DiscoveryTrace]:
    """Forward insertions then backward deletions from the empty graph."""
    if cfg.mode == EXACT:
        raise ValueError("use exact_noisy_search for exact mode")
    scorer = Scorer(data, cfg.score_cfg)
    g = Cpdag.empty(data.d)
    g, fwd = greedy_pass(g, data, cfg, rng, "+", scorer)
    g, bwd = greedy_pass(g, data, cfg, rng, "-", scorer)
    trace = DiscoveryTrace(fwd.steps + bwd.steps, {**fwd.nu, **bwd.nu}, g)
    return g, trace


def replay_ges(data: Dataset, cfg: DiscoveryConfig, trace: DiscoveryTrace) -> Cpdag:
    """Re-run noisy GES feeding it the noise recorded in ``trace``."""
    scorer = Scorer(data, cfg.score_cfg)
    g = Cpdag.empty(data.d)
    for sign in "+-":
        g, _ = greedy_pass(g, data, cfg, None, sign, scorer, RecordedNoise(trace, sign))
    return g


def propose_operators(g0, data: Dataset, cfg: DiscoveryConfig, rng: RngStream, sign: str,
                      scorer: Optional[Scorer] = None) -> List[Operator]:
    """Noisy-argmax selection for ``e_max`` rounds, applying every choice."""
    budget = cfg.resolved_budget(data)
    scorer = scorer or Scorer(data, cfg.score_cfg)
    noise = LiveNoise(rng, budget, sign)
    g = _as_graph(g0, cfg.graph_mode)
    proposed = []
    for t in range(1, budget.e_max + 1):
        ops = valid_operators(g, sign, cfg.graph_mode)
        if not ops:
            break
        gains = [scorer.gain(g, op) for op in ops]
        k = noisy_argmax(gains, noise.xi(t, len(ops)))
        proposed.append(ops[k])
        g = apply_move(g, ops[k], cfg.graph_mode)
    return proposed


def select_operators(g0, data: Dataset, cfg: DiscoveryConfig, rng: RngStream, sign: str,
                     proposed: Sequence[Operator], scorer: Optional[Scorer] = None) -> List[Operator]:
    """Accept the longest prefix of ``proposed`` passing the noisy threshold test."""
    budget = cfg.resolved_budget(data)
    scorer = scorer or Scorer(data, cfg.score_cfg)
    noise = LiveNoise(rng, budget, sign)
    g = _as_graph(g0, cfg.graph_mode)
    if not proposed:
        return []
    nu = noise.nu()
    accepted = []
    for t, op in enumerate(proposed, start=1):
        if cfg.graph_mode == DAG_MODE:
            ok = op in gr.enumerate_dag_operators(g, op.kind)
        else:
            ok = gr.is_valid(g, op)
        if not ok:
            raise InvalidOperator(f"proposed {op} is not valid for the evolved graph")
        if not scorer.gain(g, op) + noise.eta(t) > nu:
            break
        accepted.append(op)
        g = apply_move(g, op, cfg.graph_mode)
    return accepted


def apply_sequence(g0, ops: Sequence[Operator], graph_mode: str = CPDAG_MODE) -> Cpdag:
    g = _as_graph(g0, graph_mode)
    for op in ops:
        g = apply_move(g, op, graph_mode)
    return g


# ---------------------------------------------------------------------------
# exact search


def graph_score(scorer: Scorer, g) -> float:
    """Decomposable score of a DAG, or of the deterministic extension of a CPDAG."""
    dag = g if isinstance(g, Dag) else gr.pdag_to_dag(g)
    return scorer.graph_score(dag.parents)


def noisy_select(scores: Sequence[float], tau: float, eps: float, rng: RngStream) -> Tuple[int, np.ndarray]:
    """argmax of score + Lap(2 tau / eps); eps = inf gives the plain argmax."""
    if len(scores) == 0:
        raise EmptyCandidates("no candidates to select from")
    scale = 0.0 if math.isinf(eps) else 2.0 * tau / eps
    xi = laplace_vector(rng, scale, len(scores))
    return noisy_argmax(scores, xi), xi


def exact_noisy_search(data: Dataset, cfg: DiscoveryConfig, rng: RngStream):
    """Select one graph from the candidate family with Laplace-perturbed scores.

    The full-graph sensitivity is ``d * C / (n sigma^2)``.  Privacy level is
    ``budget.eps_score``.
    """
    family = cfg.candidate_family
    if not family:
        raise EmptyCandidates("exact search needs a non-empty candidate family")
    scorer = Scorer(data, cfg.score_cfg)
    scores = [graph_score(scorer, g) for g in family]
    if cfg.budget.noiseless:
        tau, eps = 0.0, math.inf
    else:
        tau = data.d * local_score_sensitivity(data, cfg.score_cfg)
        eps = cfg.budget.eps_score
    k, xi = noisy_select(scores, tau, eps, rng.child("exact"))
    chosen = family[k]
    rec = StepRecord("exact", [], scores, [float(v) for v in xi], k, 0.0, True)
    final = chosen if isinstance(chosen, Cpdag) else chosen.to_cpdag_form()
    return chosen, DiscoveryTrace([rec], {}, final)


def discover(data: Dataset, cfg: DiscoveryConfig, rng: RngStream):
    """Dispatch on ``cfg.mode``; DAG-mode GES results are returned as :class:`Dag`."""
    if cfg.mode == EXACT:
        return exact_noisy_search(data, cfg, rng)
    g, trace = noisy_ges(data, cfg, rng)
    if cfg.graph_mode == DAG_MODE:
        return gr.Dag.from_edges(g.d, g.directed), trace
    return g, trace
