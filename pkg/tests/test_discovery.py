import json
import math

import numpy as np
import pytest

from noisyges import graphs as gr
from noisyges.discovery import (
    DAG_MODE,
    EXACT,
    NOISY_GES,
    PLAIN_GES,
    DiscoveryConfig,
    DiscoveryTrace,
    LiveNoise,
    apply_sequence,
    discover,
    exact_noisy_search,
    greedy_pass,
    noisy_ges,
    noisy_select,
    propose_operators,
    replay_ges,
    select_operators,
)
from noisyges.graphs import INSERT, Cpdag, Dag, Operator
from noisyges.mechanisms import EmptyCandidates, PrivacyBudget, RngStream
from noisyges.scoring import Dataset, InfiniteClip, ScoreConfig, Scorer

PLAIN = DiscoveryConfig(PLAIN_GES)


def chain_data(n, seed, weight=3.0):
    rng = np.random.default_rng(seed)
    x1 = rng.standard_normal(n)
    return Dataset(np.column_stack([x1, weight * x1 + rng.standard_normal(n)]))


def random_data(seed, d_max=5):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, d_max + 1))
    n = int(rng.integers(30, 200))
    x = rng.standard_normal((n, d))
    for j in range(1, d):
        for i in range(j):
            if rng.random() < 0.4:
                x[:, j] += rng.uniform(-2, 2) * x[:, i]
    return Dataset(x)


def noisy_cfg(n, e_max=10, eps_score=None, eps_thresh=None, graph_mode="cpdag"):
    eps_s = 1 / math.sqrt(n) if eps_score is None else eps_score
    eps_t = e_max * eps_s if eps_thresh is None else eps_thresh
    return DiscoveryConfig(NOISY_GES, PrivacyBudget(eps_s, max(eps_t, 1e-9), e_max), ScoreConfig.log_n_over_3(n),
                           graph_mode)


ONE_EDGE = Cpdag(2, frozenset(), frozenset({(0, 1)}))


# --- configuration -------------------------------------------------------------


def test_config_rules():
    with pytest.raises(EmptyCandidates):
        DiscoveryConfig(EXACT)
    cfg = DiscoveryConfig(PLAIN_GES, PrivacyBudget(0.1, 0.1, 4))
    assert cfg.budget.noiseless and cfg.budget.e_max == 4
    with pytest.raises(ValueError):
        DiscoveryConfig("bogus")


def test_finite_epsilon_needs_finite_clip():
    cfg = DiscoveryConfig(NOISY_GES, PrivacyBudget(0.1, 0.1))
    with pytest.raises(InfiniteClip):
        noisy_ges(chain_data(50, 0), cfg, RngStream(0))


def test_resolved_tau():
    data = chain_data(100, 0)
    cfg = noisy_cfg(100)
    assert cfg.resolved_budget(data).tau == pytest.approx(math.log(100) / 300)


# --- greedy pass ---------------------------------------------------------------


def test_no_valid_operators_leaves_graph():
    g, trace = greedy_pass(Cpdag.empty(2), chain_data(50, 0), PLAIN, RngStream(0), "-")
    assert g == Cpdag.empty(2) and trace.steps == []


def test_all_negative_gains_stop_immediately():
    rng = np.random.default_rng(0)
    data = Dataset(rng.standard_normal((5000, 3)))
    g, trace = greedy_pass(Cpdag.empty(3), data, PLAIN, RngStream(0), "+")
    assert g == Cpdag.empty(3)
    assert len(trace.steps) == 1 and not trace.steps[0].accepted
    assert max(trace.steps[0].gains) < 0


def test_forward_pass_on_chain_applies_one_insert():
    data = chain_data(1000, 1)
    g, trace = greedy_pass(Cpdag.empty(2), data, PLAIN, RngStream(0), "+")
    assert g == ONE_EDGE
    assert [s.accepted for s in trace.steps] == [True]  # nothing left to insert
    assert trace.steps[0].operators[trace.steps[0].chosen].kind == INSERT


def test_e_max_zero_gives_empty_graph():
    cfg = noisy_cfg(200, e_max=0, eps_score=0.1, eps_thresh=0.1)
    for s in range(10):
        g, trace = noisy_ges(chain_data(200, s), cfg, RngStream(s))
        assert g == Cpdag.empty(2) and trace.steps == []


def test_edge_count_bounded_by_e_max():
    for s in range(20):
        data = random_data(s, d_max=6)
        cfg = noisy_cfg(data.n, e_max=2)
        g, trace = greedy_pass(Cpdag.empty(data.d), data, cfg, RngStream(s), "+")
        assert g.n_edges() <= 2
        assert gr.is_completed(g)


# --- full search -----------------------------------------------------------------


def test_plain_ges_recovers_chain_class():
    hits = sum(discover(chain_data(1000, s), PLAIN, RngStream(s))[0] == ONE_EDGE for s in range(40))
    assert hits / 40 >= 0.95


def test_plain_ges_independent_columns_empty():
    rng = np.random.default_rng(3)
    hits = 0
    for s in range(40):
        data = Dataset(rng.standard_normal((10**4, 3)))
        hits += discover(data, PLAIN, RngStream(s))[0] == Cpdag.empty(3)
    assert hits / 40 >= 0.95


def test_noiseless_noisy_ges_equals_plain_ges():
    noiseless = DiscoveryConfig(NOISY_GES, PrivacyBudget.plain())
    for s in range(200):
        data = random_data(1000 + s)
        g1, t1 = noisy_ges(data, noiseless, RngStream(s))
        g2, t2 = noisy_ges(data, PLAIN, RngStream(s + 1))
        assert g1 == g2
        assert t1.to_dict() == t2.to_dict()


def test_plain_ges_halts_at_local_optimum():
    checked = 0
    for s in range(60):
        data = random_data(2000 + s)
        sc = Scorer(data, PLAIN.score_cfg)
        g_fwd, fwd = greedy_pass(Cpdag.empty(data.d), data, PLAIN, RngStream(0), "+", sc)
        if fwd.steps and not fwd.steps[-1].accepted:
            assert all(sc.gain(g_fwd, op) <= 0 for op in gr.enumerate_valid_operators(g_fwd, "insert"))
            checked += 1
        g_bwd, bwd = greedy_pass(g_fwd, data, PLAIN, RngStream(0), "-", sc)
        if not bwd.steps or not bwd.steps[-1].accepted:
            assert all(sc.gain(g_bwd, op) <= 0 for op in gr.enumerate_valid_operators(g_bwd, "delete"))
    assert checked > 30


def test_noisy_ges_deterministic_and_replayable():
    data = random_data(7)
    cfg = noisy_cfg(data.n)
    g1, t1 = noisy_ges(data, cfg, RngStream(9))
    g2, t2 = noisy_ges(data, cfg, RngStream(9))
    assert g1 == g2 and t1.to_json() == t2.to_json()
    back = DiscoveryTrace.from_dict(json.loads(t1.to_json()))
    assert replay_ges(data, cfg, back) == g1
    assert back.final == g1


def test_noisy_ges_outputs_are_completed():
    for s in range(40):
        data = random_data(3000 + s)
        g, _ = noisy_ges(data, noisy_cfg(data.n, eps_score=0.05), RngStream(s))
        assert gr.is_completed(g)


def test_dag_mode_returns_dag():
    g, _ = discover(chain_data(500, 0), DiscoveryConfig(PLAIN_GES, graph_mode=DAG_MODE), RngStream(0))
    assert isinstance(g, Dag) and len(g.edges) == 1


# --- propose / select --------------------------------------------------------------


def test_propose_with_e_max_one():
    data = random_data(5)
    cfg = noisy_cfg(data.n, e_max=1)
    assert len(propose_operators(Cpdag.empty(data.d), data, cfg, RngStream(0), "+")) <= 1


def test_propose_first_matches_greedy_first_noiseless():
    data = random_data(6)
    _, trace = greedy_pass(Cpdag.empty(data.d), data, PLAIN, RngStream(0), "+")
    prop = propose_operators(Cpdag.empty(data.d), data, PLAIN, RngStream(0), "+")
    first = trace.steps[0]
    assert prop[0] == first.operators[first.chosen]


def test_select_edge_cases():
    data = chain_data(1000, 2)
    assert select_operators(Cpdag.empty(2), data, PLAIN, RngStream(0), "+", []) == []
    ops = [Operator(INSERT, 0, 1)]
    assert select_operators(Cpdag.empty(2), data, PLAIN, RngStream(0), "+", ops) == ops
    with pytest.raises(gr.InvalidOperator):
        select_operators(ONE_EDGE, data, PLAIN, RngStream(0), "+", ops)


@pytest.mark.parametrize("graph_mode", ["cpdag", "dag"])
def test_coupled_and_decoupled_passes_agree(graph_mode):
    for s in range(60):
        data = random_data(4000 + s, d_max=4)
        cfg = noisy_cfg(data.n, e_max=4, eps_score=0.3, eps_thresh=0.6, graph_mode=graph_mode)
        for sign, g0 in (("+", Cpdag.empty(data.d)), ("-", None)):
            if g0 is None:
                g0 = greedy_pass(Cpdag.empty(data.d), data, cfg, RngStream(s, 1), "+")[0]
            rng = RngStream(s)
            coupled, trace = greedy_pass(g0, data, cfg, rng, sign)
            proposed = propose_operators(g0, data, cfg, rng, sign)
            executed = [st.operators[st.chosen] for st in trace.steps]
            assert proposed[: len(executed)] == executed
            selected = select_operators(g0, data, cfg, rng, sign, proposed)
            assert apply_sequence(g0, selected, graph_mode) == coupled


def test_live_noise_substreams_are_per_purpose():
    b = PrivacyBudget(0.1, 0.2, 3, tau=0.01)
    n1, n2 = LiveNoise(RngStream(1), b, "+"), LiveNoise(RngStream(1), b, "+")
    assert n1.eta(2) == n2.eta(2) and n1.nu() == n2.nu()
    assert n1.eta(1) != n1.eta(2)
    assert LiveNoise(RngStream(1), b, "-").nu() != n1.nu()


# --- exact search ------------------------------------------------------------------


G1 = Dag.from_edges(2, [(0, 1)])
G2 = Dag.empty(2)


def test_exact_noiseless_picks_dependent_graph():
    cfg = DiscoveryConfig(EXACT, PrivacyBudget.plain(), ScoreConfig.log_n_over_3(500), candidate_family=(G1, G2))
    g, trace = exact_noisy_search(chain_data(500, 0), cfg, RngStream(0))
    assert g == G1
    assert trace.steps[0].gains[0] > trace.steps[0].gains[1]


def test_exact_single_candidate():
    cfg = DiscoveryConfig(EXACT, PrivacyBudget(1e-6, 1e-6), ScoreConfig(clip=1.0), candidate_family=(G2,))
    for s in range(10):
        assert exact_noisy_search(chain_data(50, s), cfg, RngStream(s))[0] == G2


def test_exact_independent_columns_prefers_empty():
    rng = np.random.default_rng(4)
    cfg = DiscoveryConfig(EXACT, PrivacyBudget.plain(), ScoreConfig.log_n_over_3(10**4),
                          candidate_family=(G1, G2))
    hits = sum(exact_noisy_search(Dataset(rng.standard_normal((10**4, 2))), cfg, RngStream(0))[0] == G2
               for _ in range(40))
    assert hits / 40 >= 0.95


def test_exact_needs_finite_clip():
    cfg = DiscoveryConfig(EXACT, PrivacyBudget(0.1, 0.1), ScoreConfig(), candidate_family=(G1, G2))
    with pytest.raises(InfiniteClip):
        exact_noisy_search(chain_data(50, 0), cfg, RngStream(0))


def test_noisy_select_utility():
    tau, eps, delta = 0.01, 0.5, 0.1
    gap = 4 * tau / eps * math.log(2 / delta)
    rng = RngStream(8)
    wrong = sum(noisy_select([0.0, -gap], tau, eps, rng)[0] for _ in range(10**4))
    assert wrong / 10**4 <= delta + 0.01
    assert noisy_select([1.0, 2.0], tau, math.inf, rng)[0] == 1
