from collections import defaultdict
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from reinforce_lab import graph as G, lrrw as L, rwre, stats as S


def rng(seed=0):
    return np.random.default_rng(seed)


def test_fresh_triangle_is_uniform():
    g = G.build_family("cycle(3)")
    p = L.transition_probs(L.LrrwState.start(g), g, a=1.0)
    assert np.allclose(p, [0.5, 0.5])


def test_degree2_after_one_crossing():
    g = G.build_family("path(3)", v0=0)
    s = L.lrrw_step(L.LrrwState.start(g), g, rng(), a=1.0)
    assert s.position == 1
    p = dict(zip(g.neighbors(1).tolist(), L.transition_probs(s, g, a=1.0)))
    assert p[0] == pytest.approx(2 / 3) and p[2] == pytest.approx(1 / 3)


def _star_state(g):
    s = L.LrrwState.start(g)
    inc = g.incident(0)
    s.N[inc[0]] = 5
    s.exits[2 * inc[0]] = 3
    s.exits[2 * inc[0] + 1] = 2
    s.step = 5
    return s


def test_star_counts_probs():
    g = G.build_family("star(3)")
    s = _star_state(g)
    p = L.transition_probs(s, g, a=0.1)
    assert np.allclose(p, np.array([5.1, 0.1, 0.1]) / 5.3)


@pytest.mark.slow
def test_star_counts_empirical():
    g = G.build_family("star(3)")
    s = _star_state(g)
    r = rng(11)
    n = 10 ** 6
    hits = np.zeros(3)
    leaf = {int(w): k for k, w in enumerate(g.neighbors(0))}
    base = L._base_weights(g, 0.1)
    for _ in range(n):
        t = s.copy()
        L.advance(g, t, L.StopRule.max_steps(1), r, base=base)
        hits[leaf[t.position]] += 1
    p = np.array([5.1, 0.1, 0.1]) / 5.3
    se = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(hits / n - p) <= 3 * se)


def test_zero_steps_is_empty():
    g = G.build_family("cycle(4)")
    run = L.run_lrrw(g, L.StopRule.max_steps(0), rng())
    assert run.path.tolist() == [g.v0] and run.state.step == 0


def test_path2_alternates():
    g = G.build_family("path(2)")
    run = L.run_lrrw(g, L.StopRule.visits(0, 3), rng())
    assert run.path.tolist() == [0, 1, 0, 1, 0]


def test_hit_edge_stops_on_first_crossing():
    g = G.build_family("grid_box(2,4)")
    x = g.edge_id(14, 15)
    for seed in range(20):
        run = L.run_lrrw(g, L.StopRule.hit_edge(x), rng(seed), a=5.0)
        p = run.path
        assert run.status == L.SATISFIED
        assert L.first_crossing(g, p, x) == len(p) - 2


def test_isolated_vertex_is_stuck():
    g = G.Graph.from_json({"vertices": 3, "edges": [[1, 2, 1.0]], "v0": 0})
    with pytest.raises(L.Stuck):
        L.transition_probs(L.LrrwState.start(g), g)
    with pytest.raises(L.Stuck):
        L.run_lrrw(g, L.StopRule.max_steps(3), rng())


def test_budget_reports_timeout():
    g = G.Graph.from_json({"vertices": 4, "edges": [[0, 1, 1.0], [2, 3, 1.0]], "v0": 0})
    run = L.run_lrrw(g, L.StopRule.hit_edge(1), rng(), budget=50)
    assert run.timed_out and run.state.step == 50


@st.composite
def connected_graphs(draw):
    n = draw(st.integers(2, 7))
    edges = set()
    for v in range(1, n):
        edges.add((draw(st.integers(0, v - 1)), v))
    extra = draw(st.lists(st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=6))
    for u, v in extra:
        if u != v:
            edges.add((min(u, v), max(u, v)))
    v0 = draw(st.integers(0, n - 1))
    return G.Graph.from_json({"vertices": n, "edges": [[u, v, 1.0] for u, v in sorted(edges)],
                              "v0": v0})


@settings(max_examples=60, deadline=None)
@given(connected_graphs(), st.integers(0, 2 ** 32 - 1), st.floats(0.01, 10))
def test_counter_invariants_every_step(g, seed, a):
    r = rng(seed)
    s = L.LrrwState.start(g)
    base = L._base_weights(g, a)
    for _ in range(300):
        L.advance(g, s, L.StopRule.max_steps(1), r, base=base)
        s.check(g)
        assert s.visits.sum() == s.step + 1


def test_counter_invariants_long_fuzz():
    g = G.build_family("grid_box(2,3)", v0=4)
    r = rng(5)
    s = L.LrrwState.start(g)
    base = L._base_weights(g, 0.3)
    for _ in range(10 ** 5):
        L.advance(g, s, L.StopRule.max_steps(1), r, base=base)
        s.check(g)


@pytest.mark.parametrize("spec,v0,a", [("cycle(3)", 0, Fraction(1)), ("path(3)", 0, Fraction(1, 2)),
                                        ("path(3)", 1, Fraction(3))])
def test_partial_exchangeability(spec, v0, a):
    # paths with the same start and per-edge crossing counts share one probability
    g = G.build_family(spec, v0=v0)
    shared = 0
    for k in range(1, 7):
        law = L.path_law(g, k, a=float(a), exact=True)
        assert sum(law.values()) == 1
        groups = defaultdict(set)
        for path, p in law.items():
            verts = (v0,) + path
            counts = [0] * g.m
            for u, w in zip(verts, verts[1:]):
                counts[g.edge_id(u, w)] += 1
            groups[tuple(counts)].add(p)
        assert all(len(ps) == 1 for ps in groups.values())
        shared += len(law) - len(groups)
    assert shared > 0  # some group held more than one path


def test_path_law_matches_hand_computation():
    # triangle, a=1: 0->1 (1/2), then at 1 the used edge has weight 2 of 3
    g = G.build_family("cycle(3)")
    law = L.path_law(g, 2, a=1.0, exact=True)
    assert law[(1, 0)] == Fraction(1, 2) * Fraction(2, 3)
    assert law[(1, 2)] == Fraction(1, 2) * Fraction(1, 3)


def test_domination_path_on_path3():
    g = G.build_family("path(3)")
    path = np.array([0, 1, 0, 1, 2])
    gamma = L.domination_path(g, path, g.edge_id(1, 2))
    assert gamma == [g.directed(0, 1), g.directed(1, 2)]


def test_domination_single_edge_on_triangle():
    g = G.build_family("cycle(3)")
    u, w = (int(x) for x in g.neighbors(0))
    path = np.array([0, u, 0, w])
    tr = L.domination_trace(g, path, g.edge_id(0, w))
    assert tr.gamma == [g.directed(0, w)] and tr.q == {}


def test_q_from_exit_order():
    g = G.build_family("path(3)")
    path = np.array([0, 1, 2, 1, 2, 1, 0])
    tr = L.domination_trace(g, path, g.edge_id(1, 2))
    e = g.directed(1, 2)
    assert tr.m_pair[e] == (2, 1) and tr.q[e] == 2


def test_unresolved_q_is_none():
    g = G.build_family("path(3)")
    path = np.array([0, 1, 2])
    tr = L.domination_trace(g, path, g.edge_id(1, 2))
    assert tr.q[g.directed(1, 2)] is None and not tr.resolved


def test_not_hit():
    g = G.build_family("path(3)")
    with pytest.raises(L.NotHit):
        L.first_crossing(g, np.array([0, 1, 0]), 1)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_resolved_pairs_have_min_one(seed):
    g = G.build_family("grid_box(2,3)")
    x = g.edge_id(7, 8)
    run = L.run_lrrw(g, L.StopRule.max_steps(4000), rng(seed), a=0.5)
    try:
        tr = L.domination_trace(g, run.path, x)
    except L.NotHit:
        return
    assert G.is_chain(g, tr.gamma) and g.src(tr.gamma[0]) == g.v0
    for pair in tr.m_pair.values():
        if pair is not None:
            assert min(pair) == 1


def test_stopping_stats_leaf():
    g = G.build_family("path(3)")
    st_ = L.stopping_stats(g, rng(), 0, 4)
    assert (st_.tau, st_.S) == (4, 4) and st_.M.tolist() == [4]


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 8))
def test_stopping_stats_invariants(seed, Lv):
    g = G.build_family("grid_box(2,3)")
    out = L.stopping_stats(g, rng(seed), 4, Lv, a=0.7)
    assert out.M.min() >= Lv and out.M.sum() == out.tau and out.S == out.M.max()
    assert out.M.min() == Lv


def test_classify_examples():
    assert L.classify_faithful([10, 10], 20, [1, 1], 0.1)
    assert not L.classify_faithful([15, 5], 20, [1, 1], 0.1)
    assert L.classify_balanced(2, 2, 0.1)
    assert L.classify_balanced(11, 10, 0.1)
    assert not L.classify_balanced(12, 10, 0.1)
    with pytest.raises(ValueError):
        L.classify_balanced(3, 4, 0.1)


def test_vertex_stops_consistency():
    g = G.build_family("grid_box(2,3)")
    vs = L.vertex_stops(g, 5, 50, rng(2), a=2.0)
    assert vs.ok.all()
    for v in range(g.n):
        ex = vs.exits_at(g, v)
        assert np.all(ex.min(axis=1) == 5)
        assert np.array_equal(ex.sum(axis=1), vs.tau[:, v])


def test_return_bound_examples():
    assert L.return_bound(2, 1.0, 0) == 1.0
    assert L.return_bound(2, 1.0, 2) == pytest.approx(1 / 2 * (1 / 3) * (2 / 3))
    assert L.return_bound(2, 1.0, 2) == pytest.approx(1 / 9)


def test_return_survival_above_bound():
    g = G.build_family("path(41)", v0=20)
    Ms = np.arange(0, 30)
    sv = L.return_time_survival(g, rng(3), Ms, 20000, a=1.0)
    assert sv.p[0] == 1.0
    assert np.all(np.diff(sv.p) <= 0)
    bound = np.array([L.return_bound(g.K, 1.0, int(M)) for M in Ms])
    assert np.all(sv.p + 3 * sv.stderr >= bound)


def test_environment_estimate_recovers_rwre():
    g = G.build_family("path(4)")
    W = rwre.Environment.from_edges(g, [1.0, 3.0, 0.5])
    run = rwre.run_rwre(W, L.StopRule.max_steps(10 ** 6), rng(4))
    est = L.estimate_environment(g, run.state)
    assert np.allclose(est.weights, W.weights / W.weights[0], rtol=0.05)


def test_environment_estimate_single_edge():
    g = G.build_family("path(2)")
    run = L.run_lrrw(g, L.StopRule.max_steps(7), rng())
    assert L.estimate_environment(g, run.state).weights.tolist() == [1.0]


def test_environment_estimate_is_exit_ratio():
    g = G.build_family("path(3)")
    run = L.run_lrrw(g, L.StopRule.max_steps(5000), rng(9), a=1.0)
    est = L.estimate_environment(g, run.state)
    ex = run.state.exits
    assert est.weights[1] == pytest.approx(ex[g.directed(1, 2)] / ex[g.directed(1, 0)])


def test_polya_urn_law():
    # from the centre of path(3) every excursion adds 2 to the edge it used,
    # so after n excursions the left count is BetaBinomial(n, a/2, a/2),
    # whose scaled limit is Beta(a/2, a/2)
    a, n = 0.5, 1000
    g = G.build_family("path(3)", v0=1)
    exits, _ = L.run_batch(g, 2 * n, 4000, rng(6), a=a)
    left = exits[:, g.directed(1, 0)]
    assert np.all(left + exits[:, g.directed(1, 2)] == n)
    # chi-square over 20 bins of roughly equal exact probability
    law = sps.betabinom(n, a / 2, a / 2)
    cut = np.unique(np.concatenate([[-1], law.ppf(np.linspace(0, 1, 21)[1:-1]), [n]]))
    expected = np.diff(law.cdf(cut)) * len(left)
    observed = np.histogram(left, bins=cut + 0.5)[0]
    assert sps.chisquare(observed, expected).pvalue > S.ALPHA
    # second route: Binomial(n, p) mixed over the limit oracle's Beta draws
    lim = rwre.polya_limit_oracle(a, rng(7), 4000)
    mixed = rng(8).binomial(n, lim)
    code = lambda k: np.searchsorted(cut, k, side="left")
    assert S.chi2_paths(code(left), code(mixed)).p > S.ALPHA


def test_balanced_exits_dominate_binomial():
    # large a: exits along one edge in T departures dominate Bin(T, 1/d - 2T/a)
    g = G.build_family("grid_box(2,5)", v0=12)
    v, d, Lv, eps = 12, 4, 20, 0.2
    T = int((1 + eps) * d * Lv)
    a = 10 * g.K ** 2 * Lv / eps
    r = rng(8)
    e = g.directed(12, 13)
    base = L._base_weights(g, a)
    counts = []
    for _ in range(2000):
        s = L.LrrwState.start(g)
        L.advance(g, s, L.StopRule.visits(v, T + 1), r, base=base)
        counts.append(s.exits[e])
    pb = 1 / d - 2 * T / a
    _, p = S.ks_dominance(np.array(counts), sps.binom(T, pb).cdf, larger=True)
    assert p > S.ALPHA
