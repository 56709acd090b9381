"""Named experiments, one per acceptance gate.

Every experiment takes a :class:`Context` (merged parameters, master seed,
worker count) and returns an :class:`Outcome` with scalar metrics, CSV
tables, plot curves and named pass/fail gates. Statistical gates that fail
are rerun once on an independent stream and fail only if both attempts do.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import coupling, graph as G, lrrw, replicas, rwre, stats, vrjp


@dataclass
class Outcome:
    name: str
    gates: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)  # name -> (columns, rows)
    curves: dict = field(default_factory=dict)  # name -> (xname, yname, xs, ys)
    timeout_rate: float = 0.0

    @property
    def passed(self) -> bool:
        return all(self.gates.values())


@dataclass
class Context:
    params: dict
    seed: int
    workers: int | None = None
    graphs: list | None = None
    process: dict | None = None

    def __getitem__(self, key):
        return self.params[key]

    def blocks(self, tag: str, count: int, attempt: int = 0):
        if attempt:
            tag = f"{tag}/retry{attempt}"
        return replicas.blocks(self.seed, tag, count)

    def rng(self, tag: str, attempt: int = 0):
        if attempt:
            tag = f"{tag}/retry{attempt}"
        return replicas.make_rng(self.seed, replicas.stream_tag(tag))

    def fan(self, fn, tag, count, attempt=0):
        return replicas.fan_out(fn, self.blocks(tag, count, attempt), self.workers)

    def graph_list(self, default):
        if self.graphs:
            return self.graphs
        return [resolve_graph(d) for d in default]

    def a(self, default):
        if self.process and self.process.get("kind") == "lrrw" and "a" in self.process:
            return self.process["a"]
        return self.params.get("a", default)


def resolve_graph(doc) -> G.Graph:
    if isinstance(doc, G.Graph):
        return doc
    if isinstance(doc, dict) and "edges" in doc:
        return G.Graph.from_json(doc)
    if isinstance(doc, dict):
        return G.build_family(doc, float(doc.get("weight", 1.0)), doc.get("v0"))
    return G.build_family(doc)


@dataclass
class Experiment:
    name: str
    criterion: int
    summary: str
    graphs: list
    params: dict
    fn: object
    s_range: tuple | None = None


CATALOG: dict[str, Experiment] = {}


def experiment(name, criterion, summary, graphs, s_range=None, **params):
    def wrap(fn):
        CATALOG[name] = Experiment(name, criterion, summary, graphs, params, fn, s_range)
        return fn
    return wrap


def _retry(check):
    """check(attempt) -> (ok, detail); second attempt on a fresh stream."""
    return stats.retry_gate(check, [0, 1])


def _record_retry(out: Outcome, key: str, res):
    out.gates[key] = res.passed
    out.metrics[key + "_attempts"] = res.attempts
    out.metrics[key + "_detail"] = res.details[-1]


# --- 1 ----------------------------------------------------------------------------------


@experiment("polya", 1, "Left-edge exit fraction at the centre of path(3) is Beta(a/2, a/2)",
            [{"family": "path", "params": [3], "v0": 1}], a=2.0, horizon=10 ** 5,
            replicas=10 ** 4)
def polya(ctx: Context) -> Outcome:
    g = ctx.graph_list(polya_graphs())[0]
    a = float(ctx.a(2.0))
    out = Outcome("polya")
    left = g.directed(g.v0, int(g.neighbors(g.v0)[0]))
    dirs = g.out_dirs(g.v0)

    def fraction(attempt):
        ex = ctx.fan(lambda b: lrrw.run_batch(g, ctx["horizon"], b.count, b.rng, a)[0],
                     "polya", ctx["replicas"], attempt)
        return ex[:, left] / ex[:, dirs].sum(axis=1)

    def check(attempt):
        f = fraction(attempt)
        _, p = stats.ks_test(f, sps.beta(a / 2, a / 2).cdf)
        return p > stats.ALPHA, {"ks_p": p, "mean": float(f.mean())}

    _record_retry(out, "ks_beta", _retry(check))
    return out


def polya_graphs():
    return CATALOG["polya"].graphs


# --- 2 ----------------------------------------------------------------------------------


def decay_levels(g: G.Graph, target: int | None, levels: int):
    """Edge ids along the geodesic from v0, levels 1..levels."""
    if target is None:
        target = int(np.argmax(G.bfs_distances(g, g.v0)))
    geo = G.geodesic(g, target)
    if len(geo) < levels:
        raise ValueError("graph too shallow for the requested levels")
    return [d >> 1 for d in geo[:levels]]


@experiment("decay", 2, "E(W_e/W_e1)^s decays geometrically along a geodesic",
            ["path(6)", "k_ary_tree(2,5)"], s_range=(0.0, 0.25, True), a=0.01, s=0.25,
            levels=5, T=20000, replicas=10 ** 4, tilt=1.0)
def decay(ctx: Context) -> Outcome:
    a, s = float(ctx.a(0.01)), float(ctx["s"])
    out = Outcome("decay")
    rows = []
    for g in ctx.graph_list(CATALOG["decay"].graphs):
        edges = decay_levels(g, None, ctx["levels"])
        ests = []
        for lvl, x in enumerate(edges, start=1):
            prop = np.full(g.m, a)
            prop[edges[:lvl]] = ctx["tilt"]
            r, lr = ctx.fan(lambda b: lrrw.weight_ratio_samples(g, x, ctx["T"], b.count,
                                                                b.rng, a, prop),
                            f"decay/{g.name}/{lvl}", ctx["replicas"])
            est = stats.weighted_moment(r, lr, s, boot=499, rng=lvl)
            ests.append(est)
            oracle = rwre.path_beta_moment(a, s) ** (lvl - 1) if g.name.startswith("path") \
                else float("nan")
            rows.append((g.name, lvl, est.mean, est.stderr, est.ci[0], est.ci[1],
                         float(np.isnan(r).mean()), oracle))
        d = np.arange(1, len(ests) + 1)
        fit = stats.decay_fit(d, [e.mean for e in ests])
        disjoint = all(ests[i].ci[1] < ests[i - 1].ci[0] for i in range(1, len(ests)))
        out.gates[f"{g.name}_rate"] = fit.slope <= math.log(0.5)
        out.gates[f"{g.name}_ci_ordered"] = disjoint
        out.metrics[f"{g.name}_rate"] = fit.slope
        out.metrics[f"{g.name}_rate_stderr"] = fit.stderr
        out.curves[f"decay_{g.name}"] = ("distance", "log_moment", d.tolist(),
                                         [math.log(e.mean) for e in ests])
    out.tables["decay"] = (("graph", "distance", "moment", "stderr", "ci_lo", "ci_hi",
                            "unreached", "path_limit_oracle"), rows)
    return out


# --- 3 ----------------------------------------------------------------------------------


@experiment("lemma-rub", 3, "Exit-sequence ratio moments match the geometric series",
            [], s_range=(0.0, 1.0), ps=[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            ss=[0.1, 0.25, 0.5], samples=10 ** 5)
def lemma_rub(ctx: Context) -> Outcome:
    out = Outcome("lemma-rub")
    rows = []
    ok_all = True
    for p in ctx["ps"]:
        for s in ctx["ss"]:
            oracle = rwre.q_given_w_moment_oracle(p, s)

            def check(attempt, p=p, s=s, oracle=oracle):
                pairs = rwre.q_pair_samples(p, ctx["samples"],
                                            ctx.rng(f"rub/{p}/{s}", attempt))
                v = rwre.rub_statistic(p, pairs, s)
                m, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))
                return stats.within_sigma(m, se, oracle), (m, se)

            res = _retry(check)
            m, se = res.details[-1]
            rows.append((p, s, m, se, oracle, (m - oracle) / se, res.passed))
            ok_all &= res.passed
    out.gates["mc_vs_oracle"] = ok_all
    for s in ctx["ss"]:
        grid = np.linspace(0.01, 0.99, 99)
        sup = max(rwre.q_given_w_moment_oracle(p, s) for p in grid)
        bound = rwre.rub_grid_bound(s, grid)
        out.metrics[f"sup_s{s}"] = sup
        out.metrics[f"bound_s{s}"] = bound
        out.gates[f"sup_bounded_s{s}"] = bool(np.isfinite(sup) and sup <= bound)
    out.tables["rub"] = (("p", "s", "mc", "stderr", "oracle", "z", "pass"), rows)
    return out


# --- 4 ----------------------------------------------------------------------------------


@experiment("lemma-aub", 4, "E Qbar^s is linear in a with a K-dependent constant", [],
            s_range=(0.0, 0.5), s=0.25, alist=[1e-3, 1e-2, 1e-1], Ks=[3, 4],
            samples=5 * 10 ** 5, spread=2.0)
def lemma_aub(ctx: Context) -> Outcome:
    out = Outcome("lemma-aub")
    s = ctx["s"]
    rows = []
    mc_ok = True
    for K in ctx["Ks"]:
        ratios = []
        for a in ctx["alist"]:
            lad = coupling.BernoulliLadder.uniform(a, K)
            oracle = coupling.qbar_moment_oracle(lad, s)
            ratios.append(oracle / a)

            def check(attempt, lad=lad, oracle=oracle, a=a, K=K):
                q = coupling.sample_qbar_many(lad, ctx["samples"],
                                              ctx.rng(f"aub/{K}/{a}", attempt))
                v = q ** s
                m, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))
                return stats.within_sigma(m, se, oracle), (m, se)

            res = _retry(check)
            m, se = res.details[-1]
            mc_ok &= res.passed
            rows.append((K, a, oracle, oracle / a, m, se, res.passed))
        spread = max(ratios) / min(ratios)
        out.metrics[f"K{K}_max_ratio"] = max(ratios)
        out.metrics[f"K{K}_spread"] = spread
        out.gates[f"K{K}_linear_in_a"] = bool(np.all(np.isfinite(ratios))
                                             and spread <= ctx["spread"])
    out.gates["mc_vs_oracle"] = mc_ok
    out.tables["aub"] = (("K", "a", "oracle", "oracle_over_a", "mc", "stderr", "pass"), rows)
    return out


# --- 5 ----------------------------------------------------------------------------------


def coupling_configs():
    return [("path(4)", 0.02), ("path(4)", 0.1), ("k_ary_tree(2,3)", 0.02),
            ("k_ary_tree(2,3)", 0.1)]


def default_gamma(g: G.Graph):
    target = int(np.argmax(G.bfs_distances(g, g.v0)))
    return G.geodesic(g, target)


def marginal_chi2(g, a, codes, k):
    """Goodness of fit of recorded k-step prefixes against the exact law."""
    law = lrrw.path_law(g, k, a)
    keys = list(law)
    index = {key: i for i, key in enumerate(keys)}
    counts = np.zeros(len(keys))
    for row in codes:
        counts[index[tuple(int(v) for v in row[:k])]] += 1
    expected = np.array([law[key] for key in keys]) * len(codes)
    small = expected < 5
    if small.any():
        counts = np.append(counts[~small], counts[small].sum())
        expected = np.append(expected[~small], expected[small].sum())
    return float(sps.chisquare(counts, expected).pvalue)


@experiment("coupling-domination", 5, "Q(e) <= Qbar(e) on D_gamma; coupled walk is LRRW",
            [], runs=10 ** 5, horizon=5000, marginal_runs=10 ** 5, marginal_steps=6)
def coupling_domination(ctx: Context) -> Outcome:
    out = Outcome("coupling-domination")
    rows = []
    total_viol = 0
    pvals = []
    timeouts = []
    configs = [(g.name, ctx.a(0.1)) for g in ctx.graphs] if ctx.graphs else coupling_configs()
    for name, a in configs:
        g = resolve_graph(name)
        gamma = default_gamma(g)
        st, me, mf, qb = ctx.fan(lambda bl: _coupled(g, gamma, bl, a, ctx["horizon"], 0),
                                 f"coupling/{name}/{a}", ctx["runs"])
        cb = coupling.CoupledBatch(gamma, st, None, me, mf, qb, None, None)
        v_d = cb.violations(only_d_gamma=True)
        v_all = cb.violations(only_d_gamma=False)
        total_viol += v_d
        timeouts.append(float((st == 2).mean()))
        k = ctx["marginal_steps"]

        def check(attempt, g=g, gamma=gamma, a=a, name=name, k=k):
            codes = ctx.fan(lambda bl: _coupled(g, gamma, bl, a, k, k),
                            f"coupling-marginal/{name}/{a}", ctx["marginal_runs"], attempt)
            p = marginal_chi2(g, a, codes, k)
            return p > stats.bonferroni(stats.ALPHA, len(configs)), p

        res = _retry(check)
        pvals.append(res.passed)
        rows.append((name, a, int((st == 0).sum()), int(cb.resolved[:, 1:].sum()), v_d, v_all,
                     res.details[-1]))
    out.gates["zero_violations_on_d_gamma"] = total_viol == 0
    out.gates["marginal_equals_lrrw"] = all(pvals)
    out.timeout_rate = float(np.mean(timeouts))
    out.tables["coupling"] = (("graph", "a", "runs_on_d_gamma", "determined_q",
                               "violations_d_gamma", "violations_all", "marginal_p"), rows)
    return out


def _coupled(g, gamma, bl, a, horizon, record):
    """Domination runs stop at resolution; recorded runs walk the full horizon."""
    cb = coupling.coupled_batch(g, gamma, bl.count, bl.rng, a=a, horizon=horizon,
                                stop_on_resolution=not record, record=record)
    if record:
        return cb.paths
    return cb.status, cb.me, cb.mf, cb.qbar


# --- 6 ----------------------------------------------------------------------------------


@experiment("return-tail", 6, "Return-time survival dominates the product formula",
            [{"family": "path", "params": [131], "v0": 65}], a=1.0, Mmax=64,
            replicas=10 ** 5)
def return_tail(ctx: Context) -> Outcome:
    g = ctx.graph_list(CATALOG["return-tail"].graphs)[0]
    a = float(ctx.a(1.0))
    K = g.K
    Ms = np.arange(1, ctx["Mmax"] + 1)
    times = ctx.fan(lambda b: lrrw.return_times(g, b.rng, int(Ms.max()), b.count, a),
                    "return-tail", ctx["replicas"])
    sv = lrrw.survival_from_times(times, Ms)
    k = np.round(sv.p * sv.n).astype(np.int64)
    upper = stats.binomial_upper(k, sv.n)
    bound = np.array([lrrw.return_bound(K, a, int(M)) for M in Ms])
    fit = stats.tail_fit(Ms, sv.p)
    out = Outcome("return-tail")
    out.gates["survival_above_bound"] = bool(np.all(upper >= bound))
    out.gates["tail_exponent"] = fit.slope >= -(K - 1) * a - 0.5
    out.metrics.update(tail_exponent=fit.slope, tail_stderr=fit.stderr,
                       min_margin=float(np.min(upper - bound)))
    out.tables["return_tail"] = (("M", "survival", "stderr", "upper99", "bound"),
                                 list(zip(Ms.tolist(), sv.p.tolist(), sv.stderr.tolist(),
                                          upper.tolist(), bound.tolist())))
    pos = sv.p > 0
    out.curves["return_tail"] = ("log_M", "log_survival", np.log(Ms[pos]).tolist(),
                                 np.log(sv.p[pos]).tolist())
    return out


# --- 7 ----------------------------------------------------------------------------------


def environment_grid(g, rng):
    return {"uniform": np.ones(g.m), "uniform(0.5,1.5)": rng.uniform(0.5, 1.5, g.m),
            "gamma(5)": rng.gamma(5.0, 1.0, g.m)}


@experiment("faithful-balanced", 7, "Good vertices form a dense site percolation",
            ["grid_box(2,7)"], eps=0.2, delta=0.1, Ls=[25, 50, 100, 200, 400],
            alist=[1e3, 1e4, 1e5], fixed_replicas=400, lrrw_replicas=100,
            pair_replicas=4000, pair_L=25, extra=2 * 10 ** 6)
def faithful_balanced(ctx: Context) -> Outcome:
    g = ctx.graph_list(CATALOG["faithful-balanced"].graphs)[0]
    eps, delta = ctx["eps"], ctx["delta"]
    out = Outcome("faithful-balanced")
    envs = environment_grid(g, ctx.rng("fb/envs"))

    # faithfulness under fixed W: smallest L with failure < delta on every environment
    rows = []
    L_star = None
    for L in ctx["Ls"]:
        worst = 0.0
        for name, W in envs.items():
            vs = lrrw.vertex_stops(g, L, ctx["fixed_replicas"], ctx.rng(f"fb/fixed/{L}/{name}"),
                                   env=W)
            fail = 1 - float(vs.faithful(g, eps, W).mean())
            worst = max(worst, fail)
            rows.append(("fixed", name, L, "", fail, ""))
        if L_star is None and worst < delta:
            L_star = L
    out.metrics["faithful_L"] = L_star
    out.gates["faithful_L_found"] = L_star is not None

    # independence of faithfulness at distinct vertices under fixed W
    W = envs["uniform(0.5,1.5)"]
    far = int(np.argmax(G.bfs_distances(g, g.v0)))
    mid = g.n // 2
    pairs = [(g.v0, int(g.neighbors(g.v0)[0])), (g.v0, far), (mid, int(g.neighbors(mid)[0])),
             (mid, far)]

    def check(attempt):
        vs = lrrw.vertex_stops(g, ctx["pair_L"], ctx["pair_replicas"],
                               ctx.rng("fb/pairs", attempt), env=W)
        f = vs.faithful(g, eps, W)
        ps = [stats.chi2_independence(f[:, u], f[:, v]).p for u, v in pairs]
        return min(ps) > stats.bonferroni(stats.ALPHA, len(pairs)), ps

    _record_retry(out, "faithful_independent", _retry(check))

    # LRRW in the balanced regime a >= K^2 L / eps
    K = g.K
    best = math.inf
    regime_pts = 0
    timeouts = []
    for L in ctx["Ls"]:
        for a in ctx["alist"]:
            if a < K * K * L / eps:
                continue
            regime_pts += 1
            vs = lrrw.vertex_stops(g, L, ctx["lrrw_replicas"], ctx.rng(f"fb/lrrw/{L}/{a}"), a=a,
                                   extra=ctx["extra"])
            timeouts.append(1 - float(vs.ok.mean()))
            good = vs.faithful(g, eps) & vs.balanced(g, eps)
            bad = 1 - float(good[vs.ok].mean()) if vs.ok.any() else 1.0
            best = min(best, bad)
            rows.append(("lrrw", "", L, a, bad, 1 - float(vs.balanced(g, eps)[vs.ok].mean())))
    out.metrics["best_bad_density"] = best
    out.metrics["regime_points"] = regime_pts
    out.gates["bad_density_below_2delta"] = best < 2 * delta
    out.timeout_rate = float(np.mean(timeouts)) if timeouts else 0.0
    out.tables["faithful_balanced"] = (("walk", "environment", "L", "a", "bad_density",
                                        "unbalanced"), rows)
    return out


# --- 8 ----------------------------------------------------------------------------------


@experiment("tree-phase", 8, "Returns to the root fall and leaf escape rises with a",
            ["k_ary_tree(2,10)"], alist=[0.1, 0.5, 1, 2, 4, 8], T=10 ** 5, replicas=1000)
def tree_phase(ctx: Context) -> Outcome:
    g = ctx.graph_list(CATALOG["tree-phase"].graphs)[0]
    d = G.bfs_distances(g, g.v0)
    leaves = np.flatnonzero(d == d.max())
    rows = []
    scores, escapes = [], []
    for a in ctx["alist"]:
        vis = ctx.fan(lambda b: lrrw.run_batch(g, ctx["T"], b.count, b.rng, float(a))[1],
                      f"tree-phase/{a}", ctx["replicas"])
        ret = (vis[:, g.v0] - 1) * (10 ** 5 / ctx["T"])
        esc = (vis[:, leaves] > 0).any(axis=1)
        scores.append(float(ret.mean()))
        escapes.append(float(esc.mean()))
        rows.append((a, float(ret.mean()), float(ret.std(ddof=1) / math.sqrt(len(ret))),
                     float(esc.mean())))
    out = Outcome("tree-phase")
    out.gates["score_strictly_decreasing"] = bool(np.all(np.diff(scores) < 0))
    out.gates["escape_high_at_max_a"] = escapes[-1] > 0.9
    out.gates["escape_low_at_min_a"] = escapes[0] < 0.1
    out.tables["tree_phase"] = (("a", "returns_per_1e5", "stderr", "leaf_escape"), rows)
    out.curves["tree_phase"] = ("a", "recurrence_score", list(ctx["alist"]), scores)
    return out


# --- 9 ----------------------------------------------------------------------------------


@experiment("vrjp-timechange", 9, "Y, environment-Z and reinforced-Z agree after re-clocking",
            ["cycle(3)"], J=1.0, jumps=6, replicas=10 ** 5, burn=4000, clock_runs=200,
            clock_jumps=500)
def vrjp_timechange(ctx: Context) -> Outcome:
    g = ctx.graph_list(CATALOG["vrjp-timechange"].graphs)[0]
    J = _vrjp_J(ctx, ctx["J"])
    out = Outcome("vrjp-timechange")
    rng = ctx.rng("timechange/clock")
    worst_rt = worst_clock = 0.0
    for _ in range(ctx["clock_runs"]):
        y = vrjp.y_run(g, ctx["clock_jumps"], rng, J)
        z = vrjp.y_to_z(y)
        back = vrjp.z_to_y(z)
        worst_rt = max(worst_rt, float(np.max(np.abs(back.holds - y.holds)
                                              / np.maximum(y.holds, 1e-300))))
        worst_clock = max(worst_clock, clock_error(y, z))
    out.metrics.update(round_trip_rel=worst_rt, clock_rel=worst_clock)
    out.gates["round_trip"] = worst_rt <= 1e-12
    out.gates["clock_conservation"] = worst_clock <= 1e-9

    k, n = ctx["jumps"], ctx["replicas"]

    def check(attempt):
        y = ctx.fan(lambda b: vrjp.y_path_codes(g, k, b.count, b.rng, J), "tc/y", n, attempt)
        zr = ctx.fan(lambda b: vrjp.z_reinforced_path_codes(g, k, b.count, b.rng, J), "tc/zr",
                     n, attempt)
        ze = ctx.fan(lambda b: vrjp.z_env_path_codes(g, k, b.count, b.rng, J, ctx["burn"]),
                     "tc/ze", n, attempt)
        ps = {"y_vs_zreinf": stats.chi2_paths(y, zr).p, "y_vs_zenv": stats.chi2_paths(y, ze).p,
              "zenv_vs_zreinf": stats.chi2_paths(ze, zr).p}
        return min(ps.values()) > stats.bonferroni(stats.ALPHA, 3), ps

    _record_retry(out, "three_descriptions", _retry(check))
    return out


def clock_error(y: vrjp.Trajectory, z: vrjp.Trajectory) -> float:
    """Worst relative error of sum L = t, sum M = s and M = L^2 + 2L over events."""
    n = int(y.vertices.max()) + 1
    L, M = np.zeros(n), np.zeros(n)
    t = s = 0.0
    worst = 0.0
    for v, hy, hz in zip(y.vertices[:-1], y.holds, z.holds):
        L[v] += hy
        M[v] += hz
        t += hy
        s += hz
        worst = max(worst, abs(L.sum() - t) / t, abs(M.sum() - s) / s,
                    abs(M[v] - (L[v] ** 2 + 2 * L[v])) / M[v])
    return worst


def _vrjp_J(ctx, default):
    p = ctx.process or {}
    if p.get("kind") == "vrjp" and "fixed" in p.get("J", {}):
        return float(p["J"]["fixed"])
    return float(default)


# --- 10 ---------------------------------------------------------------------------------


@experiment("vrjp-reflection", 10, "E prod (R/Q)^{2s} equals (pi s / sin pi s)^len", [],
            pairs=[(0.2, 1), (0.2, 3), (0.45, 2)], replicas=2 * 10 ** 5, J=1.0)
def vrjp_reflection(ctx: Context) -> Outcome:
    out = Outcome("vrjp-reflection")
    half = vrjp.reflection_oracle(0.5, 1)
    out.metrics["half_len1"] = half
    out.gates["s_half_is_pi_over_2"] = abs(half - math.pi / 2) <= 1e-12
    rows = []
    ok = True
    J = _vrjp_J(ctx, ctx["J"])
    for s, length in ctx["pairs"]:
        g = G.build_family(f"path({length + 1})", J)
        W = np.exp(ctx.rng(f"refl/W/{length}").normal(0, 0.5, g.n))
        dirs = np.array([[2 * e, 2 * e + 1] for e in range(g.m)]).ravel()
        oracle = vrjp.reflection_oracle(s, length)

        def check(attempt, g=g, W=W, dirs=dirs, s=s, length=length, oracle=oracle):
            tau = ctx.fan(lambda b: vrjp.tau_samples(g, W, dirs, b.count, b.rng),
                          f"refl/{s}/{length}", ctx["replicas"], attempt)
            v = reflection_statistic(g, W, tau, s)
            m, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))
            return stats.within_sigma(m, se, oracle), (m, se)

        res = _retry(check)
        m, se = res.details[-1]
        ok &= res.passed
        rows.append((s, length, m, se, oracle, res.passed))
    out.gates["mc_vs_reflection"] = ok
    out.tables["reflection"] = (("s", "len", "mc", "stderr", "oracle", "pass"), rows)
    return out


def reflection_statistic(g, W, tau, s):
    """prod over path edges of (R/Q)^{2s}, R = W_j/W_i, Q = sqrt(tau_ji/tau_ij)."""
    out = np.ones(len(tau))
    for e in range(g.m):
        i, j = g.edges[e]
        t_ij, t_ji = tau[:, 2 * e], tau[:, 2 * e + 1]
        if g.src(2 * e) != i:
            t_ij, t_ji = t_ji, t_ij
        R = W[j] / W[i]
        Q = np.sqrt(t_ji / t_ij)
        out *= (R / Q) ** (2 * s)
    return out


# --- 11 ---------------------------------------------------------------------------------


@experiment("vrjp-moments", 11, "Quadrature for E((2V+V^2)/(2U+U^2))^s and its J^{2s} scaling",
            [], s_range=(0.0, 0.25), J=1.0, s=0.2, Js=[0.01, 0.1, 1.0], samples=10 ** 7)
def vrjp_moments(ctx: Context) -> Outcome:
    out = Outcome("vrjp-moments")
    s, J = ctx["s"], ctx["J"]
    quad = vrjp.uv_moment_oracle(J, s)

    def check(attempt):
        rng = ctx.rng("moments/mc", attempt)
        acc = []
        left = ctx["samples"]
        while left > 0:
            n = min(left, 10 ** 6)
            acc.append(vrjp.uv_ratio_xy(rng.exponential(size=n), rng.exponential(size=n), J) ** s)
            left -= n
        v = np.concatenate(acc)
        m, se = float(v.mean()), float(v.std(ddof=1) / math.sqrt(len(v)))
        return stats.within_sigma(m, se, quad), (m, se)

    res = _retry(check)
    _record_retry(out, "quadrature_vs_mc", res)
    out.metrics["quadrature"] = quad
    rows = []
    within = True
    for Jv in ctx["Js"]:
        o = vrjp.uv_moment_oracle(Jv, s)
        c = vrjp.uv_moment_bound(Jv, s) / Jv ** (2 * s)
        rows.append((Jv, o, o / Jv ** (2 * s), c))
        within &= o / Jv ** (2 * s) <= c
    out.gates["scaled_oracle_bounded"] = bool(within)
    out.tables["moments"] = (("J", "oracle", "oracle_over_J2s", "constant"), rows)
    return out


# --- 12 ---------------------------------------------------------------------------------


@experiment("embed", 12, "LRRW(a) is the jump chain of VRJP with Gamma(a,1) rates", [],
            cases=[("cycle(3)", 1.0, 2), ("path(3)", 0.5, 4)], replicas=10 ** 5)
def embed(ctx: Context) -> Outcome:
    out = Outcome("embed")
    rows = []
    ok = True
    for name, a, k in ctx["cases"]:
        g = resolve_graph(name)

        def check(attempt, g=g, a=a, k=k, name=name):
            lr = ctx.fan(lambda b: vrjp.lrrw_path_codes(g, k, b.count, b.rng, a),
                         f"embed/lrrw/{name}", ctx["replicas"], attempt)
            vy = ctx.fan(lambda b: vrjp.y_path_codes(g, k, b.count, b.rng, 1.0, gamma_a=a),
                         f"embed/vrjp/{name}", ctx["replicas"], attempt)
            r = stats.chi2_paths(lr, vy)
            return r.p > stats.bonferroni(stats.ALPHA, len(ctx["cases"])), r.p

        res = _retry(check)
        ok &= res.passed
        rows.append((name, a, k, res.details[-1], res.passed))
    out.gates["histograms_equal"] = ok
    out.tables["embed"] = (("graph", "a", "steps", "chi2_p", "pass"), rows)
    return out


# --- 13 ---------------------------------------------------------------------------------


@experiment("finite-ball-scan", 13, "Fraction of balls with a heavy edge at distance l decays",
            ["k_ary_tree(2,6)"], Rs=[2, 3, 4], a=0.01, T=20000, replicas=4000)
def finite_ball_scan(ctx: Context) -> Outcome:
    big = ctx.graph_list(CATALOG["finite-ball-scan"].graphs)[0]
    a = float(ctx.a(0.01))
    out = Outcome("finite-ball-scan")
    rows = []
    for R in ctx["Rs"]:
        g = G.ball(big, big.v0, R)
        ed = G.edge_distances(g)
        K = big.K
        # at distance 0 every W_e <= W_v0 = 1, so the scan starts at 1
        levels = np.arange(1, int(ed.max()) + 1)
        root = g.incident(g.v0)

        def heavy(b, g=g, ed=ed, K=K, levels=levels, root=root):
            exits, fe, first = _final_states(g, ctx["T"], b.count, b.rng, a)
            res = np.zeros((b.count, len(levels)), dtype=bool)
            for r in range(b.count):
                W = lrrw._chain(g.indptr, g.nbr, g.nbr_dir, exits[r], fe[r], g.v0, first[r],
                                g.n, g.m)
                W = np.nan_to_num(W, nan=0.0)
                W /= W[root].sum()
                for i, lvl in enumerate(levels):
                    res[r, i] = np.any(W[ed == lvl] > (2 * K) ** (-float(lvl)))
            return res

        h = ctx.fan(heavy, f"ball/{R}", ctx["replicas"])
        k = h.sum(axis=0)
        n = len(h)
        frac = k / n
        lo, hi = stats.binomial_lower(k, n), stats.binomial_upper(k, n)
        for i, lvl in enumerate(levels):
            rows.append((R, int(lvl), float(frac[i]), float(lo[i]), float(hi[i])))
        # no significant increase between consecutive levels
        mono = bool(np.all(lo[1:] <= hi[:-1]))
        out.gates[f"R{R}_monotone"] = mono
        if len(levels) >= 2:
            out.gates[f"R{R}_decays"] = bool(hi[-1] < lo[0])
        out.curves[f"ball_R{R}"] = ("distance", "heavy_fraction", levels.tolist(),
                                    frac.tolist())
    out.tables["finite_ball"] = (("R", "distance", "fraction", "ci_lo", "ci_hi"), rows)
    return out


def _final_states(g, T, count, rng, a):
    exits = np.zeros((count, 2 * g.m), dtype=np.int64)
    fe = np.full((count, g.n), -1, dtype=np.int64)
    first = np.zeros(count, dtype=np.int64)
    for r in range(count):
        st = lrrw.LrrwState.start(g)
        lrrw.advance(g, st, lrrw.StopRule.max_steps(T), rng, base=np.full(g.m, a))
        exits[r] = st.exits
        fe[r] = st.first_entry
        first[r] = st.first_dir
    return exits, fe, first


def names() -> list[str]:
    return list(CATALOG)


def run(name: str, params: dict | None = None, seed: int = 20240601, workers=None,
        graphs=None, process=None) -> Outcome:
    exp = CATALOG[name]
    merged = dict(exp.params)
    merged.update(params or {})
    if exp.s_range is not None and "s" in merged:
        lo, hi, *closed = exp.s_range
        s = merged["s"]
        ok = lo < s <= hi if closed and closed[0] else lo < s < hi
        if not ok:
            br = "]" if closed and closed[0] else ")"
            raise ValueError(f"s must lie in ({lo}, {hi}{br} for {name}")
    ctx = Context(merged, int(seed), workers, graphs, process)
    return exp.fn(ctx)
