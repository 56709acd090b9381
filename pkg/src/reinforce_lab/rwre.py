"""Random walk in a fixed environment and the exact oracles built on it."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .graph import Graph
from . import lrrw

NORMALIZATIONS = ("e1", "v0", "none")


class Degenerate(ValueError):
    pass


@dataclass
class Environment:
    """Positive weights on edges (or vertices) of a graph.

    Weights may carry NaN for edges an estimator could not reach; those are
    excluded through ``observed`` and never silently filled in.
    """

    kind: str
    weights: np.ndarray
    normalization: str = "none"
    graph: Graph | None = field(default=None, repr=False, compare=False)
    _totals: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("edge", "vertex"):
            raise ValueError(f"unknown environment kind {self.kind!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ValueError(f"unknown normalization {self.normalization!r}")
        self.weights = np.asarray(self.weights, dtype=np.float64)

    @classmethod
    def from_edges(cls, g: Graph, W, normalization="none", allow_missing=False):
        W = np.asarray(W, dtype=np.float64).copy()
        if W.shape != (g.m,):
            raise ValueError("one weight per edge is required")
        obs = ~np.isnan(W)
        if not allow_missing and not obs.all():
            raise ValueError("missing edge weights")
        if np.any(W[obs] < 0) or (not allow_missing and np.any(W <= 0)):
            raise ValueError("environment weights must be positive")
        return cls("edge", W, normalization, g)

    @classmethod
    def from_vertices(cls, g: Graph, W, normalization="none"):
        W = np.asarray(W, dtype=np.float64).copy()
        if W.shape != (g.n,) or np.any(~(W > 0)):
            raise ValueError("vertex weights must be positive, one per vertex")
        return cls("vertex", W, normalization, g)

    @property
    def observed(self) -> np.ndarray:
        return ~np.isnan(self.weights)

    def vertex_totals(self) -> np.ndarray:
        """W_v = sum of W_e over edges at v (edge environments only)."""
        if self.kind != "edge":
            raise TypeError("vertex totals need an edge environment")
        if self._totals is None:
            g = self.graph
            tot = np.zeros(g.n)
            np.add.at(tot, g.edges[:, 0], self.weights)
            np.add.at(tot, g.edges[:, 1], self.weights)
            self._totals = tot
        return self._totals

    def incident(self, v: int) -> np.ndarray:
        return self.weights[self.graph.incident(v)]

    def ratio(self, e: int, e_prev: int) -> float:
        """R(e) = W_e / W_e' for undirected edge ids."""
        return float(self.weights[e] / self.weights[e_prev])

    def normalized(self, how: str, ref_edge: int | None = None) -> "Environment":
        W = self.weights.copy()
        if how == "v0":
            g = self.graph
            W = W / np.nansum(W[g.incident(g.v0)])
        elif how == "e1":
            if ref_edge is None:
                raise ValueError("normalizing by the first edge needs its id")
            W = W / W[ref_edge]
        elif how != "none":
            raise ValueError(f"unknown normalization {how!r}")
        return Environment(self.kind, W, how, self.graph)

    def to_json(self) -> dict:
        return {"kind": self.kind,
                "weights": [None if np.isnan(w) else float(w) for w in self.weights],
                "normalization": self.normalization}

    @classmethod
    def from_json(cls, doc, g: Graph | None = None) -> "Environment":
        if isinstance(doc, str):
            doc = json.loads(doc)
        W = [np.nan if w is None else float(w) for w in doc["weights"]]
        return cls(doc["kind"], np.array(W), doc.get("normalization", "none"), g)


def uniform_environment(g: Graph) -> Environment:
    return Environment.from_edges(g, np.ones(g.m))


# --- walking ------------------------------------------------------------------


def step_probs(W: Environment, v: int) -> np.ndarray:
    w = W.incident(v)
    return w / w.sum()


def rwre_step(W: Environment, v: int, rng) -> int:
    g = W.graph
    if W.kind != "edge":
        raise TypeError("the walk needs an edge environment")
    k = rng.choice(len(g.neighbors(v)), p=step_probs(W, v))
    return int(g.neighbors(v)[k])


def run_rwre(W: Environment, stop: lrrw.StopRule, rng, *, state=None,
             budget=None, record_path=False):
    """Walk in the fixed environment with the LRRW bookkeeping."""
    g = W.graph
    state = lrrw.LrrwState.start(g) if state is None else state
    base = np.ascontiguousarray(W.weights)
    path = None
    if record_path:
        n = stop.count if stop.kind == lrrw.MAX_STEPS else (budget or lrrw.PATH_LIMIT)
        buf = np.empty(min(n, lrrw.PATH_LIMIT) + 1, dtype=np.int64)
        buf[0] = state.position
        status, plen, _ = lrrw.advance(g, state, stop, rng, budget=budget, base=base,
                                       reinforce=0.0, path=buf[1:])
        path = buf[:plen + 1]
    else:
        status, _, _ = lrrw.advance(g, state, stop, rng, budget=budget, base=base,
                                    reinforce=0.0)
    return lrrw.LrrwRun(state, path, status, stop)


def exit_sequences(W: Environment, v: int, n: int, rng) -> np.ndarray:
    """n i.i.d. edges at v, each drawn with probability W_e / W_v."""
    if n < 1:
        raise ValueError("n must be >= 1")
    inc = W.graph.incident(v)
    return inc[rng.choice(len(inc), size=n, p=step_probs(W, v))]


@njit(nogil=True, cache=True)
def _q_pairs(p, count, rng):
    # exit sequence restricted to {e, f}: e with prob p
    out = np.empty((count, 2), dtype=np.int64)
    for r in range(count):
        me = 0
        mf = 0
        while me == 0 or mf == 0:
            if rng.random() < p:
                me += 1
            else:
                mf += 1
        out[r, 0] = me
        out[r, 1] = mf
    return out


def q_pair_samples(p: float, count: int, rng) -> np.ndarray:
    """(M_e, M_f) read off i.i.d. exit sequences with P(e) = p."""
    if not 0 < p < 1:
        raise Degenerate("p must lie strictly between 0 and 1")
    return _q_pairs(float(p), int(count), rng)


def rub_statistic(p: float, pairs: np.ndarray, s: float) -> np.ndarray:
    """((p/q) * M_f / M_e)^s per sample."""
    q = 1 - p
    return ((p / q) * pairs[:, 1] / pairs[:, 0]) ** s


def q_given_w_moment_oracle(p: float, s: float, tol: float = 1e-12) -> float:
    """E[((p/q) M_f/M_e)^s | W] as an explicitly truncated double series.

    The f-first series is cut once the ratio bound of consecutive terms
    gives a tail below tol; the e-first series is dominated by a plain
    geometric tail.
    """
    if not 0 < p < 1:
        raise Degenerate("p must lie strictly between 0 and 1")
    if not 0 <= s < 1:
        raise ValueError("s must lie in [0, 1)")
    q = 1 - p
    pre = (p / q) ** s
    budget = tol / (2 * max(pre, 1.0))

    total_f = 0.0
    k = 1
    while True:
        term = k ** s * p * q ** k
        total_f += term
        r = (1 + 1 / k) ** s * q
        if r < 1 and term * r / (1 - r) < budget:
            break
        k += 1

    total_e = 0.0
    k = 1
    while True:
        total_e += k ** (-s) * q * p ** k
        if q * p ** (k + 1) / (1 - p) < budget:
            break
        k += 1
    return pre * (total_f + total_e)


def rub_grid_bound(s: float, ps=None) -> float:
    """4 * max_p (q^{1-s} + p^{1+s}) over the grid used for the supremum check."""
    ps = np.linspace(0.01, 0.99, 99) if ps is None else np.asarray(ps)
    return 4 * float(np.max((1 - ps) ** (1 - s) + ps ** (1 + s)))


def polya_limit_oracle(a: float, rng, size=None):
    """Limiting left-edge exit fraction at the centre of path(3).

    Each excursion into a leaf adds 2 to the chosen edge, a two-colour urn
    started from (a, a) with increment 2, so the limit is Beta(a/2, a/2).
    Sampled as a ratio of two Gamma(a/2) variables.
    """
    if a <= 0:
        raise ValueError("a must be positive")
    x = rng.standard_gamma(a / 2, size)
    y = rng.standard_gamma(a / 2, size)
    return x / (x + y)


def stationary_measure(W: Environment) -> np.ndarray:
    """pi(v) = W_v / 2W with W the total edge weight."""
    tot = W.vertex_totals()
    return tot / (2 * np.nansum(W.weights))


def detailed_balance_gap(W: Environment) -> float:
    """max over edges of |pi(u)P(u,v) - pi(v)P(v,u)|."""
    g = W.graph
    pi = stationary_measure(W)
    tot = W.vertex_totals()
    u, v = g.edges[:, 0], g.edges[:, 1]
    return float(np.max(np.abs(pi[u] * W.weights / tot[u] - pi[v] * W.weights / tot[v]),
                        initial=0.0))


def path_beta_moment(a: float, s: float) -> float:
    """E (p/(1-p))^s for p ~ Beta(a/2, (a+1)/2).

    Law of W_{next}/W_{entry} at an interior vertex of a path, entered for the
    first time: the entry edge already carries one crossing. Test oracle.
    """
    lb = math.lgamma
    A, B = a / 2, (a + 1) / 2
    if s >= B:
        return math.inf
    return math.exp(lb(A + s) + lb(B - s) - lb(A) - lb(B))
