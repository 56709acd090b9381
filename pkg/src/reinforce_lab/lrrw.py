"""Linearly edge-reinforced random walk: dynamics, bookkeeping and estimators.

The walk at ``v`` exits along ``e`` with probability proportional to
``a_e + N(e)``, where ``N(e)`` counts crossings of the undirected edge.
Everything hot runs in one numba kernel, :func:`_walk`, which also serves
the fixed-environment walk (``reinforce = 0``) and an importance-sampling
mode used by the decay experiment.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numba import njit

from .graph import Graph, GraphError

PATH_LIMIT = 10 ** 6
DEFAULT_BUDGET = 10 ** 7

# stop kinds understood by the kernel
MAX_STEPS, VISITS, ALL_EDGES_EXITED, HIT_EDGE, RETURN_TO_START = range(5)
SATISFIED, TIMEOUT = 0, 1
_KIND_NAMES = ("max_steps", "visits", "all_edges_exited", "hit_edge", "return_to_start")


class Stuck(GraphError):
    """The walker sits on an isolated vertex."""


class NotHit(RuntimeError):
    """The target edge was never crossed."""


class Timeout(RuntimeError):
    pass


@dataclass(frozen=True)
class StopRule:
    kind: int
    v: int = -1
    count: int = 0

    @classmethod
    def max_steps(cls, T: int) -> "StopRule":
        return cls(MAX_STEPS, -1, int(T))

    @classmethod
    def visits(cls, v: int, count: int) -> "StopRule":
        return cls(VISITS, int(v), int(count))

    @classmethod
    def all_edges_exited(cls, v: int, L: int) -> "StopRule":
        if L < 1:
            raise ValueError("L must be >= 1")
        return cls(ALL_EDGES_EXITED, int(v), int(L))

    @classmethod
    def hit_edge(cls, x: int) -> "StopRule":
        return cls(HIT_EDGE, int(x), 0)

    @classmethod
    def return_to_start(cls) -> "StopRule":
        return cls(RETURN_TO_START)

    @property
    def name(self) -> str:
        return _KIND_NAMES[self.kind]


@dataclass
class LrrwState:
    position: int
    step: int
    N: np.ndarray
    exits: np.ndarray
    visits: np.ndarray
    first_entry: np.ndarray  # directed edge id, -1 if unset
    v0: int
    first_dir: int = -1  # first directed edge crossed

    @classmethod
    def start(cls, g: Graph, v0: int | None = None) -> "LrrwState":
        v0 = g.v0 if v0 is None else int(v0)
        visits = np.zeros(g.n, dtype=np.int64)
        visits[v0] = 1
        return cls(v0, 0, np.zeros(g.m, dtype=np.int64), np.zeros(2 * g.m, dtype=np.int64),
                   visits, np.full(g.n, -1, dtype=np.int64), v0, -1)

    def copy(self) -> "LrrwState":
        return LrrwState(self.position, self.step, self.N.copy(), self.exits.copy(),
                         self.visits.copy(), self.first_entry.copy(), self.v0,
                         self.first_dir)

    def check(self, g: Graph) -> None:
        """Assert the counter invariants; raises AssertionError on breakage."""
        assert self.N.sum() == self.step
        assert np.array_equal(self.N, self.exits[0::2] + self.exits[1::2])
        assert self.first_entry[self.v0] == -1
        seen = self.visits > 0
        seen[self.v0] = False
        assert np.all((self.first_entry >= 0) == seen)
        for v in np.flatnonzero(self.first_entry >= 0):
            assert g.dst(int(self.first_entry[v])) == v


@dataclass
class LrrwRun:
    state: LrrwState
    path: np.ndarray | None
    status: int
    rule: StopRule
    truncated: bool = False
    loglr: float = 0.0

    @property
    def timed_out(self) -> bool:
        return self.status == TIMEOUT


# --- kernels ---------------------------------------------------------------


@njit(nogil=True, cache=True)
def _done(kind, sv, sc, pos, step, v0, N, exits, visits, indptr, nbr_dir):
    if kind == VISITS:
        return visits[sv] >= sc
    if kind == ALL_EDGES_EXITED:
        for k in range(indptr[sv], indptr[sv + 1]):
            if exits[nbr_dir[k]] < sc:
                return False
        return True
    if kind == HIT_EDGE:
        return N[sv] > 0
    if kind == RETURN_TO_START:
        return step > 0 and pos == v0
    return False


@njit(nogil=True, cache=True)
def _walk(indptr, nbr, nbr_dir, base, reinforce, prop, use_prop,
          pos, step, v0, N, exits, visits, first_entry, first, path, path_len,
          kind, sv, sc, budget, rng):
    """Advance the walk at most ``budget`` steps or until the rule fires.

    With ``use_prop`` the step is drawn from the proposal weights
    ``prop[e]`` (used while ``N[e] == 0``, else ``base[e] + N[e]``) and the
    log likelihood ratio target/proposal is accumulated.
    Returns (pos, step, status, path_len, loglr).
    """
    loglr = 0.0
    cap = path.shape[0]
    if _done(kind, sv, sc, pos, step, v0, N, exits, visits, indptr, nbr_dir):
        return pos, step, SATISFIED, path_len, loglr
    for _ in range(budget):
        lo = indptr[pos]
        hi = indptr[pos + 1]
        if hi == lo:
            return pos, step, -1, path_len, loglr
        tot = 0.0
        ptot = 0.0
        for k in range(lo, hi):
            e = nbr_dir[k] >> 1
            tot += base[e] + reinforce * N[e]
            if use_prop:
                ptot += prop[e] if N[e] == 0 else base[e] + N[e]
        if use_prop:
            u = rng.random() * ptot
            k = lo
            acc = 0.0
            while k < hi - 1:
                e = nbr_dir[k] >> 1
                acc += prop[e] if N[e] == 0 else base[e] + N[e]
                if u < acc:
                    break
                k += 1
            e = nbr_dir[k] >> 1
            wp = prop[e] if N[e] == 0 else base[e] + N[e]
            wt = base[e] + reinforce * N[e]
            loglr += np.log(wt / tot) - np.log(wp / ptot)
        else:
            u = rng.random() * tot
            k = lo
            acc = 0.0
            while k < hi - 1:
                e = nbr_dir[k] >> 1
                acc += base[e] + reinforce * N[e]
                if u < acc:
                    break
                k += 1
        d = nbr_dir[k]
        w = nbr[k]
        N[d >> 1] += 1
        exits[d] += 1
        if step == 0:
            first[0] = d
        if visits[w] == 0:
            first_entry[w] = d
        visits[w] += 1
        v = pos
        pos = w
        step += 1
        if path_len < cap:
            path[path_len] = w
            path_len += 1
        # only the quantities touched by this step can complete the rule
        if kind == VISITS:
            if w == sv and visits[w] >= sc:
                return pos, step, SATISFIED, path_len, loglr
        elif kind == ALL_EDGES_EXITED:
            if v == sv and exits[d] == sc:
                if _done(kind, sv, sc, pos, step, v0, N, exits, visits, indptr, nbr_dir):
                    return pos, step, SATISFIED, path_len, loglr
        elif kind == HIT_EDGE:
            if (d >> 1) == sv:
                return pos, step, SATISFIED, path_len, loglr
        elif kind == RETURN_TO_START:
            if w == v0:
                return pos, step, SATISFIED, path_len, loglr
    if kind == MAX_STEPS:
        return pos, step, SATISFIED, path_len, loglr
    return pos, step, TIMEOUT, path_len, loglr


def _base_weights(g: Graph, a) -> np.ndarray:
    if a is None:
        return np.ascontiguousarray(g.weight, dtype=np.float64)
    w = np.broadcast_to(np.asarray(a, dtype=np.float64), (g.m,)).copy()
    if np.any(w <= 0):
        raise ValueError("initial weights must be positive")
    return w


def advance(g: Graph, state: LrrwState, rule: StopRule, rng, *, budget=None,
            base=None, reinforce=1.0, prop=None, path=None, path_len=0):
    """Low-level driver shared by the LRRW and fixed-environment walks.

    Mutates ``state`` in place and returns (status, path_len, loglr).
    """
    if rule.kind == MAX_STEPS:
        budget = rule.count if budget is None else min(budget, rule.count)
    elif budget is None:
        budget = DEFAULT_BUDGET
    base = _base_weights(g, None) if base is None else base
    use_prop = prop is not None
    prop = base if prop is None else np.ascontiguousarray(prop, dtype=np.float64)
    if path is None:
        path = np.empty(0, dtype=np.int64)
    first = np.array([state.first_dir], dtype=np.int64)
    pos, step, status, path_len, loglr = _walk(
        g.indptr, g.nbr, g.nbr_dir, base, float(reinforce), prop, use_prop,
        state.position, state.step, state.v0, state.N, state.exits, state.visits,
        state.first_entry, first, path, path_len, rule.kind, rule.v, rule.count,
        int(budget), rng)
    if status < 0:
        raise Stuck(f"vertex {pos} has no neighbours")
    state.position, state.step, state.first_dir = int(pos), int(step), int(first[0])
    return int(status), int(path_len), float(loglr)


# --- public operations -------------------------------------------------------


def transition_probs(state: LrrwState, g: Graph, a=None) -> np.ndarray:
    """Exact next-step law from ``state.position``, aligned with g.neighbors."""
    base = _base_weights(g, a)
    inc = g.incident(state.position)
    if not len(inc):
        raise Stuck(f"vertex {state.position} has no neighbours")
    w = base[inc] + state.N[inc]
    return w / w.sum()


def lrrw_step(state: LrrwState, g: Graph, rng, a=None) -> LrrwState:
    """One reinforced step; returns a new state (the input is not touched)."""
    new = state.copy()
    advance(g, new, StopRule.max_steps(1), rng, base=_base_weights(g, a))
    return new


def run_lrrw(g: Graph, stop: StopRule, rng, *, a=None, state: LrrwState | None = None,
             record_path: bool = True, budget: int | None = None,
             path_limit: int = PATH_LIMIT) -> LrrwRun:
    """Run until ``stop`` fires or the step budget runs out.

    The recorded path starts with the start vertex. Paths longer than
    ``path_limit`` are cut and flagged ``truncated``; counters are always
    complete.
    """
    state = LrrwState.start(g) if state is None else state
    if record_path:
        limit = path_limit
        if stop.kind == MAX_STEPS:
            limit = min(limit, stop.count)
        elif budget is not None:
            limit = min(limit, budget)
        buf = np.empty(limit + 1, dtype=np.int64)
        buf[0] = state.position
        status, plen, _ = advance(g, state, stop, rng, budget=budget,
                                  base=_base_weights(g, a), path=buf[1:])
        path = buf[:plen + 1]
        truncated = state.step > plen
    else:
        status, _, _ = advance(g, state, stop, rng, budget=budget, base=_base_weights(g, a))
        path, truncated = None, False
    return LrrwRun(state, path, status, stop, truncated)


# --- domination path and Q ---------------------------------------------------


@dataclass
class DominationTrace:
    gamma: list
    q: dict = field(default_factory=dict)  # directed edge -> Fraction, or None if unresolved
    m_pair: dict = field(default_factory=dict)
    d_gamma: bool = True
    loop: bool = False

    @property
    def resolved(self) -> bool:
        return all(v is not None for v in self.q.values())


def first_crossing(g: Graph, path: np.ndarray, x: int) -> int:
    """Index k with (path[k], path[k+1]) the first crossing of edge x."""
    u, v = (int(t) for t in g.edges[x])
    a, b = path[:-1], path[1:]
    hit = np.flatnonzero(((a == u) & (b == v)) | ((a == v) & (b == u)))
    if not len(hit):
        raise NotHit(f"edge {x} never crossed")
    return int(hit[0])


def domination_path(g: Graph, path: np.ndarray, x: int) -> list[int]:
    """Backward chain of first-entry edges from the first crossing of x."""
    k = first_crossing(g, path, x)
    v0 = int(path[0])
    entry = {}
    for t in range(1, k + 1):
        w = int(path[t])
        if w != v0 and w not in entry:
            entry[w] = g.directed(int(path[t - 1]), w)
    gamma = [g.directed(int(path[k]), int(path[k + 1]))]
    v = int(path[k])
    while v != v0:
        d = entry[v]
        gamma.append(d)
        v = g.src(d)
    return gamma[::-1]


def q_pairs(g: Graph, path: np.ndarray, gamma: list[int]) -> dict:
    """(M_e, M_f) for e in gamma minus its first edge, None if unresolved.

    Only exits from the tail of e along e or along f, the reversal of the
    previous edge, are counted, and counting stops once both were used.
    """
    out = {}
    src = path[:-1]
    for prev, e in zip(gamma, gamma[1:]):
        f = prev ^ 1
        v = g.src(e)
        head_e, head_f = g.dst(e), g.dst(f)
        idx = np.flatnonzero(src == v)
        nxt = path[idx + 1]
        used = np.flatnonzero((nxt == head_e) | (nxt == head_f))
        seq = nxt[used] == head_e
        me = mf = 0
        done = None
        for is_e in seq:
            if is_e:
                me += 1
            else:
                mf += 1
            if me and mf:
                done = (me, mf)
                break
        out[e] = done
    return out


def domination_trace(g: Graph, path: np.ndarray, x: int) -> DominationTrace:
    gamma = domination_path(g, path, x)
    pairs = q_pairs(g, path, gamma)
    q = {e: (None if p is None else Fraction(p[0], p[1])) for e, p in pairs.items()}
    loop = g.dst(gamma[-1]) == int(path[0]) and len(gamma) > 1
    return DominationTrace(gamma, q, pairs, True, loop)


# --- stopping statistics and classification -----------------------------------


@dataclass
class StoppingStats:
    tau: int
    M: np.ndarray  # exits per incident edge, in g.incident(v) order
    S: int
    timed_out: bool


def stopping_stats(g: Graph, rng, v: int, L: int, budget: int = DEFAULT_BUDGET,
                   *, env=None, a=None, state: LrrwState | None = None) -> StoppingStats:
    """Visits to v until every edge at v was exited at least L times.

    ``env`` (edge weights) switches to the walk in that fixed environment.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    state = LrrwState.start(g) if state is None else state
    if env is None:
        base, reinf = _base_weights(g, a), 1.0
    else:
        base, reinf = np.ascontiguousarray(env, dtype=np.float64), 0.0
    status, _, _ = advance(g, state, StopRule.all_edges_exited(v, L), rng,
                           budget=budget, base=base, reinforce=reinf)
    M = state.exits[g.out_dirs(v)].copy()
    return StoppingStats(int(M.sum()), M, int(M.max()), status == TIMEOUT)


def classify_faithful(M, tau: int, W, eps: float) -> bool:
    """(M_e/tau) / (W_e/W_v) within [1-eps, 1+eps] for every edge at v.

    ``W`` holds the environment weights of the edges at v, aligned with M.
    """
    M = np.asarray(M, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if tau <= 0 or W.sum() <= 0:
        raise ValueError("tau and W_v must be positive")
    ratio = (M / tau) / (W / W.sum())
    # tiny slack so exact rational equality is not lost to rounding
    tol = 1e-12
    return bool(np.all((ratio >= 1 - eps - tol) & (ratio <= 1 + eps + tol)))


def classify_balanced(S: int, L: int, eps: float) -> bool:
    if L < 1 or S < L:
        raise ValueError("need S >= L >= 1")
    return bool(S <= (1 + eps) * L + 1e-12)


@njit(nogil=True, cache=True)
def _all_stops(indptr, nbr, nbr_dir, base, reinforce, v0, n, m, L, extra, budget,
               count, rng):
    snap = np.zeros((count, 2 * m), dtype=np.int64)
    final = np.zeros((count, 2 * m), dtype=np.int64)
    tau = np.full((count, n), -1, dtype=np.int64)
    ok = np.zeros(count, dtype=np.bool_)
    N = np.zeros(m)
    exits = np.zeros(2 * m, dtype=np.int64)
    for r in range(count):
        N[:] = 0.0
        exits[:] = 0
        pending = n
        pos = v0
        t = 0
        left = extra
        while t < budget and left > 0:
            lo = indptr[pos]
            hi = indptr[pos + 1]
            tot = 0.0
            for k in range(lo, hi):
                tot += base[nbr_dir[k] >> 1] + reinforce * N[nbr_dir[k] >> 1]
            u = rng.random() * tot
            acc = 0.0
            k = lo
            while k < hi - 1:
                acc += base[nbr_dir[k] >> 1] + reinforce * N[nbr_dir[k] >> 1]
                if u < acc:
                    break
                k += 1
            d = nbr_dir[k]
            N[d >> 1] += 1.0
            exits[d] += 1
            if pending == 0:
                left -= 1
            elif tau[r, pos] < 0 and exits[d] == L:
                hit = True
                s = 0
                for q in range(lo, hi):
                    s += exits[nbr_dir[q]]
                    if exits[nbr_dir[q]] < L:
                        hit = False
                if hit:
                    tau[r, pos] = s
                    for q in range(lo, hi):
                        snap[r, nbr_dir[q]] = exits[nbr_dir[q]]
                    pending -= 1
            pos = nbr[k]
            t += 1
        ok[r] = pending == 0
        final[r, :] = exits
    return ok, tau, snap, final


@dataclass
class VertexStops:
    """Per replica and vertex: tau(L, v) and the exit counts at that moment.

    ``final`` holds the exit counts after ``extra`` further steps, whose
    frequencies estimate the environment's exit law at every vertex.
    """

    ok: np.ndarray
    tau: np.ndarray
    snap: np.ndarray
    final: np.ndarray
    L: int

    def exits_at(self, g: Graph, v: int) -> np.ndarray:
        return self.snap[:, g.out_dirs(v)]

    def S(self, g: Graph) -> np.ndarray:
        return np.stack([self.exits_at(g, v).max(axis=1) for v in range(g.n)], axis=1)

    def balanced(self, g: Graph, eps: float) -> np.ndarray:
        return self.S(g) <= (1 + eps) * self.L + 1e-12

    def faithful(self, g: Graph, eps: float, env=None) -> np.ndarray:
        """Exit frequencies at tau against the environment's exit law.

        With ``env`` (edge weights) the law is W_e / W_v; otherwise it is
        read off the long-run ``final`` counts.
        """
        out = np.empty(self.tau.shape, dtype=bool)
        for v in range(g.n):
            dirs = g.out_dirs(v)
            freq = self.snap[:, dirs] / np.maximum(self.tau[:, v:v + 1], 1)
            if env is None:
                f = self.final[:, dirs].astype(np.float64)
                law = f / f.sum(axis=1, keepdims=True)
            else:
                w = np.asarray(env, dtype=np.float64)[dirs >> 1]
                law = np.broadcast_to(w / w.sum(), freq.shape)
            r = freq / law
            out[:, v] = np.all(np.abs(r - 1) <= eps + 1e-12, axis=1)
        return out


def vertex_stops(g: Graph, L: int, count: int, rng, *, a=None, env=None, extra: int = 1,
                 budget: int = DEFAULT_BUDGET) -> VertexStops:
    """One walk per replica, run until every vertex has exited each of its
    edges L times, then ``extra`` more steps."""
    if L < 1:
        raise ValueError("L must be >= 1")
    if env is None:
        base, reinf = _base_weights(g, a), 1.0
    else:
        base, reinf = np.ascontiguousarray(env, dtype=np.float64), 0.0
    out = _all_stops(g.indptr, g.nbr, g.nbr_dir, base, reinf, g.v0, g.n, g.m, int(L),
                     max(int(extra), 1), int(budget), int(count), rng)
    return VertexStops(*out, int(L))


@njit(nogil=True, cache=True)
def _batch(indptr, nbr, nbr_dir, base, v0, n, m, T, count, rng):
    exits = np.zeros((count, 2 * m), dtype=np.int64)
    visits = np.zeros((count, n), dtype=np.int64)
    N = np.zeros(m, dtype=np.int64)
    fe = np.full(n, -1, dtype=np.int64)
    first = np.full(1, -1, dtype=np.int64)
    path = np.empty(0, dtype=np.int64)
    for r in range(count):
        N[:] = 0
        visits[r, v0] = 1
        _walk(indptr, nbr, nbr_dir, base, 1.0, base, False, v0, 0, v0, N, exits[r],
              visits[r], fe, first, path, 0, MAX_STEPS, -1, 0, T, rng)
    return exits, visits


def run_batch(g: Graph, T: int, count: int, rng, a=None):
    """Directed exit counts and visit counts (start included) after T steps."""
    return _batch(g.indptr, g.nbr, g.nbr_dir, _base_weights(g, a), g.v0, g.n, g.m,
                  int(T), int(count), rng)


def path_law(g: Graph, k: int, a=None, exact: bool = False) -> dict:
    """Exact law of the first k steps: {vertex tuple (after v0): probability}.

    With ``exact`` the weights are turned into Fractions and so are the
    probabilities.
    """
    base = _base_weights(g, a)
    num = (lambda x: Fraction(x).limit_denominator(10 ** 9)) if exact else float
    w0 = [num(x) for x in base]
    out = {}

    def rec(pos, N, prefix, prob):
        if len(prefix) == k:
            out[tuple(prefix)] = out.get(tuple(prefix), 0) + prob
            return
        inc = g.incident(pos)
        ws = [w0[e] + N.get(e, 0) for e in inc]
        tot = sum(ws)
        for e, w, nb in zip(inc, ws, g.neighbors(pos)):
            N[e] = N.get(e, 0) + 1
            rec(int(nb), N, prefix + [int(nb)], prob * w / tot)
            N[e] -= 1

    rec(g.v0, {}, [], num(1))
    return out


# --- return times --------------------------------------------------------------


@njit(nogil=True, cache=True)
def _return_times(indptr, nbr, nbr_dir, base, v0, m, n, horizon, count, rng):
    out = np.empty(count, dtype=np.int64)
    N = np.zeros(m, dtype=np.int64)
    exits = np.zeros(2 * m, dtype=np.int64)
    visits = np.zeros(n, dtype=np.int64)
    fe = np.zeros(n, dtype=np.int64)
    first = np.zeros(1, dtype=np.int64)
    path = np.empty(0, dtype=np.int64)
    for r in range(count):
        N[:] = 0
        visits[:] = 0
        pos, step, status, pl, lr = _walk(indptr, nbr, nbr_dir, base, 1.0, base, False,
                                          v0, 0, v0, N, exits, visits, fe, first, path, 0,
                                          RETURN_TO_START, -1, 0, horizon, rng)
        out[r] = step if status == SATISFIED else horizon + 1
    return out


def return_times(g: Graph, rng, horizon: int, count: int, a=None) -> np.ndarray:
    """First return times to v0, censored at ``horizon + 1``."""
    return _return_times(g.indptr, g.nbr, g.nbr_dir, _base_weights(g, a), g.v0,
                         g.m, g.n, int(horizon), int(count), rng)


@dataclass
class Survival:
    Ms: np.ndarray
    p: np.ndarray
    stderr: np.ndarray
    n: int


def survival_from_times(times: np.ndarray, Ms) -> Survival:
    Ms = np.asarray(Ms, dtype=np.int64)
    p = (times[None, :] > Ms[:, None]).mean(axis=1)
    return Survival(Ms, p, np.sqrt(p * (1 - p) / len(times)), len(times))


def return_time_survival(g: Graph, rng, Ms, replicas: int, a=None) -> Survival:
    """Empirical P(first return to v0 > M) with binomial standard errors."""
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    Ms = np.asarray(Ms, dtype=np.int64)
    times = return_times(g, rng, int(Ms.max()) if len(Ms) else 0, replicas, a)
    return survival_from_times(times, Ms)


def return_bound(K: int, a: float, M: int) -> float:
    """Product-formula lower bound on P(first return > M).

    The walk leaves v0 along some edge and crosses it back and forth while
    every other edge at both ends stays unused, which keeps it off v0 for
    odd stretches. With m = ceil((M - 1) / 2) round trips,
    P(E_m) = (1/K) prod_{j<m} (2j+a)/(2j+1+Ka) * prod_{j<m} (2j+1+a)/(2j+1+Ka).
    """
    if M <= 0:
        return 1.0
    m = max(int(np.ceil((M - 1) / 2)), 0)
    j = np.arange(m, dtype=np.float64)
    out = (1.0 / K) * np.prod((2 * j + a) / (2 * j + 1 + K * a)) \
        * np.prod((2 * j + 1 + a) / (2 * j + 1 + K * a))
    return float(out)


# --- environment estimate -------------------------------------------------------


@njit(nogil=True, cache=True)
def _chain(indptr, nbr, nbr_dir, exits, first_entry, v0, e1_dir, n, m):
    W = np.full(m, np.nan)
    order = np.empty(n, dtype=np.int64)
    order[0] = v0
    head = 0
    tail = 1
    done = np.zeros(n, dtype=np.bool_)
    done[v0] = True
    while head < tail:
        v = order[head]
        head += 1
        if v == v0:
            ref_d = e1_dir
            ref_w = 1.0
        else:
            ref_d = first_entry[v] ^ 1
            ref_w = W[ref_d >> 1]
        ref_c = exits[ref_d] if ref_d >= 0 else 0
        for k in range(indptr[v], indptr[v + 1]):
            d = nbr_dir[k]
            e = d >> 1
            if np.isnan(W[e]) and ref_c > 0 and not np.isnan(ref_w):
                W[e] = ref_w * exits[d] / ref_c
            w = nbr[k]
            if not done[w] and first_entry[w] == d:
                done[w] = True
                order[tail] = w
                tail += 1
    return W


def estimate_environment(g: Graph, state: LrrwState, e1_dir: int | None = None,
                         path: np.ndarray | None = None, normalization: str = "e1"):
    """Edge weights from directed exit counts, chained along first entries.

    At each reached vertex the weights of its edges are fixed relative to a
    reference edge whose weight is already known: the first edge crossed at
    v0, the entry edge elsewhere. Edges reached from no usable vertex stay
    NaN and are reported in ``Environment.observed``.
    """
    from .rwre import Environment

    if e1_dir is None:
        e1_dir = state.first_dir
    if e1_dir < 0:
        W = np.full(g.m, np.nan)
        if g.m == 1:
            W[:] = 1.0
    else:
        W = _chain(g.indptr, g.nbr, g.nbr_dir, state.exits, state.first_entry,
                   state.v0, int(e1_dir), g.n, g.m)
    env = Environment.from_edges(g, W, normalization="e1", allow_missing=True)
    if normalization != "e1":
        env = env.normalized(normalization)
    return env


@njit(nogil=True, cache=True)
def _ratio_batch(indptr, nbr, nbr_dir, base, prop, use_prop, v0, n, m, x, T, count, rng):
    ratio = np.empty(count)
    loglr = np.empty(count)
    N = np.zeros(m, dtype=np.int64)
    exits = np.zeros(2 * m, dtype=np.int64)
    visits = np.zeros(n, dtype=np.int64)
    fe = np.full(n, -1, dtype=np.int64)
    first = np.full(1, -1, dtype=np.int64)
    path = np.empty(0, dtype=np.int64)
    for r in range(count):
        N[:] = 0
        exits[:] = 0
        visits[:] = 0
        visits[v0] = 1
        fe[:] = -1
        first[0] = -1
        pos, step, status, pl, lr = _walk(indptr, nbr, nbr_dir, base, 1.0, prop, use_prop,
                                          v0, 0, v0, N, exits, visits, fe, first, path, 0,
                                          MAX_STEPS, -1, 0, T, rng)
        W = _chain(indptr, nbr, nbr_dir, exits, fe, v0, first[0], n, m)
        ratio[r] = W[x]
        loglr[r] = lr
    return ratio, loglr


def weight_ratio_samples(g: Graph, x: int, T: int, count: int, rng, a=None, prop=None):
    """Estimated W_x / W_{e_1} after T steps, one value per replica.

    With ``prop`` the walks come from the tilted proposal and the second
    returned array holds log likelihood ratios (zeros otherwise). NaN marks
    replicas where the chain of ratios never reached x.
    """
    base = _base_weights(g, a)
    use = prop is not None
    prop = base if prop is None else np.ascontiguousarray(prop, dtype=np.float64)
    return _ratio_batch(g.indptr, g.nbr, g.nbr_dir, base, prop, use, g.v0, g.n, g.m,
                        int(x), int(T), int(count), rng)
