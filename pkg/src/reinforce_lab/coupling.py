"""Bernoulli ladders, the dominating variable Q-bar, and the coupled walk.

For an edge e of the target path with tail v and f the reversal of the edge
that first entered v, two independent ladders are attached:

    Y_j  ~ Bern(a_e / (j + 1 + a_e + a_f))
    Y'_j ~ Bern((1 + a_f) / (2j + 1 + a_v))

Y'_0 picks the branch. With Y'_0 = 0, Mbar_e = min{j >= 1 : Y'_j = 1} and
Mbar_f = 1; with Y'_0 = 1, Mbar_f = min{j >= 1 : Y_j = 1} and Mbar_e = 1.
The coupled walk consumes the same ladders so that on the event that the
domination path of x is gamma, Q(e) <= Qbar(e) for every edge but the first.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy.special import gammaln, zeta

from .graph import Graph, is_chain
from .lrrw import _base_weights


@dataclass(frozen=True)
class BernoulliLadder:
    a_e: float
    a_f: float
    a_v: float

    def __post_init__(self):
        if min(self.a_e, self.a_f, self.a_v) <= 0:
            raise ValueError("ladder weights must be positive")
        if self.a_v < self.a_e + self.a_f - 1e-12:
            raise ValueError("a_v must include a_e and a_f")

    @classmethod
    def uniform(cls, a: float, K: int) -> "BernoulliLadder":
        return cls(a, a, K * a)

    def y(self, j):
        return self.a_e / (np.asarray(j, dtype=np.float64) + 1 + self.a_e + self.a_f)

    def yprime(self, j):
        return (1 + self.a_f) / (2 * np.asarray(j, dtype=np.float64) + 1 + self.a_v)

    # log P(Y'_1 = ... = Y'_n = 0) and log P(Y_1 = ... = Y_n = 0) in closed form
    def log_surv_prime(self, n):
        al = (self.a_v - self.a_f) / 2
        be = (1 + self.a_v) / 2
        lg = math.lgamma if np.isscalar(n) else gammaln
        return lg(n + 1 + al) - lg(1 + al) + lg(1 + be) - lg(n + 1 + be)

    def _consts(self, kind):
        if kind == 0:
            return (self.a_v - self.a_f) / 2, (1 + self.a_v) / 2
        return self.a_f, self.a_e

    def log_surv(self, n):
        lg = math.lgamma if np.isscalar(n) else gammaln
        return (lg(n + 2 + self.a_f) - lg(2 + self.a_f)
                + lg(2 + self.a_e + self.a_f) - lg(n + 2 + self.a_e + self.a_f))


@dataclass
class QBar:
    branch: int  # value of Y'_0
    m_e: float
    m_f: float

    @property
    def value(self) -> float:
        return self.m_e / self.m_f


@njit(cache=True)
def _log_surv(kind, c1, c2, c3, n):
    # kind 0: Y' ladder, Gamma ratio with al = c1, be = c2
    # kind 1: Y ladder with a_f = c1, a_e = c2
    if n <= 0:
        return 0.0
    if kind == 0:
        return (math.lgamma(n + 1 + c1) - math.lgamma(1 + c1)
                + math.lgamma(1 + c2) - math.lgamma(n + 1 + c2))
    return (math.lgamma(n + 2 + c1) - math.lgamma(2 + c1)
            + math.lgamma(2 + c1 + c2) - math.lgamma(n + 2 + c1 + c2))


@njit(cache=True)
def _first_hit(kind, c1, c2, start, u):
    """Smallest n >= start with survival(n)/survival(start-1) < u.

    Survival is the probability that no success happened among indices
    1..n. Solved by bisection on the closed form (geometric bisection once
    n is large), so heavy tails cost nothing. Returned as float since it
    can exceed any machine integer; past 2**52 it is exact to ~1e-13
    relative.
    """
    target = math.log(u) + _log_surv(kind, c1, c2, 0.0, start - 1.0)
    if _log_surv(kind, c1, c2, 0.0, float(start)) < target:
        return float(start)
    lo = float(start)
    hi = lo * 2 + 1
    while _log_surv(kind, c1, c2, 0.0, hi) >= target:
        lo = hi
        hi = hi * 2
        if hi > 1e300:
            return math.inf
    while hi - lo > 1 and hi > lo * (1 + 1e-13):
        if hi > 2.0 ** 52:
            mid = math.floor(math.sqrt(lo * hi))
        else:
            mid = math.floor((lo + hi) / 2)
        if mid <= lo or mid >= hi:
            break
        if _log_surv(kind, c1, c2, 0.0, mid) < target:
            hi = mid
        else:
            lo = mid
    return hi


@njit(cache=True)
def _qbar_many(yp0, c_prime1, c_prime2, c_y1, c_y2, count, rng):
    out = np.empty(count)
    for i in range(count):
        if rng.random() < yp0:
            out[i] = 1.0 / _first_hit(1, c_y1, c_y2, 1, rng.random())
        else:
            out[i] = _first_hit(0, c_prime1, c_prime2, 1, rng.random())
    return out


def sample_qbar(ladder: BernoulliLadder, rng, prefix_prime=(), prefix_y=(), y0=None) -> QBar:
    """Draw Qbar, optionally continuing from already revealed ladder values.

    ``prefix_prime`` / ``prefix_y`` hold revealed Y'_1, Y'_2, ... and
    Y_1, Y_2, ...; the remainder of the ladder is drawn fresh.
    """
    if y0 is None:
        y0 = int(rng.random() < ladder.yprime(0))
    prefix = prefix_prime if y0 == 0 else prefix_y
    for j, bit in enumerate(prefix, start=1):
        if bit == 1:
            n = float(j)
            break
    else:
        n = _first_hit(y0, *ladder._consts(y0), len(prefix) + 1, rng.random())
    if y0 == 0:
        return QBar(0, n, 1.0)
    return QBar(1, 1.0, n)


def sample_qbar_many(ladder: BernoulliLadder, count: int, rng) -> np.ndarray:
    """Vectorised Qbar values (inverse transform on the closed survival)."""
    return _qbar_many(float(ladder.yprime(0)), *ladder._consts(0), *ladder._consts(1),
                      int(count), rng)


def p_branch0(ladder: BernoulliLadder, n) -> np.ndarray:
    """P(Y'_0 = 0, Mbar_e = n)."""
    n = np.asarray(n, dtype=np.float64)
    return (1 - ladder.yprime(0)) * ladder.yprime(n) * np.exp(ladder.log_surv_prime(n - 1))


def p_branch1(ladder: BernoulliLadder, n) -> np.ndarray:
    """P(Y'_0 = 1, Mbar_f = n)."""
    n = np.asarray(n, dtype=np.float64)
    return ladder.yprime(0) * ladder.y(n) * np.exp(ladder.log_surv(n - 1))


def uniform_branch0_product(a: float, K: int, n: int) -> float:
    """(K-1)a/(1+Ka) * (1+a)/(2n+1+Ka) * prod_{j<n} (1 - (1+a)/(2j+1+Ka))."""
    out = (K - 1) * a / (1 + K * a) * (1 + a) / (2 * n + 1 + K * a)
    for j in range(1, n):
        out *= 1 - (1 + a) / (2 * j + 1 + K * a)
    return out


def qbar_moment_oracle(ladder: BernoulliLadder, s: float, tol: float = 1e-10,
                       n_max: int = 10 ** 7) -> float:
    """E Qbar^s summed exactly up to a cut N, plus a tail.

    Each point mass is c (S(n-1) - S(n)) with S the closed-form ladder
    survival, so summing the tail by parts gives c (N+1)^{+-s} S(N) exactly
    plus a remainder sum of ((n+1)^{+-s} - n^{+-s}) S(n). Only that
    remainder, of order s, is replaced by a power law c' zeta(q, N+1),
    which is accurate to O(1/N) relative. The cut grows until that error
    is below tol.
    """
    if not 0 <= s < 0.5:
        raise ValueError("s must lie in [0, 1/2): the moment may diverge")
    yp0 = float(ladder.yprime(0))
    N = 4096
    while True:
        n = np.arange(1, N + 1, dtype=np.float64)
        head = float((n ** s * p_branch0(ladder, n)).sum()
                     + (n ** (-s) * p_branch1(ladder, n)).sum())
        tail = 0.0
        err = 0.0
        for c, sgn, log_surv, q in (
                (1 - yp0, 1, ladder.log_surv_prime, 1.5 + ladder.a_f / 2 - s),
                (yp0, -1, ladder.log_surv, 1 + s + ladder.a_e)):
            sN = math.exp(log_surv(N))
            tail += c * (N + 1) ** (sgn * s) * sN
            if s:
                r = ((N + 1) ** (sgn * s) - N ** (sgn * s)) * sN
                rem = c * r * N ** q * float(zeta(q, N + 1))
                tail += rem
                err += abs(rem) / N
        if err < tol or N >= n_max:
            return head + tail
        N *= 4


# --- coupled walk ----------------------------------------------------------------


@njit(nogil=True, cache=True)
def _pick(u, w, lo, hi):
    acc = 0.0
    k = lo
    while k < hi - 1:
        acc += w[k - lo]
        if u < acc:
            break
        k += 1
    return k


@njit(nogil=True, cache=True)
def _coupled(indptr, nbr, nbr_dir, base, gamma, tails, heads, v0, n, m, ae, af, av,
             horizon, stop_on_resolution, shift, yp_mem, y_mem, rec, rng):
    """One coupled run. Returns per-gamma-edge counters and a status code.

    status: 0 resolved on D_gamma, 1 left D_gamma, 2 horizon reached.
    ``shift`` = 1 reproduces the literal Y_{n-1} indexing of the later
    visits with Y'_0 = 1 (kept only to demonstrate why it fails).
    """
    L = gamma.shape[0]
    cap = yp_mem.shape[1]
    N = np.zeros(m, dtype=np.int64)
    visits = np.zeros(n, dtype=np.int64)
    visits[v0] = 1
    first_entry = np.full(n, -1, dtype=np.int64)
    gidx = np.full(n, -1, dtype=np.int64)  # tail of gamma[i], i >= 1
    need = np.full(n, -1, dtype=np.int64)  # required first entry
    for i in range(1, L):
        gidx[tails[i]] = i
    for i in range(L - 1):
        need[heads[i]] = gamma[i]
    x = gamma[L - 1] >> 1
    branch = np.full(L, -1, dtype=np.int64)
    occ = np.zeros(L, dtype=np.int64)
    me = np.zeros(L, dtype=np.int64)
    mf = np.zeros(L, dtype=np.int64)
    yp_mem[:, :] = -1
    y_mem[:, :] = -1
    consistent = True
    hit = False
    pos = v0
    w = np.empty(64)
    status = 2
    steps = 0
    for t in range(horizon):
        lo = indptr[pos]
        hi = indptr[pos + 1]
        deg = hi - lo
        if deg > w.shape[0]:
            w = np.empty(deg)
        tot = 0.0
        for k in range(lo, hi):
            e = nbr_dir[k] >> 1
            w[k - lo] = base[e] + N[e]
            tot += w[k - lo]
        i = gidx[pos] if consistent else -1
        if i >= 0 and me[i] > 0 and mf[i] > 0:
            i = -1  # Q already determined
        if i < 0:
            k = _pick(rng.random() * tot, w, lo, hi)
        else:
            de = gamma[i]
            df = gamma[i - 1] ^ 1
            ke = -1
            kf = -1
            for k in range(lo, hi):
                if nbr_dir[k] == de:
                    ke = k
                if nbr_dir[k] == df:
                    kf = k
            pe = w[ke - lo] / tot
            pf = w[kf - lo] / tot
            nv = visits[pos]
            if nv == 1 or branch[i] == 0:
                # first arrival, or later visit in the Y'_0 = 0 branch
                j = nv - 1
                yp = (1.0 + af[i]) / (2.0 * j + 1.0 + av[i])
                bit = 1 if rng.random() < yp else 0
                if j < cap:
                    yp_mem[i, j] = bit
                if nv == 1:
                    branch[i] = bit
                if bit == 1:
                    k = kf
                else:
                    # residual law given Y' = 0
                    u = rng.random() * (1.0 - yp)
                    acc = 0.0
                    k = hi - 1
                    for kk in range(lo, hi):
                        q = w[kk - lo] / tot
                        if kk == kf:
                            q = max(q - yp, 0.0)
                        acc += q
                        if u < acc:
                            k = kk
                            break
            else:
                # Y'_0 = 1: first decide {e, f} against the other edges
                u = rng.random()
                if u < pe + pf:
                    occ[i] += 1
                    j = occ[i] - shift
                    y = ae[i] / (j + 1.0 + ae[i] + af[i])
                    bit = 1 if rng.random() < y else 0
                    if j < cap:
                        y_mem[i, j] = bit
                    if bit == 1 and rng.random() * y < pe / (pe + pf):
                        k = ke
                    else:
                        k = kf
                else:
                    u = (u - pe - pf)
                    acc = 0.0
                    k = hi - 1
                    for kk in range(lo, hi):
                        if kk == ke or kk == kf:
                            continue
                        acc += w[kk - lo] / tot
                        if u < acc:
                            k = kk
                            break
                    if k == ke or k == kf:
                        # rounding fallback: last edge that is neither
                        for kk in range(hi - 1, lo - 1, -1):
                            if kk != ke and kk != kf:
                                k = kk
                                break
        d = nbr_dir[k]
        nxt = nbr[k]
        if steps < rec.shape[0]:
            rec[steps] = nxt
        steps += 1
        # Q bookkeeping: exits from the tail of gamma[i] along e or f
        g = gidx[pos]
        if g >= 0 and consistent and not (me[g] > 0 and mf[g] > 0):
            if d == gamma[g]:
                me[g] += 1
            elif d == (gamma[g - 1] ^ 1):
                mf[g] += 1
        # consistency with D_gamma
        if consistent and not hit:
            if (d >> 1) == x:
                if d != gamma[L - 1]:
                    consistent = False
                else:
                    hit = True
            if visits[nxt] == 0 and need[nxt] >= 0 and need[nxt] != d:
                consistent = False
        N[d >> 1] += 1
        if visits[nxt] == 0:
            first_entry[nxt] = d
        visits[nxt] += 1
        pos = nxt
        if not consistent and stop_on_resolution:
            status = 1
            break
        if stop_on_resolution and hit:
            done = True
            for ii in range(1, L):
                if me[ii] == 0 or mf[ii] == 0:
                    done = False
                    break
            if done:
                status = 0
                break
    if not consistent:
        status = 1
    elif status == 2 and hit:
        done = True
        for ii in range(1, L):
            if me[ii] == 0 or mf[ii] == 0:
                done = False
        if done:
            status = 0
    return status, steps, branch, me, mf, occ, visits


@dataclass
class CoupledRun:
    status: int
    steps: int
    gamma: list
    m_pair: dict  # gamma edge -> (M_e, M_f) or None
    qbar: dict  # gamma edge -> QBar
    ladders: dict = field(repr=False, default_factory=dict)

    @property
    def on_d_gamma(self) -> bool:
        return self.status == 0

    @property
    def q(self) -> dict:
        return {e: (None if p is None else p[0] / p[1]) for e, p in self.m_pair.items()}

    def violations(self) -> list:
        """Edges with Q(e) > Qbar(e); only meaningful on D_gamma."""
        bad = []
        for e, p in self.m_pair.items():
            if p is not None and p[0] / p[1] > self.qbar[e].value * (1 + 1e-12):
                bad.append(e)
        return bad


def gamma_ladders(g: Graph, gamma, a=None, mode: str = "local") -> list:
    """Ladder per gamma edge (index 0 is a placeholder for the first edge).

    mode 'local' uses a_v summed over the actual edges at the tail; mode
    'K' uses K times the largest weight there, the uniform-degree form.
    """
    base = _base_weights(g, a)
    out = [None]
    for prev, e in zip(gamma, gamma[1:]):
        v = g.src(e)
        ae, af = base[e >> 1], base[prev >> 1]
        inc = base[g.incident(v)]
        av = inc.sum() if mode == "local" else g.K * inc.max()
        out.append(BernoulliLadder(float(ae), float(af), float(av)))
    return out


def validate_gamma(g: Graph, gamma) -> None:
    gamma = [int(d) for d in gamma]
    if not gamma:
        raise ValueError("gamma is empty")
    if g.src(gamma[0]) != g.v0:
        raise ValueError("gamma must start at v0")
    if not is_chain(g, gamma):
        raise ValueError("gamma edges do not chain head to tail")
    verts = [g.v0] + [g.dst(d) for d in gamma]
    inner = verts[:-1]
    if len(set(inner)) != len(inner) or (verts[-1] in inner and verts[-1] != g.v0):
        raise ValueError("gamma must be a simple path or a simple loop")


@njit(nogil=True, cache=True)
def _complete(kind, c1, c2, mem_row, rng):
    # first success among revealed Y_1, Y_2, ... else continue fresh
    j = 1
    while j < mem_row.shape[0] and mem_row[j] >= 0:
        if mem_row[j] == 1:
            return float(j)
        j += 1
    return _first_hit(kind, c1, c2, j, rng.random())


@njit(nogil=True, cache=True)
def _coupled_batch(indptr, nbr, nbr_dir, base, gamma, tails, heads, v0, n, m, ae, af, av,
                   horizon, stop_on_resolution, shift, cap, rec_len, count, rng):
    L = gamma.shape[0]
    yp_mem = np.empty((L, cap), dtype=np.int8)
    y_mem = np.empty((L, cap), dtype=np.int8)
    status = np.empty(count, dtype=np.int64)
    steps = np.empty(count, dtype=np.int64)
    me = np.zeros((count, L), dtype=np.int64)
    mf = np.zeros((count, L), dtype=np.int64)
    qbar = np.ones((count, L))
    branch = np.zeros((count, L), dtype=np.int64)
    paths = np.full((count, rec_len), -1, dtype=np.int64)
    for r in range(count):
        st, sp, br, e_cnt, f_cnt, occ, visits = _coupled(
            indptr, nbr, nbr_dir, base, gamma, tails, heads, v0, n, m, ae, af, av,
            horizon, stop_on_resolution, shift, yp_mem, y_mem, paths[r], rng)
        status[r] = st
        steps[r] = sp
        for i in range(1, L):
            me[r, i] = e_cnt[i]
            mf[r, i] = f_cnt[i]
            b = br[i]
            if b < 0:
                yp0 = (1.0 + af[i]) / (1.0 + av[i])
                b = 1 if rng.random() < yp0 else 0
            branch[r, i] = b
            if b == 0:
                qbar[r, i] = _complete(0, (av[i] - af[i]) / 2, (1 + av[i]) / 2, yp_mem[i], rng)
            else:
                qbar[r, i] = 1.0 / _complete(1, af[i], ae[i], y_mem[i], rng)
    return status, steps, me, mf, qbar, branch, paths


@dataclass
class CoupledBatch:
    """Many coupled runs; column i of the per-edge arrays is gamma[i]."""

    gamma: list
    status: np.ndarray
    steps: np.ndarray
    me: np.ndarray
    mf: np.ndarray
    qbar: np.ndarray
    branch: np.ndarray
    paths: np.ndarray

    @property
    def resolved(self) -> np.ndarray:
        """Per run and edge: Q was determined (both e and f used)."""
        return (self.me > 0) & (self.mf > 0)

    @property
    def q(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.resolved, self.me / np.maximum(self.mf, 1), np.nan)

    @property
    def on_d_gamma(self) -> np.ndarray:
        return self.status == 0

    def violations(self, only_d_gamma: bool = True) -> int:
        """Count of (run, edge) with Q(e) > Qbar(e) among determined Q."""
        bad = self.resolved[:, 1:] & (self.q[:, 1:] > self.qbar[:, 1:] * (1 + 1e-12))
        if only_d_gamma:
            bad = bad[self.on_d_gamma]
        return int(bad.sum())


def _prepare(g, gamma, a, mode):
    gamma = [int(d) for d in gamma]
    validate_gamma(g, gamma)
    lad = gamma_ladders(g, gamma, a, mode)
    arr = lambda xs: np.array(xs, dtype=np.float64)
    return (gamma, lad, arr([0.0] + [l.a_e for l in lad[1:]]),
            arr([0.0] + [l.a_f for l in lad[1:]]), arr([0.0] + [l.a_v for l in lad[1:]]))


def coupled_batch(g: Graph, gamma, count: int, rng, *, a=None, horizon: int = 10 ** 4,
                  stop_on_resolution: bool = True, mode: str = "local",
                  index_shift: int = 0, record: int = 0) -> CoupledBatch:
    """``count`` independent coupled runs drawn from one stream, in order.

    Status per run: 0 when x was reached and every Q determined on D_gamma,
    1 when the walk left D_gamma, 2 when the horizon ran out first.
    ``record`` keeps the first that many vertices after the start.
    """
    gamma, lad, ae, af, av = _prepare(g, gamma, a, mode)
    cap = min(horizon + 2, 1 << 16)
    out = _coupled_batch(
        g.indptr, g.nbr, g.nbr_dir, _base_weights(g, a), np.array(gamma, dtype=np.int64),
        np.array([g.src(d) for d in gamma], dtype=np.int64),
        np.array([g.dst(d) for d in gamma], dtype=np.int64), g.v0, g.n, g.m,
        ae, af, av, int(horizon), bool(stop_on_resolution), int(index_shift), cap,
        int(record), int(count), rng)
    return CoupledBatch(gamma, *out)


def coupled_lrrw_run(g: Graph, gamma, rng, *, a=None, horizon: int = 10 ** 5,
                     stop_on_resolution: bool = True, mode: str = "local",
                     index_shift: int = 0, record: int = 0) -> CoupledRun:
    """Run the walk coupled to the ladders of gamma.

    The walk itself is an exact LRRW; the ladders are revealed as the
    cases of the coupling demand. After the run, ladders are completed with
    fresh draws so every edge of gamma (except the first) carries its Qbar.
    """
    gamma, lad, ae, af, av = _prepare(g, gamma, a, mode)
    b = coupled_batch(g, gamma, 1, rng, a=a, horizon=horizon,
                      stop_on_resolution=stop_on_resolution, mode=mode,
                      index_shift=index_shift, record=record)
    pairs, qbar = {}, {}
    for i in range(1, len(gamma)):
        e = gamma[i]
        pairs[e] = (int(b.me[0, i]), int(b.mf[0, i])) if b.resolved[0, i] else None
        v = float(b.qbar[0, i])
        qbar[e] = QBar(0, v, 1.0) if b.branch[0, i] == 0 else QBar(1, 1.0, 1.0 / v)
    run = CoupledRun(int(b.status[0]), int(b.steps[0]), gamma, pairs, qbar,
                     {gamma[i]: lad[i] for i in range(1, len(gamma))})
    run.path = np.concatenate([[g.v0], b.paths[0][b.paths[0] >= 0]]) if record else None
    return run
