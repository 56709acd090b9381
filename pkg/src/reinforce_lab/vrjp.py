"""Vertex-reinforced jump process in its three descriptions.

Y jumps from x to y at rate J_xy (1 + L_y), L being the local times. While Y
sits at x only L_x grows, and L_x drives none of the exit rates out of x, so
every holding period is a plain exponential race: no thinning is needed.

Z is Y re-clocked by ds = 2(1 + L) dt, so that M = L^2 + 2L. Given an
environment W on the vertices, Z jumps at rate J_xy W_y / (2 W_x); without
the environment it jumps at rate (1/2) J_xy sqrt((1 + M_y) / (1 + M_x)),
whose integrated hazard is inverted in closed form.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate
from scipy.special import gamma as gamma_fn

from .graph import Graph


@dataclass
class Trajectory:
    """Jump chain plus holding durations in the trajectory's own clock."""

    vertices: np.ndarray  # len jumps + 1
    holds: np.ndarray  # len jumps
    clock: str  # "Y" or "Z"

    @property
    def local_times(self) -> np.ndarray:
        n = int(self.vertices.max()) + 1
        out = np.zeros(n)
        np.add.at(out, self.vertices[:-1], self.holds)
        return out

    @property
    def total_time(self) -> float:
        return float(self.holds.sum())

    def departure_times(self) -> np.ndarray:
        return np.cumsum(self.holds)

    def to_csv_rows(self):
        """(epoch, vertex, clock value at departure, local time at departure)."""
        loc = {}
        t = 0.0
        for k, (v, h) in enumerate(zip(self.vertices[:-1], self.holds)):
            t += h
            loc[int(v)] = loc.get(int(v), 0.0) + h
            yield k, int(v), t, loc[int(v)]


def time_change_forward(L):
    """M = L^2 + 2L."""
    L = np.asarray(L, dtype=np.float64)
    if np.any(L < 0):
        raise ValueError("local time must be nonnegative")
    out = L * L + 2 * L
    return float(out) if out.ndim == 0 else out


def time_change_back(M):
    """L = sqrt(1 + M) - 1, written to stay accurate for small M."""
    M = np.asarray(M, dtype=np.float64)
    if np.any(M < 0):
        raise ValueError("local time must be nonnegative")
    out = M / (np.sqrt(1 + M) + 1)
    return float(out) if out.ndim == 0 else out


# --- kernels ---------------------------------------------------------------------


@njit(nogil=True, cache=True)
def _y_run(indptr, nbr, nbr_dir, J, v0, n, jumps, L, verts, holds, rng):
    pos = v0
    verts[0] = v0
    rates = np.empty(indptr[1:].max() - indptr[:-1].min() + 1)
    for t in range(jumps):
        lo = indptr[pos]
        hi = indptr[pos + 1]
        tot = 0.0
        for k in range(lo, hi):
            r = J[nbr_dir[k] >> 1] * (1.0 + L[nbr[k]])
            rates[k - lo] = r
            tot += r
        h = rng.exponential() / tot
        u = rng.random() * tot
        acc = 0.0
        k = lo
        while k < hi - 1:
            acc += rates[k - lo]
            if u < acc:
                break
            k += 1
        L[pos] += h
        holds[t] = h
        pos = nbr[k]
        verts[t + 1] = pos
    return pos


@njit(nogil=True, cache=True)
def _z_env_run(indptr, nbr, nbr_dir, J, W, v0, n, jumps, M, verts, holds, rng):
    pos = v0
    verts[0] = v0
    rates = np.empty(indptr[1:].max() - indptr[:-1].min() + 1)
    for t in range(jumps):
        lo = indptr[pos]
        hi = indptr[pos + 1]
        tot = 0.0
        for k in range(lo, hi):
            r = 0.5 * J[nbr_dir[k] >> 1] * W[nbr[k]] / W[pos]
            rates[k - lo] = r
            tot += r
        h = rng.exponential() / tot
        u = rng.random() * tot
        acc = 0.0
        k = lo
        while k < hi - 1:
            acc += rates[k - lo]
            if u < acc:
                break
            k += 1
        M[pos] += h
        holds[t] = h
        pos = nbr[k]
        verts[t + 1] = pos
    return pos


@njit(nogil=True, cache=True)
def _z_reinf_run(indptr, nbr, nbr_dir, J, v0, n, jumps, M, verts, holds, rng):
    pos = v0
    verts[0] = v0
    rates = np.empty(indptr[1:].max() - indptr[:-1].min() + 1)
    for t in range(jumps):
        lo = indptr[pos]
        hi = indptr[pos + 1]
        A = 0.0
        for k in range(lo, hi):
            r = J[nbr_dir[k] >> 1] * math.sqrt(1.0 + M[nbr[k]])
            rates[k - lo] = r
            A += r
        # hazard A (sqrt(1 + m + u) - sqrt(1 + m)) set equal to Exp(1)
        root = math.sqrt(1.0 + M[pos]) + rng.exponential() / A
        h = root * root - (1.0 + M[pos])
        u = rng.random() * A
        acc = 0.0
        k = lo
        while k < hi - 1:
            acc += rates[k - lo]
            if u < acc:
                break
            k += 1
        M[pos] += h
        holds[t] = h
        pos = nbr[k]
        verts[t + 1] = pos
    return pos


def _J(g: Graph, J) -> np.ndarray:
    J = g.weight if J is None else J
    J = np.broadcast_to(np.asarray(J, dtype=np.float64), (g.m,)).copy()
    if np.any(J <= 0):
        raise ValueError("rates J must be positive")
    return J


def y_run(g: Graph, jumps: int, rng, J=None) -> Trajectory:
    """VRJP in its own clock; J defaults to the graph's edge weights."""
    L = np.zeros(g.n)
    verts = np.empty(jumps + 1, dtype=np.int64)
    holds = np.empty(jumps)
    _y_run(g.indptr, g.nbr, g.nbr_dir, _J(g, J), g.v0, g.n, int(jumps), L, verts, holds, rng)
    return Trajectory(verts, holds, "Y")


def y_step(g: Graph, pos: int, L: np.ndarray, rng, J=None):
    """One Y event from ``pos`` with local times L (updated in place).

    Returns (next vertex, holding time).
    """
    J = _J(g, J)
    nb = g.neighbors(pos)
    r = J[g.incident(pos)] * (1 + L[nb])
    h = rng.exponential() / r.sum()
    k = rng.choice(len(nb), p=r / r.sum())
    L[pos] += h
    return int(nb[k]), h


def y_rates(g: Graph, pos: int, L: np.ndarray, J=None) -> np.ndarray:
    J = _J(g, J)
    return J[g.incident(pos)] * (1 + L[g.neighbors(pos)])


def z_env_run(g: Graph, W, jumps: int, rng, J=None) -> Trajectory:
    """Z in the fixed vertex environment W."""
    W = np.asarray(getattr(W, "weights", W), dtype=np.float64)
    if W.shape != (g.n,) or np.any(~(W > 0)):
        raise ValueError("need one positive weight per vertex")
    M = np.zeros(g.n)
    verts = np.empty(jumps + 1, dtype=np.int64)
    holds = np.empty(jumps)
    _z_env_run(g.indptr, g.nbr, g.nbr_dir, _J(g, J), W, g.v0, g.n, int(jumps), M, verts,
               holds, rng)
    return Trajectory(verts, holds, "Z")


def z_env_step(g: Graph, pos: int, M: np.ndarray, W, rng, J=None):
    J = _J(g, J)
    W = np.asarray(getattr(W, "weights", W), dtype=np.float64)
    nb = g.neighbors(pos)
    r = 0.5 * J[g.incident(pos)] * W[nb] / W[pos]
    h = rng.exponential() / r.sum()
    k = rng.choice(len(nb), p=r / r.sum())
    M[pos] += h
    return int(nb[k]), h


def z_reinforced_run(g: Graph, jumps: int, rng, J=None) -> Trajectory:
    M = np.zeros(g.n)
    verts = np.empty(jumps + 1, dtype=np.int64)
    holds = np.empty(jumps)
    _z_reinf_run(g.indptr, g.nbr, g.nbr_dir, _J(g, J), g.v0, g.n, int(jumps), M, verts,
                 holds, rng)
    return Trajectory(verts, holds, "Z")


def z_reinforced_hold(m: float, A: float, E: float) -> float:
    """Holding time at a vertex with local time m and total sqrt-weight A."""
    root = math.sqrt(1 + m) + E / A
    return root * root - (1 + m)


def z_reinforced_hazard(m: float, A: float, u) -> np.ndarray:
    """Integrated jump rate over a hold of length u (inverse of the above)."""
    u = np.asarray(u, dtype=np.float64)
    return A * (np.sqrt(1 + m + u) - np.sqrt(1 + m))


# --- clock changes -------------------------------------------------------------------


def y_to_z(traj: Trajectory) -> Trajectory:
    """Re-clock a Y trajectory: a hold from local time l to l + u lasts
    (l + u)^2 + 2(l + u) - l^2 - 2l in Z time."""
    if traj.clock != "Y":
        raise ValueError("expected a Y trajectory")
    n = int(traj.vertices.max()) + 1
    L = np.zeros(n)
    out = np.empty_like(traj.holds)
    for k, (v, u) in enumerate(zip(traj.vertices[:-1], traj.holds)):
        l0 = L[v]
        l1 = l0 + u
        out[k] = u * (2 * l0 + u + 2)
        L[v] = l1
    return Trajectory(traj.vertices.copy(), out, "Z")


def z_to_y(traj: Trajectory) -> Trajectory:
    if traj.clock != "Z":
        raise ValueError("expected a Z trajectory")
    n = int(traj.vertices.max()) + 1
    M = np.zeros(n)
    out = np.empty_like(traj.holds)
    for k, (v, h) in enumerate(zip(traj.vertices[:-1], traj.holds)):
        m0 = M[v]
        m1 = m0 + h
        # difference of sqrt(1 + m) - 1, rearranged to avoid cancellation
        out[k] = h / (math.sqrt(1 + m1) + math.sqrt(1 + m0))
        M[v] = m1
    return Trajectory(traj.vertices.copy(), out, "Y")


# --- estimators ----------------------------------------------------------------------


def first_jump_local_times(g: Graph, traj: Trajectory) -> np.ndarray:
    """Per directed edge i->j: local time at i (trajectory clock) at the
    first jump i->j, NaN when that jump never happened."""
    out = np.full(2 * g.m, np.nan)
    loc = np.zeros(g.n)
    for a, b, h in zip(traj.vertices[:-1], traj.vertices[1:], traj.holds):
        loc[a] += h
        d = g.directed(int(a), int(b))
        if np.isnan(out[d]):
            out[d] = loc[a]
    return out


class NotObserved(ValueError):
    pass


def q_ij_estimator(tau: np.ndarray, d: int) -> float:
    """sqrt(tau_ji / tau_ij) for directed edge d = i->j, an estimate of W_j/W_i."""
    a, b = tau[d], tau[d ^ 1]
    if np.isnan(a) or np.isnan(b):
        raise NotObserved("both first jumps along the edge are needed")
    return math.sqrt(b / a)


def estimate_vertex_environment(traj: Trajectory, n: int | None = None) -> np.ndarray:
    """W_i proportional to sqrt(M_i), since Z is reversible for W_i^2."""
    z = y_to_z(traj) if traj.clock == "Y" else traj
    M = z.local_times
    if n is not None and len(M) < n:
        M = np.concatenate([M, np.zeros(n - len(M))])
    return np.sqrt(M / M.sum())


# --- oracles --------------------------------------------------------------------------


def reflection_oracle(s: float, length: int) -> float:
    """(pi s / sin(pi s))^length, i.e. (Gamma(1+s) Gamma(1-s))^length."""
    if not 0 <= s < 1:
        raise ValueError("s must lie in [0, 1)")
    if length < 1:
        raise ValueError("length must be >= 1")
    base = 1.0 if s == 0 else math.pi * s / math.sin(math.pi * s)
    return base ** length


def uv_ratio(U, V):
    return (2 * V + V * V) / (2 * U + U * U)


def uv_ratio_xy(X, Y, J):
    """The same ratio after U = X/J, V = Y/(X+J)."""
    return J * J * (2 * Y * (J + X) + Y * Y) / (X * (J + X) ** 2 * (2 * J + X))


def uv_moment_oracle(J: float, s: float, tol: float = 1e-9) -> float:
    """E((2V+V^2)/(2U+U^2))^s with U ~ Exp(J), V | U ~ Exp(J(1+U)).

    Nested quadrature over the Exp(1) x Exp(1) density of (X, Y). The inner
    integral over Y is smooth; the outer one has an X^{-s} singularity at 0.
    """
    if not 0 <= s < 0.25:
        raise ValueError("s must lie in [0, 1/4)")
    if J <= 0:
        raise ValueError("J must be positive")
    if s == 0:
        return 1.0

    def scaled(x):
        # x^s times the inner integral, finite at x = 0
        D = (J + x) ** 2 * (2 * J + x)
        A = 2 * J * J * (J + x) / D
        B = J * J / D
        f = lambda y: (A * y + B * y * y) ** s * math.exp(-y)
        v, _ = integrate.quad(f, 0, np.inf, epsabs=tol / 10, epsrel=tol, limit=200)
        return v * math.exp(-x)

    # near 0 the integrand behaves like x^{-s}, handed to the algebraic weight
    head, _ = integrate.quad(scaled, 0, 1, weight="alg", wvar=(-s, 0),
                             epsabs=tol / 10, epsrel=tol, limit=200)
    tail, _ = integrate.quad(lambda x: scaled(x) * x ** -s, 1, np.inf,
                             epsabs=tol / 10, epsrel=tol, limit=200)
    return head + tail


def uv_moment_bound(J: float, s: float) -> float:
    """J^{2s} (2^s Gamma(1+s) Gamma(1-3s) + Gamma(1+2s) Gamma(1-4s)).

    The explicit majorant obtained by bounding the ratio with
    2J^2 Y/X^3 + J^2 Y^2/X^4 and splitting the s-th power.
    """
    if not 0 < s < 0.25:
        raise ValueError("s must lie in (0, 1/4)")
    return J ** (2 * s) * (2 ** s * gamma_fn(1 + s) * gamma_fn(1 - 3 * s)
                           + gamma_fn(1 + 2 * s) * gamma_fn(1 - 4 * s))


def dominance_cdf_v(J: float):
    """Marginal cdf of V' ~ Exp(J(1+U)), U ~ Exp(J): 1 - e^{-Jv}/(1+v)."""
    return lambda v: 1 - np.exp(-J * np.asarray(v)) / (1 + np.asarray(v))


# --- batched path-law samplers ----------------------------------------------------------


@njit(nogil=True, cache=True)
def _encode(verts, n):
    code = 0
    for v in verts:
        code = code * n + v
    return code


@njit(nogil=True, cache=True)
def _y_paths(indptr, nbr, nbr_dir, J, v0, n, jumps, count, gamma_a, rng):
    """Path codes of the first ``jumps`` jumps of Y; gamma_a > 0 redraws
    J_e ~ Gamma(gamma_a, 1) for every replica."""
    out = np.empty(count, dtype=np.int64)
    L = np.zeros(n)
    verts = np.empty(jumps + 1, dtype=np.int64)
    holds = np.empty(jumps)
    Jr = J.copy()
    for r in range(count):
        if gamma_a > 0:
            for e in range(Jr.shape[0]):
                Jr[e] = rng.standard_gamma(gamma_a)
        L[:] = 0.0
        _y_run(indptr, nbr, nbr_dir, Jr, v0, n, jumps, L, verts, holds, rng)
        out[r] = _encode(verts[1:], n)
    return out


@njit(nogil=True, cache=True)
def _z_reinf_paths(indptr, nbr, nbr_dir, J, v0, n, jumps, count, rng):
    out = np.empty(count, dtype=np.int64)
    M = np.zeros(n)
    verts = np.empty(jumps + 1, dtype=np.int64)
    holds = np.empty(jumps)
    for r in range(count):
        M[:] = 0.0
        _z_reinf_run(indptr, nbr, nbr_dir, J, v0, n, jumps, M, verts, holds, rng)
        out[r] = _encode(verts[1:], n)
    return out


@njit(nogil=True, cache=True)
def _z_env_paths(indptr, nbr, nbr_dir, J, v0, n, jumps, count, burn, rng):
    """Environment drawn per replica from a long independent Y run
    (W_i = sqrt(M_i)), then the first ``jumps`` jumps of Z in it."""
    out = np.empty(count, dtype=np.int64)
    L = np.zeros(n)
    W = np.empty(n)
    M = np.zeros(n)
    lv = np.empty(burn + 1, dtype=np.int64)
    lh = np.empty(burn)
    verts = np.empty(jumps + 1, dtype=np.int64)
    holds = np.empty(jumps)
    for r in range(count):
        L[:] = 0.0
        _y_run(indptr, nbr, nbr_dir, J, v0, n, burn, L, lv, lh, rng)
        for i in range(n):
            W[i] = math.sqrt(L[i] * L[i] + 2.0 * L[i]) + 1e-300
        M[:] = 0.0
        _z_env_run(indptr, nbr, nbr_dir, J, W, v0, n, jumps, M, verts, holds, rng)
        out[r] = _encode(verts[1:], n)
    return out


@njit(nogil=True, cache=True)
def _lrrw_paths(indptr, nbr, nbr_dir, base, v0, n, m, steps, count, rng):
    out = np.empty(count, dtype=np.int64)
    N = np.zeros(m)
    verts = np.empty(steps, dtype=np.int64)
    for r in range(count):
        N[:] = 0.0
        pos = v0
        for t in range(steps):
            lo = indptr[pos]
            hi = indptr[pos + 1]
            tot = 0.0
            for k in range(lo, hi):
                e = nbr_dir[k] >> 1
                tot += base[e] + N[e]
            u = rng.random() * tot
            acc = 0.0
            k = lo
            while k < hi - 1:
                e = nbr_dir[k] >> 1
                acc += base[e] + N[e]
                if u < acc:
                    break
                k += 1
            N[nbr_dir[k] >> 1] += 1.0
            pos = nbr[k]
            verts[t] = pos
        out[r] = _encode(verts, n)
    return out


def y_path_codes(g: Graph, jumps: int, count: int, rng, J=None, gamma_a: float = 0.0):
    return _y_paths(g.indptr, g.nbr, g.nbr_dir, _J(g, J), g.v0, g.n, int(jumps), int(count),
                    float(gamma_a), rng)


def z_reinforced_path_codes(g: Graph, jumps: int, count: int, rng, J=None):
    return _z_reinf_paths(g.indptr, g.nbr, g.nbr_dir, _J(g, J), g.v0, g.n, int(jumps),
                          int(count), rng)


def z_env_path_codes(g: Graph, jumps: int, count: int, rng, J=None, burn: int = 4000):
    return _z_env_paths(g.indptr, g.nbr, g.nbr_dir, _J(g, J), g.v0, g.n, int(jumps),
                        int(count), int(burn), rng)


def lrrw_path_codes(g: Graph, steps: int, count: int, rng, a=None):
    base = _J(g, a)
    return _lrrw_paths(g.indptr, g.nbr, g.nbr_dir, base, g.v0, g.n, g.m, int(steps),
                       int(count), rng)


def embed_lrrw_in_vrjp(g: Graph, a: float, steps: int, count: int, rng_lrrw, rng_vrjp):
    """Path codes of LRRW(a) and of the jump chain of VRJP with i.i.d.
    Gamma(a, 1) rates, ``count`` replicas each."""
    return (lrrw_path_codes(g, steps, count, rng_lrrw, a),
            y_path_codes(g, steps, count, rng_vrjp, J=1.0, gamma_a=a))


# --- the quantities behind the A1UB chain ---------------------------------------------------


@njit(nogil=True, cache=True)
def _uv_samples(indptr, nbr, nbr_dir, J, v0, n, dirs, count, max_jumps, rng):
    """For each replica run Y until every directed edge in ``dirs`` has been
    jumped, returning local times L_i at the first jump i->j (Y clock).
    Rows that hit ``max_jumps`` are NaN."""
    k_d = dirs.shape[0]
    out = np.full((count, k_d), np.nan)
    L = np.zeros(n)
    rates = np.empty(indptr[1:].max() - indptr[:-1].min() + 1)
    for r in range(count):
        L[:] = 0.0
        pos = v0
        left = k_d
        for t in range(max_jumps):
            lo = indptr[pos]
            hi = indptr[pos + 1]
            tot = 0.0
            for k in range(lo, hi):
                rr = J[nbr_dir[k] >> 1] * (1.0 + L[nbr[k]])
                rates[k - lo] = rr
                tot += rr
            h = rng.exponential() / tot
            u = rng.random() * tot
            acc = 0.0
            k = lo
            while k < hi - 1:
                acc += rates[k - lo]
                if u < acc:
                    break
                k += 1
            L[pos] += h
            d = nbr_dir[k]
            for q in range(k_d):
                if dirs[q] == d and np.isnan(out[r, q]):
                    out[r, q] = L[pos]
                    left -= 1
            pos = nbr[k]
            if left == 0:
                break
        if left > 0:
            out[r, :] = np.nan
    return out


def first_jump_samples(g: Graph, dirs, count: int, rng, J=None, max_jumps: int = 10 ** 6):
    """L_i at the first Y-jump along each directed edge in ``dirs``."""
    return _uv_samples(g.indptr, g.nbr, g.nbr_dir, _J(g, J), g.v0, g.n,
                       np.asarray(dirs, dtype=np.int64), int(count), int(max_jumps), rng)


@njit(nogil=True, cache=True)
def _tau_ratio_samples(indptr, nbr, nbr_dir, J, W, v0, n, dirs, count, max_jumps, rng):
    """Z in fixed environment W: first-jump local times along each
    directed edge in ``dirs`` (Z clock)."""
    k_d = dirs.shape[0]
    out = np.full((count, k_d), np.nan)
    M = np.zeros(n)
    rates = np.empty(indptr[1:].max() - indptr[:-1].min() + 1)
    for r in range(count):
        M[:] = 0.0
        pos = v0
        left = k_d
        for t in range(max_jumps):
            lo = indptr[pos]
            hi = indptr[pos + 1]
            tot = 0.0
            for k in range(lo, hi):
                rr = 0.5 * J[nbr_dir[k] >> 1] * W[nbr[k]] / W[pos]
                rates[k - lo] = rr
                tot += rr
            h = rng.exponential() / tot
            u = rng.random() * tot
            acc = 0.0
            k = lo
            while k < hi - 1:
                acc += rates[k - lo]
                if u < acc:
                    break
                k += 1
            M[pos] += h
            d = nbr_dir[k]
            for q in range(k_d):
                if dirs[q] == d and np.isnan(out[r, q]):
                    out[r, q] = M[pos]
                    left -= 1
            pos = nbr[k]
            if left == 0:
                break
        if left > 0:
            out[r, :] = np.nan
    return out


def tau_samples(g: Graph, W, dirs, count: int, rng, J=None, max_jumps: int = 10 ** 6):
    """tau_d for each directed edge d in ``dirs``, Z in the environment W."""
    W = np.asarray(getattr(W, "weights", W), dtype=np.float64)
    return _tau_ratio_samples(g.indptr, g.nbr, g.nbr_dir, _J(g, J), W, g.v0, g.n,
                              np.asarray(dirs, dtype=np.int64), int(count), int(max_jumps), rng)
