"""Continuous-time Markov chains on finite alphabets and product spaces.

Rate matrices use destination=row, source=column: R[y, x] is the jump rate
from x to y, off-diagonals are nonnegative and columns sum to zero.
Sequences over K symbols of length d are indexed in mixed radix with the
first coordinate most significant, which matches ``np.kron`` ordering.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _core
from ._caps import dense_cap
from .categorical import NoiseDistribution, window_matrix
from .errors import CapacityError, NumericError, StabilityError, SupportError
from .schedule import NoiseSchedule

T_MIN = 1e-3
BOUND_GRID = 1024
BOUND_SAFETY = 1.1


# ------------------------------------------------------------------ basics

def check_rate(R, tol=1e-10):
    R = np.asarray(R, dtype=float)
    off = R - np.diag(np.diag(R))
    if off.min(initial=0.0) < -1e-12:
        raise ValueError("rate matrix has a negative off-diagonal entry")
    if np.max(np.abs(R.sum(axis=0))) > tol * max(1.0, np.abs(R).max()):
        raise ValueError("rate matrix columns do not sum to zero")
    return R


def close_columns(R):
    """Overwrite the diagonal so every column sums to zero."""
    R = np.array(R, dtype=float)
    np.fill_diagonal(R, 0.0)
    np.fill_diagonal(R, -R.sum(axis=0))
    return R


@dataclass(frozen=True)
class SeparableRate:
    """Rate c(t) * M with c >= 0 and M a fixed rate matrix.

    Interpolation kernels have this form, which lets the compiled thinning
    kernel evaluate rates without calling back into Python.
    """

    coef: Callable
    M: np.ndarray
    clock: Callable = None  # integral of coef from 0
    inverse_clock: Callable = None

    def __call__(self, t):
        return float(self.coef(t)) * self.M


def interpolation_rate(schedule: NoiseSchedule, noise: NoiseDistribution) -> SeparableRate:
    p = noise.probs
    n = len(p)
    M = np.outer(p, np.ones(n)) - np.eye(n)  # p 1^T - I
    M = close_columns(M)

    def coef(t):
        return -schedule.dalpha(t) / schedule.alpha(t)

    return SeparableRate(coef, M, schedule.jump_clock, schedule.inverse_jump_clock)


def masking_reverse_rate(schedule: NoiseSchedule, marginal) -> SeparableRate:
    """Exact reverse-time rate of one masked coordinate with clean law ``marginal``.

    Reverse time is u = 1 - t. A MASK unmasks to c at rate
    -alpha'(t) p(c) / (1 - alpha(t)); unmasked symbols never move. The
    integrated clock log(1 - alpha(1)) - log(1 - alpha(1 - u)) and its
    inverse are closed form, so sampling needs no rate bound.
    """
    p = np.asarray(marginal, dtype=float)
    if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
        raise ValueError("clean marginal must be a simplex vector")
    K = len(p)
    M = np.zeros((K + 1, K + 1))
    M[:K, K] = p
    M[K, K] = -1.0
    top = math.log1p(-float(schedule.alpha(1.0)))

    def coef(u):
        t = 1.0 - np.asarray(u, dtype=float)
        return -schedule.dalpha(t) / (1.0 - schedule.alpha(t))

    def clock(u):
        return top - np.log1p(-schedule.alpha(1.0 - np.asarray(u, dtype=float)))

    def inverse_clock(g):
        a = -np.expm1(top - np.asarray(g, dtype=float))
        return 1.0 - schedule._raw_inverse(a)

    return SeparableRate(coef, M, clock, inverse_clock)


def rate_from_schedule(schedule: NoiseSchedule, noise: NoiseDistribution, t):
    """R_t = (alpha'_t / alpha_t) (I - p 1^T)."""
    a = float(schedule.alpha(t))
    if not a > 0.0:
        raise NumericError(f"alpha({t}) vanished below the clamp")
    c = float(schedule.dalpha(t)) / a
    if not np.isfinite(c):
        raise NumericError(f"non-finite log-derivative at t={t}")
    p = noise.probs
    n = len(p)
    R = c * (np.eye(n) - np.outer(p, np.ones(n)))
    return R + 0.0  # normalise -0.0 entries


def rate_finite_difference(schedule: NoiseSchedule, noise: NoiseDistribution, t, delta):
    """(Q_{t | t-delta} - I) / delta."""
    if t - delta < 0.0:
        raise ValueError("t - delta must stay in [0, 1]")
    W = window_matrix(float(schedule.alpha(t - delta)), float(schedule.alpha(t)), noise)
    return (W - np.eye(noise.size)) / delta


# ---------------------------------------------------------- master equation

def integrate_master(rate_fn, q0, t0, t1, steps=256, renormalize=True, return_path=False):
    """Classical RK4 for dq/dt = R_t q from t0 to t1 (t1 < t0 is allowed)."""
    if int(steps) != steps or steps < 1:
        raise ValueError("steps must be a positive integer")
    q = np.array(q0, dtype=float)
    h = (t1 - t0) / steps
    path = [q.copy()] if return_path else None
    for i in range(int(steps)):
        t = t0 + i * h
        k1 = rate_fn(t) @ q
        k2 = rate_fn(t + 0.5 * h) @ (q + 0.5 * h * k1)
        k3 = rate_fn(t + 0.5 * h) @ (q + 0.5 * h * k2)
        k4 = rate_fn(t + h) @ (q + h * k3)
        q = q + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        drift = abs(q.sum() - 1.0)
        if not np.all(np.isfinite(q)) or drift > 1e-6:
            raise StabilityError(f"state left the simplex (mass error {drift:.3g}) near t={t + h}")
        if return_path:
            path.append(q.copy())
    if renormalize:
        q = np.clip(q, 0.0, None)
        q = q / q.sum()
    if return_path:
        return q, np.array(path)
    return q


def reverse_rate(rate, q):
    """Time-reversed rates: R_hat(x, z) = R(z, x) q(x) / q(z)."""
    R = np.asarray(rate, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0.0):
        raise SupportError("reverse rate needs a strictly positive marginal")
    Rh = (q[:, None] * R.T) / q[None, :]
    return close_columns(Rh)


def reverse_rate_posterior(rate, Qt, q_data):
    """Posterior form: R_hat(x, y) = R(y, x) sum_x0 q(x|x0)/q(y|x0) q(x0|y).

    ``Qt`` is the transition from time 0 to t and ``q_data`` the time-0 law.
    Only symbols with q_t(y) > 0 are valid sources.
    """
    R = np.asarray(rate, dtype=float)
    Qt = np.asarray(Qt, dtype=float)
    q0 = np.asarray(q_data, dtype=float)
    qt = Qt @ q0
    n = len(qt)
    out = np.zeros((n, n))
    for y in range(n):
        if qt[y] <= 0.0:
            continue
        post = Qt[y, :] * q0 / qt[y]  # q(x0 | y)
        for x in range(n):
            if x == y:
                continue
            acc = 0.0
            for x0 in range(n):
                if post[x0] > 0.0:
                    acc += Qt[x, x0] / Qt[y, x0] * post[x0]
            out[x, y] = R[y, x] * acc
    return close_columns(out)


def symmetrized_perturbation(q, m):
    """C(y, x) = m(x, y) / q(x) for a symmetric nonnegative m; diagonal closed."""
    q = np.asarray(q, dtype=float)
    m = np.asarray(m, dtype=float)
    m = 0.5 * (m + m.T)
    C = m.T / q[None, :]
    return close_columns(C)


def detailed_balance_family(rate_hat, q, gamma, c):
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    q = np.asarray(q, dtype=float)
    C = np.asarray(c, dtype=float)
    flux = C * q[None, :]  # q(x) C(y, x) at [y, x]
    scale = max(1.0, np.abs(flux).max())
    if np.max(np.abs(flux - flux.T)) > 1e-10 * scale:
        raise ValueError("perturbation does not satisfy detailed balance w.r.t. q")
    return np.asarray(rate_hat, dtype=float) + gamma * C


# -------------------------------------------------------------- sequences

@dataclass(frozen=True)
class SequenceRateSpec:
    per_dim: tuple
    d: int = field(default=0)

    def __post_init__(self):
        mats = tuple(check_rate(R) for R in self.per_dim)
        object.__setattr__(self, "per_dim", mats)
        if self.d == 0:
            object.__setattr__(self, "d", len(mats))
        if self.d != len(mats):
            raise ValueError("d must match the number of per-dimension matrices")
        if len({m.shape for m in mats}) != 1:
            raise ValueError("all per-dimension rates must share one alphabet")

    @property
    def K(self):
        return self.per_dim[0].shape[0]

    @classmethod
    def identical(cls, R, d):
        return cls(tuple([np.asarray(R, dtype=float)] * d), d)


def state_index(x, K):
    idx = 0
    for v in x:
        idx = idx * K + int(v)
    return idx


def index_state(i, K, d):
    out = [0] * d
    for k in range(d - 1, -1, -1):
        out[k] = i % K
        i //= K
    return tuple(out)


def all_states(K, d):
    """(K^d, d) array of sequences in index order."""
    n = K ** d
    if n > dense_cap():
        raise CapacityError(f"K^d = {n} exceeds the dense cap {dense_cap()}")
    idx = np.arange(n)
    out = np.empty((n, d), dtype=np.int64)
    for k in range(d - 1, -1, -1):
        out[:, k] = idx % K
        idx = idx // K
    return out


def kron_sum_dense(spec: SequenceRateSpec):
    K, d = spec.K, spec.d
    n = K ** d
    if n > dense_cap():
        raise CapacityError(f"K^d = {n} exceeds the dense cap {dense_cap()}")
    out = np.zeros((n, n))
    for k, R in enumerate(spec.per_dim):
        left = np.eye(K ** k)
        right = np.eye(K ** (d - k - 1))
        out += np.kron(np.kron(left, R), right)
    return out


def product_distribution(marginals):
    out = np.ones(1)
    for m in marginals:
        out = np.kron(out, np.asarray(m, dtype=float))
    return out


def marginalize(q, K, d, k):
    """Coordinate-k marginal of a dense distribution (the operator S_k)."""
    return np.asarray(q, dtype=float).reshape((K,) * d).sum(axis=tuple(j for j in range(d) if j != k))


def reverse_rate_factorized(spec: SequenceRateSpec, seq_dist, x):
    """Reverse rates to every Hamming-1 neighbour of ``x``.

    ``seq_dist`` is either a dense vector over K^d states or a list of d
    per-coordinate marginals (a product law). Returns a (d, K) array whose
    entry [k, y] is the rate of replacing x^(k) by y; entries y = x^(k) are 0.
    """
    K, d = spec.K, spec.d
    x = tuple(int(v) for v in x)
    out = np.zeros((d, K))
    if isinstance(seq_dist, (list, tuple)):
        margs = [np.asarray(m, dtype=float) for m in seq_dist]
        for k in range(d):
            if margs[k][x[k]] <= 0.0:
                raise SupportError("query state has zero probability")
        for k in range(d):
            R = spec.per_dim[k]
            for y in range(K):
                if y != x[k]:
                    out[k, y] = R[x[k], y] * margs[k][y] / margs[k][x[k]]
        return out
    q = np.asarray(seq_dist, dtype=float)
    qx = q[state_index(x, K)]
    if qx <= 0.0:
        raise SupportError("query state has zero probability")
    for k in range(d):
        R = spec.per_dim[k]
        for y in range(K):
            if y == x[k]:
                continue
            z = list(x)
            z[k] = y
            out[k, y] = R[x[k], y] * q[state_index(z, K)] / qx
    return out


# ------------------------------------------------------------- simulation

@dataclass
class JumpPath:
    x0: tuple
    events: list  # (time, coordinate, new symbol)
    horizon: float = 1.0

    def state_at(self, t):
        x = list(self.x0)
        for (tau, k, sym) in self.events:
            if tau > t:
                break
            x[k] = sym
        return tuple(x)

    @property
    def final(self):
        return self.state_at(np.inf)

    def to_jsonl(self):
        head = json.dumps({"x0": list(self.x0), "horizon": self.horizon}, sort_keys=True)
        rows = [json.dumps({"t": float(t), "k": int(k), "sym": int(s)}, sort_keys=True) for t, k, s in self.events]
        return "\n".join([head] + rows) + "\n"


def path_rng(seed, path_index):
    """Counter-based stream for one (seed, path index) pair."""
    key = np.array([int(seed) & 0xFFFFFFFFFFFFFFFF, int(path_index)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def scan_bound(rate_fn, horizon, grid=BOUND_GRID):
    """1.1 x the largest single-coordinate exit rate seen on a uniform grid."""
    ts = np.linspace(0.0, horizon, grid)
    if isinstance(rate_fn, SeparableRate):
        c = np.asarray(rate_fn.coef(ts), dtype=float)
        peak = np.max(np.abs(c)) * np.max(-np.diag(rate_fn.M)) if len(c) else 0.0
    else:
        peak = 0.0
        for t in ts:
            R = np.asarray(rate_fn(t), dtype=float)
            if not np.all(np.isfinite(R)):
                raise NumericError(f"non-finite rate at t={t}")
            peak = max(peak, float(np.max(-np.diag(R))))
    if not np.isfinite(peak):
        raise NumericError("non-finite rate found during the bound scan")
    return BOUND_SAFETY * peak


def _draw_candidates(rng, bound, d, horizon):
    n = rng.poisson(bound * d * horizon) if bound > 0 else 0
    times = np.sort(rng.uniform(0.0, horizon, n))
    coords = rng.integers(0, d, n)
    thresh = rng.uniform(0.0, 1.0, n) * bound
    dest = rng.uniform(0.0, 1.0, n)
    return times, coords, thresh, dest


def _simulate_generic(rate_fn, d, x0, horizon, rng, bound):
    times, coords, thresh, dest = _draw_candidates(rng, bound, d, horizon)
    x = list(int(v) for v in x0)
    events = []
    for t, k, th, u in zip(times, coords, thresh, dest):
        R = np.asarray(rate_fn(t), dtype=float)
        xk = x[k]
        ex = -R[xk, xk]
        if ex <= 0.0 or th >= ex:
            continue
        col = R[:, xk].copy()
        col[xk] = 0.0
        col[col < 0] = 0.0
        y = int(_core.sample_rows(np.ascontiguousarray(col[None, :]), np.array([u]))[0])
        x[k] = y
        events.append((float(t), int(k), y))
    return events


def simulate_batch(rate_fn, d, x0, horizon, n_paths, seed, jobs=1, start_index=0):
    """Simulate many independent paths; path i uses stream (seed, start_index+i).

    Returns (final_states, events) where events is a list of per-path arrays
    (times, coords, syms). Output does not depend on ``jobs``.
    """
    x0 = np.asarray(x0, dtype=np.int64)
    if x0.shape != (d,):
        raise ValueError("x0 must have length d")
    separable = isinstance(rate_fn, SeparableRate)
    use_clock = separable and rate_fn.clock is not None
    if use_clock:
        clock_end = float(rate_fn.clock(horizon))
        bound = float(np.max(-np.diag(rate_fn.M)))
    else:
        bound = scan_bound(rate_fn, horizon)

    def run_chunk(lo, hi):
        finals = np.tile(x0, (hi - lo, 1))
        evs = []
        if not separable:
            for i in range(lo, hi):
                e = _simulate_generic(rate_fn, d, x0, horizon, path_rng(seed, start_index + i), bound)
                evs.append(e)
                for _, k, y in e:
                    finals[i - lo, k] = y
            return finals, [(np.array([a for a, _, _ in e]), np.array([b for _, b, _ in e], dtype=np.int64),
                             np.array([c for _, _, c in e], dtype=np.int64)) for e in evs]
        if use_clock:
            # homogeneous thinning on the integrated clock, mapped back to t
            per = [_draw_candidates(path_rng(seed, start_index + i), bound, d, clock_end) for i in range(lo, hi)]
        else:
            per = [_draw_candidates(path_rng(seed, start_index + i), bound, d, horizon) for i in range(lo, hi)]
        counts = np.array([len(p[0]) for p in per], dtype=np.int64)
        ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        cat = [np.concatenate([p[j] for p in per]) if per else np.empty(0) for j in range(4)]
        times = cat[0].astype(float)
        coords = np.ascontiguousarray(cat[1].astype(np.int64))
        thresh = np.ascontiguousarray(cat[2].astype(float))
        dest = np.ascontiguousarray(cat[3].astype(float))
        if use_clock:
            cvals = np.ones(len(times))
            times = np.minimum(np.asarray(rate_fn.inverse_clock(times), dtype=float).reshape(-1), horizon)
        else:
            cvals = np.ascontiguousarray(np.asarray(rate_fn.coef(times), dtype=float).reshape(-1))
        acc, sym = _core.thin_walk(finals, ptr, coords, thresh, dest, cvals, np.ascontiguousarray(rate_fn.M))
        acc = np.asarray(acc).astype(bool)
        sym = np.asarray(sym)
        for p in range(hi - lo):
            sl = slice(ptr[p], ptr[p + 1])
            m = acc[sl]
            evs.append((times[sl][m], coords[sl][m], sym[sl][m]))
        return finals, evs

    chunk = max(1, -(-n_paths // max(1, jobs)))
    bounds = [(lo, min(n_paths, lo + chunk)) for lo in range(0, n_paths, chunk)]
    if jobs > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(lambda b: run_chunk(*b), bounds))
    else:
        parts = [run_chunk(*b) for b in bounds]
    finals = np.concatenate([p[0] for p in parts]) if parts else np.empty((0, d), dtype=np.int64)
    events = [e for p in parts for e in p[1]]
    return finals, events


def simulate_exact(rate_fn, d, x0, horizon, rng_seed, path_index=0) -> JumpPath:
    """One exact path by thinning against a grid-scanned bound."""
    finals, events = simulate_batch(rate_fn, d, x0, horizon, 1, rng_seed, start_index=path_index)
    t, k, s = events[0]
    return JumpPath(tuple(int(v) for v in x0), [(float(a), int(b), int(c)) for a, b, c in zip(t, k, s)], horizon)


def empirical_distribution(finals, K):
    """Dense empirical law of final states."""
    finals = np.asarray(finals)
    d = finals.shape[1]
    idx = np.zeros(len(finals), dtype=np.int64)
    for k in range(d):
        idx = idx * K + finals[:, k]
    return np.bincount(idx, minlength=K ** d) / max(1, len(finals))
