"""Brute-force reference implementations.

Everything here is deliberately slow and literal. Nothing imports the fast
modules (categorical, ctmc, ...), so the references stay independent of the
code they check. Tests compare the fast closed forms against these.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import CapacityError, ConditioningError, DomainError, NumericError
from ._caps import dense_cap


@dataclass
class DenseChain:
    """Grid times plus one-step operators; ops[i] maps time i to time i+1."""

    times: list
    ops: list

    def __post_init__(self):
        if len(self.ops) != len(self.times) - 1:
            raise ValueError("need exactly len(times) - 1 operators")
        for i, op in enumerate(self.ops):
            op = np.asarray(op, dtype=float)
            if op.shape[0] > dense_cap():
                raise CapacityError(f"operator of size {op.shape[0]} exceeds the dense cap")
            if np.max(np.abs(op.sum(axis=0) - 1.0)) > 1e-12 or op.min() < -1e-12:
                raise ValueError(f"operator {i} is not column-stochastic")
            self.ops[i] = op

    @property
    def size(self):
        return self.ops[0].shape[0]

    def propagate(self, vec, start, stop):
        v = np.array(vec, dtype=float)
        for i in range(start, stop):
            out = np.zeros_like(v)
            op = self.ops[i]
            # literal sum over source states
            for src in range(len(v)):
                if v[src] != 0.0:
                    out += op[:, src] * v[src]
            v = out
        return v


def literal_interpolation(alpha, p):
    """alpha*I + (1-alpha)*p 1^T, built entry by entry."""
    p = np.asarray(p, dtype=float)
    n = len(p)
    Q = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            Q[i, j] = (1.0 - alpha) * p[i] + (alpha if i == j else 0.0)
    return Q


def numeric_window(alpha_s, alpha_t, p):
    """Q_t Q_s^{-1} by numerical linear solve (no closed form involved)."""
    Qs = literal_interpolation(alpha_s, p)
    Qt = literal_interpolation(alpha_t, p)
    W = np.linalg.solve(Qs.T, Qt.T).T
    # clean round-off so the chain validator accepts it
    W[np.abs(W) < 1e-17] = 0.0
    return W


def two_step_chain(alpha_s, alpha_t, p):
    return DenseChain([0.0, 1.0, 2.0], [literal_interpolation(alpha_s, p), numeric_window(alpha_s, alpha_t, p)])


def bayes_posterior(chain: DenseChain, s_index: int, t_index: int, x_t: int, x0: int):
    """q(x_s | x_t, x0) by enumeration over intermediate states."""
    if not 0 <= s_index < t_index < len(chain.times):
        raise ValueError("need 0 <= s_index < t_index")
    n = chain.size
    prior_s = chain.propagate(np.eye(n)[x0], 0, s_index)
    post = np.zeros(n)
    for xs in range(n):
        if prior_s[xs] == 0.0:
            continue
        lik = chain.propagate(np.eye(n)[xs], s_index, t_index)[x_t]
        post[xs] = prior_s[xs] * lik
    z = post.sum()
    if z <= 0.0:
        raise ConditioningError("conditioning event has probability zero")
    return post / z


def joint_marginal_posterior(chain: DenseChain, q0, s_index, t_index, x_t):
    """q(x_s | x_t) with x0 ~ q0 marginalised out."""
    n = chain.size
    qs = chain.propagate(q0, 0, s_index)
    post = np.array([qs[xs] * chain.propagate(np.eye(n)[xs], s_index, t_index)[x_t] for xs in range(n)])
    z = post.sum()
    if z <= 0.0:
        raise ConditioningError("conditioning event has probability zero")
    return post / z


def quadrature(fn, a, b, nodes=129):
    """Composite Simpson rule with an odd number of nodes."""
    nodes = int(nodes)
    if nodes < 3 or nodes % 2 == 0:
        raise ValueError("Simpson quadrature needs an odd node count >= 3")
    x = np.linspace(a, b, nodes)
    try:
        y = np.asarray(fn(x), dtype=float)
        if y.shape != x.shape:
            raise TypeError
    except (TypeError, ValueError):
        y = np.array([float(fn(xi)) for xi in x])
    if not np.all(np.isfinite(y)):
        raise NumericError("non-finite integrand value")
    w = np.ones(nodes)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    h = (b - a) / (nodes - 1)
    return float(h / 3.0 * np.dot(w, y))


def simpson_weights(a, b, nodes):
    x = np.linspace(a, b, nodes)
    w = np.ones(nodes)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return x, w * (b - a) / (nodes - 1) / 3.0


def finite_diff(fn, x, order=1, h=1e-3, domain=None):
    """Fourth-order central stencils for the first or second derivative."""
    if domain is not None and (x - 2 * h < domain[0] or x + 2 * h > domain[1]):
        raise DomainError("stencil leaves the domain")
    f = [float(fn(x + k * h)) for k in (-2, -1, 0, 1, 2)]
    if not all(math.isfinite(v) for v in f):
        raise NumericError("non-finite value on the stencil")
    if order == 1:
        return (f[0] - 8 * f[1] + 8 * f[3] - f[4]) / (12 * h)
    if order == 2:
        return (-f[0] + 16 * f[1] - 30 * f[2] + 16 * f[3] - f[4]) / (12 * h * h)
    raise ValueError("order must be 1 or 2")


# ---------------------------------------------------------------- sequences

def states(K, d):
    if K ** d > dense_cap():
        raise CapacityError(f"K^d = {K ** d} exceeds the dense cap {dense_cap()}")
    return list(itertools.product(range(K), repeat=d))


def literal_kron_sum(rates):
    """Sequence rate matrix from per-coordinate rates by walking all state pairs."""
    K = rates[0].shape[0]
    d = len(rates)
    S = states(K, d)
    N = len(S)
    out = np.zeros((N, N))
    for j, x in enumerate(S):
        for i, y in enumerate(S):
            diff = [k for k in range(d) if x[k] != y[k]]
            if len(diff) == 1:
                k = diff[0]
                out[i, j] = rates[k][y[k], x[k]]
        out[j, j] = -sum(out[i, j] for i in range(N) if i != j)
    return out


def literal_product_transition(mats):
    K = mats[0].shape[0]
    d = len(mats)
    S = states(K, d)
    N = len(S)
    out = np.ones((N, N))
    for j, x in enumerate(S):
        for i, y in enumerate(S):
            for k in range(d):
                out[i, j] *= mats[k][y[k], x[k]]
    return out


def gaussian_bayes(x_t, x0, a_s, s2_s, a_ts, s2_ts):
    """Posterior N(mean, var) of x_s given x_t and x0 via precision addition."""
    prec = a_ts ** 2 / s2_ts + 1.0 / s2_s
    mean = (a_ts * np.asarray(x_t) / s2_ts + a_s * np.asarray(x0) / s2_s) / prec
    return mean, 1.0 / prec


def gaussian_kl(m1, v1, m2, v2):
    m1, m2 = np.asarray(m1, float), np.asarray(m2, float)
    return float(np.sum(0.5 * (np.log(v2 / v1) + (v1 + (m1 - m2) ** 2) / v2 - 1.0)))


def categorical_kl(p, q):
    p = np.asarray(p, float)
    q = np.asarray(q, float)
    m = p > 0
    if np.any(q[m] <= 0):
        return math.inf
    return float(np.sum(p[m] * np.log(p[m] / q[m])))


def normal_pdf(x, m, v):
    return np.exp(-0.5 * (x - m) ** 2 / v) / np.sqrt(2 * np.pi * v)
