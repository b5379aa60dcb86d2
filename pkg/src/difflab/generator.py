"""Generators of finite-state Markov processes as matrices.

For a rate matrix R (destination row, source column) the generator acts on
test functions by (L phi)(x) = sum_y R(y, x) phi(y), i.e. L phi = R^T phi,
and its adjoint moves distributions, L* q = R q. Everything else in this
module is an identity between such products, checked numerically.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import ctmc
from ._quad import simpson
from .errors import DomainError, SupportError


@dataclass(frozen=True)
class FiniteGenerator:
    rate: np.ndarray

    def __post_init__(self):
        R = self.rate
        if isinstance(R, ctmc.SequenceRateSpec):
            R = ctmc.kron_sum_dense(R)
        R = np.asarray(R, dtype=float)
        if R.ndim != 2 or R.shape[0] != R.shape[1]:
            raise ValueError("generator needs a square rate matrix")
        object.__setattr__(self, "rate", R)

    @property
    def size(self):
        return self.rate.shape[0]


def _vec(v, n, name):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{name} has shape {v.shape}, expected ({n},)")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} has non-finite entries")
    return v


def apply(gen: FiniteGenerator, phi):
    return gen.rate.T @ _vec(phi, gen.size, "test function")


def adjoint(gen: FiniteGenerator, q):
    return gen.rate @ _vec(q, gen.size, "distribution")


def dynkin_residual(gen_fn, phi, q0, tau, steps=256):
    """|E_{q_tau} phi - E_{q_0} phi - int_0^tau E_{q_t}[L_t phi] dt|.

    Marginals come from RK4 on the master equation and the time integral
    uses Simpson on the same grid, so both sides share one discretisation.
    """
    if tau > 1.0:
        raise ValueError("tau must not exceed 1")
    if tau == 0.0:
        return 0.0
    steps = int(steps) + (int(steps) % 2)
    phi = np.asarray(phi, dtype=float)
    rate_fn = lambda t: gen_fn(t).rate  # noqa: E731
    _, path = ctmc.integrate_master(rate_fn, q0, 0.0, tau, steps, renormalize=False, return_path=True)
    ts, ws = simpson(0.0, tau, steps + 1)
    vals = np.array([path[i] @ apply(gen_fn(t), phi) for i, t in enumerate(ts)])
    return float(abs(path[-1] @ phi - path[0] @ phi - ws @ vals))


def reversed_generator(gen: FiniteGenerator, q) -> FiniteGenerator:
    """Matrix of phi -> (1/q)[L*(q phi) - phi L* q].

    Column y of the generator matrix is its action on the indicator of y;
    the returned rate matrix is the transpose of that operator.
    """
    q = _vec(q, gen.size, "distribution")
    if np.any(q <= 0):
        raise SupportError("reversed generator needs a strictly positive marginal")
    R = gen.rate
    Lq = R @ q
    n = gen.size
    op = np.empty((n, n))  # op[x, y] = (L_hat e_y)(x)
    for y in range(n):
        e = np.zeros(n)
        e[y] = 1.0
        op[:, y] = (R @ (q * e) - e * Lq) / q
    return FiniteGenerator(op.T)


def generator_elbo_integrand(gen_reversed: FiniteGenerator, q, p_theta, x=None):
    """(L_hat a / a - L_hat log a)(x) with a = p_theta / q.

    With ``x=None`` the values for every state are returned.
    """
    q = _vec(q, gen_reversed.size, "q")
    p = _vec(p_theta, gen_reversed.size, "p_theta")
    if np.any(q <= 0) or np.any(p <= 0):
        raise SupportError("integrand needs strictly positive q and p_theta")
    a = p / q
    out = apply(gen_reversed, a) / a - apply(gen_reversed, np.log(a))
    return out if x is None else float(out[x])


def elbo_integrand_ratio_form(rate, q, p_theta):
    """sum_{y != x} (q(y)/q(x)) R(x, y) [r - 1 - log r] with
    r = (p(y)/p(x)) / (q(y)/q(x)), for every x."""
    R = np.asarray(rate, dtype=float)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p_theta, dtype=float)
    qr = q[None, :] / q[:, None]  # [x, y] = q(y)/q(x)
    r = (p[None, :] / p[:, None]) / qr
    terms = qr * R * (r - 1.0 - np.log(r))  # R[x, y] is the rate y -> x
    np.fill_diagonal(terms, 0.0)
    return terms.sum(axis=1)


def transformed_rate(rate, a):
    """Off-diagonals R(y, x) a(y)/a(x), columns closed."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise DomainError("transform needs a strictly positive function")
    return ctmc.close_columns(np.asarray(rate, float) * a[:, None] / a[None, :])


def _dt(alpha_fn, t, x, h=1e-4):
    """Fourth-order time derivative; one-sided stencils near 0 and 1."""
    if t - 2 * h < 0.0:
        w, off = np.array([-25, 48, -36, 16, -3]), 0
    elif t + 2 * h > 1.0:
        w, off = np.array([3, -16, 36, -48, 25]), -4
    else:
        w, off = np.array([1, -8, 0, 8, -1]), -2
    return sum(wi * alpha_fn(t + (j + off) * h, x) for j, wi in enumerate(w)) / (12 * h)


def _log_rate_integrand(rate_fn, alpha_fn, dalpha_fn, t, x, n):
    """(d/dt a_t + L_t a_t)(x) / a_t(x) for state x (vectorised over x)."""
    allx = np.arange(n)
    a_all = np.asarray(alpha_fn(t, allx), dtype=float)
    if np.any(a_all <= 0):
        raise DomainError(f"alpha must stay positive (t={t})")
    R = np.asarray(rate_fn(t), dtype=float)
    La = R.T @ a_all
    da = np.asarray(dalpha_fn(t, allx), float) if dalpha_fn else np.array([_dt(alpha_fn, t, y) for y in allx])
    return ((da + La) / a_all)[x]


def girsanov_weight(rate_fn, alpha_fn, path: ctmc.JumpPath, n_states, dalpha_fn=None, nodes=129):
    """M_1 = a_1(x_1)/a_0(x_0) exp(-int (d_t + L_t) a / a dt) along one path.

    The path lives on a single coordinate with ``n_states`` symbols; the
    integral is Simpson between consecutive jumps.
    """
    x0 = path.x0[0]
    times = [0.0] + [e[0] for e in path.events] + [path.horizon]
    states = [x0] + [e[2] for e in path.events]
    acc = 0.0
    for (a, b), x in zip(zip(times[:-1], times[1:]), states):
        if b <= a:
            continue
        ts, ws = simpson(a, b, nodes)
        acc += sum(w * _log_rate_integrand(rate_fn, alpha_fn, dalpha_fn, t, x, n_states) for t, w in zip(ts, ws))
    a0 = float(alpha_fn(0.0, x0))
    a1 = float(alpha_fn(path.horizon, states[-1]))
    if a0 <= 0 or a1 <= 0:
        raise DomainError("alpha must stay positive")
    return a1 / a0 * math.exp(-acc)


def girsanov_weights_batch(rate_fn, alpha_fn, x0, finals, events, n_states, horizon=1.0,
                           dalpha_fn=None, grid=4097):
    """Weights for many single-coordinate paths from ``ctmc.simulate_batch``.

    The per-state integrand is tabulated on a fine grid and integrated with
    a cubic-spline antiderivative, so each path costs one lookup per jump.
    """
    ts = np.linspace(0.0, horizon, grid)
    H = np.array([_log_rate_integrand(rate_fn, alpha_fn, dalpha_fn, t, np.arange(n_states), n_states) for t in ts])
    anti = [CubicSpline(ts, H[:, x]).antiderivative() for x in range(n_states)]
    a0 = float(alpha_fn(0.0, int(x0)))
    counts = np.array([len(e[0]) for e in events], dtype=np.int64)
    owner = np.repeat(np.arange(len(events)), counts + 1)
    lo = np.concatenate([np.concatenate([[0.0], e[0]]) for e in events]) if events else np.empty(0)
    hi = np.concatenate([np.concatenate([e[0], [horizon]]) for e in events]) if events else np.empty(0)
    st = np.concatenate([np.concatenate([[int(x0)], e[2]]) for e in events]).astype(int) if events else np.empty(0, int)
    seg = np.zeros(len(st))
    for x in range(n_states):
        m = st == x
        if np.any(m):
            seg[m] = anti[x](hi[m]) - anti[x](lo[m])
    acc = np.bincount(owner, weights=seg, minlength=len(events))
    a1 = np.asarray(alpha_fn(horizon, np.asarray(finals)[:, 0]), dtype=float)
    return a1 / a0 * np.exp(-acc)


def continuous_integrand_check(drift_fn, g2, alpha_fn, x, h=1e-3):
    """1-D diffusion generator L phi = b phi' + g^2/2 phi''.

    Returns (finite-difference value of L a / a - L log a, closed form
    g^2/2 (a'/a)^2); first-order terms cancel in the difference.
    """

    def d1(f, z):
        return (-f(z + 2 * h) + 8 * f(z + h) - 8 * f(z - h) + f(z - 2 * h)) / (12 * h)

    def d2(f, z):
        return (-f(z + 2 * h) + 16 * f(z + h) - 30 * f(z) + 16 * f(z - h) - f(z - 2 * h)) / (12 * h * h)

    b = drift_fn(x)
    la = np.log
    gen_a = b * d1(alpha_fn, x) + 0.5 * g2 * d2(alpha_fn, x)
    loga = lambda z: la(alpha_fn(z))  # noqa: E731
    gen_log = b * d1(loga, x) + 0.5 * g2 * d2(loga, x)
    fd = gen_a / alpha_fn(x) - gen_log
    closed = 0.5 * g2 * (d1(alpha_fn, x) / alpha_fn(x)) ** 2
    return float(fd), float(closed)


def decomposition_residual(spec: ctmc.SequenceRateSpec, q0, t1, steps=128):
    """max_k |S_k(dense evolution) - per-coordinate evolution| for a static spec."""
    K, d = spec.K, spec.d
    dense = ctmc.kron_sum_dense(spec)
    qT = ctmc.integrate_master(lambda t: dense, q0, 0.0, t1, steps, renormalize=False)
    worst = 0.0
    for k in range(d):
        mk = ctmc.marginalize(q0, K, d, k)
        Rk = spec.per_dim[k]
        mT = ctmc.integrate_master(lambda t: Rk, mk, 0.0, t1, steps, renormalize=False)
        worst = max(worst, float(np.max(np.abs(ctmc.marginalize(qT, K, d, k) - mT))))
    return worst
