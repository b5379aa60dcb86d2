"""Training objectives: discrete-time ELBO, per-step Gaussian losses, DSM,
denoising score entropy (sequence and token level) and the masked-LM form.

Discrete losses are exact: every expectation over noisy sequences is a sum
over the K_total^d enumerated states. Time integrals use composite Simpson
with 129 nodes (128 panels) on [T_MIN, 1 - T_MIN] unless told otherwise.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from numpy.polynomial.hermite_e import hermegauss

from . import ctmc, gaussian
from .categorical import window_matrix
from ._quad import simpson
from .errors import PositivityError
from .models import (DiscreteConfig, product_rows, project_table, reverse_step_tables, reverse_tables_from,
                     step_matrices, validate_data)
from .schedule import NoiseSchedule, sde_coefficients

T_MIN = 1e-3
NODES = 129
GH_NODES = 80


@dataclass(frozen=True)
class LossReport:
    prior_term: float
    diffusion_term: float
    reconstruction_term: float
    total: float
    estimator_sd: float = 0.0

    @classmethod
    def build(cls, prior, diff, rec, sd=0.0):
        return cls(float(prior), float(diff), float(rec), float(prior + diff + rec), float(sd))

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


# ------------------------------------------------------------ helpers

def _kl_rows(p, q):
    """Row-wise KL(p || q) with 0 log 0 = 0 and inf where q misses p's mass."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(np.where(p > 0, p, 1.0)) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def _cond_weights(cfg: DiscreteConfig, x0, alpha):
    """Dense q(x_t | x0) over all N noisy sequences (product over positions)."""
    Q = cfg.Q(alpha)
    S = cfg.states
    w = np.ones(cfg.N)
    for k in range(cfg.d):
        w = w * Q[S[:, k], x0[k]]
    return w


def _grid_alphas(schedule, T):
    """Alphas on t_i = i/T with the data level alpha_0 = 1 exactly."""
    a = np.asarray(schedule.alpha(np.arange(T + 1) / T), dtype=float)
    a[0] = 1.0
    return a


def _as_seq(x0, d):
    x0 = tuple(int(v) for v in np.atleast_1d(x0))
    if len(x0) != d:
        raise ValueError(f"x0 must have length {d}")
    return x0


# ------------------------------------------------------- ELBO (discrete)

def discrete_time_elbo(x0, model, cfg=None, T=8, space="discrete", schedule=None, decoder=True):
    """L_T + L_diff + L_0 for one data point.

    Discrete space: ``model`` is a denoiser and ``cfg`` a DiscreteConfig; all
    KLs are enumerated. The terminal law p_T is the uniform data law pushed
    through Q_1 per position.

    Continuous space: ``model(x_t, t)`` predicts clean data coordinate-wise and
    ``x0`` is a point-mass data value; Gaussian KLs are closed-form and the
    expectation over x_t uses Gauss-Hermite quadrature, which is exact for
    affine models.
    """
    if int(T) != T or T < 1:
        raise ValueError("T must be a positive integer")
    T = int(T)
    if space == "continuous":
        return _gaussian_elbo(np.asarray(x0, dtype=float), model, schedule, T)
    if space != "discrete":
        raise ValueError("space must be 'discrete' or 'continuous'")
    x0 = _as_seq(x0, cfg.d)
    alphas = _grid_alphas(cfg.schedule, T)
    prior = cfg.prior()
    QT = cfg.Q(alphas[T])
    L_T = 0.0
    for k in range(cfg.d):
        L_T += float(_kl_rows(QT[:, x0[k]][None, :], prior[None, :])[0])
    L_diff = 0.0
    S = cfg.states
    for i in range(2, T + 1):
        L_diff += _diffusion_step(cfg, model, x0, alphas[i - 1], alphas[i], i / T, S)
    # reconstruction: -E log p(x0 | x_1)
    a1 = alphas[1]
    w = _cond_weights(cfg, x0, a1)
    rev = reverse_step_tables(cfg, model.table(1.0 / T), 1.0, a1)
    keep = w > 0
    with np.errstate(divide="ignore"):
        logp = np.zeros(cfg.N)
        for k in range(cfg.d):
            logp += np.log(rev[:, k, x0[k]])
    L_0 = float(-(w[keep] * logp[keep]).sum())
    return LossReport.build(L_T, L_diff, L_0)


def _diffusion_step(cfg, model, x0, a_s, a_t, t, S):
    w = _cond_weights(cfg, x0, a_t)
    keep = w > 0
    rev = reverse_step_tables(cfg, model.table(t), a_s, a_t)[keep]
    Qs = cfg.Q(a_s)
    W = window_matrix(a_s, a_t, cfg.noise)
    total = np.zeros(int(keep.sum()))
    for k in range(cfg.d):
        post = W[S[keep, k], :] * Qs[:, x0[k]][None, :]
        post = post / post.sum(axis=1, keepdims=True)
        total += np.maximum(_kl_rows(post, rev[:, k, :]), 0.0)  # KL >= 0; drop rounding
    return float(np.dot(w[keep], total))


def diffusion_terms(x0, model, cfg: DiscreteConfig, T):
    """Per-step diffusion KLs for steps 2..T (useful for convergence tables)."""
    x0 = _as_seq(x0, cfg.d)
    alphas = _grid_alphas(cfg.schedule, T)
    return np.array([_diffusion_step(cfg, model, x0, alphas[i - 1], alphas[i], i / T, cfg.states)
                     for i in range(2, T + 1)])


# ----------------------------------------------------- ELBO (Gaussian)

def _gh():
    z, w = hermegauss(GH_NODES)
    return z, w / math.sqrt(2.0 * math.pi)


def _gaussian_elbo(x0, model, schedule: NoiseSchedule, T):
    if schedule is None:
        raise ValueError("continuous ELBO needs a schedule")
    z, wz = _gh()
    aT = float(schedule.alpha(1.0))
    s2T = 1.0 - aT * aT
    L_T = float(np.sum(0.5 * (s2T + aT * aT * x0 ** 2 - 1.0 - math.log(s2T))))
    L_diff = sum(_gaussian_step_kl(x0, model, schedule, (i - 1) / T, i / T, z, wz) for i in range(2, T + 1))
    a1 = float(schedule.alpha(1.0 / T))
    s21 = 1.0 - a1 * a1
    v = s21 / (a1 * a1)
    xt = a1 * x0[None, ...] + math.sqrt(s21) * z.reshape((-1,) + (1,) * x0.ndim)
    xh = np.asarray(model(xt, 1.0 / T), dtype=float)
    nll = 0.5 * math.log(2 * math.pi * v) + 0.5 * (x0[None, ...] - xh) ** 2 / v
    L_0 = float(np.sum(np.tensordot(wz, nll, axes=(0, 0))))
    return LossReport.build(L_T, L_diff, L_0)


def _gaussian_step_kl(x0, model, schedule, s, t, z, wz):
    k = gaussian.reverse_posterior(gaussian.GaussianForward(schedule, max(1, x0.size)), s, t)
    a = float(schedule.alpha(t))
    sig = math.sqrt(1.0 - a * a)
    xt = a * x0[None, ...] + sig * z.reshape((-1,) + (1,) * x0.ndim)
    xh = np.asarray(model(xt, t), dtype=float)
    sq = (k.coeff_x0 * (x0[None, ...] - xh)) ** 2 / (2.0 * k.std ** 2)
    return float(np.sum(np.tensordot(wz, sq, axes=(0, 0))))


def gaussian_diffusion_term(x0, model, schedule, T, t_lo=0.0):
    """Sum of per-step KLs over steps whose left end is at least ``t_lo``."""
    x0 = np.asarray(x0, dtype=float)
    z, wz = _gh()
    total = 0.0
    for i in range(2, T + 1):
        s = (i - 1) / T
        if s < t_lo - 1e-15:
            continue
        total += _gaussian_step_kl(x0, model, schedule, s, i / T, z, wz)
    return total


def gaussian_diffusion_limit(x0, model, schedule, t_lo=0.0, nodes=2049):
    """Continuous-time limit -1/2 int SNR'(t) E||x0 - x0_hat(x_t, t)||^2 dt."""
    x0 = np.asarray(x0, dtype=float)
    z, wz = _gh()
    ts, ws = simpson(t_lo, 1.0, nodes)
    acc = 0.0
    for t, w in zip(ts, ws):
        a = float(schedule.alpha(t))
        da = float(schedule.dalpha(t))
        s2 = 1.0 - a * a
        dsnr = 2.0 * a * da / s2 ** 2  # d/dt (a^2 / (1 - a^2))
        xt = a * x0[None, ...] + math.sqrt(s2) * z.reshape((-1,) + (1,) * x0.ndim)
        err = np.sum(np.tensordot(wz, (x0[None, ...] - np.asarray(model(xt, t), float)) ** 2, axes=(0, 0)))
        acc += w * (-0.5 * dsnr * err)
    return float(acc)


def gaussian_step_weight(kind, t_index, T, schedule: NoiseSchedule):
    """Weight w such that the per-step KL equals w * ||target - prediction||^2."""
    if int(t_index) != t_index or not 2 <= t_index <= T:
        raise ValueError(f"t_index must be an interior step in 2..{T}; got {t_index}")
    s, t = (t_index - 1) / T, t_index / T
    a_s, a_t = float(schedule.alpha(s)), float(schedule.alpha(t))
    s2_s, s2_t = 1.0 - a_s ** 2, 1.0 - a_t ** 2
    base = 0.5 * (a_s ** 2 / s2_s - a_t ** 2 / s2_t)
    if kind == "clean":
        return base
    if kind == "noise":
        return base * s2_t / a_t ** 2
    if kind == "score":
        return base * s2_t ** 2 / a_t ** 2
    if kind == "velocity":
        return base * s2_t / (a_t ** 2 + s2_t) ** 2
    raise ValueError(f"unknown parameterisation {kind!r}")


def gaussian_step_loss(kind, x0, x_t, t_index, T, model_output, schedule: NoiseSchedule):
    """Weighted squared error of a ``kind`` prediction at an interior step."""
    w = gaussian_step_weight(kind, t_index, T, schedule)
    t = t_index / T
    target = gaussian.convert("clean", np.asarray(x0, float), x_t, t, kind, schedule)
    return float(w * np.sum((target - np.asarray(model_output, float)) ** 2))


# ------------------------------------------------------------------ DSM

def dsm_loss(data, schedule, score_model, n_mc, rng_seed, t_range=(T_MIN, 1.0 - T_MIN)):
    """Monte Carlo DSM: 1/2 int g^2 E||grad log q(x_t|x0) - s(x_t, t)||^2 dt.

    ``score_model(t, x_t, x0)`` receives the clean sample too, so oracle
    models that condition on it can be expressed; ordinary models ignore it.
    Returns (estimate, standard error).
    """
    if int(n_mc) != n_mc or n_mc < 1:
        raise ValueError("n_mc must be a positive integer")
    n = int(n_mc)
    rng = np.random.Generator(np.random.Philox(key=np.array([int(rng_seed), 1], dtype=np.uint64)))
    a_lo, b_hi = t_range
    t = rng.uniform(a_lo, b_hi, n)
    x0 = data.sample(n, rng)
    eps = rng.standard_normal(n)
    a = np.asarray(schedule.alpha(t), float)
    sig = np.sqrt(1.0 - a * a)
    xt = a * x0 + sig * eps
    _, g2 = sde_coefficients(schedule, t)
    target = -eps / sig
    pred = np.asarray(score_model(t, xt, x0), float)
    vals = (b_hi - a_lo) * 0.5 * g2 * (target - pred) ** 2
    sd = float(vals.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return float(vals.mean()), sd


def dsm_variance_gap(data, schedule, t_range=(T_MIN, 1.0 - T_MIN), nodes=NODES):
    """DSM value of the exact marginal score, by quadrature.

    Equals 1/2 int g^2 (1/sigma^2 - E_{q_t}[score^2]) dt, because the
    conditional score has second moment 1/sigma^2 per dimension.
    """
    from .sde import pushforward_mixture

    z, wz = _gh()
    ts, ws = simpson(t_range[0], t_range[1], nodes)
    acc = 0.0
    for t, w in zip(ts, ws):
        mix = pushforward_mixture(data, schedule, t)
        wts, ms, vs = mix.arrays
        s2 = float(schedule.sigma2(t))
        _, g2 = sde_coefficients(schedule, t)
        e_s2 = 0.0
        for wj, mj, vj in zip(wts, ms, vs):
            x = mj + math.sqrt(vj) * z
            e_s2 += wj * float(np.dot(wz, mix.score(x) ** 2))
        acc += w * 0.5 * g2 * (1.0 / s2 - e_s2)
    return float(acc)


# ------------------------------------------------------------------ DSE

def _dse_parts(x0, cfg, model, t, form):
    """Return (model_rates, target_rates, weights) on the support of q(.|x0).

    Arrays have one row per noisy sequence with positive weight; columns
    enumerate destinations (sequence form: all N; token form: (k, y) pairs).
    """
    a = cfg.alpha(t)
    R = cfg.rate(t)
    Q = cfg.Q(a)
    w = _cond_weights(cfg, x0, a)
    keep = np.nonzero(w > 0)[0]
    tab = project_table(cfg, model.table(t), a)[keep]
    S = cfg.states[keep]
    if form == "sequence":
        C = cfg.cond_table(a)
        Rd = ctmc.kron_sum_dense(ctmc.SequenceRateSpec.identical(R, cfg.d))[keep]
        np.put_along_axis(Rd, keep[:, None], 0.0, axis=1)  # drop y = x
        P = product_rows(tab)
        Cx = C[keep]
        inv = np.where(Cx > 0, 1.0 / np.where(Cx > 0, Cx, 1.0), 0.0)
        mod = Rd * ((P * inv) @ C.T)
        idx0 = ctmc.state_index(x0, cfg.Kt)
        tgt = Rd * (C[:, idx0][None, :] / Cx[:, idx0][:, None])
        return mod, tgt, w[keep]
    if form != "token":
        raise ValueError("form must be 'token' or 'sequence'")
    invQ = np.where(Q > 0, 1.0 / np.where(Q > 0, Q, 1.0), 0.0)
    mods, tgts = [], []
    for k in range(cfg.d):
        xk = S[:, k]
        Rk = R[xk, :].copy()  # rate from y into x^k
        Rk[np.arange(len(xk)), xk] = 0.0
        M = (tab[:, k, :] * invQ[xk, :]) @ Q.T
        mods.append(Rk * M)
        tgts.append(Rk * (Q[:, x0[k]][None, :] / Q[xk, x0[k]][:, None]))
    return np.concatenate(mods, axis=1), np.concatenate(tgts, axis=1), w[keep]


def _entropy_terms(mod, tgt):
    bad = (tgt > 0) & ~(mod > 0)
    if np.any(bad):
        raise PositivityError("model reverse rate vanishes where the target rate is positive")
    with np.errstate(divide="ignore", invalid="ignore"):
        logm = np.log(np.where(mod > 0, mod, 1.0))
        logt = np.log(np.where(tgt > 0, tgt, 1.0))
    dse = mod - tgt * logm
    const = tgt - tgt * logt
    return dse.sum(axis=1), const.sum(axis=1), (dse + tgt * logt - tgt).sum(axis=1)


def dse_integrand(x0, cfg: DiscreteConfig, model, t, form="token"):
    """(dse, constant, bregman) integrands at time t, each an expectation over x_t."""
    x0 = _as_seq(x0, cfg.d)
    mod, tgt, w = _dse_parts(x0, cfg, model, t, form)
    d, c, b = _entropy_terms(mod, tgt)
    return float(w @ d), float(w @ c), float(w @ b)


def _integrate(fn, t_range, nodes):
    ts, ws = simpson(t_range[0], t_range[1], nodes)
    vals = np.array([fn(t) for t in ts])
    return ws @ vals


def dse_loss(x0, cfg: DiscreteConfig, model, exact=True, form="token",
             t_range=(T_MIN, 1.0 - T_MIN), nodes=NODES, subtract_constant=False):
    """Denoising score entropy of one clean sequence.

    sum over y != x_t of [R_theta(y, x_t) - R(x_t, y) q(y|x0)/q(x_t|x0) log R_theta(y, x_t)]
    averaged exactly over x_t and integrated in t. The model rate is
    R_theta(y, x) = R(x, y) sum_c q(y_k|c)/q(x_k|c) p(c | x) for Hamming-1 y.
    With ``subtract_constant`` the theta-free part is removed, which leaves
    the nonnegative Bregman residual.
    """
    if not exact:
        raise NotImplementedError("only exact enumeration is provided for DSE")
    x0 = _as_seq(x0, cfg.d)
    col = 2 if subtract_constant else 0
    return float(_integrate(lambda t: dse_integrand(x0, cfg, model, t, form)[col], t_range, nodes))


def dse_constant(x0, cfg: DiscreteConfig, t_range=(T_MIN, 1.0 - T_MIN), nodes=NODES):
    """Theta-free part: int E sum (target - target log target) dt, by enumeration."""
    x0 = _as_seq(x0, cfg.d)

    class _Any:
        def table(self, t):
            return np.full((cfg.N, cfg.d, cfg.Kt), 1.0 / cfg.Kt)

    return float(_integrate(lambda t: dse_integrand(x0, cfg, _Any(), t, "token")[1], t_range, nodes))


def dse_marginal_constant(q_data, cfg: DiscreteConfig, t_range=(T_MIN, 1.0 - T_MIN), nodes=NODES):
    """int E_{q_t} sum_y (R_hat - R_hat log R_hat) dt with the true marginal reverse rates.

    Subtracting this from the data-averaged DSE gives the path-space KL
    form of the objective (generator ELBO), not the per-point residual.
    """
    q = validate_data(cfg, q_data)

    def at(t):
        qt = cfg.cond_table(cfg.alpha(t)) @ q
        Rd = ctmc.kron_sum_dense(ctmc.SequenceRateSpec.identical(cfg.rate(t), cfg.d))
        pos = qt > 0
        rh = np.zeros_like(Rd)
        # R_hat(y, x) = R(x, y) q(y) / q(x); stored as [x, y]
        rh[pos, :] = Rd[pos, :] * qt[None, :] / qt[pos, None]
        np.fill_diagonal(rh, 0.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(rh > 0, rh - rh * np.log(np.where(rh > 0, rh, 1.0)), 0.0)
        return float(qt @ terms.sum(axis=1))

    return float(_integrate(at, t_range, nodes))


# ------------------------------------------------------------------ MLM

def mlm_loss(x0, cfg: DiscreteConfig, model, exact=True, t_range=(T_MIN, 1.0 - T_MIN), nodes=NODES):
    """Weighted masked-token cross-entropy with exact mask-pattern averaging.

    Weight -alpha'_t / (1 - alpha_t) is nonnegative because alpha decreases.
    """
    if cfg.noise.kind != "mask":
        raise ValueError("mlm_loss needs the masking kernel")
    if not exact:
        raise NotImplementedError("only exact enumeration is provided for MLM")
    x0 = _as_seq(x0, cfg.d)
    M = cfg.noise.mask_index
    patterns = np.array(list(itertools.product((0, 1), repeat=cfg.d)), dtype=bool)
    seqs = np.where(patterns, M, np.array(x0)[None, :])
    idx = np.array([ctmc.state_index(s, cfg.Kt) for s in seqs])
    nmask = patterns.sum(axis=1)

    def at(t):
        a = cfg.alpha(t)
        w = -float(cfg.schedule.dalpha(t)) / (1.0 - a)
        if w == 0.0:
            return 0.0
        prob = (1.0 - a) ** nmask * a ** (cfg.d - nmask)
        tab = project_table(cfg, model.table(t), a)[idx]
        with np.errstate(divide="ignore"):
            logp = np.log(tab[:, np.arange(cfg.d), list(x0)])
        ce = -np.where(patterns, logp, 0.0).sum(axis=1)
        ce = np.where(prob > 0, ce, 0.0)
        return w * float(prob @ ce)

    return float(_integrate(at, t_range, nodes))


# ------------------------------------------------------ convergence table

def discrete_to_continuous_convergence(x0, model, T_list, limit, *, cfg=None, schedule=None, t_lo=0.0):
    """Rows (T, diffusion term, |gap|, gap ratio to the previous row).

    Discrete chains use the enumerated L_diff; Gaussian point-mass data uses
    the closed-form step KLs restricted to steps starting at ``t_lo`` or later.
    """
    rows = []
    prev = None
    for T in T_list:
        if cfg is not None:
            val = discrete_time_elbo(x0, model, cfg, T).diffusion_term
        else:
            val = gaussian_diffusion_term(x0, model, schedule, T, t_lo)
        gap = abs(val - limit)
        rows.append((int(T), float(val), float(gap), float(gap / prev) if prev else float("nan")))
        prev = gap
    return rows


def convergence_csv(rows):
    out = ["T,diffusion_term,gap,ratio"]
    out += [f"{T},{v!r},{g!r},{r!r}" for T, v, g, r in rows]
    return "\n".join(out) + "\n"


def _coordinate_joint(cfg: DiscreteConfig, q, alpha):
    """J[x, k, c] = sum over x0 with x0^(k)=c of q(x0) q(x | x0)."""
    C = cfg.cond_table(alpha) * q[None, :]
    S = cfg.states
    J = np.empty((cfg.N, cfg.d, cfg.Kt))
    for k in range(cfg.d):
        J[:, k, :] = C @ np.eye(cfg.Kt)[S[:, k]]
    return J


class ExpectedElbo:
    """Data-averaged discrete ELBO, E_{q_data}[L_T + L_diff + L_0].

    Everything that depends only on the data and the grid (true posteriors,
    coordinate joints, step matrices) is built once, so evaluating a new
    model costs one reverse table per step. ``evaluate`` also pushes the
    terminal law through the same reverse tables and returns p_0.
    """

    def __init__(self, q_data, cfg: DiscreteConfig, T):
        self.q = validate_data(cfg, q_data)
        self.cfg = cfg
        self.T = T = int(T)
        alphas = _grid_alphas(cfg.schedule, T)
        S = cfg.states
        prior = cfg.prior()
        klT = _kl_rows(cfg.Q(alphas[T]).T, prior[None, :])
        self.L_T = float(sum(np.eye(cfg.Kt)[S[:, k]].T @ self.q @ klT for k in range(cfg.d)))
        self.mats, self.post, self.J = [None] * (T + 1), [None] * (T + 1), [None] * (T + 1)
        for i in range(1, T + 1):
            a_s, a_t = alphas[i - 1], alphas[i]
            self.mats[i] = step_matrices(cfg, a_s, a_t)
            _, Qs, W = self.mats[i]
            post = W[None, :, :] * Qs.T[:, None, :]  # [c, x_t symbol, x_s]
            z = post.sum(axis=2, keepdims=True)
            self.post[i] = np.where(z > 0, post / np.where(z > 0, z, 1.0), 0.0)
            self.J[i] = _coordinate_joint(cfg, self.q, a_t)

    def evaluate(self, model, marginal=False):
        cfg, S, T = self.cfg, self.cfg.states, self.T
        L_diff = 0.0
        L_0 = 0.0
        p = cfg.prior_dense() if marginal else None
        for i in range(T, 0, -1):
            rev = reverse_tables_from(model.table(i / T), self.mats[i], S, cfg.K)
            J = self.J[i]
            if i >= 2:
                for k in range(cfg.d):
                    P = self.post[i][:, S[:, k], :]  # [c, x, x_s]
                    kl = np.maximum(_kl_rows(P, rev[None, :, k, :]), 0.0).T  # [x, c]
                    jk = J[:, k, :]
                    L_diff += float(np.sum(np.where(jk > 0, jk * np.where(jk > 0, kl, 0.0), 0.0)))
            else:
                with np.errstate(divide="ignore"):
                    lg = np.log(rev)
                L_0 = -float(np.sum(np.where(J > 0, J * np.where(J > 0, lg, 0.0), 0.0)))
            if marginal:
                p = product_rows(rev).T @ p
        rep = LossReport.build(self.L_T, L_diff, L_0)
        return (rep, p) if marginal else rep


def expected_elbo(q_data, model, cfg: DiscreteConfig, T):
    """Data-averaged ELBO; equals the q_data-weighted mean of discrete_time_elbo."""
    return ExpectedElbo(q_data, cfg, T).evaluate(model)
