"""Discrete kernel configuration and clean-data predictors (denoisers).

A denoiser maps a noisy sequence x_t and a time t to per-position
distributions p(x0^(k) | x_t) over the full alphabet (MASK included when
present; a sensible model gives it zero mass). ``table(t)`` returns the
predictions for all K_total^d noisy sequences at once, shape (N, d, K_total).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import categorical as cat
from . import ctmc
from ._caps import dense_cap
from .errors import CapacityError
from .schedule import NoiseSchedule


@dataclass(frozen=True, eq=False)
class DiscreteConfig:
    schedule: NoiseSchedule
    noise: cat.NoiseDistribution
    d: int

    def __post_init__(self):
        if self.N > dense_cap():
            raise CapacityError(f"K_total^d = {self.N} exceeds the dense cap {dense_cap()}")

    @property
    def K(self):
        return self.noise.K

    @property
    def Kt(self):
        return self.noise.size

    @property
    def N(self):
        return self.Kt ** self.d

    @cached_property
    def states(self):
        return ctmc.all_states(self.Kt, self.d)

    @cached_property
    def data_mask(self):
        """Boolean over the N sequences: True when no coordinate is MASK."""
        if not self.noise.has_mask:
            return np.ones(self.N, dtype=bool)
        return np.all(self.states < self.K, axis=1)

    def alpha(self, t):
        return float(self.schedule.alpha(t))

    def Q(self, alpha):
        return cat.interpolation_matrix(alpha, self.noise)

    def cond_table(self, alpha):
        """Dense q(x_t | x0) as an (N, N) matrix [x_t, x0]."""
        Q = self.Q(alpha)
        S = self.states
        out = np.ones((self.N, self.N))
        for k in range(self.d):
            out *= Q[S[:, k][:, None], S[:, k][None, :]]
        return out

    def rate(self, t):
        return ctmc.rate_from_schedule(self.schedule, self.noise, t)

    def prior(self):
        """Per-coordinate law at t=1: Q_1 applied to the uniform data law."""
        u = np.zeros(self.Kt)
        u[: self.K] = 1.0 / self.K
        return self.Q(self.alpha(1.0)) @ u

    def prior_dense(self):
        return ctmc.product_distribution([self.prior()] * self.d)

    def to_json(self):
        return {"schedule": self.schedule.to_json(), "noise": self.noise.to_json(), "d": self.d}


def validate_data(cfg: DiscreteConfig, q_data):
    q = np.asarray(q_data, dtype=float)
    if q.shape != (cfg.N,):
        raise ValueError(f"q_data must be a dense vector of length {cfg.N}")
    if np.any(q < 0) or abs(q.sum() - 1.0) > 1e-12:
        raise ValueError("q_data is not a simplex vector")
    if np.any(q[~cfg.data_mask] > 0):
        raise ValueError("q_data puts mass on sequences containing MASK")
    return q


class Denoiser:
    def table(self, t):  # pragma: no cover - interface
        raise NotImplementedError

    def probs(self, x_t, t, cfg: DiscreteConfig):
        return self.table(t)[ctmc.state_index(x_t, cfg.Kt)]


class OneHotDenoiser(Denoiser):
    """Predicts a fixed clean sequence regardless of input (an oracle model)."""

    def __init__(self, cfg: DiscreteConfig, x0):
        self.cfg = cfg
        tab = np.zeros((cfg.d, cfg.Kt))
        tab[np.arange(cfg.d), list(x0)] = 1.0
        self._tab = np.broadcast_to(tab, (cfg.N, cfg.d, cfg.Kt))

    def table(self, t):
        return self._tab


class BayesDenoiser(Denoiser):
    """Exact per-position posterior marginals q(x0^(k) | x_t) under ``prior``.

    For rows where the posterior is undefined (q_t(x_t) = 0) the prior's
    coordinate marginal is returned.
    """

    def __init__(self, cfg: DiscreteConfig, prior):
        self.cfg = cfg
        self.prior = validate_data(cfg, prior)
        self._cache = {}

    def table(self, t):
        key = float(t)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        cfg = self.cfg
        joint = cfg.cond_table(cfg.alpha(t)) * self.prior[None, :]  # [x_t, x0]
        z = joint.sum(axis=1, keepdims=True)
        fallback = np.broadcast_to(self.prior, joint.shape)
        post = np.where(z > 0, joint / np.where(z > 0, z, 1.0), fallback)
        out = np.zeros((cfg.N, cfg.d, cfg.Kt))
        S = cfg.states
        for k in range(cfg.d):
            for c in range(cfg.Kt):
                out[:, k, c] = post[:, S[:, k] == c].sum(axis=1)
        if len(self._cache) < 4096:
            self._cache[key] = out
        return out


class FunctionDenoiser(Denoiser):
    def __init__(self, fn):
        self.fn = fn

    def table(self, t):
        return np.asarray(self.fn(t), dtype=float)


def _project(table, Qt, S, K):
    out = np.array(table, dtype=float, copy=True)
    Kt = Qt.shape[0]
    data = np.arange(Kt) < K
    for k in range(S.shape[1]):
        ok = (Qt[S[:, k], :] > 0) & data[None, :]
        v = np.where(ok, out[:, k, :], 0.0)
        z = v.sum(axis=1, keepdims=True)
        flat = ok / ok.sum(axis=1, keepdims=True)
        out[:, k, :] = np.where(z > 0, v / np.where(z > 0, z, 1.0), flat)
    return out


def project_table(cfg: DiscreteConfig, table, alpha_t):
    """Restrict predictions to clean symbols compatible with each x_t.

    Compatible means a data symbol c with q(x_t^(k) | c) > 0. Rows with no
    compatible mass fall back to uniform over the compatible set, so every
    downstream ratio and log is taken against a proper distribution.
    """
    return _project(table, cfg.Q(alpha_t), cfg.states, cfg.K)


def step_matrices(cfg: DiscreteConfig, alpha_s, alpha_t):
    """(Q_t, Q_s, Q_{t|s}) for one reverse step."""
    return cfg.Q(alpha_t), cfg.Q(alpha_s), cat.window_matrix(alpha_s, alpha_t, cfg.noise)


def reverse_tables_from(table, mats, S, K):
    Qt, Qs, W = mats
    table = _project(table, Qt, S, K)
    out = np.empty_like(table)
    eye = np.eye(Qt.shape[0])
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(Qt > 0, 1.0 / np.where(Qt > 0, Qt, 1.0), 0.0)
        for k in range(S.shape[1]):
            xt = S[:, k]
            acc = (table[:, k, :] * inv[xt, :]) @ Qs.T  # sum_x0 q(x_s|x0) p(x0)/q(x_t|x0)
            v = W[xt, :] * acc
            z = v.sum(axis=1, keepdims=True)
            out[:, k, :] = np.where(z > 0, v / np.where(z > 0, z, 1.0), eye[xt])
    return out


def reverse_step_tables(cfg: DiscreteConfig, table, alpha_s, alpha_t):
    """Per-position reverse kernels p(x_s^(k) | x_t) for every x_t.

    Sum form: q(x_t|x_s) * sum_x0 q(x_s|x0)/q(x_t|x0) p(x0|x_t), then
    renormalised. Returns (N, d, K_total).
    """
    return reverse_tables_from(table, step_matrices(cfg, alpha_s, alpha_t), cfg.states, cfg.K)


def product_rows(per_pos):
    """(N, d, K) per-position laws -> (N, K^d) joint laws (product over k)."""
    N, d, K = per_pos.shape
    out = per_pos[:, 0, :]
    for k in range(1, d):
        out = (out[:, :, None] * per_pos[:, k, None, :]).reshape(N, -1)
    return out
