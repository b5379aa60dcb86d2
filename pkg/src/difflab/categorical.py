"""Discrete-state, discrete-time interpolation kernels and reverse posteriors.

Matrices follow the destination=row, source=column convention, so
``Q[i, j] = q(x_t = i | x_s = j)`` and columns sum to one. When a MASK symbol
is present it is always the last index.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConditioningError, SingularityError

MAX_ALPHABET = 64
_TINY = 1e-300


@dataclass(frozen=True)
class NoiseDistribution:
    kind: str
    probs: np.ndarray
    K: int  # number of data symbols (MASK excluded)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)
        if self.kind not in ("uniform", "mask", "mixture"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if p.ndim != 1 or len(p) > MAX_ALPHABET:
            raise ValueError(f"noise vector must be 1-D with at most {MAX_ALPHABET} entries")
        if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError("noise distribution is not a simplex vector")
        if len(p) not in (self.K, self.K + 1):
            raise ValueError("alphabet size must be K or K+1")

    @property
    def size(self) -> int:
        return len(self.probs)

    @property
    def has_mask(self) -> bool:
        return self.size == self.K + 1

    @property
    def mask_index(self):
        return self.K if self.has_mask else None

    @classmethod
    def uniform(cls, K, with_mask=False):
        n = K + 1 if with_mask else K
        return cls("uniform", np.full(n, 1.0 / n), K)

    @classmethod
    def mask(cls, K):
        p = np.zeros(K + 1)
        p[K] = 1.0
        return cls("mask", p, K)

    @classmethod
    def mixture(cls, K, w_uniform, w_mask):
        """Time-constant mixture of uniform-over-(K+1) and MASK noise."""
        if w_uniform < 0 or w_mask < 0 or abs(w_uniform + w_mask - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        p = np.full(K + 1, w_uniform / (K + 1))
        p[K] += w_mask
        return cls("mixture", p, K)

    def to_json(self):
        return {"kind": self.kind, "K": self.K, "probs": [float(v) for v in self.probs]}

    @classmethod
    def from_json(cls, obj):
        kind = obj["kind"]
        K = int(obj["K"])
        if kind == "uniform":
            return cls.uniform(K, bool(obj.get("with_mask", False)))
        if kind == "mask":
            return cls.mask(K)
        return cls.mixture(K, float(obj["w_uniform"]), float(obj["w_mask"]))


def _check_simplex(v, name="vector"):
    v = np.asarray(v, dtype=float)
    if np.any(v < -1e-15) or abs(v.sum() - 1.0) > 1e-12:
        raise ValueError(f"{name} is not a valid simplex vector")
    return v


def interpolation_matrix(alpha, noise: NoiseDistribution):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    p = noise.probs
    return alpha * np.eye(len(p)) + (1.0 - alpha) * np.outer(p, np.ones(len(p)))


def mixture_matrix(a_id, a_unif, a_mask, K):
    """alpha^1 I + alpha^u p^u 1^T + alpha^m e_MASK 1^T on K+1 symbols."""
    w = np.array([a_id, a_unif, a_mask], dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
        raise ValueError("mixture coefficients must be nonnegative and sum to 1")
    n = K + 1
    m = np.zeros(n)
    m[K] = 1.0
    ones = np.ones(n)
    return a_id * np.eye(n) + a_unif * np.outer(np.full(n, 1.0 / n), ones) + a_mask * np.outer(m, ones)


def inverse_interpolation(alpha, noise: NoiseDistribution):
    """Closed-form inverse (1/alpha)(I - (1 - alpha) p 1^T)."""
    if alpha <= 0.0:
        raise SingularityError("interpolation matrix is singular at alpha <= 0")
    p = noise.probs
    return (np.eye(len(p)) - (1.0 - alpha) * np.outer(p, np.ones(len(p)))) / alpha


def window_matrix(alpha_s, alpha_t, noise: NoiseDistribution):
    """Q_{t|s} for s < t, i.e. alpha_t <= alpha_s."""
    if alpha_t > alpha_s:
        raise ValueError("window needs alpha_t <= alpha_s (non-increasing schedule)")
    if alpha_t <= 0.0 and alpha_s <= 0.0:
        raise ValueError("window undefined when both alphas vanish")
    return interpolation_matrix(alpha_t / alpha_s, noise)


def forward_marginal(x0, alpha_t, noise: NoiseDistribution):
    p = noise.probs
    if np.ndim(x0) == 0:
        v = np.zeros(len(p))
        v[int(x0)] = 1.0
    else:
        v = _check_simplex(x0, "x0")
    return alpha_t * v + (1.0 - alpha_t) * p


def _onehot(i, n):
    e = np.zeros(n)
    e[i] = 1.0
    return e


def reverse_posterior(x_t, x0, alpha_s, alpha_t, noise: NoiseDistribution):
    """General product form (Q_{t|s}^T e_xt) * (Q_s e_x0) / (e_xt^T Q_t e_x0)."""
    n = noise.size
    W = window_matrix(alpha_s, alpha_t, noise)
    Qs = interpolation_matrix(alpha_s, noise)
    Qt = interpolation_matrix(alpha_t, noise)
    den = Qt[x_t, x0]
    if den <= 0.0:
        raise ConditioningError(f"q(x_t={x_t} | x0={x0}) is zero")
    num = W[x_t, :] * Qs[:, x0]
    out = num / den
    # renormalise away round-off only; the closed form is already normalised
    return out / out.sum() if n else out


def reverse_posterior_interpolation(x_t, x0, alpha_s, alpha_t, noise: NoiseDistribution):
    """Same posterior written with the interpolation structure, no matrices."""
    p = noise.probs
    n = len(p)
    if alpha_t > alpha_s:
        raise ValueError("need alpha_t <= alpha_s")
    a_ts = alpha_t / alpha_s
    left = a_ts * _onehot(x_t, n) + (1.0 - a_ts) * p[x_t]
    right = alpha_s * _onehot(x0, n) + (1.0 - alpha_s) * p
    den = alpha_t * (x_t == x0) + (1.0 - alpha_t) * p[x_t]
    if den <= 0.0:
        raise ConditioningError(f"q(x_t={x_t} | x0={x0}) is zero")
    return left * right / den


def zheng_reparameterized_posterior(x_t, x0, alpha_s, alpha_t, noise: NoiseDistribution):
    """Case split on x_t == x0 versus x_t != x0."""
    p = noise.probs
    n = len(p)
    if alpha_t > alpha_s:
        raise ValueError("need alpha_t <= alpha_s")
    a_ts = alpha_t / alpha_s
    pxt = p[x_t]
    if x_t == x0:
        den = alpha_t + (1.0 - alpha_t) * pxt
        if den <= 0.0:
            raise ConditioningError("conditioning event has probability zero")
        lam = (1.0 - alpha_s) * (1.0 - a_ts) * pxt / den
        return (1.0 - lam) * _onehot(x_t, n) + lam * p
    if pxt <= 0.0 or alpha_t >= 1.0:
        raise ConditioningError(f"q(x_t={x_t} | x0={x0}) is zero")
    mu = (1.0 - alpha_s) / (1.0 - alpha_t)
    return (1.0 - mu) * _onehot(x0, n) + mu * a_ts * _onehot(x_t, n) + mu * (1.0 - a_ts) * p


def reverse_posterior_masked(x_t, x0, alpha_s, alpha_t, size):
    """Masked-diffusion posterior; MASK is index ``size - 1``."""
    mask = size - 1
    if x_t != mask:
        if x_t != x0:
            raise ConditioningError("an unmasked x_t must equal x0")
        return _onehot(x_t, size)
    if alpha_t >= 1.0:
        raise ConditioningError("MASK has probability zero when alpha_t = 1")
    out = (1.0 - alpha_s) * _onehot(mask, size) + (alpha_s - alpha_t) * _onehot(x0, size)
    return out / (1.0 - alpha_t)


def posterior_from_denoiser(x_t, x0_dist, alpha_s, alpha_t, noise: NoiseDistribution, form="sum"):
    """Reverse step driven by a predicted clean-data distribution.

    ``form="matrix"`` plugs the soft vector straight into the product form.
    ``form="sum"`` averages the per-x0 posteriors against ``x0_dist``.

    The two coincide whenever q(x_t | x0) is constant on the support of
    ``x0_dist`` (point masses, or a MASKed x_t with data-only x0_dist). They
    differ otherwise, and only the sum form returns the true marginal
    q(x_s | x_t) when ``x0_dist`` is the exact Bayes posterior, so it is the
    default.
    """
    x0_dist = _check_simplex(x0_dist, "x0_dist")
    W = window_matrix(alpha_s, alpha_t, noise)
    Qs = interpolation_matrix(alpha_s, noise)
    Qt = interpolation_matrix(alpha_t, noise)
    if form == "matrix":
        den = Qt[x_t, :] @ x0_dist
        if den <= 0.0:
            raise ConditioningError("denominator e_xt^T Q_t x0_dist vanishes")
        return W[x_t, :] * (Qs @ x0_dist) / den
    if form == "sum":
        n = noise.size
        acc = np.zeros(n)
        for x0 in range(n):
            w = x0_dist[x0]
            if w == 0.0:
                continue
            qt = Qt[x_t, x0]
            if qt <= 0.0:
                continue
            acc += Qs[:, x0] / qt * w
        out = W[x_t, :] * acc
        z = out.sum()
        if z <= 0.0:
            raise ConditioningError("x0_dist puts no mass on a compatible clean symbol")
        return out / z
    raise ValueError("form must be 'matrix' or 'sum'")


def transition_csv(Q) -> str:
    return "\n".join(",".join(repr(float(v)) for v in row) for row in np.asarray(Q)) + "\n"
