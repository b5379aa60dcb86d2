"""Noise schedules (alpha_t, sigma_t) on t in [0, 1].

Data sits at t=0 and noise at t=1. All families are variance preserving,
sigma_t^2 = 1 - alpha_t^2, and alpha is clamped to [clip_eps, 1 - clip_eps]
inside evaluation so that every downstream log or ratio stays finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import DomainError, NumericError

FAMILIES = ("linear-alpha", "cosine", "log-linear-snr")

_DEFAULT_PARAMS = {
    "linear-alpha": {"t0": 0.0, "t1": 1.0},
    "cosine": {"s": 0.008},
    "log-linear-snr": {"logsnr_max": 12.0, "logsnr_min": -24.0},
}


def _sigmoid(x):
    # expit keeps full relative precision in the far negative tail
    return expit(x)


@dataclass(frozen=True)
class NoiseSchedule:
    """Immutable schedule description.

    ``linear-alpha`` is alpha = 1 - (t - t0)/(t1 - t0) on [t0, t1] and flat
    outside, which gives flat segments when t0 > 0 or t1 < 1.
    ``cosine`` is alpha = cos(pi/2 (t+s)/(1+s)) / cos(pi/2 s/(1+s)).
    ``log-linear-snr`` interpolates log(alpha^2/sigma^2) linearly in t.
    """

    family: str = "linear-alpha"
    params: dict = field(default_factory=dict)
    clip_eps: float = 1e-5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown schedule family {self.family!r}; expected one of {FAMILIES}")
        merged = dict(_DEFAULT_PARAMS[self.family])
        unknown = set(self.params) - set(merged)
        if unknown:
            raise ValueError(f"unknown parameters for {self.family}: {sorted(unknown)}")
        merged.update({k: float(v) for k, v in self.params.items()})
        object.__setattr__(self, "params", merged)
        if not 0.0 < self.clip_eps < 0.5:
            raise ValueError("clip_eps must lie in (0, 0.5)")
        if self.family == "linear-alpha":
            t0, t1 = merged["t0"], merged["t1"]
            if not 0.0 <= t0 < t1 <= 1.0:
                raise ValueError("linear-alpha needs 0 <= t0 < t1 <= 1")
        if self.family == "cosine" and merged["s"] < 0:
            raise ValueError("cosine offset s must be nonnegative")
        if self.family == "log-linear-snr" and not merged["logsnr_max"] > merged["logsnr_min"]:
            raise ValueError("log-linear-snr needs logsnr_max > logsnr_min")
        a0 = float(self.alpha(0.0))
        a1 = float(self.alpha(1.0))
        if a0 < 1.0 - self.clip_eps - 1e-15 or a1 > self.clip_eps + 1e-15:
            raise ValueError(
                f"schedule does not reach the boundary conditions: alpha(0)={a0}, alpha(1)={a1}"
            )

    # raw (unclamped) family formulas -----------------------------------
    def _raw(self, t):
        p = self.params
        if self.family == "linear-alpha":
            u = np.clip((t - p["t0"]) / (p["t1"] - p["t0"]), 0.0, 1.0)
            return 1.0 - u
        if self.family == "cosine":
            s = p["s"]
            return np.cos(0.5 * np.pi * (t + s) / (1 + s)) / math.cos(0.5 * math.pi * s / (1 + s))
        lam = p["logsnr_max"] + (p["logsnr_min"] - p["logsnr_max"]) * t
        return np.sqrt(_sigmoid(lam))

    def _raw_derivative(self, t):
        p = self.params
        if self.family == "linear-alpha":
            t0, t1 = p["t0"], p["t1"]
            inside = (t >= t0) & (t <= t1)
            return np.where(inside, -1.0 / (t1 - t0), 0.0)
        if self.family == "cosine":
            s = p["s"]
            c = 0.5 * np.pi / (1 + s)
            return -c * np.sin(c * (t + s)) / math.cos(0.5 * math.pi * s / (1 + s))
        slope = p["logsnr_min"] - p["logsnr_max"]
        lam = p["logsnr_max"] + slope * t
        a2 = _sigmoid(lam)
        # d/dt sqrt(sig(lam)) = 0.5 * sqrt(sig) * (1 - sig) * slope
        return 0.5 * np.sqrt(a2) * (1.0 - a2) * slope

    # public vectorised accessors ----------------------------------------
    def alpha(self, t):
        t = np.asarray(t, dtype=float)
        return np.clip(self._raw(t), self.clip_eps, 1.0 - self.clip_eps)

    def dalpha(self, t):
        """Analytic d(alpha)/dt of the family formula (clamping is ignored)."""
        t = np.asarray(t, dtype=float)
        d = self._raw_derivative(t)
        # the analytic derivative never increases alpha
        return np.minimum(d, 0.0)

    def sigma2(self, t):
        a = self.alpha(t)
        return 1.0 - a * a

    def sigma(self, t):
        return np.sqrt(self.sigma2(t))

    def dsigma2(self, t):
        return -2.0 * self.alpha(t) * self.dalpha(t)

    # integrated jump clock ----------------------------------------------
    def _G(self, a):
        """Antiderivative of 1/clamp(a) in a, continuous across the clamps."""
        e = self.clip_eps
        a = np.asarray(a, dtype=float)
        low = a / e
        mid = 1.0 + np.log(np.clip(a, e, 1.0 - e) / e)
        top = 1.0 + math.log((1.0 - e) / e) + (a - (1.0 - e)) / (1.0 - e)
        return np.where(a < e, low, np.where(a > 1.0 - e, top, mid))

    def _G_inv(self, g):
        e = self.clip_eps
        g = np.asarray(g, dtype=float)
        g_hi = 1.0 + math.log((1.0 - e) / e)
        low = g * e
        mid = e * np.exp(np.clip(g, 1.0, g_hi) - 1.0)
        top = (1.0 - e) + (g - g_hi) * (1.0 - e)
        return np.where(g < 1.0, low, np.where(g > g_hi, top, mid))

    def _raw_inverse(self, a):
        p = self.params
        a = np.asarray(a, dtype=float)
        if self.family == "linear-alpha":
            t = p["t0"] + (1.0 - a) * (p["t1"] - p["t0"])
        elif self.family == "cosine":
            s = p["s"]
            c = 0.5 * math.pi / (1 + s)
            t = np.arccos(np.clip(a * math.cos(c * s), -1.0, 1.0)) / c - s
        else:
            a2 = np.clip(a * a, 1e-300, 1.0 - 1e-16)
            lam = np.log(a2) - np.log1p(-a2)
            t = (lam - p["logsnr_max"]) / (p["logsnr_min"] - p["logsnr_max"])
        return np.clip(t, 0.0, 1.0)

    def jump_clock(self, t):
        """Integral over [0, t] of -alpha'(u)/alpha(u) du.

        Uses the analytic derivative and the clamped alpha, matching the
        coefficient of the interpolation rate matrix exactly.
        """
        t = np.asarray(t, dtype=float)
        return self._G(self._raw(0.0)) - self._G(self._raw(t))

    def inverse_jump_clock(self, u):
        u = np.asarray(u, dtype=float)
        a = self._G_inv(self._G(self._raw(0.0)) - u)
        return self._raw_inverse(a)

    def to_json(self):
        return {"family": self.family, "params": dict(self.params), "clip_eps": self.clip_eps}

    @classmethod
    def from_json(cls, obj):
        extra = set(obj) - {"family", "params", "clip_eps"}
        if extra:
            raise ValueError(f"unknown schedule keys: {sorted(extra)}")
        return cls(obj.get("family", "linear-alpha"), dict(obj.get("params", {})),
                   float(obj.get("clip_eps", 1e-5)))


def _check_time(t):
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise DomainError(f"time {t!r} outside [0, 1]")
    return arr


def eval(schedule: NoiseSchedule, t):  # noqa: A001 - mirrors the operation name
    """Return ``(alpha, sigma, dalpha)`` at time ``t``."""
    t = _check_time(t)
    a = schedule.alpha(t)
    out = (a, np.sqrt(1.0 - a * a), schedule.dalpha(t))
    if t.ndim == 0:
        return tuple(float(v) for v in out)
    return out


def per_step_coefficients(schedule: NoiseSchedule, T: int):
    """Per-step (alpha_step, sigma_step) pairs on the grid t_i = i/T."""
    if int(T) != T or T < 1:
        raise ValueError("T must be a positive integer")
    T = int(T)
    grid = np.arange(T + 1) / T
    a = schedule.alpha(grid)
    s2 = 1.0 - a * a
    astep = a[1:] / a[:-1]
    s2step = s2[1:] - astep ** 2 * s2[:-1]
    s2step = np.maximum(s2step, 0.0)
    return [(float(x), float(math.sqrt(y))) for x, y in zip(astep, s2step)]


def cumulative_from_steps(steps, alpha0: float, sigma2_0: float):
    """Rebuild (alpha_i, sigma_i^2) on the grid from per-step pairs."""
    alphas = [alpha0]
    sig2 = [sigma2_0]
    for a_step, s_step in steps:
        alphas.append(alphas[-1] * a_step)
        sig2.append(a_step ** 2 * sig2[-1] + s_step ** 2)
    return np.array(alphas), np.array(sig2)


def sde_coefficients(schedule: NoiseSchedule, t):
    """Return ``(drift_factor, g_squared)`` with f_t(x) = drift_factor * x.

    drift_factor = d log(alpha)/dt and g^2 = alpha^2 d/dt(sigma^2/alpha^2),
    which expands to dsigma2 - 2 (alpha'/alpha) sigma^2.
    """
    t = _check_time(t)
    a = schedule.alpha(t)
    da = schedule.dalpha(t)
    s2 = 1.0 - a * a
    drift = da / a
    g2 = schedule.dsigma2(t) - 2.0 * drift * s2
    if not (np.all(np.isfinite(drift)) and np.all(np.isfinite(g2))):
        raise NumericError(f"non-finite SDE coefficient at t={t!r}")
    if t.ndim == 0:
        return float(drift), float(g2)
    return drift, g2
