"""Gaussian forward marginals, exact reverse posteriors and the four
parameterisations (clean data, noise, score, velocity)."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, SingularityError
from .schedule import NoiseSchedule

T_MIN = 1e-4
PARAM_KINDS = ("clean", "noise", "score", "velocity")


@dataclass(frozen=True)
class GaussianForward:
    schedule: NoiseSchedule
    dim: int = 1

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ValueError("dim must be a positive integer")


@dataclass(frozen=True)
class ReverseGaussianKernel:
    coeff_xt: float
    coeff_x0: float
    std: float
    from_time: float
    to_time: float

    def mean(self, x_t, x0):
        return self.coeff_xt * np.asarray(x_t, float) + self.coeff_x0 * np.asarray(x0, float)


def _ab(schedule, t):
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"time {t} outside [0, 1]")
    a = float(schedule.alpha(t))
    return a, 1.0 - a * a


def forward_marginal(fwd: GaussianForward, x0, t):
    a, s2 = _ab(fwd.schedule, t)
    return a * np.asarray(x0, dtype=float), s2


def reverse_posterior(fwd: GaussianForward, s, t) -> ReverseGaussianKernel:
    if not s < t:
        raise ValueError(f"reverse posterior needs s < t (got s={s}, t={t})")
    a_s, v_s = _ab(fwd.schedule, s)
    a_t, v_t = _ab(fwd.schedule, t)
    a_ts = a_t / a_s
    v_ts = max(v_t - a_ts * a_ts * v_s, 0.0)
    return ReverseGaussianKernel(
        coeff_xt=a_ts * v_s / v_t,
        coeff_x0=a_s * v_ts / v_t,
        std=math.sqrt(v_ts * v_s / v_t),
        from_time=t,
        to_time=s,
    )


def convert(kind_in, value, x_t, t, kind_out, schedule: NoiseSchedule):
    """Map a prediction of one kind to another at (x_t, t).

    x0 = (x_t - sigma*eps)/alpha = (x_t + sigma^2 * score)/alpha
       = (alpha*x_t - sigma*v)/(alpha^2 + sigma^2)
    """
    for k in (kind_in, kind_out):
        if k not in PARAM_KINDS:
            raise ValueError(f"unknown parameterisation {k!r}")
    value = np.asarray(value, dtype=float)
    if kind_in == kind_out:
        return value.copy()
    if t < T_MIN and (kind_in in ("noise", "score") or kind_out != "clean"):
        raise SingularityError(f"sigma_t vanishes at t={t}; need t >= {T_MIN}")
    a, s2 = _ab(schedule, t)
    sig = math.sqrt(s2)
    x_t = np.asarray(x_t, dtype=float)
    if kind_in == "clean":
        x0 = value
    elif kind_in == "noise":
        x0 = (x_t - sig * value) / a
    elif kind_in == "score":
        x0 = (x_t + s2 * value) / a
    else:
        x0 = (a * x_t - sig * value) / (a * a + s2)
    if kind_out == "clean":
        return x0
    eps = (x_t - a * x0) / sig
    if kind_out == "noise":
        return eps
    if kind_out == "score":
        return -eps / sig
    return a * eps - sig * x0


def reverse_step_from_denoiser(x_t, x0_hat, s, t, noise, schedule: NoiseSchedule):
    k = reverse_posterior(GaussianForward(schedule, np.size(x_t)), s, t)
    return k.mean(x_t, x0_hat) + k.std * np.asarray(noise, dtype=float)


def reverse_mean_from_prediction(kind, value, x_t, s, t, schedule: NoiseSchedule):
    """Posterior mean after converting any parameterisation to clean data."""
    x0 = convert(kind, value, x_t, t, "clean", schedule)
    return reverse_posterior(GaussianForward(schedule, np.size(x_t)), s, t).mean(x_t, x0)
