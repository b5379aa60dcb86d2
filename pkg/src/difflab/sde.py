"""One-dimensional SDE engine on Gaussian-mixture data.

Because the forward process is linear-Gaussian, every marginal q_t stays a
Gaussian mixture, so densities, scores and their derivatives are analytic.

The default schedule here is ``log-linear-snr``: its drift and diffusion
coefficients stay bounded up to t = 1, which fixed-step schemes need.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, ndtr

from . import gaussian
from .errors import NumericError
from .schedule import NoiseSchedule, sde_coefficients

T_MIN = 1e-3
_LOG_FLOOR = math.log(1e-300)


def default_schedule():
    return NoiseSchedule("log-linear-snr")


@dataclass(frozen=True)
class MixtureDensity:
    weights: tuple
    means: tuple
    variances: tuple

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        m = np.asarray(self.means, dtype=float)
        v = np.asarray(self.variances, dtype=float)
        if not (w.shape == m.shape == v.shape) or w.ndim != 1 or len(w) == 0:
            raise ValueError("weights, means and variances must be equal-length 1-D")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must form a simplex")
        if np.any(v <= 0):
            raise ValueError("component variances must be positive")
        for name, arr in (("weights", w), ("means", m), ("variances", v)):
            object.__setattr__(self, name, tuple(float(a) for a in arr))

    @property
    def arrays(self):
        return np.array(self.weights), np.array(self.means), np.array(self.variances)

    def _log_terms(self, x):
        w, m, v = self.arrays
        x = np.asarray(x, dtype=float)[..., None]
        with np.errstate(divide="ignore"):
            lw = np.log(w)
        return lw - 0.5 * np.log(2 * np.pi * v) - 0.5 * (x - m) ** 2 / v

    def logpdf(self, x):
        return logsumexp(self._log_terms(x), axis=-1)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def cdf(self, x):
        w, m, v = self.arrays
        x = np.asarray(x, dtype=float)[..., None]
        return np.sum(w * ndtr((x - m) / np.sqrt(v)), axis=-1)

    def _resp(self, x):
        lt = self._log_terms(x)
        lse = logsumexp(lt, axis=-1)
        if np.any(lse < _LOG_FLOOR):
            bad = np.asarray(x).reshape(-1)[np.argmin(np.asarray(lse).reshape(-1))]
            raise NumericError(f"density underflow at x={bad}")
        return np.exp(lt - lse[..., None])

    def score(self, x):
        w, m, v = self.arrays
        r = self._resp(x)
        a = -(np.asarray(x, dtype=float)[..., None] - m) / v
        return np.sum(r * a, axis=-1)

    def score_derivative(self, x):
        w, m, v = self.arrays
        r = self._resp(x)
        a = -(np.asarray(x, dtype=float)[..., None] - m) / v
        s = np.sum(r * a, axis=-1)
        return np.sum(r * (-1.0 / v), axis=-1) + np.sum(r * a * a, axis=-1) - s * s

    def sample(self, n, rng):
        w, m, v = self.arrays
        comp = rng.choice(len(w), size=n, p=w)
        return m[comp] + np.sqrt(v[comp]) * rng.standard_normal(n)

    def to_json(self):
        return {"weights": list(self.weights), "means": list(self.means), "variances": list(self.variances)}


@dataclass
class SdePath:
    times: np.ndarray
    states: np.ndarray  # shape (len(times), n_paths)

    def to_csv(self, max_paths=None):
        S = self.states if max_paths is None else self.states[:, :max_paths]
        head = "t," + ",".join(f"x{i}" for i in range(S.shape[1]))
        rows = [f"{t!r}," + ",".join(repr(float(v)) for v in row) for t, row in zip(self.times, S)]
        return head + "\n" + "\n".join(rows) + "\n"


def pushforward_mixture(data: MixtureDensity, schedule: NoiseSchedule, t) -> MixtureDensity:
    a = float(schedule.alpha(t))
    s2 = 1.0 - a * a
    w, m, v = data.arrays
    return MixtureDensity(tuple(w), tuple(a * m), tuple(a * a * v + s2))


def marginal_score(data, schedule, t, x):
    return pushforward_mixture(data, schedule, t).score(x)


def probability_flow_velocity(data, schedule, t, x):
    """u_t(x) = f_t(x) - g_t^2/2 * score."""
    drift, g2 = sde_coefficients(schedule, t)
    x = np.asarray(x, dtype=float)
    return drift * x - 0.5 * g2 * marginal_score(data, schedule, t, x)


def velocity_divergence(data, schedule, t, x):
    drift, g2 = sde_coefficients(schedule, t)
    return drift - 0.5 * g2 * pushforward_mixture(data, schedule, t).score_derivative(x)


def reverse_drift(data, schedule, t, x, kind="score", stochastic=True):
    """Drift of the reverse-time dynamics in forward time t.

    ``stochastic=True`` gives the reverse SDE drift f - g^2 s, ``False`` the
    probability-flow drift f - g^2 s / 2. ``kind`` chooses which
    parameterisation the score is routed through, which must not matter.
    """
    drift, g2 = sde_coefficients(schedule, t)
    x = np.asarray(x, dtype=float)
    s_true = marginal_score(data, schedule, t, x)
    if kind == "flow":
        u = drift * x - 0.5 * g2 * s_true
        s_true = (2.0 / g2) * (drift * x - u)
    elif kind != "score":
        pred = gaussian.convert("score", s_true, x, t, kind, schedule)
        s_true = gaussian.convert(kind, pred, x, t, "score", schedule)
    c = 1.0 if stochastic else 0.5
    return drift * x - c * g2 * s_true


def euler_maruyama(direction, data, schedule, x_init, n_steps, rng_seed, t_min=T_MIN,
                   t_start=None, keep_path=True, final_denoise=True, stream=0):
    """Fixed-step Euler-Maruyama in either direction.

    Forward integrates dx = f x dt + g dw on [0, 1]. Reverse integrates the
    reverse-time SDE from ``t_start`` (default 1) down to ``t_min``. It then
    replaces the last state by the exact posterior mean E[x0 | x_tmin].
    Noise comes from the counter-based stream (rng_seed, stream).
    """
    if int(n_steps) != n_steps or n_steps < 1:
        raise ValueError("n_steps must be a positive integer")
    rng = np.random.Generator(np.random.Philox(key=np.array([int(rng_seed), int(stream)], dtype=np.uint64)))
    x = np.array(x_init, dtype=float).reshape(-1)
    if direction == "forward":
        t0, t1 = (0.0 if t_start is None else t_start), 1.0
    elif direction == "reverse":
        t0, t1 = (1.0 if t_start is None else t_start), t_min
    else:
        raise ValueError("direction must be 'forward' or 'reverse'")
    times = np.linspace(t0, t1, int(n_steps) + 1)
    states = [x.copy()] if keep_path else None
    for i in range(int(n_steps)):
        t, tn = times[i], times[i + 1]
        h = abs(tn - t)
        drift, g2 = sde_coefficients(schedule, t)
        z = rng.standard_normal(x.shape)
        if direction == "forward":
            x = x + drift * x * h + math.sqrt(max(g2, 0.0) * h) * z
        else:
            try:
                s = marginal_score(data, schedule, t, x)
            except NumericError as exc:
                raise NumericError(f"score underflow at t={t}: {exc}") from exc
            # dx = [f - g^2 s] dt run backwards in time
            x = x - (drift * x - g2 * s) * h + math.sqrt(max(g2, 0.0) * h) * z
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite state at t={tn}")
        if keep_path:
            states.append(x.copy())
    if direction == "reverse" and final_denoise:
        s = marginal_score(data, schedule, t1, x)
        a = float(schedule.alpha(t1))
        x = (x + (1.0 - a * a) * s) / a
        if keep_path:
            states[-1] = x.copy()
            times = times.copy()
            times[-1] = t1
    if keep_path:
        return SdePath(times, np.array(states))
    return SdePath(np.array([times[0], times[-1]]), np.array([np.array(x_init, float).reshape(-1), x]))


def exact_loglik(data, schedule, x0, n_steps=512, t_end=1.0):
    """log q_0(x0) via the probability-flow ODE and the analytic divergence.

    RK4 on the augmented state (x, integral of div u). Returns log q_1(x_1)
    plus the accumulated divergence integral.
    """
    x = np.array(x0, dtype=float).reshape(-1)
    acc = np.zeros_like(x)
    h = t_end / n_steps

    def rhs(t, y):
        return (probability_flow_velocity(data, schedule, t, y),
                velocity_divergence(data, schedule, t, y))

    for i in range(int(n_steps)):
        t = i * h
        k1x, k1d = rhs(t, x)
        k2x, k2d = rhs(t + 0.5 * h, x + 0.5 * h * k1x)
        k3x, k3d = rhs(t + 0.5 * h, x + 0.5 * h * k2x)
        k4x, k4d = rhs(t + h, x + h * k3x)
        x = x + h / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
        acc = acc + h / 6.0 * (k1d + 2 * k2d + 2 * k3d + k4d)
        if not np.all(np.isfinite(x)):
            raise NumericError(f"integration left the support near t={t + h}")
    out = pushforward_mixture(data, schedule, t_end).logpdf(x) + acc
    return out if np.ndim(x0) else float(out[0])
