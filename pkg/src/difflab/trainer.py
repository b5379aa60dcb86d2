"""Tabular denoiser trained on the exact expected score-entropy loss.

The model stores one logit vector per (noisy sequence, time bin, position).
Because it is constant inside each of the B time bins, the time integral of
the loss reduces to fixed per-bin weights, so the objective and its gradient
are exact finite sums. Training is plain gradient descent with a
backtracking line search; sampling runs the learned reverse chain.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import softmax

from . import _core, ctmc, losses
from ._quad import simpson
from .errors import TrainingError
from .models import DiscreteConfig, Denoiser, product_rows, reverse_step_tables, validate_data

FORMAT_VERSION = 1
DEFAULT_BINS = 32
NODES_PER_BIN = 5
CHECK_STEPS = 64
EVAL_STEPS = 256


class TabularDenoiser(Denoiser):
    def __init__(self, cfg: DiscreteConfig, logits=None, B=DEFAULT_BINS):
        self.cfg = cfg
        self.B = int(B)
        shape = (cfg.N, self.B, cfg.d, cfg.K)
        self.logits = np.zeros(shape) if logits is None else np.array(logits, dtype=float)
        if self.logits.shape != shape:
            raise ValueError(f"logits must have shape {shape}")

    def bin_of(self, t):
        return min(int(math.floor(float(t) * self.B)), self.B - 1)

    def probs_bin(self, b):
        p = softmax(self.logits[:, b], axis=-1)
        out = np.zeros((self.cfg.N, self.cfg.d, self.cfg.Kt))
        out[..., : self.cfg.K] = p
        return out

    def table(self, t):
        return self.probs_bin(self.bin_of(t))

    def to_json(self):
        return json.dumps({
            "version": FORMAT_VERSION,
            "K": self.cfg.K,
            "d": self.cfg.d,
            "B": self.B,
            "kernel": self.cfg.to_json(),
            "logits": self.logits.tolist(),
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        from .categorical import NoiseDistribution
        from .schedule import NoiseSchedule

        obj = json.loads(text)
        if obj.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported denoiser format version {obj.get('version')!r}")
        kern = obj["kernel"]
        noise_obj = kern["noise"]
        noise = NoiseDistribution(noise_obj["kind"], np.array(noise_obj["probs"]), int(noise_obj["K"]))
        cfg = DiscreteConfig(NoiseSchedule.from_json(kern["schedule"]), noise, int(kern["d"]))
        return cls(cfg, np.array(obj["logits"]), obj["B"])


@dataclass
class TrainReport:
    loss_curve: list
    final_tv: float
    elbo_gap: float
    seed: int
    min_elbo_gap: float = 0.0
    grad_check: dict = field(default_factory=dict)
    elbo_total: float = 0.0
    data_entropy: float = 0.0
    epochs_run: int = 0

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


# ------------------------------------------------------------ objective

class ExpectedScoreEntropy:
    """E_{q_data}[DSE] minus the marginal constant, for a binned tabular model.

    At quadrature node n in bin b the model rate for replacing x^(k) by y is
    G[n,x,k,y] * sum_c V[n,x,k,y,c] pi[x,b,k,c] with G the forward rate into
    x^(k) from y and V = q(y|c)/q(x^(k)|c). The data enter only through
    q_t(x) and A = G * q_t(x with x^(k) -> y).
    """

    def __init__(self, cfg: DiscreteConfig, q_data, B=DEFAULT_BINS, t_min=losses.T_MIN,
                 nodes_per_bin=NODES_PER_BIN):
        self.cfg = cfg
        self.q = validate_data(cfg, q_data)
        self.B = B
        S = cfg.states
        Kt, K, d, N = cfg.Kt, cfg.K, cfg.d, cfg.N
        neighbour = np.empty((N, d, Kt), dtype=np.int64)
        radix = Kt ** np.arange(d - 1, -1, -1)
        base = S @ radix
        for k in range(d):
            for y in range(Kt):
                neighbour[:, k, y] = base + (y - S[:, k]) * radix[k]
        ts, ws, bins = [], [], []
        for b in range(B):
            lo = max(b / B, t_min)
            hi = min((b + 1) / B, 1.0 - t_min)
            if hi <= lo:
                continue
            t, w = simpson(lo, hi, nodes_per_bin)
            ts.append(t)
            ws.append(w)
            bins.append(np.full(len(t), b))
        self.t = np.concatenate(ts)
        self.w = np.concatenate(ws)
        self.bins = np.concatenate(bins)
        n = len(self.t)
        self.GV = np.zeros((n, N, d, Kt, K))
        self.A = np.zeros((n, N, d, Kt))
        self.qt = np.zeros((n, N))
        for i, t in enumerate(self.t):
            a = cfg.alpha(t)
            Q = cfg.Q(a)
            R = cfg.rate(t)
            qt = cfg.cond_table(a) @ self.q
            self.qt[i] = qt
            inv = np.where(Q > 0, 1.0 / np.where(Q > 0, Q, 1.0), 0.0)
            for k in range(d):
                xk = S[:, k]
                G = R[xk, :].copy()
                G[np.arange(N), xk] = 0.0
                # V[x, y, c] = Q[y, c] / Q[x^k, c] over data symbols c
                V = Q[None, :, :K] * inv[xk][:, None, :K]
                self.GV[i, :, k] = G[:, :, None] * V
                self.A[i, :, k] = G * qt[neighbour[:, k, :]]
        self.const = self._constant()

    def _constant(self):
        """Quadrature of the theta-free part with the true marginal reverse rates."""
        with np.errstate(divide="ignore", invalid="ignore"):
            rhat = np.where(self.qt[:, :, None, None] > 0,
                            self.A / np.where(self.qt > 0, self.qt, 1.0)[:, :, None, None], 0.0)
            lg = np.log(np.where(rhat > 0, rhat, 1.0))
        term = self.qt[:, :, None, None] * (rhat - rhat * lg)
        return float(self.w @ term.reshape(len(self.w), -1).sum(axis=1))

    def rates(self, logits):
        pi = softmax(logits, axis=-1)[:, self.bins]  # (N, n, d, K)
        pi = np.moveaxis(pi, 1, 0)  # (n, N, d, K)
        return pi, np.einsum("nxkyc,nxkc->nxky", self.GV, pi)

    def value(self, logits):
        _, rh = self.rates(logits)
        bad = (self.A > 0) & ~(rh > 0)
        if np.any(bad):
            return float("inf")
        with np.errstate(divide="ignore"):
            lg = np.log(np.where(rh > 0, rh, 1.0))
        per = self.qt[:, :, None, None] * rh - self.A * lg
        return float(self.w @ per.reshape(len(self.w), -1).sum(axis=1)) - self.const

    def row_value(self, row_logits, x, b, magnitude=False):
        """Terms of ``value`` that depend on the logits of sequence x in bin b.

        The objective is a sum of such independent pieces (plus a constant),
        so differences of ``row_value`` equal differences of ``value``.
        With ``magnitude`` the sum of absolute terms is returned as well,
        which bounds the rounding error of the piece.
        """
        m = self.bins == b
        pi = softmax(row_logits, axis=-1)
        rh = np.einsum("nkyc,kc->nky", self.GV[m, x], pi)
        A = self.A[m, x]
        with np.errstate(divide="ignore"):
            lg = np.log(np.where(rh > 0, rh, 1.0))
        a, c = self.qt[m, x][:, None, None] * rh, A * lg
        val = float(self.w[m] @ (a - c).reshape(int(m.sum()), -1).sum(axis=1))
        if magnitude:
            return val, float(np.abs(self.w[m]) @ (np.abs(a) + np.abs(c)).reshape(int(m.sum()), -1).sum(axis=1))
        return val

    def grad(self, logits):
        pi, rh = self.rates(logits)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(rh > 0, self.A / np.where(rh > 0, rh, 1.0), 0.0)
        coef = (self.qt[:, :, None, None] - ratio) * self.w[:, None, None, None]
        gpi = np.einsum("nxky,nxkyc->nxkc", coef, self.GV)
        glog = pi * (gpi - np.sum(pi * gpi, axis=-1, keepdims=True))
        out = np.zeros_like(logits)
        for b in range(self.B):
            m = self.bins == b
            if np.any(m):
                out[:, b] = glog[m].sum(axis=0)
        return out


def gradient_check(obj: ExpectedScoreEntropy, logits, n_coords=20, seed=0, h=1e-5):
    """Central differences on random coordinates that carry loss weight.

    Differences are taken on the single (sequence, bin) piece that the
    coordinate enters, which avoids cancellation against the full sum.
    Coordinates are drawn among those with |grad| >= 1e-3 max |grad|.
    Errors are relative, except that gradients too small for central
    differences to resolve are compared on the rounding-noise scale.
    """
    g = obj.grad(logits)
    rng = np.random.Generator(np.random.Philox(key=np.array([int(seed), 2], dtype=np.uint64)))
    scale = float(np.max(np.abs(g)))
    active = np.flatnonzero(np.abs(g) >= 1e-3 * scale) if scale > 0 else np.arange(g.size)
    picks = np.sort(rng.choice(active, size=min(n_coords, len(active)), replace=False))
    worst = 0.0
    for flat in picks:
        x, b, k, c = np.unravel_index(flat, g.shape)
        row = logits[x, b].copy()
        row[k, c] += h
        up, mag = obj.row_value(row, x, b, magnitude=True)
        row[k, c] -= 2 * h
        dn = obj.row_value(row, x, b)
        fd = (up - dn) / (2 * h)
        # rounding in up - dn is about eps * mag / h; below 1e4 times that the
        # difference quotient carries no digits, so it sets the error scale
        floor = 1e4 * np.finfo(float).eps * mag / h
        worst = max(worst, abs(fd - g[x, b, k, c]) / max(abs(fd), abs(g[x, b, k, c]), floor, 1e-300))
    return {"coordinates": int(len(picks)), "max_rel_error": float(worst)}


# -------------------------------------------------------- evaluation

def exact_model_marginal(denoiser, cfg: DiscreteConfig, steps=EVAL_STEPS):
    """Push p_T through the learned reverse chain by dense matrix products."""
    steps = int(steps)
    alphas = losses._grid_alphas(cfg.schedule, steps)
    p = cfg.prior_dense()
    for i in range(steps, 0, -1):
        rev = reverse_step_tables(cfg, denoiser.table(i / steps), alphas[i - 1], alphas[i])
        M = product_rows(rev)  # [x_t, x_s]
        p = M.T @ p
    return p


def _loglik(q, p):
    """E_q[log p]; -inf when p misses part of q's support."""
    nz = q > 0
    if np.any(p[nz] <= 0):
        return float("-inf")
    return float(q[nz] @ np.log(p[nz]))


def tv(p, q):
    return 0.5 * float(np.sum(np.abs(np.asarray(p) - np.asarray(q))))


def entropy(q):
    q = np.asarray(q, float)
    nz = q > 0
    return float(-np.sum(q[nz] * np.log(q[nz])))


def sample(denoiser, cfg: DiscreteConfig, n, steps=EVAL_STEPS, seed=0, jobs=1):
    """Ancestral samples from the learned reverse chain.

    Step i draws its uniforms from the stream (seed, i), so the sample set
    does not depend on ``jobs``. Returns (samples (n, d), empirical law).
    """
    n = int(n)
    steps = int(steps)
    alphas = losses._grid_alphas(cfg.schedule, steps)
    prior = cfg.prior()
    u0 = ctmc.path_rng(seed, 0).uniform(size=(n, cfg.d))
    x = np.empty((n, cfg.d), dtype=np.int64)
    for k in range(cfg.d):
        x[:, k] = _core.sample_rows(np.ascontiguousarray(np.broadcast_to(prior, (n, cfg.Kt))),
                                    np.ascontiguousarray(u0[:, k]))
    radix = cfg.Kt ** np.arange(cfg.d - 1, -1, -1)
    for i in range(steps, 0, -1):
        rev = reverse_step_tables(cfg, denoiser.table(i / steps), alphas[i - 1], alphas[i])
        u = ctmc.path_rng(seed, steps - i + 1).uniform(size=(n, cfg.d))
        idx = x @ radix
        new = np.empty_like(x)

        def run(lo, hi, k):
            new[lo:hi, k] = _core.sample_rows(np.ascontiguousarray(rev[idx[lo:hi], k, :]),
                                              np.ascontiguousarray(u[lo:hi, k]))

        chunks = [(lo, min(n, lo + max(1, -(-n // max(1, jobs))))) for lo in range(0, n, max(1, -(-n // max(1, jobs))))]
        if jobs > 1 and len(chunks) > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=jobs) as ex:
                list(ex.map(lambda c: [run(c[0], c[1], k) for k in range(cfg.d)], chunks))
        else:
            for lo, hi in chunks:
                for k in range(cfg.d):
                    run(lo, hi, k)
        x = new
    return x, ctmc.empirical_distribution(x, cfg.Kt)


# ------------------------------------------------------------- training

def train(q_data, cfg: DiscreteConfig, epochs=2000, lr=1.0, seed=0, B=DEFAULT_BINS,
          check_steps=CHECK_STEPS, eval_steps=EVAL_STEPS, check_elbo=True, grad_checks=True,
          callback=None):
    """Full-batch gradient descent on the exact expected loss.

    Each epoch tries twice the previous step size and halves it until the
    loss does not increase (Armijo with constant 1e-4). The ELBO bound is
    checked with the current model at every epoch when ``check_elbo``.
    """
    q = validate_data(cfg, q_data)
    obj = ExpectedScoreEntropy(cfg, q, B)
    rng = np.random.Generator(np.random.Philox(key=np.array([int(seed), 3], dtype=np.uint64)))
    logits = 0.01 * rng.standard_normal((cfg.N, B, cfg.d, cfg.K))
    model = TabularDenoiser(cfg, logits, B)
    H = entropy(q)
    loss = obj.value(logits)
    curve = [loss]
    checks = {}
    if grad_checks:
        checks["init"] = gradient_check(obj, logits, seed=seed)
    min_gap = float("inf")
    step = float(lr)

    checker = losses.ExpectedElbo(q, cfg, check_steps) if check_elbo else None

    def elbo_gap(m):
        rep, p0 = checker.evaluate(m, marginal=True)
        return rep.total + _loglik(q, p0)

    for epoch in range(int(epochs)):
        g = obj.grad(logits)
        gn = float(np.sum(g * g))
        if not np.isfinite(gn):
            raise TrainingError("gradient became non-finite", TabularDenoiser(cfg, logits, B))
        if gn == 0.0:
            break
        trial = step * 2.0
        while True:
            cand = logits - trial * g
            val = obj.value(cand)
            if np.isfinite(val) and val <= loss - 1e-4 * trial * gn:
                break
            trial *= 0.5
            if trial < 1e-12:
                break
        if trial < 1e-12:
            break
        if not np.isfinite(val):
            raise TrainingError("loss diverged", TabularDenoiser(cfg, logits, B))
        logits, loss, step = cand, val, trial
        curve.append(loss)
        model = TabularDenoiser(cfg, logits, B)
        if check_elbo:
            min_gap = min(min_gap, elbo_gap(model))
        if callback is not None:
            callback(epoch, loss, model)
    model = TabularDenoiser(cfg, logits, B)
    if grad_checks:
        checks["final"] = gradient_check(obj, logits, seed=seed + 1)
    rep, p0 = losses.ExpectedElbo(q, cfg, eval_steps).evaluate(model, marginal=True)
    gap = rep.total + _loglik(q, p0)
    return model, TrainReport(
        loss_curve=[float(v) for v in curve],
        final_tv=tv(p0, q),
        elbo_gap=float(gap),
        seed=int(seed),
        min_elbo_gap=float(min(min_gap, gap)),
        grad_check=checks,
        elbo_total=float(rep.total),
        data_entropy=H,
        epochs_run=len(curve) - 1,
    )


def timed_train(*args, **kwargs):
    t0 = time.perf_counter()
    out = train(*args, **kwargs)
    return out, time.perf_counter() - t0
