import math

import numpy as np
import pytest

from difflab import gaussian, losses, oracle, trainer, verify
from difflab.categorical import NoiseDistribution
from difflab.errors import PositivityError
from difflab.models import BayesDenoiser, DiscreteConfig, OneHotDenoiser
from difflab.schedule import NoiseSchedule
from difflab.sde import MixtureDensity, pushforward_mixture

LIN = NoiseSchedule("linear-alpha")


def _law(cfg, rng):
    q = np.zeros(cfg.N)
    q[cfg.data_mask] = rng.random(int(cfg.data_mask.sum())) + 0.05
    return q / q.sum()


@pytest.mark.parametrize("kind", ["uniform", "mask"])
def test_diffusion_term_vanishes_at_the_exact_posterior(kind):
    cfg = DiscreteConfig(LIN, NoiseDistribution.from_json({"kind": kind, "K": 3}), 2)
    for x0 in [(0, 0), (1, 2), (2, 1)]:
        rep = losses.discrete_time_elbo(x0, OneHotDenoiser(cfg, x0), cfg, 8)
        assert abs(rep.diffusion_term) <= 1e-10
        assert rep.total == pytest.approx(rep.prior_term + rep.diffusion_term + rep.reconstruction_term)


def test_elbo_bounds_the_model_nll(rng):
    cfg = DiscreteConfig(LIN, NoiseDistribution.uniform(3), 2)
    model = BayesDenoiser(cfg, _law(cfg, rng))
    p0 = trainer.exact_model_marginal(model, cfg, 8)
    for i in range(cfg.N):
        rep = losses.discrete_time_elbo(tuple(cfg.states[i]), model, cfg, 8)
        assert rep.total >= -math.log(p0[i]) - 1e-9


def test_expected_elbo_is_the_weighted_pointwise_elbo(rng):
    cfg = DiscreteConfig(LIN, NoiseDistribution.mask(3), 2)
    q = _law(cfg, rng)
    model = BayesDenoiser(cfg, _law(cfg, rng))
    ref = sum(q[i] * losses.discrete_time_elbo(tuple(cfg.states[i]), model, cfg, 6).total
              for i in range(cfg.N) if q[i] > 0)
    assert losses.expected_elbo(q, model, cfg, 6).total == pytest.approx(ref, abs=1e-10)
    assert losses.expected_elbo(q, model, cfg, 6).total >= trainer.entropy(q) - 1e-9


def test_gaussian_prior_term_is_closed_form():
    x0 = 0.9
    rep = losses.discrete_time_elbo(np.array([x0]), lambda xt, t: 0 * xt, T=4, space="continuous", schedule=LIN)
    a = float(LIN.alpha(1.0))
    m, v = a * x0, 1 - a * a
    kl = oracle.quadrature(lambda z: oracle.normal_pdf(z, m, v) * (np.log(oracle.normal_pdf(z, m, v))
                                                                   - np.log(oracle.normal_pdf(z, 0, 1))),
                           -10, 10, 8193)
    assert rep.prior_term == pytest.approx(kl, abs=1e-9)


def test_clean_weight_is_half_the_snr_drop():
    T, i = 4, 4
    a_s, a_t = float(LIN.alpha(0.75)), float(LIN.alpha(1.0))
    snr = lambda a: a * a / (1 - a * a)  # noqa: E731
    w = losses.gaussian_step_weight("clean", i, T, LIN)
    assert w == pytest.approx(0.5 * (snr(a_s) - snr(a_t)))
    # a constant prediction c leaves a deterministic error, so the step KL is w (x0 - c)^2
    x0, c = 0.6, -0.2
    kl = losses.gaussian_diffusion_term(np.array([x0]), lambda xt, t: np.full_like(xt, c), LIN, T, t_lo=0.75)
    assert kl == pytest.approx(w * (x0 - c) ** 2, rel=1e-9)
    with pytest.raises(ValueError):
        losses.gaussian_step_weight("clean", 1, T, LIN)
    with pytest.raises(ValueError):
        losses.gaussian_step_weight("eps", 2, T, LIN)


@pytest.mark.parametrize("kind", ["noise", "score", "velocity"])
def test_step_loss_is_parameterisation_free(kind):
    x0, xt, out = 0.3, -0.4, 0.1
    conv = gaussian.convert("clean", out, xt, 3 / 8, kind, LIN)
    assert losses.gaussian_step_loss(kind, x0, xt, 3, 8, conv, LIN) == pytest.approx(
        losses.gaussian_step_loss("clean", x0, xt, 3, 8, out, LIN), abs=1e-10)


def test_dsm():
    data = MixtureDensity((0.5, 0.5), (-1.0, 1.5), (0.3, 0.2))
    s = NoiseSchedule("log-linear-snr")

    def conditional(t, xt, x0):
        a = np.asarray(s.alpha(t))
        return -(xt - a * x0) / (1 - a * a)

    val, sd = losses.dsm_loss(data, s, conditional, 1000, 0)
    assert val == pytest.approx(0.0, abs=1e-12)

    def marginal(t, xt, x0):
        return np.array([float(pushforward_mixture(data, s, ti).score(xi)) for ti, xi in zip(t, xt)])

    val, sd = losses.dsm_loss(data, s, marginal, 4000, 1)
    assert abs(val - losses.dsm_variance_gap(data, s)) <= 4 * sd
    a, _ = losses.dsm_loss(data, s, marginal, 200, 5)
    b, _ = losses.dsm_loss(data, s, marginal, 200, 5)
    assert a == b
    with pytest.raises(ValueError):
        losses.dsm_loss(data, s, marginal, 0, 0)


def test_bregman_residual_is_nonnegative_and_zero_for_the_oracle(rng):
    for kind in ("uniform", "mask"):
        cfg = DiscreteConfig(LIN, NoiseDistribution.from_json({"kind": kind, "K": 3}), 2)
        model = BayesDenoiser(cfg, _law(cfg, rng))
        for x0 in [(0, 1), (2, 2)]:
            assert losses.dse_loss(x0, cfg, model, subtract_constant=True, nodes=33) >= -1e-12
            oracle_val = losses.dse_loss(x0, cfg, OneHotDenoiser(cfg, x0), subtract_constant=True, nodes=33)
            assert abs(oracle_val) <= 1e-10


def test_token_and_sequence_forms_agree(rng):
    cfg = DiscreteConfig(LIN, NoiseDistribution.uniform(3), 2)
    model = BayesDenoiser(cfg, _law(cfg, rng))
    a = losses.dse_loss((1, 0), cfg, model, form="token", nodes=17)
    b = losses.dse_loss((1, 0), cfg, model, form="sequence", nodes=17)
    assert a == pytest.approx(b, abs=1e-9)
    with pytest.raises(ValueError):
        losses.dse_loss((1, 0), cfg, model, form="pair")


def test_masked_dse_minus_constant_is_the_mlm_loss(rng):
    cfg = DiscreteConfig(LIN, NoiseDistribution.mask(4), 2)
    model = BayesDenoiser(cfg, _law(cfg, rng))
    for x0 in [(0, 3), (2, 1)]:
        lhs = losses.dse_loss(x0, cfg, model) - losses.dse_constant(x0, cfg)
        assert lhs == pytest.approx(losses.mlm_loss(x0, cfg, model), abs=1e-8)
        assert losses.mlm_loss(x0, cfg, model) >= 0
    with pytest.raises(ValueError):
        losses.mlm_loss((0, 1), DiscreteConfig(LIN, NoiseDistribution.uniform(4), 2), model)


def test_zero_model_rate_against_positive_target_raises():
    cfg = DiscreteConfig(LIN, NoiseDistribution.mask(3), 2)
    with pytest.raises(PositivityError):
        losses.dse_loss((0, 1), cfg, OneHotDenoiser(cfg, (2, 2)), nodes=9)


def test_diffusion_term_converges_at_first_order():
    for rows, _ in (verify.masking_convergence(T_list=(64, 128, 256)), verify.gaussian_convergence((32, 64, 128))):
        ratios = [r[3] for r in rows[1:]]
        assert all(0.3 <= r <= 0.7 for r in ratios), rows
    csv = losses.convergence_csv(rows)
    assert csv.splitlines()[0] == "T,diffusion_term,gap,ratio" and len(csv.splitlines()) == 4


def test_loss_report_json_round_trip():
    import json

    rep = losses.LossReport.build(1.0, 2.0, 0.5)
    obj = json.loads(rep.to_json())
    assert obj["total"] == 3.5 and list(obj) == sorted(obj)
