import numpy as np
import pytest

from difflab import ctmc, generator, verify
from difflab.categorical import NoiseDistribution, window_matrix
from difflab.errors import DomainError, SupportError
from difflab.schedule import NoiseSchedule
from difflab.generator import FiniteGenerator


def _rate(rng, n):
    return ctmc.close_columns(rng.random((n, n)))


def test_constants_are_annihilated_and_adjoint_pairs(rng):
    for _ in range(10):
        g = FiniteGenerator(_rate(rng, 6))
        assert np.max(np.abs(generator.apply(g, np.full(6, -2.5)))) <= 1e-12
        phi, q = rng.normal(size=6), rng.dirichlet(np.ones(6))
        assert generator.apply(g, phi) @ q == pytest.approx(phi @ generator.adjoint(g, q), abs=1e-12)
        assert generator.adjoint(g, q).sum() == pytest.approx(0.0, abs=1e-12)


def test_input_validation():
    with pytest.raises(ValueError):
        FiniteGenerator(np.zeros((2, 3)))
    g = FiniteGenerator(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    with pytest.raises(ValueError):
        generator.apply(g, np.ones(3))
    with pytest.raises(ValueError):
        generator.apply(g, np.array([np.nan, 1.0]))
    with pytest.raises(SupportError):
        generator.reversed_generator(g, np.array([1.0, 0.0]))
    with pytest.raises(DomainError):
        generator.transformed_rate(g.rate, np.array([1.0, 0.0]))


def test_generator_is_the_derivative_of_the_window_kernel():
    s = NoiseSchedule("cosine")
    noise = NoiseDistribution.mixture(3, 0.4, 0.6)
    for t in (0.2, 0.5, 0.8):
        h = 1e-6
        W = window_matrix(float(s.alpha(t)), float(s.alpha(t + h)), noise)
        fd = (W - np.eye(len(W))) / h
        assert np.max(np.abs(fd - ctmc.rate_from_schedule(s, noise, t))) <= 1e-4


def test_dynkin_formula():
    s = NoiseSchedule("linear-alpha")
    noise = NoiseDistribution.mask(3)
    gf = lambda t: FiniteGenerator(ctmc.rate_from_schedule(s, noise, t))  # noqa: E731
    q0 = np.array([0.2, 0.3, 0.5, 0.0])
    assert generator.dynkin_residual(gf, np.array([0.0, 0.0, 0.0, 1.0]), q0, 0.9) <= 1e-6
    assert generator.dynkin_residual(gf, np.array([0.4, -1.0, 2.0, 0.3]), q0, 0.7) <= 1e-6
    assert generator.dynkin_residual(gf, np.full(4, 3.0), q0, 0.9) <= 1e-12
    assert generator.dynkin_residual(gf, np.arange(4.0), q0, 0.0) == 0.0
    with pytest.raises(ValueError):
        generator.dynkin_residual(gf, np.ones(4), q0, 1.5)


def test_reversal(rng):
    for _ in range(5):
        R, q = _rate(rng, 5), rng.dirichlet(np.ones(5))
        g = FiniteGenerator(R)
        gh = generator.reversed_generator(g, q)
        assert np.allclose(gh.rate, ctmc.reverse_rate(R, q), atol=1e-12)
        assert np.allclose(generator.adjoint(gh, q), -generator.adjoint(g, q), atol=1e-12)
    S = rng.random((4, 4))
    sym = ctmc.close_columns(S + S.T)
    back = generator.reversed_generator(FiniteGenerator(sym), np.full(4, 0.25))
    assert np.allclose(back.rate, sym, atol=1e-12)


def test_elbo_integrand(rng):
    R, q = _rate(rng, 5), rng.dirichlet(np.ones(5))
    gh = generator.reversed_generator(FiniteGenerator(R), q)
    assert np.max(np.abs(generator.generator_elbo_integrand(gh, q, q))) <= 1e-12
    assert np.max(np.abs(generator.generator_elbo_integrand(gh, q, 3.0 * q))) <= 1e-12
    for _ in range(10):
        p = rng.dirichlet(np.ones(5))
        vals = generator.generator_elbo_integrand(gh, q, p)
        assert vals.min() >= -1e-12
        assert np.allclose(vals, generator.elbo_integrand_ratio_form(R, q, p), atol=1e-12)
        assert generator.generator_elbo_integrand(gh, q, p, x=2) == pytest.approx(vals[2])


def test_continuous_integrand():
    fd, closed = generator.continuous_integrand_check(lambda x: -0.3 * x, 2.0, lambda x: 1.5 + np.tanh(x), 0.3)
    assert fd == pytest.approx(closed, abs=1e-6)


def test_girsanov():
    sch = NoiseSchedule("log-linear-snr")
    rf = ctmc.interpolation_rate(sch, NoiseDistribution.uniform(3))
    path = ctmc.simulate_exact(rf, 1, [0], 1.0, 4, 0)
    one = lambda t, x: np.ones_like(np.asarray(x, float))  # noqa: E731
    assert generator.girsanov_weight(rf, one, path, 3) == pytest.approx(1.0, abs=1e-12)
    rec = verify.Recorder()
    verify.girsanov_checks(rec, n_paths=20000)
    assert all(c["status"] == "pass" for c in rec.checks), rec.checks


def test_decomposition_residual(rng):
    spec = ctmc.SequenceRateSpec([_rate(rng, 3), _rate(rng, 3)])
    q0 = rng.dirichlet(np.ones(9))
    assert generator.decomposition_residual(spec, q0, 0.5) <= 1e-10
