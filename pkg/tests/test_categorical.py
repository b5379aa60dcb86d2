import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from difflab import categorical as cat
from difflab import oracle, verify
from difflab.categorical import NoiseDistribution
from difflab.errors import ConditioningError, SingularityError

from conftest import simplex

KINDS = ("uniform", "mask", "mixture")


def _noise(kind, K):
    return verify._noise(kind, K)


def _chain(a_s, a_t, p):
    return oracle.DenseChain([0.0, 0.5, 1.0], [oracle.literal_interpolation(a_s, p),
                                               oracle.literal_interpolation(a_t / a_s, p)])


def test_noise_distributions():
    m = NoiseDistribution.mask(4)
    assert m.size == 5 and m.mask_index == 4 and np.array_equal(m.probs, np.eye(5)[4])
    mix = NoiseDistribution.mixture(3, 0.25, 0.75)
    assert mix.probs.sum() == pytest.approx(1.0, abs=1e-12) and mix.probs[3] == pytest.approx(0.75 + 0.25 / 4)
    with pytest.raises(ValueError):
        NoiseDistribution.mixture(3, 0.5, 0.6)
    with pytest.raises(ValueError):
        NoiseDistribution("uniform", np.array([0.6, 0.6]), 2)
    with pytest.raises(ValueError):
        NoiseDistribution.uniform(70)


@given(st.sampled_from(KINDS), st.integers(2, 6), st.floats(0.0, 1.0))
def test_interpolation_matrix_is_column_stochastic(kind, K, alpha):
    Q = cat.interpolation_matrix(alpha, _noise(kind, K))
    assert Q.min() >= 0 and np.max(np.abs(Q.sum(axis=0) - 1)) < 1e-12


def test_interpolation_special_cases():
    u2 = NoiseDistribution.uniform(2)
    assert np.array_equal(cat.interpolation_matrix(1.0, u2), np.eye(2))
    assert np.allclose(cat.interpolation_matrix(0.0, u2), 0.5)
    Q = cat.interpolation_matrix(0.5, u2)
    assert np.allclose(Q, [[0.75, 0.25], [0.25, 0.75]], atol=1e-15)
    half = cat.interpolation_matrix(np.sqrt(0.5), u2)
    assert np.allclose(half @ half, Q, atol=1e-15)
    inv = cat.inverse_interpolation(0.5, u2)
    assert np.allclose(inv, 2 * (np.eye(2) - 0.5 * np.outer(u2.probs, np.ones(2))), atol=1e-14)
    assert np.allclose(inv, np.linalg.inv(Q), atol=1e-12)
    with pytest.raises(SingularityError):
        cat.inverse_interpolation(0.0, u2)


def test_mixture_matrix_matches_interpolation():
    n = NoiseDistribution.mixture(3, 0.4, 0.6)
    a = 0.3
    M = cat.mixture_matrix(a, (1 - a) * 0.4, (1 - a) * 0.6, 3)
    assert np.allclose(M, cat.interpolation_matrix(a, n), atol=1e-14)


def test_window_matrix(rng):
    n = NoiseDistribution.mixture(4, 0.5, 0.5)
    assert np.allclose(cat.window_matrix(0.4, 0.4, n), np.eye(5))
    assert np.allclose(cat.window_matrix(0.4, 0.0, n), np.outer(n.probs, np.ones(5)))
    for _ in range(50):
        a_s = rng.uniform(0.01, 1)
        a_t = a_s * rng.uniform(0, 1)
        W = cat.window_matrix(a_s, a_t, n)
        assert np.max(np.abs(W @ cat.interpolation_matrix(a_s, n) - cat.interpolation_matrix(a_t, n))) < 1e-12
    with pytest.raises(ValueError):
        cat.window_matrix(0.2, 0.5, n)


def test_forward_marginal(rng):
    n = NoiseDistribution.mixture(4, 0.3, 0.7)
    assert np.array_equal(cat.forward_marginal(2, 1.0, n), np.eye(5)[2])
    assert np.allclose(cat.forward_marginal(2, 0.0, n), n.probs)
    for a in rng.random(20):
        assert np.max(np.abs(cat.forward_marginal(1, a, n) - cat.interpolation_matrix(a, n)[:, 1])) < 1e-14


def test_reverse_posterior_special_cases():
    n = NoiseDistribution.mask(3)
    assert np.array_equal(cat.reverse_posterior(1, 1, 0.5, 0.5, n), np.eye(4)[1])
    # an unmasked x_t is already clean
    assert np.array_equal(cat.reverse_posterior(2, 2, 0.7, 0.3, n), np.eye(4)[2])
    assert np.allclose(cat.reverse_posterior_masked(3, 0, 1.0, 0.3, 4), np.eye(4)[0])
    with pytest.raises(ConditioningError):
        cat.reverse_posterior(1, 2, 0.7, 0.3, n)
    with pytest.raises(ConditioningError):
        cat.reverse_posterior_masked(1, 2, 0.7, 0.3, 4)


def test_all_closed_forms_match_enumeration_for_500_queries():
    rec = verify.Recorder()
    verify.kernel_exactness(rec, seed=3)
    assert all(c["status"] == "pass" for c in rec.checks), rec.checks


@given(st.integers(2, 5), st.floats(0.05, 0.99), st.floats(0.05, 0.99), st.data())
def test_masked_form_equals_general_form(K, a_s, frac, data):
    a_t = a_s * frac
    n = NoiseDistribution.mask(K)
    x0 = data.draw(st.integers(0, K - 1))
    x_t = data.draw(st.sampled_from([x0, K]))
    general = cat.reverse_posterior(x_t, x0, a_s, a_t, n)
    assert np.max(np.abs(cat.reverse_posterior_masked(x_t, x0, a_s, a_t, K + 1) - general)) < 1e-13


@pytest.mark.parametrize("same", [True, False])
def test_reparameterised_branches_on_uniform_k4(rng, same):
    n = NoiseDistribution.uniform(4)
    for _ in range(100):
        a_s = rng.uniform(0.05, 0.99)
        a_t = a_s * rng.uniform(0.05, 0.99)
        x0 = int(rng.integers(0, 4))
        x_t = x0 if same else (x0 + 1 + int(rng.integers(0, 3))) % 4
        ref = cat.reverse_posterior(x_t, x0, a_s, a_t, n)
        assert np.max(np.abs(cat.zheng_reparameterized_posterior(x_t, x0, a_s, a_t, n) - ref)) < 1e-12


@given(st.sampled_from(KINDS), st.integers(2, 5), st.floats(0.05, 0.99), st.floats(0.05, 0.99), st.data())
def test_denoiser_forms(kind, K, a_s, frac, data):
    n = _noise(kind, K)
    a_t = a_s * frac
    x0 = data.draw(st.integers(0, K - 1))
    x_t = data.draw(st.integers(0, n.size - 1))
    if cat.interpolation_matrix(a_t, n)[x_t, x0] <= 0:
        return
    pm = np.eye(n.size)[x0]
    ref = cat.reverse_posterior(x_t, x0, a_s, a_t, n)
    for form in ("matrix", "sum"):
        assert np.max(np.abs(cat.posterior_from_denoiser(x_t, pm, a_s, a_t, n, form=form) - ref)) < 1e-12


def test_matrix_and_sum_forms_agree_when_the_likelihood_is_flat_on_the_support(rng):
    # masked x_t: q(MASK | c) is the same for every clean c
    n = NoiseDistribution.mask(5)
    for _ in range(100):
        a_s = rng.uniform(0.1, 0.99)
        a_t = a_s * rng.uniform(0.1, 0.99)
        dist = np.append(simplex(rng, 5), 0.0)
        m = cat.posterior_from_denoiser(5, dist, a_s, a_t, n, form="matrix")
        s = cat.posterior_from_denoiser(5, dist, a_s, a_t, n, form="sum")
        assert np.max(np.abs(m - s)) < 1e-12


def test_matrix_form_differs_from_sum_form_on_soft_uniform_predictions(rng):
    n = NoiseDistribution.uniform(5)
    dist = simplex(rng, 5)
    m = cat.posterior_from_denoiser(0, dist, 0.8, 0.4, n, form="matrix")
    s = cat.posterior_from_denoiser(0, dist, 0.8, 0.4, n, form="sum")
    assert abs(m.sum() - 1) < 1e-12 and abs(s.sum() - 1) < 1e-12
    assert np.max(np.abs(m - s)) > 1e-4
    with pytest.raises(ValueError):
        cat.posterior_from_denoiser(0, dist, 0.8, 0.4, n, form="other")


def test_sum_form_with_bayes_denoiser_is_the_true_reverse_marginal(rng):
    for kind in KINDS:
        n = _noise(kind, 4)
        for _ in range(30):
            a_s = rng.uniform(0.1, 0.99)
            a_t = a_s * rng.uniform(0.1, 0.99)
            q0 = np.zeros(n.size)
            q0[:4] = simplex(rng, 4)
            Qt = cat.interpolation_matrix(a_t, n)
            x_t = int(rng.integers(0, n.size))
            if Qt[x_t] @ q0 <= 0:
                continue
            post = Qt[x_t] * q0 / (Qt[x_t] @ q0)
            got = cat.posterior_from_denoiser(x_t, post, a_s, a_t, n, form="sum")
            ref = oracle.joint_marginal_posterior(_chain(a_s, a_t, n.probs), q0, 1, 2, x_t)
            assert np.max(np.abs(got - ref)) < 1e-12


def test_window_identities_suite():
    rec = verify.Recorder()
    verify.window_identities(rec, seed=5)
    assert all(c["status"] == "pass" for c in rec.checks), rec.checks


def test_transition_csv():
    text = cat.transition_csv(np.eye(2))
    assert text.splitlines()[0].count(",") == 1
