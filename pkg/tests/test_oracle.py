import math

import numpy as np
import pytest

from difflab import oracle
from difflab.errors import CapacityError, ConditioningError, DomainError


def test_simpson_exactness_and_order():
    assert oracle.quadrature(lambda x: x * x, 0, 1, 65) == pytest.approx(1 / 3, abs=1e-10)
    assert oracle.quadrature(lambda x: np.full_like(x, 2.5), -1, 3, 5) == 10.0
    e1 = abs(oracle.quadrature(np.exp, 0, 1, 9) - (math.e - 1))
    e2 = abs(oracle.quadrature(np.exp, 0, 1, 17) - (math.e - 1))
    assert 12 < e1 / e2 < 20
    with pytest.raises(ValueError):
        oracle.quadrature(np.exp, 0, 1, 8)


def test_finite_differences():
    assert oracle.finite_diff(lambda x: x ** 3, 2.0, 1) == pytest.approx(12.0, abs=1e-8)
    # the stencil is exact on lines, so a wide step keeps roundoff small
    assert abs(oracle.finite_diff(lambda x: 3 * x + 1, 0.3, 2, 1e-2)) < 1e-10
    x = 0.7
    exact = (x * x - 1) * oracle.normal_pdf(x, 0.0, 1.0)
    assert oracle.finite_diff(lambda z: oracle.normal_pdf(z, 0.0, 1.0), x, 2, 1e-3) == pytest.approx(exact, rel=1e-6)
    with pytest.raises(DomainError):
        oracle.finite_diff(math.log, 0.001, 1, 1e-3, domain=(0.0, 1.0))


def test_one_step_chain_posterior_is_a_normalised_column_slice(rng):
    P = rng.random((4, 4))
    P /= P.sum(axis=0)
    chain = oracle.DenseChain([0.0, 1.0, 2.0], [np.eye(4), P])
    post = oracle.bayes_posterior(chain, 1, 2, 2, 0)
    assert np.allclose(post, np.eye(4)[0])
    chain = oracle.DenseChain([0.0, 1.0], [P])
    q0 = np.array([0.1, 0.2, 0.3, 0.4])
    post = oracle.joint_marginal_posterior(chain, q0, 0, 1, 3)
    assert np.allclose(post, P[3] * q0 / (P[3] @ q0))


def test_permutation_chain_gives_one_hot_posteriors():
    perm = np.eye(3)[[2, 0, 1]]
    chain = oracle.DenseChain([0, 1, 2], [perm, perm])
    for x0 in range(3):
        xt = int(np.argmax(perm @ perm @ np.eye(3)[x0]))
        post = oracle.bayes_posterior(chain, 1, 2, xt, x0)
        assert post.max() == 1.0


def test_chain_validation():
    with pytest.raises(ValueError):
        oracle.DenseChain([0, 1], [np.ones((2, 2))])
    chain = oracle.DenseChain([0, 1], [np.eye(2)])
    with pytest.raises(ConditioningError):
        oracle.joint_marginal_posterior(chain, [1.0, 0.0], 0, 1, 1)


def test_dense_cap(monkeypatch):
    monkeypatch.setenv("DIFFLAB_DENSE_CAP", "16")
    with pytest.raises(CapacityError):
        oracle.states(3, 3)
    monkeypatch.setenv("DIFFLAB_DENSE_CAP", "65536")
    with pytest.raises(CapacityError):
        oracle.states(2, 17)
    monkeypatch.setenv("DIFFLAB_DENSE_CAP", "100000")
    with pytest.raises(ValueError):
        oracle.states(2, 3)


def test_literal_kron_sum_two_by_two():
    R = np.array([[-1.0, 2.0], [1.0, -2.0]])
    L = oracle.literal_kron_sum([R, R])
    assert L[0, 3] == 0 and L[3, 0] == 0 and L[1, 2] == 0 and L[2, 1] == 0
    assert np.allclose(L.sum(axis=0), 0)


def test_gaussian_helpers():
    assert oracle.gaussian_kl(0.3, 1.2, 0.3, 1.2) == 0.0
    assert oracle.categorical_kl([0.5, 0.5], [0.5, 0.5]) == 0.0
    m, v = oracle.gaussian_bayes(1.0, 0.0, 1.0, 1.0, 1.0, 1.0)
    assert m == pytest.approx(0.5) and v == pytest.approx(0.5)
