import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from difflab import categorical as cat
from difflab import ctmc, oracle, verify
from difflab.categorical import NoiseDistribution
from difflab.errors import CapacityError, SupportError
from difflab.schedule import FAMILIES, NoiseSchedule

from conftest import simplex

LIN = NoiseSchedule("linear-alpha")


def _rate(s, n):
    return lambda t: ctmc.rate_from_schedule(s, n, t)


@given(st.sampled_from(FAMILIES), st.sampled_from(["uniform", "mask", "mixture"]), st.floats(0.01, 0.99))
def test_schedule_rates_are_valid(family, kind, t):
    R = ctmc.rate_from_schedule(NoiseSchedule(family), verify._noise(kind, 4), t)
    off = R - np.diag(np.diag(R))
    assert off.min() >= -1e-12 and np.max(np.abs(R.sum(axis=0))) < 1e-10


def test_rate_examples():
    R = ctmc.rate_from_schedule(LIN, NoiseDistribution.uniform(2), 0.5)
    assert np.allclose(R, [[-1, 1], [1, -1]], atol=1e-14)
    flat = NoiseSchedule("linear-alpha", {"t0": 0.2, "t1": 0.8})
    assert np.all(ctmc.rate_from_schedule(flat, NoiseDistribution.uniform(3), 0.1) == 0)
    assert np.all(ctmc.rate_finite_difference(flat, NoiseDistribution.uniform(3), 0.1, 0.01) == 0)
    R = ctmc.rate_from_schedule(LIN, NoiseDistribution.mask(3), 0.4)
    off = R - np.diag(np.diag(R))
    assert np.all(off[:3] == 0) and np.all(off[3, :3] > 0)
    with pytest.raises(ValueError):
        ctmc.check_rate(np.array([[-1.0, -0.5], [1.0, 0.5]]))


def test_finite_difference_rate():
    n = NoiseDistribution.uniform(4)
    err = np.abs(ctmc.rate_finite_difference(LIN, n, 0.5, 1e-4) - ctmc.rate_from_schedule(LIN, n, 0.5)).max()
    assert err <= 1e-3
    rec = verify.Recorder()
    verify.rate_limit_order(rec)
    assert all(c["status"] == "pass" for c in rec.checks), rec.checks
    with pytest.raises(ValueError):
        ctmc.rate_finite_difference(LIN, n, 0.01, 0.1)


def test_master_equation(rng):
    q0 = simplex(rng, 4)
    assert np.array_equal(ctmc.integrate_master(lambda t: np.zeros((4, 4)), q0, 0, 1), q0)
    for fam in FAMILIES:
        s = NoiseSchedule(fam)
        for n in (NoiseDistribution.uniform(4), NoiseDistribution.mask(3)):
            q = ctmc.integrate_master(_rate(s, n), np.eye(n.size)[1], 0.0, 0.8, 256)
            assert np.abs(q - cat.forward_marginal(1, float(s.alpha(0.8)), n)).max() < 1e-8
    s = NoiseSchedule("cosine")
    n = NoiseDistribution.uniform(4)
    q0 = cat.forward_marginal(1, float(s.alpha(0.1)), n)
    ref = cat.window_matrix(float(s.alpha(0.1)), float(s.alpha(0.9)), n) @ q0
    e64, e128 = (np.abs(ctmc.integrate_master(_rate(s, n), q0, 0.1, 0.9, k, renormalize=False) - ref).max()
                 for k in (64, 128))
    assert 12 < e64 / e128 < 20
    with pytest.raises(ValueError):
        ctmc.integrate_master(_rate(s, n), q0, 0, 1, 0)


def test_reverse_rate_properties(rng):
    R = rng.random((4, 4))
    R = ctmc.close_columns(R + R.T)
    assert np.allclose(ctmc.reverse_rate(R, np.full(4, 0.25)), R, atol=1e-14)
    q = simplex(rng, 4)
    Rh = ctmc.reverse_rate(R, q)
    assert np.max(np.abs(Rh.sum(axis=0))) < 1e-12
    with pytest.raises(SupportError):
        ctmc.reverse_rate(R, np.array([0.5, 0.5, 0.0, 0.0]))


def test_posterior_parameterisation_of_the_reverse_rate(rng):
    n = NoiseDistribution.uniform(4)
    a = 0.4
    q_data = simplex(rng, 4)
    Qt = cat.interpolation_matrix(a, n)
    R = ctmc.rate_from_schedule(LIN, n, 0.6)
    got = ctmc.reverse_rate_posterior(R, Qt, q_data)
    assert np.max(np.abs(got - ctmc.reverse_rate(R, Qt @ q_data))) < 1e-12


def test_round_trip_and_detailed_balance_family():
    rec = verify.Recorder()
    verify.reversal_round_trip(rec)
    assert all(c["status"] == "pass" for c in rec.checks), rec.checks


def test_detailed_balance_family_properties(rng):
    n = NoiseDistribution.uniform(4)
    q = simplex(rng, 4)
    m = rng.random((4, 4))
    C = ctmc.symmetrized_perturbation(q, m + m.T)
    Rh = ctmc.reverse_rate(ctmc.rate_from_schedule(LIN, n, 0.5), q)
    assert np.array_equal(ctmc.detailed_balance_family(Rh, q, 0.0, C), Rh)
    F = ctmc.detailed_balance_family(Rh, q, 2.0, C)
    assert np.max(np.abs(F.sum(axis=0))) < 1e-12
    assert np.max(np.abs(F @ q - Rh @ q)) < 1e-12
    with pytest.raises(ValueError):
        ctmc.detailed_balance_family(Rh, q, -1.0, C)

    s = LIN
    q0 = simplex(rng, 4)

    def qt(t):
        return cat.interpolation_matrix(float(s.alpha(t)), n) @ q0

    outs = []
    for gamma in (0.0, 2.0):
        def fam(u, g=gamma):
            qq = qt(0.9 - u)
            Cq = ctmc.symmetrized_perturbation(qq, m + m.T)
            return ctmc.detailed_balance_family(ctmc.reverse_rate(ctmc.rate_from_schedule(s, n, 0.9 - u), qq), qq, g, Cq)
        outs.append(ctmc.integrate_master(fam, qt(0.9), 0.0, 0.5, 256))
    assert np.max(np.abs(outs[0] - outs[1])) < 1e-7


def test_kronecker_sum(rng):
    R = ctmc.close_columns(rng.random((3, 3)))
    assert np.array_equal(ctmc.kron_sum_dense(ctmc.SequenceRateSpec((R,))), R)
    R2 = np.array([[-1.0, 2.0], [1.0, -2.0]])
    L = ctmc.kron_sum_dense(ctmc.SequenceRateSpec.identical(R2, 2))
    assert np.allclose(L, oracle.literal_kron_sum([R2, R2]))
    assert L[0, 3] == L[3, 0] == L[1, 2] == L[2, 1] == 0.0
    rec = verify.Recorder()
    verify.kron_equivalence(rec)
    assert all(c["status"] == "pass" for c in rec.checks), rec.checks


def test_factorised_reverse_rates_under_a_product_law(rng):
    R = ctmc.rate_from_schedule(LIN, NoiseDistribution.uniform(3), 0.5)
    spec = ctmc.SequenceRateSpec.identical(R, 3)
    margs = [simplex(rng, 3) for _ in range(3)]
    x = (0, 2, 1)
    got = ctmc.reverse_rate_factorized(spec, margs, x)
    dense = ctmc.reverse_rate_factorized(spec, ctmc.product_distribution(margs), x)
    assert np.max(np.abs(got - dense)) < 1e-14
    for k in range(3):
        one = ctmc.reverse_rate(R, margs[k])
        for y in range(3):
            assert got[k, y] == pytest.approx(0.0 if y == x[k] else one[y, x[k]], abs=1e-14)


def test_sequence_spec_validation(monkeypatch):
    with pytest.raises(ValueError):
        ctmc.SequenceRateSpec((np.zeros((2, 2)), np.zeros((3, 3))))
    monkeypatch.setenv("DIFFLAB_DENSE_CAP", "16")
    with pytest.raises(CapacityError):
        ctmc.kron_sum_dense(ctmc.SequenceRateSpec.identical(np.zeros((3, 3)), 3))


def test_simulation_basics():
    finals, events = ctmc.simulate_batch(lambda t: np.zeros((3, 3)), 2, np.array([1, 2]), 1.0, 50, 0)
    assert np.all(finals == [1, 2]) and all(len(e[0]) == 0 for e in events)
    n = NoiseDistribution.mask(4)
    finals, events = ctmc.simulate_batch(ctmc.interpolation_rate(LIN, n), 3, np.array([0, 1, 2]), 1.0, 500, 1)
    for t, k, s in events:
        assert np.all(s == 4)  # a coordinate only ever jumps into MASK
        assert len(np.unique(k)) == len(k)  # and never leaves it
        assert np.all(np.diff(t) >= 0)


def test_simulation_marginals_and_job_independence():
    n = NoiseDistribution.mask(4)
    rate = ctmc.interpolation_rate(LIN, n)
    N = 50000
    finals, _ = ctmc.simulate_batch(rate, 2, np.array([0, 3]), 0.6, N, 2, jobs=1)
    for k, x0 in enumerate((0, 3)):
        law = cat.forward_marginal(x0, float(LIN.alpha(0.6)), n)
        emp = np.bincount(finals[:, k], minlength=5) / N
        se = np.sqrt(law * (1 - law) / N) + 1e-12
        assert np.all(np.abs(emp - law) <= 3 * se + 1e-12)
    again, _ = ctmc.simulate_batch(rate, 2, np.array([0, 3]), 0.6, N, 2, jobs=4)
    assert np.array_equal(finals, again)
    rec = verify.Recorder()
    verify.simulation_checks(rec)
    assert all(c["status"] == "pass" for c in rec.checks), rec.checks


def test_jump_path_serialisation():
    path = ctmc.simulate_exact(ctmc.interpolation_rate(LIN, NoiseDistribution.uniform(3)), 2, [0, 1], 1.0, 5, 0)
    lines = path.to_jsonl().splitlines()
    assert len(lines) == 1 + len(path.events)
    assert path.state_at(0.0) == (0, 1) or path.events[0][0] == 0.0


def test_masking_reverse_rate_reaches_the_clean_law():
    p = np.array([0.1, 0.2, 0.3, 0.4])
    for fam in FAMILIES:
        r = ctmc.masking_reverse_rate(NoiseSchedule(fam), p)
        u = np.linspace(0.05, 0.95, 7)
        assert np.max(np.abs(r.inverse_clock(r.clock(u)) - u)) < 1e-6
        finals, _ = ctmc.simulate_batch(r, 1, np.array([4]), 1.0, 40000, 3)
        emp = np.bincount(finals[:, 0], minlength=5)[:4] / 40000
        assert np.max(np.abs(emp - p)) < 4 * np.sqrt(0.25 / 40000)
    with pytest.raises(ValueError):
        ctmc.masking_reverse_rate(LIN, [0.5, 0.6])
