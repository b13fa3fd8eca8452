import itertools

import numpy as np
import pytest

from pomdp_nac.benchmarks import random_pomdp
from pomdp_nac.controllers import FscPolicy, sliding_block, tabular_features
from pomdp_nac.errors import DimensionMismatch, NotErgodic, SupportMismatch
from pomdp_nac.model import History, PomdpModel, filter_n
from pomdp_nac.oracle import best_fsc_bruteforce
from pomdp_nac.stability import (ErgodicityCertificate, backward_variables, block_law, certify, check_condition1,
                                 check_condition2, check_condition3, contraction_experiment, initial_posterior,
                                 left_multiply, minorization_constant, one_step_kernels, sandwich,
                                 smoothing_kernels, verify_kernel_minorization)

from conftest import random_policy


def sandwich_ok(c, nu, rows):
    return np.all(c * nu <= rows + 1e-12) and np.all(rows <= nu / c + 1e-12)


def test_condition1_uniform():
    alpha, mu = check_condition1(np.full((2, 3, 2), 0.5))
    assert alpha == pytest.approx(1.0) and np.allclose(mu, 0.5)


def test_condition1_matches_grid_search():
    rows = np.array([[0.5, 0.5], [0.25, 0.75]])
    alpha, mu = check_condition1(rows.reshape(2, 1, 2))
    assert sandwich_ok(alpha, mu, rows) and alpha < 1
    best = 0.0
    for p in np.arange(1, 1000) / 1000:
        m = np.array([p, 1 - p])
        best = max(best, min((rows / m).min(), (m / rows).min()))
    assert alpha >= best - 1e-12 and alpha == pytest.approx(best, abs=2e-3)


def test_condition1_support_mismatch():
    with pytest.raises(SupportMismatch):
        check_condition1(np.array([[1.0, 0.0], [0.0, 1.0]]).reshape(2, 1, 2))


def test_sandwich_random_rows_are_valid():
    rng = np.random.default_rng(0)
    for _ in range(50):
        rows = rng.dirichlet(np.ones(4), size=3)
        c, nu, _ = sandwich(rows)
        assert 0 < c <= 1 and nu.sum() == pytest.approx(1.0) and sandwich_ok(c, nu, rows)


def test_condition2_trivial_cases(tsn):
    one = PomdpModel(np.ones((1, 2, 1)), np.array([[0.3, 0.7]]), np.zeros((1, 2)), 0.9)
    eps0, nu = check_condition2(one, [0.5, 0.5], 2)
    assert eps0 == pytest.approx(1.0) and np.allclose(nu, block_law(one, [0.5, 0.5], 2).reshape(-1))
    same = PomdpModel(np.full((2, 2, 2), 0.5), np.full((2, 2), 0.5), np.zeros((2, 2)), 0.9)
    assert check_condition2(same, [0.5, 0.5], 1)[0] == pytest.approx(1.0)


def test_condition2_two_state_noisy_enumeration(tsn):
    eps0, nu = check_condition2(tsn, [0.5, 0.5], 1)
    table = np.zeros((2, 2, 2, 2))  # x0, u, y1, x1
    for x0, u, y1, x1 in itertools.product(range(2), repeat=4):
        table[x0, u, y1, x1] = 0.5 * tsn.transition[x0, u, x1] * tsn.channel[x1, y1]
    rows = table.reshape(2, -1)
    assert sandwich_ok(eps0, nu, rows)
    # no larger constant is feasible with the best reference measure
    lo, hi = rows.min(0), rows.max(0)
    assert eps0 == pytest.approx(min(np.sqrt((lo / hi).min()), 1 / hi.sum(), lo.sum()))


def test_condition2_not_ergodic():
    P = np.zeros((2, 1, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    m = PomdpModel(P, np.eye(2), np.zeros((2, 1)), 0.9)
    with pytest.raises(NotErgodic):
        check_condition2(m, [1.0], 1)


def test_condition3_cases(tsn, sbc1):
    one = PomdpModel(np.ones((1, 1, 1)), np.ones((1, 1)), np.zeros((1, 1)), 0.9)
    sb0 = sliding_block(0, 1, 1)
    eps0, _ = check_condition3(np.ones((1, 1, 1)), one, sb0, 1)
    assert eps0 == pytest.approx(1.0)
    uni = np.full((2, sbc1.n_z, 2), 0.5)
    with pytest.raises(NotErgodic):
        check_condition3(uni, tsn, sbc1, 1)
    eps0, ups = check_condition3(uni, tsn, sbc1, 2)
    from pomdp_nac.stability import joint_block_matrix
    T = joint_block_matrix(uni, tsn, sbc1, 2)
    assert 0 < eps0 <= 1 and sandwich_ok(eps0, ups, T)


def test_backward_variables_small_cases(tsn, sbc1, uniform1):
    bv = backward_variables(tsn, uniform1, History((0, 0), (), ()), sbc1)
    assert bv.beta.shape == (1, 2) and np.all(bv.beta == 1)
    pol = random_policy(sbc1, 2, 2, np.random.default_rng(0))
    h = History((1, 2), (0,), (1,))
    bv = backward_variables(tsn, pol, h)
    pi = pol.table()[1, 2, 1]
    for x0 in range(2):
        expect = pi * sum(tsn.transition[x0, 1, x1] * tsn.channel[x1, 0] for x1 in range(2))
        assert bv.beta[0, x0] == pytest.approx(expect, abs=1e-15)


def test_backward_variables_impossible_suffix():
    P = np.zeros((2, 1, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0
    m = PomdpModel(P, np.eye(2), np.zeros((2, 1)), 0.9)
    sb = sliding_block(0, 2, 1)
    pol = np.ones((2, 1, 1))
    bv = backward_variables(m, pol, History((0, 0), (1, 1), (0, 0)), sb)
    assert bv.beta[0, 0] == 0 and bv.beta[0, 1] == 1
    assert np.all((bv.beta >= 0) & (bv.beta <= 1))


def test_backward_variables_ignore_prior(tsn, uniform1, sbc1):
    # the recursion has no prior argument; the posterior does, and only through v0 * beta0
    h = History((0, 1), (1, 0, 1), (0, 1, 1))
    a = backward_variables(tsn, uniform1, h, sbc1).beta
    b = backward_variables(tsn, uniform1, h, sbc1).beta
    assert np.array_equal(a, b)
    p1 = initial_posterior([0.9, 0.1], backward_variables(tsn, uniform1, h, sbc1))
    assert p1.sum() == pytest.approx(1.0)


def test_uninformative_channel_kernel_is_transition():
    rng = np.random.default_rng(1)
    P = rng.dirichlet(np.ones(3), size=(3, 2))
    m = PomdpModel(P, np.full((3, 2), 0.5), np.zeros((3, 2)), 0.9)
    sb = sliding_block(0, 2, 2)
    pol = np.full((2, 1, 2), 0.5)
    h = History((0, 0), (1, 0, 1), (1, 0, 0))
    ks = one_step_kernels(m, h, backward_variables(m, pol, h, sb))
    for k, K in enumerate(ks):
        assert np.allclose(K.kappa, P[:, h.actions[k], :], atol=1e-12)


def test_block_kernels_compose(tsn, sbc1):
    pol = random_policy(sbc1, 2, 2, np.random.default_rng(2))
    h = History((0, 3), (1, 0, 0, 1), (1, 1, 0, 1))
    steps = one_step_kernels(tsn, h, backward_variables(tsn, pol, h))
    blocks = smoothing_kernels(tsn, pol, h, 2)
    assert len(blocks) == 2
    for ell, B in enumerate(blocks):
        assert np.allclose(B.kappa, steps[2 * ell].kappa @ steps[2 * ell + 1].kappa, atol=1e-12)
        assert np.allclose(B.kappa.sum(1), 1.0, atol=1e-10)
    single = smoothing_kernels(tsn, pol, History((0, 3), (1,), (1,)), 1)
    assert len(single) == 1


def test_posterior_through_kernels_reproduces_filter():
    m = random_pomdp(3, 2, 2, 4)
    sb = sliding_block(1, 2, 2)
    pol = random_policy(sb, 2, 2, np.random.default_rng(4))
    v0 = np.array([0.2, 0.5, 0.3])
    for n in (1, 2, 3):
        for ys in itertools.product(range(2), repeat=n):
            for us in itertools.product(range(2), repeat=n):
                h = History((0, 1), ys, us)
                bv = backward_variables(m, pol, h)
                p = initial_posterior(v0, bv)
                for K in one_step_kernels(m, h, bv):
                    p = left_multiply(p, K)
                assert np.allclose(p, filter_n(v0, ys, us, m).probs, atol=1e-10)


def test_left_multiply_basics():
    v = np.array([0.2, 0.8])
    assert np.allclose(left_multiply(v, np.eye(2)), v)
    K = np.array([[0.3, 0.7], [0.6, 0.4]])
    assert np.allclose(left_multiply([0.0, 1.0], K), K[1])
    with pytest.raises(DimensionMismatch):
        left_multiply([1.0], K)


def test_left_multiply_non_expansive():
    rng = np.random.default_rng(5)
    worst = -np.inf
    for _ in range(10**4):
        n = int(rng.integers(2, 5))
        v, w = rng.dirichlet(np.ones(n), size=2)
        K = rng.dirichlet(np.ones(n), size=n)
        before = 0.5 * np.abs(v - w).sum()
        after = 0.5 * np.abs(left_multiply(v, K) - left_multiply(w, K)).sum()
        worst = max(worst, after - before)
    assert worst <= 1e-12


def test_minorized_kernel_contracts():
    rng = np.random.default_rng(6)
    for _ in range(2000):
        n = 3
        eps = rng.uniform(0.05, 0.9)
        nu = rng.dirichlet(np.ones(n))
        K = eps * nu + (1 - eps) * rng.dirichlet(np.ones(n), size=n)
        assert minorization_constant(K) >= eps - 1e-12
        v, w = rng.dirichlet(np.ones(n), size=2)
        after = 0.5 * np.abs(left_multiply(v, K) - left_multiply(w, K)).sum()
        assert after <= (1 - eps) * 0.5 * np.abs(v - w).sum() + 1e-12


def test_minorization_constant_trivial():
    K = np.tile([0.2, 0.8], (3, 1))
    assert minorization_constant(K) == pytest.approx(1.0)
    assert minorization_constant(np.ones((1, 1))) == 1.0


def soft_best(tsn, sb):
    best, _ = best_fsc_bruteforce(tsn, sb)
    return 0.8 * best + 0.2 * (1 - best)


def test_kernel_minorization_on_random_histories(tsn, sbc1):
    pol = soft_best(tsn, sbc1)
    cert = certify(pol, tsn, 1)
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(1, 7))
        h = History((int(rng.integers(2)), int(rng.integers(sbc1.n_z))),
                    rng.integers(0, 2, n), rng.integers(0, 2, n))
        rep = verify_kernel_minorization(smoothing_kernels(tsn, pol, h, 1, sbc1), cert)
        assert rep.ok


def test_contraction_trivial_cases(tsn, sbc1, uniform1):
    res = contraction_experiment(tsn, uniform1, sbc1, [1, 2], priors=([0.5, 0.5], [0.5, 0.5]), samples=200,
                                 rng=np.random.default_rng(0))
    assert np.all(res.tv_mean == 0)
    noiseless = PomdpModel(tsn.transition, np.eye(2), tsn.reward, 0.9)
    res = contraction_experiment(noiseless, uniform1, sbc1, [1, 3], samples=200, rng=np.random.default_rng(1))
    assert np.all(res.tv_max == 0) and res.envelope is None and res.within_envelope


def test_contraction_within_envelope(tsn, sbc1):
    pol = soft_best(tsn, sbc1)
    cert = certify(pol, tsn, 1)
    res = contraction_experiment(tsn, pol, sbc1, [1, 2, 4, 8], samples=2000, rng=np.random.default_rng(2),
                                 certificate=cert, chain_checks=50)
    assert res.within_envelope and res.monotone
    assert res.chain_checked == 50 and res.chain_violations == 0


def test_certificate_envelope():
    cert = ErgodicityCertificate(0.5, np.array([0.5, 0.5]), 0.4, 2, None)
    assert cert.kernel_constant == pytest.approx(0.25 * 0.16)
    assert cert.envelope(5) == pytest.approx((1 - 0.04) ** 2)
