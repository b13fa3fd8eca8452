"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from pomdp_nac.actor import ActorConfig, cfa_loss, cfa_loss_gradient, run_nac
from pomdp_nac.benchmarks import fully_observed, random_pomdp, two_state_noisy
from pomdp_nac.controllers import FeatureMap, FscPolicy, action_probs, log_policy_gradient, sliding_block, \
    tabular_features
from pomdp_nac.critic import CriticConfig, run_mstep_td
from pomdp_nac.model import filter_n, filter_step
from pomdp_nac.oracle import (JointChain, best_fsc_bruteforce, exact_q, exact_visitation, fixed_point_q,
                              inference_error, pdl_check)
from pomdp_nac.sampling import WarmStart
from pomdp_nac.stability import certify, contraction_experiment, left_multiply


@pytest.fixture
def report(capsys):
    def emit(number, name, ok, detail, seconds, limit):
        within = seconds < limit
        verdict = "PASS" if ok and within else "FAIL"
        with capsys.disabled():
            print(f"\n[criterion {number:2d}] {verdict} {name}: {detail} ({seconds:.1f}s, limit {limit}s)")
        return ok and within
    return emit


def tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def test_filter_correctness(report):
    start = time.perf_counter()
    rng = np.random.default_rng(100)
    models = [random_pomdp(int(rng.integers(2, 6)), 2, 3, int(s)) for s in rng.integers(0, 10**6, 20)]
    worst_norm = 0.0
    for i in range(10**4):
        m = models[i % len(models)]
        b = rng.dirichlet(np.ones(m.n_states))
        out = filter_step(b, int(rng.integers(m.n_obs)), int(rng.integers(m.n_actions)), m)
        worst_norm = max(worst_norm, abs(out.probs.sum() - 1.0))
    worst_comp = 0.0
    for i in range(500):
        m = models[i % len(models)]
        n = int(rng.integers(1, 8))
        ys, us = rng.integers(0, m.n_obs, n), rng.integers(0, m.n_actions, n)
        k = int(rng.integers(0, n + 1))
        b0 = rng.dirichlet(np.ones(m.n_states))
        split = filter_n(filter_n(b0, ys[:k], us[:k], m), ys[k:], us[k:], m)
        worst_comp = max(worst_comp, float(np.abs(filter_n(b0, ys, us, m).probs - split.probs).max()))
    ok = worst_norm <= 1e-9 and worst_comp <= 1e-10
    assert report(1, "filter correctness", ok, f"max |sum-1|={worst_norm:.1e}, max composition gap={worst_comp:.1e}",
                  time.perf_counter() - start, 5)


def test_td0_recovery_fully_observed(report):
    start = time.perf_counter()
    rng = np.random.default_rng(3)
    model = fully_observed(rng.dirichlet(np.ones(3), size=(3, 2)), rng.random((3, 2)), 0.9, r_max=1.0)
    sb = sliding_block(0, 3, 2)
    feats = tabular_features(3, 1, 2)
    pol = FscPolicy.uniform(feats, sb)
    chain = JointChain(model, sb)
    q = exact_q(pol, model, sb, chain=chain).q
    w = exact_visitation(pol, model, sb, chain=chain).d_pi
    cfg = CriticConfig(1, 10**5, 2 * model.r_max / (1 - model.gamma), feats)
    errs = []
    for seed in range(5):
        est = run_mstep_td(pol, model, cfg, rng=np.random.default_rng(seed), sampler=chain.sampler)
        errs.append(math.sqrt(float((w * (est.q_table() - q) ** 2).sum())))
    tol = 0.05 * model.v_max
    ok = float(np.mean(errs)) <= tol
    assert report(2, "TD(0) recovery", ok, f"mean error {np.mean(errs):.4f} vs tolerance {tol:.4f}"
                  f" (alpha=1/sqrt(K))", time.perf_counter() - start, 60)


def test_fixed_point_gap_decay(report):
    start = time.perf_counter()
    model = two_state_noisy()
    sb = sliding_block(1, 2, 2)
    pol = FscPolicy.uniform(tabular_features(2, sb.n_z, 2), sb)
    chain = JointChain(model, sb)
    q = exact_q(pol, model, sb, chain=chain).q
    ms = np.array([1, 2, 4, 8])
    gaps = np.array([np.abs(fixed_point_q(pol, model, sb, int(m), chain=chain) - q).max() for m in ms])
    slope = float(np.polyfit(ms, np.log(gaps), 1)[0])
    ok = slope <= math.log(model.gamma) + 0.1
    assert report(3, "fixed-point gap decay", ok,
                  f"gaps {np.array2string(gaps, precision=4)}, slope {slope:.4f} <= {math.log(0.9) + 0.1:.4f}",
                  time.perf_counter() - start, 10)


def test_critic_error_trend(report):
    start = time.perf_counter()
    model = two_state_noisy()
    sb = sliding_block(1, 2, 2)
    feats = tabular_features(2, sb.n_z, 2)
    pol = FscPolicy.uniform(feats, sb)
    m = 2
    chain = JointChain(model, sb)
    q_star = fixed_point_q(pol, model, sb, m, chain=chain)
    w = exact_visitation(pol, model, sb, chain=chain).d_pi
    R = math.sqrt(feats.dim) * model.v_max
    means = []
    for K in (10**3, 10**4, 10**5):
        errs = []
        for seed in range(10):
            est = run_mstep_td(pol, model, CriticConfig(m, K, R, feats), rng=np.random.default_rng([K, seed]),
                               sampler=chain.sampler)
            errs.append(math.sqrt(float((w * (est.q_table() - q_star) ** 2).sum())))
        means.append(float(np.mean(errs)))
    ratios = [means[0] / means[1], means[1] / means[2]]
    ok = all(r >= 1.15 for r in ratios)
    assert report(4, "critic error trend in K", ok,
                  f"mean errors {', '.join(f'{v:.4f}' for v in means)}; ratios {ratios[0]:.2f}, {ratios[1]:.2f}",
                  time.perf_counter() - start, 300)


def test_filter_contraction_envelope(report):
    start = time.perf_counter()
    model = two_state_noisy()
    sb = sliding_block(1, 2, 2)
    feats = tabular_features(2, sb.n_z, 2)
    # proxy for the optimal policy: the final iterate of NAC with exact advantages
    policy, _ = run_nac(model, sb, ActorConfig(20, 2000, model.v_max), CriticConfig(1, 10, 1.0, feats),
                        rng=np.random.default_rng(5), exact_advantage=True)
    cert = certify(policy, model, 1)
    res = contraction_experiment(model, policy, sb, [1, 2, 4, 8, 16], priors=([1.0, 0.0], [0.0, 1.0]),
                                 samples=10**4, rng=np.random.default_rng(6), certificate=cert)
    ok = res.within_envelope and res.monotone
    detail = (f"eps0={cert.eps0:.4f}, tv {np.array2string(res.tv_mean, precision=4)} vs envelope "
              f"{np.array2string(res.envelope, precision=4)}")
    assert report(5, "filter contraction", ok, detail, time.perf_counter() - start, 60)


def test_left_multiplication_properties(report):
    start = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_expand, worst_contract = -np.inf, -np.inf
    for _ in range(10**4):
        n = int(rng.integers(2, 6))
        v, u = rng.dirichlet(np.ones(n), size=2)
        K = rng.dirichlet(np.ones(n), size=n)
        worst_expand = max(worst_expand, tv(left_multiply(v, K), left_multiply(u, K)) - tv(v, u))
        eps = rng.uniform(0.01, 0.99)
        Km = eps * rng.dirichlet(np.ones(n)) + (1 - eps) * K
        worst_contract = max(worst_contract, tv(left_multiply(v, Km), left_multiply(u, Km)) - (1 - eps) * tv(v, u))
    ok = worst_expand <= 1e-12 and worst_contract <= 1e-12
    assert report(6, "left multiplication", ok,
                  f"max expansion {worst_expand:.1e}, max excess over (1-eps0) {worst_contract:.1e}",
                  time.perf_counter() - start, 5)


def test_performance_difference_inequality(report):
    start = time.perf_counter()
    held, margins = 0, []
    for i in range(20):
        model = random_pomdp(3, 2, 2, 1000 + i)
        sb = sliding_block(1, 2, 2)
        feats = tabular_features(2, sb.n_z, 2)
        rng = np.random.default_rng(i)
        a = FscPolicy(rng.standard_normal(feats.dim), feats, sb)
        b = FscPolicy(rng.standard_normal(feats.dim), feats, sb)
        res = pdl_check(a, b, model, sb, samples=10**4, rng=rng)
        held += res.holds
        margins.append(res.lhs - res.rhs_worst)
    ok = held == 20
    assert report(7, "performance difference inequality", ok,
                  f"{held}/20 hold, smallest margin {min(margins):.4f}", time.perf_counter() - start, 300)


def test_nac_improvement(report):
    start = time.perf_counter()
    model = two_state_noisy()
    sb = sliding_block(1, 2, 2)
    feats = tabular_features(2, sb.n_z, 2)
    chain = JointChain(model, sb)
    v_uniform = exact_q(FscPolicy.uniform(feats, sb), model, sb, chain=chain).value_xi
    _, v_best = best_fsc_bruteforce(model, sb, chain=chain)
    actor = ActorConfig(50, 10**4, model.v_max)
    critic = CriticConfig(4, 5 * 10**4, math.sqrt(feats.dim) * model.v_max, feats)
    best_iterates = []
    for seed in range(5):
        _, log = run_nac(model, sb, actor, critic, rng=np.random.default_rng(seed), oracle="on")
        best_iterates.append(max(log.values().max(), log.final_value))
    mean = float(np.mean(best_iterates))
    ok = mean >= v_uniform + 0.05 * model.v_max and mean >= 0.9 * v_best
    assert report(8, "NAC improvement", ok,
                  f"best-iterate mean {mean:.4f}, uniform {v_uniform:.4f} (+{0.05 * model.v_max:.2f} needed), "
                  f"brute-force best {v_best:.4f} (90% = {0.9 * v_best:.4f})", time.perf_counter() - start, 900)


def test_gradient_checks(report):
    start = time.perf_counter()
    rng = np.random.default_rng(9)
    sb = sliding_block(1, 2, 3)
    eps = 1e-5
    worst_score = worst_cfa = 0.0
    for _ in range(100):
        psi = rng.standard_normal((2, sb.n_z, 3, 6))
        psi /= np.maximum(1.0, np.linalg.norm(psi, axis=-1, keepdims=True))
        feats = FeatureMap(psi)
        theta = rng.standard_normal(6)
        pol = FscPolicy(theta, feats, sb)
        y, z, u = int(rng.integers(2)), int(rng.integers(sb.n_z)), int(rng.integers(3))
        g = log_policy_gradient(pol, y, z, u)
        fd = np.array([(math.log(action_probs(pol.with_theta(theta + eps * e), y, z)[u])
                        - math.log(action_probs(pol.with_theta(theta - eps * e), y, z)[u])) / (2 * eps)
                       for e in np.eye(6)])
        worst_score = max(worst_score, np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-12))
        adv = rng.standard_normal((2, sb.n_z, 3))
        w = rng.standard_normal(6)
        gl = cfa_loss_gradient(w, (y, z, u), pol, adv)
        fdl = np.array([(cfa_loss(w + eps * e, (y, z, u), pol, adv) - cfa_loss(w - eps * e, (y, z, u), pol, adv))
                        / (2 * eps) for e in np.eye(6)])
        worst_cfa = max(worst_cfa, np.linalg.norm(gl - fdl) / max(np.linalg.norm(fdl), 1e-12))
    ok = worst_score <= 1e-5 and worst_cfa <= 1e-5
    assert report(9, "gradient checks", ok, f"max relative error: score {worst_score:.1e}, loss {worst_cfa:.1e}",
                  time.perf_counter() - start, 5)


def test_sampler_fidelity(report):
    start = time.perf_counter()
    model = two_state_noisy()
    sb = sliding_block(2, 2, 2)
    feats = tabular_features(2, sb.n_z, 2)
    pol = FscPolicy(np.random.default_rng(10).standard_normal(feats.dim), feats, sb)
    chain = JointChain(model, sb, WarmStart(2))
    n = 10**5
    rng = np.random.default_rng(11)
    _, y, z, _ = chain.sampler.visitation(pol, n, rng)
    d_hat = np.bincount(y * sb.n_z + z, minlength=2 * sb.n_z) / n
    tv_d = tv(d_hat, exact_visitation(pol, model, sb, chain=chain).d.ravel())
    _, y, z, _ = chain.sampler.h0(n, rng, track_belief=False)
    xi_hat = np.bincount(y * sb.n_z + z, minlength=2 * sb.n_z) / n
    tv_xi = tv(xi_hat, chain.law.xi.ravel())
    ok = tv_d <= 0.02 and tv_xi <= 0.02
    assert report(10, "sampler fidelity", ok, f"TV visitation {tv_d:.4f}, TV initial law {tv_xi:.4f}",
                  time.perf_counter() - start, 60)


def test_inference_error_shrinks_with_memory(report):
    start = time.perf_counter()
    model = two_state_noisy()
    est = {}
    for n in (1, 4):
        sb = sliding_block(n, 2, 2)
        pol = FscPolicy.uniform(tabular_features(2, sb.n_z, 2), sb)
        est[n] = inference_error(pol, model, sb, WarmStart(n), samples=10**5, rng=np.random.default_rng(n))
    hi4 = est[4].mean + 3 * est[4].stderr
    lo1 = est[1].mean - 3 * est[1].stderr
    ok = hi4 < lo1
    assert report(11, "inference error vs memory", ok,
                  f"n=4: {est[4].mean:.4f}+-{3 * est[4].stderr:.4f}, n=1: {est[1].mean:.4f}+-{3 * est[1].stderr:.4f}",
                  time.perf_counter() - start, 300)
