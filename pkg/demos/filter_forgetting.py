"""The Bayes filter forgets its prior, and a certificate says how fast.

Two filters start from opposite point masses and read the same observation
and action stream.  Their total-variation gap is compared with the
geometric envelope certified by the persistence-of-excitation and
minorization checks.

    python3 demos/filter_forgetting.py
"""
import numpy as np

from pomdp_nac import sliding_block, two_state_noisy
from pomdp_nac.oracle import best_fsc_bruteforce
from pomdp_nac.stability import certify, contraction_experiment

model = two_state_noisy()
sb = sliding_block(1, model.n_obs, model.n_actions)

# a deterministic controller has no excitation, so soften the best one
best, _ = best_fsc_bruteforce(model, sb)
policy = 0.8 * best + 0.2 * (1 - best)

cert = certify(policy, model, m0=1)
print(f"alpha={cert.alpha:.3f}  eps0={cert.eps0:.3f}  per-block rate {1 - cert.kernel_constant:.3f}")

res = contraction_experiment(model, policy, sb, [1, 2, 4, 8, 16], priors=([1.0, 0.0], [0.0, 1.0]),
                             samples=10000, rng=np.random.default_rng(0), certificate=cert, chain_checks=100)
print("\n  n   mean TV    max TV    envelope")
for n, mean, top, env in zip(res.n_list, res.tv_mean, res.tv_max, res.envelope):
    print(f"{n:3d}   {mean:.5f}   {top:.5f}   {env:.5f}")
print(f"\nwithin envelope: {res.within_envelope}, monotone: {res.monotone}, "
      f"smoothing-kernel chain violations: {res.chain_violations}/{res.chain_checked}")
