"""How much memory does an agent need on the two-state noisy benchmark?

Two knobs trade bias for cost.  The critic's lookahead m shrinks the gap
between its fixed point and the true values; the controller's window n
shrinks the inference error between the window posterior and the full
belief.  Both are computed here exactly or by Monte Carlo.

    python3 demos/memory_tradeoff.py
"""
import numpy as np

from pomdp_nac import FscPolicy, WarmStart, sliding_block, tabular_features, two_state_noisy
from pomdp_nac.oracle import JointChain, exact_q, fixed_point_q, inference_error

model = two_state_noisy()

# a fixed, slightly opinionated policy on a one-step window
sb = sliding_block(1, model.n_obs, model.n_actions)
feats = tabular_features(model.n_obs, sb.n_z, model.n_actions)
policy = FscPolicy(2.0 * np.random.default_rng(0).standard_normal(feats.dim), feats, sb)
chain = JointChain(model, sb)
q = exact_q(policy, model, sb, chain=chain).q

print("critic lookahead m  ->  max |Q_fixed_point - Q|")
for m in (1, 2, 4, 8):
    gap = np.abs(fixed_point_q(policy, model, sb, m, chain=chain) - q).max()
    print(f"  m={m}:  {gap:.5f}")

print("\nwindow length n  ->  discounted belief gap (uniform policy)")
for n in (0, 1, 2, 4):
    sbn = sliding_block(n, model.n_obs, model.n_actions)
    uni = FscPolicy.uniform(tabular_features(model.n_obs, sbn.n_z, model.n_actions), sbn)
    est = inference_error(uni, model, sbn, WarmStart(n), samples=20000, rng=np.random.default_rng(n))
    print(f"  n={n}:  {est.mean:.4f} +- {3 * est.stderr:.4f}  (truncation tail {est.tail:.1e})")
