"""Train a sliding-block controller with natural actor-critic and compare it to exhaustive search.

The exact value of every iterate is available here because the joint chain
is tiny, so the learning curve below is noise-free even though training
itself only sees sampled trajectories.

    python3 demos/train_two_state.py
"""
import math

import numpy as np

from pomdp_nac import ActorConfig, CriticConfig, FscPolicy, run_nac, sliding_block, tabular_features, two_state_noisy
from pomdp_nac.oracle import best_fsc_bruteforce, exact_q

model = two_state_noisy()
sb = sliding_block(1, model.n_obs, model.n_actions)
feats = tabular_features(model.n_obs, sb.n_z, model.n_actions)

best_table, best_value = best_fsc_bruteforce(model, sb)
uniform_value = exact_q(FscPolicy.uniform(feats, sb), model, sb).value_xi

actor = ActorConfig(T=30, N=5000, R=model.v_max)
critic = CriticConfig(m=4, K=20000, R=math.sqrt(feats.dim) * model.v_max, features=feats)
policy, log = run_nac(model, sb, actor, critic, rng=np.random.default_rng(1), reference=best_table)

print(f"uniform policy       {uniform_value:.4f}")
print(f"best deterministic   {best_value:.4f}")
print("\n  t   V(pi_t)   KL to best")
for rec in log.records[::5]:
    print(f"{rec.t:3d}   {rec.value:.4f}    {rec.kl_potential:.4f}")
print(f"final {log.final_value:.4f}")

print("\ngreedy action per (observation, window):")
print(policy.table().argmax(-1))
print("best deterministic controller:")
print(best_table.argmax(-1))
