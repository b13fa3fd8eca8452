import numpy as np
import pytest

from pomdp_nac.benchmarks import random_pomdp, two_state_noisy
from pomdp_nac.controllers import FscPolicy, sliding_block, tabular_features


@pytest.fixture
def tsn():
    return two_state_noisy()


@pytest.fixture
def sbc1():
    return sliding_block(1, 2, 2)


@pytest.fixture
def uniform1(sbc1):
    return FscPolicy.uniform(tabular_features(2, sbc1.n_z, 2), sbc1)


def random_policy(internal, n_obs, n_actions, rng, scale=1.0):
    feats = tabular_features(n_obs, internal.n_z, n_actions)
    return FscPolicy(scale * rng.standard_normal(feats.dim), feats, internal)


def one_state(gamma=0.9, reward=1.0):
    from pomdp_nac.model import PomdpModel

    return PomdpModel(np.ones((1, 1, 1)), np.ones((1, 1)), np.full((1, 1), reward), gamma)


def small_mdp(seed=0, gamma=0.9, n=3, nu=2):
    from pomdp_nac.benchmarks import fully_observed

    rng = np.random.default_rng(seed)
    return fully_observed(rng.dirichlet(np.ones(n), size=(n, nu)), rng.random((n, nu)), gamma)


__all__ = ["random_policy", "one_state", "small_mdp", "random_pomdp"]
