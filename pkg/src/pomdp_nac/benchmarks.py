"""Built-in benchmark models."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PomdpModel

KINDS = ("two_state_noisy", "random_pomdp", "fully_observed")


def two_state_noisy(gamma: float = 0.9) -> PomdpModel:
    """Two hidden states seen through an 80%-accurate channel.

    Action 0 keeps the state with probability 0.9, action 1 flips it with
    probability 0.9; reward 1 in state 1.
    """
    P = np.array([[[0.9, 0.1], [0.1, 0.9]],
                  [[0.1, 0.9], [0.9, 0.1]]])
    Phi = np.array([[0.8, 0.2], [0.2, 0.8]])
    r = np.array([[0.0, 0.0], [1.0, 1.0]])
    return PomdpModel(P, Phi, r, gamma, name="two_state_noisy")


def random_pomdp(n_states: int, n_actions: int, n_obs: int, seed: int, gamma: float = 0.9) -> PomdpModel:
    """Dirichlet(1) transition and channel rows, uniform rewards in [0, 1)."""
    rng = np.random.default_rng(seed)
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    Phi = rng.dirichlet(np.ones(n_obs), size=n_states)
    r = rng.random((n_states, n_actions))
    return PomdpModel(P, Phi, r, gamma, r_max=1.0, name=f"random_pomdp_{n_states}_{n_actions}_{n_obs}_{seed}")


def fully_observed(transition, reward, gamma: float, r_max=None) -> PomdpModel:
    """MDP embedded as a POMDP with the identity channel."""
    P = np.asarray(transition, dtype=float)
    return PomdpModel(P, np.eye(P.shape[0]), reward, gamma, r_max=r_max, name="fully_observed")


@dataclass(frozen=True)
class BenchmarkGenerator:
    kind: str
    params: dict = field(default_factory=dict)


def generate_benchmark(spec) -> PomdpModel:
    """Build a model from a :class:`BenchmarkGenerator` or an equivalent dict."""
    if isinstance(spec, dict):
        spec = BenchmarkGenerator(spec["kind"], {k: v for k, v in spec.items() if k != "kind"})
    p = dict(spec.params)
    if spec.kind == "two_state_noisy":
        return two_state_noisy(p.get("gamma", 0.9))
    if spec.kind == "random_pomdp":
        return random_pomdp(int(p["states"]), int(p["actions"]), int(p["observations"]),
                            int(p["seed"]), p.get("gamma", 0.9))
    if spec.kind == "fully_observed":
        return fully_observed(p["transition"], p["reward"], p["gamma"], p.get("r_max"))
    raise ValueError(f"unknown benchmark kind {spec.kind!r}; expected one of {KINDS}")
