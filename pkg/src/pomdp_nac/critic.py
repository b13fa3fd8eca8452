"""m-step TD critic with linear features and projection onto an l2 ball."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._loops import projected_td
from .controllers import FeatureMap, policy_table
from .model import PomdpModel
from .sampling import Sampler, TrajectoryRecord, WarmStart


@dataclass(frozen=True)
class CriticConfig:
    m: int
    K: int
    R: float
    features: FeatureMap
    alpha: Optional[float] = None

    def __post_init__(self):
        problems = []
        if int(self.m) < 1:
            problems.append("m must be >= 1")
        if int(self.K) < 1:
            problems.append("K must be >= 1")
        if not self.R > 0:
            problems.append("R must be > 0")
        if self.alpha is not None and not self.alpha > 0:
            problems.append("alpha must be > 0")
        if problems:
            raise ValueError("; ".join(problems))

    @property
    def step_size(self) -> float:
        return self.alpha if self.alpha is not None else 1.0 / math.sqrt(self.K)


@dataclass
class CriticEstimate:
    beta_avg: np.ndarray
    beta_final: np.ndarray
    M_const: float
    features: FeatureMap
    log: Optional[np.ndarray] = field(default=None, repr=False)  # columns |beta_t|, delta_t, |g_t|
    checkpoints: Optional[np.ndarray] = field(default=None, repr=False)  # running averages
    every: int = 0

    def q_table(self) -> np.ndarray:
        """``Q_bar(y, z, u) = <beta_avg, psi(y, z, u)>`` for every triple."""
        return self.features.psi @ self.beta_avg


def bound_constant(model: PomdpModel, m: int, R: float) -> float:
    """Sup bound on the semi-gradient norm: ``r_max (1-g^m)/(1-g) + (1+g^m) R``."""
    gm = model.gamma**m
    return model.r_max * (1 - gm) / (1 - model.gamma) + (1 + gm) * R


def project_ball(v, R: float) -> np.ndarray:
    if not R > 0:
        raise ValueError("R must be > 0")
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    return v if n <= R else v * (R / n)


def td_semigradient(beta, trajectory: TrajectoryRecord, features: FeatureMap, gamma: float) -> np.ndarray:
    """``(sum_k g^k r_k + g^m <beta, psi_m> - <beta, psi_0>) psi_0`` for one m-step record."""
    m = trajectory.steps
    ys, zs = trajectory.observations, trajectory.internal
    psi0 = features(ys[0], zs[0], trajectory.actions[0])
    psim = features(ys[m], zs[m], trajectory.final_action)
    ret = float(np.dot(gamma ** np.arange(m), trajectory.rewards))
    delta = ret + gamma**m * float(beta @ psim) - float(beta @ psi0)
    return delta * psi0


def run_mstep_td(policy, model: PomdpModel, config: CriticConfig, warm: Optional[WarmStart] = None,
                 rng=None, sampler: Optional[Sampler] = None, every: Optional[int] = None,
                 internal=None) -> CriticEstimate:
    """Projected m-step TD on ``K`` independent starts drawn from the visitation law.

    The policy is fixed during evaluation, so all ``K`` trajectories are
    drawn in one batch before the sequential parameter recursion.  With
    ``every`` set, the running average is also kept after each multiple of
    ``every`` iterations.  ``policy`` may be an explicit ``(Y, Z, U)`` table
    when ``internal`` or ``sampler`` supplies the controller.
    """
    rng = rng if rng is not None else np.random.default_rng()
    internal = internal or (sampler.internal if sampler is not None else policy.internal)
    sampler = sampler or Sampler(model, internal, warm)
    m, gamma = config.m, model.gamma
    batch = sampler.td_samples(policy, config.K, m, rng)
    nz, nu = internal.n_z, model.n_actions
    flat = (batch.observations * nz + batch.internal) * nu + batch.actions
    returns = batch.rewards @ (gamma ** np.arange(m))
    psi = np.ascontiguousarray(config.features.matrix())
    every = int(every) if every else config.K
    beta_avg, beta_final, log, marks = projected_td(psi, flat[:, 0], flat[:, m], returns, gamma**m,
                                                    config.step_size, float(config.R), every)
    return CriticEstimate(beta_avg, beta_final, bound_constant(model, m, config.R), config.features,
                          log, marks, every)


@dataclass
class DerivedValues:
    q: np.ndarray  # (Y, Z, U)
    v: np.ndarray  # (Y, Z)
    advantage: np.ndarray

    def Q(self, y, z, u):
        return self.q[y, z, u]

    def V(self, y, z):
        return self.v[y, z]

    def A(self, y, z, u):
        return self.advantage[y, z, u]


def derived_values(estimate, policy, features: Optional[FeatureMap] = None) -> DerivedValues:
    """``V = sum_u pi Q`` and ``A = Q - V`` from a critic estimate or an explicit Q table."""
    if isinstance(estimate, CriticEstimate):
        feats = features or estimate.features
        q = feats.psi @ estimate.beta_avg
    else:
        q = np.asarray(estimate, dtype=float)
    table = policy_table(policy)
    v = (table * q).sum(axis=-1)
    return DerivedValues(q, v, q - v[..., None])
