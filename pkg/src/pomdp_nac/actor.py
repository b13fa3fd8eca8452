"""Natural actor-critic outer loop over softmax finite-state controllers."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._loops import projected_sgd
from .controllers import FscPolicy, InternalStateSpec, log_policy_gradient, policy_table
from .critic import CriticConfig, DerivedValues, derived_values, run_mstep_td
from .errors import DimensionMismatch
from .model import PomdpModel
from .sampling import Sampler, WarmStart, _cdf, _draw


@dataclass(frozen=True)
class ActorConfig:
    """Outer-loop settings; ``eta`` and ``zeta`` default to ``1/sqrt(T)`` and ``R sqrt(1-g)/sqrt(2 N r_max)``."""

    T: int
    N: int
    R: float
    eta: Optional[float] = None
    zeta: Optional[float] = None

    def __post_init__(self):
        problems = [f"{k} must be positive" for k in ("T", "N", "R") if not getattr(self, k) > 0]
        problems += [f"{k} must be positive" for k in ("eta", "zeta")
                     if getattr(self, k) is not None and not getattr(self, k) > 0]
        if problems:
            raise ValueError("; ".join(problems))

    def policy_step(self) -> float:
        return self.eta if self.eta is not None else 1.0 / math.sqrt(self.T)

    def sgd_step(self, model: PomdpModel) -> float:
        if self.zeta is not None:
            return self.zeta
        return self.R * math.sqrt(1 - model.gamma) / math.sqrt(2 * self.N * model.r_max)


@dataclass
class IterationRecord:
    t: int
    value: float
    value_source: str
    sgd_loss_mean: float
    w_norm: float
    kl_potential: Optional[float]
    seconds: float


@dataclass
class NacRunLog:
    records: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    final_value: Optional[float] = None

    def __len__(self):
        return len(self.records)

    def values(self) -> np.ndarray:
        return np.array([r.value for r in self.records])

    def best(self):
        """``(t, value)`` of the best logged iterate, counting the final policy as ``t = T``."""
        vals = list(self.values())
        if self.final_value is not None:
            vals.append(self.final_value)
        t = int(np.argmax(vals))
        return t, float(vals[t])


def _advantage_table(advantage) -> np.ndarray:
    if isinstance(advantage, DerivedValues):
        return advantage.advantage
    return np.asarray(advantage, dtype=float)


def cfa_loss(w, sample, policy: FscPolicy, advantage) -> float:
    y, z, u = sample
    g = log_policy_gradient(policy, y, z, u)
    return float((g @ w - _advantage_table(advantage)[y, z, u]) ** 2)


def cfa_loss_gradient(w, sample, policy: FscPolicy, advantage) -> np.ndarray:
    """Per-sample gradient ``2(<g, w> - A) g`` of the compatible-approximation loss."""
    y, z, u = sample
    g = log_policy_gradient(policy, y, z, u)
    return 2.0 * (g @ np.asarray(w, dtype=float) - _advantage_table(advantage)[y, z, u]) * g


@dataclass
class SgdResult:
    w_avg: np.ndarray
    w_final: np.ndarray
    loss: np.ndarray
    max_norm: float


def sgd_inner_loop(policy: FscPolicy, advantage, N: int, zeta: float, R: float, sampler: Sampler, rng,
                   return_details: bool = False):
    """Projected SGD from ``w = 0`` on fresh ``(y, z) ~ d``, ``u ~ pi`` draws; returns the iterate average."""
    if N < 1:
        raise ValueError("N must be >= 1")
    table = policy.table()
    _, y, z, _ = sampler.visitation(policy, N, rng)
    u = _draw(_cdf(table)[y, z], rng)
    nz, nu = policy.internal.n_z, table.shape[-1]
    idx = (y * nz + z) * nu + u
    d = policy.features.dim
    score = np.ascontiguousarray(policy.score_table().reshape(-1, d))
    target = np.ascontiguousarray(_advantage_table(advantage).reshape(-1))
    w_avg, w_final, loss, max_norm = projected_sgd(score, target, idx, float(zeta), float(R))
    if return_details:
        return SgdResult(w_avg, w_final, loss, float(max_norm))
    return w_avg


def nac_update(theta, w_bar, eta: float) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    w_bar = np.asarray(w_bar, dtype=float)
    if theta.shape != w_bar.shape:
        raise DimensionMismatch(f"theta {theta.shape} vs w {w_bar.shape}")
    return theta + eta * w_bar


def kl_potential(pi_ref, pi, d_ref) -> float:
    """``sum_{y,z} d_ref(y,z) KL(pi_ref(.|y,z) || pi(.|y,z))``."""
    p = policy_table(pi_ref)
    q = policy_table(pi)
    d = np.asarray(d_ref, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return float(max(0.0, (d * terms.sum(axis=-1)).sum()))


def estimate_value(policy, sampler: Sampler, samples: int, rng, horizon: Optional[int] = None) -> float:
    """Monte Carlo ``V(xi)`` from truncated rollouts started at fresh warm starts."""
    gamma = sampler.model.gamma
    if horizon is None:
        horizon = math.ceil(math.log(1e-4 * (1 - gamma)) / math.log(gamma))
    x, y, z, _ = sampler.h0(samples, rng, track_belief=False)
    batch = sampler.rollout(policy, x, y, z, horizon, rng)
    return float((batch.rewards @ gamma ** np.arange(horizon)).mean())


def run_nac(model: PomdpModel, internal: InternalStateSpec, actor: ActorConfig, critic: CriticConfig,
            warm: Optional[WarmStart] = None, rng=None, oracle: str = "auto", exact_advantage: bool = False,
            reference=None, value_samples: int = 10**4, callback=None):
    """Alternate critic evaluation, compatible-approximation SGD and the parameter step.

    ``oracle`` controls value logging: ``"auto"`` uses exact solves when the
    joint space fits the dense-solve cap and Monte Carlo otherwise, ``"on"``
    forces exact solves and ``"off"`` forces Monte Carlo.  With
    ``exact_advantage`` the critic is replaced by the exact ``Q^pi``.
    ``reference`` (a policy table over the same ``(Y, Z, U)``) enables the
    KL-potential column.
    """
    from . import oracle as exact

    rng = rng if rng is not None else np.random.default_rng()
    sampler = Sampler(model, internal, warm)
    chain = None
    if oracle in ("auto", "on") or exact_advantage:
        try:
            chain = exact.JointChain(model, internal, sampler.warm)
        except Exception:
            if oracle == "on" or exact_advantage:
                raise
    chain = chain if oracle != "off" or exact_advantage else None
    d_ref = None
    if reference is not None and chain is not None:
        d_ref = exact.exact_visitation(reference, model, internal, chain=chain).d
    features = critic.features
    policy = FscPolicy.uniform(features, internal)
    eta, zeta = actor.policy_step(), actor.sgd_step(model)
    log = NacRunLog()

    def value_of(pol):
        if chain is not None and oracle != "off":
            return exact.exact_q(pol, model, internal, chain=chain).value_xi, "oracle"
        return estimate_value(pol, sampler, value_samples, rng), "mc"

    for t in range(actor.T):
        start = time.perf_counter()
        if exact_advantage:
            q = exact.exact_q(policy, model, internal, chain=chain).q
            values = derived_values(q, policy)
        else:
            est = run_mstep_td(policy, model, critic, rng=rng, sampler=sampler)
            values = derived_values(est, policy)
        sgd = sgd_inner_loop(policy, values, actor.N, zeta, actor.R, sampler, rng, return_details=True)
        value, source = value_of(policy)
        kl = kl_potential(reference, policy, d_ref) if d_ref is not None else None
        log.thetas.append(policy.theta.copy())
        policy = policy.with_theta(nac_update(policy.theta, sgd.w_avg, eta))
        rec = IterationRecord(t, value, source, float(sgd.loss.mean()), float(np.linalg.norm(sgd.w_avg)),
                              kl, time.perf_counter() - start)
        log.records.append(rec)
        if callback is not None:
            callback(rec)
    log.thetas.append(policy.theta.copy())
    log.final_value = value_of(policy)[0]
    return policy, log
