"""Exact ground truth on small instances.

Everything here works on the joint chain ``s = (x, y, z)`` that an FSC
induces; states are flattened in C order over ``(x, y, z)`` and state-action
pairs over ``(x, y, z, u)``.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .controllers import FeatureMap, InternalStateSpec, policy_table
from .errors import SearchSpaceTooLarge, SizeOverflow, SolveFailure, UnboundedRatio
from .model import PomdpModel, tv_rows
from .sampling import Sampler, WarmStart, _cdf, _draw, batch_filter

MAX_JOINT = 2 * 10**5
DENSE_SOLVE_MAX = 2500
MAX_ENUMERATION = 10**6


def default_horizon(gamma: float, tol: float = 1e-8) -> int:
    """Steps after which a discounted sum of terms in [0, 1] has tail <= ``tol``."""
    return math.ceil(math.log(tol * (1 - gamma)) / math.log(gamma))


def _solve(A, b):
    if sp.issparse(A):
        if A.shape[0] <= DENSE_SOLVE_MAX:
            out = np.linalg.solve(A.toarray(), b)
        else:
            out = spla.spsolve(A.tocsc(), b)
    else:
        out = np.linalg.solve(A, b)
    if not np.all(np.isfinite(out)):
        raise SolveFailure("linear solve produced non-finite values")
    return out


class JointChain:
    """Policy-independent pieces of the joint chain, reused across policies.

    ``step`` maps each state-action pair ``(x, y, z, u)`` to the law of the
    next ``(x', y', z')``; a policy table turns it into the state chain
    ``M = Pi @ step``.
    """

    def __init__(self, model: PomdpModel, internal: InternalStateSpec, warm: Optional[WarmStart] = None):
        nx, ny, nu, nz = model.n_states, model.n_obs, model.n_actions, internal.n_z
        if nx * ny * nz * nu > MAX_JOINT:
            raise SizeOverflow(f"joint space {nx}x{ny}x{nz}x{nu} exceeds the dense-solve cap")
        self.model, self.internal = model, internal
        self.sampler = Sampler(model, internal, warm)
        self.law = self.sampler.law
        self.dims = (nx, ny, nz, nu)
        self.n_s = nx * ny * nz
        P, Phi = model.transition, model.channel
        ez, ey, eu, ez2, ep = internal.entries()
        xs = np.arange(nx)
        # broadcast over (x, entry, x', y')
        val = (P[xs[:, None, None, None], eu[None, :, None, None], xs[None, None, :, None]]
               * Phi[None, None, :, :] * ep[None, :, None, None])
        rows = (((xs[:, None] * ny + ey[None, :]) * nz + ez[None, :]) * nu + eu[None, :])
        cols = (xs[:, None] * ny + np.arange(ny)[None, :])[None, None, :, :] * nz + ez2[None, :, None, None]
        rows = np.broadcast_to(rows[:, :, None, None], val.shape)
        cols = np.broadcast_to(cols, val.shape)
        keep = val.ravel() > 0
        self.step = sp.csr_matrix((val.ravel()[keep], (rows.ravel()[keep], cols.ravel()[keep])),
                                  shape=(self.n_s * nu, self.n_s))
        self.r_sa = np.broadcast_to(model.reward[:, None, None, :], (nx, ny, nz, nu)).reshape(-1)
        self.mu0 = self.law.joint.reshape(-1)
        prior = self.law.prior  # (Y, Z, X)
        yy, zz, xx, uu = np.indices((ny, nz, nx, nu)).reshape(4, -1)
        lift_rows = (yy * nz + zz) * nu + uu
        lift_cols = ((xx * ny + yy) * nz + zz) * nu + uu
        self.lift = sp.csr_matrix((prior[yy, zz, xx], (lift_rows, lift_cols)),
                                  shape=(ny * nz * nu, self.n_s * nu))
        self.marg = sp.csr_matrix((np.ones(lift_cols.size), (lift_cols, lift_rows)),
                                  shape=(self.n_s * nu, ny * nz * nu))

    def policy_matrix(self, table) -> sp.csr_matrix:
        nx, ny, nz, nu = self.dims
        pi = np.broadcast_to(table[None], (nx, ny, nz, nu)).reshape(self.n_s, nu)
        rows = np.repeat(np.arange(self.n_s), nu)
        cols = np.arange(self.n_s * nu)
        return sp.csr_matrix((pi.ravel(), (rows, cols)), shape=(self.n_s, self.n_s * nu))

    def state_matrix(self, table) -> sp.csr_matrix:
        return (self.policy_matrix(table) @ self.step).tocsr()

    def state_action_matrix(self, table) -> sp.csr_matrix:
        return (self.step @ self.policy_matrix(table)).tocsr()

    def _system(self, table):
        gamma = self.model.gamma
        if (1 + gamma) / (1 - gamma) > 1e12:
            raise SolveFailure("discount too close to one: condition number bound exceeds 1e12")
        return sp.identity(self.n_s, format="csr") - gamma * self.state_matrix(table)


@dataclass
class ValueTables:
    """Exact values of one policy: hidden-state ``Q0``/``V0`` and filtered ``Q``/``V``/``A``."""

    q0: np.ndarray  # (X, Y, Z, U)
    v0: np.ndarray  # (X, Y, Z)
    q: np.ndarray   # (Y, Z, U)
    v: np.ndarray   # (Y, Z)
    advantage: np.ndarray
    value_xi: float


@dataclass
class Visitation:
    d: np.ndarray           # (Y, Z)
    d_pi: np.ndarray        # (Y, Z, U)
    d_state: np.ndarray     # (X, Y, Z)


def _chain(model, internal, warm, chain):
    return chain if chain is not None else JointChain(model, internal, warm)


def exact_q(policy, model: PomdpModel, internal: InternalStateSpec, warm: Optional[WarmStart] = None,
            chain: Optional[JointChain] = None) -> ValueTables:
    """Solve ``(I - gamma M) V0 = r_pi`` and filter through the prior ``b0``."""
    ch = _chain(model, internal, warm, chain)
    table = policy_table(policy)
    nx, ny, nz, nu = ch.dims
    r_pi = ch.policy_matrix(table) @ ch.r_sa
    v0 = _solve(ch._system(table), r_pi)
    q0 = (ch.r_sa + model.gamma * (ch.step @ v0)).reshape(nx, ny, nz, nu)
    q = np.einsum("yzx,xyzu->yzu", ch.law.prior, q0)
    v = (table * q).sum(axis=-1)
    value_xi = float(ch.mu0 @ v0)
    return ValueTables(q0, v0.reshape(nx, ny, nz), q, v, q - v[..., None], value_xi)


def exact_visitation(policy, model: PomdpModel, internal: InternalStateSpec, warm: Optional[WarmStart] = None,
                     chain: Optional[JointChain] = None, start=None) -> Visitation:
    """``d = (1-gamma) mu0^T (I - gamma M)^{-1}``, marginalized to ``(y, z)``.

    ``start`` overrides the initial joint law (flattened over ``(x, y, z)``).
    """
    ch = _chain(model, internal, warm, chain)
    table = policy_table(policy)
    nx, ny, nz, nu = ch.dims
    mu0 = ch.mu0 if start is None else np.asarray(start).reshape(-1)
    d_state = _solve(ch._system(table).T.tocsr(), (1 - model.gamma) * mu0)
    d_state = np.clip(d_state, 0.0, None).reshape(nx, ny, nz)
    d = d_state.sum(axis=0)
    return Visitation(d, d[..., None] * table, d_state)


def shifted_visitation(policy, visitation: Visitation, m: int, chain: JointChain) -> np.ndarray:
    """Law of ``(y_m, z_m)`` when ``(y_0, z_0) ~ d`` and ``x_0 ~ b0(. | y_0, z_0)``."""
    table = policy_table(policy)
    M_T = chain.state_matrix(table).T.tocsr()
    mu = np.einsum("yz,yzx->xyz", visitation.d, chain.law.prior).reshape(-1)
    for _ in range(m):
        mu = M_T @ mu
    nx, ny, nz, _ = chain.dims
    return mu.reshape(nx, ny, nz).sum(axis=0)


def fixed_point_q(policy, model: PomdpModel, internal: InternalStateSpec, m: int,
                  warm: Optional[WarmStart] = None, chain: Optional[JointChain] = None,
                  return_residual: bool = False):
    """Solve ``Q = R_m + gamma^m P_m Q`` on ``(y, z, u)``.

    ``R_m`` and ``P_m`` start each block from ``x ~ b0(. | y, z)`` and are
    built by pushing the lifted start through ``m`` steps of the joint
    state-action chain.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    ch = _chain(model, internal, warm, chain)
    table = policy_table(policy)
    gamma = model.gamma
    step_T = ch.state_action_matrix(table).T.tocsr()
    A_T = ch.lift.T.toarray()  # (SU, YZU), columns are lifted starts
    r_m = np.zeros(A_T.shape[1])
    for k in range(m):
        r_m += gamma**k * (ch.r_sa @ A_T)
        A_T = step_T @ A_T
    P_m = (ch.marg.T @ A_T).T
    n = P_m.shape[0]
    q = np.linalg.solve(np.eye(n) - gamma**m * P_m, r_m)
    residual = float(np.abs(q - (r_m + gamma**m * P_m @ q)).max())
    if not np.isfinite(residual) or residual > 1e-8 * max(1.0, model.v_max):
        raise SolveFailure(f"fixed-point residual {residual:.3g} too large")
    q = q.reshape(table.shape)
    return (q, residual) if return_residual else q


def best_linear_fit(q_table, weights, features: FeatureMap, R: float):
    """Weighted least squares over the radius-``R`` ball.

    Returns ``(beta, error)`` with ``error = min ||q - <beta, psi>||_weights``.
    An inactive constraint gives the minimum-norm least-squares solution;
    an active one is solved through the secular equation
    ``||(A + lam I)^{-1} b|| = R``.
    """
    w = np.asarray(weights, dtype=float).reshape(-1)
    if abs(w.sum() - 1.0) > 1e-8 or np.any(w < 0):
        raise ValueError("weights must be a probability vector")
    q = np.asarray(q_table, dtype=float).reshape(-1)
    Psi = features.matrix()
    sw = np.sqrt(w)
    beta, *_ = np.linalg.lstsq(sw[:, None] * Psi, sw * q, rcond=None)
    if np.linalg.norm(beta) > R:
        A = Psi.T @ (w[:, None] * Psi)
        b = Psi.T @ (w * q)
        evals, evecs = np.linalg.eigh(A)
        evals = np.clip(evals, 0.0, None)
        c = evecs.T @ b

        def excess(lam):
            return np.linalg.norm(c / (evals + lam)) - R

        if R <= 0:
            beta = np.zeros_like(b)
        else:
            # root in log(lam): the norm spans many decades when R is small
            hi = max(1.0, np.linalg.norm(b) / R)
            while excess(hi) > 0:
                hi *= 2.0
            lo = hi
            while excess(lo) <= 0 and lo > 1e-300:
                lo *= 0.5
            if excess(lo) <= 0:
                lam = lo
            else:
                t = brentq(lambda s: excess(np.exp(s)), np.log(lo), np.log(hi), xtol=1e-13, rtol=1e-15)
                lam = np.exp(t)
            beta = evecs @ (c / (evals + lam))
        n = np.linalg.norm(beta)
        if n > R:
            beta *= R / n
    resid = q - Psi @ beta
    return beta, float(np.sqrt(w @ resid**2))


def compatible_fa_error(policy, model, internal, features: FeatureMap, R: float,
                        warm: Optional[WarmStart] = None, chain: Optional[JointChain] = None) -> float:
    ch = _chain(model, internal, warm, chain)
    vals = exact_q(policy, model, internal, chain=ch)
    vis = exact_visitation(policy, model, internal, chain=ch)
    return best_linear_fit(vals.q, vis.d_pi, features, R)[1]


def belief_gap_sums(sampler: Sampler, table, x, y, z, b, weights, rng, first_action=None):
    """Per-trajectory ``sum_k weights[k] * TV(b_k, b0(. | y_k, z_k))``.

    ``b_k`` is the exact full-history filter started from ``b``; the window
    posterior is read from the prior map ``b0`` (for sliding blocks this is
    the ``n``-step filter from the deterministic prior over the window).
    """
    model = sampler.model
    prior = sampler.law.prior
    pcdf = _cdf(table)
    acc = np.zeros(len(x))
    x, y, z, b = x.copy(), y.copy(), z.copy(), b.copy()
    last = len(weights) - 1
    for k, wk in enumerate(weights):
        if wk:
            acc += wk * tv_rows(b, prior[y, z])
        if k == last:
            break
        if k == 0 and first_action is not None:
            u = np.broadcast_to(first_action, x.shape).copy()
        else:
            u = _draw(pcdf[y, z], rng)
        z2 = sampler._next_z(z, y, u, rng)
        x, y = sampler._step_hidden(x, u, rng)
        z = z2
        b = batch_filter(b, y, u, model)
    return acc


@dataclass
class MonteCarloEstimate:
    mean: float
    stderr: float
    tail: float
    samples: int
    horizon: int

    @property
    def upper(self) -> float:
        """Three-sigma upper confidence limit including the truncation tail."""
        return self.mean + 3 * self.stderr + self.tail


def inference_error(policy, model: PomdpModel, internal: InternalStateSpec, warm: Optional[WarmStart] = None,
                    H: Optional[int] = None, samples: int = 10**4, rng=None, h0=None) -> MonteCarloEstimate:
    """Monte Carlo estimate of ``sum_k gamma^k TV(b_k(h_k), b0(I_k))`` from ``xi`` (or a fixed ``h0``)."""
    rng = rng if rng is not None else np.random.default_rng()
    H = default_horizon(model.gamma) if H is None else int(H)
    if H < 1:
        raise ValueError("H must be >= 1")
    sampler = Sampler(model, internal, warm)
    table = policy_table(policy)
    if h0 is None:
        x, y, z, b = sampler.h0(samples, rng)
    else:
        y = np.full(samples, h0[0])
        z = np.full(samples, h0[1])
        b = sampler.law.prior[y, z].copy()
        x = _draw(_cdf(b), rng)
    weights = model.gamma ** np.arange(H)
    sums = belief_gap_sums(sampler, table, x, y, z, b, weights, rng)
    return MonteCarloEstimate(float(sums.mean()), float(sums.std(ddof=1) / math.sqrt(samples)),
                              model.gamma**H / (1 - model.gamma), samples, H)


@dataclass
class PerceptualAliasing:
    first: float
    second: float
    second_stderr: float
    tail: float
    conditional: np.ndarray  # per (y, z, u) discounted TV sums; NaN off the support
    tv_shift: float

    @property
    def total(self) -> float:
        return self.first + self.second


def aliasing_tv_sums(policy, m: int, chain: JointChain, weights_yzu, samples_per_triple: int, H: int, rng):
    """Conditional ``E[sum_t gamma^{tm} TV(b0(I_{(t+1)m}), b_{(t+1)m}) | y, z, u]`` by Monte Carlo."""
    table = policy_table(policy)
    gamma = chain.model.gamma
    triples = np.argwhere(np.asarray(weights_yzu) > 0)
    reps = samples_per_triple
    y = np.repeat(triples[:, 0], reps)
    z = np.repeat(triples[:, 1], reps)
    u = np.repeat(triples[:, 2], reps)
    b = chain.law.prior[y, z].copy()
    x = _draw(_cdf(b), rng)
    weights = np.zeros(H * m + 1)
    weights[m::m] = gamma ** (m * np.arange(H))
    sums = belief_gap_sums(chain.sampler, table, x, y, z, b, weights, rng, first_action=u)
    sums = sums.reshape(len(triples), reps)
    mean = np.full(table.shape, np.nan)
    var = np.full(table.shape, np.nan)
    mean[tuple(triples.T)] = sums.mean(axis=1)
    var[tuple(triples.T)] = sums.var(axis=1, ddof=1) / reps
    return mean, var


def eps_pa(policy, model: PomdpModel, internal: InternalStateSpec, m: int, R: float,
           warm: Optional[WarmStart] = None, chain: Optional[JointChain] = None, H: Optional[int] = None,
           samples_per_triple: int = 2000, rng=None) -> PerceptualAliasing:
    """Both summands of the perceptual-aliasing error at block length ``m``.

    The second summand uses the constant ``2 r_max (1 - gamma^m) gamma^m / (1 - gamma)``
    from the fixed-point gap bound; the block sum is truncated after ``H``
    blocks with tail ``gamma^{Hm} / (1 - gamma^m)``.
    """
    rng = rng if rng is not None else np.random.default_rng()
    ch = _chain(model, internal, warm, chain)
    gamma, gm = model.gamma, model.gamma**m
    vis = exact_visitation(policy, model, internal, chain=ch)
    table = policy_table(policy)
    shifted = shifted_visitation(policy, vis, m, ch)
    tv = 0.5 * float(np.abs(shifted[..., None] * table - vis.d_pi).sum())
    first = (R + model.v_max) * math.sqrt(2 * gm * tv / (1 - gm))
    if H is None:
        H = max(1, math.ceil(math.log(1e-8 * (1 - gm)) / math.log(gm)))
    cond, var = aliasing_tv_sums(table, m, ch, vis.d_pi, samples_per_triple, H, rng)
    const = 2 * model.r_max * (1 - gm) * gm / (1 - gamma)
    w = vis.d_pi
    mask = w > 0
    norm = math.sqrt(float((w[mask] * cond[mask] ** 2).sum()))
    # delta method: d norm / d cond = w * cond / norm
    se = 0.0 if norm == 0 else math.sqrt(float(((w[mask] * cond[mask] / norm) ** 2 * var[mask]).sum()))
    return PerceptualAliasing(first, const * norm, const * se, const * gm**H / (1 - gm), cond, tv)


def concentrability(pi_t, pi_star, model: PomdpModel, internal: InternalStateSpec, warm: Optional[WarmStart] = None,
                    internal_star: Optional[InternalStateSpec] = None, chain=None, chain_star=None) -> float:
    """``E_{d_t o pi_t}[((d* o pi*) / (d_t o pi_t))^2]`` in closed form."""
    ch = _chain(model, internal, warm, chain)
    ch_star = chain_star or (ch if internal_star is None else JointChain(model, internal_star, warm))
    num = exact_visitation(pi_star, model, ch_star.internal, chain=ch_star).d_pi
    den = exact_visitation(pi_t, model, internal, chain=ch).d_pi
    return concentrability_from_weights(num, den)


def concentrability_from_weights(num, den) -> float:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    if np.any((den <= 0) & (num > 0)):
        raise UnboundedRatio("comparator puts mass where the current policy has none")
    mask = den > 0
    return float((num[mask] ** 2 / den[mask]).sum())


@dataclass
class PdlResult:
    lhs: float
    advantage_term: float
    gamma_estimate: MonteCarloEstimate
    rhs: float
    rhs_worst: float
    holds: bool


def pdl_check(policy_prime, policy, model: PomdpModel, internal: InternalStateSpec,
              warm: Optional[WarmStart] = None, H: Optional[int] = None, samples: int = 10**4,
              rng=None, h0=None, chain: Optional[JointChain] = None) -> PdlResult:
    """Check ``V' - V >= (1/(1-g)) sum d' pi' A - (2 r_max/(1-g)) Gamma'``.

    The right side is evaluated at the three-sigma upper limit of the inference
    error (plus truncation tail), so ``holds`` is a confidence statement.
    """
    ch = _chain(model, internal, warm, chain)
    gamma = model.gamma
    start = None
    if h0 is not None:
        start = np.zeros(ch.dims[:3])
        start[:, h0[0], h0[1]] = ch.law.prior[h0[0], h0[1]]
    vals_p = exact_q(policy_prime, model, internal, chain=ch)
    vals = exact_q(policy, model, internal, chain=ch)
    if h0 is None:
        lhs = vals_p.value_xi - vals.value_xi
    else:
        lhs = float(vals_p.v[h0] - vals.v[h0])
    vis = exact_visitation(policy_prime, model, internal, chain=ch, start=start)
    adv = float((vis.d_pi * vals.advantage).sum()) / (1 - gamma)
    g = inference_error(policy_prime, model, internal, warm=ch.sampler.warm, H=H, samples=samples, rng=rng, h0=h0)
    c = 2 * model.r_max / (1 - gamma)
    rhs = adv - c * g.mean
    rhs_worst = adv - c * g.upper
    return PdlResult(lhs, adv, g, rhs, rhs_worst, bool(lhs >= rhs_worst - 1e-10))


def best_fsc_bruteforce(model: PomdpModel, internal: InternalStateSpec, warm: Optional[WarmStart] = None,
                        chain: Optional[JointChain] = None):
    """Enumerate deterministic maps ``(y, z) -> u`` and return ``(table, V(xi))`` of the best.

    Ties keep the first map in lexicographic order.
    """
    ch = _chain(model, internal, warm, chain)
    _, ny, nz, nu = ch.dims
    cells = ny * nz
    if nu**cells > MAX_ENUMERATION:
        raise SearchSpaceTooLarge(f"{nu}^{cells} deterministic controllers")
    best_val, best = -np.inf, None
    eye = np.eye(nu)
    for choice in itertools.product(range(nu), repeat=cells):
        table = eye[list(choice)].reshape(ny, nz, nu)
        val = exact_q(table, model, internal, chain=ch).value_xi
        if val > best_val + 1e-12:
            best_val, best = val, table
    return best, float(best_val)


@dataclass
class ErrorReport:
    projection_error: float
    beta_pi: np.ndarray
    eps_pa_first: float
    eps_pa_second: float
    eps_pa_second_stderr: float
    eps_pa_tail: float
    tilde_d_m: np.ndarray
    gamma_inference: float
    gamma_inference_stderr: float
    gamma_horizon: int
    gamma_tail: float
    concentrability: Optional[float]
    compatible_fa_error: float
    fixed_point_gap: float
    value_xi: float
    extras: dict = field(default_factory=dict)

    def rows(self):
        """Flat ``(field, value)`` pairs for CSV/JSON emission."""
        out = []
        for key, val in self.__dict__.items():
            if key in ("beta_pi", "tilde_d_m", "extras"):
                continue
            out.append((key, val))
        out.append(("beta_pi_norm", float(np.linalg.norm(self.beta_pi))))
        out.extend(self.extras.items())
        return out


def error_report(policy, model, internal, features: FeatureMap, m: int, R: float,
                 warm: Optional[WarmStart] = None, reference=None, samples: int = 10**4,
                 samples_per_triple: int = 1000, rng=None) -> ErrorReport:
    """Every error term of the critic and actor bounds for one policy."""
    rng = rng if rng is not None else np.random.default_rng()
    ch = JointChain(model, internal, warm)
    vals = exact_q(policy, model, internal, chain=ch)
    vis = exact_visitation(policy, model, internal, chain=ch)
    beta, proj = best_linear_fit(vals.q, vis.d_pi, features, R)
    pa = eps_pa(policy, model, internal, m, R, chain=ch, samples_per_triple=samples_per_triple, rng=rng)
    gam = inference_error(policy, model, internal, warm=ch.sampler.warm, samples=samples, rng=rng)
    q_star = fixed_point_q(policy, model, internal, m, chain=ch)
    conc = None
    if reference is not None:
        conc = concentrability(policy, reference, model, internal, chain=ch)
    return ErrorReport(proj, beta, pa.first, pa.second, pa.second_stderr, pa.tail,
                       shifted_visitation(policy, vis, m, ch), gam.mean, gam.stderr, gam.horizon,
                       gam.tail, conc, proj, float(np.abs(q_star - vals.q).max()), vals.value_xi)
