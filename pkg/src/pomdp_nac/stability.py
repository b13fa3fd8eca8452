"""Filter stability: ergodicity certificates, smoothing kernels and contraction measurements."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .controllers import FscPolicy, InternalStateSpec, policy_table
from .errors import DegenerateHistory, DimensionMismatch, NotErgodic, SizeOverflow, SupportMismatch
from .model import History, PomdpModel, tv_rows
from .sampling import Sampler, WarmStart, _cdf, _draw

MAX_ENUMERATED = 10**6


@dataclass
class ErgodicityCertificate:
    alpha: float
    mu_bar: np.ndarray
    eps0: float
    m0: int
    nu: Optional[np.ndarray]
    which_condition: str = "cond2"

    @property
    def kernel_constant(self) -> float:
        """Minorization constant ``alpha^(2 m0 - 2) eps0^2`` of the smoothing kernels."""
        return self.alpha ** (2 * self.m0 - 2) * self.eps0**2

    def envelope(self, n: int) -> float:
        return (1.0 - self.kernel_constant) ** (n // self.m0)


def sandwich(rows: np.ndarray):
    """Largest ``c`` with ``c * nu <= rows[i] <= nu / c`` for a probability vector ``nu``.

    Every row is a probability vector over the same columns.  With
    ``lo = min_i rows[i]`` and ``hi = max_i rows[i]`` a feasible ``nu`` exists
    iff ``c * hi <= nu <= lo / c`` fits on the simplex, which gives the closed
    form ``c = min(sqrt(min lo/hi), 1/sum(hi), sum(lo))``.  Returns ``(c, nu,
    live)`` where ``live`` masks the columns that are not identically zero.
    Raises ``ValueError`` when some column is zero in one row but not another.
    """
    rows = np.asarray(rows, dtype=float)
    lo = rows.min(axis=0)
    hi = rows.max(axis=0)
    live = hi > 0
    if np.any(lo[live] <= 0):
        raise ValueError("support differs across rows")
    lo, hi = lo[live], hi[live]
    c = min(math.sqrt(float((lo / hi).min())), 1.0 / float(hi.sum()), float(lo.sum()), 1.0)
    low, high = c * hi, lo / c
    slack = float((high - low).sum())
    t = 0.0 if slack <= 0 else min(1.0, max(0.0, (1.0 - low.sum()) / slack))
    nu_live = low + t * (high - low)
    nu = np.zeros(live.shape)
    nu[live] = nu_live / nu_live.sum()
    return c, nu, live


def check_condition1(policy):
    """Persistence of excitation: ``alpha * mu <= pi(.|y,z) <= mu / alpha`` for all ``(y, z)``.

    Returns the largest such ``alpha`` and a matching ``mu``.
    """
    table = policy_table(policy)
    rows = table.reshape(-1, table.shape[-1])
    support = rows > 0
    if np.any(support != support[0]):
        raise SupportMismatch("action supports differ across (y, z)")
    alpha, mu, _ = sandwich(rows)
    return alpha, mu


def block_law(model: PomdpModel, mu_bar, m0: int) -> np.ndarray:
    """``P_mu(x_m0, y_1..y_m0, u_0..u_{m0-1} | x_0)`` by path enumeration.

    Shape ``(X, C, X)``: source state, packed ``(u_0, y_1, ..., u_{m0-1}, y_m0)``
    columns, final state.
    """
    nx, nu, ny = model.n_states, model.n_actions, model.n_obs
    if nx * nx * (nu * ny) ** m0 > MAX_ENUMERATED:
        raise SizeOverflow("block law too large to enumerate")
    mu = np.asarray(mu_bar, dtype=float)
    A = np.eye(nx)[:, None, :]
    step = np.einsum("u,xuw,wy->xuyw", mu, model.transition, model.channel)
    for _ in range(m0):
        A = np.einsum("acx,xuyw->acuyw", A, step).reshape(nx, -1, nx)
    return A


def check_condition2(model: PomdpModel, mu_bar, m0: int):
    """Minorization-majorization of the block law under ``mu_bar``: returns ``(eps0, nu)``.

    ``nu`` is indexed like :func:`block_law` columns flattened with the final
    state last.
    """
    if m0 < 1:
        raise ValueError("m0 must be >= 1")
    A = block_law(model, mu_bar, m0)
    rows = A.reshape(model.n_states, -1)
    try:
        eps0, nu, _ = sandwich(rows)
    except ValueError:
        raise NotErgodic(f"some block outcome is reachable from one state but not another (m0={m0})") from None
    return eps0, nu


def joint_block_matrix(policy, model: PomdpModel, internal: InternalStateSpec, m0: int) -> np.ndarray:
    """``m0``-step transition matrix of the chain on ``(x, y, z, u)``."""
    from .oracle import JointChain

    chain = JointChain(model, internal)
    T = chain.state_action_matrix(policy_table(policy)).toarray()
    return np.linalg.matrix_power(T, m0)


def check_condition3(policy, model: PomdpModel, internal: InternalStateSpec, m0: int):
    """Minorization-majorization of the joint ``(x, y, z, u)`` chain: returns ``(eps0, upsilon)``."""
    if m0 < 1:
        raise ValueError("m0 must be >= 1")
    T = joint_block_matrix(policy, model, internal, m0)
    try:
        eps0, ups, _ = sandwich(T)
    except ValueError:
        raise NotErgodic(f"joint chain is not uniformly reachable in {m0} steps") from None
    return eps0, ups


def certify(policy, model: PomdpModel, m0: int) -> ErgodicityCertificate:
    alpha, mu = check_condition1(policy)
    eps0, nu = check_condition2(model, mu, m0)
    return ErgodicityCertificate(alpha, mu, eps0, m0, nu, "cond2")


def _internal_path(internal, history: History, zs=None):
    if zs is not None:
        zs = [int(z) for z in zs]
        if len(zs) != len(history) + 1:
            raise DimensionMismatch("need one internal state per time step")
        return zs
    if not internal.deterministic:
        raise ValueError("stochastic internal kernels need the realized internal states")
    y0, z0 = history.initial
    out = [int(z0)]
    ys = (y0,) + history.observations
    for k, u in enumerate(history.actions):
        out.append(int(internal.next_state[out[-1], ys[k], u]))
    return out


@dataclass
class BackwardVariables:
    beta: np.ndarray  # (n+1, X); beta[k] = P(suffix after k | x_k, h_k)
    horizon: int


def backward_variables(model: PomdpModel, policy, history: History, internal: Optional[InternalStateSpec] = None,
                       zs=None) -> BackwardVariables:
    """Backward recursion from ``beta_n = 1``; never reads a prior."""
    internal = internal or getattr(policy, "internal", None)
    table = policy_table(policy)
    n = len(history)
    ys = (history.initial[0],) + history.observations
    z_path = _internal_path(internal, history, zs) if n else [history.initial[1]]
    beta = np.ones((n + 1, model.n_states))
    for k in range(n - 1, -1, -1):
        u = history.actions[k]
        act = table[ys[k], z_path[k], u]
        beta[k] = act * (model.transition[:, u, :] @ (model.channel[:, ys[k + 1]] * beta[k + 1]))
    return BackwardVariables(beta, n)


@dataclass
class SmoothingKernel:
    kappa: np.ndarray
    block_index: int
    valid_rows: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.valid_rows is None:
            self.valid_rows = np.ones(self.kappa.shape[0], dtype=bool)


def one_step_kernels(model: PomdpModel, history: History, bv: BackwardVariables):
    """``kappa_k(x'|x) ∝ P(x'|x,u_k) Phi(y_{k+1}|x') beta_{k+1}(x')`` for ``k < n``."""
    out = []
    for k in range(bv.horizon):
        u, y = history.actions[k], history.observations[k]
        K = model.transition[:, u, :] * (model.channel[:, y] * bv.beta[k + 1])[None, :]
        norm = K.sum(axis=1)
        valid = norm > 0
        if not np.any(valid):
            raise DegenerateHistory(f"history impossible from every state at step {k}")
        K[valid] /= norm[valid, None]
        K[~valid] = 0.0
        out.append(SmoothingKernel(K, k, valid))
    return out


def smoothing_kernels(model: PomdpModel, policy, history: History, m0: int,
                      internal: Optional[InternalStateSpec] = None, zs=None):
    """Block kernels ``kappa^{m0}_l``, each the product of ``m0`` one-step kernels.

    Rows whose normalizer vanishes (states from which the realized history is
    impossible) are zeroed and reported through ``valid_rows``.
    """
    n = len(history)
    if m0 < 1 or n < m0:
        raise ValueError("need 1 <= m0 <= n")
    bv = backward_variables(model, policy, history, internal, zs)
    steps = one_step_kernels(model, history, bv)
    blocks = []
    for ell in range(n // m0):
        part = steps[ell * m0:(ell + 1) * m0]
        K = part[0].kappa
        for s in part[1:]:
            K = K @ s.kappa
        blocks.append(SmoothingKernel(K, ell, part[0].valid_rows.copy()))
    return blocks


def initial_posterior(v0, bv: BackwardVariables) -> np.ndarray:
    """``P(x_0 | h_n)`` for prior ``v0``: ``v0 * beta_0`` normalized."""
    w = np.asarray(v0, dtype=float) * bv.beta[0]
    s = w.sum()
    if s <= 0:
        raise DegenerateHistory("history has zero probability under this prior")
    return w / s


def left_multiply(v, K) -> np.ndarray:
    """``(v K)(x) = sum_x' v(x') K(x | x')``, renormalized."""
    v = np.asarray(v, dtype=float)
    K = np.asarray(getattr(K, "kappa", K), dtype=float)
    if K.ndim != 2 or v.shape != (K.shape[0],):
        raise DimensionMismatch(f"vector {v.shape} vs kernel {K.shape}")
    out = v @ K
    return out / out.sum()


def minorization_constant(K, valid_rows=None) -> float:
    """``sum_x' min_x K(x'|x)`` over valid rows: the best constant ``c`` with ``K >= c nu``."""
    if valid_rows is None:
        valid_rows = getattr(K, "valid_rows", None)
    K = np.asarray(getattr(K, "kappa", K), dtype=float)
    rows = K if valid_rows is None else K[np.asarray(valid_rows, dtype=bool)]
    return float(rows.min(axis=0).sum())


@dataclass
class MinorizationReport:
    constants: list
    bound: float

    @property
    def ok(self) -> bool:
        return all(c >= self.bound - 1e-12 for c in self.constants)


def verify_kernel_minorization(kernels, certificate: ErgodicityCertificate) -> MinorizationReport:
    consts = [minorization_constant(k.kappa, k.valid_rows) for k in kernels]
    return MinorizationReport(consts, certificate.kernel_constant)


def _filter_rows(b, y, u, model):
    pred = np.einsum("bx,xbz->bz", b, model.transition[:, u, :])
    post = pred * model.channel[:, y].T
    s = post.sum(axis=1, keepdims=True)
    ok = s[:, 0] > 0
    post[ok] /= s[ok]
    post[~ok] = np.nan
    return post


@dataclass
class ContractionResult:
    n_list: list
    tv_mean: np.ndarray
    tv_max: np.ndarray
    envelope: Optional[np.ndarray]
    certificate: Optional[ErgodicityCertificate]
    samples: int
    chain_checked: int = 0
    chain_violations: int = 0

    @property
    def within_envelope(self) -> bool:
        if self.envelope is None:
            return True
        return bool(np.all(self.tv_mean <= self.envelope + 1e-12))

    @property
    def monotone(self) -> bool:
        return bool(np.all(np.diff(self.tv_mean) <= 1e-12))


def contraction_experiment(model: PomdpModel, policy, internal: InternalStateSpec, n_list: Sequence[int],
                           priors=None, samples: int = 10**4, rng=None,
                           certificate: Optional[ErgodicityCertificate] = None,
                           warm: Optional[WarmStart] = None, chain_checks: int = 0) -> ContractionResult:
    """TV between two filters fed the same sampled ``(y, u)`` streams.

    Histories start at warm-start draws and follow the policy.  With a
    certificate, the envelope ``(1 - alpha^(2m0-2) eps0^2)^floor(n/m0)`` is
    reported (prefactor 1).  ``chain_checks`` histories additionally run the
    smoothing-kernel chain: the posterior of ``x_0`` pushed through the block
    kernels must reproduce both filters and contract block by block.
    """
    rng = rng if rng is not None else np.random.default_rng()
    n_list = sorted(int(n) for n in n_list)
    nx = model.n_states
    if priors is None:
        priors = (np.eye(nx)[0], np.eye(nx)[-1])
    v0, v1 = (np.asarray(p, dtype=float) for p in priors)
    sampler = Sampler(model, internal, warm)
    horizon = max(n_list)
    x, y, z, _ = sampler.h0(samples, rng, track_belief=False)
    batch = sampler.rollout(policy, x, y, z, horizon, rng)
    a = np.broadcast_to(v0, (samples, nx)).copy()
    b = np.broadcast_to(v1, (samples, nx)).copy()
    tv_mean, tv_max = [], []
    wanted = set(n_list)
    if 0 in wanted:
        tv_mean.append(0.5 * np.abs(v0 - v1).sum())
        tv_max.append(tv_mean[-1])
    for k in range(horizon):
        a = _filter_rows(a, batch.observations[:, k + 1], batch.actions[:, k], model)
        b = _filter_rows(b, batch.observations[:, k + 1], batch.actions[:, k], model)
        if k + 1 in wanted:
            tv = tv_rows(a, b)
            tv = tv[np.isfinite(tv)]
            tv_mean.append(float(tv.mean()))
            tv_max.append(float(tv.max()))
    env = None
    if certificate is not None:
        env = np.array([certificate.envelope(n) for n in n_list])
    result = ContractionResult(n_list, np.array(tv_mean), np.array(tv_max), env, certificate, samples)
    if chain_checks and certificate is not None:
        m0 = certificate.m0
        n = (horizon // m0) * m0
        for i in range(min(chain_checks, samples)):
            hist = History((int(batch.observations[i, 0]), int(batch.internal[i, 0])),
                           batch.observations[i, 1:n + 1], batch.actions[i, :n])
            result.chain_checked += 1
            if not _chain_holds(model, policy, internal, hist, m0, certificate, v0, v1, batch.internal[i, :n + 1]):
                result.chain_violations += 1
    return result


def _chain_holds(model, policy, internal, hist, m0, cert, v0, v1, zs) -> bool:
    try:
        bv = backward_variables(model, policy, hist, internal, zs)
        p, q = initial_posterior(v0, bv), initial_posterior(v1, bv)
    except DegenerateHistory:
        return True
    kernels = smoothing_kernels(model, policy, hist, m0, internal, zs)
    tv = 0.5 * np.abs(p - q).sum()
    rate = 1.0 - cert.kernel_constant
    bound = tv
    for K in kernels:
        p, q = left_multiply(p, K), left_multiply(q, K)
        new = 0.5 * np.abs(p - q).sum()
        bound *= rate
        if new > tv + 1e-12 or new > bound + 1e-12:
            return False
        tv = new
    return True
