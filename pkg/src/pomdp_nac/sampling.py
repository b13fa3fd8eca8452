"""Trajectory sampling: warm starts, the discounted visitation sampler and rollouts.

Every sampler here has a batched form that advances ``B`` independent
trajectories in lock-step with vectorized categorical draws; the scalar
functions are thin wrappers over a batch of one.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .controllers import InternalStateSpec, policy_table, sliding_block
from .model import Belief, PomdpModel

# Geometric horizons are truncated where the remaining mass drops below this.
HORIZON_TAIL = 1e-12


def rng_stream(seed: int, *keys) -> np.random.Generator:
    """Independent generator for ``(seed, key...)``; string keys are hashed."""
    spawn = tuple(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys)
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=spawn))


def _cdf(probs):
    c = np.cumsum(probs, axis=-1)
    c[..., -1] = 1.0
    return c


def _draw(cdf_rows, rng):
    """One categorical draw per row of ``cdf_rows`` (shape ``(B, K)``)."""
    u = rng.random(cdf_rows.shape[0])
    idx = (cdf_rows < u[:, None]).sum(axis=1)
    return np.minimum(idx, cdf_rows.shape[1] - 1)


@dataclass(frozen=True, eq=False)
class WarmStart:
    """How ``h0`` is generated before time zero.

    ``explore`` is a reactive exploration policy ``(Y, U)`` (uniform when
    omitted), ``vartheta`` the law of the first hidden state (uniform when
    omitted).  For generic controllers ``z_init`` gives the law of ``z0``
    (uniform when omitted) and ``block_length`` is ignored.
    """

    block_length: int = 0
    explore: Optional[np.ndarray] = None
    vartheta: Optional[np.ndarray] = None
    z_init: Optional[np.ndarray] = None

    def explore_table(self, model):
        if self.explore is None:
            return np.full((model.n_obs, model.n_actions), 1.0 / model.n_actions)
        return np.asarray(self.explore, dtype=float)

    def vartheta_vec(self, model):
        if self.vartheta is None:
            return np.full(model.n_states, 1.0 / model.n_states)
        v = np.asarray(self.vartheta, dtype=float)
        if v.shape != (model.n_states,) or np.any(v < 0) or abs(v.sum() - 1) > 1e-9:
            raise ValueError("vartheta must be a probability vector over X")
        return v

    def z_init_vec(self, internal):
        if self.z_init is None:
            return np.full(internal.n_z, 1.0 / internal.n_z)
        return np.asarray(self.z_init, dtype=float)


@dataclass(frozen=True, eq=False)
class InitialLaw:
    """Enumerated law of ``(x0, y0, z0)`` and the prior map ``b0(. | y, z)``.

    ``joint[x, y, z]`` is the warm-start joint law (its ``(y, z)`` marginal
    is ``xi``).  ``prior[y, z]`` is the conditional law of ``x0``; it is also
    defined for pairs of zero ``xi`` mass whenever the observations are
    possible, and ``prior_defined`` flags the rest.
    """

    joint: np.ndarray
    prior: np.ndarray
    prior_defined: np.ndarray

    @property
    def xi(self) -> np.ndarray:
        return self.joint.sum(axis=0)


def initial_law(model: PomdpModel, internal: InternalStateSpec, warm: WarmStart) -> InitialLaw:
    nx, ny = model.n_states, model.n_obs
    vartheta = warm.vartheta_vec(model)
    if internal.kind != "sliding_block" or internal.block_length == 0:
        zlaw = warm.z_init_vec(internal) if internal.kind != "sliding_block" else np.ones(1)
        base = vartheta[:, None] * model.channel  # (X, Y)
        joint = base[:, :, None] * zlaw[None, None, :]
        tot = base.sum(axis=0)
        defined = np.broadcast_to((tot > 0)[:, None], (ny, internal.n_z)).copy()
        post = np.where(tot[:, None] > 0, base.T / np.where(tot > 0, tot, 1)[:, None], 1.0 / nx)
        prior = np.broadcast_to(post[:, None, :], (ny, internal.n_z, nx)).copy()
        return InitialLaw(joint, prior, defined)

    n = internal.block_length
    nu = model.n_actions
    explore = warm.explore_table(model)
    P, Phi = model.transition, model.channel
    # Forward messages over every partial window; f carries exploration
    # weights (the law), g omits them (the belief, which does not see them).
    f = (vartheta[:, None] * Phi).T  # (W, X) with W indexed by y_{-n}
    g = f.copy()
    ys = np.arange(ny)[:, None]
    us = np.zeros((ny, 0), dtype=int)
    for _ in range(n):
        last_y = ys[:, -1]
        # new index order: (w, u, y')
        pred = np.einsum("wx,xuz->wuz", g, P)
        g_new = pred[:, :, :, None] * Phi[None, None, :, :]  # (W, U, X', Y')
        f_new = np.einsum("wx,xuz->wuz", f, P)[:, :, :, None] * Phi[None, None, :, :]
        f_new *= explore[last_y][:, :, None, None]
        W = g.shape[0]
        g = g_new.transpose(0, 1, 3, 2).reshape(W * nu * ny, nx)
        f = f_new.transpose(0, 1, 3, 2).reshape(W * nu * ny, nx)
        w_idx, u_idx, y_idx = np.indices((W, nu, ny)).reshape(3, -1)
        ys = np.concatenate([ys[w_idx], y_idx[:, None]], axis=1)
        us = np.concatenate([us[w_idx], u_idx[:, None]], axis=1)
    y0 = ys[:, -1]
    ypart = np.zeros(len(ys), dtype=int)
    upart = np.zeros(len(ys), dtype=int)
    for j in range(n):
        ypart = ypart * ny + ys[:, j]
        upart = upart * nu + us[:, j]
    z0 = ypart * nu**n + upart
    joint = np.zeros((nx, ny, internal.n_z))
    joint[:, y0, z0] = f.T
    tot = g.sum(axis=1)
    prior = np.full((ny, internal.n_z, nx), 1.0 / nx)
    defined = np.zeros((ny, internal.n_z), dtype=bool)
    ok = tot > 0
    prior[y0[ok], z0[ok]] = g[ok] / tot[ok, None]
    defined[y0[ok], z0[ok]] = True
    return InitialLaw(joint, prior, defined)


@dataclass(frozen=True, eq=False)
class TrajectoryRecord:
    """One rollout: ``m`` transitions plus the action drawn at the final state."""

    states: np.ndarray
    observations: np.ndarray
    internal: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    beliefs: Optional[np.ndarray]
    final_action: int

    @property
    def steps(self) -> int:
        return len(self.actions)


@dataclass
class TrajectoryBatch:
    """``B`` rollouts stacked along axis 0; ``actions`` includes the final action."""

    states: np.ndarray        # (B, m+1)
    observations: np.ndarray  # (B, m+1)
    internal: np.ndarray      # (B, m+1)
    actions: np.ndarray       # (B, m+1)
    rewards: np.ndarray       # (B, m)
    beliefs: Optional[np.ndarray] = None  # (B, m+1, X)

    def record(self, i: int) -> TrajectoryRecord:
        return TrajectoryRecord(
            self.states[i], self.observations[i], self.internal[i], self.actions[i, :-1],
            self.rewards[i], None if self.beliefs is None else self.beliefs[i], int(self.actions[i, -1]))


def batch_filter(beliefs, ys, us, model):
    """Bayes update applied row-wise; rows never degenerate along sampled paths."""
    pred = np.einsum("bx,xbz->bz", beliefs, model.transition[:, us, :])
    post = pred * model.channel[:, ys].T
    return post / post.sum(axis=1, keepdims=True)


class Sampler:
    """Vectorized generative model for one ``(model, internal, warm start)`` triple."""

    def __init__(self, model: PomdpModel, internal: InternalStateSpec, warm: Optional[WarmStart] = None):
        self.model = model
        self.internal = internal
        self.warm = warm or WarmStart(block_length=internal.block_length)
        if internal.kind == "sliding_block" and self.warm.block_length != internal.block_length:
            raise ValueError("warm start block length differs from the controller's")
        self._P_cdf = _cdf(model.transition)
        self._Phi_cdf = _cdf(model.channel)
        self._vartheta_cdf = _cdf(self.warm.vartheta_vec(model))
        self._explore_cdf = _cdf(self.warm.explore_table(model))
        self._z_cdf = None if internal.deterministic else _cdf(internal.kernel)
        self._law = None

    @property
    def law(self) -> InitialLaw:
        if self._law is None:
            self._law = initial_law(self.model, self.internal, self.warm)
        return self._law

    def _next_z(self, z, y, u, rng):
        if self.internal.deterministic:
            return self.internal.next_state[z, y, u]
        return _draw(self._z_cdf[z, y, u], rng)

    def _step_hidden(self, x, u, rng):
        x2 = _draw(self._P_cdf[x, u], rng)
        return x2, _draw(self._Phi_cdf[x2], rng)

    def h0(self, size: int, rng, track_belief: bool = True):
        """Warm-start draws: returns ``(x0, y0, z0, b0)`` arrays.

        Sliding-block windows are produced by literally rolling ``n`` steps
        under the exploration policy; ``b0`` is the filter run along them.
        """
        model = self.model
        x = _draw(np.broadcast_to(self._vartheta_cdf, (size, model.n_states)), rng)
        y = _draw(self._Phi_cdf[x], rng)
        b = None
        if track_belief:
            b = self.warm.vartheta_vec(model)[None, :] * model.channel[:, y].T
            b /= b.sum(axis=1, keepdims=True)
        if self.internal.kind == "sliding_block":
            z = np.zeros(size, dtype=int)
            for _ in range(self.internal.block_length):
                u = _draw(self._explore_cdf[y], rng)
                z = self.internal.next_state[z, y, u]
                x, y = self._step_hidden(x, u, rng)
                if track_belief:
                    b = batch_filter(b, y, u, model)
        else:
            z = _draw(np.broadcast_to(_cdf(self.warm.z_init_vec(self.internal)), (size, self.internal.n_z)), rng)
        return x, y, z, b

    def horizon_cap(self) -> int:
        return max(0, math.ceil(math.log(HORIZON_TAIL) / math.log(self.model.gamma)))

    def horizons(self, size: int, rng, gamma: Optional[float] = None):
        """Truncated geometric draws with ``P(k) ∝ (1-gamma) gamma^k`` on ``0..K_max``."""
        g = self.model.gamma if gamma is None else gamma
        if g <= 0:
            return np.zeros(size, dtype=int)
        kmax = max(0, math.ceil(math.log(HORIZON_TAIL) / math.log(g)))
        mass = -math.expm1((kmax + 1) * math.log(g))  # 1 - g^(kmax+1)
        u = rng.random(size)
        k = np.floor(np.log1p(-u * mass) / math.log(g)).astype(int)
        return np.clip(k, 0, kmax)

    def visitation(self, policy, size: int, rng, track_belief: bool = False, gamma: Optional[float] = None):
        """Draw ``(x, y, z, b)`` at a geometric time after a fresh warm start.

        The returned ``(y, z)`` are distributed as the discounted visitation
        distribution; ``b`` (when tracked) is the full-history belief.
        """
        table_cdf = _cdf(policy_table(policy))
        x, y, z, b = self.h0(size, rng, track_belief)
        k = self.horizons(size, rng, gamma)
        for step in range(int(k.max(initial=0))):
            act = np.nonzero(k > step)[0]
            xa, ya, za = x[act], y[act], z[act]
            u = _draw(table_cdf[ya, za], rng)
            x2, y2 = self._step_hidden(xa, u, rng)
            z[act] = self._next_z(za, ya, u, rng)
            x[act], y[act] = x2, y2
            if track_belief:
                b[act] = batch_filter(b[act], y2, u, self.model)
        return x, y, z, b

    def rollout(self, policy, x0, y0, z0, steps: int, rng, b0=None) -> TrajectoryBatch:
        table_cdf = _cdf(policy_table(policy))
        size = len(x0)
        xs = np.empty((size, steps + 1), dtype=int)
        ys = np.empty_like(xs)
        zs = np.empty_like(xs)
        us = np.empty_like(xs)
        rs = np.empty((size, steps))
        bs = None
        if b0 is not None:
            bs = np.empty((size, steps + 1, self.model.n_states))
            bs[:, 0] = b0
        xs[:, 0], ys[:, 0], zs[:, 0] = x0, y0, z0
        for k in range(steps + 1):
            us[:, k] = _draw(table_cdf[ys[:, k], zs[:, k]], rng)
            if k == steps:
                break
            rs[:, k] = self.model.reward[xs[:, k], us[:, k]]
            xs[:, k + 1], ys[:, k + 1] = self._step_hidden(xs[:, k], us[:, k], rng)
            zs[:, k + 1] = self._next_z(zs[:, k], ys[:, k], us[:, k], rng)
            if bs is not None:
                bs[:, k + 1] = batch_filter(bs[:, k], ys[:, k + 1], us[:, k], self.model)
        return TrajectoryBatch(xs, ys, zs, us, rs, bs)

    def td_samples(self, policy, size: int, m: int, rng) -> TrajectoryBatch:
        """Starts ``(y0, z0) ~ d_xi^pi`` with ``x0 ~ b0(. | y0, z0)``, then ``m`` steps."""
        _, y, z, _ = self.visitation(policy, size, rng)
        prior_cdf = _cdf(self.law.prior)
        x = _draw(prior_cdf[y, z], rng)
        return self.rollout(policy, x, y, z, m, rng)


def sample_h0(warm: WarmStart, model: PomdpModel, rng, internal: Optional[InternalStateSpec] = None):
    """One warm-start draw: ``((y0, z0), b0, x0)``."""
    internal = internal or sliding_block(warm.block_length, model.n_obs, model.n_actions)
    x, y, z, b = Sampler(model, internal, warm).h0(1, rng)
    return (int(y[0]), int(z[0])), Belief(b[0], provenance=("h0", int(y[0]), int(z[0]))), int(x[0])


def sample_visitation(policy, model: PomdpModel, warm: WarmStart, rng):
    """One draw from the discounted visitation law: ``((y, z), x, belief)``."""
    x, y, z, b = Sampler(model, policy.internal, warm).visitation(policy, 1, rng, track_belief=True)
    return (int(y[0]), int(z[0])), int(x[0]), Belief(b[0])


def rollout(policy, model: PomdpModel, start, steps: int, rng, warm: Optional[WarmStart] = None) -> TrajectoryRecord:
    """Roll ``steps`` transitions from ``start = (x0, y0, z0, b0)`` with exact belief tracking."""
    if steps < 1:
        raise ValueError("rollout needs at least one step")
    x0, y0, z0, b0 = start
    b0 = b0.probs if isinstance(b0, Belief) else np.asarray(b0, dtype=float)
    sampler = Sampler(model, policy.internal, warm)
    batch = sampler.rollout(policy, np.array([x0]), np.array([y0]), np.array([z0]), steps, rng, b0=b0[None, :])
    return batch.record(0)
