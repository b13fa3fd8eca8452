"""Finite-state controllers: internal-state kernels, features and softmax policies."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionMismatch, ModelValidationError, SizeOverflow

MAX_FEATURE_DIM = 4096


@dataclass(frozen=True, eq=False)
class InternalStateSpec:
    """Internal-state dynamics ``z' ~ phi(. | z, y, u)``.

    Deterministic kernels (including sliding blocks) are stored as a lookup
    table ``next_state[z, y, u]``; stochastic ones as a dense
    ``kernel[z, y, u, z']``.
    """

    n_z: int
    n_obs: int
    n_actions: int
    kind: str = "generic"
    block_length: int = 0
    next_state: Optional[np.ndarray] = None
    kernel: Optional[np.ndarray] = None

    @property
    def deterministic(self) -> bool:
        return self.next_state is not None

    def entries(self):
        """Nonzero kernel entries as arrays ``(z, y, u, z', prob)``."""
        if self.deterministic:
            z, y, u = np.indices(self.next_state.shape).reshape(3, -1)
            return z, y, u, self.next_state.reshape(-1), np.ones(z.size)
        z, y, u, z2 = np.nonzero(self.kernel)
        return z, y, u, z2, self.kernel[z, y, u, z2]

    def dense_kernel(self) -> np.ndarray:
        if self.kernel is not None:
            return self.kernel
        out = np.zeros((self.n_z, self.n_obs, self.n_actions, self.n_z))
        z, y, u = np.indices(self.next_state.shape)
        out[z, y, u, self.next_state] = 1.0
        return out

    def to_dict(self) -> dict:
        if self.kind == "sliding_block":
            return {"kind": "sliding_block", "n": self.block_length}
        return {"internal_kernel": self.dense_kernel().tolist()}


def generic_internal(kernel) -> InternalStateSpec:
    k = np.array(kernel, dtype=float)
    if k.ndim != 4 or k.shape[0] != k.shape[3]:
        raise ModelValidationError(f"internal kernel must be |Z|x|Y|x|U|x|Z|, got {k.shape}")
    if np.any(k < 0) or np.any(np.abs(k.sum(axis=-1) - 1.0) > 1e-12):
        raise ModelValidationError("internal kernel rows must be probability vectors")
    nz, ny, nu, _ = k.shape
    if np.all((k == 0) | (k == 1)):
        return InternalStateSpec(nz, ny, nu, "generic", 0, next_state=k.argmax(axis=-1))
    k.setflags(write=False)
    return InternalStateSpec(nz, ny, nu, "generic", 0, kernel=k)


def sliding_block(n: int, n_obs: int, n_actions: int) -> InternalStateSpec:
    """Window of the last ``n`` observation/action pairs, mixed-radix packed.

    The packed index is ``ypart * |U|**n + upart`` where ``ypart`` and
    ``upart`` hold ``y_{k-n}..y_{k-1}`` and ``u_{k-n}..u_{k-1}`` as base-|Y|
    and base-|U| numbers with the oldest entry most significant.
    """
    if n < 0:
        raise ValueError("block length must be non-negative")
    ny_n, nu_n = n_obs**n, n_actions**n
    nz = ny_n * nu_n
    if nz * n_obs * n_actions > 10**7:
        raise SizeOverflow(f"sliding block n={n} needs {nz} internal states")
    z, y, u = np.indices((nz, n_obs, n_actions))
    if n == 0:
        nxt = np.zeros_like(z)
    else:
        ypart, upart = np.divmod(z, nu_n)
        ypart = (ypart % (ny_n // n_obs)) * n_obs + y
        upart = (upart % (nu_n // n_actions)) * n_actions + u
        nxt = ypart * nu_n + upart
    nxt.setflags(write=False)
    return InternalStateSpec(nz, n_obs, n_actions, "sliding_block", n, next_state=nxt)


def encode_window(ys, us, n_obs: int, n_actions: int) -> int:
    """Pack ``(y_{k-n}..y_{k-1}, u_{k-n}..u_{k-1})`` into a sliding-block index."""
    if len(ys) != len(us):
        raise DimensionMismatch("window needs equal numbers of observations and actions")
    ypart = upart = 0
    for y in ys:
        ypart = ypart * n_obs + int(y)
    for u in us:
        upart = upart * n_actions + int(u)
    return ypart * n_actions ** len(us) + upart


def decode_window(z: int, n: int, n_obs: int, n_actions: int):
    ypart, upart = divmod(int(z), n_actions**n)
    ys, us = [], []
    for _ in range(n):
        ypart, y = divmod(ypart, n_obs)
        upart, u = divmod(upart, n_actions)
        ys.append(y)
        us.append(u)
    return tuple(reversed(ys)), tuple(reversed(us))


def internal_from_dict(data: dict, n_obs: int, n_actions: int) -> InternalStateSpec:
    if data.get("kind") == "sliding_block":
        return sliding_block(int(data["n"]), n_obs, n_actions)
    if "internal_kernel" in data:
        spec = generic_internal(data["internal_kernel"])
        if (spec.n_obs, spec.n_actions) != (n_obs, n_actions):
            raise DimensionMismatch("internal kernel does not match the model's Y and U")
        return spec
    raise ModelValidationError("controller needs kind=sliding_block or internal_kernel")


def internal_step(spec: InternalStateSpec, z: int, y: int, u: int, rng=None) -> int:
    if spec.deterministic:
        return int(spec.next_state[z, y, u])
    return int(rng.choice(spec.n_z, p=spec.kernel[z, y, u]))


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Features ``psi[y, z, u]`` in R^d with every row of norm at most one."""

    psi: np.ndarray

    def __post_init__(self):
        psi = np.array(self.psi, dtype=float)
        if psi.ndim != 4:
            raise DimensionMismatch("features must have shape (Y, Z, U, d)")
        if np.any(np.linalg.norm(psi, axis=-1) > 1.0 + 1e-12):
            raise ModelValidationError("feature vectors must have norm <= 1")
        psi.setflags(write=False)
        object.__setattr__(self, "psi", psi)

    @property
    def dim(self) -> int:
        return self.psi.shape[-1]

    @property
    def shape(self):
        return self.psi.shape[:3]

    def matrix(self) -> np.ndarray:
        """Features flattened to ``(Y*Z*U, d)`` in C order."""
        return self.psi.reshape(-1, self.dim)

    def __call__(self, y, z, u):
        return self.psi[y, z, u]


def tabular_features(n_obs: int, n_z: int, n_actions: int, cap: int = MAX_FEATURE_DIM) -> FeatureMap:
    d = n_obs * n_z * n_actions
    if d > cap:
        raise SizeOverflow(f"tabular features need d={d} > cap {cap}")
    return FeatureMap(np.eye(d).reshape(n_obs, n_z, n_actions, d))


def _softmax(logits, axis=-1):
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


@dataclass(frozen=True, eq=False)
class FscPolicy:
    """Softmax-linear policy ``pi(u|y,z) ∝ exp(theta . psi(y,z,u))``."""

    theta: np.ndarray
    features: FeatureMap
    internal: InternalStateSpec

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.shape != (self.features.dim,):
            raise DimensionMismatch(f"theta has shape {theta.shape}, features have d={self.features.dim}")
        ny, nz, nu = self.features.shape
        if (ny, nz, nu) != (self.internal.n_obs, self.internal.n_z, self.internal.n_actions):
            raise DimensionMismatch("feature map does not match the internal-state space")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def uniform(cls, features, internal):
        return cls(np.zeros(features.dim), features, internal)

    def with_theta(self, theta) -> "FscPolicy":
        return FscPolicy(theta, self.features, self.internal)

    def table(self) -> np.ndarray:
        """All action probabilities, shape ``(Y, Z, U)``."""
        return _softmax(self.features.psi @ self.theta)

    def score_table(self) -> np.ndarray:
        """``grad log pi(u|y,z)`` for every triple, shape ``(Y, Z, U, d)``."""
        psi = self.features.psi
        mean = np.einsum("yzu,yzud->yzd", self.table(), psi)
        return psi - mean[:, :, None, :]


def action_probs(policy: FscPolicy, y: int, z: int) -> np.ndarray:
    return _softmax(policy.features.psi[y, z] @ policy.theta)


def log_policy_gradient(policy: FscPolicy, y: int, z: int, u: int) -> np.ndarray:
    psi = policy.features.psi[y, z]
    return psi[u] - action_probs(policy, y, z) @ psi


def policy_table(policy) -> np.ndarray:
    """Accept an :class:`FscPolicy` or an explicit ``(Y, Z, U)`` probability table."""
    if isinstance(policy, FscPolicy):
        return policy.table()
    return np.asarray(policy, dtype=float)
