"""Finite POMDP model, exact Bayes filtering and belief utilities."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DegenerateObservation, DimensionMismatch, ModelValidationError

# Rows off by more than this are rejected rather than renormalized.
ROW_TOLERANCE = 1e-9
MAX_DENSE_ENTRIES = 10**6


def _check_stochastic(arr, name, problems):
    if np.any(~np.isfinite(arr)):
        problems.append(f"{name} has non-finite entries")
        return arr
    if np.any(arr < 0):
        problems.append(f"{name} has negative entries")
        return arr
    sums = arr.sum(axis=-1)
    bad = np.abs(sums - 1.0) > ROW_TOLERANCE
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        problems.append(f"{name} row {idx} sums to {sums[idx]!r}")
        return arr
    # leave rows alone when they are already one to rounding, so save/load round-trips exactly
    off = np.abs(sums - 1.0) > 4 * np.finfo(float).eps
    return np.where(off[..., None], arr / sums[..., None], arr)


@dataclass(frozen=True, eq=False)
class PomdpModel:
    """Finite POMDP ``(P, Phi, r, gamma)``.

    ``transition[x, u, x']`` is the state kernel, ``channel[x, y]`` the
    observation channel and ``reward[x, u]`` the one-step reward.  Rows are
    renormalized when they are off by at most ``ROW_TOLERANCE``; larger
    deviations raise :class:`ModelValidationError`.
    """

    transition: np.ndarray
    channel: np.ndarray
    reward: np.ndarray
    gamma: float
    r_max: Optional[float] = None
    name: str = ""

    def __post_init__(self):
        P = np.array(self.transition, dtype=float)
        Phi = np.array(self.channel, dtype=float)
        r = np.array(self.reward, dtype=float)
        problems = []
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ModelValidationError(f"transition must be |X|x|U|x|X|, got {P.shape}")
        nx, nu, _ = P.shape
        if Phi.ndim != 2 or Phi.shape[0] != nx:
            raise ModelValidationError(f"channel must be |X|x|Y|, got {Phi.shape}")
        if r.shape != (nx, nu):
            raise ModelValidationError(f"reward must be {(nx, nu)}, got {r.shape}")
        if nx * nu * nx > MAX_DENSE_ENTRIES:
            raise ModelValidationError("model exceeds the dense-storage cap")
        P = _check_stochastic(P, "transition", problems)
        Phi = _check_stochastic(Phi, "channel", problems)
        gamma = float(self.gamma)
        if not 0.0 < gamma < 1.0:
            problems.append(f"gamma={gamma} not in (0, 1)")
        if np.any(~np.isfinite(r)) or np.any(r < 0):
            problems.append("reward must be finite and non-negative")
        top = float(r.max()) if r.size else 0.0
        r_max = self.r_max
        if r_max is None:
            r_max = top if top > 0 else 1.0
        r_max = float(r_max)
        if top > r_max:
            problems.append(f"reward exceeds r_max={r_max}")
        if problems:
            raise ModelValidationError("; ".join(problems))
        for arr in (P, Phi, r):
            arr.setflags(write=False)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "channel", Phi)
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "r_max", r_max)

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def n_obs(self) -> int:
        return self.channel.shape[1]

    @property
    def v_max(self) -> float:
        return self.r_max / (1.0 - self.gamma)

    def to_dict(self) -> dict:
        out = {
            "states": self.n_states,
            "actions": self.n_actions,
            "observations": self.n_obs,
            "gamma": self.gamma,
            "transition": self.transition.tolist(),
            "channel": self.channel.tolist(),
            "reward": self.reward.tolist(),
            "r_max": self.r_max,
        }
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PomdpModel":
        allowed = {"states", "actions", "observations", "gamma", "transition",
                   "channel", "reward", "name", "r_max"}
        unknown = set(data) - allowed
        if unknown:
            raise ModelValidationError(f"unknown model keys: {sorted(unknown)}")
        missing = {"gamma", "transition", "channel", "reward"} - set(data)
        if missing:
            raise ModelValidationError(f"missing model keys: {sorted(missing)}")
        model = cls(data["transition"], data["channel"], data["reward"], data["gamma"],
                    r_max=data.get("r_max"), name=data.get("name", ""))
        declared = (data.get("states"), data.get("actions"), data.get("observations"))
        actual = (model.n_states, model.n_actions, model.n_obs)
        for key, want, got in zip(("states", "actions", "observations"), declared, actual):
            if want is not None and int(want) != got:
                raise ModelValidationError(f"{key}={want} disagrees with array shape ({got})")
        return model


def load_model(path) -> PomdpModel:
    with open(path) as fh:
        return PomdpModel.from_dict(json.load(fh))


def save_model(model: PomdpModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh, indent=1)


@dataclass(frozen=True, eq=False)
class Belief:
    probs: np.ndarray
    provenance: Optional[tuple] = None

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 1 or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValueError("belief must be a non-negative vector summing to 1")
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)

    def __array__(self, dtype=None, copy=None):
        return self.probs if dtype is None else self.probs.astype(dtype)

    def __len__(self):
        return len(self.probs)


@dataclass(frozen=True)
class History:
    """Realized history ``h_k``: initial ``(y0, z0)``, then ``y_1..y_k`` and ``u_0..u_{k-1}``."""

    initial: tuple
    observations: tuple = field(default_factory=tuple)
    actions: tuple = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(int(y) for y in self.observations))
        object.__setattr__(self, "actions", tuple(int(u) for u in self.actions))
        if len(self.observations) != len(self.actions):
            raise ValueError("history needs as many actions as post-initial observations")

    def __len__(self):
        return len(self.observations)


def _probs(b):
    return b.probs if isinstance(b, Belief) else np.asarray(b, dtype=float)


def filter_update(probs, y, u, model):
    """Unnormalized-safe Bayes update on a raw vector; returns ``(posterior, normalizer)``."""
    unnorm = (probs @ model.transition[:, u, :]) * model.channel[:, y]
    z = unnorm.sum()
    if z <= 0.0:
        raise DegenerateObservation(f"observation {y} impossible after action {u}")
    return unnorm / z, z


def filter_step(b, y: int, u: int, model: PomdpModel, provenance=None) -> Belief:
    """One application of the Bayes filter ``F(b, y, u)``."""
    post, _ = filter_update(_probs(b), y, u, model)
    return Belief(post, provenance)


def filter_n(b0, ys: Sequence[int], us: Sequence[int], model: PomdpModel) -> Belief:
    """``F^(n)``: fold :func:`filter_step` over aligned ``(y_j, u_{j-1})`` pairs."""
    if len(ys) != len(us):
        raise DimensionMismatch(f"{len(ys)} observations but {len(us)} actions")
    p = _probs(b0)
    for j, (y, u) in enumerate(zip(ys, us)):
        try:
            p, _ = filter_update(p, y, u, model)
        except DegenerateObservation as exc:
            raise DegenerateObservation(str(exc), step=j) from None
    return Belief(p)


def belief_reward(b, u: int, model: PomdpModel) -> float:
    return float(_probs(b) @ model.reward[:, u])


def tv_distance(p, q) -> float:
    p = _probs(p)
    q = _probs(q)
    if p.shape != q.shape:
        raise DimensionMismatch(f"shapes {p.shape} and {q.shape} differ")
    return 0.5 * float(np.abs(p - q).sum())


def tv_rows(p, q):
    """Row-wise total variation for stacked distributions."""
    return 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)
