"""Experiment configuration, orchestration and CSV output."""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .actor import ActorConfig, run_nac
from .benchmarks import KINDS, generate_benchmark
from .controllers import FscPolicy, InternalStateSpec, generic_internal, sliding_block, tabular_features
from .critic import CriticConfig
from .errors import ConfigParseError, ConfigValidationError, ModelValidationError, PomdpError
from .model import PomdpModel, load_model
from .sampling import WarmStart, rng_stream

VERSION = "0.1.0"

TOP_KEYS = {"model", "n", "internal_kernel", "actor", "critic", "seeds", "output_dir", "oracle",
            "warm_start", "reference", "value_samples", "timing"}
ACTOR_KEYS = {"T", "N", "R", "eta", "zeta"}
CRITIC_KEYS = {"m", "K", "R", "alpha"}
WARM_KEYS = {"explore", "vartheta", "z_init"}
DEFAULTS = {"T": 20, "N": 1000, "K": 5000, "m": 1}


@dataclass
class ExperimentConfig:
    model: PomdpModel
    internal: InternalStateSpec
    actor: ActorConfig
    critic: CriticConfig
    seeds: list
    output_dir: str
    oracle: str = "auto"
    warm: Optional[WarmStart] = None
    reference: Optional[str] = None
    value_samples: int = 10**4
    timing: bool = False
    raw: dict = field(default_factory=dict, repr=False)

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()[:16]


def _parse_json(text: str, source: str) -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigParseError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigParseError(f"{source}: top level must be a JSON object")
    return data


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigParseError(f"{where}: expected an object")
    unknown = sorted(set(obj) - allowed)
    if unknown:
        raise ConfigParseError(f"{where}: unknown key(s) {', '.join(unknown)}")


def _resolve(path, base):
    return path if os.path.isabs(path) else os.path.join(base, path)


def build_model(spec, base: str = ".") -> PomdpModel:
    """A model from a JSON file path or an inline generator spec ``{"kind": ...}``."""
    if isinstance(spec, str):
        return load_model(_resolve(spec, base))
    if isinstance(spec, dict) and spec.get("kind") in KINDS:
        return generate_benchmark(spec)
    if isinstance(spec, dict):
        return PomdpModel.from_dict(spec)
    raise ModelValidationError("model must be a path, a generator spec or an inline model")


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON experiment file; unknown keys are rejected.

    Raises :class:`ConfigParseError` for malformed JSON or unknown keys and
    :class:`ConfigValidationError` listing every invalid value.
    """
    with open(path) as fh:
        text = fh.read()
    return config_from_dict(_parse_json(text, str(path)), base=os.path.dirname(os.path.abspath(path)))


def _number(problems, obj, key, kind=float, positive=True, default=None):
    if key not in obj or obj[key] is None:
        return default
    val = obj[key]
    ok = isinstance(val, (int, float)) and not isinstance(val, bool)
    if ok and kind is int:
        ok = float(val).is_integer()
    if not ok or (positive and not val > 0) or not math.isfinite(val):
        problems.append(f"{key} must be a {'positive ' if positive else ''}{'integer' if kind is int else 'number'},"
                        f" got {val!r}")
        return default
    return kind(val)


def config_from_dict(data: dict, base: str = ".") -> ExperimentConfig:
    _check_keys(data, TOP_KEYS, "config")
    actor_raw = data.get("actor", {})
    critic_raw = data.get("critic", {})
    warm_raw = data.get("warm_start", {})
    _check_keys(actor_raw, ACTOR_KEYS, "actor")
    _check_keys(critic_raw, CRITIC_KEYS, "critic")
    _check_keys(warm_raw, WARM_KEYS, "warm_start")
    problems = []
    if "model" not in data:
        problems.append("model is required")
    if ("n" in data) == ("internal_kernel" in data):
        problems.append("exactly one of n or internal_kernel is required")
    T = _number(problems, actor_raw, "T", int, default=DEFAULTS["T"])
    N = _number(problems, actor_raw, "N", int, default=DEFAULTS["N"])
    K = _number(problems, critic_raw, "K", int, default=DEFAULTS["K"])
    m = _number(problems, critic_raw, "m", int, default=DEFAULTS["m"])
    R_actor = _number(problems, actor_raw, "R")
    R_critic = _number(problems, critic_raw, "R")
    eta = _number(problems, actor_raw, "eta")
    zeta = _number(problems, actor_raw, "zeta")
    alpha = _number(problems, critic_raw, "alpha")
    n = _number(problems, data, "n", int, positive=False) if "n" in data else None
    if n is not None and n < 0:
        problems.append(f"n must be >= 0, got {n}")
    value_samples = _number(problems, data, "value_samples", int, default=10**4)
    seeds = data.get("seeds", [0])
    if (not isinstance(seeds, list) or not seeds
            or not all(isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in seeds)):
        problems.append("seeds must be a non-empty list of non-negative integers")
        seeds = [0]
    elif len(set(seeds)) != len(seeds):
        problems.append("seeds must be distinct")
    oracle = data.get("oracle", "auto")
    if oracle not in ("auto", "on", "off"):
        problems.append(f"oracle must be auto, on or off, got {oracle!r}")
    reference = data.get("reference")
    if reference not in (None, "bruteforce"):
        problems.append(f"reference must be null or 'bruteforce', got {reference!r}")
    timing = data.get("timing", False)
    if not isinstance(timing, bool):
        problems.append("timing must be true or false")
    output_dir = data.get("output_dir", "runs")
    if not isinstance(output_dir, str):
        problems.append("output_dir must be a string")
    model = internal = None
    if "model" in data:
        spec = data["model"]
        if isinstance(spec, str) and not os.path.exists(_resolve(spec, base)):
            problems.append(f"model file {spec!r} does not exist")
        else:
            try:
                model = build_model(spec, base)
            except (PomdpError, KeyError, TypeError, ValueError) as exc:
                problems.append(f"model: {exc}")
    if model is not None:
        try:
            if n is not None:
                internal = sliding_block(n, model.n_obs, model.n_actions)
            elif "internal_kernel" in data:
                kern = data["internal_kernel"]
                if isinstance(kern, str):
                    with open(_resolve(kern, base)) as fh:
                        kern = json.load(fh)
                    kern = kern.get("internal_kernel", kern) if isinstance(kern, dict) else kern
                internal = generic_internal(kern)
                if (internal.n_obs, internal.n_actions) != (model.n_obs, model.n_actions):
                    problems.append("internal_kernel does not match the model's Y and U")
        except (PomdpError, OSError, ValueError) as exc:
            problems.append(f"controller: {exc}")
    if problems:
        raise ConfigValidationError(problems)
    features = tabular_features(model.n_obs, internal.n_z, model.n_actions)
    R_critic = R_critic or math.sqrt(features.dim) * model.v_max
    R_actor = R_actor or model.v_max
    actor = ActorConfig(T, N, R_actor, eta, zeta)
    actor = ActorConfig(T, N, R_actor, actor.policy_step(), actor.sgd_step(model))
    critic = CriticConfig(m, K, R_critic, features, alpha)
    critic = CriticConfig(m, K, R_critic, features, critic.step_size)
    warm = WarmStart(internal.block_length,
                     *(None if warm_raw.get(k) is None else np.asarray(warm_raw[k], dtype=float)
                       for k in ("explore", "vartheta", "z_init")))
    return ExperimentConfig(model, internal, actor, critic, list(seeds), output_dir, oracle, warm,
                            reference, value_samples, timing, raw=data)


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_csv(path_or_buf, columns, rows, comments=()):
    """CSV with leading ``# key=value`` comment lines and a header row."""
    own = isinstance(path_or_buf, (str, os.PathLike))
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        for c in comments:
            fh.write(f"# {c}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(v) for v in row])
    finally:
        if own:
            fh.close()


def provenance(config_hash: str, extra: str = "") -> list:
    line = f"config_hash={config_hash} version=pomdp_nac-{VERSION}"
    return [line + (f" {extra}" if extra else "")]


NAC_COLUMNS = ["t", "V_hat", "V_oracle", "sgd_loss_mean", "w_norm", "kl_potential", "seconds"]


def run_seed(config: ExperimentConfig, seed: int):
    """One NAC run; returns ``(rows, value_source)``."""
    reference = None
    if config.reference == "bruteforce":
        from .oracle import best_fsc_bruteforce

        reference, _ = best_fsc_bruteforce(config.model, config.internal, config.warm)
    rng = rng_stream(seed, "train-nac")
    _, log = run_nac(config.model, config.internal, config.actor, config.critic, config.warm, rng,
                     oracle=config.oracle, reference=reference, value_samples=config.value_samples)
    rows = []
    for rec in log.records:
        oracle_val = rec.value if rec.value_source == "oracle" else None
        rows.append([rec.t, rec.value, oracle_val, rec.sgd_loss_mean, rec.w_norm, rec.kl_potential,
                     rec.seconds if config.timing else None])
    source = log.records[0].value_source if log.records else "none"
    final_oracle = log.final_value if source == "oracle" else None
    rows.append([config.actor.T, log.final_value, final_oracle, None, None, None, None])
    return rows, source


def run_experiment(config: ExperimentConfig, output_dir: Optional[str] = None, threads: int = 1) -> int:
    """Run every seed, write ``seed_<s>.csv`` files and ``summary.csv``; returns 0."""
    out = output_dir or config.output_dir
    os.makedirs(out, exist_ok=True)
    seeds = config.seeds
    if threads > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda s: run_seed(config, s), seeds))
    else:
        results = [run_seed(config, s) for s in seeds]
    for seed, (rows, source) in zip(seeds, results):
        write_csv(os.path.join(out, f"seed_{seed}.csv"), NAC_COLUMNS, rows,
                  provenance(config.config_hash, f"seed={seed} value_source={source}"))
    write_csv(os.path.join(out, "summary.csv"), *summarize([r for r, _ in results]),
              comments=provenance(config.config_hash, f"seeds={','.join(map(str, seeds))}"))
    return 0


def summarize(per_seed_rows):
    """Mean and standard deviation of each numeric column per iteration."""
    metrics = NAC_COLUMNS[1:]
    columns = ["t"] + [f"{c}_{s}" for c in metrics for s in ("mean", "std")]
    rows = []
    for i in range(len(per_seed_rows[0])):
        row = [per_seed_rows[0][i][0]]
        for j in range(1, len(NAC_COLUMNS)):
            vals = [r[i][j] for r in per_seed_rows if r[i][j] is not None]
            if vals:
                row += [float(np.mean(vals)), float(np.std(vals))]
            else:
                row += [None, None]
        rows.append(row)
    return columns, rows


def load_policy(path_or_data, model: PomdpModel, block_length: Optional[int] = None):
    """Policy file: ``{"controller": {...}, "theta": [...]}`` or ``{"controller": ..., "table": [...]}``.

    ``controller`` is ``{"kind": "sliding_block", "n": n}`` or
    ``{"internal_kernel": ...}``; without it ``block_length`` selects a
    sliding block.  ``theta`` parameterizes tabular softmax features; an
    explicit ``table`` of shape ``(Y, Z, U)`` is used as given.  Returns
    ``(policy_or_table, internal, features)``.
    """
    from .controllers import internal_from_dict

    data = path_or_data
    if isinstance(path_or_data, (str, os.PathLike)):
        with open(path_or_data) as fh:
            data = _parse_json(fh.read(), str(path_or_data))
    _check_keys(data, {"controller", "theta", "table"}, "policy")
    if "controller" in data:
        internal = internal_from_dict(data["controller"], model.n_obs, model.n_actions)
    else:
        internal = sliding_block(block_length or 0, model.n_obs, model.n_actions)
    features = tabular_features(model.n_obs, internal.n_z, model.n_actions)
    if "table" in data:
        table = np.asarray(data["table"], dtype=float)
        if table.shape != (model.n_obs, internal.n_z, model.n_actions):
            raise ConfigValidationError([f"policy table shape {table.shape} does not match (Y, Z, U)"])
        if np.any(table < 0) or np.any(np.abs(table.sum(-1) - 1) > 1e-9):
            raise ConfigValidationError(["policy table rows must be probability vectors"])
        return table, internal, features
    theta = np.asarray(data.get("theta", np.zeros(features.dim)), dtype=float)
    return FscPolicy(theta, features, internal), internal, features


def to_text(columns, rows, comments=()) -> str:
    buf = io.StringIO()
    write_csv(buf, columns, rows, comments)
    return buf.getvalue()
