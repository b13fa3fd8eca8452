"""``pomdp-nac`` command line."""
from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import harness
from .errors import (ConfigParseError, ConfigValidationError, DimensionMismatch, ModelValidationError,
                     PomdpError, SizeOverflow)
from .sampling import WarmStart, rng_stream

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def _out_path(args, default_name):
    out = getattr(args, "out", None)
    if out is None:
        return None
    if os.path.splitext(out)[1]:
        parent = os.path.dirname(out)
        if parent:
            os.makedirs(parent, exist_ok=True)
        return out
    os.makedirs(out, exist_ok=True)
    return os.path.join(out, default_name)


def _emit(args, name, columns, rows, comments):
    path = _out_path(args, name)
    if path is None:
        sys.stdout.write(harness.to_text(columns, rows, comments))
    else:
        harness.write_csv(path, columns, rows, comments)


def _seed(args):
    return 0 if args.seed is None else args.seed


def _hash(args):
    keys = {k: v for k, v in sorted(vars(args).items()) if k not in ("out", "threads", "func")}
    return harness.hashlib.sha256(json.dumps(keys, sort_keys=True, default=str).encode()).hexdigest()[:16]


def cmd_train_nac(args):
    if args.config:
        cfg = harness.load_config(args.config)
        if args.seed is not None:
            cfg.seeds = [args.seed]
        out = args.out if args.out and not os.path.splitext(args.out)[1] else None
        return harness.run_experiment(cfg, out, threads=args.threads)
    if not args.model:
        raise ConfigValidationError(["train-nac needs --model or --config"])
    data = {"model": os.path.abspath(args.model), "n": args.block_length, "seeds": [_seed(args)],
            "actor": {k: v for k, v in (("T", args.T), ("N", args.N), ("R", args.R_actor)) if v is not None},
            "critic": {k: v for k, v in (("K", args.K), ("m", args.m), ("R", args.R)) if v is not None},
            "timing": args.timing}
    cfg = harness.config_from_dict(data)
    rows, source = harness.run_seed(cfg, cfg.seeds[0])
    _emit(args, f"seed_{cfg.seeds[0]}.csv", harness.NAC_COLUMNS, rows,
          harness.provenance(cfg.config_hash, f"seed={cfg.seeds[0]} value_source={source}"))
    return EXIT_OK


def _model_and_policy(args):
    model = harness.build_model(os.path.abspath(args.model)) if os.path.exists(args.model) else None
    if model is None:
        raise ConfigValidationError([f"model file {args.model!r} does not exist"])
    if args.policy:
        policy, internal, features = harness.load_policy(args.policy, model, getattr(args, "n", None))
    else:
        policy, internal, features = harness.load_policy({}, model, getattr(args, "n", None) or 0)
    return model, policy, internal, features


def cmd_eval_critic(args):
    from .critic import CriticConfig, run_mstep_td
    from .oracle import JointChain, exact_visitation, fixed_point_q

    model, policy, internal, features = _model_and_policy(args)
    R = args.R or math.sqrt(features.dim) * model.v_max
    cfg = CriticConfig(args.m, args.K, R, features)
    every = max(1, args.K // args.log_points)
    est = run_mstep_td(policy, model, cfg, rng=rng_stream(_seed(args), "eval-critic"), every=every,
                       internal=internal)
    gaps = None
    if args.oracle != "off":
        try:
            chain = JointChain(model, internal)
            q_star = fixed_point_q(policy, model, internal, args.m, chain=chain)
            w = exact_visitation(policy, model, internal, chain=chain).d_pi
            gaps = [math.sqrt(float((w * (features.psi @ b - q_star) ** 2).sum())) for b in est.checkpoints]
        except SizeOverflow:
            if args.oracle == "on":
                raise
    rows = []
    for i, _ in enumerate(est.checkpoints):
        t = (i + 1) * every
        window = est.log[t - every:t]
        rows.append([t, float(window[-1, 0]), float(np.sqrt(np.mean(window[:, 1] ** 2))),
                     None if gaps is None else gaps[i]])
    _emit(args, "critic.csv", ["iter", "beta_norm", "td_error_proxy", "q_gap_vs_oracle"], rows,
          harness.provenance(_hash(args), f"M_const={est.M_const!r}"))
    return EXIT_OK


def cmd_solve_oracle(args):
    from .oracle import error_report

    model, policy, internal, features = _model_and_policy(args)
    R = args.R or math.sqrt(features.dim) * model.v_max
    rep = error_report(policy, model, internal, features, args.m, R, WarmStart(internal.block_length),
                       samples=args.samples, rng=rng_stream(_seed(args), "solve-oracle"))
    rows = [(k, v) for k, v in rep.rows()]
    if args.report == "json":
        text = json.dumps({"provenance": harness.provenance(_hash(args))[0], **dict(rows)}, indent=1)
        path = _out_path(args, "oracle.json")
        if path is None:
            sys.stdout.write(text + "\n")
        else:
            with open(path, "w") as fh:
                fh.write(text + "\n")
    else:
        _emit(args, "oracle.csv", ["field", "value"], rows, harness.provenance(_hash(args)))
    return EXIT_OK


def cmd_stability(args):
    from .errors import NotErgodic, SupportMismatch
    from .stability import certify, contraction_experiment

    model, policy, internal, _ = _model_and_policy(args)
    n_list = [int(s) for s in args.n_list.split(",") if s.strip()]
    if not n_list or min(n_list) < 0:
        raise ConfigValidationError(["--n-list must be non-negative integers"])
    try:
        cert = certify(policy, model, args.m0)
        note = "certificate=cond1+cond2"
    except (NotErgodic, SupportMismatch) as exc:
        cert, note = None, f"certificate=none ({type(exc).__name__})"
    res = contraction_experiment(model, policy, internal, n_list, samples=args.samples,
                                 rng=rng_stream(_seed(args), "stability"), certificate=cert)
    rows = [[n, res.tv_mean[i], res.tv_max[i], None if res.envelope is None else res.envelope[i],
             None if cert is None else cert.alpha, None if cert is None else cert.eps0]
            for i, n in enumerate(res.n_list)]
    _emit(args, "stability.csv", ["n", "tv_mean", "tv_max", "envelope", "certificate_alpha", "certificate_eps0"],
          rows, harness.provenance(_hash(args), note))
    return EXIT_OK


def cmd_gen_model(args):
    from .benchmarks import generate_benchmark
    from .model import save_model

    spec = {"kind": args.kind}
    if args.kind == "random_pomdp":
        spec.update(states=args.states, actions=args.actions, observations=args.observations,
                    seed=_seed(args), gamma=args.gamma)
    elif args.kind == "fully_observed":
        if not args.mdp:
            raise ConfigValidationError(["fully_observed needs --mdp FILE with transition, reward, gamma"])
        with open(args.mdp) as fh:
            mdp = json.load(fh)
        spec.update(transition=mdp["transition"], reward=mdp["reward"], gamma=mdp.get("gamma", args.gamma))
    else:
        spec["gamma"] = args.gamma
    model = generate_benchmark(spec)
    path = _out_path(args, f"{args.kind}.json")
    if path is None:
        json.dump(model.to_dict(), sys.stdout, indent=1)
        sys.stdout.write("\n")
    else:
        save_model(model, path)
    return EXIT_OK


def cmd_sample_check(args):
    from .oracle import JointChain, exact_visitation

    model, policy, internal, _ = _model_and_policy(args)
    chain = JointChain(model, internal)
    rng = rng_stream(_seed(args), "sample-check")
    ny, nz = model.n_obs, internal.n_z
    _, y, z, _ = chain.sampler.h0(args.samples, rng, track_belief=False)
    xi_hat = np.bincount(y * nz + z, minlength=ny * nz) / args.samples
    _, y, z, _ = chain.sampler.visitation(policy, args.samples, rng)
    d_hat = np.bincount(y * nz + z, minlength=ny * nz) / args.samples
    d = exact_visitation(policy, model, internal, chain=chain).d.ravel()
    xi = chain.law.xi.ravel()
    rows = [["xi", 0.5 * float(np.abs(xi_hat - xi).sum()), args.samples],
            ["visitation", 0.5 * float(np.abs(d_hat - d).sum()), args.samples]]
    _emit(args, "sample_check.csv", ["quantity", "tv", "samples"], rows, harness.provenance(_hash(args)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="JSON experiment config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS, help="output directory or file")
    common.add_argument("--threads", type=int, default=argparse.SUPPRESS)

    p = argparse.ArgumentParser(prog="pomdp-nac", description="Finite-state natural actor-critic toolkit")
    p.add_argument("--config", default=None, help="JSON experiment config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory or file")
    p.add_argument("--threads", type=int, default=1)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("train-nac", parents=[common], help="run the actor-critic loop")
    s.add_argument("--model")
    s.add_argument("--block-length", type=int, default=1)
    s.add_argument("--T", type=int)
    s.add_argument("--N", type=int)
    s.add_argument("--K", type=int)
    s.add_argument("--m", type=int)
    s.add_argument("--R", type=float, help="critic radius")
    s.add_argument("--R-actor", type=float, dest="R_actor")
    s.add_argument("--timing", action="store_true", help="fill the seconds column")
    s.set_defaults(func=cmd_train_nac)

    def model_policy(sp):
        sp.add_argument("--model", required=True)
        sp.add_argument("--policy")
        sp.add_argument("--n", type=int, default=None, help="sliding-block length when the policy omits a controller")

    s = sub.add_parser("eval-critic", parents=[common], help="m-step TD evaluation of one policy")
    model_policy(s)
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--K", type=int, default=10**4)
    s.add_argument("--R", type=float)
    s.add_argument("--log-points", type=int, default=100)
    s.add_argument("--oracle", choices=("auto", "on", "off"), default="auto")
    s.set_defaults(func=cmd_eval_critic)

    s = sub.add_parser("solve-oracle", parents=[common], help="exact error terms for one policy")
    model_policy(s)
    s.add_argument("--m", type=int, default=1)
    s.add_argument("--R", type=float)
    s.add_argument("--samples", type=int, default=10**4)
    s.add_argument("--report", choices=("json", "csv"), default="json")
    s.set_defaults(func=cmd_solve_oracle)

    s = sub.add_parser("stability", parents=[common], help="filter contraction measurement")
    model_policy(s)
    s.add_argument("--m0", type=int, default=1)
    s.add_argument("--n-list", default="1,2,4,8")
    s.add_argument("--samples", type=int, default=10**4)
    s.set_defaults(func=cmd_stability)

    s = sub.add_parser("gen-model", parents=[common], help="write a benchmark model")
    s.add_argument("--kind", choices=("two_state_noisy", "random_pomdp", "fully_observed"), required=True)
    s.add_argument("--states", type=int, default=3)
    s.add_argument("--actions", type=int, default=2)
    s.add_argument("--observations", type=int, default=2)
    s.add_argument("--gamma", type=float, default=0.9)
    s.add_argument("--mdp", help="JSON with transition, reward (and gamma) for fully_observed")
    s.set_defaults(func=cmd_gen_model)

    s = sub.add_parser("sample-check", parents=[common], help="empirical vs exact initial and visitation laws")
    model_policy(s)
    s.add_argument("--samples", type=int, default=10**5)
    s.set_defaults(func=cmd_sample_check)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigParseError, ConfigValidationError, ModelValidationError, DimensionMismatch) as exc:
        print(f"pomdp-nac: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"pomdp-nac: invalid input: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except PomdpError as exc:
        print(f"pomdp-nac {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"pomdp-nac: runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
