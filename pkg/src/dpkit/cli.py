"""Command-line interface: ``dpkit <subcommand> [flags]``.

Flags may also come from ``--config FILE`` holding ``key = value`` lines
(keys are flag names without dashes). Flags given on the command line win.
The master seed falls back to ``$DPKIT_SEED`` and then 0.

Exit codes: 0 success, 1 a checked criterion failed, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import audit
from .core import (
    ParameterError,
    PrivacyBudget,
    RobustnessProfile,
    derive_seed,
    gen_gaussian,
    make_rng,
    read_csv,
    write_csv,
)
from .estimators import KINDS, RobustEstimatorSpec, estimate
from .mechanisms import (
    MechanismConfig,
    ProductScoreField,
    build_field,
    default_oracle,
    ptr_pipeline,
    smooth_inv_mech,
    truncated_inv_mech,
)
from .sensitivity import BruteForceOracle
from .transforms import robust_to_private


def _floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _ints(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _emit(obj, path) -> None:
    text = json.dumps(audit._clean(obj), sort_keys=True, indent=2)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("DPKIT_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ParameterError(f"DPKIT_SEED must be an integer, got {env!r}") from None


def _spec(args) -> RobustEstimatorSpec:
    return RobustEstimatorSpec(args.estimator, args.radius, args.dim, fraction=args.fraction,
                               k=args.k, resolution=args.resolution)


def _load(args) -> np.ndarray:
    if not args.input:
        raise ParameterError("--input is required")
    return read_csv(args.input, header=args.header)


# -- subcommands -------------------------------------------------------------------


def cmd_gen(args) -> int:
    mu = _floats(args.mu) if args.mu else [0.0] * args.dim
    data = gen_gaussian(args.n, mu, args.sigma, _seed(args))
    if args.output:
        write_csv(args.output, data)
    else:
        for row in data:
            print(",".join(format(float(x), ".17g") for x in row))
    return 0


def cmd_estimate(args) -> int:
    value = estimate(_spec(args), _load(args))
    _emit({"value": np.atleast_1d(value), "estimator": args.estimator}, args.output)
    return 0


def _config(args, K=None, B=None) -> MechanismConfig:
    return MechanismConfig(args.epsilon, args.delta, args.rho, K, args.grid_res or args.rho / 2,
                           args.radius, args.dim, B=B, beta=args.beta,
                           norm="linf" if args.estimator == "topKSparseMedian" else "l2",
                           sparsity=args.sparsity)


def _oracle(args, spec):
    if args.method == "bruteforce":
        if not args.replacement_grid:
            raise ParameterError("--replacement-grid is required for brute force")
        return BruteForceOracle(spec, _floats(args.replacement_grid), args.cap)
    return default_oracle(spec)


def cmd_oracle(args) -> int:
    spec = _spec(args)
    data = _load(args)
    args.epsilon = 1.0
    fld = build_field(data, _config(args), _oracle(args, spec))
    if isinstance(fld, ProductScoreField):
        fld = fld.to_field()
    if args.output:
        fld.to_csv(args.output)
    else:
        fld.write(sys.stdout)
    return 0


def cmd_calibrate(args) -> int:
    spec = _spec(args)
    source = audit.GaussianSource(args.n, tuple([0.0] * args.dim))
    seed = _seed(args)
    alpha0 = args.alpha0
    if alpha0 is None and args.mode == "pure":
        alpha0 = audit.clean_baseline(spec, source, args.beta, args.trials, seed)
    alpha = args.alpha
    if alpha is None:
        alpha = audit.robust_alpha(spec, source, args.tau, args.beta, args.trials,
                                   derive_seed(seed, 1))
    rob = spec.with_profile(RobustnessProfile(args.tau, args.beta, alpha))
    res = robust_to_private(rob, PrivacyBudget(args.epsilon, args.delta), alpha0, args.mode,
                            args.n, grid_res=args.grid_res)
    out = res.to_json()
    out["alpha0"] = alpha0
    _emit(out, args.output)
    return 0 if res.valid else 1


def cmd_run(args) -> int:
    spec = _spec(args)
    data = _load(args)
    seed = _seed(args)
    oracle = _oracle(args, spec)
    if args.B is not None:
        if args.k_trunc is None:
            raise ParameterError("PTR needs --k-trunc")
        out = ptr_pipeline(data, spec, _config(args, args.k_trunc, args.B), seed, oracle)
    elif args.k_trunc is not None:
        out = truncated_inv_mech(data, spec, _config(args, args.k_trunc), oracle, seed)
    else:
        out = smooth_inv_mech(data, spec, _config(args), oracle, seed)
    _emit(out.to_json(seed), args.output)
    return 0


def _neighbor_pairs(count: int, n: int, values, seed: int):
    rng = make_rng(seed)
    for _ in range(count):
        a = rng.choice(values, size=n)
        b = a.copy()
        b[rng.integers(n)] = rng.choice(values)
        yield a.reshape(-1, 1), b.reshape(-1, 1)


def cmd_audit_dp(args) -> int:
    seed = _seed(args)
    if args.mechanism == "rr":
        mech, pairs = audit.RandomizedResponse(args.epsilon), [([0], [1])]
    elif args.mechanism == "constant":
        mech, pairs = audit.ConstantMechanism(), [([0], [1])]
    elif args.mechanism == "identity":
        mech, pairs = audit.IdentityMechanism([0, 1]), [([0], [1])]
    else:
        spec = RobustEstimatorSpec("projectedMedian", args.radius)
        config = MechanismConfig(args.epsilon, rho=args.rho, grid_res=args.grid_res or args.rho,
                                 radius=args.radius)
        mech = audit.GridMechanism(spec, config)
        values = np.arange(-args.radius, args.radius + 1e-9, 0.5)
        pairs = list(_neighbor_pairs(args.pairs, args.n, values, derive_seed(seed, 99)))
    report = audit.audit_dp(mech, pairs, args.epsilon, args.samples, seed)
    _emit(report.to_dict(args.timing), args.output)
    return 0 if report.passed else 1


def cmd_audit_robust(args) -> int:
    spec = _spec(args)
    source = audit.GaussianSource(args.n, tuple([0.0] * args.dim))
    profile = RobustnessProfile(args.tau, args.beta, args.alpha)
    report = audit.audit_robustness(spec, source, profile, trials=args.trials, seed=_seed(args),
                                    workers=args.workers)
    _emit(report.to_dict(args.timing), args.output)
    return 0 if report.passed else 1


def cmd_bench(args) -> int:
    report = audit.bench_accuracy(_ints(args.n_grid), _floats(args.eps_grid), args.trials,
                                  _seed(args), args.beta, args.radius, args.csv, args.workers)
    _emit(report.to_dict(args.timing), args.output)
    return 0 if report.passed else 1


def cmd_equivalence(args) -> int:
    report = audit.equivalence_experiment(args.n, args.epsilon, args.trials, _seed(args),
                                          args.beta, workers=args.workers)
    _emit(report.to_dict(args.timing), args.output)
    return 0 if report.passed else 1


# -- parser --------------------------------------------------------------------------


def _common(p, estimator=False, privacy=False):
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--output")
    if estimator:
        p.add_argument("--estimator", choices=KINDS, default="projectedMedian")
        p.add_argument("--radius", type=float, default=10.0)
        p.add_argument("--dim", type=int, default=1)
        p.add_argument("--fraction", type=float, default=0.1)
        p.add_argument("--k", type=int, default=1)
        p.add_argument("--resolution", type=float, default=0.1)
        p.add_argument("--input")
        p.add_argument("--header", action="store_true")
    if privacy:
        p.add_argument("--epsilon", type=float, default=1.0)
        p.add_argument("--delta", type=float, default=0.0)
        p.add_argument("--rho", type=float, default=0.1)
        p.add_argument("--grid-res", type=float)
        p.add_argument("--beta", type=float, default=0.05)
        p.add_argument("--sparsity", type=int)
        p.add_argument("--method", choices=("analytic", "bruteforce"), default="analytic")
        p.add_argument("--replacement-grid")
        p.add_argument("--cap", type=int, default=8)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpkit", description="private estimators from robust ones")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="sample a Gaussian dataset to CSV")
    _common(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--mu")
    p.add_argument("--sigma", type=float, default=1.0)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("estimate", help="run a catalog robust estimator")
    _common(p, estimator=True)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("oracle", help="write the score field of a dataset")
    _common(p, estimator=True, privacy=True)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("calibrate", help="calibrate a transformation and print the result")
    _common(p, estimator=True)
    p.add_argument("--mode", choices=("pure", "approx"), default="pure")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--delta", type=float, default=0.0)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--alpha", type=float)
    p.add_argument("--alpha0", type=float)
    p.add_argument("--grid-res", type=float)
    p.add_argument("--trials", type=int, default=500)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="draw one output of a mechanism")
    _common(p, estimator=True, privacy=True)
    p.add_argument("--k-trunc", type=int)
    p.add_argument("--B", type=float)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("audit-dp", help="sampling audit of the privacy ratio")
    _common(p)
    p.add_argument("--mechanism", choices=("grid", "rr", "constant", "identity"), default="grid")
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=100_000)
    p.add_argument("--pairs", type=int, default=3)
    p.add_argument("--n", type=int, default=7)
    p.add_argument("--radius", type=float, default=2.0)
    p.add_argument("--rho", type=float, default=0.25)
    p.add_argument("--grid-res", type=float)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_audit_dp)

    p = sub.add_parser("audit-robust", help="robustness audit against the adversary suite")
    _common(p, estimator=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--tau", type=float, required=True)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_audit_robust)

    p = sub.add_parser("bench", help="accuracy benchmark over (n, epsilon)")
    _common(p)
    p.add_argument("--n-grid", default="200,800,3200")
    p.add_argument("--eps-grid", default="0.5,1")
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--radius", type=float, default=10.0)
    p.add_argument("--csv")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("equivalence", help="robust versus private error ratio")
    _common(p)
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--epsilon", type=float, default=1.0)
    p.add_argument("--trials", type=int, default=500)
    p.add_argument("--beta", type=float, default=0.05)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--timing", action="store_true")
    p.set_defaults(func=cmd_equivalence)
    return parser


def read_config(path) -> list[str]:
    """Turn ``key = value`` lines into flag tokens (``true``/``false`` for switches)."""
    tokens = []
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ParameterError(f"cannot read config {path}: {exc}") from None
    for num, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"{path}:{num}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        flag = "--" + key.replace("_", "-")
        if value.lower() == "true":
            tokens.append(flag)
        elif value.lower() != "false":
            tokens += [flag, value]
    return tokens


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    try:
        known, _ = pre.parse_known_args(argv[1:])
        if known.config and argv:
            # config tokens go first so explicit flags override them
            argv = [argv[0]] + read_config(known.config) + argv[1:]
        args = parser.parse_args(argv)
        return args.func(args)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    except ParameterError as exc:
        print(f"dpkit: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
