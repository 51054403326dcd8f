"""Command line entry point ``lab``.

Exit codes: 0 success, 2 usage or configuration error, 3 numerical
non-convergence, 4 I/O failure. ``LAB_BASE_SEED`` overrides the base seed of
simulations and sweeps.
"""

import argparse
import json
import os
import sys

import numpy as np

from .data import ProblemConfig, decompose
from .exceptions import ConfigurationError, DomainError, SolverError
from .experiments import PRESETS, SweepSpec, emit, load_spec, parse, preset, run_sweep, select_columns
from .linreg import linreg_asymptotics, optimal_lambda
from .logreg_theory import solve_nonseparable, solve_separable
from .risk import monte_carlo_risk, population_risks

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4


def _base_seed(default):
    env = os.environ.get("LAB_BASE_SEED")
    if env is None:
        return default
    try:
        return int(env)
    except ValueError:
        raise ConfigurationError(f"LAB_BASE_SEED must be an integer, got {env!r}")


def _write(text, out):
    if out is None:
        sys.stdout.write(text)
    else:
        try:
            with open(out, "w", newline="") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write {out}: {exc}") from exc


def _lambda_list(values):
    try:
        return [v if v == "opt" else float(v) for v in values]
    except ValueError:
        raise ConfigurationError(f"--lambda takes numbers or 'opt', got {values}")


def cmd_theory_linreg(args):
    lam = optimal_lambda(args.gamma, args.sigma2, args.eps)[0] if args.optimal else args.lam
    a = linreg_asymptotics(lam, args.gamma, args.sigma2, args.eps)
    print(json.dumps({"gamma": a.gamma, "lambda": a.lam, "sigma2": a.sigma2, "eps": a.eps, "sr": a.sr,
                      "ar": a.ar, "bias": a.bias, "variance": a.variance, "perp_mass": a.perp_mass}))


def cmd_theory_logreg(args):
    if args.separable:
        p = solve_separable(args.gamma, args.eps0, args.flip)
    else:
        p = solve_nonseparable(args.gamma, args.eps0, args.lam, args.flip)
    out = {"regime": p.regime, "gamma": p.gamma, "eps0": p.eps0, "lambda": p.lam, "flip": p.noise_sigma,
           "sr": p.sr, "ar": p.ar, "residual_norm": p.residual_norm}
    out.update({f"var_{k}": v for k, v in vars(p.vars).items()})
    print(json.dumps(out))


def cmd_sim(args):
    task = "regression" if args.model == "linreg" else "classification"
    kw = dict(d=max(1, int(round(args.gamma * args.n))), n=args.n, task=task, eps_test=args.eps,
              seed=_base_seed(args.seed))
    if task == "regression":
        kw.update(sigma2=args.sigma2)
    else:
        kw.update(eps_train=args.eps, label_flip_prob=args.flip, perturbation_norm=args.norm,
                  consistent=not args.inconsistent)
    spec = SweepSpec(f"sim-{args.model}", ProblemConfig(**kw), gamma_list=[args.gamma],
                     lambda_list=_lambda_list(args.lam), seeds=args.seeds, theory=args.theory,
                     method=args.method, gd_steps=args.steps, gd_compress=args.compress,
                     caps=not args.no_caps)
    rows = run_sweep(spec)
    _write(emit(rows, args.format), args.out)
    return EXIT_SOLVER if any(r.status not in ("ok", "not_converged") for r in rows) and args.strict else EXIT_OK


def cmd_sweep(args):
    if (args.preset is None) == (args.spec is None):
        raise ConfigurationError("give exactly one of --preset and --spec")
    spec = preset(args.preset) if args.preset else load_spec(args.spec)
    changes = {"base": spec.base.with_(seed=_base_seed(spec.base.seed))}
    if args.seeds is not None:
        changes["seeds"] = args.seeds
    if args.timing:
        changes["timing"] = True
    if args.no_caps:
        changes["caps"] = False
    spec = spec.with_(**changes)
    rows = run_sweep(spec, jobs=args.jobs)
    out = args.out or spec.out_path
    fmt = args.format or spec.out_format
    _write(emit(rows, fmt), out)
    return EXIT_OK


def _random_estimator(rng, d, task, consistent):
    theta_star = np.zeros(d)
    theta_star[0] = 1.0
    theta = rng.standard_normal(d) / np.sqrt(d) * rng.uniform(0.2, 2.0)
    theta[0] = rng.uniform(-0.5, 1.5) if task == "regression" else rng.uniform(0.1, 1.5)
    return decompose(theta, theta_star)


def cmd_oracle_risks(args):
    rng = np.random.default_rng(_base_seed(args.seed))
    norm = "l2" if args.task == "regression" else args.norm
    worst = 0.0
    for i in range(args.count):
        est = _random_estimator(rng, args.d, args.task, True)
        closed = population_risks(est, args.eps, args.task, norm, True)
        mc = monte_carlo_risk(est, args.eps, norm, True, args.task, samples=args.samples, seed=i)
        z = abs(closed.ar - mc.ar) / max(mc.stderr, 1e-300)
        worst = max(worst, z)
        print(f"{i:3d} closed_ar={closed.ar:.6f} mc_ar={mc.ar:.6f} stderr={mc.stderr:.2e} z={z:.2f}")
    print(f"max z = {worst:.2f}")
    return EXIT_OK if worst <= 3.0 else EXIT_SOLVER


def cmd_columns(args):
    try:
        rows = parse(args.input, args.format)
    except OSError as exc:
        raise OSError(f"cannot read {args.input}: {exc}") from exc
    where = dict(item.split("=", 1) for item in args.where)
    _write(select_columns(rows, args.cols.split(","), where), args.out)


def build_parser():
    p = argparse.ArgumentParser(prog="lab", description="Robust risk theory and simulations.")
    sub = p.add_subparsers(dest="command", required=True)

    th = sub.add_parser("theory", help="asymptotic predictions").add_subparsers(dest="model", required=True)
    t = th.add_parser("linreg", help="ridge regression risks")
    t.add_argument("--gamma", type=float, required=True)
    t.add_argument("--lambda", dest="lam", type=float, default=0.0)
    t.add_argument("--optimal", action="store_true", help="use the optimal lambda")
    t.add_argument("--sigma2", type=float, default=0.0)
    t.add_argument("--eps", type=float, default=0.0)
    t.set_defaults(func=cmd_theory_linreg)
    t = th.add_parser("logreg", help="robust logistic regression risks")
    t.add_argument("--gamma", type=float, required=True)
    t.add_argument("--eps0", type=float, required=True, help="eps * sqrt(d)")
    g = t.add_mutually_exclusive_group(required=True)
    g.add_argument("--lambda", dest="lam", type=float)
    g.add_argument("--separable", action="store_true", help="robust max-margin limit")
    t.add_argument("--flip", type=float, default=0.0)
    t.set_defaults(func=cmd_theory_logreg)

    s = sub.add_parser("sim", help="finite-sample simulation")
    s.add_argument("model", choices=["linreg", "logreg"])
    s.add_argument("--gamma", type=float, required=True)
    s.add_argument("--n", type=int, default=1000)
    s.add_argument("--lambda", dest="lam", nargs="+", default=["0"], help="values or 'opt'")
    s.add_argument("--eps", type=float, default=0.0)
    s.add_argument("--sigma2", type=float, default=0.0)
    s.add_argument("--flip", type=float, default=0.0)
    s.add_argument("--norm", choices=["linf", "l2"], default="linf")
    s.add_argument("--inconsistent", action="store_true")
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--method", choices=["fit", "gd"], default="fit")
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--compress", type=int, default=1)
    s.add_argument("--theory", action="store_true", help="add theory rows")
    s.add_argument("--strict", action="store_true", help="exit 3 if any point failed")
    s.add_argument("--no-caps", action="store_true")
    s.add_argument("--format", choices=["csv", "json-lines"], default="csv")
    s.add_argument("--out")
    s.set_defaults(func=cmd_sim)

    w = sub.add_parser("sweep", help="run a preset or a JSON spec")
    w.add_argument("--preset", help=f"one of {', '.join(sorted(PRESETS))}")
    w.add_argument("--spec", help="JSON file mirroring SweepSpec")
    w.add_argument("--out")
    w.add_argument("--format", choices=["csv", "json-lines"])
    w.add_argument("--seeds", type=int)
    w.add_argument("--jobs", type=int, default=1)
    w.add_argument("--timing", action="store_true", help="fill wall_ms (output no longer reproducible)")
    w.add_argument("--no-caps", action="store_true")
    w.set_defaults(func=cmd_sweep)

    o = sub.add_parser("oracle", help="Monte Carlo cross-checks").add_subparsers(dest="what", required=True)
    r = o.add_parser("risks", help="closed-form risks vs Monte Carlo with explicit attacks")
    r.add_argument("--task", choices=["regression", "classification"], required=True)
    r.add_argument("--samples", type=int, default=10**6)
    r.add_argument("--count", type=int, default=5)
    r.add_argument("--d", type=int, default=50)
    r.add_argument("--eps", type=float, default=0.3)
    r.add_argument("--norm", choices=["linf", "l2"], default="linf")
    r.add_argument("--seed", type=int, default=0)
    r.set_defaults(func=cmd_oracle_risks)

    c = sub.add_parser("columns", help="select columns of a result file for plotting")
    c.add_argument("input")
    c.add_argument("--cols", required=True, help="comma separated, e.g. gamma,ar")
    c.add_argument("--where", nargs="*", default=[], help="key=value filters")
    c.add_argument("--format", choices=["csv", "json-lines"], default="csv")
    c.add_argument("--out")
    c.set_defaults(func=cmd_columns)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        code = args.func(args)
    except (ConfigurationError, DomainError) as exc:
        print(f"lab: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"lab: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"lab: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
