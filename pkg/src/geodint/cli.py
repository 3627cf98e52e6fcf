"""Command-line benchmark harness.

Subcommands: integrate, order, drift, verify, list-problems, list-schemes.
Trajectories are emitted as CSV (columns n,t,x1..xm,p1..pm,H,iters,
residual), study summaries as JSON.  Identical configuration and seed
produce byte-identical output.  Exit codes: 0 success, 1 configuration
error, 2 numerical failure mid-run.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import matfun
from .disgrad import (
    gradient_identity_residual,
    increment_gradient,
    symmetric_gradient,
)
from .errors import ConfigError, GeodintError, IntegrationError
from .exact_linear import LinearSystem, exact_step_linear
from .integrators import (
    GENERIC_RULES,
    GR_1D_RULES,
    GR_MULTI_RULES,
    RULES,
    Scheme,
    SolverConfig,
    integrate,
    step,
    theta_matrix,
)
from .model import RefPolicy, get_problem, list_problems
from .oracle import convergence_order, energy_drift, local_exactness_probe

_DEFAULT_POLICY = {"implicit-euler": "next", "midpoint": "midpoint",
                   "trapezoidal": "midpoint"}

_SUITES = ("linear", "local-exactness", "theta-form", "gradient-identity",
           "reversibility", "fixed-points")


def _fmt(v):
    return repr(float(v))


def _build_scheme(args):
    name = args.scheme
    if name not in RULES:
        raise ConfigError(f"unknown scheme: {name}")
    policy_name = args.policy or _DEFAULT_POLICY.get(name, "current")
    if policy_name == "fixed":
        if args.ref is None:
            raise ConfigError("--policy fixed requires --ref")
        policy = RefPolicy.fixed(_parse_vector(args.ref))
    elif policy_name in ("current", "next", "midpoint"):
        policy = RefPolicy(policy_name)
    else:
        raise ConfigError(f"unknown policy: {policy_name}")
    locally_exact = bool(args.locally_exact) or name == "exp-euler"
    return Scheme(name, policy, locally_exact)


def _parse_vector(text):
    try:
        return np.array([float(t) for t in text.split(",")])
    except ValueError:
        raise ConfigError(f"cannot parse vector {text!r}") from None


def _schedule(args):
    given_steps = args.steps is not None
    given_T = args.T is not None
    if args.schedule:
        if given_steps or given_T:
            raise ConfigError("--schedule replaces --steps/--T")
        try:
            with open(args.schedule) as fh:
                vals = [float(t) for t in fh.read().replace(",", " ").split()]
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot read schedule: {exc}") from None
        if not vals:
            raise ConfigError("schedule file is empty")
        return np.array(vals)
    if args.h is None:
        raise ConfigError("either --h or --schedule is required")
    if args.h <= 0:
        raise ConfigError("--h must be positive")
    if given_steps == given_T:
        raise ConfigError("exactly one of --steps/--T is required")
    if given_steps:
        n = args.steps
    else:
        n = round(args.T / args.h)
        if n < 1 or abs(n * args.h - args.T) > 1e-9 * abs(args.T):
            raise ConfigError("--T must be a positive integer multiple of --h")
    if n < 1:
        raise ConfigError("need at least one step")
    return np.full(n, args.h)


def _open_out(args):
    if args.output:
        return open(args.output, "w")
    return sys.stdout


def _emit(args, text):
    out = _open_out(args)
    try:
        out.write(text)
    finally:
        if out is not sys.stdout:
            out.close()


# ---------------------------------------------------------------------------


def cmd_integrate(args):
    problem = get_problem(args.problem)
    scheme = _build_scheme(args)
    schedule = _schedule(args)
    y0 = _parse_vector(args.y0) if args.y0 else problem.y0
    if y0.shape[0] != problem.dim:
        raise ConfigError(
            f"y0 must have {problem.dim} components for {problem.name}"
        )
    cfg = SolverConfig(tol=args.tol)
    m = problem.system.m
    header = (
        ["n", "t"]
        + [f"x{i + 1}" for i in range(m)]
        + [f"p{i + 1}" for i in range(m)]
        + ["H", "iters", "residual"]
    )
    error = None
    try:
        traj = integrate(scheme, problem, y0, schedule, cfg)
    except IntegrationError as exc:
        traj = exc.partial
        error = exc

    rows = []
    for k in range(traj.states.shape[0]):
        it = int(traj.iterations[k - 1]) if k > 0 else 0
        rs = float(traj.residuals[k - 1]) if k > 0 else 0.0
        rows.append(
            [k, traj.times[k]]
            + list(traj.states[k])
            + [traj.energies[k], it, rs]
        )
    if args.format == "csv":
        lines = [",".join(header)]
        for row in rows:
            lines.append(
                ",".join([str(row[0])] + [_fmt(v) for v in row[1:-2]]
                         + [str(row[-2]), _fmt(row[-1])])
            )
        if error is not None:
            lines.append(f"error,{error.index},{type(error.cause).__name__}")
        _emit(args, "\n".join(lines) + "\n")
    else:
        doc = {"header": header, "rows": [
            [row[0]] + [float(v) for v in row[1:-2]] + [row[-2], float(row[-1])]
            for row in rows
        ]}
        if error is not None:
            doc["error"] = {"step": error.index,
                            "type": type(error.cause).__name__,
                            "message": str(error.cause)}
        _emit(args, json.dumps(doc) + "\n")
    if error is not None:
        print(f"step {error.index} failed: {error.cause}", file=sys.stderr)
        return 2
    return 0


def cmd_order(args):
    problem = get_problem(args.problem)
    scheme = _build_scheme(args)
    h_list = [float(t) for t in args.h_list.split(",")]
    if len(h_list) < 4:
        raise ConfigError("need >= 4 step sizes")
    for a, b in zip(h_list, h_list[1:]):
        if not 1.9 <= a / b <= 2.1:
            raise ConfigError("step sizes must form a ratio-2 geometric sequence")
    y0 = _parse_vector(args.y0) if args.y0 else problem.y0
    cfg = SolverConfig(tol=args.tol)

    # GEODINT_THREADS caps the per-h fan-out of the study
    threads = max(1, int(os.environ.get("GEODINT_THREADS", "1")))
    est = convergence_order(
        scheme, problem, y0, args.T, h_list, cfg,
        max_workers=min(threads, len(h_list)),
    )
    doc = {
        "slope": est.slope,
        "errors": [[h, e] for h, e in est.errors],
        "fit_residual": est.fit_residual,
        "reliable": est.reliable,
    }
    _emit(args, json.dumps(doc) + "\n")
    return 0


def cmd_drift(args):
    problem = get_problem(args.problem)
    scheme = _build_scheme(args)
    schedule = _schedule(args)
    y0 = _parse_vector(args.y0) if args.y0 else problem.y0
    cfg = SolverConfig(tol=args.tol)
    try:
        traj = integrate(scheme, problem, y0, schedule, cfg)
    except IntegrationError as exc:
        print(f"step {exc.index} failed: {exc.cause}", file=sys.stderr)
        return 2
    e = traj.energies
    dev = np.abs(e - e[0])
    k = int(np.argmax(dev))
    doc = {
        "drift": float(dev[k] / max(1.0, abs(e[0]))),
        "argmax_step": k,
    }
    _emit(args, json.dumps(doc) + "\n")
    return 0


# ---------------------------------------------------------------------------
# verify suites


def _le_scheme_set():
    out = [Scheme("exp-euler")]
    for rule in ("euler", "implicit-euler", "midpoint", "trapezoidal"):
        for pol in ("current", "midpoint", "next"):
            out.append(Scheme(rule, RefPolicy(pol), True))
    return out


def _suite_linear(seed):
    rng = np.random.default_rng(seed)
    cfg = SolverConfig()
    worst = 0.0
    for _ in range(20):
        d = int(rng.integers(1, 7))
        a = rng.standard_normal((d, d))
        bound = float(np.linalg.norm(a, 2))
        if bound > 0:
            a *= rng.uniform(0.3, 2.0) / bound
        b = rng.standard_normal(d)
        sysl = LinearSystem(a, b)
        from .model import VectorField

        field = VectorField(d, lambda y, A=a, B=b: A @ y + B, lambda y, A=a: A)
        y0 = rng.standard_normal(d)
        h = float(rng.uniform(0.05, 0.5))
        exact = exact_step_linear(sysl, exact_step_linear(sysl, y0, h), h)
        for sch in _le_scheme_set():
            y = y0.copy()
            for _ in range(2):
                y = step(sch, field, y, h, cfg).y_next
            worst = max(worst, float(np.max(np.abs(y - exact))))
    return worst <= 1e-10, f"max deviation {worst:.2e} (<= 1e-10)"


def _gr_scheme_set(m, locally_exact=True):
    rules = GR_1D_RULES + GR_MULTI_RULES if m == 1 else GR_MULTI_RULES
    out = []
    for rule in rules:
        for pol in ("current", "midpoint", "next"):
            out.append(Scheme(rule, RefPolicy(pol), locally_exact))
    return out


def _suite_local_exactness(seed):
    probes = {
        "pendulum": (np.array([1.2, 0.4]), 0.3),
        "henon-heiles": (np.array([0.1, -0.15, 0.2, 0.1]), 0.3),
    }
    worst_le = 0.0
    worst_classical = math.inf
    for name, (y_bar, h) in probes.items():
        problem = get_problem(name)
        m = problem.system.m
        schemes = [Scheme("exp-euler")] + [
            Scheme(r, RefPolicy("current"), True)
            for r in ("euler", "implicit-euler", "midpoint", "trapezoidal")
        ]
        schemes += [Scheme(r, RefPolicy("current"), True)
                    for r in (GR_1D_RULES if m == 1 else ())]
        schemes += [Scheme(r, RefPolicy("current"), True) for r in GR_MULTI_RULES]
        for sch in schemes:
            worst_le = max(worst_le, local_exactness_probe(sch, problem, y_bar, h))
        for rule in ("euler", "midpoint"):
            worst_classical = min(
                worst_classical,
                local_exactness_probe(Scheme(rule), problem, y_bar, h),
            )
    ok = worst_le <= 1e-6 and worst_classical > 1e-3
    return ok, (
        f"locally exact defect {worst_le:.2e} (<= 1e-6), "
        f"classical defect {worst_classical:.2e} (> 1e-3)"
    )


def _random_hessian(rng, m):
    a = rng.standard_normal((2 * m, 2 * m))
    return 0.5 * (a + a.T)


def _suite_theta_form(seed):
    rng = np.random.default_rng(seed)
    s_of = {}
    worst = 0.0
    for _ in range(50):
        m = int(rng.integers(1, 4))
        hyy = _random_hessian(rng, m)
        h = float(rng.uniform(0.02, 0.3))
        if m not in s_of:
            from .model import canonical_structure

            s_of[m] = canonical_structure(m)
        s = s_of[m]
        for variant in ("sym", "incre"):
            try:
                theta, _ = theta_matrix(hyy, h, variant)
            except GeodintError:
                continue
            worst = max(worst, float(np.max(np.abs(theta.T + s @ theta @ s))))
    return worst <= 1e-10, f"max theta-form defect {worst:.2e} (<= 1e-10)"


def _suite_gradient_identity(seed):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for name in list_problems():
        problem = get_problem(name)
        sys_ = problem.system
        d = problem.dim
        base = problem.y0
        for _ in range(1000):
            y0 = base + 0.3 * rng.standard_normal(d)
            y1 = y0 + 0.3 * rng.standard_normal(d)
            scale = 1.0 + abs(sys_.energy_y(y0))
            for g in (increment_gradient(sys_, y0, y1),
                      symmetric_gradient(sys_, y0, y1)):
                res = abs(gradient_identity_residual(sys_, y0, y1, g)) / scale
                worst = max(worst, res)
    return worst <= 1e-12, f"max identity residual {worst:.2e} (<= 1e-12)"


def _suite_reversibility(seed):
    rng = np.random.default_rng(seed)
    cfg = SolverConfig()
    worst = 0.0
    for name in ("pendulum", "henon-heiles"):
        problem = get_problem(name)
        m = problem.system.m
        schemes = [Scheme("midpoint", RefPolicy.midpoint(), True)]
        schemes.append(Scheme("gr1d-sym" if m == 1 else "grmulti-sym",
                              RefPolicy.midpoint(), True))
        for _ in range(20):
            y0 = problem.y0 + 0.2 * rng.standard_normal(problem.dim)
            for sch in schemes:
                y1 = step(sch, problem, y0, 0.1, cfg).y_next
                y2 = step(sch, problem, y1, -0.1, cfg).y_next
                worst = max(worst, float(np.max(np.abs(y2 - y0))))
    return worst <= 1e-10, f"max return deviation {worst:.2e} (<= 1e-10)"


def _suite_fixed_points(seed):
    cfg = SolverConfig()
    worst = 0.0
    for name in list_problems():
        problem = get_problem(name)
        m = problem.system.m
        schemes = [Scheme("exp-euler"),
                   Scheme("midpoint", RefPolicy.midpoint(), True),
                   Scheme("trapezoidal", RefPolicy.midpoint(), True)]
        schemes += _gr_scheme_set(m)[:4]
        for eq in problem.equilibria:
            for sch in schemes:
                y = eq.copy()
                for _ in range(1000):
                    y = step(sch, problem, y, 0.5, cfg).y_next
                worst = max(worst, float(np.max(np.abs(y - eq))))
    return worst <= 1e-12, f"max equilibrium drift {worst:.2e} (<= 1e-12)"


_SUITE_FNS = {
    "linear": _suite_linear,
    "local-exactness": _suite_local_exactness,
    "theta-form": _suite_theta_form,
    "gradient-identity": _suite_gradient_identity,
    "reversibility": _suite_reversibility,
    "fixed-points": _suite_fixed_points,
}


def cmd_verify(args):
    if args.suite == "all":
        names = list(_SUITES)
    elif args.suite in _SUITES:
        names = [args.suite]
    else:
        raise ConfigError(f"unknown suite: {args.suite}")
    print(f"seed: {args.seed}")
    all_ok = True
    for name in names:
        ok, detail = _SUITE_FNS[name](args.seed)
        all_ok &= ok
        print(f"{name}: {'PASS' if ok else 'FAIL'} - {detail}")
    return 0 if all_ok else 2


# ---------------------------------------------------------------------------


def _add_run_args(p, with_h=True):
    p.add_argument("--problem", required=True)
    p.add_argument("--scheme", required=True)
    p.add_argument("--policy", default=None,
                   help="current | next | midpoint | fixed (with --ref)")
    p.add_argument("--ref", default=None,
                   help="comma-separated reference state for --policy fixed")
    p.add_argument("--locally-exact", action="store_true")
    p.add_argument("--y0", default=None, help="comma-separated initial state")
    p.add_argument("--tol", type=float, default=1e-13)
    p.add_argument("--output", default=None)
    if with_h:
        p.add_argument("--h", type=float, default=None)
        p.add_argument("--schedule", default=None,
                       help="file with one step size per line")
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--T", type=float, default=None)


def build_parser():
    ap = argparse.ArgumentParser(
        prog="geodint",
        description="locally exact and energy-preserving integrator benchmarks",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("integrate", help="run one trajectory")
    _add_run_args(p)
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(fn=cmd_integrate)

    p = sub.add_parser("order", help="estimate the global convergence order")
    _add_run_args(p, with_h=False)
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--h-list", required=True,
                   help="comma-separated ratio-2 step sizes, >= 4 of them")
    p.set_defaults(fn=cmd_order)

    p = sub.add_parser("drift", help="measure the relative energy drift")
    _add_run_args(p)
    p.set_defaults(fn=cmd_drift)

    p = sub.add_parser("verify", help="run a randomized property suite")
    p.add_argument("suite", choices=_SUITES + ("all",))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("list-problems", help="list registry problems")
    p.set_defaults(fn=lambda a: (print("\n".join(list_problems())), 0)[1])

    p = sub.add_parser("list-schemes", help="list scheme rule names")
    p.set_defaults(fn=lambda a: (print("\n".join(RULES)), 0)[1])

    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    try:
        return args.fn(args)
    except KeyError as exc:
        print(f"unknown problem: {exc.args[0].split(': ')[-1]}", file=sys.stderr)
        return 1
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except GeodintError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
