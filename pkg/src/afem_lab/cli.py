"""Command-line front end: run experiments, parameter sweeps, verification.

Subcommands
-----------
run     one adaptive run; writes the History CSV and a plain-text summary
sweep   Cartesian theta x lambda sweep; writes the weighted-cost table CSV
verify  axiom suite, sequence-lemma property suites, and contraction checks

Configuration precedence: command-line flags > config file (simple
``key=value`` lines, keys named like the long flags) > built-in defaults.
Exit codes: 0 success, 1 run failure, 2 usage error.  The environment
variable AFEM_LAB_THREADS caps sweep parallelism.
"""

import argparse
import concurrent.futures
import os
import sys

import numpy as np

from . import analysis, driver
from .iteration import ZarantonelloConfig
from .problems import PROBLEM_NAMES, by_name

SOLVER_FLAGS = {"local-mg": "local_multigrid", "richardson":
                "damped_richardson", "direct": "direct"}


def _add_common(p):
    p.add_argument("--problem", choices=sorted(PROBLEM_NAMES))
    p.add_argument("--algo", choices=["exact", "uniform", "single", "nested"],
                   default="single")
    p.add_argument("--p", type=int, default=1, help="polynomial degree")
    p.add_argument("--solver", choices=sorted(SOLVER_FLAGS), default="local-mg")
    p.add_argument("--max-dofs", type=float, default=5e4)
    p.add_argument("--eta-tol", type=float, default=None)
    p.add_argument("--delta", type=float, default=None,
                   help="Zarantonello damping (nested; default 0.5, or 1/L "
                        "for the nonlinear problem)")
    p.add_argument("--lambda-sym", type=float, default=0.7)
    p.add_argument("--lambda-alg", type=float, default=0.7)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", type=str, default=None,
                   help="key=value file; flags override it")


def build_parser():
    ap = argparse.ArgumentParser(prog="afem-lab",
                                 description="adaptive FEM experiments")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="one adaptive run -> History CSV")
    _add_common(run)
    run.add_argument("--theta", type=float, default=0.5)
    run.add_argument("--lambda", dest="lam", type=float, default=0.1,
                     help="solver-stopping parameter (single)")
    run.add_argument("--out", type=str, default=None, help="CSV path")
    run.add_argument("--summary", type=str, default=None,
                     help="summary text path (default: stdout)")

    sw = sub.add_parser("sweep", help="theta x lambda sweep -> cost table")
    _add_common(sw)
    sw.add_argument("--thetas", type=str, default="0.3,0.5")
    sw.add_argument("--lambdas", type=str, default="0.1,0.7")
    sw.add_argument("--eta-stop-factor", type=float, default=5e-2)
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", type=str, default=None)

    ver = sub.add_parser("verify", help="axioms + sequence-lemma suites")
    ver.add_argument("--problem", choices=sorted(PROBLEM_NAMES),
                     default="kellogg")
    ver.add_argument("--max-dofs", type=float, default=2000)
    ver.add_argument("--instances", type=int, default=100,
                     help="random sequence-lemma instances")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--out", type=str, default=None)
    ver.add_argument("--config", type=str, default=None)
    return ap


def _apply_config(ap, argv):
    """Config-file values become parser defaults; flags still win."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    path = argv[i + 1]
    values = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, val = line.partition("=")
            values[key.strip().replace("-", "_")] = val.strip()
    for action in ap._subparsers._group_actions[0].choices.values():
        known = {a.dest for a in action._actions}
        action.set_defaults(**{k: _coerce(v) for k, v in values.items()
                               if k in known})
    return argv


def _coerce(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _nested_config(args, prob):
    delta = args.delta
    if delta is None:
        delta = 1.0 / prob.L if prob.is_nonlinear else 0.5
    return ZarantonelloConfig(delta=delta, lambda_sym=args.lambda_sym,
                              lambda_alg=args.lambda_alg, alpha=prob.alpha,
                              L=prob.L)


def execute_run(problem, algo, theta, lam, p, solver, max_dofs, eta_tol=None,
                delta=None, lambda_sym=0.7, lambda_alg=0.7):
    """Module-level worker so sweeps can run in separate processes."""
    prob, mesh = by_name(problem)
    kind = SOLVER_FLAGS.get(solver, solver)
    if algo == "exact":
        return driver.run_exact(prob, mesh, theta=theta, p=p,
                                max_dofs=max_dofs, eta_tol=eta_tol)
    if algo == "uniform":
        return driver.run_uniform(prob, mesh, p=p, max_dofs=max_dofs,
                                  eta_tol=eta_tol)
    if algo == "single":
        return driver.run_single(prob, mesh, theta=theta, lam=lam, p=p,
                                 solver_kind=kind, max_dofs=max_dofs,
                                 eta_tol=eta_tol)
    if delta is None:
        delta = 1.0 / prob.L if prob.is_nonlinear else 0.5
    cfg = ZarantonelloConfig(delta=delta, lambda_sym=lambda_sym,
                             lambda_alg=lambda_alg, alpha=prob.alpha, L=prob.L)
    return driver.run_nested(prob, mesh, theta=theta, cfg=cfg, p=p,
                             solver_kind=kind, max_dofs=max_dofs,
                             eta_tol=eta_tol)


def _summarize(hist):
    lv = hist.level_summary()
    lines = [f"algo={hist.algo} problem={hist.meta.get('problem')}"]
    lines.append(f"levels={len(lv['ell'])} records={len(hist)} "
                 f"final_dofs={lv['n_dof'][-1]} final_eta={lv['eta'][-1]:.6e}")
    if len(lv["n_dof"]) >= 3:
        s_dof = analysis.fit_rate_loglog(lv["n_dof"], lv["eta"])
        s_cost = analysis.fit_rate_loglog(lv["cum_cost"], lv["eta"])
        lines.append(f"rate_vs_dofs={s_dof:+.4f} rate_vs_cost={s_cost:+.4f}")
    if "q_alg" in hist.meta:
        lines.append(f"q_alg={hist.meta['q_alg']:.4f}")
    return "\n".join(lines) + "\n"


def cmd_run(args):
    if args.problem is None:
        raise UsageError("--problem is required")
    hist = execute_run(args.problem, args.algo, args.theta, args.lam, args.p,
                       args.solver, args.max_dofs, args.eta_tol, args.delta,
                       args.lambda_sym, args.lambda_alg)
    if args.out:
        with open(args.out, "w") as fh:
            hist.to_csv(fh)
    summary = _summarize(hist)
    if args.summary:
        with open(args.summary, "w") as fh:
            fh.write(summary)
    sys.stdout.write(summary)
    return 0


def _sweep_worker(params):
    return params, execute_run(**params)


def cmd_sweep(args):
    if args.problem is None:
        raise UsageError("--problem is required")
    thetas = [float(t) for t in args.thetas.split(",") if t]
    lambdas = [float(t) for t in args.lambdas.split(",") if t]
    jobs = max(1, min(args.jobs,
                      int(os.environ.get("AFEM_LAB_THREADS", args.jobs))))
    tasks = []
    for lam in lambdas:
        for theta in thetas:
            tasks.append(dict(problem=args.problem, algo=args.algo,
                              theta=theta, lam=lam, p=args.p,
                              solver=args.solver, max_dofs=args.max_dofs,
                              delta=args.delta, lambda_sym=lam,
                              lambda_alg=lam))
    results = {}
    if jobs == 1:
        pairs = map(_sweep_worker, tasks)
    else:
        pool = concurrent.futures.ProcessPoolExecutor(max_workers=jobs)
        pairs = pool.map(_sweep_worker, tasks)
    for params, hist in pairs:
        results[(params["lam"], params["theta"])] = hist
    table = driver.weighted_cost_table(results, args.eta_stop_factor)
    text = render_cost_table(table)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    sys.stdout.write(text)
    return 0


def render_cost_table(table):
    """CSV rendering: one block per weighting, minima flagged per row/col."""
    out = []
    for which in ("dofs", "time"):
        flags = table["flags"][which]
        out.append(f"# weighted by {which}; * = best in row, + = best in "
                   "column")
        out.append("lambda," + ",".join(f"theta={t}" for t in table["thetas"]))
        for lam in table["lam_keys"]:
            row = [str(lam)]
            for theta in table["thetas"]:
                entry = table["entries"].get((lam, theta))
                if entry is None or not entry["complete"]:
                    row.append("incomplete")
                    continue
                cell = f"{entry[which]:.6e}"
                if flags["row"].get(lam) == (lam, theta):
                    cell += "*"
                if flags["col"].get(theta) == (lam, theta):
                    cell += "+"
                row.append(cell)
            out.append(",".join(row))
    return "\n".join(out) + "\n"


def cmd_verify(args):
    rng = np.random.default_rng(args.seed)
    lines = [f"verification report (seed={args.seed})"]

    prob, mesh = by_name(args.problem)
    if prob.is_nonlinear:
        cfg = ZarantonelloConfig(delta=1.0 / prob.L, lambda_sym=0.7,
                                 lambda_alg=0.7, alpha=prob.alpha, L=prob.L)
        hist = driver.run_nested(prob, mesh, theta=0.5, cfg=cfg, p=1,
                                 max_dofs=args.max_dofs, store_artifacts=True)
    elif prob.is_symmetric:
        hist = driver.run_single(prob, mesh, theta=0.5, lam=0.01, p=1,
                                 solver_kind="local_multigrid",
                                 max_dofs=args.max_dofs, store_artifacts=True)
    else:
        cfg = ZarantonelloConfig(delta=0.5, lambda_sym=0.7, lambda_alg=0.7)
        hist = driver.run_nested(prob, mesh, theta=0.5, cfg=cfg, p=1,
                                 max_dofs=args.max_dofs, store_artifacts=True)
    report = analysis.verify_axioms(hist, prob,
                                    rng=np.random.default_rng(args.seed))
    ok = True
    for key in sorted(report):
        lines.append(f"{key} = {report[key]}")
        if key.endswith("_pass") and not report[key]:
            ok = False

    violations = 0
    for _ in range(args.instances):
        a, b, q, C1, C2, delta = analysis.random_criterion_instance(rng)
        fit = analysis.rlinear_constants_from_criterion(a, b, q, C1, C2, delta)
        eq = analysis.tailsum_rlinear_equivalence(a)
        if not fit.ok() or eq.violation_rlinear > 1 + 1e-9 \
                or eq.violation_tail > 1 + 1e-9:
            violations += 1
    lines.append(f"sequence_lemma_instances = {args.instances}")
    lines.append(f"sequence_lemma_violations = {violations}")
    ok = ok and violations == 0
    lines.append(f"overall = {'PASS' if ok else 'FAIL'}")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
        with open(args.out + ".csv", "w") as fh:
            fh.write("key,value\n")
            for key in sorted(report):
                fh.write(f"{key},{report[key]}\n")
            fh.write(f"sequence_lemma_instances,{args.instances}\n")
            fh.write(f"sequence_lemma_violations,{violations}\n")
    sys.stdout.write(text)
    return 0 if ok else 1


class UsageError(Exception):
    pass


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    ap = build_parser()
    argv = _apply_config(ap, argv)
    args = ap.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        return cmd_verify(args)
    except UsageError as exc:
        ap.error(str(exc))  # exits with code 2
    except Exception as exc:  # run failures -> exit 1
        sys.stderr.write(f"error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
