"""The adaptive loops: exact solver, contractive solver, nested solvers.

Each run returns a History: the ordered ledger of all solver steps with
their (ell, k, j) indices, element/DOF counts, estimator values, energy
increments, stop flags, per-phase timings (monotonic clock), and the
cumulative cost counter (running sum of element counts over all records,
the mesh-size proxy for total work).

Index bookkeeping follows the sequential loop structure: records are
appended in lexicographic (ell, k, j) order with k = 1..k_stop[ell] and
j = 1..j_stop[ell, k]; the record index equals the total step counter.

Stop-flag semantics: a flag is the literal stopping inequality evaluated at
the recorded iterate, OR-ed with "the solver step was exact" (certified
contraction factor 0), in which case one step settles the algebraic system
and further iterations would only duplicate it.
"""

import itertools
import math
import time
import warnings

import numpy as np

from .estimator import compute_indicators
from .fem import (DiscreteFunction, Space, assemble_rhs, dirichlet_values,
                  energy_gram, prolongation_matrix, solve_galerkin_exact)
from .iteration import (check_lambda_constraint, inner_stop, outer_stop,
                        zarantonello_rhs)
from .marking import doerfler_mark
from .mesh import refine, uniform_refine
from .solvers import (certify_contraction, extend_solver, setup_solver,
                      solver_step)

__all__ = ["History", "run_exact", "run_uniform", "run_single", "run_nested",
           "weighted_cost_table", "CSV_HEADER"]

CSV_HEADER = ("ell,k,j,n_elem,n_dof,eta,increment,stop_outer,stop_inner,"
              "t_solve,t_estimate,t_mark,t_refine,cum_cost")

Q_RED = 2.0 ** -0.25
MG_CEILING = 0.9


class History:
    """Ordered (ell, k, j) ledger of one adaptive run."""

    def __init__(self, algo, meta=None):
        self.algo = algo
        self.meta = meta or {}
        self.records = []
        self.k_stop = {}
        self.j_stop = {}
        self.cumulative_cost = 0

    def append(self, ell, k=None, j=None, *, n_elem, n_dof, eta,
               increment=None, stop_outer=False, stop_inner=False,
               t_solve=0.0, t_estimate=0.0, t_mark=0.0, t_refine=0.0):
        self.cumulative_cost += int(n_elem)
        self.records.append(dict(
            ell=ell, k=k, j=j, n_elem=int(n_elem), n_dof=int(n_dof),
            eta=float(eta),
            increment=None if increment is None else float(increment),
            stop_outer=bool(stop_outer), stop_inner=bool(stop_inner),
            t_solve=float(t_solve), t_estimate=float(t_estimate),
            t_mark=float(t_mark), t_refine=float(t_refine),
            cum_cost=self.cumulative_cost))

    def __len__(self):
        return len(self.records)

    def column(self, name):
        vals = [r[name] for r in self.records]
        if name in ("ell", "k", "j"):
            return np.array([math.nan if v is None else v for v in vals])
        if name in ("stop_outer", "stop_inner"):
            return np.array(vals, dtype=bool)
        if name == "increment":
            return np.array([math.nan if v is None else v for v in vals])
        return np.array(vals)

    def cumulative_times(self):
        t = self.column("t_solve") + self.column("t_estimate") \
            + self.column("t_mark") + self.column("t_refine")
        return np.cumsum(t)

    def level_summary(self):
        """Per-level values at each level's final record."""
        cum_t = self.cumulative_times()
        idx = {}
        for r, rec in enumerate(self.records):
            idx[rec["ell"]] = r
        rows = sorted(idx.items())
        take = [r for _, r in rows]
        return dict(
            ell=np.array([e for e, _ in rows]),
            n_dof=np.array([self.records[r]["n_dof"] for r in take]),
            n_elem=np.array([self.records[r]["n_elem"] for r in take]),
            eta=np.array([self.records[r]["eta"] for r in take]),
            cum_cost=np.array([self.records[r]["cum_cost"] for r in take]),
            cum_time=cum_t[take],
        )

    def to_csv(self, fileobj):
        fileobj.write(CSV_HEADER + "\n")
        for r in self.records:
            fields = [
                str(r["ell"]),
                "" if r["k"] is None else str(r["k"]),
                "" if r["j"] is None else str(r["j"]),
                str(r["n_elem"]), str(r["n_dof"]),
                f"{r['eta']:.16e}",
                "" if r["increment"] is None else f"{r['increment']:.16e}",
                str(int(r["stop_outer"])), str(int(r["stop_inner"])),
                f"{r['t_solve']:.6e}", f"{r['t_estimate']:.6e}",
                f"{r['t_mark']:.6e}", f"{r['t_refine']:.6e}",
                str(r["cum_cost"]),
            ]
            fileobj.write(",".join(fields) + "\n")

    def check_invariants(self):
        """Index-set consistency, cost law, and stop-flag placement."""
        def as_key(rec):
            return tuple(0 if v is None else v
                         for v in (rec["ell"], rec["k"], rec["j"]))

        cost = 0
        prev = None
        for r, rec in enumerate(self.records):
            cost += rec["n_elem"]
            assert rec["cum_cost"] == cost, "cost law violated"
            key = as_key(rec)
            assert prev is None or key > prev, \
                f"records out of lexicographic order at {r}"
            prev = key
        for r, rec in enumerate(self.records):
            ell, k, j = rec["ell"], rec["k"], rec["j"]
            if k is not None:
                is_last_outer = (k == self.k_stop.get(ell) and (
                    j is None or j == self.j_stop.get((ell, k))))
                assert rec["stop_outer"] == is_last_outer, \
                    f"outer stop flag inconsistent at record {r}"
            if j is not None:
                assert rec["stop_inner"] == (j == self.j_stop.get((ell, k))), \
                    f"inner stop flag inconsistent at record {r}"
        return True


def _stop_reason(n_dof, eta, max_dofs, eta_tol):
    if eta == 0.0:
        return "converged"
    if max_dofs is not None and n_dof >= max_dofs:
        return "max_dofs"
    if eta_tol is not None and eta <= eta_tol:
        return "eta_tol"
    return None


# ---------------------------------------------------------------------------
# exact and uniform drivers


def run_exact(prob, mesh0, theta, p=1, max_dofs=5e4, eta_tol=None,
              store_artifacts=False):
    """AFEM with exact solver: solve / estimate / mark / refine."""
    history = History("exact", meta=dict(problem=prob.name, theta=theta, p=p))
    artifacts = []
    mesh = mesh0
    for ell in itertools.count():
        t0 = time.perf_counter()
        space = Space(mesh, p)
        u = solve_galerkin_exact(space, prob)
        t_solve = time.perf_counter() - t0

        t0 = time.perf_counter()
        ind = compute_indicators(space, u, prob)
        eta = ind.total
        t_estimate = time.perf_counter() - t0
        if ell == 0:
            history.meta["eta_initial"] = eta
        if store_artifacts:
            artifacts.append(dict(space=space, final=u, ind=ind))

        reason = _stop_reason(space.n_free, eta, max_dofs, eta_tol)
        t_mark = t_refine = 0.0
        if reason is None:
            t0 = time.perf_counter()
            marked = doerfler_mark(ind, theta)
            t_mark = time.perf_counter() - t0
            t0 = time.perf_counter()
            mesh = refine(mesh, marked)
            t_refine = time.perf_counter() - t0
        history.append(ell, n_elem=space.mesh.n_elements, n_dof=space.n_free,
                       eta=eta, t_solve=t_solve, t_estimate=t_estimate,
                       t_mark=t_mark, t_refine=t_refine)
        if reason is not None:
            history.meta["stop_reason"] = reason
            break
    if store_artifacts:
        history.meta["artifacts"] = artifacts
    return history


def run_uniform(prob, mesh0, p=1, max_dofs=5e4, eta_tol=None,
                store_artifacts=False):
    """Uniform-refinement baseline with exact solves per level."""
    history = History("uniform", meta=dict(problem=prob.name, p=p))
    artifacts = []
    mesh = mesh0
    for ell in itertools.count():
        t0 = time.perf_counter()
        space = Space(mesh, p)
        u = solve_galerkin_exact(space, prob)
        t_solve = time.perf_counter() - t0
        t0 = time.perf_counter()
        ind = compute_indicators(space, u, prob)
        eta = ind.total
        t_estimate = time.perf_counter() - t0
        if ell == 0:
            history.meta["eta_initial"] = eta
        if store_artifacts:
            artifacts.append(dict(space=space, final=u, ind=ind))
        reason = _stop_reason(space.n_free, eta, max_dofs, eta_tol)
        t_refine = 0.0
        if reason is None:
            t0 = time.perf_counter()
            mesh = uniform_refine(mesh)
            t_refine = time.perf_counter() - t0
        history.append(ell, n_elem=space.mesh.n_elements, n_dof=space.n_free,
                       eta=eta, t_solve=t_solve, t_estimate=t_estimate,
                       t_refine=t_refine)
        if reason is not None:
            history.meta["stop_reason"] = reason
            break
    if store_artifacts:
        history.meta["artifacts"] = artifacts
    return history


# ---------------------------------------------------------------------------
# contractive-solver driver (Algorithm with single solver loop)


def _certify(state, trials, history):
    ceiling = MG_CEILING if state.kind == "local_multigrid" else None
    q = certify_contraction(state, trials=trials, ceiling=ceiling)
    history.meta.setdefault("q_alg_levels", []).append(q)
    history.meta["q_alg"] = max(history.meta["q_alg_levels"])
    return q


def _exact_step(state):
    """One solver step settles the algebraic system exactly."""
    return state.kind == "direct" or state.certified_q == 0.0


def _lambda_advice(history, cfg, theta):
    """Advisory feasibility of the stopping parameters, re-evaluated as the
    certified contraction grows over the levels."""
    if cfg.q_sym_star is None:
        return
    q_theta = math.sqrt(1.0 - (1.0 - Q_RED ** 2) * theta)
    q_sym, ok = check_lambda_constraint(cfg, history.meta["q_alg"], q_theta)
    history.meta["q_sym"] = q_sym
    history.meta["lambda_constraint_ok"] = ok
    if not ok and not history.meta.get("lambda_warned"):
        history.meta["lambda_warned"] = True
        msg = ("stopping parameters violate the R-linear convergence "
               f"premise (q_sym = {q_sym:.3f})")
        if cfg.strict:
            raise ValueError(msg)
        warnings.warn(msg, stacklevel=3)


def run_single(prob, mesh0, theta, lam, p=1, solver_kind="local_multigrid",
               max_dofs=5e4, eta_tol=None, certify_each_level=True,
               certify_trials=1, store_artifacts=False, max_inner=500):
    """AFEM with one contractive solver; requires the symmetric case b = a.

    The solver loop repeats until |||u^k - u^(k-1)||| <= lam * eta(u^k)
    (or immediately after one step of an exact solver); nested iteration
    carries the final iterate to the next mesh.
    """
    if not prob.is_symmetric:
        raise ValueError("the single-solver loop needs the symmetric case "
                         "b(.,.) = a(.,.); use run_nested otherwise")
    if lam <= 0:
        raise ValueError("solver-stopping parameter must be positive")
    history = History("single", meta=dict(
        problem=prob.name, theta=theta, lam=lam, p=p, solver=solver_kind))
    artifacts = []
    mesh = mesh0
    space = Space(mesh, p)
    state = setup_solver(solver_kind, space, prob)
    _certify(state, certify_trials, history)
    u = dirichlet_values(space, prob)
    history.meta["eta_initial"] = compute_indicators(space, u, prob).total

    for ell in itertools.count():
        A_red = state.matrix
        u_level_start = u
        t0 = time.perf_counter()
        rhs = assemble_rhs(space, prob)
        t_assemble = time.perf_counter() - t0
        ind = None
        for k in itertools.count(1):
            if k > max_inner:
                raise RuntimeError(
                    f"solver loop exceeded {max_inner} iterations on level "
                    f"{ell}; the solver does not contract fast enough")
            t0 = time.perf_counter()
            new_free = solver_step(state, rhs, u[space.free])
            d = new_free - u[space.free]
            inc = float(np.sqrt(max(d @ (A_red @ d), 0.0)))
            u = u.copy()
            u[space.free] = new_free
            t_solve = time.perf_counter() - t0 + t_assemble
            t_assemble = 0.0
            t0 = time.perf_counter()
            ind = compute_indicators(space, u, prob)
            eta = ind.total
            t_estimate = time.perf_counter() - t0
            stop = outer_stop(inc, eta, lam) or _exact_step(state)
            history.append(ell, k, n_elem=mesh.n_elements, n_dof=space.n_free,
                           eta=eta, increment=inc, stop_outer=stop,
                           t_solve=t_solve, t_estimate=t_estimate)
            if store_artifacts:
                history.meta.setdefault("iterates", []).append(u.copy())
            if stop:
                history.k_stop[ell] = k
                break
        if store_artifacts:
            artifacts.append(dict(space=space, initial=u_level_start,
                                  final=DiscreteFunction(space, u), ind=ind))

        reason = _stop_reason(space.n_free, eta, max_dofs, eta_tol)
        if reason is not None:
            history.meta["stop_reason"] = reason
            break
        t0 = time.perf_counter()
        marked = doerfler_mark(ind, theta)
        t_mark = time.perf_counter() - t0
        t0 = time.perf_counter()
        mesh = refine(mesh, marked)
        new_space = Space(mesh, p)
        P = prolongation_matrix(space, new_space)
        u = P @ u
        u[new_space.dirichlet_mask] = dirichlet_values(
            new_space, prob)[new_space.dirichlet_mask]
        t_refine = time.perf_counter() - t0
        history.records[-1]["t_mark"] += t_mark
        history.records[-1]["t_refine"] += t_refine
        state = extend_solver(state, new_space)
        if certify_each_level:
            _certify(state, certify_trials, history)
        space = new_space
    if store_artifacts:
        history.meta["artifacts"] = artifacts
    return history


# ---------------------------------------------------------------------------
# nested-solver driver (Zarantonello symmetrization + algebraic solver)


def run_nested(prob, mesh0, theta, cfg, p=1, solver_kind="local_multigrid",
               max_dofs=5e4, eta_tol=None, certify_each_level=True,
               certify_trials=1, store_artifacts=False, max_inner=500,
               compute_kstar=False):
    """AFEM with nested contractive solvers (symmetrization + algebraic).

    Inner stop:  |||u^(k,j) - u^(k,j-1)||| <=
                 lambda_alg [lambda_sym eta(u^(k,j)) + |||u^(k,j) - u^(k-1,J)|||]
    Outer stop:  |||u^(k,J) - u^(k-1,J)||| <= lambda_sym eta(u^(k,J))

    ``compute_kstar`` additionally materializes the exact Zarantonello
    iterates u^(k,*) (verification only; never used by the production path).
    """
    history = History("nested", meta=dict(
        problem=prob.name, theta=theta, p=p, solver=solver_kind,
        delta=cfg.delta, lambda_sym=cfg.lambda_sym, lambda_alg=cfg.lambda_alg))
    artifacts = []
    mesh = mesh0
    space = Space(mesh, p)
    state = setup_solver(solver_kind, space, prob)
    _certify(state, certify_trials, history)
    _lambda_advice(history, cfg, theta)
    u = dirichlet_values(space, prob)
    history.meta["eta_initial"] = compute_indicators(space, u, prob).total
    outer_increments = []
    history.meta["outer_increments"] = outer_increments

    for ell in itertools.count():
        A_red = state.matrix
        A_full = energy_gram(space, prob)
        lift = u * space.dirichlet_mask
        lift_term = (A_full @ lift)[space.free]
        level_art = dict(space=space, initial=u, outer=[], kstar=[])
        for k in itertools.count(1):
            if k > max_inner:
                raise RuntimeError(
                    f"symmetrization loop exceeded {max_inner} iterations "
                    f"on level {ell}")
            u_prev = u
            t0 = time.perf_counter()
            G = zarantonello_rhs(space, prob, cfg.delta, u)
            rhs_red = G[space.free] - lift_term
            t_assemble = time.perf_counter() - t0
            if compute_kstar:
                kstar = u.copy()
                kstar[space.free] = state.levels[-1].lu.solve(rhs_red)
                level_art["kstar"].append(kstar)
            w = u
            for j in itertools.count(1):
                if j > max_inner:
                    raise RuntimeError(
                        f"algebraic loop exceeded {max_inner} iterations on "
                        f"level {ell}, outer step {k}")
                t0 = time.perf_counter()
                new_free = solver_step(state, rhs_red, w[space.free])
                d = new_free - w[space.free]
                inc_j = float(np.sqrt(max(d @ (A_red @ d), 0.0)))
                w = w.copy()
                w[space.free] = new_free
                do = w[space.free] - u_prev[space.free]
                outer_inc_now = float(np.sqrt(max(do @ (A_red @ do), 0.0)))
                t_solve = time.perf_counter() - t0 + t_assemble
                t_assemble = 0.0
                t0 = time.perf_counter()
                ind = compute_indicators(space, w, prob)
                eta = ind.total
                t_estimate = time.perf_counter() - t0
                stop_in = inner_stop(inc_j, eta, outer_inc_now, cfg) \
                    or _exact_step(state)
                history.append(ell, k, j, n_elem=mesh.n_elements,
                               n_dof=space.n_free, eta=eta, increment=inc_j,
                               stop_inner=stop_in,
                               t_solve=t_solve, t_estimate=t_estimate)
                outer_increments.append(outer_inc_now)
                if store_artifacts:
                    history.meta.setdefault("iterates", []).append(w.copy())
                if stop_in:
                    history.j_stop[(ell, k)] = j
                    break
            u = w
            stop_out = outer_stop(outer_inc_now, eta, cfg.lambda_sym)
            history.records[-1]["stop_outer"] = stop_out
            level_art["outer"].append(u)
            if stop_out:
                history.k_stop[ell] = k
                break
        if store_artifacts:
            level_art["final"] = DiscreteFunction(space, u)
            level_art["ind"] = ind
            artifacts.append(level_art)

        reason = _stop_reason(space.n_free, eta, max_dofs, eta_tol)
        if reason is not None:
            history.meta["stop_reason"] = reason
            break
        t0 = time.perf_counter()
        marked = doerfler_mark(ind, theta)
        t_mark = time.perf_counter() - t0
        t0 = time.perf_counter()
        mesh = refine(mesh, marked)
        new_space = Space(mesh, p)
        P = prolongation_matrix(space, new_space)
        u = P @ u
        u[new_space.dirichlet_mask] = dirichlet_values(
            new_space, prob)[new_space.dirichlet_mask]
        t_refine = time.perf_counter() - t0
        history.records[-1]["t_mark"] += t_mark
        history.records[-1]["t_refine"] += t_refine
        state = extend_solver(state, new_space)
        if certify_each_level:
            _certify(state, certify_trials, history)
            _lambda_advice(history, cfg, theta)
        space = new_space
    if store_artifacts:
        history.meta["artifacts"] = artifacts
    return history


# ---------------------------------------------------------------------------
# parameter-sweep cost table


def weighted_cost_table(histories, eta_stop_factor):
    """Final-estimator-weighted cumulative time and cost per parameter choice.

    ``histories`` maps (lambda-ish, theta) keys to History objects.  For each
    run the first level whose final estimator drops below
    eta_stop_factor * eta_initial defines the entry
    eta * (cumulative time)  and  eta * (cumulative cost); runs that never
    reach the threshold are marked incomplete (None entries).
    """
    entries = {}
    for key, hist in histories.items():
        thr = eta_stop_factor * hist.meta["eta_initial"]
        lv = hist.level_summary()
        hit = np.nonzero(lv["eta"] <= thr)[0]
        if len(hit) == 0:
            entries[key] = dict(time=None, dofs=None, complete=False)
        else:
            r = hit[0]
            entries[key] = dict(
                time=float(lv["eta"][r] * lv["cum_time"][r]),
                dofs=float(lv["eta"][r] * lv["cum_cost"][r]),
                complete=True)
    lam_keys = sorted({k[0] for k in entries})
    thetas = sorted({k[1] for k in entries})
    flags = {}
    for which in ("time", "dofs"):
        best_row = {lam: _argmin_key(entries, [(lam, t) for t in thetas], which)
                    for lam in lam_keys}
        best_col = {t: _argmin_key(entries, [(lam, t) for lam in lam_keys], which)
                    for t in thetas}
        flags[which] = dict(row=best_row, col=best_col)
    return dict(entries=entries, lam_keys=lam_keys, thetas=thetas, flags=flags)


def _argmin_key(entries, keys, which):
    vals = [(entries[k][which], k) for k in keys
            if k in entries and entries[k][which] is not None]
    return min(vals)[1] if vals else None
