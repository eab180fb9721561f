"""Nested symmetrization + algebraic solver on a nonsymmetric problem.

The convection problem -Lap u + x . grad u + u = 1 on the L-shape is not
symmetric, so the plain contractive loop does not apply.  The nested driver
wraps every Zarantonello step (an SPD solve) in the local multigrid
iteration and balances three error sources with two stopping criteria.
This demo prints the full (ell, k, j) ledger of a short run.
"""

from afem_lab import ZarantonelloConfig, run_nested
from afem_lab.problems import lshape_convection

prob, mesh = lshape_convection()
cfg = ZarantonelloConfig(delta=0.5, lambda_sym=0.3, lambda_alg=0.3)
hist = run_nested(prob, mesh, theta=0.3, cfg=cfg, p=1,
                  solver_kind="local_multigrid", max_dofs=2000)

print("ell  k  j   n_elem   n_dof      eta     increment  stops")
for rec in hist.records:
    stops = ("outer" if rec["stop_outer"] else
             "inner" if rec["stop_inner"] else "")
    print(f"{rec['ell']:3d} {rec['k']:2d} {rec['j']:2d} {rec['n_elem']:8d} "
          f"{rec['n_dof']:7d} {rec['eta']:10.5f} {rec['increment']:11.3e}  "
          f"{stops}")

print("\nstopping indices k_stop[ell]:",
      [hist.k_stop[e] for e in sorted(hist.k_stop)])
print("total solver steps:", len(hist),
      "cumulative cost:", hist.cumulative_cost)
print("record index == total step counter:",
      all(r["cum_cost"] == sum(x["n_elem"] for x in hist.records[:i + 1])
          for i, r in enumerate(hist.records)))
