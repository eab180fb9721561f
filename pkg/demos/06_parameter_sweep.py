"""Choosing the adaptivity parameters by total cost.

Runs a small theta x lambda grid on the interface benchmark and weights the
final estimator by the cumulative cost at the first level below the stop
threshold  eta <= factor * eta_0.  Lower entries are better; the dof-based
weighting is deterministic, the time-based one depends on the machine.
"""

from afem_lab import run_single, weighted_cost_table
from afem_lab.cli import render_cost_table
from afem_lab.problems import kellogg

MAX_DOFS = 3000

histories = {}
for lam in (0.1, 0.9):
    for theta in (0.3, 0.5, 0.7):
        prob, mesh = kellogg()
        histories[(lam, theta)] = run_single(
            prob, mesh, theta=theta, lam=lam, p=1,
            solver_kind="local_multigrid", max_dofs=MAX_DOFS)
        lv = histories[(lam, theta)].level_summary()
        print(f"lambda={lam}, theta={theta}: {len(lv['ell'])} levels, "
              f"{len(histories[(lam, theta)])} solver steps, "
              f"final eta {lv['eta'][-1]:.4f}")

table = weighted_cost_table(histories, eta_stop_factor=0.10)
print("\n" + render_cost_table(table))
