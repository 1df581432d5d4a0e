"""Finite-difference check of the hand-written backward pass.

Draws small random networks, batches and alphas, and compares the analytic
gradient of the full training energy with central differences.
"""
from alphabox.harness.gradcheck import run_gradient_checks

rows = run_gradient_checks(n_configs=20, seed=0)
for r in rows:
    print(f"alpha={r['alpha']:<4} {r['likelihood']:<11} widths={r['widths']:<10} "
          f"M={r['M']} K={r['K']} rel_err={r['rel_error']:.1e}")
print("all passed:", all(r["passed"] for r in rows))
