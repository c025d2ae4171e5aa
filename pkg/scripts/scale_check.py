"""Run the synthetic-city scale check.

This script builds a 287-unit synthetic city, runs 300 fully-corrective
Frank-Wolfe iterations on a frozen batch of 2000 incident samples for each
budget, and checks that the objective never increases, that the final
influence minimum is below 5% of the first one, and that each run finishes
within the time limit. Exits with a non-zero status if any check fails.

Usage:
    python scripts/scale_check.py [seed]

Arguments:
    seed: Seed for the city and the solver (default: 0)
"""

import sys
import time

import numpy as np

from measurefw import Planner, SolverConfig, make_city

UNITS = 287
BUDGETS = (50.0, 500.0)
TIME_LIMIT = 30 * 60

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
config = SolverConfig(max_outer_iters=300, mc_batch_size=2000, seed=seed)
failed = False

city = make_city(UNITS, seed)

with Planner(config) as planner:
    for budget in BUDGETS:
        problem = city.with_budget(budget)
        start = time.perf_counter()
        _, trace = planner.solve(problem, "fcfw")
        elapsed = time.perf_counter() - start

        h = np.abs(trace.h_stars)
        errors = []
        if np.any(np.diff(trace.objectives) > 1e-12):
            errors.append("objective increased")
        if not h[-1] < 0.05 * h[0]:
            errors.append(f"|h*| went from {h[0]:.3e} to {h[-1]:.3e}")
        if elapsed > TIME_LIMIT:
            errors.append(f"took {elapsed:.0f}s")

        if errors:
            failed = True
            print(f"❌ b={budget:g}: {'; '.join(errors)}")
        else:
            print(f"✅ b={budget:g}: J={trace.final_objective:.6f}, |h*| {h[0]:.3e} -> {h[-1]:.3e} in {elapsed:.0f}s")

if failed:
    sys.exit(1)
