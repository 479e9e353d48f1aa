"""Moving probability mass at least cost, exactly and with smoothing.

A transport problem starts with two histograms and a table of pairwise
costs.  The exact solver finds the cheapest way to morph one histogram
into the other; the entropic solver trades a little cost for a smooth,
fast, differentiable answer.  This script walks through both on a
3 x 2 instance small enough to read by eye.
"""

import numpy as np

from wassrec import exact_ot, sinkhorn

np.set_printoptions(precision=4, suppress=True)

# -- the instance -------------------------------------------------------
# Three source bins, two target bins.  M[i, j] is the cost of moving one
# unit of mass from source i to target j.

M = np.array([
    [0.15, 0.80],
    [0.10, 0.95],
    [0.90, 0.05],
])
p = np.array([0.4, 0.5, 0.1])
q = np.array([0.8, 0.2])

print("cost matrix:")
print(M)
print("source histogram p =", p)
print("target histogram q =", q)

# -- exact solution -----------------------------------------------------
# The linear program has a vertex solution: at most n + s - 1 cells of
# the plan are nonzero.

lp = exact_ot(p, q, M)
print("\nexact plan:")
print(lp.plan)
print("exact cost: %.6f" % lp.transport_cost)

# -- entropic smoothing -------------------------------------------------
# Penalizing the plan's negative entropy spreads mass over all cells.
# As gamma shrinks the smoothed plan sharpens toward the vertex and the
# cost gap closes roughly linearly in gamma.

for gamma in (0.5, 0.05, 0.001):
    sm = sinkhorn(p, q, M, gamma=gamma, max_iter=100_000)
    gap = sm.transport_cost - lp.transport_cost
    print("\ngamma = %-6g cost = %.6f (gap %+.2e)" % (gamma, sm.transport_cost, gap))
    print(sm.plan)

# -- marginals are exact at convergence ---------------------------------

sm = sinkhorn(p, q, M, gamma=0.05)
print("\nrow sums   ", sm.plan.sum(axis=1), " (should be p)")
print("column sums", sm.plan.sum(axis=0), " (should be q)")
