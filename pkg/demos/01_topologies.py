"""
Directed topologies and their mixing weights
============================================

Builds the d-Out and EXP graphs, prints a few weight matrices and shows
how quickly plain averaging over each graph reaches consensus.
"""

import numpy as np

from dpps.topology import build_d_out_schedule, build_exp_schedule, describe, weight_matrix

np.set_printoptions(precision=3, suppress=True, linewidth=120)

# 2-Out on 5 nodes: node i sends to itself and i+1, every round
ring = build_d_out_schedule(5, 2)
print(describe(ring))
print(weight_matrix(ring, 0).entries)

# EXP on 8 nodes: the offset doubles each round, period 3
exp = build_exp_schedule(8)
print(describe(exp))
for t in range(exp.period):
    w = weight_matrix(exp, t)
    print(f"round {t}: row dev {w.row_deviation():.1e}, column dev {w.column_deviation():.1e}")
    print(w.entries)

# repeated mixing of a random vector: spread of the node values over time
x0 = np.random.default_rng(0).normal(size=10)
for name, sched in [("2-Out", build_d_out_schedule(10, 2)), ("4-Out", build_d_out_schedule(10, 4)),
                    ("EXP", build_exp_schedule(10))]:
    x = x0.copy()
    spread = []
    for t in range(60):
        x = weight_matrix(sched, t).entries @ x
        spread.append(x.max() - x.min())
    print(f"{name:6s} spread after 10/30/60 rounds: {spread[9]:.2e} {spread[29]:.2e} {spread[59]:.2e}")
    # the average is preserved exactly (up to rounding)
    print(f"       mean drift {abs(x.mean() - x0.mean()):.1e}")
