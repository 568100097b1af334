"""
Dense simplex and the two l1 programs built on it
=================================================

Small problems whose answers can be checked by hand.
"""
import numpy as np

from kktgp.lp import LinearProgram, solve_l1_max_milp, solve_l1_min, solve_lp

# a textbook LP: maximize 3x + 5y subject to x <= 4, 2y <= 12, 3x + 2y <= 18
lp = LinearProgram([-3.0, -5.0], A_ub=[[1, 0], [0, 2], [3, 2]], b_ub=[4, 12, 18])
sol = solve_lp(lp)
print("status:", sol.status, " x =", sol.x, " objective =", -sol.objective_value)  # (2, 6), 36

# the row marginals certify optimality: b'y equals the objective
print("duals:", sol.duals_ub, " b'y =", lp.b_ub @ sol.duals_ub)

# min ||M z + d||_1 : a one-dimensional median problem
M = np.ones((5, 1))
d = -np.array([0.0, 1.0, 4.0, 9.0, 10.0])
print("l1 fit of a constant:", solve_l1_min(M, d).x, "(the median is 4)")

# max ||z||_1 over a box by enumerating sign patterns
box = solve_l1_max_milp(np.eye(3), np.zeros(3), bounds=[(-1, 2), (-3, 1), (0, 1)])
print("largest l1 norm in the box:", box.objective_value, "from", box.x,
      f"({box.extra['n_lp']} LPs)")
