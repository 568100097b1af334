"""Small dense linear programs and sign-enumeration mini-MILPs.

Everything here is sized for the KKT mining subproblems: tens to a few
hundred variables, dense matrices. The solver is a two-phase tableau
simplex with Bland's rule, so results are exact vertices and fully
deterministic for a given variable ordering.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-9

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
NUMERICAL = "numerical_failure"


@dataclass(frozen=True)
class LinearProgram:
    """``min c'x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lo <= x <= hi``.

    ``bounds`` follows the scipy convention: one ``(lo, hi)`` pair per
    variable, ``None`` meaning unbounded on that side. When omitted every
    variable is nonnegative.
    """

    c: np.ndarray
    A_ub: np.ndarray | None = None
    b_ub: np.ndarray | None = None
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    bounds: list | None = None

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = c.size
        object.__setattr__(self, "c", c)
        for a_name, b_name in (("A_ub", "b_ub"), ("A_eq", "b_eq")):
            A, b = getattr(self, a_name), getattr(self, b_name)
            if A is None or np.size(A) == 0:
                A = np.zeros((0, n))
                b = np.zeros(0)
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if A.shape[1] != n or A.shape[0] != b.size:
                raise ValueError(f"{a_name}/{b_name} shapes {A.shape}/{b.shape} "
                                 f"inconsistent with {n} variables")
            if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
                raise ValueError(f"{a_name}/{b_name} contain non-finite entries")
            object.__setattr__(self, a_name, A)
            object.__setattr__(self, b_name, b)
        if not np.all(np.isfinite(c)):
            raise ValueError("objective contains non-finite entries")
        object.__setattr__(self, "bounds", _normalize_bounds(self.bounds, n))

    @property
    def n(self) -> int:
        return self.c.size


@dataclass
class LPSolution:
    status: str
    x: np.ndarray | None = None
    objective_value: float = np.nan
    duals_ub: np.ndarray | None = None
    duals_eq: np.ndarray | None = None
    iterations: int = 0
    message: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _normalize_bounds(bounds, n):
    if bounds is None:
        return [(0.0, np.inf)] * n
    if isinstance(bounds, tuple) and len(bounds) == 2 and not isinstance(bounds[0], tuple):
        bounds = [bounds] * n
    if len(bounds) != n:
        raise ValueError(f"expected {n} bounds, got {len(bounds)}")
    out = []
    for lo, hi in bounds:
        lo = -np.inf if lo is None else float(lo)
        hi = np.inf if hi is None else float(hi)
        if lo > hi:
            raise ValueError(f"empty bound interval [{lo}, {hi}]")
        out.append((lo, hi))
    return out


class _StandardForm:
    """``min c's  s.t.  A s = b,  s >= 0`` with ``b >= 0`` and a map back to x."""

    def __init__(self, lp: LinearProgram):
        n = lp.n
        cols = []  # (var index, sign) for every standard column
        offset = np.zeros(n)
        ub_rows = []  # (var index, rhs) for finite upper bounds on shifted vars
        for j, (lo, hi) in enumerate(lp.bounds):
            if np.isfinite(lo):
                offset[j] = lo
                cols.append((j, 1.0))
                if np.isfinite(hi):
                    ub_rows.append((len(cols) - 1, hi - lo))
            elif np.isfinite(hi):
                offset[j] = hi
                cols.append((j, -1.0))
            else:
                cols.append((j, 1.0))
                cols.append((j, -1.0))
        n_struct = len(cols)
        P = np.zeros((n, n_struct))
        for k, (j, s) in enumerate(cols):
            P[j, k] = s
        self.P, self.offset = P, offset

        m_ub, m_eq, m_bd = lp.A_ub.shape[0], lp.A_eq.shape[0], len(ub_rows)
        n_slack = m_ub + m_bd
        m = m_ub + m_eq + m_bd
        A = np.zeros((m, n_struct + n_slack))
        b = np.zeros(m)
        A[:m_ub, :n_struct] = lp.A_ub @ P
        b[:m_ub] = lp.b_ub - lp.A_ub @ offset
        A[:m_ub, n_struct:n_struct + m_ub] = np.eye(m_ub)
        A[m_ub:m_ub + m_eq, :n_struct] = lp.A_eq @ P
        b[m_ub:m_ub + m_eq] = lp.b_eq - lp.A_eq @ offset
        for r, (k, rhs) in enumerate(ub_rows):
            row = m_ub + m_eq + r
            A[row, k] = 1.0
            A[row, n_struct + m_ub + r] = 1.0
            b[row] = rhs
        sign = np.where(b < 0, -1.0, 1.0)
        self.A = A * sign[:, None]
        self.b = b * sign
        self.row_sign = sign
        self.c = np.concatenate([P.T @ lp.c, np.zeros(n_slack)])
        self.const = float(lp.c @ offset)
        self.m_ub, self.m_eq = m_ub, m_eq
        # rows whose slack enters with +1 can start basic on that slack
        self.slack_basis = {}
        for r in range(m_ub):
            if sign[r] > 0:
                self.slack_basis[r] = n_struct + r
        for r in range(m_bd):
            row = m_ub + m_eq + r
            if sign[row] > 0:
                self.slack_basis[row] = n_struct + m_ub + r

    def to_x(self, s):
        return self.offset + self.P @ s[:self.P.shape[1]]


def _pivot(T, basis, r, c):
    T[r] /= T[r, c]
    col = T[:, c].copy()
    col[r] = 0.0
    T -= np.outer(col, T[r])
    basis[r] = c


def _bland(T, basis, n_cols, max_iter):
    """Run primal simplex on tableau ``T`` (last row = reduced costs, last column = rhs)."""
    it = 0
    while it < max_iter:
        red = T[-1, :n_cols]
        candidates = np.flatnonzero(red < -PIVOT_TOL)
        if candidates.size == 0:
            return OPTIMAL, it
        c = candidates[0]
        col = T[:-1, c]
        pos = np.flatnonzero(col > PIVOT_TOL)
        if pos.size == 0:
            return UNBOUNDED, it
        ratios = T[pos, -1] / col[pos]
        best = ratios.min()
        ties = pos[ratios <= best + 1e-12 * max(1.0, abs(best))]
        r = ties[np.argmin(np.asarray(basis)[ties])]
        _pivot(T, basis, r, c)
        it += 1
    return NUMERICAL, it


def solve_lp(lp: LinearProgram, order=None, max_iter: int | None = None) -> LPSolution:
    """Solve ``lp`` with a two-phase Bland's-rule simplex.

    Parameters
    ----------
    lp : LinearProgram
    order : sequence of int, optional
        Variable ordering used for pivot tie-breaking. Different orderings
        may land on different optimal vertices; each ordering is
        deterministic.
    max_iter : int, optional
        Pivot budget per phase. Defaults to ``50 * (rows + cols)``.
    """
    if order is not None:
        order = np.asarray(order)
        if sorted(order.tolist()) != list(range(lp.n)):
            raise ValueError("order must be a permutation of the variables")
        permuted = LinearProgram(
            lp.c[order], lp.A_ub[:, order], lp.b_ub, lp.A_eq[:, order], lp.b_eq,
            [lp.bounds[i] for i in order])
        sol = solve_lp(permuted, max_iter=max_iter)
        if sol.x is not None:
            x = np.empty(lp.n)
            x[order] = sol.x
            sol.x = x
        return sol

    sf = _StandardForm(lp)
    m, N = sf.A.shape
    if max_iter is None:
        max_iter = 50 * (m + N + 1)

    art_rows = [r for r in range(m) if r not in sf.slack_basis]
    n_art = len(art_rows)
    T = np.zeros((m + 1, N + n_art + 1))
    T[:m, :N] = sf.A
    T[:m, -1] = sf.b
    basis = [0] * m
    for r, col in sf.slack_basis.items():
        basis[r] = col
    for k, r in enumerate(art_rows):
        T[r, N + k] = 1.0
        basis[r] = N + k
    # phase 1 objective: sum of artificials, expressed in nonbasic terms
    T[-1, N:N + n_art] = 1.0
    for r in art_rows:
        T[-1] -= T[r]

    status, it1 = _bland(T, basis, N + n_art, max_iter)
    if status == NUMERICAL:
        return LPSolution(NUMERICAL, iterations=it1, message="phase 1 iteration limit")
    infeas = -T[-1, -1]
    if infeas > FEAS_TOL * max(1.0, np.abs(sf.b).max(initial=0.0)) * 10:
        return LPSolution(INFEASIBLE, iterations=it1,
                          message=f"phase 1 optimum {infeas:.3e} > 0")

    # drive remaining artificials out of the basis; drop redundant rows
    keep = np.ones(m + 1, dtype=bool)
    for r in range(m):
        if basis[r] >= N:
            nz = np.flatnonzero(np.abs(T[r, :N]) > PIVOT_TOL)
            if nz.size:
                _pivot(T, basis, r, nz[0])
            else:
                keep[r] = False
    rows = np.flatnonzero(keep[:m])
    T = np.vstack([T[rows][:, list(range(N)) + [T.shape[1] - 1]],
                   np.zeros((1, N + 1))])
    basis = [basis[r] for r in rows]
    T[-1, :N] = sf.c
    for r, bc in enumerate(basis):
        if sf.c[bc] != 0.0:
            T[-1] -= sf.c[bc] * T[r]

    status, it2 = _bland(T, basis, N, max_iter)
    iters = it1 + it2
    if status == UNBOUNDED:
        return LPSolution(UNBOUNDED, iterations=iters, message="objective unbounded below")
    if status == NUMERICAL:
        return LPSolution(NUMERICAL, iterations=iters, message="phase 2 iteration limit")

    s = np.zeros(N)
    s[basis] = T[:-1, -1]
    # refine the basic solution against the original (untransformed) rows
    AB = sf.A[rows][:, basis]
    try:
        refined = np.linalg.solve(AB, sf.b[rows])
        if np.all(refined >= -1e-9):
            s[basis] = np.maximum(refined, 0.0)
        y_rows = np.linalg.solve(AB.T, sf.c[basis])
    except np.linalg.LinAlgError:
        y_rows = np.linalg.lstsq(AB.T, sf.c[basis], rcond=None)[0]
    y = np.zeros(m)
    y[rows] = y_rows
    marg = y * sf.row_sign
    x = sf.to_x(s)
    sol = LPSolution(OPTIMAL, x=x, objective_value=float(lp.c @ x),
                     duals_ub=marg[:sf.m_ub], duals_eq=marg[sf.m_ub:sf.m_ub + sf.m_eq],
                     iterations=iters)
    resid = primal_residual(lp, x)
    if resid > 1e-7 * max(1.0, np.abs(lp.b_eq).max(initial=0.0), np.abs(lp.b_ub).max(initial=0.0)):
        sol.status = NUMERICAL
        sol.message = f"primal residual {resid:.2e} after refinement"
    return sol


def primal_residual(lp: LinearProgram, x) -> float:
    """Largest violation of any constraint or bound at ``x``."""
    r = 0.0
    if lp.A_ub.shape[0]:
        r = max(r, float(np.max(lp.A_ub @ x - lp.b_ub, initial=0.0)))
    if lp.A_eq.shape[0]:
        r = max(r, float(np.max(np.abs(lp.A_eq @ x - lp.b_eq))))
    lo = np.array([b[0] for b in lp.bounds])
    hi = np.array([b[1] for b in lp.bounds])
    r = max(r, float(np.max(lo - x, initial=0.0)), float(np.max(x - hi, initial=0.0)))
    return r


def _free(n):
    return [(None, None)] * n


def solve_l1_min(M, d, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None,
                 order=None) -> LPSolution:
    """Minimize ``||M z + d||_1`` subject to linear constraints on ``z``.

    Uses the epigraph split ``M z + d = p - q`` with ``p, q >= 0``. Unlike
    :func:`solve_lp`, ``z`` is free unless ``bounds`` says otherwise.
    The returned ``x`` is ``z`` alone; ``extra["residual"]`` holds ``M z + d``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    m, nz = M.shape
    bounds = _free(nz) if bounds is None else list(bounds)
    c = np.concatenate([np.zeros(nz), np.ones(2 * m)])
    Aeq = np.hstack([M, -np.eye(m), np.eye(m)])
    beq = -d
    if A_eq is not None and np.size(A_eq):
        A_eq = np.atleast_2d(A_eq)
        Aeq = np.vstack([Aeq, np.hstack([A_eq, np.zeros((A_eq.shape[0], 2 * m))])])
        beq = np.concatenate([beq, np.atleast_1d(b_eq)])
    Aub = None
    if A_ub is not None and np.size(A_ub):
        A_ub = np.atleast_2d(A_ub)
        Aub = np.hstack([A_ub, np.zeros((A_ub.shape[0], 2 * m))])
    lp = LinearProgram(c, Aub, b_ub, Aeq, beq, bounds + [(0, None)] * (2 * m))
    if order is not None:
        order = list(order) + list(range(nz, nz + 2 * m))
    sol = solve_lp(lp, order=order)
    if sol.x is not None:
        z = sol.x[:nz]
        sol.extra["residual"] = M @ z + d
        sol.objective_value = float(np.abs(M @ z + d).sum())
        sol.x = z
    return sol


def solve_l1_max_milp(M, d, A_ub=None, b_ub=None, A_eq=None, b_eq=None, bounds=None,
                      n_bin: int | None = None, order=None) -> LPSolution:
    """Maximize ``||M z + d||_1`` by enumerating the sign of every component.

    Each of the ``2**n_bin`` sign patterns ``s`` gives an LP
    ``max s'(M z + d)``; the best one is returned. Any unbounded sub-LP makes
    the whole problem unbounded, so callers must bound ``z`` themselves.
    ``extra["signs"]`` records the winning pattern.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    d = np.atleast_1d(np.asarray(d, dtype=float))
    m, nz = M.shape
    if n_bin is None:
        n_bin = m
    if n_bin != m:
        raise ValueError(f"n_bin={n_bin} must equal the number of residual rows ({m})")
    if n_bin > 20:
        raise ValueError("sign enumeration limited to 20 binaries")
    bounds = _free(nz) if bounds is None else list(bounds)
    best = None
    n_lp = 0
    patterns = itertools.product((1.0, -1.0), repeat=m) if m else [()]
    for signs in patterns:
        s = np.asarray(signs)
        c = -(s @ M) if m else np.zeros(nz)
        sol = solve_lp(LinearProgram(c, A_ub, b_ub, A_eq, b_eq, bounds), order=order)
        n_lp += 1
        if sol.status == UNBOUNDED:
            sol.message = f"sub-LP for signs {signs} unbounded; add normalization"
            sol.extra["signs"] = s
            return sol
        if not sol.optimal:
            if sol.status == INFEASIBLE:
                # every pattern shares the feasible set
                sol.extra["n_lp"] = n_lp
                return sol
            return sol
        val = float(np.abs(M @ sol.x + d).sum()) if m else 0.0
        if best is None or val > best.objective_value + 1e-12:
            sol.objective_value = val
            sol.extra["signs"] = s
            best = sol
    best.extra["n_lp"] = n_lp
    return best
