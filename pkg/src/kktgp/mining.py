"""Mine constraint evidence from the KKT conditions of demonstrations.

Four small LP/MILP subproblems per demonstration:

* tightness: can stationarity at ``x_t`` be met with no unknown-constraint
  force at ``t``? If not (``p2 > eps_pos``) the unknown constraint is tight.
* gradient identification: with unit unknown multipliers on the tight
  steps, find gradients that make the whole demonstration stationary.
* orthogonal / anti-parallel checks: certify that the recovered gradient
  is unique up to a positive scale (``p4 <= eps_pos`` and ``p5 > eps_pos``).

Stationarity is always enforced on every residual block other than the
one being scored. Where the unknown constraint may carry an arbitrary
force (other timesteps in the tightness check, other tight timesteps in the
uniqueness checks) those rows are projected onto the null space of the
constraint-map Jacobian, which is exact and keeps the problems linear.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import null_space

from .core import SLACK_TOL, Demonstration, KKTStructure
from .lp import LinearProgram, LPSolution, solve_l1_max_milp, solve_l1_min, solve_lp

log = logging.getLogger(__name__)

EPS_POS = 1e-6
GMAX_FACTOR = 10.0


class MiningError(RuntimeError):
    pass


class EmptyDatasetError(MiningError):
    pass


# --------------------------------------------------------------------------
# LP assembly


@dataclass
class StationarityLP:
    """Linear description of multipliers/gradients satisfying stationarity.

    Variables are ``[lambda_k(active), nu_k, gamma_{t1}, gamma_{t2}, ...]``;
    ``gamma_slices[t]`` locates the explicit gradient of timestep ``t``.
    ``obj_rows``/``obj_const`` give the residual rows excluded from the
    equality system (the scored block), if any.
    """

    A_eq: np.ndarray
    b_eq: np.ndarray
    bounds: list
    n_active: int
    n_eq: int
    gamma_slices: dict
    active: np.ndarray
    obj_M: np.ndarray | None = None
    obj_d: np.ndarray | None = None

    @property
    def n_var(self) -> int:
        return len(self.bounds)

    def gamma(self, x, t):
        return np.asarray(x)[self.gamma_slices[t]]

    def with_gamma_box(self, t, gmax) -> "StationarityLP":
        bounds = list(self.bounds)
        sl = self.gamma_slices[t]
        for i in range(sl.start, sl.stop):
            bounds[i] = (-gmax, gmax)
        return StationarityLP(self.A_eq, self.b_eq, bounds, self.n_active, self.n_eq,
                              self.gamma_slices, self.active, self.obj_M, self.obj_d)


def _null_rows(phi_t: np.ndarray) -> np.ndarray:
    """Rows spanning directions a constraint-space force at x_t cannot reach."""
    N = null_space(phi_t)  # (nx, nx - rank)
    return N.T


def build_stationarity_lp(k: KKTStructure, explicit=(), free=(), scored=None,
                          slack_tol: float = SLACK_TOL) -> StationarityLP:
    """Assemble ``s = 0`` with unknown forces of three kinds.

    explicit : timesteps whose force is ``1 * Phi_t' gamma_t`` with ``gamma_t`` a variable
    free     : timesteps whose force is arbitrary (rows projected out)
    scored   : timestep whose state rows are returned as objective rows
               instead of constraints; it carries no unknown force
    Every other timestep has zero unknown force.
    """
    explicit = [int(t) for t in explicit]
    free = set(int(t) for t in free) - set(explicit)
    if scored is not None:
        free.discard(scored)
        if scored in explicit:
            raise ValueError("scored timestep cannot carry an explicit gradient")
    act = k.active_ineq(slack_tol)
    blocks = [k.G[act].T, k.H.T]
    slices = {}
    o = act.size + k.n_eq
    for t in explicit:
        blocks.append(k.unknown_force_columns(t))
        slices[t] = slice(o, o + k.nc)
        o += k.nc
    M = np.hstack(blocks)
    d = k.cost_grad

    R = []
    for t in range(k.T):
        rows = np.zeros((k.nx, k.n))
        rows[:, k.sx(t)] = np.eye(k.nx)
        if t == scored:
            continue
        if t in free:
            P = _null_rows(k.phi_jac[t])
            if P.shape[0]:
                R.append(P @ rows)
        else:
            R.append(rows)
    cu = np.zeros(((k.T - 1) * k.nu, k.n))
    cu[:, k.T * k.nx:] = np.eye((k.T - 1) * k.nu)
    R.append(cu)
    R = np.vstack(R)
    A_eq = R @ M
    b_eq = -R @ d
    bounds = [(0.0, None)] * act.size + [(None, None)] * (o - act.size)
    lp = StationarityLP(A_eq, b_eq, bounds, act.size, k.n_eq, slices, act)
    if scored is not None:
        sl = k.sx(scored)
        lp.obj_M = M[sl]
        lp.obj_d = d[sl]
    return lp


# --------------------------------------------------------------------------
# tightness


@dataclass(frozen=True)
class TightnessEntry:
    t: int
    p2: float
    is_tight: bool


@dataclass
class TightnessReport:
    entries: list  # one list of TightnessEntry per demonstration
    eps_pos: float = EPS_POS

    def tight_steps(self, j: int) -> list:
        return [e.t for e in self.entries[j] if e.is_tight]

    def p2(self, j: int) -> np.ndarray:
        return np.array([e.p2 for e in self.entries[j]])


def tightness_check(demo: Demonstration, t: int, order=None) -> float:
    """Optimal value ``p2`` of the tightness LP at timestep ``t``."""
    k = demo.kkt
    if not 0 <= t < k.T:
        raise IndexError(f"timestep {t} outside [0, {k.T})")
    lp = build_stationarity_lp(k, free=range(k.T), scored=t)
    sol = solve_l1_min(lp.obj_M, lp.obj_d, A_eq=lp.A_eq, b_eq=lp.b_eq, bounds=lp.bounds,
                       order=order)
    if not sol.optimal:
        raise MiningError(f"tightness LP at t={t}: {sol.status} ({sol.message})")
    return max(sol.objective_value, 0.0)


def scan_tightness(demos, eps_pos: float = EPS_POS) -> TightnessReport:
    entries, errors = [], []
    for j, demo in enumerate(demos):
        row = []
        for t in range(demo.horizon):
            try:
                p2 = tightness_check(demo, t)
            except MiningError as exc:
                errors.append(f"demo {j}: {exc}")
                p2 = 0.0
            row.append(TightnessEntry(t, p2, p2 > eps_pos))
        entries.append(row)
    if errors:
        raise MiningError("; ".join(errors))
    return TightnessReport(entries, eps_pos)


# --------------------------------------------------------------------------
# gradients


@dataclass
class GradientIdentification:
    feasible: bool
    gradients: dict
    solution: LPSolution | None = None
    message: str = ""


def gradient_lp(demo: Demonstration, t_tight) -> StationarityLP:
    """Feasible set of the gradient-identification LP (unit tight multipliers)."""
    return build_stationarity_lp(demo.kkt, explicit=sorted(t_tight))


def identify_gradients(demo: Demonstration, t_tight, order=None) -> GradientIdentification:
    """Any KKT-consistent set of gradients at the tight timesteps."""
    t_tight = sorted(int(t) for t in t_tight)
    lp = gradient_lp(demo, t_tight)
    sol = solve_lp(LinearProgram(np.zeros(lp.n_var), A_eq=lp.A_eq, b_eq=lp.b_eq,
                                 bounds=lp.bounds), order=order)
    if not sol.optimal:
        return GradientIdentification(False, {}, sol,
                                      f"gradient LP {sol.status}: demonstration not "
                                      "KKT-consistent under the tight set")
    return GradientIdentification(True, {t: lp.gamma(sol.x, t).copy() for t in t_tight}, sol)


def orthogonal_basis(g) -> np.ndarray:
    """``(nc, nc-1)`` orthonormal basis of ``g``'s complement (Gram-Schmidt from the axes)."""
    g = np.asarray(g, dtype=float)
    nc = g.size
    basis = [g / np.linalg.norm(g)]
    for i in range(nc):
        v = np.zeros(nc)
        v[i] = 1.0
        for b in basis:
            v = v - (v @ b) * b
        nv = np.linalg.norm(v)
        if nv > 1e-8:
            basis.append(v / nv)
        if len(basis) == nc:
            break
    return np.array(basis[1:]).T.reshape(nc, nc - 1)


def _check_lp(demo, t, t_tight, g_tilde):
    t_tight = set(int(s) for s in (t_tight if t_tight is not None else [t])) | {int(t)}
    gmax = GMAX_FACTOR * float(np.linalg.norm(g_tilde))
    lp = build_stationarity_lp(demo.kkt, explicit=[t], free=t_tight - {t})
    return lp.with_gamma_box(t, gmax)


def orthogonal_check(demo: Demonstration, t: int, g_tilde, t_tight=None) -> float:
    """``p4``: largest l1 size of a feasible gradient's orthogonal-complement coordinates."""
    g_tilde = np.asarray(g_tilde, dtype=float)
    if g_tilde.size == 1:
        return 0.0
    lp = _check_lp(demo, t, t_tight, g_tilde)
    B = orthogonal_basis(g_tilde)
    M = np.zeros((B.shape[1], lp.n_var))
    M[:, lp.gamma_slices[t]] = B.T
    sol = solve_l1_max_milp(M, np.zeros(B.shape[1]), A_eq=lp.A_eq, b_eq=lp.b_eq,
                            bounds=lp.bounds)
    if not sol.optimal:
        raise MiningError(f"orthogonal check at t={t}: {sol.status} ({sol.message})")
    return sol.objective_value


def antiparallel_check(demo: Demonstration, t: int, g_tilde, t_tight=None) -> float:
    """``p5``: smallest inner product of a feasible gradient with ``g_tilde``."""
    g_tilde = np.asarray(g_tilde, dtype=float)
    lp = _check_lp(demo, t, t_tight, g_tilde)
    return antiparallel_value(lp, t, g_tilde)


def antiparallel_value(lp: StationarityLP, t: int, g_tilde) -> float:
    c = np.zeros(lp.n_var)
    c[lp.gamma_slices[t]] = g_tilde
    sol = solve_lp(LinearProgram(c, A_eq=lp.A_eq, b_eq=lp.b_eq, bounds=lp.bounds))
    if not sol.optimal:
        raise MiningError(f"anti-parallel check at t={t}: {sol.status} ({sol.message})")
    return sol.objective_value


# --------------------------------------------------------------------------
# dataset


@dataclass(frozen=True)
class GradientEvidence:
    demo: int
    t: int
    kappa: np.ndarray
    gradient: np.ndarray
    p2: float
    p4: float
    p5: float
    robust: bool

    @property
    def normal(self) -> np.ndarray:
        return self.gradient / np.linalg.norm(self.gradient)

    def to_dict(self) -> dict:
        return {"demo": self.demo, "t": self.t, "kappa": self.kappa.tolist(),
                "normal": self.normal.tolist(), "gradient": self.gradient.tolist(),
                "p2": self.p2, "p4": self.p4, "p5": self.p5, "robust": self.robust}

    @classmethod
    def from_dict(cls, d: dict) -> "GradientEvidence":
        g = d.get("gradient", d["normal"])
        return cls(int(d["demo"]), int(d["t"]), np.asarray(d["kappa"], float),
                   np.asarray(g, float), float(d["p2"]), float(d["p4"]), float(d["p5"]),
                   bool(d["robust"]))


@dataclass
class ConstraintDataset:
    """GP training data: zero values and unit normals at robust tight states."""

    D_kappa: np.ndarray
    D_g: np.ndarray
    D_grad: np.ndarray
    feas_states: np.ndarray
    evidence: list = field(default_factory=list)

    @property
    def n_robust(self) -> int:
        return self.D_kappa.shape[0]

    @property
    def dim(self) -> int:
        return self.D_kappa.shape[1]

    @classmethod
    def from_evidence(cls, evidence, feas_states) -> "ConstraintDataset":
        kept = [e for e in evidence if e.robust]
        if not kept:
            raise EmptyDatasetError(
                "no robustly-identified constraint gradients; provide more (or more "
                "varied) demonstrations that touch the constraint boundary")
        kept.sort(key=lambda e: (e.demo, e.t))
        D_kappa = np.array([e.kappa for e in kept])
        D_grad = np.array([e.normal for e in kept])
        return cls(D_kappa, np.zeros(len(kept)), D_grad, np.asarray(feas_states, float), list(evidence))


def mine_demo(j: int, demo: Demonstration, eps_pos: float = EPS_POS):
    """Tightness scan, gradient identification and uniqueness checks for one demo."""
    p2 = np.array([tightness_check(demo, t) for t in range(demo.horizon)])
    tight = [t for t in range(demo.horizon) if p2[t] > eps_pos]
    if not tight:
        return []
    ident = identify_gradients(demo, tight)
    if not ident.feasible:
        log.warning("demo %d: %s", j, ident.message)
        return []
    out = []
    for t in tight:
        g = ident.gradients[t]
        if np.linalg.norm(g) <= 0:
            out.append(GradientEvidence(j, t, demo.kappa[t], g, float(p2[t]), np.nan, np.nan, False))
            continue
        p4 = orthogonal_check(demo, t, g, tight)
        p5 = antiparallel_check(demo, t, g, tight)
        robust = bool(p4 <= eps_pos and p5 > eps_pos)
        out.append(GradientEvidence(j, t, demo.kappa[t].copy(), g, float(p2[t]), p4, p5, robust))
    return out


def mine(demos, eps_pos: float = EPS_POS) -> list:
    """Evidence for every identified tight timestep of every demonstration."""
    evidence = []
    for j, demo in enumerate(demos):
        evidence.extend(mine_demo(j, demo, eps_pos))
    return evidence


def build_dataset(demos, eps_pos: float = EPS_POS) -> ConstraintDataset:
    demos = list(demos)
    if not demos:
        raise EmptyDatasetError("no demonstrations given; at least one demonstration "
                                "touching the constraint is required")
    evidence = mine(demos, eps_pos)
    feas = np.vstack([d.kappa for d in demos])
    return ConstraintDataset.from_evidence(evidence, feas)
