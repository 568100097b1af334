"""Systems, tasks, demonstrations and the KKT stationarity residual.

Trajectories are flattened as ``xi = [x_0, ..., x_{T-1}, u_0, ..., u_{T-2}]``
(row-major, zero-based time). The stationarity residual of a demonstration
is affine in the Lagrange multipliers:

    s = grad c + G' lam_k + H' nu_k + sum_t lam_unk[t] * E_t Phi_t' grad_t

where ``G``/``H`` are Jacobians of the known inequality/equality
constraints, ``Phi_t`` is the constraint-space map Jacobian at ``x_t`` and
``grad_t`` the unknown constraint's gradient in constraint space.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

SLACK_TOL = 1e-6


class DimensionError(ValueError):
    """Multiplier or trajectory block has the wrong size."""


def _frozen(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# systems and maps


@dataclass(frozen=True)
class SystemModel:
    """Deterministic discrete-time dynamics ``x_{t+1} = step(x_t, u_t, t)``."""

    state_dim: int
    control_dim: int
    step: Callable
    jac_x: Callable
    jac_u: Callable
    name: str = "system"

    def rollout(self, x0, controls):
        xs = [np.asarray(x0, dtype=float)]
        for t, u in enumerate(np.atleast_2d(controls)):
            xs.append(np.asarray(self.step(xs[-1], u, t), dtype=float))
        return np.array(xs)


def single_integrator(n: int = 2, name: str = "single_integrator") -> SystemModel:
    """``x_{t+1} = x_t + u_t``; used for the point robot and the kinematic arm."""
    eye = np.eye(n)
    return SystemModel(n, n, lambda x, u, t: x + u,
                       lambda x, u, t: eye, lambda x, u, t: eye, name)


@dataclass(frozen=True)
class ConstraintMap:
    """Time-separable map ``kappa = phi_sep(x)`` into constraint space."""

    constraint_dim: int
    phi_sep: Callable
    phi_jacobian: Callable

    def __call__(self, x):
        return self.phi_sep(x)


def identity_map(n: int) -> ConstraintMap:
    eye = np.eye(n)
    return ConstraintMap(n, lambda x: np.asarray(x, dtype=float), lambda x: eye)


def select_map(indices: Sequence[int], state_dim: int) -> ConstraintMap:
    """Pick state components (e.g. positions) as the constraint state."""
    idx = list(indices)
    J = np.zeros((len(idx), state_dim))
    J[np.arange(len(idx)), idx] = 1.0
    return ConstraintMap(len(idx), lambda x: np.asarray(x, dtype=float)[idx], lambda x: J)


# --------------------------------------------------------------------------
# trajectory layout


def xi_size(T: int, nx: int, nu: int) -> int:
    return T * nx + (T - 1) * nu


def state_slice(t: int, T: int, nx: int, nu: int) -> slice:
    return slice(t * nx, (t + 1) * nx)


def control_slice(t: int, T: int, nx: int, nu: int) -> slice:
    o = T * nx + t * nu
    return slice(o, o + nu)


def pack(states, controls):
    return np.concatenate([np.ravel(states), np.ravel(controls)])


# --------------------------------------------------------------------------
# known constraints and costs


@dataclass(frozen=True)
class KnownConstraint:
    """Vector-valued known constraint block over a whole trajectory.

    ``value(states, controls)`` returns ``(m,)``; ``jacobian`` returns
    ``(m, |xi|)``. Inequalities mean ``value <= 0``, equalities ``value == 0``.
    """

    value: Callable
    jacobian: Callable
    name: str = "known"


def control_norm_bound(u_max: float) -> KnownConstraint:
    """``||u_t||^2 - u_max^2 <= 0`` for every control."""

    def value(states, controls):
        return np.sum(np.asarray(controls) ** 2, axis=1) - u_max ** 2

    def jacobian(states, controls):
        states, controls = np.atleast_2d(states), np.atleast_2d(controls)
        T, nx = states.shape
        nu = controls.shape[1]
        J = np.zeros((T - 1, xi_size(T, nx, nu)))
        for t in range(T - 1):
            J[t, control_slice(t, T, nx, nu)] = 2.0 * controls[t]
        return J

    return KnownConstraint(value, jacobian, f"control_norm<={u_max:g}")


def state_halfspace(a, b: float, name: str = "halfspace") -> KnownConstraint:
    """``a' x_t - b <= 0`` at every timestep."""
    a = np.asarray(a, dtype=float)

    def value(states, controls):
        return np.asarray(states) @ a - b

    def jacobian(states, controls):
        states, controls = np.atleast_2d(states), np.atleast_2d(controls)
        T, nx = states.shape
        nu = controls.shape[1]
        J = np.zeros((T, xi_size(T, nx, nu)))
        for t in range(T):
            J[t, state_slice(t, T, nx, nu)] = a
        return J

    return KnownConstraint(value, jacobian, name)


def control_effort_cost(weight: float = 1.0):
    """``c = w * sum_t ||u_t||^2`` (squared path length for integrators)."""

    def cost(states, controls):
        return weight * float(np.sum(np.asarray(controls) ** 2))

    def grad(states, controls):
        return np.zeros_like(np.asarray(states, dtype=float)), 2.0 * weight * np.asarray(controls, dtype=float)

    return cost, grad


def radial_tracking_cost(radius: float, center=(0.0, 0.0), dims=(0, 1)):
    """``c = sum_t (||chi_t - center|| - radius)^2`` on the selected position components."""
    center = np.asarray(center, dtype=float)
    dims = list(dims)

    def cost(states, controls):
        chi = np.asarray(states)[:, dims] - center
        return float(np.sum((np.linalg.norm(chi, axis=1) - radius) ** 2))

    def grad(states, controls):
        states = np.asarray(states, dtype=float)
        chi = states[:, dims] - center
        rho = np.linalg.norm(chi, axis=1)
        gx = np.zeros_like(states)
        safe = np.where(rho > 0, rho, 1.0)
        gx[:, dims] = (2.0 * (rho - radius) / safe)[:, None] * chi
        gx[rho == 0] = 0.0
        return gx, np.zeros_like(np.asarray(controls, dtype=float))

    return cost, grad


@dataclass(frozen=True)
class TaskSpec:
    """Everything the demonstrator optimizes except the unknown constraint.

    Dynamics equalities come from ``system``; start/goal pinning equalities
    from ``start``/``goal`` (``None`` leaves that end free).
    """

    system: SystemModel
    constraint_map: ConstraintMap
    cost: Callable
    cost_gradient: Callable
    start: np.ndarray | None = None
    goal: np.ndarray | None = None
    known_ineq: tuple = ()
    known_eq: tuple = ()
    control_bound: float | None = None
    task_id: str = "task"

    def with_endpoints(self, start, goal) -> "TaskSpec":
        return TaskSpec(self.system, self.constraint_map, self.cost, self.cost_gradient,
                        None if start is None else _frozen(start),
                        None if goal is None else _frozen(goal),
                        self.known_ineq, self.known_eq, self.control_bound, self.task_id)


@dataclass(frozen=True)
class Demonstration:
    states: np.ndarray
    controls: np.ndarray
    task: TaskSpec

    def __post_init__(self):
        states = _frozen(np.atleast_2d(self.states))
        controls = np.asarray(self.controls, dtype=float)
        nx, nu = self.task.system.state_dim, self.task.system.control_dim
        if controls.size == 0:
            controls = np.zeros((0, nu))
        controls = _frozen(np.atleast_2d(controls).reshape(-1, nu))
        if states.shape[1] != nx:
            raise DimensionError(f"states have {states.shape[1]} columns, system has {nx}")
        if controls.shape[0] != states.shape[0] - 1:
            raise DimensionError(f"{controls.shape[0]} controls for {states.shape[0]} states")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    @property
    def xi(self):
        return pack(self.states, self.controls)

    @cached_property
    def kappa(self):
        phi = self.task.constraint_map
        return np.array([phi(x) for x in self.states])

    @cached_property
    def kkt(self) -> "KKTStructure":
        return KKTStructure.from_demo(self)


# --------------------------------------------------------------------------
# KKT structure


def equality_blocks(demo: Demonstration):
    """Values and Jacobian of all known equalities (dynamics, start, goal, extra)."""
    task, sysm = demo.task, demo.task.system
    X, U = demo.states, demo.controls
    T, nx, nu = demo.horizon, sysm.state_dim, sysm.control_dim
    n = xi_size(T, nx, nu)
    vals, rows, names = [], [], []
    for t in range(T - 1):
        J = np.zeros((nx, n))
        J[:, state_slice(t, T, nx, nu)] = sysm.jac_x(X[t], U[t], t)
        J[:, state_slice(t + 1, T, nx, nu)] = -np.eye(nx)
        J[:, control_slice(t, T, nx, nu)] = sysm.jac_u(X[t], U[t], t)
        vals.append(np.asarray(sysm.step(X[t], U[t], t)) - X[t + 1])
        rows.append(J)
        names += [f"dyn[{t}]"] * nx
    for label, target, t in (("start", task.start, 0), ("goal", task.goal, T - 1)):
        if target is None:
            continue
        J = np.zeros((nx, n))
        J[:, state_slice(t, T, nx, nu)] = np.eye(nx)
        vals.append(X[t] - target)
        rows.append(J)
        names += [label] * nx
    for c in task.known_eq:
        v = np.atleast_1d(c.value(X, U))
        vals.append(v)
        rows.append(np.atleast_2d(c.jacobian(X, U)))
        names += [c.name] * v.size
    if not rows:
        return np.zeros(0), np.zeros((0, n)), []
    return np.concatenate(vals), np.vstack(rows), names


def inequality_blocks(demo: Demonstration):
    X, U = demo.states, demo.controls
    n = demo.xi.size
    vals, rows, names = [], [], []
    for c in demo.task.known_ineq:
        v = np.atleast_1d(c.value(X, U))
        vals.append(v)
        rows.append(np.atleast_2d(c.jacobian(X, U)))
        names += [c.name] * v.size
    if not rows:
        return np.zeros(0), np.zeros((0, n)), []
    return np.concatenate(vals), np.vstack(rows), names


@dataclass(frozen=True)
class KKTStructure:
    """Precomputed affine pieces of the stationarity residual of one demo."""

    T: int
    nx: int
    nu: int
    nc: int
    cost_grad: np.ndarray      # (n,)
    G: np.ndarray              # (N_ineq, n)
    g: np.ndarray              # (N_ineq,)
    H: np.ndarray              # (N_eq, n)
    h: np.ndarray              # (N_eq,)
    phi_jac: np.ndarray        # (T, nc, nx)
    ineq_names: tuple = field(default=())
    eq_names: tuple = field(default=())

    @classmethod
    def from_demo(cls, demo: Demonstration) -> "KKTStructure":
        sysm = demo.task.system
        gx, gu = demo.task.cost_gradient(demo.states, demo.controls)
        h, H, eq_names = equality_blocks(demo)
        g, G, in_names = inequality_blocks(demo)
        cmap = demo.task.constraint_map
        phi_jac = np.array([np.atleast_2d(cmap.phi_jacobian(x)) for x in demo.states])
        return cls(demo.horizon, sysm.state_dim, sysm.control_dim, cmap.constraint_dim,
                   _frozen(pack(gx, gu)), _frozen(G), _frozen(g), _frozen(H), _frozen(h),
                   _frozen(phi_jac), tuple(in_names), tuple(eq_names))

    @property
    def n(self) -> int:
        return self.cost_grad.size

    @property
    def n_ineq(self) -> int:
        return self.g.size

    @property
    def n_eq(self) -> int:
        return self.h.size

    def active_ineq(self, tol: float = SLACK_TOL) -> np.ndarray:
        """Indices of known inequalities whose multiplier may be nonzero."""
        return np.flatnonzero(self.g >= -tol)

    def sx(self, t: int) -> slice:
        return state_slice(t, self.T, self.nx, self.nu)

    def su(self, t: int) -> slice:
        return control_slice(t, self.T, self.nx, self.nu)

    def unknown_force_columns(self, t: int) -> np.ndarray:
        """``(n, nc)`` map from a constraint-space gradient at ``t`` into the residual."""
        E = np.zeros((self.n, self.nc))
        E[self.sx(t)] = self.phi_jac[t].T
        return E


# --------------------------------------------------------------------------
# multipliers and the residual


@dataclass(frozen=True)
class MultiplierAssignment:
    """Lagrange multipliers of one demonstration.

    ``unk_gradients[t]`` is the unknown constraint's gradient at ``kappa_t``
    in constraint space; rows where ``lambda_unk[t] == 0`` are ignored.
    """

    lambda_k: np.ndarray
    nu_k: np.ndarray
    lambda_unk: np.ndarray
    unk_gradients: np.ndarray

    @classmethod
    def zeros(cls, demo: Demonstration) -> "MultiplierAssignment":
        k = demo.kkt
        return cls(np.zeros(k.n_ineq), np.zeros(k.n_eq), np.zeros(k.T), np.zeros((k.T, k.nc)))

    def __add__(self, other):
        return MultiplierAssignment(self.lambda_k + other.lambda_k, self.nu_k + other.nu_k,
                                    self.lambda_unk + other.lambda_unk,
                                    self.unk_gradients + other.unk_gradients)


def _check_dims(k: KKTStructure, m: MultiplierAssignment):
    expect = {"lambda_k": (k.n_ineq,), "nu_k": (k.n_eq,), "lambda_unk": (k.T,),
              "unk_gradients": (k.T, k.nc)}
    for name, shape in expect.items():
        got = np.shape(getattr(m, name))
        if got != shape:
            raise DimensionError(f"{name} has shape {got}, expected {shape}")


def assemble_residual(demo: Demonstration, m: MultiplierAssignment) -> np.ndarray:
    """Stationarity residual ``s`` of ``demo`` under multipliers ``m``."""
    k = demo.kkt
    _check_dims(k, m)
    s = k.cost_grad + k.G.T @ np.asarray(m.lambda_k, float) + k.H.T @ np.asarray(m.nu_k, float)
    force = np.asarray(m.lambda_unk, float)[:, None] * np.asarray(m.unk_gradients, float)
    # per-timestep Phi_t' w_t, written into the state blocks
    s[:k.T * k.nx] += np.einsum("tcx,tc->tx", k.phi_jac, force).ravel()
    return s


def residual_block(s, t: int, kind: str, T: int, nx: int, nu: int) -> np.ndarray:
    """Sub-vector of the residual for ``x_t`` (``kind="state"``) or ``u_t`` (``"control"``)."""
    s = np.asarray(s)
    if s.size != xi_size(T, nx, nu):
        raise DimensionError(f"residual length {s.size} != {xi_size(T, nx, nu)}")
    if kind == "state":
        if not 0 <= t < T:
            raise IndexError(f"state timestep {t} outside [0, {T})")
        return s[state_slice(t, T, nx, nu)]
    if kind == "control":
        if not 0 <= t < T - 1:
            raise IndexError(f"control timestep {t} outside [0, {T - 1})")
        return s[control_slice(t, T, nx, nu)]
    raise ValueError(f"kind must be 'state' or 'control', not {kind!r}")


@dataclass
class CertificateReport:
    passed: bool
    violations: list
    stationarity: float
    primal_eq: float
    primal_ineq: float
    complementarity: float
    min_multiplier: float

    def __bool__(self):
        return self.passed


def kkt_certificate_check(demo: Demonstration, m: MultiplierAssignment,
                          tol: float = 1e-6) -> CertificateReport:
    """Check the KKT conditions of the known constraints plus stationarity."""
    k = demo.kkt
    _check_dims(k, m)
    s = assemble_residual(demo, m)
    stat = float(np.max(np.abs(s), initial=0.0))
    peq = float(np.max(np.abs(k.h), initial=0.0))
    pin = float(np.max(k.g, initial=-np.inf)) if k.n_ineq else -np.inf
    comp = float(np.max(np.abs(m.lambda_k * k.g), initial=0.0))
    mins = np.concatenate([np.ravel(m.lambda_k), np.ravel(m.lambda_unk)])
    minm = float(mins.min(initial=np.inf))
    v = []
    if peq > tol:
        v.append(f"known equality violated by {peq:.3e}")
    if pin > tol:
        v.append(f"known inequality violated by {pin:.3e}")
    if minm < -tol:
        v.append(f"negative multiplier {minm:.3e}")
    if comp > tol:
        v.append(f"complementary slackness |lambda*g| = {comp:.3e}")
    if stat > tol:
        v.append(f"stationarity ||s||_inf = {stat:.3e}")
    return CertificateReport(not v, v, stat, peq, pin, comp, minm)


def fit_multipliers(demo: Demonstration, unk_gradients=None, tight=None,
                    tol: float = SLACK_TOL) -> MultiplierAssignment:
    """Multipliers minimizing ``||s||_1`` given known unknown-constraint gradients.

    ``unk_gradients`` (T, nc) are the true gradients (available to a
    synthesizer, never to the learner); ``tight`` marks timesteps whose
    unknown multiplier may be positive. Slack known inequalities keep a
    zero multiplier.
    """
    from .lp import solve_l1_min

    k = demo.kkt
    act = k.active_ineq(tol)
    tight = np.zeros(k.T, bool) if tight is None else np.asarray(tight, bool)
    tt = np.flatnonzero(tight)
    cols = [k.G[act].T, k.H.T]
    for t in tt:
        cols.append(k.unknown_force_columns(t) @ np.asarray(unk_gradients[t], float)[:, None])
    M = np.hstack(cols) if cols else np.zeros((k.n, 0))
    bounds = [(0, None)] * act.size + [(None, None)] * k.n_eq + [(0, None)] * tt.size
    sol = solve_l1_min(M, k.cost_grad, bounds=bounds)
    if not sol.optimal:
        raise RuntimeError(f"multiplier fit failed: {sol.status} {sol.message}")
    z = sol.x
    lam = np.zeros(k.n_ineq)
    lam[act] = z[:act.size]
    nu = z[act.size:act.size + k.n_eq]
    lam_unk = np.zeros(k.T)
    lam_unk[tt] = z[act.size + k.n_eq:]
    grads = np.zeros((k.T, k.nc))
    if unk_gradients is not None:
        grads[tt] = np.asarray(unk_gradients, float)[tt]
    return MultiplierAssignment(lam, nu, lam_unk, grads)
