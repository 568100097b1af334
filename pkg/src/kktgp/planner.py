"""Chance-constrained kinodynamic RRT on a learned constraint.

A node is added only if the probability that every constraint state on
its root path is safe, under the joint GP posterior, is at least
``1 - delta``.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .core import SystemModel, TaskSpec
from .gp import DerivGPModel, kernel
from .mvn import MvnCdfEngine

FORMAT_VERSION = 1
K_MAX_PATH = 120


class PlanError(RuntimeError):
    pass


@dataclass(frozen=True)
class PlanConfig:
    delta: float = 0.1
    eps_goal: float = 0.3
    goal_bias: float = 0.1
    max_iters: int = 5000
    shoot_samples: int = 10
    rng_seed: int = 0
    qmc_samples: int = 5000
    qmc_refine_samples: int = 20000
    sample_lo: tuple | None = None
    sample_hi: tuple | None = None
    metric_weights: tuple | None = None

    def __post_init__(self):
        if not 0 < self.delta <= 1:
            raise ValueError("delta must lie in (0, 1]")
        if self.eps_goal <= 0:
            raise ValueError("eps_goal must be positive")
        if not 0 <= self.goal_bias <= 1:
            raise ValueError("goal_bias must lie in [0, 1]")


@dataclass
class TreeNode:
    state: np.ndarray
    control_from_parent: np.ndarray | None
    parent: "TreeNode | None"
    kappa_path: np.ndarray          # (depth + 1, nc)
    whitened: np.ndarray            # L^-1 k_X(kappa) per path state, (n_obs, depth + 1)
    mean: np.ndarray                # posterior mean per path state
    cov_row: np.ndarray             # covariance of this state with the path so far, (depth + 1,)
    safety: float = 1.0
    std_err: float = 0.0
    depth: int = 0

    def path(self):
        nodes = []
        n = self
        while n is not None:
            nodes.append(n)
            n = n.parent
        return nodes[::-1]


@dataclass
class PlanResult:
    status: str                      # "success" | "timeout"
    states: np.ndarray
    controls: np.ndarray
    joint_safety: float
    cdf_std_err: float
    thinned: bool
    iters: int
    wallclock_ms: float
    tree_size: int = 0
    info: dict = field(default_factory=dict)

    @property
    def success(self) -> bool:
        return self.status == "success"

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "status": self.status,
                "states": self.states.tolist(), "controls": self.controls.tolist(),
                "joint_safety": self.joint_safety, "cdf_std_err": self.cdf_std_err,
                "thinned": self.thinned, "iters": self.iters,
                "wallclock_ms": self.wallclock_ms, "tree_size": self.tree_size, **self.info}

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)


# --------------------------------------------------------------------------
# safety


def thin_indices(K: int, k_max: int = K_MAX_PATH) -> np.ndarray:
    """Every ``ceil(K / k_max)``-th index plus the newest one."""
    if K <= k_max:
        return np.arange(K)
    step = math.ceil(K / k_max)
    idx = np.arange(0, K, step)
    if idx[-1] != K - 1:
        idx = np.append(idx, K - 1)
    return idx


def _cov_row(model: DerivGPModel, kappa_path, V):
    """Predictive covariance of the last path state with every state up to it.

    ``V`` holds the whitened cross-covariance columns of the path. Each
    entry is computed once, when its later state is appended, so a path and
    all of its extensions share bit-identical leading covariance blocks.
    """
    z = kappa_path[-1:]
    row = kernel(model.hyper, kappa_path, z)[:, 0] - V.T @ V[:, -1]
    row[-1] += model.hyper.noise_val
    return row


def _assemble_cov(rows) -> np.ndarray:
    K = len(rows)
    C = np.zeros((K, K))
    for i, r in enumerate(rows):
        C[i, :i + 1] = r
        C[:i, i] = r[:-1]
    return C


def path_posterior(model: DerivGPModel, kappa_path):
    """Joint predictive mean and covariance along a path, built state by state."""
    Z = np.atleast_2d(np.asarray(kappa_path, float))
    cols, rows, mean = [], [], []
    for k in range(Z.shape[0]):
        cols.append(model.whitened_cross(Z[k:k + 1]))
        rows.append(_cov_row(model, Z[:k + 1], np.hstack(cols)))
        mean.append(model.mean(Z[k:k + 1])[0])
    return np.array(mean), _assemble_cov(rows)


def joint_safety(model: DerivGPModel, kappa_path, engine: MvnCdfEngine | None = None):
    """``P(g(kappa_t) <= 0 for all t)`` under the joint posterior; returns an ``MvnResult``."""
    kappa_path = np.atleast_2d(np.asarray(kappa_path, float))
    if kappa_path.shape[0] == 0:
        raise ValueError("empty path")
    engine = MvnCdfEngine() if engine is None else engine
    mean, cov = path_posterior(model, kappa_path)
    return engine.cdf(mean, cov)


# --------------------------------------------------------------------------
# steering


def _weights(config: PlanConfig, n: int):
    return np.ones(n) if config.metric_weights is None else np.asarray(config.metric_weights, float)


def weighted_distance(a, b, w) -> np.ndarray:
    d = np.asarray(a, float) - np.asarray(b, float)
    return np.sqrt(np.sum(w * d * d, axis=-1))


def sample_controls(n: int, dim: int, u_max: float, rng) -> np.ndarray:
    """Uniform samples from the ball ``||u|| <= u_max``."""
    g = rng.standard_normal((n, dim))
    g /= np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    r = u_max * rng.random(n) ** (1.0 / dim)
    return g * r[:, None]


def shoot_to_desired(system: SystemModel, x_near, x_desired, n_samples: int, rng,
                     u_max: float, weights=None, t: int = 0):
    """Best of ``n_samples`` random admissible one-step rollouts toward ``x_desired``.

    For a single integrator, a reachable ``x_desired`` (within ``u_max``) is
    hit exactly when it is closer than any sample.
    """
    x_near = np.asarray(x_near, float)
    x_desired = np.asarray(x_desired, float)
    w = np.ones(system.state_dim) if weights is None else np.asarray(weights, float)
    U = sample_controls(n_samples, system.control_dim, u_max, rng)
    X = np.array([system.step(x_near, u, t) for u in U])
    i = int(np.argmin(weighted_distance(X, x_desired, w)))
    return X[i], U[i]


# --------------------------------------------------------------------------
# planner


class _Acceptance:
    """Joint-safety test with a refined re-evaluation near the threshold."""

    def __init__(self, model, config):
        self.model = model
        self.level = 1.0 - config.delta
        self.engine = MvnCdfEngine(config.qmc_samples, config.rng_seed)
        self.fine = MvnCdfEngine(config.qmc_refine_samples, config.rng_seed)
        self.thinned = False

    def __call__(self, node):
        if self.level <= 0:
            return True, 1.0, 0.0
        idx = thin_indices(node.kappa_path.shape[0])
        if idx.size < node.kappa_path.shape[0]:
            self.thinned = True
        cov = _assemble_cov([n.cov_row for n in node.path()])[np.ix_(idx, idx)]
        mean = node.mean[idx]
        r = self.engine.cdf(mean, cov)
        if abs(r.prob - self.level) <= 2 * r.std_err:
            r = self.fine.cdf(mean, cov)
        return r.prob >= self.level, r.prob, r.std_err


def _make_node(model, task, state, control, parent):
    kappa = np.asarray(task.constraint_map(state), float)[None]
    w = model.whitened_cross(kappa)
    mean = model.mean(kappa)
    if parent is None:
        return TreeNode(np.asarray(state, float), None, None, kappa, w, mean,
                        _cov_row(model, kappa, w))
    path = np.vstack([parent.kappa_path, kappa])
    V = np.hstack([parent.whitened, w])
    return TreeNode(np.asarray(state, float), np.asarray(control, float), parent, path, V,
                    np.concatenate([parent.mean, mean]), _cov_row(model, path, V),
                    depth=parent.depth + 1)


def _result(node, nu, status, it, t0, thinned, tree_size, info=None):
    nodes = node.path()
    states = np.array([n.state for n in nodes])
    controls = np.array([n.control_from_parent for n in nodes[1:]])
    if controls.size == 0:
        controls = np.zeros((0, nu))
    return PlanResult(status, states, controls, float(node.safety), float(node.std_err), thinned,
                      it, 1e3 * (time.perf_counter() - t0), tree_size, info or {})


def plan(system: SystemModel, task: TaskSpec, model: DerivGPModel, config: PlanConfig) -> PlanResult:
    """Grow a tree from ``task.start`` until a node within ``eps_goal`` of ``task.goal``."""
    t0 = time.perf_counter()
    if task.start is None or task.goal is None:
        raise ValueError("task needs both start and goal")
    if task.control_bound is None:
        raise ValueError("task needs a control bound")
    rng = np.random.default_rng(config.rng_seed)
    w = _weights(config, system.state_dim)
    accept = _Acceptance(model, config)
    goal = np.asarray(task.goal, float)

    root = _make_node(model, task, task.start, None, None)
    ok, p, se = accept(root)
    if not ok:
        raise PlanError(f"start state is not safe enough: P = {p:.4f} < {1 - config.delta:.4f}")
    root.safety, root.std_err = p, se
    if weighted_distance(root.state, goal, w) <= config.eps_goal:
        return _result(root, system.control_dim, "success", 0, t0, False, 1)

    lo = np.asarray(config.sample_lo if config.sample_lo is not None else
                    np.minimum(task.start, goal) - 1.0, float)
    hi = np.asarray(config.sample_hi if config.sample_hi is not None else
                    np.maximum(task.start, goal) + 1.0, float)
    nodes = [root]
    states = [root.state]
    n_rejected = 0
    for it in range(1, config.max_iters + 1):
        x_des = goal if rng.random() < config.goal_bias else rng.uniform(lo, hi)
        near = nodes[int(np.argmin(weighted_distance(np.array(states), x_des, w)))]
        x_q, u_q = shoot_to_desired(system, near.state, x_des, config.shoot_samples, rng,
                                    task.control_bound, w, near.depth)
        cand = _make_node(model, task, x_q, u_q, near)
        ok, p, se = accept(cand)
        if not ok:
            n_rejected += 1
            continue
        cand.safety, cand.std_err = p, se
        nodes.append(cand)
        states.append(cand.state)
        if weighted_distance(x_q, goal, w) <= config.eps_goal:
            return _result(cand, system.control_dim, "success", it, t0, accept.thinned, len(nodes),
                           {"rejected": n_rejected})
    # timeout: report the node closest to the goal (ties broken by safety)
    d = weighted_distance(np.array(states), goal, w)
    best = min(range(len(nodes)), key=lambda i: (round(float(d[i]), 9), -nodes[i].safety))
    return _result(nodes[best], system.control_dim, "timeout", config.max_iters, t0, accept.thinned, len(nodes),
                   {"rejected": n_rejected, "goal_distance": float(d[best])})
