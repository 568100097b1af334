"""Locally-optimal demonstrations with KKT certificates.

Two routes:

* constructive: exact discrete optima for the point robot, either shortest
  paths wrapping a disc (straight tangent segments plus a boundary arc) or
  cup-wiping paths (radial approach at full speed, then tracking the wall);
* numeric: direct transcription with an increasing penalty on the true
  constraint, followed by a Newton polish of the active-set KKT system.

Every demo is certified with :func:`kktgp.core.kkt_certificate_check`
before it is returned.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .core import (CertificateReport, Demonstration, MultiplierAssignment, fit_multipliers,
                   kkt_certificate_check)
from .scenarios import Annulus, Discs, Scenario

log = logging.getLogger(__name__)

CERT_TOL = 1e-6
TRUTH_TOL = 1e-9


class SynthesisError(ValueError):
    pass


@dataclass
class CertifiedDemo:
    demo: Demonstration
    multipliers: MultiplierAssignment
    report: CertificateReport


def _unit(theta):
    return np.array([np.cos(theta), np.sin(theta)])


def _make_demo(scenario: Scenario, states) -> Demonstration:
    states = np.asarray(states, float)
    task = scenario.task(states[0], states[-1])
    return Demonstration(states, np.diff(states, axis=0), task)


def _true_tight(scenario, states, tol=TRUTH_TOL):
    return np.abs(scenario.value(states)) <= tol


def _certify(scenario: Scenario, demo: Demonstration, mult=None) -> CertifiedDemo | None:
    if np.max(scenario.value(demo.states)) > CERT_TOL:
        return None
    if mult is None:
        tight = _true_tight(scenario, demo.states, 1e-8)
        mult = fit_multipliers(demo, scenario.gradient(demo.states), tight)
    rep = kkt_certificate_check(demo, mult, CERT_TOL)
    if not rep.passed:
        log.info("demo rejected: %s", "; ".join(rep.violations))
        return None
    return CertifiedDemo(demo, mult, rep)


# --------------------------------------------------------------------------
# shortest paths around a disc


def geodesic_states(center, radius, theta_in, dtheta, n_arc, direction=1, k_in=5, k_out=5,
                    entry="tangent"):
    """Discrete shortest path wrapping a circle for ``x+ = x + u``, cost ``sum ||u||^2``.

    The arc has ``n_arc`` equal angular steps starting at ``theta_in``. With
    ``entry="tangent"`` the straight legs are tangent to the circle (step
    ``r sin(dtheta)``), so the junction points carry a contact force. With
    ``entry="secant"`` the legs extend the first/last chord and the junction
    points touch the boundary with zero force.
    """
    c = np.asarray(center, float)
    sgn = 1.0 if direction >= 0 else -1.0
    thetas = theta_in + sgn * dtheta * np.arange(n_arc + 1)
    arc = c + radius * np.column_stack([np.cos(thetas), np.sin(thetas)])
    if entry == "tangent":
        tang = lambda th: sgn * np.array([-np.sin(th), np.cos(th)])  # noqa: E731
        d_in = radius * np.sin(dtheta) * tang(thetas[0])
        d_out = radius * np.sin(dtheta) * tang(thetas[-1])
    elif entry == "secant":
        d_in = arc[1] - arc[0]
        d_out = arc[-1] - arc[-2]
    else:
        raise ValueError(f"entry must be 'tangent' or 'secant', not {entry!r}")
    before = arc[0] - d_in * np.arange(k_in, 0, -1)[:, None]
    after = arc[-1] + d_out * np.arange(1, k_out + 1)[:, None]
    return np.vstack([before, arc, after])


def geodesic_multipliers(demo: Demonstration, gradients, tight) -> MultiplierAssignment:
    """Closed-form multipliers for ``x+ = x + u`` with cost ``sum ||u||^2``.

    Dynamics multipliers are ``-2 u_t``; start/goal absorb the end blocks and
    the contact force at ``x_t`` equals ``2 (u_t - u_{t-1})``.
    """
    k = demo.kkt
    U = demo.controls
    T, nx = k.T, k.nx
    nu_dyn = -2.0 * U
    nu = np.concatenate([nu_dyn.ravel(), 2.0 * U[0], -2.0 * U[-1]])
    lam_unk = np.zeros(T)
    grads = np.zeros((T, k.nc))
    for t in np.flatnonzero(tight):
        if 0 < t < T - 1:
            g = np.asarray(gradients[t], float)
            force = 2.0 * (U[t] - U[t - 1])
            lam_unk[t] = force @ g / (g @ g)
            grads[t] = g
    return MultiplierAssignment(np.zeros(k.n_ineq), nu, lam_unk, grads)


def _circles(scenario: Scenario):
    tr = scenario.truth
    if isinstance(tr, Discs):
        return list(zip(tr.centers, tr.radii))
    if isinstance(tr, Annulus):
        return [(tr.center, tr.r_out)]
    raise SynthesisError(f"geodesic synthesis needs disc/annulus obstacles, got {tr.kind}")


def geodesic_demo(scenario: Scenario, circle: int, theta_in, dtheta, n_arc, direction=1,
                  k_in=5, k_out=5, entry="tangent", analytic=True) -> CertifiedDemo:
    center, radius = _circles(scenario)[circle]
    X = geodesic_states(center, radius, theta_in, dtheta, n_arc, direction, k_in, k_out, entry)
    if scenario.value(X[0]) > 0 or scenario.value(X[-1]) > 0:
        raise SynthesisError("demonstration endpoints lie inside the unsafe set")
    if np.max(scenario.value(X)) > TRUTH_TOL:
        raise SynthesisError("path crosses another obstacle")
    demo = _make_demo(scenario, X)
    if np.max(np.linalg.norm(demo.controls, axis=1)) >= scenario.control_bound:
        raise SynthesisError("step length exceeds the control bound")
    tight = _true_tight(scenario, X)
    mult = None
    if analytic:
        mult = geodesic_multipliers(demo, scenario.gradient(X), tight)
    cd = _certify(scenario, demo, mult)
    if cd is None:
        raise SynthesisError("construction failed its KKT certificate")
    return cd


def straight_demo(scenario: Scenario, start, goal, n_steps: int) -> CertifiedDemo:
    """Unobstructed shortest path: ``n_steps`` equal steps, no contact force."""
    X = np.linspace(np.asarray(start, float), np.asarray(goal, float), n_steps + 1)
    if np.max(scenario.value(X)) > -TRUTH_TOL:
        raise SynthesisError("straight segment touches the unsafe set")
    demo = _make_demo(scenario, X)
    if np.max(np.linalg.norm(demo.controls, axis=1)) >= scenario.control_bound:
        raise SynthesisError("step length exceeds the control bound")
    mult = geodesic_multipliers(demo, None, np.zeros(X.shape[0], bool))
    cd = _certify(scenario, demo, mult)
    if cd is None:
        raise SynthesisError("straight segment failed its KKT certificate")
    return cd


# --------------------------------------------------------------------------
# cup wiping


def _radial_leg(truth, theta, r_from, r_to, u_max):
    """Radii from ``r_from`` to just before ``r_to`` at full speed; the last step is shorter."""
    gap = abs(r_to - r_from)
    n_full = int(np.ceil(gap / u_max)) - 1
    if gap - n_full * u_max < 0.2 * u_max:  # keep the unsaturated step well inside the bound
        n_full -= 1
    sgn = np.sign(r_to - r_from)
    radii = r_from + sgn * u_max * np.arange(n_full + 1)
    return truth.center + radii[:, None] * _unit(theta)


def cup_states(truth: Annulus, side, theta0, span, dtheta, u_max, approach=0.8, depart=0.0,
               direction=1):
    """Radial approach at full speed to one cup wall, tracking that wall, optional radial exit.

    The exit is the time reverse of the approach, so it is optimal for the
    same reason.
    """
    if side == "outer":
        r_wall, r_out = truth.r_out, lambda a: truth.r_out + a
    elif side == "inner":
        r_wall, r_out = truth.r_in, lambda a: max(truth.r_in - a, 0.05)
    else:
        raise ValueError("side must be 'outer' or 'inner'")
    n_arc = int(np.ceil(span / dtheta))
    thetas = theta0 + (1 if direction >= 0 else -1) * dtheta * np.arange(n_arc + 1)
    wall = truth.center + r_wall * np.column_stack([np.cos(thetas), np.sin(thetas)])
    parts = [_radial_leg(truth, thetas[0], r_out(approach), r_wall, u_max), wall]
    if depart > 0:
        parts.append(_radial_leg(truth, thetas[-1], r_out(depart), r_wall, u_max)[::-1])
    return np.vstack(parts)


def cup_demos(scenario: Scenario, n_demos: int = 4, overlap: float = 0.25,
              approach_outer: float = 1.8, approach_inner: float = 0.8):
    """Alternate outer/inner wiping demos splitting each wall evenly.

    Outer demos enter and leave along the diagonals and meet end to end, so
    that between them they start from and return to every corner of the
    workspace. Inner demos overlap by ``overlap`` radians at each end.
    """
    tr = scenario.truth
    if not isinstance(tr, Annulus) or scenario.cost != "cup":
        raise SynthesisError("cup demos need an annulus truth and the cup cost")
    u = scenario.control_bound
    n_out = (n_demos + 1) // 2
    n_in = n_demos // 2
    out = []
    for side, n_side in (("outer", n_out), ("inner", n_in)):
        r_wall = tr.r_out if side == "outer" else tr.r_in
        dtheta = 0.6 * u / r_wall  # chord well below the control bound
        for i in range(n_side):
            if side == "outer":
                theta0 = 2 * np.pi * i / n_side - np.pi / 4
                X = cup_states(tr, side, theta0, 2 * np.pi / n_side, dtheta, u,
                               approach=approach_outer, depart=approach_outer)
            else:
                theta0 = 2 * np.pi * i / n_side + 0.05
                X = cup_states(tr, side, theta0, 2 * np.pi / n_side + 2 * overlap, dtheta, u,
                               approach=approach_inner)
            cd = _certify(scenario, _make_demo(scenario, X))
            if cd is None:
                raise SynthesisError(f"cup demo ({side}, {i}) failed its KKT certificate")
            out.append(cd)
    # interleave so the first k demos cover both walls
    order = []
    outer, inner = out[:n_out], out[n_out:]
    for i in range(max(n_out, n_in)):
        order += outer[i:i + 1] + inner[i:i + 1]
    return order


def synth_geodesic_demos(scenario: Scenario, n_demos: int, seed: int = 0, entry="tangent",
                         max_horizon: int = 60, max_tries: int = 1000) -> list:
    """Analytic locally-optimal demos with certificates.

    Path-cost scenarios get random disc-wrapping shortest paths; the cup
    cost gets the deterministic wiping construction.
    """
    if scenario.cost == "cup":
        return cup_demos(scenario, n_demos)
    rng = np.random.default_rng(seed)
    circles = _circles(scenario)
    out = []
    tries = 0
    while len(out) < n_demos:
        tries += 1
        if tries > max_tries:
            raise SynthesisError(f"only {len(out)} of {n_demos} demos after {max_tries} tries")
        ci = len(out) % len(circles)
        r = circles[ci][1]
        step = rng.uniform(0.5, 0.8) * scenario.control_bound
        dtheta = 2 * np.arcsin(min(step / (2 * r), 0.99))
        span = rng.uniform(0.25, 0.6) * np.pi
        n_arc = max(3, int(span / dtheta))
        k_in, k_out = rng.integers(3, 9, size=2)
        if k_in + k_out + n_arc + 1 > max_horizon:
            continue
        try:
            cd = geodesic_demo(scenario, ci, rng.uniform(0, 2 * np.pi), dtheta, n_arc,
                               int(rng.choice([-1, 1])), int(k_in), int(k_out), entry)
        except SynthesisError:
            continue
        out.append(cd)
    return out


# --------------------------------------------------------------------------
# numeric (direct transcription + penalty + Newton polish)


def _interior_grad(task, X):
    gx, gu = task.cost_gradient(X, np.diff(X, axis=0))
    g = gx.copy()
    g[1:] += gu
    g[:-1] -= gu
    return g[1:-1]


def penalty_solve(scenario: Scenario, start, goal, T: int,
                  weights=(1.0, 10.0, 1e2, 1e3, 1e4, 1e5), margin: float = 0.0, init=None,
                  max_step: float | None = None):
    """Minimize cost + w * sum relu(g(x_t) + margin)^2 for increasing ``w``.

    ``max_step`` adds the same penalty on ``||u_t||^2 - max_step^2`` so the
    path cannot hop across thin parts of the unsafe set.
    """
    start, goal = np.asarray(start, float), np.asarray(goal, float)
    task = scenario.task(start, goal)
    X = np.linspace(start, goal, T) if init is None else np.array(init, float)

    def unpack(z):
        Y = X.copy()
        Y[1:-1] = z.reshape(T - 2, 2)
        return Y

    for w in weights:
        def fun(z):
            Y = unpack(z)
            viol = np.maximum(scenario.value(Y[1:-1]) + margin, 0.0)
            f = task.cost(Y, np.diff(Y, axis=0)) + w * np.sum(viol ** 2)
            g = _interior_grad(task, Y)
            if w:
                g = g + 2 * w * viol[:, None] * scenario.gradient(Y[1:-1])
            if w and max_step is not None:
                U = np.diff(Y, axis=0)
                sv = np.maximum(np.sum(U * U, axis=1) - max_step ** 2, 0.0)
                f += w * np.sum(sv ** 2)
                gu = 4 * w * sv[:, None] * U
                g = g + gu[:-1] - gu[1:]
            return f, g.ravel()

        res = minimize(fun, X[1:-1].ravel(), jac=True, method="L-BFGS-B",
                       options={"maxiter": 5000, "gtol": 1e-12, "ftol": 1e-15})
        X = unpack(res.x)
    return X


def _kkt_newton(scenario, task, X, active, active_u, u_max, iters=30):
    """Newton on stationarity plus the active constraints held as equalities."""
    T = X.shape[0]
    act = np.asarray(sorted(active), int)
    actu = np.asarray(sorted(active_u), int)
    n_q = 2 * (T - 2)
    n_l = act.size

    def unpack(z):
        Y = X.copy()
        Y[1:-1] = z[:n_q].reshape(T - 2, 2)
        return Y

    def F(z):
        Y = unpack(z)
        lam, mu = z[n_q:n_q + n_l], z[n_q + n_l:]
        g = np.zeros_like(Y)
        g[1:-1] = _interior_grad(task, Y)
        if n_l:
            g[act] += lam[:, None] * scenario.gradient(Y[act])
        U = np.diff(Y, axis=0)
        if actu.size:
            g[actu + 1] += 2 * mu[:, None] * U[actu]
            g[actu] -= 2 * mu[:, None] * U[actu]
        parts = [g[1:-1].ravel()]
        if n_l:
            parts.append(scenario.value(Y[act]))
        if actu.size:
            parts.append(np.sum(U[actu] ** 2, axis=1) - u_max ** 2)
        return np.concatenate(parts)

    # least-squares multiplier start
    z = np.concatenate([X[1:-1].ravel(), np.zeros(n_l + actu.size)])
    if n_l + actu.size:
        h = 1e-7
        f0 = F(z)[:n_q]
        A = np.empty((n_q, n_l + actu.size))
        for i in range(A.shape[1]):
            e = np.zeros(z.size)
            e[n_q + i] = 1.0
            A[:, i] = F(z + e)[:n_q] - f0
        z[n_q:] = np.linalg.lstsq(A, -f0, rcond=None)[0]
    for _ in range(iters):
        f = F(z)
        if np.max(np.abs(f)) < 1e-12:
            break
        h = 1e-7
        J = np.empty((f.size, z.size))
        for i in range(z.size):
            e = np.zeros(z.size)
            e[i] = h
            J[:, i] = (F(z + e) - F(z - e)) / (2 * h)
        z = z + np.linalg.lstsq(J, -f, rcond=None)[0]
    return (unpack(z), z[n_q:n_q + n_l], z[n_q + n_l:],
            float(np.max(np.abs(F(z)), initial=0.0)))


def polish_demo(scenario: Scenario, X, active_tol: float = 1e-3, rounds: int = 8):
    """Newton-solve the active-set KKT system; returns states or ``None``.

    Both the true constraint and the control norm bound may be active.
    """
    X = np.asarray(X, float)
    task = scenario.task(X[0], X[-1])
    u_max = scenario.control_bound
    interior = np.arange(1, X.shape[0] - 1)
    active = set(interior[scenario.value(X[1:-1]) > -active_tol].tolist())
    steps = np.linalg.norm(np.diff(X, axis=0), axis=1)
    active_u = set(np.flatnonzero(steps > u_max - active_tol).tolist())
    for _ in range(rounds):
        Y, lam, mu, res = _kkt_newton(scenario, task, X, active, active_u, u_max)
        if res > 1e-9:
            return None
        neg = {t for t, l in zip(sorted(active), lam) if l < 0}
        neg_u = {t for t, m in zip(sorted(active_u), mu) if m < 0}
        viol = {int(t) for t in interior if scenario.value(Y[t]) > TRUTH_TOL} - active
        steps = np.linalg.norm(np.diff(Y, axis=0), axis=1)
        viol_u = set(np.flatnonzero(steps > u_max + TRUTH_TOL).tolist()) - active_u
        if not (neg or neg_u or viol or viol_u):
            return Y
        active = (active - neg) | viol
        active_u = (active_u - neg_u) | viol_u
        X = Y
    return None


def synth_numeric_demo(scenario: Scenario, start, goal, T: int | None = None):
    start, goal = np.asarray(start, float), np.asarray(goal, float)
    if scenario.value(start) > 0 or scenario.value(goal) > 0:
        raise SynthesisError("demonstration endpoints lie inside the unsafe set")
    if T is None:
        dist = np.linalg.norm(goal - start)
        T = int(min(60, max(10, np.ceil(2.0 * dist / scenario.control_bound) + 1)))
    # straight-line start first, then detours to either side
    d = goal - start
    n = np.array([-d[1], d[0]]) / max(np.linalg.norm(d), 1e-12)
    s = np.linspace(0.0, 1.0, T)
    line = start + s[:, None] * d
    for bump in (0.0, 1.0, -1.0):
        init = line + bump * np.sin(np.pi * s)[:, None] * n
        X = penalty_solve(scenario, start, goal, T, init=init, max_step=scenario.control_bound)
        X = polish_demo(scenario, X)
        if X is not None:
            cd = _certify(scenario, _make_demo(scenario, X))
            if cd is not None:
                return cd
    return None


def synth_numeric_demos(scenario: Scenario, n_demos: int, seed: int = 0, margin: float = 0.05):
    """Random start/goal pairs solved numerically; failures are logged and dropped."""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(scenario.workspace[0], float), np.asarray(scenario.workspace[1], float)
    out = []
    for i in range(n_demos):
        while True:
            a, b = rng.uniform(lo, hi), rng.uniform(lo, hi)
            if scenario.value(a) < -margin and scenario.value(b) < -margin:
                break
        try:
            cd = synth_numeric_demo(scenario, a, b)
        except (np.linalg.LinAlgError, SynthesisError) as exc:
            log.info("numeric demo %d failed: %s", i, exc)
            cd = None
        if cd is None:
            log.info("numeric demo %d discarded (no certificate)", i)
            continue
        out.append(cd)
    return out
