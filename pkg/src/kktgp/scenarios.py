"""Desk-scale scenarios: ground-truth constraints, systems and tasks.

Ground truths are signed functions over constraint space, positive inside
the unsafe set. They are used by the demonstration synthesizers and by the
benchmark metrics, never by the learner.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import core

FORMAT_VERSION = 1


# --------------------------------------------------------------------------
# ground truths


class Annulus:
    """Hollow cup: unsafe band ``r_in < ||kappa - center|| < r_out``."""

    kind = "annulus"

    def __init__(self, center=(0.0, 0.0), r_in=1.0, r_out=2.0):
        self.center = np.asarray(center, dtype=float)
        self.r_in, self.r_out = float(r_in), float(r_out)

    @property
    def r_mid(self):
        return 0.5 * (self.r_in + self.r_out)

    def value(self, kappa):
        rho = np.linalg.norm(np.asarray(kappa, float) - self.center, axis=-1)
        return 0.5 * (self.r_out - self.r_in) - np.abs(rho - self.r_mid)

    def gradient(self, kappa):
        v = np.asarray(kappa, float) - self.center
        rho = np.linalg.norm(v, axis=-1, keepdims=True)
        return -np.sign(rho - self.r_mid) * v / np.where(rho > 0, rho, 1.0)

    def to_dict(self):
        return {"type": self.kind, "center": self.center.tolist(), "r_in": self.r_in,
                "r_out": self.r_out}


class Discs:
    """Union of discs, ``g = max_i (r_i - ||kappa - c_i||)``."""

    kind = "discs"

    def __init__(self, centers, radii):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.radii = np.atleast_1d(np.asarray(radii, dtype=float))

    def _each(self, kappa):
        k = np.asarray(kappa, float)
        return self.radii - np.linalg.norm(k[..., None, :] - self.centers, axis=-1)

    def value(self, kappa):
        return self._each(kappa).max(axis=-1)

    def nearest(self, kappa):
        return self._each(kappa).argmax(axis=-1)

    def gradient(self, kappa):
        k = np.asarray(kappa, float)
        i = self.nearest(k)
        v = k - self.centers[i]
        rho = np.linalg.norm(v, axis=-1, keepdims=True)
        return -v / np.where(rho > 0, rho, 1.0)

    def to_dict(self):
        return {"type": self.kind, "centers": self.centers.tolist(), "radii": self.radii.tolist()}


def _segment_distance(a, b, c):
    """Distance from ``c`` to segment ``ab`` plus closest-point parameter (batched)."""
    ab = b - a
    L2 = np.sum(ab * ab, axis=-1)
    s = np.clip(np.sum((c - a) * ab, axis=-1) / np.where(L2 > 0, L2, 1.0), 0.0, 1.0)
    p = a + s[..., None] * ab
    return np.linalg.norm(c - p, axis=-1), s, p


class ArmCSpaceObstacle:
    """C-space image of a workspace disc for a 2-link planar arm based at the origin.

    ``g(q) = (radius + clearance) - min_link dist(link(q), center)``.
    """

    kind = "arm_disc"

    def __init__(self, links=(1.0, 1.0), center=(1.2, 0.6), radius=0.3, clearance=0.05):
        self.links = np.asarray(links, dtype=float)
        self.center = np.asarray(center, dtype=float)
        self.radius, self.clearance = float(radius), float(clearance)

    def joints(self, q):
        q = np.asarray(q, float)
        l1, l2 = self.links
        a1 = q[..., 0]
        a12 = q[..., 0] + q[..., 1]
        elbow = np.stack([l1 * np.cos(a1), l1 * np.sin(a1)], axis=-1)
        tip = elbow + np.stack([l2 * np.cos(a12), l2 * np.sin(a12)], axis=-1)
        return np.zeros_like(elbow), elbow, tip

    def value(self, q):
        base, elbow, tip = self.joints(q)
        d1 = _segment_distance(base, elbow, self.center)[0]
        d2 = _segment_distance(elbow, tip, self.center)[0]
        return self.radius + self.clearance - np.minimum(d1, d2)

    def gradient(self, q):
        q = np.asarray(q, float)
        single = q.ndim == 1
        q = np.atleast_2d(q)
        l1, l2 = self.links
        base, elbow, tip = self.joints(q)
        a1, a12 = q[:, 0], q[:, 0] + q[:, 1]
        # d(point)/dq for elbow and tip, shape (N, 2, 2) [xy, q]
        de = np.zeros((q.shape[0], 2, 2))
        de[:, 0, 0], de[:, 1, 0] = -l1 * np.sin(a1), l1 * np.cos(a1)
        dt = de.copy()
        dt[:, 0, 0] += -l2 * np.sin(a12)
        dt[:, 1, 0] += l2 * np.cos(a12)
        dt[:, 0, 1], dt[:, 1, 1] = -l2 * np.sin(a12), l2 * np.cos(a12)
        d1, s1, p1 = _segment_distance(base, elbow, self.center)
        d2, s2, p2 = _segment_distance(elbow, tip, self.center)
        use2 = d2 < d1
        d = np.where(use2, d2, d1)
        s = np.where(use2, s2, s1)
        p = np.where(use2[:, None], p2, p1)
        # closest point derivative (envelope theorem on the segment parameter)
        dpa = np.where(use2[:, None, None], de, 0.0)
        dpb = np.where(use2[:, None, None], dt, de)
        dp = (1 - s)[:, None, None] * dpa + s[:, None, None] * dpb
        unit = (self.center - p) / np.where(d > 0, d, 1.0)[:, None]
        # g = const - ||c - p||  ->  dg/dq = (c - p)/||c - p|| . dp/dq
        grad = np.einsum("ni,nij->nj", unit, dp)
        return grad[0] if single else grad

    def to_dict(self):
        return {"type": self.kind, "links": self.links.tolist(), "center": self.center.tolist(),
                "radius": self.radius, "clearance": self.clearance}


def truth_from_dict(d: dict):
    t = d["type"]
    if t == "annulus":
        return Annulus(d["center"], d["r_in"], d["r_out"])
    if t == "discs":
        return Discs(d["centers"], d["radii"])
    if t == "arm_disc":
        return ArmCSpaceObstacle(d["links"], d["center"], d["radius"], d["clearance"])
    raise ValueError(f"unknown constraint type {t!r}")


# --------------------------------------------------------------------------
# scenario


@dataclass
class Scenario:
    """A system, a ground-truth unsafe set, a cost family and evaluation settings.

    ``cost`` is ``"path"`` (sum of squared steps) or ``"cup"`` (squared
    distance to the rim radius of an annulus truth).
    """

    name: str
    system: str
    truth: object
    cost: str
    control_bound: float
    workspace: tuple
    grid_n: int = 200
    plan_start: tuple | None = None
    plan_goal: tuple | None = None
    extra: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return 2

    def system_model(self) -> core.SystemModel:
        return core.single_integrator(2, name="point" if self.system == "point" else "arm")

    def constraint_map(self) -> core.ConstraintMap:
        return core.identity_map(2)

    def cost_functions(self):
        if self.cost == "path":
            return core.control_effort_cost(1.0)
        if self.cost == "cup":
            return core.radial_tracking_cost(self.truth.r_mid, self.truth.center)
        raise ValueError(f"unknown cost {self.cost!r}")

    def task(self, start=None, goal=None, extra_ineq=()) -> core.TaskSpec:
        cost, grad = self.cost_functions()
        ineq = (core.control_norm_bound(self.control_bound),) + tuple(extra_ineq)
        return core.TaskSpec(
            self.system_model(), self.constraint_map(), cost, grad,
            None if start is None else np.asarray(start, float),
            None if goal is None else np.asarray(goal, float),
            ineq, (), self.control_bound, self.name)

    def value(self, kappa):
        return self.truth.value(kappa)

    def gradient(self, kappa):
        return self.truth.gradient(kappa)

    def grid(self, n: int | None = None):
        n = self.grid_n if n is None else n
        lo, hi = np.asarray(self.workspace[0], float), np.asarray(self.workspace[1], float)
        xs = np.linspace(lo[0], hi[0], n)
        ys = np.linspace(lo[1], hi[1], n)
        X, Y = np.meshgrid(xs, ys, indexing="xy")
        return np.column_stack([X.ravel(), Y.ravel()])

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "name": self.name, "system": self.system,
                "constraint": self.truth.to_dict(), "cost": self.cost,
                "control_bound": self.control_bound,
                "workspace": [list(map(float, self.workspace[0])), list(map(float, self.workspace[1]))],
                "grid_n": self.grid_n,
                "plan_start": None if self.plan_start is None else list(self.plan_start),
                "plan_goal": None if self.plan_goal is None else list(self.plan_goal),
                "extra": self.extra}

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(d["name"], d["system"], truth_from_dict(d["constraint"]), d["cost"],
                   float(d["control_bound"]), (tuple(d["workspace"][0]), tuple(d["workspace"][1])),
                   int(d.get("grid_n", 200)),
                   None if d.get("plan_start") is None else tuple(d["plan_start"]),
                   None if d.get("plan_goal") is None else tuple(d["plan_goal"]),
                   dict(d.get("extra", {})))

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path) as f:
            return cls.from_dict(json.load(f))


def cup_scenario() -> Scenario:
    """Hollow cup of radii 1 and 2 at the origin, wiped from inside and outside."""
    return Scenario("cup", "point", Annulus((0.0, 0.0), 1.0, 2.0), "cup", 0.3,
                    ((-3.0, -3.0), (3.0, 3.0)), 200, (2.6, 0.0), (-2.6, 0.0))


def annulus_path_scenario() -> Scenario:
    """Same cup, demonstrated with shortest paths wrapping the outside wall."""
    return Scenario("annulus", "point", Annulus((0.0, 0.0), 1.0, 2.0), "path", 0.5,
                    ((-3.0, -3.0), (3.0, 3.0)), 200, (2.6, 0.0), (-2.6, 0.0))


def discs_scenario() -> Scenario:
    return Scenario("discs", "point",
                    Discs([[-2.0, 0.0], [2.0, 0.5], [0.0, -2.5]], [0.9, 1.1, 0.7]),
                    "path", 0.5, ((-4.5, -4.5), (4.5, 4.5)), 200)


def arm_scenario() -> Scenario:
    return Scenario("arm", "arm", ArmCSpaceObstacle((1.0, 1.0), (1.2, 0.6), 0.3, 0.05),
                    "path", 0.25, ((-np.pi, -np.pi), (np.pi, np.pi)), 200)


PRESETS = {"cup": cup_scenario, "annulus": annulus_path_scenario,
           "discs": discs_scenario, "arm": arm_scenario}


def get_scenario(name: str) -> Scenario:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; choose from {sorted(PRESETS)}") from None
