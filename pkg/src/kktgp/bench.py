"""False-safe / false-unsafe rates of a learned constraint on a grid."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .gp import DerivGPModel
from .scenarios import Scenario

TAUS = (0.0, 1.0, 2.0, 2.33)
BOUNDARY_BAND = 1e-9


@dataclass(frozen=True)
class MetricsRow:
    tau: float
    fs_pct: float
    fu_pct: float


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple
    n_grid: int
    n_excluded: int

    def row(self, tau: float) -> MetricsRow:
        for r in self.rows:
            if np.isclose(r.tau, tau):
                return r
        raise KeyError(tau)

    def to_csv(self) -> str:
        lines = ["tau,fs_pct,fu_pct"]
        lines += [f"{r.tau:g},{r.fs_pct:.6f},{r.fu_pct:.6f}" for r in self.rows]
        return "\n".join(lines) + "\n"


def eval_classifier(is_safe: Callable, scenario: Scenario, taus=TAUS, grid_n=None,
                    band: float = BOUNDARY_BAND) -> MetricsReport:
    """Rates for any ``is_safe(points, tau) -> bool array`` over the scenario grid.

    Both rates are percentages of the whole grid; points within ``band`` of
    the true boundary never count as errors.
    """
    Z = scenario.grid(grid_n)
    n = Z.shape[0]
    gt = scenario.value(Z)
    keep = np.abs(gt) > band
    Z, unsafe = Z[keep], gt[keep] > 0
    rows = []
    for tau in taus:
        safe = np.asarray(is_safe(Z, float(tau)), bool)
        fs = 100.0 * np.count_nonzero(safe & unsafe) / n
        fu = 100.0 * np.count_nonzero(~safe & ~unsafe) / n
        rows.append(MetricsRow(float(tau), fs, fu))
    return MetricsReport(tuple(rows), n, int(np.count_nonzero(~keep)))


def eval_metrics(model: DerivGPModel, scenario: Scenario, taus=TAUS, grid_n=None) -> MetricsReport:
    """Classify the grid as safe where ``mu + tau * sigma <= 0`` and compare with the truth."""
    cache = {}

    def is_safe(Z, tau):
        if "mv" not in cache:
            cache["mv"] = model.mean_var(Z)
        mu, var = cache["mv"]
        return mu + tau * np.sqrt(var) <= 0

    return eval_classifier(is_safe, scenario, taus, grid_n)
