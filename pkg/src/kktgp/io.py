"""Versioned JSON files for demonstrations and mined evidence."""
from __future__ import annotations

import json
import os

import numpy as np

from .core import Demonstration
from .mining import ConstraintDataset, EmptyDatasetError, GradientEvidence
from .scenarios import Scenario

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def _read_json(path):
    if os.path.getsize(path) == 0:
        return None
    with open(path) as f:
        return json.load(f)


def _check_version(d, what):
    v = d.get("format_version")
    if v != FORMAT_VERSION:
        raise FormatError(f"{what} file has format_version {v!r}, expected {FORMAT_VERSION}")


def demos_to_dict(scenario: Scenario, demos) -> dict:
    return {"format_version": FORMAT_VERSION, "scenario": scenario.to_dict(),
            "demos": [{"task_id": d.task.task_id, "states": d.states.tolist(),
                       "controls": d.controls.tolist()} for d in demos]}


def demos_from_dict(d: dict):
    """``(scenario, demos)``; tasks are rebuilt from the scenario with the demo endpoints."""
    _check_version(d, "demonstration")
    sc = Scenario.from_dict(d["scenario"])
    demos = []
    for rec in d.get("demos", []):
        X = np.asarray(rec["states"], float)
        demos.append(Demonstration(X, np.asarray(rec["controls"], float), sc.task(X[0], X[-1])))
    return sc, demos


def save_demos(path, scenario, demos):
    with open(path, "w") as f:
        json.dump(demos_to_dict(scenario, demos), f)


def load_demos(path):
    """Raises :class:`EmptyDatasetError` for an empty file or an empty demo list."""
    d = _read_json(path)
    if d is None or not d.get("demos"):
        raise EmptyDatasetError("no demonstrations")
    return demos_from_dict(d)


def evidence_to_dict(evidence, feas_states, scenario: Scenario | None = None) -> dict:
    out = {"format_version": FORMAT_VERSION, "evidence": [e.to_dict() for e in evidence],
           "feas_states": np.asarray(feas_states).tolist()}
    if scenario is not None:
        out["scenario"] = scenario.to_dict()
    return out


def save_evidence(path, evidence, feas_states, scenario=None):
    with open(path, "w") as f:
        json.dump(evidence_to_dict(evidence, feas_states, scenario), f)


def load_evidence(path):
    """``(dataset, scenario or None)``."""
    d = _read_json(path)
    if d is None:
        raise EmptyDatasetError("no evidence")
    _check_version(d, "evidence")
    ev = [GradientEvidence.from_dict(e) for e in d["evidence"]]
    sc = Scenario.from_dict(d["scenario"]) if "scenario" in d else None
    return ConstraintDataset.from_evidence(ev, d["feas_states"]), sc
