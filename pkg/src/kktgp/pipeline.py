"""End-to-end stages: synthesize, mine, train, evaluate, plan."""
from __future__ import annotations

import logging
import os

import numpy as np

from . import bench, gp, io, mining, planner, synth
from .scenarios import Annulus, Discs, Scenario

log = logging.getLogger(__name__)

CUP_DEMOS = 4
CUP_EPOCHS = 500
CUP_LR = 0.05


def synthesize(scenario: Scenario, n_demos: int, seed: int = 0, method: str = "auto"):
    """Certified demonstrations; ``auto`` picks the analytic route when it applies."""
    if method == "auto":
        analytic = scenario.system == "point" and isinstance(scenario.truth, (Annulus, Discs))
        method = "geodesic" if analytic else "numeric"
    if method == "geodesic":
        cds = synth.synth_geodesic_demos(scenario, n_demos, seed)
    elif method == "numeric":
        cds = synth.synth_numeric_demos(scenario, n_demos, seed)
    else:
        raise ValueError(f"unknown synthesis method {method!r}")
    return [c.demo for c in cds]


def mine(demos):
    demos = list(demos)
    if not demos:
        raise mining.EmptyDatasetError("no demonstrations")
    evidence = mining.mine(demos)
    feas = np.vstack([d.kappa for d in demos])
    return evidence, feas


def train(dataset, epochs=CUP_EPOCHS, lr=CUP_LR, rho=2.0):
    return gp.fit(dataset, epochs=epochs, lr=lr, rho=rho)


def write_loss_csv(path, trace):
    with open(path, "w") as f:
        f.write("epoch,loss\n")
        for i, v in enumerate(trace):
            f.write(f"{i},{v:.12g}\n")


def model_to_dict(model: gp.DerivGPModel, scenario: Scenario | None):
    d = model.to_dict()
    if scenario is not None:
        d["scenario"] = scenario.to_dict()
    return d


def plan(model, scenario: Scenario, start=None, goal=None, delta=0.1, seed=0, **kw):
    start = scenario.plan_start if start is None else start
    goal = scenario.plan_goal if goal is None else goal
    task = scenario.task(start, goal)
    lo, hi = scenario.workspace
    cfg = planner.PlanConfig(delta=delta, rng_seed=seed, sample_lo=tuple(lo), sample_hi=tuple(hi),
                             **kw)
    return planner.plan(task.system, task, model, cfg)


def repro_cup(out_dir, seed: int = 7, scenario: Scenario | None = None, epochs=CUP_EPOCHS,
              lr=CUP_LR, plan_delta=0.1):
    """Synthesize, mine, train, evaluate and plan on the cup; writes every artifact.

    Returns a dict of the produced paths and the metrics report.
    """
    from .scenarios import cup_scenario

    sc = cup_scenario() if scenario is None else scenario
    os.makedirs(out_dir, exist_ok=True)
    p = {k: os.path.join(out_dir, f) for k, f in (
        ("demos", "demos.json"), ("evidence", "evidence.json"), ("model", "model.json"),
        ("loss", "loss.csv"), ("metrics", "metrics.csv"), ("plan", "plan.json"))}
    demos = synthesize(sc, CUP_DEMOS, seed)
    io.save_demos(p["demos"], sc, demos)
    evidence, feas = mine(demos)
    io.save_evidence(p["evidence"], evidence, feas, sc)
    dataset = mining.ConstraintDataset.from_evidence(evidence, feas)
    res = train(dataset, epochs, lr)
    write_json(p["model"], model_to_dict(res.model, sc))
    write_loss_csv(p["loss"], res.trace)
    report = bench.eval_metrics(res.model, sc)
    with open(p["metrics"], "w") as f:
        f.write(report.to_csv())
    result = plan(res.model, sc, delta=plan_delta, seed=seed)
    result.save(p["plan"])
    return {"paths": p, "metrics": report, "plan": result, "model": res.model}


def write_json(path, obj):
    import json

    with open(path, "w") as f:
        json.dump(obj, f)
