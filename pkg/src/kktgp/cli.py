"""Command line entry point: ``kktgp <stage> [options]``.

Every stage reads and writes versioned JSON/CSV files under ``--out-dir``.
On failure a one-line JSON error object is printed to stderr and the exit
code is nonzero (2 for missing or empty inputs, 1 otherwise).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import bench, gp, io, mining, pipeline
from .scenarios import PRESETS, Scenario, get_scenario

EXIT_ERROR = 1
EXIT_INPUT = 2


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out-dir", default=".", help="directory for output files")
    p.add_argument("--config", help="scenario JSON file (overrides --scenario)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="kktgp", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="scenario -> demos.json")
    s.add_argument("--scenario", default="cup", choices=sorted(PRESETS))
    s.add_argument("--n-demos", type=int, default=4)
    s.add_argument("--method", default="auto", choices=["auto", "geodesic", "numeric"])

    m = sub.add_parser("mine", parents=[common], help="demos.json -> evidence.json")
    m.add_argument("--demos", required=True)

    t = sub.add_parser("train", parents=[common], help="evidence.json -> model.json + loss.csv")
    t.add_argument("--evidence", required=True)
    t.add_argument("--epochs", type=int, default=pipeline.CUP_EPOCHS)
    t.add_argument("--lr", type=float, default=pipeline.CUP_LR)
    t.add_argument("--rho", type=float, default=2.0)

    e = sub.add_parser("eval", parents=[common], help="model.json -> metrics.csv")
    e.add_argument("--model", required=True)
    e.add_argument("--taus", type=float, nargs="+", default=list(bench.TAUS))

    pl = sub.add_parser("plan", parents=[common], help="model.json + endpoints -> plan.json")
    pl.add_argument("--model", required=True)
    pl.add_argument("--start", type=float, nargs="+")
    pl.add_argument("--goal", type=float, nargs="+")
    pl.add_argument("--delta", type=float, default=0.1)
    pl.add_argument("--max-iters", type=int, default=5000)

    sub.add_parser("repro-cup", parents=[common], help="end-to-end cup run with a fixed seed")
    return ap


def _scenario(args, fallback=None) -> Scenario:
    if args.config:
        return Scenario.load(args.config)
    if getattr(args, "scenario", None):
        return get_scenario(args.scenario)
    if fallback is not None:
        return fallback
    return get_scenario("cup")


def _load_model(path):
    with open(path) as f:
        d = json.load(f)
    sc = Scenario.from_dict(d["scenario"]) if "scenario" in d else None
    return gp.DerivGPModel.from_dict(d), sc


def _out(args, name):
    os.makedirs(args.out_dir, exist_ok=True)
    return os.path.join(args.out_dir, name)


def run(args) -> dict:
    cmd = args.command
    if cmd == "synth":
        sc = _scenario(args)
        demos = pipeline.synthesize(sc, args.n_demos, args.seed, args.method)
        path = _out(args, "demos.json")
        io.save_demos(path, sc, demos)
        return {"demos": path, "n_demos": len(demos)}
    if cmd == "mine":
        sc, demos = io.load_demos(args.demos)
        evidence, feas = pipeline.mine(demos)
        path = _out(args, "evidence.json")
        io.save_evidence(path, evidence, feas, sc)
        return {"evidence": path, "n_tight": len(evidence),
                "n_robust": sum(e.robust for e in evidence)}
    if cmd == "train":
        dataset, sc = io.load_evidence(args.evidence)
        res = pipeline.train(dataset, args.epochs, args.lr, args.rho)
        mpath, lpath = _out(args, "model.json"), _out(args, "loss.csv")
        pipeline.write_json(mpath, pipeline.model_to_dict(res.model, sc))
        pipeline.write_loss_csv(lpath, res.trace)
        return {"model": mpath, "loss": lpath, "final_loss": res.trace[-1] if res.trace else None}
    if cmd == "eval":
        model, sc = _load_model(args.model)
        sc = _scenario(args, sc)
        report = bench.eval_metrics(model, sc, args.taus)
        path = _out(args, "metrics.csv")
        with open(path, "w") as f:
            f.write(report.to_csv())
        return {"metrics": path}
    if cmd == "plan":
        model, sc = _load_model(args.model)
        sc = _scenario(args, sc)
        result = pipeline.plan(model, sc, args.start, args.goal, args.delta, args.seed,
                               max_iters=args.max_iters)
        path = _out(args, "plan.json")
        result.save(path)
        return {"plan": path, "status": result.status, "joint_safety": result.joint_safety}
    if cmd == "repro-cup":
        sc = Scenario.load(args.config) if args.config else None
        out = pipeline.repro_cup(args.out_dir, args.seed, sc)
        return {**out["paths"], "plan_status": out["plan"].status}
    raise ValueError(f"unknown command {cmd!r}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        summary = run(args)
    except (mining.EmptyDatasetError, FileNotFoundError, io.FormatError) as exc:
        print(json.dumps({"error": str(exc), "type": type(exc).__name__,
                          "stage": args.command}), file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - every stage failure becomes an error object
        print(json.dumps({"error": str(exc), "type": type(exc).__name__,
                          "stage": args.command}), file=sys.stderr)
        return EXIT_ERROR
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
