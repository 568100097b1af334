"""
The whole pipeline in one call
==============================

Same as ``kktgp repro-cup --seed 7 --out-dir cup_run``.
"""
import sys

from kktgp import pipeline

out = pipeline.repro_cup(sys.argv[1] if len(sys.argv) > 1 else "cup_run", seed=7)
print(out["metrics"].to_csv())
print("plan:", out["plan"].status, f"joint safety {out['plan'].joint_safety:.3f}")
for k, v in out["paths"].items():
    print(f"{k:9s} {v}")
