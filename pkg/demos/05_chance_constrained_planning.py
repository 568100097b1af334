"""
Planning around a learned cup
=============================

A sampling-based planner grows a tree from one side of the cup to the other,
keeping only nodes whose whole path is safe with probability at least 0.9
under the learned constraint.
"""
import numpy as np

from kktgp import gp, mining, planner, synth
from kktgp.scenarios import cup_scenario

cup = cup_scenario()
ds = mining.build_dataset([c.demo for c in synth.cup_demos(cup, 4)])
model = gp.fit(ds, epochs=500, lr=0.05).model
task = cup.task(cup.plan_start, cup.plan_goal)

for seed in range(5):
    cfg = planner.PlanConfig(delta=0.1, rng_seed=seed, sample_lo=(-3, -3), sample_hi=(3, 3))
    res = planner.plan(task.system, task, model, cfg)
    r = np.linalg.norm(res.states, axis=1)
    print(f"seed {seed}: {res.status}, {len(res.states)} states, joint safety "
          f"{res.joint_safety:.3f}, radius range [{r.min():.2f}, {r.max():.2f}], "
          f"tree {res.tree_size}, {res.wallclock_ms:.0f} ms")
