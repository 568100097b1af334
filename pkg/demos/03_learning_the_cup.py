"""
A Gaussian process over the cup wall
====================================

Four wiping demonstrations give zero-value and normal observations on the
walls of a hollow cup. A GP conditioned on both, trained for a few hundred
epochs, recovers the unsafe ring.
"""
import numpy as np

from kktgp import bench, gp, mining, synth
from kktgp.scenarios import cup_scenario

cup = cup_scenario()
demos = [c.demo for c in synth.cup_demos(cup, 4)]
ds = mining.build_dataset(demos)
print(f"{len(demos)} demos, {ds.n_robust} robust boundary points, "
      f"{ds.feas_states.shape[0]} demonstrated states")

res = gp.fit(ds, epochs=500, lr=0.05)
h = res.model.hyper
print(f"loss {res.trace[0]:.3f} -> {res.trace[-1]:.3f}")
print(f"signal var {h.signal_var:.3f}, lengthscales {np.round(h.lengthscales, 3)}, "
      f"noise {h.noise_val:.1e} / {h.noise_grad:.1e}")

# coarse picture: '#' unsafe by the model at tau = 2, '.' safe
xs = np.linspace(-3, 3, 41)
Z = np.array([[x, y] for y in xs[::-2] for x in xs])
mu, var = res.model.mean_var(Z)
safe = (mu + 2 * np.sqrt(var) <= 0).reshape(-1, xs.size)
print("\n".join("".join("." if s else "#" for s in row) for row in safe))

print()
print(bench.eval_metrics(res.model, cup).to_csv())
