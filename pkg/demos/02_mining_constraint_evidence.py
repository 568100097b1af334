"""
Reading constraint gradients off a locally optimal demonstration
================================================================

A shortest path that wraps around the outside of a cup has to bend, and the
bend is only explained by a force from the wall. Scanning the stationarity
conditions timestep by timestep finds where that force is needed, and what
direction it must have.
"""
import numpy as np

from kktgp import core, mining
from kktgp.scenarios import Discs, Scenario, annulus_path_scenario
from kktgp.synth import geodesic_demo

sc = annulus_path_scenario()
cd = geodesic_demo(sc, 0, 0.3, 0.2, 6, 1, 5, 5, entry="secant")
demo = cd.demo
print(f"demo: {demo.horizon} states, certificate passed = {cd.report.passed}")

# tightness: positive wherever the cost alone cannot explain the path
p2 = np.array([mining.tightness_check(demo, t) for t in range(demo.horizon)])
gstar = sc.value(demo.kappa)
print("\n t    p2        g*(x_t)")
for t in range(demo.horizon):
    flag = "  <- tight" if p2[t] > mining.EPS_POS else ""
    print(f"{t:2d}  {p2[t]:.2e}  {gstar[t]: .2e}{flag}")

# the junction states touch the wall but need no force: detection is sound, not complete
tight = [t for t in range(demo.horizon) if p2[t] > mining.EPS_POS]
ident = mining.identify_gradients(demo, tight)
print("\nidentified gradient vs true outward normal")
for t in tight:
    g = ident.gradients[t]
    n = sc.gradient(demo.kappa[t])
    p4 = mining.orthogonal_check(demo, t, g, tight)
    p5 = mining.antiparallel_check(demo, t, g, tight)
    print(f"t={t:2d}  cos = {g @ n / np.linalg.norm(g) / np.linalg.norm(n):.6f}"
          f"  p4 = {p4:.1e}  p5 = {p5:.3f}")

# when a known constraint is active at the same time, the direction is no longer pinned down
a = 0.3
X = np.array([[-1.0, -a], [0.0, 0.0], [1.0, -a]])
corner = Scenario("corner", "point", Discs([[0.0, -1.0]], [1.0]), "path", float(np.hypot(1, a)),
                  ((-2, -2), (2, 2)))
kink = core.Demonstration(X, np.diff(X, axis=0), corner.task(X[0], X[-1]))
(ev,) = mining.mine_demo(0, kink)
print(f"\nkink with saturated controls: p2 = {ev.p2:.2f}, p4 = {ev.p4:.1f}, robust = {ev.robust}")
