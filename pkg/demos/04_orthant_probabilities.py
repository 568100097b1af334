"""
Probability that every point of a path is safe
==============================================

The joint safety of a path is a Gaussian orthant probability. The
quasi-Monte Carlo estimate is compared with closed forms and plain sampling.
"""
import numpy as np

from kktgp.mvn import MvnCdfEngine, mvn_cdf

for rho in (-0.5, 0.0, 0.5, 0.9):
    p = mvn_cdf([0, 0], [[1, rho], [rho, 1]])
    exact = 0.25 + np.arcsin(rho) / (2 * np.pi)
    print(f"rho = {rho:+.1f}: qmc {p.prob:.5f} +- {p.std_err:.1e}   exact {exact:.5f}")

rng = np.random.default_rng(0)
A = rng.normal(size=(5, 5))
S = A @ A.T / 5
mu = -np.ones(5)
X = rng.multivariate_normal(mu, S, size=1_000_000)
print(f"\n5-D: qmc {mvn_cdf(mu, S).prob:.4f}, sampling {np.mean(np.all(X <= 0, axis=1)):.4f}")

# extending the path can only lower the estimate
eng = MvnCdfEngine()
K = 30
t = np.linspace(0, 3, K)
S = 0.04 * np.exp(-0.5 * (t[:, None] - t[None]) ** 2 / 0.3 ** 2) + 1e-6 * np.eye(K)
mu = -0.4 + 0.1 * np.sin(3 * t)
p = [eng.cdf(mu[:k], S[:k, :k]).prob for k in range(1, K + 1)]
print("\nprefix probabilities:", np.round(p[::5], 4))
print("non-increasing:", bool(np.all(np.diff(p) <= 0)))
