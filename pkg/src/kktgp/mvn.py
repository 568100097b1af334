"""Orthant probabilities ``P(X <= 0)`` for ``X ~ N(mu, Sigma)``.

Genz's sequential conditioning with a randomly shifted Richtmyer lattice.
Variables are kept in the given order (no pivoting), and each dimension
always uses the same lattice generator and random shift. Because of that,
appending a dimension multiplies every sample by a factor in ``[0, 1]`` and
the estimate can only go down, which the planner relies on when it grows a
path one state at a time.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import ndtr, ndtri

K_MAX = 200
PSD_TOL = 1e-10


class NotPSDError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class MvnResult:
    prob: float
    std_err: float
    n_samples: int

    def __float__(self):
        return self.prob


@lru_cache(maxsize=None)
def _primes(n: int) -> np.ndarray:
    out = []
    c = 2
    while len(out) < n:
        if all(c % p for p in out if p * p <= c):
            out.append(c)
        c += 1
    return np.array(out, dtype=float)


def richtmyer_generator(dim: int) -> np.ndarray:
    """Fractional parts of the square roots of the first ``dim`` primes."""
    r = np.sqrt(_primes(max(dim, 1)))[:dim]
    return r - np.floor(r)


def psd_cholesky(S, tol: float = PSD_TOL) -> np.ndarray:
    """Lower-triangular factor of a positive semidefinite matrix.

    Pivots below ``tol * max(diag)`` are set to zero together with the rest
    of their column. The factor of a leading block equals the leading block
    of the factor.
    """
    S = np.asarray(S, dtype=float)
    K = S.shape[0]
    if S.shape != (K, K) or not np.all(np.isfinite(S)):
        raise ValueError("covariance must be a finite square matrix")
    if not np.allclose(S, S.T, atol=1e-10 * max(1.0, np.abs(S).max(initial=0.0))):
        raise NotPSDError("covariance is not symmetric")
    scale = max(float(np.max(np.diag(S), initial=0.0)), 1e-300)
    C = np.zeros_like(S)
    piv = []  # indices with a nonzero pivot
    for i in range(K):
        # row by row, so row i depends only on S[:i+1, :i+1] (bit-identical for every extension)
        if piv:
            P = np.asarray(piv)
            C[i, P] = solve_triangular(C[np.ix_(P, P)], S[i, P], lower=True)
        d = S[i, i] - C[i, :i] @ C[i, :i]
        if d < -tol * scale:
            raise NotPSDError(f"covariance is not positive semidefinite (pivot {d:.3e} at {i})")
        if d > tol * scale:
            C[i, i] = np.sqrt(d)
            piv.append(i)
    return C


class MvnCdfEngine:
    """Deterministic QMC orthant-probability estimator.

    Parameters
    ----------
    qmc_samples : int
        Total integrand evaluations, split evenly over ``n_shifts``
        independent random shifts (the spread across shifts gives the
        standard error).
    rng_seed : int
        Seed of the random shifts.
    """

    def __init__(self, qmc_samples: int = 5000, rng_seed: int = 0, n_shifts: int = 10):
        if qmc_samples < n_shifts:
            raise ValueError("need at least one sample per shift")
        self.qmc_samples = int(qmc_samples)
        self.rng_seed = int(rng_seed)
        self.n_shifts = int(n_shifts)
        rng = np.random.default_rng(rng_seed)
        self._shifts = rng.random((n_shifts, K_MAX))
        self._gen = richtmyer_generator(K_MAX)

    def with_samples(self, n: int) -> "MvnCdfEngine":
        return MvnCdfEngine(n, self.rng_seed, self.n_shifts)

    def _points(self, dim: int) -> np.ndarray:
        """``(n_shifts, n_per, dim)`` tent-transformed shifted lattice points."""
        n_per = self.qmc_samples // self.n_shifts
        n = np.arange(1, n_per + 1)[:, None]
        base = n * self._gen[:dim]
        pts = base[None] + self._shifts[:, None, :dim]
        pts -= np.floor(pts)
        return np.abs(2.0 * pts - 1.0)

    def cdf(self, mu, Sigma) -> MvnResult:
        mu = np.atleast_1d(np.asarray(mu, dtype=float))
        Sigma = np.atleast_2d(np.asarray(Sigma, dtype=float))
        K = mu.size
        if Sigma.shape != (K, K):
            raise ValueError(f"covariance shape {Sigma.shape} does not match mean of size {K}")
        if K == 0:
            return MvnResult(1.0, 0.0, 0)
        if K > K_MAX:
            raise ValueError(f"dimension {K} exceeds {K_MAX}")
        C = psd_cholesky(Sigma)
        b = -mu
        W = self._points(max(K - 1, 1))
        S, n_per = W.shape[0], W.shape[1]
        f = np.ones((S, n_per))
        Y = np.zeros((S, n_per, K))
        for i in range(K):
            r = b[i] - Y[..., :i] @ C[i, :i]
            if C[i, i] > 0:
                e = ndtr(r / C[i, i])
            else:
                e = (r >= 0).astype(float)
            f *= e
            if i < K - 1 and C[i, i] > 0:
                u = np.clip(W[..., i] * e, 1e-300, 1 - 1e-16)
                Y[..., i] = ndtri(u)
        est = f.mean(axis=1)
        p = float(est.mean())
        se = float(est.std(ddof=1) / np.sqrt(S)) if S > 1 else 0.0
        return MvnResult(p, se, S * n_per)


def mvn_cdf(mu, Sigma, qmc_samples: int = 5000, rng_seed: int = 0) -> MvnResult:
    """``P(X <= 0)`` for ``X ~ N(mu, Sigma)`` with a standard-error estimate."""
    return MvnCdfEngine(qmc_samples, rng_seed).cdf(mu, Sigma)
