"""Gaussian process over constraint space with value and gradient observations.

The joint prior over ``[f(x_1..x_N), grad f(x_1), ..., grad f(x_N)]`` uses an
ARD RBF kernel and its closed-form derivatives. Training targets are zero
values (the data lie on the boundary) and unit normals.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.stats import norm

from .mining import ConstraintDataset

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
NOISE_FLOOR = 1e-6
JITTERS = (0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4)
LOG2PI = np.log(2 * np.pi)


class GPNumericsError(np.linalg.LinAlgError):
    pass


class TrainingDivergedError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


# --------------------------------------------------------------------------
# hyperparameters


@dataclass(frozen=True)
class Hyperparams:
    signal_var: float
    lengthscales: np.ndarray
    noise_val: float
    noise_grad: float
    prior_mean: float = 0.0

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        object.__setattr__(self, "lengthscales", ls)
        for name in ("signal_var", "noise_val", "noise_grad"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if np.any(ls <= 0):
            raise ValueError("lengthscales must be positive")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def to_vector(self) -> np.ndarray:
        """``[log s, log l_1..l_d, log noise_val, log noise_grad, prior_mean]``."""
        return np.concatenate([[np.log(self.signal_var)], np.log(self.lengthscales),
                               [np.log(self.noise_val), np.log(self.noise_grad), self.prior_mean]])

    @classmethod
    def from_vector(cls, v) -> "Hyperparams":
        v = np.asarray(v, dtype=float)
        d = v.size - 4
        return cls(float(np.exp(v[0])), np.exp(v[1:1 + d]), float(np.exp(v[1 + d])),
                   float(np.exp(v[2 + d])), float(v[3 + d]))

    @classmethod
    def initial(cls, D_kappa, noise_val=1e-4, noise_grad=1e-2) -> "Hyperparams":
        """Median pairwise distance for every lengthscale, unit signal variance."""
        X = np.asarray(D_kappa, float)
        if X.shape[0] > 1:
            diff = X[:, None] - X[None]
            dist = np.sqrt(np.sum(diff ** 2, axis=-1))[np.triu_indices(X.shape[0], 1)]
            med = float(np.median(dist[dist > 0])) if np.any(dist > 0) else 1.0
        else:
            med = 1.0
        return cls(1.0, np.full(X.shape[1], med), noise_val, noise_grad, 0.0)

    def to_dict(self):
        return {"signal_var": self.signal_var, "lengthscales": self.lengthscales.tolist(),
                "noise_val": self.noise_val, "noise_grad": self.noise_grad,
                "prior_mean": self.prior_mean}

    @classmethod
    def from_dict(cls, d):
        return cls(d["signal_var"], d["lengthscales"], d["noise_val"], d["noise_grad"],
                   d.get("prior_mean", 0.0))


# --------------------------------------------------------------------------
# kernel blocks


def _pieces(hyper: Hyperparams, X, X2):
    X, X2 = np.atleast_2d(np.asarray(X, float)), np.atleast_2d(np.asarray(X2, float))
    il2 = 1.0 / hyper.lengthscales ** 2
    U = X[:, None, :] - X2[None, :, :]
    k = hyper.signal_var * np.exp(-0.5 * np.sum(U * U * il2, axis=-1))
    return U, U * il2, k, il2


def kernel(hyper: Hyperparams, X, X2) -> np.ndarray:
    return _pieces(hyper, X, X2)[2]


def kernel_blocks(hyper: Hyperparams, X, X2=None):
    """``(K_ff, K_fd, K_df, K_dd)`` between ``X`` (rows) and ``X2`` (columns).

    ``K_fd[n, m, e] = dk/dx2_e``, ``K_df[n, m, d] = dk/dx_d`` and
    ``K_dd[n, m, d, e] = d2k/dx_d dx2_e``.
    """
    X2 = X if X2 is None else X2
    U, R, k, il2 = _pieces(hyper, X, X2)
    Kfd = k[..., None] * R
    Kdf = -Kfd
    Kdd = k[..., None, None] * (np.diag(il2)[None, None] - R[..., :, None] * R[..., None, :])
    return k, Kfd, Kdf, Kdd


def _assemble(Kff, Kfd, Kdf, Kdd):
    N, M, d = Kfd.shape
    top = np.hstack([Kff, Kfd.reshape(N, M * d)])
    bot = np.hstack([Kdf.transpose(0, 2, 1).reshape(N * d, M),
                     Kdd.transpose(0, 2, 1, 3).reshape(N * d, M * d)])
    return np.vstack([top, bot])


def joint_gram(hyper: Hyperparams, X, X2=None) -> np.ndarray:
    """Joint value/gradient covariance ``[[K_ff, K_fd], [K_df, K_dd]]``.

    Rows are ``[f(x_1..x_N), d_1 f(x_1), ..., d_d f(x_1), d_1 f(x_2), ...]``.
    """
    return _assemble(*kernel_blocks(hyper, X, X2))


def cross_cov(hyper: Hyperparams, Z, X) -> np.ndarray:
    """Covariance of values at ``Z`` with the joint observations at ``X``."""
    k, Kfd, _, _ = kernel_blocks(hyper, Z, X)
    return np.hstack([k, Kfd.reshape(k.shape[0], -1)])


def _gram_lengthscale_grads(hyper: Hyperparams, X):
    """``dK/dlog l_c`` for every lengthscale, closed form."""
    U, R, k, il2 = _pieces(hyper, X, X)
    d = hyper.dim
    out = []
    eye = np.eye(d)
    base_dd = np.diag(il2)[None, None] - R[..., :, None] * R[..., None, :]
    for c in range(d):
        A = U[..., c] ** 2 * il2[c]
        dk = k * A
        dKfd = dk[..., None] * R - 2 * eye[c][None, None] * (k[..., None] * R)
        extra = (-2 * np.diag(eye[c] * il2)[None, None]
                 + 2 * (eye[c][:, None] + eye[c][None, :])[None, None]
                 * R[..., :, None] * R[..., None, :])
        dKdd = dk[..., None, None] * base_dd + k[..., None, None] * extra
        out.append(_assemble(dk, dKfd, -dKfd, dKdd))
    return out


# --------------------------------------------------------------------------
# model


@dataclass(frozen=True)
class PosteriorQuery:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.maximum(np.diag(self.cov), 0.0))


def _targets(dataset: ConstraintDataset, hyper: Hyperparams):
    y = np.concatenate([dataset.D_g, dataset.D_grad.ravel()])
    m = np.concatenate([np.full(dataset.n_robust, hyper.prior_mean),
                        np.zeros(dataset.D_grad.size)])
    return y - m


def _noise_diag(dataset, hyper):
    N, d = dataset.D_kappa.shape
    return np.concatenate([np.full(N, hyper.noise_val), np.full(N * d, hyper.noise_grad)])


def _cholesky(K):
    """Lower Cholesky with jitter escalation; returns ``(L, jitter)``."""
    scale = max(float(np.mean(np.diag(K))), 1e-300)
    for jit in JITTERS:
        try:
            return np.linalg.cholesky(K + jit * scale * np.eye(K.shape[0])), jit
        except np.linalg.LinAlgError:
            continue
    raise GPNumericsError(f"Cholesky failed after jitter {JITTERS[-1]:g}")


@dataclass
class DerivGPModel:
    """A derivative-observation GP conditioned on a constraint dataset."""

    hyper: Hyperparams
    dataset: ConstraintDataset
    chol: np.ndarray = field(init=False, repr=False)
    alpha: np.ndarray = field(init=False, repr=False)
    jitter: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.dataset.n_robust == 0:
            raise ValueError("dataset has no observations")
        if self.dataset.dim != self.hyper.dim:
            raise ValueError(f"{self.hyper.dim} lengthscales for {self.dataset.dim}-D data")
        K = joint_gram(self.hyper, self.dataset.D_kappa) + np.diag(_noise_diag(self.dataset, self.hyper))
        self.chol, self.jitter = _cholesky(K)
        if self.jitter:
            log.info("Gram jitter escalated to %g", self.jitter)
        self.alpha = cho_solve((self.chol, True), _targets(self.dataset, self.hyper))

    def with_hyper(self, hyper: Hyperparams) -> "DerivGPModel":
        return DerivGPModel(hyper, self.dataset)

    @property
    def n_obs(self) -> int:
        return self.alpha.size

    # posterior ------------------------------------------------------------

    def mean(self, Z) -> np.ndarray:
        Z = np.atleast_2d(Z)
        return self.hyper.prior_mean + cross_cov(self.hyper, Z, self.dataset.D_kappa) @ self.alpha

    def mean_var(self, Z, chunk: int = 4096):
        """Posterior mean and predictive marginal variance, evaluated in chunks."""
        Z = np.atleast_2d(np.asarray(Z, float))
        mus, vs = [], []
        for i in range(0, Z.shape[0], chunk):
            Kz = cross_cov(self.hyper, Z[i:i + chunk], self.dataset.D_kappa)
            V = solve_triangular(self.chol, Kz.T, lower=True)
            mus.append(self.hyper.prior_mean + Kz @ self.alpha)
            vs.append(self.hyper.signal_var + self.hyper.noise_val - np.sum(V * V, axis=0))
        return np.concatenate(mus), np.maximum(np.concatenate(vs), 0.0)

    def posterior(self, Z) -> PosteriorQuery:
        """Joint predictive distribution of constraint values at ``Z``.

        The covariance includes the value-observation noise on its diagonal.
        """
        Z = np.atleast_2d(np.asarray(Z, float))
        Kz = cross_cov(self.hyper, Z, self.dataset.D_kappa)
        V = solve_triangular(self.chol, Kz.T, lower=True)
        cov = kernel(self.hyper, Z, Z) - V.T @ V + self.hyper.noise_val * np.eye(Z.shape[0])
        cov = 0.5 * (cov + cov.T)
        return PosteriorQuery(self.hyper.prior_mean + Kz @ self.alpha, cov)

    def whitened_cross(self, Z) -> np.ndarray:
        """``L^-1 k_X(Z)`` columns, cached by the planner per tree node."""
        Kz = cross_cov(self.hyper, np.atleast_2d(Z), self.dataset.D_kappa)
        return solve_triangular(self.chol, Kz.T, lower=True)

    # likelihood -------------------------------------------------------------

    def mll(self) -> float:
        r = _targets(self.dataset, self.hyper)
        return float(-0.5 * r @ self.alpha - np.sum(np.log(np.diag(self.chol)))
                     - 0.5 * r.size * LOG2PI)

    def mll_grad(self) -> np.ndarray:
        """Gradient of :meth:`mll` with respect to :meth:`Hyperparams.to_vector`."""
        h, ds = self.hyper, self.dataset
        N = ds.n_robust
        Kinv = cho_solve((self.chol, True), np.eye(self.n_obs))
        W = np.outer(self.alpha, self.alpha) - Kinv
        gram = joint_gram(h, ds.D_kappa)
        grads = [0.5 * np.sum(W * gram)]
        for dK in _gram_lengthscale_grads(h, ds.D_kappa):
            grads.append(0.5 * np.sum(W * dK))
        dW = np.diag(W)
        grads.append(0.5 * h.noise_val * np.sum(dW[:N]))
        grads.append(0.5 * h.noise_grad * np.sum(dW[N:]))
        grads.append(float(np.sum(self.alpha[:N])))
        return np.array(grads)

    # io -----------------------------------------------------------------------

    def to_dict(self) -> dict:
        ds = self.dataset
        return {"format_version": FORMAT_VERSION, "hyperparams": self.hyper.to_dict(),
                "dataset": {"D_kappa": ds.D_kappa.tolist(), "D_g": ds.D_g.tolist(),
                            "D_grad": ds.D_grad.tolist(), "feas_states": ds.feas_states.tolist()},
                "jitter": self.jitter}

    @classmethod
    def from_dict(cls, d: dict) -> "DerivGPModel":
        ds = d["dataset"]
        n = len(ds["D_kappa"])
        dim = len(d["hyperparams"]["lengthscales"])
        dataset = ConstraintDataset(np.asarray(ds["D_kappa"], float).reshape(n, dim),
                                    np.asarray(ds["D_g"], float),
                                    np.asarray(ds["D_grad"], float).reshape(n, dim),
                                    np.asarray(ds["feas_states"], float).reshape(-1, dim))
        return cls(Hyperparams.from_dict(d["hyperparams"]), dataset)

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f)

    @classmethod
    def load(cls, path) -> "DerivGPModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))


# --------------------------------------------------------------------------
# losses and training


def feas_loss(model: DerivGPModel, feas_states, rho: float = 2.0) -> float:
    """Mean hinge ``max(mu + rho * sigma, 0)`` over demonstrated states."""
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    X = np.atleast_2d(np.asarray(feas_states, float))
    if X.shape[0] == 0:
        return 0.0
    mu, var = model.mean_var(X)
    return float(np.mean(np.maximum(mu + rho * np.sqrt(var), 0.0)))


def training_loss(model: DerivGPModel, rho: float = 2.0) -> float:
    """``-mll / n_obs + feas_loss``."""
    return -model.mll() / model.n_obs + feas_loss(model, model.dataset.feas_states, rho)


@dataclass
class TrainResult:
    model: DerivGPModel
    trace: list


def train(model: DerivGPModel, epochs: int = 500, lr: float = 0.05, rho: float = 2.0,
          train_prior_mean: bool = False, fd_step: float = 1e-4,
          betas=(0.9, 0.999), eps: float = 1e-8, noise_floor: float = NOISE_FLOOR) -> TrainResult:
    """Adam on the log-hyperparameters.

    The likelihood term uses its analytic gradient; the hinge term is
    differentiated by central differences. Both noise variances are kept
    above ``noise_floor``: the targets are exact, so the likelihood alone
    would drive them to zero and the Gram matrix to singularity.
    Fully deterministic.
    """
    theta = model.hyper.to_vector()
    d = model.hyper.dim
    lo = np.full(theta.size, -np.inf)
    lo[1 + d:3 + d] = np.log(noise_floor)
    if np.any(theta < lo):
        theta = np.maximum(theta, lo)
        model = model.with_hyper(Hyperparams.from_vector(theta))
    free = np.ones(theta.size, bool)
    free[-1] = train_prior_mean
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    feas = model.dataset.feas_states
    trace = []
    cur = model
    for ep in range(epochs):
        nll = -cur.mll() / cur.n_obs
        lf = feas_loss(cur, feas, rho)
        loss = nll + lf
        trace.append(loss)
        if not np.isfinite(loss):
            raise TrainingDivergedError(f"loss became {loss} at epoch {ep}", trace)
        grad = -cur.mll_grad() / cur.n_obs
        for i in np.flatnonzero(free):
            e = np.zeros_like(theta)
            e[i] = fd_step
            lp = feas_loss(cur.with_hyper(Hyperparams.from_vector(theta + e)), feas, rho)
            lm = feas_loss(cur.with_hyper(Hyperparams.from_vector(theta - e)), feas, rho)
            grad[i] += (lp - lm) / (2 * fd_step)
        grad[~free] = 0.0
        m = betas[0] * m + (1 - betas[0]) * grad
        v = betas[1] * v + (1 - betas[1]) * grad ** 2
        mh = m / (1 - betas[0] ** (ep + 1))
        vh = v / (1 - betas[1] ** (ep + 1))
        theta = np.maximum(theta - lr * mh / (np.sqrt(vh) + eps), lo)
        try:
            cur = cur.with_hyper(Hyperparams.from_vector(theta))
        except (GPNumericsError, ValueError) as exc:
            raise TrainingDivergedError(f"epoch {ep}: {exc}", trace) from exc
    if epochs:
        trace.append(training_loss(cur, rho))
    return TrainResult(cur, trace)


def classify(model: DerivGPModel, kappa, tau: float):
    """``True`` where ``mu + tau * sigma <= 0`` (classified safe)."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    mu, var = model.mean_var(np.atleast_2d(kappa))
    return mu + tau * np.sqrt(var) <= 0


def safe_probability(model: DerivGPModel, kappa) -> np.ndarray:
    """Marginal ``P(g(kappa) <= 0)`` per point."""
    mu, var = model.mean_var(np.atleast_2d(kappa))
    return norm.cdf(-mu / np.sqrt(np.maximum(var, 1e-300)))


def fit(dataset: ConstraintDataset, epochs: int = 500, lr: float = 0.05, rho: float = 2.0,
        hyper: Hyperparams | None = None, **kw) -> TrainResult:
    hyper = Hyperparams.initial(dataset.D_kappa) if hyper is None else hyper
    return train(DerivGPModel(hyper, dataset), epochs, lr, rho, **kw)


__all__ = ["Hyperparams", "DerivGPModel", "PosteriorQuery", "joint_gram", "kernel_blocks",
           "cross_cov", "feas_loss", "training_loss", "train", "fit", "classify",
           "safe_probability", "TrainResult", "GPNumericsError", "TrainingDivergedError"]
