import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kktgp import gp
from kktgp.gp import DerivGPModel, Hyperparams, classify, feas_loss, joint_gram, kernel_blocks
from kktgp.mining import ConstraintDataset


def rbf(h, x, y):
    """Scalar reference kernel."""
    r = (np.asarray(x) - np.asarray(y)) / h.lengthscales
    return h.signal_var * np.exp(-0.5 * r @ r)


def small_dataset(n=5, seed=0, dim=2):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, dim))
    G = rng.normal(size=(n, dim))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    return ConstraintDataset(X, np.zeros(n), G, rng.normal(size=(3, dim)))


class FixedMoments:
    """Stand-in model with prescribed marginal mean and standard deviation."""

    def __init__(self, mu, sigma):
        self.mu, self.sigma = np.atleast_1d(mu), np.atleast_1d(sigma)

    def mean_var(self, Z):
        return self.mu, self.sigma ** 2


# kernel -------------------------------------------------------------------------


def test_coincident_point_blocks():
    h = Hyperparams(1.7, [0.5, 2.0], 1e-3, 1e-3)
    x = np.array([[0.3, -0.4]])
    k, Kfd, Kdf, Kdd = kernel_blocks(h, x)
    assert k[0, 0] == pytest.approx(1.7)
    np.testing.assert_array_equal(Kfd[0, 0], 0.0)
    np.testing.assert_allclose(Kdd[0, 0], np.diag(1.7 / np.array([0.25, 4.0])))


def test_blocks_match_finite_differences(rng):
    h = Hyperparams(1.3, [0.7, 1.4], 1e-3, 1e-3)
    e = 1e-5
    for _ in range(10):
        x, y = rng.normal(size=2), rng.normal(size=2)
        k, Kfd, Kdf, Kdd = (b[0, 0] for b in kernel_blocks(h, x[None], y[None]))
        assert k == pytest.approx(rbf(h, x, y), rel=1e-12)
        I = np.eye(2) * e
        fd_y = np.array([(rbf(h, x, y + I[d]) - rbf(h, x, y - I[d])) / (2 * e) for d in range(2)])
        fd_x = np.array([(rbf(h, x + I[d], y) - rbf(h, x - I[d], y)) / (2 * e) for d in range(2)])
        fd_xy = np.array([[(rbf(h, x + I[a], y + I[b]) - rbf(h, x + I[a], y - I[b])
                            - rbf(h, x - I[a], y + I[b]) + rbf(h, x - I[a], y - I[b])) / (4 * e * e)
                           for b in range(2)] for a in range(2)])
        np.testing.assert_allclose(Kfd, fd_y, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(Kdf, fd_x, rtol=1e-5, atol=1e-9)
        np.testing.assert_allclose(Kdd, fd_xy, rtol=1e-5, atol=1e-5)


def test_doubling_signal_variance_doubles_gram(rng):
    X = rng.normal(size=(4, 2))
    h = Hyperparams(0.8, [1.0, 0.6], 1e-3, 1e-3)
    h2 = Hyperparams(1.6, [1.0, 0.6], 1e-3, 1e-3)
    np.testing.assert_allclose(joint_gram(h2, X), 2 * joint_gram(h, X), rtol=1e-14)


def test_joint_gram_is_symmetric_psd(rng):
    X = rng.normal(size=(6, 2))
    K = joint_gram(Hyperparams(1.0, [0.8, 1.2], 1e-3, 1e-3), X)
    np.testing.assert_allclose(K, K.T, atol=1e-14)
    assert np.linalg.eigvalsh(K).min() >= -1e-10


def test_hyperparams_validate_and_round_trip():
    with pytest.raises(ValueError):
        Hyperparams(-1.0, [1.0], 1e-3, 1e-3)
    with pytest.raises(ValueError):
        Hyperparams(1.0, [0.0, 1.0], 1e-3, 1e-3)
    h = Hyperparams(1.2, [0.3, 4.0], 1e-5, 2e-3, 0.1)
    back = Hyperparams.from_vector(h.to_vector())
    assert back.signal_var == pytest.approx(h.signal_var)
    np.testing.assert_allclose(back.lengthscales, h.lengthscales)
    assert back.prior_mean == h.prior_mean


# posterior -------------------------------------------------------------------------


def test_posterior_interpolates_zero_level_set(cup_model):
    mu = cup_model.mean(cup_model.dataset.D_kappa)
    assert np.max(np.abs(mu)) <= 1e-3


def test_posterior_mean_gradient_matches_normals(cup_model):
    ds = cup_model.dataset
    e = 1e-5
    for x, n in zip(ds.D_kappa, ds.D_grad):
        g = np.array([(cup_model.mean(x + e * d)[0] - cup_model.mean(x - e * d)[0]) / (2 * e)
                      for d in np.eye(2)])
        assert g @ n / np.linalg.norm(g) >= 0.99


def test_far_field_reverts_to_prior():
    ds = small_dataset()
    h = Hyperparams(1.4, [0.5, 0.5], 1e-4, 1e-4, 0.0)
    m = DerivGPModel(h, ds)
    Z = np.array([[30.0, 0.0], [0.0, -30.0]])
    post = m.posterior(Z)
    np.testing.assert_allclose(post.mean, h.prior_mean, atol=1e-6)
    np.testing.assert_allclose(np.diag(post.cov), h.signal_var + h.noise_val, atol=1e-6)
    mu, var = m.mean_var(Z)
    np.testing.assert_allclose(var, np.diag(post.cov), atol=1e-12)


def test_posterior_covariance_is_valid_and_batch_independent(cup_model, rng):
    Z = rng.uniform(-3, 3, size=(40, 2))
    post = cup_model.posterior(Z)
    np.testing.assert_allclose(post.cov, post.cov.T, atol=1e-10)
    assert np.linalg.eigvalsh(post.cov).min() >= -1e-8
    alone = cup_model.posterior(Z[:1])
    assert alone.cov[0, 0] == pytest.approx(post.cov[0, 0], abs=1e-12)
    assert alone.mean[0] == pytest.approx(post.mean[0], abs=1e-12)


def test_model_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        DerivGPModel(Hyperparams(1.0, [1.0, 1.0, 1.0], 1e-3, 1e-3), small_dataset())


def test_cholesky_failure_is_reported():
    with pytest.raises(gp.GPNumericsError):
        gp._cholesky(-np.eye(3))


def test_model_round_trips_through_json(tmp_path):
    m = DerivGPModel(Hyperparams(1.1, [0.9, 1.3], 1e-4, 1e-3), small_dataset())
    path = tmp_path / "model.json"
    m.save(path)
    back = DerivGPModel.load(path)
    Z = np.array([[0.1, 0.2], [1.0, -1.0]])
    np.testing.assert_array_equal(back.mean(Z), m.mean(Z))
    assert json.loads(path.read_text())["format_version"] == gp.FORMAT_VERSION


# likelihood -----------------------------------------------------------------------


def test_single_point_likelihood_factorizes():
    # at one input the joint Gram is diagonal: value variance s + nv, slopes s / l_d^2 + ng
    s, ls, nv, ng = 0.9, np.array([0.5, 2.0]), 1e-2, 3e-2
    n = np.array([0.6, 0.8])
    ds = ConstraintDataset(np.array([[0.2, 0.1]]), np.zeros(1), n[None], np.zeros((0, 2)))
    m = DerivGPModel(Hyperparams(s, ls, nv, ng), ds)
    v = s + nv
    expected = -0.5 * np.log(2 * np.pi * v)
    for d in range(2):
        vd = s / ls[d] ** 2 + ng
        expected += -0.5 * np.log(2 * np.pi * vd) - 0.5 * n[d] ** 2 / vd
    assert m.mll() == pytest.approx(expected, rel=1e-12)


def test_likelihood_drops_away_from_best_noise():
    ds = small_dataset(8, seed=2)
    grid = np.logspace(-6, 2, 33)
    vals = [DerivGPModel(Hyperparams(1.0, [1.0, 1.0], nv, 1e-3), ds).mll() for nv in grid]
    best = int(np.argmax(vals))
    assert vals[-1] < vals[best] - 1.0
    assert np.all(np.diff(vals[best:]) <= 1e-9)


@pytest.mark.parametrize("seed", range(10))
def test_mll_gradient_matches_finite_differences(seed):
    rng = np.random.default_rng(seed)
    ds = small_dataset(6, seed=seed)
    theta = np.concatenate([[rng.uniform(-1, 1)], rng.uniform(-0.7, 0.7, 2),
                            rng.uniform(-6, -1, 2), [rng.normal() * 0.3]])
    model = DerivGPModel(Hyperparams.from_vector(theta), ds)
    g = model.mll_grad()
    e = 1e-5
    fd = np.empty_like(theta)
    for i in range(theta.size):
        d = np.zeros_like(theta)
        d[i] = e
        fd[i] = (model.with_hyper(Hyperparams.from_vector(theta + d)).mll()
                 - model.with_hyper(Hyperparams.from_vector(theta - d)).mll()) / (2 * e)
    rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)
    assert rel.max() <= 1e-4


# losses, training, classification ---------------------------------------------------------


def test_feas_loss_examples():
    assert feas_loss(FixedMoments([-1.0, -0.5], [0.1, 0.2]), np.zeros((2, 2)), 2.0) == 0.0
    assert feas_loss(FixedMoments([0.2], [0.05]), np.zeros((1, 2)), 2.0) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        feas_loss(FixedMoments([0.0], [1.0]), np.zeros((1, 2)), -1.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=1, max_size=6), st.floats(0, 3), st.floats(0, 3))
def test_feas_loss_nondecreasing_in_rho(mus, r1, r2):
    m = FixedMoments(mus, np.linspace(0.1, 1.0, len(mus)))
    X = np.zeros((len(mus), 2))
    lo, hi = sorted((r1, r2))
    assert feas_loss(m, X, lo) <= feas_loss(m, X, hi) + 1e-15


def test_zero_epochs_keeps_hyperparameters():
    h = Hyperparams(1.0, [0.8, 0.9], 1e-4, 1e-3)
    res = gp.train(DerivGPModel(h, small_dataset()), epochs=0)
    assert res.model.hyper is h and res.trace == []


def test_training_loss_decreases_on_average(cup_dataset):
    res = gp.fit(cup_dataset, epochs=120, lr=0.05)
    tr = np.asarray(res.trace)
    windows = tr[:120].reshape(-1, 20).mean(axis=1)
    assert np.all(np.diff(windows) <= 1e-9)
    assert res.model.hyper.noise_val >= gp.NOISE_FLOOR * (1 - 1e-12)


def test_training_is_deterministic():
    ds = small_dataset(5, seed=4)
    a = gp.fit(ds, epochs=15)
    b = gp.fit(ds, epochs=15)
    assert a.trace == b.trace


def test_classify_examples():
    Z = np.zeros((1, 2))
    assert classify(FixedMoments([-1.0], [0.2]), Z, 2.0)[0]
    assert not classify(FixedMoments([-0.1], [0.2]), Z, 2.33)[0]
    assert classify(FixedMoments([-1e-9], [5.0]), Z, 0.0)[0]
    assert not classify(FixedMoments([1e-9], [0.0]), Z, 0.0)[0]
    with pytest.raises(ValueError):
        classify(FixedMoments([0.0], [1.0]), Z, -0.5)
