import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmmflow.errors import ConfigError
from gmmflow.gmm import (
    MixtureSpec,
    exact_score,
    marginal_log_density,
    mc_score,
    sample_mixture,
    time_covariance,
    weight_gradient,
    weight_time_derivative,
    weights,
)
from gmmflow.linalg import CovarianceSpec, RngStream, random_orthogonal
from gmmflow.experiments import build_instance


def single_gaussian(d=1, sigma=1.0, mean=None):
    mu = np.zeros(d) if mean is None else np.asarray(mean, dtype=float)
    return MixtureSpec(mu[np.newaxis, :], CovarianceSpec.isotropic(sigma, d))


def symmetric_pair(a):
    a = np.asarray(a, dtype=float)
    return MixtureSpec(np.stack([a, -a]), CovarianceSpec.isotropic(1.0, a.size))


@pytest.fixture(scope="module")
def random_instance():
    return build_instance(3, 4, 1.0, "ball", "cycle5-spd", seed=123)


# --------------------------------------------------------------- mixture spec


def test_mixture_rejects_mean_outside_radius():
    with pytest.raises(ConfigError):
        MixtureSpec(np.array([[2.0, 0.0]]), CovarianceSpec.isotropic(1.0, 2), data_radius=1.0)


def test_mixture_default_radius_is_max_mean_norm():
    spec = symmetric_pair([3.0, 4.0])
    assert spec.data_radius == pytest.approx(5.0)


def test_time_covariance_endpoints():
    spec = MixtureSpec(np.zeros((1, 3)), CovarianceSpec.diagonal([0.2, 0.5, 1.5]))
    assert np.allclose(time_covariance(spec, 1.0).diag, np.ones(3))
    assert np.allclose(time_covariance(spec, 0.0).diag, [0.2, 0.5, 1.5])


@given(st.floats(min_value=0.0, max_value=1.0))
@settings(max_examples=50, deadline=None)
def test_time_covariance_stays_positive(t):
    spec = MixtureSpec(np.zeros((1, 2)), CovarianceSpec.diagonal([0.05, 2.0]))
    m = time_covariance(spec, t).diag
    assert np.all(m >= 0.5 * min(0.05, 0.5))


# -------------------------------------------------------------------- density


def test_log_density_single_gaussian_value():
    # (1-t)^2 + t = 0.75 at t = 0.5
    spec = single_gaussian()
    expected = -0.5 * math.log(2.0 * math.pi * 0.75)
    assert marginal_log_density(spec, np.zeros(1), 0.5) == pytest.approx(expected, abs=1e-12)


def test_log_density_at_time_zero_is_target_density():
    spec = symmetric_pair([0.7])
    z = np.array([0.3])
    direct = math.log(
        0.5 * (math.exp(-0.5 * (0.3 - 0.7) ** 2) + math.exp(-0.5 * (0.3 + 0.7) ** 2))
        / math.sqrt(2.0 * math.pi)
    )
    assert marginal_log_density(spec, z, 0.0) == pytest.approx(direct, abs=1e-12)


def test_density_integrates_to_one_by_simpson():
    # composite Simpson oracle over [-20, 20]
    spec = symmetric_pair([1.2])
    n = 4000
    xs = np.linspace(-20.0, 20.0, n + 1)
    fx = np.exp(marginal_log_density(spec, xs[:, None], 0.3))
    h = xs[1] - xs[0]
    integral = h / 3.0 * (fx[0] + fx[-1] + 4.0 * fx[1:-1:2].sum() + 2.0 * fx[2:-1:2].sum())
    assert integral == pytest.approx(1.0, abs=1e-8)


# -------------------------------------------------------------------- weights


def test_weights_uniform_at_terminal_time(random_instance):
    w = weights(random_instance, RngStream(1, 0).normal(3), 1.0).w
    assert np.allclose(w, 0.25, atol=1e-12)


def test_weights_single_component():
    spec = single_gaussian(d=2)
    assert np.allclose(weights(spec, np.ones(2), 0.3).w, [1.0])


def test_weights_symmetry_at_origin():
    spec = symmetric_pair([1.0])
    assert np.allclose(weights(spec, np.zeros(1), 0.0).w, [0.5, 0.5], atol=1e-12)


@given(st.floats(min_value=0.0, max_value=1.0), st.integers(min_value=0, max_value=500))
@settings(max_examples=60, deadline=None)
def test_weights_normalize(t, seed):
    spec = build_instance(3, 5, 1.0, "ball", "cycle5-diag", seed=17)
    z = RngStream(seed, 3).normal(3) * 3.0
    w = weights(spec, z, t).w
    assert abs(w.sum() - 1.0) <= 1e-12
    assert np.all(w >= 0.0) and np.all(w <= 1.0)


def test_weights_log_domain_stability_far_field():
    spec = MixtureSpec(
        np.array([[0.5, -0.5], [-0.5, 0.5]]), CovarianceSpec.diagonal([1e-3, 1e-3])
    )
    z = np.array([800.0, -600.0])  # norm 1000
    for t in (0.0, 0.25, 0.75, 1.0):
        w = weights(spec, z, t).w
        assert np.all(np.isfinite(w))
        s = exact_score(spec, z, t)
        assert np.all(np.isfinite(s))
        assert np.isfinite(marginal_log_density(spec, z, t))


# ---------------------------------------------------------------- exact score


def test_score_single_zero_mean_isotropic():
    spec = single_gaussian(d=3, sigma=0.6)
    z = np.array([0.5, -1.0, 2.0])
    for t in (0.0, 0.4, 1.0):
        denom = (1.0 - t) ** 2 * 0.6 + t
        assert np.allclose(exact_score(spec, z, t), -z / denom, atol=1e-14)


def test_score_vanishes_at_origin_for_symmetric_pair():
    spec = symmetric_pair([0.0, 1.3])
    assert np.allclose(exact_score(spec, np.zeros(2), 0.35), 0.0, atol=1e-14)


def test_score_matches_log_density_gradient(random_instance):
    spec = random_instance
    z = RngStream(8, 1).normal(3)
    t = 0.41
    step = 1e-5
    grad = np.zeros(3)
    for i in range(3):
        zp, zm = z.copy(), z.copy()
        zp[i] += step
        zm[i] -= step
        grad[i] = (marginal_log_density(spec, zp, t) - marginal_log_density(spec, zm, t)) / (2 * step)
    s = exact_score(spec, z, t)
    assert np.max(np.abs(s - grad)) <= 1e-6 * max(1.0, np.max(np.abs(grad)))


def test_score_orthogonal_equivariance():
    base = build_instance(4, 3, 1.0, "ball", "cycle5-diag", seed=55)
    u = random_orthogonal(4, RngStream(55, 9))
    rotated = MixtureSpec(
        base.means @ u.T, CovarianceSpec.eigen_factored(u, base.cov.eigenvalues), base.data_radius
    )
    z = RngStream(56, 0).normal(4)
    lhs = exact_score(rotated, u @ z, 0.3)
    rhs = u @ exact_score(base, z, 0.3)
    assert np.max(np.abs(lhs - rhs)) <= 1e-10


def test_score_accepts_batches(random_instance):
    zs = RngStream(60, 0).normal(6).reshape(2, 3)
    batch = exact_score(random_instance, zs, 0.2)
    assert batch.shape == (2, 3)
    assert np.allclose(batch[0], exact_score(random_instance, zs[0], 0.2))


# ------------------------------------------------------------------- mc score


def test_mc_score_single_point():
    x = np.array([[0.4, -0.2]])
    z = np.array([1.0, 1.0])
    t = 0.3
    expected = -(z - 0.7 * x[0]) / 0.3
    assert np.allclose(mc_score(x, z, t), expected, atol=1e-14)


def test_mc_score_symmetric_points_cancel_at_origin():
    data = np.array([[1.0, 2.0], [-1.0, -2.0]])
    assert np.allclose(mc_score(data, np.zeros(2), 0.5), 0.0, atol=1e-14)


def test_mc_score_rejects_time_zero():
    with pytest.raises(ConfigError):
        mc_score(np.ones((1, 2)), np.zeros(2), 0.0)


def test_exact_score_approaches_mc_score_as_covariance_shrinks():
    means = build_instance(2, 3, 1.0, "ball", "cycle5-diag", seed=77).means
    z = np.array([0.3, -0.8])
    t = 0.5
    target = mc_score(means, z, t)
    gaps = []
    for eps in (1e-1, 1e-2, 1e-3):
        spec = MixtureSpec(means, CovarianceSpec.isotropic(eps, 2))
        gaps.append(np.linalg.norm(exact_score(spec, z, t) - target))
    assert gaps[2] < gaps[0]
    assert gaps[1] < gaps[0]


# ---------------------------------------------------------- weight derivatives


def test_weight_gradient_trivial_cases(random_instance):
    spec = single_gaussian(d=2)
    assert np.allclose(weight_gradient(spec, np.ones(2), 0.5, 0), 0.0)
    z = RngStream(30, 0).normal(3)
    assert np.allclose(weight_gradient(random_instance, z, 1.0, 2), 0.0)


def test_weight_gradient_matches_finite_differences(random_instance):
    spec = random_instance
    z = RngStream(31, 0).normal(3)
    t, step = 0.37, 1e-5
    for j in range(spec.n_components):
        fd = np.zeros(3)
        for i in range(3):
            zp, zm = z.copy(), z.copy()
            zp[i] += step
            zm[i] -= step
            fd[i] = (weights(spec, zp, t).w[j] - weights(spec, zm, t).w[j]) / (2 * step)
        analytic = weight_gradient(spec, z, t, j)
        scale = max(np.max(np.abs(fd)), 1e-12)
        assert np.max(np.abs(analytic - fd)) <= 1e-5 * scale


def test_weight_time_derivative_trivial_cases():
    spec = single_gaussian(d=2)
    assert weight_time_derivative(spec, np.ones(2), 0.4, 0) == 0.0
    pair = symmetric_pair([0.9])
    for j in (0, 1):
        assert abs(weight_time_derivative(pair, np.zeros(1), 0.6, j)) <= 1e-14


def test_weight_time_derivative_matches_finite_differences(random_instance):
    spec = random_instance
    z = RngStream(32, 0).normal(3)
    t, step = 0.52, 1e-5
    for j in range(spec.n_components):
        fd = (weights(spec, z, t + step).w[j] - weights(spec, z, t - step).w[j]) / (2 * step)
        analytic = weight_time_derivative(spec, z, t, j)
        assert abs(analytic - fd) <= 1e-5 * max(abs(fd), 1e-10)


def test_weight_derivative_bounds_hold_at_probes(random_instance):
    # lemma-style envelopes scaled by w_j, probed at scattered points
    spec = random_instance
    lam_min, lam_max = spec.cov.lambda_min, spec.cov.lambda_max
    grad_const = 2.0 * spec.data_radius / min(lam_min, 0.5)
    time_const = (2.0 + 2.0 * lam_max) / min(lam_min**2, 0.25)
    rng = RngStream(33, 0)
    for _ in range(25):
        z = rng.normal(3) * 2.5
        t = float(rng.uniform(1)[0])
        w = weights(spec, z, t).w
        for j in range(spec.n_components):
            g = np.linalg.norm(weight_gradient(spec, z, t, j))
            assert g <= grad_const * w[j] + 1e-12
            dt = abs(weight_time_derivative(spec, z, t, j))
            bound = time_const * (np.linalg.norm(z) + spec.data_radius) ** 2 * w[j]
            assert dt <= bound + 1e-12


# ------------------------------------------------------------------- sampling


def test_sample_mixture_single_component_moments():
    spec = single_gaussian(d=3)
    x = sample_mixture(spec, 100_000, RngStream(40, 0))
    assert np.max(np.abs(x.mean(axis=0))) <= 0.02


def test_sample_mixture_symmetric_mean():
    spec = symmetric_pair([1.0, -2.0])
    x = sample_mixture(spec, 100_000, RngStream(41, 0))
    # per-coordinate std of the mixture is sqrt(1 + a_k^2)
    tol = 3.0 * np.sqrt(1.0 + np.array([1.0, 4.0])) / np.sqrt(100_000)
    assert np.all(np.abs(x.mean(axis=0)) <= tol)


def test_sample_mixture_deterministic():
    spec = symmetric_pair([0.5])
    a = sample_mixture(spec, 100, RngStream(42, 0))
    b = sample_mixture(spec, 100, RngStream(42, 0))
    assert np.array_equal(a, b)


def test_sample_mixture_respects_covariance():
    u = random_orthogonal(2, RngStream(43, 0))
    cov = CovarianceSpec.eigen_factored(u, np.array([0.25, 2.0]))
    spec = MixtureSpec(np.zeros((1, 2)), cov)
    x = sample_mixture(spec, 200_000, RngStream(43, 1))
    sample_cov = np.cov(x.T)
    assert np.max(np.abs(sample_cov - cov.dense())) <= 0.05
