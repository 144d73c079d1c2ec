import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gmmflow.errors import ConfigError, JacobiConvergenceError
from gmmflow.linalg import (
    CovarianceSpec,
    RngStream,
    cycle5_spectrum,
    fold_seed,
    gaussian_vector,
    random_orthogonal,
    substream,
    symmetric_eigendecompose,
)

# ---------------------------------------------------------------- rng streams


def test_stream_is_reproducible():
    a = RngStream(1234, 7).uniform(64)
    b = RngStream(1234, 7).uniform(64)
    assert np.array_equal(a, b)


def test_uniform_draws_are_counter_based():
    # batching must not change the sequence
    stream = RngStream(99, 3)
    first = stream.uniform(5)
    rest = stream.uniform(3)
    assert np.array_equal(np.concatenate([first, rest]), RngStream(99, 3).uniform(8))


def test_uniforms_live_in_half_open_unit_interval():
    u = RngStream(5, 0).uniform(10000)
    assert np.all(u > 0.0) and np.all(u <= 1.0)


@given(seed=st.integers(min_value=0, max_value=2**64 - 1),
       i=st.integers(min_value=0, max_value=2**32),
       j=st.integers(min_value=0, max_value=2**32))
@settings(max_examples=40, deadline=None)
def test_distinct_stream_indices_differ(seed, i, j):
    if i == j:
        return
    a = substream(seed, i).uniform(4)
    b = substream(seed, j).uniform(4)
    assert not np.array_equal(a, b)


def test_fold_seed_changes_with_both_arguments():
    base = fold_seed(42, 0)
    assert base != fold_seed(42, 1)
    assert base != fold_seed(43, 0)
    assert base == fold_seed(42, 0)


def test_gaussian_vector_moments():
    x = gaussian_vector(100_000, RngStream(7, 0))
    assert abs(x.mean()) <= 0.02
    assert abs(x.var() - 1.0) <= 0.02


def test_gaussian_vector_determinism_and_independence():
    a = gaussian_vector(16, RngStream(11, 0))
    b = gaussian_vector(16, RngStream(11, 0))
    c = gaussian_vector(16, RngStream(11, 1))
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_gaussian_vector_rejects_bad_dimension():
    with pytest.raises(ConfigError):
        gaussian_vector(0, RngStream(1, 0))


def test_integers_cover_range_uniformly():
    idx = RngStream(3, 0).integers(60_000, 4)
    counts = np.bincount(idx, minlength=4)
    assert idx.min() >= 0 and idx.max() <= 3
    assert np.all(np.abs(counts / 60_000 - 0.25) < 0.02)


# ------------------------------------------------------------------- spectra


def test_cycle5_base_pattern():
    assert np.allclose(cycle5_spectrum(5), [0.1, 0.2, 0.3, 0.4, 0.5])


def test_cycle5_periodic_extension():
    assert np.allclose(cycle5_spectrum(7), [0.1, 0.2, 0.3, 0.4, 0.5, 0.1, 0.2])


def test_cycle5_truncation():
    assert np.allclose(cycle5_spectrum(1), [0.1])


# -------------------------------------------------------- orthogonal factors


def test_random_orthogonal_1d_is_sign():
    u = random_orthogonal(1, RngStream(2, 0))
    assert u.shape == (1, 1)
    assert abs(abs(u[0, 0]) - 1.0) < 1e-15


def test_random_orthogonal_residual():
    u = random_orthogonal(8, RngStream(2, 1))
    assert np.max(np.abs(u.T @ u - np.eye(8))) <= 1e-12


def test_random_orthogonal_deterministic():
    a = random_orthogonal(6, RngStream(9, 4))
    b = random_orthogonal(6, RngStream(9, 4))
    assert np.array_equal(a, b)


def test_orthogonality_survives_composition():
    u = random_orthogonal(5, RngStream(1, 0))
    v = random_orthogonal(5, RngStream(1, 1))
    w = u @ v
    assert np.max(np.abs(w.T @ w - np.eye(5))) <= 1e-12


# ----------------------------------------------------------- jacobi eigensolver


def test_eigendecompose_already_diagonal():
    u, lam = symmetric_eigendecompose(np.diag([0.1, 0.5]))
    assert np.allclose(lam, [0.1, 0.5])
    assert np.max(np.abs(np.abs(u) - np.eye(2))) < 1e-12


def test_eigendecompose_identity():
    u, lam = symmetric_eigendecompose(np.eye(4))
    assert np.allclose(lam, np.ones(4))
    assert np.max(np.abs(u.T @ u - np.eye(4))) < 1e-12


def test_eigendecompose_random_spd_reconstructs():
    # oracle: direct matrix multiplication of the factors
    rng = RngStream(21, 0)
    g = rng.normal(25).reshape(5, 5)
    a = g @ g.T + 0.5 * np.eye(5)
    u, lam = symmetric_eigendecompose(a)
    assert np.max(np.abs(u @ np.diag(lam) @ u.T - a)) <= 1e-10 * np.max(np.abs(a))
    assert np.all(np.diff(lam) >= 0)
    assert np.max(np.abs(u.T @ u - np.eye(5))) < 1e-12


def test_eigendecompose_rejects_nonsymmetric():
    with pytest.raises(ConfigError):
        symmetric_eigendecompose(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_eigendecompose_sweep_cap():
    rng = RngStream(22, 0)
    g = rng.normal(16).reshape(4, 4)
    a = g @ g.T + np.eye(4)
    with pytest.raises(JacobiConvergenceError):
        symmetric_eigendecompose(a, max_sweeps=0)


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=1000))
@settings(max_examples=25, deadline=None)
def test_eigendecompose_property_random_spd(d, seed):
    rng = RngStream(seed, 0)
    g = rng.normal(d * d).reshape(d, d)
    a = g @ g.T + 0.1 * np.eye(d)
    u, lam = symmetric_eigendecompose(a)
    assert np.max(np.abs(u @ np.diag(lam) @ u.T - a)) <= 1e-10 * max(1.0, np.max(np.abs(a)))


# ------------------------------------------------------------ covariance spec


def test_covariance_exposes_spectrum_extremes():
    cov = CovarianceSpec.diagonal([0.4, 0.1, 0.3])
    assert cov.lambda_min == pytest.approx(0.1)
    assert cov.lambda_max == pytest.approx(0.4)
    assert cov.d == 3


def test_covariance_rejects_nonpositive_eigenvalues():
    with pytest.raises(ConfigError):
        CovarianceSpec.diagonal([0.5, 0.0])
    with pytest.raises(ConfigError):
        CovarianceSpec.isotropic(-1.0, 3)


def test_covariance_rejects_nonorthogonal_basis():
    with pytest.raises(ConfigError):
        CovarianceSpec.eigen_factored(np.array([[1.0, 0.1], [0.0, 1.0]]), [0.2, 0.3])


def test_covariance_from_dense_roundtrip():
    u = random_orthogonal(4, RngStream(17, 0))
    lam = np.array([0.2, 0.5, 0.9, 1.4])
    dense = (u * lam) @ u.T
    cov = CovarianceSpec.from_dense(dense)
    assert np.max(np.abs(cov.dense() - dense)) <= 1e-10


def test_covariance_basis_rotations_are_inverses():
    u = random_orthogonal(5, RngStream(18, 0))
    cov = CovarianceSpec.eigen_factored(u, cycle5_spectrum(5))
    x = RngStream(18, 1).normal(5)
    assert np.allclose(cov.from_eigenbasis(cov.to_eigenbasis(x)), x, atol=1e-12)


def test_covariance_arrays_are_frozen():
    cov = CovarianceSpec.diagonal([0.2, 0.3])
    with pytest.raises(ValueError):
        cov.eigenvalues[0] = 1.0
