"""Gaussian-mixture target distribution and its exact noised-time score.

The mixture has J equally weighted components N(mu_j, Sigma) with one shared
SPD covariance.  At diffusion time t the marginal is again a mixture with
means (1-t) mu_j and covariance M_t = (1-t)^2 Sigma + t I, which stays SPD on
all of [0, 1].  All algebra happens in the eigenbasis of Sigma, where M_t is
diagonal, so every evaluation is O(J d) after a one-time rotation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .linalg import CovarianceSpec, RngStream

_LOG_TWO_PI = np.log(2.0 * np.pi)


def _check_time(t: float) -> float:
    t = float(t)
    if not 0.0 <= t <= 1.0:
        raise ConfigError(f"time must lie in [0, 1], got {t}")
    return t


@dataclass(frozen=True, eq=False)
class MixtureSpec:
    """Equal-weight Gaussian mixture: J means sharing one SPD covariance.

    `data_radius` bounds the means in l2 norm; it defaults to the radius of
    the smallest origin-centered ball containing them.
    """

    means: np.ndarray
    cov: CovarianceSpec
    data_radius: float = -1.0

    def __post_init__(self):
        means = np.ascontiguousarray(self.means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 1:
            raise ConfigError("means must be a (J, d) array with J >= 1")
        if means.shape[1] != self.cov.d:
            raise ConfigError(
                f"means dimension {means.shape[1]} does not match covariance dimension {self.cov.d}"
            )
        norms = np.linalg.norm(means, axis=1)
        radius = float(self.data_radius)
        if radius < 0.0:
            radius = float(np.max(norms))
        elif float(np.max(norms)) > radius * (1.0 + 1e-9) + 1e-12:
            raise ConfigError("a mean lies outside the declared data radius")
        means.flags.writeable = False
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "data_radius", radius)
        means_eig = np.ascontiguousarray(self.cov.to_eigenbasis(means))
        means_eig.flags.writeable = False
        object.__setattr__(self, "_means_eig", means_eig)

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    @property
    def means_eig(self) -> np.ndarray:
        """Means expressed in the covariance eigenbasis."""
        return self._means_eig


@dataclass(frozen=True)
class TimeCovariance:
    """Diagonal of M_t = (1-t)^2 Sigma + t I in the eigenbasis of Sigma."""

    t: float
    diag: np.ndarray

    def __post_init__(self):
        if not np.all(self.diag > 0.0):
            raise ConfigError("time covariance lost positivity")


@dataclass(frozen=True)
class WeightVector:
    """Component responsibilities at one point: raw log kernels and softmax weights."""

    log_e: np.ndarray
    w: np.ndarray


def time_diag(cov: CovarianceSpec, t: float) -> np.ndarray:
    """Eigenvalues of (1-t)^2 Sigma + t I."""
    u = 1.0 - t
    return u * u * cov.eigenvalues + t


def time_covariance(spec: MixtureSpec, t: float) -> TimeCovariance:
    t = _check_time(t)
    return TimeCovariance(t, time_diag(spec.cov, t))


def _as_batch(z: np.ndarray, d: int):
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[np.newaxis, :] if single else z
    if zb.ndim != 2 or zb.shape[1] != d:
        raise ConfigError(f"state has dimension {z.shape}, expected {d}")
    return zb, single


def log_weight_matrix(spec: MixtureSpec, z_eig: np.ndarray, t: float, m: np.ndarray | None = None) -> np.ndarray:
    """log e_j for a batch of eigenbasis states; shape (n, J).

    Uses the expanded quadratic form so the inner products become one matrix
    product over components instead of an (n, J, d) temporary.
    """
    if m is None:
        m = time_diag(spec.cov, t)
    inv_m = 1.0 / m
    centers = (1.0 - t) * spec.means_eig
    z_quad = (z_eig * z_eig) @ inv_m
    cross = (z_eig * inv_m[np.newaxis, :]) @ centers.T
    c_quad = (centers * centers) @ inv_m
    return -0.5 * (z_quad[:, np.newaxis] - 2.0 * cross + c_quad[np.newaxis, :])


def softmax_rows(log_e: np.ndarray) -> np.ndarray:
    shifted = log_e - np.max(log_e, axis=1, keepdims=True)
    w = np.exp(shifted)
    w /= np.sum(w, axis=1, keepdims=True)
    return w


def weights(spec: MixtureSpec, z: np.ndarray, t: float) -> WeightVector:
    """Normalized component weights w_j(z, t) with max-subtracted softmax."""
    t = _check_time(t)
    zb, single = _as_batch(z, spec.d)
    if not single:
        raise ConfigError("weights expects a single state vector")
    log_e = log_weight_matrix(spec, spec.cov.to_eigenbasis(zb), t)
    return WeightVector(log_e[0], softmax_rows(log_e)[0])


def marginal_log_density(spec: MixtureSpec, z: np.ndarray, t: float):
    """log of the time-t mixture density, evaluated fully in the log domain."""
    t = _check_time(t)
    zb, single = _as_batch(z, spec.d)
    m = time_diag(spec.cov, t)
    log_e = log_weight_matrix(spec, spec.cov.to_eigenbasis(zb), t, m)
    peak = np.max(log_e, axis=1)
    lse = peak + np.log(np.sum(np.exp(log_e - peak[:, np.newaxis]), axis=1))
    log_norm = -0.5 * float(np.sum(np.log(m))) - 0.5 * spec.d * _LOG_TWO_PI
    out = lse - np.log(spec.n_components) + log_norm
    return float(out[0]) if single else out


def exact_score(spec: MixtureSpec, z: np.ndarray, t: float) -> np.ndarray:
    """Gradient of the time-t log density:

    S(z, t) = -M_t^{-1} z + (1-t) M_t^{-1} sum_j mu_j w_j(z, t).
    """
    t = _check_time(t)
    zb, single = _as_batch(z, spec.d)
    z_eig = spec.cov.to_eigenbasis(zb)
    m = time_diag(spec.cov, t)
    w = softmax_rows(log_weight_matrix(spec, z_eig, t, m))
    score_eig = (-z_eig + (1.0 - t) * (w @ spec.means_eig)) / m[np.newaxis, :]
    score = spec.cov.from_eigenbasis(score_eig)
    return score[0] if single else score


def mc_score(data: np.ndarray, z: np.ndarray, t: float) -> np.ndarray:
    """Training-free Monte-Carlo score from raw samples (point-mass kernels).

    S(z, t) = sum_j -(z - (1-t) x_j) / t * softmax_j(-||z - (1-t) x_j||^2 / (2t)).
    Rejects t = 0, where the conditional kernel is singular.
    """
    t = float(t)
    if not 0.0 < t <= 1.0:
        raise ConfigError(f"mc_score needs t in (0, 1], got {t}")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 1:
        raise ConfigError("data must be a nonempty (n, d) array")
    zb, single = _as_batch(z, data.shape[1])
    centers = (1.0 - t) * data
    z_quad = np.sum(zb * zb, axis=1)
    cross = zb @ centers.T
    c_quad = np.sum(centers * centers, axis=1)
    log_w = -(z_quad[:, np.newaxis] - 2.0 * cross + c_quad[np.newaxis, :]) / (2.0 * t)
    w = softmax_rows(log_w)
    score = (-zb + w @ centers) / t
    return score[0] if single else score


def weight_gradient(spec: MixtureSpec, z: np.ndarray, t: float, j: int) -> np.ndarray:
    """Analytic spatial gradient of w_j:

    grad w_j = (1-t) M_t^{-1} w_j (mu_j - sum_j' mu_j' w_j').
    """
    t = _check_time(t)
    zb, single = _as_batch(z, spec.d)
    if not single:
        raise ConfigError("weight_gradient expects a single state vector")
    if not 0 <= j < spec.n_components:
        raise ConfigError(f"component index {j} out of range")
    z_eig = spec.cov.to_eigenbasis(zb)
    m = time_diag(spec.cov, t)
    w = softmax_rows(log_weight_matrix(spec, z_eig, t, m))[0]
    centered = spec.means_eig[j] - w @ spec.means_eig
    grad_eig = (1.0 - t) * w[j] * centered / m
    return spec.cov.from_eigenbasis(grad_eig)


def weight_time_derivative(spec: MixtureSpec, z: np.ndarray, t: float, j: int) -> float:
    """Analytic time derivative of w_j at fixed z.

    With l_j = log e_j one has dw_j/dt = w_j (dl_j - sum_j' w_j' dl_j'),
    and dl_j = -q_j' M^{-1} mu_j + 0.5 q_j' M^{-1} (I - 2(1-t) Sigma) M^{-1} q_j
    for q_j = z - (1-t) mu_j, all diagonal in the eigenbasis.
    """
    t = _check_time(t)
    zb, single = _as_batch(z, spec.d)
    if not single:
        raise ConfigError("weight_time_derivative expects a single state vector")
    if not 0 <= j < spec.n_components:
        raise ConfigError(f"component index {j} out of range")
    z_eig = spec.cov.to_eigenbasis(zb)[0]
    m = time_diag(spec.cov, t)
    w = softmax_rows(log_weight_matrix(spec, z_eig[np.newaxis, :], t, m))[0]
    q = z_eig[np.newaxis, :] - (1.0 - t) * spec.means_eig
    mdot = 1.0 - 2.0 * (1.0 - t) * spec.cov.eigenvalues
    dlog = -np.sum(q * spec.means_eig / m[np.newaxis, :], axis=1) + 0.5 * np.sum(
        q * q * (mdot / (m * m))[np.newaxis, :], axis=1
    )
    return float(w[j] * (dlog[j] - float(w @ dlog)))


def sample_mixture(spec: MixtureSpec, n: int, rng: RngStream) -> np.ndarray:
    """n exact draws: a uniform component index, then N(mu_j, Sigma) noise.

    Component indices are drawn first, then all Gaussian coordinates, so the
    stream layout is fixed regardless of which components come up.
    """
    if n < 1:
        raise ConfigError(f"sample count must be >= 1, got {n}")
    idx = rng.integers(n, spec.n_components)
    eps = rng.normal(n * spec.d).reshape(n, spec.d)
    noise_eig = eps * np.sqrt(spec.cov.eigenvalues)[np.newaxis, :]
    return spec.means[idx] + spec.cov.from_eigenbasis(noise_eig)
