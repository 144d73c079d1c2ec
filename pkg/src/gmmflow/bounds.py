"""Closed-form constants bounding the reverse flow and its discretization.

These are the quantities the verification suites compare empirical probes
against: the pathwise envelope factor, the weight-derivative constants, the
uniform drift Lipschitz constant, and the stiffness curve L(sigma) of the
drift's linear part for isotropic covariances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class BoundInputs:
    lambda_min: float
    lambda_max: float
    data_radius: float
    z1_norm: float = 0.0
    h: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.lambda_min <= self.lambda_max:
            raise ConfigError("need 0 < lambda_min <= lambda_max")
        if self.data_radius < 0.0 or self.z1_norm < 0.0 or self.h < 0.0:
            raise ConfigError("data_radius, z1_norm, h must be nonnegative")


def drift_lipschitz(b: BoundInputs) -> float:
    """Uniform-in-time Lipschitz constant of the drift in z:

    (1 + 2 lambda_max + 8 M^2) / (4 min(lambda_min^2, 1/4)).
    """
    num = 1.0 + 2.0 * b.lambda_max + 8.0 * b.data_radius**2
    return num / (4.0 * min(b.lambda_min**2, 0.25))


def linear_part_lipschitz(sigma: float) -> float:
    """Bound on sup_t of the drift's linear part for Sigma = sigma I:

    (1 + 2 sigma) / (2 min(sigma, 1/2)); minimized exactly at sigma = 1/2.
    """
    if sigma <= 0.0:
        raise ConfigError(f"sigma must be positive, got {sigma}")
    return (1.0 + 2.0 * sigma) / (2.0 * min(sigma, 0.5))


def envelope_kappa(b: BoundInputs) -> float:
    """Prefactor of the pathwise envelope: max(sqrt(lambda_max), 1) / min(sqrt(lambda_min), 1/4)."""
    return max(np.sqrt(b.lambda_max), 1.0) / min(np.sqrt(b.lambda_min), 0.25)


def envelope_bound(b: BoundInputs) -> float:
    """Uniform-in-time bound on ||z_t||: kappa * (M + ||z_1||)."""
    return envelope_kappa(b) * (b.data_radius + b.z1_norm)


def weight_bound_constants(b: BoundInputs):
    """(gradient constant, time-derivative constant) for the softmax weights:

    ||grad w_j|| <= 2M / min(lambda_min, 1/2) * w_j and
    |dw_j/dt| <= (2 + 2 lambda_max) / min(lambda_min^2, 1/4) * (||z|| + M)^2 w_j.
    """
    grad_const = 2.0 * b.data_radius / min(b.lambda_min, 0.5)
    time_const = (2.0 + 2.0 * b.lambda_max) / min(b.lambda_min**2, 0.25)
    return grad_const, time_const


def linear_part_curve(sigmas) -> np.ndarray:
    """L(sigma) sampled on a grid; rows (sigma, L)."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    if sigmas.ndim != 1 or sigmas.size < 1:
        raise ConfigError("sigma grid must be a nonempty 1-d array")
    values = np.array([linear_part_lipschitz(float(s)) for s in sigmas])
    return np.column_stack([sigmas, values])


def write_lcurve_csv(path, sigmas) -> None:
    """Export the L(sigma) curve as CSV with columns sigma, L."""
    curve = linear_part_curve(sigmas)
    lines = ["sigma,L"]
    for sigma, value in curve:
        lines.append(f"{float(sigma)!r},{float(value)!r}")
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
