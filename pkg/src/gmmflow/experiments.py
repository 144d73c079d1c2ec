"""Discretization-error sweeps: step-size, dimension, and smoothing scans.

Each sweep builds a mixture instance per grid cell, integrates a shared batch
of standard-normal initial states with explicit Euler at every step count in
the grid, and measures endpoint errors against a Heun reference on the same
initial states.  Initial states are drawn directly as eigenbasis coordinates
(a standard normal is rotation invariant); l2 errors are basis independent
and l-infinity sweeps are restricted to diagonal covariances, so no result
ever needs rotating back.

Every stream is derived hierarchically from the sweep seed, so a sweep is
reproducible byte-for-byte for any worker count.

CSV schema (one row per grid cell and norm, header included, LF endings):

    norm,d,K,h,sigma_tag,mean_error,std_error,n_traj,n_nonfinite
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .flow import SolveConfig, draw_initial_states, solve_endpoints_eig
from .gmm import MixtureSpec
from .linalg import (
    CovarianceSpec,
    RngStream,
    cycle5_spectrum,
    fold_seed,
    gaussian_vector,
    random_orthogonal,
)

MEAN_SAMPLERS = ("ball", "hypercube", "corners")
COV_KINDS = ("cycle5-spd", "cycle5-diag", "isotropic", "uniform-diag")
DIAGONAL_COV_KINDS = ("cycle5-diag", "isotropic", "uniform-diag")
NORMS = ("l2", "linf")

CSV_HEADER = "norm,d,K,h,sigma_tag,mean_error,std_error,n_traj,n_nonfinite"


@dataclass(frozen=True)
class SweepConfig:
    """Grid and instance parameters for one error sweep."""

    dims: tuple
    steps: tuple
    n_traj: int
    n_components: int = 10
    mean_radius: float = 1.0
    mean_sampler: str = "ball"
    cov_kind: str = "cycle5-spd"
    sigma_grid: tuple | None = None
    norm: str = "l2"
    ref_steps: int = 1000
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "steps", tuple(int(k) for k in self.steps))
        if self.sigma_grid is not None:
            object.__setattr__(self, "sigma_grid", tuple(float(s) for s in self.sigma_grid))
        if not self.dims or any(d < 1 for d in self.dims):
            raise ConfigError("dims must be a nonempty tuple of positive integers")
        if not self.steps or any(k < 1 for k in self.steps):
            raise ConfigError("steps must be a nonempty tuple of positive integers")
        if self.n_traj < 1:
            raise ConfigError("n_traj must be >= 1")
        if self.n_components < 1:
            raise ConfigError("n_components must be >= 1")
        if self.ref_steps <= max(self.steps):
            raise ConfigError("ref_steps must exceed every step count in the grid")
        if self.mean_sampler not in MEAN_SAMPLERS:
            raise ConfigError(f"unknown mean sampler {self.mean_sampler!r}")
        if self.cov_kind not in COV_KINDS:
            raise ConfigError(f"unknown covariance kind {self.cov_kind!r}")
        if self.norm not in NORMS:
            raise ConfigError(f"norm must be one of {NORMS}")
        if self.norm == "linf" and self.cov_kind not in DIAGONAL_COV_KINDS:
            raise ConfigError("the l-infinity norm requires a diagonal covariance kind")
        if self.cov_kind == "isotropic" and not self.sigma_grid:
            raise ConfigError("isotropic sweeps need a sigma grid")


@dataclass(frozen=True)
class ErrorRow:
    norm: str
    d: int
    steps: int
    h: float
    sigma_tag: str
    mean_error: float
    std_error: float
    n_traj: int
    n_nonfinite: int


@dataclass
class ErrorReport:
    config: SweepConfig
    rows: list = field(default_factory=list)
    trajectory_errors: dict = field(default_factory=dict)

    def filter(self, norm=None, d=None, steps=None, sigma_tag=None):
        out = []
        for r in self.rows:
            if norm is not None and r.norm != norm:
                continue
            if d is not None and r.d != d:
                continue
            if steps is not None and r.steps != steps:
                continue
            if sigma_tag is not None and r.sigma_tag != sigma_tag:
                continue
            out.append(r)
        return out

    def to_csv(self) -> str:
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.norm},{r.d},{r.steps},{r.h!r},{r.sigma_tag},"
                f"{r.mean_error!r},{r.std_error!r},{r.n_traj},{r.n_nonfinite}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(self.to_csv())


def sample_means(kind: str, count: int, scale: float, d: int, rng: RngStream) -> np.ndarray:
    """Component means: uniform in the radius-`scale` ball, uniform on the
    hypercube [-scale, scale]^d, or independent +-1 corner coordinates."""
    if count < 1:
        raise ConfigError("count must be >= 1")
    if kind == "ball":
        if scale <= 0.0:
            raise ConfigError("ball radius must be positive")
        out = np.empty((count, d))
        for j in range(count):
            direction = gaussian_vector(d, rng)
            direction /= np.linalg.norm(direction)
            radius = scale * float(rng.uniform(1)[0]) ** (1.0 / d)
            out[j] = radius * direction
        return out
    if kind == "hypercube":
        if scale <= 0.0:
            raise ConfigError("hypercube half-width must be positive")
        u = rng.uniform(count * d).reshape(count, d)
        return (2.0 * u - 1.0) * scale
    if kind == "corners":
        u = rng.uniform(count * d).reshape(count, d)
        return np.where(u > 0.5, 1.0, -1.0)
    raise ConfigError(f"unknown mean sampler {kind!r}")


def build_instance(d: int, n_components: int, mean_radius: float, mean_sampler: str,
                   cov_kind: str, seed: int, sigma: float | None = None) -> MixtureSpec:
    """One mixture instance from a seed: stream 0 draws the means, stream 1
    the orthogonal basis, stream 2 any extra spectrum randomness."""
    means = sample_means(mean_sampler, n_components, mean_radius, d, RngStream(seed, 0))
    if cov_kind == "cycle5-spd":
        cov = CovarianceSpec.eigen_factored(random_orthogonal(d, RngStream(seed, 1)), cycle5_spectrum(d))
    elif cov_kind == "cycle5-diag":
        cov = CovarianceSpec.diagonal(cycle5_spectrum(d))
    elif cov_kind == "isotropic":
        if sigma is None:
            raise ConfigError("isotropic covariance needs sigma")
        cov = CovarianceSpec.isotropic(sigma, d)
    elif cov_kind == "uniform-diag":
        cov = CovarianceSpec.diagonal(0.2 + 0.2 * RngStream(seed, 2).uniform(d))
    else:
        raise ConfigError(f"unknown covariance kind {cov_kind!r}")
    return MixtureSpec(means, cov)


def _error_rows(diff: np.ndarray, mask: np.ndarray, d: int, steps: int, sigma_tag: str,
                keep: dict | None):
    rows = []
    n_nonfinite = int(diff.shape[0] - np.count_nonzero(mask))
    good = diff[mask]
    per_norm = {
        "l2": np.linalg.norm(good, axis=1),
        "linf": np.max(np.abs(good), axis=1) if good.size else np.empty(0),
    }
    for norm in NORMS:
        vals = per_norm[norm]
        mean = float(np.mean(vals)) if vals.size else float("nan")
        std = float(np.std(vals, ddof=1)) if vals.size > 1 else 0.0
        rows.append(
            ErrorRow(norm, d, steps, 1.0 / steps, sigma_tag, mean, std, int(vals.size), n_nonfinite)
        )
        if keep is not None:
            keep[(norm, d, steps, sigma_tag)] = vals
    return rows


def _cell_errors(spec, z1_eig, steps_grid, ref_steps, workers, sigma_tag, keep):
    """Euler-vs-Heun endpoint errors for one instance over a step grid."""
    ref, ref_mask = solve_endpoints_eig(
        spec, z1_eig, SolveConfig(ref_steps, "heun"), workers=workers, strict=False
    )
    rows = []
    for steps in steps_grid:
        end, mask = solve_endpoints_eig(
            spec, z1_eig, SolveConfig(steps, "euler"), workers=workers, strict=False
        )
        rows.extend(
            _error_rows(end - ref, ref_mask & mask, spec.d, steps, sigma_tag, keep)
        )
    return rows


def _sigma_tag(cfg: SweepConfig, sigma=None) -> str:
    if cfg.cov_kind == "isotropic":
        return repr(float(sigma))
    return cfg.cov_kind


def run_error_sweep(cfg: SweepConfig, keep_trajectory_errors: bool = False) -> ErrorReport:
    """Dimension x step-count sweep; a fresh instance and fresh initial
    states per dimension, the Heun reference shared across the step grid."""
    if cfg.cov_kind == "isotropic":
        raise ConfigError("use run_sigma_sweep for isotropic grids")
    report = ErrorReport(cfg)
    keep = report.trajectory_errors if keep_trajectory_errors else None
    for i, d in enumerate(cfg.dims):
        cell_seed = fold_seed(cfg.seed, i)
        spec = build_instance(
            d, cfg.n_components, cfg.mean_radius, cfg.mean_sampler, cfg.cov_kind,
            seed=fold_seed(cell_seed, 0),
        )
        z1_eig = draw_initial_states(d, cfg.n_traj, fold_seed(cell_seed, 1))
        report.rows.extend(
            _cell_errors(spec, z1_eig, cfg.steps, cfg.ref_steps, cfg.workers, _sigma_tag(cfg), keep)
        )
    return report


def run_sigma_sweep(cfg: SweepConfig, keep_trajectory_errors: bool = False) -> ErrorReport:
    """Smoothing scan at fixed dimension and step count.

    Means and initial states are shared across the sigma grid so the scan
    isolates the covariance scale.
    """
    if cfg.cov_kind != "isotropic" or not cfg.sigma_grid:
        raise ConfigError("run_sigma_sweep needs an isotropic covariance and a sigma grid")
    if len(cfg.dims) != 1 or len(cfg.steps) != 1:
        raise ConfigError("sigma sweeps fix one dimension and one step count")
    d, steps = cfg.dims[0], cfg.steps[0]
    report = ErrorReport(cfg)
    keep = report.trajectory_errors if keep_trajectory_errors else None
    means = sample_means(
        cfg.mean_sampler, cfg.n_components, cfg.mean_radius, d, RngStream(fold_seed(cfg.seed, 0), 0)
    )
    z1_eig = draw_initial_states(d, cfg.n_traj, fold_seed(cfg.seed, 1))
    for sigma in cfg.sigma_grid:
        spec = MixtureSpec(means, CovarianceSpec.isotropic(sigma, d))
        report.rows.extend(
            _cell_errors(
                spec, z1_eig, (steps,), cfg.ref_steps, cfg.workers, _sigma_tag(cfg, sigma), keep
            )
        )
    return report


def _linreg(x: np.ndarray, y: np.ndarray):
    design = np.column_stack([x, np.ones_like(x)])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0 if ss_res <= 1e-24 else 0.0
    else:
        r2 = 1.0 - ss_res / ss_tot
    return float(coef[0]), float(coef[1]), r2


def _check_points(points, positive_x=False, positive_y=False):
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 2:
        raise ConfigError("need at least two points")
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    if np.unique(xs).size < 2:
        raise ConfigError("degenerate x-range")
    if positive_x and np.any(xs <= 0.0):
        raise ConfigError("x values must be positive")
    if positive_y and np.any(ys <= 0.0):
        raise ConfigError("y values must be positive")
    return xs, ys


def fit_loglog_slope(points):
    """Least-squares slope of ln y against ln x; returns (slope, intercept, r2)."""
    xs, ys = _check_points(points, positive_x=True, positive_y=True)
    return _linreg(np.log(xs), np.log(ys))


def fit_log_growth(points):
    """Fit y = a + b ln d; returns (a, b, r2)."""
    xs, ys = _check_points(points, positive_x=True)
    slope, intercept, r2 = _linreg(np.log(xs), ys)
    return intercept, slope, r2


def fit_linear_growth(points):
    """Fit y = a + b d; returns (a, b, r2)."""
    xs, ys = _check_points(points)
    slope, intercept, r2 = _linreg(xs, ys)
    return intercept, slope, r2
