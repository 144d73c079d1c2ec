"""Reverse probability-flow ODE and its explicit integrators.

After substituting the exact mixture score, the reverse ODE reads

    dz/dt = 0.5 (I - 2(1-t) Sigma) M_t^{-1} z
            - 0.5 (1+t) M_t^{-1} sum_j mu_j w_j(z, t),

which is regular on all of [0, 1] (the raw drift/score singularities at t=1
cancel).  Integration runs backward on the grid t_k = (K - k)/K from t=1 to
t=0 and is carried out in the eigenbasis of Sigma, where each step costs
O(J d) per trajectory.

Batch solving is deterministic independent of the worker count: trajectories
are partitioned into fixed-size chunks (a constant, never derived from the
worker count), each chunk is integrated independently, and results are
reassembled by trajectory index.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NonFiniteStateError
from .gmm import MixtureSpec, log_weight_matrix, softmax_rows, time_diag, _check_time
from .linalg import gaussian_vector, substream

CHUNK_TRAJECTORIES = 256


@dataclass(frozen=True)
class SolveConfig:
    """Step count K (h = 1/K), integrator kind, and path recording."""

    steps: int
    integrator: str = "euler"
    record_path: bool = False

    def __post_init__(self):
        if self.steps < 1:
            raise ConfigError(f"steps must be >= 1, got {self.steps}")
        if self.integrator not in ("euler", "heun"):
            raise ConfigError(f"unknown integrator {self.integrator!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.steps

    def time_grid(self) -> np.ndarray:
        """Backward grid t_k = (K - k)/K, k = 0..K; exactly 1 at k=0 and 0 at k=K."""
        k = np.arange(self.steps + 1)
        return (self.steps - k) / self.steps


@dataclass
class SolveResult:
    z_final: np.ndarray
    path: np.ndarray | None = None
    trajectory_index: int = 0


def drift_eig(spec: MixtureSpec, z_eig: np.ndarray, t: float) -> np.ndarray:
    """Reverse-ODE drift on eigenbasis coordinates; z_eig is (n, d)."""
    m = time_diag(spec.cov, t)
    linear = 0.5 * (1.0 - 2.0 * (1.0 - t) * spec.cov.eigenvalues) / m
    w = softmax_rows(log_weight_matrix(spec, z_eig, t, m))
    pull = w @ (spec.means_eig / m[np.newaxis, :])
    return linear[np.newaxis, :] * z_eig - (0.5 * (1.0 + t)) * pull


def drift(spec: MixtureSpec, z: np.ndarray, t: float) -> np.ndarray:
    """Drift of the singularity-free reverse ODE; accepts (d,) or (n, d)."""
    t = _check_time(t)
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zb = z[np.newaxis, :] if single else z
    if zb.shape[1] != spec.d:
        raise ConfigError(f"state dimension {zb.shape[1]} does not match spec dimension {spec.d}")
    out = spec.cov.from_eigenbasis(drift_eig(spec, spec.cov.to_eigenbasis(zb), t))
    return out[0] if single else out


def _advance(spec, z, config, k):
    """One integrator step from node k to k+1 on eigenbasis coordinates."""
    K = config.steps
    h = config.h
    t0 = (K - k) / K
    if config.integrator == "euler":
        return z - h * drift_eig(spec, z, t0)
    t1 = (K - k - 1) / K
    f0 = drift_eig(spec, z, t0)
    f1 = drift_eig(spec, z - h * f0, t1)
    return z - 0.5 * h * (f0 + f1)


def integrate_eigenbasis(spec: MixtureSpec, z1_eig: np.ndarray, config: SolveConfig,
                         strict: bool = True):
    """Integrate a batch from t=1 to t=0 in the eigenbasis.

    strict=True raises NonFiniteStateError at the first bad step (with step
    and trajectory index); strict=False runs to the end with overflow
    silenced and returns (endpoints, finite_mask, path).
    """
    z = np.array(z1_eig, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != spec.d:
        raise ConfigError("initial states must be (n, d)")
    path = None
    if config.record_path:
        path = np.empty((z.shape[0], config.steps + 1, spec.d))
        path[:, 0, :] = z
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for k in range(config.steps):
            z = _advance(spec, z, config, k)
            if strict and not np.all(np.isfinite(z)):
                bad = int(np.flatnonzero(~np.isfinite(z).all(axis=1))[0])
                raise NonFiniteStateError(
                    f"non-finite state in trajectory {bad} at step {k + 1}",
                    step=k + 1,
                    trajectory=bad,
                )
            if path is not None:
                path[:, k + 1, :] = z
    mask = np.isfinite(z).all(axis=1)
    return z, mask, path


def _solve_single(spec, z1, config, expected_integrator):
    if config.integrator != expected_integrator:
        raise ConfigError(f"config.integrator is {config.integrator!r}, expected {expected_integrator!r}")
    z1 = np.asarray(z1, dtype=np.float64)
    if z1.shape != (spec.d,):
        raise ConfigError(f"initial state must have shape ({spec.d},)")
    z1_eig = spec.cov.to_eigenbasis(z1)
    z, _, path = integrate_eigenbasis(spec, z1_eig[np.newaxis, :], config, strict=True)
    z_final = spec.cov.from_eigenbasis(z)[0]
    out_path = None
    if path is not None:
        out_path = spec.cov.from_eigenbasis(path[0])
    return SolveResult(z_final=z_final, path=out_path)


def euler_solve(spec: MixtureSpec, z1: np.ndarray, config: SolveConfig) -> SolveResult:
    """Explicit Euler from t=1 to t=0, drift evaluated at the larger-t node."""
    return _solve_single(spec, z1, config, "euler")


def heun_solve(spec: MixtureSpec, z1: np.ndarray, config: SolveConfig) -> SolveResult:
    """Explicit trapezoidal (Heun) scheme: Euler predictor, averaged corrector."""
    return _solve_single(spec, z1, config, "heun")


def closed_form_single_component(spec: MixtureSpec, z1: np.ndarray, t: float) -> np.ndarray:
    """Exact reverse-ODE solution for a single-component mixture:

    z_t = M_t^{1/2} z_1 + (1-t) mu.  Accepts (d,) or (n, d) initial states.
    """
    if spec.n_components != 1:
        raise ConfigError("closed form requires a single-component mixture")
    t = _check_time(t)
    z1 = np.asarray(z1, dtype=np.float64)
    single = z1.ndim == 1
    zb = z1[np.newaxis, :] if single else z1
    scale = np.sqrt(time_diag(spec.cov, t))
    z_eig = spec.cov.to_eigenbasis(zb) * scale[np.newaxis, :] + (1.0 - t) * spec.means_eig[0]
    out = spec.cov.from_eigenbasis(z_eig)
    return out[0] if single else out


def draw_initial_states(d: int, n_traj: int, seed: int) -> np.ndarray:
    """Stack of standard-normal initial conditions; trajectory m uses substream m."""
    out = np.empty((n_traj, d))
    for m in range(n_traj):
        out[m] = gaussian_vector(d, substream(seed, m))
    return out


def _chunk_ranges(n: int, chunk: int):
    return [(lo, min(lo + chunk, n)) for lo in range(0, n, chunk)]


def solve_endpoints_eig(spec: MixtureSpec, z1_eig: np.ndarray, config: SolveConfig,
                        workers: int = 1, strict: bool = True,
                        chunk: int = CHUNK_TRAJECTORIES):
    """Chunked batch integration in the eigenbasis; returns (endpoints, mask).

    The chunk partition depends only on the batch size, so any worker count
    produces bit-identical output.
    """
    n = z1_eig.shape[0]
    ranges = _chunk_ranges(n, chunk)
    endpoints = np.empty_like(z1_eig)
    mask = np.empty(n, dtype=bool)

    def run(lo_hi):
        lo, hi = lo_hi
        try:
            z, ok, _ = integrate_eigenbasis(spec, z1_eig[lo:hi], config, strict=strict)
        except NonFiniteStateError as err:
            raise NonFiniteStateError(
                f"non-finite state in trajectory {lo + err.trajectory} at step {err.step}",
                step=err.step,
                trajectory=lo + err.trajectory,
            ) from None
        return lo, hi, z, ok

    if workers <= 1 or len(ranges) <= 1:
        results = map(run, ranges)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, ranges))
    for lo, hi, z, ok in results:
        endpoints[lo:hi] = z
        mask[lo:hi] = ok
    return endpoints, mask


def batch_solve(spec: MixtureSpec, n_traj: int, config: SolveConfig, seed: int,
                workers: int = 1) -> list[SolveResult]:
    """Solve n_traj reverse-ODE trajectories from seeded standard-normal draws.

    Trajectory m starts from substream(seed, m); results are ordered by m and
    identical for any worker count.
    """
    if n_traj < 1:
        raise ConfigError(f"n_traj must be >= 1, got {n_traj}")
    z1 = draw_initial_states(spec.d, n_traj, seed)
    z1_eig = spec.cov.to_eigenbasis(z1)
    if config.record_path:
        paths = np.empty((n_traj, config.steps + 1, spec.d))
        endpoints = np.empty_like(z1_eig)
        for lo, hi in _chunk_ranges(n_traj, CHUNK_TRAJECTORIES):
            z, _, p = integrate_eigenbasis(spec, z1_eig[lo:hi], config, strict=True)
            endpoints[lo:hi] = z
            paths[lo:hi] = p
        finals = spec.cov.from_eigenbasis(endpoints)
        return [
            SolveResult(z_final=finals[m], path=spec.cov.from_eigenbasis(paths[m]), trajectory_index=m)
            for m in range(n_traj)
        ]
    endpoints, _ = solve_endpoints_eig(spec, z1_eig, config, workers=workers, strict=True)
    finals = spec.cov.from_eigenbasis(endpoints)
    return [SolveResult(z_final=finals[m], trajectory_index=m) for m in range(n_traj)]
