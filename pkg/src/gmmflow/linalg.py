"""Deterministic numerical primitives.

Seeded counter-based random streams, SPD covariance representations with
eigen-spectrum access, a cyclic Jacobi eigensolver, and Haar-distributed
random orthogonal matrices.  Everything here is pure and bit-reproducible:
the same (seed, stream index) always yields the same bytes, on any platform
and under any thread schedule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, JacobiConvergenceError

_U64_MASK = (1 << 64) - 1
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STREAM_SALT = np.uint64(0xD1B54A32D192ED03)
_TWO_NEG_53 = 2.0 ** -53


def _mix64(x: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on uint64 arrays (wrapping arithmetic)."""
    x = x.astype(np.uint64, copy=True)
    x ^= x >> np.uint64(30)
    x *= np.uint64(0xBF58476D1CE4E5B9)
    x ^= x >> np.uint64(27)
    x *= np.uint64(0x94D049BB133111EB)
    x ^= x >> np.uint64(31)
    return x


def _mix64_int(x: int) -> int:
    return int(_mix64(np.array([x & _U64_MASK], dtype=np.uint64))[0])


def fold_seed(seed: int, index: int) -> int:
    """Derive a child 64-bit seed from (seed, index); used for hierarchical streams."""
    return _mix64_int((seed & _U64_MASK) ^ _mix64_int((index & _U64_MASK) + 0x632BE59BD9B4E019))


@dataclass
class RngStream:
    """Counter-based pseudo-random stream keyed by (master_seed, stream_index).

    Outputs are SplitMix64 words at increasing counter positions of a
    per-stream key, so distinct stream indices give statistically
    independent sequences and the n-th draw never depends on how earlier
    draws were batched.  Gaussians come from Box-Muller on the raw uniform
    words (exact libm calls only), keeping the byte stream identical across
    platforms.  A stream is cheap to construct; hand one substream to each
    worker and never share one between workers.
    """

    master_seed: int
    stream_index: int = 0
    _key: np.uint64 = field(init=False, repr=False)
    _counter: int = field(init=False, default=0, repr=False)

    def __post_init__(self):
        whitened = _mix64_int((self.master_seed & _U64_MASK) + int(_GOLDEN))
        salted = _mix64_int(((self.stream_index & _U64_MASK) + int(_STREAM_SALT)) & _U64_MASK)
        self._key = np.uint64(_mix64_int(whitened ^ salted))
        self._counter = 0

    def _words(self, n: int) -> np.ndarray:
        counters = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        return _mix64(self._key + counters * _GOLDEN)

    def uniform(self, n: int) -> np.ndarray:
        """n i.i.d. uniforms in (0, 1], 53-bit resolution."""
        w = self._words(n)
        return ((w >> np.uint64(11)) + np.uint64(1)).astype(np.float64) * _TWO_NEG_53

    def normal(self, n: int) -> np.ndarray:
        """n i.i.d. standard normals via Box-Muller pairs."""
        half = (n + 1) // 2
        u1 = self.uniform(half)
        u2 = self.uniform(half)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = (2.0 * np.pi) * u2
        out = np.empty(2 * half)
        out[0::2] = radius * np.cos(angle)
        out[1::2] = radius * np.sin(angle)
        return out[:n]

    def integers(self, n: int, upper: int) -> np.ndarray:
        """n i.i.d. integers uniform on {0, ..., upper-1}."""
        if upper < 1:
            raise ConfigError(f"upper must be >= 1, got {upper}")
        u = self.uniform(n)
        return np.minimum((u * upper).astype(np.int64), upper - 1)


def substream(master_seed: int, index: int) -> RngStream:
    """The index-th independent stream of a master seed."""
    return RngStream(master_seed, index)


def gaussian_vector(d: int, rng: RngStream) -> np.ndarray:
    """A d-dimensional standard normal draw from the given stream."""
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}")
    return rng.normal(d)


def cycle5_spectrum(d: int) -> np.ndarray:
    """Eigenvalue pattern (0.1, 0.2, 0.3, 0.4, 0.5) repeated up to length d."""
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}")
    base = np.array([0.1, 0.2, 0.3, 0.4, 0.5])
    reps = -(-d // base.size)
    return np.tile(base, reps)[:d].copy()


def random_orthogonal(d: int, rng: RngStream) -> np.ndarray:
    """Haar-distributed d x d orthogonal matrix.

    Householder QR of a standard Gaussian matrix, with the diagonal of R
    forced positive so the factor is unique and Haar-distributed.
    """
    if d < 1:
        raise ConfigError(f"dimension must be >= 1, got {d}")
    g = rng.normal(d * d).reshape(d, d)
    q, r = np.linalg.qr(g)
    signs = np.sign(np.diag(r))
    signs[signs == 0] = 1.0
    return q * signs[np.newaxis, :]


def symmetric_eigendecompose(a: np.ndarray, tol: float = 1e-10, max_sweeps: int = 100):
    """Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.

    Returns (U, lam) with orthonormal columns and eigenvalues ascending,
    so that U @ diag(lam) @ U.T reconstructs the input.  Sweeps stop when
    the off-diagonal Frobenius mass falls below 1e-12 * ||A||_F.

    Raises ConfigError for non-symmetric input (checked against `tol`,
    relative to the largest entry) and JacobiConvergenceError if the cap
    of `max_sweeps` full sweeps is exhausted.
    """
    a = np.array(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ConfigError(f"expected a square matrix, got shape {a.shape}")
    d = a.shape[0]
    scale = max(1.0, float(np.max(np.abs(a))))
    if float(np.max(np.abs(a - a.T))) > tol * scale:
        raise ConfigError("matrix is not symmetric within tolerance")
    a = 0.5 * (a + a.T)

    u = np.eye(d)
    if d == 1:
        return u, a[0, :1].copy()

    fro = float(np.linalg.norm(a))
    threshold = 1e-12 * max(fro, np.finfo(np.float64).tiny)

    def offdiag_norm(m):
        return math.sqrt(max(0.0, float(np.sum(m * m)) - float(np.sum(np.diag(m) ** 2))))

    sweeps = 0
    while offdiag_norm(a) > threshold:
        if sweeps >= max_sweeps:
            raise JacobiConvergenceError(
                f"Jacobi sweeps exceeded cap of {max_sweeps} without converging"
            )
        sweeps += 1
        for p in range(d - 1):
            for q in range(p + 1, d):
                apq = a[p, q]
                if abs(apq) <= threshold / d:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + math.sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + math.sqrt(1.0 + tau * tau))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                up, uq = u[:, p].copy(), u[:, q].copy()
                u[:, p] = c * up - s * uq
                u[:, q] = s * up + c * uq

    lam = np.diag(a).copy()
    order = np.argsort(lam, kind="stable")
    return u[:, order], lam[order]


@dataclass(frozen=True, eq=False)
class CovarianceSpec:
    """Shared SPD covariance of the mixture, stored by its eigen-spectrum.

    kind is one of "isotropic", "diagonal", "eigen"; `basis` is None when
    the eigenbasis is the standard one.  All downstream algebra works on
    `eigenvalues` in this basis.
    """

    kind: str
    eigenvalues: np.ndarray
    basis: np.ndarray | None = None

    def __post_init__(self):
        lam = np.ascontiguousarray(self.eigenvalues, dtype=np.float64)
        if lam.ndim != 1 or lam.size < 1:
            raise ConfigError("eigenvalues must be a nonempty 1-d vector")
        if not np.all(lam > 0.0):
            raise ConfigError("covariance eigenvalues must be strictly positive")
        lam.flags.writeable = False
        object.__setattr__(self, "eigenvalues", lam)
        if self.basis is not None:
            u = np.ascontiguousarray(self.basis, dtype=np.float64)
            if u.shape != (lam.size, lam.size):
                raise ConfigError(f"basis shape {u.shape} does not match dimension {lam.size}")
            residual = np.max(np.abs(u.T @ u - np.eye(lam.size)))
            if residual > 1e-10:
                raise ConfigError(f"basis is not orthogonal: max |U'U - I| = {residual:.3e}")
            u.flags.writeable = False
            object.__setattr__(self, "basis", u)

    @classmethod
    def isotropic(cls, sigma: float, d: int) -> "CovarianceSpec":
        if sigma <= 0.0:
            raise ConfigError(f"sigma must be positive, got {sigma}")
        if d < 1:
            raise ConfigError(f"dimension must be >= 1, got {d}")
        return cls("isotropic", np.full(d, float(sigma)))

    @classmethod
    def diagonal(cls, eigenvalues) -> "CovarianceSpec":
        return cls("diagonal", np.asarray(eigenvalues, dtype=np.float64))

    @classmethod
    def eigen_factored(cls, basis, eigenvalues) -> "CovarianceSpec":
        return cls("eigen", np.asarray(eigenvalues, dtype=np.float64), np.asarray(basis, dtype=np.float64))

    @classmethod
    def from_dense(cls, a, tol: float = 1e-10, max_sweeps: int = 100) -> "CovarianceSpec":
        u, lam = symmetric_eigendecompose(a, tol=tol, max_sweeps=max_sweeps)
        return cls.eigen_factored(u, lam)

    @property
    def d(self) -> int:
        return self.eigenvalues.size

    @property
    def lambda_min(self) -> float:
        return float(np.min(self.eigenvalues))

    @property
    def lambda_max(self) -> float:
        return float(np.max(self.eigenvalues))

    def dense(self) -> np.ndarray:
        if self.basis is None:
            return np.diag(self.eigenvalues)
        return (self.basis * self.eigenvalues[np.newaxis, :]) @ self.basis.T

    def to_eigenbasis(self, x: np.ndarray) -> np.ndarray:
        """Coordinates of row vector(s) x in the eigenbasis (U^T x)."""
        if self.basis is None:
            return np.asarray(x, dtype=np.float64)
        return np.asarray(x, dtype=np.float64) @ self.basis

    def from_eigenbasis(self, x: np.ndarray) -> np.ndarray:
        """Inverse of to_eigenbasis (U x)."""
        if self.basis is None:
            return np.asarray(x, dtype=np.float64)
        return np.asarray(x, dtype=np.float64) @ self.basis.T
