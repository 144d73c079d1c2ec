"""Labeled noise-to-sample pairs produced by the reverse ODE.

A dataset stores M pairs (y_m, x_m): y_m is a standard-normal draw from
substream(seed, m) and x_m the reverse-ODE endpoint started at y_m under the
recorded solver config, so a dataset is reproducible bit-for-bit from its
provenance.

Binary file layout (little endian):

    magic "GFLB" | u32 version=1 | u32 d | u64 count
    | count records of 2*d float64 (y then x)
    | u64 length | provenance JSON (UTF-8)

CSV export (inspection only) uses 17 significant digits with header
``y_0..y_{d-1},x_0..x_{d-1}``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DatasetFormatError
from .flow import SolveConfig, draw_initial_states, solve_endpoints_eig
from .gmm import MixtureSpec
from .linalg import RngStream

_MAGIC = b"GFLB"
_VERSION = 1
_HEADER = struct.Struct("<4sIIQ")
_U64 = struct.Struct("<Q")


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    targets: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.ascontiguousarray(self.inputs, dtype=np.float64)
        self.targets = np.ascontiguousarray(self.targets, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape != self.targets.shape:
            raise ConfigError("inputs and targets must be matching (count, d) arrays")
        if self.inputs.shape[0] < 1:
            raise ConfigError("dataset must contain at least one pair")

    @property
    def count(self) -> int:
        return self.inputs.shape[0]

    @property
    def d(self) -> int:
        return self.inputs.shape[1]

    def digest(self) -> str:
        """Content hash over pairs and provenance."""
        h = hashlib.sha256()
        h.update(self.inputs.astype("<f8").tobytes())
        h.update(self.targets.astype("<f8").tobytes())
        h.update(json.dumps(self.provenance, sort_keys=True).encode())
        return h.hexdigest()


def spec_digest(spec: MixtureSpec, config: SolveConfig) -> str:
    """Hash of the mixture instance and solver config backing a dataset."""
    h = hashlib.sha256()
    h.update(spec.cov.kind.encode())
    h.update(spec.cov.eigenvalues.astype("<f8").tobytes())
    if spec.cov.basis is not None:
        h.update(spec.cov.basis.astype("<f8").tobytes())
    h.update(spec.means.astype("<f8").tobytes())
    h.update(struct.pack("<d", spec.data_radius))
    h.update(struct.pack("<I", config.steps))
    h.update(config.integrator.encode())
    return h.hexdigest()


def generate_labels(spec: MixtureSpec, count: int, config: SolveConfig, seed: int,
                    workers: int = 1) -> LabeledDataset:
    """Solve `count` trajectories and collect (initial, endpoint) pairs."""
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    inputs = draw_initial_states(spec.d, count, seed)
    z1_eig = spec.cov.to_eigenbasis(inputs)
    endpoints, _ = solve_endpoints_eig(spec, z1_eig, config, workers=workers, strict=True)
    targets = spec.cov.from_eigenbasis(endpoints)
    provenance = {
        "spec_digest": spec_digest(spec, config),
        "solver": {"steps": config.steps, "integrator": config.integrator},
        "seed": int(seed),
        "count": int(count),
        "d": int(spec.d),
    }
    return LabeledDataset(inputs, targets, provenance)


def split(ds: LabeledDataset, fractions, seed: int):
    """Disjoint, exhaustive (train, val, test) split by a seeded permutation.

    Val/test sizes round down; the remainder goes to train.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f <= 0.0 for f in fractions):
        raise ConfigError("fractions must be three positive numbers")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got {sum(fractions)}")
    n = ds.count
    n_val = int(fractions[1] * n)
    n_test = int(fractions[2] * n)
    n_train = n - n_val - n_test
    if min(n_train, n_val, n_test) < 1:
        raise ConfigError(f"split of {n} pairs would leave an empty part")
    perm = np.argsort(RngStream(seed, 0).uniform(n), kind="stable")
    parts = {
        "train": perm[:n_train],
        "val": perm[n_train:n_train + n_val],
        "test": perm[n_train + n_val:],
    }
    out = []
    for role, idx in parts.items():
        idx = np.sort(idx)
        provenance = dict(ds.provenance)
        provenance["split"] = {"role": role, "fractions": list(fractions), "seed": int(seed)}
        out.append(LabeledDataset(ds.inputs[idx], ds.targets[idx], provenance))
    return tuple(out)


def save(ds: LabeledDataset, path) -> None:
    payload = np.hstack([ds.inputs, ds.targets]).astype("<f8").tobytes()
    blob = json.dumps(ds.provenance, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, ds.d, ds.count))
        fh.write(payload)
        fh.write(_U64.pack(len(blob)))
        fh.write(blob)


def load(path) -> LabeledDataset:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise DatasetFormatError("truncated header")
    magic, version, d, count = _HEADER.unpack_from(raw, 0)
    if magic != _MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise DatasetFormatError(f"unsupported version {version}")
    if d < 1 or count < 1:
        raise DatasetFormatError("empty dataset")
    offset = _HEADER.size
    payload_bytes = 16 * d * count
    if len(raw) < offset + payload_bytes + _U64.size:
        raise DatasetFormatError("truncated payload")
    pairs = np.frombuffer(raw, dtype="<f8", count=2 * d * count, offset=offset).reshape(count, 2 * d)
    offset += payload_bytes
    (blob_len,) = _U64.unpack_from(raw, offset)
    offset += _U64.size
    if len(raw) != offset + blob_len:
        raise DatasetFormatError("truncated or oversized provenance blob")
    try:
        provenance = json.loads(raw[offset:offset + blob_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise DatasetFormatError(f"unreadable provenance: {err}") from None
    if "d" in provenance and int(provenance["d"]) != d:
        raise DatasetFormatError(
            f"dimension mismatch: header {d}, provenance {provenance['d']}"
        )
    return LabeledDataset(pairs[:, :d].copy(), pairs[:, d:].copy(), provenance)


def export_csv(ds: LabeledDataset, path) -> None:
    cols = [f"y_{i}" for i in range(ds.d)] + [f"x_{i}" for i in range(ds.d)]
    lines = [",".join(cols)]
    stacked = np.hstack([ds.inputs, ds.targets])
    for row in stacked:
        lines.append(",".join(f"{v:.17g}" for v in row))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
