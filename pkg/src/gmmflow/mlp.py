"""Supervised distillation of the noise-to-sample map into a small MLP.

Two hidden layers with exact (error-function) GELU activations, mean squared
error loss, decoupled weight decay on the weight matrices only, and early
stopping on validation loss.  Forward and backward passes are written out
explicitly on numpy arrays; training is a single logical stream so a fixed
seed reproduces the final parameters exactly.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import erf

from .errors import ConfigError, NonFiniteStateError
from .labels import LabeledDataset
from .linalg import RngStream, fold_seed

_BETA1 = 0.9
_BETA2 = 0.999
_EPS = 1e-8
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_U64 = struct.Struct("<Q")

PARAM_ORDER = ("w1", "b1", "w2", "b2", "w3", "b3")


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * np.exp(-0.5 * x * x) * _INV_SQRT_2PI


@dataclass(frozen=True)
class MlpConfig:
    dim: int
    hidden: int
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 256
    patience: int = 50
    max_epochs: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.hidden < 1:
            raise ConfigError("dim and hidden must be >= 1")
        if self.lr <= 0.0 or self.weight_decay <= 0.0:
            raise ConfigError("lr and weight_decay must be positive")
        if self.batch_size < 1 or self.patience < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size, patience, max_epochs must be >= 1")


class MlpModel:
    """dim -> hidden -> hidden -> dim network with AdamW state.

    Weights start uniform on (-sqrt(1/fan_in), sqrt(1/fan_in)), biases at
    zero; draws come from stream 0 of the config seed in parameter order.
    """

    def __init__(self, config: MlpConfig):
        self.config = config
        d, hidden = config.dim, config.hidden
        rng = RngStream(config.seed, 0)

        def init_weight(fan_in, fan_out):
            bound = math.sqrt(1.0 / fan_in)
            u = rng.uniform(fan_in * fan_out).reshape(fan_in, fan_out)
            return (2.0 * u - 1.0) * bound

        self.params = {
            "w1": init_weight(d, hidden),
            "b1": np.zeros(hidden),
            "w2": init_weight(hidden, hidden),
            "b2": np.zeros(hidden),
            "w3": init_weight(hidden, d),
            "b3": np.zeros(d),
        }
        self.moment1 = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.moment2 = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.step_count = 0
        self.epoch = 0
        self.best_snapshot = None

    def parameter_vector(self) -> np.ndarray:
        return np.concatenate([self.params[k].ravel() for k in PARAM_ORDER])


def forward(model: MlpModel, y: np.ndarray) -> np.ndarray:
    """Linear -> GELU -> Linear -> GELU -> Linear; accepts (d,) or (n, d)."""
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    a = y[np.newaxis, :] if single else y
    if a.shape[1] != model.config.dim:
        raise ConfigError(f"input dimension {a.shape[1]} does not match model dim {model.config.dim}")
    p = model.params
    out = gelu(a @ p["w1"] + p["b1"])
    out = gelu(out @ p["w2"] + p["b2"])
    out = out @ p["w3"] + p["b3"]
    return out[0] if single else out


def mse_loss_and_grads(model: MlpModel, y: np.ndarray, target: np.ndarray):
    """Mean squared error over all batch entries and coordinates, plus
    analytic gradients for every parameter."""
    p = model.params
    pre1 = y @ p["w1"] + p["b1"]
    act1 = gelu(pre1)
    pre2 = act1 @ p["w2"] + p["b2"]
    act2 = gelu(pre2)
    out = act2 @ p["w3"] + p["b3"]
    resid = out - target
    loss = float(np.mean(resid * resid))

    d_out = (2.0 / resid.size) * resid
    grads = {}
    grads["w3"] = act2.T @ d_out
    grads["b3"] = np.sum(d_out, axis=0)
    d_act2 = d_out @ p["w3"].T
    d_pre2 = d_act2 * gelu_grad(pre2)
    grads["w2"] = act1.T @ d_pre2
    grads["b2"] = np.sum(d_pre2, axis=0)
    d_act1 = d_pre2 @ p["w2"].T
    d_pre1 = d_act1 * gelu_grad(pre1)
    grads["w1"] = y.T @ d_pre1
    grads["b1"] = np.sum(d_pre1, axis=0)
    return loss, grads


def adamw_step(model: MlpModel, grads: dict) -> None:
    """One AdamW update: multiplicative decoupled decay on weight matrices
    (never biases), then the bias-corrected Adam step."""
    cfg = model.config
    model.step_count += 1
    t = model.step_count
    corr1 = 1.0 - _BETA1**t
    corr2 = 1.0 - _BETA2**t
    for key in PARAM_ORDER:
        g = grads[key]
        m = model.moment1[key]
        v = model.moment2[key]
        m *= _BETA1
        m += (1.0 - _BETA1) * g
        v *= _BETA2
        v += (1.0 - _BETA2) * g * g
        p = model.params[key]
        if key.startswith("w"):
            p *= 1.0 - cfg.lr * cfg.weight_decay
        p -= cfg.lr * (m / corr1) / (np.sqrt(v / corr2) + _EPS)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)  # (epoch, train_loss, val_loss)
    best_epoch: int = -1
    best_val_loss: float = math.inf
    stopping_reason: str = ""

    def write_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_loss"]
        for epoch, train_loss, val_loss in self.epochs:
            lines.append(f"{epoch},{train_loss!r},{val_loss!r}")
        with open(path, "w", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


def evaluate(model: MlpModel, ds: LabeledDataset) -> float:
    """Root mean squared residual over all pairs and coordinates."""
    pred = forward(model, ds.inputs)
    return float(np.sqrt(np.mean((pred - ds.targets) ** 2)))


def train(model: MlpModel, train_ds: LabeledDataset, val_ds: LabeledDataset,
          config: MlpConfig | None = None) -> TrainReport:
    """Minimize MSE with AdamW until validation loss stalls for `patience`
    epochs (or the epoch cap); the model keeps its best-validation snapshot."""
    cfg = config if config is not None else model.config
    if train_ds.d != cfg.dim or val_ds.d != cfg.dim:
        raise ConfigError("dataset dimension does not match the model")
    n = train_ds.count
    report = TrainReport()
    stall = 0
    for epoch in range(cfg.max_epochs):
        order = np.argsort(RngStream(fold_seed(cfg.seed, 1), epoch).uniform(n), kind="stable")
        total_sq = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = order[lo:lo + cfg.batch_size]
            loss, grads = mse_loss_and_grads(model, train_ds.inputs[idx], train_ds.targets[idx])
            if not math.isfinite(loss):
                raise NonFiniteStateError(
                    f"non-finite training loss at epoch {epoch}, batch offset {lo}", step=epoch
                )
            adamw_step(model, grads)
            total_sq += loss * idx.size * cfg.dim
        train_loss = total_sq / (n * cfg.dim)
        val_pred = forward(model, val_ds.inputs)
        val_loss = float(np.mean((val_pred - val_ds.targets) ** 2))
        model.epoch = epoch + 1
        report.epochs.append((epoch, train_loss, val_loss))
        if val_loss < report.best_val_loss:
            report.best_val_loss = val_loss
            report.best_epoch = epoch
            model.best_snapshot = {k: v.copy() for k, v in model.params.items()}
            stall = 0
        else:
            stall += 1
            if stall >= cfg.patience:
                report.stopping_reason = "early_stop"
                break
    if not report.stopping_reason:
        report.stopping_reason = "max_epochs"
    if model.best_snapshot is not None:
        model.params = {k: v.copy() for k, v in model.best_snapshot.items()}
    return report


def save_checkpoint(model: MlpModel, path, val_loss: float | None = None) -> None:
    header = {
        "format": "gmmflow-mlp",
        "version": 1,
        "dim": model.config.dim,
        "hidden": model.config.hidden,
        "config": asdict(model.config),
        "epoch": model.epoch,
        "val_loss": val_loss,
        "param_order": list(PARAM_ORDER),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_U64.pack(len(blob)))
        fh.write(blob)
        for key in PARAM_ORDER:
            fh.write(model.params[key].astype("<f8").tobytes())


def load_checkpoint(path):
    """Returns (model, header). Raises ConfigError on malformed files."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _U64.size:
        raise ConfigError("truncated checkpoint")
    (blob_len,) = _U64.unpack_from(raw, 0)
    offset = _U64.size
    try:
        header = json.loads(raw[offset:offset + blob_len].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise ConfigError(f"unreadable checkpoint header: {err}") from None
    if header.get("format") != "gmmflow-mlp" or header.get("version") != 1:
        raise ConfigError("not a gmmflow MLP checkpoint")
    offset += blob_len
    model = MlpModel(MlpConfig(**header["config"]))
    model.epoch = int(header.get("epoch", 0))
    for key in PARAM_ORDER:
        shape = model.params[key].shape
        size = int(np.prod(shape))
        values = np.frombuffer(raw, dtype="<f8", count=size, offset=offset)
        if values.size != size:
            raise ConfigError("truncated parameter block")
        model.params[key] = values.reshape(shape).copy()
        offset += 8 * size
    if offset != len(raw):
        raise ConfigError("trailing bytes after parameter block")
    return model, header
