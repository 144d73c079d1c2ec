"""Command-line front end.

Subcommands: verify-h, verify-dim, verify-sigma, lcurve, gen-labels, split,
train, eval, score.  Option precedence is flags > JSON config file (section
named after the subcommand) > profile defaults ("desk" is CI-sized, "paper"
enables the full grids).  Every run honors --seed, writes a JSON manifest
next to its outputs, and is reproducible byte-for-byte; GMMFLOW_WORKERS (or
--workers) sets the worker count without affecting any output byte.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from . import bounds, experiments, labels, mlp
from .errors import ConfigError, DatasetFormatError, GmmflowError, NonFiniteStateError
from .flow import SolveConfig
from .gmm import exact_score, mc_score

_PROFILES = {
    "desk": {
        "verify-h": {"dims": (10,), "ks": (5, 10, 20, 50, 100), "traj": 1000},
        "verify-dim": {"dims": (10, 100, 1000), "k": 100, "traj": 1000},
        "verify-sigma": {"sigmas": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6), "dim": 10, "k": 100, "traj": 1000},
    },
    "paper": {
        "verify-h": {"dims": (10, 100, 1000, 10000), "ks": (5, 10, 20, 50, 100), "traj": 1000},
        "verify-dim": {"dims": (10, 100, 1000, 10000), "k": 100, "traj": 1000},
        "verify-sigma": {"sigmas": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6), "dim": 10, "k": 100, "traj": 1000},
    },
}


@dataclass
class RunManifest:
    subcommand: str
    config: dict
    seed: int
    version: str = __version__
    outputs: list = field(default_factory=list)
    duration_seconds: float = 0.0

    def write(self, path) -> None:
        _write_text_atomic(path, json.dumps(asdict(self), sort_keys=True, indent=2) + "\n")


def _write_text_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, newline="\n")
    os.replace(tmp, path)


def _int_list(text: str):
    return tuple(int(tok) for tok in str(text).split(",") if tok != "")


def _float_list(text: str):
    return tuple(float(tok) for tok in str(text).split(",") if tok != "")


def _default_workers() -> int:
    env = os.environ.get("GMMFLOW_WORKERS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as err:
            raise ConfigError(f"GMMFLOW_WORKERS must be an integer: {err}") from None
    return 1


def _resolve_options(args, subcommand: str, keys: dict) -> dict:
    """Merge hard defaults, profile defaults, config-file section, and flags."""
    merged = dict(keys)
    profile = getattr(args, "profile", None) or "desk"
    if profile not in _PROFILES:
        raise ConfigError(f"unknown profile {profile!r}")
    merged.update({k: v for k, v in _PROFILES[profile].get(subcommand, {}).items() if k in keys})
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            section = json.loads(Path(config_path).read_text()).get(subcommand, {})
        except json.JSONDecodeError as err:
            raise ConfigError(f"bad config file: {err}") from None
        for k, v in section.items():
            if k not in keys:
                raise ConfigError(f"unknown option {k!r} in config section {subcommand!r}")
            merged[k] = tuple(v) if isinstance(v, list) else v
    for k in keys:
        flag_value = getattr(args, k.replace("-", "_"), None)
        if flag_value is not None:
            merged[k] = flag_value
    return merged


def _print_fit_lines(report, norm, dims, ks):
    for d in dims:
        rows = report.filter(norm=norm, d=d)
        if len(ks) < 2:
            print(f"d={d}: slope undefined (single step count)")
            continue
        pts = [(r.h, r.mean_error) for r in rows if r.steps in ks]
        slope, _, r2 = experiments.fit_loglog_slope(pts)
        print(f"d={d}: {norm} slope vs h = {slope:.4f} (r2={r2:.5f})")


def _cmd_verify_h(args) -> int:
    opts = _resolve_options(args, "verify-h", {
        "dims": (10,), "ks": (5, 10, 20, 50, 100), "traj": 1000, "norm": "l2",
        "ref-k": 1000, "modes": 10, "mean-radius": 1.0, "mean-sampler": "ball",
        "cov": "cycle5-spd", "seed": 42, "workers": _default_workers(),
    })
    cfg = experiments.SweepConfig(
        dims=opts["dims"], steps=opts["ks"], n_traj=opts["traj"],
        n_components=opts["modes"], mean_radius=opts["mean-radius"],
        mean_sampler=opts["mean-sampler"], cov_kind=opts["cov"], norm=opts["norm"],
        ref_steps=opts["ref-k"], seed=opts["seed"], workers=opts["workers"],
    )
    started = time.monotonic()
    report = experiments.run_error_sweep(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "errors.csv"
    _write_text_atomic(csv_path, report.to_csv())
    _print_fit_lines(report, cfg.norm, cfg.dims, cfg.steps)
    manifest = RunManifest("verify-h", asdict(cfg), cfg.seed, outputs=[str(csv_path)],
                           duration_seconds=time.monotonic() - started)
    manifest.write(out_dir / "manifest.json")
    return 0


def _cmd_verify_dim(args) -> int:
    opts = _resolve_options(args, "verify-dim", {
        "dims": (10, 100, 1000), "k": 100, "traj": 1000, "norm": "l2",
        "ref-k": 1000, "modes": 10, "mean-radius": 1.0, "seed": 42,
        "workers": _default_workers(),
    })
    norm = opts["norm"]
    if norm == "linf":
        cov_kind, mean_sampler = "cycle5-diag", "hypercube"
    else:
        cov_kind, mean_sampler = "cycle5-spd", "ball"
    cfg = experiments.SweepConfig(
        dims=opts["dims"], steps=(opts["k"],), n_traj=opts["traj"],
        n_components=opts["modes"], mean_radius=opts["mean-radius"],
        mean_sampler=mean_sampler, cov_kind=cov_kind, norm=norm,
        ref_steps=opts["ref-k"], seed=opts["seed"], workers=opts["workers"],
    )
    started = time.monotonic()
    report = experiments.run_error_sweep(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "errors.csv"
    _write_text_atomic(csv_path, report.to_csv())
    pts = [(r.d, r.mean_error) for r in report.filter(norm=norm, steps=opts["k"])]
    if len(cfg.dims) < 2:
        print("slope undefined (single dimension)")
    elif norm == "l2":
        slope, _, r2 = experiments.fit_loglog_slope(pts)
        print(f"l2 slope vs d = {slope:.4f} (r2={r2:.5f})")
    else:
        _, growth, r2_log = experiments.fit_log_growth(pts)
        _, _, r2_lin = experiments.fit_linear_growth(pts)
        print(f"linf log-growth coefficient = {growth:.5f} (r2={r2_log:.5f}, linear r2={r2_lin:.5f})")
    manifest = RunManifest("verify-dim", asdict(cfg), cfg.seed, outputs=[str(csv_path)],
                           duration_seconds=time.monotonic() - started)
    manifest.write(out_dir / "manifest.json")
    return 0


def _cmd_verify_sigma(args) -> int:
    opts = _resolve_options(args, "verify-sigma", {
        "sigmas": (0.1, 0.2, 0.3, 0.4, 0.5, 0.6), "dim": 10, "k": 100, "traj": 1000,
        "ref-k": 1000, "modes": 10, "mean-radius": 1.0, "mean-sampler": "ball",
        "seed": 42, "workers": _default_workers(),
    })
    cfg = experiments.SweepConfig(
        dims=(opts["dim"],), steps=(opts["k"],), n_traj=opts["traj"],
        n_components=opts["modes"], mean_radius=opts["mean-radius"],
        mean_sampler=opts["mean-sampler"], cov_kind="isotropic",
        sigma_grid=opts["sigmas"], norm="l2", ref_steps=opts["ref-k"],
        seed=opts["seed"], workers=opts["workers"],
    )
    started = time.monotonic()
    report = experiments.run_sigma_sweep(cfg)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "errors.csv"
    _write_text_atomic(csv_path, report.to_csv())
    outputs = [str(csv_path)]
    by_sigma = [(float(r.sigma_tag), r.mean_error) for r in report.filter(norm="l2")]
    best = min(by_sigma, key=lambda p: p[1])
    print(f"l2 error minimized at sigma = {best[0]!r}")
    if args.lcurve:
        lcurve_path = out_dir / "lcurve.csv"
        bounds.write_lcurve_csv(lcurve_path, np.asarray(cfg.sigma_grid))
        outputs.append(str(lcurve_path))
    manifest = RunManifest("verify-sigma", asdict(cfg), cfg.seed, outputs=outputs,
                           duration_seconds=time.monotonic() - started)
    manifest.write(out_dir / "manifest.json")
    return 0


def _cmd_lcurve(args) -> int:
    if args.sigmas is not None:
        grid = np.asarray(args.sigmas, dtype=np.float64)
    else:
        if args.points < 2 or args.sigma_min <= 0 or args.sigma_max <= args.sigma_min:
            raise ConfigError("need 0 < sigma-min < sigma-max and points >= 2")
        grid = np.linspace(args.sigma_min, args.sigma_max, args.points)
    started = time.monotonic()
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    bounds.write_lcurve_csv(out_path, grid)
    manifest = RunManifest("lcurve", {"sigmas": [float(s) for s in grid]}, seed=0,
                           outputs=[str(out_path)], duration_seconds=time.monotonic() - started)
    manifest.write(str(out_path) + ".manifest.json")
    return 0


def _instance_from_opts(opts):
    return experiments.build_instance(
        opts["dim"], opts["modes"], opts["mean-radius"], opts["mean-sampler"],
        opts["cov"], seed=opts["seed"], sigma=opts.get("sigma"),
    )


def _cmd_gen_labels(args) -> int:
    opts = _resolve_options(args, "gen-labels", {
        "dim": 8, "count": 20000, "k": 1000, "integrator": "heun", "modes": 10,
        "mean-radius": 1.0, "mean-sampler": "corners", "cov": "uniform-diag",
        "sigma": None, "seed": 42, "workers": _default_workers(),
    })
    spec = _instance_from_opts(opts)
    config = SolveConfig(steps=opts["k"], integrator=opts["integrator"])
    started = time.monotonic()
    ds = labels.generate_labels(spec, opts["count"], config, seed=opts["seed"] + 1,
                                workers=opts["workers"])
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    labels.save(ds, out_path)
    print(f"wrote {ds.count} pairs (d={ds.d}) to {out_path}")
    manifest = RunManifest("gen-labels", opts, opts["seed"], outputs=[str(out_path)],
                           duration_seconds=time.monotonic() - started)
    manifest.write(str(out_path) + ".manifest.json")
    return 0


def _cmd_split(args) -> int:
    fractions = args.fractions
    started = time.monotonic()
    ds = labels.load(args.data)
    parts = labels.split(ds, fractions, args.seed)
    outputs = []
    for role, part in zip(("train", "val", "test"), parts):
        path = Path(f"{args.out_prefix}.{role}.gflb")
        path.parent.mkdir(parents=True, exist_ok=True)
        labels.save(part, path)
        outputs.append(str(path))
        print(f"{role}: {part.count} pairs -> {path}")
    manifest = RunManifest(
        "split", {"data": str(args.data), "fractions": list(fractions), "seed": args.seed},
        args.seed, outputs=outputs, duration_seconds=time.monotonic() - started,
    )
    manifest.write(f"{args.out_prefix}.manifest.json")
    return 0


def _cmd_train(args) -> int:
    started = time.monotonic()
    train_ds = labels.load(args.train)
    val_ds = labels.load(args.val)
    config = mlp.MlpConfig(
        dim=train_ds.d, hidden=args.hidden, lr=args.lr, weight_decay=args.weight_decay,
        batch_size=args.batch_size, patience=args.patience, max_epochs=args.max_epochs,
        seed=args.seed,
    )
    model = mlp.MlpModel(config)
    report = mlp.train(model, train_ds, val_ds)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    mlp.save_checkpoint(model, out_path, val_loss=report.best_val_loss)
    report_path = Path(str(out_path) + ".train.csv")
    report.write_csv(report_path)
    print(
        f"best epoch {report.best_epoch} (val_loss={report.best_val_loss:.6g}, "
        f"{report.stopping_reason}) -> {out_path}"
    )
    manifest = RunManifest("train", asdict(config), args.seed,
                           outputs=[str(out_path), str(report_path)],
                           duration_seconds=time.monotonic() - started)
    manifest.write(str(out_path) + ".manifest.json")
    return 0


def _aligned_rmse(a: labels.LabeledDataset, b: labels.LabeledDataset) -> float:
    if a.d != b.d or a.count != b.count or not np.array_equal(a.inputs, b.inputs):
        raise ConfigError("datasets are not aligned on identical inputs")
    return float(np.sqrt(np.mean((a.targets - b.targets) ** 2)))


def _cmd_eval(args) -> int:
    started = time.monotonic()
    model, _ = mlp.load_checkpoint(args.model)
    rows = []
    test_ds = labels.load(args.test)
    rows.append(("model_test", mlp.evaluate(model, test_ds)))
    if args.train_data:
        rows.append(("model_train", mlp.evaluate(model, labels.load(args.train_data))))
    if bool(args.coarse) != bool(args.reference):
        raise ConfigError("--coarse and --reference must be given together")
    if args.coarse:
        rows.append(("ode_discretization", _aligned_rmse(labels.load(args.coarse), labels.load(args.reference))))
    lines = ["metric,rmse"] + [f"{name},{value!r}" for name, value in rows]
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_text_atomic(out_path, "\n".join(lines) + "\n")
    for name, value in rows:
        print(f"{name}: {value:.6g}")
    manifest = RunManifest(
        "eval",
        {"model": str(args.model), "test": str(args.test), "train_data": args.train_data,
         "coarse": args.coarse, "reference": args.reference},
        seed=0, outputs=[str(out_path)], duration_seconds=time.monotonic() - started,
    )
    manifest.write(str(out_path) + ".manifest.json")
    return 0


def _cmd_score(args) -> int:
    opts = {
        "dim": args.dim, "modes": args.modes, "mean-radius": args.mean_radius,
        "mean-sampler": args.mean_sampler, "cov": args.cov, "sigma": args.sigma,
        "seed": args.seed,
    }
    spec = _instance_from_opts(opts)
    point = np.zeros(spec.d) if args.point is None else np.asarray(args.point, dtype=np.float64)
    if point.shape != (spec.d,):
        raise ConfigError(f"--point must have {spec.d} coordinates")
    payload = {
        "t": args.t,
        "exact": [float(v) for v in exact_score(spec, point, args.t)],
    }
    if args.t > 0.0:
        payload["mc"] = [float(v) for v in mc_score(spec.means, point, args.t)]
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    sys.stdout.write(text)
    if args.out:
        started = time.monotonic()
        _write_text_atomic(args.out, text)
        manifest = RunManifest("score", opts, args.seed, outputs=[str(args.out)],
                               duration_seconds=time.monotonic() - started)
        manifest.write(str(args.out) + ".manifest.json")
    return 0


def _add_common(p):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--config", type=str, default=None, help="JSON config file")
    p.add_argument("--profile", choices=("desk", "paper"), default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gmmflow", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("verify-h", help="Euler error vs step size; fits the convergence slope")
    _add_common(p)
    p.add_argument("--dims", type=_int_list, default=None)
    p.add_argument("--ks", type=_int_list, default=None)
    p.add_argument("--traj", type=int, default=None)
    p.add_argument("--norm", choices=("l2", "linf"), default=None)
    p.add_argument("--ref-k", type=int, default=None)
    p.add_argument("--modes", type=int, default=None)
    p.add_argument("--mean-radius", type=float, default=None)
    p.add_argument("--mean-sampler", choices=experiments.MEAN_SAMPLERS, default=None)
    p.add_argument("--cov", choices=experiments.COV_KINDS, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_verify_h)

    p = sub.add_parser("verify-dim", help="Euler error vs dimension at fixed step size")
    _add_common(p)
    p.add_argument("--dims", type=_int_list, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--traj", type=int, default=None)
    p.add_argument("--norm", choices=("l2", "linf"), default=None)
    p.add_argument("--ref-k", type=int, default=None)
    p.add_argument("--modes", type=int, default=None)
    p.add_argument("--mean-radius", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_verify_dim)

    p = sub.add_parser("verify-sigma", help="Euler error vs isotropic covariance scale")
    _add_common(p)
    p.add_argument("--sigmas", type=_float_list, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--traj", type=int, default=None)
    p.add_argument("--ref-k", type=int, default=None)
    p.add_argument("--modes", type=int, default=None)
    p.add_argument("--mean-radius", type=float, default=None)
    p.add_argument("--mean-sampler", choices=experiments.MEAN_SAMPLERS, default=None)
    p.add_argument("--lcurve", action="store_true", help="also export the L(sigma) bound curve")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_verify_sigma)

    p = sub.add_parser("lcurve", help="export the linear-part Lipschitz curve L(sigma)")
    p.add_argument("--sigmas", type=_float_list, default=None)
    p.add_argument("--sigma-min", type=float, default=0.05)
    p.add_argument("--sigma-max", type=float, default=1.5)
    p.add_argument("--points", type=int, default=59)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_lcurve)

    p = sub.add_parser("gen-labels", help="generate reverse-ODE labeled pairs")
    _add_common(p)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--count", type=int, default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--integrator", choices=("euler", "heun"), default=None)
    p.add_argument("--modes", type=int, default=None)
    p.add_argument("--mean-radius", type=float, default=None)
    p.add_argument("--mean-sampler", choices=experiments.MEAN_SAMPLERS, default=None)
    p.add_argument("--cov", choices=experiments.COV_KINDS, default=None)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_labels)

    p = sub.add_parser("split", help="split a dataset into train/val/test")
    p.add_argument("--data", required=True)
    p.add_argument("--fractions", type=_float_list, default=(0.8, 0.1, 0.1))
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out-prefix", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("train", help="train the distillation MLP")
    p.add_argument("--train", required=True)
    p.add_argument("--val", required=True)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=256)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--max-epochs", type=int, default=300)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="RMSE of a checkpoint (and optional ODE baseline)")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--train-data", default=None)
    p.add_argument("--coarse", default=None, help="coarse-step label file")
    p.add_argument("--reference", default=None, help="reference label file aligned with --coarse")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("score", help="dump the exact and Monte-Carlo score at one point")
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--modes", type=int, default=10)
    p.add_argument("--mean-radius", type=float, default=1.0)
    p.add_argument("--mean-sampler", choices=experiments.MEAN_SAMPLERS, default="ball")
    p.add_argument("--cov", choices=experiments.COV_KINDS, default="cycle5-spd")
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--t", type=float, default=0.5)
    p.add_argument("--point", type=_float_list, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_score)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except NonFiniteStateError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3
    except (DatasetFormatError, OSError) as err:
        print(f"i/o error: {err}", file=sys.stderr)
        return 4
    except GmmflowError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
