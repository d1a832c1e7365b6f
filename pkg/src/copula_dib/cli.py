"""Command-line interface.

Subcommands read an optional key-value config file (INI syntax, one
``[run]`` section, ``schema_version = 1``) and global flags that override
single keys. Exit codes: 0 success, 2 config or usage error, 3 I/O or data
error, 4 numeric failure.
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import itertools
import json
import logging
import sys
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import datasets, experiments
from .errors import CopulaDIBError, DataError, UsageError
from .ib_model import PREPROCESSING_MODES, VARIANCE_MODES
from .nn import Rng, derive_seed

log = logging.getLogger("copula_dib")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4


@dataclass(frozen=True)
class RunConfig:
    """Every key a config file may set, with its default."""

    schema_version: int = SCHEMA_VERSION
    seed: int = 0
    experiment: str = "artificial"  # artificial | real
    out: str = "out"
    data_dir: str = ""  # defaults to <out>/data
    # spiral data
    n_samples: int = 25_000
    noise_scale: float = 0.05
    transform: str = "beta"
    test_fraction: float = 0.2
    # real data
    uci_path: str = ""
    # sweep
    preprocessing: str = "copula"
    lambda_start: float = 10.0
    lambda_multiplier: float = 1.06
    multiply_every: int = 500
    total_iterations: int = 10_000
    batch_size: int = 500
    learning_rate: float = 0.0006
    record_every: int = 500
    latent_dim: int = 10
    hidden: str = "50,50"
    variance_mode: str = "fixed_unit"
    active_threshold: float = 0.01
    # robustness
    outlier_fraction: float = 0.05
    outlier_low: float = 1.0
    outlier_high: float = 5.0
    # convergence
    convergence_lambda: float = 100.0
    convergence_delta: float = 0.10
    convergence_window: int = 100
    # latent export
    target_column: int = 0
    n_bins: int = 8

    def validate(self) -> "RunConfig":
        problems = []
        if self.schema_version != SCHEMA_VERSION:
            problems.append(f"schema_version: expected {SCHEMA_VERSION}, got {self.schema_version}")
        if self.experiment not in ("artificial", "real"):
            problems.append(f"experiment: must be artificial or real, got {self.experiment!r}")
        if self.preprocessing not in PREPROCESSING_MODES:
            problems.append(f"preprocessing: must be one of {PREPROCESSING_MODES}")
        if self.variance_mode not in VARIANCE_MODES:
            problems.append(f"variance_mode: must be one of {VARIANCE_MODES}")
        if not 0 < self.test_fraction < 1:
            problems.append("test_fraction: must lie in (0, 1)")
        if self.n_samples < 2:
            problems.append("n_samples: must be >= 2")
        if self.lambda_start <= 0:
            problems.append("lambda_start: must be > 0")
        if self.lambda_multiplier <= 1:
            problems.append("lambda_multiplier: must be > 1")
        for key in ("multiply_every", "batch_size", "record_every", "latent_dim",
                    "convergence_window", "n_bins"):
            if getattr(self, key) < 1:
                problems.append(f"{key}: must be >= 1")
        if self.total_iterations < 0:
            problems.append("total_iterations: must be >= 0")
        elif self.total_iterations and self.total_iterations < self.multiply_every:
            problems.append("total_iterations: must be >= multiply_every")
        if self.learning_rate <= 0:
            problems.append("learning_rate: must be > 0")
        if self.active_threshold <= 0:
            problems.append("active_threshold: must be > 0")
        if not 0 <= self.outlier_fraction <= 1 or self.outlier_low > self.outlier_high:
            problems.append("outlier_fraction/low/high: need 0 <= fraction <= 1 and low <= high")
        try:
            self.hidden_sizes()
        except UsageError as exc:
            problems.append(f"hidden: {exc}")
        try:
            datasets.parse_transform(self.transform)
        except UsageError as exc:
            problems.append(f"transform: {exc}")
        if problems:
            raise UsageError("invalid config:\n  " + "\n  ".join(problems))
        return self

    def hidden_sizes(self) -> tuple[int, ...]:
        try:
            sizes = tuple(int(v) for v in str(self.hidden).split(",") if v.strip())
        except ValueError:
            raise UsageError(f"expected comma-separated integers, got {self.hidden!r}") from None
        if not sizes or min(sizes) < 1:
            raise UsageError("at least one positive hidden width is required")
        return sizes

    def data_path(self) -> Path:
        return Path(self.data_dir) if self.data_dir else Path(self.out) / "data"

    def sweep_config(self) -> experiments.SweepConfig:
        return experiments.SweepConfig(
            lambda_start=self.lambda_start,
            lambda_multiplier=self.lambda_multiplier,
            multiply_every=self.multiply_every,
            total_iterations=self.total_iterations,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            record_every=self.record_every,
            seed=self.seed,
            preprocessing=self.preprocessing,
            latent_dim=self.latent_dim,
            hidden=self.hidden_sizes(),
            variance_mode=self.variance_mode,
            active_threshold=self.active_threshold,
        )


_FIELD_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise UsageError(f"invalid config:\n  {key}: expected {kind.__name__}, got {raw!r}") from None
    return raw.strip()


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Read a config file, apply overrides, reject unknown keys and validate."""
    values: dict = {}
    if path is not None:
        parser = configparser.ConfigParser(interpolation=None)
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except configparser.Error as exc:
            raise UsageError(f"malformed config {path}: {exc}") from None
        extra = [s for s in parser.sections() if s != "run"]
        if extra or not parser.has_section("run"):
            raise UsageError(f"config {path} must contain exactly one [run] section")
        unknown = sorted(set(parser["run"]) - set(_FIELD_TYPES))
        if unknown:
            raise UsageError(f"invalid config:\n  unknown key(s): {', '.join(unknown)}")
        if "schema_version" not in parser["run"]:
            raise UsageError("invalid config:\n  schema_version: missing")
        values = {k: _coerce(k, v) for k, v in parser["run"].items()}
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return RunConfig(**values).validate()


def write_config(cfg: RunConfig, path) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser["run"] = {f.name: str(getattr(cfg, f.name)) for f in fields(RunConfig)}
    with open(path, "w") as fh:
        parser.write(fh)


def _load_split(cfg: RunConfig) -> datasets.SplitData:
    d = cfg.data_path()
    if not (d / "train.csv").exists() or not (d / "test.csv").exists():
        raise DataError(f"no dataset in {d}; run gen-data first")
    x_tr, y_tr = datasets.load_csv(d / "train.csv")
    x_te, y_te = datasets.load_csv(d / "test.csv")
    if y_tr is None or y_te is None:
        raise DataError(f"{d}: dataset files carry no y columns")
    return datasets.SplitData(x_tr, x_te, y_tr, y_te)


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_gen_data(cfg: RunConfig, args) -> int:
    out = cfg.data_path()
    if cfg.experiment == "real":
        if not cfg.uci_path:
            raise UsageError("invalid config:\n  uci_path: required for experiment = real")
        x, y, source = datasets.load_uci_crime(cfg.uci_path, with_manifest=True)
        meta = {"dataset": "uci_crime", "cleaning": source}
    else:
        spiral = datasets.SpiralConfig(cfg.n_samples, cfg.seed, cfg.noise_scale, cfg.transform)
        x, y = datasets.gen_spiral(spiral)
        x = datasets.apply_monotone(x, cfg.transform)
        meta = {"dataset": "spiral", "config": {"n_samples": cfg.n_samples, "seed": cfg.seed,
                                                 "noise_scale": cfg.noise_scale,
                                                 "transform": cfg.transform}}
    data = datasets.split(x, y, cfg.test_fraction, Rng(derive_seed(cfg.seed, "split")))
    sums = {
        "train.csv": datasets.save_csv(out / "train.csv", data.x_train, data.y_train),
        "test.csv": datasets.save_csv(out / "test.csv", data.x_test, data.y_test),
    }
    meta.update({"seed": cfg.seed, "test_fraction": cfg.test_fraction, "sha256": sums,
                 "shapes": {"train": [len(data.x_train), x.shape[1], y.shape[1]],
                            "test": [len(data.x_test), x.shape[1], y.shape[1]]}})
    _write_json(out / "manifest.json", meta)
    print(f"wrote {out} ({len(data.x_train)} train / {len(data.x_test)} test rows)")
    return EXIT_OK


def _print_schedule(sweep: experiments.SweepConfig) -> None:
    print(f"config_hash {sweep.config_hash()}")
    print("iteration,lambda")
    for it, lam in sweep.schedule():
        print(f"{it},{lam:.6f}")


def cmd_sweep(cfg: RunConfig, args) -> int:
    modes = args.grid.split(",") if args.grid else [cfg.preprocessing]
    for m in modes:
        if m not in PREPROCESSING_MODES:
            raise UsageError(f"--grid: unknown preprocessing mode {m!r}")
    sweeps = [replace(cfg.sweep_config(), preprocessing=m) for m in modes]
    if args.dry_run:
        for s in sweeps:
            _print_schedule(s)
        return EXIT_OK
    data = _load_split(cfg)
    curves = experiments.run_many([(s, data) for s in sweeps], out_root=cfg.out)
    for h, c in sorted(curves.items()):
        last = c.points[-1]
        print(f"{Path(cfg.out) / 'runs' / h}: lambda={last.lam:.4f} i_xt={last.i_xt:.4f} "
              f"i_ty={last.i_ty:.4f} active={last.active_dims}")
    return EXIT_OK


def cmd_eval(cfg: RunConfig, args) -> int:
    data = _load_split(cfg)
    for run in args.runs:
        curve = experiments.predictive_curve(run, data.x_test, data.y_test)
        curve.write_csv(Path(run) / "test_curve.csv")
        last = curve.points[-1]
        print(f"{run}: test i_xt={last.i_xt:.4f} i_ty={last.i_ty:.4f}")
    return EXIT_OK


def cmd_reconstruct(cfg: RunConfig, args) -> int:
    data = _load_split(cfg)
    curve, model = experiments.load_run(args.run)
    if args.active is not None:
        point = experiments.select_lambda_for_active(curve, args.active)
        model.encoder, model.decoder = curve.checkpoints[point.iteration]
        model.lam = point.lam
        print(f"checkpoint {point.iteration}: lambda={point.lam:.4f} active={point.active_dims}")
    path = Path(args.run) / "reconstruction.csv"
    experiments.reconstruct_export(model, data.x_test, path)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_export_latent(cfg: RunConfig, args) -> int:
    data = _load_split(cfg)
    curve, model = experiments.load_run(args.run)
    if args.iteration is not None:
        if args.iteration not in curve.checkpoints:
            raise DataError(f"no checkpoint at iteration {args.iteration}")
        model.encoder, model.decoder = curve.checkpoints[args.iteration]
        model.lam = next(p.lam for p in curve.points if p.iteration == args.iteration)
    x = np.concatenate([data.x_train, data.x_test])
    y = np.concatenate([data.y_train, data.y_test])
    if not 0 <= cfg.target_column < y.shape[1]:
        raise UsageError(f"target_column {cfg.target_column} outside 0..{y.shape[1] - 1}")
    path = Path(args.run) / "latent.csv"
    res = experiments.export_latent(model, x, y[:, cfg.target_column], cfg.n_bins, path,
                                    cfg.active_threshold)
    print(f"wrote {path} (dims {res.selected}, {res.active} active)")
    return EXIT_OK


def cmd_robustness(cfg: RunConfig, args) -> int:
    data = _load_split(cfg)
    rng = Rng(derive_seed(cfg.seed, "outliers"))
    res = experiments.robustness_compare(cfg.sweep_config(), data, rng, cfg.outlier_fraction,
                                         cfg.outlier_low, cfg.outlier_high)
    out = Path(cfg.out) / "robustness"
    for (mode, tag), curve in sorted(res.curves.items()):
        curve.write_csv(out / f"{mode}-{tag}.csv")
    rows = res.summary_rows()
    lines = ["preprocessing,i_ty_clean,i_ty_attacked,degradation"]
    lines += [f"{r['preprocessing']},{r['i_ty_clean']!r},{r['i_ty_attacked']!r},{r['degradation']!r}"
              for r in rows]
    (out / "summary.csv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def cmd_convergence(cfg: RunConfig, args) -> int:
    data = _load_split(cfg)
    sweep = cfg.sweep_config()
    tr = experiments.convergence_trace(sweep, data, cfg.convergence_lambda, cfg.convergence_delta,
                                       cfg.convergence_window)
    path = Path(cfg.out) / "convergence" / f"{cfg.preprocessing}-seed{cfg.seed}.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# lambda={cfg.convergence_lambda!r} final={tr.final_loss!r} threshold={tr.threshold!r} "
             f"threshold_iteration={tr.threshold_iteration}", "iteration,loss,smoothed"]
    lines += [f"{i},{a!r},{b!r}" for i, (a, b) in enumerate(zip(tr.losses.tolist(), tr.smoothed.tolist()))]
    path.write_text("\n".join(lines) + "\n")
    print(f"{cfg.preprocessing}: threshold iteration {tr.threshold_iteration} "
          f"(final loss {tr.final_loss:.4f})")
    return EXIT_OK


def _curve_hash(run: Path) -> str:
    return hashlib.sha256((run / "curve.csv").read_bytes()).hexdigest()


def cmd_report(cfg: RunConfig, args) -> int:
    runs = [Path(r) for r in args.runs]
    if len(runs) < 2:
        raise UsageError("report needs at least two run directories")
    for r in runs:
        if not (r / "curve.csv").exists():
            raise DataError(f"{r}: no curve.csv")
    keyed = sorted(((_curve_hash(r), str(r)), r) for r in runs)
    rows = ["hash_a,hash_b,run_a,run_b,h_statistic,p_value,dof,terminal_i_ty_a,terminal_i_ty_b"]
    for ((ha, na), ra), ((hb, nb), rb) in itertools.combinations(keyed, 2):
        ca = experiments.InfoCurve.read_csv(ra / "curve.csv")
        cb = experiments.InfoCurve.read_csv(rb / "curve.csv")
        res = experiments.compare_curves(ca, cb)
        rows.append(f"{ha[:16]},{hb[:16]},{Path(na).name},{Path(nb).name},{res.h_statistic!r},"
                    f"{res.p_value!r},{res.degrees_of_freedom},{ca.points[-1].i_ty!r},"
                    f"{cb.points[-1].i_ty!r}")
    text = "\n".join(rows) + "\n"
    out = Path(cfg.out) / "report.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "reconstruct": cmd_reconstruct,
    "export-latent": cmd_export_latent,
    "robustness": cmd_robustness,
    "convergence": cmd_convergence,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key-value config file ([run] section)")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output root (default: out)")
    common.add_argument("--preprocessing", choices=PREPROCESSING_MODES)
    common.add_argument("--lambda-start", type=float, dest="lambda_start")
    common.add_argument("--lambda-mult", type=float, dest="lambda_multiplier")
    common.add_argument("--iters", type=int, dest="total_iterations")
    common.add_argument("--dry-run", action="store_true", help="validate and print, do not compute")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="copula-dib", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common], help="generate or ingest a dataset")
    sp = sub.add_parser("sweep", parents=[common], help="lambda-annealed training run")
    sp.add_argument("--grid", help="comma-separated preprocessing modes run as parallel jobs")
    ev = sub.add_parser("eval", parents=[common], help="held-out curve for run directories")
    ev.add_argument("runs", nargs="+")
    rc = sub.add_parser("reconstruct", parents=[common], help="decoder means on the test set")
    rc.add_argument("run")
    rc.add_argument("--active", type=int, help="use the checkpoint closest to this many active dims")
    el = sub.add_parser("export-latent", parents=[common], help="two latent means with bin labels")
    el.add_argument("run")
    el.add_argument("--iteration", type=int)
    el.add_argument("--target-column", type=int, dest="target_column")
    el.add_argument("--bins", type=int, dest="n_bins")
    sub.add_parser("robustness", parents=[common], help="clean vs outlier-injected runs")
    sub.add_parser("convergence", parents=[common], help="fixed-lambda loss trace")
    rp = sub.add_parser("report", parents=[common], help="pairwise Kruskal-Wallis of run curves")
    rp.add_argument("runs", nargs="+")
    return p


_OVERRIDE_KEYS = ("seed", "out", "preprocessing", "lambda_start", "lambda_multiplier",
                  "total_iterations", "target_column", "n_bins")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
        cfg = load_config(args.config, overrides)
        if args.dry_run and args.command != "sweep":
            print(f"config ok: {args.command}")
            return EXIT_OK
        return COMMANDS[args.command](cfg, args)
    except CopulaDIBError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA if isinstance(exc, OSError) else EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
