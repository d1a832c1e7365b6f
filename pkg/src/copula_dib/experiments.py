"""Experiment drivers: annealed sweeps, held-out curves, exports, comparisons.

A sweep trains one model while multiplying lambda by a fixed factor every
``multiply_every`` iterations and records a :class:`CurvePoint` on the full
training set every ``record_every`` iterations. Every random stream is
derived from ``SweepConfig.seed``, so two runs with the same config and data
produce byte-identical curve files.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .datasets import SplitData, bin_target, inject_outliers
from .errors import DataError, NumericError, UsageError
from .ib_model import (
    OFFSET_CONVENTION,
    CurvePoint,
    IbModel,
    Preprocessor,
    active_dims,
    build_model,
    encode,
    evaluate,
    ib_loss,
    preprocess,
)
from .nn import AdamState, MlpParams, Rng, adam_step, derive_seed, forward, load_arrays, save_arrays
from .numerics import KruskalResult, kruskal_wallis

log = logging.getLogger(__name__)

__all__ = [
    "InfoCurve",
    "SweepConfig",
    "compare_curves",
    "convergence_trace",
    "export_latent",
    "predictive_curve",
    "reconstruct_export",
    "robustness_compare",
    "run_sweep",
    "select_lambda_for_active",
    "load_run",
    "run_many",
]

CURVE_FIELDS = ("iteration", "lambda", "i_xt", "i_ty", "loss", "active_dims")


@dataclass(frozen=True)
class SweepConfig:
    lambda_start: float = 1.0
    lambda_multiplier: float = 1.06
    multiply_every: int = 500
    total_iterations: int = 70_000
    batch_size: int = 500
    learning_rate: float = 0.0006
    record_every: int = 500
    seed: int = 0
    preprocessing: str = "copula"
    latent_dim: int = 10
    hidden: tuple[int, ...] = (50, 50)
    variance_mode: str = "fixed_unit"
    active_threshold: float = 0.01

    def __post_init__(self):
        if not self.lambda_multiplier > 1:
            raise UsageError("lambda_multiplier must be > 1")
        if self.multiply_every < 1 or self.record_every < 1 or self.batch_size < 1:
            raise UsageError("multiply_every, record_every and batch_size must be >= 1")
        if self.total_iterations < 0:
            raise UsageError("total_iterations must be >= 0")
        if self.total_iterations and self.total_iterations < self.multiply_every:
            raise UsageError("total_iterations must be >= multiply_every")
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))

    @classmethod
    def artificial(cls, **overrides) -> "SweepConfig":
        """Defaults of the synthetic spiral experiments."""
        return cls(**overrides)

    @classmethod
    def real_data(cls, **overrides) -> "SweepConfig":
        """Defaults of the Communities-and-Crime experiments."""
        base = dict(lambda_multiplier=1.01, total_iterations=150_000, batch_size=1255,
                    learning_rate=0.0005, latent_dim=18, hidden=(100, 100))
        base.update(overrides)
        return cls(**base)

    def lam(self, iteration: int) -> float:
        return self.lambda_start * self.lambda_multiplier ** (iteration // self.multiply_every)

    def schedule(self) -> list[tuple[int, float]]:
        """``(iteration, lambda)`` at every recording point."""
        its = list(range(0, self.total_iterations, self.record_every))
        if self.total_iterations not in its:
            its.append(self.total_iterations)
        return [(it, self.lam(it)) for it in its]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class InfoCurve:
    points: list[CurvePoint]
    config_hash: str
    model: IbModel | None = field(default=None, repr=False)
    checkpoints: dict[int, tuple[MlpParams, MlpParams]] = field(default_factory=dict, repr=False)
    transform_digest: str = ""
    initial_digest: str = ""
    config: SweepConfig | None = field(default=None, repr=False)

    def column(self, name: str) -> np.ndarray:
        key = "lam" if name == "lambda" else name
        return np.array([getattr(p, key) for p in self.points])

    def to_csv_text(self) -> str:
        lines = [f"# {OFFSET_CONVENTION}", ",".join(CURVE_FIELDS)]
        for p in self.points:
            lines.append(
                f"{p.iteration},{p.lam!r},{p.i_xt!r},{p.i_ty!r},{p.loss!r},{p.active_dims}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path) -> str:
        text = self.to_csv_text().encode()
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(text)
        return hashlib.sha256(text).hexdigest()

    @classmethod
    def read_csv(cls, path, config_hash: str = "") -> "InfoCurve":
        points = []
        for line in Path(path).read_text().splitlines():
            if not line or line.startswith("#") or line.startswith("iteration"):
                continue
            it, lam, ixt, ity, loss, act = line.split(",")
            points.append(CurvePoint(int(it), float(lam), float(ixt), float(ity), float(loss), int(act)))
        return cls(points, config_hash)


def _eval_noise(seed: int, iteration: int, n: int, width: int) -> np.ndarray:
    # shared by training and held-out evaluation so both see the same convention
    return Rng(derive_seed(seed, "eval", iteration)).standard_normal(n, width)


class _Batches:
    """Epoch-wise shuffled mini-batches; a short tail is dropped."""

    def __init__(self, n: int, size: int, rng: Rng):
        if size > n:
            size = n
        self.n, self.size, self.rng = n, size, rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def next(self) -> np.ndarray:
        if self.pos + self.size > self.n:
            self.perm = self.rng.permutation(self.n)
            self.pos = 0
        idx = self.perm[self.pos:self.pos + self.size]
        self.pos += self.size
        return idx


def _train_setup(cfg: SweepConfig, data: SplitData):
    root = Rng(cfg.seed)
    model = build_model(
        data.x_train.shape[1], data.y_train.shape[1], root.spawn("init"),
        latent_dim=cfg.latent_dim, hidden=cfg.hidden, lam=cfg.lambda_start,
        preprocessing=cfg.preprocessing, variance_mode=cfg.variance_mode,
    )
    x, y, _ = preprocess(model, data.x_train, data.y_train, fit=True)
    states = (
        AdamState.for_params(model.encoder, cfg.learning_rate),
        AdamState.for_params(model.decoder, cfg.learning_rate),
    )
    batches = _Batches(x.shape[0], cfg.batch_size, root.spawn("batches"))
    noise = root.spawn("noise")
    return model, x, y, states, batches, noise


def _step(model: IbModel, x, y, idx, states, noise: Rng, iteration: int) -> float:
    loss, (g_enc, g_dec) = ib_loss(model, x[idx], y[idx], noise)
    if not math.isfinite(loss):
        raise NumericError(
            f"non-finite loss at iteration {iteration} (lambda={model.lam}); "
            f"encoder digest {model.encoder.digest()[:12]}, decoder digest {model.decoder.digest()[:12]}"
        )
    adam_step(states[0], model.encoder, g_enc)
    adam_step(states[1], model.decoder, g_dec)
    return loss


def _write_checkpoint(path: Path, model: IbModel, iteration: int, cfg_hash: str) -> None:
    arrays = {**model.encoder.named_arrays("enc."), **model.decoder.named_arrays("dec.")}
    save_arrays(path, arrays, {"iteration": iteration, "lambda": model.lam, "config_hash": cfg_hash})


def _write_run_files(out_dir: Path, cfg: SweepConfig, curve: InfoCurve, model: IbModel, extra: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    curve_sha = curve.write_csv(out_dir / "curve.csv")
    save_arrays(out_dir / "transforms.bin", model.preprocessor.named_arrays(),
                {"mode": model.preprocessing, "digest": model.preprocessor.digest()})
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": curve.config_hash,
        "units": "nats",
        "i_ty_convention": OFFSET_CONVENTION,
        "architecture": {"encoder": model.encoder.sizes, "decoder": model.decoder.sizes,
                         "activation": "softplus", "init": "glorot_uniform"},
        "seed": cfg.seed,
        "preprocessing": cfg.preprocessing,
        "float": "float64",
        "backend": kernels.BACKEND,
        "batch_policy": "epoch-wise shuffle, tail dropped",
        "transform_digest": model.preprocessor.digest(),
        "curve_sha256": curve_sha,
        **extra,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def run_sweep(
    cfg: SweepConfig,
    data: SplitData,
    out_dir=None,
    keep_checkpoints: bool = False,
) -> InfoCurve:
    """Train one model under the lambda schedule and record its information curve.

    With ``out_dir`` the run writes ``curve.csv``, ``manifest.json``,
    ``transforms.bin`` and one ``ckpt-<iteration>`` per recording point.
    ``keep_checkpoints`` keeps copies of the parameters in memory instead.
    """
    model, x, y, states, batches, noise = _train_setup(cfg, data)
    cfg_hash = cfg.config_hash()
    out_dir = Path(out_dir) if out_dir is not None else None
    curve = InfoCurve([], cfg_hash, transform_digest=model.preprocessor.digest(),
                      initial_digest=initial_param_digest(model), config=cfg)
    record_at = {it for it, _ in cfg.schedule()}
    width = model.latent_dim

    def record(it: int):
        model.lam = cfg.lam(it)
        point = evaluate(model, x, y, _eval_noise(cfg.seed, it, x.shape[0], width), it,
                         cfg.active_threshold)
        curve.points.append(point)
        if keep_checkpoints:
            curve.checkpoints[it] = (model.encoder.copy(), model.decoder.copy())
        if out_dir is not None:
            _write_checkpoint(out_dir / f"ckpt-{it}", model, it, cfg_hash)
        log.debug("iter %d lambda %.4f i_xt %.4f i_ty %.4f active %d", it, point.lam,
                  point.i_xt, point.i_ty, point.active_dims)

    for it in range(cfg.total_iterations):
        if it in record_at:
            record(it)
        model.lam = cfg.lam(it)
        _step(model, x, y, batches.next(), states, noise, it)
    record(cfg.total_iterations)
    curve.model = model
    if out_dir is not None:
        _write_run_files(out_dir, cfg, curve, model, {"initial_param_digest": curve.initial_digest})
    return curve


def initial_param_digest(model: IbModel) -> str:
    return hashlib.sha256((model.encoder.digest() + model.decoder.digest()).encode()).hexdigest()


def load_run(run_dir) -> tuple[InfoCurve, IbModel]:
    """Rebuild the curve, the final model and all checkpoints of a run directory.

    Raises
    ------
    DataError
        A file named by the layout is missing or unreadable.
    """
    run_dir = Path(run_dir)
    try:
        manifest = json.loads((run_dir / "manifest.json").read_text())
        pre_arrays, pre_meta = load_arrays(run_dir / "transforms.bin")
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read run directory {run_dir}: {exc}") from exc
    cfg_dict = dict(manifest["config"])
    cfg_dict["hidden"] = tuple(cfg_dict["hidden"])
    cfg = SweepConfig(**cfg_dict)
    curve = InfoCurve.read_csv(run_dir / "curve.csv", manifest["config_hash"])
    curve.config = cfg
    curve.transform_digest = manifest["transform_digest"]
    curve.initial_digest = manifest.get("initial_param_digest", "")
    for p in curve.points:
        path = run_dir / f"ckpt-{p.iteration}"
        if not path.exists():
            raise DataError(f"missing checkpoint {path}")
        arrays, _ = load_arrays(path)
        curve.checkpoints[p.iteration] = (MlpParams.from_named(arrays, "enc."),
                                          MlpParams.from_named(arrays, "dec."))
    enc, dec = curve.checkpoints[curve.points[-1].iteration]
    model = IbModel(enc.copy(), dec.copy(), cfg.latent_dim, curve.points[-1].lam,
                    cfg.preprocessing, cfg.variance_mode)
    model.preprocessor = Preprocessor.from_named(pre_meta["mode"], pre_arrays)
    if model.preprocessor.digest() != curve.transform_digest:
        raise DataError(f"{run_dir}: transforms.bin does not match the manifest digest")
    curve.model = model
    return curve, model


def predictive_curve(source, x_test, y_test) -> InfoCurve:
    """Re-evaluate every checkpoint of a sweep on held-out data.

    ``source`` is an :class:`InfoCurve` kept with ``keep_checkpoints=True``
    or a run directory. The training-fitted transforms are reused as they
    are, and the evaluation noise follows the same per-iteration convention
    as the training curve, so passing the training data reproduces it.
    """
    curve = load_run(source)[0] if isinstance(source, (str, os.PathLike)) else source
    if curve.model is None or curve.config is None:
        raise UsageError("predictive_curve needs a curve from run_sweep or load_run")
    missing = [p.iteration for p in curve.points if p.iteration not in curve.checkpoints]
    if missing:
        raise DataError(f"missing checkpoints for iterations {missing[:5]}")
    cfg, template = curve.config, curve.model
    x, y, pre = preprocess(template, x_test, y_test, fit=False)
    probe = IbModel(template.encoder, template.decoder, template.latent_dim, template.lam,
                    template.preprocessing, template.variance_mode, pre)
    out = InfoCurve([], curve.config_hash, transform_digest=pre.digest(),
                    initial_digest=curve.initial_digest, config=cfg)
    for p in curve.points:
        probe.encoder, probe.decoder = curve.checkpoints[p.iteration]
        probe.lam = p.lam
        eps = _eval_noise(cfg.seed, p.iteration, x.shape[0], template.latent_dim)
        out.points.append(evaluate(probe, x, y, eps, p.iteration, cfg.active_threshold))
    return out


def reconstruct_export(model: IbModel, test_x, path=None) -> np.ndarray:
    """Decoder means at the posterior mean of ``t``, on the original y scale.

    Copula models map back through the training-fitted empirical quantiles,
    so every value lies inside the observed training range of y.
    """
    if model.preprocessor is None:
        raise UsageError("model has no fitted preprocessing")
    x = model.preprocessor.transform_x(test_x)
    mu, _, _ = encode(model, x)
    means, _ = forward(model.decoder, mu)
    y = model.preprocessor.inverse_y(means)
    if path is not None:
        header = ",".join(f"y{j + 1}" for j in range(y.shape[1]))
        rows = [",".join(repr(float(v)) for v in row) for row in y]
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(header + "\n" + "\n".join(rows) + "\n")
    return y


def _workers(n_jobs: int) -> int:
    raw = os.environ.get("CIB_WORKERS", "1")
    try:
        cap = int(raw)
    except ValueError:
        raise UsageError(f"CIB_WORKERS must be an integer, got {raw!r}") from None
    return max(1, min(cap, n_jobs))


def _sweep_job(args):
    cfg, data, out_dir, keep = args
    return run_sweep(cfg, data, out_dir, keep_checkpoints=keep)


def run_many(
    jobs: Sequence[tuple[SweepConfig, SplitData]],
    out_root=None,
    keep_checkpoints: bool = False,
) -> dict[str, InfoCurve]:
    """Run independent sweeps, up to ``CIB_WORKERS`` at a time.

    Results are keyed by config hash. Each run owns its seed, so the result
    does not depend on the worker count or completion order.
    """
    hashes = [cfg.config_hash() for cfg, _ in jobs]
    if len(set(hashes)) != len(hashes):
        raise UsageError("duplicate configurations in run_many")
    args = [
        (cfg, data, None if out_root is None else Path(out_root) / "runs" / h, keep_checkpoints)
        for (cfg, data), h in zip(jobs, hashes)
    ]
    n = _workers(len(args))
    if n == 1:
        curves = [_sweep_job(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=n) as pool:
            curves = list(pool.map(_sweep_job, args))
    return dict(zip(hashes, curves))


@dataclass
class RobustnessResult:
    curves: dict[tuple[str, str], InfoCurve]  # (preprocessing, "clean" | "attacked")
    degradation: dict[str, float]  # terminal i_ty clean minus attacked
    attacked_x: np.ndarray = field(repr=False)

    def summary_rows(self) -> list[dict]:
        rows = []
        for mode, deg in sorted(self.degradation.items()):
            clean = self.curves[(mode, "clean")].points[-1].i_ty
            hit = self.curves[(mode, "attacked")].points[-1].i_ty
            rows.append({"preprocessing": mode, "i_ty_clean": clean, "i_ty_attacked": hit,
                         "degradation": deg})
        return rows


def robustness_compare(
    cfg: SweepConfig,
    clean: SplitData,
    rng: Rng,
    fraction: float = 0.05,
    low: float = 1.0,
    high: float = 5.0,
    modes: Sequence[str] = ("copula", "none"),
) -> RobustnessResult:
    """Clean versus outlier-injected training inputs for each preprocessing mode.

    Outliers are added to ``x_train`` only. All runs share ``cfg.seed``, so
    their initial parameters are identical.
    """
    attacked_x = inject_outliers(clean.x_train, fraction, low, high, rng)
    attacked = replace(clean, x_train=attacked_x)
    jobs, keys = [], []
    for mode in modes:
        for tag, data in (("clean", clean), ("attacked", attacked)):
            jobs.append((replace(cfg, preprocessing=mode), data))
            keys.append((mode, tag))
    # clean and attacked runs share a config, so they cannot share one run_many call
    curves = {}
    for tag in ("clean", "attacked"):
        sel = [i for i, k in enumerate(keys) if k[1] == tag]
        done = run_many([jobs[i] for i in sel])
        for i in sel:
            curves[keys[i]] = done[jobs[i][0].config_hash()]
    degradation = {
        m: curves[(m, "clean")].points[-1].i_ty - curves[(m, "attacked")].points[-1].i_ty
        for m in modes
    }
    return RobustnessResult(curves, degradation, attacked_x)


@dataclass(frozen=True)
class ConvergenceTrace:
    losses: np.ndarray  # mini-batch loss at every iteration
    smoothed: np.ndarray  # trailing moving average of ``losses``
    final_loss: float
    threshold: float
    threshold_iteration: int


def moving_average(values, window: int) -> np.ndarray:
    """Trailing mean over the last ``window`` values (fewer at the start)."""
    v = np.asarray(values, dtype=np.float64)
    if window < 1:
        raise UsageError("window must be >= 1")
    c = np.concatenate([[0.0], np.cumsum(v)])
    idx = np.arange(1, v.size + 1)
    lo = np.maximum(idx - window, 0)
    return (c[idx] - c[lo]) / (idx - lo)


def threshold_iteration(losses, delta: float = 0.10, window: int = 100) -> tuple[float, float, int]:
    """First iteration whose smoothed loss is within ``delta`` of the final loss.

    The final loss is the last smoothed value and the threshold is
    ``final + delta * |final|``, which equals ``(1 + delta) * final`` for a
    positive final loss and stays above it when the loss is negative.
    Returns ``(final, threshold, iteration)``.
    """
    sm = moving_average(losses, window)
    final = float(sm[-1])
    thr = final + delta * abs(final) if math.isfinite(delta) else math.inf
    hit = np.flatnonzero(sm <= thr)
    return final, thr, int(hit[0])


def convergence_trace(
    cfg: SweepConfig,
    data: SplitData,
    lam: float | None = None,
    delta: float = 0.10,
    window: int = 100,
) -> ConvergenceTrace:
    """Train at a fixed lambda and record the mini-batch loss of every iteration."""
    if lam is not None:
        cfg = replace(cfg, lambda_start=lam)
    model, x, y, states, batches, noise = _train_setup(cfg, data)
    model.lam = cfg.lambda_start
    losses = np.empty(cfg.total_iterations)
    for it in range(cfg.total_iterations):
        losses[it] = _step(model, x, y, batches.next(), states, noise, it)
    if losses.size == 0:
        raise UsageError("convergence_trace needs total_iterations >= 1")
    final, thr, first = threshold_iteration(losses, delta, window)
    return ConvergenceTrace(losses, moving_average(losses, window), final, thr, first)


def compare_curves(curve_a: InfoCurve, curve_b: InfoCurve) -> KruskalResult:
    """Kruskal-Wallis test on the i_ty values of two curves on the same lambda grid."""
    grid_a = [(p.iteration, p.lam) for p in curve_a.points]
    grid_b = [(p.iteration, p.lam) for p in curve_b.points]
    if grid_a != grid_b:
        raise UsageError("curves were not recorded on the same lambda grid")
    return kruskal_wallis([curve_a.column("i_ty"), curve_b.column("i_ty")])


@dataclass
class LatentExport:
    table: np.ndarray  # columns latent_1, latent_2, bin_label
    selected: tuple[int, int]
    correlations: np.ndarray
    bin_summary: list[dict]
    active: int


def _abs_pearson(mu: np.ndarray, y: np.ndarray) -> np.ndarray:
    mc = mu - mu.mean(axis=0)
    yc = y - y.mean()
    denom = np.sqrt((mc * mc).sum(axis=0) * (yc @ yc))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.abs(mc.T @ yc) / denom
    return np.where(denom > 0, r, 0.0)


def export_latent(model: IbModel, x, y_col, n_bins: int = 8, path=None,
                  threshold: float = 0.01) -> LatentExport:
    """Two latent means most correlated with ``y_col``, with equal-frequency bin labels.

    Selection uses absolute Pearson correlation of the latent means. With
    fewer than two active dimensions a warning is issued and the top two are
    exported anyway. ``path`` writes ``<path>`` and ``<path stem>.bins.csv``.
    """
    if model.preprocessor is None:
        raise UsageError("model has no fitted preprocessing")
    y_col = np.asarray(y_col, dtype=np.float64).ravel()
    xs = model.preprocessor.transform_x(x)
    if xs.shape[0] != y_col.size:
        raise UsageError("x and y_col have different lengths")
    mu, _, _ = encode(model, xs)
    if mu.shape[1] < 2:
        raise UsageError("export_latent needs a latent space of at least two dimensions")
    labels = bin_target(y_col, n_bins)
    corr = _abs_pearson(mu, y_col)
    order = np.argsort(-corr, kind="stable")
    sel = (int(order[0]), int(order[1]))
    active = active_dims(model, xs, threshold)
    if active < 2:
        warnings.warn(f"only {active} active latent dimension(s); exporting the top two anyway",
                      stacklevel=2)
    table = np.column_stack([mu[:, sel[0]], mu[:, sel[1]], labels])
    summary = []
    for b in range(n_bins):
        m = labels == b
        summary.append({
            "bin": b, "count": int(m.sum()),
            "y_min": float(y_col[m].min()), "y_max": float(y_col[m].max()),
            "latent_1_mean": float(mu[m, sel[0]].mean()), "latent_1_std": float(mu[m, sel[0]].std()),
            "latent_2_mean": float(mu[m, sel[1]].mean()), "latent_2_std": float(mu[m, sel[1]].std()),
        })
    if path is not None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# latent dims {sel[0]},{sel[1]}; lambda={model.lam!r}",
                 "latent_1,latent_2,bin_label"]
        lines += [f"{a!r},{b!r},{int(c)}" for a, b, c in table.tolist()]
        path.write_text("\n".join(lines) + "\n")
        keys = list(summary[0])
        rows = [",".join(keys)] + [",".join(repr(r[k]) for k in keys) for r in summary]
        path.with_name(path.stem + ".bins.csv").write_text("\n".join(rows) + "\n")
    return LatentExport(table, sel, corr, summary, active)


def select_lambda_for_active(curve: InfoCurve, target: int = 2) -> CurvePoint:
    """Recorded point whose active-dimension count is closest to ``target``.

    Ties go to the later point, which has trained longer.
    """
    if not curve.points:
        raise UsageError("empty curve")
    best = min(range(len(curve.points)),
               key=lambda i: (abs(curve.points[i].active_dims - target), -i))
    return curve.points[best]
