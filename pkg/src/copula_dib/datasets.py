"""Synthetic spiral data, monotone marginal corruptions, outliers, UCI ingestion.

Every generator takes its randomness from an explicit :class:`~copula_dib.nn.Rng`
or seed, so datasets are reproducible bit for bit.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError
from .nn import Rng
from .numerics import beta_quantile, gamma_quantile, midranks

__all__ = [
    "SpiralConfig",
    "SplitData",
    "apply_monotone",
    "bin_target",
    "gen_spiral",
    "inject_outliers",
    "load_csv",
    "load_uci_crime",
    "parse_transform",
    "save_csv",
    "split",
]

DEFAULT_BETA = (2.0, 5.0)
DEFAULT_GAMMA = (2.0, 2.0)
UCI_SHAPE = (1901, 102, 18)


@dataclass
class SpiralConfig:
    n_samples: int = 200_000
    seed: int = 0
    noise_scale: float = 0.05
    transform: str = "beta"

    def __post_init__(self):
        if self.n_samples < 1:
            raise UsageError("n_samples must be >= 1")
        if self.noise_scale < 0:
            raise UsageError("noise_scale must be >= 0")
        parse_transform(self.transform)


@dataclass
class SplitData:
    x_train: np.ndarray
    x_test: np.ndarray
    y_train: np.ndarray
    y_test: np.ndarray
    train_index: np.ndarray = field(default=None, repr=False)
    test_index: np.ndarray = field(default=None, repr=False)


def gen_spiral(cfg: SpiralConfig, return_latent: bool = False):
    """Ten inputs and a two-dimensional spiral target.

    ``x1, x2 ~ U[0, 2]``; ``x3..x10`` mix two shared uniforms ``k1, k2`` with
    one ``(a_i, b_i)`` pair per column. ``z1 = |(x1, x2)|`` and
    ``z2 = z1 + x4`` are divided by their sample maxima, noise is added, and
    ``y = z2 * (cos, sin)(1.75 * pi * z1)``. The transform in ``cfg`` is not
    applied here; see :func:`apply_monotone`.
    """
    rng = Rng(cfg.seed)
    n = cfg.n_samples
    a = rng.uniform(8)
    b = rng.uniform(8)
    x12 = rng.uniform((n, 2), 0.0, 2.0)
    k = rng.uniform((n, 2))
    mixed = a * k[:, :1] + (1.0 - a) * k[:, 1:] + 0.3 * b
    x = np.concatenate([x12, mixed], axis=1)
    z1 = np.sqrt(x[:, 0] ** 2 + x[:, 1] ** 2)
    z2 = z1 + x[:, 3]
    z1 = z1 / z1.max()
    z2 = z2 / z2.max()
    if cfg.noise_scale > 0:
        noise = rng.standard_normal(n, 2)
        z1 = z1 + cfg.noise_scale * noise[:, 0]
        z2 = z2 + cfg.noise_scale * noise[:, 1]
    angle = 1.75 * math.pi * z1
    y = np.stack([z2 * np.cos(angle), z2 * np.sin(angle)], axis=1)
    if return_latent:
        return x, y, np.stack([z1, z2], axis=1)
    return x, y


_TRANSFORM_RE = re.compile(r"^\s*(identity|beta|gamma|exp)\s*(?:\(([^)]*)\))?\s*$")


def parse_transform(spec) -> tuple[str, tuple[float, ...]]:
    """``"beta"``, ``"beta(2,5)"``, ``("gamma", (2, 2))`` ... to ``(kind, params)``."""
    if isinstance(spec, tuple):
        kind, params = spec[0], tuple(float(p) for p in (spec[1] if len(spec) > 1 else ()))
    else:
        m = _TRANSFORM_RE.match(str(spec))
        if not m:
            raise UsageError(f"unknown transform {spec!r}")
        kind = m.group(1)
        params = tuple(float(p) for p in m.group(2).split(",")) if m.group(2) else ()
    if kind == "beta":
        params = params or DEFAULT_BETA
    elif kind == "gamma":
        params = params or DEFAULT_GAMMA
    elif params:
        raise UsageError(f"transform {kind!r} takes no parameters")
    if kind in ("beta", "gamma") and (len(params) != 2 or min(params) <= 0):
        raise UsageError(f"{kind} transform needs two positive parameters, got {params}")
    if kind not in ("identity", "beta", "gamma", "exp"):
        raise UsageError(f"unknown transform {kind!r}")
    return kind, params


def apply_monotone(x: np.ndarray, transform) -> np.ndarray:
    """Strictly increasing per-column map.

    ``beta``/``gamma`` first send each column to ``rank / (n + 1)`` and then
    through the quantile function; ``exp`` is applied directly.
    """
    kind, params = parse_transform(transform)
    x = np.asarray(x, dtype=np.float64)
    if kind == "identity":
        return x.copy()
    if kind == "exp":
        return np.exp(x)
    n = x.shape[0]
    out = np.empty_like(x)
    for j in range(x.shape[1]):
        u = midranks(x[:, j]) / (n + 1)
        if kind == "beta":
            out[:, j] = beta_quantile(u, *params)
        else:
            out[:, j] = gamma_quantile(u, params[0], params[1])
    return out


def inject_outliers(x: np.ndarray, fraction: float, low: float, high: float, rng: Rng):
    """Add ``U[low, high]`` to ``round(fraction * size)`` distinct random entries.

    Returns a new array; the input is untouched.
    """
    if not 0.0 <= fraction <= 1.0:
        raise UsageError("fraction must lie in [0, 1]")
    if low > high:
        raise UsageError("low must not exceed high")
    out = np.array(x, dtype=np.float64, copy=True)
    k = int(math.floor(fraction * out.size + 0.5))
    if k == 0:
        return out
    idx = rng.choice(out.size, k)
    out.flat[idx] += rng.uniform(k, low, high)
    return out


def split(x: np.ndarray, y: np.ndarray, test_fraction: float, rng: Rng) -> SplitData:
    """Uniform random row partition; both index sets are returned in row order."""
    if not 0.0 < test_fraction < 1.0:
        raise UsageError("test_fraction must lie in (0, 1)")
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape[0] != y.shape[0]:
        raise UsageError("x and y row counts differ")
    n = x.shape[0]
    n_test = int(math.floor(test_fraction * n + 0.5))
    perm = rng.permutation(n)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return SplitData(x[train], x[test], y[train], y[test], train, test)


def bin_target(y_col, n_bins: int) -> np.ndarray:
    """Equal-frequency labels ``0..n_bins-1`` by sorted rank; sizes differ by at most one."""
    y = np.asarray(y_col, dtype=np.float64).ravel()
    if n_bins < 2:
        raise UsageError("n_bins must be >= 2")
    if n_bins > y.size:
        raise UsageError(f"{n_bins} bins for {y.size} values")
    order = np.argsort(y, kind="stable")
    labels = np.empty(y.size, dtype=np.int64)
    labels[order] = (np.arange(y.size) * n_bins) // y.size
    return labels


def save_csv(path, x: np.ndarray, y: np.ndarray | None = None) -> str:
    """Write ``x1..xp[,y1..yq]`` with shortest round-trip float text; returns sha256."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    cols = [f"x{i + 1}" for i in range(x.shape[1])]
    data = x
    if y is not None:
        y = np.asarray(y, dtype=np.float64).reshape(x.shape[0], -1)
        cols += [f"y{i + 1}" for i in range(y.shape[1])]
        data = np.concatenate([x, y], axis=1)
    buf = io.StringIO()
    buf.write(",".join(cols) + "\n")
    for row in data:
        buf.write(",".join(repr(float(v)) for v in row) + "\n")
    text = buf.getvalue().encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(text)
    return hashlib.sha256(text).hexdigest()


def load_csv(path) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverse of :func:`save_csv`: columns named ``x*`` and ``y*``."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DataError(f"{path}: empty file")
    header = rows[0]
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None
    data = data.reshape(len(rows) - 1, len(header))
    xi = [i for i, h in enumerate(header) if h.startswith("x")]
    yi = [i for i, h in enumerate(header) if h.startswith("y")]
    return data[:, xi], (data[:, yi] if yi else None)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def load_uci_crime(
    path,
    expected_shape: tuple[int, int, int] | None = UCI_SHAPE,
    n_non_predictive: int = 4,
    n_targets: int = 18,
    max_missing_fraction: float = 0.5,
    manifest_path=None,
    with_manifest: bool = False,
):
    """Load the unnormalised Communities-and-Crime export.

    Columns are taken positionally: the first ``n_non_predictive`` are
    identifiers, the last ``n_targets`` are targets, everything between is
    predictive. ``?`` marks a missing value.

    Cleaning drops heavily-missing predictive columns first and then every
    row that still has a ``?`` in a kept column. With ``expected_shape`` set,
    the missing-count threshold is tuned over the distinct per-column missing
    counts until ``(rows, predictive, targets)`` matches; if no threshold does,
    :class:`DataError` lists what was achieved. Without it, columns missing
    in more than ``max_missing_fraction`` of rows are dropped.

    Returns ``(X, Y)``, or ``(X, Y, manifest)`` with ``with_manifest=True``.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"UCI file not found: {path}")
    raw_bytes = path.read_bytes()
    rows = [r for r in csv.reader(io.StringIO(raw_bytes.decode("latin-1"))) if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    width = len(rows[0])
    first = n_non_predictive
    last = width - n_targets
    if last <= first:
        raise DataError(f"{path}: {width} columns cannot hold the declared layout")
    if not all(_is_number(v) or v.strip() == "?" for v in rows[0][first:]):
        names, rows = [c.strip() for c in rows[0]], rows[1:]
    else:
        names = [f"col{i:03d}" for i in range(width)]
    bad = [i for i, r in enumerate(rows) if len(r) != width]
    if bad:
        raise DataError(f"{path}: rows {bad[:5]} have the wrong number of fields")
    cells = np.array([[v.strip() for v in r[first:]] for r in rows], dtype=object)
    missing = cells == "?"
    n_rows = cells.shape[0]
    n_pred = last - first
    pred_missing = missing[:, :n_pred].sum(axis=0)

    def attempt(threshold):
        keep_cols = np.flatnonzero(pred_missing <= threshold)
        cols = np.concatenate([keep_cols, np.arange(n_pred, n_pred + n_targets)])
        keep_rows = ~missing[:, cols].any(axis=1)
        return keep_cols, keep_rows

    default = max_missing_fraction * n_rows
    candidates = [default]
    if expected_shape is not None:
        candidates = [default] + sorted(set(pred_missing.tolist()), reverse=True)
        candidates.append(-1)
    achieved = []
    chosen = None
    for thr in candidates:
        keep_cols, keep_rows = attempt(thr)
        shape = (int(keep_rows.sum()), int(keep_cols.size), n_targets)
        achieved.append(shape)
        if expected_shape is None or shape == tuple(expected_shape):
            chosen = (thr, keep_cols, keep_rows)
            break
    if chosen is None:
        raise DataError(
            f"UCI cleaning reached shapes {sorted(set(achieved))}, none equal to {tuple(expected_shape)}"
        )
    thr, keep_cols, keep_rows = chosen
    try:
        body = cells[keep_rows]
        x = body[:, keep_cols].astype(np.float64)
        y = body[:, n_pred:].astype(np.float64)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric value in a kept column ({exc})") from None
    pred_names = names[first:last]
    manifest = {
        "source": path.name,
        "source_sha256": hashlib.sha256(raw_bytes).hexdigest(),
        "raw_rows": n_rows,
        "raw_columns": width,
        "non_predictive": names[:first],
        "dropped_predictive": [pred_names[i] for i in range(n_pred) if i not in set(keep_cols.tolist())],
        "predictive": [pred_names[i] for i in keep_cols],
        "targets": names[last:],
        "missing_threshold": float(thr),
        "rows_retained": int(keep_rows.sum()),
        "shape": [int(x.shape[0]), int(x.shape[1]), int(y.shape[1])],
    }
    manifest["manifest_sha256"] = hashlib.sha256(
        json.dumps(manifest, sort_keys=True).encode()
    ).hexdigest()
    if manifest_path is not None:
        Path(manifest_path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if with_manifest:
        return x, y, manifest
    return x, y


def spiral_manifest(cfg: SpiralConfig, x: np.ndarray, y: np.ndarray, checksums: dict) -> dict:
    return {
        "dataset": "spiral",
        "config": asdict(cfg),
        "shapes": {"x": list(x.shape), "y": list(y.shape)},
        "sha256": checksums,
    }
