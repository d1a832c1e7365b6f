"""Dense networks with hand-written backpropagation, Adam, and a seedable RNG.

Only the topology family the information bottleneck needs is supported:
a stack of affine layers, softplus on every hidden layer and the identity on
the output. Everything is float64.
"""
from __future__ import annotations

import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .errors import DataError, NumericError, UsageError

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(base_seed: int, *keys) -> int:
    """Child seed for a task, e.g. ``derive_seed(seed, "eval", 500)``."""
    text = json.dumps([int(base_seed) & _MASK64, *[str(k) for k in keys]])
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little")


class Rng:
    """Counter-based generator.

    Draw ``i`` is a fixed hash of ``(seed, i)``, so a stream depends only on the
    seed and on how many values were consumed before it.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._key = _splitmix64(self.seed)
        self.counter = 0

    def uniform(self, size=None, low: float = 0.0, high: float = 1.0):
        n = 1 if size is None else int(np.prod(size))
        u = kernels.counter_uniform(self._key, self.counter, n)
        self.counter += n
        if low != 0.0 or high != 1.0:
            u = low + (high - low) * u
        return float(u[0]) if size is None else u.reshape(size)

    def standard_normal(self, rows: int, cols: int) -> np.ndarray:
        """Box-Muller over consecutive uniform pairs."""
        n = rows * cols
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log(u[0::2]))
        angle = 2.0 * math.pi * u[1::2]
        z = np.empty(2 * m)
        z[0::2] = r * np.cos(angle)
        z[1::2] = r * np.sin(angle)
        return z[:n].reshape(rows, cols)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)``, uniformly without replacement."""
        if not 0 <= k <= n:
            raise UsageError(f"cannot choose {k} of {n} without replacement")
        return self.permutation(n)[:k]

    def spawn(self, *keys) -> "Rng":
        return Rng(derive_seed(self.seed, *keys))


def rng_standard_normal(rng: Rng, rows: int, cols: int) -> np.ndarray:
    if rows < 1 or cols < 1:
        raise UsageError("rows and cols must be >= 1")
    return rng.standard_normal(rows, cols)


def softplus(x):
    """Overflow-safe ``log(1 + exp(x))``."""
    return kernels.softplus_forward(np.asarray(x, dtype=np.float64))[0]


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def named_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"{prefix}w{i}"] = w
            out[f"{prefix}b{i}"] = b
        return out

    @classmethod
    def from_named(cls, arrays: dict[str, np.ndarray], prefix: str = "") -> "MlpParams":
        weights, biases = [], []
        i = 0
        while f"{prefix}w{i}" in arrays:
            weights.append(np.array(arrays[f"{prefix}w{i}"], dtype=np.float64))
            biases.append(np.array(arrays[f"{prefix}b{i}"], dtype=np.float64))
            i += 1
        if not weights:
            raise DataError(f"no layers with prefix {prefix!r}")
        return cls(weights, biases)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights],
                         [np.zeros_like(b) for b in self.biases])

    def digest(self) -> str:
        h = hashlib.sha256()
        for a in self.arrays():
            h.update(np.ascontiguousarray(a, dtype="<f8").tobytes())
        return h.hexdigest()


def init_mlp(sizes: Sequence[int], rng: Rng) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    if len(sizes) < 2:
        raise UsageError("an MLP needs at least an input and an output size")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform((fan_in, fan_out), -limit, limit))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    slopes: list[np.ndarray]


def forward(params: MlpParams, batch: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    """Run a batch through the network.

    Returns the output and the cache ``backward`` needs: the input of each
    layer and the softplus slope at each hidden pre-activation.
    """
    a = np.asarray(batch, dtype=np.float64)
    if a.ndim != 2 or a.shape[1] != params.weights[0].shape[0]:
        raise UsageError(
            f"batch of shape {a.shape} does not fit input width {params.weights[0].shape[0]}"
        )
    cache = ForwardCache([], [])
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(a)
        z = a @ w + b
        if i < last:
            a, slope = kernels.softplus_forward(z)
            cache.slopes.append(slope)
        else:
            a = z
    return a, cache


def backward(
    params: MlpParams, cache: ForwardCache, output_gradient: np.ndarray
) -> tuple[MlpParams, np.ndarray]:
    """Gradients of a scalar loss given ``dloss/doutput``.

    Returns the parameter gradients (same layout as ``params``) and the
    gradient with respect to the network input.
    """
    d = np.asarray(output_gradient, dtype=np.float64)
    n_out = params.weights[-1].shape[1]
    if d.ndim != 2 or d.shape != (cache.inputs[0].shape[0], n_out):
        raise UsageError(f"output gradient shape {d.shape} does not match the forward pass")
    n_layers = len(params.weights)
    gw: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    gb: list[np.ndarray] = [None] * n_layers  # type: ignore[list-item]
    for i in range(n_layers - 1, -1, -1):
        gw[i] = cache.inputs[i].T @ d
        gb[i] = d.sum(axis=0)
        d = d @ params.weights[i].T
        if i > 0:
            d = d * cache.slopes[i - 1]
    return MlpParams(gw, gb), d


@dataclass
class AdamState:
    first_moment: list[np.ndarray]
    second_moment: list[np.ndarray]
    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0

    @classmethod
    def for_params(cls, params: MlpParams, learning_rate: float = 0.001, **kw) -> "AdamState":
        return cls(
            [np.zeros_like(a) for a in params.arrays()],
            [np.zeros_like(a) for a in params.arrays()],
            learning_rate=learning_rate,
            **kw,
        )


def adam_step(state: AdamState, params: MlpParams, grads: MlpParams) -> tuple[MlpParams, AdamState]:
    """One bias-corrected Adam update, applied in place.

    Raises :class:`NumericError` before touching anything if a gradient is
    not finite.
    """
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays) or len(p_arrays) != len(state.first_moment):
        raise UsageError("parameter, gradient and optimizer layouts differ")
    for p, g in zip(p_arrays, g_arrays):
        if p.shape != g.shape:
            raise UsageError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError("non-finite gradient; parameters left unchanged")
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**t
    bc2 = 1.0 - b2**t
    for p, g, m, v in zip(p_arrays, g_arrays, state.first_moment, state.second_moment):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    return params, state


# Array container: magic, u64 header length, JSON header, raw little-endian payload.
_MAGIC = b"CDIBARR1"


def save_arrays(path, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named float64 arrays with a JSON shape header.

    Layout::

        8 bytes   b"CDIBARR1"
        8 bytes   little-endian uint64, header length H
        H bytes   UTF-8 JSON {"meta": ..., "arrays": [{name, dtype, shape, offset, nbytes}]}
        payload   C-order little-endian float64 data, offsets relative to payload start
    """
    entries = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        data = np.ascontiguousarray(arrays[name], dtype="<f8")
        blob = data.tobytes()
        entries.append(
            {"name": name, "dtype": "<f8", "shape": list(data.shape), "offset": offset,
             "nbytes": len(blob)}
        )
        blobs.append(blob)
        offset += len(blob)
    header = json.dumps({"meta": meta or {}, "arrays": entries}, sort_keys=True).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_arrays(path) -> tuple[dict[str, np.ndarray], dict]:
    raw = Path(path).read_bytes()
    if raw[:8] != _MAGIC:
        raise DataError(f"{path}: not an array container")
    (hlen,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + hlen].decode())
    base = 16 + hlen
    arrays = {}
    for e in header["arrays"]:
        start = base + e["offset"]
        buf = raw[start:start + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype=e["dtype"]).reshape(e["shape"]).copy()
    return arrays, header["meta"]
