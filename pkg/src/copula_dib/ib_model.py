"""The (copula) deep variational information bottleneck.

Encoder ``p(t|x) = N(mu(x), diag(sigma^2(x)))`` against a standard normal
prior, Gaussian decoder with unit variance. All information quantities are
in nats.

The reported ``I(t;y)`` is the decoder log-likelihood plus the Gaussian
entropy offset ``d_y * 0.5 * log(2*pi*e)``. With copula preprocessing the
omitted copula-entropy constant can be reported separately through
:func:`copula_dib.copula.gaussian_copula_mi`.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import copula
from .errors import DataError, DomainError, UsageError
from .nn import MlpParams, Rng, backward, forward, init_mlp, rng_standard_normal

__all__ = [
    "CurvePoint",
    "IbModel",
    "PREPROCESSING_MODES",
    "Preprocessor",
    "VARIANCE_MODES",
    "active_dims",
    "build_model",
    "decoder_mi_estimate",
    "encode",
    "encoder_mi_estimate",
    "evaluate",
    "ib_loss",
    "kl_gauss_to_std",
    "per_dim_kl",
    "preprocess",
    "reparam_sample",
]

PREPROCESSING_MODES = ("none", "standardize", "copula")
VARIANCE_MODES = ("fixed_unit", "learned")
ENTROPY_OFFSET_PER_DIM = 0.5 * math.log(2.0 * math.pi * math.e)
_LOG_2PI = math.log(2.0 * math.pi)
OFFSET_CONVENTION = "i_ty = mean decoder log-likelihood + d_y*0.5*ln(2*pi*e); units=nats"


@dataclass(frozen=True)
class CurvePoint:
    iteration: int
    lam: float
    i_xt: float
    i_ty: float
    loss: float
    active_dims: int


@dataclass
class Preprocessor:
    """Training-set statistics for one preprocessing mode, applied to x and y."""

    mode: str
    x_copula: copula.CopulaTransform | None = None
    y_copula: copula.CopulaTransform | None = None
    x_mean: np.ndarray | None = None
    x_std: np.ndarray | None = None
    y_mean: np.ndarray | None = None
    y_std: np.ndarray | None = None

    @classmethod
    def fit(cls, mode: str, x: np.ndarray, y: np.ndarray) -> "Preprocessor":
        if mode not in PREPROCESSING_MODES:
            raise UsageError(f"unknown preprocessing mode {mode!r}")
        if mode == "copula":
            return cls(mode, x_copula=copula.fit(x), y_copula=copula.fit(y))
        if mode == "standardize":
            xm, xs = _moments(x)
            ym, ys = _moments(y)
            return cls(mode, x_mean=xm, x_std=xs, y_mean=ym, y_std=ys)
        return cls(mode)

    def transform_x(self, x: np.ndarray) -> np.ndarray:
        if self.mode == "copula":
            return copula.to_normal_scores(self.x_copula, x)
        if self.mode == "standardize":
            return (np.asarray(x, dtype=np.float64) - self.x_mean) / self.x_std
        return np.asarray(x, dtype=np.float64)

    def transform_y(self, y: np.ndarray) -> np.ndarray:
        if self.mode == "copula":
            return copula.to_normal_scores(self.y_copula, y)
        if self.mode == "standardize":
            return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std
        return np.asarray(y, dtype=np.float64)

    def inverse_y(self, y: np.ndarray) -> np.ndarray:
        """Map model-space targets back to the original y scale."""
        if self.mode == "copula":
            return copula.from_normal_scores(self.y_copula, y)
        if self.mode == "standardize":
            return np.asarray(y) * self.y_std + self.y_mean
        return np.asarray(y, dtype=np.float64)

    def named_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in ("x_mean", "x_std", "y_mean", "y_std"):
            if getattr(self, name) is not None:
                out[f"pre.{name}"] = getattr(self, name)
        if self.x_copula is not None:
            out["pre.x_sorted"] = self.x_copula.sorted_values
            out["pre.y_sorted"] = self.y_copula.sorted_values
        return out

    @classmethod
    def from_named(cls, mode: str, arrays: dict[str, np.ndarray]) -> "Preprocessor":
        kw = {k[4:]: v for k, v in arrays.items() if k.startswith("pre.") and "sorted" not in k}
        if "pre.x_sorted" in arrays:
            kw["x_copula"] = copula.CopulaTransform(arrays["pre.x_sorted"])
            kw["y_copula"] = copula.CopulaTransform(arrays["pre.y_sorted"])
        return cls(mode, **kw)

    def digest(self) -> str:
        h = hashlib.sha256(self.mode.encode())
        for name, arr in sorted(self.named_arrays().items()):
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()


def _moments(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    if np.any(std == 0):
        raise DataError("standardize: constant column")
    return mean, std


@dataclass
class IbModel:
    encoder: MlpParams
    decoder: MlpParams
    latent_dim: int
    lam: float
    preprocessing: str = "copula"
    variance_mode: str = "fixed_unit"
    preprocessor: Preprocessor | None = field(default=None, repr=False)
    decoder_variance: float = 1.0

    def __post_init__(self):
        if self.preprocessing not in PREPROCESSING_MODES:
            raise UsageError(f"unknown preprocessing mode {self.preprocessing!r}")
        if self.variance_mode not in VARIANCE_MODES:
            raise UsageError(f"unknown variance mode {self.variance_mode!r}")
        width = self.latent_dim * (2 if self.variance_mode == "learned" else 1)
        if self.encoder.sizes[-1] != width:
            raise UsageError(f"encoder output width {self.encoder.sizes[-1]} != {width}")
        if self.decoder.sizes[0] != self.latent_dim:
            raise UsageError(f"decoder input width {self.decoder.sizes[0]} != {self.latent_dim}")
        if self.decoder_variance != 1.0:
            raise UsageError("only unit decoder variance is supported")


def build_model(
    x_dim: int,
    y_dim: int,
    rng: Rng,
    latent_dim: int = 10,
    hidden: tuple[int, ...] = (50, 50),
    lam: float = 1.0,
    preprocessing: str = "copula",
    variance_mode: str = "fixed_unit",
) -> IbModel:
    """Glorot-initialised encoder and decoder; encoder drawn first."""
    out = latent_dim * (2 if variance_mode == "learned" else 1)
    encoder = init_mlp([x_dim, *hidden, out], rng)
    decoder = init_mlp([latent_dim, *hidden, y_dim], rng)
    return IbModel(encoder, decoder, latent_dim, lam, preprocessing, variance_mode)


def kl_gauss_to_std(mu, sigma2) -> float:
    """KL(N(mu, diag(sigma2)) || N(0, I)) in nats."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma2 = np.asarray(sigma2, dtype=np.float64)
    if np.any(sigma2 <= 0):
        raise DomainError("kl_gauss_to_std: variances must be positive")
    return float(0.5 * np.sum(sigma2 + mu * mu - 1.0 - np.log(sigma2)))


def encode(model: IbModel, x: np.ndarray):
    """Latent means, log-variances (None when fixed at 1), forward cache."""
    out, cache = forward(model.encoder, x)
    L = model.latent_dim
    if model.variance_mode == "learned":
        return out[:, :L], out[:, L:], cache
    return out, None, cache


def _kl_matrix(mu: np.ndarray, logvar: np.ndarray | None) -> np.ndarray:
    if logvar is None:
        return 0.5 * mu * mu
    return 0.5 * (np.exp(logvar) + mu * mu - 1.0 - logvar)


def per_dim_kl(model: IbModel, x: np.ndarray) -> np.ndarray:
    """Batch-mean KL to the prior for each latent coordinate."""
    mu, logvar, _ = encode(model, x)
    return _kl_matrix(mu, logvar).mean(axis=0)


def encoder_mi_estimate(model: IbModel, batch: np.ndarray) -> float:
    """Mean over the batch of KL(p(t|x_i) || N(0, I)), the I(x;t) estimate."""
    mu, logvar, _ = encode(model, batch)
    return float(_kl_matrix(mu, logvar).sum(axis=1).mean())


def reparam_sample(mu, sigma, rng: Rng | None = None, eps: np.ndarray | None = None) -> np.ndarray:
    """``mu + sigma * eps`` with ``eps ~ N(0, I)`` drawn from ``rng`` unless given."""
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=np.float64), mu.shape)
    if np.any(sigma < 0):
        raise DomainError("reparam_sample: sigma must be non-negative")
    if eps is None:
        if rng is None:
            raise UsageError("reparam_sample needs rng or eps")
        eps = rng_standard_normal(rng, *mu.shape)
    elif np.shape(eps) != mu.shape:
        raise UsageError(f"eps shape {np.shape(eps)} != mu shape {mu.shape}")
    return mu + sigma * eps


def decoder_mi_estimate(model: IbModel, t_samples: np.ndarray, targets: np.ndarray) -> float:
    """Decoder log-likelihood lower bound on I(t;y) with the Gaussian entropy offset."""
    means, _ = forward(model.decoder, t_samples)
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != means.shape:
        raise UsageError(f"targets shape {y.shape} != decoder output shape {means.shape}")
    return _gaussian_bound(means, y)


def _gaussian_bound(means: np.ndarray, y: np.ndarray) -> float:
    loglik = -0.5 * _LOG_2PI - 0.5 * (y - means) ** 2
    return float(loglik.sum(axis=1).mean() + y.shape[1] * ENTROPY_OFFSET_PER_DIM)


def ib_loss(
    model: IbModel,
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    rng: Rng | None = None,
    *,
    eps: np.ndarray | None = None,
) -> tuple[float, tuple[MlpParams, MlpParams]]:
    """``I(x;t) - lambda * I(t;y)`` on a batch and its gradients.

    One reparametrisation draw per sample. Pass ``eps`` to freeze the noise.
    Returns ``(loss, (encoder_grad, decoder_grad))``.
    """
    x = np.asarray(batch_x, dtype=np.float64)
    y = np.asarray(batch_y, dtype=np.float64)
    if x.shape[0] != y.shape[0]:
        raise UsageError("batch_x and batch_y must have the same number of rows")
    n = x.shape[0]
    mu, logvar, enc_cache = encode(model, x)
    if eps is None:
        if rng is None:
            raise UsageError("ib_loss needs rng or eps")
        eps = rng_standard_normal(rng, n, model.latent_dim)
    sigma = np.ones_like(mu) if logvar is None else np.exp(0.5 * logvar)
    t = reparam_sample(mu, sigma, eps=eps)
    means, dec_cache = forward(model.decoder, t)
    if means.shape != y.shape:
        raise UsageError(f"targets shape {y.shape} != decoder output shape {means.shape}")

    i_xt = float(_kl_matrix(mu, logvar).sum(axis=1).mean())
    i_ty = _gaussian_bound(means, y)
    loss = i_xt - model.lam * i_ty

    d_means = model.lam * (means - y) / n
    dec_grad, d_t = backward(model.decoder, dec_cache, d_means)
    d_mu = mu / n + d_t
    if logvar is None:
        d_out = d_mu
    else:
        d_logvar = 0.5 * (np.exp(logvar) - 1.0) / n + 0.5 * d_t * eps * sigma
        d_out = np.concatenate([d_mu, d_logvar], axis=1)
    enc_grad, _ = backward(model.encoder, enc_cache, d_out)
    return loss, (enc_grad, dec_grad)


def active_dims(model: IbModel, batch_x: np.ndarray, threshold: float = 0.01) -> int:
    """Latent coordinates whose batch-mean KL to the prior exceeds ``threshold``."""
    if threshold <= 0:
        raise DomainError("active_dims threshold must be positive")
    return int(np.sum(per_dim_kl(model, batch_x) > threshold))


def preprocess(model: IbModel, x: np.ndarray, y: np.ndarray, fit: bool):
    """Apply the model's preprocessing mode.

    ``fit=True`` estimates the statistics on this data (training data only)
    and stores them on the model; ``fit=False`` reuses the stored ones.
    Returns ``(x', y', preprocessor)``.
    """
    if fit:
        model.preprocessor = Preprocessor.fit(model.preprocessing, x, y)
    elif model.preprocessor is None:
        raise UsageError("preprocess(fit=False) before any fit")
    pre = model.preprocessor
    return pre.transform_x(x), pre.transform_y(y), pre


def evaluate(
    model: IbModel,
    x: np.ndarray,
    y: np.ndarray,
    eps: np.ndarray,
    iteration: int = 0,
    threshold: float = 0.01,
) -> CurvePoint:
    """Full-data curve point on already-preprocessed data with fixed noise."""
    mu, logvar, _ = encode(model, x)
    kl = _kl_matrix(mu, logvar)
    i_xt = float(kl.sum(axis=1).mean())
    sigma = 1.0 if logvar is None else np.exp(0.5 * logvar)
    means, _ = forward(model.decoder, mu + sigma * eps)
    i_ty = _gaussian_bound(means, y)
    n_active = int(np.sum(kl.mean(axis=0) > threshold))
    return CurvePoint(iteration, model.lam, i_xt, i_ty, i_xt - model.lam * i_ty, n_active)
