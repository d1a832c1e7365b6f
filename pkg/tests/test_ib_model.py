import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as hs

from copula_dib.errors import DomainError, UsageError
from copula_dib.ib_model import (
    ENTROPY_OFFSET_PER_DIM,
    IbModel,
    active_dims,
    build_model,
    decoder_mi_estimate,
    encode,
    encoder_mi_estimate,
    ib_loss,
    kl_gauss_to_std,
    per_dim_kl,
    preprocess,
    reparam_sample,
)
from copula_dib.nn import AdamState, MlpParams, Rng, adam_step, init_mlp

KL_MU2 = 2.0  # 0.5 * 2**2
KL_VAR4 = 0.5 * (4 - 1 - math.log(4))


def _const_encoder(x_dim, means, logvars=None):
    """Single-layer encoder with zero weights: outputs the given constants."""
    out = np.asarray(means, float) if logvars is None else np.concatenate([means, logvars])
    return MlpParams([np.zeros((x_dim, out.size))], [out.astype(float)])


def _model(enc, dec_sizes, latent, mode="fixed_unit", lam=1.0, seed=0):
    dec = init_mlp(dec_sizes, Rng(seed))
    return IbModel(enc, dec, latent, lam, "none", mode)


class TestKl:
    def test_closed_forms(self):
        assert kl_gauss_to_std([0.0], [1.0]) == 0.0
        assert abs(kl_gauss_to_std([2.0], [1.0]) - KL_MU2) < 1e-12
        assert abs(kl_gauss_to_std([0.0], [4.0]) - 0.8068528194) < 1e-10

    @pytest.mark.parametrize("mu,var", [(2.0, 1.0), (0.0, 4.0), (-0.7, 0.3)])
    def test_monte_carlo(self, mu, var):
        # KL = E_q[log q(t) - log p(t)], 1e6 draws, 3 standard errors
        rng = np.random.default_rng(1)
        t = mu + math.sqrt(var) * rng.standard_normal(1_000_000)
        log_q = -0.5 * math.log(2 * math.pi * var) - (t - mu) ** 2 / (2 * var)
        log_p = -0.5 * math.log(2 * math.pi) - t * t / 2
        d = log_q - log_p
        se = d.std(ddof=1) / math.sqrt(d.size)
        assert abs(d.mean() - kl_gauss_to_std([mu], [var])) <= 3 * se

    def test_non_positive_variance(self):
        with pytest.raises(DomainError):
            kl_gauss_to_std([0.0], [0.0])


class TestEncoderMi:
    def test_prior_gives_zero(self):
        m = _model(_const_encoder(3, np.zeros(2), np.zeros(2)), [2, 2], 2, "learned")
        assert encoder_mi_estimate(m, np.ones((4, 3))) == 0.0

    def test_two_sample_mean(self):
        # sample 1: mu=2 (KL 2.0); sample 2: sigma^2=4 (KL 0.8068...) via a linear encoder
        enc = MlpParams([np.array([[2.0, 0.0]])], [np.zeros(2)])
        m = _model(enc, [1, 1], 1, "learned")
        x = np.array([[1.0], [0.0]])
        enc.weights[0][:] = [[2.0, -math.log(4)]]
        enc.biases[0][:] = [0.0, math.log(4)]
        assert abs(encoder_mi_estimate(m, x) - 1.4034264097) < 1e-10
        assert encoder_mi_estimate(m, x[::-1]) == encoder_mi_estimate(m, x)


class TestReparam:
    def test_examples(self):
        assert np.array_equal(reparam_sample(np.array([[1.5]]), np.array([[3.0]]), eps=np.zeros((1, 1))),
                              np.array([[1.5]]))
        assert reparam_sample(np.array([[0.5]]), np.array([[2.0]]), eps=np.ones((1, 1)))[0, 0] == 2.5

    def test_moments(self):
        t = reparam_sample(np.ones((100_000, 1)), np.full((100_000, 1), 2.0), Rng(3))[:, 0]
        assert abs(t.mean() - 1) <= 0.026
        assert abs(t.var() - 4) <= 0.09

    def test_negative_sigma(self):
        with pytest.raises(DomainError):
            reparam_sample(np.zeros((1, 1)), -np.ones((1, 1)), eps=np.zeros((1, 1)))


class TestDecoderMi:
    def test_perfect_decoder(self):
        dec = MlpParams([np.eye(2)], [np.zeros(2)])
        m = IbModel(_const_encoder(1, np.zeros(2)), dec, 2, 1.0, "none")
        y = np.random.default_rng(0).normal(size=(50, 2))
        assert abs(decoder_mi_estimate(m, y, y) - 1.0) < 1e-12  # d_y / 2
        assert abs(ENTROPY_OFFSET_PER_DIM - 0.5 * (math.log(2 * math.pi) + 1)) < 1e-15

    def test_constant_decoder(self):
        dec = MlpParams([np.zeros((2, 1))], [np.zeros(1)])
        m = IbModel(_const_encoder(1, np.zeros(2)), dec, 2, 1.0, "none")
        y = np.random.default_rng(1).normal(size=(200_000, 1))
        assert abs(decoder_mi_estimate(m, np.zeros((200_000, 2)), y)) < 0.01

    def test_noise_lowers_bound(self):
        dec = MlpParams([np.eye(2)], [np.zeros(2)])
        m = IbModel(_const_encoder(1, np.zeros(2)), dec, 2, 1.0, "none")
        y = np.random.default_rng(2).normal(size=(500, 2))
        noisy = y + 0.3 * np.random.default_rng(3).normal(size=y.shape)
        assert decoder_mi_estimate(m, noisy, y) < decoder_mi_estimate(m, y, y)

    def test_shape_mismatch(self):
        dec = MlpParams([np.eye(2)], [np.zeros(2)])
        m = IbModel(_const_encoder(1, np.zeros(2)), dec, 2, 1.0, "none")
        with pytest.raises(UsageError):
            decoder_mi_estimate(m, np.zeros((3, 2)), np.zeros((3, 1)))


def _loss_fd(model, x, y, eps, h=1e-6):
    loss, (ge, gd) = ib_loss(model, x, y, eps=eps)
    worst = 0.0
    for params, grads in ((model.encoder, ge), (model.decoder, gd)):
        for p, g in zip(params.arrays(), grads.arrays()):
            for idx in np.ndindex(p.shape):
                old = p[idx]
                p[idx] = old + h
                up = ib_loss(model, x, y, eps=eps)[0]
                p[idx] = old - h
                down = ib_loss(model, x, y, eps=eps)[0]
                p[idx] = old
                fd = (up - down) / (2 * h)
                worst = max(worst, abs(fd - g[idx]) / max(abs(fd), abs(g[idx]), 1e-5))
    return worst


class TestIbLoss:
    @pytest.mark.parametrize("variance_mode", ["fixed_unit", "learned"])
    def test_gradient_20_configs(self, variance_mode):
        worst = 0.0
        for k in range(20):
            rng = np.random.default_rng(100 + k)
            x_dim, y_dim, latent = (int(v) for v in rng.integers(1, 4, 3))
            hidden = (int(rng.integers(2, 5)),)
            m = build_model(x_dim, y_dim, Rng(k), latent, hidden, float(rng.uniform(0.5, 5)),
                            "none", variance_mode)
            x = rng.normal(size=(4, x_dim))
            y = rng.normal(size=(4, y_dim))
            eps = rng.normal(size=(4, latent))
            worst = max(worst, _loss_fd(m, x, y, eps))
        assert worst <= 1e-4

    def test_definition(self):
        rng = np.random.default_rng(0)
        m = build_model(3, 2, Rng(1), 4, (5,), lam=1.0, preprocessing="none")
        x, y, eps = rng.normal(size=(6, 3)), rng.normal(size=(6, 2)), rng.normal(size=(6, 4))
        loss, _ = ib_loss(m, x, y, eps=eps)
        t = reparam_sample(encode(m, x)[0], 1.0, eps=eps)
        direct = encoder_mi_estimate(m, x) - decoder_mi_estimate(m, t, y)
        assert abs(loss - direct) <= 1e-12

    def test_lambda_zero_collapses(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(256, 3))
        y = rng.normal(size=(256, 1))
        m = build_model(3, 1, Rng(0), 4, (8,), lam=0.0, preprocessing="none")
        st_e = AdamState.for_params(m.encoder, 0.01)
        st_d = AdamState.for_params(m.decoder, 0.01)
        noise = Rng(5)
        for _ in range(2000):
            _, (ge, gd) = ib_loss(m, x, y, noise)
            adam_step(st_e, m.encoder, ge)
            adam_step(st_d, m.decoder, gd)
        assert encoder_mi_estimate(m, x) < 1e-3

    def test_needs_noise_source(self):
        m = build_model(2, 1, Rng(0), 2, (3,))
        with pytest.raises(UsageError):
            ib_loss(m, np.zeros((2, 2)), np.zeros((2, 1)))


class TestActiveDims:
    def test_prior(self):
        m = _model(_const_encoder(2, np.zeros(3)), [3, 1], 3)
        assert active_dims(m, np.ones((5, 2)), 0.01) == 0

    def test_one_active(self):
        m = _model(_const_encoder(2, np.array([2.0, 0.0, 0.0])), [3, 1], 3)
        assert active_dims(m, np.ones((5, 2)), 0.01) == 1
        assert per_dim_kl(m, np.ones((5, 2)))[0] == KL_MU2

    @given(hs.floats(1e-4, 5), hs.floats(1e-4, 5))
    def test_monotone_in_threshold(self, t1, t2):
        m = build_model(3, 1, Rng(2), 6, (5,))
        x = np.random.default_rng(0).normal(size=(20, 3))
        lo, hi = min(t1, t2), max(t1, t2)
        assert active_dims(m, x, lo) >= active_dims(m, x, hi)

    def test_threshold_positive(self):
        with pytest.raises(DomainError):
            active_dims(build_model(1, 1, Rng(0), 1, (2,)), np.zeros((1, 1)), 0.0)


class TestPreprocess:
    def _data(self):
        rng = np.random.default_rng(4)
        return rng.normal(size=(300, 3)), rng.normal(size=(300, 2))

    def test_none_identity(self):
        x, y = self._data()
        m = build_model(3, 2, Rng(0), preprocessing="none")
        xs, ys, _ = preprocess(m, x, y, fit=True)
        assert np.array_equal(xs, x) and np.array_equal(ys, y)

    def test_copula_rank_invariance(self):
        x, y = self._data()
        m = build_model(3, 2, Rng(0), preprocessing="copula")
        a, ya, _ = preprocess(m, x, y, fit=True)
        b, yb, _ = preprocess(m, np.exp(x), y, fit=True)
        assert a.tobytes() == b.tobytes() and ya.tobytes() == yb.tobytes()

    def test_standardize(self):
        x, y = self._data()
        m = build_model(3, 2, Rng(0), preprocessing="standardize")
        xs, ys, pre = preprocess(m, 5 * x + 3, y, fit=True)
        assert np.max(np.abs(xs.mean(axis=0))) <= 1e-12
        assert np.max(np.abs(xs.var(axis=0) - 1)) <= 1e-9
        assert np.allclose(pre.inverse_y(ys), y, atol=1e-12)

    def test_reuse_requires_fit(self):
        x, y = self._data()
        m = build_model(3, 2, Rng(0), preprocessing="copula")
        with pytest.raises(UsageError):
            preprocess(m, x, y, fit=False)

    def test_reuse_keeps_training_fit(self):
        x, y = self._data()
        m = build_model(3, 2, Rng(0), preprocessing="copula")
        _, _, pre = preprocess(m, x, y, fit=True)
        d = pre.digest()
        preprocess(m, x[:50] + 1, y[:50], fit=False)
        assert m.preprocessor.digest() == d


def test_model_width_validation():
    enc = init_mlp([3, 4], Rng(0))
    dec = init_mlp([4, 1], Rng(1))
    with pytest.raises(UsageError):
        IbModel(enc, dec, 4, 1.0, "none", "learned")
    with pytest.raises(UsageError):
        IbModel(enc, dec, 4, 1.0, "bogus")
