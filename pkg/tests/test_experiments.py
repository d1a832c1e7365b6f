import warnings
from dataclasses import replace

import numpy as np
import pytest

from copula_dib.datasets import SplitData, apply_monotone, split
from copula_dib.errors import DataError, UsageError
from copula_dib.experiments import (
    InfoCurve,
    SweepConfig,
    compare_curves,
    convergence_trace,
    export_latent,
    load_run,
    moving_average,
    predictive_curve,
    reconstruct_export,
    robustness_compare,
    run_many,
    run_sweep,
    select_lambda_for_active,
    threshold_iteration,
)
from copula_dib.ib_model import CurvePoint, IbModel, Preprocessor
from copula_dib.nn import MlpParams, Rng

LAMBDA_1500 = 1.06 ** 3

TINY = SweepConfig(lambda_start=5.0, multiply_every=100, total_iterations=400, batch_size=100,
                   record_every=100, latent_dim=4, hidden=(12, 12), learning_rate=0.003)


@pytest.fixture(scope="module")
def copula_run(small_spiral):
    return run_sweep(TINY, small_spiral, keep_checkpoints=True)


class TestSchedule:
    def test_lambda_arithmetic(self):
        assert abs(SweepConfig().lam(1500) - 1.191016) < 1e-12
        assert abs(SweepConfig().lam(1500) - LAMBDA_1500) < 1e-15
        assert SweepConfig().lam(499) == 1.0

    def test_defaults(self):
        a = SweepConfig.artificial()
        r = SweepConfig.real_data()
        assert (a.batch_size, a.learning_rate, a.total_iterations, a.lambda_multiplier) == (500, 0.0006, 70000, 1.06)
        assert (r.batch_size, r.learning_rate, r.total_iterations, r.lambda_multiplier) == (1255, 0.0005, 150000, 1.01)

    def test_validation(self):
        with pytest.raises(UsageError):
            SweepConfig(lambda_multiplier=1.0)
        with pytest.raises(UsageError):
            SweepConfig(total_iterations=100, multiply_every=500)

    def test_hash_stable(self):
        assert SweepConfig().config_hash() == SweepConfig().config_hash()
        assert SweepConfig(seed=1).config_hash() != SweepConfig().config_hash()


class TestSweep:
    def test_zero_iterations(self, small_spiral):
        c = run_sweep(replace(TINY, total_iterations=0), small_spiral)
        assert len(c.points) == 1 and c.points[0].iteration == 0

    def test_curve_invariants(self, copula_run):
        its = [p.iteration for p in copula_run.points]
        assert its == [0, 100, 200, 300, 400]
        assert all(p.lam == TINY.lam(p.iteration) for p in copula_run.points)
        assert all(p.i_xt >= 0 and 0 <= p.active_dims <= TINY.latent_dim for p in copula_run.points)

    def test_determinism(self, small_spiral, copula_run, tmp_path):
        again = run_sweep(TINY, small_spiral, tmp_path / "r")
        assert again.to_csv_text() == copula_run.to_csv_text()
        assert (tmp_path / "r" / "curve.csv").read_text() == copula_run.to_csv_text()

    def test_copula_invariance(self, small_spiral):
        raw = SplitData(apply_monotone(small_spiral.x_train, "exp"), small_spiral.x_test,
                        small_spiral.y_train, small_spiral.y_test)
        cfg = replace(TINY, total_iterations=200)
        assert run_sweep(cfg, raw).to_csv_text() == run_sweep(cfg, small_spiral).to_csv_text()
        none = replace(cfg, preprocessing="none")
        assert run_sweep(none, raw).to_csv_text() != run_sweep(none, small_spiral).to_csv_text()

    def test_csv_round_trip(self, copula_run, tmp_path):
        copula_run.write_csv(tmp_path / "c.csv")
        back = InfoCurve.read_csv(tmp_path / "c.csv")
        assert back.points == copula_run.points
        assert (tmp_path / "c.csv").read_text().startswith("# i_ty")

    def test_run_directory(self, small_spiral, tmp_path):
        cfg = replace(TINY, total_iterations=200)
        c = run_sweep(cfg, small_spiral, tmp_path / "run")
        names = sorted(p.name for p in (tmp_path / "run").iterdir())
        assert names == ["ckpt-0", "ckpt-100", "ckpt-200", "curve.csv", "manifest.json", "transforms.bin"]
        curve, model = load_run(tmp_path / "run")
        assert curve.points == c.points
        assert model.encoder.digest() == c.model.encoder.digest()
        assert model.preprocessor.digest() == c.model.preprocessor.digest()

    def test_missing_checkpoint(self, small_spiral, tmp_path):
        run_sweep(replace(TINY, total_iterations=200), small_spiral, tmp_path / "run")
        (tmp_path / "run" / "ckpt-100").unlink()
        with pytest.raises(DataError):
            load_run(tmp_path / "run")

    def test_run_many_matches_serial(self, small_spiral, monkeypatch):
        cfgs = [replace(TINY, total_iterations=100, preprocessing=m) for m in ("copula", "none")]
        monkeypatch.setenv("CIB_WORKERS", "2")
        par = run_many([(c, small_spiral) for c in cfgs])
        for c in cfgs:
            assert par[c.config_hash()].to_csv_text() == run_sweep(c, small_spiral).to_csv_text()

    def test_bad_worker_env(self, small_spiral, monkeypatch):
        monkeypatch.setenv("CIB_WORKERS", "many")
        with pytest.raises(UsageError):
            run_many([(replace(TINY, total_iterations=100), small_spiral)])


class TestPredictive:
    def test_training_data_reproduces_curve(self, copula_run, small_spiral):
        pc = predictive_curve(copula_run, small_spiral.x_train, small_spiral.y_train)
        for a, b in zip(pc.points, copula_run.points):
            assert abs(a.i_xt - b.i_xt) <= 1e-9 and abs(a.i_ty - b.i_ty) <= 1e-9

    def test_uses_training_fit(self, copula_run, small_spiral):
        pc = predictive_curve(copula_run, small_spiral.x_test, small_spiral.y_test)
        assert pc.transform_digest == copula_run.transform_digest
        assert [p.iteration for p in pc.points] == [p.iteration for p in copula_run.points]

    def test_from_run_directory(self, small_spiral, tmp_path):
        cfg = replace(TINY, total_iterations=200)
        c = run_sweep(cfg, small_spiral, tmp_path / "run", keep_checkpoints=True)
        a = predictive_curve(tmp_path / "run", small_spiral.x_test, small_spiral.y_test)
        b = predictive_curve(c, small_spiral.x_test, small_spiral.y_test)
        assert a.to_csv_text() == b.to_csv_text()

    def test_constant_decoder_bound(self, copula_run, small_spiral):
        # zero decoder weights: the mean is 0 whatever t is, so the bound
        # reduces to 0.5 * sum_j (1 - mean(z_j^2)) over the scored targets
        c = InfoCurve(list(copula_run.points[-1:]), "x", copula_run.model,
                      config=copula_run.config)
        enc, dec = copula_run.checkpoints[copula_run.points[-1].iteration]
        flat = MlpParams([np.zeros_like(w) for w in dec.weights], [np.zeros_like(b) for b in dec.biases])
        c.checkpoints = {c.points[0].iteration: (enc, flat)}
        for y in (small_spiral.y_train, small_spiral.y_test):
            x = small_spiral.x_train[: len(y)]
            z = copula_run.model.preprocessor.transform_y(y)
            expected = 0.5 * float(np.sum(1.0 - np.mean(z ** 2, axis=0)))
            pc = predictive_curve(c, x, y)
            assert abs(pc.points[0].i_ty - expected) < 1e-9
        assert abs(expected) < 0.25

    def test_requires_checkpoints(self, small_spiral):
        c = run_sweep(replace(TINY, total_iterations=100), small_spiral)
        with pytest.raises(DataError):
            predictive_curve(c, small_spiral.x_test, small_spiral.y_test)


class TestReconstruct:
    def test_identity_decoder(self):
        y = np.random.default_rng(0).normal(size=(20, 2))
        enc = MlpParams([np.zeros((2, 2))], [np.zeros(2)])
        enc.weights[0][:] = np.eye(2)
        dec = MlpParams([np.eye(2)], [np.zeros(2)])
        m = IbModel(enc, dec, 2, 1.0, "none", preprocessor=Preprocessor("none"))
        assert np.max(np.abs(reconstruct_export(m, y) - y)) <= 1e-9

    def test_copula_range_and_rows(self, copula_run, small_spiral, tmp_path):
        out = reconstruct_export(copula_run.model, small_spiral.x_test, tmp_path / "rec.csv")
        assert out.shape == small_spiral.y_test.shape
        lo, hi = small_spiral.y_train.min(axis=0), small_spiral.y_train.max(axis=0)
        assert np.all(out >= lo) and np.all(out <= hi)
        lines = (tmp_path / "rec.csv").read_text().splitlines()
        assert lines[0] == "y1,y2" and len(lines) == len(small_spiral.x_test) + 1


class TestRobustness:
    def test_zero_fraction(self, small_spiral):
        cfg = replace(TINY, total_iterations=100)
        r = robustness_compare(cfg, small_spiral, Rng(0), fraction=0.0)
        for m in ("copula", "none"):
            assert r.curves[(m, "clean")].to_csv_text() == r.curves[(m, "attacked")].to_csv_text()
            assert r.degradation[m] == 0.0

    def test_injection_and_shared_init(self, small_spiral):
        cfg = replace(TINY, total_iterations=100)
        r = robustness_compare(cfg, small_spiral, Rng(1))
        diff = r.attacked_x != small_spiral.x_train
        assert diff.sum() == round(0.05 * diff.size)
        digests = {c.initial_digest for c in r.curves.values()}
        assert len(digests) == 1
        assert len(r.summary_rows()) == 2


class TestConvergence:
    def test_trace(self, small_spiral):
        cfg = replace(TINY, total_iterations=300)
        tr = convergence_trace(cfg, small_spiral, lam=20.0)
        assert tr.losses.shape == (300,)
        assert tr.threshold_iteration <= 299
        assert convergence_trace(cfg, small_spiral, 20.0, delta=float("inf")).threshold_iteration == 0

    def test_threshold_rule(self):
        losses = np.array([10.0, 5.0, 2.1, 2.0, 2.0])
        final, thr, it = threshold_iteration(losses, 0.10, window=1)
        assert (final, it) == (2.0, 2) and abs(thr - 2.2) < 1e-15
        final, thr, it = threshold_iteration(-losses, 0.10, window=1)
        assert thr == -1.8 and it == 0

    def test_moving_average(self):
        assert moving_average([1, 2, 3, 4], 2).tolist() == [1.0, 1.5, 2.5, 3.5]


def _curve(values, lam=None):
    lam = lam or [1.0 + i for i in range(len(values))]
    return InfoCurve([CurvePoint(i, l, 0.0, v, 0.0, 0) for i, (l, v) in enumerate(zip(lam, values))], "h")


class TestCompare:
    def test_self(self, copula_run):
        r = compare_curves(copula_run, copula_run)
        assert r.h_statistic == 0.0 and r.p_value == 1.0

    def test_hand_example(self):
        assert abs(compare_curves(_curve([1, 2, 3]), _curve([4, 5, 6])).h_statistic - 3.8571428571) < 1e-10

    def test_rescaling(self):
        a, b = [0.3, 0.9, 0.1, 0.5], [0.7, 0.2, 0.8, 0.95]
        r1 = compare_curves(_curve(a), _curve(b))
        r2 = compare_curves(_curve([7 * v for v in a]), _curve([7 * v for v in b]))
        assert r1.h_statistic == pytest.approx(r2.h_statistic, abs=1e-12)
        assert 0 <= r1.p_value <= 1

    def test_grid_mismatch(self):
        with pytest.raises(UsageError):
            compare_curves(_curve([1, 2]), _curve([1, 2], lam=[1.0, 3.0]))


class TestExportLatent:
    def test_sixteen_samples(self, copula_run, small_spiral, tmp_path):
        x, y = small_spiral.x_test[:16], small_spiral.y_test[:16, 0]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = export_latent(copula_run.model, x, y, 8, tmp_path / "lat.csv")
        assert np.bincount(res.table[:, 2].astype(int)).tolist() == [2] * 8
        lines = (tmp_path / "lat.csv").read_text().splitlines()
        assert lines[1] == "latent_1,latent_2,bin_label" and len(lines) == 18
        assert (tmp_path / "lat.bins.csv").exists()

    def test_sign_flip_invariance(self, copula_run, small_spiral):
        m = copula_run.model
        flipped = IbModel(m.encoder.copy(), m.decoder, m.latent_dim, m.lam, m.preprocessing,
                          preprocessor=m.preprocessor)
        flipped.encoder.weights[-1][:, 1] *= -1
        flipped.encoder.biases[-1][1] *= -1
        x, y = small_spiral.x_test, small_spiral.y_test[:, 1]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            assert export_latent(m, x, y).selected == export_latent(flipped, x, y).selected

    def test_warns_when_collapsed(self, copula_run, small_spiral):
        m = copula_run.model
        dead = IbModel(m.encoder.zeros_like(), m.decoder, m.latent_dim, m.lam, m.preprocessing,
                       preprocessor=m.preprocessor)
        with pytest.warns(UserWarning, match="active"):
            res = export_latent(dead, small_spiral.x_test, small_spiral.y_test[:, 0])
        assert len(res.selected) == 2


def test_select_lambda_for_active():
    pts = [CurvePoint(i, 1.0, 0, 0, 0, a) for i, a in enumerate([0, 1, 3, 2, 2, 5])]
    assert select_lambda_for_active(InfoCurve(pts, "h"), 2).iteration == 4
    assert select_lambda_for_active(InfoCurve(pts[:3], "h"), 2).active_dims in (1, 3)
