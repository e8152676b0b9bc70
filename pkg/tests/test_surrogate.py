from __future__ import annotations

import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vbflex import surrogate as sg


def synthetic(N, L=1, seed=0, coef=None, noise=0.0, quadratic=False):
    r = np.random.default_rng(seed)
    soc = r.uniform(-1, 1, (N, L + 1))
    Q = r.uniform(0, 3e4, (N, L + 1))
    T = r.uniform(20, 35, (N, L + 1))
    spec = sg.FeatureSpec(L, quadratic=quadratic)
    X = spec.expand(soc, Q, T)
    coef = r.normal(size=X.shape[1]) if coef is None else coef
    y = X @ coef + 3.0 + noise * r.normal(size=N)
    return sg.Dataset(soc, Q, T, y, np.zeros(N, int), "synthetic"), coef


class TestFit:
    @pytest.mark.parametrize("L,quadratic", [(0, False), (1, False), (3, False), (1, True)])
    def test_recovers_realizable_model(self, L, quadratic):
        ds, coef = synthetic(2000, L, quadratic=quadratic)
        m = sg.fit(ds, sg.FeatureSpec(L, quadratic=quadratic), ridge=0.0)
        np.testing.assert_allclose(m.coef, coef, rtol=1e-6, atol=1e-9)
        assert m.intercept == pytest.approx(3.0, abs=1e-6)

    def test_default_ridge_keeps_accuracy(self):
        ds, _ = synthetic(2000)
        m = sg.fit(ds, sg.FeatureSpec(1, quadratic=False))
        assert np.max(np.abs(m.predict_dataset(ds) - ds.y)) / np.ptp(ds.y) < 1e-6

    def test_duplicate_column_warns_and_stays_finite(self):
        ds, _ = synthetic(500)
        dup = sg.Dataset(ds.soc, np.repeat(ds.Q[:, -1:], 2, axis=1), ds.T_out, ds.y, ds.source)
        with pytest.warns(RuntimeWarning, match="rank deficient"):
            m = sg.fit(dup, sg.FeatureSpec(1, quadratic=False))
        assert np.all(np.isfinite(m.coef))

    def test_too_few_samples(self):
        ds, _ = synthetic(20)
        with pytest.raises(ValueError, match="fewer than"):
            sg.fit(ds, sg.FeatureSpec(1, quadratic=False))

    def test_window_mismatch(self):
        ds, _ = synthetic(200)
        with pytest.raises(ValueError, match="differs"):
            sg.fit(ds, sg.FeatureSpec(2))

    def test_lag_coefficients(self):
        ds, coef = synthetic(1000, L=2)
        m = sg.fit(ds, sg.FeatureSpec(2, quadratic=False), ridge=0.0)
        lags = m.lag_coefficients()
        # columns run from lag L down to lag 0
        np.testing.assert_allclose(lags["Q"], coef[3:6][::-1], rtol=1e-6)
        with pytest.raises(ValueError):
            sg.fit(ds, sg.FeatureSpec(2), ridge=0.0).lag_coefficients()

    def test_select_ridge_prefers_small_on_clean_data(self):
        ds, _ = synthetic(1200, noise=0.0)
        parts = sg.split(ds)
        m = sg.select_ridge(parts["train"], parts["val"], sg.FeatureSpec(1, quadratic=False))
        assert sg.evaluate(m, parts["test"]).Corr > 0.999999

    def test_json_round_trip(self, tmp_path):
        ds, _ = synthetic(500)
        m = sg.fit(ds, sg.FeatureSpec(1), metadata={"seed": 4})
        m.save(tmp_path / "m.json")
        back = sg.SurrogateModel.load(tmp_path / "m.json")
        np.testing.assert_array_equal(back.predict_dataset(ds), m.predict_dataset(ds))
        assert back.metadata["seed"] == 4


class TestMetrics:
    def test_perfect(self):
        r = sg.metrics([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
        assert r.MAPE == r.RMSE == r.MAE == r.RSE == r.RAE == 0.0
        assert r.Corr == pytest.approx(1.0)

    def test_hand_values(self):
        r = sg.metrics([1.0, 2.0, 3.0, 4.0], [2.0, 2.0, 3.0, 3.0])
        assert r.MAPE == pytest.approx((1 + 0 + 0 + 0.25) / 4 * 100)
        assert r.RMSE == pytest.approx(np.sqrt(0.5))
        assert r.MAE == pytest.approx(0.5)
        # deviations from the mean 2.5: squares sum to 5, absolutes to 4
        assert r.RSE == pytest.approx(np.sqrt(2 / 5) * 100)
        assert r.RAE == pytest.approx(2 / 4 * 100)

    def test_mean_predictor(self, rng):
        y = rng.normal(size=50)
        r = sg.metrics(y, np.full(50, y.mean()))
        assert r.RSE == pytest.approx(100.0) and r.RAE == pytest.approx(100.0)
        assert np.isnan(r.Corr)

    def test_constant_target(self):
        r = sg.metrics(np.ones(5), np.arange(5.0))
        assert np.isnan(r.RSE) and np.isnan(r.RAE)

    def test_zero_targets_excluded(self):
        r = sg.metrics([0.0, 2.0], [1.0, 1.0])
        assert r.MAPE == pytest.approx(50.0) and r.n_mape_excluded == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            sg.metrics([], [])

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.floats(-1e3, 1e3), min_size=3, max_size=30), st.floats(0.1, 10),
           st.floats(-100, 100))
    def test_scale_invariance(self, ys, a, b):
        y = np.asarray(ys)
        if np.ptp(y) < 1e-3:
            return
        y_hat = y + np.sin(np.arange(len(y)))
        r1 = sg.metrics(y, y_hat)
        r2 = sg.metrics(a * y + b, a * y_hat + b)
        assert r2.RSE == pytest.approx(r1.RSE, rel=1e-6)
        assert r2.RAE == pytest.approx(r1.RAE, rel=1e-6)
        assert r2.RMSE == pytest.approx(a * r1.RMSE, rel=1e-6)


class TestDatasets:
    def test_split_12(self):
        ds, _ = synthetic(12)
        parts = sg.split(ds)
        assert [len(parts[k]) for k in ("train", "val", "test")] == [6, 2, 4]
        np.testing.assert_array_equal(np.concatenate([parts[k].y for k in parts]), ds.y)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(3, 500))
    def test_split_partitions(self, N):
        ds, _ = synthetic(N)
        parts = sg.split(ds)
        assert sum(len(p) for p in parts.values()) == N

    def test_windows_do_not_cross_runs(self, office, summer_day):
        from vbflex.policies import RandomPolicy, run_policy
        runs = [run_policy(RandomPolicy(s), office, summer_day) for s in (0, 1)]
        ds = sg.build_dataset(runs, L=2)
        K = summer_day.K
        assert len(ds) == 2 * (K - 2)
        t1 = runs[1].trajectory
        np.testing.assert_array_equal(ds.Q[K - 2], t1.Q[0:3])
        np.testing.assert_array_equal(ds.y[K - 2], t1.Q_tol[2])

    def test_short_run_rejected(self, office, summer_day):
        from vbflex.policies import RandomPolicy, run_policy
        run = run_policy(RandomPolicy(0), office, summer_day.head(2))
        with pytest.raises(ValueError, match="shorter"):
            sg.build_dataset([run], L=3)

    def test_mixture_round_robin(self):
        parts = [synthetic(10, seed=s)[0] for s in range(3)]
        mix = sg.mixture(parts, segment=2)
        assert len(mix) == 10
        np.testing.assert_array_equal(mix.y[0:2], parts[0].y[0:2])
        np.testing.assert_array_equal(mix.y[2:4], parts[1].y[2:4])
        np.testing.assert_array_equal(mix.y[4:6], parts[2].y[4:6])
        np.testing.assert_array_equal(mix.y[6:8], parts[0].y[6:8])

    def test_mixture_length_mismatch(self):
        with pytest.raises(ValueError):
            sg.mixture([synthetic(10)[0], synthetic(11)[0]], 2)


def test_energy_model_on_simulated_building(office):
    from vbflex.config import DEFAULT_EXO, DEFAULT_TARIFF, synth_exo, tou_tariff
    from vbflex.experiments import surrogate_study
    exo = synth_exo(DEFAULT_EXO, 48 * 20, office.dt, office.n_zones)
    price = tou_tariff(DEFAULT_TARIFF, exo.K, office.dt)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        study = surrogate_study(office, exo, price, spec=sg.FeatureSpec(1, quadratic=False))
    r = study.table[("mixture", "mixture")]
    assert r.MAPE < 15 and r.Corr > 0.97


def test_predictions_physically_nonnegative(office):
    from vbflex.config import DEFAULT_EXO, DEFAULT_TARIFF, synth_exo, tou_tariff
    from vbflex.experiments import surrogate_datasets
    exo = synth_exo(DEFAULT_EXO, 48 * 30, office.dt, office.n_zones)
    price = tou_tariff(DEFAULT_TARIFF, exo.K, office.dt)
    parts = sg.split(surrogate_datasets(office, exo, price)["mixture"])
    for quadratic in (False, True):
        m = sg.fit(parts["train"], sg.FeatureSpec(1, quadratic=quadratic))
        assert np.mean(m.predict_dataset(parts["test"]) >= 0) >= 0.99
