from __future__ import annotations

import itertools

import numpy as np
import pytest

from vbflex import surrogate as sg
from vbflex.config import J_PER_KWH
from vbflex.dr import (
    CommitmentError,
    TariffSeries,
    commitment_violations,
    lower_level_track,
    rc_optimal_oracle,
    run_scenario,
    summarize,
    surrogate_series,
    upper_level_commit,
    variable_counts,
)
from vbflex.thermal import (
    ExogenousSeries,
    MultiZoneParams,
    baseline_cooling,
    coefficients_multi,
    hvac_power,
    simulate_multi,
)
from vbflex.vb import build_aggregate


def one_zone():
    return MultiZoneParams(C_th=[1.5e7], R_adj=np.full((1, 1), np.inf), R_oi=[0.03],
                           T_set=[25.0], delta=[1.0], m_min=[0.0], m_max=[0.5], c_p=1012.0,
                           T_sup=13.0, d_r=0.8, kappa_f=80.0, COP=1.0, dt=1800.0)


def affine_model(a_soc=(0.0, -2e6), a_Q=(1e2, 1.6e3), a_T=(0.0, 5e4), b=-1e6):
    # coefficients ordered lag 1 then lag 0, as in the feature layout
    coef = np.array([*a_soc, *a_Q, *a_T])
    return sg.SurrogateModel(sg.FeatureSpec(1, quadratic=False), coef, b, 0.0)


@pytest.fixture(scope="module")
def small():
    p = one_zone()
    exo = ExogenousSeries(np.array([30.0, 33.0, 34.0, 31.0]), np.full((1, 4), 800.0))
    price = np.array([0.1, 0.4, 0.5, 0.1])
    return p, exo, price


class TestTariff:
    def test_cost_units(self):
        t = TariffSeries([0.2, 0.4])
        assert t.cost([J_PER_KWH, 2 * J_PER_KWH]) == pytest.approx(1.0)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            TariffSeries([0.1, -0.1])

    def test_head(self):
        with pytest.raises(ValueError):
            TariffSeries([0.1]).head(2)


class TestUpperLevel:
    def test_matches_grid_search(self, small):
        p, exo, price = small
        vb = build_aggregate(p, exo)
        model = affine_model()
        c = upper_level_commit(vb, model, price, exo.T_out)
        assert c.n_variables == 16

        # exhaustive search over a grid of cooling levels; soc follows the battery recursion
        levels = np.linspace(vb.Q_min[0], vb.Q_max[0], 41)
        grid = np.array(list(itertools.product(levels, repeat=4)))
        soc = np.zeros((grid.shape[0], 5))
        for k in range(4):
            soc[:, k + 1] = vb.alpha * soc[:, k] + vb.beta_max[k] * grid[:, k] - vb.baseline_charge[k]
        ok = np.all(np.abs(soc[:, 1:]) <= 1.0, axis=1)
        lags = model.lag_coefficients()
        Q_prev = np.hstack([np.full((grid.shape[0], 1), vb.q_base[0, 0]), grid[:, :-1]])
        s_prev = np.hstack([soc[:, :1], soc[:, :3]])
        T_prev = np.concatenate([[exo.T_out[0]], exo.T_out[:3]])
        E = (lags["soc"][0] * soc[:, :4] + lags["soc"][1] * s_prev
             + lags["Q"][0] * grid + lags["Q"][1] * Q_prev
             + lags["T_out"][0] * exo.T_out + lags["T_out"][1] * T_prev + model.intercept)
        best = float(np.min((E[ok] @ price) / J_PER_KWH))
        assert c.objective == pytest.approx(TariffSeries(price).cost(c.Q_tol_hat), rel=1e-9)
        assert c.objective <= best + 1e-9 * abs(best)
        assert abs(c.objective - best) <= 0.01 * abs(best)

    def test_feasibility_report(self, small):
        p, exo, price = small
        vb = build_aggregate(p, exo)
        model = affine_model()
        c = upper_level_commit(vb, model, price, exo.T_out)
        v = commitment_violations(vb, model, c, exo.T_out)
        assert v["dynamics"] < 1e-7 and v["soc_bounds"] < 1e-7
        assert v["cooling_box_W"] < 1e-3 and v["surrogate_J"] < 1.0

    def test_price_scaling_invariance(self, small):
        p, exo, price = small
        vb = build_aggregate(p, exo)
        a = upper_level_commit(vb, affine_model(), price, exo.T_out)
        b = upper_level_commit(vb, affine_model(), 3 * price, exo.T_out)
        np.testing.assert_allclose(b.Q, a.Q, rtol=1e-6, atol=1e-3)
        assert b.objective == pytest.approx(3 * a.objective, rel=1e-7)

    def test_precools_ahead_of_expensive_steps(self, small):
        # near the warm limit the battery must be charged; it pays to do so while cheap
        p, exo, _ = small
        vb = build_aggregate(p, exo)
        model = affine_model(a_soc=(0.0, 0.0))
        c = upper_level_commit(vb, model, [0.1, 0.1, 0.5, 0.5], exo.T_out, soc0=-0.9)
        assert c.Q[:2].mean() > c.Q[2:].mean()
        flat = upper_level_commit(vb, model, [0.3] * 4, exo.T_out, soc0=-0.9)
        assert flat.soc.min() >= -1 - 1e-9

    def test_infeasible_initial_state(self, small):
        p, exo, price = small
        vb = build_aggregate(p, exo)
        with pytest.raises(CommitmentError) as err:
            upper_level_commit(vb, affine_model(), price, exo.T_out, soc0=3.0)
        assert err.value.family == "initial_soc"

    def test_infeasible_names_family(self, small):
        p, exo, price = small
        hot = ExogenousSeries(np.full(4, 45.0), np.full((1, 4), 6000.0))
        vb = build_aggregate(p, hot)
        with pytest.raises(CommitmentError) as err:
            upper_level_commit(vb, affine_model(), price, hot.T_out, soc0=-1.0)
        assert err.value.status == "infeasible" and err.value.family

    def test_needs_affine_model(self, small):
        p, exo, price = small
        vb = build_aggregate(p, exo)
        quad = sg.SurrogateModel(sg.FeatureSpec(1, quadratic=True), np.zeros(9), 0.0, 0.0)
        with pytest.raises(ValueError, match="quadratic"):
            upper_level_commit(vb, quad, price, exo.T_out)

    def test_surrogate_history_padding(self):
        model = affine_model(a_soc=(1.0, 0.0), a_Q=(1.0, 0.0), a_T=(1.0, 0.0), b=0.0)
        soc = np.array([0.3, 0.5, 0.7])
        Q = np.array([10.0, 20.0])
        T = np.array([30.0, 31.0])
        out = surrogate_series(model, soc, Q, T, soc_hist=[0.1], Q_hist=[5.0], T_hist=[29.0])
        np.testing.assert_allclose(out, [0.1 + 5 + 29, 0.3 + 10 + 30])


class TestTracking:
    def test_baseline_energy_tracked_exactly(self, office, summer_day):
        base = baseline_cooling(office, summer_day)
        T = np.repeat(office.T_set[:, None], summer_day.K, axis=1)
        E = hvac_power(base.m_base, T, summer_day.T_out, office).Q_tol
        r = lower_level_track(E, office, summer_day, np.full(summer_day.K, 0.2))
        assert np.max(np.abs(r.residual)) / np.max(E) <= 1e-6
        np.testing.assert_allclose(r.trajectory.T, 25.0, atol=1e-6)

    def test_infeasible_target_saturates_inside_band(self, office, summer_day):
        K = summer_day.K
        r = lower_level_track(np.full(K, -1.0), office, summer_day, np.full(K, 0.2))
        assert r.saturated.all()
        assert not r.comfort_violations
        assert np.all(r.trajectory.T <= office.T_max[:, None] + 1e-9)
        r = lower_level_track(np.full(K, 1e12), office, summer_day, np.full(K, 0.2))
        assert r.saturated.all() and not r.comfort_violations

    def test_cost_matches_trajectory(self, office, summer_day):
        K = summer_day.K
        r = lower_level_track(np.full(K, 4e7), office, summer_day, np.full(K, 0.3))
        t = r.trajectory
        E = hvac_power(t.m, t.T[:, :K], summer_day.T_out, office).Q_tol
        np.testing.assert_allclose(t.Q_tol, E, rtol=1e-12)
        assert r.cost == pytest.approx(0.3 * E.sum() / J_PER_KWH)


class TestOracle:
    def test_single_zone_grid(self, small):
        p, exo, price = small
        c = coefficients_multi(p)
        levels = np.linspace(0.0, 0.5, 41)
        m = np.array(list(itertools.product(levels, repeat=4)))
        T = np.full(m.shape[0], 25.0)
        cost = np.zeros(m.shape[0])
        ok = np.ones(m.shape[0], bool)
        for k in range(4):
            # independent scalar recursion of the one-zone model
            q = p.c_p * m[:, k] * (T - p.T_sup)
            E = (p.c_p * (1 - p.d_r) * m[:, k] * (exo.T_out[k] - p.T_sup)
                 + p.c_p * p.d_r * m[:, k] * (T - p.T_sup)) / p.COP + p.kappa_f * m[:, k] ** 2
            cost += price[k] * E * p.dt / J_PER_KWH
            T = c.A[0, 0] * T - c.dt_over_C[0] * q + c.a_out[0] * exo.T_out[k] \
                + c.dt_over_C[0] * exo.Q_dist[0, k]
            ok &= np.abs(T - 25.0) <= 1.0 + 1e-12
        best = float(cost[ok].min())
        r = rc_optimal_oracle(p, exo, price, n_starts=4, iters=200, seed=0)
        assert r.cost <= best * 1.0 + 1e-9
        assert abs(r.cost - best) <= 0.01 * best
        assert np.all(np.abs(r.trajectory.T[0, 1:] - 25.0) <= 1.0 + 1e-9)

    def test_never_worse_than_warm_start(self, office, summer_day):
        K = 12
        exo = summer_day.head(K)
        price = np.linspace(0.1, 0.5, K)
        m = baseline_cooling(office, exo).m_base
        base_cost = TariffSeries(price).cost(simulate_multi(office, exo, m).Q_tol)
        r = rc_optimal_oracle(office, exo, price, warm_starts={"baseline": m},
                              n_starts=2, iters=60, seed=1)
        assert r.cost <= base_cost + 1e-9
        assert "baseline" in r.start_costs

    def test_seeded(self, office, summer_day):
        exo = summer_day.head(8)
        price = np.full(8, 0.2)
        a = rc_optimal_oracle(office, exo, price, n_starts=3, iters=40, seed=5)
        b = rc_optimal_oracle(office, exo, price, n_starts=3, iters=40, seed=5)
        assert a.cost == b.cost


def test_variable_counts():
    assert variable_counts(48, 5) == {"vars_vb": 192, "vars_vb_table": 144,
                                      "vars_rc": 576, "vars_rc_table": 480}


def test_scenario_end_to_end(office, summer_day):
    from vbflex.config import DEFAULT_CONFIG, config_from_dict
    from vbflex.experiments import dr_surrogate
    cfg = config_from_dict(DEFAULT_CONFIG)
    model = dr_surrogate(cfg, days=30)
    r = run_scenario(office, summer_day, cfg.tariff(48), model, oracle_starts=3,
                     oracle_iters=100, seed=0)
    rep = r.report
    assert rep.comfort_violations == 0
    assert rep.cost_opt <= rep.cost_vb + 1e-9
    assert 0 <= rep.gap_percent < 10
    row = summarize([r])[0]
    assert row["horizon"] == 48 and row["scenarios"] == 1
