from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vbflex.thermal import (
    ExogenousSeries,
    MultiZoneParams,
    SingleZoneParams,
    baseline_cooling,
    coefficients_multi,
    simulate_single,
)
from vbflex.vb import (
    Convention,
    DegenerateRatioError,
    EigenConvergenceError,
    VBAggregate,
    beta_at_point,
    beta_conservative,
    beta_schedule,
    beta_tight_over_box,
    build_aggregate,
    build_single_vb,
    build_tilde_matrices,
    dominant_eigenpair,
    propagate_soc_bounds,
    propagate_zone_vb,
    soz_of_temperature,
    temperature_of_soz,
)


def vertex_oracle(wB, q_min, q_max, eps=0.0):
    """Ratio extremes over every vertex of the box."""
    vals = []
    for bits in itertools.product((0, 1), repeat=len(wB)):
        v = np.where(np.array(bits, bool), q_max, q_min)
        if v.sum() > eps:
            vals.append(np.dot(wB, v) / v.sum())
    return min(vals), max(vals)


def single_zone(**kw):
    base = dict(C_th=1.5e7, R_oi=0.03, eta=1.0, q_hvac_min=0.0, q_hvac_max=3e4,
                T_set=25.0, delta=1.0, dt=1800.0)
    base.update(kw)
    return SingleZoneParams(**base)


class TestSoz:
    def test_centered_values(self):
        assert soz_of_temperature(25.0, 25.0, 1.0) == 0.0
        assert soz_of_temperature(25.5, 25.0, 1.0) == pytest.approx(-0.5)
        assert soz_of_temperature(24.0, 25.0, 1.0) == pytest.approx(1.0)

    def test_unit_values(self):
        assert soz_of_temperature(25.0, 25.0, 1.0, "unit") == pytest.approx(0.5)
        assert soz_of_temperature(26.0, 25.0, 1.0, "unit") == pytest.approx(0.0)
        assert soz_of_temperature(24.0, 25.0, 1.0, "unit") == pytest.approx(1.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(20, 30), st.floats(22, 27), st.floats(0.2, 3))
    def test_round_trip_and_bridge(self, T, T_set, delta):
        for conv in Convention:
            s = soz_of_temperature(T, T_set, delta, conv)
            assert temperature_of_soz(s, T_set, delta, conv) == pytest.approx(T, abs=1e-12)
        c = soz_of_temperature(T, T_set, delta, "centered")
        u = soz_of_temperature(T, T_set, delta, "unit")
        assert u == pytest.approx((c + 1) / 2, abs=1e-12)

    def test_parse(self):
        assert Convention.parse("unit") is Convention.UNIT
        with pytest.raises(ValueError):
            Convention.parse("percent")


class TestSingleVB:
    def test_gain(self):
        p = single_zone()
        exo = ExogenousSeries(np.full(4, 30.0), np.zeros((1, 4)))
        assert build_single_vb(p, exo).gain == pytest.approx(p.b / p.delta)
        assert build_single_vb(p, exo, "unit").gain == pytest.approx(p.b / (2 * p.delta))

    @pytest.mark.parametrize("conv", ["centered", "unit"])
    def test_exact_against_rc(self, conv, rng):
        p = single_zone()
        K = 48
        exo = ExogenousSeries(rng.uniform(26, 34, K), rng.uniform(0, 800, (1, K)))
        vb = build_single_vb(p, exo, conv)
        q = rng.uniform(p.q_hvac_min, p.q_hvac_max, K)
        T = simulate_single(p, exo, q, 25.3)
        soz_rc = soz_of_temperature(T, p.T_set, p.delta, conv)
        np.testing.assert_allclose(vb.propagate(soz_rc[0], q), soz_rc, atol=1e-9, rtol=0)

    def test_energy_round_trip(self, rng):
        p = single_zone()
        exo = ExogenousSeries(np.full(8, 31.0), np.zeros((1, 8)))
        vb = build_single_vb(p, exo)
        q = rng.uniform(0, 3e4, 8)
        np.testing.assert_allclose(vb.energy(vb.charge_power(q)), q * p.dt, rtol=1e-12)

    def test_charge_bounds_bracket(self, rng):
        p = single_zone()
        exo = ExogenousSeries(rng.uniform(26, 34, 10), np.zeros((1, 10)))
        vb = build_single_vb(p, exo)
        lo, hi = vb.charge_bounds()
        P = vb.charge_power(rng.uniform(0, 3e4, 10))
        assert np.all(lo <= P + 1e-15) and np.all(P <= hi + 1e-15)


class TestTilde:
    def test_hand_two_zone(self):
        p = MultiZoneParams.from_adjacency(
            2, {(0, 1): 1.0}, C_th=[100.0, 100.0], R_oi=[1.0, 1.0], T_set=[25.0, 25.0],
            delta=[1.0, 4.0], m_min=[0.0, 0.0], m_max=[1.0, 1.0], c_p=1.0, T_sup=15.0,
            d_r=0.8, kappa_f=0.0, COP=1.0, dt=1.0)
        A_t, B_t = build_tilde_matrices(p)
        # a_01 = 0.01 -> 0.01 * 4 / 1 and a_10 -> 0.01 * 1 / 4
        assert A_t[0, 1] == pytest.approx(0.04)
        assert A_t[1, 0] == pytest.approx(0.0025)
        np.testing.assert_allclose(np.diag(B_t), [0.01, 0.0025])
        _, B_u = build_tilde_matrices(p, "unit")
        np.testing.assert_allclose(np.diag(B_u), [0.005, 0.00125])

    def test_uniform_delta_unchanged(self, office):
        A_t, _ = build_tilde_matrices(office)
        np.testing.assert_array_equal(A_t, coefficients_multi(office).A)

    def test_zone_propagation_exact(self, office, summer_day, rng):
        from vbflex.thermal import simulate_multi
        K = summer_day.K
        m = rng.uniform(0, 0.5, (5, K))
        t = simulate_multi(office, summer_day, m, T0=rng.uniform(24.5, 25.5, 5))
        base = baseline_cooling(office, summer_day)
        A_t, B_t = build_tilde_matrices(office)
        soz_rc = soz_of_temperature(t.T, office.T_set, office.delta)
        soz_vb = propagate_zone_vb(soz_rc[:, 0], t.q, base.q_base, A_t, B_t)
        assert np.max(np.abs(soz_vb - soz_rc)) <= 1e-9


class TestEigenpair:
    def test_scalar(self):
        alpha, w = dominant_eigenpair([[0.9]])
        assert alpha == pytest.approx(0.9, abs=1e-14) and w[0] == 1.0

    def test_doubly_stochastic(self):
        alpha, w = dominant_eigenpair([[0.9, 0.1], [0.1, 0.9]])
        assert alpha == pytest.approx(1.0, abs=1e-14)
        np.testing.assert_allclose(w, [0.5, 0.5], atol=1e-14)

    def test_office(self, office):
        A_t, _ = build_tilde_matrices(office)
        alpha, w = dominant_eigenpair(A_t.T)
        assert alpha == pytest.approx(0.996, abs=1e-12)
        np.testing.assert_allclose(w, 0.2, atol=1e-12)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            dominant_eigenpair([[0.5, -0.1], [0.1, 0.5]])

    def test_periodic_fails_loudly(self):
        with pytest.raises(EigenConvergenceError):
            dominant_eigenpair([[0.0, 1.0], [2.0, 0.0]], max_iter=1000)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 10), st.integers(0, 2**31 - 1))
    def test_matches_dense_oracle(self, n, seed):
        r = np.random.default_rng(seed)
        M = r.uniform(0, 1, (n, n))
        M = 0.99 * M / M.sum(axis=1).max()
        alpha, w = dominant_eigenpair(M)
        vals, vecs = np.linalg.eig(M)
        j = np.argmax(vals.real)
        v = np.abs(vecs[:, j].real)
        v /= v.sum()
        assert np.max(np.abs(M @ w - alpha * w)) <= 1e-10
        assert abs(w.sum() - 1) <= 1e-12 and np.all(w >= 0)
        assert alpha == pytest.approx(vals[j].real, abs=1e-9)
        np.testing.assert_allclose(w, v, atol=1e-9)


class TestBeta:
    def test_conservative(self):
        assert beta_conservative([1.0, 2.0]) == (1.0, 2.0)

    def test_point(self):
        assert beta_at_point([1.0, 2.0], [1.0, 1.0]) == pytest.approx(1.5)

    def test_point_degenerate(self):
        with pytest.raises(DegenerateRatioError, match="step 3"):
            beta_at_point([1.0, 2.0], [0.0, 0.0], step=3)

    def test_box_hand(self):
        lo, hi = beta_tight_over_box([1.0, 2.0], [0.0, 0.0], [1.0, 1.0])
        assert (lo, hi) == (1.0, 2.0)
        # a floor on the cheap zone keeps the ratio away from the top entry
        lo, hi = beta_tight_over_box([1.0, 2.0], [1.0, 0.0], [1.0, 1.0])
        assert (lo, hi) == pytest.approx((1.0, 1.5))

    def test_box_degenerate(self):
        with pytest.raises(DegenerateRatioError):
            beta_tight_over_box([1.0], [0.0], [0.0])

    @settings(max_examples=300, deadline=None)
    @given(st.integers(1, 5), st.integers(0, 2**31 - 1))
    def test_box_matches_vertices(self, n, seed):
        r = np.random.default_rng(seed)
        wB = r.uniform(0, 1, n)
        q_min = r.uniform(0, 1, n) * r.integers(0, 2, n)
        q_max = q_min + r.uniform(0, 2, n)
        eps = 1e-9 * q_max.sum()
        expect = vertex_oracle(wB, q_min, q_max, eps)
        got = beta_tight_over_box(wB, q_min, q_max)
        assert got == pytest.approx(expect, rel=1e-12, abs=1e-15)
        lp = beta_tight_over_box(wB, q_min, q_max, method="lp")
        assert lp == pytest.approx(expect, rel=1e-7, abs=1e-9)

    def test_schedule_needs_q(self):
        with pytest.raises(ValueError, match="realized cooling"):
            beta_schedule("tight", np.ones(2), 3)

    def test_schedule_zero_cooling_falls_back(self):
        wB = np.array([1.0, 3.0])
        q = np.array([[1.0, 0.0], [1.0, 0.0]])
        lo, hi = beta_schedule("tight", wB, 2, q=q)
        assert lo[0] == hi[0] == pytest.approx(2.0)
        assert (lo[1], hi[1]) == (1.0, 3.0)


class TestAggregate:
    @pytest.mark.parametrize("alg", ["conservative", "step_ahead", "tight", "box"])
    def test_office_exact_every_algorithm(self, office, summer_week, alg, rng):
        from vbflex.policies import RandomPolicy, run_policy
        run = run_policy(RandomPolicy(3), office, summer_week)
        t = run.trajectory
        vb = build_aggregate(office, summer_week, algorithm=alg, q=t.q)
        b = propagate_soc_bounds(vb, t.Q, t.soc[0], t.soc)
        assert max(b.max_gap()) <= 1e-9

    def test_heterogeneous_contains(self, hetero, rng):
        from vbflex.config import DEFAULT_EXO, synth_exo
        from vbflex.policies import RandomPolicy, run_policy
        exo = synth_exo(DEFAULT_EXO, 240, hetero.dt, hetero.n_zones)
        run = run_policy(RandomPolicy(11), hetero, exo)
        t = run.trajectory
        cons = propagate_soc_bounds(build_aggregate(hetero, exo), t.Q, t.soc[0], t.soc)
        assert cons.containment_violations(tol=1e-9) == 0
        assert max(cons.max_gap()) > 1e-3  # the bound is genuinely loose here
        tight = build_aggregate(hetero, exo, algorithm="tight", q=t.q)
        b = propagate_soc_bounds(tight, t.Q, t.soc[0], t.soc)
        assert max(b.max_gap()) <= 1e-9

    def test_serialization(self, office, summer_day, tmp_path):
        vb = build_aggregate(office, summer_day)
        vb.save(tmp_path / "vb.json")
        back = VBAggregate.load(tmp_path / "vb.json")
        np.testing.assert_array_equal(back.beta_max, vb.beta_max)
        np.testing.assert_array_equal(back.q_base, vb.q_base)
        assert back.alpha == vb.alpha and back.convention is vb.convention

    def test_box_violation_recorded(self, office, summer_day):
        vb = build_aggregate(office, summer_day)
        Q = np.full(summer_day.K, vb.Q_max[0] * 2)
        b = propagate_soc_bounds(vb, Q, 0.0)
        assert b.box_violations == list(range(summer_day.K))
