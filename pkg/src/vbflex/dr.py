"""Two-level demand-response scheduling on the aggregated virtual battery.

The upper level commits an energy trajectory by solving a linear program
over the battery state, net charging power, aggregate cooling power and the
affine energy surrogate. The lower level realizes that commitment on the full
RC model one step at a time. A multi-start projected-gradient search over the
zone airflows provides the reference cost the pipeline is measured against.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy import optimize, sparse

from .config import J_PER_KWH
from .policies import PriceGreedyPolicy, run_policy
from .surrogate import SurrogateModel
from .thermal import (
    Coefficients,
    ExogenousSeries,
    MultiZoneParams,
    Trajectory,
    baseline_cooling,
    coefficients_multi,
    comfort_airflow_interval,
    hvac_power,
    next_state_affine,
    step_multi,
)
from .vb import Convention, VBAggregate

logger = logging.getLogger(__name__)


class CommitmentError(RuntimeError):
    """The upper-level program has no optimal solution."""

    def __init__(self, status: str, family: Optional[str], message: str):
        super().__init__(message)
        self.status = status
        self.family = family


@dataclass(frozen=True, eq=False)
class TariffSeries:
    """Energy price per kWh for each step."""

    price: np.ndarray

    def __post_init__(self):
        price = np.asarray(self.price, dtype=float).copy()
        if price.ndim != 1:
            raise ValueError("tariff must be one-dimensional")
        if not np.all(np.isfinite(price)) or np.any(price < 0):
            raise ValueError("tariff prices must be finite and nonnegative")
        price.setflags(write=False)
        object.__setattr__(self, "price", price)

    @property
    def K(self) -> int:
        return self.price.shape[0]

    def head(self, K: int) -> "TariffSeries":
        if K > self.K:
            raise ValueError(f"tariff has {self.K} steps, need {K}")
        return TariffSeries(self.price[:K])

    def cost(self, Q_tol) -> float:
        """Energy cost of per-step consumption ``Q_tol`` given in joules."""
        Q_tol = np.asarray(Q_tol, dtype=float)
        return float(self.price[:Q_tol.shape[0]] @ Q_tol / J_PER_KWH)


def _as_tariff(tariff) -> TariffSeries:
    return tariff if isinstance(tariff, TariffSeries) else TariffSeries(tariff)


# --------------------------------------------------------------------------
# upper level


@dataclass(frozen=True, eq=False)
class DRCommitment:
    """Solution of the upper-level program.

    ``soc`` has ``K + 1`` entries (the first is the given initial state);
    ``Q`` is in W and ``Q_tol_hat`` in J per step.
    """

    soc: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    Q_tol_hat: np.ndarray
    objective: float
    status: str
    max_violation: dict = field(default_factory=dict)
    n_variables: int = 0
    solve_time: float = 0.0

    @property
    def K(self) -> int:
        return self.Q.shape[0]


def _history(values, L: int, default: float) -> np.ndarray:
    """Pre-horizon window values, oldest first (length ``L``)."""
    if values is None:
        return np.full(L, float(default))
    h = np.atleast_1d(np.asarray(values, dtype=float))
    if h.shape[0] < L:
        h = np.concatenate([np.full(L - h.shape[0], h[0]), h])
    return h[-L:] if L else h[:0]


def commitment_violations(vb: VBAggregate, model: SurrogateModel, c: DRCommitment,
                          T_out, soc_hist=None, Q_hist=None, T_hist=None) -> dict:
    """Largest violation of each constraint family (soc units, W and J)."""
    K = c.K
    lo, hi = vb.soc_bounds
    base = vb.baseline_charge[:K]
    if Q_hist is None:
        Q_hist = float(vb.q_base[:, 0].sum())  # same padding as upper_level_commit
    pred = surrogate_series(model, c.soc, c.Q, T_out, soc_hist, Q_hist, T_hist)
    return {
        "dynamics": float(np.max(np.abs(c.soc[1:] - vb.alpha * c.soc[:-1] - c.P))),
        "charge_upper": float(max(0.0, np.max(c.P - (vb.beta_max[:K] * c.Q - base)))),
        "charge_lower": float(max(0.0, np.max(vb.beta_min[:K] * c.Q - base - c.P))),
        "soc_bounds": float(max(0.0, np.max(c.soc[1:] - hi), np.max(lo - c.soc[1:]))),
        "cooling_box_W": float(max(0.0, np.max(c.Q - vb.Q_max[:K]), np.max(vb.Q_min[:K] - c.Q))),
        "surrogate_J": float(np.max(np.abs(c.Q_tol_hat - pred))),
    }


def surrogate_series(model: SurrogateModel, soc, Q, T_out, soc_hist=None, Q_hist=None,
                     T_hist=None) -> np.ndarray:
    """Surrogate energy for steps ``0..K-1`` with windows padded by history.

    ``soc`` holds ``K + 1`` states; the window at step ``k`` uses
    ``soc[k-L..k]``, ``Q[k-L..k]`` and ``T_out[k-L..k]``.
    """
    L = model.L
    Q = np.asarray(Q, float)
    K = Q.shape[0]
    T_out = np.asarray(T_out, float)[:K]
    soc = np.asarray(soc, float)[:K]
    s = np.concatenate([_history(soc_hist, L, soc[0]), soc])
    q = np.concatenate([_history(Q_hist, L, Q[0]), Q])
    t = np.concatenate([_history(T_hist, L, T_out[0]), T_out])
    win = lambda x: np.stack([x[l:l + K] for l in range(L + 1)], axis=1)  # noqa: E731
    return model.predict(win(s), win(q), win(t))


def upper_level_commit(vb: VBAggregate, surrogate: SurrogateModel, tariff, T_out,
                       soc0: float = 0.0, soc_hist=None, Q_hist=None, T_hist=None,
                       tol: float = 1e-7) -> DRCommitment:
    """Cost-minimal commitment on the virtual battery.

    Minimizes ``sum_k c(k) Q_tol(k)`` over ``soc(1..K)``, ``P``, ``Q`` and
    ``Q_tol`` subject to the battery recursion, the beta charge bounds, the
    cooling box, the soc range and ``Q_tol(k)`` equal to the affine surrogate
    of the current window. The outdoor temperature enters as data. Window
    values before step 0 default to ``soc0``, the baseline cooling and the
    first outdoor temperature.

    Raises
    ------
    CommitmentError
        If the program is infeasible or unbounded; the message names the
        first constraint family whose removal restores feasibility.
    """
    tariff = _as_tariff(tariff)
    K = tariff.K
    if vb.K < K:
        raise ValueError(f"virtual battery covers {vb.K} steps, tariff has {K}")
    T_out = np.asarray(T_out, float)
    if T_out.shape[0] < K:
        raise ValueError(f"outdoor temperature has {T_out.shape[0]} steps, need {K}")
    coefs = surrogate.lag_coefficients()
    L = surrogate.L
    lo, hi = vb.soc_bounds
    if not lo - tol <= soc0 <= hi + tol:
        raise CommitmentError("infeasible", "initial_soc",
                              f"initial soc {soc0} outside [{lo}, {hi}]")
    if Q_hist is None:
        Q_hist = float(vb.q_base[:, 0].sum())
    s_hist = _history(soc_hist, L, soc0)
    q_hist = _history(Q_hist, L, 0.0)
    t_hist = _history(T_hist, L, T_out[0])

    # scaled units: Q in kW, Q_tol in kWh; soc and P are already O(1)
    qs, es = 1e3, J_PER_KWH
    base = vb.baseline_charge[:K]
    bmin, bmax = vb.beta_min[:K] * qs, vb.beta_max[:K] * qs
    iS, iP, iQ, iE = (np.arange(K) + j * K for j in range(4))  # soc_{k+1}, P_k, Q_k, E_k
    nvar = 4 * K

    def sparse_rows(entries, nrows):
        r, c_, v = (np.concatenate(x) if x else np.array([]) for x in zip(*entries))
        return sparse.csr_array((v, (r, c_)), shape=(nrows, nvar))

    ks = np.arange(K)
    # dynamics: soc_{k+1} - alpha soc_k - P_k = [k == 0] alpha soc0
    dyn = [(ks, iS, np.ones(K)), (ks[1:], iS[:-1], np.full(K - 1, -vb.alpha)), (ks, iP, -np.ones(K))]
    b_dyn = np.zeros(K)
    b_dyn[0] = vb.alpha * soc0

    # surrogate: E_k - sum_l a_l soc_{k-l} - b_l Q_{k-l} = c + sum_l g_l T_{k-l} + history
    a_s, a_q, a_t = coefs["soc"] / es, coefs["Q"] * qs / es, coefs["T_out"] / es
    sur = [(ks, iE, np.ones(K))]
    b_sur = np.full(K, surrogate.intercept / es)
    T_full = np.concatenate([t_hist, T_out[:K]])
    s_full = np.concatenate([s_hist, [soc0]])
    q_full = q_hist / qs
    for l in range(L + 1):
        b_sur += a_t[l] * T_full[L - l:L - l + K]
        # soc_{k-l}: variable iS[k-l-1] for k-l >= 1, else known
        kk = ks[ks - l >= 1]
        sur.append((kk, iS[kk - l - 1], np.full(kk.size, -a_s[l])))
        for k in ks[ks - l < 1]:
            b_sur[k] += a_s[l] * s_full[L + (k - l)]
        kk = ks[ks - l >= 0]
        sur.append((kk, iQ[kk - l], np.full(kk.size, -a_q[l])))
        for k in ks[ks - l < 0]:
            b_sur[k] += a_q[l] * q_full[L + (k - l)]
    A_eq = sparse.vstack([sparse_rows(dyn, K), sparse_rows(sur, K)]).tocsr()
    b_eq = np.concatenate([b_dyn, b_sur])

    # charge bounds: P_k - bmax_k Q_k <= -base_k ;  -P_k + bmin_k Q_k <= base_k
    chg = [(ks, iP, np.ones(K)), (ks, iQ, -bmax), (ks + K, iP, -np.ones(K)), (ks + K, iQ, bmin)]
    A_ub = sparse_rows(chg, 2 * K)
    b_ub = np.concatenate([-base, base])

    bounds = np.empty((nvar, 2))
    bounds[iS] = (lo, hi)
    bounds[iP] = (-np.inf, np.inf)
    bounds[iQ, 0], bounds[iQ, 1] = vb.Q_min[:K] / qs, vb.Q_max[:K] / qs
    bounds[iE] = (-np.inf, np.inf)
    cost = np.zeros(nvar)
    cost[iE] = tariff.price

    t0 = time.perf_counter()
    res = optimize.linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                           method="highs", options={"primal_feasibility_tolerance": tol * 1e-1,
                                                    "dual_feasibility_tolerance": tol * 1e-1})
    elapsed = time.perf_counter() - t0
    if res.status != 0:
        status = {2: "infeasible", 3: "unbounded"}.get(res.status, "failed")
        family = None
        if status == "infeasible":
            relaxed = bounds.copy()
            relaxed[iS] = (-np.inf, np.inf)
            r2 = optimize.linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                                  bounds=relaxed, method="highs")
            family = "soc_bounds" if r2.status in (0, 3) else "charge_or_cooling_box"
        raise CommitmentError(status, family, f"upper-level program {status}"
                              + (f": first violated family '{family}'" if family else "")
                              + f" ({res.message})")
    x = res.x
    soc = np.concatenate([[soc0], x[iS]])
    commit = DRCommitment(
        soc=soc,
        P=x[iP],
        Q=x[iQ] * qs,
        Q_tol_hat=x[iE] * es,
        objective=float(res.fun),
        status="optimal",
        n_variables=nvar,
        solve_time=elapsed,
    )
    viol = commitment_violations(vb, surrogate, commit, T_out[:K], s_hist, q_hist, t_hist)
    object.__setattr__(commit, "max_violation", viol)
    logger.debug("commitment K=%d objective %.4f in %.3fs; violations %s", K, res.fun, elapsed, viol)
    return commit


# --------------------------------------------------------------------------
# lower level


@dataclass(frozen=True, eq=False)
class TrackingResult:
    trajectory: Trajectory
    target: np.ndarray
    residual: np.ndarray
    cost: float
    comfort_violations: list
    saturated: np.ndarray

    @property
    def max_abs_residual(self) -> float:
        return float(np.max(np.abs(self.residual)))


def _level_airflow(s, free, gain, T_set, delta, lo, hi):
    # airflow that brings every zone to the common next-step level s
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(gain > 0, (free - (T_set - s * delta)) / gain, hi)
    return np.clip(m, lo, hi)


def track_step(T, target: float, k: int, params: MultiZoneParams, exo: ExogenousSeries,
               coeffs: Coefficients, xtol: float = 1e-13):
    """Airflow at step ``k`` whose energy matches ``target`` as closely as comfort allows.

    Zones are steered toward a common next-step state-of-zone level ``s``
    (so the building state of charge equals ``s`` for any weights summing to
    one); ``s`` is found by a bracketed root search. Each zone's airflow is
    restricted to the interval keeping its next temperature in the band.

    Returns ``(m, energy, saturated, comfort_ok)``.
    """
    free, gain = next_state_affine(T, exo.T_out[k], exo.Q_dist[:, k], params, coeffs)
    lo, hi, ok = comfort_airflow_interval(free, gain, params.T_min, params.T_max,
                                          params.m_min, params.m_max)

    def energy(s):
        m = _level_airflow(s, free, gain, params.T_set, params.delta, lo, hi)
        return float(hvac_power(m, T, exo.T_out[k], params).Q_tol), m

    e_lo, m_lo = energy(-1.0)
    e_hi, m_hi = energy(1.0)
    if target <= e_lo:
        return m_lo, e_lo, target < e_lo, ok
    if target >= e_hi:
        return m_hi, e_hi, target > e_hi, ok
    s = optimize.brentq(lambda s: energy(s)[0] - target, -1.0, 1.0, xtol=xtol, rtol=1e-15)
    e, m = energy(s)
    return m, e, False, ok


def lower_level_track(commitment, params: MultiZoneParams, exo: ExogenousSeries, tariff,
                      T0=None) -> TrackingResult:
    """Realize a committed energy trajectory on the RC model step by step.

    ``commitment`` is a :class:`DRCommitment` or a per-step energy array in J.
    Comfort takes priority: when the committed energy cannot be met inside
    the comfort interval the closest feasible energy is used and the step is
    flagged as saturated. The run never aborts.
    """
    target = commitment.Q_tol_hat if isinstance(commitment, DRCommitment) else np.asarray(commitment, float)
    tariff = _as_tariff(tariff)
    K = target.shape[0]
    if exo.K < K or tariff.K < K:
        raise ValueError(f"commitment has {K} steps but exo/tariff have {exo.K}/{tariff.K}")
    coeffs = coefficients_multi(params)
    n = params.n_zones
    T = np.empty((n, K + 1))
    m = np.empty((n, K))
    q = np.empty((n, K))
    E = np.empty(K)
    sat = np.zeros(K, dtype=bool)
    T[:, 0] = params.T_set if T0 is None else T0
    comfort = []
    for k in range(K):
        m[:, k], E[k], sat[k], ok = track_step(T[:, k], target[k], k, params, exo, coeffs)
        T[:, k + 1], q[:, k] = step_multi(T[:, k], m[:, k], exo.T_out[k], exo.Q_dist[:, k], coeffs)
        tol = 1e-9
        bad = np.flatnonzero((T[:, k + 1] > params.T_max + tol) | (T[:, k + 1] < params.T_min - tol))
        comfort.extend((k + 1, int(i)) for i in bad)
        if bad.size:
            logger.warning("step %d: zones %s leave the comfort band (airflow box too narrow)",
                           k, bad.tolist())
    traj = Trajectory(T, m, q, E, exo.T_out[:K].copy())
    return TrackingResult(traj, target.copy(), E - target, tariff.head(K).cost(E), comfort, sat)


# --------------------------------------------------------------------------
# oracle


@dataclass(frozen=True, eq=False)
class OracleResult:
    cost: float
    trajectory: Trajectory
    best_start: str
    start_costs: dict
    iterations: int
    final_costs: dict = field(default_factory=dict)


def _rollout(m, T0, params, coeffs, exo, K, project: bool):
    """Batched forward simulation; ``m`` has shape ``(S, n, K)``.

    With ``project`` the airflow is clipped into each step's comfort
    interval as the rollout proceeds, which yields a comfort-feasible input.
    """
    S, n, _ = m.shape
    T = np.empty((S, n, K + 1))
    T[:, :, 0] = T0
    m = m.copy()
    cpdt = params.c_p * coeffs.dt_over_C
    dist = np.stack([coeffs.disturbance(exo.Q_dist[:, k]) for k in range(K)], axis=1)
    for k in range(K):
        Tk = T[:, :, k]
        free = Tk @ coeffs.A.T + coeffs.a_out * exo.T_out[k] + dist[:, k]
        gain = cpdt * (Tk - params.T_sup)
        if project:
            lo, hi, _ = comfort_airflow_interval(free, gain, params.T_min, params.T_max,
                                                 params.m_min, params.m_max)
            m[:, :, k] = np.clip(m[:, :, k], lo, hi)
        T[:, :, k + 1] = free - gain * m[:, :, k]
    return m, T


def _batched_cost(m, T, params, exo, price, K):
    Tk = T[:, :, :K]
    M = m.sum(axis=1)
    P_cool = (params.c_p * (1 - params.d_r) * M * (exo.T_out[:K] - params.T_sup)
              + params.c_p * params.d_r * (m * (Tk - params.T_sup)).sum(axis=1))
    E = P_cool / params.COP * params.dt + params.kappa_f * M**2 * params.dt
    return E @ price[:K] / J_PER_KWH, E


def _gradient(m, T, params, coeffs, exo, price, K, rho):
    """Cost-plus-penalty gradient with respect to ``m`` by adjoint recursion."""
    cpdt = params.c_p * coeffs.dt_over_C
    g = price[:K] * params.dt / J_PER_KWH
    cp, dr, cop = params.c_p, params.d_r, params.COP
    M = m.sum(axis=1)
    over = np.maximum(T - params.T_max[:, None], 0.0)
    under = np.maximum(params.T_min[:, None] - T, 0.0)
    pen_T = 2 * rho * (over - under)
    pen_T[:, :, 0] = 0.0
    lam = pen_T[:, :, K].copy()
    grad = np.empty_like(m)
    for k in range(K - 1, -1, -1):
        Tk = T[:, :, k]
        mk = m[:, :, k]
        direct_m = g[k] * ((cp * (1 - dr) * (exo.T_out[k] - params.T_sup)
                            + cp * dr * (Tk - params.T_sup)) / cop
                           + 2 * params.kappa_f * M[:, k:k + 1])
        grad[:, :, k] = direct_m - cpdt * (Tk - params.T_sup) * lam
        lam = g[k] * cp * dr * mk / cop + pen_T[:, :, k] + lam @ coeffs.A - cpdt * mk * lam
    penalty = rho * float(np.sum(over[:, :, 1:] ** 2 + under[:, :, 1:] ** 2))
    return grad, penalty


def rc_optimal_oracle(params: MultiZoneParams, exo: ExogenousSeries, tariff, T0=None,
                      warm_starts: Optional[Mapping[str, np.ndarray]] = None,
                      n_starts: int = 8, iters: int = 300, seed: int = 0,
                      lr: float = 0.05, rho: tuple = (10.0, 1e4),
                      check_every: int = 20, polish: bool = True,
                      polish_iters: int = 100) -> OracleResult:
    """Best-found cost of the full RC scheduling problem.

    Multi-start projected Adam descent over the airflow box. Comfort is a
    quadratic penalty (weight ramped geometrically over ``rho``) during the
    descent; candidates are made feasible by a comfort-clipping rollout before
    they are scored. Warm starts are the baseline airflow, a price-greedy
    run and any ``warm_starts`` given (typically the tracking solution);
    remaining starts are seeded perturbations of the baseline. Every warm
    start is also scored unchanged, so the result is never worse than any of
    them. Returns the incumbent, not a certificate of global optimality.
    """
    tariff = _as_tariff(tariff)
    K = tariff.K
    exo = exo.head(K) if exo.K > K else exo
    coeffs = coefficients_multi(params)
    price = tariff.price
    n = params.n_zones
    T0 = params.T_set.copy() if T0 is None else np.asarray(T0, float)
    span = (params.m_max - params.m_min)[:, None]

    starts: dict = {}
    base = baseline_cooling(params, exo, params.T_set, coeffs)
    starts["baseline"] = np.clip(base.m_base, params.m_min[:, None], params.m_max[:, None])
    greedy = run_policy(PriceGreedyPolicy(price), params, exo, T0=T0, baseline=base)
    starts["greedy"] = greedy.trajectory.m
    for name, mw in (warm_starts or {}).items():
        starts[name] = np.asarray(mw, float)[:, :K]
    rng = np.random.default_rng(seed)
    r = 0
    while len(starts) < n_starts:
        noise = rng.normal(0.0, 0.15, size=(n, K)) * span
        starts[f"random{r}"] = np.clip(starts["baseline"] + noise,
                                       params.m_min[:, None], params.m_max[:, None])
        r += 1
    names = list(starts)
    m = np.stack([starts[nm] for nm in names])
    lo_b, hi_b = params.m_min[None, :, None], params.m_max[None, :, None]
    m = np.clip(m, lo_b, hi_b)

    # incumbents: each start as given, projected to comfort
    proj, Tp = _rollout(m, T0, params, coeffs, exo, K, project=True)
    cost, _ = _batched_cost(proj, Tp, params, exo, price, K)
    best_cost = cost.copy()
    best_m = proj.copy()
    # warm starts that are already feasible keep their exact cost
    start_costs = {nm: float(c) for nm, c in zip(names, cost)}

    mom = np.zeros_like(m)
    vel = np.zeros_like(m)
    b1, b2, eps = 0.9, 0.999, 1e-12
    step = lr * span[None]
    rhos = np.geomspace(rho[0], rho[1], max(iters, 1))
    x = proj.copy()
    for it in range(1, iters + 1):
        _, T = _rollout(x, T0, params, coeffs, exo, K, project=False)
        grad, _ = _gradient(x, T, params, coeffs, exo, price, K, rhos[it - 1])
        mom = b1 * mom + (1 - b1) * grad
        vel = b2 * vel + (1 - b2) * grad**2
        mhat = mom / (1 - b1**it)
        vhat = vel / (1 - b2**it)
        decay = 0.5 * (1 + np.cos(np.pi * (it - 1) / iters))
        x = np.clip(x - step * decay * mhat / (np.sqrt(vhat) + eps), lo_b, hi_b)
        if it % check_every == 0 or it == iters:
            proj, Tp = _rollout(x, T0, params, coeffs, exo, K, project=True)
            cost, _ = _batched_cost(proj, Tp, params, exo, price, K)
            better = cost < best_cost
            best_cost = np.where(better, cost, best_cost)
            best_m[better] = proj[better]
    # deterministic reduction: lowest cost, ties by start index
    final_costs = {nm: float(c) for nm, c in zip(names, best_cost)}
    order = np.argsort(best_cost, kind="stable")
    j = int(order[0])
    m_best, cost_best, label = best_m[j], float(best_cost[j]), names[j]
    if polish:
        # polish the best descent incumbent and any warm start passed in
        picks = [j] + [names.index(nm) for nm in (warm_starts or {}) if names.index(nm) != j]
        for i in picks:
            m_pol = _slp_polish(params, exo, price, best_m[i], T0, coeffs, max_iter=polish_iters)
            m_pol, Tp = _rollout(m_pol[None], T0, params, coeffs, exo, K, project=True)
            c_pol = float(_batched_cost(m_pol, Tp, params, exo, price, K)[0][0])
            final_costs[f"{names[i]}+polish"] = c_pol
            if c_pol < cost_best:
                m_best, cost_best, label = m_pol[0], c_pol, f"{names[i]}+polish"
    traj = _single_rollout(params, exo, m_best, T0, coeffs)
    logger.debug("oracle K=%d best %.4f from start '%s'", K, cost_best, label)
    return OracleResult(tariff.cost(traj.Q_tol), traj, label, start_costs, iters, final_costs)


def _slp_polish(params: MultiZoneParams, exo: ExogenousSeries, price, m0, T0,
                coeffs: Coefficients, max_iter: int = 100, radius: float = 1.0,
                min_radius: float = 1e-5) -> np.ndarray:
    """Trust-region sequential linear programming from a feasible airflow table.

    Works in zone cooling power ``q`` (kW) and temperatures: the dynamics,
    the comfort band and the airflow box (``c_p m_min (T - T_sup) <= q <=
    c_p m_max (T - T_sup)``) are all linear there, so every iterate is
    feasible and only the objective is linearized. Steps are accepted only
    when the true cost decreases, so the result is never worse than ``m0``.
    """
    n, K = m0.shape
    T0 = np.asarray(T0, float)
    cp, Tsup, dr, cop, kap = params.c_p, params.T_sup, params.d_r, params.COP, params.kappa_f
    g = price[:K] * params.dt / J_PER_KWH
    Tout = exo.T_out[:K]
    qs = 1e3
    # variables: q[k, i] (kW) for k < K, then T[k, i] for k = 1..K
    nq = n * K
    iq = lambda k: np.arange(n) + k * n  # noqa: E731
    iT = lambda k: nq + np.arange(n) + (k - 1) * n  # noqa: E731
    rows, cols, vals = [], [], []
    rhs = np.empty(nq)
    A, Bd = coeffs.A, coeffs.dt_over_C * qs
    Arows, Acols = np.nonzero(A)
    for k in range(K):
        r = np.arange(n) + k * n
        rows += [r, r]
        cols += [iT(k + 1), iq(k)]
        vals += [np.ones(n), Bd]
        known = coeffs.a_out * Tout[k] + coeffs.disturbance(exo.Q_dist[:, k])
        if k == 0:
            rhs[r] = known + A @ T0
        else:
            rows.append(r[Arows])
            cols.append(iT(k)[Acols])
            vals.append(-A[Arows, Acols])
            rhs[r] = known
    A_eq = sparse.csr_array((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(nq, 2 * nq))
    # airflow box rows for k >= 1 (k = 0 uses the known T0 through bounds)
    rows, cols, vals, b_ub = [], [], [], []
    for k in range(1, K):
        r = np.arange(n) + (k - 1) * 2 * n
        rows += [r, r, r + n, r + n]
        cols += [iq(k), iT(k), iq(k), iT(k)]
        vals += [np.ones(n), -cp * params.m_max / qs, -np.ones(n), cp * params.m_min / qs]
        b_ub += [-cp * params.m_max * Tsup / qs, cp * params.m_min * Tsup / qs]
    A_ub = sparse.csr_array((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(2 * n * (K - 1), 2 * nq)) if K > 1 else None
    b_ub = np.concatenate(b_ub) if K > 1 else None
    q0_lo = cp * params.m_min * (T0 - Tsup) / qs
    q0_hi = cp * params.m_max * (T0 - Tsup) / qs
    T_lo = np.tile(params.T_min, K)
    T_hi = np.tile(params.T_max, K)

    def unpack(x):
        q = x[:nq].reshape(K, n).T * qs
        T = np.concatenate([T0[:, None], x[nq:].reshape(K, n).T], axis=1)
        return q, T

    def cost_grad(x):
        q, T = unpack(x)
        D = cp * (T[:, :K] - Tsup)
        m = q / D
        M = m.sum(axis=0)
        E = (cp * (1 - dr) * M * (Tout - Tsup) + dr * q.sum(axis=0)) / cop + kap * M**2
        dEdM = cp * (1 - dr) * (Tout - Tsup) / cop + 2 * kap * M
        gq = g * (dEdM / D + dr / cop) * qs
        gT = -g * dEdM * q * cp / D**2
        # T[:, K] does not enter the cost
        grad = np.concatenate([gq.T.reshape(-1), gT[:, 1:].T.reshape(-1), np.zeros(n)])
        return float(g @ E), grad

    # start from the given airflow (simulate to get a consistent state)
    traj = _single_rollout(params, exo, m0, T0, coeffs)
    x = np.concatenate([traj.q.T.reshape(-1) / qs, traj.T[:, 1:].T.reshape(-1)])
    f, grad = cost_grad(x)
    for _ in range(max_iter):
        lo = np.concatenate([x[:nq] - radius, T_lo])
        hi = np.concatenate([x[:nq] + radius, T_hi])
        lo[:n] = np.maximum(lo[:n], q0_lo)
        hi[:n] = np.minimum(hi[:n], q0_hi)
        res = optimize.linprog(grad, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=rhs,
                               bounds=np.column_stack([lo, hi]), method="highs")
        if res.status != 0:
            radius *= 0.3
        else:
            pred = float(grad @ (res.x - x))
            f_new, grad_new = cost_grad(res.x)
            if f_new < f and pred < 0:
                ratio = (f_new - f) / pred
                x, f, grad = res.x, f_new, grad_new
                if ratio > 0.75:
                    radius *= 2.0
                elif ratio < 0.25:
                    radius *= 0.5
            else:
                radius *= 0.3
        if radius < min_radius:
            break
    q, T = unpack(x)
    m = q / (cp * (T[:, :K] - Tsup))
    return np.clip(m, params.m_min[:, None], params.m_max[:, None])


def _single_rollout(params, exo, m, T0, coeffs) -> Trajectory:
    n, K = m.shape
    T = np.empty((n, K + 1))
    q = np.empty((n, K))
    T[:, 0] = T0
    for k in range(K):
        T[:, k + 1], q[:, k] = step_multi(T[:, k], m[:, k], exo.T_out[k], exo.Q_dist[:, k], coeffs)
    E = hvac_power(m, T[:, :K], exo.T_out[:K], params).Q_tol
    return Trajectory(T, m, q, E, exo.T_out[:K].copy())


# --------------------------------------------------------------------------
# evaluation


@dataclass(frozen=True)
class DRReport:
    K: int
    n_zones: int
    cost_vb: float
    cost_opt: float
    gap_percent: float
    vars_vb: int
    vars_vb_table: int
    vars_rc: int
    vars_rc_table: int
    comfort_violations: int

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def variable_counts(K: int, n_zones: int) -> dict:
    """Decision-variable counts: literal and in the compact tabulation convention.

    The literal count is ``4K`` for the battery program (soc, P, Q, Q_tol)
    and ``(2n + 2)K`` for the RC program (zone temperatures and airflows
    plus two aggregate series). The compact convention counts ``3K`` and
    ``2nK``.
    """
    return {"vars_vb": 4 * K, "vars_vb_table": 3 * K,
            "vars_rc": (2 * n_zones + 2) * K, "vars_rc_table": 2 * n_zones * K}


def evaluate_dr(commitment: Optional[DRCommitment], tracking: TrackingResult,
                oracle: OracleResult, n_zones: int) -> DRReport:
    K = tracking.trajectory.K
    gap = (tracking.cost - oracle.cost) / oracle.cost * 100 if oracle.cost != 0 else float("nan")
    return DRReport(K=K, n_zones=n_zones, cost_vb=tracking.cost, cost_opt=oracle.cost,
                    gap_percent=gap, comfort_violations=len(tracking.comfort_violations),
                    **variable_counts(K, n_zones))


# --------------------------------------------------------------------------
# scenario batch


@dataclass(frozen=True, eq=False)
class ScenarioResult:
    horizon: int
    index: int
    seed: int
    report: DRReport
    commitment: DRCommitment
    tracking: TrackingResult
    oracle: OracleResult
    runtime: float


def run_scenario(params: MultiZoneParams, exo: ExogenousSeries, tariff, surrogate: SurrogateModel,
                 convention=Convention.CENTERED, algorithm: str = "conservative",
                 oracle_starts: int = 8, oracle_iters: int = 300, seed: int = 0,
                 horizon: Optional[int] = None, index: int = 0) -> ScenarioResult:
    """Commit, track and benchmark one scenario."""
    from .vb import build_aggregate  # local to keep module import light

    t0 = time.perf_counter()
    tariff = _as_tariff(tariff)
    K = tariff.K
    exo = exo.head(K) if exo.K > K else exo
    conv = Convention.parse(convention)
    vb = build_aggregate(params, exo, conv, algorithm)
    T0 = params.T_set.copy()
    soc0 = float(vb.w @ conv_soz(T0, params, conv))
    commit = upper_level_commit(vb, surrogate, tariff, exo.T_out, soc0=soc0)
    track = lower_level_track(commit, params, exo, tariff, T0)
    oracle = rc_optimal_oracle(params, exo, tariff, T0, {"tracking": track.trajectory.m},
                               n_starts=oracle_starts, iters=oracle_iters, seed=seed)
    report = evaluate_dr(commit, track, oracle, params.n_zones)
    return ScenarioResult(horizon or K, index, seed, report, commit, track, oracle,
                          time.perf_counter() - t0)


def conv_soz(T, params: MultiZoneParams, convention):
    from .vb import soz_of_temperature
    return soz_of_temperature(T, params.T_set, params.delta, convention)


BATCH_COLUMNS = ("horizon", "cost_opt_avg", "vars_rc", "vars_rc_table", "cost_vb_avg",
                 "vars_vb", "vars_vb_table", "gap_percent", "gap_percent_mean", "gap_percent_min",
                 "gap_percent_max", "comfort_violations", "scenarios")


def summarize(results: Sequence[ScenarioResult]) -> list[dict]:
    """One summary row per horizon; the gap is computed from the average costs.

    ``gap_percent`` is the relative gap of the average costs; the mean and
    range of the per-scenario gaps are reported alongside.
    """
    rows = []
    for K in sorted({r.horizon for r in results}):
        rs = [r for r in results if r.horizon == K]
        vb = np.mean([r.report.cost_vb for r in rs])
        opt = np.mean([r.report.cost_opt for r in rs])
        gaps = [r.report.gap_percent for r in rs]
        rep = rs[0].report
        rows.append({
            "horizon": K,
            "cost_opt_avg": float(opt),
            "vars_rc": rep.vars_rc,
            "vars_rc_table": rep.vars_rc_table,
            "cost_vb_avg": float(vb),
            "vars_vb": rep.vars_vb,
            "vars_vb_table": rep.vars_vb_table,
            "gap_percent": float((vb - opt) / opt * 100),
            "gap_percent_mean": float(np.mean(gaps)),
            "gap_percent_min": float(np.min(gaps)),
            "gap_percent_max": float(np.max(gaps)),
            "comfort_violations": int(sum(r.report.comfort_violations for r in rs)),
            "scenarios": len(rs),
        })
    return rows
