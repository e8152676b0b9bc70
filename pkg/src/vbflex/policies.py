"""Airflow control policies and the trajectory harness.

Every policy is called once per step with the current zone temperatures and
returns an airflow vector; the harness clips it into the VAV box before it is
applied and recorded.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .thermal import (
    Baseline,
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
from .vb import Convention, build_tilde_matrices, dominant_eigenpair, soz_of_temperature

logger = logging.getLogger(__name__)


@dataclass
class PolicyContext:
    params: MultiZoneParams
    coeffs: Coefficients
    exo: ExogenousSeries
    baseline: Baseline


class Policy:
    kind = "abstract"

    def reset(self, ctx: PolicyContext) -> None:
        pass

    def __call__(self, k: int, T: np.ndarray, ctx: PolicyContext) -> np.ndarray:
        raise NotImplementedError

    def describe(self) -> dict:
        return {"kind": self.kind}


class RandomPolicy(Policy):
    """Independent uniform airflow in the VAV box at every step."""

    kind = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed
        self._rng = np.random.default_rng(seed)

    def reset(self, ctx):
        self._rng = np.random.default_rng(self.seed)

    def __call__(self, k, T, ctx):
        return self._rng.uniform(ctx.params.m_min, ctx.params.m_max)

    def describe(self):
        return {"kind": self.kind, "seed": self.seed}


class FixedSequencePolicy(Policy):
    kind = "fixed_sequence"

    def __init__(self, m_table, label: str = "table"):
        self.m_table = np.asarray(m_table, dtype=float)
        self.label = label

    def __call__(self, k, T, ctx):
        return self.m_table[:, k]

    def describe(self):
        return {"kind": self.kind, "label": self.label}


@dataclass
class PIDGains:
    kp: float = 0.4
    ki: float = 0.02
    kd: float = 0.0
    windup: float = 25.0

    def __post_init__(self):
        if not np.all(np.isfinite([self.kp, self.ki, self.kd, self.windup])):
            raise ValueError("PID gains must be finite")
        if self.windup <= 0:
            raise ValueError("anti-windup limit must be positive")


@dataclass
class PIDState:
    integral: np.ndarray
    prev_error: Optional[np.ndarray] = None


def pid_step(state: PIDState, T, reference, gains: PIDGains, bias, m_min, m_max):
    """Positional PID on ``T - reference`` (too warm means more airflow).

    Updates ``state`` in place and returns the clipped airflow.
    """
    error = np.asarray(T, float) - reference
    state.integral = np.clip(state.integral + error, -gains.windup, gains.windup)
    deriv = np.zeros_like(error) if state.prev_error is None else error - state.prev_error
    state.prev_error = error
    m = bias + gains.kp * error + gains.ki * state.integral + gains.kd * deriv
    return np.clip(m, m_min, m_max)


class PIDPolicy(Policy):
    """Per-zone PID around ``reference`` with the mean baseline airflow as bias."""

    kind = "pid"

    def __init__(self, gains: Optional[PIDGains] = None, reference=None, bias=None):
        self.gains = gains or PIDGains()
        self.reference = reference
        self.bias = bias
        self.state: Optional[PIDState] = None

    def reset(self, ctx):
        n = ctx.params.n_zones
        self.state = PIDState(np.zeros(n))
        self._ref = ctx.params.T_set if self.reference is None else np.broadcast_to(
            np.asarray(self.reference, float), (n,))
        if self.bias is None:
            self._bias = np.clip(ctx.baseline.m_base.mean(axis=1),
                                 ctx.params.m_min, ctx.params.m_max)
        else:
            self._bias = np.broadcast_to(np.asarray(self.bias, float), (n,))

    def __call__(self, k, T, ctx):
        return pid_step(self.state, T, self._ref, self.gains, self._bias,
                        ctx.params.m_min, ctx.params.m_max)

    def describe(self):
        g = self.gains
        return {"kind": self.kind, "kp": g.kp, "ki": g.ki, "kd": g.kd, "windup": g.windup}


def rolling_median(price, window: int):
    """Centered rolling median, truncated at the series ends."""
    price = np.asarray(price, float)
    half = window // 2
    return np.array([np.median(price[max(0, k - half):k + half + 1])
                     for k in range(len(price))])


def price_greedy_step(T, price_k: float, median_k: float, k: int, ctx: PolicyContext,
                      greediness: float = 0.8, rel_tol: float = 1e-9):
    """Pre-cool while power is cheap, coast toward the upper limit while expensive.

    The airflow that reaches the target temperature in one step is clipped to
    the interval that keeps the next temperature inside the comfort band.
    """
    p = ctx.params
    if price_k < median_k * (1 - rel_tol):
        target = p.T_set - greediness * p.delta
    elif price_k > median_k * (1 + rel_tol):
        target = p.T_set + greediness * p.delta
    else:
        target = p.T_set
    free, gain = next_state_affine(T, ctx.exo.T_out[k], ctx.exo.Q_dist[:, k], p, ctx.coeffs)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(gain > 0, (free - target) / gain, p.m_max)
    lo, hi, _ = comfort_airflow_interval(free, gain, p.T_min, p.T_max, p.m_min, p.m_max)
    return np.clip(m, lo, hi)


class PriceGreedyPolicy(Policy):
    kind = "price_greedy"

    def __init__(self, price, greediness: float = 0.8, window: int = 48):
        self.price = np.asarray(price, float)
        self.greediness = greediness
        self.window = window
        self._median = rolling_median(self.price, window)

    def __call__(self, k, T, ctx):
        return price_greedy_step(T, self.price[k], self._median[k], k, ctx, self.greediness)

    def describe(self):
        return {"kind": self.kind, "greediness": self.greediness, "window": self.window}


@dataclass(frozen=True, eq=False)
class SimulationRun:
    trajectory: Trajectory
    seed: Optional[int]
    policy: dict
    exo: dict = field(default_factory=dict)

    @property
    def K(self) -> int:
        return self.trajectory.K


def zone_weights(params: MultiZoneParams, convention=Convention.CENTERED):
    A_tilde, _ = build_tilde_matrices(params, convention)
    return dominant_eigenpair(A_tilde.T)[1]


def run_policy(policy: Policy, params: MultiZoneParams, exo: ExogenousSeries,
               T0=None, K: Optional[int] = None, convention=Convention.CENTERED,
               w=None, seed: Optional[int] = None, exo_info: Optional[dict] = None,
               baseline: Optional[Baseline] = None) -> SimulationRun:
    """Simulate ``policy`` on the RC model for ``K`` steps.

    The returned trajectory carries zone soz and building soc computed with
    the Perron weights ``w`` (derived from ``params`` when not given).
    """
    K = exo.K if K is None else K
    if K > exo.K:
        raise ValueError(f"horizon K={K} exceeds the exogenous series ({exo.K} steps)")
    conv = Convention.parse(convention)
    coeffs = coefficients_multi(params)
    if baseline is None:
        baseline = baseline_cooling(params, exo, params.T_set, coeffs)
    ctx = PolicyContext(params, coeffs, exo, baseline)
    n = params.n_zones
    T0 = params.T_set.copy() if T0 is None else np.asarray(T0, float)
    if np.any(T0 < params.T_min) or np.any(T0 > params.T_max):
        logger.warning("initial temperatures %s lie outside the comfort band", T0)

    T = np.empty((n, K + 1))
    m = np.empty((n, K))
    q = np.empty((n, K))
    T[:, 0] = T0
    policy.reset(ctx)
    for k in range(K):
        m[:, k] = np.clip(policy(k, T[:, k], ctx), params.m_min, params.m_max)
        T[:, k + 1], q[:, k] = step_multi(T[:, k], m[:, k], exo.T_out[k], exo.Q_dist[:, k], coeffs)
    Q_tol = hvac_power(m, T[:, :K], exo.T_out[:K], params).Q_tol
    w = zone_weights(params, conv) if w is None else w
    soz = soz_of_temperature(T, params.T_set, params.delta, conv)
    traj = Trajectory(T, m, q, Q_tol, exo.T_out[:K].copy(), soz, w @ soz)
    return SimulationRun(traj, seed, policy.describe(), dict(exo_info or {}))
