"""Discrete-time RC thermal models for single-zone and multi-zone buildings.

All quantities are SI: capacitance in J/K, resistance in K/W, power in W,
energy in J, airflow in kg/s, time step in seconds. Temperatures are in degC.

Multi-zone dynamics (cooling regime only)::

    T(k+1) = A T(k) - B q(k) + a_out T_out(k) + d(k)
    q_i(k) = c_p m_i(k) (T_i(k) - T_sup)

Single-zone dynamics::

    T(k+1) = a T(k) - b q_hvac(k) + d(k),    b = eta dt / C
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Optional

import numpy as np

logger = logging.getLogger(__name__)


class ParameterError(ValueError):
    """Invalid building parameters."""


class UnstableDiscretizationError(ParameterError):
    """A diagonal RC coefficient fell outside (0, 1)."""


class AirflowBoxWarning(UserWarning):
    """An airflow command left the VAV box limits."""


@dataclass(frozen=True, eq=False)
class SingleZoneParams:
    C_th: float
    R_oi: float
    eta: float
    q_hvac_min: float
    q_hvac_max: float
    T_set: float
    delta: float
    dt: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ParameterError(f"delta must be > 0, got {self.delta}")
        if self.q_hvac_min > self.q_hvac_max:
            raise ParameterError("q_hvac_min exceeds q_hvac_max")
        if not 0.0 < self.a < 1.0:
            raise UnstableDiscretizationError(
                f"a = 1 - dt/(C_th*R_oi) = {self.a:.6g} is outside (0, 1)"
            )

    @property
    def a(self) -> float:
        return 1.0 - self.dt / (self.C_th * self.R_oi)

    @property
    def b(self) -> float:
        return self.eta * self.dt / self.C_th

    def d(self, T_out, Q_dist):
        return T_out * self.dt / (self.C_th * self.R_oi) + Q_dist * self.dt / self.C_th


@dataclass(frozen=True, eq=False)
class MultiZoneParams:
    """RC parameters, actuator limits and comfort bands of one building.

    ``R_adj`` is a dense ``(n, n)`` array holding the resistance between
    adjacent zones and ``inf`` where zones are not adjacent. Use
    :meth:`from_adjacency` to build it from an edge list.
    """

    C_th: np.ndarray
    R_adj: np.ndarray
    R_oi: np.ndarray
    T_set: np.ndarray
    delta: np.ndarray
    m_min: np.ndarray
    m_max: np.ndarray
    c_p: float
    T_sup: float
    d_r: float
    kappa_f: float
    COP: float
    dt: float

    def __post_init__(self):
        n = len(np.atleast_1d(self.C_th))
        for name in ("C_th", "R_oi", "T_set", "delta", "m_min", "m_max"):
            arr = np.array(np.broadcast_to(np.asarray(getattr(self, name), float), (n,)))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        R = np.array(self.R_adj, dtype=float)
        if R.shape != (n, n):
            raise ParameterError(f"R_adj must be {n}x{n}, got {R.shape}")
        np.fill_diagonal(R, np.inf)
        R.setflags(write=False)
        object.__setattr__(self, "R_adj", R)

        if not np.array_equal(R, R.T):
            raise ParameterError("R_adj must be symmetric")
        if np.any(R <= 0):
            raise ParameterError("adjacency resistances must be positive")
        if np.any(self.C_th <= 0) or np.any(self.R_oi <= 0):
            raise ParameterError("C_th and R_oi must be positive")
        if np.any(self.delta <= 0):
            bad = int(np.flatnonzero(self.delta <= 0)[0])
            raise ParameterError(f"zone {bad}: comfort half-width delta must be > 0")
        if np.any(self.m_min > self.m_max) or np.any(self.m_min < 0):
            raise ParameterError("airflow limits must satisfy 0 <= m_min <= m_max")
        if not 0.0 <= self.d_r <= 1.0:
            raise ParameterError(f"return-air fraction d_r={self.d_r} outside [0, 1]")
        if np.any(self.T_sup >= self.T_set - self.delta):
            bad = int(np.flatnonzero(self.T_sup >= self.T_set - self.delta)[0])
            raise ParameterError(
                f"zone {bad}: supply air T_sup={self.T_sup} must be below the "
                f"lower comfort limit {self.T_set[bad] - self.delta[bad]}"
            )
        if self.COP <= 0 or self.dt <= 0 or self.c_p <= 0:
            raise ParameterError("COP, dt and c_p must be positive")

    @property
    def n_zones(self) -> int:
        return len(self.C_th)

    @property
    def T_max(self) -> np.ndarray:
        return self.T_set + self.delta

    @property
    def T_min(self) -> np.ndarray:
        return self.T_set - self.delta

    @classmethod
    def from_adjacency(cls, n_zones: int, edges: Mapping[tuple[int, int], float], **kw):
        R = np.full((n_zones, n_zones), np.inf)
        for (i, j), r in edges.items():
            R[i, j] = R[j, i] = r
        return cls(R_adj=R, **kw)

    def replace(self, **changes) -> "MultiZoneParams":
        values = {f: getattr(self, f) for f in self.__dataclass_fields__}
        values.update(changes)
        return MultiZoneParams(**values)


@dataclass(frozen=True, eq=False)
class ExogenousSeries:
    """Outdoor temperature ``T_out[k]`` and zone disturbance heat ``Q_dist[i, k]`` (W)."""

    T_out: np.ndarray
    Q_dist: np.ndarray

    def __post_init__(self):
        T_out = np.asarray(self.T_out, dtype=float).ravel()
        Q = np.atleast_2d(np.asarray(self.Q_dist, dtype=float))
        if Q.shape[1] != T_out.shape[0]:
            raise ValueError(
                f"T_out has {T_out.shape[0]} steps but Q_dist has {Q.shape[1]}"
            )
        if not (np.all(np.isfinite(T_out)) and np.all(np.isfinite(Q))):
            raise ValueError("exogenous series must be finite")
        object.__setattr__(self, "T_out", T_out)
        object.__setattr__(self, "Q_dist", Q)

    @property
    def K(self) -> int:
        return self.T_out.shape[0]

    @property
    def n_zones(self) -> int:
        return self.Q_dist.shape[0]

    def head(self, K: int) -> "ExogenousSeries":
        if K > self.K:
            raise ValueError(f"requested {K} steps but the series has {self.K}")
        return ExogenousSeries(self.T_out[:K], self.Q_dist[:, :K])


@dataclass(frozen=True, eq=False)
class Coefficients:
    """Discrete-time matrices of the multi-zone model plus what ``step_multi`` needs."""

    A: np.ndarray
    B: np.ndarray
    a_out: np.ndarray
    dt_over_C: np.ndarray
    c_p: float
    T_sup: float
    m_min: np.ndarray
    m_max: np.ndarray

    @property
    def b(self) -> np.ndarray:
        return np.diag(self.B).copy()

    def disturbance(self, Q_dist_k):
        """``d(k)`` for one column (or a block of columns) of ``Q_dist``."""
        Q = np.asarray(Q_dist_k, dtype=float)
        scale = self.dt_over_C if Q.ndim == 1 else self.dt_over_C[:, None]
        return Q * scale

    def d_fn(self, exo: ExogenousSeries, k: int) -> np.ndarray:
        return self.disturbance(exo.Q_dist[:, k])


def coefficients_multi(params: MultiZoneParams) -> Coefficients:
    """Build ``A``, ``B`` and ``a_out`` from the RC parameters.

    Raises
    ------
    UnstableDiscretizationError
        If some diagonal entry ``a_ii`` is not in (0, 1).
    """
    dt, C = params.dt, params.C_th
    conductance = np.where(np.isfinite(params.R_adj), 1.0 / params.R_adj, 0.0)
    A = dt * conductance / C[:, None]
    a_out = dt / (params.R_oi * C)
    diag = 1.0 - a_out - A.sum(axis=1)
    for i, a_ii in enumerate(diag):
        if not 0.0 < a_ii < 1.0:
            raise UnstableDiscretizationError(
                f"zone {i}: a_ii = {a_ii:.6g} is outside (0, 1); "
                "check dt and the units of C_th / R"
            )
    A[np.diag_indices_from(A)] = diag
    dt_over_C = dt / C
    return Coefficients(
        A=A,
        B=np.diag(dt_over_C),
        a_out=a_out,
        dt_over_C=dt_over_C,
        c_p=params.c_p,
        T_sup=params.T_sup,
        m_min=params.m_min,
        m_max=params.m_max,
    )


def zone_cooling(m, T, c_p: float, T_sup: float):
    """Zone cooling power ``q_i = c_p m_i (T_i - T_sup)``."""
    return c_p * np.asarray(m) * (np.asarray(T) - T_sup)


def step_multi(T, m, T_out_k: float, Q_dist_k, coeffs: Coefficients):
    """Advance the multi-zone model one step. Returns ``(T_next, q)``."""
    T = np.asarray(T, dtype=float)
    m = np.asarray(m, dtype=float)
    tol = 1e-12
    if np.any(m < coeffs.m_min - tol) or np.any(m > coeffs.m_max + tol):
        warnings.warn(f"airflow {m} outside VAV box", AirflowBoxWarning, stacklevel=2)
    q = zone_cooling(m, T, coeffs.c_p, coeffs.T_sup)
    T_next = coeffs.A @ T - coeffs.dt_over_C * q + coeffs.a_out * T_out_k
    T_next = T_next + coeffs.disturbance(Q_dist_k)
    return T_next, q


def step_single(T: float, q_hvac: float, T_out_k: float, Q_dist_k: float,
                params: SingleZoneParams) -> float:
    if not params.q_hvac_min <= q_hvac <= params.q_hvac_max:
        raise ValueError(
            f"q_hvac={q_hvac} outside [{params.q_hvac_min}, {params.q_hvac_max}]"
        )
    return params.a * T - params.b * q_hvac + params.d(T_out_k, Q_dist_k)


def simulate_single(params: SingleZoneParams, exo: ExogenousSeries, q_hvac, T0: float):
    """Temperatures ``T[0..K]`` of a single zone under an HVAC power schedule."""
    q_hvac = np.asarray(q_hvac, dtype=float)
    K = q_hvac.shape[0]
    T = np.empty(K + 1)
    T[0] = T0
    for k in range(K):
        T[k + 1] = step_single(T[k], q_hvac[k], exo.T_out[k], exo.Q_dist[0, k], params)
    return T


@dataclass(frozen=True, eq=False)
class Baseline:
    """Steady-state cooling that holds every zone at ``target``.

    ``violations`` lists ``(zone, step, reason)`` for every entry where the
    required airflow leaves the VAV box or the cooling power is negative. The
    schedule itself is never clamped.
    """

    target: np.ndarray
    q_base: np.ndarray
    m_base: np.ndarray
    violations: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return not self.violations


def baseline_cooling(params: MultiZoneParams, exo: ExogenousSeries,
                     target=None, coeffs: Optional[Coefficients] = None) -> Baseline:
    coeffs = coeffs or coefficients_multi(params)
    target = params.T_set if target is None else np.broadcast_to(
        np.asarray(target, float), (params.n_zones,))
    A_minus_I = coeffs.A - np.eye(params.n_zones)
    rhs = (A_minus_I @ target)[:, None] + coeffs.a_out[:, None] * exo.T_out[None, :]
    rhs = rhs + coeffs.disturbance(exo.Q_dist)
    q_base = rhs / coeffs.dt_over_C[:, None]
    m_base = q_base / (params.c_p * (target - params.T_sup))[:, None]

    violations = []
    tol = 1e-12
    for i, k in zip(*np.nonzero(q_base < 0)):
        violations.append((int(i), int(k), "negative cooling"))
    for i, k in zip(*np.nonzero(m_base > params.m_max[:, None] + tol)):
        violations.append((int(i), int(k), "airflow above m_max"))
    for i, k in zip(*np.nonzero((m_base < params.m_min[:, None] - tol) & (q_base >= 0))):
        violations.append((int(i), int(k), "airflow below m_min"))
    if violations:
        logger.info("baseline infeasible at %d (zone, step) entries", len(violations))
    return Baseline(np.array(target, float), q_base, m_base, sorted(violations))


def baseline_single(params: SingleZoneParams, exo: ExogenousSeries,
                    target: Optional[float] = None) -> Baseline:
    target = params.T_set if target is None else float(target)
    d = params.d(exo.T_out, exo.Q_dist[0])
    q_base = (params.a * target - target + d) / params.b
    violations = [
        (0, int(k), "q_hvac outside limits")
        for k in np.flatnonzero((q_base < params.q_hvac_min) | (q_base > params.q_hvac_max))
    ]
    return Baseline(np.array([target]), q_base[None, :], q_base[None, :], violations)


@dataclass(frozen=True, eq=False)
class HvacPower:
    P_cooling: np.ndarray
    P_fan: np.ndarray
    Q_tol: np.ndarray


def hvac_power(m, T, T_out, params: MultiZoneParams) -> HvacPower:
    """Cooling power, fan power and per-step electric energy.

    ``m`` and ``T`` have zones on axis 0 and optionally time on axis 1;
    ``T_out`` is a scalar or a length-K vector.
    """
    m = np.asarray(m, dtype=float)
    T = np.asarray(T, dtype=float)
    M = m.sum(axis=0)
    c_p, T_sup, d_r = params.c_p, params.T_sup, params.d_r
    P_cooling = (c_p * (1.0 - d_r) * M * (np.asarray(T_out) - T_sup)
                 + c_p * d_r * (m * (T - T_sup)).sum(axis=0))
    P_fan = params.kappa_f * M**2
    Q_tol = P_cooling / params.COP * params.dt + P_fan * params.dt
    return HvacPower(P_cooling, P_fan, Q_tol)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Simulated record of one run.

    ``T`` and ``soz`` hold states for steps ``0..K`` (``K + 1`` columns);
    inputs and energies hold steps ``0..K-1``.
    """

    T: np.ndarray
    m: np.ndarray
    q: np.ndarray
    Q_tol: np.ndarray
    T_out: np.ndarray
    soz: Optional[np.ndarray] = None
    soc: Optional[np.ndarray] = None

    @property
    def K(self) -> int:
        return self.m.shape[1]

    @property
    def Q(self) -> np.ndarray:
        return self.q.sum(axis=0)

    def with_states(self, soz, soc) -> "Trajectory":
        return Trajectory(self.T, self.m, self.q, self.Q_tol, self.T_out, soz, soc)


def simulate_multi(params: MultiZoneParams, exo: ExogenousSeries, m, T0=None,
                   coeffs: Optional[Coefficients] = None) -> Trajectory:
    """Roll the RC model forward under a fixed airflow table ``m[i, k]``."""
    coeffs = coeffs or coefficients_multi(params)
    m = np.asarray(m, dtype=float)
    n, K = m.shape
    T = np.empty((n, K + 1))
    q = np.empty((n, K))
    T[:, 0] = params.T_set if T0 is None else T0
    for k in range(K):
        T[:, k + 1], q[:, k] = step_multi(T[:, k], m[:, k], exo.T_out[k], exo.Q_dist[:, k], coeffs)
    Q_tol = hvac_power(m, T[:, :K], exo.T_out[:K], params).Q_tol
    return Trajectory(T, m, q, Q_tol, exo.T_out[:K].copy())


def next_state_affine(T, T_out_k, Q_dist_k, params: MultiZoneParams, coeffs: Coefficients):
    """Per-zone affine map ``T_next_i = free_i - gain_i * m_i``.

    ``free`` is the next state with zero airflow and ``gain_i`` is the
    temperature drop per kg/s of airflow into zone ``i``.
    """
    T = np.asarray(T, dtype=float)
    free = coeffs.A @ T + coeffs.a_out * T_out_k + coeffs.disturbance(Q_dist_k)
    gain = coeffs.dt_over_C * params.c_p * (T - params.T_sup)
    return free, gain


def comfort_airflow_interval(free, gain, T_lo, T_hi, m_min, m_max):
    """Airflow interval keeping every zone's next temperature in ``[T_lo, T_hi]``.

    Returns ``(lo, hi, ok)``. Where the comfort interval does not meet the VAV
    box, ``ok`` is False and ``lo == hi`` collapses to the box end closest to
    comfort.
    """
    with np.errstate(divide="ignore", invalid="ignore"):
        need_lo = np.where(gain > 0, (free - T_hi) / gain, -np.inf)
        need_hi = np.where(gain > 0, (free - T_lo) / gain, np.inf)
    lo = np.maximum(m_min, need_lo)
    hi = np.minimum(m_max, need_hi)
    ok = lo <= hi
    too_warm = ~ok & (need_lo > m_max)
    too_cold = ~ok & ~too_warm
    lo = np.where(too_warm, m_max, np.where(too_cold, m_min, lo))
    hi = np.where(too_warm, m_max, np.where(too_cold, m_min, hi))
    return lo, hi, ok
