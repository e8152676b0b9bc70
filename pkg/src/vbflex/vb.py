"""Virtual-battery models built from the RC thermal models.

The characterization state of a zone (soz) rescales its temperature so that
the comfort band maps to ``[-1, 1]`` (``centered``) or ``[0, 1]``
(``unit_interval``). Subtracting the baseline (hold-temperature) dynamics
from the RC model gives an exact linear model in soz driven by the cooling
deviation ``q - q_base``. For several zones, the left Perron eigenvector
``w`` of the scaled state matrix aggregates the zone batteries into one
building-level battery with state ``soc = w @ soz``.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from .thermal import (
    Baseline,
    ExogenousSeries,
    MultiZoneParams,
    SingleZoneParams,
    baseline_cooling,
    baseline_single,
    coefficients_multi,
)

logger = logging.getLogger(__name__)


class Convention(str, enum.Enum):
    CENTERED = "centered"
    UNIT = "unit_interval"

    @classmethod
    def parse(cls, value) -> "Convention":
        if isinstance(value, cls):
            return value
        aliases = {"unit": cls.UNIT, "unit_interval": cls.UNIT, "centered": cls.CENTERED}
        try:
            return aliases[str(value)]
        except KeyError:
            raise ValueError(f"unknown soz convention {value!r}") from None

    @property
    def bounds(self) -> tuple[float, float]:
        return (-1.0, 1.0) if self is Convention.CENTERED else (0.0, 1.0)

    @property
    def scale(self) -> float:
        """Width of the comfort band in units of delta."""
        return 1.0 if self is Convention.CENTERED else 2.0

    def hold_target(self, T_set, delta):
        """Temperature held by the baseline controller under this convention."""
        return T_set if self is Convention.CENTERED else T_set + delta


class EigenConvergenceError(RuntimeError):
    pass


class DegenerateRatioError(ValueError):
    pass


def soz_of_temperature(T, T_set, delta, convention=Convention.CENTERED):
    conv = Convention.parse(convention)
    T_set = np.asarray(T_set, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.ndim(T) == 2 and T_set.ndim == 1:
        T_set, delta = T_set[:, None], delta[:, None]
    return (conv.hold_target(T_set, delta) - T) / (conv.scale * delta)


def temperature_of_soz(soz, T_set, delta, convention=Convention.CENTERED):
    conv = Convention.parse(convention)
    T_set = np.asarray(T_set, dtype=float)
    delta = np.asarray(delta, dtype=float)
    if np.ndim(soz) == 2 and T_set.ndim == 1:
        T_set, delta = T_set[:, None], delta[:, None]
    return conv.hold_target(T_set, delta) - conv.scale * delta * soz


# --------------------------------------------------------------------------
# single zone
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class VBSingle:
    """Virtual battery of a single-zone HVAC unit.

    ``soz(k+1) = a soz(k) + P(k)`` with net charging power
    ``P(k) = gain (q_hvac(k) - q_base(k))``.
    """

    a: float
    gain: float
    q_base: np.ndarray
    q_hvac_min: float
    q_hvac_max: float
    dt: float
    convention: Convention
    baseline: Baseline

    @property
    def soz_bounds(self):
        return self.convention.bounds

    def charge_power(self, q_hvac, k=slice(None)):
        return self.gain * (np.asarray(q_hvac) - self.q_base[k])

    def charge_bounds(self, k=slice(None)):
        """Net charging power limits implied by the HVAC power limits."""
        return (self.gain * (self.q_hvac_min - self.q_base[k]),
                self.gain * (self.q_hvac_max - self.q_base[k]))

    def propagate(self, soz0: float, q_hvac) -> np.ndarray:
        P = self.charge_power(q_hvac, slice(0, len(q_hvac)))
        soz = np.empty(len(P) + 1)
        soz[0] = soz0
        for k, p in enumerate(P):
            soz[k + 1] = self.a * soz[k] + p
        return soz

    def energy(self, P, k=slice(None)):
        """Per-step HVAC energy recovered from the charging power."""
        return (np.asarray(P) / self.gain + self.q_base[k]) * self.dt


def build_single_vb(params: SingleZoneParams, exo: ExogenousSeries,
                    convention=Convention.CENTERED) -> VBSingle:
    conv = Convention.parse(convention)
    base = baseline_single(params, exo, target=conv.hold_target(params.T_set, params.delta))
    if not base.feasible:
        logger.warning("single-zone baseline leaves the HVAC limits at %d steps",
                       len(base.violations))
    return VBSingle(
        a=params.a,
        gain=params.b / (conv.scale * params.delta),
        q_base=base.q_base[0],
        q_hvac_min=params.q_hvac_min,
        q_hvac_max=params.q_hvac_max,
        dt=params.dt,
        convention=conv,
        baseline=base,
    )


# --------------------------------------------------------------------------
# multi zone
# --------------------------------------------------------------------------

def build_tilde_matrices(params: MultiZoneParams, convention=Convention.CENTERED,
                         coeffs=None):
    """Scaled state matrix ``A_tilde[i, j] = a_ij delta_j / delta_i`` and
    ``B_tilde = diag(b_i / (s delta_i))`` with ``s`` = 1 or 2."""
    conv = Convention.parse(convention)
    coeffs = coeffs or coefficients_multi(params)
    delta = params.delta
    A_tilde = coeffs.A * delta[None, :] / delta[:, None]
    B_tilde = np.diag(coeffs.dt_over_C / (conv.scale * delta))
    return A_tilde, B_tilde


def dominant_eigenpair(M, tol: float = 1e-12, max_iter: int = 100_000):
    """Perron root and nonnegative eigenvector of a nonnegative matrix.

    Power iteration from the uniform vector with 1-norm normalization, so
    the iterate stays a probability vector. Stops when successive iterates
    agree to ``tol`` in the infinity norm.

    Returns
    -------
    alpha : float
        Spectral radius of ``M``.
    w : ndarray
        Eigenvector with ``M @ w = alpha * w``, ``w >= 0`` and ``sum(w) = 1``.
    """
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] == 0:
        raise ValueError(f"expected a nonempty square matrix, got shape {M.shape}")
    if np.any(M < 0):
        raise ValueError("matrix has negative entries")
    n = M.shape[0]
    x = np.full(n, 1.0 / n)
    for it in range(max_iter):
        y = M @ x
        s = y.sum()
        if s == 0.0:
            raise EigenConvergenceError("iterate collapsed to zero (nilpotent matrix?)")
        y /= s
        if np.max(np.abs(y - x)) <= tol:
            x = y
            break
        x = y
    else:
        raise EigenConvergenceError(
            f"power iteration did not converge in {max_iter} iterations; "
            "the dominant eigenvalue may not be unique in modulus"
        )
    alpha = float((M @ x).sum())
    logger.debug("power iteration converged in %d iterations, alpha=%.15g", it + 1, alpha)
    return _refine_eigenpair(M, alpha, x)


def _refine_eigenpair(M, alpha, x, steps: int = 3):
    # The stopping test bounds the change between iterates, not the error;
    # with a small spectral gap the two differ by a factor 1 / (1 - |l2| / alpha).
    # Shifted inverse iteration from the power-iteration estimate closes the gap.
    n = M.shape[0]
    best = (float(np.max(np.abs(M @ x - alpha * x))), alpha, x)
    for _ in range(steps):
        shift = alpha * (1 + 1e-10) + 1e-300
        try:
            y = np.linalg.solve(M - shift * np.eye(n), x)
        except np.linalg.LinAlgError:
            break
        y = y / y.sum()
        y = np.where(y < 0, 0.0, y)  # rounding-level negatives on reducible matrices
        y /= y.sum()
        a = float((M @ y).sum())
        res = float(np.max(np.abs(M @ y - a * y)))
        if not np.isfinite(res) or res >= best[0]:
            break
        best = (res, a, y)
        alpha, x = a, y
    return best[1], best[2]


def soc_aggregate(soz, w):
    return np.asarray(w) @ np.asarray(soz)


def zone_vb_step(soz, q, q_base_k, A_tilde, B_tilde):
    return A_tilde @ soz + B_tilde @ (np.asarray(q) - q_base_k)


def propagate_zone_vb(soz0, q, q_base, A_tilde, B_tilde):
    """Run ``zone_vb_step`` over a cooling table ``q[i, k]``."""
    n, K = q.shape
    soz = np.empty((n, K + 1))
    soz[:, 0] = soz0
    for k in range(K):
        soz[:, k + 1] = zone_vb_step(soz[:, k], q[:, k], q_base[:, k], A_tilde, B_tilde)
    return soz


def beta_conservative(wB):
    wB = np.asarray(wB, dtype=float)
    return float(wB.min()), float(wB.max())


def beta_at_point(wB, q, eps: float = 0.0, step: Optional[int] = None) -> float:
    """Ratio ``wB @ q / sum(q)`` at one cooling vector."""
    q = np.asarray(q, dtype=float)
    total = q.sum()
    if not total > eps:
        where = "" if step is None else f" at step {step}"
        raise DegenerateRatioError(
            f"total cooling {total:.3g} is below the guard {eps:.3g}{where}"
        )
    return float(np.dot(wB, q) / total)


def _threshold_extreme(wB, q_min, q_max, eps, maximize):
    # The optimal vertex of a linear-fractional program over a box puts the
    # zones with the largest (smallest) wB at q_max and the rest at q_min.
    order = np.argsort(-wB if maximize else wB, kind="stable")
    best = None
    for j in range(len(wB) + 1):
        v = q_min.copy()
        v[order[:j]] = q_max[order[:j]]
        if v.sum() <= eps:
            continue
        r = float(np.dot(wB, v) / v.sum())
        if best is None or (r > best if maximize else r < best):
            best = r
    return best


def _charnes_cooper(wB, q_min, q_max, maximize):
    # max/min wB.y  s.t.  sum(y) = 1,  t q_min <= y <= t q_max,  t >= 0
    n = len(wB)
    c = np.concatenate([-wB if maximize else wB, [0.0]])
    A_ub = np.vstack([
        np.hstack([np.eye(n), -q_max[:, None]]),
        np.hstack([-np.eye(n), q_min[:, None]]),
    ])
    A_eq = np.concatenate([np.ones(n), [0.0]])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=np.zeros(2 * n), A_eq=A_eq, b_eq=[1.0],
                  bounds=[(None, None)] * n + [(0, None)], method="highs")
    if res.status != 0:
        raise RuntimeError(f"Charnes-Cooper LP failed: {res.message}")
    return float(-res.fun if maximize else res.fun)


def beta_tight_over_box(wB, q_min, q_max, eps: Optional[float] = None,
                        method: str = "threshold"):
    """Exact min and max of ``wB @ q / sum(q)`` over ``q_min <= q <= q_max``.

    ``method="threshold"`` scans the ``n + 1`` sorted-threshold vertices, one
    of which is optimal; ``method="lp"`` solves the Charnes-Cooper linear
    program instead. Vertices with ``sum(q) <= eps`` are excluded; the guard
    defaults to ``1e-9 * sum(q_max)``.
    """
    wB = np.asarray(wB, dtype=float)
    q_min = np.asarray(q_min, dtype=float)
    q_max = np.asarray(q_max, dtype=float)
    if np.any(q_min < 0) or np.any(q_min > q_max):
        raise ValueError("box must satisfy 0 <= q_min <= q_max")
    if eps is None:
        eps = 1e-9 * q_max.sum()
    if not q_max.sum() > max(eps, 0.0):
        raise DegenerateRatioError("cooling box is degenerate (sum(q_max) ~ 0)")
    if method == "threshold":
        return (_threshold_extreme(wB, q_min, q_max, eps, maximize=False),
                _threshold_extreme(wB, q_min, q_max, eps, maximize=True))
    if method == "lp":
        return (_charnes_cooper(wB, q_min, q_max, maximize=False),
                _charnes_cooper(wB, q_min, q_max, maximize=True))
    raise ValueError(f"unknown method {method!r}")


def estimate_q_limits(params: MultiZoneParams, K: int):
    """Cooling-power box ``c_p m_{min,max} (T_set - T_sup)`` repeated over K steps."""
    span = params.c_p * (params.T_set - params.T_sup)
    q_min = np.repeat((params.m_min * span)[:, None], K, axis=1)
    q_max = np.repeat((params.m_max * span)[:, None], K, axis=1)
    return q_min, q_max


ALGORITHMS = ("conservative", "step_ahead", "tight", "box")


def beta_schedule(algorithm: str, wB, K: int, q=None, q_base=None,
                  q_min=None, q_max=None):
    """Per-step ``(beta_min, beta_max)`` for one of the estimation algorithms.

    ``conservative`` uses the extreme entries of ``wB``; ``step_ahead``
    evaluates the ratio at the previous step's cooling (the baseline cooling
    stands in before step 0); ``tight`` evaluates it at the realized cooling;
    ``box`` solves the tight problem over the estimated cooling box. Where the
    ratio is undefined because total cooling is ~0 the conservative values
    are used, which is harmless since ``beta * Q`` vanishes there.
    """
    algorithm = algorithm.replace("-", "_")
    wB = np.asarray(wB, dtype=float)
    lo, hi = beta_conservative(wB)
    beta_min = np.full(K, lo)
    beta_max = np.full(K, hi)
    if algorithm == "conservative":
        return beta_min, beta_max
    if algorithm == "box":
        for k in range(K):
            beta_min[k], beta_max[k] = beta_tight_over_box(wB, q_min[:, k], q_max[:, k])
        return beta_min, beta_max
    if algorithm not in ("step_ahead", "tight"):
        raise ValueError(f"unknown beta algorithm {algorithm!r}")
    if q is None:
        raise ValueError(f"algorithm {algorithm!r} needs the realized cooling q")
    q = np.asarray(q, dtype=float)
    eps = 1e-9 * q_max.sum(axis=0).max() if q_max is not None else 0.0
    for k in range(K):
        if algorithm == "tight":
            ref = q[:, k]
        else:
            ref = q[:, k - 1] if k > 0 else q_base[:, 0]
        try:
            beta_min[k] = beta_max[k] = beta_at_point(wB, ref, eps, step=k)
        except DegenerateRatioError:
            logger.debug("step %d: zero total cooling, keeping conservative betas", k)
    return beta_min, beta_max


@dataclass(frozen=True, eq=False)
class VBAggregate:
    """Building-level virtual battery.

    ``soc(k+1) = alpha soc(k) + P(k)`` with
    ``beta_min(k) Q(k) - wB @ q_base(k) <= P(k) <= beta_max(k) Q(k) - wB @ q_base(k)``
    and ``Q_min(k) <= Q(k) <= Q_max(k)``.
    """

    A_tilde: np.ndarray
    B_tilde: np.ndarray
    alpha: float
    w: np.ndarray
    q_base: np.ndarray
    beta_min: np.ndarray
    beta_max: np.ndarray
    Q_min: np.ndarray
    Q_max: np.ndarray
    convention: Convention
    algorithm: str = "conservative"

    @property
    def K(self) -> int:
        return self.q_base.shape[1]

    @property
    def wB(self) -> np.ndarray:
        return self.w @ self.B_tilde

    @property
    def baseline_charge(self) -> np.ndarray:
        """``wB @ q_base(k)`` for every step."""
        return self.wB @ self.q_base

    @property
    def soc_bounds(self):
        return self.convention.bounds

    def to_dict(self) -> dict:
        return {
            "convention": self.convention.value,
            "algorithm": self.algorithm,
            "alpha": self.alpha,
            "w": self.w.tolist(),
            "A_tilde": self.A_tilde.tolist(),
            "B_tilde_diag": np.diag(self.B_tilde).tolist(),
            "q_base": self.q_base.tolist(),
            "beta_min": self.beta_min.tolist(),
            "beta_max": self.beta_max.tolist(),
            "Q_min": self.Q_min.tolist(),
            "Q_max": self.Q_max.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VBAggregate":
        return cls(
            A_tilde=np.array(d["A_tilde"], float),
            B_tilde=np.diag(np.array(d["B_tilde_diag"], float)),
            alpha=float(d["alpha"]),
            w=np.array(d["w"], float),
            q_base=np.array(d["q_base"], float),
            beta_min=np.array(d["beta_min"], float),
            beta_max=np.array(d["beta_max"], float),
            Q_min=np.array(d["Q_min"], float),
            Q_max=np.array(d["Q_max"], float),
            convention=Convention.parse(d["convention"]),
            algorithm=d.get("algorithm", "conservative"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "VBAggregate":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_aggregate(params: MultiZoneParams, exo: ExogenousSeries,
                    convention=Convention.CENTERED, algorithm: str = "conservative",
                    q=None, baseline: Optional[Baseline] = None) -> VBAggregate:
    """Assemble the aggregated virtual battery of a multi-zone building.

    ``q`` (realized zone cooling, shape ``(n, K)``) is required by the
    ``step_ahead`` and ``tight`` algorithms.
    """
    conv = Convention.parse(convention)
    coeffs = coefficients_multi(params)
    A_tilde, B_tilde = build_tilde_matrices(params, conv, coeffs)
    alpha, w = dominant_eigenpair(A_tilde.T)
    if baseline is None:
        baseline = baseline_cooling(params, exo, conv.hold_target(params.T_set, params.delta),
                                    coeffs)
    K = exo.K
    q_min, q_max = estimate_q_limits(params, K)
    wB = w @ B_tilde
    beta_min, beta_max = beta_schedule(algorithm, wB, K, q=q, q_base=baseline.q_base,
                                       q_min=q_min, q_max=q_max)
    return VBAggregate(
        A_tilde=A_tilde,
        B_tilde=B_tilde,
        alpha=alpha,
        w=w,
        q_base=baseline.q_base,
        beta_min=beta_min,
        beta_max=beta_max,
        Q_min=q_min.sum(axis=0),
        Q_max=q_max.sum(axis=0),
        convention=conv,
        algorithm=algorithm.replace("-", "_"),
    )


@dataclass(frozen=True, eq=False)
class SocBoundTrajectory:
    soc_true: Optional[np.ndarray]
    soc_up: np.ndarray
    soc_dn: np.ndarray
    algorithm: str
    box_violations: list

    def max_gap(self) -> tuple[float, float]:
        """Largest ``|soc_up - soc_true|`` and ``|soc_dn - soc_true|``."""
        return (float(np.max(np.abs(self.soc_up - self.soc_true))),
                float(np.max(np.abs(self.soc_dn - self.soc_true))))

    def containment_violations(self, tol: float = 0.0) -> int:
        return int(np.sum(self.soc_dn > self.soc_true + tol)
                   + np.sum(self.soc_true > self.soc_up + tol))


def propagate_soc_bounds(vb: VBAggregate, Q, soc0: float, soc_true=None) -> SocBoundTrajectory:
    """Upper and lower soc trajectories implied by the beta bounds.

    ``soc_up(k+1) = alpha soc_up(k) + beta_max(k) Q(k) - wB @ q_base(k)`` and
    likewise for ``soc_dn`` with ``beta_min``.
    """
    Q = np.asarray(Q, dtype=float)
    K = Q.shape[0]
    base = vb.baseline_charge
    tol = 1e-9 * max(1.0, float(np.max(np.abs(vb.Q_max))))
    violations = [int(k) for k in np.flatnonzero((Q < vb.Q_min[:K] - tol) | (Q > vb.Q_max[:K] + tol))]
    up = np.empty(K + 1)
    dn = np.empty(K + 1)
    up[0] = dn[0] = soc0
    for k in range(K):
        up[k + 1] = vb.alpha * up[k] + vb.beta_max[k] * Q[k] - base[k]
        dn[k + 1] = vb.alpha * dn[k] + vb.beta_min[k] * Q[k] - base[k]
    return SocBoundTrajectory(
        soc_true=None if soc_true is None else np.asarray(soc_true, float),
        soc_up=up,
        soc_dn=dn,
        algorithm=vb.algorithm,
        box_violations=violations,
    )
