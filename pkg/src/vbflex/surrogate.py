"""Aggregate energy-consumption surrogate ``Q_tol(k) = F(soc, Q, T_out windows)``.

The reference model is ridge-damped least squares on the lagged aggregate
features, optionally with the quadratic terms ``Q^2``, ``Q*T_out`` and
``soc*Q`` at the current step (the fan term is quadratic in total airflow).
Features are used raw; the ridge penalty is scaled per column by its squared
norm, which is the same as a plain ridge on standardized features without
having to carry the normalization around.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .policies import SimulationRun

logger = logging.getLogger(__name__)

SIGNALS = ("soc", "Q", "T_out")


@dataclass(frozen=True, eq=False)
class Dataset:
    """Windowed samples; window columns run from lag ``L`` down to lag 0."""

    soc: np.ndarray
    Q: np.ndarray
    T_out: np.ndarray
    y: np.ndarray
    source: np.ndarray
    name: str = ""

    @property
    def L(self) -> int:
        return self.soc.shape[1] - 1

    def __len__(self) -> int:
        return self.y.shape[0]

    def take(self, idx, name: Optional[str] = None) -> "Dataset":
        return Dataset(self.soc[idx], self.Q[idx], self.T_out[idx], self.y[idx],
                       self.source[idx], self.name if name is None else name)

    @staticmethod
    def concat(parts: Sequence["Dataset"], name: str = "") -> "Dataset":
        return Dataset(*(np.concatenate([getattr(p, f) for p in parts])
                         for f in ("soc", "Q", "T_out", "y", "source")), name=name)


def _windows(x: np.ndarray, L: int) -> np.ndarray:
    # rows k = L..K-1, columns lag L..0
    K = x.shape[0]
    return np.stack([x[L - l:K - l] for l in range(L, -1, -1)], axis=1)


def build_dataset(runs: Sequence[SimulationRun], L: int = 1, name: str = "") -> Dataset:
    """Chronological windowing of every run; windows never cross run boundaries."""
    if not runs:
        raise ValueError("no runs given")
    parts = []
    for r, run in enumerate(runs):
        t = run.trajectory
        K = t.K
        if K < L + 1:
            raise ValueError(f"run {r} has {K} steps, shorter than the window L+1={L + 1}")
        parts.append(Dataset(
            soc=_windows(t.soc[:K], L),
            Q=_windows(t.Q, L),
            T_out=_windows(t.T_out, L),
            y=t.Q_tol[L:].copy(),
            source=np.full(K - L, r),
            name=name,
        ))
    return Dataset.concat(parts, name=name)


def split(ds: Dataset, ratios=(6, 2, 4)) -> dict:
    """Contiguous train/validation/test blocks in the given proportions."""
    ratios = np.asarray(ratios, dtype=float)
    cuts = np.rint(len(ds) * np.cumsum(ratios) / ratios.sum()).astype(int)
    bounds = [0, *cuts]
    names = ("train", "val", "test")
    return {nm: ds.take(slice(bounds[i], bounds[i + 1]), f"{ds.name}/{nm}")
            for i, nm in enumerate(names)}


def mixture(datasets: Sequence[Dataset], segment: int, name: str = "mixture") -> Dataset:
    """Interleave equal-length segments of equally long datasets.

    Segment ``j`` of the result is segment ``j`` of dataset ``j mod P``, so
    the mixture has the same length as each input and takes an equal share
    from each.
    """
    lengths = {len(d) for d in datasets}
    if len(lengths) != 1:
        raise ValueError(f"datasets must have equal length, got {sorted(lengths)}")
    N = lengths.pop()
    P = len(datasets)
    idx_parts = []
    for j, start in enumerate(range(0, N, segment)):
        d = datasets[j % P]
        idx_parts.append(d.take(slice(start, min(start + segment, N))))
    return Dataset.concat(idx_parts, name=name)


@dataclass(frozen=True)
class FeatureSpec:
    L: int = 1
    quadratic: bool = True
    ridge: Optional[float] = None

    def names(self) -> list[str]:
        out = [f"{s}[k-{l}]" for s in SIGNALS for l in range(self.L, -1, -1)]
        if self.quadratic:
            out += ["Q^2", "Q*T_out", "soc*Q"]
        return out

    def expand(self, soc, Q, T_out) -> np.ndarray:
        soc, Q, T_out = (np.atleast_2d(np.asarray(a, float)) for a in (soc, Q, T_out))
        if soc.shape[1] != self.L + 1:
            raise ValueError(f"window length {soc.shape[1]} does not match L+1={self.L + 1}")
        cols = [soc, Q, T_out]
        if self.quadratic:
            q0, t0, s0 = Q[:, -1:], T_out[:, -1:], soc[:, -1:]
            cols += [q0 * q0, q0 * t0, s0 * q0]
        return np.hstack(cols)


@dataclass(eq=False)
class SurrogateModel:
    spec: FeatureSpec
    coef: np.ndarray
    intercept: float
    ridge: float
    metadata: dict = field(default_factory=dict)
    train_residuals: Optional[np.ndarray] = None

    @property
    def L(self) -> int:
        return self.spec.L

    @property
    def feature_names(self) -> list[str]:
        return self.spec.names()

    def predict(self, soc, Q, T_out) -> np.ndarray:
        return self.spec.expand(soc, Q, T_out) @ self.coef + self.intercept

    def predict_dataset(self, ds: Dataset) -> np.ndarray:
        return self.predict(ds.soc, ds.Q, ds.T_out)

    def lag_coefficients(self) -> dict:
        """Coefficients per signal indexed by lag (position 0 is lag 0).

        Only defined for affine models, which is what the demand-response
        linear program needs.
        """
        if self.spec.quadratic:
            raise ValueError("model has quadratic features; refit with quadratic=False")
        L = self.L
        out = {}
        for s_idx, s in enumerate(SIGNALS):
            block = self.coef[s_idx * (L + 1):(s_idx + 1) * (L + 1)]
            out[s] = block[::-1].copy()
        return out

    def to_dict(self) -> dict:
        return {
            "feature_spec": {"L": self.spec.L, "quadratic": self.spec.quadratic,
                             "ridge": self.spec.ridge},
            "features": self.feature_names,
            "coef": self.coef.tolist(),
            "intercept": self.intercept,
            "ridge": self.ridge,
            "metadata": self.metadata,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SurrogateModel":
        spec = FeatureSpec(**d["feature_spec"])
        return cls(spec, np.array(d["coef"], float), float(d["intercept"]),
                   float(d["ridge"]), dict(d.get("metadata", {})))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> "SurrogateModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit(ds: Dataset, spec: FeatureSpec = FeatureSpec(), metadata: Optional[dict] = None,
        ridge: Optional[float] = None) -> SurrogateModel:
    """Ridge-damped least squares; the intercept is not penalized.

    ``ridge`` is relative: column ``j`` is damped by ``ridge * ||X[:, j]||^2``,
    so the same factor suits features of very different magnitude.
    """
    if ds.L != spec.L:
        raise ValueError(f"dataset window L={ds.L} differs from feature spec L={spec.L}")
    X = spec.expand(ds.soc, ds.Q, ds.T_out)
    N, p = X.shape
    if N < 10 * (p + 1):
        raise ValueError(f"{N} samples is fewer than 10x the {p + 1} parameters")
    lam = ridge if ridge is not None else spec.ridge
    if lam is None:
        lam = 1e-8
    Xa = np.hstack([X, np.ones((N, 1))])
    rank = np.linalg.matrix_rank(Xa)
    if rank < p + 1:
        warnings.warn(f"design matrix is rank deficient ({rank} < {p + 1}); "
                      f"ridge damping {lam:.3g} keeps the solution finite", RuntimeWarning)
    col_norm = np.linalg.norm(X, axis=0)
    damp = np.diag(np.append(np.sqrt(lam) * col_norm, 0.0))
    theta, *_ = np.linalg.lstsq(np.vstack([Xa, damp]),
                                np.concatenate([ds.y, np.zeros(p + 1)]), rcond=None)
    meta = {"dataset": ds.name, "n_samples": N}
    meta.update(metadata or {})
    model = SurrogateModel(spec, theta[:-1], float(theta[-1]), lam, meta)
    model.train_residuals = ds.y - model.predict_dataset(ds)
    return model


def select_ridge(train: Dataset, val: Dataset, spec: FeatureSpec,
                 grid: Sequence[float] = (0.0, 1e-8, 1e-6, 1e-4, 1e-2)) -> SurrogateModel:
    """Fit over a fixed grid of relative ridge factors and keep the best on ``val``."""
    best = None
    for g in grid:
        model = fit(train, spec, ridge=g)
        err = float(np.mean((model.predict_dataset(val) - val.y) ** 2))
        if best is None or err < best[0]:
            best = (err, model)
    return best[1]


@dataclass(frozen=True)
class MetricReport:
    MAPE: float
    RMSE: float
    MAE: float
    RSE: float
    RAE: float
    Corr: float
    n: int
    n_mape_excluded: int = 0

    def as_row(self) -> list:
        return [self.MAPE, self.RMSE, self.MAE, self.RSE, self.RAE, self.Corr]


METRIC_NAMES = ("MAPE", "RMSE", "MAE", "RSE", "RAE", "Corr")


def metrics(y, y_hat, zero_tol: float = 1e-9) -> MetricReport:
    """Error metrics in percent where applicable.

    RSE is the root relative squared error and RAE the relative absolute
    error, both against the mean predictor. They are NaN for a constant
    target. MAPE skips samples with ``|y| < zero_tol``.
    """
    y = np.asarray(y, float)
    y_hat = np.asarray(y_hat, float)
    if y.size == 0:
        raise ValueError("empty dataset")
    e = y_hat - y
    keep = np.abs(y) >= zero_tol
    mape = float(np.mean(np.abs(e[keep] / y[keep])) * 100) if keep.any() else float("nan")
    dev = y - y.mean()
    ss_dev = float(np.sum(dev**2))
    abs_dev = float(np.sum(np.abs(dev)))
    rse = float(np.sqrt(np.sum(e**2) / ss_dev) * 100) if ss_dev > 0 else float("nan")
    rae = float(np.sum(np.abs(e)) / abs_dev * 100) if abs_dev > 0 else float("nan")
    if ss_dev > 0 and np.std(y_hat) > 1e-12 * max(1.0, float(np.max(np.abs(y_hat)))):
        corr = float(np.corrcoef(y, y_hat)[0, 1])
    else:
        corr = float("nan")
    return MetricReport(mape, float(np.sqrt(np.mean(e**2))), float(np.mean(np.abs(e))),
                        rse, rae, corr, int(y.size), int((~keep).sum()))


def evaluate(model: SurrogateModel, ds: Dataset) -> MetricReport:
    return metrics(ds.y, model.predict_dataset(ds))
