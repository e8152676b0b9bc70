"""Scenario configuration, unit conversion and synthetic input generation.

Building blocks may be written in ``"table"`` units (C_th in kJ/K, R in K/kW,
c_p in kJ/(kg K), kappa_f in kW/(kg/s)^2) or plain ``"si"`` units. Everything
is converted to SI once here; the ``a_ii`` validity gate in
:func:`vbflex.thermal.coefficients_multi` rejects a misread unit loudly.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .thermal import ExogenousSeries, MultiZoneParams, ParameterError, coefficients_multi
from .vb import Convention

TABLE_TO_SI = {"C_th": 1e3, "R_adj": 1e-3, "R_oi": 1e-3, "c_p": 1e3, "kappa_f": 1e3}
J_PER_KWH = 3.6e6
STEPS_PER_DAY_DEFAULT = 48


class ConfigError(ValueError):
    pass


DEFAULT_BUILDING = {
    "units": "table",
    "n_zones": 5,
    "C_th": 1.5e4,
    "R_adj": 14.0,
    # star: core zone 0 touches the four perimeter zones
    "adjacency": [[0, 1], [0, 2], [0, 3], [0, 4]],
    "R_oi": 30.0,
    "T_set": 25.0,
    "delta": 1.0,
    "m_min": 0.0,
    "m_max": 0.5,
    "c_p": 1.012,
    "T_sup": 13.0,
    "d_r": 0.8,
    "kappa_f": 0.08,
    "COP": 1.0,
    "dt": 1800.0,
}

DEFAULT_EXO = {
    "source": "synthetic",
    "seed": 0,
    "T_mean": 30.0,
    "T_amp": 5.0,
    "T_peak_hour": 15.0,
    "T_noise": 0.4,
    "day_var": 0.5,
    "Q_base": 800.0,
    "Q_occ": [2000.0, 1500.0, 1500.0, 1500.0, 1500.0],
    "occ_start": 8.0,
    "occ_end": 18.0,
    "Q_solar": [0.0, 1200.0, 1500.0, 1200.0, 400.0],
    "solar_hour": [13.0, 9.0, 13.0, 16.0, 13.0],
    "solar_width": 2.5,
    "Q_noise": 200.0,
}

DEFAULT_TARIFF = {
    "source": "tou",
    "offpeak": 0.08,
    "midpeak": 0.15,
    "peak": 0.25,
    "mid_hours": [[8.0, 12.0], [18.0, 22.0]],
    "peak_hours": [[12.0, 18.0]],
}

DEFAULT_CONFIG = {
    "seed": 0,
    "horizon": 48,
    "convention": "centered",
    "algorithm": "conservative",
    "policies": ["random", "pid", "greedy"],
    "building": DEFAULT_BUILDING,
    "exo": DEFAULT_EXO,
    "tariff": DEFAULT_TARIFF,
    "surrogate": {"lookback": 1, "days_per_policy": 100, "quadratic": True, "segment": 48},
    "dr": {"horizons": [48, 144, 240], "scenarios": 30, "oracle_starts": 8,
           "oracle_iters": 300},
}

_BUILDING_KEYS = set(DEFAULT_BUILDING)
_SECTION_KEYS = {
    "exo": set(DEFAULT_EXO) | {"csv"},
    "tariff": set(DEFAULT_TARIFF) | {"csv"},
    "surrogate": set(DEFAULT_CONFIG["surrogate"]) | {"ridge", "path"},
    "dr": set(DEFAULT_CONFIG["dr"]),
}


def _zone_vector(value, n: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise ConfigError(f"building.{name}: expected a scalar or {n} values, got {arr.shape}")
    return arr


def building_from_dict(block: dict, path: str = "building") -> MultiZoneParams:
    """Validated :class:`MultiZoneParams` from a config block (converted to SI)."""
    unknown = set(block) - _BUILDING_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    b = dict(DEFAULT_BUILDING)
    b.update(block)
    units = b["units"]
    if units not in ("table", "si"):
        raise ConfigError(f"{path}.units must be 'table' or 'si', got {units!r}")
    scale = TABLE_TO_SI if units == "table" else {}
    n = int(b["n_zones"])

    def conv(name, value):
        return value * scale.get(name, 1.0)

    R = np.full((n, n), np.inf)
    default_R = b["R_adj"]
    for entry in b["adjacency"]:
        if len(entry) not in (2, 3):
            raise ConfigError(f"{path}.adjacency: entries are [i, j] or [i, j, R], got {entry}")
        i, j = int(entry[0]), int(entry[1])
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise ConfigError(f"{path}.adjacency: bad zone pair ({i}, {j})")
        r = entry[2] if len(entry) == 3 else default_R
        R[i, j] = R[j, i] = conv("R_adj", float(r))
    try:
        params = MultiZoneParams(
            C_th=conv("C_th", _zone_vector(b["C_th"], n, "C_th")),
            R_adj=R,
            R_oi=conv("R_oi", _zone_vector(b["R_oi"], n, "R_oi")),
            T_set=_zone_vector(b["T_set"], n, "T_set"),
            delta=_zone_vector(b["delta"], n, "delta"),
            m_min=_zone_vector(b["m_min"], n, "m_min"),
            m_max=_zone_vector(b["m_max"], n, "m_max"),
            c_p=conv("c_p", float(b["c_p"])),
            T_sup=float(b["T_sup"]),
            d_r=float(b["d_r"]),
            kappa_f=conv("kappa_f", float(b["kappa_f"])),
            COP=float(b["COP"]),
            dt=float(b["dt"]),
        )
        coefficients_multi(params)
    except ParameterError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return params


def default_building(**overrides) -> MultiZoneParams:
    """The five-zone reference building (star topology, homogeneous zones)."""
    block = dict(DEFAULT_BUILDING)
    block.update(overrides)
    return building_from_dict(block)


def heterogeneous_building(**overrides) -> MultiZoneParams:
    """Variant of the reference building with unequal zones.

    With identical zones the Perron weights are uniform and every beta
    estimate collapses to one number; this variant keeps the bounds apart.
    """
    block = dict(DEFAULT_BUILDING)
    block.update({
        "C_th": [2.2e4, 1.2e4, 1.5e4, 1.0e4, 1.8e4],
        "R_oi": [45.0, 25.0, 30.0, 22.0, 35.0],
        "delta": [0.8, 1.0, 1.2, 1.0, 1.5],
        "m_max": [0.6, 0.5, 0.5, 0.45, 0.55],
        "adjacency": [[0, 1, 12.0], [0, 2, 14.0], [0, 3, 16.0], [0, 4, 10.0], [1, 2, 20.0]],
    })
    block.update(overrides)
    return building_from_dict(block)


def _hours(K: int, dt: float) -> np.ndarray:
    return np.arange(K) * dt / 3600.0


def synth_exo(spec: Optional[dict], K: int, dt: float, n_zones: int) -> ExogenousSeries:
    """Seeded diurnal weather and zone heat gains.

    Outdoor temperature is a sinusoid peaking at ``T_peak_hour`` plus a
    per-day offset in ``[-day_var, day_var]`` and per-step uniform noise in
    ``[-T_noise, T_noise]``. Zone gains are a constant base, an occupancy
    block between ``occ_start`` and ``occ_end``, a Gaussian solar bump and
    uniform noise.
    """
    s = dict(DEFAULT_EXO)
    s.update(spec or {})
    rng = np.random.default_rng(int(s["seed"]))
    h = _hours(K, dt)
    day = (h // 24).astype(int)
    hod = h % 24
    n_days = int(day.max()) + 1 if K else 0
    day_offset = rng.uniform(-s["day_var"], s["day_var"], size=n_days)
    T_out = (s["T_mean"] + s["T_amp"] * np.cos(2 * np.pi * (hod - s["T_peak_hour"]) / 24.0)
             + day_offset[day] + rng.uniform(-s["T_noise"], s["T_noise"], size=K))

    def per_zone(name):
        v = np.asarray(s[name], float)
        if v.ndim == 0:
            return np.full(n_zones, float(v))
        if v.shape[0] != n_zones:
            # zone lists are written for the reference building; cycle them
            return np.resize(v, n_zones)
        return v

    occupied = ((hod >= s["occ_start"]) & (hod < s["occ_end"])).astype(float)
    dist_hour = np.abs(((hod[None, :] - per_zone("solar_hour")[:, None]) + 12) % 24 - 12)
    solar = per_zone("Q_solar")[:, None] * np.exp(-0.5 * (dist_hour / s["solar_width"]) ** 2)
    Q = (per_zone("Q_base")[:, None] + per_zone("Q_occ")[:, None] * occupied[None, :] + solar
         + rng.uniform(-s["Q_noise"], s["Q_noise"], size=(n_zones, K)))
    return ExogenousSeries(T_out, Q)


def tou_tariff(spec: Optional[dict], K: int, dt: float) -> np.ndarray:
    """Time-of-use price per kWh for each step."""
    s = dict(DEFAULT_TARIFF)
    s.update(spec or {})
    hod = _hours(K, dt) % 24
    price = np.full(K, float(s["offpeak"]))
    for lo, hi in s["mid_hours"]:
        price[(hod >= lo) & (hod < hi)] = s["midpeak"]
    for lo, hi in s["peak_hours"]:
        price[(hod >= lo) & (hod < hi)] = s["peak"]
    return price


@dataclass
class ScenarioConfig:
    building: MultiZoneParams
    raw: dict
    horizon: int
    convention: Convention
    algorithm: str
    policies: list
    seed: int
    base_dir: Path = field(default_factory=Path.cwd)

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)

    @property
    def dt(self) -> float:
        return self.building.dt

    def exo(self, K: Optional[int] = None, seed: Optional[int] = None) -> ExogenousSeries:
        from .io import read_exo_csv
        K = self.horizon if K is None else K
        block = self.raw.get("exo", {})
        if "csv" in block:
            return read_exo_csv(self.base_dir / block["csv"]).head(K)
        spec = dict(block)
        if seed is not None:
            spec["seed"] = seed
        return synth_exo(spec, K, self.dt, self.building.n_zones)

    def tariff(self, K: Optional[int] = None) -> np.ndarray:
        from .io import read_tariff_csv
        K = self.horizon if K is None else K
        if "tariff" not in self.raw:
            raise ConfigError("config: missing section 'tariff' (needed for demand response)")
        block = self.raw["tariff"]
        if "csv" in block:
            price = read_tariff_csv(self.base_dir / block["csv"])
            if price.shape[0] < K:
                raise ConfigError(f"tariff.csv: {price.shape[0]} steps, need {K}")
            return price[:K]
        return tou_tariff(block, K, self.dt)

    def section(self, name: str) -> dict:
        out = copy.deepcopy(DEFAULT_CONFIG.get(name, {}))
        out.update(self.raw.get(name, {}))
        return out


def config_hash(raw: dict) -> str:
    blob = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def config_from_dict(raw: dict, base_dir=None, source: str = "config") -> ScenarioConfig:
    allowed = set(DEFAULT_CONFIG)
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
    for name, keys in _SECTION_KEYS.items():
        bad = set(raw.get(name, {})) - keys
        if bad:
            raise ConfigError(f"{source}: {name}: unknown keys {sorted(bad)}")
    base_dir = Path(base_dir) if base_dir is not None else Path.cwd()
    for name in ("exo", "tariff"):
        csv = raw.get(name, {}).get("csv")
        if csv is not None and not (base_dir / csv).exists():
            raise ConfigError(f"{source}: {name}.csv: file not found: {base_dir / csv}")
    building = building_from_dict(raw.get("building", {}), f"{source}: building")
    merged = {k: raw.get(k, DEFAULT_CONFIG[k]) for k in ("horizon", "convention", "algorithm",
                                                          "policies", "seed")}
    try:
        convention = Convention.parse(merged["convention"])
    except ValueError as exc:
        raise ConfigError(f"{source}: convention: {exc}") from exc
    return ScenarioConfig(
        building=building,
        raw=raw,
        horizon=int(merged["horizon"]),
        convention=convention,
        algorithm=str(merged["algorithm"]).replace("-", "_"),
        policies=list(merged["policies"]),
        seed=int(merged["seed"]),
        base_dir=base_dir,
    )


def parse_config(path) -> ScenarioConfig:
    """Read and validate a JSON scenario file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return config_from_dict(raw, base_dir=path.parent, source=str(path))


def default_config_path() -> Path:
    return Path(__file__).with_name("data") / "default.json"
