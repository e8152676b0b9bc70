"""End-to-end experiment pipelines shared by the command line and the demos.

All randomness derives from one root seed. Each consumer gets its own child
seed from :func:`child_seed` with a fixed stream tag, so adding a consumer
never shifts the streams of the others.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import surrogate as sg
from .config import ScenarioConfig
from .dr import ScenarioResult, TariffSeries, run_scenario, summarize
from .policies import (
    FixedSequencePolicy,
    PIDPolicy,
    Policy,
    PriceGreedyPolicy,
    RandomPolicy,
    SimulationRun,
    run_policy,
)
from .thermal import ExogenousSeries, MultiZoneParams, baseline_cooling
from .vb import ALGORITHMS, SocBoundTrajectory, build_aggregate, propagate_soc_bounds

logger = logging.getLogger(__name__)

# stream tags for child seeds
STREAM_POLICY = 1
STREAM_SURROGATE_EXO = 2
STREAM_DR_EXO = 3
STREAM_ORACLE = 4

POLICY_NAMES = ("random", "pid", "greedy", "baseline")


def child_seed(root: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(root), *map(int, keys)]).generate_state(1)[0])


def make_policy(name: str, price=None, seed: int = 0, params: Optional[MultiZoneParams] = None,
                exo: Optional[ExogenousSeries] = None) -> Policy:
    """Policy by name: ``random``, ``pid``, ``greedy`` or ``baseline``."""
    if name == "random":
        return RandomPolicy(seed)
    if name == "pid":
        return PIDPolicy()
    if name == "greedy":
        if price is None:
            raise ValueError("the greedy policy needs a tariff")
        return PriceGreedyPolicy(price)
    if name == "baseline":
        if params is None or exo is None:
            raise ValueError("the baseline policy needs the building and exogenous series")
        m = baseline_cooling(params, exo).m_base
        return FixedSequencePolicy(np.clip(m, params.m_min[:, None], params.m_max[:, None]),
                                   label="baseline")
    raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICY_NAMES)}")


def simulate_policies(params: MultiZoneParams, exo: ExogenousSeries, price, policies: Sequence[str],
                      seed: int = 0, convention="centered") -> dict:
    """One run per policy on a shared exogenous series."""
    runs = {}
    for j, name in enumerate(policies):
        pol = make_policy(name, price, child_seed(seed, STREAM_POLICY, j), params, exo)
        runs[name] = run_policy(pol, params, exo, convention=convention, seed=seed)
    return runs


# --------------------------------------------------------------------------
# soc bound validation


@dataclass(frozen=True, eq=False)
class SocValidation:
    policy: str
    algorithm: str
    run: SimulationRun
    bounds: SocBoundTrajectory

    @property
    def max_gap(self) -> tuple[float, float]:
        return self.bounds.max_gap()

    @property
    def violations(self) -> int:
        # rounding accumulated over a few hundred steps stays far below this
        return self.bounds.containment_violations(tol=1e-9)


def validate_soc(params: MultiZoneParams, exo: ExogenousSeries, price, policies: Sequence[str],
                 algorithms: Sequence[str] = ("conservative", "step_ahead", "tight"),
                 convention="centered", seed: int = 0, runs: Optional[dict] = None) -> list:
    """Policy x algorithm grid of true and bounding soc trajectories."""
    runs = runs or simulate_policies(params, exo, price, policies, seed, convention)
    out = []
    for name in policies:
        run = runs[name]
        t = run.trajectory
        for alg in algorithms:
            if alg.replace("-", "_") not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {alg!r}")
            vb = build_aggregate(params, exo.head(t.K), convention, alg, q=t.q)
            b = propagate_soc_bounds(vb, t.Q, t.soc[0], soc_true=t.soc)
            out.append(SocValidation(name, vb.algorithm, run, b))
    return out


# --------------------------------------------------------------------------
# surrogate


@dataclass(frozen=True, eq=False)
class SurrogateStudy:
    datasets: dict
    splits: dict
    models: dict
    table: dict  # (train_name, test_name) -> MetricReport
    runtime: float


def surrogate_datasets(params: MultiZoneParams, exo: ExogenousSeries, price,
                       policies: Sequence[str] = ("random", "pid", "greedy"), L: int = 1,
                       segment: int = 48, seed: int = 0) -> dict:
    """Per-policy datasets plus their uniform mixture."""
    runs = simulate_policies(params, exo, price, policies, seed)
    ds = {name: sg.build_dataset([runs[name]], L, name) for name in policies}
    ds["mixture"] = sg.mixture([ds[name] for name in policies], segment)
    return ds


def surrogate_study(params: MultiZoneParams, exo: ExogenousSeries, price,
                    policies: Sequence[str] = ("random", "pid", "greedy"),
                    spec: sg.FeatureSpec = sg.FeatureSpec(), segment: int = 48,
                    seed: int = 0, tests: Sequence[str] = ("mixture",)) -> SurrogateStudy:
    """Fit one model per training dataset and score it on each test split."""
    t0 = time.perf_counter()
    ds = surrogate_datasets(params, exo, price, policies, spec.L, segment, seed)
    splits = {name: sg.split(d) for name, d in ds.items()}
    models, table = {}, {}
    for name in ds:
        models[name] = sg.fit(splits[name]["train"], spec,
                              metadata={"split": [6, 2, 4], "seed": seed, "policy": name})
        for test in tests:
            table[(name, test)] = sg.evaluate(models[name], splits[test]["test"])
    return SurrogateStudy(ds, splits, models, table, time.perf_counter() - t0)


def training_exo(cfg: ScenarioConfig, days: int) -> ExogenousSeries:
    steps = int(round(days * 86400 / cfg.dt))
    return cfg.exo(steps, seed=child_seed(cfg.seed, STREAM_SURROGATE_EXO))


def dr_surrogate(cfg: ScenarioConfig, days: Optional[int] = None) -> sg.SurrogateModel:
    """Affine energy model for the upper-level program, trained on the mixture."""
    sec = cfg.section("surrogate")
    days = int(sec["days_per_policy"]) if days is None else days
    exo = training_exo(cfg, days)
    price = cfg.tariff(exo.K)
    spec = sg.FeatureSpec(int(sec["lookback"]), quadratic=False, ridge=sec.get("ridge"))
    ds = surrogate_datasets(cfg.building, exo, price, [p for p in cfg.policies if p != "baseline"],
                            spec.L, int(sec["segment"]), cfg.seed)
    train = sg.split(ds["mixture"])["train"]
    return sg.fit(train, spec, metadata={"dataset": "mixture", "split": [6, 2, 4],
                                         "seed": cfg.seed, "days_per_policy": days})


# --------------------------------------------------------------------------
# demand-response batch


def _scenario_job(args):
    (params, exo, price, model, conv, alg, starts, iters, seed, K, s) = args
    return run_scenario(params, exo, TariffSeries(price), model, conv, alg, starts, iters,
                        seed, horizon=K, index=s)


def dr_batch(cfg: ScenarioConfig, model: sg.SurrogateModel, horizons: Sequence[int],
             scenarios: int, workers: int = 1, oracle_starts: Optional[int] = None,
             oracle_iters: Optional[int] = None) -> list[ScenarioResult]:
    """Seeded scenarios for every horizon; results are ordered by (horizon, index).

    Scenario ``s`` at horizon ``K`` draws its weather and loads from the
    child seed ``(root, DR_EXO, K, s)``; the oracle uses ``(root, ORACLE, K, s)``.
    """
    sec = cfg.section("dr")
    starts = int(sec["oracle_starts"] if oracle_starts is None else oracle_starts)
    iters = int(sec["oracle_iters"] if oracle_iters is None else oracle_iters)
    jobs = []
    for K in horizons:
        price = cfg.tariff(K)
        for s in range(scenarios):
            exo = cfg.exo(K, seed=child_seed(cfg.seed, STREAM_DR_EXO, K, s))
            jobs.append((cfg.building, exo, price, model, cfg.convention, "conservative",
                         starts, iters, child_seed(cfg.seed, STREAM_ORACLE, K, s), K, s))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scenario_job, jobs))
    else:
        results = [_scenario_job(j) for j in jobs]
    for r in results:
        logger.info("K=%d scenario %d: Cost_VB %.3f Cost_Opt %.3f gap %.2f%% (%.1fs)",
                    r.horizon, r.index, r.report.cost_vb, r.report.cost_opt,
                    r.report.gap_percent, r.runtime)
    return results


__all__ = [
    "POLICY_NAMES", "SocValidation", "SurrogateStudy", "child_seed", "dr_batch", "dr_surrogate",
    "make_policy", "simulate_policies", "summarize", "surrogate_datasets", "surrogate_study",
    "training_exo", "validate_soc",
]
