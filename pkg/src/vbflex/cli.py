"""Command-line entry point: ``vbflex <subcommand> [options]``.

Every subcommand reads a scenario config, runs one pipeline and writes CSV
artifacts plus ``manifest.json`` into ``--out-dir``. Outputs are staged and
only moved into place when the command succeeds.
"""

from __future__ import annotations

import argparse
import contextlib
import copy
import io as io_mod
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import dr, experiments as ex, io
from . import surrogate as sg
from .config import ConfigError, config_from_dict, default_config_path
from .policies import run_policy
from .thermal import ParameterError
from .vb import build_aggregate, soz_of_temperature

logger = logging.getLogger("vbflex")

SUBCOMMANDS = ("simulate", "build-vb", "validate-soc", "fit-energy", "eval-energy",
               "dr-commit", "dr-track", "dr-oracle", "dr-batch", "report")
METRIC_HEADER = ["train_dataset", "test_dataset", *sg.METRIC_NAMES, "n", "n_mape_excluded"]


class CommandError(RuntimeError):
    pass


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="scenario JSON (default: the bundled reference building)")
    common.add_argument("--seed", type=int, default=None, help="root seed override")
    common.add_argument("--out-dir", type=Path, default=Path("runs"), help="output directory")
    common.add_argument("--horizon", type=int, default=None, help="number of steps K")
    common.add_argument("--algorithm", default=None,
                        choices=["conservative", "step-ahead", "tight", "box"])
    common.add_argument("--convention", default=None, choices=["centered", "unit"])
    common.add_argument("--policy", default=None, choices=list(ex.POLICY_NAMES))
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="vbflex", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="simulate one control policy")
    sub.add_parser("build-vb", parents=[common], help="build the aggregated virtual battery")
    sub.add_parser("validate-soc", parents=[common],
                   help="true vs bounding soc over the policy x algorithm grid")
    s = sub.add_parser("fit-energy", parents=[common], help="fit energy surrogates")
    s.add_argument("--days", type=int, default=None, help="simulated days per policy")
    s.add_argument("--affine", action="store_true", help="drop the quadratic features")
    s = sub.add_parser("eval-energy", parents=[common], help="score a saved surrogate")
    s.add_argument("--model", type=Path, required=True)
    s.add_argument("--days", type=int, default=None)
    for name, helptext in (("dr-commit", "upper-level commitment"),
                           ("dr-track", "commitment followed by tracking"),
                           ("dr-oracle", "RC-optimal reference schedule")):
        s = sub.add_parser(name, parents=[common], help=helptext)
        s.add_argument("--model", type=Path, default=None, help="affine surrogate JSON")
        s.add_argument("--days", type=int, default=None, help="surrogate training days")
        s.add_argument("--scenario", type=int, default=0, help="scenario index for weather")
    s = sub.add_parser("dr-batch", parents=[common], help="seeded demand-response batch")
    s.add_argument("--scenarios", type=int, default=None)
    s.add_argument("--days", type=float, nargs="+", default=None,
                   help="horizons in days (overrides config dr.horizons)")
    s.add_argument("--model", type=Path, default=None)
    s.add_argument("--train-days", type=int, default=None,
                   help="surrogate training days per policy (when --model is not given)")
    s.add_argument("--workers", type=int, default=1)
    s.add_argument("--oracle-iters", type=int, default=None)
    s = sub.add_parser("report", parents=[common], help="summarize runs under --out-dir")
    s.add_argument("--verify", action="store_true",
                   help="re-run every manifest and compare output checksums")
    return p


# --------------------------------------------------------------------------
# config resolution


def load_raw_config(path: Optional[Path]) -> tuple[dict, Path]:
    path = default_config_path() if path is None else Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"{path}: file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    return raw, path.resolve().parent


def apply_overrides(raw: dict, args) -> dict:
    raw = copy.deepcopy(raw)
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.horizon is not None:
        raw["horizon"] = args.horizon
    if args.algorithm is not None:
        raw["algorithm"] = args.algorithm
    if args.convention is not None:
        raw["convention"] = args.convention
    if args.policy is not None:
        raw["policies"] = [args.policy]
    return raw


# --------------------------------------------------------------------------
# commands; each returns the list of files written into ``out``


def cmd_simulate(cfg, args, out: Path, h: str):
    K = cfg.horizon
    exo = cfg.exo(K)
    price = cfg.tariff(K) if "tariff" in cfg.raw else None
    files = [io.write_exo_csv(out / "exo.csv", exo, h)]
    if price is not None:
        files.append(io.write_tariff_csv(out / "tariff.csv", price, h))
    runs = ex.simulate_policies(cfg.building, exo, price, cfg.policies, cfg.seed, cfg.convention)
    for name, run in runs.items():
        files.append(io.write_trajectory_csv(out / f"trajectory_{name}.csv", run.trajectory, h))
    return files


def _policy_run(cfg, exo, price):
    name = cfg.policies[0]
    pol = ex.make_policy(name, price, ex.child_seed(cfg.seed, ex.STREAM_POLICY, 0),
                         cfg.building, exo)
    return name, run_policy(pol, cfg.building, exo, convention=cfg.convention, seed=cfg.seed)


def cmd_build_vb(cfg, args, out: Path, h: str):
    K = cfg.horizon
    exo = cfg.exo(K)
    q = None
    if cfg.algorithm in ("step_ahead", "tight"):
        _, run = _policy_run(cfg, exo, cfg.tariff(K))
        q = run.trajectory.q
    vb = build_aggregate(cfg.building, exo, cfg.convention, cfg.algorithm, q=q)
    vb.save(out / "vb.json")
    base = vb.baseline_charge
    rows = ((k, vb.beta_min[k], vb.beta_max[k], vb.Q_min[k], vb.Q_max[k], base[k])
            for k in range(K))
    f = io.write_csv(out / "vb_schedule.csv",
                     ["k", "beta_min", "beta_max", "Q_min", "Q_max", "baseline_charge"], rows, h)
    w = io.write_csv(out / "vb_weights.csv", ["zone", "w", "wB"],
                     ((i + 1, vb.w[i], vb.wB[i]) for i in range(vb.w.shape[0])), h)
    print(f"alpha = {vb.alpha:.12g}; weights {np.array2string(vb.w, precision=6)}")
    return [out / "vb.json", f, w]


def cmd_validate_soc(cfg, args, out: Path, h: str):
    K = cfg.horizon
    exo = cfg.exo(K)
    price = cfg.tariff(K)
    algs = [cfg.algorithm] if args.algorithm else ["conservative", "step_ahead", "tight"]
    results = ex.validate_soc(cfg.building, exo, price, cfg.policies, algs, cfg.convention,
                              cfg.seed)
    files, summary = [], []
    for r in results:
        b = r.bounds
        files.append(io.write_csv(
            out / f"soc_{r.policy}_{r.algorithm}.csv", ["k", "soc_true", "soc_up", "soc_dn"],
            ((k, b.soc_true[k], b.soc_up[k], b.soc_dn[k]) for k in range(K + 1)), h))
        up, dn = r.max_gap
        summary.append((r.policy, r.algorithm, up, dn, r.violations))
        print(f"{r.policy:>8s} {r.algorithm:>12s}  max|up-true| {up:.3e}  "
              f"max|dn-true| {dn:.3e}  containment violations {r.violations}")
    files.append(io.write_csv(out / "validate_soc.csv",
                              ["policy", "algorithm", "max_gap_up", "max_gap_dn", "violations"],
                              summary, h))
    return files


def _metric_rows(table):
    for (train, test), m in table.items():
        yield [train, test, *m.as_row(), m.n, m.n_mape_excluded]


def cmd_fit_energy(cfg, args, out: Path, h: str):
    sec = cfg.section("surrogate")
    days = args.days or int(sec["days_per_policy"])
    exo = ex.training_exo(cfg, days)
    price = cfg.tariff(exo.K)
    quad = bool(sec["quadratic"]) and not args.affine
    spec = sg.FeatureSpec(int(sec["lookback"]), quad, sec.get("ridge"))
    policies = [p for p in cfg.policies if p != "baseline"] or ["random", "pid", "greedy"]
    study = ex.surrogate_study(cfg.building, exo, price, policies, spec, int(sec["segment"]),
                               cfg.seed, tests=("mixture",))
    files = []
    for name, model in study.models.items():
        model.metadata["config_hash"] = h
        path = out / f"model_{name}.json"
        model.save(path)
        files.append(path)
    files.append(io.write_csv(out / "metrics.csv", METRIC_HEADER, _metric_rows(study.table), h))
    for (train, test), m in study.table.items():
        print(f"train {train:>8s} -> test {test}: MAPE {m.MAPE:.2f}%  RMSE {m.RMSE / 3.6e6:.3f} kWh"
              f"  Corr {m.Corr:.4f}")
    return files


def cmd_eval_energy(cfg, args, out: Path, h: str):
    model = sg.SurrogateModel.load(args.model)
    sec = cfg.section("surrogate")
    days = args.days or int(sec["days_per_policy"])
    exo = ex.training_exo(cfg, days)
    price = cfg.tariff(exo.K)
    policies = [p for p in cfg.policies if p != "baseline"] or ["random", "pid", "greedy"]
    ds = ex.surrogate_datasets(cfg.building, exo, price, policies, model.L,
                               int(sec["segment"]), cfg.seed)
    table = {(model.metadata.get("dataset", args.model.stem), name): sg.evaluate(model, sg.split(d)["test"])
             for name, d in ds.items()}
    for (_, test), m in table.items():
        print(f"test {test:>8s}: MAPE {m.MAPE:.2f}%  Corr {m.Corr:.4f}")
    return [io.write_csv(out / "metrics.csv", METRIC_HEADER, _metric_rows(table), h)]


def _dr_model(cfg, args):
    if args.model is not None:
        model = sg.SurrogateModel.load(args.model)
        if model.spec.quadratic:
            raise CommandError(f"{args.model}: the commitment needs an affine model "
                               "(fit with --affine)")
        return model
    # dr-batch uses --days for the horizons, so its training length has its own flag
    days = args.train_days if hasattr(args, "train_days") else args.days
    return ex.dr_surrogate(cfg, days)


def _dr_scenario(cfg, args):
    K = cfg.horizon
    exo = cfg.exo(K, seed=ex.child_seed(cfg.seed, ex.STREAM_DR_EXO, K, args.scenario))
    return exo, dr.TariffSeries(cfg.tariff(K))


def _commit(cfg, args, exo, tariff, model):
    conv = cfg.convention
    vb = build_aggregate(cfg.building, exo, conv, "conservative")
    soc0 = float(vb.w @ soz_of_temperature(cfg.building.T_set, cfg.building.T_set,
                                           cfg.building.delta, conv))
    return vb, dr.upper_level_commit(vb, model, tariff, exo.T_out, soc0=soc0)


def _write_commitment(out, c: dr.DRCommitment, tariff, h):
    rows = ((k, tariff.price[k], c.soc[k], c.P[k], c.Q[k], c.Q_tol_hat[k]) for k in range(c.K))
    return io.write_csv(out / "commitment.csv", ["k", "price", "soc", "P", "Q", "Q_tol_hat"], rows, h)


def cmd_dr_commit(cfg, args, out: Path, h: str):
    model = _dr_model(cfg, args)
    exo, tariff = _dr_scenario(cfg, args)
    _, c = _commit(cfg, args, exo, tariff, model)
    model.save(out / "surrogate.json")
    print(f"objective {c.objective:.4f}; max violation "
          + ", ".join(f"{k} {v:.2e}" for k, v in c.max_violation.items()))
    return [out / "surrogate.json", _write_commitment(out, c, tariff, h)]


def _write_tracking(out, t: dr.TrackingResult, h):
    f = io.write_trajectory_csv(out / "tracking_trajectory.csv", t.trajectory, h)
    rows = ((k, t.target[k], t.trajectory.Q_tol[k], t.residual[k], int(t.saturated[k]))
            for k in range(t.target.shape[0]))
    g = io.write_csv(out / "tracking.csv", ["k", "Q_tol_hat", "Q_tol", "residual", "saturated"],
                     rows, h)
    return [f, g]


def cmd_dr_track(cfg, args, out: Path, h: str):
    model = _dr_model(cfg, args)
    exo, tariff = _dr_scenario(cfg, args)
    _, c = _commit(cfg, args, exo, tariff, model)
    t = dr.lower_level_track(c, cfg.building, exo, tariff)
    print(f"Cost_VB {t.cost:.4f}; comfort violations {len(t.comfort_violations)}; "
          f"saturated steps {int(t.saturated.sum())}")
    return [_write_commitment(out, c, tariff, h), *_write_tracking(out, t, h)]


def cmd_dr_oracle(cfg, args, out: Path, h: str):
    exo, tariff = _dr_scenario(cfg, args)
    sec = cfg.section("dr")
    warm = {}
    if args.model is not None or args.days is not None:
        model = _dr_model(cfg, args)
        _, c = _commit(cfg, args, exo, tariff, model)
        warm["tracking"] = dr.lower_level_track(c, cfg.building, exo, tariff).trajectory.m
    o = dr.rc_optimal_oracle(cfg.building, exo, tariff, warm_starts=warm,
                             n_starts=int(sec["oracle_starts"]), iters=int(sec["oracle_iters"]),
                             seed=ex.child_seed(cfg.seed, ex.STREAM_ORACLE, cfg.horizon,
                                                args.scenario))
    print(f"Cost_Opt {o.cost:.4f} (best start '{o.best_start}')")
    f = io.write_trajectory_csv(out / "oracle_trajectory.csv", o.trajectory, h)
    g = io.write_csv(out / "oracle_starts.csv", ["start", "cost"], sorted(o.final_costs.items()), h)
    return [f, g]


def cmd_dr_batch(cfg, args, out: Path, h: str):
    sec = cfg.section("dr")
    steps_per_day = int(round(86400 / cfg.dt))
    horizons = ([int(round(d * steps_per_day)) for d in args.days] if args.days
                else [int(k) for k in sec["horizons"]])
    scenarios = args.scenarios or int(sec["scenarios"])
    model = _dr_model(cfg, args)
    model.save(out / "surrogate.json")
    results = ex.dr_batch(cfg, model, horizons, scenarios, workers=args.workers,
                          oracle_iters=args.oracle_iters)
    rows = ex.summarize(results)
    f = io.write_csv(out / "summary.csv", list(dr.BATCH_COLUMNS),
                     ([r[c] for c in dr.BATCH_COLUMNS] for r in rows), h)
    per = io.write_csv(out / "scenarios.csv",
                       ["horizon", "scenario", "cost_vb", "cost_opt", "gap_percent",
                        "comfort_violations", "best_start"],
                       ((r.horizon, r.index, r.report.cost_vb, r.report.cost_opt,
                         r.report.gap_percent, r.report.comfort_violations, r.oracle.best_start)
                        for r in results), h)
    for r in rows:
        print(f"K={r['horizon']:4d}  Cost_Opt {r['cost_opt_avg']:.3f} ({r['vars_rc']} vars)  "
              f"Cost_VB {r['cost_vb_avg']:.3f} ({r['vars_vb']} vars)  gap {r['gap_percent']:.2f}%")
    return [out / "surrogate.json", f, per]


COMMANDS = {
    "simulate": cmd_simulate,
    "build-vb": cmd_build_vb,
    "validate-soc": cmd_validate_soc,
    "fit-energy": cmd_fit_energy,
    "eval-energy": cmd_eval_energy,
    "dr-commit": cmd_dr_commit,
    "dr-track": cmd_dr_track,
    "dr-oracle": cmd_dr_oracle,
    "dr-batch": cmd_dr_batch,
}


# --------------------------------------------------------------------------
# report


def find_manifests(root: Path) -> list[Path]:
    return sorted(root.rglob("manifest.json")) if root.is_dir() else []


def verify_manifest(path: Path) -> list[str]:
    """Re-run a manifest in a scratch directory; returns mismatching files."""
    man = io.read_manifest(path)
    with tempfile.TemporaryDirectory() as tmp:
        argv = list(man["argv"])
        # strip the original output directory and point the run at the scratch one
        if "--out-dir" in argv:
            i = argv.index("--out-dir")
            del argv[i:i + 2]
        with contextlib.redirect_stdout(io_mod.StringIO()):
            status = run_command(argv + ["--out-dir", tmp], config_override=man["config"],
                                 base_dir=man.get("config_dir"))
        if status != 0:
            return ["<run failed>"]
        bad = []
        for entry in man["files"]:
            f = Path(tmp) / entry["path"]
            if not f.exists() or io.sha256_file(f) != entry["sha256"]:
                bad.append(entry["path"])
        return bad


def cmd_report(args) -> int:
    manifests = find_manifests(args.out_dir)
    if not manifests:
        print(f"no runs found in {args.out_dir}")
        return 0
    failures = 0
    for m in manifests:
        man = io.read_manifest(m)
        line = (f"{m.parent}: {man['command']} seed={man['seed']} "
                f"config={man['config_hash']} files={len(man['files'])}")
        if args.verify:
            bad = verify_manifest(m)
            failures += bool(bad)
            line += "  reproduced" if not bad else f"  MISMATCH {bad}"
        print(line)
        summary = m.parent / "summary.csv"
        if summary.exists():
            header, data = io.read_csv(summary)
            for row in data:
                print("   " + ", ".join(f"{c}={v:.4g}" for c, v in zip(header, row)))
    return 1 if failures else 0


# --------------------------------------------------------------------------
# driver


def run_command(argv: Optional[Sequence[str]] = None, config_override: Optional[dict] = None,
                base_dir=None) -> int:
    """Execute one subcommand; returns the process exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        return cmd_report(args)

    out = Path(args.out_dir)
    stage = None
    try:
        if config_override is not None:
            raw, cfg_dir = copy.deepcopy(config_override), Path(base_dir or ".")
        else:
            raw, cfg_dir = load_raw_config(args.config)
            raw = apply_overrides(raw, args)
        cfg = config_from_dict(raw, base_dir=cfg_dir,
                               source=str(args.config or default_config_path()))
        out.mkdir(parents=True, exist_ok=True)
        stage = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
        files = COMMANDS[args.command](cfg, args, stage, cfg.config_hash)
        manifest = io.write_manifest(stage, args.command, cfg.config_hash, cfg.seed, files,
                                     argv=argv, config=raw)
        man = json.loads(manifest.read_text())
        man["config_dir"] = str(cfg_dir)
        manifest.write_text(json.dumps(man, indent=1, sort_keys=True) + "\n")
        for f in stage.iterdir():
            shutil.move(str(f), out / f.name)
        return 0
    except (ConfigError, ParameterError, CommandError, dr.CommitmentError, ValueError,
            FileNotFoundError) as exc:
        print(f"vbflex {args.command}: error: {exc}", file=sys.stderr)
        return 2
    finally:
        if stage is not None and stage.exists():
            shutil.rmtree(stage, ignore_errors=True)


def main() -> None:
    sys.exit(run_command())


if __name__ == "__main__":
    main()
