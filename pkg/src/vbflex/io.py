"""CSV artifacts and run manifests.

Every CSV written here starts with a ``# config_hash=...`` comment line
followed by the header row. Floats are written with ``repr`` so that
re-running a manifest reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .thermal import ExogenousSeries, Trajectory


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        if np.isnan(value):
            return ""
        return repr(float(value))
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], config_hash: str = "") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        fh.write(f"# config_hash={config_hash}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    """Header and float table of a CSV, skipping ``#`` comment lines."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    reader = csv.reader(lines)
    header = next(reader)
    data = [[float(x) if x != "" else np.nan for x in row] for row in reader]
    return header, np.array(data, dtype=float).reshape(len(data), len(header))


def read_rows(path) -> tuple[list[str], list[dict]]:
    """Header and rows as string dictionaries, for tables with text columns."""
    with Path(path).open() as fh:
        lines = [ln for ln in fh if not ln.startswith("#") and ln.strip()]
    reader = csv.DictReader(lines)
    return list(reader.fieldnames or []), list(reader)


def read_exo_csv(path) -> ExogenousSeries:
    """Exogenous series from ``k,T_out,Q_dist_1..Q_dist_n``."""
    header, data = read_csv(path)
    if header[:2] != ["k", "T_out"] or not all(h.startswith("Q_dist_") for h in header[2:]):
        raise ValueError(f"{path}: expected header k,T_out,Q_dist_1..Q_dist_n, got {header}")
    return ExogenousSeries(data[:, 1], data[:, 2:].T)


def write_exo_csv(path, exo: ExogenousSeries, config_hash: str = "") -> Path:
    header = ["k", "T_out"] + [f"Q_dist_{i + 1}" for i in range(exo.n_zones)]
    rows = ([k, exo.T_out[k], *exo.Q_dist[:, k]] for k in range(exo.K))
    return write_csv(path, header, rows, config_hash)


def read_tariff_csv(path) -> np.ndarray:
    header, data = read_csv(path)
    if header != ["k", "price"]:
        raise ValueError(f"{path}: expected header k,price, got {header}")
    price = data[:, 1]
    if np.any(price < 0):
        raise ValueError(f"{path}: negative prices")
    return price


def write_tariff_csv(path, price, config_hash: str = "") -> Path:
    return write_csv(path, ["k", "price"], ((k, p) for k, p in enumerate(price)), config_hash)


def write_trajectory_csv(path, traj: Trajectory, config_hash: str = "") -> Path:
    """One row per step ``0..K``; the last row carries only the final state."""
    n, K = traj.m.shape
    header = ["k"] + [f"T_{i + 1}" for i in range(n)] + [f"m_{i + 1}" for i in range(n)]
    header += [f"q_{i + 1}" for i in range(n)] + ["Q", "Q_tol"]
    if traj.soz is not None:
        header += [f"soz_{i + 1}" for i in range(n)] + ["soc"]
    Q = traj.Q

    def rows():
        for k in range(K + 1):
            last = k == K
            row = [k, *traj.T[:, k]]
            row += [None] * n if last else list(traj.m[:, k])
            row += [None] * n if last else list(traj.q[:, k])
            row += [None, None] if last else [Q[k], traj.Q_tol[k]]
            if traj.soz is not None:
                row += [*traj.soz[:, k], traj.soc[k]]
            yield row

    return write_csv(path, header, rows(), config_hash)


def read_trajectory_csv(path) -> Trajectory:
    header, data = read_csv(path)
    n = sum(h.startswith("T_") and h[2:].isdigit() for h in header)
    cols = {h: i for i, h in enumerate(header)}

    def block(prefix, rows=slice(None)):
        return data[rows, [cols[f"{prefix}_{i + 1}"] for i in range(n)]].T

    T = block("T")
    m = block("m", slice(0, -1))
    q = block("q", slice(0, -1))
    Q_tol = data[:-1, cols["Q_tol"]]
    soz = block("soz") if "soz_1" in cols else None
    soc = data[:, cols["soc"]] if "soc" in cols else None
    return Trajectory(T, m, q, Q_tol, np.full(m.shape[1], np.nan), soz, soc)


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir, command: str, config_hash: str, seed: Optional[int],
                   files: Sequence, argv: Sequence[str] = (), config: Optional[dict] = None) -> Path:
    """``manifest.json`` with the config hash, seed and per-file checksums."""
    out_dir = Path(out_dir)
    entries = []
    for f in files:
        f = Path(f)
        entries.append({"path": str(f.relative_to(out_dir)), "sha256": sha256_file(f)})
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "version": __version__,
        "argv": list(argv),
        "config": config,
        "files": entries,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def read_manifest(path) -> dict:
    return json.loads(Path(path).read_text())
