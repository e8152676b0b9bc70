"""
Reproducible command-line runs
==============================

Every command writes CSV files plus a manifest holding the full config, the
seed and a checksum per file. ``report --verify`` replays each manifest in a
scratch directory and compares the bytes.
"""

from __future__ import annotations

import tempfile
from pathlib import Path

from vbflex.cli import run_command

with tempfile.TemporaryDirectory() as tmp:
    out = Path(tmp)
    run_command(["simulate", "--horizon", "48", "--policy", "greedy", "--out-dir", str(out / "sim")])
    run_command(["validate-soc", "--horizon", "96", "--out-dir", str(out / "soc")])
    run_command(["dr-batch", "--days", "1", "--scenarios", "2", "--train-days", "20",
                 "--out-dir", str(out / "dr")])

    # %%
    # Replay everything and confirm byte-identical outputs.
    status = run_command(["report", "--verify", "--out-dir", str(out)])
    print("all runs reproduced" if status == 0 else "replay mismatch")
