"""Files written by runs and sweeps.

Layout under the output directory:

* ``traces/<scheme>[_<axis>-<value>]_seed<seed>.csv``: decimated per-frame traces;
* ``runs/<same stem>.json``: run summary and final parameters;
* ``sweep_table.csv``: one row per sweep value, seed-averaged delay per scheme;
* ``curves/delay_<column>.dat``: two-column (sweep value, delay) files;
* ``curves/increment_<stem>.dat``: two-column (frame, mean increment norm) files;
* ``manifest.json``: config hash, seeds, versions, summary window and file digests.

Nothing time-dependent is written, so files depend only on (config, seed).
"""
from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import pydantic
import scipy

from .. import __version__
from ..engine import BACKEND
from ..learning import write_trace_rows
from ..metrics import INC_BIN
from .config import ExperimentConfig, config_hash, emit_config
from .experiment import TABLE_COLUMNS, SchemeRun, SweepResult

__all__ = ["OutputError", "emit_outputs", "write_run", "write_sweep_table", "write_manifest", "versions"]


class OutputError(OSError):
    """File could not be written; ``path`` names it."""

    def __init__(self, path: Path, message: str):
        self.path = Path(path)
        super().__init__(f"{path}: {message}")


def versions() -> dict:
    return {"greenqueue": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "pydantic": pydantic.VERSION}


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _stem(run: SchemeRun) -> str:
    point = "" if run.axis is None or run.value is None else f"_{run.axis}-{_fmt(run.value)}"
    return f"{run.scheme}{point}_seed{run.seed}"


def _write_text(path: Path, text: str) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as err:
        raise OutputError(path, err.strerror or str(err)) from None


def _write_rows(path: Path, header: list, rows: list, delimiter: str = ",") -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
            if header:
                w.writerow(header)
            for r in rows:
                w.writerow([_fmt(x) for x in r])
    except OSError as err:
        raise OutputError(path, err.strerror or str(err)) from None


def _json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_run(run: SchemeRun, directory: str | Path, K: int) -> list[Path]:
    """Trace CSV, run summary JSON and increment curve of one run."""
    out = Path(directory)
    stem = _stem(run)
    trace = out / "traces" / f"{stem}.csv"
    try:
        trace.parent.mkdir(parents=True, exist_ok=True)
        exchange = "posg" if run.scheme == "posg" else "pomdp"
        write_trace_rows(trace, run.trace_rows, K, exchange, scheme=run.scheme)
    except OSError as err:
        raise OutputError(trace, err.strerror or str(err)) from None
    summary = out / "runs" / f"{stem}.json"
    _write_text(summary, _json({"scheme": run.scheme, "seed": run.seed, "axis": run.axis,
                                "value": run.value, "summary": run.summary, "params": run.params}))
    files = [trace, summary]
    if run.scheme in ("pomdp", "posg") and run.inc_bins.size:
        curve = out / "curves" / f"increment_{stem}.dat"
        frames = (np.arange(run.inc_bins.size) + 1) * INC_BIN
        _write_rows(curve, [], list(zip(frames, run.inc_bins / INC_BIN)), delimiter=" ")
        files.append(curve)
    return files


def write_sweep_table(sweep: SweepResult, directory: str | Path) -> list[Path]:
    """Sweep table plus one two-column delay curve per scheme that ran."""
    out = Path(directory)
    header, rows = sweep.table()
    table = out / "sweep_table.csv"
    _write_rows(table, header, rows)
    files = [table]
    for j, (scheme, col) in enumerate(TABLE_COLUMNS.items(), start=1):
        if scheme not in sweep.schemes or not rows:
            continue
        curve = out / "curves" / f"delay_{col}.dat"
        _write_rows(curve, [], [[r[0], r[j]] for r in rows], delimiter=" ")
        files.append(curve)
    return files


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: ExperimentConfig, directory: str | Path, files: list[Path], seeds: list[int]) -> Path:
    """Machine-readable record of what produced the files in ``directory``."""
    out = Path(directory)
    manifest = {
        "config_hash": config_hash(cfg),
        "schema_version": cfg.schema_version,
        "seeds": list(seeds),
        "versions": versions(),
        "backend": BACKEND,
        "summary_window": {"fraction": cfg.run.summary_fraction, "frames": cfg.run.frames,
                           "first_frame": int(np.floor(cfg.run.frames * (1 - cfg.run.summary_fraction))) + 1},
        "delay_definition": "mean data queue (packets) / arrival rate, over the summary window",
        "files": {str(p.relative_to(out)): _digest(p) for p in sorted(files)},
    }
    path = out / "manifest.json"
    _write_text(path, _json(manifest))
    return path


def emit_outputs(result: SchemeRun | SweepResult, cfg: ExperimentConfig, directory: str | Path | None = None) -> list[Path]:
    """Write every output file of a run or sweep; returns the paths written."""
    out = Path(directory or cfg.output.directory)
    K = cfg.system.users
    files: list[Path] = []
    config_copy = out / "config.yaml"
    _write_text(config_copy, emit_config(cfg))
    files.append(config_copy)
    if isinstance(result, SchemeRun):
        files += write_run(result, out, K)
        seeds = [result.seed]
    else:
        for run in result.runs:
            files += write_run(run, out, K)
        files += write_sweep_table(result, out)
        seeds = result.seeds
    files.append(write_manifest(cfg, out, files, seeds))
    return files
