"""Single runs and parameter sweeps over the configured schemes.

A sweep is a set of independent tasks (sweep value, scheme, seed).  Each
task rebuilds its model from the configuration and runs end to end, so
tasks can execute in any order or process; results are put back in the
canonical order before anything is aggregated.
"""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..baselines import run_baseline
from ..learning import run_learner
from .config import (LEARNER_SCHEMES, SCHEMES, ExperimentConfig, build_controller, build_network,
                     learner_settings, p0_vector)

__all__ = ["SchemeRun", "SweepResult", "run_scheme", "run_experiment", "run_sweep", "TABLE_COLUMNS"]

# sweep-table column of each scheme
TABLE_COLUMNS = {"pomdp": "pomdp", "posg": "posg", "orthogonal-tdma": "baseline1",
                 "csi-eqsi-only": "baseline2", "greedy": "baseline3"}


@dataclass
class SchemeRun:
    """Outcome of one scheme at one seed (and sweep value, if any)."""

    scheme: str
    seed: int
    summary: dict
    inc_bins: np.ndarray = field(repr=False)
    trace_rows: np.ndarray | None = field(default=None, repr=False)
    params: dict = field(default_factory=dict)
    axis: str | None = None
    value: float | None = None
    wall_clock: float = 0.0

    @property
    def mean_delay(self) -> float:
        return float(np.mean(self.summary["delay"]))


def run_scheme(cfg: ExperimentConfig, scheme: str | None = None, seed: int | None = None) -> SchemeRun:
    """Run one scheme of ``cfg`` (defaults: ``run.scheme`` and ``run.seed``)."""
    scheme = scheme or cfg.run.scheme
    seed = cfg.run.seed if seed is None else int(seed)
    if scheme not in SCHEMES:
        raise ValueError(f"unknown scheme {scheme!r}")
    net = build_network(cfg)
    run = cfg.run
    if scheme in LEARNER_SCHEMES:
        settings = learner_settings(cfg, net, scheme)
        res = run_learner(net, build_controller(cfg, net), settings, run.frames, seed=seed,
                          decimate=run.decimate, summary_fraction=run.summary_fraction)
        params = {"kind": res.controller.kind, "theta": res.controller.theta.tolist(),
                  "gamma": res.gamma.tolist()}
    else:
        res, policy = run_baseline(scheme, net, p0_vector(cfg), run.frames, seed=seed,
                                   pilot_frames=run.pilot_frames, decimate=run.decimate,
                                   summary_fraction=run.summary_fraction)
        params = policy.describe()
    m = res.metrics
    summary = m.summary()
    summary["delay_se"] = [float(x) for x in m.delay_se]
    summary["ac_power_se"] = [float(x) for x in m.ac_power_se]
    summary["p0"] = p0_vector(cfg).tolist()
    return SchemeRun(scheme, seed, summary, m.inc_bins, m.trace.get("rows"), params,
                     wall_clock=m.wall_clock)


def run_experiment(cfg: ExperimentConfig) -> SchemeRun:
    """The single run described by the ``run`` section."""
    return run_scheme(cfg)


@dataclass
class SweepResult:
    axis: str | None
    values: list
    schemes: list
    seeds: list
    runs: list  # SchemeRun in (value, scheme, seed) order

    def get(self, value, scheme: str) -> list:
        return [r for r in self.runs if r.value == value and r.scheme == scheme]

    def mean_delay(self, value, scheme: str) -> float:
        runs = self.get(value, scheme)
        return float(np.mean([r.mean_delay for r in runs])) if runs else float("nan")

    def table(self) -> tuple[list[str], list[list]]:
        """Header and rows: sweep value, then the seed-averaged mean delay of each scheme."""
        header = [self.axis or "point"] + list(TABLE_COLUMNS.values())
        rows = []
        for v in self.values:
            rows.append([v] + [self.mean_delay(v, s) if s in self.schemes else None for s in TABLE_COLUMNS])
        return header, rows


def _task(args) -> SchemeRun:
    cfg, value, scheme, seed = args
    point = cfg if value is None else cfg.at_sweep_point(value)
    r = run_scheme(point, scheme, seed)
    r.axis, r.value = cfg.sweep.axis, value
    return r


def run_sweep(cfg: ExperimentConfig, workers: int = 1, order: list[int] | None = None) -> SweepResult:
    """Run every (value, scheme, seed) task of the sweep section.

    With no sweep axis the run section is repeated for each scheme and
    seed.  ``order`` permutes the submission order (results do not depend
    on it).
    """
    sw = cfg.sweep
    values = list(sw.values) if sw.axis is not None else [None]
    tasks = [(cfg, v, s, seed) for v in values for s in sw.schemes for seed in sw.seeds]
    idx = list(range(len(tasks))) if order is None else list(order)
    if sorted(idx) != list(range(len(tasks))):
        raise ValueError("order must be a permutation of the task indices")
    workers = max(1, min(int(workers), len(tasks) or 1))
    results: list[SchemeRun | None] = [None] * len(tasks)
    if workers == 1:
        for i in idx:
            results[i] = _task(tasks[i])
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {i: pool.submit(_task, tasks[i]) for i in idx}
            for i, fut in futures.items():
                results[i] = fut.result()
    return SweepResult(sw.axis, [v for v in values if v is not None], list(sw.schemes), list(sw.seeds),
                       results)

