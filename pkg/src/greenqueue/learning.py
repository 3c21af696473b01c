"""Two-timescale online policy-gradient learners.

Each transmitter keeps its policy parameters, a Lagrange multiplier for its
average AC-power budget, an eligibility trace that is reset whenever every
user sits at its reference (Q, E) point, and a running average of the
learning signal.  The cooperative learner drives every user with the sum of
all users' stage utilities; the non-cooperative one uses only the user's own.

``pomdp_update``/``posg_update`` are the readable single-user reference; the
simulation loop in :mod:`greenqueue.engine` runs the same recursion in bulk.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .engine import Controller, LearnerSettings, Simulation
from .metrics import MetricsCollector, RunMetrics
from .model import Action, LocalState, Network
from .policy import LOGIT_CLAMP, PolicyParams, score_function

__all__ = [
    "StepSchedule",
    "step_sizes",
    "per_stage_utility",
    "delay_scale",
    "LearnerState",
    "pomdp_update",
    "posg_update",
    "RunResult",
    "run_pomdp",
    "run_posg",
    "run_learner",
    "write_trace_csv",
    "write_trace_rows",
]


@dataclass(frozen=True)
class StepSchedule:
    """Fast step ``a0 / (t+o)^(2/3)`` for the policy, slow step ``b0 / (t+o)`` for the multiplier.

    The offset ``o`` (default 0) damps the first frames without changing
    the decay rates.
    """

    a0: float = 1.0
    b0: float = 1.0
    offset: int = 0

    def __post_init__(self):
        if self.offset < 0:
            raise ValueError("step offset must be non-negative")

    def __call__(self, t: int) -> tuple[float, float]:
        if t < 1:
            raise ValueError("frame counter starts at 1")
        u = float(t + self.offset)
        return self.a0 / math.pow(u, 2.0 / 3.0), self.b0 / u


def step_sizes(t: int, a0: float = 1.0, b0: float = 1.0, offset: int = 0) -> tuple[float, float]:
    return StepSchedule(a0, b0, offset)(t)


def delay_scale(network: Network) -> np.ndarray:
    """Per-user factor turning queue units into a Little's-law delay (s).

    With no traffic the queue length in packets is used as is.
    """
    lam = network.traffic.arrival_rate
    ppu = network.traffic.packets_per_unit
    return np.where(lam > 0, ppu / np.where(lam > 0, lam, 1.0), ppu)


def per_stage_utility(q: float, action: Action | float, gamma: float, beta: float, p0: float,
                      f_kind: str = "delay", lam: float = 1.0, threshold: int = 1) -> float:
    """``beta * f(q) + gamma * (P_ac - p0)``.

    ``delay``: f(q) = q / lam (q in packets).  ``outage``: f(q) = 1{q >= threshold}.
    """
    ac = action.ac_power if isinstance(action, Action) else float(action)
    if f_kind == "delay":
        f = q / lam if lam > 0 else float(q)
    elif f_kind == "outage":
        f = 1.0 if q >= threshold else 0.0
    else:
        raise ValueError(f"unknown utility kind {f_kind!r}")
    return beta * f + gamma * (ac - p0)


@dataclass(frozen=True)
class LearnerState:
    """One user's learning variables after ``frame - 1`` updates."""

    params: PolicyParams
    lm: float
    trace: np.ndarray
    running_avg: float
    frame: int = 1
    schedule: StepSchedule = StepSchedule()

    @classmethod
    def initial(cls, params: PolicyParams, schedule: StepSchedule = StepSchedule(), lm: float = 0.0) -> "LearnerState":
        return cls(params, float(lm), np.zeros_like(params.values), float("nan"), 1, schedule)


def _update(learner: LearnerState, obs: LocalState, action: Action, signal: float, zeta: bool,
            mask: np.ndarray, p0: float, z_max: float, clamp: float, learn_lm: bool,
            frozen: bool) -> LearnerState:
    score = score_function(learner.params, obs, action, mask, strict=True)
    z = score.copy() if zeta else learner.trace + score
    if z_max > 0:
        nz = float(np.sqrt(np.sum(z * z)))
        if nz > z_max:
            z = z * (z_max / nz)
    if frozen:
        return replace(learner, trace=z, frame=learner.frame + 1)
    a, b = learner.schedule(learner.frame)
    avg = signal if np.isnan(learner.running_avg) else learner.running_avg
    step = a * (signal - avg)
    theta = np.clip(learner.params.values - step * z, -clamp, clamp)
    lm = learner.lm
    if learn_lm:
        lm = max(lm + b * (action.ac_power - p0), 0.0)
    avg = avg + a * (signal - avg)
    return LearnerState(learner.params.with_values(theta), lm, z, avg, learner.frame + 1, learner.schedule)


def pomdp_update(learner: LearnerState, obs: LocalState, action: Action, g_total: float, zeta: bool,
                 mask: np.ndarray, p0: float, *, z_max: float = 0.0, clamp: float = LOGIT_CLAMP,
                 learn_lm: bool = True, frozen: bool = False) -> LearnerState:
    """Cooperative update of one user, driven by the summed stage utility.

    Order within the frame: the trace absorbs this frame's score (restarting
    from it when ``zeta``), then the parameters step along the trace, the
    multiplier takes its projected slow step and the running average moves
    toward the signal.  ``frozen`` keeps parameters, multiplier and running
    average fixed and only advances the trace.

    Raises :class:`ZeroProbabilityAction` when ``action`` could not have been
    sampled at ``obs``.
    """
    return _update(learner, obs, action, g_total, zeta, mask, p0, z_max, clamp, learn_lm, frozen)


def posg_update(learner: LearnerState, obs: LocalState, action: Action, own_utility: float, zeta: bool,
                mask: np.ndarray, p0: float, *, z_max: float = 0.0, clamp: float = LOGIT_CLAMP,
                learn_lm: bool = True, frozen: bool = False) -> LearnerState:
    """Non-cooperative update: same recursion, private stage utility only."""
    return _update(learner, obs, action, own_utility, zeta, mask, p0, z_max, clamp, learn_lm, frozen)


@dataclass
class RunResult:
    """Outcome of a learning or baseline run."""

    metrics: RunMetrics
    controller: Controller
    gamma: np.ndarray
    lbar: np.ndarray
    frames: int
    seed: int


def run_learner(network: Network, controller: Controller, settings: LearnerSettings, frames: int,
                seed: int = 0, decimate: int = 0, occupancy: bool = False, chunk: int = 65536,
                init_q=None, init_e=None, gamma0=0.0, backend: str | None = None,
                summary_fraction: float = 0.2) -> RunResult:
    """Run ``frames`` frames of online learning (or a fixed policy for kind ``none``)."""
    if frames < 1:
        raise ValueError("frames must be positive")
    start = time.perf_counter()
    sim = Simulation(network, controller, settings, seed=seed, init_q=init_q, init_e=init_e,
                     gamma0=gamma0, backend=backend)
    col = MetricsCollector(network, frames, decimate=decimate, occupancy=occupancy,
                           summary_fraction=summary_fraction)
    sim.run(frames, [col], chunk=chunk)
    m = col.result()
    m.wall_clock = time.perf_counter() - start
    return RunResult(m, sim.controller, sim.gamma.copy(), sim.lbar.copy(), frames, seed)


def run_pomdp(network: Network, controller: Controller, settings: LearnerSettings, frames: int,
              seed: int = 0, **kw) -> RunResult:
    """Cooperative learning: every user is driven by the sum of stage utilities."""
    return run_learner(network, controller, replace(settings, kind="pomdp"), frames, seed, **kw)


def run_posg(network: Network, controller: Controller, settings: LearnerSettings, frames: int,
             seed: int = 0, **kw) -> RunResult:
    """Non-cooperative learning: each user is driven by its own stage utility."""
    return run_learner(network, controller, replace(settings, kind="posg"), frames, seed, **kw)


def write_trace_csv(path: str | Path, metrics: RunMetrics, exchange: str = "pomdp",
                    scheme: str | None = None) -> None:
    """Decimated per-frame learning trace of a run (see :func:`write_trace_rows`)."""
    write_trace_rows(path, metrics.trace.get("rows"), metrics.trace.get("K", len(metrics.gamma)),
                     exchange, scheme)


def write_trace_rows(path: str | Path, rows: np.ndarray | None, K: int, exchange: str = "pomdp",
                     scheme: str | None = None) -> None:
    """Write trace rows as CSV.

    Columns: frame, then per user Q, E, action, stage utility, multiplier,
    running average, and the joint reference indicator.  The non-cooperative
    schema omits the utility column since only the indicator is exchanged.
    A ``scheme`` tag, when given, is written as a leading column.
    """
    names = ["q", "e", "action", "g", "gamma", "lbar"]
    header = ["frame"] + [f"{n}_{k}" for n in names for k in range(K)] + ["zeta"]
    keep = list(range(len(header)))
    if exchange == "posg":
        drop = {header.index(f"g_{k}") for k in range(K)}
        keep = [i for i in keep if i not in drop]
    ints = {"frame", "zeta"} | {f"{n}_{k}" for n in ("q", "e", "action") for k in range(K)}
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        tag = [] if scheme is None else [scheme]
        w.writerow((["scheme"] if scheme is not None else []) + [header[i] for i in keep])
        if rows is None:
            return
        for r in rows:
            w.writerow(tag + [str(int(r[i])) if header[i] in ints else repr(float(r[i])) for i in keep])
