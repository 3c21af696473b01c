"""Streaming aggregation of frame blocks into run metrics and decimated traces."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import FrameBlock, Simulation
from .model import Network

__all__ = ["RunMetrics", "MetricsCollector", "convergence_frame", "state_codes"]

SUMMARY_FRACTION = 0.2
INC_BIN = 100
CONVERGENCE_WINDOW = 10_000
CONVERGENCE_TOL = 1e-4


def state_codes(network: Network, q: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Mixed-radix code of the joint (Q, E) lattice point of every row."""
    code = np.zeros(q.shape[0], dtype=np.int64)
    for k in range(network.K):
        code = code * (int(network.queue_cap[k]) + 1) + q[:, k]
        code = code * (int(network.energy.capacity_units[k]) + 1) + e[:, k]
    return code


def convergence_frame(inc_bins: np.ndarray, bin_size: int = INC_BIN, window: int = CONVERGENCE_WINDOW,
                      tol: float = CONVERGENCE_TOL) -> int | None:
    """End frame of the first window whose mean increment norm drops below ``tol``.

    ``inc_bins[i]`` is the summed increment norm over frames
    ``[i*bin_size + 1, (i+1)*bin_size]``.
    """
    w = window // bin_size
    if inc_bins.size < w:
        return None
    c = np.concatenate([[0.0], np.cumsum(inc_bins)])
    means = (c[w:] - c[:-w]) / window
    hit = np.flatnonzero(means < tol)
    return None if hit.size == 0 else int((hit[0] + w) * bin_size)


@dataclass
class RunMetrics:
    """Summary of one run; averages are over the final summary window."""

    frames: int
    window_start: int
    delay: np.ndarray  # s, via mean queue / arrival rate
    mean_queue: np.ndarray  # packets
    ac_power: np.ndarray  # W
    renew_power: np.ndarray  # W
    drop_rate: np.ndarray
    avg_cost: np.ndarray  # per-user mean stage utility
    gamma: np.ndarray
    lbar: np.ndarray
    convergence_frame: int | None
    inc_bins: np.ndarray
    trace: dict = field(repr=False)
    occupancy: np.ndarray | None = field(default=None, repr=False)
    ac_power_se: np.ndarray | None = None
    delay_se: np.ndarray | None = None
    violations: int = 0
    wall_clock: float = 0.0

    def summary(self) -> dict:
        """Plain-Python view for reports; wall-clock is left out on purpose."""
        def lst(x):
            return [float(v) for v in x]
        return {
            "frames": self.frames,
            "window_start": self.window_start,
            "delay": lst(self.delay),
            "mean_queue": lst(self.mean_queue),
            "ac_power": lst(self.ac_power),
            "renew_power": lst(self.renew_power),
            "drop_rate": lst(self.drop_rate),
            "avg_cost": lst(self.avg_cost),
            "gamma": lst(self.gamma),
            "lbar": lst(self.lbar),
            "convergence_frame": self.convergence_frame,
            "violations": self.violations,
        }


class MetricsCollector:
    """Observer for :meth:`Simulation.run` that keeps O(1)-memory summaries.

    Window averages cover frames ``window_start .. frames``; batch means over
    ``n_batches`` equal slices of the window give rough standard errors.
    """

    def __init__(self, network: Network, frames: int, decimate: int = 0, occupancy: bool = False,
                 summary_fraction: float = SUMMARY_FRACTION, n_batches: int = 20):
        self.network = network
        self.frames = int(frames)
        self.window_start = int(np.floor(frames * (1.0 - summary_fraction))) + 1
        self.decimate = int(decimate)
        K = network.K
        ppu = network.traffic.packets_per_unit
        self._ppu = ppu
        self._ac = network.grid.ac
        self._re = network.grid.renew
        self._n_batches = n_batches
        n_win = self.frames - self.window_start + 1
        self._batch_len = max(n_win // n_batches, 1)
        self._sums = {k: np.zeros(K) for k in ("q", "ac", "re", "drop", "arr", "g")}
        self._n = 0
        self._batch_q = np.zeros((n_batches + 1, K))
        self._batch_ac = np.zeros((n_batches + 1, K))
        self._batch_n = np.zeros(n_batches + 1)
        self._inc_bins: list[float] = []
        self._inc_partial = 0.0
        self._inc_count = 0
        self._rows: list[np.ndarray] = []
        self._occ = None
        if occupancy:
            size = 1
            for k in range(K):
                size *= (int(network.queue_cap[k]) + 1) * (int(network.energy.capacity_units[k]) + 1)
            self._occ = np.zeros(size, dtype=np.int64)
        self.gamma = np.zeros(K)
        self.lbar = np.zeros(K)

    def __call__(self, sim: Simulation, block: FrameBlock) -> None:
        n = block.n
        t = block.t0 + np.arange(n)
        self._bin_increments(block.inc)
        if self.decimate > 0:
            sel = np.flatnonzero((t - 1) % self.decimate == 0)
            if sel.size:
                self._rows.append(np.column_stack([
                    t[sel], block.q[sel], block.e[sel], block.action[sel], block.g[sel],
                    block.gamma[sel], block.lbar[sel], block.zeta[sel]]))
        self.gamma = sim.gamma.copy()
        self.lbar = sim.lbar.copy()
        lo = max(self.window_start - block.t0, 0)
        if lo >= n:
            return
        sl = slice(lo, n)
        q = block.q[sl] * self._ppu
        ac = self._ac[block.action[sl]]
        self._sums["q"] += q.sum(axis=0)
        self._sums["ac"] += ac.sum(axis=0)
        self._sums["re"] += self._re[block.action[sl]].sum(axis=0)
        self._sums["drop"] += block.drop[sl].sum(axis=0)
        self._sums["arr"] += block.arrivals[sl].sum(axis=0)
        self._sums["g"] += block.g[sl].sum(axis=0)
        self._n += n - lo
        b = np.minimum((t[sl] - self.window_start) // self._batch_len, self._n_batches)
        for k in range(q.shape[1]):
            self._batch_q[:, k] += np.bincount(b, weights=q[:, k], minlength=self._n_batches + 1)
            self._batch_ac[:, k] += np.bincount(b, weights=ac[:, k], minlength=self._n_batches + 1)
        self._batch_n += np.bincount(b, minlength=self._n_batches + 1)
        if self._occ is not None:
            codes = state_codes(self.network, block.q[sl], block.e[sl])
            self._occ += np.bincount(codes, minlength=self._occ.size)

    def _bin_increments(self, inc: np.ndarray) -> None:
        i = 0
        n = inc.size
        while i < n:
            take = min(INC_BIN - self._inc_count, n - i)
            self._inc_partial += float(inc[i:i + take].sum())
            self._inc_count += take
            i += take
            if self._inc_count == INC_BIN:
                self._inc_bins.append(self._inc_partial)
                self._inc_partial = 0.0
                self._inc_count = 0

    def _batch_se(self, sums: np.ndarray) -> np.ndarray:
        full = self._batch_n[: self._n_batches] > 0
        means = sums[: self._n_batches][full] / self._batch_n[: self._n_batches][full, None]
        if means.shape[0] < 2:
            return np.full(sums.shape[1], np.nan)
        return means.std(axis=0, ddof=1) / np.sqrt(means.shape[0])

    def result(self) -> RunMetrics:
        net = self.network
        n = max(self._n, 1)
        lam = net.traffic.arrival_rate
        mean_q = self._sums["q"] / n
        with np.errstate(divide="ignore", invalid="ignore"):
            delay = np.where(lam > 0, mean_q / np.where(lam > 0, lam, 1.0), 0.0)
            drop = np.where(self._sums["arr"] > 0, self._sums["drop"] / np.maximum(self._sums["arr"], 1), 0.0)
        se_q = self._batch_se(self._batch_q)
        delay_se = np.where(lam > 0, se_q / np.where(lam > 0, lam, 1.0), 0.0)
        inc = np.asarray(self._inc_bins)
        trace = {}
        if self._rows:
            rows = np.concatenate(self._rows)
            trace = {"rows": rows, "K": net.K}
        return RunMetrics(
            frames=self.frames, window_start=self.window_start, delay=delay, mean_queue=mean_q,
            ac_power=self._sums["ac"] / n, renew_power=self._sums["re"] / n, drop_rate=drop,
            avg_cost=self._sums["g"] / n, gamma=self.gamma, lbar=self.lbar,
            convergence_frame=convergence_frame(inc), inc_bins=inc, trace=trace,
            occupancy=None if self._occ is None else self._occ / max(self._occ.sum(), 1),
            ac_power_se=self._batch_se(self._batch_ac), delay_se=delay_se,
        )
