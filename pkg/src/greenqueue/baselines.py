"""Reference controllers that ignore the data queue.

All three maximise the transmitter's own interference-free rate in the
current frame, trading AC power against rate with a per-user price ``nu``:

* ``orthogonal-tdma``: one user per frame (round robin) transmits, the rest idle;
* ``csi-eqsi-only``: every user picks its best pair from fading and battery level;
* ``greedy``: the renewable level is the largest the battery allows and only
  the AC level is chosen by the price rule.

``nu`` is tuned by bisection on a pilot run so the long-run AC draw meets the
budget, and the final rule randomises between the two decisions adjacent to
the crossing so the average lands on the budget rather than next to it.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .engine import Controller, LearnerSettings, Simulation
from .learning import RunResult, delay_scale
from .metrics import MetricsCollector
from .model import Action, LocalState, Network
from .policy import LocalStateIndexer, feasibility_mask

__all__ = ["BASELINE_KINDS", "BaselinePolicy", "own_rate", "baseline_action", "calibrate_baseline",
           "run_baseline"]

BASELINE_KINDS = ("orthogonal-tdma", "csi-eqsi-only", "greedy")


def own_rate(network: Network, k: int, csi_bin: int, total_power: np.ndarray) -> np.ndarray:
    """Interference-free rate (bit/s) of user k at the given total powers."""
    ch = network.channel
    tot = np.asarray(total_power, dtype=float)
    tx = np.where(tot > 0, np.maximum(tot - network.p_cct, 0.0), 0.0)
    snr = ch.xi * tx * ch.pathloss[k, k] * ch.fading_levels[csi_bin] / ch.noise_power
    return ch.bandwidth * np.log2(1.0 + snr)


def _candidates(kind: str, network: Network, energy_q: int) -> np.ndarray:
    """Actions the rule may choose from at this battery level."""
    grid = network.grid
    mask = feasibility_mask(energy_q, network.drain_units, network.circuit_ok)
    if kind == "greedy":
        renew_ok = network.drain_units <= energy_q
        top = grid.renew[renew_ok].max()
        mask &= grid.renew == top
        if not mask.any():
            # the top renewable level alone cannot cover the circuit; fall back to the feasible set
            mask = feasibility_mask(energy_q, network.drain_units, network.circuit_ok)
    return np.flatnonzero(mask)


def baseline_action(kind: str, state: LocalState, slot_owner: int | None, network: Network,
                    nu: float, k: int = 0) -> Action:
    """Deterministic decision of user k at price ``nu`` (W of AC costs ``nu`` bit/s each).

    Ties go to the lower AC level, then the lower renewable level.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline {kind!r}")
    grid = network.grid
    if kind == "orthogonal-tdma":
        if slot_owner is None:
            raise ValueError("orthogonal-tdma needs a slot owner")
        if slot_owner != k:
            return grid.action(grid.zero_action)
    cand = _candidates(kind, network, state.energy_q)
    val = own_rate(network, k, state.own_csi, grid.total[cand]) - nu * grid.ac[cand]
    best = cand[np.flatnonzero(val >= val.max() - 1e-9 * max(1.0, abs(val.max())))]
    # candidates are in (ac, renew) order, so the first is the lowest AC then renewable
    return grid.action(int(best[0]))


@dataclass
class BaselinePolicy:
    """Calibrated randomised rule: per user, decision at ``nu_hi`` with probability ``rho``
    and at ``nu_lo`` otherwise (``nu_hi <= nu_lo``)."""

    kind: str
    nu_hi: np.ndarray
    nu_lo: np.ndarray
    rho: np.ndarray
    target: np.ndarray
    pilot_ac: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reachable: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def table(self, network: Network) -> Controller:
        """Probability table indexed by (fading bin, battery level)."""
        return _table(self.kind, network, self.nu_hi, self.nu_lo, self.rho)

    def describe(self) -> dict:
        return {"kind": self.kind, "nu_hi": self.nu_hi.tolist(), "nu_lo": self.nu_lo.tolist(),
                "rho": self.rho.tolist(), "target": self.target.tolist(),
                "pilot_ac_power": self.pilot_ac.tolist(), "reachable": self.reachable.tolist(),
                "rule": "myopic own-rate maximisation with AC price, randomised at the budget crossing"}


def _indexer(network: Network) -> LocalStateIndexer:
    qmax = int(network.queue_cap.max())
    emax = int(network.energy.capacity_units.max())
    return LocalStateIndexer(network.channel.n_bins, np.zeros(qmax + 1, dtype=np.int64), np.arange(emax + 1))


def _decision_grid(kind: str, network: Network, k: int, nu: float) -> np.ndarray:
    """Action index for every (fading bin, battery level) row."""
    B = network.channel.n_bins
    emax = int(network.energy.capacity_units.max())
    top = int(network.drain_units.max())
    out = np.zeros((B, emax + 1), dtype=np.int64)
    for b in range(B):
        # the decision only depends on the battery through which renewable levels fit
        cache = {}
        for e in range(emax + 1):
            key = min(e, top)
            if key not in cache:
                cache[key] = baseline_action(kind, LocalState(b, 0, e), k, network, nu, k).index
            out[b, e] = cache[key]
    return out


def _table(kind: str, network: Network, nu_hi, nu_lo, rho) -> Controller:
    idx = _indexer(network)
    A = network.grid.n_actions
    K = network.K
    theta = np.zeros((K, idx.n_rows * A))
    for k in range(K):
        d_hi = _decision_grid(kind, network, k, float(nu_hi[k])).ravel()
        d_lo = _decision_grid(kind, network, k, float(nu_lo[k])).ravel()
        tab = np.zeros((idx.n_rows, A))
        rows = np.arange(idx.n_rows)
        tab[rows, d_lo] += 1.0 - rho[k]
        tab[rows, d_hi] += rho[k]
        theta[k] = tab.ravel()
    return Controller("table", theta, idx, tdma=(kind == "orthogonal-tdma"))


def _breakpoints(kind: str, network: Network, k: int) -> np.ndarray:
    """Prices at which some decision of user k can change, plus a bracket around them."""
    grid = network.grid
    pts = set()
    top = int(network.drain_units.max())
    for b in range(network.channel.n_bins):
        for e in range(top + 1):
            cand = _candidates(kind, network, e)
            r = own_rate(network, k, b, grid.total[cand])
            ac = grid.ac[cand]
            for i in range(cand.size):
                for j in range(cand.size):
                    if ac[i] > ac[j] and r[i] > r[j]:
                        pts.add(float((r[i] - r[j]) / (ac[i] - ac[j])))
    pts = np.array(sorted(pts)) if pts else np.array([1.0])
    mids = (pts[:-1] + pts[1:]) / 2.0
    lo = pts[0] / 2.0
    hi = pts[-1] * 2.0 + 1.0
    return np.concatenate([[lo], mids, [hi]])


def _pilot_ac(kind: str, network: Network, nus: np.ndarray, frames: int, seed: int, init_e) -> np.ndarray:
    ctl = _table(kind, network, nus, nus, np.ones(network.K))
    sim = Simulation(network, ctl, seed=seed, init_e=init_e)
    col = MetricsCollector(network, frames, summary_fraction=0.8)
    sim.run(frames, [col])
    return col.result().ac_power


def calibrate_baseline(kind: str, network: Network, p0, pilot_frames: int = 20_000, seed: int = 0,
                       init_e=None) -> BaselinePolicy:
    """Bisection over the price breakpoints, per user, on a pilot run.

    Users are calibrated in parallel: a user's AC draw does not depend on
    the other users' prices, since the rule ignores interference.
    """
    if kind not in BASELINE_KINDS:
        raise ValueError(f"unknown baseline {kind!r}")
    K = network.K
    p0 = np.broadcast_to(np.asarray(p0, dtype=float), (K,)).copy()
    grids = [_breakpoints(kind, network, k) for k in range(K)]
    lo = np.zeros(K, dtype=np.int64)  # index with AC >= target (cheap price)
    hi = np.array([g.size - 1 for g in grids])  # index with AC <= target (dear price)
    nus = lambda ix: np.array([grids[k][ix[k]] for k in range(K)])  # noqa: E731
    ac_lo = _pilot_ac(kind, network, nus(lo), pilot_frames, seed, init_e)
    ac_hi = _pilot_ac(kind, network, nus(hi), pilot_frames, seed, init_e)
    reachable = ac_lo >= p0
    while np.any(hi - lo > 1):
        mid = np.where(hi - lo > 1, (lo + hi) // 2, lo)
        ac_mid = _pilot_ac(kind, network, nus(mid), pilot_frames, seed, init_e)
        move = hi - lo > 1
        up = move & (ac_mid >= p0)
        down = move & (ac_mid < p0)
        lo = np.where(up, mid, lo)
        ac_lo = np.where(up, ac_mid, ac_lo)
        hi = np.where(down, mid, hi)
        ac_hi = np.where(down, ac_mid, ac_hi)
    rho = np.ones(K)
    for k in range(K):
        if not reachable[k]:
            rho[k] = 1.0  # budget out of reach: spend as much AC as the rule ever does
        elif ac_hi[k] >= p0[k]:
            rho[k] = 0.0  # even the dearest price meets the budget
        elif ac_lo[k] > ac_hi[k]:
            rho[k] = (p0[k] - ac_hi[k]) / (ac_lo[k] - ac_hi[k])
    nu_hi = nus(lo)
    nu_lo = nus(hi)
    pilot = np.where(reachable, rho * ac_lo + (1 - rho) * ac_hi, ac_lo)
    return BaselinePolicy(kind, nu_hi, nu_lo, rho, p0, pilot, reachable)


def run_baseline(kind: str, network: Network, p0, frames: int, seed: int = 0, pilot_frames: int = 20_000,
                 policy: BaselinePolicy | None = None, decimate: int = 0, init_e=None,
                 summary_fraction: float = 0.2) -> tuple[RunResult, BaselinePolicy]:
    """Calibrate (unless ``policy`` is given) and run one baseline; no learning happens."""
    start = time.perf_counter()
    if policy is None:
        # pilot on its own stream so the evaluation path is not the one the price was fit to
        policy = calibrate_baseline(kind, network, p0, pilot_frames, seed=seed + 7919, init_e=init_e)
    ctl = policy.table(network)
    # stage utility recorded on the learners' scale: delay in seconds, no multiplier
    record = LearnerSettings(kind="none", beta=1.0, p0=policy.target, f_scale=delay_scale(network))
    sim = Simulation(network, ctl, record, seed=seed, init_e=init_e)
    col = MetricsCollector(network, frames, decimate=decimate, summary_fraction=summary_fraction)
    sim.run(frames, [col])
    m = col.result()
    m.wall_clock = time.perf_counter() - start
    return RunResult(m, ctl, sim.gamma.copy(), sim.lbar.copy(), frames, seed), policy

