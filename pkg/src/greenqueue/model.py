"""Physical layer, hybrid AC/renewable power accounting and queue dynamics.

Everything here works on a discrete lattice: data queues count ``bits_per_unit``
chunks, energy buffers count ``joules_per_unit`` quanta, and the fading of each
link takes one of a small number of bins.  That keeps the controlled chain
finite, so the exact solver in :mod:`greenqueue.oracle` sees the same state
space as the simulator.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import special, stats

__all__ = [
    "AvailabilityViolation",
    "FiniteDistribution",
    "ChannelModel",
    "TrafficModel",
    "EnergyModel",
    "ActionGrid",
    "Network",
    "GlobalState",
    "LocalState",
    "Action",
    "ExogenousSampler",
    "split_power",
    "compute_rate",
    "compute_rates",
    "service_units",
    "step_data_queue",
    "step_energy_queue",
    "sample_exogenous",
    "make_streams",
    "battery_joules",
]

TAIL_MASS = 1e-6


class AvailabilityViolation(RuntimeError):
    """Renewable draw in a frame exceeded the stored energy."""


@dataclass(frozen=True)
class FiniteDistribution:
    """A probability mass function over a finite, sorted support."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support)
        probs = np.asarray(self.probs, dtype=float)
        if support.ndim != 1 or support.shape != probs.shape or support.size == 0:
            raise ValueError("support and probs must be non-empty 1-D arrays of equal length")
        if np.any(probs < 0):
            raise ValueError("probabilities must be non-negative")
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        if np.any(np.diff(support) <= 0):
            raise ValueError("support must be strictly increasing")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def point(cls, value) -> "FiniteDistribution":
        return cls(np.array([value]), np.array([1.0]))

    @property
    def mean(self) -> float:
        return float(np.dot(self.support, self.probs))

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.probs)
        c[-1] = 1.0
        return c

    def index_of(self, u: np.ndarray) -> np.ndarray:
        """Map uniforms in [0, 1) to support indices by inverse CDF."""
        return np.searchsorted(self.cdf, u, side="right").clip(max=self.support.size - 1)


def _poisson_support(mean: float, tail: float) -> int:
    """Smallest count n with P(N > n) below ``tail`` for N ~ Poisson(mean), at least 2."""
    n = max(int(mean + 10.0 * math.sqrt(mean)) + 2, 2)
    while stats.poisson.sf(n, mean) > tail:
        n *= 2
    return n


def _truncate(pmf: np.ndarray, cap: int | None, tail: float) -> FiniteDistribution:
    """Cut a pmf over 0..len-1 to finite support.

    When the cut lands at or beyond ``cap`` the overflow mass is lumped into
    ``cap``, which is exact for a buffer clipped at ``cap``; otherwise the
    support stops once ``1 - tail`` of the mass is covered and is renormalised.
    """
    cdf = np.cumsum(pmf)
    n_star = int(np.searchsorted(cdf, 1.0 - tail))
    if cap is not None and n_star >= cap:
        out = pmf[: cap + 1].copy()
        out[cap] = max(0.0, 1.0 - pmf[:cap].sum())
    else:
        out = pmf[: n_star + 1].copy()
    out = out / out.sum()
    keep = np.nonzero(out > 0)[0]
    return FiniteDistribution(keep.astype(np.int64), out[keep] / out[keep].sum())


@dataclass(frozen=True)
class ChannelModel:
    """Interference channel: K transmitter/receiver pairs sharing W Hz.

    ``pathloss[k, n]`` is the long-term gain from transmitter n to receiver k.
    Every link fades independently over ``fading_levels`` with
    ``fading_probs`` (shape ``(B,)`` shared by all links, or ``(K, K, B)``).
    """

    K: int
    bandwidth: float
    noise_psd: float
    xi: float
    pathloss: np.ndarray
    fading_levels: np.ndarray
    fading_probs: np.ndarray
    tau: float

    def __post_init__(self):
        L = np.asarray(self.pathloss, dtype=float)
        h = np.asarray(self.fading_levels, dtype=float)
        p = np.asarray(self.fading_probs, dtype=float)
        if L.shape != (self.K, self.K):
            raise ValueError(f"pathloss must be {self.K}x{self.K}")
        if p.ndim == 1:
            p = np.broadcast_to(p, (self.K, self.K, p.size)).copy()
        if p.shape != (self.K, self.K, h.size):
            raise ValueError("fading_probs must have shape (B,) or (K, K, B)")
        if not 0.0 < self.xi <= 1.0:
            raise ValueError("xi must lie in (0, 1]")
        if np.any(L < 0) or np.any(np.diag(L) <= 0):
            raise ValueError("direct-link path loss must be positive, cross links non-negative")
        if np.any(h <= 0):
            raise ValueError("fading levels must be positive")
        if np.any(np.abs(p.sum(axis=-1) - 1.0) > 1e-12):
            raise ValueError("fading probabilities of each link must sum to 1")
        if np.any(np.abs(p @ h - 1.0) > 1e-9):
            raise ValueError("mean fading gain of each link must be 1")
        if self.bandwidth <= 0 or self.noise_psd <= 0 or self.tau <= 0:
            raise ValueError("bandwidth, noise_psd and tau must be positive")
        object.__setattr__(self, "pathloss", L)
        object.__setattr__(self, "fading_levels", h)
        object.__setattr__(self, "fading_probs", p)

    @property
    def n_bins(self) -> int:
        return self.fading_levels.size

    @property
    def noise_power(self) -> float:
        return self.noise_psd * self.bandwidth

    @property
    def eta(self) -> float:
        """Largest cross-to-direct path-loss ratio (coupling strength)."""
        if self.K == 1:
            return 0.0
        ratio = self.pathloss / np.diag(self.pathloss)[:, None]
        np.fill_diagonal(ratio, -np.inf)
        return float(ratio.max())


@dataclass(frozen=True)
class TrafficModel:
    """Per-frame data arrivals, already quantised to queue units."""

    arrival_rate: np.ndarray  # packets / s
    mean_packet_bits: float
    bits_per_unit: float
    arrivals: tuple[FiniteDistribution, ...]

    def __post_init__(self):
        rate = np.atleast_1d(np.asarray(self.arrival_rate, dtype=float))
        if np.any(rate < 0):
            raise ValueError("arrival rates must be non-negative")
        for d in self.arrivals:
            if np.any(d.support < 0):
                raise ValueError("arrival support must be non-negative")
        if len(self.arrivals) != rate.size:
            raise ValueError("one arrival distribution per user is required")
        object.__setattr__(self, "arrival_rate", rate)

    @property
    def packets_per_unit(self) -> float:
        return self.bits_per_unit / self.mean_packet_bits

    @classmethod
    def compound_poisson(cls, rate, mean_packet_bits: float, bits_per_unit: float,
                         tau: float, cap_units: Sequence[int], tail: float = TAIL_MASS) -> "TrafficModel":
        """Poisson packet arrivals with exponential packet sizes.

        A frame that brings ``n`` packets brings ``Gamma(n, mean_packet_bits)``
        bits, rounded up to whole units.
        """
        cap_units = list(cap_units)
        rate = np.broadcast_to(np.asarray(rate, dtype=float), (len(cap_units),))
        dists = []
        for lam, cap in zip(rate, cap_units):
            m = lam * tau
            if m == 0:
                dists.append(FiniteDistribution.point(0))
                continue
            n_max = _poisson_support(m, 1e-17)
            counts = np.arange(1, n_max + 1)
            w = stats.poisson.pmf(counts, m)
            j_max = int(cap) + 1
            while True:
                # P(units <= j) for j = 0..j_max
                x = np.arange(j_max + 1) * bits_per_unit / mean_packet_bits
                cdf = np.exp(-m) + (w[:, None] * special.gammainc(counts[:, None], x[None, :])).sum(axis=0)
                if cdf[-1] >= 1 - tail or j_max > 100 * (cap + 1):
                    break
                j_max *= 2
            pmf = np.diff(np.concatenate([[0.0], cdf]))
            pmf[-1] += max(0.0, 1.0 - cdf[-1])
            dists.append(_truncate(np.clip(pmf, 0, None), int(cap), tail))
        return cls(rate, float(mean_packet_bits), float(bits_per_unit), tuple(dists))

    @classmethod
    def from_distributions(cls, dists: Sequence[FiniteDistribution], bits_per_unit: float = 1.0,
                           mean_packet_bits: float = 1.0, tau: float = 1.0) -> "TrafficModel":
        """Explicit per-user arrival pmfs (in units), e.g. for toy instances."""
        rate = np.array([d.mean * bits_per_unit / mean_packet_bits / tau for d in dists])
        return cls(rate, float(mean_packet_bits), float(bits_per_unit), tuple(dists))


@dataclass(frozen=True)
class EnergyModel:
    """Per-frame harvested energy and buffer size, in energy units."""

    mean_harvest: np.ndarray  # W
    joules_per_unit: float
    harvests: tuple[FiniteDistribution, ...]
    capacity_units: np.ndarray

    def __post_init__(self):
        cap = np.atleast_1d(np.asarray(self.capacity_units, dtype=np.int64))
        if np.any(cap <= 0):
            raise ValueError("energy buffer capacity must be positive")
        if len(self.harvests) != cap.size:
            raise ValueError("one harvest distribution per user is required")
        for d in self.harvests:
            if np.any(d.support < 0):
                raise ValueError("harvest support must be non-negative")
        if self.joules_per_unit <= 0:
            raise ValueError("joules_per_unit must be positive")
        object.__setattr__(self, "capacity_units", cap)
        object.__setattr__(self, "mean_harvest", np.atleast_1d(np.asarray(self.mean_harvest, dtype=float)))

    @classmethod
    def poisson(cls, mean_harvest, tau: float, joules_per_unit: float, capacity_joules,
                tail: float = TAIL_MASS) -> "EnergyModel":
        """Energy arrives as a Poisson number of ``joules_per_unit`` quanta."""
        cap_j = np.atleast_1d(np.asarray(capacity_joules, dtype=float))
        mean = np.broadcast_to(np.asarray(mean_harvest, dtype=float), cap_j.shape)
        caps = np.floor(cap_j / joules_per_unit + 1e-9).astype(np.int64)
        dists = []
        for xbar, cap in zip(mean, caps):
            m = xbar * tau / joules_per_unit
            if m == 0:
                dists.append(FiniteDistribution.point(0))
                continue
            n = _poisson_support(m, tail / 10)
            pmf = stats.poisson.pmf(np.arange(n + 1), m)
            pmf[-1] += max(0.0, 1.0 - pmf.sum())
            dists.append(_truncate(pmf, int(cap), tail))
        return cls(mean.copy(), float(joules_per_unit), tuple(dists), caps)

    @classmethod
    def from_distributions(cls, dists: Sequence[FiniteDistribution], capacity_units,
                           joules_per_unit: float = 1.0, tau: float = 1.0) -> "EnergyModel":
        mean = np.array([d.mean * joules_per_unit / tau for d in dists])
        return cls(mean, float(joules_per_unit), tuple(dists), np.asarray(capacity_units))


def battery_joules(volts: float, amp_hours: float) -> float:
    """Energy stored by a battery of the given voltage and charge (J)."""
    return volts * amp_hours * 3600.0


@dataclass(frozen=True)
class ActionGrid:
    """AC and renewable power levels (W); action ``a = i * n_renew + j``."""

    ac_levels: np.ndarray
    renew_levels: np.ndarray

    def __post_init__(self):
        ac = np.asarray(self.ac_levels, dtype=float)
        re = np.asarray(self.renew_levels, dtype=float)
        for lv in (ac, re):
            if lv.ndim != 1 or lv.size == 0 or np.any(lv < 0) or np.any(np.diff(lv) <= 0):
                raise ValueError("power levels must be non-empty, non-negative and increasing")
        object.__setattr__(self, "ac_levels", ac)
        object.__setattr__(self, "renew_levels", re)

    @classmethod
    def uniform(cls, n_levels: int, max_power: float = 1500.0) -> "ActionGrid":
        """``n_levels`` evenly spaced levels from 0 to ``max_power`` on both sources."""
        lv = np.linspace(0.0, max_power, n_levels)
        return cls(lv, lv.copy())

    @property
    def n_actions(self) -> int:
        return self.ac_levels.size * self.renew_levels.size

    @property
    def ac(self) -> np.ndarray:
        return np.repeat(self.ac_levels, self.renew_levels.size)

    @property
    def renew(self) -> np.ndarray:
        return np.tile(self.renew_levels, self.ac_levels.size)

    @property
    def total(self) -> np.ndarray:
        return self.ac + self.renew

    @property
    def zero_action(self) -> int:
        return int(np.flatnonzero(self.total == 0)[0])

    def action(self, index: int) -> "Action":
        return Action(float(self.ac[index]), float(self.renew[index]), int(index))


@dataclass(frozen=True)
class Network:
    """Everything that defines the controlled system apart from the controller."""

    channel: ChannelModel
    traffic: TrafficModel
    energy: EnergyModel
    grid: ActionGrid
    p_cct: float
    queue_cap: np.ndarray  # units

    def __post_init__(self):
        cap = np.atleast_1d(np.asarray(self.queue_cap, dtype=np.int64))
        K = self.channel.K
        if cap.size == 1 and K > 1:
            cap = np.repeat(cap, K)
        object.__setattr__(self, "queue_cap", cap)
        if cap.size != K or len(self.traffic.arrivals) != K or self.energy.capacity_units.size != K:
            raise ValueError("channel, traffic, energy and queue_cap disagree on K")
        if np.any(cap <= 0):
            raise ValueError("queue capacity must be positive")
        if self.p_cct < 0:
            raise ValueError("circuit power must be non-negative")
        drain = self.grid.renew_levels * self.channel.tau / self.energy.joules_per_unit
        if np.any(np.abs(drain - np.round(drain)) > 1e-9):
            raise ValueError("every renewable level times tau must be a whole number of energy units")

    @property
    def K(self) -> int:
        return self.channel.K

    @property
    def drain_units(self) -> np.ndarray:
        """Energy units drawn by each action."""
        d = self.grid.renew * self.channel.tau / self.energy.joules_per_unit
        return np.round(d).astype(np.int64)

    @property
    def circuit_ok(self) -> np.ndarray:
        tot = self.grid.total
        return (tot == 0) | (tot >= self.p_cct)

    def local_state(self, state: "GlobalState", k: int) -> "LocalState":
        return LocalState(int(state.csi[k, k]), int(state.data_q[k]), int(state.energy_q[k]))


@dataclass(frozen=True)
class GlobalState:
    """Fading bins of every link plus data and energy queue levels."""

    csi: np.ndarray
    data_q: np.ndarray
    energy_q: np.ndarray


@dataclass(frozen=True)
class LocalState:
    """What transmitter k sees: its direct-link fading bin and its own queues."""

    own_csi: int
    data_q: int
    energy_q: int


@dataclass(frozen=True)
class Action:
    ac_power: float
    renew_power: float
    index: int = -1


def split_power(action: Action, p_cct: float) -> tuple[float, float]:
    """Return ``(tx_power, total_power)`` for a hybrid power draw."""
    total = action.ac_power + action.renew_power
    if total <= 0:
        return 0.0, 0.0
    return max(total - p_cct, 0.0), total


def compute_rate(k: int, csi: np.ndarray, tx_powers, channel: ChannelModel) -> float:
    """Achievable rate (bit/s) of pair k, interference treated as noise."""
    h = channel.fading_levels[np.asarray(csi)]
    L = channel.pathloss
    tx = np.asarray(tx_powers, dtype=float)
    if tx[k] <= 0:
        return 0.0
    interf = 0.0
    for n in range(channel.K):
        if n != k:
            interf += tx[n] * L[k, n] * h[k, n]
    sinr = channel.xi * tx[k] * L[k, k] * h[k, k] / (interf + channel.noise_power)
    return channel.bandwidth * math.log2(1.0 + sinr)


def compute_rates(csi: np.ndarray, tx_powers, channel: ChannelModel) -> np.ndarray:
    return np.array([compute_rate(k, csi, tx_powers, channel) for k in range(channel.K)])


def service_units(rate: float, tau: float, bits_per_unit: float = 1.0) -> int:
    """Whole queue units a frame at ``rate`` can drain (floored)."""
    return int(math.floor(rate * tau / bits_per_unit))


def step_data_queue(q: int, rate: float, tau: float, arrival: int, cap: int,
                    bits_per_unit: float = 1.0) -> int:
    served = service_units(rate, tau, bits_per_unit)
    return min(max(q - served, 0) + int(arrival), int(cap))


def step_energy_queue(e: int, renew_power: float, tau: float, harvest: int, cap: int,
                      joules_per_unit: float = 1.0) -> int:
    drain = renew_power * tau / joules_per_unit
    units = int(round(drain))
    if abs(drain - units) > 1e-9:
        raise ValueError(f"renewable draw {drain} is not a whole number of energy units")
    if units > e:
        raise AvailabilityViolation(f"draw of {units} units exceeds stored {e}")
    return min(e - units + int(harvest), int(cap))


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for CSI, arrivals, harvests and action sampling.

    Keeping the exogenous streams apart from the controller's stream gives
    every scheme run under one seed the same channel, traffic and energy path.
    """
    ss = np.random.SeedSequence(seed)
    names = ("csi", "arrivals", "harvests", "actions")
    return {n: np.random.default_rng(s) for n, s in zip(names, ss.spawn(len(names)))}


@dataclass
class ExogenousSampler:
    """Draws i.i.d. frames of (CSI bins, arrival units, harvest units)."""

    network: Network
    streams: dict = field(repr=False)

    def __post_init__(self):
        ch = self.network.channel
        self._csi_cdf = np.cumsum(ch.fading_probs, axis=-1)
        self._csi_cdf[..., -1] = 1.0

    def draw(self, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        net = self.network
        K, B = net.K, net.channel.n_bins
        u = self.streams["csi"].random((n, K, K))
        csi = np.zeros((n, K, K), dtype=np.int64)
        for b in range(B - 1):
            csi += u >= self._csi_cdf[None, :, :, b]
        ua = self.streams["arrivals"].random((n, K))
        uh = self.streams["harvests"].random((n, K))
        arr = np.empty((n, K), dtype=np.int64)
        har = np.empty((n, K), dtype=np.int64)
        for k in range(K):
            d = net.traffic.arrivals[k]
            arr[:, k] = d.support[d.index_of(ua[:, k])]
            d = net.energy.harvests[k]
            har[:, k] = d.support[d.index_of(uh[:, k])]
        return csi, arr, har

    def action_uniforms(self, n: int) -> np.ndarray:
        return self.streams["actions"].random((n, self.network.K))


def sample_exogenous(sampler: ExogenousSampler) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One frame of exogenous randomness."""
    csi, arr, har = sampler.draw(1)
    return csi[0], arr[0], har[0]
