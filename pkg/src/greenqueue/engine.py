"""Frame-loop driver shared by the learners, the baselines and the harness.

The per-frame work (action sampling, rates, queue updates, learning steps)
runs in ``run_frames``, either the compiled kernel or the pure-Python
fallback.  The fallback is used when the extension is not built, or when
``GREENQUEUE_BACKEND=python`` is set.  Exogenous randomness and action
uniforms are drawn here in blocks, so both backends consume identical
random numbers.
"""
from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _pyengine
from .model import AvailabilityViolation, ExogenousSampler, Network, make_streams
from .policy import (LOGIT_CLAMP, BasisPolicyParams, BasisSet, LocalStateIndexer,
                     TabularPolicyParams)

try:  # pragma: no cover - depends on the build
    from . import _kernels
except ImportError:  # pragma: no cover
    _kernels = None

__all__ = [
    "BACKEND",
    "available_backends",
    "get_kernel",
    "Controller",
    "LearnerSettings",
    "FrameBlock",
    "Simulation",
]

_KERNELS: dict[str, Callable] = {"python": _pyengine.run_frames}
if _kernels is not None:
    _KERNELS["compiled"] = _kernels.run_frames


def available_backends() -> list[str]:
    return sorted(_KERNELS)


def _default_backend() -> str:
    want = os.environ.get("GREENQUEUE_BACKEND", "").strip().lower()
    if want:
        if want not in _KERNELS:
            raise ImportError(f"GREENQUEUE_BACKEND={want!r} is not available; have {available_backends()}")
        return want
    return "compiled" if "compiled" in _KERNELS else "python"


BACKEND = _default_backend()


def get_kernel(name: str | None = None) -> Callable:
    name = name or BACKEND
    try:
        return _KERNELS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; have {available_backends()}") from None


POLICY_KINDS = {"tabular": 0, "basis": 1, "table": 2}
LEARN_KINDS = {"none": 0, "pomdp": 1, "posg": 2}
UTILITY_KINDS = {"delay": 0, "outage": 1}


@dataclass
class Controller:
    """Per-user decision rule as the kernel sees it.

    ``tabular``: ``theta[k]`` holds one logit per (row, action).
    ``basis``: ``theta[k]`` holds the basis weights.
    ``table``: ``theta[k]`` holds fixed action probabilities per row, used by
    the non-learning baselines.
    """

    kind: str
    theta: np.ndarray
    indexer: LocalStateIndexer
    basis: BasisSet | None = None
    tdma: bool = False

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        self.theta = np.ascontiguousarray(self.theta, dtype=float)
        if self.kind == "basis" and self.basis is None:
            raise ValueError("a basis controller needs a BasisSet")

    @classmethod
    def from_params(cls, params: Sequence, tdma: bool = False) -> "Controller":
        """Stack one PolicyParams per user (all of the same kind and shape)."""
        first = params[0]
        theta = np.stack([np.asarray(p.values, dtype=float).ravel() for p in params])
        if isinstance(first, TabularPolicyParams):
            return cls("tabular", theta, first.indexer, tdma=tdma)
        if isinstance(first, BasisPolicyParams):
            idx = LocalStateIndexer(len(first.basis.fading_levels), np.zeros(1, dtype=np.int64),
                                    np.zeros(1, dtype=np.int64))
            return cls("basis", theta, idx, basis=first.basis, tdma=tdma)
        raise TypeError(f"unsupported policy parameters {type(first).__name__}")

    @classmethod
    def zeros_tabular(cls, network: Network, indexer: LocalStateIndexer | None = None) -> "Controller":
        if indexer is None:
            indexer = LocalStateIndexer.identity(network.channel.n_bins, int(network.queue_cap.max()),
                                                 int(network.energy.capacity_units.max()))
        theta = np.zeros((network.K, indexer.n_rows * network.grid.n_actions))
        return cls("tabular", theta, indexer)

    @classmethod
    def zeros_basis(cls, network: Network, basis: BasisSet) -> "Controller":
        return cls.from_params([BasisPolicyParams.zeros(basis)] * network.K)

    def params(self, k: int):
        """User k's current parameters as a PolicyParams snapshot."""
        if self.kind == "tabular":
            return TabularPolicyParams(self.theta[k].reshape(self.indexer.n_rows, -1).copy(), self.indexer)
        if self.kind == "basis":
            return BasisPolicyParams(self.theta[k].copy(), self.basis)
        raise ValueError("probability tables have no policy parameters")


@dataclass
class LearnerSettings:
    """Everything the per-frame learning step needs besides the policy."""

    kind: str = "none"
    a0: float = 1.0
    b0: float = 1.0
    step_offset: int = 0
    beta: np.ndarray | None = None
    p0: np.ndarray | None = None
    utility: str = "delay"
    f_scale: np.ndarray | None = None
    f_thr: np.ndarray | None = None
    q_ref: np.ndarray | None = None
    e_ref: np.ndarray | None = None
    z_max: float = 1e3
    clamp: float = LOGIT_CLAMP
    learn_lm: bool = True

    def resolved(self, network: Network) -> "LearnerSettings":
        """Fill per-user defaults and broadcast scalars to length-K arrays."""
        K = network.K
        if self.kind not in LEARN_KINDS:
            raise ValueError(f"unknown learner kind {self.kind!r}")
        if self.utility not in UTILITY_KINDS:
            raise ValueError(f"unknown utility kind {self.utility!r}")

        def vec(x, default, dtype=float):
            x = default if x is None else x
            return np.array(np.broadcast_to(np.asarray(x, dtype=dtype), (K,)))

        if self.step_offset < 0:
            raise ValueError("step_offset must be non-negative")
        beta_default = 1.0 / K if self.kind == "pomdp" else 1.0
        return LearnerSettings(
            kind=self.kind, a0=float(self.a0), b0=float(self.b0), step_offset=int(self.step_offset),
            beta=vec(self.beta, beta_default),
            p0=vec(self.p0, 0.0),
            utility=self.utility,
            f_scale=vec(self.f_scale, 1.0),
            f_thr=vec(self.f_thr, 1, np.int64),
            q_ref=vec(self.q_ref, network.queue_cap, np.int64),
            e_ref=vec(self.e_ref, network.energy.capacity_units, np.int64),
            z_max=float(self.z_max), clamp=float(self.clamp), learn_lm=bool(self.learn_lm),
        )


@dataclass
class FrameBlock:
    """Per-frame records of one block; row ``i`` is frame ``t0 + i``."""

    t0: int
    q: np.ndarray
    e: np.ndarray
    action: np.ndarray
    drop: np.ndarray
    arrivals: np.ndarray
    g: np.ndarray
    gamma: np.ndarray  # multiplier in force during the frame
    lbar: np.ndarray  # running average in force during the frame
    zeta: np.ndarray
    inc: np.ndarray  # Euclidean norm of the frame's parameter change, all users

    @property
    def n(self) -> int:
        return self.q.shape[0]


class Simulation:
    """One seeded run of K transmitters under a controller, optionally learning.

    The state (queues, learner variables, RNG streams) lives on this object
    and ``advance`` moves it forward; consecutive calls are equivalent to a
    single call over the combined number of frames.
    """

    def __init__(self, network: Network, controller: Controller, learner: LearnerSettings | None = None,
                 seed: int = 0, init_q=None, init_e=None, gamma0=0.0, backend: str | None = None):
        self.network = network
        self.controller = controller
        self.learner = (learner or LearnerSettings()).resolved(network)
        if controller.kind == "table" and self.learner.kind != "none":
            raise ValueError("probability-table controllers cannot learn")
        self.kernel = get_kernel(backend)
        self.backend = backend or BACKEND
        K = network.K
        self.streams = make_streams(seed)
        self.sampler = ExogenousSampler(network, self.streams)
        self.q = np.array(np.broadcast_to(np.asarray(0 if init_q is None else init_q, dtype=np.int64), (K,)))
        e0 = network.energy.capacity_units if init_e is None else init_e
        self.e = np.array(np.broadcast_to(np.asarray(e0, dtype=np.int64), (K,)))
        if np.any(self.q < 0) or np.any(self.q > network.queue_cap):
            raise ValueError("initial data queue out of range")
        if np.any(self.e < 0) or np.any(self.e > network.energy.capacity_units):
            raise ValueError("initial energy level out of range")
        self.gamma = np.array(np.broadcast_to(np.asarray(gamma0, dtype=float), (K,)))
        # NaN marks a running average not yet seeded by a signal
        self.lbar = np.full(K, np.nan) if self.learner.kind != "none" else np.zeros(K)
        self.trace = np.zeros_like(controller.theta)
        self.t = 1
        self._static = self._build_static()

    def _build_static(self) -> dict:
        net, ctl, lr = self.network, self.controller, self.learner
        K, grid = net.K, net.grid
        idx = ctl.indexer
        qmax = int(net.queue_cap.max())
        emax = int(net.energy.capacity_units.max())
        if ctl.kind == "basis":
            q_map = np.zeros((K, qmax + 1), dtype=np.int64)
            e_map = np.zeros((K, emax + 1), dtype=np.int64)
            n_qb = n_eb = 1
            b = ctl.basis
            f_state, f_action = b.state_index.astype(np.int64), b.action_index.astype(np.int64)
            action_terms = np.ascontiguousarray(b.action_terms())
            scale = np.tile([b.q_scale, b.e_scale, b.h_scale], (K, 1)).astype(float)
        else:
            if idx.q_map.size < qmax + 1 or idx.e_map.size < emax + 1:
                raise ValueError("state indexer does not cover the queue/energy range")
            q_map = np.tile(np.asarray(idx.q_map[: qmax + 1], dtype=np.int64), (K, 1))
            e_map = np.tile(np.asarray(idx.e_map[: emax + 1], dtype=np.int64), (K, 1))
            n_qb, n_eb = idx.n_q, idx.n_e
            if ctl.theta.shape != (K, idx.n_rows * grid.n_actions):
                raise ValueError(f"controller parameters have shape {ctl.theta.shape}, "
                                 f"expected {(K, idx.n_rows * grid.n_actions)}")
            f_state = np.zeros(0, dtype=np.int64)
            f_action = np.zeros(0, dtype=np.int64)
            action_terms = np.zeros((grid.n_actions, 5))
            scale = np.ones((K, 3))
        return dict(
            pathloss=np.ascontiguousarray(net.channel.pathloss),
            fading=np.ascontiguousarray(net.channel.fading_levels),
            noise_w=float(net.channel.noise_power), xi=float(net.channel.xi),
            bandwidth=float(net.channel.bandwidth), tau=float(net.channel.tau),
            bits_per_unit=float(net.traffic.bits_per_unit),
            q_cap=np.ascontiguousarray(net.queue_cap, dtype=np.int64),
            e_cap=np.ascontiguousarray(net.energy.capacity_units, dtype=np.int64),
            act_ac=np.ascontiguousarray(grid.ac), act_re=np.ascontiguousarray(grid.renew),
            act_drain=np.ascontiguousarray(net.drain_units, dtype=np.int64),
            circuit_ok=net.circuit_ok.astype(np.int64), p_cct=float(net.p_cct),
            policy_kind=POLICY_KINDS[ctl.kind],
            q_map=q_map, e_map=e_map, n_qb=int(n_qb), n_eb=int(n_eb),
            f_state=f_state, f_action=f_action, action_terms=action_terms, state_scale=scale,
            tdma=int(ctl.tdma), idle_action=int(grid.zero_action),
            learn_kind=LEARN_KINDS[lr.kind], a0=lr.a0, b0=lr.b0, step_offset=lr.step_offset, beta=lr.beta, p0=lr.p0,
            f_kind=UTILITY_KINDS[lr.utility], f_scale=lr.f_scale, f_thr=lr.f_thr,
            q_ref=lr.q_ref, e_ref=lr.e_ref, z_max=lr.z_max, clamp=lr.clamp, learn_lm=int(lr.learn_lm),
        )

    def advance(self, n: int, exogenous=None, uniforms=None) -> FrameBlock:
        """Simulate ``n`` frames and return their records.

        ``exogenous``/``uniforms`` override the internal streams (used by
        tests that replay a fixed path).
        """
        K = self.network.K
        if exogenous is None:
            csi, arr, har = self.sampler.draw(n)
        else:
            csi, arr, har = (np.ascontiguousarray(x, dtype=np.int64) for x in exogenous)
        u = self.sampler.action_uniforms(n) if uniforms is None else np.ascontiguousarray(uniforms, dtype=float)
        out_q = np.empty((n, K), dtype=np.int64)
        out_e = np.empty((n, K), dtype=np.int64)
        out_a = np.empty((n, K), dtype=np.int64)
        out_drop = np.empty((n, K), dtype=np.int64)
        out_g = np.empty((n, K))
        out_gamma = np.empty((n, K))
        out_lbar = np.empty((n, K))
        out_zeta = np.empty(n, dtype=np.int64)
        out_inc = np.empty(n)
        s = self._static
        t0 = self.t
        status = self.kernel(
            t0, n, csi, arr, har, u, self.q, self.e,
            s["pathloss"], s["fading"], s["noise_w"], s["xi"], s["bandwidth"], s["tau"],
            s["bits_per_unit"], s["q_cap"], s["e_cap"],
            s["act_ac"], s["act_re"], s["act_drain"], s["circuit_ok"], s["p_cct"],
            s["policy_kind"], self.controller.theta, s["q_map"], s["e_map"], s["n_qb"], s["n_eb"],
            s["f_state"], s["f_action"], s["action_terms"], s["state_scale"],
            s["tdma"], s["idle_action"],
            s["learn_kind"], self.trace, self.gamma, self.lbar, s["a0"], s["b0"], s["step_offset"], s["beta"], s["p0"],
            s["f_kind"], s["f_scale"], s["f_thr"], s["q_ref"], s["e_ref"], s["z_max"], s["clamp"],
            s["learn_lm"],
            out_q, out_e, out_a, out_drop, out_g, out_gamma, out_lbar, out_zeta, out_inc,
        )
        if status:
            frame = t0 + status - 1
            self.t = frame
            raise AvailabilityViolation(f"infeasible action chosen at frame {frame} (E={self.e.tolist()})")
        self.t = t0 + n
        return FrameBlock(t0, out_q, out_e, out_a, out_drop, arr, out_g, out_gamma, out_lbar,
                          out_zeta, out_inc)

    def run(self, frames: int, observers: Sequence[Callable[["Simulation", FrameBlock], None]] = (),
            chunk: int = 65536) -> None:
        """Advance ``frames`` frames in blocks, handing each block to the observers."""
        done = 0
        while done < frames:
            n = min(chunk, frames - done)
            block = self.advance(n)
            for obs in observers:
                obs(self, block)
            done += n
