"""Regenerative-cycle estimate of the learners' update direction at frozen parameters.

The system is simulated frame by frame with the scalar model functions and
the reference learner updates (no compiled code involved).  With parameters,
multipliers and the running average held fixed, each frame contributes
``-(signal - psi) * z`` where ``z`` is the eligibility trace; summed over a
cycle between reference hits and divided by the mean cycle length this
estimates the negative gradient of the stationary objective.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .engine import LearnerSettings
from .learning import LearnerState, pomdp_update, posg_update
from .model import (ExogenousSampler, GlobalState, Network, compute_rates, make_streams, split_power,
                    step_data_queue, step_energy_queue)
from .policy import PolicyParams, action_distribution, feasibility_mask, sample_action

__all__ = ["CycleEstimate", "cycle_gradient_estimate"]


@dataclass
class CycleEstimate:
    """Per-user ratio estimates with delta-method standard errors."""

    mean: list  # per user, parameter-shaped
    se: list
    cov: list  # per user, covariance of the flattened estimate
    n_cycles: int
    n_frames: int
    mean_cycle_length: float

    def z_scores(self, target: Sequence[np.ndarray]) -> list[np.ndarray]:
        out = []
        for m, s, t in zip(self.mean, self.se, target):
            with np.errstate(divide="ignore", invalid="ignore"):
                z = np.where(s > 0, (m - t) / np.where(s > 0, s, 1.0), np.where(m == t, 0.0, np.inf))
            out.append(z)
        return out


def cycle_gradient_estimate(network: Network, params: Sequence[PolicyParams], gamma, settings: LearnerSettings,
                            psi, n_cycles: int, seed: int = 0, include_current: bool = True,
                            max_frames: int | None = None) -> CycleEstimate:
    """Estimate ``-grad psi`` (cooperative) or ``-grad_k psi_k`` (non-cooperative).

    ``settings.kind`` picks the signal: the summed utility for ``pomdp``,
    the user's own for ``posg``; ``psi`` is the matching stationary average
    (a scalar, or one value per user).  ``include_current=False`` applies the
    trace before adding the current frame's score, which is biased whenever
    the stage utility depends on the current action.
    """
    st = settings.resolved(network)
    K = network.K
    gamma = np.broadcast_to(np.asarray(gamma, dtype=float), (K,))
    psi = np.broadcast_to(np.asarray(psi, dtype=float), (K,))
    streams = make_streams(seed)
    sampler = ExogenousSampler(network, streams)
    grid, ch, tr, en = network.grid, network.channel, network.traffic, network.energy
    drain, circ = network.drain_units, network.circuit_ok
    learners = [LearnerState(p, float(gamma[k]), np.zeros_like(p.values), float(psi[k]))
                for k, p in enumerate(params)]
    update = pomdp_update if st.kind == "pomdp" else posg_update
    q = st.q_ref.copy()
    e = st.e_ref.copy()
    sums = [np.zeros(np.size(p.values)) for p in params]
    cyc_y: list[list[np.ndarray]] = [[] for _ in range(K)]
    cyc_t: list[int] = []
    cur_t = 0
    started = False
    frames = 0
    block = 4096
    max_frames = max_frames or 10**9
    while len(cyc_t) < n_cycles and frames < max_frames:
        csi_b, arr_b, har_b = sampler.draw(block)
        u_b = sampler.action_uniforms(block)
        for i in range(block):
            zeta = bool(np.all(q == st.q_ref) and np.all(e == st.e_ref))
            csi = csi_b[i]
            acts, masks, locs = [], [], []
            for k in range(K):
                loc = network.local_state(GlobalState(csi, q, e), k)
                mask = feasibility_mask(int(e[k]), drain, circ)
                probs = action_distribution(params[k], loc, mask)
                acts.append(grid.action(sample_action(probs, float(u_b[i, k]))))
                masks.append(mask)
                locs.append(loc)
            g = np.array([st.beta[k] * (q[k] * st.f_scale[k] if st.utility == "delay" else float(q[k] >= st.f_thr[k]))
                          + gamma[k] * (acts[k].ac_power - st.p0[k]) for k in range(K)])
            # inclusive order: a reference hit opens a new cycle before this frame counts
            if include_current and zeta:
                if started:
                    cyc_t.append(cur_t)
                    for k in range(K):
                        cyc_y[k].append(sums[k].copy())
                started = True
                cur_t = 0
                for s_ in sums:
                    s_[:] = 0.0
            for k in range(K):
                sig = g.sum() if st.kind == "pomdp" else g[k]
                z_before = learners[k].trace
                learners[k] = update(learners[k], locs[k], acts[k], sig, zeta, masks[k], float(st.p0[k]),
                                     frozen=True)
                z = learners[k].trace if include_current else z_before
                sums[k] -= (sig - psi[k]) * z.ravel()
            cur_t += 1
            # deferred order: the hit frame still uses the old trace, then closes the cycle
            if not include_current and zeta:
                if started:
                    cyc_t.append(cur_t)
                    for k in range(K):
                        cyc_y[k].append(sums[k].copy())
                started = True
                cur_t = 0
                for s_ in sums:
                    s_[:] = 0.0
            tx = [split_power(a, network.p_cct)[0] for a in acts]
            rates = compute_rates(csi, tx, ch)
            q = np.array([step_data_queue(int(q[k]), rates[k], ch.tau, int(arr_b[i, k]), int(network.queue_cap[k]),
                                          tr.bits_per_unit) for k in range(K)])
            e = np.array([step_energy_queue(int(e[k]), acts[k].renew_power, ch.tau, int(har_b[i, k]),
                                            int(en.capacity_units[k]), en.joules_per_unit) for k in range(K)])
            frames += 1
            if len(cyc_t) >= n_cycles or frames >= max_frames:
                break
    T = np.asarray(cyc_t, dtype=float)
    n = T.size
    if n < 2:
        raise RuntimeError("fewer than two complete regeneration cycles; pick a more frequent reference state")
    means, ses, covs = [], [], []
    for k in range(K):
        Y = np.asarray(cyc_y[k])
        r = Y.sum(axis=0) / T.sum()
        resid = Y - r[None, :] * T[:, None]
        cov = (resid.T @ resid) / (n - 1) / n / T.mean() ** 2
        shape = np.shape(params[k].values)
        means.append(r.reshape(shape))
        ses.append(np.sqrt(np.diag(cov)).reshape(shape))
        covs.append(cov)
    return CycleEstimate(means, ses, covs, n, frames, float(T.mean()))
