"""Exact finite-state analysis of small instances.

The joint state is (fading bins of every link, data queues, energy levels).
Fading is i.i.d. across frames, so the chain reduces to the (Q, E) lattice:
from lattice point ``s`` under fading ``c`` and joint action ``j`` the queues
first move to a post-decision point (service and renewable draw applied), and
independent arrivals and harvests then move them to the next lattice point.
Everything here (stationary law, average cost, relative values, gradients)
is computed on that reduced chain and lifted back when a per-(fading, lattice)
quantity is needed.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import linalg, sparse
from scipy.sparse import csgraph
from scipy.sparse import linalg as splinalg

from .engine import LearnerSettings
from .model import GlobalState, LocalState, Network, compute_rate
from .policy import PolicyParams, action_distribution, feasibility_mask

__all__ = [
    "StateSpaceTooLarge",
    "NotUnichain",
    "ModelSkeleton",
    "ExactModel",
    "PoissonSolution",
    "CostSummary",
    "build_skeleton",
    "build_model",
    "stationary_distribution",
    "average_cost",
    "solve_poisson",
    "exact_gradient_pomdp",
    "exact_gradient_posg",
    "finite_diff_gradient",
    "relative_error",
    "oracle_report",
]

MAX_STATES = 2_000_000
DENSE_LIMIT = 2_000


class StateSpaceTooLarge(ValueError):
    """The instance has more joint states than the configured cap."""


class NotUnichain(RuntimeError):
    """The induced chain has more than one recurrent class."""

    def __init__(self, message: str, classes: list):
        super().__init__(message)
        self.classes = classes


def _lattice(network: Network) -> tuple[np.ndarray, np.ndarray]:
    """All (Q, E) points in mixed-radix order (q_1, e_1, q_2, e_2, ...)."""
    dims = []
    for k in range(network.K):
        dims += [int(network.queue_cap[k]) + 1, int(network.energy.capacity_units[k]) + 1]
    grid = np.indices(dims).reshape(len(dims), -1).T
    return np.ascontiguousarray(grid[:, 0::2]), np.ascontiguousarray(grid[:, 1::2])


def _codes(network: Network, q: np.ndarray, e: np.ndarray) -> np.ndarray:
    code = np.zeros(q.shape[:-1], dtype=np.int64)
    for k in range(network.K):
        code = code * (int(network.queue_cap[k]) + 1) + q[..., k]
        code = code * (int(network.energy.capacity_units[k]) + 1) + e[..., k]
    return code


def _overflow_kernel(dist, cap: int) -> np.ndarray:
    """``K[x, y] = P(min(x + D, cap) = y)`` for D ~ dist, x, y in 0..cap."""
    out = np.zeros((cap + 1, cap + 1))
    for v, p in zip(dist.support, dist.probs):
        y = np.minimum(np.arange(cap + 1) + int(v), cap)
        np.add.at(out, (np.arange(cap + 1), y), p)
    return out


@dataclass
class ModelSkeleton:
    """Policy-independent part of the exact model."""

    network: Network
    settings: LearnerSettings
    csi: np.ndarray  # (C, K, K) fading bins
    p_csi: np.ndarray  # (C,)
    q: np.ndarray  # (S, K)
    e: np.ndarray  # (S, K)
    joint_actions: np.ndarray  # (J, K)
    post: np.ndarray  # (C, S, J) post-decision lattice index
    next_kernel: np.ndarray | sparse.csr_matrix  # (S, S)
    f_cost: np.ndarray  # (S, K) beta_k * f(Q_k)
    local_index: np.ndarray  # (C, S, K) index into the user's local-state table
    local_states: list  # per user, list of LocalState
    ref: int

    @property
    def n_csi(self) -> int:
        return self.csi.shape[0]

    @property
    def n_lattice(self) -> int:
        return self.q.shape[0]

    @property
    def n_states(self) -> int:
        return self.n_csi * self.n_lattice

    @property
    def dense(self) -> bool:
        return self.n_lattice <= DENSE_LIMIT


def state_count(network: Network) -> int:
    """Joint state-space size B^(K^2) * prod_k (1 + N_k^Q)(1 + N_k^E)."""
    n = network.channel.n_bins ** (network.K ** 2)
    for k in range(network.K):
        n *= (int(network.queue_cap[k]) + 1) * (int(network.energy.capacity_units[k]) + 1)
    return int(n)


def build_skeleton(network: Network, settings: LearnerSettings | None = None,
                   max_states: int = MAX_STATES) -> ModelSkeleton:
    n_states = state_count(network)
    K, B = network.K, network.channel.n_bins
    A = network.grid.n_actions
    if n_states > max_states:
        raise StateSpaceTooLarge(f"{n_states} joint states exceed the cap of {max_states}")
    if n_states * A ** K > 50 * max_states:
        raise StateSpaceTooLarge(f"{n_states} states x {A ** K} joint actions is too many to enumerate")
    st = (settings or LearnerSettings(kind="pomdp")).resolved(network)
    ch = network.channel
    csi = np.array(list(itertools.product(range(B), repeat=K * K)), dtype=np.int64).reshape(-1, K, K)
    p_csi = np.ones(csi.shape[0])
    for k in range(K):
        for n in range(K):
            p_csi *= ch.fading_probs[k, n][csi[:, k, n]]
    q, e = _lattice(network)
    S = q.shape[0]
    joint = np.array(list(itertools.product(range(A), repeat=K)), dtype=np.int64).reshape(-1, K)
    grid = network.grid
    ac, re = grid.ac, grid.renew
    drain = network.drain_units
    # service per (fading, joint action, user), with the simulator's arithmetic
    served = np.zeros((csi.shape[0], joint.shape[0], K), dtype=np.int64)
    tau, bpu = ch.tau, network.traffic.bits_per_unit
    for j, acts in enumerate(joint):
        tx = []
        for k in range(K):
            tot = ac[acts[k]] + re[acts[k]]
            tx.append(max(tot - network.p_cct, 0.0) if tot > 0.0 else 0.0)
        for c in range(csi.shape[0]):
            for k in range(K):
                rate = compute_rate(k, csi[c], tx, ch)
                served[c, j, k] = int(math.floor(rate * tau / bpu))
    qpost = np.maximum(q[None, :, None, :] - served[:, None, :, :], 0)
    epost = np.maximum(e[None, :, None, :] - drain[joint][None, None, :, :], 0)
    post = _codes(network, qpost, epost)
    # exogenous part: independent arrivals and harvests per user
    nxt = None
    for k in range(K):
        kq = _overflow_kernel(network.traffic.arrivals[k], int(network.queue_cap[k]))
        ke = _overflow_kernel(network.energy.harvests[k], int(network.energy.capacity_units[k]))
        blk = sparse.kron(sparse.csr_matrix(kq), sparse.csr_matrix(ke), format="csr")
        nxt = blk if nxt is None else sparse.kron(nxt, blk, format="csr")
    nxt = nxt.toarray() if S <= DENSE_LIMIT else nxt.tocsr()
    # per-user stage cost from the queue
    if st.utility == "delay":
        f = q * st.f_scale[None, :]
    else:
        f = (q >= st.f_thr[None, :]).astype(float)
    f_cost = st.beta[None, :] * f
    local_states, local_index = [], np.zeros((csi.shape[0], S, K), dtype=np.int64)
    for k in range(K):
        nq, ne = int(network.queue_cap[k]) + 1, int(network.energy.capacity_units[k]) + 1
        local_states.append([LocalState(b, qq, ee) for b in range(B) for qq in range(nq) for ee in range(ne)])
        local_index[:, :, k] = (csi[:, k, k][:, None] * nq + q[None, :, k]) * ne + e[None, :, k]
    ref = int(_codes(network, st.q_ref[None, :], st.e_ref[None, :])[0])
    return ModelSkeleton(network, st, csi, p_csi, q, e, joint, post, nxt, f_cost, local_index,
                         local_states, ref)


@dataclass
class ExactModel:
    """Policy-marginalised chain for given parameters and multipliers."""

    skeleton: ModelSkeleton
    params: list
    gamma: np.ndarray
    local_probs: list  # per user, (n_local, A)
    local_masks: list
    mu: np.ndarray  # (C, S, J) joint action probabilities
    trans: np.ndarray | sparse.csr_matrix  # (S, S) reduced kernel
    _cost_cache: dict = field(default_factory=dict, repr=False)

    @property
    def network(self) -> Network:
        return self.skeleton.network

    @property
    def n_states(self) -> int:
        return self.skeleton.n_states

    def state(self, index: int) -> GlobalState:
        """Joint state ``index = c * S + s``."""
        sk = self.skeleton
        c, s = divmod(int(index), sk.n_lattice)
        return GlobalState(sk.csi[c].copy(), sk.q[s].copy(), sk.e[s].copy())

    def cost(self, user: int | None = None) -> np.ndarray:
        """Stage utility per (fading, lattice point, joint action).

        ``user=None`` gives the sum over users (cooperative objective).
        """
        if user in self._cost_cache:
            return self._cost_cache[user]
        sk = self.skeleton
        st = sk.settings
        ac = self.network.grid.ac
        users = range(self.network.K) if user is None else [user]
        g = np.zeros((sk.n_lattice, sk.joint_actions.shape[0]))
        for k in users:
            g += sk.f_cost[:, k][:, None] + (self.gamma[k] * (ac[sk.joint_actions[:, k]] - st.p0[k]))[None, :]
        out = np.broadcast_to(g, (sk.n_csi,) + g.shape)
        self._cost_cache[user] = out
        return out

    def next_distribution(self, c: int, s: int, j: int) -> np.ndarray:
        """Law of the next lattice point from (fading c, lattice s, joint action j)."""
        row = self.skeleton.next_kernel[self.skeleton.post[c, s, j]]
        return row.toarray().ravel() if sparse.issparse(row) else np.asarray(row).ravel()

    def full_transition_matrix(self) -> np.ndarray:
        """Dense kernel over all joint states ``c * S + s``.

        The next frame's fading is drawn independently of everything else,
        so each row is the fading law times a reduced row.
        """
        sk = self.skeleton
        nk = sk.next_kernel.toarray() if sparse.issparse(sk.next_kernel) else sk.next_kernel
        blocks = []
        for c in range(sk.n_csi):
            red = np.stack([self.mu[c, s] @ nk[sk.post[c, s]] for s in range(sk.n_lattice)])
            blocks.append(np.kron(sk.p_csi[None, :], red))
        return np.vstack(blocks)


def _local_tables(network: Network, params: PolicyParams, states: Sequence[LocalState]):
    drain, circ = network.drain_units, network.circuit_ok
    probs = np.zeros((len(states), network.grid.n_actions))
    masks = np.zeros_like(probs, dtype=bool)
    for i, ls in enumerate(states):
        m = feasibility_mask(ls.energy_q, drain, circ)
        masks[i] = m
        probs[i] = action_distribution(params, ls, m)
    return probs, masks


def build_model(network: Network, params: Sequence[PolicyParams], gamma=0.0,
                settings: LearnerSettings | None = None, skeleton: ModelSkeleton | None = None,
                max_states: int = MAX_STATES) -> ExactModel:
    """Enumerate the chain induced by ``params`` (one per user) and multipliers ``gamma``.

    Raises :class:`StateSpaceTooLarge` above ``max_states`` joint states.
    """
    sk = skeleton or build_skeleton(network, settings, max_states)
    K = network.K
    if len(params) != K:
        raise ValueError(f"need one parameter set per user, got {len(params)} for K={K}")
    gamma = np.array(np.broadcast_to(np.asarray(gamma, dtype=float), (K,)))
    lp, lm = [], []
    mu = None
    for k in range(K):
        probs, masks = _local_tables(network, params[k], sk.local_states[k])
        lp.append(probs)
        lm.append(masks)
        # (C, S, J) probability that user k plays its part of each joint action
        part = probs[sk.local_index[:, :, k]][:, :, sk.joint_actions[:, k]]
        mu = part if mu is None else mu * part
    S = sk.n_lattice
    w = sk.p_csi[:, None, None] * mu
    rows = np.broadcast_to(np.arange(S)[None, :, None], mu.shape)
    if sk.dense:
        M = np.bincount((rows * S + sk.post).ravel(), weights=w.ravel(), minlength=S * S).reshape(S, S)
        trans = M @ sk.next_kernel
    else:
        M = sparse.coo_matrix((w.ravel(), (rows.ravel(), sk.post.ravel())), shape=(S, S)).tocsr()
        trans = (M @ sk.next_kernel).tocsr()
    return ExactModel(sk, list(params), gamma, lp, lm, mu, trans)


def _recurrent_classes(trans) -> list[np.ndarray]:
    adj = sparse.csr_matrix(trans > 0) if not sparse.issparse(trans) else (trans > 0).tocsr()
    n_comp, labels = csgraph.connected_components(adj, directed=True, connection="strong")
    closed = []
    coo = adj.tocoo()
    leaves = np.zeros(n_comp, dtype=bool)
    leaves[labels[coo.row][labels[coo.row] != labels[coo.col]]] = True
    for c in range(n_comp):
        if not leaves[c]:
            closed.append(np.flatnonzero(labels == c))
    return closed


def stationary_distribution(model: ExactModel, check: bool = True, refine: int = 2) -> np.ndarray:
    """Stationary law of the reduced chain over the (Q, E) lattice.

    The joint law over (fading, lattice) is the product with the fading law
    (``model.skeleton.p_csi``).  Dense systems get ``refine`` rounds of
    iterative refinement with residuals in extended precision.  Raises
    :class:`NotUnichain` when more than one closed class exists.
    """
    P = model.trans
    S = model.skeleton.n_lattice
    if check:
        classes = _recurrent_classes(P)
        if len(classes) != 1:
            sk = model.skeleton
            desc = [[(sk.q[i].tolist(), sk.e[i].tolist()) for i in cl[:5]] for cl in classes]
            raise NotUnichain(f"{len(classes)} recurrent classes, e.g. {desc}", classes)
    b = np.zeros(S)
    b[-1] = 1.0
    if sparse.issparse(P):
        A = (sparse.identity(S, format="csr") - P).T.tolil()
        A[S - 1, :] = np.ones(S)
        pi = splinalg.spsolve(A.tocsc(), b)
    else:
        A = (np.eye(S) - P).T
        A[-1, :] = 1.0
        lu = linalg.lu_factor(A)
        pi = linalg.lu_solve(lu, b)
        if refine:
            A_ext = A.astype(np.longdouble)
            for _ in range(refine):
                r = (b - A_ext @ pi.astype(np.longdouble)).astype(float)
                pi = pi + linalg.lu_solve(lu, r)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def stationarity_residual(model: ExactModel, pi: np.ndarray) -> float:
    return float(np.max(np.abs(model.trans.T @ pi - pi)))


@dataclass
class CostSummary:
    """Stationary averages: objective and per-user delay, AC and renewable power."""

    psi: float
    delay: np.ndarray
    ac_power: np.ndarray
    renew_power: np.ndarray
    per_user: np.ndarray  # per-user stage-utility averages

    def as_dict(self) -> dict:
        return {"psi": self.psi, "delay": self.delay.tolist(), "ac_power": self.ac_power.tolist(),
                "renew_power": self.renew_power.tolist(), "per_user": self.per_user.tolist()}


def _action_marginals(model: ExactModel, pi: np.ndarray) -> np.ndarray:
    """Stationary probability of each joint action, (J,)."""
    sk = model.skeleton
    return np.einsum("c,s,csj->j", sk.p_csi, pi, model.mu)


def average_cost(model: ExactModel, pi: np.ndarray, user: int | None = None) -> CostSummary:
    """Stationary average utility (sum over users, or one user's) and per-user metrics.

    Delay is the stationary mean of Q_k / lambda_k in the configured units.
    """
    sk = model.skeleton
    net = model.network
    K = net.K
    pj = _action_marginals(model, pi)
    ac = net.grid.ac[sk.joint_actions].T @ pj
    re = net.grid.renew[sk.joint_actions].T @ pj
    st = sk.settings
    scale = np.where(net.traffic.arrival_rate > 0, net.traffic.packets_per_unit
                     / np.where(net.traffic.arrival_rate > 0, net.traffic.arrival_rate, 1.0),
                     net.traffic.packets_per_unit)
    delay = (pi @ sk.q) * scale
    per_user = np.array([pi @ sk.f_cost[:, k] + model.gamma[k] * (ac[k] - st.p0[k]) for k in range(K)])
    psi = float(per_user.sum()) if user is None else float(per_user[user])
    return CostSummary(psi, delay, ac, re, per_user)


def _expected_cost(model: ExactModel, user: int | None) -> np.ndarray:
    """Stage utility averaged over fading and actions, per lattice point."""
    return np.einsum("c,csj,csj->s", model.skeleton.p_csi, model.mu, model.cost(user))


def _psi(model: ExactModel, pi: np.ndarray, user: int | None) -> float:
    # accumulate in extended precision: finite differences divide this by 2h
    return float(np.dot(_expected_cost(model, user).astype(np.longdouble), pi.astype(np.longdouble)))


@dataclass
class PoissonSolution:
    """Average cost, relative values and the largest defect of the Poisson equation."""

    avg_cost: float
    potential: np.ndarray  # (C, S) relative value of each joint state
    reduced: np.ndarray  # (S,) fading-averaged relative value, zero at the reference
    residual: float


def solve_poisson(model: ExactModel, psi: float | None = None, ref: int | None = None,
                  user: int | None = None, pi: np.ndarray | None = None) -> PoissonSolution:
    """Solve V + psi = g + E[V(next)] on the reduced chain with V(ref) = 0.

    The average cost is solved for jointly with the relative values; a
    supplied ``psi`` is only used to report its defect.
    """
    sk = model.skeleton
    S = sk.n_lattice
    ref = sk.ref if ref is None else int(ref)
    g = model.cost(user)
    gbar = _expected_cost(model, user)
    P = model.trans
    keep = np.flatnonzero(np.arange(S) != ref)
    # unknowns: V on every point but the reference, then psi
    if sparse.issparse(P):
        IP = (sparse.identity(S, format="csr") - P).tocsc()[:, keep]
        A = sparse.hstack([IP, sparse.csc_matrix(np.ones((S, 1)))]).tocsc()
        try:
            x = splinalg.spsolve(A, gbar)
        except RuntimeError as exc:  # pragma: no cover
            raise NotUnichain("singular Poisson system", []) from exc
    else:
        A = np.column_stack([(np.eye(S) - P)[:, keep], np.ones(S)])
        try:
            x = np.linalg.solve(A, gbar)
        except np.linalg.LinAlgError as exc:
            raise NotUnichain("singular Poisson system", []) from exc
    if not np.all(np.isfinite(x)):
        raise NotUnichain("singular Poisson system", [])
    V = np.zeros(S)
    V[keep] = x[:-1]
    avg = float(x[-1])
    resid = float(np.max(np.abs(V + avg - gbar - P @ V)))
    if psi is not None:
        resid = max(resid, float(np.max(np.abs(V + psi - gbar - P @ V))))
    EV = sk.next_kernel @ V
    potential = np.einsum("csj,csj->cs", model.mu, g + EV[sk.post]) - avg
    return PoissonSolution(avg, potential, V, resid)


def _q_factor(model: ExactModel, sol: PoissonSolution, user: int | None) -> np.ndarray:
    sk = model.skeleton
    EV = sk.next_kernel @ sol.reduced
    return model.cost(user) - sol.avg_cost + EV[sk.post]


def _user_gradient(model: ExactModel, pi: np.ndarray, q: np.ndarray, k: int) -> np.ndarray:
    """sum over states and actions of pi * mu * score_k * q, for user k's parameters."""
    sk = model.skeleton
    A = model.network.grid.n_actions
    w = sk.p_csi[:, None, None] * pi[None, :, None] * model.mu * q
    # marginalise the joint action onto user k's own action
    W = np.zeros(w.shape[:2] + (A,))
    for a in range(A):
        sel = sk.joint_actions[:, k] == a
        W[:, :, a] = w[:, :, sel].sum(axis=2)
    n_local = len(sk.local_states[k])
    Wl = np.zeros((n_local, A))
    np.add.at(Wl, sk.local_index[:, :, k].ravel(), W.reshape(-1, A))
    # Wl already carries mu_k(a), so it is the weight of each action's score
    probs = model.local_probs[k]
    grad = np.zeros_like(np.asarray(model.params[k].values, dtype=float))
    for i in np.flatnonzero(np.abs(Wl).sum(axis=1) > 0):
        ls = sk.local_states[k][i]
        grad = grad + model.params[k].expected_score(ls, probs[i], Wl[i], model.local_masks[k][i])
    return grad


def exact_gradient_pomdp(model: ExactModel, pi: np.ndarray | None = None,
                         sol: PoissonSolution | None = None) -> list[np.ndarray]:
    """Gradient of the cooperative objective with respect to every user's parameters."""
    pi = stationary_distribution(model) if pi is None else pi
    sol = solve_poisson(model) if sol is None else sol
    q = _q_factor(model, sol, None)
    return [_user_gradient(model, pi, q, k) for k in range(model.network.K)]


def exact_gradient_posg(model: ExactModel, k: int, pi: np.ndarray | None = None,
                        sol: PoissonSolution | None = None) -> np.ndarray:
    """Gradient of user k's own objective with respect to its own parameters."""
    pi = stationary_distribution(model) if pi is None else pi
    sol = solve_poisson(model, user=k) if sol is None else sol
    q = _q_factor(model, sol, k)
    return _user_gradient(model, pi, q, k)


def finite_diff_gradient(network: Network, params: Sequence[PolicyParams], gamma=0.0,
                         settings: LearnerSettings | None = None, h: float = 1e-5,
                         users: Sequence[int] | None = None, objective_user: int | None = None,
                         skeleton: ModelSkeleton | None = None, objective=None) -> list[np.ndarray]:
    """Central differences of the stationary objective, coordinate by coordinate.

    ``objective_user`` selects one user's own utility instead of the sum.
    ``objective(model) -> float`` replaces the stationary objective entirely.
    """
    sk = skeleton or build_skeleton(network, settings)
    users = range(network.K) if users is None else users
    params = list(params)

    def value(ps):
        m = build_model(network, ps, gamma, skeleton=sk)
        if objective is not None:
            return float(objective(m))
        return _psi(m, stationary_distribution(m, check=False), objective_user)

    out = []
    for k in users:
        base = np.asarray(params[k].values, dtype=float)
        grad = np.zeros(base.size)
        for i in range(base.size):
            vals = []
            for sign in (1.0, -1.0):
                x = base.ravel().copy()
                x[i] += sign * h
                ps = params.copy()
                ps[k] = params[k].with_values(x.reshape(base.shape))
                vals.append(value(ps))
            grad[i] = (vals[0] - vals[1]) / (2.0 * h)
        out.append(grad.reshape(base.shape))
    return out


def relative_error(exact: np.ndarray, approx: np.ndarray, floor: float = 1e-3) -> np.ndarray:
    """Per-coordinate ``|exact - approx| / max(|exact|, |approx|, floor * max_norm)``.

    The floor keeps coordinates that are zero up to rounding from dominating.
    """
    exact, approx = np.asarray(exact, float).ravel(), np.asarray(approx, float).ravel()
    scale = max(np.max(np.abs(exact), initial=0.0), np.max(np.abs(approx), initial=0.0))
    den = np.maximum(np.maximum(np.abs(exact), np.abs(approx)), floor * scale)
    den = np.where(den > 0, den, 1.0)
    return np.abs(exact - approx) / den


def oracle_report(model: ExactModel, path: str | Path | None = None, fd_check: bool = False,
                  h: float = 1e-5) -> dict:
    """Machine-readable certification summary; written as JSON when ``path`` is given."""
    pi = stationary_distribution(model)
    summary = average_cost(model, pi)
    sol = solve_poisson(model, summary.psi)
    grads = exact_gradient_pomdp(model, pi, sol)
    report = {
        "n_states": model.n_states,
        "n_lattice": model.skeleton.n_lattice,
        "psi": summary.psi,
        "delay": summary.delay.tolist(),
        "ac_power": summary.ac_power.tolist(),
        "renew_power": summary.renew_power.tolist(),
        "gamma": model.gamma.tolist(),
        "p0": model.skeleton.settings.p0.tolist(),
        "slackness": (model.gamma * (summary.ac_power - model.skeleton.settings.p0)).tolist(),
        "stationarity_residual": stationarity_residual(model, pi),
        "poisson_residual": sol.residual,
        "gradient_inf_norm": [float(np.max(np.abs(g), initial=0.0)) for g in grads],
        "posg_gradient_inf_norm": [float(np.max(np.abs(exact_gradient_posg(model, k, pi)), initial=0.0))
                                   for k in range(model.network.K)],
    }
    if fd_check:
        fd = finite_diff_gradient(model.network, model.params, model.gamma, h=h, skeleton=model.skeleton)
        report["fd_max_relative_error"] = max(float(np.max(relative_error(g, f), initial=0.0))
                                              for g, f in zip(grads, fd))
    if path is not None:
        Path(path).write_text(json.dumps(report, indent=1, sort_keys=True) + "\n")
    return report
