"""Randomised decentralised power-control policies.

A transmitter maps its local state (own fading bin, data queue, energy
buffer) to a distribution over (AC, renewable) power pairs.  Two
parameterisations are supported: one logit per (local state, action) and a
log-linear form over a small library of basis functions.  Both go through the
same feasibility mask, so infeasible pairs get exactly zero probability.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .model import Action, ActionGrid, LocalState

__all__ = [
    "LOGIT_CLAMP",
    "ZeroProbabilityAction",
    "LocalStateIndexer",
    "TabularPolicyParams",
    "BasisSet",
    "BasisPolicyParams",
    "PolicyParams",
    "feasible_actions",
    "feasibility_mask",
    "action_distribution",
    "sample_action",
    "score_function",
    "save_policy",
    "load_policy",
]

LOGIT_CLAMP = 50.0
CHECKPOINT_FORMAT = "greenqueue-policy"
CHECKPOINT_VERSION = 1


class ZeroProbabilityAction(RuntimeError):
    """The score was requested for an action the policy can never take."""


def feasibility_mask(energy_q: int, drain_units: np.ndarray, circuit_ok: np.ndarray) -> np.ndarray:
    return (drain_units <= energy_q) & circuit_ok


def feasible_actions(state: LocalState, grid: ActionGrid, p_cct: float, tau: float,
                     joules_per_unit: float = 1.0) -> np.ndarray:
    """Boolean mask over actions (flattened ``(n_ac, n_renew)`` table).

    A pair is allowed when its renewable draw fits in the buffer and it
    either idles or covers the circuit power.
    """
    drain = grid.renew * tau / joules_per_unit
    total = grid.total
    return (drain <= state.energy_q + 1e-9) & ((total == 0) | (total >= p_cct))


@dataclass(frozen=True)
class LocalStateIndexer:
    """Maps a local state to a row of the logit table.

    ``q_map``/``e_map`` send every queue/energy level to an observation
    bucket; identity maps give one row per lattice state.
    """

    n_csi: int
    q_map: np.ndarray
    e_map: np.ndarray

    @classmethod
    def identity(cls, n_csi: int, q_cap: int, e_cap: int) -> "LocalStateIndexer":
        return cls(n_csi, np.arange(q_cap + 1), np.arange(e_cap + 1))

    @classmethod
    def bucketed(cls, n_csi: int, q_cap: int, e_cap: int,
                 q_edges: Sequence[int] | None = None,
                 e_edges: Sequence[int] | None = None) -> "LocalStateIndexer":
        """Bucket levels by edges: level ``x`` goes to ``#(edges <= x)``."""
        def m(cap, edges):
            lv = np.arange(cap + 1)
            if edges is None:
                return lv
            return np.searchsorted(np.asarray(sorted(edges)), lv, side="right")
        return cls(n_csi, m(q_cap, q_edges), m(e_cap, e_edges))

    @property
    def n_q(self) -> int:
        return int(self.q_map.max()) + 1

    @property
    def n_e(self) -> int:
        return int(self.e_map.max()) + 1

    @property
    def n_rows(self) -> int:
        return self.n_csi * self.n_q * self.n_e

    def row(self, state: LocalState) -> int:
        return (state.own_csi * self.n_q + int(self.q_map[state.data_q])) * self.n_e + int(self.e_map[state.energy_q])

    def describe(self) -> dict:
        return {"n_csi": self.n_csi, "q_map": self.q_map.tolist(), "e_map": self.e_map.tolist()}


@dataclass(frozen=True)
class TabularPolicyParams:
    """One logit per (local-state row, action)."""

    logits: np.ndarray
    indexer: LocalStateIndexer
    kind = "tabular"

    @classmethod
    def zeros(cls, indexer: LocalStateIndexer, n_actions: int) -> "TabularPolicyParams":
        return cls(np.zeros((indexer.n_rows, n_actions)), indexer)

    @property
    def values(self) -> np.ndarray:
        return self.logits

    def with_values(self, values: np.ndarray) -> "TabularPolicyParams":
        return TabularPolicyParams(np.asarray(values, dtype=float).reshape(self.logits.shape), self.indexer)

    def state_logits(self, state: LocalState) -> np.ndarray:
        return self.logits[self.indexer.row(state)]

    def expected_score(self, state: LocalState, probs: np.ndarray, weights: np.ndarray,
                       mask: np.ndarray) -> np.ndarray:
        """``sum_a weights[a] * score(state, a)`` as a parameter-shaped array."""
        out = np.zeros_like(self.logits)
        feas = np.asarray(mask, dtype=bool)
        out[self.indexer.row(state), feas] = weights[feas] - probs[feas] * weights[feas].sum()
        return out


# state terms and action terms whose products form the basis library
STATE_TERMS = ("one", "queue", "energy", "fading", "busy")
ACTION_TERMS = ("one", "ac", "renew", "total", "idle")


@dataclass(frozen=True)
class BasisSet:
    """Features ``f(state, action) = state_term(state) * action_term(action)``.

    State terms: ``one``, ``queue`` (Q/q_scale), ``energy`` (E/e_scale),
    ``fading`` (h/h_scale), ``busy`` (Q > 0).  Action terms: ``one``, ``ac``,
    ``renew``, ``total`` (power / p_scale) and ``idle`` (both sources off).
    """

    features: tuple
    grid: ActionGrid
    fading_levels: np.ndarray
    q_scale: float
    e_scale: float
    p_scale: float = 1500.0
    h_scale: float = field(default=0.0)

    def __post_init__(self):
        feats = tuple((str(s), str(a)) for s, a in self.features)
        for s, a in feats:
            if s not in STATE_TERMS or a not in ACTION_TERMS:
                raise ValueError(f"unknown basis term ({s}, {a})")
        if not feats:
            raise ValueError("a basis needs at least one feature")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "fading_levels", np.asarray(self.fading_levels, dtype=float))
        if self.h_scale <= 0:
            object.__setattr__(self, "h_scale", float(self.fading_levels.max()))

    @classmethod
    def default_features(cls) -> tuple:
        return (("one", "total"), ("busy", "total"), ("queue", "total"),
                ("one", "ac"), ("energy", "renew"), ("fading", "total"), ("busy", "idle"))

    @property
    def state_index(self) -> np.ndarray:
        return np.array([STATE_TERMS.index(s) for s, _ in self.features])

    @property
    def action_index(self) -> np.ndarray:
        return np.array([ACTION_TERMS.index(a) for _, a in self.features])

    def state_terms(self, state: LocalState) -> np.ndarray:
        return np.array([1.0, state.data_q / self.q_scale, state.energy_q / self.e_scale,
                         self.fading_levels[state.own_csi] / self.h_scale, float(state.data_q > 0)])

    def action_terms(self) -> np.ndarray:
        g = self.grid
        tot = g.total
        return np.column_stack([np.ones(g.n_actions), g.ac / self.p_scale, g.renew / self.p_scale,
                                tot / self.p_scale, (tot == 0).astype(float)])

    def matrix(self, state: LocalState) -> np.ndarray:
        """Feature matrix of shape (n_actions, alpha)."""
        sp = self.state_terms(state)[self.state_index]
        return self.action_terms()[:, self.action_index] * sp[None, :]

    def describe(self) -> dict:
        return {"features": [list(f) for f in self.features], "q_scale": self.q_scale,
                "e_scale": self.e_scale, "p_scale": self.p_scale, "h_scale": self.h_scale}


@dataclass(frozen=True)
class BasisPolicyParams:
    """Log-linear policy: logit(a) = weights . f(state, a)."""

    weights: np.ndarray
    basis: BasisSet
    kind = "basis"

    @classmethod
    def zeros(cls, basis: BasisSet) -> "BasisPolicyParams":
        return cls(np.zeros(len(basis.features)), basis)

    @property
    def values(self) -> np.ndarray:
        return self.weights

    def with_values(self, values: np.ndarray) -> "BasisPolicyParams":
        return BasisPolicyParams(np.asarray(values, dtype=float).reshape(self.weights.shape), self.basis)

    def state_logits(self, state: LocalState) -> np.ndarray:
        return self.basis.matrix(state) @ self.weights

    def expected_score(self, state: LocalState, probs: np.ndarray, weights: np.ndarray,
                       mask: np.ndarray) -> np.ndarray:
        F = self.basis.matrix(state)
        feas = np.asarray(mask, dtype=bool)
        mean_f = probs[feas] @ F[feas]
        return weights[feas] @ (F[feas] - mean_f[None, :])


PolicyParams = Union[TabularPolicyParams, BasisPolicyParams]


def action_distribution(params: PolicyParams, state: LocalState, mask: np.ndarray) -> np.ndarray:
    """Masked softmax of the state's logits; exact zeros off the mask."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("no feasible action")
    z = params.state_logits(state)
    out = np.zeros(mask.size)
    zf = z[mask]
    w = np.exp(zf - zf.max())
    out[mask] = w / w.sum()
    return out


def sample_action(probs: np.ndarray, rng: np.random.Generator | float) -> int:
    """Inverse-CDF draw over the action table."""
    u = rng if isinstance(rng, float) else float(rng.random())
    c = 0.0
    last = -1
    for a, p in enumerate(probs):
        if p > 0:
            c += p
            last = a
            if u < c:
                return a
    return last


def score_function(params: PolicyParams, state: LocalState, action: Action | int,
                   mask: np.ndarray, strict: bool = False) -> np.ndarray:
    """Gradient of ``log mu(action | state)`` with respect to the parameters.

    Zero when the action has zero probability, unless ``strict`` asks for a
    :class:`ZeroProbabilityAction` instead.
    """
    a = action if isinstance(action, (int, np.integer)) else action.index
    probs = action_distribution(params, state, mask)
    if probs[a] <= 0:
        if strict:
            raise ZeroProbabilityAction(f"action {a} has zero probability in {state}")
        return np.zeros_like(params.values)
    onehot = np.zeros_like(probs)
    onehot[a] = 1.0
    return params.expected_score(state, probs, onehot, mask)


def save_policy(path: str | Path, params: PolicyParams) -> None:
    """Write a self-describing JSON checkpoint."""
    if params.kind == "tabular":
        space = params.indexer.describe()
    else:
        space = params.basis.describe()
        space["grid"] = {"ac": params.basis.grid.ac_levels.tolist(),
                         "renew": params.basis.grid.renew_levels.tolist()}
        space["fading_levels"] = params.basis.fading_levels.tolist()
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "kind": params.kind,
        "state_space": space,
        "shape": list(params.values.shape),
        "values": params.values.ravel().tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_policy(path: str | Path) -> PolicyParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a policy checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    values = np.asarray(doc["values"], dtype=float).reshape(doc["shape"])
    space = doc["state_space"]
    if doc["kind"] == "tabular":
        idx = LocalStateIndexer(int(space["n_csi"]), np.asarray(space["q_map"]), np.asarray(space["e_map"]))
        return TabularPolicyParams(values, idx)
    basis = BasisSet(tuple(tuple(f) for f in space["features"]),
                     ActionGrid(space["grid"]["ac"], space["grid"]["renew"]),
                     np.asarray(space["fading_levels"]), space["q_scale"], space["e_scale"],
                     space["p_scale"], space["h_scale"])
    return BasisPolicyParams(values, basis)
