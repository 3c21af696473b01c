"""Small enumerable instances for exact checks and quick experiments."""
from __future__ import annotations

import numpy as np

from .model import ActionGrid, ChannelModel, EnergyModel, FiniteDistribution, Network, TrafficModel
from .policy import BasisPolicyParams, BasisSet, LocalStateIndexer, TabularPolicyParams

__all__ = ["toy_network", "random_instance", "random_tabular_params", "random_basis_params"]


def toy_network(K: int = 1, q_cap: int = 2, e_cap: int = 2, n_bins: int = 2, n_ac: int = 2, n_renew: int = 2,
                arrival_probs=None, harvest_probs=None, cross: float = 0.1, p_cct: float = 0.5,
                noise: float = 1.0, pathloss: float = 1.0) -> Network:
    """Unit-scale instance: 1 Hz, 1 s frames, one bit per queue unit, 1 W per energy unit.

    With ``pathloss=1`` and noise 1 a lone transmitter at 1 W (after the
    circuit share) serves one unit per frame, 3 W serves two.
    """
    h = [1.0] if n_bins == 1 else [0.5, 1.5]
    hp = [1.0] if n_bins == 1 else [0.5, 0.5]
    L = np.full((K, K), cross * pathloss)
    np.fill_diagonal(L, pathloss)
    ch = ChannelModel(K, 1.0, noise, 1.0, L, h, hp, 1.0)
    if arrival_probs is None:
        arrival_probs = [0.5, 0.5]
    if harvest_probs is None:
        harvest_probs = [0.5, 0.5]
    arr = FiniteDistribution(np.arange(len(arrival_probs)), np.asarray(arrival_probs, float))
    har = FiniteDistribution(np.arange(len(harvest_probs)), np.asarray(harvest_probs, float))
    tr = TrafficModel.from_distributions([arr] * K)
    en = EnergyModel.from_distributions([har] * K, [e_cap] * K)
    grid = ActionGrid(np.arange(n_ac, dtype=float), np.arange(n_renew, dtype=float))
    return Network(ch, tr, en, grid, p_cct, [q_cap] * K)


def random_instance(rng: np.random.Generator, max_k: int = 2, max_q: int = 2, max_e: int = 2, max_bins: int = 2,
                    max_levels: int = 3, cross: tuple[float, float] = (0.05, 0.3)) -> Network:
    """Random unit-scale network with K, caps, bins and grid sizes drawn up to the given bounds."""
    K = int(rng.integers(1, max_k + 1))
    B = int(rng.integers(1, max_bins + 1))
    nq = int(rng.integers(1, max_q + 1))
    ne = int(rng.integers(1, max_e + 1))
    h = [1.0] if B == 1 else [0.5, 1.5]
    hp = [1.0] if B == 1 else [0.5, 0.5]
    L = rng.uniform(*cross, size=(K, K))
    np.fill_diagonal(L, 1.0)
    ch = ChannelModel(K, 1.0, 1.0, 1.0, L, h, hp, 1.0)
    n_ac, n_re = (int(x) for x in rng.integers(2, max_levels + 1, size=2))
    grid = ActionGrid(np.arange(n_ac, dtype=float), np.arange(n_re, dtype=float))

    def pmf(n):
        return FiniteDistribution(np.arange(n), rng.dirichlet(np.ones(n)))

    tr = TrafficModel.from_distributions([pmf(nq + 1) for _ in range(K)])
    en = EnergyModel.from_distributions([pmf(ne + 1) for _ in range(K)], [ne] * K)
    return Network(ch, tr, en, grid, float(rng.choice([0.0, 0.5])), [nq] * K)


def random_tabular_params(rng: np.random.Generator, network: Network, scale: float = 1.0) -> list:
    idx = LocalStateIndexer.identity(network.channel.n_bins, int(network.queue_cap.max()),
                                     int(network.energy.capacity_units.max()))
    return [TabularPolicyParams(rng.normal(0.0, scale, (idx.n_rows, network.grid.n_actions)), idx)
            for _ in range(network.K)]


def random_basis_params(rng: np.random.Generator, network: Network, features=None, scale: float = 1.0) -> list:
    feats = features or (("one", "total"), ("busy", "total"), ("energy", "renew"))
    basis = BasisSet(feats, network.grid, network.channel.fading_levels, float(network.queue_cap.max()),
                     float(network.energy.capacity_units.max()), p_scale=float(network.grid.total.max()))
    return [BasisPolicyParams(rng.normal(0.0, scale, len(feats)), basis) for _ in range(network.K)]
