"""Markets: costs, ownership partition and demand."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.special import ndtri

from .demand import CES, Logit, MixedLogit, NestedLogit
from .exceptions import DimensionMismatch, IndexOutOfRange, InvalidPartition, OutOfDomain, UnsupportedDemand


def normalize_partition(partition, n_products):
    """Validate a firm partition of {0, ..., n_products - 1}; return tuple of sorted tuples."""
    firms = []
    seen = []
    for firm in partition:
        members = tuple(sorted(int(j) for j in firm))
        if not members:
            raise InvalidPartition("firms must own at least one product")
        firms.append(members)
        seen.extend(members)
    if sorted(seen) != list(range(n_products)):
        raise InvalidPartition(
            f"partition must cover products 0..{n_products - 1} exactly once, got {sorted(seen)}"
        )
    firms.sort(key=lambda f: f[0])
    return tuple(firms)


def ownership_matrix(partition, n_products):
    """Omega[j, k] = 1 if j and k share an owner."""
    omega = np.zeros((n_products, n_products))
    for firm in partition:
        idx = np.asarray(firm)
        omega[np.ix_(idx, idx)] = 1.0
    return omega


@dataclass(frozen=True)
class Market:
    n_products: int
    cost: np.ndarray
    firms: Tuple[Tuple[int, ...], ...]
    omega: np.ndarray
    demand: object
    label: str = ""

    def firm_of(self, j):
        for f, members in enumerate(self.firms):
            if j in members:
                return f
        raise IndexOutOfRange(f"product {j} is not in the market")

    def with_firms(self, partition):
        firms = normalize_partition(partition, self.n_products)
        return replace(self, firms=firms, omega=ownership_matrix(firms, self.n_products))

    def with_demand(self, demand):
        if demand.n_products != self.n_products:
            raise DimensionMismatch("demand dimension does not match the market")
        return replace(self, demand=demand)

    def with_cost(self, cost):
        return build_market(self.n_products, cost, self.firms, self.demand, self.label)


def build_market(n_products, cost, partition, demand, label=""):
    """Validate inputs and assemble a :class:`Market`."""
    n = int(n_products)
    cost = np.atleast_1d(np.asarray(cost, dtype=float))
    if cost.shape != (n,):
        raise DimensionMismatch(f"cost must have {n} entries")
    if not np.all(np.isfinite(cost)) or np.any(cost < 0):
        raise OutOfDomain("costs must be finite and non-negative")
    if demand.n_products != n:
        raise DimensionMismatch("demand dimension does not match n_products")
    firms = normalize_partition(partition, n)
    return Market(n, cost, firms, ownership_matrix(firms, n), demand, str(label))


@dataclass(frozen=True)
class SimulationConfig:
    """Monte Carlo design: multiproduct logit markets with random quality and cost."""

    n_products: int = 6
    n_firms: int = 2
    alpha: float = 1.0
    delta_mean: float = 1.2
    delta_sd: float = 0.4
    cost_low: float = 0.2
    cost_high: float = 0.8
    n_markets: int = 100
    shifter_grid: Tuple[float, ...] = tuple(np.linspace(0.0, -6.0, 10))
    tau: float = 0.1
    base_seed: int = 20240101
    neumann_orders: Tuple[int, ...] = (0, 1, 2)

    def partition(self):
        if self.n_products % self.n_firms:
            raise InvalidPartition("n_products must be divisible by n_firms")
        size = self.n_products // self.n_firms
        return tuple(tuple(range(f * size, (f + 1) * size)) for f in range(self.n_firms))


def market_rng(base_seed, index):
    """PCG64 stream for market ``index``; seed = base_seed + index."""
    return np.random.Generator(np.random.PCG64(int(base_seed) + int(index)))


def sample_market(config: Optional[SimulationConfig], index):
    """Draw market ``index``: delta ~ N(mean, sd^2), cost ~ U[low, high]."""
    config = config or SimulationConfig()
    if not 0 <= int(index) < config.n_markets:
        raise IndexOutOfRange(f"market index {index} outside 0..{config.n_markets - 1}")
    n = config.n_products
    rng = market_rng(config.base_seed, index)
    # uniforms only; normals by inverse CDF so the stream is portable
    u = rng.random(2 * n)
    tiny = 2.0**-54
    u = np.clip(u, tiny, 1.0 - tiny)
    delta = config.delta_mean + config.delta_sd * ndtri(u[:n])
    cost = config.cost_low + (config.cost_high - config.cost_low) * u[n:]
    demand = Logit(alpha=config.alpha, delta=delta, scale_M=1.0)
    return build_market(n, cost, config.partition(), demand, label=f"sim-{index}")


def apply_shifter(market, s):
    """Shift every product's mean utility by ``s`` (s < 0 lowers all shares)."""
    d = market.demand
    if isinstance(d, (Logit, NestedLogit, MixedLogit, CES)):
        return replace(market, demand=replace(d, delta=d.delta + float(s)))
    raise UnsupportedDemand(f"no demand shifter for family {d.family}")
