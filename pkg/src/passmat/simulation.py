"""Monte Carlo replication: Neumann accuracy and price responses across share levels."""

from __future__ import annotations

import csv
import hashlib
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .demand import eval_demand, shares_of
from .equilibrium import solve_bertrand
from .exceptions import PassmatError
from .market import SimulationConfig, apply_shifter, sample_market
from .passthrough import exact_passthrough

MATRIX_COLUMNS = ("market", "shifter", "gamma_inf", "frob_K0", "frob_K1", "frob_K2")
PRICE_COLUMNS = ("market", "shifter", "experiment", "avg_share", "dp_exact", "dp_K1", "dp_smallshare")
EXPERIMENTS = ("uniform", "firm", "single")


@dataclass
class SimRecord:
    market_index: int
    shifter: float
    gamma_inf_norm: float
    frob_err_K0: float
    frob_err_K1: float
    frob_err_K2: float
    avg_share: float
    experiment: str
    dp_exact_avg: float
    dp_neumann1_avg: float
    dp_smallshare_avg: float


def tax_vector(config, market, experiment):
    n = market.n_products
    t = np.zeros(n)
    if experiment == "uniform":
        t[:] = config.tau
    elif experiment == "firm":
        t[list(market.firms[0])] = config.tau
    elif experiment == "single":
        t[0] = config.tau
    else:
        raise ValueError(f"unknown experiment {experiment!r}")
    return t


def config_hash(config):
    blob = json.dumps(asdict(config), sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def simulate_cell(config, index, shifter, tol=1e-10):
    """One (market, shifter) cell: matrix errors and the three tax experiments.

    Returns (matrix_row, price_rows) or raises PassmatError on failure.
    """
    market = apply_shifter(sample_market(config, index), shifter)
    eq = solve_bertrand(market, tol=tol)
    p = eq.p_star
    orders = tuple(sorted(set(config.neumann_orders) | {0, 1, 2}))
    rep = exact_passthrough(market, p, orders)
    ev = eval_demand(market.demand, p)
    avg_share = float(np.mean(shares_of(market.demand, p, ev)))
    mrow = (
        index,
        float(shifter),
        rep.diagnostics["gamma_inf_norm"],
        rep.frobenius_errors[0],
        rep.frobenius_errors[1],
        rep.frobenius_errors[2],
    )
    prows = []
    for exp in EXPERIMENTS:
        t = tax_vector(config, market, exp)
        taxed = solve_bertrand(market.with_cost(market.cost + t), p0=p, tol=tol, check_soc=False)
        dp_exact = float(np.mean(taxed.p_star - p))
        dp_k1 = float(np.mean(rep.psi_trunc[1] @ t))
        dp_small = float(np.mean(t))  # small-share benchmark: Psi ~ I
        prows.append((index, float(shifter), exp, avg_share, dp_exact, dp_k1, dp_small))
    return mrow, prows


def _market_cells(config, index, tol):
    rows, prices, failures = [], [], []
    for s in config.shifter_grid:
        try:
            mrow, prows = simulate_cell(config, index, s, tol)
        except PassmatError as exc:
            failures.append((index, float(s), type(exc).__name__))
            continue
        rows.append(mrow)
        prices.extend(prows)
    return rows, prices, failures


def thread_count():
    try:
        return max(1, int(os.environ.get("PASSMAT_THREADS", "1")))
    except ValueError:
        return 1


def run_simulation(config=None, tol=1e-10, threads=None):
    """Run every (market, shifter) cell; rows come back sorted and deterministic."""
    config = config or SimulationConfig()
    threads = threads or thread_count()
    idx = range(config.n_markets)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda i: _market_cells(config, i, tol), idx))
    else:
        parts = [_market_cells(config, i, tol) for i in idx]
    rows = sorted(r for part in parts for r in part[0])
    order = {e: k for k, e in enumerate(EXPERIMENTS)}
    prices = sorted((r for part in parts for r in part[1]), key=lambda r: (r[0], -r[1], order[r[2]]))
    rows.sort(key=lambda r: (r[0], -r[1]))
    failures = sorted(f for part in parts for f in part[2])
    return rows, prices, failures


def _fmt(x):
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_csv(path, columns, rows, manifest_line):
    with open(path, "w", newline="") as fh:
        fh.write(manifest_line + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def read_csv(path):
    """Read a CSV written by :func:`write_csv`, skipping the manifest line."""
    with open(path) as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    reader = csv.DictReader(lines)
    out = []
    for row in reader:
        out.append({k: (v if k == "experiment" else float(v)) for k, v in row.items()})
    return out
