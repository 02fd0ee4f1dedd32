import numpy as np
import pytest

from passmat.demand import CES, Aids, GammaMixing, Linear, Logit, LogNormal, MixedLogit, NestedLogit
from passmat.market import SimulationConfig, build_market

FIXTURE_SHARES = np.array([0.20, 0.15, 0.10])
# printed three-decimal values for the fixture market
PRINTED_PSI = np.array([[0.802, 0.032, 0.023], [0.029, 0.851, 0.017], [0.018, 0.015, 0.901]])
PRINTED_CORRECTION = np.array([[0.0, 0.032, 0.023], [0.028, 0.0, 0.016], [0.018, 0.014, 0.0]])


def fixture_logit_market(shares=FIXTURE_SHARES, cost=1.0):
    """Single-product logit market whose equilibrium shares are ``shares`` (alpha = 1)."""
    s = np.asarray(shares, dtype=float)
    c = np.full(s.size, cost)
    p = c + 1.0 / (1.0 - s)
    delta = np.log(s / (1.0 - s.sum())) + p
    return build_market(s.size, c, [[j] for j in range(s.size)], Logit(1.0, delta)), p


def merger_market():
    return build_market(
        4, np.array([0.5, 0.6, 0.4, 0.5]), [[0, 1], [2, 3]], Logit(1.0, np.array([1.0, 0.8, 1.2, 0.9]))
    )


AIDS_SPEC = Aids(
    alpha_vec=np.array([0.3, 0.35, 0.3]),
    gamma_mat=np.array([[-0.05, 0.03, 0.02], [0.03, -0.06, 0.03], [0.02, 0.03, -0.05]]),
    beta_vec=np.array([0.05, -0.02, 0.01]),
    stone_weights=np.array([0.3, 0.4, 0.3]),
    budget_B=3.0,
)
AIDS_P0 = np.array([1.0, 1.3, 0.8])


def all_specs():
    """One instance per family variant with an in-domain price vector."""
    d3 = np.array([1.0, 0.5, 0.2])
    return {
        "logit": (Logit(1.3, d3), np.array([1.5, 1.2, 1.8])),
        "nested_logit": (NestedLogit(1.0, 0.5, np.array([0, 0, 1]), d3), np.array([1.5, 1.2, 1.8])),
        "ces": (CES(4.0, np.array([0.0, 0.2, -0.1]), 2.0), np.array([1.5, 1.2, 1.8])),
        "mixed_lognormal": (MixedLogit(LogNormal(0.0, 0.5), d3, quad_nodes=32), np.array([1.5, 1.2, 1.8])),
        "mixed_gamma": (MixedLogit(GammaMixing(2.0, 1.5), d3, quad_nodes=32), np.array([1.5, 1.2, 1.8])),
        "linear": (Linear(np.array([10.0, 8.0, 9.0]), np.array([[2.0, -0.5, -0.3], [-0.4, 1.8, -0.2], [-0.3, -0.6, 2.1]])),
                   np.array([2.0, 1.5, 1.8])),
        "aids": (AIDS_SPEC, AIDS_P0),
    }


@pytest.fixture
def fixture_market():
    return fixture_logit_market()


@pytest.fixture
def small_config():
    return SimulationConfig(n_markets=3, shifter_grid=(0.0, -2.0, -4.0))


ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    ACCEPTANCE[number] = (passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}")
