from __future__ import annotations

from collections import OrderedDict

import numpy as np
import pytest

from infomarket.analysis import stability
from infomarket.beliefs import sample_reference
from infomarket.core import BeliefSet, MarketInstance
from infomarket.equilibrium import SolverConfig

ALPHA, BETA, GAMMA = 1.5, 0.3, 5.0


def two_outcome(pi_p_l: float = 0.5, pi_c_l: float = 0.5, outcomes=(1.0, 3.0), **kw) -> MarketInstance:
    return MarketInstance(
        kw.pop("alpha", ALPHA), kw.pop("beta", BETA), kw.pop("gamma_u", GAMMA), np.array(outcomes),
        BeliefSet(np.array([pi_p_l, 1 - pi_p_l])), BeliefSet(np.array([pi_c_l, 1 - pi_c_l])), **kw,
    )


def random_beliefs(rng: np.random.Generator, n: int, spread: float = 0.5) -> BeliefSet:
    return BeliefSet.from_weights(rng.uniform(1 - spread, 1 + spread, n))


def random_instance(rng: np.random.Generator, n: int, common: bool = False) -> MarketInstance:
    """Random market whose outcomes all clear at a positive price.

    gamma_u / beta >= 1 and outcomes <= 1.5 keep demand at zero price above the
    renewable in-feed, so no outcome ends in a zero-price surplus.
    """
    alpha = rng.uniform(0.5, 5.0)
    beta = rng.uniform(0.1, 2.0)
    gamma = rng.uniform(max(2.0, beta), 10.0)
    outcomes = np.sort(rng.uniform(0.0, 1.5, n))
    pi_p = random_beliefs(rng, n)
    if common:
        return MarketInstance(alpha, beta, gamma, outcomes, pi_p, pi_p, pi_p)
    return MarketInstance(alpha, beta, gamma, outcomes, pi_p, random_beliefs(rng, n))


def fast_solver(instance: MarketInstance, epsilon: float = 1e-16, **kw) -> SolverConfig:
    """Step 1/|largest Jacobian eigenvalue|: the largest constant step with a monotone linearized contraction."""
    rho = 1.0 / abs(stability(instance).min_eig)
    return SolverConfig(rho=rho, epsilon=epsilon, nu_max=kw.pop("nu_max", 1_000_000), **kw)


@pytest.fixture
def base_market():
    return two_outcome()


@pytest.fixture(scope="session")
def reference_samples():
    return sample_reference()


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion

_CRITERIA: "OrderedDict[str, dict]" = OrderedDict()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(id, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark:
            cid, title = mark.args
            _CRITERIA.setdefault(cid, {"title": title, "parts": []})


def pytest_runtest_makereport(item, call):
    mark = item.get_closest_marker("criterion")
    if mark is None or call.when != "call" and not (call.when == "setup" and call.excinfo):
        return
    entry = _CRITERIA[mark.args[0]]
    entry["parts"].append((item.name, call.excinfo is None))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for cid, entry in _CRITERIA.items():
        parts = entry["parts"]
        if not parts:
            status = "NOT RUN"
        else:
            status = "PASS" if all(ok for _, ok in parts) else "FAIL"
        failed = [name for name, ok in parts if not ok]
        extra = f"  (failing: {', '.join(failed)})" if failed else ""
        tr.write_line(f"{status:<7} {cid:<5} {entry['title']}{extra}")
