import numpy as np
import pytest

from conftest import fast_solver, random_instance, two_outcome
from infomarket.analysis import demand_excess
from infomarket.core import BeliefSet, DispatchSchedule, MarketInstance, PriceVector
from infomarket.equilibrium import (
    NumericError,
    SolverConfig,
    analytic_equilibrium,
    centralized_clear,
    day_ahead_price,
    interior_prices,
    potential_equilibrium,
    tatonnement,
    total_welfare,
)

BASE_PRICES = np.array([25 / 12, 11 / 6])


def _check_result_invariants(res, inst, config):
    assert np.all(np.asarray(res.prices) >= 0)
    assert res.dispatch.within(inst)
    if res.converged:
        assert res.residual <= config.epsilon
        imbalance = res.dispatch.imbalance(inst.outcomes)
        lam = np.asarray(res.prices)
        # projection fixed point: either the price sits at zero or the outcome (nearly) clears
        assert np.all((lam <= config.rho * np.sqrt(config.epsilon)) | (np.abs(imbalance) <= np.sqrt(config.epsilon)))


def test_tatonnement_default_settings_two_outcome(base_market):
    config = SolverConfig()
    res = tatonnement(base_market, config)
    assert res.converged
    np.testing.assert_allclose(np.asarray(res.prices), BASE_PRICES, atol=1e-3)
    _check_result_invariants(res, base_market, config)


def test_tatonnement_tight_tolerance_hits_closed_form(base_market):
    res = tatonnement(base_market, fast_solver(base_market))
    np.testing.assert_allclose(np.asarray(res.prices), BASE_PRICES, atol=1e-8)


def test_tatonnement_hundred_outcomes_matches_centralized(reference_samples):
    n = len(reference_samples)
    inst = MarketInstance(1.5, 0.3, 5.0, reference_samples.values, BeliefSet.uniform(n), BeliefSet.uniform(n),
                          BeliefSet.uniform(n))
    config = SolverConfig()
    res = tatonnement(inst, config)
    assert res.converged
    _check_result_invariants(res, inst, config)
    central = centralized_clear(inst)
    assert np.max(np.abs(np.asarray(res.prices) - np.asarray(central.duals))) <= 1e-4


def test_tatonnement_non_convergence_is_a_result(base_market):
    res = tatonnement(base_market, SolverConfig(nu_max=5))
    assert not res.converged
    assert res.iterations == 5
    assert res.residual > 1e-5


def test_tatonnement_trace(base_market):
    res = tatonnement(base_market, SolverConfig(rho=1e-2, epsilon=1e-8, trace_enabled=True))
    assert res.trace is not None and len(res.trace) == res.iterations
    assert [t.iteration for t in res.trace] == list(range(1, res.iterations + 1))
    assert res.trace[-1].residual == res.residual
    assert res.trace[-1].day_ahead_price == pytest.approx(res.day_ahead_price)


def test_tatonnement_numeric_error(base_market):
    with pytest.raises(NumericError) as info:
        tatonnement(base_market, SolverConfig(rho=1e308, nu_max=100))
    assert info.value.iteration >= 1


def test_solver_config_invariants():
    for bad in (dict(rho=0), dict(epsilon=-1), dict(nu_max=0), dict(nu_max=2.5)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)
    assert SolverConfig(lambda0=1.5).initial_prices(3).tolist() == [1.5, 1.5, 1.5]
    with pytest.raises(ValueError):
        SolverConfig(lambda0=[-1.0, 0.0]).initial_prices(2)


def test_analytic_two_outcome(base_market):
    eq = analytic_equilibrium(base_market)
    assert eq.interior
    np.testing.assert_allclose(eq.prices, BASE_PRICES, atol=1e-12)
    assert day_ahead_price(eq.prices) == pytest.approx(47 / 12, abs=1e-12)


def test_analytic_matches_dense_solve_random():
    rng = np.random.default_rng(1)
    for _ in range(50):
        inst = random_instance(rng, int(rng.integers(1, 60)))
        s = 1 / inst.alpha + 1 / inst.beta
        D = 1 / (inst.pi_c * inst.beta) + 1 / (inst.pi_p * inst.alpha)
        M = s * np.ones((inst.n_outcomes,) * 2) + np.diag(D)
        oracle = np.linalg.solve(M, 2 * inst.gamma_u / inst.beta - inst.outcomes)
        lam = interior_prices(inst)
        np.testing.assert_allclose(lam, oracle, rtol=1e-10, atol=1e-12)
        assert np.max(np.abs(demand_excess(lam, inst))) <= 1e-8


def test_analytic_identical_outcomes_equal_prices():
    n = 6
    inst = MarketInstance(1.5, 0.3, 5.0, np.full(n, 1.7), BeliefSet.uniform(n), BeliefSet.uniform(n))
    lam = analytic_equilibrium(inst).prices
    np.testing.assert_allclose(lam, lam[0], rtol=1e-14)


def test_analytic_confident_producer_drives_high_price_down():
    eq = analytic_equilibrium(two_outcome(0.99, 0.5))
    assert eq.prices[1] < 0.3 or not eq.interior


def test_analytic_flags_non_interior_case():
    assert not analytic_equilibrium(two_outcome(0.01, 0.99)).interior


def test_day_ahead_price_examples():
    assert day_ahead_price(np.zeros(4)) == 0.0
    lam = np.array([0.3, 1.2, 4.0])
    assert day_ahead_price(lam[::-1]) == day_ahead_price(lam) == pytest.approx(5.5)
    assert day_ahead_price(PriceVector(lam)) == pytest.approx(5.5)


def test_potential_equilibrium_matches_tatonnement_asymmetric():
    rng = np.random.default_rng(4)
    for _ in range(20):
        inst = random_instance(rng, int(rng.integers(2, 30)))
        exact = potential_equilibrium(inst)
        iterative = tatonnement(inst, fast_solver(inst))
        assert iterative.converged
        np.testing.assert_allclose(np.asarray(exact.prices), np.asarray(iterative.prices), atol=1e-6)
        for a, b in ((exact.dispatch.r, iterative.dispatch.r), (exact.dispatch.l, iterative.dispatch.l)):
            np.testing.assert_allclose(a, b, atol=1e-4)
        assert exact.dispatch.p == pytest.approx(iterative.dispatch.p, abs=1e-4)


def test_potential_equilibrium_matches_tatonnement_with_active_bounds():
    # opposed confident beliefs push the consumer's recourse onto its lower bound
    inst = two_outcome(0.01, 0.99)
    exact = potential_equilibrium(inst)
    iterative = tatonnement(inst, fast_solver(inst))
    assert iterative.converged
    np.testing.assert_allclose(np.asarray(exact.prices), np.asarray(iterative.prices), atol=1e-6)
    assert np.any(exact.dispatch.l <= 1e-9)


def test_centralized_uniform_two_outcome():
    inst = two_outcome()
    inst = inst.with_common_beliefs(inst.producer_beliefs)
    central = centralized_clear(inst)
    np.testing.assert_allclose(np.asarray(central.duals), BASE_PRICES, atol=1e-8)
    assert central.kkt_gap is not None and central.kkt_gap <= 1e-8


def test_centralized_single_outcome_grid_oracle():
    alpha, beta, gamma = 1.5, 0.3, 5.0
    one = BeliefSet(np.array([1.0]))
    inst = MarketInstance(alpha, beta, gamma, np.array([0.0]), one, one, one)
    central = centralized_clear(inst)
    # with one outcome the balanced quantity Q splits evenly between stages on both sides
    Q = np.arange(0.0, 20.0, 1e-4)
    welfare = 2 * (gamma * Q / 2 - beta * (Q / 2) ** 2 / 2) - 2 * alpha * (Q / 2) ** 2 / 2
    q_best = Q[np.argmax(welfare)]
    assert central.welfare == pytest.approx(welfare.max(), abs=1e-6)
    assert central.dispatch.p + central.dispatch.r[0] == pytest.approx(q_best, abs=1e-4)
    assert float(np.asarray(central.duals)[0]) == pytest.approx(gamma - beta * q_best / 2, abs=1e-4)


def test_centralized_dominates_random_feasible_dispatches():
    rng = np.random.default_rng(8)
    inst = random_instance(rng, 5, common=True)
    central = centralized_clear(inst)
    pi = inst.operator_beliefs.probs
    count = 0
    while count < 1000:
        p, d = rng.uniform(0, 10, 2)
        r = rng.uniform(0, 10, 5)
        l = np.minimum(p + r + inst.outcomes - d, rng.uniform(0, 20, 5))
        if np.any(l < 0):
            continue
        count += 1
        assert central.welfare >= total_welfare(DispatchSchedule(p, r, d, l), inst, pi, pi) - 1e-9


def test_centralized_requires_operator_beliefs(base_market):
    with pytest.raises(ValueError):
        centralized_clear(base_market)
