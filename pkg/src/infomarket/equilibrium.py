"""Equilibrium computation: tatonnement, interior closed form, and direct welfare-QP clearing."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .agents import cost, utility
from .core import DispatchSchedule, MarketInstance, PriceVector, as_prices

log = logging.getLogger(__name__)

DEFAULT_RHO = 1e-5
DEFAULT_EPSILON = 1e-5
DEFAULT_NU_MAX = 1_000_000

# Clarabel tolerances; defaults leave duals accurate only to ~1e-9.
_QP_TOL = dict(tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12, tol_ktratio=1e-10)
_KKT_AGREEMENT = 1e-6


class NumericError(ArithmeticError):
    def __init__(self, iteration: int, message: str = "non-finite iterate"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


class SolverError(RuntimeError):
    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


@dataclass(frozen=True)
class SolverConfig:
    rho: float = DEFAULT_RHO
    epsilon: float = DEFAULT_EPSILON
    nu_max: int = DEFAULT_NU_MAX
    lambda0: PriceVector | np.ndarray | float | None = None
    trace_enabled: bool = False

    def __post_init__(self):
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if int(self.nu_max) != self.nu_max or self.nu_max < 1:
            raise ValueError("nu_max must be an integer >= 1")

    def initial_prices(self, n: int) -> np.ndarray:
        if self.lambda0 is None:
            return np.zeros(n)
        lam = np.broadcast_to(as_prices(self.lambda0), (n,)).copy()
        return np.array(PriceVector(lam).values)


class TraceRow(NamedTuple):
    iteration: int
    residual: float
    day_ahead_price: float


@dataclass(frozen=True, eq=False)
class EquilibriumResult:
    prices: PriceVector
    dispatch: DispatchSchedule
    iterations: int
    converged: bool
    residual: float
    trace: list[TraceRow] | None = field(default=None, repr=False)

    @property
    def day_ahead_price(self) -> float:
        return self.prices.day_ahead


def day_ahead_price(prices) -> float:
    return float(np.sum(as_prices(prices)))


def tatonnement(instance: MarketInstance, config: SolverConfig = SolverConfig()) -> EquilibriumResult:
    """Iterate best responses and projected price steps until every outcome clears.

    Stops at the first iteration where each per-outcome squared imbalance is at most
    ``epsilon`` and returns the prices just updated with the dispatch that triggered
    the stop. Hitting ``nu_max`` returns the last iterate with ``converged=False``.
    """
    n = instance.n_outcomes
    alpha, beta, gam = instance.alpha, instance.beta, instance.gamma_u
    rho, eps = config.rho, config.epsilon
    p_lo, p_hi = instance.producer_set.first_stage
    d_lo, d_hi = instance.consumer_set.first_stage
    r_lo, r_hi = instance.producer_set.recourse_lo, instance.producer_set.recourse_hi
    l_lo, l_hi = instance.consumer_set.recourse_lo, instance.consumer_set.recourse_hi
    r_slope = 1.0 / (instance.pi_p * alpha)
    l_slope = 1.0 / (instance.pi_c * beta)
    sat = gam / beta
    xi = instance.outcomes

    lam = config.initial_prices(n)
    r = np.empty(n)
    l = np.empty(n)
    imb = np.empty(n)
    trace: list[TraceRow] | None = [] if config.trace_enabled else None

    converged = False
    residual = float("inf")
    p = d = 0.0
    nu = 0
    # overflow is detected below and reported as NumericError
    with np.errstate(over="ignore", invalid="ignore"):
        for nu in range(1, int(config.nu_max) + 1):
            total = lam.sum()
            p = min(max(total / alpha, p_lo), p_hi)
            d = min(max((gam - total) / beta, d_lo), d_hi)
            np.multiply(lam, r_slope, out=r)
            np.clip(r, r_lo, r_hi, out=r)
            np.multiply(lam, l_slope, out=l)
            np.subtract(sat, l, out=l)
            np.clip(l, l_lo, l_hi, out=l)

            np.subtract(r, l, out=imb)
            imb += xi
            imb += p - d
            worst = np.abs(imb).max()
            residual = worst * worst

            lam -= rho * imb
            np.maximum(lam, 0.0, out=lam)
            if not np.isfinite(residual) or not np.isfinite(total):
                raise NumericError(nu)
            if trace is not None:
                trace.append(TraceRow(nu, float(residual), float(lam.sum())))
            if residual <= eps:
                converged = True
                break

    if not converged:
        log.info("tatonnement stopped at nu_max=%d with residual %.3g", config.nu_max, residual)
    return EquilibriumResult(
        prices=PriceVector(lam.copy()),
        dispatch=DispatchSchedule(p, r.copy(), d, l.copy()),
        iterations=nu,
        converged=converged,
        residual=float(residual),
        trace=trace,
    )


class AnalyticEquilibrium(NamedTuple):
    prices: np.ndarray
    interior: bool
    dispatch: DispatchSchedule


def interior_prices(instance: MarketInstance) -> np.ndarray:
    """Root of the unconstrained demand-excess system, solved in O(n).

    The system is ``(s 11^T + diag(D)) lam = a`` with ``s = 1/alpha + 1/beta``,
    ``D_w = 1/(pi_c beta) + 1/(pi_p alpha)`` and ``a_w = 2 gamma/beta - xi_w``; the
    rank-one term is eliminated through the scalar total ``sum(lam)``.
    """
    s = 1.0 / instance.alpha + 1.0 / instance.beta
    w = 1.0 / (1.0 / (instance.pi_c * instance.beta) + 1.0 / (instance.pi_p * instance.alpha))
    a = 2.0 * instance.gamma_u / instance.beta - instance.outcomes
    denom = 1.0 + s * w.sum()
    assert denom > 0, "demand-excess system is singular"
    total = float(w @ a) / denom
    return w * (a - s * total)


def _unclamped_dispatch(lam: np.ndarray, instance: MarketInstance) -> DispatchSchedule:
    total = lam.sum()
    sat = instance.gamma_u / instance.beta
    return DispatchSchedule(
        total / instance.alpha,
        lam / (instance.pi_p * instance.alpha),
        (instance.gamma_u - total) / instance.beta,
        sat - lam / (instance.pi_c * instance.beta),
    )


def _strictly_inside(dispatch: DispatchSchedule, instance: MarketInstance) -> bool:
    def inside(first, rec, box):
        lo, hi = box.first_stage
        return lo < first < hi and bool(np.all(rec > box.recourse_lo)) and bool(np.all(rec < box.recourse_hi))

    return inside(dispatch.p, dispatch.r, instance.producer_set) and inside(dispatch.d, dispatch.l, instance.consumer_set)


def analytic_equilibrium(instance: MarketInstance) -> AnalyticEquilibrium:
    """Closed-form equilibrium assuming no agent constraint binds.

    ``interior`` is False when the prices come out negative or the implied dispatch
    leaves the boxes; the prices are then not an equilibrium certificate.
    """
    lam = interior_prices(instance)
    dispatch = _unclamped_dispatch(lam, instance)
    interior = bool(np.all(lam >= 0)) and _strictly_inside(dispatch, instance)
    return AnalyticEquilibrium(lam, interior, dispatch)


def total_welfare(dispatch: DispatchSchedule, instance: MarketInstance, pi_cost, pi_util) -> float:
    """First-stage surplus plus probability-weighted recourse utility minus recourse cost."""
    u = lambda x: utility(x, instance.gamma_u, instance.beta)  # noqa: E731
    c = lambda x: cost(x, instance.alpha)  # noqa: E731
    return float(u(dispatch.d) - c(dispatch.p) + np.dot(pi_util, u(dispatch.l)) - np.dot(pi_cost, c(dispatch.r)))


def _welfare_qp(instance: MarketInstance, pi_cost: np.ndarray, pi_util: np.ndarray):
    """Maximize welfare with recourse cost weighted by ``pi_cost`` and utility by ``pi_util``.

    Returns (dispatch, balance duals, objective). Equal weights give the operator's
    stochastic clearing; producer/consumer beliefs give the equilibrium potential.
    """
    import cvxpy as cp

    n = instance.n_outcomes
    a, b, g = instance.alpha, instance.beta, instance.gamma_u
    ps, cs = instance.producer_set, instance.consumer_set
    p, d = cp.Variable(), cp.Variable()
    r, l = cp.Variable(n), cp.Variable(n)
    objective = (
        g * d - 0.5 * b * cp.square(d) - 0.5 * a * cp.square(p)
        + pi_util @ (g * l - 0.5 * b * cp.square(l))
        - pi_cost @ (0.5 * a * cp.square(r))
    )
    balance = p + r + instance.outcomes - d - l >= 0
    constraints = [
        balance,
        p >= ps.first_stage[0], p <= ps.first_stage[1],
        r >= ps.recourse_lo, r <= ps.recourse_hi,
        d >= cs.first_stage[0], d <= cs.first_stage[1],
        l >= cs.recourse_lo, l <= cs.recourse_hi,
    ]
    problem = cp.Problem(cp.Maximize(objective), constraints)
    try:
        problem.solve(solver=cp.CLARABEL, **_QP_TOL)
    except cp.SolverError as exc:
        raise SolverError(f"welfare QP failed: {exc}") from exc
    if problem.status != cp.OPTIMAL:
        raise SolverError(f"welfare QP ended with status {problem.status}")
    duals = np.maximum(np.asarray(balance.dual_value, dtype=float).reshape(n), 0.0)
    dispatch = DispatchSchedule(
        float(np.clip(p.value, *ps.first_stage)),
        np.clip(r.value, ps.recourse_lo, ps.recourse_hi),
        float(np.clip(d.value, *cs.first_stage)),
        np.clip(l.value, cs.recourse_lo, cs.recourse_hi),
    )
    return dispatch, duals, total_welfare(dispatch, instance, pi_cost, pi_util)


def potential_equilibrium(instance: MarketInstance) -> EquilibriumResult:
    """Exact equilibrium with private beliefs, from the concave potential it maximizes.

    The producer's and consumer's optimality conditions together with price
    complementarity are the KKT system of a single welfare problem whose recourse
    cost is weighted by the producer's beliefs and recourse utility by the
    consumer's. Its balance multipliers are the equilibrium prices.
    """
    dispatch, duals, _ = _welfare_qp(instance, instance.pi_p, instance.pi_c)
    imbalance = dispatch.imbalance(instance.outcomes)
    residual = float(np.max(np.square(imbalance[duals > 0]), initial=0.0))
    return EquilibriumResult(PriceVector(duals), dispatch, 0, True, residual)


class CentralizedResult(NamedTuple):
    dispatch: DispatchSchedule
    duals: PriceVector
    welfare: float
    kkt_gap: float | None


def centralized_clear(instance: MarketInstance) -> CentralizedResult:
    """Operator's two-stage stochastic clearing under its own beliefs.

    Solved directly as a QP. When the interior KKT solution is feasible it is used
    as a cross-check and the maximum dual gap is reported in ``kkt_gap``.
    """
    if instance.operator_beliefs is None:
        raise ValueError("centralized clearing needs operator_beliefs")
    pi = instance.operator_beliefs.probs
    dispatch, duals, welfare = _welfare_qp(instance, pi, pi)

    kkt_gap = None
    common = instance.with_common_beliefs(instance.operator_beliefs)
    closed = analytic_equilibrium(common)
    if closed.interior:
        kkt_gap = float(np.max(np.abs(closed.prices - duals)))
        if kkt_gap > _KKT_AGREEMENT:
            raise SolverError(f"QP duals disagree with interior KKT solve by {kkt_gap:.3g}", residual=kkt_gap)
    return CentralizedResult(dispatch, PriceVector(duals), welfare, kkt_gap)

