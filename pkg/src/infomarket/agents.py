"""Best responses of producer and consumer, and the price-setter's projected update.

Both agents' objectives are separable strictly concave quadratics over boxes, so the
maximizer is the stationary point clamped coordinate-wise.
"""

from __future__ import annotations

import numpy as np

from .core import DispatchSchedule, MarketInstance, PriceVector, as_prices


def producer_best_response(prices, instance: MarketInstance) -> tuple[float, np.ndarray]:
    lam = as_prices(prices)
    box = instance.producer_set
    lo, hi = box.first_stage
    p = min(max(lam.sum() / instance.alpha, lo), hi)
    r = np.clip(lam / (instance.pi_p * instance.alpha), box.recourse_lo, box.recourse_hi)
    return float(p), r


def consumer_best_response(prices, instance: MarketInstance) -> tuple[float, np.ndarray]:
    lam = as_prices(prices)
    box = instance.consumer_set
    lo, hi = box.first_stage
    d = min(max((instance.gamma_u - lam.sum()) / instance.beta, lo), hi)
    sat = instance.gamma_u / instance.beta
    l = np.clip(sat - lam / (instance.pi_c * instance.beta), box.recourse_lo, box.recourse_hi)
    return float(d), l


def best_responses(prices, instance: MarketInstance) -> DispatchSchedule:
    p, r = producer_best_response(prices, instance)
    d, l = consumer_best_response(prices, instance)
    return DispatchSchedule(p, r, d, l)


def price_update(prices, dispatch: DispatchSchedule, instance: MarketInstance, rho: float) -> PriceVector:
    """One tatonnement step: raise prices under shortage, lower them under surplus, never below zero."""
    if not rho > 0:
        raise ValueError(f"rho must be positive, got {rho}")
    lam = as_prices(prices)
    bracket = dispatch.imbalance(instance.outcomes)
    return PriceVector(np.maximum(0.0, lam - rho * bracket))


# Objectives and gradients, written with prices already multiplied through by the
# probabilities so nothing divides by pi.

def cost(x, alpha: float):
    return 0.5 * alpha * np.square(x)


def utility(x, gamma_u: float, beta: float):
    return gamma_u * np.asarray(x) - 0.5 * beta * np.square(x)


def producer_objective(p: float, r, prices, instance: MarketInstance) -> float:
    lam = as_prices(prices)
    r = np.asarray(r, dtype=float)
    return float(np.sum(lam * (p + r) - instance.pi_p * cost(r, instance.alpha)) - cost(p, instance.alpha))


def consumer_objective(d: float, l, prices, instance: MarketInstance) -> float:
    lam = as_prices(prices)
    l = np.asarray(l, dtype=float)
    u = lambda x: utility(x, instance.gamma_u, instance.beta)  # noqa: E731
    return float(np.sum(instance.pi_c * u(l) - lam * (d + l)) + u(d))


def producer_gradient(p: float, r, prices, instance: MarketInstance) -> tuple[float, np.ndarray]:
    lam = as_prices(prices)
    return float(lam.sum() - instance.alpha * p), lam - instance.pi_p * instance.alpha * np.asarray(r)


def consumer_gradient(d: float, l, prices, instance: MarketInstance) -> tuple[float, np.ndarray]:
    lam = as_prices(prices)
    g, b = instance.gamma_u, instance.beta
    return float(g - b * d - lam.sum()), instance.pi_c * (g - b * np.asarray(l)) - lam
