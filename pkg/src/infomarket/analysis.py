"""Demand excess, its Jacobian spectrum, price dynamics, and ex-post welfare."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .agents import cost, utility
from .core import BeliefSet, MarketInstance, PriceVector, as_prices

ZERO_EIG_TOL = 1e-12
DENSE_CHECK_MAX = 16


class InfeasibleError(ValueError):
    def __init__(self, outcome: int, message: str):
        super().__init__(f"outcome {outcome}: {message}")
        self.outcome = outcome


def demand_excess(prices, instance: MarketInstance) -> np.ndarray:
    """Consumption minus production minus renewable in-feed at the unconstrained responses."""
    lam = as_prices(prices)
    total = lam.sum()
    a, b, g = instance.alpha, instance.beta, instance.gamma_u
    demand = (g - total) / b + g / b - lam / (instance.pi_c * b)
    supply = total / a + lam / (instance.pi_p * a)
    return demand - supply - instance.outcomes


@dataclass(frozen=True, eq=False)
class StructuredJacobian:
    """``J = -s 11^T - diag(D)``, kept in factored form."""

    s: float
    D: np.ndarray

    @property
    def size(self) -> int:
        return self.D.size

    def dense(self) -> np.ndarray:
        return -self.s * np.ones((self.size, self.size)) - np.diag(self.D)

    def matvec(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        return -self.s * v.sum() - self.D * v


def jacobian(instance: MarketInstance) -> StructuredJacobian:
    s = 1.0 / instance.alpha + 1.0 / instance.beta
    D = 1.0 / (instance.pi_c * instance.beta) + 1.0 / (instance.pi_p * instance.alpha)
    return StructuredJacobian(s, D)


def _group_equal(values: np.ndarray, rtol: float = 1e-14):
    """Split sorted values into runs of (numerically) equal entries."""
    breaks = np.flatnonzero(np.diff(values) > rtol * np.abs(values[1:])) + 1
    return np.split(values, breaks)


def _secular_roots(d: np.ndarray, weights: np.ndarray, s: float) -> np.ndarray:
    """Roots of ``1 + s * sum(w_k / (d_k - x))`` for strictly increasing ``d``.

    One root lies in each gap ``(d_j, d_{j+1})`` and the last in
    ``(d_m, d_m + s * sum(w))``. Each is bisected in coordinates shifted to its left
    pole so the gap width, not the magnitude of ``d``, sets the resolution.
    """
    m = d.size
    width = np.empty(m)
    width[:-1] = np.diff(d)
    width[-1] = s * weights.sum()
    shift = d[None, :] - d[:, None]  # shift[j, k] = d_k - d_j
    lo = np.zeros(m)
    hi = width.copy()
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        with np.errstate(divide="ignore"):
            f = 1.0 + s * np.sum(weights[None, :] / (shift - mid[:, None]), axis=1)
        up = f > 0
        hi = np.where(up, mid, hi)
        lo = np.where(up, lo, mid)
        if np.all((hi - lo) <= 2 * np.finfo(float).eps * (d + hi)):
            break
    return d + 0.5 * (lo + hi)


def eigenvalues(J: StructuredJacobian, method: str = "secular") -> np.ndarray:
    """Sorted (ascending) spectrum of ``J``.

    ``method="secular"`` works on the factored form: repeated diagonal entries
    deflate to eigenvalues of ``J`` directly and the remaining ones come from the
    secular equation. ``method="dense"`` builds the matrix and calls LAPACK.
    """
    if method == "dense":
        return np.sort(np.linalg.eigvalsh(J.dense()))
    if method != "secular":
        raise ValueError(f"unknown method {method!r}")
    assert J.s > 0 and np.all(J.D > 0), "secular solve needs s > 0 and D > 0"

    groups = _group_equal(np.sort(J.D))
    deflated = np.concatenate([g[1:] for g in groups]) if groups else np.empty(0)
    poles = np.array([g[0] for g in groups])
    weights = np.array([g.size for g in groups], dtype=float)
    roots = _secular_roots(poles, weights, J.s)
    # spectrum of M = diag(D) + s 11^T; J = -M
    return np.sort(-np.concatenate([deflated, roots]))


class Verdict(str, enum.Enum):
    LOCALLY_STABLE = "locally_stable"
    UNSTABLE = "unstable"
    INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True, eq=False)
class StabilityReport:
    eigenvalues: np.ndarray
    min_eig: float
    max_eig: float
    ratio: float
    verdict: Verdict


def classify(eigs: np.ndarray) -> Verdict:
    top = float(np.max(eigs))
    if abs(top) <= ZERO_EIG_TOL:
        return Verdict.INCONCLUSIVE
    return Verdict.UNSTABLE if top > 0 else Verdict.LOCALLY_STABLE


def stability(instance: MarketInstance) -> StabilityReport:
    eigs = eigenvalues(jacobian(instance))
    mags = np.abs(eigs)
    return StabilityReport(
        eigenvalues=eigs,
        min_eig=float(eigs[0]),
        max_eig=float(eigs[-1]),
        ratio=float(mags.max() / mags.min()),
        verdict=classify(eigs),
    )


class FieldSample(NamedTuple):
    point: PriceVector
    velocity: np.ndarray


class Trajectory(NamedTuple):
    points: np.ndarray  # (steps + 1, n)
    times: np.ndarray
    reached: bool  # False when the step cap cut the integration short


class PriceField(NamedTuple):
    samples: list[FieldSample]
    trajectory: Trajectory | None


def velocity(prices, instance: MarketInstance, tau: float) -> np.ndarray:
    return tau * demand_excess(prices, instance)


def integrate_trajectory(
    instance: MarketInstance,
    start,
    tau: float = 1.0,
    tol: float = 1e-6,
    max_steps: int = 100_000,
) -> Trajectory:
    """Fixed-step RK4 on ``dlam/dt = tau z(lam)`` with ``h = 0.01 / tau``."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    h = 0.01 / tau
    x = np.array(as_prices(start), dtype=float)
    f = lambda y: tau * demand_excess(y, instance)  # noqa: E731
    points = [x.copy()]
    reached = bool(np.max(np.abs(demand_excess(x, instance))) <= tol)
    steps = 0
    while not reached and steps < max_steps:
        k1 = f(x)
        k2 = f(x + 0.5 * h * k1)
        k3 = f(x + 0.5 * h * k2)
        k4 = f(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        steps += 1
        points.append(x.copy())
        reached = bool(np.max(np.abs(demand_excess(x, instance))) <= tol)
    return Trajectory(np.array(points), h * np.arange(len(points)), reached)


def price_field(
    instance: MarketInstance,
    grid: Sequence,
    tau: float = 1.0,
    start=None,
    max_steps: int = 100_000,
) -> PriceField:
    """Velocity of the price dynamics at each grid point, plus one trajectory if ``start`` is given."""
    if not tau > 0:
        raise ValueError("tau must be positive")
    samples = []
    for point in grid:
        point = point if isinstance(point, PriceVector) else PriceVector(point)
        samples.append(FieldSample(point, velocity(point, instance, tau)))
    trajectory = None if start is None else integrate_trajectory(instance, start, tau, max_steps=max_steps)
    return PriceField(samples, trajectory)


def directional_speeds(instance: MarketInstance, center, step: float = 0.1, tau: float = 1.0) -> np.ndarray:
    """Speed along each price axis after displacing the center by ``step`` along that axis.

    Near the equilibrium this is ``tau * step * |J_ww|``, the per-direction pull the
    price dynamics exert.
    """
    center = np.asarray(as_prices(center), dtype=float)
    base = velocity(center, instance, tau)
    out = np.empty(center.size)
    for w in range(center.size):
        moved = center.copy()
        moved[w] += step
        out[w] = abs(velocity(moved, instance, tau)[w] - base[w])
    return out


class Recourse(NamedTuple):
    r: np.ndarray
    l: np.ndarray
    multiplier: np.ndarray


def _recourse_one(b: float, alpha: float, beta: float, gamma_u: float, r_box, l_box, outcome: int):
    """max u(l) - c(r) s.t. r - l >= b over boxes; returns (r, l, multiplier)."""
    r_lo, r_hi = r_box
    l_lo, l_hi = l_box
    clamp = lambda v, lo, hi: min(max(v, lo), hi)  # noqa: E731
    r0, l0 = clamp(0.0, r_lo, r_hi), clamp(gamma_u / beta, l_lo, l_hi)
    if r0 - l0 >= b:
        return r0, l0, 0.0
    if r_hi - l_lo < b:
        raise InfeasibleError(outcome, f"balance needs r - l >= {b:.6g} but boxes allow at most {r_hi - l_lo:.6g}")

    def gap(mu):
        return clamp(mu / alpha, r_lo, r_hi) - clamp((gamma_u - mu) / beta, l_lo, l_hi) - b

    # gap is non-decreasing and piecewise linear in mu; walk its breakpoints
    knots = sorted({0.0, *(k for k in (alpha * r_lo, alpha * r_hi, gamma_u - beta * l_hi, gamma_u - beta * l_lo) if k > 0)})
    prev = 0.0
    g_prev = gap(prev)
    for knot in knots[1:]:
        g_knot = gap(knot)
        if g_knot >= 0:
            mu = prev if g_knot == g_prev else prev + (knot - prev) * (-g_prev) / (g_knot - g_prev)
            return clamp(mu / alpha, r_lo, r_hi), clamp((gamma_u - mu) / beta, l_lo, l_hi), mu
        prev, g_prev = knot, g_knot
    raise InfeasibleError(outcome, "no multiplier balances the outcome")


def recourse_dispatch(p: float, d: float, instance: MarketInstance) -> Recourse:
    """Welfare-optimal real-time re-dispatch per outcome for fixed day-ahead quantities."""
    ps, cs = instance.producer_set, instance.consumer_set
    need = d - p - instance.outcomes
    rows = [
        _recourse_one(
            float(need[w]), instance.alpha, instance.beta, instance.gamma_u,
            ps.recourse[w], cs.recourse[w], w,
        )
        for w in range(instance.n_outcomes)
    ]
    r, l, mu = (np.array(col) for col in zip(*rows))
    return Recourse(r, l, mu)


def welfare_per_outcome(dayahead: tuple[float, float], instance: MarketInstance) -> np.ndarray:
    """Realized surplus ``u(d) - c(p) + u(l_w) - c(r_w)`` with welfare-optimal recourse."""
    p, d = (float(v) for v in dayahead)
    (p_lo, p_hi), (d_lo, d_hi) = instance.producer_set.first_stage, instance.consumer_set.first_stage
    if not (p_lo <= p <= p_hi and d_lo <= d <= d_hi):
        raise ValueError("day-ahead decisions lie outside the feasible boxes")
    rec = recourse_dispatch(p, d, instance)
    a, b, g = instance.alpha, instance.beta, instance.gamma_u
    first = utility(d, g, b) - cost(p, a)
    return first + utility(rec.l, g, b) - cost(rec.r, a)


def expected_welfare(per_outcome: np.ndarray, beliefs: BeliefSet | np.ndarray) -> float:
    probs = beliefs.probs if isinstance(beliefs, BeliefSet) else np.asarray(beliefs, dtype=float)
    return float(probs @ np.asarray(per_outcome))
