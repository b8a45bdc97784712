"""Domain types for the two-settlement market: beliefs, feasible boxes, prices, dispatch."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any, Mapping, Sequence

import numpy as np

SIMPLEX_TOL = 1e-12
MIN_PROB = 1e-9
DEFAULT_BOUNDS = (0.0, 50.0)


class ValidationError(ValueError):
    """Raised when a domain object is constructed from data that violates its invariants."""

    def __init__(self, violations: Sequence["Violation"]):
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


@dataclass(frozen=True)
class Violation:
    field: str
    rule: str

    def __str__(self) -> str:
        return f"{self.field}: {self.rule}"


def _frozen(values: Any, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


def _belief_violations(name: str, probs: Any, n: int | None) -> list[Violation]:
    out = []
    arr = np.asarray(probs, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        return [Violation(name, "must be a non-empty vector")]
    if n is not None and arr.size != n:
        out.append(Violation(name, f"length {arr.size} does not match {n} outcomes"))
    if not np.all(np.isfinite(arr)):
        out.append(Violation(name, "entries must be finite"))
        return out
    if np.any(arr <= 0):
        out.append(Violation(name, "entries must be strictly positive"))
    total = float(arr.sum())
    if abs(total - 1.0) > SIMPLEX_TOL:
        out.append(Violation(name, f"simplex sum != 1 (got {total:.15g})"))
    return out


@dataclass(frozen=True, eq=False)
class BeliefSet:
    """Probability vector one agent assigns to the outcome set."""

    probs: np.ndarray

    def __post_init__(self):
        violations = _belief_violations("probs", self.probs, None)
        if violations:
            raise ValidationError(violations)
        object.__setattr__(self, "probs", _frozen(self.probs))

    @classmethod
    def uniform(cls, n: int) -> "BeliefSet":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def from_weights(cls, weights: Any, floor: float = MIN_PROB) -> "BeliefSet":
        """Normalize non-negative weights, flooring tiny entries so every outcome keeps mass."""
        w = np.asarray(weights, dtype=float)
        if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValidationError([Violation("weights", "must be a non-empty finite non-negative vector")])
        if w.sum() <= 0:
            raise ValidationError([Violation("weights", "must have positive total mass")])
        w = np.maximum(w / w.sum(), floor)
        w = w / w.sum()
        # one more pass so the sum lands on 1 to rounding
        return cls(w / w.sum())

    def __len__(self) -> int:
        return self.probs.size

    def __eq__(self, other: object) -> bool:
        return isinstance(other, BeliefSet) and np.array_equal(self.probs, other.probs)

    __hash__ = None  # type: ignore[assignment]


def _interval_violations(name: str, lo: float, hi: float) -> list[Violation]:
    if not (np.isfinite(lo) and np.isfinite(hi)):
        return [Violation(name, "bounds must be finite")]
    if lo > hi:
        return [Violation(name, f"lower bound {lo} exceeds upper bound {hi}")]
    return []


@dataclass(frozen=True, eq=False)
class BoxSet:
    """Axis-aligned feasible set: one interval for the day-ahead decision and one per outcome for recourse."""

    first_stage: tuple[float, float]
    recourse: np.ndarray  # shape (n_outcomes, 2)

    def __post_init__(self):
        lo, hi = (float(v) for v in self.first_stage)
        rec = np.array(self.recourse, dtype=float)
        if rec.ndim == 1 and rec.size == 2:
            rec = rec.reshape(1, 2)
        violations = _interval_violations("first_stage", lo, hi)
        if rec.ndim != 2 or rec.shape[1] != 2:
            violations.append(Violation("recourse", "must be a list of (lo, hi) pairs"))
        else:
            for i, (a, b) in enumerate(rec):
                violations += _interval_violations(f"recourse[{i}]", a, b)
        if violations:
            raise ValidationError(violations)
        object.__setattr__(self, "first_stage", (lo, hi))
        object.__setattr__(self, "recourse", _frozen(rec))

    @classmethod
    def uniform(cls, n: int, lo: float = DEFAULT_BOUNDS[0], hi: float = DEFAULT_BOUNDS[1]) -> "BoxSet":
        return cls((lo, hi), np.tile([lo, hi], (n, 1)))

    @property
    def recourse_lo(self) -> np.ndarray:
        return self.recourse[:, 0]

    @property
    def recourse_hi(self) -> np.ndarray:
        return self.recourse[:, 1]

    def __len__(self) -> int:
        return self.recourse.shape[0]

    def contains(self, first: float, rec: np.ndarray, tol: float = 1e-9) -> bool:
        lo, hi = self.first_stage
        rec = np.asarray(rec, dtype=float)
        return (
            lo - tol <= first <= hi + tol
            and bool(np.all(rec >= self.recourse_lo - tol))
            and bool(np.all(rec <= self.recourse_hi + tol))
        )


@dataclass(frozen=True, eq=False)
class PriceVector:
    """Per-outcome prices; the day-ahead price is their sum."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=float).reshape(-1)
        if not np.all(np.isfinite(arr)):
            raise ValidationError([Violation("prices", "entries must be finite")])
        if np.any(arr < 0):
            raise ValidationError([Violation("prices", "entries must be non-negative")])
        object.__setattr__(self, "values", _frozen(arr))

    @classmethod
    def zeros(cls, n: int) -> "PriceVector":
        return cls(np.zeros(n))

    @property
    def day_ahead(self) -> float:
        return float(self.values.sum())

    def __len__(self) -> int:
        return self.values.size

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True, eq=False)
class DispatchSchedule:
    p: float
    r: np.ndarray
    d: float
    l: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "p", float(self.p))
        object.__setattr__(self, "d", float(self.d))
        object.__setattr__(self, "r", _frozen(self.r))
        object.__setattr__(self, "l", _frozen(self.l))

    @property
    def mismatch(self) -> float:
        """Day-ahead consumption minus day-ahead production."""
        return self.d - self.p

    def imbalance(self, outcomes: np.ndarray) -> np.ndarray:
        """Per-outcome supply surplus p + r + xi - d - l (the balance constraint bracket)."""
        return self.p + self.r + np.asarray(outcomes) - self.d - self.l

    def within(self, instance: "MarketInstance", tol: float = 1e-9) -> bool:
        return instance.producer_set.contains(self.p, self.r, tol) and instance.consumer_set.contains(
            self.d, self.l, tol
        )


@dataclass(frozen=True, eq=False)
class MarketInstance:
    """One producer, one consumer and a renewable in-feed over a finite outcome set.

    Producer cost is ``alpha * x**2 / 2``; consumer utility is ``gamma_u * x - beta * x**2 / 2``.
    Box sets default to ``[0, 50]`` for every variable.
    """

    alpha: float
    beta: float
    gamma_u: float
    outcomes: np.ndarray
    producer_beliefs: BeliefSet
    consumer_beliefs: BeliefSet
    operator_beliefs: BeliefSet | None = None
    producer_set: BoxSet | None = None
    consumer_set: BoxSet | None = None

    def __post_init__(self):
        outcomes = np.array(self.outcomes, dtype=float).reshape(-1)
        object.__setattr__(self, "outcomes", _frozen(outcomes))
        n = outcomes.size
        for name in ("producer_beliefs", "consumer_beliefs", "operator_beliefs"):
            value = getattr(self, name)
            if value is not None and not isinstance(value, BeliefSet):
                violations = _belief_violations(name, value, n)
                if violations:
                    raise ValidationError(violations)
                object.__setattr__(self, name, BeliefSet(value))
        for name in ("producer_set", "consumer_set"):
            if getattr(self, name) is None:
                object.__setattr__(self, name, BoxSet.uniform(n))
        violations = validate(self)
        if violations:
            raise ValidationError(violations)

    @property
    def n_outcomes(self) -> int:
        return self.outcomes.size

    @property
    def pi_p(self) -> np.ndarray:
        return self.producer_beliefs.probs

    @property
    def pi_c(self) -> np.ndarray:
        return self.consumer_beliefs.probs

    def replace(self, **changes) -> "MarketInstance":
        return replace(self, **changes)

    def with_common_beliefs(self, beliefs: BeliefSet) -> "MarketInstance":
        """Everyone (producer, consumer, operator) holds the same distribution."""
        return replace(self, producer_beliefs=beliefs, consumer_beliefs=beliefs, operator_beliefs=beliefs)


def validate(instance: MarketInstance | Mapping[str, Any]) -> list[Violation]:
    """List every invariant violation of a market description; never raises.

    Accepts either a constructed :class:`MarketInstance` or a raw mapping with the
    same field names, so callers can diagnose data before construction.
    """
    if isinstance(instance, MarketInstance):
        get = lambda k: getattr(instance, k)  # noqa: E731
    else:
        get = lambda k: instance.get(k)  # noqa: E731

    out: list[Violation] = []
    for name in ("alpha", "beta", "gamma_u"):
        value = get(name)
        try:
            ok = value is not None and np.isfinite(float(value)) and float(value) > 0
        except (TypeError, ValueError):
            ok = False
        if not ok:
            out.append(Violation(name, f"{name} must be positive"))

    try:
        outcomes = np.asarray(get("outcomes"), dtype=float).reshape(-1)
    except (TypeError, ValueError):
        outcomes = np.empty(0)
    n = outcomes.size if outcomes.size else None
    if n is None:
        out.append(Violation("outcomes", "must be a non-empty vector"))
    else:
        if not np.all(np.isfinite(outcomes)):
            out.append(Violation("outcomes", "entries must be finite"))
        elif np.any(outcomes < 0):
            out.append(Violation("outcomes", "renewable output must be non-negative"))

    for name in ("producer_beliefs", "consumer_beliefs", "operator_beliefs"):
        value = get(name)
        if value is None:
            if name != "operator_beliefs":
                out.append(Violation(name, "missing"))
            continue
        probs = value.probs if isinstance(value, BeliefSet) else value
        try:
            out += _belief_violations(name, probs, n)
        except (TypeError, ValueError):
            out.append(Violation(name, "must be a numeric vector"))

    for name in ("producer_set", "consumer_set"):
        value = get(name)
        if value is None:
            continue
        if not isinstance(value, BoxSet):
            try:
                value = BoxSet(**value) if isinstance(value, Mapping) else BoxSet(*value)
            except ValidationError as exc:
                out += [Violation(f"{name}.{v.field}", v.rule) for v in exc.violations]
                continue
            except (TypeError, ValueError):
                out.append(Violation(name, "must provide first_stage and recourse intervals"))
                continue
        if n is not None and len(value) != n:
            out.append(Violation(name, f"recourse has {len(value)} intervals for {n} outcomes"))
    return out


def as_prices(prices: PriceVector | Sequence[float] | np.ndarray) -> np.ndarray:
    """Plain float array view of a price argument."""
    if isinstance(prices, PriceVector):
        return prices.values
    return np.asarray(prices, dtype=float).reshape(-1)
