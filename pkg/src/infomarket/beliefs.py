"""Reference renewable sample, probability weighting of its CDF, and moment calibration.

Sampling uses numpy's PCG64 generator (``numpy.random.default_rng(seed)``) and its
``normal`` method, so a given seed is bit-reproducible for a fixed numpy version.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.optimize import brentq

from .core import MIN_PROB, BeliefSet

DEFAULT_SEED = 8495
REFERENCE_N = 100
REFERENCE_MEAN = 1.5
REFERENCE_VARIANCE = 0.25

PARAM_BOUNDS = (1e-3, 1e3)
MOMENT_TOL = 1e-3

REFERENCE_LABEL = "R"

# Target moments of the labeled producer distributions, ordered as displayed
# (largest upward tweak first). ``None`` marks the reference itself.
MEAN_FAMILY: tuple[tuple[str, float | None], ...] = (
    ("mu3_up", 2.02),
    ("mu2_up", 1.79),
    ("mu1_up", 1.65),
    (REFERENCE_LABEL, None),
    ("mu1_down", 1.34),
    ("mu2_down", 1.22),
    ("mu3_down", 1.07),
)
VARIANCE_FAMILY: tuple[tuple[str, float | None], ...] = (
    ("sigma3_up", 1.62),
    ("sigma2_up", 0.92),
    ("sigma1_up", 0.54),
    (REFERENCE_LABEL, None),
    ("sigma1_down", 0.10),
    ("sigma2_down", 0.04),
    ("sigma3_down", 0.02),
)
FAMILIES = {"mean": MEAN_FAMILY, "variance": VARIANCE_FAMILY}


class CalibrationError(ValueError):
    def __init__(self, message: str, best: "Calibration | None" = None):
        super().__init__(message)
        self.best = best


@dataclass(frozen=True, eq=False)
class SampleSet:
    values: np.ndarray
    seed: int | None
    source_mean: float
    source_variance: float

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim != 1 or values.size < 2:
            raise ValueError("a sample set needs at least two outcomes")
        if np.any(np.diff(values) < 0):
            raise ValueError("sample values must be sorted ascending")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size


@dataclass(frozen=True)
class WeightingParams:
    delta: float = 1.0
    gamma_w: float = 1.0

    def __post_init__(self):
        if not (self.delta > 0 and self.gamma_w > 0):
            raise ValueError(f"weighting parameters must be positive, got {self}")

    @property
    def is_identity(self) -> bool:
        return self.delta == 1.0 and self.gamma_w == 1.0


class Calibration(NamedTuple):
    params: WeightingParams
    mean: float
    variance: float


def sample_reference(
    n: int = REFERENCE_N,
    mean: float = REFERENCE_MEAN,
    variance: float = REFERENCE_VARIANCE,
    seed: int = DEFAULT_SEED,
) -> SampleSet:
    """Draw ``n`` normal renewable outcomes, clamp negatives to zero and sort them."""
    if int(n) != n or n < 2:
        raise ValueError(f"n must be an integer >= 2, got {n}")
    if not variance > 0:
        raise ValueError(f"variance must be positive, got {variance}")
    rng = np.random.default_rng(seed)
    draws = rng.normal(mean, np.sqrt(variance), int(n))
    return SampleSet(np.sort(np.maximum(draws, 0.0)), seed, float(mean), float(variance))


def weight_cdf(F, params: WeightingParams):
    """Weighted CDF ``delta F^g / (delta F^g + (1 - F)^g)``; works on scalars and arrays."""
    F = np.asarray(F, dtype=float)
    if np.any((F < 0) | (F > 1)):
        raise ValueError("CDF values must lie in [0, 1]")
    g = params.gamma_w
    num = params.delta * F**g
    den = num + (1.0 - F) ** g
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / den, 0.0)
    out = np.where(F == 0, 0.0, np.where(F == 1, 1.0, out))
    return float(out) if out.ndim == 0 else out


def discretize(samples: SampleSet | int, params: WeightingParams) -> BeliefSet:
    """Probabilities over sorted outcomes from differences of the weighted empirical CDF.

    The i-th sorted sample sits at empirical level i/n, so identity weighting gives
    exactly uniform probabilities.
    """
    n = samples if isinstance(samples, int) else len(samples)
    if params.is_identity:
        return BeliefSet.uniform(n)
    levels = np.arange(n + 1) / n
    phi = weight_cdf(levels, params)
    return BeliefSet.from_weights(np.diff(phi), floor=MIN_PROB)


def weighted_stats(samples: SampleSet | np.ndarray, beliefs: BeliefSet | np.ndarray) -> tuple[float, float]:
    x = samples.values if isinstance(samples, SampleSet) else np.asarray(samples, dtype=float)
    p = beliefs.probs if isinstance(beliefs, BeliefSet) else np.asarray(beliefs, dtype=float)
    if x.shape != p.shape:
        raise ValueError(f"length mismatch: {x.size} outcomes vs {p.size} probabilities")
    mean = float(p @ x)
    return mean, float(p @ (x - mean) ** 2)


def _achieved(samples: SampleSet, params: WeightingParams) -> Calibration:
    mean, var = weighted_stats(samples, discretize(samples, params))
    return Calibration(params, mean, var)


def calibrate(samples: SampleSet, *, mean: float | None = None, variance: float | None = None) -> Calibration:
    """Find weighting parameters that hit one target moment.

    A mean target moves ``delta`` with ``gamma_w = 1``; a variance target moves
    ``gamma_w`` with ``delta = 1``. The search runs in log-space over [1e-3, 1e3].
    """
    if (mean is None) == (variance is None):
        raise ValueError("give exactly one of mean= or variance=")
    if variance is not None and not variance > 0:
        raise ValueError("target variance must be positive")

    if mean is not None:
        target, which = float(mean), 0
        make = lambda t: WeightingParams(delta=float(np.exp(t)))  # noqa: E731
    else:
        target, which = float(variance), 1
        make = lambda t: WeightingParams(gamma_w=float(np.exp(t)))  # noqa: E731

    def gap(t: float) -> float:
        return _achieved(samples, make(t))[1 + which] - target

    lo, hi = np.log(PARAM_BOUNDS[0]), np.log(PARAM_BOUNDS[1])
    if abs(gap(0.0)) <= MOMENT_TOL * 1e-3:
        return _achieved(samples, WeightingParams())
    g_lo, g_hi = gap(lo), gap(hi)
    if np.sign(g_lo) == np.sign(g_hi):
        best = min((lo, hi), key=lambda t: abs(gap(t)))
        achieved = _achieved(samples, make(best))
        kind = "mean" if which == 0 else "variance"
        raise CalibrationError(
            f"target {kind} {target} unreachable within parameter bounds {PARAM_BOUNDS}; "
            f"best achieved {achieved[1 + which]:.6g}",
            best=achieved,
        )
    root = brentq(gap, lo, hi, xtol=1e-12, rtol=1e-14, maxiter=500)
    result = _achieved(samples, make(root))
    if abs(result[1 + which] - target) > MOMENT_TOL:
        raise CalibrationError(f"root-finder stopped {result[1 + which] - target:+.3g} from target", best=result)
    return result


@dataclass(frozen=True, eq=False)
class LabeledDistribution:
    label: str
    family: str
    target: float | None
    params: WeightingParams | None
    beliefs: BeliefSet | None
    mean: float
    variance: float
    error: str | None = None


def _labeled_row(samples: SampleSet, family: str, label: str, target: float | None) -> LabeledDistribution:
    if target is None:
        beliefs = BeliefSet.uniform(len(samples))
        m, v = weighted_stats(samples, beliefs)
        return LabeledDistribution(label, family, None, WeightingParams(), beliefs, m, v)
    try:
        cal = calibrate(samples, **{family: target})
    except CalibrationError as exc:
        best = exc.best
        return LabeledDistribution(
            label, family, target,
            best.params if best else None, None,
            best.mean if best else float("nan"), best.variance if best else float("nan"),
            error=str(exc),
        )
    return LabeledDistribution(label, family, target, cal.params, discretize(samples, cal.params), cal.mean, cal.variance)


def labeled_distributions(samples: SampleSet, family: str) -> list[LabeledDistribution]:
    """Calibrate every labeled producer distribution of one family; failures are kept as rows."""
    return [_labeled_row(samples, family, label, target) for label, target in FAMILIES[family]]


def distribution_by_label(samples: SampleSet, label: str) -> LabeledDistribution:
    for family, members in FAMILIES.items():
        for name, target in members:
            if name == label:
                return _labeled_row(samples, family, label, target)
    raise KeyError(f"unknown distribution label {label!r}")
