"""Sweeps behind the CLI: labeled-distribution families, 2-D belief grid, stability, welfare, price field.

Each function returns plain row dicts in a deterministic order; the CLI only writes them.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Any, Callable, Iterable

import numpy as np

from .analysis import (
    directional_speeds,
    expected_welfare,
    integrate_trajectory,
    stability,
    velocity,
    welfare_per_outcome,
)
from .beliefs import FAMILIES, REFERENCE_LABEL, LabeledDistribution, distribution_by_label, labeled_distributions
from .config import ConfigError, ExperimentConfig
from .core import BeliefSet, MarketInstance
from .equilibrium import (
    EquilibriumResult,
    NumericError,
    SolverConfig,
    analytic_equilibrium,
    potential_equilibrium,
    tatonnement,
)

FAMILY_COLUMNS = (
    "label", "delta", "gamma_w", "mean", "variance", "day_ahead_price",
    "p", "d", "mismatch", "iterations", "eig_ratio", "converged",
)
GRID_COLUMNS = ("pi_p_l", "pi_c_l", "lambda_l", "lambda_h", "lambda_DA", "interior")
STABILITY_COLUMNS = ("label", "family", "iterations", "converged", "eig_ratio", "min_eig", "max_eig", "verdict")
WELFARE_COLUMNS = ("outcome_rank", "xi", "SW_reference", "SW_asymmetric", "loss")
FIELD_COLUMNS = ("lambda_l", "lambda_h", "v_l", "v_h")
DISTRIBUTION_COLUMNS = ("label", "delta", "gamma_w", "mean", "variance")

FIELD_PRESETS = {"symmetric": (0.5, 0.5), "asymmetric": (0.99, 0.5)}


def _map(fn: Callable, items: Iterable, jobs: int) -> list:
    items = list(items)
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _require_samples(cfg: ExperimentConfig):
    if cfg.samples is None:
        raise ConfigError("this experiment needs sampled outcomes (market.outcomes: {sample: ...})")
    return cfg.samples


def distribution_table(cfg: ExperimentConfig) -> list[dict[str, Any]]:
    samples = _require_samples(cfg)
    rows, seen = [], set()
    for family in FAMILIES:
        for dist in labeled_distributions(samples, family):
            if dist.label in seen:
                continue
            seen.add(dist.label)
            rows.append(_dist_fields(dist))
    return rows


def _dist_fields(dist: LabeledDistribution) -> dict[str, Any]:
    return {
        "label": dist.label,
        "delta": dist.params.delta if dist.params else float("nan"),
        "gamma_w": dist.params.gamma_w if dist.params else float("nan"),
        "mean": dist.mean,
        "variance": dist.variance,
    }


def _solve_point(args: tuple[MarketInstance, SolverConfig]) -> tuple[EquilibriumResult | None, float, str | None]:
    instance, solver = args
    ratio = stability(instance).ratio
    try:
        return tatonnement(instance, solver), ratio, None
    except NumericError as exc:
        return None, ratio, str(exc)


def family_sweep(cfg: ExperimentConfig, family: str, jobs: int = 1) -> list[dict[str, Any]]:
    """Solve with the producer on each labeled distribution and the consumer on the reference."""
    samples = _require_samples(cfg)
    dists = labeled_distributions(samples, family)
    consumer = BeliefSet.uniform(len(samples))
    todo = [(i, cfg.instance(d.beliefs, consumer)) for i, d in enumerate(dists) if d.beliefs is not None]
    solved = dict(zip((i for i, _ in todo), _map(_solve_point, [(inst, cfg.solver) for _, inst in todo], jobs)))

    rows = []
    for i, dist in enumerate(dists):
        row: dict[str, Any] = _dist_fields(dist)
        result, ratio, err = solved.get(i, (None, float("nan"), dist.error))
        if result is None:
            row.update(day_ahead_price=float("nan"), p=float("nan"), d=float("nan"), mismatch=float("nan"),
                       iterations=0, eig_ratio=ratio, converged=False, error=err)
        else:
            row.update(
                day_ahead_price=result.day_ahead_price,
                p=result.dispatch.p,
                d=result.dispatch.d,
                mismatch=result.dispatch.mismatch,
                iterations=result.iterations,
                eig_ratio=ratio,
                converged=result.converged,
            )
        rows.append(row)
    return rows


def two_outcome_instance(cfg: ExperimentConfig, pi_p_l: float, pi_c_l: float) -> MarketInstance:
    if cfg.n_outcomes != 2:
        raise ConfigError(f"a two-outcome config is required, got {cfg.n_outcomes} outcomes")
    return cfg.instance(BeliefSet(np.array([pi_p_l, 1.0 - pi_p_l])), BeliefSet(np.array([pi_c_l, 1.0 - pi_c_l])))


def belief_grid(n: int = 49, lo: float = 0.01, hi: float = 0.99) -> np.ndarray:
    return np.linspace(lo, hi, n)


def grid_point_prices(instance: MarketInstance) -> tuple[np.ndarray, bool]:
    """Closed-form prices when no bound binds, otherwise the exact boxed equilibrium."""
    eq = analytic_equilibrium(instance)
    if eq.interior:
        return eq.prices, True
    return np.asarray(potential_equilibrium(instance).prices.values), False


def grid2d_sweep(cfg: ExperimentConfig, n: int = 49) -> list[dict[str, Any]]:
    """Equilibrium prices over a regular grid of low-outcome probabilities for both agents."""
    grid = belief_grid(n)
    rows = []
    for pc in grid:
        for pp in grid:
            prices, interior = grid_point_prices(two_outcome_instance(cfg, pp, pc))
            rows.append({
                "pi_p_l": pp,
                "pi_c_l": pc,
                "lambda_l": prices[0],
                "lambda_h": prices[1],
                "lambda_DA": float(prices.sum()),
                "interior": interior,
            })
    return rows


def stability_table(cfg: ExperimentConfig, jobs: int = 1) -> tuple[list[dict[str, Any]], dict[str, np.ndarray]]:
    """Iterations to converge and Jacobian spectrum for every labeled producer distribution."""
    samples = _require_samples(cfg)
    consumer = BeliefSet.uniform(len(samples))
    dists: list[LabeledDistribution] = []
    seen = set()
    for family in FAMILIES:
        for dist in labeled_distributions(samples, family):
            if dist.label not in seen:
                seen.add(dist.label)
                dists.append(dist)
    usable = [d for d in dists if d.beliefs is not None]
    instances = [cfg.instance(d.beliefs, consumer) for d in usable]
    results = _map(_solve_point, [(inst, cfg.solver) for inst in instances], jobs)

    rows, spectra = [], {}
    by_label = {d.label: (inst, res) for d, inst, res in zip(usable, instances, results)}
    for dist in dists:
        family = "reference" if dist.label == REFERENCE_LABEL else dist.family
        if dist.label not in by_label:
            rows.append({"label": dist.label, "family": family, "iterations": 0, "converged": False,
                         "eig_ratio": float("nan"), "min_eig": float("nan"), "max_eig": float("nan"),
                         "verdict": "calibration_failed"})
            continue
        inst, (result, _, _) = by_label[dist.label]
        report = stability(inst)
        spectra[dist.label] = report.eigenvalues
        rows.append({
            "label": dist.label,
            "family": family,
            "iterations": result.iterations if result else 0,
            "converged": bool(result and result.converged),
            "eig_ratio": report.ratio,
            "min_eig": report.min_eig,
            "max_eig": report.max_eig,
            "verdict": report.verdict.value,
        })
    return rows, spectra


def dayahead_decisions(instance: MarketInstance, method: str, solver: SolverConfig) -> tuple[float, float]:
    if method == "exact":
        res = potential_equilibrium(instance)
    elif method == "tatonnement":
        res = tatonnement(instance, solver)
    else:
        raise ValueError(f"unknown method {method!r}")
    return res.dispatch.p, res.dispatch.d


def welfare_table(
    cfg: ExperimentConfig, comparison: str | None = None, method: str = "exact"
) -> tuple[list[dict[str, Any]], dict[str, float]]:
    """Per-outcome welfare with the producer on the reference vs on ``comparison``.

    Day-ahead quantities come from each equilibrium; recourse is re-dispatched
    welfare-optimally per outcome. Outcomes are ranked by renewable output.
    """
    samples = _require_samples(cfg)
    label = comparison or cfg.comparison
    if label is None:
        raise ConfigError("no comparison distribution named (welfare.comparison or --comparison)")
    try:
        dist = distribution_by_label(samples, label)
    except KeyError as exc:
        raise ConfigError(exc.args[0]) from None
    if dist.beliefs is None:
        raise ConfigError(f"calibration of {label} failed: {dist.error}")

    reference = BeliefSet.uniform(len(samples))
    sym = cfg.instance(reference, reference)
    asym = cfg.instance(dist.beliefs, reference)
    sw_ref = welfare_per_outcome(dayahead_decisions(sym, method, cfg.solver), sym)
    sw_asym = welfare_per_outcome(dayahead_decisions(asym, method, cfg.solver), sym)

    order = np.argsort(sym.outcomes, kind="stable")
    rows = [
        {
            "outcome_rank": rank + 1,
            "xi": float(sym.outcomes[w]),
            "SW_reference": float(sw_ref[w]),
            "SW_asymmetric": float(sw_asym[w]),
            "loss": float(sw_ref[w] - sw_asym[w]),
        }
        for rank, w in enumerate(order)
    ]
    summary = {
        "expected_reference": expected_welfare(sw_ref, reference),
        "expected_asymmetric": expected_welfare(sw_asym, reference),
    }
    summary["expected_loss"] = summary["expected_reference"] - summary["expected_asymmetric"]
    return rows, summary


def field_data(
    cfg: ExperimentConfig, preset: str, n: int = 21, span: float = 1.0, tau: float = 1.0, start=(0.0, 0.0)
) -> dict[str, Any]:
    """Velocity grid centred on the equilibrium of a two-outcome preset, plus one trajectory.

    Each axis is symmetric about the equilibrium price and shrinks when needed to stay
    non-negative, so an odd ``n`` puts the equilibrium itself on the grid.
    """
    pp, pc = FIELD_PRESETS[preset]
    inst = two_outcome_instance(cfg, pp, pc)
    eq = analytic_equilibrium(inst).prices
    axes = [np.linspace(c - min(span, c), c + min(span, c), n) for c in eq]
    grid_rows = []
    for lam_low in axes[0]:
        for lam_high in axes[1]:
            v = velocity(np.array([lam_low, lam_high]), inst, tau)
            grid_rows.append({"lambda_l": lam_low, "lambda_h": lam_high, "v_l": v[0], "v_h": v[1]})
    traj = integrate_trajectory(inst, np.asarray(start, dtype=float), tau)
    traj_rows = []
    for point in traj.points:
        v = velocity(point, inst, tau)
        traj_rows.append({"lambda_l": point[0], "lambda_h": point[1], "v_l": v[0], "v_h": v[1]})
    return {
        "instance": inst,
        "equilibrium": eq,
        "grid": grid_rows,
        "trajectory": traj_rows,
        "trajectory_reached": traj.reached,
        "speeds": directional_speeds(inst, eq, tau=tau),
    }
