"""YAML/JSON experiment configuration.

Example::

    market:
      alpha: 1.5
      beta: 0.3
      gamma_u: 5.0
      outcomes: {sample: {n: 100, mean: 1.5, variance: 0.25, seed: 8495}}
      producer_beliefs: uniform          # or a list, {delta:, gamma_w:}, {label: mu3_up}
      consumer_beliefs: uniform
      operator_beliefs: uniform          # optional
      producer_set: {first_stage: [0, 50], recourse: [0, 50]}
      consumer_set: {first_stage: [0, 50], recourse: [0, 50]}
    solver:
      rho: 1.0e-5
      epsilon: 1.0e-5
      nu_max: 1000000
      lambda0: 0.0
      trace_enabled: false
    welfare:
      comparison: mu3_up
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .beliefs import (
    DEFAULT_SEED,
    REFERENCE_MEAN,
    REFERENCE_N,
    REFERENCE_VARIANCE,
    SampleSet,
    WeightingParams,
    discretize,
    distribution_by_label,
    sample_reference,
)
from .core import BeliefSet, BoxSet, MarketInstance, ValidationError, validate
from .equilibrium import SolverConfig


class ConfigError(ValueError):
    """Malformed or invalid configuration; the message names the field and line when known."""


class _Mapping(dict):
    lines: dict


class _LineLoader(yaml.SafeLoader):
    """Safe loader whose mappings remember the line of each key."""


def _construct_map(loader: _LineLoader, node: yaml.MappingNode) -> _Mapping:
    loader.flatten_mapping(node)
    mapping = _Mapping(loader.construct_mapping(node, deep=True))
    mapping.lines = {k.value: k.start_mark.line + 1 for k, _ in node.value if isinstance(k, yaml.ScalarNode)}
    return mapping


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_map)


def _where(section: Any, key: str, path: str) -> str:
    line = getattr(section, "lines", {}).get(key)
    return f"field '{path}'" + (f" (line {line})" if line else "")


def _number(section: dict, key: str, path: str, default: Any = ...) -> float:
    if key not in section:
        if default is ...:
            raise ConfigError(f"missing required field '{path}'")
        return default
    value = section[key]
    try:
        # PyYAML reads 1e-5 (no dot) as a string
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{_where(section, key, path)} must be a number, got {value!r}") from None


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    alpha: float
    beta: float
    gamma_u: float
    outcomes: np.ndarray
    samples: SampleSet | None
    producer_beliefs: Any = "uniform"
    consumer_beliefs: Any = "uniform"
    operator_beliefs: Any = None
    producer_set: BoxSet | None = None
    consumer_set: BoxSet | None = None
    solver: SolverConfig = field(default_factory=SolverConfig)
    comparison: str | None = None

    @property
    def n_outcomes(self) -> int:
        return self.outcomes.size

    def beliefs(self, spec: Any, name: str = "beliefs") -> BeliefSet:
        return resolve_beliefs(spec, self.outcomes, self.samples, name)

    def instance(self, producer_beliefs: Any = None, consumer_beliefs: Any = None) -> MarketInstance:
        producer = producer_beliefs if isinstance(producer_beliefs, BeliefSet) else self.beliefs(
            self.producer_beliefs if producer_beliefs is None else producer_beliefs, "producer_beliefs"
        )
        consumer = consumer_beliefs if isinstance(consumer_beliefs, BeliefSet) else self.beliefs(
            self.consumer_beliefs if consumer_beliefs is None else consumer_beliefs, "consumer_beliefs"
        )
        operator = None if self.operator_beliefs is None else self.beliefs(self.operator_beliefs, "operator_beliefs")
        try:
            return MarketInstance(
                self.alpha, self.beta, self.gamma_u, self.outcomes, producer, consumer, operator,
                self.producer_set, self.consumer_set,
            )
        except ValidationError as exc:
            raise ConfigError(f"invalid market: {exc}") from exc

    def with_overrides(self, *, seed=None, rho=None, epsilon=None, nu_max=None) -> "ExperimentConfig":
        cfg = self
        if seed is not None:
            if cfg.samples is None:
                raise ConfigError("--seed given but the config lists outcomes explicitly instead of sampling them")
            s = cfg.samples
            fresh = sample_reference(len(s), s.source_mean, s.source_variance, int(seed))
            cfg = replace(cfg, samples=fresh, outcomes=fresh.values)
        solver_changes = {k: v for k, v in dict(rho=rho, epsilon=epsilon, nu_max=nu_max).items() if v is not None}
        if solver_changes:
            try:
                cfg = replace(cfg, solver=replace(cfg.solver, **solver_changes))
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        return cfg


def resolve_beliefs(spec: Any, outcomes: np.ndarray, samples: SampleSet | None, name: str = "beliefs") -> BeliefSet:
    n = outcomes.size
    if spec is None or spec == "uniform":
        return BeliefSet.uniform(n)
    if isinstance(spec, BeliefSet):
        return spec
    if isinstance(spec, dict):
        sample = samples if samples is not None else _sorted_sample(outcomes, name)
        if "label" in spec:
            try:
                row = distribution_by_label(sample, str(spec["label"]))
            except KeyError as exc:
                raise ConfigError(f"{name}: {exc.args[0]}") from None
            if row.beliefs is None:
                raise ConfigError(f"{name}: calibration of {row.label} failed: {row.error}")
            return row.beliefs
        try:
            params = WeightingParams(float(spec.get("delta", 1.0)), float(spec.get("gamma_w", 1.0)))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{name}: {exc}") from None
        return discretize(sample, params)
    try:
        probs = np.asarray(spec, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected 'uniform', a probability list, or a weighting spec") from None
    try:
        return BeliefSet(probs)
    except ValidationError as exc:
        raise ConfigError(f"{name}: {exc}") from None


def _sorted_sample(outcomes: np.ndarray, name: str) -> SampleSet:
    try:
        return SampleSet(outcomes, None, float(outcomes.mean()), float(outcomes.var()))
    except ValueError as exc:
        raise ConfigError(f"{name}: weighting needs ascending outcomes ({exc})") from None


def _box(spec: Any, n: int, path: str) -> BoxSet | None:
    if spec is None:
        return None
    if not isinstance(spec, dict) or "first_stage" not in spec or "recourse" not in spec:
        raise ConfigError(f"field '{path}' needs 'first_stage' and 'recourse' intervals")
    rec = np.asarray(spec["recourse"], dtype=float)
    if rec.shape == (2,):
        rec = np.tile(rec, (n, 1))
    try:
        return BoxSet(tuple(spec["first_stage"]), rec)
    except (ValidationError, TypeError, ValueError) as exc:
        raise ConfigError(f"field '{path}': {exc}") from None


def _outcomes(market: dict) -> tuple[np.ndarray, SampleSet | None]:
    if "outcomes" not in market:
        raise ConfigError("missing required field 'market.outcomes'")
    spec = market["outcomes"]
    if isinstance(spec, dict):
        if "sample" not in spec:
            raise ConfigError(f"{_where(market, 'outcomes', 'market.outcomes')} must be a list or {{sample: ...}}")
        s = spec["sample"] or {}
        try:
            sample = sample_reference(
                int(_number(s, "n", "market.outcomes.sample.n", REFERENCE_N)),
                _number(s, "mean", "market.outcomes.sample.mean", REFERENCE_MEAN),
                _number(s, "variance", "market.outcomes.sample.variance", REFERENCE_VARIANCE),
                int(_number(s, "seed", "market.outcomes.sample.seed", DEFAULT_SEED)),
            )
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"market.outcomes.sample: {exc}") from None
        return sample.values, sample
    try:
        values = np.asarray(spec, dtype=float).reshape(-1)
    except (TypeError, ValueError):
        raise ConfigError(f"{_where(market, 'outcomes', 'market.outcomes')} must be numeric") from None
    return values, None


def parse_config(data: Any) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping with a 'market' section")
    market = data.get("market")
    if not isinstance(market, dict):
        raise ConfigError("missing required section 'market'")

    alpha = _number(market, "alpha", "market.alpha")
    beta = _number(market, "beta", "market.beta")
    gamma_u = _number(market, "gamma_u", "market.gamma_u")
    outcomes, samples = _outcomes(market)
    n = outcomes.size

    raw = {
        "alpha": alpha, "beta": beta, "gamma_u": gamma_u, "outcomes": outcomes,
        "producer_beliefs": np.full(n, 1.0 / n) if n else None,
        "consumer_beliefs": np.full(n, 1.0 / n) if n else None,
    }
    problems = validate(raw)
    if problems:
        first = problems[0]
        key = first.field.split(".")[0]
        raise ConfigError(f"{_where(market, key, 'market.' + key)}: {first.rule}")

    solver_section = data.get("solver") or {}
    lam0 = solver_section.get("lambda0")
    try:
        solver = SolverConfig(
            rho=_number(solver_section, "rho", "solver.rho", SolverConfig.rho),
            epsilon=_number(solver_section, "epsilon", "solver.epsilon", SolverConfig.epsilon),
            nu_max=int(_number(solver_section, "nu_max", "solver.nu_max", SolverConfig.nu_max)),
            lambda0=None if lam0 is None else np.asarray(lam0, dtype=float),
            trace_enabled=bool(solver_section.get("trace_enabled", False)),
        )
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"solver: {exc}") from None

    cfg = ExperimentConfig(
        alpha=alpha,
        beta=beta,
        gamma_u=gamma_u,
        outcomes=outcomes,
        samples=samples,
        producer_beliefs=market.get("producer_beliefs", "uniform"),
        consumer_beliefs=market.get("consumer_beliefs", "uniform"),
        operator_beliefs=market.get("operator_beliefs"),
        producer_set=_box(market.get("producer_set"), n, "market.producer_set"),
        consumer_set=_box(market.get("consumer_set"), n, "market.consumer_set"),
        solver=solver,
        comparison=(data.get("welfare") or {}).get("comparison"),
    )
    # resolve once so bad beliefs fail at load time, with the field named
    cfg.instance()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as exc:
        mark = exc.problem_mark
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ConfigError(f"{path}: YAML parse error{where}: {exc.problem}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: YAML parse error: {exc}") from None
    return parse_config(data)


def default_config(two_outcome: bool = False) -> ExperimentConfig:
    """The default setup: 100 sampled outcomes, or the two-outcome illustration."""
    market: dict[str, Any] = {"alpha": 1.5, "beta": 0.3, "gamma_u": 5.0}
    market["outcomes"] = [1.0, 3.0] if two_outcome else {"sample": {}}
    return parse_config({"market": market})
