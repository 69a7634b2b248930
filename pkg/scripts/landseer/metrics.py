"""
Metrics and Result Vectors

Metric registry with directionality, per-combination result vectors
(C, M), seed aggregation, and threshold-based delta classification.

Deltas are raw differences (node - prime) in the metric's units.
Boundary rule: |delta| < t_l is negligible, t_l <= |delta| < t_h is
moderate, |delta| >= t_h is severe.
"""

import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from pathlib import Path
from statistics import fmean
from typing import TYPE_CHECKING, Callable, Iterable, Mapping, Optional, Sequence

from .errors import ResultError

if TYPE_CHECKING:
    from .combinator import ExperimentSpec
    from .executor import RunOutcome
    from .planner import PlanDag

logger = logging.getLogger(__name__)


class Direction(str, Enum):
    HIGHER_BETTER = "higher_better"
    LOWER_BETTER = "lower_better"


class Severity(str, Enum):
    NEGLIGIBLE = "negligible"
    MODERATE = "moderate"
    SEVERE = "severe"


class Effect(str, Enum):
    IMPROVED = "improved"
    DEGRADED = "degraded"
    UNCHANGED = "unchanged"


class Overall(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    MIXED = "mixed"
    NONE = "none"


@dataclass(frozen=True)
class MetricSpec:
    name: str
    direction: Direction
    units: str = "pp"

    def to_dict(self) -> dict:
        return {"name": self.name, "direction": self.direction.value, "units": self.units}

    @classmethod
    def from_dict(cls, data: Mapping) -> "MetricSpec":
        return cls(data["name"], Direction(data["direction"]), data.get("units", "pp"))


# Trust metrics and their directions. Unknown names must state a direction.
METRIC_CATALOG = {
    "acc": MetricSpec("acc", Direction.HIGHER_BETTER),
    "m_ev": MetricSpec("m_ev", Direction.HIGHER_BETTER),
    "m_ou": MetricSpec("m_ou", Direction.LOWER_BETTER),
    "m_ar": MetricSpec("m_ar", Direction.HIGHER_BETTER),
    "m_dp_eps": MetricSpec("m_dp_eps", Direction.LOWER_BETTER, "score"),
    "m_dp_mia": MetricSpec("m_dp_mia", Direction.LOWER_BETTER),
    "m_wm": MetricSpec("m_wm", Direction.HIGHER_BETTER),
    "m_fp": MetricSpec("m_fp", Direction.HIGHER_BETTER, "score"),
    "m_fa": MetricSpec("m_fa", Direction.HIGHER_BETTER),
    "m_ex": MetricSpec("m_ex", Direction.HIGHER_BETTER),
}


def metric_problems(metrics: Sequence[MetricSpec]) -> list[str]:
    """Registry invariants: unique names, acc present and higher_better."""
    problems = []
    names = [m.name for m in metrics]
    duplicates = sorted({n for n in names if names.count(n) > 1})
    if duplicates:
        problems.append(f"duplicate metric names: {', '.join(duplicates)}")
    acc = [m for m in metrics if m.name == "acc"]
    if not acc:
        problems.append("metric 'acc' must be registered")
    elif acc[0].direction is not Direction.HIGHER_BETTER:
        problems.append("metric 'acc' must be higher_better")
    return problems


@dataclass(frozen=True)
class Thresholds:
    """Global interference thresholds in percentage points."""
    low: float = 2.0
    high: float = 5.0

    def __post_init__(self):
        if not (0 < self.low < self.high):
            raise ValueError(f"thresholds must satisfy 0 < t_l < t_h, got {self.low}, {self.high}")


@dataclass(frozen=True)
class ResultVector:
    """Metrics for one combination; seed None marks a seed aggregate."""
    combination: str
    seed: Optional[int]
    metrics: Mapping[str, float]
    runs: tuple["ResultVector", ...] = ()

    def to_dict(self) -> dict:
        data = {"combination": self.combination, "seed": self.seed, "metrics": dict(sorted(self.metrics.items()))}
        if self.runs:
            data["runs"] = [r.to_dict() for r in self.runs]
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "ResultVector":
        return cls(data["combination"], data["seed"], dict(data["metrics"]),
                   tuple(cls.from_dict(r) for r in data.get("runs", ())))


@dataclass(frozen=True)
class Unevaluated:
    combination: str
    seed: int
    cause: str

    def to_dict(self) -> dict:
        return {"combination": self.combination, "seed": self.seed, "cause": self.cause}


@dataclass
class CollectedResults:
    vectors: list[ResultVector] = field(default_factory=list)
    unevaluated: list[Unevaluated] = field(default_factory=list)


@dataclass(frozen=True)
class DeltaRecord:
    metric: str
    delta: float
    severity: Severity
    effect: Effect

    def to_dict(self) -> dict:
        return {"metric": self.metric, "delta": self.delta,
                "severity": self.severity.value, "effect": self.effect.value}

    @classmethod
    def from_dict(cls, data: Mapping) -> "DeltaRecord":
        return cls(data["metric"], data["delta"], Severity(data["severity"]), Effect(data["effect"]))


@dataclass(frozen=True)
class Comparison:
    deltas: tuple[DeltaRecord, ...]
    interferes: bool
    overall: Overall


def collect_results(outcomes: Mapping[str, "RunOutcome"], dag: "PlanDag", spec: "ExperimentSpec") -> CollectedResults:
    """
    Join terminal Evaluate outcomes into one ResultVector per (combination, seed).

    Combinations with any failed or missing terminal are listed as unevaluated.

    Raises:
        ResultError: Two evaluators emitted the same metric for one combination
    """
    names = [m.name for m in spec.metrics]
    collected = CollectedResults()
    for (combination, seed), evaluations in sorted(dag.terminals.items()):
        metrics: dict[str, float] = {}
        emitted_by: dict[str, str] = {}
        cause = None
        for metric_name, task_id in sorted(evaluations.items()):
            outcome = outcomes.get(task_id)
            if outcome is None or not outcome.ok:
                status = outcome.status.value if outcome else "not run"
                cause = f"evaluate {metric_name} ({task_id[:12]}) {status}"
                break
            for name, value in outcome.metrics.items():
                if name in metrics:
                    raise ResultError(f"{combination} seed {seed}: metric {name!r} emitted by both "
                                      f"{emitted_by[name][:12]} and {task_id[:12]}")
                metrics[name] = value
                emitted_by[name] = task_id
        if cause is None:
            missing = [n for n in names if n not in metrics]
            if missing:
                cause = f"metrics not emitted: {', '.join(missing)}"
        if cause is not None:
            collected.unevaluated.append(Unevaluated(combination, seed, cause))
            continue
        collected.vectors.append(ResultVector(combination, seed, {n: metrics[n] for n in names}))
    return collected


def aggregate_seeds(vectors: Sequence[ResultVector]) -> ResultVector:
    """Per-metric arithmetic mean over seeds; per-seed vectors kept in runs."""
    if not vectors:
        raise ResultError("cannot aggregate zero vectors")
    combination = vectors[0].combination
    names = set(vectors[0].metrics)
    for vector in vectors[1:]:
        if vector.combination != combination:
            raise ResultError(f"cannot aggregate {vector.combination} with {combination}")
        if set(vector.metrics) != names:
            raise ResultError(f"{combination}: inconsistent metric sets across seeds")
    ordered = tuple(sorted(vectors, key=lambda v: (v.seed is None, v.seed)))
    means = {name: fmean(v.metrics[name] for v in ordered) for name in sorted(names)}
    return ResultVector(combination, None, means, ordered)


def aggregate_all(vectors: Iterable[ResultVector]) -> dict[str, ResultVector]:
    """Aggregate per combination; returns combination id -> aggregate vector."""
    grouped: dict[str, list[ResultVector]] = {}
    for vector in vectors:
        grouped.setdefault(vector.combination, []).append(vector)
    return {combination: aggregate_seeds(group) for combination, group in sorted(grouped.items())}


def classify_delta(delta: float, direction: Direction, t_low: float, t_high: float) -> tuple[Severity, Effect]:
    """Severity from |delta| against the thresholds; effect from sign and direction."""
    magnitude = abs(delta)
    if magnitude < t_low:
        return Severity.NEGLIGIBLE, Effect.UNCHANGED
    severity = Severity.MODERATE if magnitude < t_high else Severity.SEVERE
    higher_is_good = direction is Direction.HIGHER_BETTER
    improved = (delta > 0) == higher_is_good
    return severity, Effect.IMPROVED if improved else Effect.DEGRADED


def compare(node: ResultVector, prime: ResultVector, metrics: Sequence[MetricSpec],
            thresholds: Thresholds) -> Comparison:
    """
    Compare a node's metrics with its prime.

    Raises:
        ResultError: The two vectors do not carry the registered metrics
    """
    names = [m.name for m in metrics]
    if set(node.metrics) != set(names) or set(prime.metrics) != set(names):
        raise ResultError(f"metric set mismatch between {node.combination} and {prime.combination}")

    deltas = []
    for spec in metrics:
        # float noise would otherwise move exact boundary deltas
        delta = round(node.metrics[spec.name] - prime.metrics[spec.name], 9)
        severity, effect = classify_delta(delta, spec.direction, thresholds.low, thresholds.high)
        deltas.append(DeltaRecord(spec.name, delta, severity, effect))

    effects = {d.effect for d in deltas if d.severity is not Severity.NEGLIGIBLE}
    if not effects:
        overall = Overall.NONE
    elif effects == {Effect.IMPROVED}:
        overall = Overall.POSITIVE
    elif effects == {Effect.DEGRADED}:
        overall = Overall.NEGATIVE
    else:
        overall = Overall.MIXED
    return Comparison(tuple(deltas), bool(effects), overall)


Comparator = Callable[[ResultVector, ResultVector], Comparison]


def make_comparator(metrics: Sequence[MetricSpec], thresholds: Thresholds) -> Comparator:
    return partial(compare, metrics=tuple(metrics), thresholds=thresholds)


def write_results(vectors: Iterable[ResultVector], path: Path) -> None:
    """results.jsonl, one vector per line."""
    lines = [json.dumps(v.to_dict(), sort_keys=True, separators=(",", ":")) for v in vectors]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_results(path: Path) -> list[ResultVector]:
    return [ResultVector.from_dict(json.loads(line))
            for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def write_unevaluated(items: Iterable[Unevaluated], path: Path) -> None:
    path.write_text(json.dumps([u.to_dict() for u in items], indent=2, sort_keys=True) + "\n", encoding="utf-8")
