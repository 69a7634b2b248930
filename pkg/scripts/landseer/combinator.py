"""
Experiments and Combinations

An experiment names a model, a dataset and per-stage candidate tools.
A combination picks, for every stage independently, an ordered sequence
of distinct candidates. Order matters only within a stage; stages always
run pre -> during -> post -> deploy.

Canonical id format (order is semantic, never sorted):

    pre:[a,b]|during:[c]|post:[]|deploy:[d]
"""

import itertools
import json
import logging
import math
import re
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .errors import CapExceededError, ExperimentError
from .metrics import METRIC_CATALOG, Direction, MetricSpec, Thresholds, metric_problems
from .registry import STAGE_IO, STAGES, ArtifactKind, FunnelState, Registry, Stage

logger = logging.getLogger(__name__)

DEFAULT_COMBINATION_CAP = 10 ** 6

# Artifact kinds reachable when a stage starts.
AVAILABLE_KINDS = {
    Stage.PRE: frozenset({ArtifactKind.DATASET, ArtifactKind.ARCHITECTURE}),
    Stage.DURING: frozenset({ArtifactKind.DATASET, ArtifactKind.ARCHITECTURE}),
    Stage.POST: frozenset({ArtifactKind.MODEL, ArtifactKind.DATASET, ArtifactKind.ARCHITECTURE}),
    Stage.DEPLOY: frozenset({ArtifactKind.MODEL, ArtifactKind.DATASET, ArtifactKind.ARCHITECTURE}),
}

_ID_PART = re.compile(r"^(pre|during|post|deploy):\[([a-z0-9_,]*)\]$")


@dataclass(frozen=True, order=True)
class Combination:
    """Per-stage ordered tool sequences, indexed in STAGES order."""
    stages: tuple[tuple[str, ...], ...] = ((), (), (), ())

    def __post_init__(self):
        if len(self.stages) != len(STAGES):
            raise ValueError(f"a combination has {len(STAGES)} stages, got {len(self.stages)}")
        for stage, tools in zip(STAGES, self.stages):
            if len(set(tools)) != len(tools):
                raise ValueError(f"duplicate tool in {stage.value} stage: {list(tools)}")

    @classmethod
    def of(cls, pre: Sequence[str] = (), during: Sequence[str] = (),
           post: Sequence[str] = (), deploy: Sequence[str] = ()) -> "Combination":
        return cls((tuple(pre), tuple(during), tuple(post), tuple(deploy)))

    @classmethod
    def from_id(cls, canonical: str) -> "Combination":
        parts = canonical.split("|")
        if len(parts) != len(STAGES):
            raise ValueError(f"malformed combination id {canonical!r}")
        stages = []
        for stage, part in zip(STAGES, parts):
            match = _ID_PART.match(part)
            if not match or match.group(1) != stage.value:
                raise ValueError(f"malformed combination id {canonical!r}")
            stages.append(tuple(t for t in match.group(2).split(",") if t))
        return cls(tuple(stages))

    @property
    def id(self) -> str:
        return "|".join(f"{stage.value}:[{','.join(tools)}]" for stage, tools in zip(STAGES, self.stages))

    @property
    def cardinality(self) -> int:
        return sum(len(tools) for tools in self.stages)

    @property
    def tools(self) -> frozenset[str]:
        return frozenset(t for tools in self.stages for t in tools)

    def sequence(self, stage: Stage) -> tuple[str, ...]:
        return self.stages[STAGES.index(stage)]

    def stage_of(self, tool: str) -> Optional[Stage]:
        for stage, tools in zip(STAGES, self.stages):
            if tool in tools:
                return stage
        return None

    def __contains__(self, tool: str) -> bool:
        return any(tool in tools for tools in self.stages)

    def display(self) -> str:
        """Short label: stages joined by ' / ', tools within a stage by '+'."""
        parts = ["+".join(tools) for tools in self.stages if tools]
        return " / ".join(parts) if parts else "baseline"

    def to_dict(self) -> dict:
        data = {"id": self.id}
        data.update({stage.value: list(tools) for stage, tools in zip(STAGES, self.stages)})
        return data


EMPTY = Combination()


@dataclass(frozen=True)
class ExperimentSpec:
    """One experiment: model, dataset, candidates and analysis settings."""
    id: str
    model: str
    dataset: str
    candidates: Mapping[Stage, tuple[str, ...]]
    metrics: tuple[MetricSpec, ...]
    max_tools: Mapping[Stage, int] = field(default_factory=dict)
    seeds: int = 1
    thresholds: Thresholds = Thresholds()
    gi_fraction: float = 0.95
    trainer: str = "baseline_trainer"
    model_params: Mapping[str, object] = field(default_factory=dict)
    dataset_params: Mapping[str, object] = field(default_factory=dict)
    dataset_dir: Optional[Path] = None
    params: Mapping[str, Mapping[str, object]] = field(default_factory=dict)
    evaluators: Mapping[str, str] = field(default_factory=dict)
    registry_path: Optional[Path] = None
    require_onboarded: bool = False

    def stage_candidates(self, stage: Stage) -> tuple[str, ...]:
        return tuple(self.candidates.get(stage, ()))

    def stage_cap(self, stage: Stage) -> int:
        """Longest sequence allowed in a stage (During defaults to one trainer)."""
        count = len(self.stage_candidates(stage))
        default = min(1, count) if stage is Stage.DURING else count
        return min(count, self.max_tools.get(stage, default))

    def metric(self, name: str) -> MetricSpec:
        for spec in self.metrics:
            if spec.name == name:
                return spec
        raise KeyError(name)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "model": self.model,
            "dataset": self.dataset,
            "candidates": {s.value: list(self.stage_candidates(s)) for s in STAGES},
            "max_tools": {s.value: self.max_tools[s] for s in STAGES if s in self.max_tools},
            "metrics": [m.to_dict() for m in self.metrics],
            "seeds": self.seeds,
            "thresholds": {"low": self.thresholds.low, "high": self.thresholds.high,
                           "gi_fraction": self.gi_fraction},
            "trainer": self.trainer,
            "model_params": dict(self.model_params),
            "dataset_params": dict(self.dataset_params),
            "dataset_dir": str(self.dataset_dir) if self.dataset_dir else None,
            "params": {k: dict(v) for k, v in self.params.items()},
            "evaluators": dict(self.evaluators),
            "registry": str(self.registry_path) if self.registry_path else None,
            "require_onboarded": self.require_onboarded,
        }

    @classmethod
    def from_dict(cls, data: Mapping, base: Optional[Path] = None) -> "ExperimentSpec":
        """Build a spec from experiment.toml or experiment.json content."""
        try:
            thresholds = data.get("thresholds", {})
            metrics = tuple(_metric(entry) for entry in data.get("metrics", [{"name": "acc"}]))
            dataset_dir = data.get("dataset_dir")
            registry = data.get("registry")
            return cls(
                id=data["id"],
                model=data["model"],
                dataset=data["dataset"],
                candidates={Stage(k): tuple(v) for k, v in data.get("candidates", {}).items()},
                metrics=metrics,
                max_tools={Stage(k): int(v) for k, v in data.get("max_tools", {}).items()},
                seeds=int(data.get("seeds", 1)),
                thresholds=Thresholds(float(thresholds.get("low", 2.0)), float(thresholds.get("high", 5.0))),
                gi_fraction=float(thresholds.get("gi_fraction", 0.95)),
                trainer=data.get("trainer", "baseline_trainer"),
                model_params=dict(data.get("model_params", {})),
                dataset_params=dict(data.get("dataset_params", {})),
                dataset_dir=_resolve(dataset_dir, base),
                params={k: dict(v) for k, v in data.get("params", {}).items()},
                evaluators=dict(data.get("evaluators", {})),
                registry_path=_resolve(registry, base),
                require_onboarded=bool(data.get("require_onboarded", False)),
            )
        except KeyError as e:
            raise ExperimentError(f"missing experiment key {e}") from None
        except ValueError as e:
            raise ExperimentError(str(e)) from None


def _resolve(value: Optional[str], base: Optional[Path]) -> Optional[Path]:
    if not value:
        return None
    path = Path(value)
    if base is not None and not path.is_absolute():
        path = base / path
    return path


def _metric(entry) -> MetricSpec:
    if isinstance(entry, str):
        entry = {"name": entry}
    name = entry["name"]
    if "direction" in entry:
        return MetricSpec(name, Direction(entry["direction"]), entry.get("units", "pp"))
    if name not in METRIC_CATALOG:
        raise ValueError(f"metric {name!r} is not in the catalog and declares no direction")
    return METRIC_CATALOG[name]


def load_experiment(path: Path) -> ExperimentSpec:
    """
    Load experiment.toml.

    Relative registry and dataset_dir paths resolve against the file's
    directory; the registry defaults to that directory.
    """
    path = Path(path)
    try:
        data = tomllib.loads(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ExperimentError(f"{path}: {e}") from None
    except tomllib.TOMLDecodeError as e:
        raise ExperimentError(f"{path}: malformed TOML: {e}") from None
    data.setdefault("registry", ".")
    try:
        return ExperimentSpec.from_dict(data, base=path.parent)
    except ExperimentError as e:
        raise ExperimentError(f"{path}: {e}") from None


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    code: str
    message: str
    tool: Optional[str] = None

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


def resolve_evaluators(spec: ExperimentSpec, registry: Registry) -> dict[str, str]:
    """Metric name -> evaluator tool id, for every metric that has one."""
    resolved = {}
    for metric in spec.metrics:
        if metric.name in spec.evaluators:
            resolved[metric.name] = spec.evaluators[metric.name]
            continue
        for evaluator in registry.evaluators():
            if metric.name in evaluator.metrics:
                resolved[metric.name] = evaluator.id
                break
    return resolved


def validate_experiment(spec: ExperimentSpec, registry: Registry) -> list[Violation]:
    """
    Check an experiment against the registry.

    Returns:
        list[Violation]: Empty when every candidate is registered,
            stage-consistent, dataset-compatible and chains into the next stage
    """
    violations: list[Violation] = []

    for stage in STAGES:
        seen = set()
        for tool_id in spec.stage_candidates(stage):
            if tool_id in seen:
                violations.append(Violation("duplicate candidate", f"{tool_id} listed twice under {stage.value}", tool_id))
                continue
            seen.add(tool_id)
            if tool_id not in registry:
                violations.append(Violation("unknown tool", f"{tool_id} is not registered", tool_id))
                continue
            tool = registry.get(tool_id)
            if not tool.is_defense:
                violations.append(Violation("not a defense", f"{tool_id} is a {tool.category} tool", tool_id))
                continue
            if tool.stage is not stage:
                violations.append(Violation("stage mismatch",
                                            f"{tool_id} is a {tool.stage.value} tool listed under {stage.value}", tool_id))
                continue
            if not tool.supports(spec.dataset):
                violations.append(Violation("dataset unsupported",
                                            f"{tool_id} does not support dataset {spec.dataset}", tool_id))
            inputs = frozenset(tool.invocation.inputs)
            if not inputs <= AVAILABLE_KINDS[stage] or tool.invocation.output is not STAGE_IO[stage][1]:
                violations.append(Violation("io mismatch",
                                            f"{tool_id} output {tool.invocation.output.value} does not chain "
                                            f"after the {stage.value} stage", tool_id))
            if spec.require_onboarded:
                record = registry.records.get(tool_id)
                if record is None or record.state is not FunnelState.ONBOARDED:
                    state = record.state.value if record else "no record"
                    violations.append(Violation("not onboarded", f"{tool_id} is {state}", tool_id))

    for stage, cap in spec.max_tools.items():
        if cap < 0:
            violations.append(Violation("max tools", f"max tools for {stage.value} must be >= 0"))

    if spec.seeds < 1:
        violations.append(Violation("seeds", "seeds must be >= 1"))
    if not 0 < spec.gi_fraction <= 1:
        violations.append(Violation("gi fraction", "gi fraction must be in (0, 1]"))

    if spec.trainer not in registry:
        violations.append(Violation("baseline trainer", f"trainer {spec.trainer} is not registered", spec.trainer))
    else:
        trainer = registry.get(spec.trainer)
        if not trainer.is_noop or trainer.stage is not Stage.DURING:
            violations.append(Violation("baseline trainer",
                                        f"trainer {spec.trainer} must be a during-stage noop", spec.trainer))

    for problem in metric_problems(spec.metrics):
        violations.append(Violation("metric registry", problem))

    registered = {m.name for m in spec.metrics}
    resolved = resolve_evaluators(spec, registry)
    for metric in spec.metrics:
        evaluator_id = resolved.get(metric.name)
        if evaluator_id is None:
            violations.append(Violation("no evaluator", f"no evaluator emits metric {metric.name}"))
        elif evaluator_id not in registry or not registry.get(evaluator_id).is_evaluator:
            violations.append(Violation("no evaluator", f"{evaluator_id} is not a registered evaluator", evaluator_id))
    for evaluator_id in sorted(set(resolved.values())):
        if evaluator_id in registry and registry.get(evaluator_id).is_evaluator:
            unknown = sorted(set(registry.get(evaluator_id).metrics) - registered)
            if unknown:
                violations.append(Violation("unregistered metric",
                                            f"{evaluator_id} emits unregistered metrics: {', '.join(unknown)}",
                                            evaluator_id))
    return violations


# ---------------------------------------------------------------------------
# Enumeration
# ---------------------------------------------------------------------------

def count_combinations(spec: ExperimentSpec) -> int:
    """Closed form: product over stages of sum_k n!/(n-k)! for k = 0..cap."""
    total = 1
    for stage in STAGES:
        n = len(spec.stage_candidates(stage))
        total *= sum(math.perm(n, k) for k in range(spec.stage_cap(stage) + 1))
    return total


def _stage_sequences(candidates: Sequence[str], cap: int) -> list[tuple[str, ...]]:
    sequences = []
    for k in range(cap + 1):
        sequences.extend(itertools.permutations(candidates, k))
    return sequences


def enumerate_combinations(spec: ExperimentSpec, cap: int = DEFAULT_COMBINATION_CAP) -> list[Combination]:
    """
    Every stage-wise ordered combination, the empty baseline first.

    Raises:
        CapExceededError: More combinations than cap
    """
    count = count_combinations(spec)
    if count > cap:
        raise CapExceededError(f"experiment {spec.id} has {count} combinations, cap is {cap}")
    per_stage = [_stage_sequences(spec.stage_candidates(s), spec.stage_cap(s)) for s in STAGES]
    combinations = [Combination(tuple(choice)) for choice in itertools.product(*per_stage)]
    combinations.sort(key=lambda c: (c.cardinality, c.id))
    logger.info("Experiment %s: %d combinations", spec.id, len(combinations))
    return combinations


# ---------------------------------------------------------------------------
# Relations
# ---------------------------------------------------------------------------

def _drops_one(shorter: tuple[str, ...], longer: tuple[str, ...]) -> bool:
    """True if removing exactly one element of longer yields shorter."""
    if len(longer) != len(shorter) + 1:
        return False
    return any(longer[:i] + longer[i + 1:] == shorter for i in range(len(longer)))


def is_parent(parent: Combination, child: Combination) -> bool:
    """Child adds exactly one tool to one stage of parent, preserving order."""
    if child.cardinality != parent.cardinality + 1:
        return False
    differing = [i for i in range(len(STAGES)) if parent.stages[i] != child.stages[i]]
    if len(differing) != 1:
        return False
    i = differing[0]
    return _drops_one(parent.stages[i], child.stages[i])


def is_neighbor(a: Combination, b: Combination) -> bool:
    """Same tool set in every stage, different order in at least one."""
    if a == b:
        return False
    return all(set(x) == set(y) for x, y in zip(a.stages, b.stages))


def prime_of(combination: Combination, focus: str) -> Combination:
    """The combination without the focus tool; other positions unchanged."""
    if focus not in combination:
        raise ValueError(f"{focus} is not in {combination.id}")
    return Combination(tuple(tuple(t for t in tools if t != focus) for tools in combination.stages))


def write_combinations(combinations: Iterable[Combination], path: Path) -> None:
    """combinations.jsonl: canonical id plus stage sequences per line."""
    lines = [json.dumps(c.to_dict(), sort_keys=True, separators=(",", ":")) for c in combinations]
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_combinations(path: Path) -> list[Combination]:
    return [Combination.from_id(json.loads(line)["id"])
            for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
