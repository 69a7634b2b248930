"""
Tool Registry and Onboarding

Houses tool descriptors (tools/<id>.toml) and reproduction records
(records/<id>.record.toml), validates them, and moves records through
the onboarding funnel:

    Candidate -> Reproduced | Replicated -> StructurallyComposable
              -> Containerized -> Onboarded

Any failed check moves the record to Rejected with a reason.
"""

import logging
import re
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Any, Iterable, Mapping, Optional

import tomli_w

from .errors import FunnelError, RegistryError

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 3.0

TOOL_ID = re.compile(r"[a-z0-9_]+")


class Stage(str, Enum):
    """Lifecycle position of a tool."""
    PRE = "pre"
    DURING = "during"
    POST = "post"
    DEPLOY = "deploy"


STAGES = (Stage.PRE, Stage.DURING, Stage.POST, Stage.DEPLOY)


class ArtifactKind(str, Enum):
    DATASET = "dataset"
    ARCHITECTURE = "architecture"
    MODEL = "model"
    METRICS = "metrics"


# Input kinds consumed and output kind produced by each stage.
STAGE_IO = {
    Stage.PRE: (frozenset({ArtifactKind.DATASET}), ArtifactKind.DATASET),
    Stage.DURING: (frozenset({ArtifactKind.DATASET, ArtifactKind.ARCHITECTURE}), ArtifactKind.MODEL),
    Stage.POST: (frozenset({ArtifactKind.MODEL, ArtifactKind.DATASET}), ArtifactKind.MODEL),
    Stage.DEPLOY: (frozenset({ArtifactKind.MODEL, ArtifactKind.DATASET}), ArtifactKind.DATASET),
}

EVALUATOR_IO = (frozenset({ArtifactKind.MODEL, ArtifactKind.DATASET}), ArtifactKind.METRICS)

CATEGORIES = ("ev", "ou", "wm", "fp", "dp", "gf", "ex", "noop", "evaluator")

PARAM_KINDS = {"int": int, "float": float, "str": str, "bool": bool}


@dataclass(frozen=True)
class ParamSpec:
    """One entry of a tool's parameter schema."""
    name: str
    kind: str
    default: Any

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "default": self.default}


@dataclass(frozen=True)
class Invocation:
    """How a tool is run: backend kind, command template and I/O contract."""
    backend: str
    command: str
    inputs: tuple[ArtifactKind, ...]
    output: ArtifactKind
    resources: tuple[str, ...] = ()
    deterministic: Optional[bool] = None


@dataclass(frozen=True)
class ToolDescriptor:
    """A registered tool."""
    id: str
    name: str
    category: str
    stage: Stage
    version: str
    datasets: frozenset[str]
    invocation: Invocation
    params: tuple[ParamSpec, ...] = ()
    metrics: tuple[str, ...] = ()

    @property
    def is_noop(self) -> bool:
        return self.category == "noop"

    @property
    def is_evaluator(self) -> bool:
        return self.category == "evaluator"

    @property
    def is_defense(self) -> bool:
        """True for tools that may appear in a combination."""
        return not (self.is_noop or self.is_evaluator)

    @property
    def ref(self) -> str:
        return f"{self.id}@{self.version}"

    def supports(self, dataset: str) -> bool:
        return "*" in self.datasets or dataset in self.datasets

    def defaults(self) -> dict:
        """Parameter map built from the schema defaults."""
        return {p.name: p.default for p in self.params}

    def to_dict(self) -> dict:
        invocation = {
            "backend": self.invocation.backend,
            "command": self.invocation.command,
            "inputs": [k.value for k in self.invocation.inputs],
            "output": self.invocation.output.value,
            "resources": list(self.invocation.resources),
        }
        if self.invocation.deterministic is not None:
            invocation["deterministic"] = self.invocation.deterministic
        return {
            "id": self.id,
            "name": self.name,
            "category": self.category,
            "stage": self.stage.value,
            "version": self.version,
            "datasets": sorted(self.datasets),
            "metrics": list(self.metrics),
            "invocation": invocation,
            "params": [p.to_dict() for p in self.params],
        }


def contract_problem(tool: ToolDescriptor) -> Optional[str]:
    """Return why a tool's category, stage and I/O kinds disagree, or None."""
    inputs = frozenset(tool.invocation.inputs)
    if tool.is_evaluator:
        if tool.stage is not Stage.DEPLOY:
            return "evaluators run at the deploy stage"
        expected = EVALUATOR_IO
    else:
        if tool.metrics:
            return "only evaluators may declare metric outputs"
        expected = STAGE_IO[tool.stage]
    if inputs != expected[0] or tool.invocation.output is not expected[1]:
        wanted = ", ".join(sorted(k.value for k in expected[0]))
        return (f"{tool.stage.value} {tool.category} tools consume [{wanted}] "
                f"and produce {expected[1].value}")
    return None


def _builtin(tool_id: str, stage: Stage) -> ToolDescriptor:
    inputs, output = STAGE_IO[stage]
    return ToolDescriptor(
        id=tool_id,
        name=f"{stage.value} noop",
        category="noop",
        stage=stage,
        version="builtin",
        datasets=frozenset({"*"}),
        invocation=Invocation("builtin", "", tuple(sorted(inputs)), output, (), True),
    )


# Identity placeholders; never listed in a combination. All are deterministic, so
# seed replicas never multiply them. An experiment that wants a seeded baseline
# names a real training descriptor in its `trainer` field.
BUILTIN_TOOLS = MappingProxyType({
    "noop_pre": _builtin("noop_pre", Stage.PRE),
    "baseline_trainer": _builtin("baseline_trainer", Stage.DURING),
    "noop_post": _builtin("noop_post", Stage.POST),
    "noop_deploy": _builtin("noop_deploy", Stage.DEPLOY),
})


class FunnelState(str, Enum):
    CANDIDATE = "candidate"
    REPRODUCED = "reproduced"
    REPLICATED = "replicated"
    STRUCTURALLY_COMPOSABLE = "structurally_composable"
    CONTAINERIZED = "containerized"
    ONBOARDED = "onboarded"
    REJECTED = "rejected"


class Check(str, Enum):
    REPRODUCIBILITY = "reproducibility"
    STRUCTURAL = "structural"
    CONTAINERIZATION = "containerization"


CHECK_ORDER = (Check.REPRODUCIBILITY, Check.STRUCTURAL, Check.CONTAINERIZATION)

# Checks already passed by a record in each state.
PASSED_CHECKS = {
    FunnelState.CANDIDATE: 0,
    FunnelState.REPRODUCED: 1,
    FunnelState.REPLICATED: 1,
    FunnelState.STRUCTURALLY_COMPOSABLE: 2,
    FunnelState.CONTAINERIZED: 3,
    FunnelState.ONBOARDED: 3,
}


@dataclass(frozen=True)
class CheckResult:
    """Evidence for one funnel check."""
    check: Check
    passed: bool
    reason: str = ""
    replicated: bool = False


@dataclass(frozen=True)
class ReproductionOutcome:
    """Result of comparing measured against reported metrics."""
    passed: bool
    deltas: Mapping[str, float]
    offending: Mapping[str, float]
    tolerance: float

    def as_evidence(self, replicated: bool = False) -> CheckResult:
        if self.passed:
            return CheckResult(Check.REPRODUCIBILITY, True, replicated=replicated)
        worst = ", ".join(f"{name} off by {delta:+.2f}" for name, delta in sorted(self.offending.items()))
        return CheckResult(Check.REPRODUCIBILITY, False,
                           reason=f"outside {self.tolerance} point tolerance: {worst}")


@dataclass(frozen=True)
class ReproductionRecord:
    """Onboarding evidence for one tool."""
    tool: str
    # artifact metadata
    source: str = ""
    code_url: str = ""
    category: str = ""
    stage: Optional[Stage] = None
    datasets: tuple[str, ...] = ()
    frameworks: tuple[str, ...] = ()
    reported: Mapping[str, float] = field(default_factory=dict)
    # reproducibility outcome
    executed: bool = False
    measured: Mapping[str, float] = field(default_factory=dict)
    within_tolerance: Optional[bool] = None
    replicated: bool = False
    # structural interface
    input_kinds: tuple[str, ...] = ()
    output_kind: str = ""
    auxiliary: tuple[str, ...] = ()
    params: tuple[ParamSpec, ...] = ()
    format_constraints: tuple[str, ...] = ()
    # containerization
    container_image: str = ""
    container_command: str = ""
    # funnel
    state: FunnelState = FunnelState.CANDIDATE
    rejected_reason: str = ""
    tolerance: Optional[float] = None

    def __post_init__(self):
        if self.state is FunnelState.REJECTED and not self.rejected_reason:
            raise FunnelError(f"{self.tool}: a rejected record needs a reason")

    def to_dict(self) -> dict:
        data = {
            "tool": self.tool,
            "state": self.state.value,
            "metadata": {
                "source": self.source,
                "code_url": self.code_url,
                "category": self.category,
                "datasets": list(self.datasets),
                "frameworks": list(self.frameworks),
                "reported": dict(self.reported),
            },
            "reproduction": {
                "executed": self.executed,
                "replicated": self.replicated,
                "measured": dict(self.measured),
            },
            "structure": {
                "inputs": list(self.input_kinds),
                "output": self.output_kind,
                "auxiliary": list(self.auxiliary),
                "format_constraints": list(self.format_constraints),
                "params": [p.to_dict() for p in self.params],
            },
            "container": {
                "image": self.container_image,
                "command": self.container_command,
            },
        }
        if self.stage is not None:
            data["metadata"]["stage"] = self.stage.value
        if self.within_tolerance is not None:
            data["reproduction"]["within_tolerance"] = self.within_tolerance
        if self.rejected_reason:
            data["rejected_reason"] = self.rejected_reason
        if self.tolerance is not None:
            data["tolerance"] = self.tolerance
        return data


@dataclass(frozen=True)
class Registry:
    """Immutable set of tool descriptors and reproduction records."""
    tools: Mapping[str, ToolDescriptor]
    records: Mapping[str, ReproductionRecord] = field(default_factory=dict)
    sources: Mapping[str, Path] = field(default_factory=dict)
    tolerance: float = DEFAULT_TOLERANCE

    def __post_init__(self):
        object.__setattr__(self, "tools", MappingProxyType(dict(self.tools)))
        object.__setattr__(self, "records", MappingProxyType(dict(self.records)))
        object.__setattr__(self, "sources", MappingProxyType(dict(self.sources)))

    def __len__(self) -> int:
        return len(self.tools)

    def __contains__(self, tool_id: str) -> bool:
        return tool_id in self.tools or tool_id in BUILTIN_TOOLS

    def get(self, tool_id: str) -> ToolDescriptor:
        """Look up a descriptor; loaded files shadow the built-in noops."""
        if tool_id in self.tools:
            return self.tools[tool_id]
        if tool_id in BUILTIN_TOOLS:
            return BUILTIN_TOOLS[tool_id]
        raise KeyError(f"unknown tool {tool_id!r}")

    def defense_ids(self) -> list[str]:
        return sorted(t.id for t in self.tools.values() if t.is_defense)

    def evaluators(self) -> list[ToolDescriptor]:
        return sorted((t for t in self.tools.values() if t.is_evaluator), key=lambda t: t.id)

    def record_tolerance(self, record: ReproductionRecord) -> float:
        return record.tolerance if record.tolerance is not None else self.tolerance


# ---------------------------------------------------------------------------
# Loading and saving
# ---------------------------------------------------------------------------

def _line_of(text: str, key: str) -> Optional[int]:
    pattern = re.compile(rf"^\s*{re.escape(key)}\s*=")
    for number, line in enumerate(text.splitlines(), 1):
        if pattern.match(line):
            return number
    return None


def _read_toml(path: Path) -> tuple[dict, str]:
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise RegistryError(f"cannot read file: {e}", path) from None
    try:
        return tomllib.loads(text), text
    except tomllib.TOMLDecodeError as e:
        match = re.search(r"line (\d+)", str(e))
        raise RegistryError(f"malformed TOML: {e}", path, int(match.group(1)) if match else None) from None


def _enum(cls, value, what: str, path: Path, text: str, key: str):
    try:
        return cls(value)
    except ValueError:
        choices = ", ".join(m.value for m in cls)
        raise RegistryError(f"unknown {what} {value!r} (expected one of: {choices})",
                            path, _line_of(text, key)) from None


def _params(entries: Iterable[dict], path: Path, text: str) -> tuple[ParamSpec, ...]:
    params = []
    for entry in entries:
        try:
            name, kind = entry["name"], entry["kind"]
        except (KeyError, TypeError):
            raise RegistryError("parameter entries need name and kind", path, _line_of(text, "name")) from None
        if kind not in PARAM_KINDS:
            raise RegistryError(f"unknown parameter kind {kind!r}", path, _line_of(text, "kind"))
        default = entry.get("default")
        expected = PARAM_KINDS[kind]
        if kind == "float" and isinstance(default, int) and not isinstance(default, bool):
            default = float(default)
        if default is None or not isinstance(default, expected) or (kind != "bool" and isinstance(default, bool)):
            raise RegistryError(f"default for parameter {name!r} is not a {kind}", path, _line_of(text, "default"))
        params.append(ParamSpec(name, kind, default))
    return tuple(params)


def parse_descriptor(data: dict, path: Path, text: str = "") -> ToolDescriptor:
    """Build a ToolDescriptor from parsed TOML, with file+line diagnostics."""
    for key in ("id", "category", "stage", "version"):
        if key not in data:
            raise RegistryError(f"missing required key {key!r}", path)

    tool_id = data["id"]
    if not isinstance(tool_id, str) or not TOOL_ID.fullmatch(tool_id):
        raise RegistryError(f"tool id {tool_id!r} must match [a-z0-9_]+", path, _line_of(text, "id"))

    category = data["category"]
    if category not in CATEGORIES:
        raise RegistryError(f"unknown category {category!r} (expected one of: {', '.join(CATEGORIES)})",
                            path, _line_of(text, "category"))
    stage = _enum(Stage, data["stage"], "stage", path, text, "stage")

    invocation = data.get("invocation", {})
    default_inputs, default_output = EVALUATOR_IO if category == "evaluator" else STAGE_IO[stage]
    inputs = tuple(_enum(ArtifactKind, k, "artifact kind", path, text, "inputs")
                   for k in invocation.get("inputs", sorted(default_inputs)))
    output = _enum(ArtifactKind, invocation.get("output", default_output.value),
                   "artifact kind", path, text, "output")
    deterministic = invocation.get("deterministic")
    if deterministic is not None and not isinstance(deterministic, bool):
        raise RegistryError("invocation.deterministic must be a boolean", path, _line_of(text, "deterministic"))

    tool = ToolDescriptor(
        id=tool_id,
        name=data.get("name", tool_id),
        category=category,
        stage=stage,
        version=str(data["version"]),
        datasets=frozenset(data.get("datasets", [])),
        invocation=Invocation(
            backend=invocation.get("backend", "process"),
            command=invocation.get("command", ""),
            inputs=inputs,
            output=output,
            resources=tuple(invocation.get("resources", [])),
            deterministic=deterministic,
        ),
        params=_params(data.get("params", []), path, text),
        metrics=tuple(data.get("metrics", [])),
    )
    problem = contract_problem(tool)
    if problem:
        raise RegistryError(f"inconsistent I/O contract: {problem}", path, _line_of(text, "stage"))
    if tool.invocation.backend != "builtin" and not tool.invocation.command:
        raise RegistryError("invocation.command is required", path)
    return tool


def parse_record(data: dict, path: Path, text: str = "") -> ReproductionRecord:
    """Build a ReproductionRecord from parsed TOML."""
    if "tool" not in data:
        raise RegistryError("missing required key 'tool'", path)
    meta = data.get("metadata", {})
    repro = data.get("reproduction", {})
    structure = data.get("structure", {})
    container = data.get("container", {})
    stage = meta.get("stage")
    try:
        return ReproductionRecord(
            tool=data["tool"],
            source=meta.get("source", ""),
            code_url=meta.get("code_url", ""),
            category=meta.get("category", ""),
            stage=_enum(Stage, stage, "stage", path, text, "stage") if stage else None,
            datasets=tuple(meta.get("datasets", [])),
            frameworks=tuple(meta.get("frameworks", [])),
            reported={k: float(v) for k, v in meta.get("reported", {}).items()},
            executed=bool(repro.get("executed", False)),
            measured={k: float(v) for k, v in repro.get("measured", {}).items()},
            within_tolerance=repro.get("within_tolerance"),
            replicated=bool(repro.get("replicated", False)),
            input_kinds=tuple(structure.get("inputs", [])),
            output_kind=structure.get("output", ""),
            auxiliary=tuple(structure.get("auxiliary", [])),
            params=_params(structure.get("params", []), path, text),
            format_constraints=tuple(structure.get("format_constraints", [])),
            container_image=container.get("image", ""),
            container_command=container.get("command", ""),
            state=_enum(FunnelState, data.get("state", "candidate"), "funnel state", path, text, "state"),
            rejected_reason=data.get("rejected_reason", ""),
            tolerance=data.get("tolerance"),
        )
    except FunnelError as e:
        raise RegistryError(str(e), path, _line_of(text, "state")) from None


def load_descriptor(path: Path) -> ToolDescriptor:
    data, text = _read_toml(path)
    return parse_descriptor(data, path, text)


def load_record(path: Path) -> ReproductionRecord:
    data, text = _read_toml(path)
    return parse_record(data, path, text)


def save_record(record: ReproductionRecord, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(tomli_w.dumps(record.to_dict()), encoding="utf-8")


def save_descriptor(tool: ToolDescriptor, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(tomli_w.dumps(tool.to_dict()), encoding="utf-8")


def load_registry(path: Path, tolerance: float = DEFAULT_TOLERANCE) -> Registry:
    """
    Load every descriptor and reproduction record under a directory.

    Descriptors are read from <path>/tools/*.toml when that directory exists,
    otherwise from <path>/*.toml. Records are read from
    <path>/records/*.record.toml.

    Args:
        path: Registry root directory
        tolerance: Registry-level reproducibility tolerance (points)

    Returns:
        Registry: Loaded registry (empty when there are no files)

    Raises:
        RegistryError: Duplicate ids, malformed files, unknown stage/category
    """
    root = Path(path)
    if not root.is_dir():
        raise RegistryError("registry directory not found", root)

    tool_dir = root / "tools" if (root / "tools").is_dir() else root
    tools: dict[str, ToolDescriptor] = {}
    sources: dict[str, Path] = {}
    for file in sorted(tool_dir.glob("*.toml")):
        if file.name.endswith(".record.toml"):
            continue
        tool = load_descriptor(file)
        if tool.id in tools:
            data, text = _read_toml(file)
            raise RegistryError(f"duplicate tool id {tool.id!r}, also defined in {sources[tool.id]}",
                                file, _line_of(text, "id"))
        tools[tool.id] = tool
        sources[tool.id] = file

    records: dict[str, ReproductionRecord] = {}
    record_dir = root / "records"
    if record_dir.is_dir():
        for file in sorted(record_dir.glob("*.record.toml")):
            record = load_record(file)
            if record.tool in records:
                raise RegistryError(f"duplicate record for tool {record.tool!r}", file)
            records[record.tool] = record

    logger.debug("Loaded %d tools and %d records from %s", len(tools), len(records), root)
    return Registry(tools, records, sources, tolerance)


def save_registry(registry: Registry, path: Path) -> None:
    """Write descriptors to <path>/tools and records to <path>/records."""
    root = Path(path)
    for tool in registry.tools.values():
        save_descriptor(tool, root / "tools" / f"{tool.id}.toml")
    for record in registry.records.values():
        save_record(record, root / "records" / f"{record.tool}.record.toml")


# ---------------------------------------------------------------------------
# Onboarding funnel
# ---------------------------------------------------------------------------

def check_reproduction(record: ReproductionRecord, tolerance: float = DEFAULT_TOLERANCE) -> ReproductionOutcome:
    """
    Compare measured metrics with the reported targets.

    Args:
        record: Record with reported and measured metrics
        tolerance: Allowed absolute difference in percentage points

    Returns:
        ReproductionOutcome: pass iff every |measured - reported| <= tolerance

    Raises:
        FunnelError: No reported metrics, or a reported metric was not measured
    """
    if not record.reported:
        raise FunnelError(f"{record.tool}: no reported target metrics")
    missing = sorted(set(record.reported) - set(record.measured))
    if missing:
        raise FunnelError(f"{record.tool}: measured value missing for {', '.join(missing)}")

    # rounding keeps 87.9 - 84.9 at exactly 3.0
    deltas = {name: round(record.measured[name] - reported, 9) for name, reported in record.reported.items()}
    offending = {name: delta for name, delta in deltas.items() if abs(delta) > tolerance}
    return ReproductionOutcome(not offending, deltas, offending, tolerance)


def advance_funnel(record: ReproductionRecord, evidence: CheckResult) -> ReproductionRecord:
    """
    Move a record one funnel step forward, or reject it.

    Raises:
        FunnelError: The record is terminal, the check was already passed,
            or the evidence is for a later check than the pending one
    """
    if record.state in (FunnelState.REJECTED, FunnelState.ONBOARDED):
        raise FunnelError(f"{record.tool}: record is already {record.state.value}")

    passed = PASSED_CHECKS[record.state]
    index = CHECK_ORDER.index(evidence.check)
    if index < passed:
        raise FunnelError(f"{record.tool}: {evidence.check.value} check already passed")
    if index > passed:
        pending = CHECK_ORDER[passed].value if passed < len(CHECK_ORDER) else "finalize"
        raise FunnelError(f"{record.tool}: {evidence.check.value} evidence out of order, pending {pending}")

    if not evidence.passed:
        reason = evidence.reason or f"{evidence.check.value} check failed"
        return replace(record, state=FunnelState.REJECTED, rejected_reason=reason)

    if evidence.check is Check.REPRODUCIBILITY:
        state = FunnelState.REPLICATED if evidence.replicated else FunnelState.REPRODUCED
    elif evidence.check is Check.STRUCTURAL:
        state = FunnelState.STRUCTURALLY_COMPOSABLE
    else:
        state = FunnelState.CONTAINERIZED
    return replace(record, state=state)


def finalize(record: ReproductionRecord) -> ReproductionRecord:
    """Containerized -> Onboarded."""
    if record.state is not FunnelState.CONTAINERIZED:
        raise FunnelError(f"{record.tool}: only containerized records can be onboarded, state is {record.state.value}")
    return replace(record, state=FunnelState.ONBOARDED)


def structural_evidence(record: ReproductionRecord) -> CheckResult:
    """Check that the recorded interface produces a reusable artifact that fits its stage."""
    if record.stage is None:
        return CheckResult(Check.STRUCTURAL, False, "no intended stage recorded")
    if not record.output_kind:
        return CheckResult(Check.STRUCTURAL, False, "no reusable artifact")
    try:
        inputs = frozenset(ArtifactKind(k) for k in record.input_kinds)
        output = ArtifactKind(record.output_kind)
    except ValueError as e:
        return CheckResult(Check.STRUCTURAL, False, f"unknown artifact kind: {e}")
    expected = EVALUATOR_IO if record.category == "evaluator" else STAGE_IO[record.stage]
    if inputs != expected[0] or output is not expected[1]:
        return CheckResult(Check.STRUCTURAL, False,
                           f"interface does not chain at the {record.stage.value} stage")
    return CheckResult(Check.STRUCTURAL, True)


def container_evidence(record: ReproductionRecord) -> CheckResult:
    if record.container_image or record.container_command:
        return CheckResult(Check.CONTAINERIZATION, True)
    return CheckResult(Check.CONTAINERIZATION, False, "no runtime image or command")


def run_funnel(record: ReproductionRecord, tolerance: float = DEFAULT_TOLERANCE) -> tuple[ReproductionRecord, list[CheckResult]]:
    """
    Run every pending funnel check in order and finalize when all pass.

    Returns:
        tuple: (updated record, evidence applied in order)
    """
    steps: list[CheckResult] = []
    if record.state in (FunnelState.REJECTED, FunnelState.ONBOARDED):
        return record, steps

    if record.state is FunnelState.CANDIDATE:
        if not record.executed:
            evidence = CheckResult(Check.REPRODUCIBILITY, False, "artifact did not execute")
        else:
            try:
                outcome = check_reproduction(record, tolerance)
            except FunnelError as e:
                evidence = CheckResult(Check.REPRODUCIBILITY, False, str(e))
            else:
                record = replace(record, within_tolerance=outcome.passed)
                evidence = outcome.as_evidence(record.replicated)
        steps.append(evidence)
        record = advance_funnel(record, evidence)

    if record.state in (FunnelState.REPRODUCED, FunnelState.REPLICATED):
        evidence = structural_evidence(record)
        steps.append(evidence)
        record = advance_funnel(record, evidence)

    if record.state is FunnelState.STRUCTURALLY_COMPOSABLE:
        evidence = container_evidence(record)
        steps.append(evidence)
        record = advance_funnel(record, evidence)

    if record.state is FunnelState.CONTAINERIZED:
        record = finalize(record)
    return record, steps
