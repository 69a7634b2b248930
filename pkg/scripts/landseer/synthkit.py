"""
Synthetic Tools and Oracles

A ground-truth model declares how synthetic defenses move each metric:

    base       metric values of the undefended pipeline
    solo       (tool, metric) -> delta whenever the tool is present
    pairwise   ({a, b}, metric) -> delta when both are present
    order      (earlier, later, stage, metric) -> delta when both sit in
               that stage in that relative order
    global     (tool, metric) -> delta when the tool is present alongside
               at least one other tool

generate_tools() writes one stub script plus a descriptor per tool. Each
stub copies its input through and appends itself to trace.json; the
evaluator stub applies the model to the trace. Oracles recompute counts
and findings by brute force, without the planner or graph machinery.
"""

import argparse
import itertools
import json
import logging
import random
import shlex
import shutil
try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Optional, Sequence

import tomli_w

from .combinator import Combination, ExperimentSpec
from .metrics import METRIC_CATALOG, Direction, MetricSpec, ResultVector, Thresholds, compare
from .registry import EVALUATOR_IO, STAGE_IO, STAGES, Invocation, Registry, Stage, ToolDescriptor, save_descriptor

logger = logging.getLogger(__name__)

EVALUATOR_ID = "synth_eval"
SCRIPTS_DIR = Path(__file__).resolve().parent.parent

STUB_TEMPLATE = '''#!/usr/bin/env python3
"""Synthetic defense stub (generated)."""

import sys

sys.path.insert(0, {scripts!r})

from landseer.synthkit import run_stub

if __name__ == "__main__":
    sys.exit(run_stub(sys.argv[1:]))
'''


@dataclass(frozen=True)
class GroundTruthModel:
    """Declared interaction model of a synthetic tool cast."""
    tools: Mapping[str, Stage]
    base: Mapping[str, float]
    solo: Mapping[tuple[str, str], float] = field(default_factory=dict)
    pairwise: Mapping[tuple[frozenset, str], float] = field(default_factory=dict)
    order: Mapping[tuple[str, str, Stage, str], float] = field(default_factory=dict)
    global_terms: Mapping[tuple[str, str], float] = field(default_factory=dict)
    directions: Mapping[str, Direction] = field(default_factory=dict)

    def __post_init__(self):
        if "acc" not in self.base:
            raise ValueError("a ground-truth model needs a base value for acc")
        for metric in self._term_metrics():
            if metric not in self.base:
                raise ValueError(f"term metric {metric!r} has no base value")

    def _term_metrics(self) -> set[str]:
        keys = [*self.solo, *self.global_terms]
        metrics = {metric for _, metric in keys}
        metrics |= {metric for _, metric in self.pairwise}
        metrics |= {key[3] for key in self.order}
        return metrics

    @property
    def metric_names(self) -> list[str]:
        return ["acc"] + sorted(m for m in self.base if m != "acc")

    def metric_specs(self) -> tuple[MetricSpec, ...]:
        specs = []
        for name in self.metric_names:
            if name in self.directions:
                specs.append(MetricSpec(name, self.directions[name]))
            elif name in METRIC_CATALOG:
                specs.append(METRIC_CATALOG[name])
            else:
                specs.append(MetricSpec(name, Direction.HIGHER_BETTER))
        return tuple(specs)

    def stage_tools(self, stage: Stage) -> tuple[str, ...]:
        return tuple(sorted(t for t, s in self.tools.items() if s is stage))

    def to_dict(self) -> dict:
        data = {
            "tools": {tool: stage.value for tool, stage in sorted(self.tools.items())},
            "base": dict(self.base),
            "solo": [{"tool": t, "metric": m, "delta": d} for (t, m), d in sorted(self.solo.items())],
            "pairwise": [{"tools": sorted(pair), "metric": m, "delta": d}
                         for (pair, m), d in sorted(self.pairwise.items(), key=lambda kv: (sorted(kv[0][0]), kv[0][1]))],
            "order": [{"earlier": e, "later": l, "stage": s.value, "metric": m, "delta": d}
                      for (e, l, s, m), d in sorted(self.order.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][3]))],
            "global": [{"tool": t, "metric": m, "delta": d} for (t, m), d in sorted(self.global_terms.items())],
        }
        if self.directions:
            data["directions"] = {m: d.value for m, d in sorted(self.directions.items())}
        return data

    @classmethod
    def from_dict(cls, data: Mapping) -> "GroundTruthModel":
        return cls(
            tools={tool: Stage(stage) for tool, stage in data["tools"].items()},
            base={m: float(v) for m, v in data["base"].items()},
            solo={(t["tool"], t["metric"]): float(t["delta"]) for t in data.get("solo", [])},
            pairwise={(frozenset(t["tools"]), t["metric"]): float(t["delta"]) for t in data.get("pairwise", [])},
            order={(t["earlier"], t["later"], Stage(t["stage"]), t["metric"]): float(t["delta"])
                   for t in data.get("order", [])},
            global_terms={(t["tool"], t["metric"]): float(t["delta"]) for t in data.get("global", [])},
            directions={m: Direction(d) for m, d in data.get("directions", {}).items()},
        )


def load_model(path: Path) -> GroundTruthModel:
    return GroundTruthModel.from_dict(tomllib.loads(Path(path).read_text(encoding="utf-8")))


def save_model(model: GroundTruthModel, path: Path) -> None:
    Path(path).write_text(tomli_w.dumps(model.to_dict()), encoding="utf-8")


def trace_of(combination: Combination) -> list[tuple[str, Stage]]:
    """Tools in pipeline order, each with its stage."""
    return [(tool, stage) for stage, tools in zip(STAGES, combination.stages) for tool in tools]


def apply_model(model: GroundTruthModel, trace: Sequence[tuple[str, Stage]]) -> dict[str, float]:
    """Metric values after applying the traced tools. Pure and order-stable."""
    present = {tool for tool, _ in trace}
    values = dict(model.base)

    for (tool, metric), delta in sorted(model.solo.items()):
        if tool in present:
            values[metric] += delta
    for (pair, metric), delta in sorted(model.pairwise.items(), key=lambda kv: (sorted(kv[0][0]), kv[0][1])):
        if pair <= present:
            values[metric] += delta
    for (earlier, later, stage, metric), delta in sorted(model.order.items(),
                                                         key=lambda kv: (kv[0][0], kv[0][1], kv[0][2].value, kv[0][3])):
        in_stage = [tool for tool, s in trace if s is stage]
        if earlier in in_stage and later in in_stage and in_stage.index(earlier) < in_stage.index(later):
            values[metric] += delta
    if len(present) >= 2:
        for (tool, metric), delta in sorted(model.global_terms.items()):
            if tool in present:
                values[metric] += delta
    return {name: round(values[name], 9) for name in model.metric_names}


def oracle_evaluate(model: GroundTruthModel, combination: Combination) -> ResultVector:
    return ResultVector(combination.id, None, apply_model(model, trace_of(combination)))


# ---------------------------------------------------------------------------
# Stub generation
# ---------------------------------------------------------------------------

def generate_tools(model: GroundTruthModel, out_dir: Path) -> list[ToolDescriptor]:
    """
    Write synth-tools/stub.py, synth-tools/model.toml and tools/<id>.toml.

    Returns:
        list[ToolDescriptor]: One per defense plus the evaluator
    """
    out_dir = Path(out_dir)
    stub_dir = out_dir / "synth-tools"
    stub_dir.mkdir(parents=True, exist_ok=True)
    stub = stub_dir / "stub.py"
    stub.write_text(STUB_TEMPLATE.format(scripts=str(SCRIPTS_DIR)), encoding="utf-8")
    stub.chmod(0o755)
    model_path = stub_dir / "model.toml"
    save_model(model, model_path)

    stub_arg = shlex.quote(str(stub.resolve()))
    descriptors = []
    for tool, stage in sorted(model.tools.items()):
        inputs, output = _stage_io(stage)
        command = f"{{python}} {stub_arg} tool --id {tool} --stage {stage.value} --data {{data}} --output {{output}}"
        descriptors.append(ToolDescriptor(
            id=tool, name=f"synthetic {tool}", category="ev", stage=stage, version="synthetic-1",
            datasets=frozenset({"*"}), invocation=Invocation("process", command, inputs, output),
        ))

    command = (f"{{python}} {stub_arg} evaluate --model {shlex.quote(str(model_path.resolve()))} "
               f"--data {{data}} --config {{config}} --output {{output}}")
    descriptors.append(ToolDescriptor(
        id=EVALUATOR_ID, name="synthetic evaluator", category="evaluator", stage=Stage.DEPLOY,
        version="synthetic-1", datasets=frozenset({"*"}),
        invocation=Invocation("process", command, tuple(sorted(EVALUATOR_IO[0])), EVALUATOR_IO[1], (), True),
        metrics=tuple(model.metric_names),
    ))
    for descriptor in descriptors:
        save_descriptor(descriptor, out_dir / "tools" / f"{descriptor.id}.toml")
    return descriptors


def _stage_io(stage: Stage):
    inputs, output = STAGE_IO[stage]
    return tuple(sorted(inputs)), output


def build_experiment(model: GroundTruthModel, out_dir: Path, experiment_id: str = "synthetic",
                     seeds: int = 1, max_tools: Optional[Mapping[Stage, int]] = None) -> Path:
    """Write experiment.toml for the model's cast; the registry is out_dir itself."""
    data = {
        "id": experiment_id,
        "model": "synthetic-net",
        "dataset": "synthetic",
        "registry": ".",
        "seeds": seeds,
        "candidates": {stage.value: list(model.stage_tools(stage)) for stage in STAGES if model.stage_tools(stage)},
        "metrics": [m.to_dict() for m in model.metric_specs()],
        "thresholds": {"low": 2.0, "high": 5.0, "gi_fraction": 0.95},
    }
    if max_tools:
        data["max_tools"] = {stage.value: cap for stage, cap in max_tools.items()}
    path = Path(out_dir) / "experiment.toml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(tomli_w.dumps(data), encoding="utf-8")
    return path


def _single_parent(data: Path) -> Path:
    parents = sorted(p for p in data.iterdir() if p.is_dir())
    if len(parents) != 1:
        raise SystemExit(f"expected exactly one input under {data}, found {len(parents)}")
    return parents[0]


def _read_trace(parent: Path) -> list[dict]:
    trace = parent / "trace.json"
    return json.loads(trace.read_text(encoding="utf-8")) if trace.exists() else []


def run_stub(argv: Sequence[str]) -> int:
    """Entry point of the generated stub script."""
    parser = argparse.ArgumentParser(prog="stub")
    sub = parser.add_subparsers(dest="command", required=True)

    tool = sub.add_parser("tool")
    tool.add_argument("--id", required=True)
    tool.add_argument("--stage", required=True)
    tool.add_argument("--data", type=Path, required=True)
    tool.add_argument("--output", type=Path, required=True)

    evaluate = sub.add_parser("evaluate")
    evaluate.add_argument("--model", type=Path, required=True)
    evaluate.add_argument("--data", type=Path, required=True)
    evaluate.add_argument("--config", type=Path, required=True)
    evaluate.add_argument("--output", type=Path, required=True)

    args = parser.parse_args(argv)
    parent = _single_parent(args.data)
    trace = _read_trace(parent)

    if args.command == "tool":
        shutil.copytree(parent, args.output, dirs_exist_ok=True)
        trace.append({"tool": args.id, "stage": args.stage})
        (args.output / "trace.json").write_text(json.dumps(trace, sort_keys=True) + "\n", encoding="utf-8")
        return 0

    model = load_model(args.model)
    values = apply_model(model, [(t["tool"], Stage(t["stage"])) for t in trace])
    params = json.loads((args.config / "tool.json").read_text(encoding="utf-8"))
    metric = params.get("metric")
    metrics = {metric: values[metric]} if metric else values
    (args.output / "metrics.json").write_text(json.dumps(metrics, sort_keys=True) + "\n", encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# Oracles
# ---------------------------------------------------------------------------

def _sequences(candidates: Sequence[str], cap: int, prefix: tuple[str, ...] = ()) -> list[tuple[str, ...]]:
    found = [prefix]
    if len(prefix) < cap:
        for tool in candidates:
            if tool not in prefix:
                found.extend(_sequences(candidates, cap, prefix + (tool,)))
    return found


def brute_force_combinations(spec: ExperimentSpec) -> list[Combination]:
    """Recursive enumerator, independent of the closed form and itertools products."""
    per_stage = [_sequences(spec.stage_candidates(s), spec.stage_cap(s)) for s in STAGES]

    def expand(index: int, chosen: tuple) -> list[Combination]:
        if index == len(per_stage):
            return [Combination(chosen)]
        out = []
        for sequence in per_stage[index]:
            out.extend(expand(index + 1, chosen + (sequence,)))
        return out

    return expand(0, ())


def oracle_unique_tasks(spec: ExperimentSpec, registry: Registry) -> int:
    """
    Distinct tasks counted as distinct execution paths.

    A task is the path of (tool, seed-if-stochastic) steps from Ingest to
    itself; Evaluate tasks add their metric.
    """
    stochastic_by_default = {Stage.DURING, Stage.POST}
    paths: set[tuple] = set()
    for combination in brute_force_combinations(spec):
        for seed in range(spec.seeds):
            path: tuple = (("ingest",),)
            paths.add(path)
            for stage in STAGES:
                tools = combination.sequence(stage) or ((spec.trainer,) if stage is Stage.DURING else ())
                for tool_id in tools:
                    flag = registry.get(tool_id).invocation.deterministic
                    stochastic = (not flag) if flag is not None else stage in stochastic_by_default
                    path = path + ((tool_id, seed if stochastic else None),)
                    paths.add(path)
            for metric in spec.metrics:
                paths.add(path + (("evaluate", metric.name),))
    return len(paths)


@dataclass(frozen=True)
class OracleFinding:
    focus: str
    node: str
    effects: frozenset[tuple[str, str]]
    overall: str
    labels: frozenset[str]


def _remove_focus(combination: Combination, focus: str) -> Combination:
    return Combination(tuple(tuple(t for t in tools if t != focus) for tools in combination.stages))


def _strict_sub_removals(combination: Combination, focus: str) -> list[Combination]:
    """Every combination reached by deleting a non-empty set of non-focus tools."""
    others = [t for t in combination.tools if t != focus]
    out = []
    for size in range(1, len(others) + 1):
        for dropped in itertools.combinations(sorted(others), size):
            out.append(Combination(tuple(tuple(t for t in tools if t not in dropped)
                                         for tools in combination.stages)))
    return out


def oracle_findings(model: GroundTruthModel, spec: ExperimentSpec,
                    thresholds: Optional[Thresholds] = None, gi_fraction: Optional[float] = None,
                    metrics: Optional[Sequence[MetricSpec]] = None) -> set[OracleFinding]:
    """Expected minimal root causes with labels, by brute force over the lattice."""
    thresholds = thresholds or spec.thresholds
    gi_fraction = spec.gi_fraction if gi_fraction is None else gi_fraction
    metrics = tuple(metrics or spec.metrics)
    combinations = brute_force_combinations(spec)

    vectors = {c.id: oracle_evaluate(model, c) for c in combinations}
    expected: set[OracleFinding] = set()
    focus_tools = sorted({t for s in STAGES for t in spec.stage_candidates(s)})

    for focus in focus_tools:
        containing = [c for c in combinations if focus in c]
        results = {}
        for c in containing:
            results[c.id] = compare(vectors[c.id], vectors[_remove_focus(c, focus).id], metrics, thresholds)

        eligible = [c for c in containing if c.cardinality >= 2]
        share = sum(results[c.id].interferes for c in eligible) / len(eligible) if eligible else None
        is_global = share is not None and share >= gi_fraction

        for c in containing:
            outcome = results[c.id]
            if not outcome.interferes:
                continue
            if any(results[a.id].interferes for a in _strict_sub_removals(c, focus)):
                continue
            labels = set()
            if c.cardinality == 2:
                labels.add("PW")
            shape = [set(tools) for tools in c.stages]
            reorderings = [o for o in containing if o != c and [set(tools) for tools in o.stages] == shape]
            if any(not results[o.id].interferes or results[o.id].overall is not outcome.overall for o in reorderings):
                labels.add("OI")
            if is_global:
                labels.add("GI")
            effects = frozenset((d.metric, d.effect.value) for d in outcome.deltas if d.effect.value != "unchanged")
            expected.add(OracleFinding(focus, c.id, effects, outcome.overall.value, frozenset(labels)))
    return expected


DELTA_CHOICES = (-9.0, -6.0, -3.5, -1.0, 0.5, 2.5, 4.0, 7.5)


def random_model(seed: int, max_tools: int = 6, metrics: Sequence[str] = ("acc", "m_ev")) -> GroundTruthModel:
    """
    Random cast of 2..max_tools tools (at most two per stage) with random terms.

    Deltas are multiples of 0.5 so sums stay exact in binary floating point.
    """
    rng = random.Random(seed)
    count = rng.randint(2, max_tools)
    slots = [stage for stage in STAGES for _ in range(2)]
    rng.shuffle(slots)
    tools = {f"t{i}": slots[i] for i in range(count)}
    names = sorted(tools)
    base = {m: float(rng.choice((50, 60, 70, 80, 90))) for m in metrics}

    def term_count() -> int:
        return rng.randint(0, 2)

    solo = {(rng.choice(names), rng.choice(metrics)): rng.choice(DELTA_CHOICES) for _ in range(term_count())}
    pairwise = {(frozenset(rng.sample(names, 2)), rng.choice(metrics)): rng.choice(DELTA_CHOICES)
                for _ in range(term_count())}
    order = {}
    for _ in range(term_count()):
        stage = rng.choice(STAGES)
        members = [t for t in names if tools[t] is stage]
        if len(members) == 2:
            earlier, later = rng.sample(members, 2)
            order[(earlier, later, stage, rng.choice(metrics))] = rng.choice(DELTA_CHOICES)
    global_terms = {(rng.choice(names), rng.choice(metrics)): rng.choice(DELTA_CHOICES)
                    for _ in range(rng.randint(0, 1))}
    return GroundTruthModel(tools, base, solo, pairwise, order, global_terms)


def model_spec(model: GroundTruthModel, experiment_id: str = "synthetic",
               max_tools: Optional[Mapping[Stage, int]] = None) -> ExperimentSpec:
    """In-memory experiment over the model's cast (no files written)."""
    return ExperimentSpec(
        id=experiment_id,
        model="synthetic-net",
        dataset="synthetic",
        candidates={stage: model.stage_tools(stage) for stage in STAGES if model.stage_tools(stage)},
        metrics=model.metric_specs(),
        max_tools=dict(max_tools or {}),
    )
