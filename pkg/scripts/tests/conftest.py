"""Shared fixtures: the four-tool cast (a pre, b during, c1/c2 post) and helpers."""

import sys
from pathlib import Path

# Add parent to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest

from landseer.combinator import ExperimentSpec
from landseer.metrics import METRIC_CATALOG, MetricSpec
from landseer.registry import EVALUATOR_IO, STAGE_IO, Invocation, Registry, Stage, ToolDescriptor
from landseer.synthkit import GroundTruthModel

DATA_DIR = Path(__file__).parent / "data"


def make_tool(tool_id: str, stage: Stage, category: str = "ev", metrics=(), deterministic=None,
              command: str = "true", resources=(), version: str = "1.0", params=()) -> ToolDescriptor:
    inputs, output = EVALUATOR_IO if category == "evaluator" else STAGE_IO[stage]
    return ToolDescriptor(
        id=tool_id,
        name=tool_id,
        category=category,
        stage=stage,
        version=version,
        datasets=frozenset({"*"}),
        invocation=Invocation("process", command, tuple(sorted(inputs)), output, tuple(resources), deterministic),
        params=tuple(params),
        metrics=tuple(metrics),
    )


def cast_tools(metrics=("acc",)) -> dict[str, ToolDescriptor]:
    tools = [
        make_tool("a", Stage.PRE),
        make_tool("b", Stage.DURING),
        make_tool("c1", Stage.POST),
        make_tool("c2", Stage.POST),
        make_tool("evaluator", Stage.DEPLOY, category="evaluator", metrics=metrics),
    ]
    return {t.id: t for t in tools}


def cast_spec(metrics=("acc",), **overrides) -> ExperimentSpec:
    fields = dict(
        id="four-tool",
        model="resnet18",
        dataset="cifar10",
        candidates={Stage.PRE: ("a",), Stage.DURING: ("b",), Stage.POST: ("c1", "c2")},
        metrics=tuple(METRIC_CATALOG[m] if isinstance(m, str) else m for m in metrics),
    )
    fields.update(overrides)
    return ExperimentSpec(**fields)


@pytest.fixture
def registry() -> Registry:
    return Registry(cast_tools())


@pytest.fixture
def spec() -> ExperimentSpec:
    return cast_spec()


def divergence_model() -> GroundTruthModel:
    """
    a (pre), b (during), c (post). {a,b} and {a,c} cancel on m_ev, so the
    single leaf a+b+c shows nothing while a+b and a+c both interfere.
    """
    return GroundTruthModel(
        tools={"a": Stage.PRE, "b": Stage.DURING, "c": Stage.POST},
        base={"acc": 90.0, "m_ev": 50.0},
        pairwise={(frozenset({"a", "b"}), "m_ev"): -10.0, (frozenset({"a", "c"}), "m_ev"): 10.0},
    )


def planted_model() -> GroundTruthModel:
    """One severe pairwise term, one severe order term, one global term."""
    return GroundTruthModel(
        tools={"a": Stage.PRE, "b": Stage.DURING, "c1": Stage.POST, "c2": Stage.POST},
        base={"acc": 90.0, "m_ev": 50.0, "m_wm": 60.0},
        pairwise={(frozenset({"a", "c1"}), "m_ev"): -8.0},
        order={("c1", "c2", Stage.POST, "m_wm"): 7.0},
        global_terms={("b", "acc"): -6.0},
    )


@pytest.fixture
def acc_metric() -> MetricSpec:
    return METRIC_CATALOG["acc"]
