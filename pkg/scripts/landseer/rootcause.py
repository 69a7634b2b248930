"""
Root Cause Analysis

Finds the lowest-cardinality combinations that introduce interference in
each focus tool's graph, then characterizes every finding:

    PW  pairwise: the root cause holds exactly two tools
    OI  order-induced: a reordering (horizontal neighbor) does not
        interfere, or interferes in a different overall direction
    GI  global: the focus tool interferes in at least gi_fraction of its
        evaluated combinations of cardinality >= 2

Two traversal modes. "faithful" starts from the leaves and climbs through
interfering parents only, so interior interference under non-interfering
leaves stays invisible. "exhaustive" tests every node and keeps those with
no interfering vertical ancestor.
"""

import logging
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Optional

from .igraph import InterferenceGraph, leaves
from .metrics import Comparator, Comparison, DeltaRecord, Overall, Thresholds
from .registry import Stage

logger = logging.getLogger(__name__)

FAITHFUL = "faithful"
EXHAUSTIVE = "exhaustive"
MODES = (FAITHFUL, EXHAUSTIVE)

LABEL_ORDER = ("PW", "OI", "GI")


@dataclass(frozen=True)
class Placement:
    tool: str
    stage: Stage
    position: int

    def to_dict(self) -> dict:
        return {"tool": self.tool, "stage": self.stage.value, "position": self.position}


@dataclass(frozen=True)
class Finding:
    """One root cause: a node that interferes with its prime."""
    focus: str
    node: str
    prime: str
    neighbors: tuple[str, ...]
    deltas: tuple[DeltaRecord, ...]
    overall: Overall
    cardinality: int
    mode: str = FAITHFUL
    labels: frozenset[str] = frozenset()
    cardinality_difference: int = 1
    focus_placement: Optional[Placement] = None
    added_tools: tuple[Placement, ...] = ()
    order_disagreements: tuple[str, ...] = ()

    @property
    def sorted_labels(self) -> list[str]:
        return [label for label in LABEL_ORDER if label in self.labels]

    def to_dict(self) -> dict:
        return {
            "focus": self.focus,
            "node": self.node,
            "prime": self.prime,
            "neighbors": list(self.neighbors),
            "deltas": [d.to_dict() for d in self.deltas],
            "overall": self.overall.value,
            "cardinality": self.cardinality,
            "mode": self.mode,
            "labels": self.sorted_labels,
            "cardinality_difference": self.cardinality_difference,
            "focus_placement": self.focus_placement.to_dict() if self.focus_placement else None,
            "added_tools": [p.to_dict() for p in self.added_tools],
            "order_disagreements": list(self.order_disagreements),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "Finding":
        def placement(entry):
            return Placement(entry["tool"], Stage(entry["stage"]), entry["position"])

        focus_placement = data.get("focus_placement")
        return cls(
            focus=data["focus"],
            node=data["node"],
            prime=data["prime"],
            neighbors=tuple(data.get("neighbors", ())),
            deltas=tuple(DeltaRecord.from_dict(d) for d in data["deltas"]),
            overall=Overall(data["overall"]),
            cardinality=data["cardinality"],
            mode=data.get("mode", FAITHFUL),
            labels=frozenset(data.get("labels", ())),
            cardinality_difference=data.get("cardinality_difference", 1),
            focus_placement=placement(focus_placement) if focus_placement else None,
            added_tools=tuple(placement(p) for p in data.get("added_tools", ())),
            order_disagreements=tuple(data.get("order_disagreements", ())),
        )


@dataclass(frozen=True)
class GiScan:
    is_global: bool
    fraction: Optional[float]
    interfering: int
    eligible: int

    def to_dict(self) -> dict:
        return {"is_global": self.is_global, "fraction": self.fraction,
                "interfering": self.interfering, "eligible": self.eligible}


@dataclass
class GraphAnalysis:
    """Findings of one graph, the nodes traversal had to skip and the settings applied."""
    focus: str
    mode: str
    findings: list[Finding] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    gi: Optional[GiScan] = None
    thresholds: Optional[Thresholds] = None
    gi_fraction: Optional[float] = None

    def to_dict(self) -> dict:
        return {
            "focus": self.focus,
            "mode": self.mode,
            "findings": [f.to_dict() for f in self.findings],
            "skipped": list(self.skipped),
            "gi": self.gi.to_dict() if self.gi else None,
            "thresholds": {"low": self.thresholds.low, "high": self.thresholds.high} if self.thresholds else None,
            "gi_fraction": self.gi_fraction,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "GraphAnalysis":
        gi = data.get("gi")
        thresholds = data.get("thresholds")
        return cls(
            focus=data["focus"],
            mode=data["mode"],
            findings=[Finding.from_dict(f) for f in data["findings"]],
            skipped=list(data.get("skipped", ())),
            gi=GiScan(**gi) if gi else None,
            thresholds=Thresholds(thresholds["low"], thresholds["high"]) if thresholds else None,
            gi_fraction=data.get("gi_fraction"),
        )


class _Tester:
    """Memoized node-versus-prime comparisons over one graph."""

    def __init__(self, graph: InterferenceGraph, compare: Comparator):
        self.graph = graph
        self.compare = compare
        self._memo: dict[str, Optional[Comparison]] = {}
        self.skipped: set[str] = set()

    def comparison(self, node: str) -> Optional[Comparison]:
        """None when the node or its prime has no result."""
        if node not in self._memo:
            result = self.graph.result(node)
            prime = self.graph.result(self.graph.prime(node))
            if result is None or prime is None:
                self.skipped.add(node)
                self._memo[node] = None
            else:
                self._memo[node] = self.compare(result, prime)
        return self._memo[node]

    def interferes(self, node: str) -> bool:
        comparison = self.comparison(node)
        return comparison is not None and comparison.interferes


def _finding(graph: InterferenceGraph, node: str, comparison: Comparison, mode: str) -> Finding:
    return Finding(
        focus=graph.focus,
        node=node,
        prime=graph.prime(node),
        neighbors=tuple(graph.neighbors(node)),
        deltas=comparison.deltas,
        overall=comparison.overall,
        cardinality=graph.nodes[node].cardinality,
        mode=mode,
    )


def _traverse(graph: InterferenceGraph, tester: _Tester) -> list[Finding]:
    worklist = list(reversed(leaves(graph)))
    visited: set[str] = set()
    found: dict[str, Finding] = {}
    while worklist:
        node = worklist.pop()
        if node in visited:
            continue
        visited.add(node)
        if not tester.interferes(node):
            continue
        culprits = [p for p in graph.parents(node) if tester.interferes(p)]
        if culprits:
            worklist.extend(p for p in culprits if p not in visited)
        else:
            found[node] = _finding(graph, node, tester.comparison(node), FAITHFUL)
    return sorted(found.values(), key=lambda f: (f.cardinality, f.node))


def traverse(graph: InterferenceGraph, compare: Comparator) -> list[Finding]:
    """
    Leaf-rooted ascent.

    Each interfering node whose parents all fail to interfere with their own
    primes is a root cause. Visited nodes are not examined twice.
    """
    return _traverse(graph, _Tester(graph, compare))


def _ancestors(graph: InterferenceGraph) -> dict[str, set[str]]:
    ancestors: dict[str, set[str]] = {}
    for node in graph.focus_nodes():
        collected: set[str] = set()
        for parent in graph.parents(node):
            collected.add(parent)
            collected |= ancestors[parent]
        ancestors[node] = collected
    return ancestors


def _traverse_exhaustive(graph: InterferenceGraph, tester: _Tester) -> list[Finding]:
    ancestors = _ancestors(graph)
    findings = []
    for node in graph.focus_nodes():
        if not tester.interferes(node):
            continue
        if any(tester.interferes(a) for a in ancestors[node]):
            continue
        findings.append(_finding(graph, node, tester.comparison(node), EXHAUSTIVE))
    return findings


def traverse_exhaustive(graph: InterferenceGraph, compare: Comparator) -> list[Finding]:
    """Every interfering node with no interfering vertical ancestor."""
    return _traverse_exhaustive(graph, _Tester(graph, compare))


def gi_scan(graph: InterferenceGraph, compare: Comparator, fraction: float = 0.95,
            tester: Optional[_Tester] = None) -> GiScan:
    """
    Share of evaluated focus nodes with cardinality >= 2 that interfere.

    No eligible node gives fraction None and is_global False.
    """
    tester = tester or _Tester(graph, compare)
    eligible = interfering = 0
    for node in graph.focus_nodes():
        if graph.nodes[node].cardinality < 2 or tester.comparison(node) is None:
            continue
        eligible += 1
        interfering += tester.interferes(node)
    if eligible == 0:
        return GiScan(False, None, 0, 0)
    share = interfering / eligible
    return GiScan(share >= fraction, share, interfering, eligible)


def _placement(graph: InterferenceGraph, node: str, tool: str) -> Placement:
    combination = graph.nodes[node].combination
    stage = combination.stage_of(tool)
    return Placement(tool, stage, combination.sequence(stage).index(tool))


def characterize(finding: Finding, graph: InterferenceGraph, compare: Comparator,
                 gi: Optional[GiScan] = None, fraction: float = 0.95) -> Finding:
    """
    Fill labels and the structural difference of a finding.

    A neighbor disagrees when it has no interference against its own prime
    or its overall direction differs (mixed counts as a direction).
    """
    tester = _Tester(graph, compare)
    gi = gi or gi_scan(graph, compare, fraction, tester)

    disagreements = []
    for neighbor in finding.neighbors:
        comparison = tester.comparison(neighbor)
        if comparison is None:
            continue
        if not comparison.interferes or comparison.overall is not finding.overall:
            disagreements.append(neighbor)

    labels = set()
    if finding.cardinality == 2:
        labels.add("PW")
    if disagreements:
        labels.add("OI")
    if gi.is_global:
        labels.add("GI")

    node = graph.nodes[finding.node].combination
    added = tuple(_placement(graph, finding.node, tool)
                  for stage in node.stages for tool in stage if tool != finding.focus)
    cardinality_difference = node.cardinality - graph.nodes[finding.prime].cardinality
    return replace(
        finding,
        labels=frozenset(labels),
        cardinality_difference=cardinality_difference,
        focus_placement=_placement(graph, finding.node, finding.focus),
        added_tools=added,
        order_disagreements=tuple(disagreements),
    )


def analyze_graph(graph: InterferenceGraph, compare: Comparator, mode: str = FAITHFUL,
                  gi_fraction: float = 0.95, thresholds: Optional[Thresholds] = None) -> GraphAnalysis:
    """
    Run the chosen traversal and characterize every finding.

    thresholds is recorded on the result only; compare already applies it.
    """
    if mode not in MODES:
        raise ValueError(f"unknown traversal mode {mode!r}")
    analysis = GraphAnalysis(graph.focus, mode, thresholds=thresholds, gi_fraction=gi_fraction)
    if graph.empty:
        return analysis

    tester = _Tester(graph, compare)
    findings = _traverse(graph, tester) if mode == FAITHFUL else _traverse_exhaustive(graph, tester)
    analysis.gi = gi_scan(graph, compare, gi_fraction, tester)
    analysis.findings = [characterize(f, graph, compare, analysis.gi) for f in findings]
    analysis.skipped = sorted(tester.skipped | (set(graph.unevaluated()) & set(graph.focus_nodes())))
    if analysis.skipped:
        logger.warning("Graph %s: skipped %d unevaluated nodes", graph.focus, len(analysis.skipped))
    return analysis


def analyze_all(graphs: Mapping[str, InterferenceGraph], compare: Comparator, mode: str = FAITHFUL,
                gi_fraction: float = 0.95, thresholds: Optional[Thresholds] = None) -> list[GraphAnalysis]:
    return [analyze_graph(graphs[focus], compare, mode, gi_fraction, thresholds) for focus in sorted(graphs)]


def findings_of(analyses: Iterable[GraphAnalysis]) -> list[Finding]:
    return [f for analysis in analyses for f in analysis.findings]
