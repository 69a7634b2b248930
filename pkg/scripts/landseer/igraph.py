"""
Interference Graphs

One graph per focus tool. Focus nodes are the combinations containing the
tool, layered by cardinality 1..k. Three edge kinds:

    vertical    parent -> child, the child adds one non-focus tool
    horizontal  same per-stage tool sets, different order (unordered pair)
    prime       focus node -> the same combination without the focus tool

The root is the combination holding only the focus tool; its prime is the
empty baseline.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations as pairs
from typing import Iterable, Mapping, Optional, Sequence

from .combinator import Combination, prime_of
from .metrics import ResultVector
from .registry import STAGES, Registry, Stage

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GraphNode:
    combination: Combination
    contains_focus: bool
    result: Optional[ResultVector] = None

    @property
    def id(self) -> str:
        return self.combination.id

    @property
    def cardinality(self) -> int:
        return self.combination.cardinality

    @property
    def evaluated(self) -> bool:
        return self.result is not None


@dataclass(frozen=True)
class VerticalEdge:
    parent: str
    child: str
    tool: str
    stage: Stage
    position: int

    def to_dict(self) -> dict:
        return {"parent": self.parent, "child": self.child, "tool": self.tool,
                "stage": self.stage.value, "position": self.position}


@dataclass
class InterferenceGraph:
    """Interference graph of one focus tool."""
    focus: str
    nodes: dict[str, GraphNode] = field(default_factory=dict)
    vertical: list[VerticalEdge] = field(default_factory=list)
    horizontal: list[tuple[str, str]] = field(default_factory=list)
    primes: dict[str, str] = field(default_factory=dict)
    root: Optional[str] = None
    max_cardinality: int = 0

    def __post_init__(self):
        self._parents: dict[str, list[str]] = defaultdict(list)
        self._children: dict[str, list[str]] = defaultdict(list)
        self._neighbors: dict[str, list[str]] = defaultdict(list)
        for edge in self.vertical:
            self._parents[edge.child].append(edge.parent)
            self._children[edge.parent].append(edge.child)
        for a, b in self.horizontal:
            self._neighbors[a].append(b)
            self._neighbors[b].append(a)

    @property
    def empty(self) -> bool:
        return self.root is None

    def focus_nodes(self) -> list[str]:
        return sorted((n.id for n in self.nodes.values() if n.contains_focus),
                      key=lambda i: (self.nodes[i].cardinality, i))

    def parents(self, node: str) -> list[str]:
        return sorted(self._parents.get(node, ()))

    def children(self, node: str) -> list[str]:
        return sorted(self._children.get(node, ()))

    def neighbors(self, node: str) -> list[str]:
        return sorted(self._neighbors.get(node, ()))

    def prime(self, node: str) -> str:
        return self.primes[node]

    def result(self, node: str) -> Optional[ResultVector]:
        return self.nodes[node].result

    def unevaluated(self) -> list[str]:
        return sorted(n.id for n in self.nodes.values() if not n.evaluated)

    def to_dict(self) -> dict:
        """graphs/<focus>.json content."""
        return {
            "focus": self.focus,
            "root": self.root,
            "max_cardinality": self.max_cardinality,
            "nodes": [
                {
                    "id": node.id,
                    "cardinality": node.cardinality,
                    "contains_focus": node.contains_focus,
                    "metrics": dict(sorted(node.result.metrics.items())) if node.result else None,
                }
                for node in sorted(self.nodes.values(), key=lambda n: (n.cardinality, n.id))
            ],
            "edges": {
                "vertical": [e.to_dict() for e in self.vertical],
                "horizontal": [list(pair) for pair in self.horizontal],
                "prime": [{"node": node, "prime": prime} for node, prime in sorted(self.primes.items())],
            },
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "InterferenceGraph":
        nodes = {}
        for entry in data["nodes"]:
            metrics = entry.get("metrics")
            result = ResultVector(entry["id"], None, dict(metrics)) if metrics is not None else None
            nodes[entry["id"]] = GraphNode(Combination.from_id(entry["id"]), entry["contains_focus"], result)
        edges = data["edges"]
        return cls(
            focus=data["focus"],
            nodes=nodes,
            vertical=[VerticalEdge(e["parent"], e["child"], e["tool"], Stage(e["stage"]), e["position"])
                      for e in edges["vertical"]],
            horizontal=[(a, b) for a, b in edges["horizontal"]],
            primes={e["node"]: e["prime"] for e in edges["prime"]},
            root=data["root"],
            max_cardinality=data["max_cardinality"],
        )


def _without(combination: Combination, stage_index: int, position: int) -> Combination:
    stages = list(combination.stages)
    tools = stages[stage_index]
    stages[stage_index] = tools[:position] + tools[position + 1:]
    return Combination(tuple(stages))


def _tool_sets(combination: Combination) -> tuple[frozenset, ...]:
    return tuple(frozenset(tools) for tools in combination.stages)


def build_graph(focus: str, combinations: Iterable[Combination],
                results: Mapping[str, ResultVector]) -> InterferenceGraph:
    """
    Build the interference graph of one focus tool.

    Args:
        focus: Focus tool id
        combinations: Enumerated combinations of the experiment
        results: Combination id -> (seed-aggregated) result vector

    Returns:
        InterferenceGraph: Empty (root None) when no combination holds the tool
    """
    containing = [c for c in combinations if focus in c]
    graph = InterferenceGraph(focus)
    if not containing:
        logger.warning("Tool %s appears in no combination; its graph is empty", focus)
        return graph

    layers: dict[int, list[Combination]] = defaultdict(list)
    for combination in containing:
        layers[combination.cardinality].append(combination)
    k = max(layers)

    nodes: dict[str, GraphNode] = {}
    vertical: list[VerticalEdge] = []
    horizontal: list[tuple[str, str]] = []
    primes: dict[str, str] = {}

    def add(combination: Combination, contains_focus: bool) -> None:
        if combination.id not in nodes:
            nodes[combination.id] = GraphNode(combination, contains_focus, results.get(combination.id))

    for i in range(1, k + 1):
        layer = sorted(layers.get(i, ()), key=lambda c: c.id)
        for combination in layer:
            add(combination, True)
            prime = prime_of(combination, focus)
            add(prime, False)
            primes[combination.id] = prime.id

        for combination in layer:
            for stage_index, tools in enumerate(combination.stages):
                for position, tool in enumerate(tools):
                    if tool == focus:
                        continue
                    parent = _without(combination, stage_index, position)
                    if parent.id in nodes and nodes[parent.id].contains_focus:
                        vertical.append(VerticalEdge(parent.id, combination.id, tool, STAGES[stage_index], position))

        groups: dict[tuple, list[str]] = defaultdict(list)
        for combination in layer:
            groups[_tool_sets(combination)].append(combination.id)
        for members in groups.values():
            horizontal.extend(pairs(sorted(members), 2))

    focus_stage = containing[0].stage_of(focus)
    root = Combination(tuple((focus,) if stage is focus_stage else () for stage in STAGES))
    graph = InterferenceGraph(focus, nodes, vertical, sorted(horizontal), primes,
                              root.id if root.id in nodes else None, k)

    missing = graph.unevaluated()
    if missing:
        logger.warning("Graph %s: %d nodes lack results and are excluded from traversal", focus, len(missing))
    return graph


def leaves(graph: InterferenceGraph) -> list[str]:
    """Focus nodes with no outgoing vertical edge."""
    return [n for n in graph.focus_nodes() if not graph.children(n)]


def build_all(registry: Registry, combinations: Sequence[Combination], results: Mapping[str, ResultVector],
              focus_tools: Optional[Iterable[str]] = None) -> dict[str, InterferenceGraph]:
    """
    One graph per defense tool.

    focus_tools defaults to every defense tool in the registry; the CLI
    passes the experiment's candidates.
    """
    tools = sorted(focus_tools) if focus_tools is not None else registry.defense_ids()
    combinations = list(combinations)
    return {tool: build_graph(tool, combinations, results) for tool in tools}
