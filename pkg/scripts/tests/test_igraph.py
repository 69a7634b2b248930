"""Interference graph construction against a hand-checked golden graph."""

import json

from conftest import DATA_DIR
from landseer.combinator import EMPTY, Combination, enumerate_combinations
from landseer.igraph import InterferenceGraph, build_all, build_graph, leaves
from landseer.metrics import ResultVector
from landseer.registry import Stage


def test_focus_a_matches_golden_graph(spec):
    golden = json.loads((DATA_DIR / "four_tool_focus_a.json").read_text())

    graph = build_graph("a", enumerate_combinations(spec), {})

    assert graph.root == golden["root"]
    assert graph.max_cardinality == golden["max_cardinality"]
    assert set(graph.focus_nodes()) == set(golden["focus_nodes"])
    assert graph.primes == golden["primes"]
    edges = {(e.parent, e.child, e.tool, e.stage.value, e.position) for e in graph.vertical}
    assert edges == {tuple(e) for e in golden["vertical"]}
    assert graph.horizontal == [tuple(pair) for pair in golden["horizontal"]]


def test_focus_a_counts(spec):
    graph = build_graph("a", enumerate_combinations(spec), {})
    assert len(graph.nodes) == 20
    assert len(graph.focus_nodes()) == 10
    assert len(graph.vertical) == 17
    assert len(graph.horizontal) == 2
    assert graph.prime(graph.root) == EMPTY.id
    assert leaves(graph) == ["pre:[a]|during:[b]|post:[c1,c2]|deploy:[]",
                             "pre:[a]|during:[b]|post:[c2,c1]|deploy:[]"]


def test_focus_nodes_are_layered_by_cardinality(spec):
    graph = build_graph("a", enumerate_combinations(spec), {})
    cardinalities = [graph.nodes[n].cardinality for n in graph.focus_nodes()]
    assert cardinalities == sorted(cardinalities)
    for edge in graph.vertical:
        assert graph.nodes[edge.child].cardinality == graph.nodes[edge.parent].cardinality + 1


def test_reorderings_share_a_prime_in_a_post_tool_graph(spec):
    graph = build_graph("c1", enumerate_combinations(spec), {})
    assert len(graph.focus_nodes()) == 12
    assert len(graph.nodes) == 20
    assert len(graph.horizontal) == 4
    forward = Combination.of(post=["c1", "c2"]).id
    backward = Combination.of(post=["c2", "c1"]).id
    assert graph.prime(forward) == graph.prime(backward) == Combination.of(post=["c2"]).id
    assert graph.neighbors(forward) == [backward]


def test_during_tool_root(spec):
    graph = build_graph("b", enumerate_combinations(spec), {})
    assert graph.root == Combination.of(during=["b"]).id
    assert Combination.from_id(graph.root).stage_of("b") is Stage.DURING


def test_tool_absent_from_every_combination_gives_empty_graph(spec):
    graph = build_graph("zz", enumerate_combinations(spec), {})
    assert graph.empty
    assert graph.nodes == {}


def test_results_attach_and_missing_ones_are_reported(spec):
    combinations = enumerate_combinations(spec)
    results = {c.id: ResultVector(c.id, None, {"acc": 90.0}) for c in combinations}
    missing = Combination.of(pre=["a"], post=["c1"]).id
    del results[missing]

    graph = build_graph("a", combinations, results)

    assert graph.unevaluated() == [missing]
    assert graph.result(graph.root).metrics == {"acc": 90.0}


def test_graph_file_round_trip(spec):
    combinations = enumerate_combinations(spec)
    results = {c.id: ResultVector(c.id, None, {"acc": float(c.cardinality)}) for c in combinations}
    graph = build_graph("a", combinations, results)

    reloaded = InterferenceGraph.from_dict(json.loads(json.dumps(graph.to_dict())))

    assert reloaded.to_dict() == graph.to_dict()
    assert reloaded.parents(leaves(graph)[0]) == graph.parents(leaves(graph)[0])


def test_build_all_covers_every_defense(spec, registry):
    graphs = build_all(registry, enumerate_combinations(spec), {})
    assert sorted(graphs) == ["a", "b", "c1", "c2"]
    assert build_all(registry, enumerate_combinations(spec), {}, focus_tools=["b"]).keys() == {"b"}
