"""Root-cause traversal, labels and agreement with the brute-force oracle."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import divergence_model, planted_model
from landseer.combinator import Combination, enumerate_combinations
from landseer.igraph import build_all, build_graph
from landseer.metrics import Overall, make_comparator
from landseer.registry import Registry, Stage
from landseer.rootcause import (EXHAUSTIVE, FAITHFUL, Finding, Placement, analyze_all, analyze_graph, findings_of,
                                gi_scan, traverse, traverse_exhaustive)
from landseer.synthkit import model_spec, oracle_evaluate, oracle_findings, random_model


def scenario(model):
    spec = model_spec(model)
    combinations = enumerate_combinations(spec)
    results = {c.id: oracle_evaluate(model, c) for c in combinations}
    compare = make_comparator(spec.metrics, spec.thresholds)
    return spec, combinations, results, compare


def nodes(findings) -> list[str]:
    return [f.node for f in findings]


AB = Combination.of(pre=["a"], during=["b"]).id
AC = Combination.of(pre=["a"], post=["c"]).id


def test_faithful_ascent_misses_interior_interference():
    _, combinations, results, compare = scenario(divergence_model())
    graph = build_graph("a", combinations, results)

    assert traverse(graph, compare) == []
    assert sorted(nodes(traverse_exhaustive(graph, compare))) == sorted([AB, AC])


def test_faithful_ascent_climbs_to_the_minimal_cause():
    _, combinations, results, compare = scenario(divergence_model())

    (finding,) = traverse(build_graph("b", combinations, results), compare)
    assert finding.node == AB
    assert finding.prime == Combination.of(pre=["a"]).id
    assert finding.overall is Overall.NEGATIVE

    (finding,) = traverse(build_graph("c", combinations, results), compare)
    assert finding.node == AC
    assert finding.overall is Overall.POSITIVE


def test_exhaustive_findings_are_labeled_pairwise():
    _, combinations, results, compare = scenario(divergence_model())
    analysis = analyze_graph(build_graph("a", combinations, results), compare, EXHAUSTIVE)
    assert [f.sorted_labels for f in analysis.findings] == [["PW"], ["PW"]]
    assert analysis.gi.fraction == pytest.approx(2 / 3)
    assert not analysis.gi.is_global


def planted_findings(mode=EXHAUSTIVE):
    spec, combinations, results, compare = scenario(planted_model())
    graphs = build_all(Registry({}), combinations, results, focus_tools=["a", "b", "c1", "c2"])
    return findings_of(analyze_all(graphs, compare, mode, spec.gi_fraction))


def test_planted_global_term_is_labeled_gi():
    findings = [f for f in planted_findings() if f.focus == "b"]
    assert findings
    assert all("GI" in f.labels for f in findings)
    assert all(f.cardinality == 2 for f in findings)


def test_planted_order_term_is_labeled_oi():
    forward = Combination.of(post=["c1", "c2"]).id
    (finding,) = [f for f in planted_findings() if f.focus == "c2" and f.node == forward]
    assert finding.sorted_labels == ["PW", "OI"]
    assert finding.order_disagreements == (Combination.of(post=["c2", "c1"]).id,)
    assert finding.focus_placement == Placement("c2", Stage.POST, 1)
    assert finding.added_tools == (Placement("c1", Stage.POST, 0),)
    assert finding.cardinality_difference == 1


def test_planted_pairwise_term_is_found_from_both_sides():
    pair = Combination.of(pre=["a"], post=["c1"]).id
    found = {(f.focus, f.node) for f in planted_findings()}
    assert ("a", pair) in found
    assert ("c1", pair) in found


def as_oracle(findings):
    return {
        (f.focus, f.node, frozenset((d.metric, d.effect.value) for d in f.deltas if d.effect.value != "unchanged"),
         f.overall.value, frozenset(f.labels))
        for f in findings
    }


def test_planted_findings_match_oracle():
    spec = model_spec(planted_model())
    expected = {(o.focus, o.node, o.effects, o.overall, o.labels) for o in oracle_findings(planted_model(), spec)}
    assert as_oracle(planted_findings()) == expected


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10 ** 6))
def test_exhaustive_traversal_matches_oracle_on_random_models(seed):
    model = random_model(seed)
    spec, combinations, results, compare = scenario(model)
    graphs = build_all(Registry({}), combinations, results, focus_tools=sorted(model.tools))

    exhaustive = findings_of(analyze_all(graphs, compare, EXHAUSTIVE, spec.gi_fraction))
    expected = {(o.focus, o.node, o.effects, o.overall, o.labels) for o in oracle_findings(model, spec)}
    assert as_oracle(exhaustive) == expected

    faithful = findings_of(analyze_all(graphs, compare, FAITHFUL, spec.gi_fraction))
    if not exhaustive:
        assert faithful == []
    for finding in faithful:
        graph = graphs[finding.focus]
        assert compare(graph.result(finding.node), graph.result(finding.prime)).interferes
        for parent in graph.parents(finding.node):
            assert not compare(graph.result(parent), graph.result(graph.prime(parent))).interferes


def test_unevaluated_nodes_are_skipped():
    _, combinations, results, compare = scenario(divergence_model())
    del results[AB]
    analysis = analyze_graph(build_graph("a", combinations, results), compare, EXHAUSTIVE)
    assert AB in analysis.skipped
    assert nodes(analysis.findings) == [AC]


def test_empty_graph_has_no_findings():
    _, combinations, results, compare = scenario(divergence_model())
    analysis = analyze_graph(build_graph("zz", combinations, results), compare)
    assert analysis.findings == [] and analysis.gi is None


def test_unknown_mode_is_rejected():
    _, combinations, results, compare = scenario(divergence_model())
    with pytest.raises(ValueError):
        analyze_graph(build_graph("a", combinations, results), compare, "sideways")


def test_gi_scan_without_eligible_nodes():
    _, combinations, results, compare = scenario(divergence_model())
    root_only = [c for c in combinations if c.cardinality <= 1]
    scan = gi_scan(build_graph("a", root_only, results), compare)
    assert (scan.is_global, scan.fraction, scan.eligible) == (False, None, 0)


def test_finding_round_trip():
    for finding in planted_findings():
        assert Finding.from_dict(finding.to_dict()) == finding
