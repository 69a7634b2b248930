"""
Walkthrough - Finding Planted Interference

Plants a pairwise, an order-dependent and a global term in a ground-truth
model, then compares what the leaf-rooted ascent and the exhaustive scan
recover, with labels, against the brute-force oracle.

Usage:
    python scripts/walkthrough/03_planted_interference.py
"""

import sys
from pathlib import Path

# Add parent to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from landseer.combinator import enumerate_combinations
from landseer.igraph import build_all
from landseer.metrics import make_comparator
from landseer.registry import Registry, Stage
from landseer.report import emit_summary, short_label
from landseer.rootcause import EXHAUSTIVE, FAITHFUL, analyze_all, findings_of
from landseer.synthkit import GroundTruthModel, model_spec, oracle_evaluate, oracle_findings

PLANTED = GroundTruthModel(
    tools={"a": Stage.PRE, "b": Stage.DURING, "c1": Stage.POST, "c2": Stage.POST},
    base={"acc": 90.0, "m_ev": 50.0, "m_wm": 60.0},
    pairwise={(frozenset({"a", "c1"}), "m_ev"): -8.0},
    order={("c1", "c2", Stage.POST, "m_wm"): 7.0},
    global_terms={("b", "acc"): -6.0},
)


def main():
    print("Walkthrough - Finding Planted Interference")
    print("=" * 60)

    spec = model_spec(PLANTED, "planted")
    combinations = enumerate_combinations(spec)
    results = {c.id: oracle_evaluate(PLANTED, c) for c in combinations}
    graphs = build_all(Registry({}), combinations, results, focus_tools=sorted(PLANTED.tools))
    compare = make_comparator(spec.metrics, spec.thresholds)

    print("\n1. Planted terms:")
    print("-" * 50)
    print("  a + c1           m_ev -8   (pairwise)")
    print("  c1 before c2     m_wm +7   (order)")
    print("  b with company   acc  -6   (global)")

    analyses = {}
    for step, mode in enumerate((FAITHFUL, EXHAUSTIVE), 2):
        print(f"\n{step}. {mode.capitalize()} traversal:")
        print("-" * 50)
        analyses[mode] = analyze_all(graphs, compare, mode, spec.gi_fraction)
        for finding in findings_of(analyses[mode]):
            labels = ",".join(finding.sorted_labels) or "-"
            print(f"  [{finding.focus:<2}] {short_label(finding.node):<28} {finding.overall.value:<8} {labels}")

    print("\n4. Oracle agreement:")
    print("-" * 50)
    expected = {(o.focus, o.node) for o in oracle_findings(PLANTED, spec)}
    found = {(f.focus, f.node) for f in findings_of(analyses[EXHAUSTIVE])}
    print(f"  Oracle root causes:     {len(expected)}")
    print(f"  Exhaustive agreement:   {'yes' if found == expected else 'no'}")
    faithful = {(f.focus, f.node) for f in findings_of(analyses[FAITHFUL])}
    print(f"  Faithful recovered:     {len(faithful & expected)} of {len(expected)}")

    print("\n5. Summary table:")
    print("-" * 50)
    findings = findings_of(analyses[EXHAUSTIVE])
    print(emit_summary(findings, spec.metrics, analyses[EXHAUSTIVE], spec))

    print("=" * 60)
    print("Done")


if __name__ == "__main__":
    main()
