"""
Walkthrough - Combinations and the Interference Graph

Enumerates the four-tool cast (a pre-training, b during training, c1 and c2
post-training) and prints the interference graph of tool a layer by layer.
Nothing is executed; results come straight from the sample ground-truth
model.

Usage:
    python scripts/walkthrough/01_cast_graph.py
"""

import sys
from pathlib import Path

# Add parent to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from landseer.combinator import count_combinations, enumerate_combinations
from landseer.igraph import build_graph, leaves
from landseer.report import short_label
from landseer.synthkit import load_model, model_spec, oracle_evaluate

MODEL = Path(__file__).parent.parent.parent / "samples" / "four_tool" / "model.toml"


def main():
    print("Walkthrough - Combinations and the Interference Graph")
    print("=" * 60)

    model = load_model(MODEL)
    spec = model_spec(model, "four-tool")

    print("\n1. Enumerating combinations:")
    print("-" * 50)
    combinations = enumerate_combinations(spec)
    print(f"  Closed form: {count_combinations(spec)}  enumerated: {len(combinations)}")
    for combination in combinations[:6]:
        print(f"  {short_label(combination.id)}")
    print(f"  ... and {len(combinations) - 6} more")

    print("\n2. Interference graph of tool a:")
    print("-" * 50)
    results = {c.id: oracle_evaluate(model, c) for c in combinations}
    graph = build_graph("a", combinations, results)
    print(f"  Root: {short_label(graph.root)}")
    for k in range(1, graph.max_cardinality + 1):
        layer = [n for n in graph.focus_nodes() if graph.nodes[n].cardinality == k]
        print(f"  Layer {k}: " + ", ".join(short_label(n) for n in layer))

    print("\n3. Edges:")
    print("-" * 50)
    print(f"  Vertical:   {len(graph.vertical)}")
    for edge in graph.vertical[:5]:
        print(f"    {short_label(edge.parent)} -> {short_label(edge.child)}  (+{edge.tool})")
    print(f"  Horizontal: {len(graph.horizontal)}")
    for a, b in graph.horizontal:
        print(f"    {short_label(a)} <-> {short_label(b)}")
    print(f"  Prime:      {len(graph.primes)}")
    print("  Leaves:     " + ", ".join(short_label(n) for n in leaves(graph)))

    print("\n4. Node metrics against primes:")
    print("-" * 50)
    for node in graph.focus_nodes():
        mine = graph.result(node).metrics
        prime = graph.result(graph.prime(node)).metrics
        deltas = "  ".join(f"{m}={mine[m] - prime[m]:+.1f}" for m in model.metric_names)
        print(f"  {short_label(node):<28} {deltas}")

    print("\n" + "=" * 60)
    print("Done")


if __name__ == "__main__":
    main()
