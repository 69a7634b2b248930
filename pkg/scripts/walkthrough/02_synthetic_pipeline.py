"""
Walkthrough - Running a Synthetic Pipeline

Generates stub tools for the four-tool cast, compiles the deduplicated task
DAG and executes it twice: once cold, once served entirely from the cache.

Usage:
    python scripts/walkthrough/02_synthetic_pipeline.py [workdir]
"""

import sys
import tempfile
from pathlib import Path

# Add parent to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent))

from landseer.cache import LocalCache, TwoLevelCache
from landseer.combinator import enumerate_combinations, load_experiment
from landseer.executor import ExecutorOptions, default_pool, run_experiment
from landseer.metrics import collect_results
from landseer.planner import compile_dag
from landseer.registry import load_registry
from landseer.report import short_label
from landseer.store import FilesystemStore
from landseer.synthkit import build_experiment, generate_tools, load_model

MODEL = Path(__file__).parent.parent.parent / "samples" / "four_tool" / "model.toml"


def run_once(label, dag, spec, registry, workdir, local_name):
    cache = TwoLevelCache(LocalCache(workdir / local_name, 10 ** 9), FilesystemStore(workdir / "shared"))
    summary = run_experiment(dag, default_pool(4), cache, spec, registry,
                             ExecutorOptions(work_dir=workdir / "work"))
    print(f"  {label}: executed {summary.executed}, cached {summary.cached}, failed {summary.failed}")
    return summary


def main():
    print("Walkthrough - Running a Synthetic Pipeline")
    print("=" * 60)

    workdir = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="landseer-"))
    print(f"Working in {workdir}")

    print("\n1. Generating stub tools:")
    print("-" * 50)
    model = load_model(MODEL)
    for descriptor in generate_tools(model, workdir / "cast"):
        print(f"  {descriptor.stage.value:<7} {descriptor.id}")
    spec = load_experiment(build_experiment(model, workdir / "cast", "four-tool"))
    registry = load_registry(workdir / "cast")

    print("\n2. Planning:")
    print("-" * 50)
    dag = compile_dag(enumerate_combinations(spec), spec, registry)
    stats = dag.stats
    print(f"  Combinations:   {stats.combinations}")
    print(f"  Task instances: {stats.instances}")
    print(f"  Unique tasks:   {stats.unique}")
    print(f"  Dedup ratio:    {stats.dedup_ratio:.2f}")

    print("\n3. Executing:")
    print("-" * 50)
    first = run_once("Cold run", dag, spec, registry, workdir, "worker1")
    run_once("Warm run (fresh local tier)", dag, spec, registry, workdir, "worker2")

    print("\n4. Results:")
    print("-" * 50)
    collected = collect_results(first.outcomes, dag, spec)
    names = [m.name for m in spec.metrics]
    print(f"  {'combination':<28} " + " ".join(f"{n:>7}" for n in names))
    for vector in collected.vectors:
        print(f"  {short_label(vector.combination):<28} " + " ".join(f"{vector.metrics[n]:>7.1f}" for n in names))
    if collected.unevaluated:
        print(f"  Unevaluated: {len(collected.unevaluated)}")

    print("\n" + "=" * 60)
    print("Done")


if __name__ == "__main__":
    main()
