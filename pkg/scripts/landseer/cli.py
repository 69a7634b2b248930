"""
Landseer command line.

    onboard   <record>                 run the onboarding funnel, update the record
    validate  <experiment.toml>        print violations
    plan      <experiment.toml>        write plan.json and combinations.jsonl
    run       <experiment.toml>        execute, write ledger.jsonl and results.jsonl
    analyze   <rundir>                 write graphs/, findings.json, analysis.json
    report    <rundir>                 write graphs/*.dot, summary.md, summary.html
    synth     <model.toml> <outdir>    emit stub tools and an experiment skeleton

Exit codes: 0 ok, 1 validation failure, 2 runtime failure, 3 internal error.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .cache import LocalCache, TwoLevelCache
from .combinator import (ExperimentSpec, enumerate_combinations, load_experiment, read_combinations,
                         validate_experiment, write_combinations)
from .config import LandseerConfig, load_config
from .errors import ExperimentError, LandseerError, RegistryError
from .executor import ExecutorOptions, default_pool, run_experiment
from .igraph import build_all
from .metrics import Thresholds, aggregate_all, collect_results, make_comparator, read_results, write_results, write_unevaluated
from .planner import PlanDag, compile_dag, save_plan
from .registry import STAGES, FunnelState, Registry, load_record, load_registry, run_funnel, save_record
from .report import emit_findings_json, write_analyses, write_report
from .rootcause import EXHAUSTIVE, FAITHFUL, analyze_all, findings_of
from .store import open_store
from .synthkit import build_experiment, generate_tools, load_model

logger = logging.getLogger("landseer")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_RUNTIME = 2
EXIT_INTERNAL = 3


class ValidationFailed(LandseerError):
    """Raised by a command after printing the violations it found."""


def banner(title: str) -> None:
    print(title)
    print("=" * 60)


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _tag_list(raw: str) -> tuple[str, ...]:
    tags = tuple(dict.fromkeys(tag.strip() for tag in raw.split(",") if tag.strip()))
    if not tags:
        raise argparse.ArgumentTypeError("expected at least one tag")
    return tags


def _load_spec(path: Path, seeds: Optional[int] = None) -> ExperimentSpec:
    spec = load_experiment(path)
    spec = replace(
        spec,
        registry_path=spec.registry_path.resolve() if spec.registry_path else None,
        dataset_dir=spec.dataset_dir.resolve() if spec.dataset_dir else None,
    )
    if seeds is not None:
        spec = replace(spec, seeds=seeds)
    return spec


def _registry(spec: ExperimentSpec, config: LandseerConfig) -> Registry:
    if spec.registry_path is None:
        raise ExperimentError(f"experiment {spec.id} names no registry")
    return load_registry(spec.registry_path, config.reproducibility_tolerance)


def _checked(spec: ExperimentSpec, registry: Registry) -> None:
    violations = validate_experiment(spec, registry)
    if violations:
        print(f"\n{len(violations)} violation(s):")
        for violation in violations:
            print(f"  - {violation}")
        raise ValidationFailed(f"experiment {spec.id} is invalid")


def _plan(spec: ExperimentSpec, registry: Registry, config: LandseerConfig, runs: Path) -> tuple[PlanDag, Path]:
    combinations = enumerate_combinations(spec, config.combination_cap)
    dag = compile_dag(combinations, spec, registry, config.task_cap)
    rundir = runs / spec.id
    rundir.mkdir(parents=True, exist_ok=True)
    _write_json(rundir / "experiment.json", spec.to_dict())
    write_combinations(combinations, rundir / "combinations.jsonl")
    save_plan(dag, rundir / "plan.json")

    stats = dag.stats
    print(f"\ncombinations: {stats.combinations}")
    print(f"seeds: {stats.seeds}")
    print(f"task instances: {stats.instances}")
    print(f"unique tasks: {stats.unique}")
    print(f"dedup ratio: {stats.dedup_ratio:.2f}")
    print(f"run directory: {rundir}")
    return dag, rundir


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_onboard(args, config: LandseerConfig) -> int:
    banner(f"Onboarding {args.record.name}")
    record = load_record(args.record)
    tolerance = args.tolerance if args.tolerance is not None else (
        record.tolerance if record.tolerance is not None else config.reproducibility_tolerance)
    print(f"Tool: {record.tool}  state: {record.state.value}  tolerance: {tolerance}")

    updated, steps = run_funnel(record, tolerance)
    for number, evidence in enumerate(steps, 1):
        status = "pass" if evidence.passed else f"FAIL ({evidence.reason})"
        print(f"  {number}. {evidence.check.value}: {status}")
    save_record(updated, args.record)
    print(f"\nState: {record.state.value} -> {updated.state.value}")

    if updated.state is FunnelState.REJECTED:
        print(f"Rejected: {updated.rejected_reason}")
        return EXIT_INVALID
    return EXIT_OK


def cmd_validate(args, config: LandseerConfig) -> int:
    banner(f"Validating {args.experiment}")
    spec = _load_spec(args.experiment)
    registry = _registry(spec, config)
    print(f"Experiment: {spec.id}  model: {spec.model}  dataset: {spec.dataset}")
    print(f"Registry: {spec.registry_path} ({len(registry)} tools)")
    _checked(spec, registry)
    print("\nNo violations.")
    return EXIT_OK


def cmd_plan(args, config: LandseerConfig) -> int:
    banner(f"Planning {args.experiment}")
    spec = _load_spec(args.experiment, args.seeds)
    registry = _registry(spec, config)
    _checked(spec, registry)
    _plan(spec, registry, config, args.runs)
    return EXIT_OK


def cmd_run(args, config: LandseerConfig) -> int:
    banner(f"Running {args.experiment}")
    spec = _load_spec(args.experiment, args.seeds)
    registry = _registry(spec, config)
    _checked(spec, registry)
    dag, rundir = _plan(spec, registry, config, args.runs)

    print(f"\nCache: {config.local_cache_dir} (shared: {config.shared_store})")
    tags = args.worker_tags or config.worker_tags
    print(f"Workers: {args.workers} [{', '.join(tags)}]")
    shared = open_store(config.shared_store, config.verify_ssl)
    try:
        cache = TwoLevelCache(LocalCache(config.local_cache_dir, config.local_cache_bytes), shared)
        options = ExecutorOptions(
            work_dir=config.work_dir / spec.id,
            timeout=config.task_timeout,
            stderr_tail=config.stderr_tail_bytes,
            keep_workspaces=args.keep_workspaces,
            backend=args.backend,
        )
        summary = run_experiment(dag, default_pool(args.workers, tags), cache, spec, registry, options,
                                 rundir / "ledger.jsonl", resume=args.resume)
    finally:
        shared.close()

    collected = collect_results(summary.outcomes, dag, spec)
    write_results(collected.vectors, rundir / "results.jsonl")
    write_unevaluated(collected.unevaluated, rundir / "unevaluated.json")

    print("\nTasks:")
    print(f"  executed:        {summary.executed}")
    print(f"  cached:          {summary.cached}")
    print(f"  failed:          {summary.failed}")
    print(f"  upstream-failed: {summary.upstream_failed}")
    print(f"\nResult vectors: {len(collected.vectors)}  unevaluated: {len(collected.unevaluated)}")

    if not summary.ok:
        print("\nSome tasks failed; see ledger.jsonl for stderr tails.")
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_analyze(args, config: LandseerConfig) -> int:
    rundir: Path = args.rundir
    banner(f"Analyzing {rundir}")
    experiment_file = rundir / "experiment.json"
    if not experiment_file.is_file():
        raise ExperimentError(f"{rundir} is not a run directory (no experiment.json)")
    if not (rundir / "results.jsonl").is_file():
        raise LandseerError(f"{rundir} has no results.jsonl; run the experiment first")

    spec = ExperimentSpec.from_dict(json.loads(experiment_file.read_text(encoding="utf-8")))
    try:
        thresholds = Thresholds(
            args.tl if args.tl is not None else spec.thresholds.low,
            args.th if args.th is not None else spec.thresholds.high,
        )
    except ValueError as e:
        raise ExperimentError(str(e)) from None
    gi_fraction = args.gi if args.gi is not None else spec.gi_fraction
    if not 0 < gi_fraction <= 1:
        raise ExperimentError(f"GI fraction must be in (0, 1], got {gi_fraction}")

    mode = EXHAUSTIVE if args.exhaustive else FAITHFUL
    print(f"Thresholds: t_l = {thresholds.low:g}, t_h = {thresholds.high:g}, GI fraction = {gi_fraction:g}")
    print(f"Traversal: {mode}")

    combinations = read_combinations(rundir / "combinations.jsonl")
    results = aggregate_all(read_results(rundir / "results.jsonl"))
    focus_tools = sorted({tool for stage in STAGES for tool in spec.stage_candidates(stage)})
    graphs = build_all(Registry({}), combinations, results, focus_tools)

    graph_dir = rundir / "graphs"
    graph_dir.mkdir(exist_ok=True)
    for focus, graph in graphs.items():
        _write_json(graph_dir / f"{focus}.json", graph.to_dict())

    analyses = analyze_all(graphs, make_comparator(spec.metrics, thresholds), mode, gi_fraction, thresholds)
    findings = findings_of(analyses)
    emit_findings_json(findings, rundir / "findings.json")
    write_analyses(analyses, rundir / "analysis.json")

    print()
    for analysis in analyses:
        labels = sorted({label for f in analysis.findings for label in f.sorted_labels})
        suffix = f"  [{', '.join(labels)}]" if labels else ""
        print(f"  {analysis.focus}: {len(analysis.findings)} root cause(s){suffix}")
    print(f"\nFindings: {len(findings)}")
    return EXIT_OK


def cmd_report(args, config: LandseerConfig) -> int:
    banner(f"Reporting {args.rundir}")
    if not (args.rundir / "findings.json").is_file():
        raise LandseerError(f"{args.rundir} has no findings.json; analyze the run first")
    for path in write_report(args.rundir, unicode=args.unicode):
        print(f"  wrote {path}")
    return EXIT_OK


def cmd_synth(args, config: LandseerConfig) -> int:
    banner(f"Synthesizing tools from {args.model}")
    model = load_model(args.model)
    args.outdir.mkdir(parents=True, exist_ok=True)
    descriptors = generate_tools(model, args.outdir)
    experiment = build_experiment(model, args.outdir, args.id, args.seeds)
    for descriptor in descriptors:
        print(f"  {descriptor.stage.value:<7} {descriptor.id}")
    print(f"\nExperiment: {experiment}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="landseer", description="Combinatorial defense pipelines and interference analysis")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--env-file", type=Path, help=".env file to load instead of the project one")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("onboard", help="run the onboarding funnel on a reproduction record")
    p.add_argument("record", type=Path)
    p.add_argument("--tolerance", type=float, help="reproducibility tolerance in points")
    p.set_defaults(handler=cmd_onboard)

    p = sub.add_parser("validate", help="check an experiment against its registry")
    p.add_argument("experiment", type=Path)
    p.set_defaults(handler=cmd_validate)

    for name, handler, text in (("plan", cmd_plan, "enumerate combinations and compile the task DAG"),
                                ("run", cmd_run, "plan and execute an experiment")):
        p = sub.add_parser(name, help=text)
        p.add_argument("experiment", type=Path)
        p.add_argument("--seeds", type=int, help="override the experiment's seed count")
        p.add_argument("--runs", type=Path, default=Path("runs"), help="parent of run directories (default: runs)")
        p.set_defaults(handler=handler)
        if name == "run":
            p.add_argument("--workers", type=int, default=1)
            p.add_argument("--worker-tags", type=_tag_list, metavar="TAGS",
                           help="comma-separated resource tags each worker offers (default: LANDSEER_WORKER_TAGS)")
            p.add_argument("--backend", help="process or container:<template>, overriding descriptors")
            p.add_argument("--resume", action="store_true", help="adopt finished outcomes from ledger.jsonl")
            p.add_argument("--keep-workspaces", action="store_true")

    p = sub.add_parser("analyze", help="build interference graphs and find root causes")
    p.add_argument("rundir", type=Path)
    p.add_argument("--exhaustive", action="store_true", help="test every node, not only leaf ascents")
    p.add_argument("--tl", type=float, help="low threshold (default 2)")
    p.add_argument("--th", type=float, help="high threshold (default 5)")
    p.add_argument("--gi", type=float, help="GI fraction (default 0.95)")
    p.set_defaults(handler=cmd_analyze)

    p = sub.add_parser("report", help="render DOT graphs and the summary table")
    p.add_argument("rundir", type=Path)
    p.add_argument("--unicode", action="store_true", help="arrow effect codes")
    p.set_defaults(handler=cmd_report)

    p = sub.add_parser("synth", help="generate synthetic stub tools from a ground-truth model")
    p.add_argument("model", type=Path)
    p.add_argument("outdir", type=Path)
    p.add_argument("--id", default="synthetic", help="experiment id")
    p.add_argument("--seeds", type=int, default=1)
    p.set_defaults(handler=cmd_synth)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.env_file)
        logging.basicConfig(level=logging.DEBUG if args.verbose else config.log_level,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.handler(args, config)
    except (ValidationFailed, RegistryError, ExperimentError) as e:
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INVALID
    except LandseerError as e:
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.debug("Unexpected failure", exc_info=True)
        print(f"Error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
