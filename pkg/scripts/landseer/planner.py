"""
Task Planning

Linearizes every combination into atomic tasks

    Ingest -> PreTool* -> Train -> PostTool* -> DeployTool* -> Evaluate*

and merges all linearizations (across seeds) into one global DAG keyed by
content-derived task ids. Two tasks share an id when kind, tool@version,
parameter digest, ordered parent ids and effective seed agree; seeds only
count for stochastic kinds.
"""

import hashlib
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Optional

from .cache import tree_signature
from .combinator import Combination, ExperimentSpec, resolve_evaluators
from .errors import CapExceededError, PlanError
from .registry import STAGES, Registry, Stage

logger = logging.getLogger(__name__)

DEFAULT_TASK_CAP = 5 * 10 ** 6

INGEST_TOOL = "ingest"
INGEST_VERSION = "builtin"


class TaskKind(str, Enum):
    INGEST = "Ingest"
    PRE_TOOL = "PreTool"
    TRAIN = "Train"
    POST_TOOL = "PostTool"
    DEPLOY_TOOL = "DeployTool"
    EVALUATE = "Evaluate"


STAGE_KINDS = {
    Stage.PRE: TaskKind.PRE_TOOL,
    Stage.DURING: TaskKind.TRAIN,
    Stage.POST: TaskKind.POST_TOOL,
    Stage.DEPLOY: TaskKind.DEPLOY_TOOL,
}

STOCHASTIC_KINDS = frozenset({TaskKind.TRAIN, TaskKind.POST_TOOL})


def config_digest(params: Mapping) -> str:
    """SHA-256 of the parameter map: sorted keys, UTF-8, no whitespace."""
    payload = json.dumps(params, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class TaskSpec:
    """One atomic task of the plan."""
    kind: TaskKind
    tool: str
    version: str
    config_digest: str
    parents: tuple[str, ...]
    seed: int
    stochastic: bool
    params: Mapping[str, object] = field(default_factory=dict, compare=False, hash=False)
    metric: Optional[str] = None
    resources: tuple[str, ...] = ()

    @property
    def effective_seed(self) -> Optional[int]:
        return self.seed if self.stochastic else None

    @cached_property
    def task_id(self) -> str:
        return task_identity(self)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "tool": self.tool,
            "version": self.version,
            "config_digest": self.config_digest,
            "parents": list(self.parents),
            "seed": self.seed,
            "stochastic": self.stochastic,
            "params": dict(self.params),
            "metric": self.metric,
            "resources": list(self.resources),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "TaskSpec":
        return cls(
            kind=TaskKind(data["kind"]),
            tool=data["tool"],
            version=data["version"],
            config_digest=data["config_digest"],
            parents=tuple(data["parents"]),
            seed=data["seed"],
            stochastic=data["stochastic"],
            params=dict(data.get("params", {})),
            metric=data.get("metric"),
            resources=tuple(data.get("resources", ())),
        )


def task_identity(task: TaskSpec) -> str:
    """
    Content-derived task id.

    SHA-256 over "kind\\ntool@version\\nconfigdigest\\nparent1,parent2\\nseed",
    where seed is "-" for deterministic tasks.
    """
    seed = "-" if task.effective_seed is None else str(task.effective_seed)
    canonical = "\n".join([
        task.kind.value,
        f"{task.tool}@{task.version}",
        task.config_digest,
        ",".join(task.parents),
        seed,
    ])
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class PlanStats:
    instances: int
    unique: int
    combinations: int
    seeds: int

    @property
    def dedup_ratio(self) -> float:
        return self.instances / self.unique if self.unique else 0.0

    def to_dict(self) -> dict:
        return {"instances": self.instances, "unique": self.unique, "combinations": self.combinations,
                "seeds": self.seeds, "dedup_ratio": round(self.dedup_ratio, 6)}


@dataclass(frozen=True)
class PlanDag:
    """The global deduplicated task graph."""
    experiment: str
    tasks: Mapping[str, TaskSpec]
    children: Mapping[str, tuple[str, ...]]
    terminals: Mapping[tuple[str, int], Mapping[str, str]]
    stats: PlanStats

    def descendants(self, task_id: str) -> set[str]:
        seen: set[str] = set()
        stack = list(self.children.get(task_id, ()))
        while stack:
            current = stack.pop()
            if current not in seen:
                seen.add(current)
                stack.extend(self.children.get(current, ()))
        return seen

    def to_dict(self) -> dict:
        return {
            "experiment": self.experiment,
            "tasks": {task_id: task.to_dict() for task_id, task in sorted(self.tasks.items())},
            "edges": {parent: list(kids) for parent, kids in sorted(self.children.items())},
            "terminals": [
                {"combination": combination, "seed": seed, "evaluations": dict(sorted(evaluations.items()))}
                for (combination, seed), evaluations in sorted(self.terminals.items())
            ],
            "stats": self.stats.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "PlanDag":
        stats = data["stats"]
        return cls(
            experiment=data["experiment"],
            tasks={task_id: TaskSpec.from_dict(t) for task_id, t in data["tasks"].items()},
            children={parent: tuple(kids) for parent, kids in data["edges"].items()},
            terminals={(t["combination"], t["seed"]): dict(t["evaluations"]) for t in data["terminals"]},
            stats=PlanStats(stats["instances"], stats["unique"], stats["combinations"], stats["seeds"]),
        )


def ingest_parameters(spec: ExperimentSpec) -> dict:
    """Parameter map of the Ingest task: dataset/model context plus data content."""
    source = None
    if spec.dataset_dir is not None:
        source = tree_signature(spec.dataset_dir)
    return {
        "dataset": spec.dataset,
        "dataset_params": dict(spec.dataset_params),
        "model": spec.model,
        "model_params": dict(spec.model_params),
        "source": source,
    }


def _tool_task(kind: TaskKind, tool_id: str, registry: Registry, spec: ExperimentSpec,
               parents: tuple[str, ...], seed: int, extra: Optional[dict] = None) -> TaskSpec:
    tool = registry.get(tool_id)
    params = tool.defaults()
    params.update(spec.params.get(tool_id, {}))
    if extra:
        params.update(extra)
    declared = tool.invocation.deterministic
    stochastic = (not declared) if declared is not None else kind in STOCHASTIC_KINDS
    return TaskSpec(
        kind=kind,
        tool=tool.id,
        version=tool.version,
        config_digest=config_digest(params),
        parents=parents,
        seed=seed,
        stochastic=stochastic,
        params=params,
        metric=(extra or {}).get("metric"),
        resources=tool.invocation.resources,
    )


def linearize(combination: Combination, spec: ExperimentSpec, registry: Registry, seed: int,
              ingest_params: Optional[dict] = None) -> list[TaskSpec]:
    """
    Ordered atomic tasks for one combination and seed.

    The During stage falls back to the experiment's baseline trainer, and one
    Evaluate task is appended per registered metric (acc included).
    """
    params = ingest_params if ingest_params is not None else ingest_parameters(spec)
    ingest = TaskSpec(TaskKind.INGEST, INGEST_TOOL, INGEST_VERSION, config_digest(params),
                      (), seed, False, params)
    tasks = [ingest]

    for stage in STAGES:
        sequence = combination.sequence(stage)
        if stage is Stage.DURING and not sequence:
            sequence = (spec.trainer,)
        for tool_id in sequence:
            tasks.append(_tool_task(STAGE_KINDS[stage], tool_id, registry, spec,
                                    (tasks[-1].task_id,), seed))

    model_task = tasks[-1].task_id
    evaluators = resolve_evaluators(spec, registry)
    for metric in spec.metrics:
        tasks.append(_tool_task(TaskKind.EVALUATE, evaluators[metric.name], registry, spec,
                                (model_task,), seed, {"metric": metric.name}))
    return tasks


def compile_dag(combinations: Iterable[Combination], spec: ExperimentSpec, registry: Registry,
                task_cap: int = DEFAULT_TASK_CAP) -> PlanDag:
    """
    Merge the linearizations of every combination and seed into one DAG.

    Raises:
        CapExceededError: More task instances than task_cap
    """
    params = ingest_parameters(spec)
    tasks: dict[str, TaskSpec] = {}
    children: dict[str, set[str]] = defaultdict(set)
    terminals: dict[tuple[str, int], dict[str, str]] = {}
    instances = 0
    combination_count = 0

    for combination in combinations:
        combination_count += 1
        for seed in range(spec.seeds):
            chain = linearize(combination, spec, registry, seed, params)
            instances += len(chain)
            if instances > task_cap:
                raise CapExceededError(f"plan exceeds {task_cap} task instances")
            for task in chain:
                tasks.setdefault(task.task_id, task)
                for parent in task.parents:
                    children[parent].add(task.task_id)
            terminals[(combination.id, seed)] = {
                task.metric: task.task_id for task in chain if task.kind is TaskKind.EVALUATE
            }

    stats = PlanStats(instances, len(tasks), combination_count, spec.seeds)
    dag = PlanDag(
        experiment=spec.id,
        tasks=tasks,
        children={parent: tuple(sorted(kids)) for parent, kids in children.items()},
        terminals=terminals,
        stats=stats,
    )
    logger.info("Plan %s: %d task instances, %d unique (%.2fx)",
                spec.id, stats.instances, stats.unique, stats.dedup_ratio)
    return dag


def _topological_order(dag: PlanDag) -> list[str]:
    indegree = {task_id: len(set(task.parents)) for task_id, task in dag.tasks.items()}
    ready = sorted(task_id for task_id, degree in indegree.items() if degree == 0)
    order = []
    while ready:
        current = ready.pop()
        order.append(current)
        for child in dag.children.get(current, ()):
            indegree[child] -= 1
            if indegree[child] == 0:
                ready.append(child)
    if len(order) != len(dag.tasks):
        raise PlanError(f"cycle detected among {len(dag.tasks) - len(order)} tasks")
    return order


def descendant_counts(dag: PlanDag) -> dict[str, int]:
    """
    Number of tasks reachable from each task.

    Every task has at most one parent, so the plan is a forest and subtree
    sizes add up without double counting.

    Raises:
        PlanError: A task has more than one parent, or the graph has a cycle
    """
    merged = sorted(task_id for task_id, task in dag.tasks.items() if len(set(task.parents)) > 1)
    if merged:
        raise PlanError(f"task {merged[0][:12]} has several parents; the plan must be a forest")
    counts: dict[str, int] = {}
    for task_id in reversed(_topological_order(dag)):
        counts[task_id] = sum(1 + counts[child] for child in dag.children.get(task_id, ()))
    return counts


def topo_schedule(dag: PlanDag) -> list[list[str]]:
    """
    Dependency-ordered batches of task ids.

    Within a batch tasks are ordered by descending descendant count
    (reuse priority), ties broken by task id.

    Raises:
        PlanError: The graph has a cycle
    """
    priority = descendant_counts(dag)
    indegree = {task_id: len(set(task.parents)) for task_id, task in dag.tasks.items()}
    ready = [task_id for task_id, degree in indegree.items() if degree == 0]
    batches = []
    while ready:
        batch = sorted(ready, key=lambda task_id: (-priority[task_id], task_id))
        batches.append(batch)
        ready = []
        for task_id in batch:
            for child in dag.children.get(task_id, ()):
                indegree[child] -= 1
                if indegree[child] == 0:
                    ready.append(child)
    return batches


def save_plan(dag: PlanDag, path: Path) -> None:
    path.write_text(json.dumps(dag.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_plan(path: Path) -> PlanDag:
    return PlanDag.from_dict(json.loads(path.read_text(encoding="utf-8")))
