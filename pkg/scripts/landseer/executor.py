"""
Task Execution

Runs the planned DAG on a pool of worker slots. Every task sees the same
runtime contract regardless of backend:

    data/<parent-task-id>/   read-only outputs of upstream tasks
    config/                  model.json, dataset.json, tool.json (read-only)
    output/                  the only writable location

Command templates may use {data}, {config}, {output}, {seed}, {task_id}
and {python}. The seed is also exported as LANDSEER_SEED and the task id
as LANDSEER_TASK_ID.

Backends:
    process               plain subprocess
    container:<template>  template wraps {command}, the tool command
                          instantiated with /data, /config, /output
    builtin               in-process Ingest and identity noops
"""

import asyncio
import json
import logging
import os
import shlex
import shutil
import sys
import time
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .cache import LineageRecord, TwoLevelCache, cache_key, tree_signature
from .combinator import ExperimentSpec
from .errors import ArtifactError, LandseerError
from .planner import INGEST_TOOL, INGEST_VERSION, PlanDag, TaskKind, TaskSpec, topo_schedule
from .registry import Registry, ToolDescriptor

logger = logging.getLogger(__name__)

CONTAINER_PATHS = {"data": "/data", "config": "/config", "output": "/output"}


class OutcomeStatus(str, Enum):
    SUCCEEDED = "succeeded"
    FAILED = "failed"
    CACHED = "skipped-cache-hit"
    UPSTREAM_FAILED = "upstream-failed"


@dataclass(frozen=True)
class RunOutcome:
    """Result of one task."""
    task_id: str
    status: OutcomeStatus
    signature: Optional[str] = None
    metrics: Mapping[str, float] = field(default_factory=dict)
    wall_time: float = 0.0
    seed: Optional[int] = None
    exit_code: Optional[int] = None
    stderr_tail: str = ""
    message: str = ""
    started_at: float = 0.0
    finished_at: float = 0.0
    worker: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status in (OutcomeStatus.SUCCEEDED, OutcomeStatus.CACHED)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "status": self.status.value,
            "signature": self.signature,
            "metrics": dict(self.metrics),
            "wall_time": round(self.wall_time, 6),
            "seed": self.seed,
            "exit_code": self.exit_code,
            "stderr_tail": self.stderr_tail,
            "message": self.message,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            "worker": self.worker,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunOutcome":
        return cls(
            task_id=data["task_id"],
            status=OutcomeStatus(data["status"]),
            signature=data.get("signature"),
            metrics=dict(data.get("metrics", {})),
            wall_time=data.get("wall_time", 0.0),
            seed=data.get("seed"),
            exit_code=data.get("exit_code"),
            stderr_tail=data.get("stderr_tail", ""),
            message=data.get("message", ""),
            started_at=data.get("started_at", 0.0),
            finished_at=data.get("finished_at", 0.0),
            worker=data.get("worker"),
        )


@dataclass(frozen=True)
class Workspace:
    root: Path
    data: Path
    config: Path
    output: Path

    @classmethod
    def create(cls, root: Path) -> "Workspace":
        root = Path(root)
        if root.exists():
            shutil.rmtree(root)
        ws = cls(root, root / "data", root / "config", root / "output")
        for path in (ws.data, ws.config, ws.output):
            path.mkdir(parents=True)
        return ws


@dataclass(frozen=True)
class WorkerSlot:
    id: str
    tags: frozenset[str] = frozenset({"cpu"})
    capacity: int = 1

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"worker {self.id}: capacity must be >= 1")


def default_pool(workers: int = 1, tags: Iterable[str] = ("cpu",)) -> list[WorkerSlot]:
    return [WorkerSlot(f"w{i}", frozenset(tags)) for i in range(workers)]


@dataclass
class Assignment:
    assigned: dict[str, str] = field(default_factory=dict)
    parked: dict[str, str] = field(default_factory=dict)
    waiting: list[str] = field(default_factory=list)


def assign(ready: Sequence[TaskSpec], pool: Sequence[WorkerSlot],
           busy: Optional[Mapping[str, int]] = None) -> Assignment:
    """
    Map ready tasks to workers whose tags cover the task's resources.

    Tasks no worker in the pool could ever run are parked with a diagnostic;
    tasks whose eligible workers are all at capacity wait.
    """
    load = Counter(busy or {})
    result = Assignment()
    for task in ready:
        needs = frozenset(task.resources)
        eligible = [w for w in pool if needs <= w.tags]
        if not eligible:
            tags = ", ".join(sorted(needs))
            result.parked[task.task_id] = f"no worker offers [{tags}]"
            logger.warning("Parked task %s (%s): no worker offers [%s]", task.task_id[:12], task.tool, tags)
            continue
        free = [w for w in eligible if load[w.id] < w.capacity]
        if not free:
            result.waiting.append(task.task_id)
            continue
        worker = free[0]
        load[worker.id] += 1
        result.assigned[task.task_id] = worker.id
    return result


@dataclass(frozen=True)
class BackendSpec:
    kind: str
    template: str = ""


def parse_backend(backend: str) -> BackendSpec:
    """'process', 'builtin' or 'container:<template>'."""
    if backend in ("process", "builtin"):
        return BackendSpec(backend)
    if backend.startswith("container:"):
        template = backend.split(":", 1)[1].strip()
        if "{command}" not in template:
            raise LandseerError(f"container template must contain {{command}}: {template!r}")
        return BackendSpec("container", template)
    raise LandseerError(f"unknown backend {backend!r}")


def _substitute(token: str, values: Mapping[str, str]) -> str:
    for name, value in values.items():
        token = token.replace("{" + name + "}", value)
    return token


def instantiate_command(command: str, ws: Workspace, backend: BackendSpec, seed: int, task_id: str) -> list[str]:
    """Argument vector for a tool invocation under the given backend."""
    host = {"data": str(ws.data), "config": str(ws.config), "output": str(ws.output),
            "seed": str(seed), "task_id": task_id, "python": sys.executable}
    if backend.kind == "process":
        return [_substitute(t, host) for t in shlex.split(command)]
    inner = dict(host, **CONTAINER_PATHS, python="python")
    tool_argv = [_substitute(t, inner) for t in shlex.split(command)]
    argv = []
    for token in shlex.split(backend.template):
        if token == "{command}":
            argv.extend(tool_argv)
        else:
            argv.append(_substitute(token, host))
    return argv


def _write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def prepare_workspace(task: TaskSpec, parents: Sequence[RunOutcome], spec: ExperimentSpec,
                      cache: TwoLevelCache, root: Path) -> Workspace:
    """
    Stage parent outputs under data/<parent-id>/ and write config/.

    Raises:
        ArtifactError: A parent did not succeed or its artifact is gone
    """
    ws = Workspace.create(root)
    for outcome in parents:
        if not outcome.ok or not outcome.signature:
            raise ArtifactError(f"parent {outcome.task_id[:12]} has no artifact ({outcome.status.value})")
        cache.materialize(outcome.signature, ws.data / outcome.task_id)
    _write_json(ws.config / "model.json", {"model": spec.model, "params": dict(spec.model_params)})
    _write_json(ws.config / "dataset.json", {"dataset": spec.dataset, "params": dict(spec.dataset_params)})
    _write_json(ws.config / "tool.json", dict(task.params))
    return ws


def _snapshot(ws: Workspace) -> tuple:
    return (sorted(os.listdir(ws.root)), tree_signature(ws.data), tree_signature(ws.config))


def _tail(stderr: bytes, limit: int) -> str:
    return stderr[-limit:].decode("utf-8", errors="replace") if stderr else ""


def read_metrics(output: Path) -> dict[str, float]:
    """
    Parse output/metrics.json into a flat name -> number map.

    Raises:
        ArtifactError: Missing, malformed, or holding non-numeric values
    """
    path = output / "metrics.json"
    if not path.is_file():
        raise ArtifactError("evaluator did not write output/metrics.json")
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ArtifactError(f"malformed metrics.json: {e}") from None
    if not isinstance(data, dict):
        raise ArtifactError("metrics.json must hold an object")
    metrics = {}
    for name, value in data.items():
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ArtifactError(f"metric {name!r} is not a number")
        metrics[name] = float(value)
    return metrics


def run_builtin(task: TaskSpec, ws: Workspace, spec: Optional[ExperimentSpec]) -> None:
    """Ingest writes the dataset artifact; every other builtin copies its parent through."""
    if task.kind is TaskKind.INGEST:
        _write_json(ws.output / "dataset.json", {"dataset": task.params.get("dataset"),
                                                 "params": task.params.get("dataset_params", {})})
        if spec is not None and spec.dataset_dir is not None:
            shutil.copytree(spec.dataset_dir, ws.output / "files")
        return
    for parent in task.parents:
        shutil.copytree(ws.data / parent, ws.output, dirs_exist_ok=True)


async def execute_task(task: TaskSpec, ws: Workspace, backend: BackendSpec,
                       tool: Optional[ToolDescriptor] = None, spec: Optional[ExperimentSpec] = None,
                       timeout: float = 600.0, stderr_tail: int = 4096) -> RunOutcome:
    """
    Run one task in a prepared workspace.

    Succeeds on exit 0 with a non-empty output/ and no writes elsewhere;
    Evaluate tasks must also leave a numeric output/metrics.json.
    """
    started = time.time()
    seed = task.effective_seed

    def finish(status: OutcomeStatus, **kwargs) -> RunOutcome:
        finished = time.time()
        return RunOutcome(task.task_id, status, seed=seed, wall_time=finished - started,
                          started_at=started, finished_at=finished, **kwargs)

    before = _snapshot(ws)
    if backend.kind == "builtin":
        try:
            run_builtin(task, ws, spec)
        except OSError as e:
            return finish(OutcomeStatus.FAILED, message=f"builtin failed: {e}")
    else:
        argv = instantiate_command(tool.invocation.command if tool else "", ws, backend, task.seed, task.task_id)
        env = dict(os.environ, LANDSEER_SEED=str(task.seed), LANDSEER_TASK_ID=task.task_id)
        logger.debug("Running %s: %s", task.task_id[:12], shlex.join(argv))
        try:
            proc = await asyncio.create_subprocess_exec(
                *argv, cwd=ws.root, env=env,
                stdout=asyncio.subprocess.PIPE, stderr=asyncio.subprocess.PIPE,
            )
        except OSError as e:
            return finish(OutcomeStatus.FAILED, message=f"cannot start {argv[0] if argv else 'tool'}: {e}")
        try:
            _, stderr = await asyncio.wait_for(proc.communicate(), timeout)
        except asyncio.TimeoutError:
            proc.kill()
            _, stderr = await proc.communicate()
            return finish(OutcomeStatus.FAILED, stderr_tail=_tail(stderr, stderr_tail),
                          message=f"timed out after {timeout:g}s")
        if proc.returncode != 0:
            return finish(OutcomeStatus.FAILED, exit_code=proc.returncode,
                          stderr_tail=_tail(stderr, stderr_tail), message=f"exit code {proc.returncode}")

    if _snapshot(ws) != before:
        return finish(OutcomeStatus.FAILED, message="tool wrote outside output/")
    if not any(ws.output.iterdir()):
        return finish(OutcomeStatus.FAILED, message="tool produced an empty output/")

    metrics: dict[str, float] = {}
    if task.kind is TaskKind.EVALUATE:
        try:
            metrics = read_metrics(ws.output)
        except ArtifactError as e:
            return finish(OutcomeStatus.FAILED, message=str(e))
    return finish(OutcomeStatus.SUCCEEDED, signature=tree_signature(ws.output), metrics=metrics)


class Ledger:
    """Append-only ledger.jsonl, one RunOutcome per line."""

    def __init__(self, path: Path, fresh: bool = True):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if fresh:
            self.path.write_text("", encoding="utf-8")
        elif self.path.is_file():
            text = self.path.read_text(encoding="utf-8")
            if text and not text.endswith("\n"):
                # torn final line from a killed run
                self.path.write_text(text[: text.rfind("\n") + 1], encoding="utf-8")

    def append(self, outcome: RunOutcome) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(outcome.to_dict(), sort_keys=True, separators=(",", ":")) + "\n")
            f.flush()

    @staticmethod
    def load(path: Path) -> dict[str, RunOutcome]:
        """Last recorded outcome per task; a torn final line is ignored."""
        outcomes: dict[str, RunOutcome] = {}
        if not Path(path).is_file():
            return outcomes
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            try:
                outcome = RunOutcome.from_dict(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError):
                continue
            outcomes[outcome.task_id] = outcome
        return outcomes


@dataclass(frozen=True)
class ExecutorOptions:
    work_dir: Path
    timeout: float = 600.0
    stderr_tail: int = 4096
    keep_workspaces: bool = False
    backend: Optional[str] = None


@dataclass
class RunSummary:
    """Every task's outcome plus counts by disposition."""
    outcomes: dict[str, RunOutcome]
    counts: Counter = field(default_factory=Counter)

    @property
    def executed(self) -> int:
        return self.counts["executed"]

    @property
    def cached(self) -> int:
        return self.counts[OutcomeStatus.CACHED.value]

    @property
    def failed(self) -> int:
        return self.counts[OutcomeStatus.FAILED.value]

    @property
    def upstream_failed(self) -> int:
        return self.counts[OutcomeStatus.UPSTREAM_FAILED.value]

    @property
    def ok(self) -> bool:
        return all(o.ok for o in self.outcomes.values())


class Scheduler:
    """Single writer of the ledger; runs batches from topo_schedule."""

    def __init__(self, dag: PlanDag, pool: Sequence[WorkerSlot], cache: TwoLevelCache,
                 spec: ExperimentSpec, registry: Registry, options: ExecutorOptions,
                 ledger: Optional[Ledger] = None, resume: Optional[Mapping[str, RunOutcome]] = None):
        if not pool:
            raise LandseerError("worker pool is empty")
        self.dag = dag
        self.pool = list(pool)
        self.cache = cache
        self.spec = spec
        self.registry = registry
        self.options = options
        self.ledger = ledger
        self.summary = RunSummary({})
        for task_id, outcome in (resume or {}).items():
            if task_id in dag.tasks and outcome.ok:
                self.summary.outcomes[task_id] = outcome
                self.summary.counts["resumed"] += 1

    def _record(self, outcome: RunOutcome, executed: bool = False) -> None:
        self.summary.outcomes[outcome.task_id] = outcome
        self.summary.counts[outcome.status.value] += 1
        if executed:
            self.summary.counts["executed"] += 1
        if self.ledger is not None:
            self.ledger.append(outcome)
        if outcome.status is OutcomeStatus.FAILED:
            task = self.dag.tasks[outcome.task_id]
            logger.warning("Task %s (%s %s) failed: %s", outcome.task_id[:12], task.kind.value,
                           task.tool, outcome.message)

    def _tool(self, task: TaskSpec) -> Optional[ToolDescriptor]:
        return None if task.kind is TaskKind.INGEST else self.registry.get(task.tool)

    def _backend(self, task: TaskSpec) -> BackendSpec:
        tool = self._tool(task)
        if tool is None or tool.invocation.backend == "builtin":
            return BackendSpec("builtin")
        return parse_backend(self.options.backend or tool.invocation.backend)

    def _key(self, task: TaskSpec) -> str:
        ref = f"{INGEST_TOOL}@{INGEST_VERSION}" if task.kind is TaskKind.INGEST else f"{task.tool}@{task.version}"
        inputs = [self.summary.outcomes[p].signature for p in task.parents]
        digest = task.config_digest
        if task.effective_seed is not None:
            # seed replicas of a stochastic task must not share an entry
            digest = f"{digest}/seed={task.effective_seed}"
        return cache_key(ref, digest, inputs)

    async def _lookup(self, task: TaskSpec) -> Optional[RunOutcome]:
        hit = await asyncio.to_thread(self.cache.lookup, self._key(task))
        if hit is None:
            return None
        metrics = {}
        if task.kind is TaskKind.EVALUATE:
            try:
                metrics = read_metrics(hit.path)
            except ArtifactError as e:
                logger.warning("Cached evaluation %s unreadable (%s); re-running", hit.signature[:12], e)
                return None
        return RunOutcome(task.task_id, OutcomeStatus.CACHED, signature=hit.signature,
                          metrics=metrics, seed=task.effective_seed, message=f"{hit.tier} hit")

    async def _run_one(self, task: TaskSpec, worker: str) -> RunOutcome:
        parents = [self.summary.outcomes[p] for p in task.parents]
        root = self.options.work_dir / task.task_id[:16]
        key = self._key(task)
        started = time.time()
        try:
            with self.cache.pinned(o.signature for o in parents):
                ws = await asyncio.to_thread(prepare_workspace, task, parents, self.spec, self.cache, root)
                outcome = await execute_task(task, ws, self._backend(task), self._tool(task), self.spec,
                                             self.options.timeout, self.options.stderr_tail)
            if outcome.ok:
                ref = f"{task.tool}@{task.version}"
                lineage = LineageRecord("", task.task_id, tuple(o.signature for o in parents), ref)
                await asyncio.to_thread(self.cache.insert, key, ws.output, lineage)
        except (LandseerError, OSError) as e:
            finished = time.time()
            outcome = RunOutcome(task.task_id, OutcomeStatus.FAILED, seed=task.effective_seed,
                                 message=str(e), started_at=started, finished_at=finished,
                                 wall_time=finished - started)
        finally:
            if not self.options.keep_workspaces:
                shutil.rmtree(root, ignore_errors=True)
        return replace(outcome, worker=worker)

    async def _run_batch(self, tasks: list[TaskSpec]) -> None:
        waiting = list(tasks)
        busy: Counter = Counter()
        running: dict[asyncio.Task, tuple[TaskSpec, str]] = {}
        while waiting or running:
            if waiting:
                plan = assign(waiting, self.pool, busy)
                for task_id, reason in plan.parked.items():
                    self._record(RunOutcome(task_id, OutcomeStatus.FAILED, message=f"parked: {reason}"))
                for task in waiting:
                    worker = plan.assigned.get(task.task_id)
                    if worker is not None:
                        busy[worker] += 1
                        running[asyncio.create_task(self._run_one(task, worker))] = (task, worker)
                waiting = [t for t in waiting if t.task_id in plan.waiting]
            if not running:
                break
            done, _ = await asyncio.wait(running, return_when=asyncio.FIRST_COMPLETED)
            for finished in done:
                task, worker = running.pop(finished)
                busy[worker] -= 1
                self._record(finished.result(), executed=True)

    async def run(self) -> RunSummary:
        self.options.work_dir.mkdir(parents=True, exist_ok=True)
        for batch in topo_schedule(self.dag):
            pending = []
            for task_id in batch:
                if task_id in self.summary.outcomes:
                    continue
                task = self.dag.tasks[task_id]
                blocked = [p for p in task.parents if not self.summary.outcomes[p].ok]
                if blocked:
                    self._record(RunOutcome(task_id, OutcomeStatus.UPSTREAM_FAILED, seed=task.effective_seed,
                                            message=f"upstream {blocked[0][:12]} did not succeed"))
                    continue
                pending.append(task)

            to_run = []
            for task in pending:
                cached = await self._lookup(task)
                if cached is not None:
                    self._record(cached)
                else:
                    to_run.append(task)
            await self._run_batch(to_run)

        counts = self.summary.counts
        logger.info("Run %s: %d executed, %d cached, %d failed, %d upstream-failed, %d resumed",
                    self.dag.experiment, counts["executed"], self.summary.cached, self.summary.failed,
                    self.summary.upstream_failed, counts["resumed"])
        return self.summary


def run_experiment(dag: PlanDag, pool: Sequence[WorkerSlot], cache: TwoLevelCache, spec: ExperimentSpec,
                   registry: Registry, options: ExecutorOptions, ledger_path: Optional[Path] = None,
                   resume: bool = False) -> RunSummary:
    """
    Execute every task of the DAG exactly once, consulting the cache first.

    Failures are recorded, never raised; independent subgraphs keep running.
    With resume, succeeded and cached outcomes already in the ledger are
    adopted instead of looked up again.

    Returns:
        RunSummary: One outcome per task id
    """
    prior = Ledger.load(ledger_path) if (resume and ledger_path) else {}
    ledger = Ledger(ledger_path, fresh=not resume) if ledger_path else None
    scheduler = Scheduler(dag, pool, cache, spec, registry, options, ledger, prior)
    return asyncio.run(scheduler.run())
