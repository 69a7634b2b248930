"""Linearization, global DAG deduplication and scheduling order."""

from collections import Counter
from dataclasses import replace

import pytest

from conftest import cast_spec, cast_tools, make_tool
from landseer.combinator import EMPTY, Combination, enumerate_combinations
from landseer.errors import CapExceededError, PlanError
from landseer.metrics import METRIC_CATALOG
from landseer.planner import (PlanDag, PlanStats, TaskKind, TaskSpec, compile_dag, config_digest,
                              descendant_counts, linearize, load_plan, save_plan, task_identity, topo_schedule)
from landseer.registry import Registry, Stage
from landseer.synthkit import oracle_unique_tasks


def test_linearize_orders_stages(spec, registry):
    combination = Combination.of(pre=["a"], during=["b"], post=["c2", "c1"])
    chain = linearize(combination, spec, registry, seed=0)

    assert [t.kind for t in chain] == [TaskKind.INGEST, TaskKind.PRE_TOOL, TaskKind.TRAIN,
                                       TaskKind.POST_TOOL, TaskKind.POST_TOOL, TaskKind.EVALUATE]
    assert [t.tool for t in chain[1:5]] == ["a", "b", "c2", "c1"]
    for parent, child in zip(chain, chain[1:]):
        assert child.parents == (parent.task_id,)


def test_empty_combination_uses_baseline_trainer(spec, registry):
    chain = linearize(EMPTY, spec, registry, seed=0)
    assert [(t.kind, t.tool) for t in chain] == [
        (TaskKind.INGEST, "ingest"), (TaskKind.TRAIN, "baseline_trainer"), (TaskKind.EVALUATE, "evaluator")]
    assert chain[-1].params == {"metric": "acc"}
    assert not chain[1].stochastic


def test_one_evaluate_per_metric():
    metrics = ("acc", "m_ar")
    spec = cast_spec(metrics=metrics)
    registry = Registry(cast_tools(metrics=metrics))
    chain = linearize(EMPTY, spec, registry, seed=0)
    evaluations = [t for t in chain if t.kind is TaskKind.EVALUATE]
    assert [t.metric for t in evaluations] == ["acc", "m_ar"]
    assert len({t.task_id for t in evaluations}) == 2


def test_task_identity_ignores_seed_for_deterministic_tasks():
    task = TaskSpec(TaskKind.PRE_TOOL, "a", "1.0", config_digest({}), ("p",), seed=0, stochastic=False)
    assert task_identity(task) == task_identity(replace(task, seed=7))

    stochastic = replace(task, kind=TaskKind.TRAIN, stochastic=True)
    assert task_identity(stochastic) != task_identity(replace(stochastic, seed=1))


def test_config_digest_is_key_order_independent():
    assert config_digest({"x": 1, "y": [1, 2]}) == config_digest({"y": [1, 2], "x": 1})
    assert config_digest({"x": 1}) != config_digest({"x": 2})


def test_four_tool_dedup_stats(spec, registry):
    dag = compile_dag(enumerate_combinations(spec), spec, registry)

    assert dag.stats.combinations == 20
    assert dag.stats.instances == 94
    assert dag.stats.unique == 42
    assert dag.stats.dedup_ratio == pytest.approx(94 / 42)
    kinds = Counter(t.kind for t in dag.tasks.values())
    assert kinds == {TaskKind.INGEST: 1, TaskKind.PRE_TOOL: 1, TaskKind.TRAIN: 4,
                     TaskKind.POST_TOOL: 16, TaskKind.EVALUATE: 20}
    assert len(dag.terminals) == 20


@pytest.mark.parametrize("seeds", [1, 2, 3])
def test_unique_tasks_match_path_oracle(registry, seeds):
    spec = cast_spec(seeds=seeds)
    dag = compile_dag(enumerate_combinations(spec), spec, registry)
    assert dag.stats.unique == oracle_unique_tasks(spec, registry)
    assert len(dag.terminals) == 20 * seeds


def test_seeds_replicate_only_stochastic_training(registry):
    spec = cast_spec(seeds=3)
    dag = compile_dag(enumerate_combinations(spec), spec, registry)
    train = [t for t in dag.tasks.values() if t.kind is TaskKind.TRAIN]
    assert Counter(t.tool for t in train) == {"b": 6, "baseline_trainer": 2}


def test_real_baseline_trainer_is_replicated_per_seed():
    tools = cast_tools()
    tools["plain_sgd"] = make_tool("plain_sgd", Stage.DURING)
    registry = Registry(tools)
    spec = replace(cast_spec(seeds=3), trainer="plain_sgd")
    dag = compile_dag(enumerate_combinations(spec), spec, registry)

    train = [t for t in dag.tasks.values() if t.kind is TaskKind.TRAIN]
    assert Counter(t.tool for t in train) == {"b": 6, "plain_sgd": 6}
    assert sorted(t.seed for t in train if t.tool == "plain_sgd") == [0, 0, 1, 1, 2, 2]
    assert dag.stats.unique == oracle_unique_tasks(spec, registry)


def test_deterministic_flag_overrides_kind_default():
    tools = cast_tools()
    tools["c1"] = make_tool("c1", Stage.POST, deterministic=True)
    registry = Registry(tools)
    spec = cast_spec(seeds=2)
    dag = compile_dag(enumerate_combinations(spec), spec, registry)
    assert dag.stats.unique == oracle_unique_tasks(spec, registry)
    assert all(not t.stochastic for t in dag.tasks.values() if t.tool == "c1")


def test_dataset_change_changes_every_task_id(spec, registry):
    before = compile_dag(enumerate_combinations(spec), spec, registry)
    changed = replace(spec, dataset="cifar100")
    after = compile_dag(enumerate_combinations(changed), changed, registry)
    assert not set(before.tasks) & set(after.tasks)


def test_tool_params_feed_the_digest(spec, registry):
    plain = linearize(Combination.of(pre=["a"]), spec, registry, 0)
    tuned = linearize(Combination.of(pre=["a"]), replace(spec, params={"a": {"strength": 2}}), registry, 0)
    assert plain[1].task_id != tuned[1].task_id
    assert tuned[1].params == {"strength": 2}


def test_task_cap(spec, registry):
    with pytest.raises(CapExceededError):
        compile_dag(enumerate_combinations(spec), spec, registry, task_cap=50)


def test_topo_schedule_respects_dependencies(spec, registry):
    dag = compile_dag(enumerate_combinations(spec), spec, registry)
    batches = topo_schedule(dag)

    position = {task_id: i for i, batch in enumerate(batches) for task_id in batch}
    assert len(position) == len(dag.tasks)
    for task in dag.tasks.values():
        for parent in task.parents:
            assert position[parent] < position[task.task_id]

    counts = descendant_counts(dag)
    (ingest,) = batches[0]
    assert dag.tasks[ingest].kind is TaskKind.INGEST
    assert counts[ingest] == 41
    for batch in batches:
        keys = [(-counts[t], t) for t in batch]
        assert keys == sorted(keys)


def test_cycle_is_detected():
    a = TaskSpec(TaskKind.PRE_TOOL, "a", "1", "d", ("y",), 0, False)
    b = TaskSpec(TaskKind.PRE_TOOL, "b", "1", "d", ("x",), 0, False)
    dag = PlanDag("cyclic", {"x": a, "y": b}, {"x": ("y",), "y": ("x",)}, {}, PlanStats(2, 2, 0, 1))
    with pytest.raises(PlanError, match="cycle"):
        topo_schedule(dag)


def test_descendant_counts_match_reachability(spec, registry):
    seeded = replace(spec, seeds=2)
    dag = compile_dag(enumerate_combinations(seeded), seeded, registry)
    counts = descendant_counts(dag)
    assert counts == {task_id: len(dag.descendants(task_id)) for task_id in dag.tasks}


def tree_dag(size: int) -> PlanDag:
    """Heap-shaped binary tree: task i hangs under task (i - 1) // 2."""
    tasks, children = {}, {}
    for i in range(size):
        parents = (f"t{(i - 1) // 2}",) if i else ()
        tasks[f"t{i}"] = TaskSpec(TaskKind.PRE_TOOL, "a", "1", "d", parents, 0, False)
        for parent in parents:
            children.setdefault(parent, []).append(f"t{i}")
    return PlanDag("tree", tasks, {p: tuple(kids) for p, kids in children.items()}, {},
                   PlanStats(size, size, 1, 1))


def test_descendant_counts_on_a_large_forest():
    size = 2 ** 16 - 1
    counts = descendant_counts(tree_dag(size))

    assert len(counts) == size
    for i in (0, 1, 2, 100, 5000, size - 1):
        depth = (i + 1).bit_length() - 1
        assert counts[f"t{i}"] == 2 ** (16 - depth) - 2


def test_descendant_counts_reject_merging_tasks():
    root = TaskSpec(TaskKind.INGEST, "ingest", "1", "d", (), 0, False)
    left = TaskSpec(TaskKind.PRE_TOOL, "a", "1", "d", ("r",), 0, False)
    right = TaskSpec(TaskKind.PRE_TOOL, "b", "1", "d", ("r",), 0, False)
    merge = TaskSpec(TaskKind.TRAIN, "t", "1", "d", ("l", "x"), 0, False)
    dag = PlanDag("diamond", {"r": root, "l": left, "x": right, "m": merge},
                  {"r": ("l", "x"), "l": ("m",), "x": ("m",)}, {}, PlanStats(4, 4, 1, 1))
    with pytest.raises(PlanError, match="forest"):
        descendant_counts(dag)


def test_plan_file_round_trip(tmp_path, spec, registry):
    dag = compile_dag(enumerate_combinations(spec), spec, registry)
    save_plan(dag, tmp_path / "plan.json")
    loaded = load_plan(tmp_path / "plan.json")
    assert loaded.to_dict() == dag.to_dict()
    assert set(loaded.tasks) == {t.task_id for t in loaded.tasks.values()}


def test_terminals_hold_one_task_per_metric(spec):
    registry = Registry(cast_tools(metrics=("acc", "m_ar")))
    spec = replace(spec, metrics=(METRIC_CATALOG["acc"], METRIC_CATALOG["m_ar"]))
    dag = compile_dag([EMPTY], spec, registry)
    assert sorted(dag.terminals[(EMPTY.id, 0)]) == ["acc", "m_ar"]
