"""Tree signatures, the LRU index and the two-level cache."""

import random
import threading
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from landseer.cache import (EMPTY_TREE_SIGNATURE, LineageRecord, LocalCache, LruIndex, TwoLevelCache, cache_key,
                            pack_tree, tree_signature, unpack_tree)
from landseer.errors import ArtifactError, CacheFullError, IntegrityError
from landseer.store import FilesystemStore, object_path


def make_tree(root: Path, files: dict[str, bytes]) -> Path:
    for relative, content in files.items():
        path = root / relative
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(content)
    root.mkdir(parents=True, exist_ok=True)
    return root


def test_signature_ignores_location_and_creation_order(tmp_path):
    first = make_tree(tmp_path / "one", {"a.txt": b"alpha", "sub/b.bin": b"\x00\x01"})
    second = make_tree(tmp_path / "two", {"sub/b.bin": b"\x00\x01", "a.txt": b"alpha"})
    assert tree_signature(first) == tree_signature(second)

    (second / "a.txt").write_bytes(b"alphA")
    assert tree_signature(first) != tree_signature(second)


def test_signature_sees_renames(tmp_path):
    first = make_tree(tmp_path / "one", {"a.txt": b"x"})
    second = make_tree(tmp_path / "two", {"b.txt": b"x"})
    assert tree_signature(first) != tree_signature(second)


def test_empty_tree_signature(tmp_path):
    (tmp_path / "empty").mkdir()
    assert tree_signature(tmp_path / "empty") == EMPTY_TREE_SIGNATURE


def test_missing_tree_raises(tmp_path):
    with pytest.raises(ArtifactError):
        tree_signature(tmp_path / "absent")


def test_cache_key_is_order_sensitive():
    assert cache_key("t@1", "d", ["x", "y"]) == cache_key("t@1", "d", ["x", "y"])
    assert cache_key("t@1", "d", ["x", "y"]) != cache_key("t@1", "d", ["y", "x"])
    assert cache_key("t@1", "d", ["x"]) != cache_key("t@2", "d", ["x"])


def test_pack_and_unpack_preserve_signature(tmp_path):
    tree = make_tree(tmp_path / "tree", {"model.bin": b"weights", "meta/info.json": b"{}"})
    archive = tmp_path / "object.tar"
    pack_tree(tree, archive)
    unpack_tree(archive, tmp_path / "restored")
    assert tree_signature(tmp_path / "restored") == tree_signature(tree)

    again = tmp_path / "again.tar"
    pack_tree(tree, again)
    assert archive.read_bytes() == again.read_bytes()


@settings(max_examples=100, deadline=None)
@given(capacity=st.integers(1, 5), accesses=st.lists(st.integers(0, 9), max_size=40))
def test_lru_index_matches_list_oracle(capacity, accesses):
    index = LruIndex(capacity, by_entries=True)
    oracle: list[str] = []
    for item in accesses:
        signature = f"s{item}"
        if signature in index:
            index.touch(signature)
            oracle.remove(signature)
        else:
            index.evict(1)
            index.add(signature, 1)
            if len(oracle) == capacity:
                oracle.pop(0)
        oracle.append(signature)
        assert index.order() == oracle
        assert index.usage <= capacity


@pytest.mark.parametrize("seed, capacity", [(0, 1), (1, 3), (2, 8), (3, 32)])
def test_lru_index_matches_list_oracle_over_long_runs(seed, capacity):
    rng = random.Random(seed)
    index = LruIndex(capacity, by_entries=True)
    oracle: list[str] = []
    for _ in range(10 ** 4):
        signature = f"s{rng.randrange(capacity * 3)}"
        if signature in index:
            index.touch(signature)
            oracle.remove(signature)
        else:
            index.evict(1)
            index.add(signature, 1)
            if len(oracle) == capacity:
                oracle.pop(0)
        oracle.append(signature)
        assert len(index) <= capacity
    assert index.order() == oracle


def test_pinned_entries_are_skipped():
    index = LruIndex(30)
    for name in ("old", "mid", "new"):
        index.add(name, 10)
    index.pin("old")
    assert index.victims(10) == ["mid"]
    index.pin("mid")
    index.pin("new")
    with pytest.raises(CacheFullError, match="3 pinned"):
        index.victims(10)
    index.unpin("new")
    assert index.evict(10) == ["new"]


@pytest.fixture
def shared(tmp_path) -> FilesystemStore:
    return FilesystemStore(tmp_path / "shared")


def two_level(root: Path, shared, capacity: int = 10 ** 6) -> TwoLevelCache:
    return TwoLevelCache(LocalCache(root, capacity), shared)


def lineage(task: str, parents=()) -> LineageRecord:
    return LineageRecord("", task, tuple(parents), "tool@1")


def test_insert_then_local_hit(tmp_path, shared):
    cache = two_level(tmp_path / "local", shared)
    tree = make_tree(tmp_path / "out", {"model.bin": b"weights"})

    signature = cache.insert("key1", tree, lineage("t1"))

    assert signature == tree_signature(tree)
    assert shared.has_object(signature)
    assert shared.get_key("key1") == signature
    hit = cache.lookup("key1")
    assert (hit.tier, hit.signature) == ("local", signature)
    assert cache.lookup("other") is None
    assert cache.stats == {"local": 1, "miss": 1}


def test_shared_hit_is_promoted(tmp_path, shared):
    producer = two_level(tmp_path / "worker1", shared)
    signature = producer.insert("key1", make_tree(tmp_path / "out", {"m": b"1"}), lineage("t1"))

    consumer = two_level(tmp_path / "worker2", shared)
    first = consumer.lookup("key1")
    second = consumer.lookup("key1")

    assert first.tier == "shared"
    assert second.tier == "local"
    assert tree_signature(second.path) == signature


def test_corrupted_local_entry_falls_back_to_shared(tmp_path, shared, caplog):
    cache = two_level(tmp_path / "local", shared)
    signature = cache.insert("key1", make_tree(tmp_path / "out", {"m": b"1"}), lineage("t1"))
    (cache.local.path(signature) / "m").write_bytes(b"tampered")

    hit = cache.lookup("key1")

    assert hit.tier == "shared"
    assert tree_signature(hit.path) == signature
    assert "corrupted" in caplog.text


def test_corrupted_shared_object_is_a_miss(tmp_path, shared):
    signature = two_level(tmp_path / "w1", shared).insert(
        "key1", make_tree(tmp_path / "out", {"m": b"1"}), lineage("t1"))
    impostor = make_tree(tmp_path / "impostor", {"m": b"2"})
    pack_tree(impostor, shared.root / object_path(signature))

    assert two_level(tmp_path / "w2", shared).lookup("key1") is None
    assert not shared.has_object(signature)


def test_unreadable_shared_object_is_a_purged_miss(tmp_path, shared, caplog):
    tree = make_tree(tmp_path / "out", {"m": b"1"})
    signature = two_level(tmp_path / "w1", shared).insert("key1", tree, lineage("t1"))
    (shared.root / object_path(signature)).write_bytes(b"not a tar at all, truncated")

    assert two_level(tmp_path / "w2", shared).lookup("key1") is None
    assert "unreadable" in caplog.text
    assert not shared.has_object(signature)


def test_purged_shared_object_is_republished(tmp_path, shared):
    tree = make_tree(tmp_path / "out", {"m": b"1"})
    signature = two_level(tmp_path / "w1", shared).insert("key1", tree, lineage("t1"))
    (shared.root / object_path(signature)).write_bytes(b"truncated")

    rerun = two_level(tmp_path / "w2", shared)
    assert rerun.lookup("key1") is None
    assert rerun.insert("key1", tree, lineage("t1")) == signature

    hit = two_level(tmp_path / "w3", shared).lookup("key1")
    assert hit is not None
    assert (hit.tier, hit.signature) == ("shared", signature)
    assert tree_signature(hit.path) == signature


def test_unreadable_object_after_eviction_raises_artifact_error(tmp_path, shared):
    cache = two_level(tmp_path / "local", shared, capacity=150)
    first = cache.insert("k1", make_tree(tmp_path / "a", {"m": b"a" * 100}), lineage("t1"))
    cache.insert("k2", make_tree(tmp_path / "b", {"m": b"b" * 100}), lineage("t2"))
    (shared.root / object_path(first)).write_bytes(b"garbage")

    with pytest.raises(ArtifactError, match="missing"):
        cache.ensure_local(first)
    assert not shared.has_object(first)


def test_republishing_a_key_with_different_content_fails(tmp_path, shared):
    cache = two_level(tmp_path / "local", shared)
    cache.insert("key1", make_tree(tmp_path / "a", {"m": b"1"}), lineage("t1"))
    with pytest.raises(IntegrityError, match="nondeterministic"):
        cache.insert("key1", make_tree(tmp_path / "b", {"m": b"2"}), lineage("t1"))


def test_republishing_identical_content_is_idempotent(tmp_path, shared):
    cache = two_level(tmp_path / "local", shared)
    first = cache.insert("key1", make_tree(tmp_path / "a", {"m": b"1"}), lineage("t1"))
    second = cache.insert("key1", make_tree(tmp_path / "b", {"m": b"1"}), lineage("t1"))
    assert first == second


def test_evicted_artifact_is_fetched_again(tmp_path, shared):
    cache = two_level(tmp_path / "local", shared, capacity=150)
    first = cache.insert("k1", make_tree(tmp_path / "a", {"m": b"a" * 100}), lineage("t1"))
    cache.insert("k2", make_tree(tmp_path / "b", {"m": b"b" * 100}), lineage("t2"))

    assert not cache.local.has(first)
    path = cache.ensure_local(first)
    assert tree_signature(path) == first


def test_oversized_artifact_is_published_but_not_cached_locally(tmp_path, shared, caplog):
    cache = two_level(tmp_path / "local", shared, capacity=50)
    tree = make_tree(tmp_path / "big", {"m": b"x" * 100})

    signature = cache.insert("k1", tree, lineage("t1"))

    assert signature == tree_signature(tree)
    assert shared.has_object(signature)
    assert shared.get_key("k1") == signature
    assert not cache.local.has(signature)
    assert "Not caching" in caplog.text
    assert cache.lookup("k1") is None
    with pytest.raises(CacheFullError):
        cache.ensure_local(signature)

    roomy = two_level(tmp_path / "roomy", shared)
    assert roomy.lookup("k1").tier == "shared"


def test_concurrent_identical_inserts_store_one_copy(tmp_path, shared):
    workers = [two_level(tmp_path / f"w{i}", shared) for i in range(2)]
    trees = [make_tree(tmp_path / f"out{i}", {"model.bin": b"weights", "log.txt": b"done"}) for i in range(2)]
    barrier = threading.Barrier(2)

    def insert(index: int) -> str:
        barrier.wait()
        return workers[index].insert("key1", trees[index], lineage("t1"))

    with ThreadPoolExecutor(max_workers=2) as pool:
        signatures = list(pool.map(insert, range(2)))

    assert signatures[0] == signatures[1] == tree_signature(trees[0])
    stored = [p for p in (shared.root / "objects").rglob("*") if p.is_file()]
    assert stored == [shared.root / object_path(signatures[0])]
    assert shared.get_key("key1") == signatures[0]
    assert [p.name for p in (shared.root / "lineage").iterdir()] == [f"{signatures[0]}.json"]


def test_pinned_artifact_blocks_eviction(tmp_path, shared):
    cache = two_level(tmp_path / "local", shared, capacity=150)
    signature = cache.insert("k1", make_tree(tmp_path / "a", {"m": b"a" * 100}), lineage("t1"))
    with cache.pinned([signature]):
        with pytest.raises(CacheFullError):
            cache.evict_lru(100)
    assert cache.evict_lru(100) == [signature]


def test_missing_artifact_raises(tmp_path, shared):
    cache = two_level(tmp_path / "local", shared)
    with pytest.raises(ArtifactError):
        cache.ensure_local("0" * 64)


def test_local_cache_survives_restart(tmp_path, shared):
    cache = two_level(tmp_path / "local", shared)
    signature = cache.insert("k1", make_tree(tmp_path / "a", {"m": b"1"}), lineage("t1"))

    reopened = LocalCache(tmp_path / "local", 10 ** 6)
    assert reopened.has(signature)
    assert reopened.signature_for("k1") == signature


def test_lineage_chain(tmp_path, shared):
    cache = two_level(tmp_path / "local", shared)
    root = cache.insert("k1", make_tree(tmp_path / "a", {"data": b"d"}), lineage("ingest"))
    child = cache.insert("k2", make_tree(tmp_path / "b", {"model": b"m"}), lineage("train", [root]))

    record = cache.lineage(child)
    assert record.parents == (root,)
    assert record.created_at
    assert [r.signature for r in cache.lineage_chain(child)] == [child, root]
    assert cache.lineage(root).parents == ()
