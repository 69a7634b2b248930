"""Shared store contract, run against the filesystem and HTTP implementations."""

import httpx
import pytest

from landseer.errors import ArtifactError, IntegrityError
from landseer.store import FilesystemStore, HttpStore, open_store

SIG = "ab" + "0" * 62
OTHER = "cd" + "1" * 62


def bucket_transport(bucket: dict[str, bytes]) -> httpx.MockTransport:
    """In-memory path-style bucket answering HEAD/GET/PUT/DELETE."""
    def handler(request: httpx.Request) -> httpx.Response:
        path = request.url.path
        if request.method == "PUT":
            bucket[path] = request.content
            return httpx.Response(200)
        if request.method == "DELETE":
            return httpx.Response(204 if bucket.pop(path, None) is not None else 404)
        if path not in bucket:
            return httpx.Response(404)
        if request.method == "HEAD":
            return httpx.Response(200)
        return httpx.Response(200, content=bucket[path])
    return httpx.MockTransport(handler)


@pytest.fixture(params=["filesystem", "http"])
def store(request, tmp_path):
    if request.param == "filesystem":
        yield FilesystemStore(tmp_path / "store")
    else:
        bucket: dict[str, bytes] = {}
        store = HttpStore("http://store.test/landseer", transport=bucket_transport(bucket))
        yield store
        store.close()


def test_object_round_trip(store, tmp_path):
    source = tmp_path / "object.tar"
    source.write_bytes(b"packed tree")

    assert not store.has_object(SIG)
    store.put_object(SIG, source)
    store.put_object(SIG, source)
    assert store.has_object(SIG)

    store.get_object(SIG, tmp_path / "copy.tar")
    assert (tmp_path / "copy.tar").read_bytes() == b"packed tree"


def test_missing_object_raises(store, tmp_path):
    with pytest.raises(ArtifactError):
        store.get_object(SIG, tmp_path / "copy.tar")


def test_delete_object_allows_republication(store, tmp_path):
    source = tmp_path / "object.tar"
    source.write_bytes(b"garbage")
    store.put_object(SIG, source)

    store.delete_object(SIG)
    store.delete_object(SIG)
    assert not store.has_object(SIG)

    source.write_bytes(b"packed tree")
    store.put_object(SIG, source)
    store.get_object(SIG, tmp_path / "copy.tar")
    assert (tmp_path / "copy.tar").read_bytes() == b"packed tree"


def test_keys_are_write_once(store):
    assert store.get_key("k") is None
    store.put_key("k", SIG)
    store.put_key("k", SIG)
    assert store.get_key("k") == SIG
    with pytest.raises(IntegrityError, match="already maps"):
        store.put_key("k", OTHER)
    assert store.get_key("k") == SIG


def test_lineage_round_trip(store):
    record = {"signature": SIG, "task_id": "t", "parents": [OTHER], "tool": "a@1", "created_at": "now"}
    assert store.get_lineage(SIG) is None
    store.put_lineage(SIG, record)
    assert store.get_lineage(SIG) == record


def test_filesystem_layout(tmp_path):
    store = FilesystemStore(tmp_path)
    source = tmp_path / "object.tar"
    source.write_bytes(b"x")
    store.put_object(SIG, source)
    store.put_key("k", SIG)
    assert (tmp_path / "objects" / "ab" / SIG).is_file()
    assert (tmp_path / "keys" / "k").read_text() == SIG


def test_http_store_uses_bucket_paths():
    bucket: dict[str, bytes] = {}
    store = HttpStore("http://store.test/landseer/", transport=bucket_transport(bucket))
    store.put_key("k", SIG)
    assert bucket == {"/landseer/keys/k": SIG.encode()}


def test_http_errors_surface():
    failing = httpx.MockTransport(lambda request: httpx.Response(500))
    store = HttpStore("http://store.test/landseer", transport=failing)
    with pytest.raises(httpx.HTTPStatusError):
        store.has_object(SIG)


def test_open_store_picks_implementation(tmp_path):
    assert isinstance(open_store(str(tmp_path)), FilesystemStore)
    remote = open_store("https://minio.example/landseer")
    assert isinstance(remote, HttpStore)
    remote.close()
