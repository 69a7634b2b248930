"""
Two-Level Artifact Cache

A per-worker local tier (unpacked trees, byte-capacity LRU) in front of the
shared write-once store. Artifacts are addressed by the signature of their
file tree; cache keys map (tool@version, config digest, input signatures)
to the signature a task produced.
"""

import hashlib
import logging
import os
import shutil
import tarfile
import tempfile
import threading
from collections import Counter, OrderedDict
from contextlib import contextmanager
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Optional, Sequence

from .errors import ArtifactError, CacheFullError, IntegrityError
from .store import ObjectStore

logger = logging.getLogger(__name__)

EMPTY_TREE_SIGNATURE = hashlib.sha256(b"").hexdigest()


def _files(root: Path) -> list[tuple[str, Path]]:
    entries = []
    for dirpath, _, filenames in os.walk(root):
        for name in filenames:
            path = Path(dirpath) / name
            entries.append((path.relative_to(root).as_posix(), path))
    return sorted(entries)


def _file_digest(f):
    # hashlib.file_digest is Python 3.11+; same SHA-256 result on older versions
    if hasattr(hashlib, "file_digest"):
        return hashlib.file_digest(f, "sha256")
    h = hashlib.sha256()
    for chunk in iter(lambda: f.read(1 << 16), b""):
        h.update(chunk)
    return h


def tree_signature(root: Path) -> str:
    """
    SHA-256 over the sorted (relative path, length, content digest) entries.

    Independent of the tree's location, creation order and timestamps. An
    empty directory yields EMPTY_TREE_SIGNATURE.

    Raises:
        ArtifactError: The directory is missing or a file is unreadable
    """
    root = Path(root)
    if not root.is_dir():
        raise ArtifactError(f"artifact directory not found: {root}")
    digest = hashlib.sha256()
    for relative, path in _files(root):
        try:
            with open(path, "rb") as f:
                content = _file_digest(f).hexdigest()
            size = path.stat().st_size
        except OSError as e:
            raise ArtifactError(f"cannot read {path}: {e}") from None
        digest.update(f"{relative}\0{size}\0{content}\n".encode("utf-8"))
    return digest.hexdigest()


def tree_size(root: Path) -> int:
    return sum(path.stat().st_size for _, path in _files(root))


def cache_key(tool_ref: str, config_digest: str, inputs: Sequence[str]) -> str:
    """Pure function of tool@version, parameter digest and ordered input signatures."""
    payload = "\n".join([tool_ref, config_digest, *inputs])
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def pack_tree(root: Path, dest: Path) -> None:
    """Deterministic tar: sorted entries, zeroed owners and timestamps."""
    with tarfile.open(dest, "w") as tar:
        for relative, path in _files(root):
            info = tar.gettarinfo(str(path), arcname=relative)
            info.mtime = 0
            info.uid = info.gid = 0
            info.uname = info.gname = ""
            with open(path, "rb") as f:
                tar.addfile(info, f)


def unpack_tree(archive: Path, dest: Path) -> None:
    dest.mkdir(parents=True, exist_ok=True)
    with tarfile.open(archive, "r") as tar:
        tar.extractall(dest, filter="data")


@dataclass(frozen=True)
class LineageRecord:
    """How an artifact was produced."""
    signature: str
    task_id: str
    parents: tuple[str, ...]
    tool: str
    created_at: str = ""

    def to_dict(self) -> dict:
        return {
            "signature": self.signature,
            "task_id": self.task_id,
            "parents": list(self.parents),
            "tool": self.tool,
            "created_at": self.created_at,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "LineageRecord":
        return cls(data["signature"], data["task_id"], tuple(data["parents"]), data["tool"], data.get("created_at", ""))


class LruIndex:
    """
    Recency-ordered index with pins.

    Capacity is measured in bytes, or in entries when by_entries is set.
    """

    def __init__(self, capacity: int, by_entries: bool = False):
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        self.capacity = capacity
        self.by_entries = by_entries
        self._entries: OrderedDict[str, int] = OrderedDict()
        self._pins: Counter = Counter()

    def __contains__(self, signature: str) -> bool:
        return signature in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def weight(self, size: int) -> int:
        return 1 if self.by_entries else size

    @property
    def usage(self) -> int:
        return sum(self.weight(size) for size in self._entries.values())

    def order(self) -> list[str]:
        """Signatures from least to most recently used."""
        return list(self._entries)

    def add(self, signature: str, size: int) -> None:
        self._entries[signature] = size
        self._entries.move_to_end(signature)

    def touch(self, signature: str) -> None:
        self._entries.move_to_end(signature)

    def remove(self, signature: str) -> None:
        self._entries.pop(signature, None)

    def pin(self, signature: str) -> None:
        self._pins[signature] += 1

    def unpin(self, signature: str) -> None:
        self._pins[signature] -= 1
        if self._pins[signature] <= 0:
            del self._pins[signature]

    def is_pinned(self, signature: str) -> bool:
        return self._pins[signature] > 0

    def victims(self, needed: int) -> list[str]:
        """
        Least-recently-used unpinned entries to drop so usage + needed <= capacity.

        Raises:
            CacheFullError: Even evicting every unpinned entry is not enough
        """
        usage = self.usage
        victims = []
        for signature, size in self._entries.items():
            if usage + needed <= self.capacity:
                break
            if self.is_pinned(signature):
                continue
            victims.append(signature)
            usage -= self.weight(size)
        if usage + needed > self.capacity:
            pinned = sum(1 for s in self._entries if self.is_pinned(s))
            raise CacheFullError(f"cannot free {needed} (usage {self.usage} of {self.capacity}, "
                                 f"{len(self._entries)} entries, {pinned} pinned)")
        return victims

    def evict(self, needed: int) -> list[str]:
        victims = self.victims(needed)
        for signature in victims:
            self.remove(signature)
        return victims


class LocalCache:
    """Per-worker local tier: objects/<signature>/ trees plus keys/<cachekey>."""

    def __init__(self, root: Path, capacity_bytes: int, by_entries: bool = False):
        self.root = Path(root)
        self.objects_dir = self.root / "objects"
        self.keys_dir = self.root / "keys"
        self.objects_dir.mkdir(parents=True, exist_ok=True)
        self.keys_dir.mkdir(parents=True, exist_ok=True)
        self.index = LruIndex(capacity_bytes, by_entries)
        self._keys: dict[str, str] = {}
        self._lock = threading.RLock()
        self._load()

    def _load(self) -> None:
        existing = [p for p in self.objects_dir.iterdir() if p.is_dir() and not p.name.startswith(".")]
        for path in sorted(existing, key=lambda p: (p.stat().st_mtime, p.name)):
            self.index.add(path.name, tree_size(path))
        for path in self.keys_dir.iterdir():
            if path.is_file():
                self._keys[path.name] = path.read_text(encoding="utf-8").strip()

    def path(self, signature: str) -> Path:
        return self.objects_dir / signature

    def has(self, signature: str) -> bool:
        with self._lock:
            return signature in self.index and self.path(signature).is_dir()

    def signature_for(self, key: str) -> Optional[str]:
        with self._lock:
            return self._keys.get(key)

    def record_key(self, key: str, signature: str) -> None:
        with self._lock:
            self._keys[key] = signature
            (self.keys_dir / key).write_text(signature, encoding="utf-8")

    def touch(self, signature: str) -> None:
        with self._lock:
            self.index.touch(signature)
            os.utime(self.path(signature))

    def pin(self, signature: str) -> None:
        with self._lock:
            self.index.pin(signature)

    def unpin(self, signature: str) -> None:
        with self._lock:
            self.index.unpin(signature)

    def evict_lru(self, needed: int) -> list[str]:
        """
        Evict least-recently-used entries until usage + needed fits.

        Returns:
            list[str]: Evicted signatures, oldest first

        Raises:
            CacheFullError: Pinned entries leave too little room
        """
        with self._lock:
            evicted = self.index.evict(needed)
            for signature in evicted:
                shutil.rmtree(self.path(signature), ignore_errors=True)
        if evicted:
            logger.debug("Evicted %d local entries", len(evicted))
        return evicted

    def purge(self, signature: str) -> None:
        with self._lock:
            self.index.remove(signature)
            shutil.rmtree(self.path(signature), ignore_errors=True)

    def admit(self, signature: str, source: Path, move: bool = False) -> Path:
        """Add a tree under its signature, evicting as needed."""
        with self._lock:
            target = self.path(signature)
            if self.has(signature):
                self.touch(signature)
                return target
            size = tree_size(source)
            self.evict_lru(self.index.weight(size))
            staging = self.objects_dir / f".{signature}.{os.getpid()}.{threading.get_ident()}"
            shutil.rmtree(staging, ignore_errors=True)
            if move:
                shutil.move(str(source), staging)
            else:
                shutil.copytree(source, staging)
            shutil.rmtree(target, ignore_errors=True)
            staging.rename(target)
            self.index.add(signature, size)
            return target


@dataclass(frozen=True)
class CacheHit:
    key: str
    signature: str
    path: Path
    tier: str


class TwoLevelCache:
    """Local tier first, then the shared store; shared hits are promoted."""

    def __init__(self, local: LocalCache, shared: ObjectStore):
        self.local = local
        self.shared = shared
        self.stats: Counter = Counter()

    def _fetch(self, signature: str) -> Optional[Path]:
        """
        Pull an object from the shared store into the local tier, verifying it.

        An object that cannot be unpacked or does not match its signature is
        deleted from the shared store and reported as a miss, so the next
        producer can publish it again.
        """
        if not self.shared.has_object(signature):
            return None
        with tempfile.TemporaryDirectory(dir=self.local.root, prefix=".fetch-") as tmp:
            archive = Path(tmp) / "object.tar"
            tree = Path(tmp) / "tree"
            try:
                self.shared.get_object(signature, archive)
                unpack_tree(archive, tree)
                actual = tree_signature(tree)
            except (tarfile.TarError, OSError, ArtifactError) as e:
                logger.warning("Shared object %s is unreadable (%s); purging and treating as miss",
                               signature[:12], e)
                self.shared.delete_object(signature)
                return None
            if actual != signature:
                logger.warning("Shared object %s is corrupted (reads as %s); purging and treating as miss",
                               signature[:12], actual[:12])
                self.shared.delete_object(signature)
                return None
            return self.local.admit(signature, tree, move=True)

    def lookup(self, key: str) -> Optional[CacheHit]:
        """
        Resolve a cache key, local tier first.

        A local entry whose content no longer matches its signature is purged
        and the shared tier is consulted.
        """
        signature = self.local.signature_for(key)
        if signature and self.local.has(signature):
            path = self.local.path(signature)
            with self.pinned([signature]):
                intact = tree_signature(path) == signature
            if intact:
                self.local.touch(signature)
                self.stats["local"] += 1
                return CacheHit(key, signature, path, "local")
            logger.warning("Local cache entry %s is corrupted; purging", signature[:12])
            self.local.purge(signature)

        signature = self.shared.get_key(key)
        if signature:
            try:
                path = self._fetch(signature)
            except CacheFullError as e:
                logger.warning("Cannot promote %s to the local tier: %s", signature[:12], e)
                path = None
            if path is not None:
                self.local.record_key(key, signature)
                self.stats["shared"] += 1
                return CacheHit(key, signature, path, "shared")

        self.stats["miss"] += 1
        return None

    def insert(self, key: str, tree: Path, lineage: LineageRecord) -> str:
        """
        Publish a finished output tree under a cache key.

        Returns:
            str: The artifact signature

        Raises:
            IntegrityError: The key already maps to a different signature
        """
        signature = tree_signature(tree)
        if lineage.signature and lineage.signature != signature:
            raise ArtifactError(f"lineage names {lineage.signature[:12]} but tree is {signature[:12]}")
        record = replace(lineage, signature=signature,
                         created_at=lineage.created_at or datetime.now(timezone.utc).isoformat())

        with tempfile.TemporaryDirectory(dir=self.local.root, prefix=".pack-") as tmp:
            archive = Path(tmp) / "object.tar"
            pack_tree(tree, archive)
            self.shared.put_object(signature, archive)
        try:
            self.shared.put_key(key, signature)
        except IntegrityError as e:
            raise IntegrityError(f"{record.tool}: {e}; the tool is nondeterministic") from None
        self.shared.put_lineage(signature, record.to_dict())

        try:
            self.local.admit(signature, tree)
        except CacheFullError as e:
            # already published; consumers fetch it from the shared tier
            logger.warning("Not caching %s locally: %s", signature[:12], e)
            return signature
        self.local.record_key(key, signature)
        return signature

    def ensure_local(self, signature: str) -> Path:
        """
        Local path of an artifact, fetching it from the shared store if evicted.

        Raises:
            ArtifactError: Missing from both tiers
        """
        if self.local.has(signature):
            self.local.touch(signature)
            return self.local.path(signature)
        path = self._fetch(signature)
        if path is None:
            raise ArtifactError(f"artifact {signature[:12]} missing from local cache and shared store")
        logger.debug("Fetched %s from shared store", signature[:12])
        return path

    def materialize(self, signature: str, dest: Path) -> Path:
        """Copy an artifact tree to dest."""
        with self.pinned([signature]):
            source = self.ensure_local(signature)
            shutil.copytree(source, dest, dirs_exist_ok=True)
        return dest

    @contextmanager
    def pinned(self, signatures: Iterable[str]) -> Iterator[None]:
        held = [s for s in signatures if s]
        for signature in held:
            self.local.pin(signature)
        try:
            yield
        finally:
            for signature in held:
                self.local.unpin(signature)

    def evict_lru(self, needed: int) -> list[str]:
        return self.local.evict_lru(needed)

    def lineage(self, signature: str) -> Optional[LineageRecord]:
        data = self.shared.get_lineage(signature)
        return LineageRecord.from_dict(data) if data else None

    def lineage_chain(self, signature: str) -> list[LineageRecord]:
        """Every lineage record reachable from an artifact, depth-first, roots last."""
        chain, seen, stack = [], set(), [signature]
        while stack:
            current = stack.pop()
            if current in seen:
                continue
            seen.add(current)
            record = self.lineage(current)
            if record is None:
                raise ArtifactError(f"no lineage for {current[:12]}")
            chain.append(record)
            stack.extend(record.parents)
        return chain
