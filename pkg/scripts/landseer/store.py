"""
Shared Artifact Store

Write-once, content-addressed object store shared by all workers. The only
deletion is of an object that no longer verifies against its signature.

Layout (identical for every implementation):

    objects/<first2>/<signature>   artifact tree packed as tar
    keys/<cachekey>                text file holding a signature
    lineage/<signature>.json       LineageRecord

FilesystemStore is the reference implementation. HttpStore speaks plain
HEAD/GET/PUT to a path-style bucket URL using httpx.
"""

import json
import logging
import os
import shutil
import uuid
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Optional

import httpx

from .errors import ArtifactError, IntegrityError

logger = logging.getLogger(__name__)


def object_path(signature: str) -> str:
    return f"objects/{signature[:2]}/{signature}"


def key_path(key: str) -> str:
    return f"keys/{key}"


def lineage_path(signature: str) -> str:
    return f"lineage/{signature}.json"


class ObjectStore(ABC):
    """Object-store interface: put/get/has by address."""

    @abstractmethod
    def has_object(self, signature: str) -> bool: ...

    @abstractmethod
    def put_object(self, signature: str, source: Path) -> None:
        """Publish a packed artifact; a no-op if the signature is already stored."""

    @abstractmethod
    def get_object(self, signature: str, dest: Path) -> None:
        """Download a packed artifact to dest. Raises ArtifactError if absent."""

    @abstractmethod
    def delete_object(self, signature: str) -> None:
        """Drop a stored object that failed verification; a no-op if absent."""

    @abstractmethod
    def get_key(self, key: str) -> Optional[str]: ...

    @abstractmethod
    def put_key(self, key: str, signature: str) -> None:
        """Map a cache key to a signature. Raises IntegrityError on a different existing mapping."""

    @abstractmethod
    def get_lineage(self, signature: str) -> Optional[dict]: ...

    @abstractmethod
    def put_lineage(self, signature: str, record: dict) -> None: ...

    def close(self) -> None:
        pass


def _conflict(key: str, existing: str, signature: str) -> IntegrityError:
    return IntegrityError(f"cache key {key[:12]} already maps to {existing[:12]}, "
                          f"refusing {signature[:12]}")


class FilesystemStore(ObjectStore):
    """Shared store in a local directory; stage-then-link publication."""

    def __init__(self, root: Path):
        self.root = Path(root)
        for sub in ("objects", "keys", "lineage"):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def _publish(self, target: Path, write) -> bool:
        """Write through a temp file; returns False if target already existed."""
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = target.with_name(f".{target.name}.{uuid.uuid4().hex}.tmp")
        try:
            write(tmp)
            try:
                os.link(tmp, target)
            except FileExistsError:
                return False
            return True
        finally:
            tmp.unlink(missing_ok=True)

    def has_object(self, signature: str) -> bool:
        return (self.root / object_path(signature)).is_file()

    def put_object(self, signature: str, source: Path) -> None:
        target = self.root / object_path(signature)
        if target.exists():
            return
        if self._publish(target, lambda tmp: shutil.copyfile(source, tmp)):
            logger.debug("Stored object %s", signature[:12])

    def get_object(self, signature: str, dest: Path) -> None:
        source = self.root / object_path(signature)
        if not source.is_file():
            raise ArtifactError(f"object {signature[:12]} not in shared store")
        shutil.copyfile(source, dest)

    def delete_object(self, signature: str) -> None:
        (self.root / object_path(signature)).unlink(missing_ok=True)
        logger.debug("Deleted object %s", signature[:12])

    def get_key(self, key: str) -> Optional[str]:
        path = self.root / key_path(key)
        if not path.is_file():
            return None
        return path.read_text(encoding="utf-8").strip() or None

    def put_key(self, key: str, signature: str) -> None:
        target = self.root / key_path(key)
        created = self._publish(target, lambda tmp: tmp.write_text(signature, encoding="utf-8"))
        if not created:
            existing = self.get_key(key)
            if existing != signature:
                raise _conflict(key, existing or "", signature)

    def get_lineage(self, signature: str) -> Optional[dict]:
        path = self.root / lineage_path(signature)
        if not path.is_file():
            return None
        return json.loads(path.read_text(encoding="utf-8"))

    def put_lineage(self, signature: str, record: dict) -> None:
        payload = json.dumps(record, indent=2, sort_keys=True) + "\n"
        self._publish(self.root / lineage_path(signature), lambda tmp: tmp.write_text(payload, encoding="utf-8"))


class HttpStore(ObjectStore):
    """
    Shared store behind an S3-compatible path-style bucket URL.

    Args:
        base_url: Bucket URL, e.g. http://minio:9000/landseer
        verify_ssl: Verify TLS certificates
        transport: Optional httpx transport (tests pass httpx.MockTransport)
    """

    def __init__(self, base_url: str, verify_ssl: bool = False,
                 transport: Optional[httpx.BaseTransport] = None, timeout: float = 60.0):
        self.base_url = base_url.rstrip("/")
        self.client = httpx.Client(
            base_url=self.base_url + "/",
            verify=verify_ssl,
            follow_redirects=True,
            timeout=timeout,
            transport=transport,
        )

    def _exists(self, path: str) -> bool:
        response = self.client.head(path)
        if response.status_code == 404:
            return False
        response.raise_for_status()
        return True

    def _get(self, path: str) -> Optional[httpx.Response]:
        response = self.client.get(path)
        if response.status_code == 404:
            return None
        response.raise_for_status()
        return response

    def has_object(self, signature: str) -> bool:
        return self._exists(object_path(signature))

    def put_object(self, signature: str, source: Path) -> None:
        if self.has_object(signature):
            return
        with open(source, "rb") as f:
            response = self.client.put(object_path(signature), content=f.read(),
                                       headers={"Content-Type": "application/x-tar"})
        response.raise_for_status()

    def get_object(self, signature: str, dest: Path) -> None:
        with self.client.stream("GET", object_path(signature)) as response:
            if response.status_code == 404:
                raise ArtifactError(f"object {signature[:12]} not in shared store")
            response.raise_for_status()
            with open(dest, "wb") as f:
                for chunk in response.iter_bytes():
                    f.write(chunk)

    def delete_object(self, signature: str) -> None:
        response = self.client.delete(object_path(signature))
        if response.status_code != 404:
            response.raise_for_status()

    def get_key(self, key: str) -> Optional[str]:
        response = self._get(key_path(key))
        if response is None:
            return None
        return response.text.strip() or None

    def put_key(self, key: str, signature: str) -> None:
        existing = self.get_key(key)
        if existing == signature:
            return
        if existing is not None:
            raise _conflict(key, existing, signature)
        response = self.client.put(key_path(key), content=signature.encode("utf-8"),
                                   headers={"Content-Type": "text/plain"})
        response.raise_for_status()

    def get_lineage(self, signature: str) -> Optional[dict]:
        response = self._get(lineage_path(signature))
        return response.json() if response is not None else None

    def put_lineage(self, signature: str, record: dict) -> None:
        if self._exists(lineage_path(signature)):
            return
        response = self.client.put(lineage_path(signature), json=record)
        response.raise_for_status()

    def close(self) -> None:
        self.client.close()


def open_store(location: str, verify_ssl: bool = False) -> ObjectStore:
    """HttpStore for http(s) URLs, FilesystemStore otherwise."""
    if location.startswith(("http://", "https://")):
        logger.debug("Using HTTP shared store at %s", location)
        return HttpStore(location, verify_ssl=verify_ssl)
    return FilesystemStore(Path(location))
