"""In-memory byte-addressable file store spread over servers.

Files and directories are both stored as files. A path's metadata lives on
the first server of its placement, found by consistent hashing; data may be
striped round-robin over ``stripe_count`` successive ring servers. Holes read
as zeros.

Reads never take a lock. Metadata updates (size, directory entries) are
serialized per path by a lock on the owning server; ``lock_acquisitions``
counts them.
"""
from __future__ import annotations

import base64
import bisect
import functools
import hashlib
import posixpath
import threading
from dataclasses import dataclass, field

RING_SEED = b"fairio-ring-v1"
DEFAULT_VNODES = 512
DEFAULT_STRIPE_SIZE = 1_000_000  # 1 MB


def hash64(key: str) -> int:
    """64-bit keyed BLAKE2b of ``key``; the key is the published ring seed."""
    return int.from_bytes(hashlib.blake2b(key.encode(), digest_size=8, key=RING_SEED).digest(), "big")


class HashRing:
    def __init__(self, nodes, vnodes=DEFAULT_VNODES):
        self.nodes = tuple(nodes)
        if not self.nodes:
            raise ValueError("ring needs at least one node")
        points = sorted((hash64(f"server-{n}#{i}"), n) for n in self.nodes for i in range(vnodes))
        self._keys = [p for p, _ in points]
        self._owners = [n for _, n in points]

    def successors(self, key: str):
        """Distinct nodes in ring order starting at the owner of ``key``."""
        i = bisect.bisect_right(self._keys, hash64(key)) % len(self._keys)
        seen = []
        for j in range(len(self._keys)):
            n = self._owners[(i + j) % len(self._keys)]
            if n not in seen:
                seen.append(n)
                if len(seen) == len(self.nodes):
                    break
        return seen

    def lookup(self, key: str):
        i = bisect.bisect_right(self._keys, hash64(key)) % len(self._keys)
        return self._owners[i]


@functools.lru_cache(maxsize=64)
def _ring(nodes: tuple) -> HashRing:
    return HashRing(nodes)


def place(path: str, n_servers: int, stripe_count: int = 1, servers=None) -> list[int]:
    """Ordered server ids for ``path``: hash owner first, then successive ring nodes.

    ``servers`` optionally restricts placement to a subset of server ids.
    """
    nodes = tuple(range(n_servers)) if servers is None else tuple(sorted(servers))
    if not 1 <= stripe_count <= len(nodes):
        raise ValueError(f"stripe_count {stripe_count} not in [1, {len(nodes)}]")
    return _ring(nodes).successors(path)[:stripe_count]


def stripe_chunks(stripe_count: int, stripe_size: int, offset: int, length: int):
    """Yield ``(stripe_index, object_offset, logical_offset, n)`` for a byte range (RAID-0 layout)."""
    pos, end = offset, offset + length
    while pos < end:
        stripe_no, within = divmod(pos, stripe_size)
        n = min(stripe_size - within, end - pos)
        yield stripe_no % stripe_count, (stripe_no // stripe_count) * stripe_size + within, pos, n
        pos += n


def bytes_per_server(server_ids, stripe_size, offset, length) -> dict:
    out = {}
    for idx, _, _, n in stripe_chunks(len(server_ids), stripe_size, offset, length):
        out[server_ids[idx]] = out.get(server_ids[idx], 0) + n
    return out


class ExtentMap:
    """Non-overlapping written extents of one object."""

    def __init__(self):
        self.starts: list[int] = []
        self.data: dict[int, bytes] = {}

    def end(self):
        if not self.starts:
            return 0
        s = self.starts[-1]
        return s + len(self.data[s])

    def _overlapping(self, lo, hi):
        i = max(bisect.bisect_right(self.starts, lo) - 1, 0)
        out = []
        while i < len(self.starts) and self.starts[i] < hi:
            s = self.starts[i]
            if s + len(self.data[s]) > lo:
                out.append(s)
            i += 1
        return out

    def write(self, offset, data: bytes):
        if not data:
            return
        end = offset + len(data)
        for s in self._overlapping(offset, end):
            b = self.data.pop(s)
            self.starts.remove(s)
            if s < offset:
                self._insert(s, b[: offset - s])
            if s + len(b) > end:
                self._insert(end, b[end - s:])
        self._insert(offset, bytes(data))

    def _insert(self, s, b):
        bisect.insort(self.starts, s)
        self.data[s] = b

    def read(self, offset, length) -> bytes:
        buf = bytearray(length)
        self.read_into(memoryview(buf), offset)
        return bytes(buf)

    def read_into(self, out: memoryview, offset):
        """Copy extents covering ``[offset, offset + len(out))`` into ``out``; holes are left alone."""
        length = len(out)
        for s in self._overlapping(offset, offset + length):
            b = self.data[s]
            lo, hi = max(s, offset), min(s + len(b), offset + length)
            out[lo - offset: hi - offset] = memoryview(b)[lo - s: hi - s]

    def extents(self):
        return [(s, self.data[s]) for s in self.starts]


@dataclass
class FileMeta:
    path: str
    size: int = 0
    stripe_count: int = 1
    stripe_size: int = DEFAULT_STRIPE_SIZE
    server_ids: list = field(default_factory=list)
    parent: str = ""
    is_dir: bool = False


class StoreNode:
    def __init__(self, server_id: int):
        self.server_id = server_id
        self.objects: dict[tuple, ExtentMap] = {}
        self.meta: dict[str, FileMeta] = {}
        self.directory: dict[str, set] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()
        self.lock_acquisitions = 0

    def meta_lock(self, path) -> threading.Lock:
        with self._guard:
            self.lock_acquisitions += 1
            return self._locks.setdefault(path, threading.Lock())

    def object(self, path, stripe_index, create=False):
        key = (path, stripe_index)
        obj = self.objects.get(key)
        if obj is None and create:
            obj = self.objects[key] = ExtentMap()
        return obj


class FileStore:
    def __init__(self, n_servers=1, prefix="/fs", stripe_size=DEFAULT_STRIPE_SIZE, stripe_count=1):
        if not 1 <= stripe_count <= n_servers:
            raise ValueError("stripe_count must be in [1, n_servers]")
        self.n_servers = n_servers
        self.prefix = posixpath.normpath(prefix)
        self.stripe_size = stripe_size
        self.default_stripe_count = stripe_count
        self.nodes = [StoreNode(i) for i in range(n_servers)]
        root = FileMeta(self.prefix, stripe_count=1, stripe_size=stripe_size,
                        server_ids=place(self.prefix, n_servers), parent="", is_dir=True)
        self._owner(self.prefix).meta[self.prefix] = root
        self._owner(self.prefix).directory[self.prefix] = set()

    # -- helpers

    def normalize(self, path: str) -> str:
        p = posixpath.normpath(path)
        if not p.startswith("/"):
            p = posixpath.join(self.prefix, p)
        if p != self.prefix and not p.startswith(self.prefix + "/"):
            raise ValueError(f"{path!r} is outside the store namespace {self.prefix!r}")
        return p

    def _owner(self, path) -> StoreNode:
        return self.nodes[place(path, self.n_servers)[0]]

    def _meta(self, path) -> FileMeta:
        meta = self._owner(path).meta.get(path)
        if meta is None:
            raise FileNotFoundError(path)
        return meta

    def _file(self, path) -> FileMeta:
        meta = self._meta(path)
        if meta.is_dir:
            raise IsADirectoryError(path)
        return meta

    def lock_acquisitions(self):
        return sum(n.lock_acquisitions for n in self.nodes)

    # -- namespace

    def _create(self, path, is_dir, stripe_count=None, exist_ok=False):
        path = self.normalize(path)
        if path == self.prefix:
            raise FileExistsError(path)
        parent, name = posixpath.split(path)
        pmeta = self._owner(parent).meta.get(parent)
        if pmeta is None:
            raise FileNotFoundError(f"parent directory {parent} does not exist")
        if not pmeta.is_dir:
            raise NotADirectoryError(parent)
        owner = self._owner(path)
        existing = owner.meta.get(path)
        if existing is not None:
            if exist_ok and existing.is_dir == is_dir:
                return existing
            raise FileExistsError(path)
        count = 1 if is_dir else (stripe_count or self.default_stripe_count)
        meta = FileMeta(path, 0, count, self.stripe_size, place(path, self.n_servers, count), parent, is_dir)
        with owner.meta_lock(path):
            owner.meta[path] = meta
            if is_dir:
                owner.directory[path] = set()
        pnode = self._owner(parent)
        with pnode.meta_lock(parent):
            pnode.directory[parent].add(name)
        return meta

    def create(self, path, stripe_count=None, exist_ok=False) -> FileMeta:
        return self._create(path, False, stripe_count, exist_ok)

    def mkdir(self, path, exist_ok=False) -> FileMeta:
        return self._create(path, True, exist_ok=exist_ok)

    def makedirs(self, path):
        path = self.normalize(path)
        parts = path[len(self.prefix):].strip("/").split("/")
        cur = self.prefix
        for part in filter(None, parts):
            cur = posixpath.join(cur, part)
            self.mkdir(cur, exist_ok=True)

    def stat(self, path) -> dict:
        meta = self._meta(self.normalize(path))
        return {"path": meta.path, "size": meta.size, "type": "dir" if meta.is_dir else "file",
                "stripe_count": meta.stripe_count, "server_ids": list(meta.server_ids)}

    def readdir(self, path) -> list[str]:
        path = self.normalize(path)
        meta = self._meta(path)
        if not meta.is_dir:
            raise NotADirectoryError(path)
        return sorted(self._owner(path).directory[path])

    def exists(self, path) -> bool:
        path = self.normalize(path)
        return path in self._owner(path).meta

    # -- data

    def write_range(self, path, offset, data: bytes) -> int:
        if offset < 0:
            raise ValueError("negative offset")
        path = self.normalize(path)
        meta = self._file(path)
        view = memoryview(data)
        for idx, obj_off, logical, n in stripe_chunks(meta.stripe_count, meta.stripe_size, offset, len(data)):
            node = self.nodes[meta.server_ids[idx]]
            node.object(path, idx, create=True).write(obj_off, view[logical - offset: logical - offset + n])
        if data:
            owner = self._owner(path)
            with owner.meta_lock(path):
                meta.size = max(meta.size, offset + len(data))
        return len(data)

    def read_range(self, path, offset, length) -> bytes:
        if offset < 0 or length < 0:
            raise ValueError("negative offset or length")
        path = self.normalize(path)
        meta = self._file(path)
        length = max(min(length, meta.size - offset), 0)
        out = bytearray(length)
        view = memoryview(out)
        for idx, obj_off, logical, n in stripe_chunks(meta.stripe_count, meta.stripe_size, offset, length):
            obj = self.nodes[meta.server_ids[idx]].object(path, idx)
            if obj is not None:
                obj.read_into(view[logical - offset: logical - offset + n], obj_off)
        return bytes(out)

    def metadata_query(self, kind, path, **kw):
        if kind == "stat":
            return self.stat(path)
        if kind == "readdir":
            return self.readdir(path)
        if kind == "create":
            return self.create(path, **kw)
        if kind == "mkdir":
            return self.mkdir(path, **kw)
        raise ValueError(f"unknown metadata query {kind!r}")

    # -- manifest

    def dump_manifest(self) -> dict:
        metas = sorted((m for n in self.nodes for m in n.meta.values()), key=lambda m: m.path)
        objects = []
        for n in self.nodes:
            for (path, idx), ext in sorted(n.objects.items()):
                objects.append({"server": n.server_id, "path": path, "stripe": idx,
                                "extents": [[s, base64.b64encode(b).decode()] for s, b in ext.extents()]})
        return {
            "version": 1,
            "prefix": self.prefix,
            "n_servers": self.n_servers,
            "stripe_size": self.stripe_size,
            "stripe_count": self.default_stripe_count,
            "entries": [{"path": m.path, "type": "dir" if m.is_dir else "file", "size": m.size,
                         "stripe_count": m.stripe_count, "server_ids": list(m.server_ids)} for m in metas],
            "objects": objects,
        }

    @classmethod
    def load_manifest(cls, doc: dict) -> "FileStore":
        if doc.get("version") != 1:
            raise ValueError(f"unsupported manifest version {doc.get('version')!r}")
        store = cls(doc["n_servers"], doc["prefix"], doc["stripe_size"], doc["stripe_count"])
        for e in doc["entries"]:
            if e["path"] == store.prefix:
                continue
            if e["type"] == "dir":
                store.mkdir(e["path"])
            else:
                meta = store.create(e["path"], stripe_count=e["stripe_count"])
                meta.size = e["size"]
                if meta.server_ids != e["server_ids"]:
                    raise ValueError(f"{e['path']}: placement differs from the manifest")
        for o in doc["objects"]:
            obj = store.nodes[o["server"]].object(o["path"], o["stripe"], create=True)
            for s, b64 in o["extents"]:
                obj.write(s, base64.b64decode(b64))
        return store


def write_range(store: FileStore, path, offset, data: bytes) -> int:
    return store.write_range(path, offset, data)


def read_range(store: FileStore, path, offset, length) -> bytes:
    return store.read_range(path, offset, length)


def metadata_query(store: FileStore, kind, path, **kw):
    return store.metadata_query(kind, path, **kw)
