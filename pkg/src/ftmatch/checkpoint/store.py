"""On-disk checkpoint layout and serialization.

Layout under ``root``::

    <level>/<rank>/<version>.ckpt|.meta          rank-local copy (every level)
    L2/<partner>/<version>.from<rank>.ckpt|.meta partner replica
    L3/group<g>/<version>.parity<j>|.meta        erasure-coded group parity
    global/<rank>/<version>.ckpt|.meta           parallel-file-system copy (L4)
"""

import enum
import os
import re
import shutil
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

HEADER = struct.Struct("<IQI")  # object id, byte length, crc32


class Level(str, enum.Enum):
    L1 = "L1"
    L2 = "L2"
    L3 = "L3"
    L4 = "L4"


class StoreError(OSError):
    """A checkpoint write could not be completed (I/O failure, store full)."""


class CorruptCheckpoint(ValueError):
    pass


def crc(data):
    return zlib.crc32(data) & 0xFFFFFFFF


def serialize(objects):
    """``objects`` is an iterable of ``(id, bytes-like)``."""
    parts = []
    for oid, data in objects:
        data = bytes(data)
        parts.append(HEADER.pack(oid, len(data), crc(data)))
        parts.append(data)
    return b"".join(parts)


def deserialize(blob):
    out = []
    pos = 0
    while pos < len(blob):
        if pos + HEADER.size > len(blob):
            raise CorruptCheckpoint("truncated object header")
        oid, length, digest = HEADER.unpack_from(blob, pos)
        pos += HEADER.size
        data = blob[pos:pos + length]
        if len(data) != length:
            raise CorruptCheckpoint(f"object {oid} truncated")
        if crc(data) != digest:
            raise CorruptCheckpoint(f"object {oid} checksum mismatch")
        out.append((oid, data))
        pos += length
    return out


@dataclass
class CheckpointMeta:
    version: int
    iteration: int
    level: Level
    rank: int
    objects: list = field(default_factory=list)  # (id, name, length, crc32)
    payload_length: int = 0
    payload_crc: int = 0
    partner: int = None
    group: int = None

    @property
    def object_digests(self):
        return {oid: digest for oid, _, _, digest in self.objects}

    @property
    def total_bytes(self):
        return sum(length for _, _, length, _ in self.objects)

    def to_text(self):
        lines = [f"version {self.version}", f"iteration {self.iteration}",
                 f"level {Level(self.level).value}", f"rank {self.rank}",
                 f"partner {'-' if self.partner is None else self.partner}",
                 f"group {'-' if self.group is None else self.group}",
                 f"payload {self.payload_length} {self.payload_crc:08x}",
                 f"objects {len(self.objects)}"]
        lines += [f"object {oid} {name} {length} {digest:08x}"
                  for oid, name, length, digest in self.objects]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = {}
        objects = []
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, rest = line.partition(" ")
            if key == "object":
                oid, name, length, digest = rest.split()
                objects.append((int(oid), name, int(length), int(digest, 16)))
            else:
                kv[key] = rest.strip()
        try:
            plen, pcrc = kv["payload"].split()
            opt = lambda s: None if s == "-" else int(s)  # noqa: E731
            meta = cls(int(kv["version"]), int(kv["iteration"]), Level(kv["level"]),
                       int(kv["rank"]), objects, int(plen), int(pcrc, 16),
                       opt(kv["partner"]), opt(kv["group"]))
        except (KeyError, ValueError) as exc:
            raise CorruptCheckpoint(f"bad meta: {exc}") from exc
        if int(kv["objects"]) != len(objects):
            raise CorruptCheckpoint("object table length mismatch")
        return meta


def groups(n, g):
    """Fixed partition of ranks ``0..n-1`` into consecutive encoding groups."""
    return [list(range(i, min(i + g, n))) for i in range(0, n, g)]


def partner(rank, n):
    return (rank + 1) % n


_VERSION = re.compile(r"^(\d+)\.")


class CheckpointStore:
    def __init__(self, root, group_size=4):
        if group_size < 1:
            raise ValueError("group size must be >= 1")
        self.root = Path(root)
        self.group_size = group_size
        self.failing_ranks = set()

    # --- paths ---

    def local_dir(self, level, rank):
        return self.root / Level(level).value / str(rank)

    def global_dir(self, rank):
        return self.root / "global" / str(rank)

    def group_dir(self, gid):
        return self.root / "L3" / f"group{gid}"

    def group_of(self, rank, n):
        for gid, members in enumerate(groups(n, self.group_size)):
            if rank in members:
                return gid, members
        raise ValueError(f"rank {rank} not in a world of {n}")

    # --- raw I/O ---

    def write(self, path, data, rank):
        if rank in self.failing_ranks:
            raise StoreError(f"injected I/O failure writing {path}")
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        mode = "wb" if isinstance(data, (bytes, bytearray)) else "w"
        with open(tmp, mode) as fh:
            fh.write(data)
        os.replace(tmp, path)

    @staticmethod
    def read_bytes(path):
        try:
            return path.read_bytes()
        except OSError:
            return None

    def write_copy(self, directory, stem, payload, meta, rank):
        self.write(directory / f"{stem}.ckpt", payload, rank)
        self.write(directory / f"{stem}.meta", meta.to_text(), rank)

    def read_copy(self, directory, stem):
        """Load and verify one replica; returns ``(meta, payload)`` or ``None``."""
        meta_raw = self.read_bytes(directory / f"{stem}.meta")
        payload = self.read_bytes(directory / f"{stem}.ckpt")
        if meta_raw is None or payload is None:
            return None
        meta = CheckpointMeta.from_text(meta_raw.decode())
        verify(meta, payload)
        return meta, payload

    def versions_present(self, rank, n):
        """Every version number for which some replica of ``rank`` exists."""
        found = set()

        def scan(d, suffix):
            if not d.is_dir():
                return
            for f in d.iterdir():
                m = _VERSION.match(f.name)
                if m and f.name.endswith(suffix) and (".from" in suffix or ".from" not in f.name):
                    found.add(int(m.group(1)))

        for lv in Level:
            scan(self.local_dir(lv, rank), ".meta")
        scan(self.global_dir(rank), ".meta")
        scan(self.local_dir(Level.L2, partner(rank, n)), f".from{rank}.meta")
        scan(self.group_dir(self.group_of(rank, n)[0]), ".meta")
        return found

    def erase_local(self, rank, levels=None):
        """Lose a rank's node-local storage (all levels unless given)."""
        for lv in levels or list(Level):
            shutil.rmtree(self.local_dir(lv, rank), ignore_errors=True)

    def erase_global(self, rank):
        shutil.rmtree(self.global_dir(rank), ignore_errors=True)

    def remove_version(self, rank, n, version, keep_newer=False):
        """Delete everything ``rank`` wrote for ``version`` (or older, with keep_newer)."""
        def doomed(name):
            m = _VERSION.match(name)
            if not m:
                return False
            v = int(m.group(1))
            return v < version if keep_newer else v == version

        targets = [(self.local_dir(lv, rank), None) for lv in Level]
        targets.append((self.global_dir(rank), None))
        targets.append((self.local_dir(Level.L2, partner(rank, n)), f".from{rank}."))
        gid, members = self.group_of(rank, n)
        if members[0] == rank:
            targets.append((self.group_dir(gid), None))
        for d, must in targets:
            if not d.is_dir():
                continue
            for f in d.iterdir():
                if must is None and ".from" in f.name:
                    continue
                if must is not None and must not in f.name:
                    continue
                if doomed(f.name):
                    f.unlink(missing_ok=True)


def verify(meta, payload):
    if len(payload) != meta.payload_length or crc(payload) != meta.payload_crc:
        raise CorruptCheckpoint(f"payload digest mismatch for version {meta.version}")
    objs = deserialize(payload)
    digests = meta.object_digests
    if [oid for oid, _ in objs] != [oid for oid, *_ in meta.objects]:
        raise CorruptCheckpoint("object table does not match payload")
    for oid, data in objs:
        if crc(data) != digests[oid]:
            raise CorruptCheckpoint(f"object {oid} digest mismatch")
    return objs
