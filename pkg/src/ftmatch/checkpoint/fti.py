"""Application-level multi-level checkpointing in the style of FTI.

A rank program uses it the way an FTI code would::

    fti = system.init(ctx)
    fti.protect(0, x, "x")
    status = yield from fti.status()
    if status.restart:
        start = fti.recover()
    ...
    yield from fti.checkpoint(iteration)
"""

import json
from dataclasses import dataclass

from ..simcore import LAND
from .rs import ReedSolomon, TooManyErasures
from .store import (CheckpointMeta, CheckpointStore, CorruptCheckpoint, Level, StoreError,
                    crc, deserialize, partner, serialize)


class CheckpointError(Exception):
    pass


class DuplicateId(CheckpointError):
    pass


class CheckpointFailed(CheckpointError):
    pass


class Unrecoverable(CheckpointError):
    pass


@dataclass(frozen=True)
class Status:
    version: int = None

    @property
    def restart(self):
        return self.version is not None

    def __str__(self):
        return "FreshStart" if self.version is None else f"Restart({self.version})"


FRESH_START = Status()


class ProtectedObject:
    def __init__(self, oid, obj, name=None):
        view = memoryview(obj)
        if not view.contiguous:
            raise TypeError("protected objects must be contiguous buffers")
        if view.readonly:
            raise TypeError("protected objects must be writable")
        self.id = oid
        self.name = name or f"obj{oid}"
        if any(c.isspace() for c in self.name):
            raise ValueError("object names may not contain whitespace")
        self.obj = obj
        self.view = view.cast("B")

    @property
    def length(self):
        return self.view.nbytes

    def snapshot(self):
        return self.view.tobytes()

    def restore(self, data):
        if len(data) != self.length:
            raise Unrecoverable(
                f"object {self.id} ({self.name}) is {self.length} bytes, checkpoint holds {len(data)}")
        self.view[:] = data


class FTI:
    """Checkpoint service shared by all ranks of one world."""

    def __init__(self, root, level=Level.L1, group_size=4):
        self.store = CheckpointStore(root, group_size)
        self.level = Level(level)
        self._handles = {}

    def init(self, ctx):
        """Per-rank handle; survivors keep their version counter across re-entry."""
        handle = self._handles.get(ctx.slot)
        survivor = getattr(ctx.state, "name", None) == "RESTARTED_SURVIVOR"
        if handle is None or not survivor or handle.proc is not ctx.proc:
            handle = FTIRank(self, ctx)
            self._handles[ctx.slot] = handle
        else:
            handle.ctx = ctx
            handle.objects = {}
        return handle


class FTIRank:
    def __init__(self, system, ctx):
        self.system = system
        self.store = system.store
        self.ctx = ctx
        self.proc = ctx.proc
        self.objects = {}
        self.version = 0
        self.restart_version = None
        self.commits = 0

    @property
    def rank(self):
        return self.ctx.rank

    @property
    def nranks(self):
        return self.ctx.size

    def protect(self, oid, obj, name=None):
        if oid in self.objects:
            raise DuplicateId(f"object id {oid} already protected on rank {self.rank}")
        self.objects[oid] = ProtectedObject(oid, obj, name)

    @property
    def total_bytes(self):
        return sum(o.length for o in self.objects.values())

    # --- write path ---

    def _meta(self, version, iteration, level, payload):
        n = self.nranks
        gid = self.store.group_of(self.rank, n)[0] if level is Level.L3 else None
        return CheckpointMeta(
            version, iteration, level, self.rank,
            [(o.id, o.name, o.length, crc(o.view)) for o in self.objects.values()],
            len(payload), crc(payload),
            partner(self.rank, n) if level is Level.L2 else None, gid)

    def checkpoint(self, iteration, level=None):
        """Collective: write version ``self.version + 1`` at every live rank."""
        if not self.objects:
            raise CheckpointError("nothing protected")
        level = Level(level or self.system.level)
        ctx, store = self.ctx, self.store
        rank, n = self.rank, self.nranks
        version = self.version + 1
        payload = serialize((o.id, o.view) for o in self.objects.values())
        meta = self._meta(version, iteration, level, payload)
        ok = True
        with ctx.accounting("ckpt_write"):
            try:
                store.write_copy(store.local_dir(level, rank), str(version), payload, meta, rank)
                if level is Level.L2:
                    store.write_copy(store.local_dir(Level.L2, partner(rank, n)),
                                     f"{version}.from{rank}", payload, meta, rank)
                if level is Level.L4:
                    store.write_copy(store.global_dir(rank), str(version), payload, meta, rank)
            except StoreError as exc:
                ok = False
                ctx.log("ckpt_io_error", str(exc))
            if level is Level.L3:
                shards = yield from ctx.comm.allgather(payload if ok else None)
                ok = self._write_parity(version, iteration, shards) and ok
            ctx.charge(ctx.cost.get("ckpt_write_per_byte", level.value) * self.total_bytes)
            all_ok = yield from ctx.comm.allreduce(ok, LAND)
        if not all_ok:
            store.remove_version(rank, n, version)
            raise CheckpointFailed(f"checkpoint version {version} failed")
        self.version = version
        self.commits += 1
        store.remove_version(rank, n, version, keep_newer=True)
        ctx.log("checkpoint", f"v={version} iter={iteration} level={level.value} "
                              f"bytes={self.total_bytes}")
        return meta

    def _write_parity(self, version, iteration, shards):
        store = self.store
        gid, members = store.group_of(self.rank, self.nranks)
        if members[0] != self.rank:
            return True
        data = [shards[m] for m in members]
        if any(d is None for d in data):
            return False
        width = max(len(d) for d in data)
        padded = [d.ljust(width, b"\0") for d in data]
        code = ReedSolomon(len(members))
        table = {"version": version, "iteration": iteration, "members": members,
                 "width": width, "parity": code.m,
                 "lengths": [len(d) for d in data], "crcs": [crc(d) for d in data]}
        try:
            for j, blk in enumerate(code.encode(padded)):
                store.write(store.group_dir(gid) / f"{version}.parity{j}", blk, self.rank)
            store.write(store.group_dir(gid) / f"{version}.meta", json.dumps(table), self.rank)
        except StoreError as exc:
            self.ctx.log("ckpt_io_error", str(exc))
            return False
        return True

    # --- read path ---

    def _load(self, version, rank=None):
        """``(meta, payload)`` for ``rank``'s copy of ``version`` via any surviving level."""
        store = self.store
        rank = self.rank if rank is None else rank
        n = self.nranks
        for lv in Level:
            try:
                got = store.read_copy(store.local_dir(lv, rank), str(version))
            except CorruptCheckpoint as exc:
                self.ctx.log("ckpt_corrupt", f"v={version} level={lv.value} {exc}")
                continue
            if got is not None:
                return got
        attempts = [
            lambda: store.read_copy(store.local_dir(Level.L2, partner(rank, n)),
                                    f"{version}.from{rank}"),
            lambda: self._decode_group(version, rank),
            lambda: store.read_copy(store.global_dir(rank), str(version)),
        ]
        for attempt in attempts:
            try:
                got = attempt()
            except (CorruptCheckpoint, TooManyErasures) as exc:
                self.ctx.log("ckpt_corrupt", f"v={version} {exc}")
                continue
            if got is not None:
                return got
        return None

    def _decode_group(self, version, rank):
        store = self.store
        gid, members = store.group_of(rank, self.nranks)
        raw = store.read_bytes(store.group_dir(gid) / f"{version}.meta")
        if raw is None:
            return None
        table = json.loads(raw)
        if table["members"] != members:
            raise CorruptCheckpoint("encoding group changed")
        width, k = table["width"], len(members)
        shards = {}
        for i, m in enumerate(members):
            payload = store.read_bytes(store.local_dir(Level.L3, m) / f"{version}.ckpt")
            if payload is not None and len(payload) == table["lengths"][i] \
                    and crc(payload) == table["crcs"][i]:
                shards[i] = payload.ljust(width, b"\0")
        for j in range(table["parity"]):
            blk = store.read_bytes(store.group_dir(gid) / f"{version}.parity{j}")
            if blk is not None and len(blk) == width:
                shards[k + j] = blk
        data = ReedSolomon(k, table["parity"]).decode(shards)
        idx = members.index(rank)
        payload = data[idx][:table["lengths"][idx]]
        if crc(payload) != table["crcs"][idx]:
            raise CorruptCheckpoint("decoded shard digest mismatch")
        objs = deserialize(payload)
        # the local meta went with the node; rebuild the parts recovery needs
        rank_meta = CheckpointMeta(version, table["iteration"], Level.L3, rank,
                                   [(oid, f"obj{oid}", len(d), crc(d)) for oid, d in objs],
                                   len(payload), crc(payload), None, gid)
        return rank_meta, payload

    def recoverable_versions(self):
        out = {}
        for v in sorted(self.store.versions_present(self.rank, self.nranks)):
            got = self._load(v)
            if got is not None:
                out[v] = got[0].iteration
        return out

    def status(self):
        """Collective: the newest version every rank can restore, if any."""
        avail = self.recoverable_versions()
        seen = max(self.store.versions_present(self.rank, self.nranks), default=0)

        def combine(a, b):
            return (a[0] & b[0], max(a[1], b[1]))

        common, newest = yield from self.ctx.comm.allreduce(
            (frozenset(avail), max(seen, self.version)), combine)
        self.version = newest
        self.restart_version = max(common) if common else None
        st = Status(self.restart_version)
        self.ctx.log("ckpt_status", str(st))
        return st

    def recover(self):
        """Restore every protected object from the agreed version; returns its iteration."""
        version = self.restart_version
        if version is None:
            raise Unrecoverable(f"rank {self.rank}: status found no common checkpoint")
        got = self._load(version)
        if got is None:
            raise Unrecoverable(f"rank {self.rank}: no level can reconstruct version {version}")
        meta, payload = got
        data = dict(deserialize(payload))
        if set(data) != set(self.objects):
            raise Unrecoverable(f"rank {self.rank}: protected ids {sorted(self.objects)} "
                                f"do not match checkpoint ids {sorted(data)}")
        for oid, obj in self.objects.items():
            obj.restore(data[oid])
        self.ctx.charge(self.ctx.cost.get("ckpt_read_per_byte") * self.total_bytes,
                        category="ckpt_read")
        self.ctx.log("recover", f"v={version} iter={meta.iteration}")
        return meta.iteration
