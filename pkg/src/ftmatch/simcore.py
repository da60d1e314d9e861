"""Deterministic in-process simulation of a message-passing world.

Ranks are generator functions driven by a seeded cooperative scheduler.  A
rank issues communication by yielding request objects, usually through the
helpers on :class:`Communicator`::

    def program(ctx):
        total = yield from ctx.comm.allreduce(ctx.rank, SUM)
        return total

Failures are surfaced only when the world is quiescent (every live rank is
blocked).  Blocked operations resolve in zero virtual time, so this is
observably the same as immediate detection, and it makes every virtual-time
total independent of the order in which runnable ranks are stepped.
"""

import copy
import enum
import math
import operator
import random
from collections import Counter, defaultdict, deque
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from fractions import Fraction

import numpy as np

CATEGORIES = ("app", "ckpt_write", "ckpt_read", "recovery")


class SimError(Exception):
    pass


class CommError(SimError):
    """Base error class for communication failures seen by a rank."""


class PeerFailed(CommError):
    pass


class Revoked(CommError):
    pass


class InvalidRank(CommError):
    pass


class CollectiveMismatch(SimError):
    pass


class Deadlock(SimError):
    pass


class Aborted(SimError):
    """Raised out of :meth:`World.run` when a rank dies on an unhandled error."""

    def __init__(self, slot, error):
        super().__init__(f"rank {slot} aborted: {error!r}")
        self.slot = slot
        self.error = error


class ProcessState(enum.Enum):
    ALIVE = "alive"
    FAILED = "failed"
    RESPAWNED = "respawned"


def _exact(x):
    if isinstance(x, Fraction):
        return x
    if isinstance(x, int):
        return Fraction(x)
    return Fraction(str(x))


@dataclass
class CostModel:
    compute_per_element: float = 1
    msg_latency: float = 100
    msg_per_byte: float = 0.1
    ckpt_write_per_byte: dict = field(
        default_factory=lambda: {"L1": 0.2, "L2": 0.5, "L3": 1.0, "L4": 2.0})
    ckpt_read_per_byte: float = 0.2
    redeploy_cost_per_rank: float = 50000
    ulfm_heartbeat_per_step_per_rank: float = 2
    collective_round_cost: float = 200

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            vals = v.values() if isinstance(v, dict) else [v]
            if any(x < 0 for x in vals):
                raise ValueError(f"cost {f.name} must be non-negative")
        if self.redeploy_cost_per_rank <= 0:
            raise ValueError("redeploy cost must be positive")
        missing = {"L1", "L2", "L3", "L4"} - set(self.ckpt_write_per_byte)
        if missing:
            raise ValueError(f"ckpt_write_per_byte missing levels {sorted(missing)}")

    @classmethod
    def from_dict(cls, overrides=None):
        overrides = dict(overrides or {})
        base = cls()
        if "ckpt_write_per_byte" in overrides:
            merged = dict(base.ckpt_write_per_byte)
            merged.update(overrides["ckpt_write_per_byte"])
            overrides["ckpt_write_per_byte"] = merged
        unknown = set(overrides) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown cost model keys: {sorted(unknown)}")
        return cls(**{**base.__dict__, **overrides})

    def get(self, name, level=None):
        v = getattr(self, name)
        if level is not None:
            v = v[level]
        return _exact(v)

    def redeploy_cost(self, n):
        return self.get("redeploy_cost_per_rank") * n


class VirtualClock:
    """Per-rank virtual time, split by accounting category."""

    def __init__(self):
        self._by_cat = {c: Fraction(0) for c in CATEGORIES}

    def charge(self, category, amount):
        if category not in self._by_cat:
            raise ValueError(f"unknown category {category!r}")
        amount = _exact(amount)
        if amount < 0:
            raise ValueError("charge amount must be non-negative")
        self._by_cat[category] += amount

    def __getitem__(self, category):
        return self._by_cat[category]

    @property
    def total(self):
        return sum(self._by_cat.values(), Fraction(0))

    def as_dict(self):
        return dict(self._by_cat)


def log_rounds(n):
    """Rounds of a tree-shaped collective over ``n`` members."""
    return max(0, math.ceil(math.log2(n))) if n > 1 else 0


# --- reductions -------------------------------------------------------------

SUM = operator.add
MAX = max
MIN = min


def LAND(a, b):
    return bool(a) and bool(b)


class OrderedSum:
    """Correctly rounded sum over every rank's terms, independent of layout.

    Each rank contributes an array of terms; the result equals
    ``math.fsum`` over the global concatenation, so it does not depend on how
    the terms were split across ranks.
    """

    def combine_all(self, values):
        if not values:
            return 0.0
        return math.fsum(np.concatenate([np.ravel(v) for v in values]).tolist())


ORDERED_SUM = OrderedSum()


class Concat:
    def combine_all(self, values):
        return np.concatenate([np.ravel(v) for v in values])


CONCAT = Concat()


def _reduce(op, values):
    if hasattr(op, "combine_all"):
        return op.combine_all(values)
    acc = values[0]
    for v in values[1:]:
        acc = op(acc, v)
    return acc


_IMMUTABLE = (int, float, bool, str, bytes, tuple, frozenset, Fraction, type(None))


def _share(value):
    return value if isinstance(value, _IMMUTABLE) else copy.deepcopy(value)


# --- requests ---------------------------------------------------------------

@dataclass
class Send:
    comm: "Communicator"
    dst: int
    tag: int
    payload: bytes


@dataclass
class Recv:
    comm: "Communicator"
    src: int
    tag: int


@dataclass
class Collective:
    comm: "Communicator"
    kind: str
    value: object = None
    op: object = None


@dataclass
class RevokeReq:
    comm: "Communicator"


@dataclass
class KillSelf:
    reason: str = "kill"


# Collectives that complete once every live member has arrived; all others
# need every member and cannot finish if one of them is dead.
TOLERANT = frozenset({"shrink", "agree"})
ROUNDS = {"barrier": 1, "allreduce": 1, "allgather": 1, "bcast": 1,
          "shrink": 2, "spawn": 1, "merge": 1, "agree": 2, "revoke": 1}


class Communicator:
    """Epoch-versioned membership of processes."""

    def __init__(self, world, cid, members, epoch, slot=0):
        self.world = world
        self.id = cid
        self.members = list(members)
        self.epoch = epoch
        self.slot = slot
        self.revoked = False

    def __repr__(self):
        return (f"Communicator(id={self.id}, epoch={self.epoch}, "
                f"size={self.size}, revoked={self.revoked})")

    @property
    def size(self):
        return len(self.members)

    def rank_of(self, proc):
        return self.members.index(proc)

    def slots(self):
        return [p.slot for p in self.members]

    # generator helpers used from rank programs

    def send(self, dst, payload, tag=0):
        yield Send(self, dst, tag, payload)

    def recv(self, src, tag=0):
        return (yield Recv(self, src, tag))

    def barrier(self):
        yield Collective(self, "barrier")

    def allreduce(self, value, op=SUM):
        return (yield Collective(self, "allreduce", value, op))

    def allgather(self, value):
        return (yield Collective(self, "allgather", value))

    def bcast(self, value, root=0):
        return (yield Collective(self, "bcast", value, root))

    def revoke(self):
        yield RevokeReq(self)

    def shrink(self):
        return (yield Collective(self, "shrink"))

    def spawn_replacements(self, k, entry):
        return (yield Collective(self, "spawn", k, entry))

    def agree(self, flag):
        return (yield Collective(self, "agree", bool(flag)))


class InterComm(Communicator):
    """Survivor group plus freshly spawned processes, awaiting merge."""

    def __init__(self, world, cid, local, remote, epoch):
        super().__init__(world, cid, list(local) + list(remote), epoch)
        self.local = list(local)
        self.remote = list(remote)

    def merge(self):
        return (yield Collective(self, "merge"))


class RankContext:
    """What a rank program sees: its world communicator slots, clock and state."""

    def __init__(self, world, proc, state=None):
        self.world = world
        self.proc = proc
        self.state = state
        self.worldc = [None, None]
        self.worldi = 0
        self.parent = None
        self.category = "app"

    @property
    def comm(self):
        return self.worldc[self.worldi]

    @property
    def rank(self):
        return self.comm.rank_of(self.proc)

    @property
    def size(self):
        return self.comm.size

    @property
    def slot(self):
        return self.proc.slot

    @property
    def cost(self):
        return self.world.cost

    def install_world(self, comm):
        """Swap the two world slots so that ``comm`` becomes current."""
        self.worldi = (self.worldi + 1) % 2
        self.worldc[self.worldi] = comm
        comm.slot = self.worldi

    def charge(self, amount, category=None):
        self.world.charge(self.proc.slot, category or self.category, amount)

    def compute(self, n_elements):
        self.charge(self.world.cost.get("compute_per_element") * int(n_elements))

    @contextmanager
    def accounting(self, category):
        prev, self.category = self.category, category
        try:
            yield
        finally:
            self.category = prev

    def kill_self(self, reason="kill"):
        yield KillSelf(reason)

    def log(self, kind, details=""):
        self.world.log(self.proc.slot, kind, details)


class Process:
    def __init__(self, pid, slot, state):
        self.pid = pid
        self.slot = slot
        self.state = state
        self.gen = None
        self.ctx = None
        self.done = False
        self.result = None
        self.pending = None
        self.send_value = None
        self.throw = None
        self.coll_seq = Counter()

    def __repr__(self):
        return f"Process(pid={self.pid}, slot={self.slot}, {self.state.value})"

    @property
    def alive(self):
        return self.state is not ProcessState.FAILED


class Policy:
    """Failure-handling hooks; the default treats every comm error as fatal."""

    name = "none"

    def entry(self, ctx):
        return (yield from ctx.world.program(ctx))

    def on_step(self, ctx):
        pass

    def on_failure(self, world, failed):
        return False


class _Pending:
    def __init__(self, comm, kind, op):
        self.comm = comm
        self.kind = kind
        self.op = op
        self.arrivals = {}


class World:
    """One simulated job: processes, communicators, clocks and the event log.

    A World is driven by one thread at a time; distinct worlds are independent.
    """

    def __init__(self, n, program, cost_model=None, seed=0, policy=None,
                 log_messages=False):
        if not isinstance(n, int) or n < 1:
            raise ValueError(f"world size must be a positive integer, got {n!r}")
        self.size = n
        self.program = program
        self.cost = cost_model or CostModel()
        self.seed = seed
        self.rng = random.Random(seed)
        self.policy = policy or Policy()
        self.log_messages = log_messages
        self.clocks = [VirtualClock() for _ in range(n)]
        self.events = []
        self.stats = Counter()
        self.hooks = []
        self.services = {}
        self.procs = []
        self.slot_procs = [None] * n
        self.results = [None] * n
        self._next_pid = 0
        self._next_cid = 0
        self._ready = []
        self._mail = defaultdict(deque)
        self._recv_waiting = {}
        self._colls = {}
        self._unhandled = []
        self._running = None
        self._started = False
        procs = [self._new_process(s, ProcessState.ALIVE) for s in range(n)]
        self.world_comm = self.new_comm(procs, epoch=0)
        for p in procs:
            p.ctx.worldc[0] = self.world_comm

    # --- construction helpers used by recovery policies ---

    def _new_process(self, slot, state, ctx_state=None):
        p = Process(self._next_pid, slot, state)
        self._next_pid += 1
        p.ctx = RankContext(self, p, ctx_state)
        self.procs.append(p)
        self.slot_procs[slot] = p
        return p

    def new_comm(self, members, epoch, cls=Communicator, **kw):
        cid = self._next_cid
        self._next_cid += 1
        if cls is InterComm:
            return InterComm(self, cid, kw["local"], kw["remote"], epoch)
        return Communicator(self, cid, members, epoch, kw.get("slot", 0))

    def start(self, proc, entry=None):
        """(Re)start ``proc`` at ``entry`` (default: the policy's entry)."""
        entry = entry or self.policy.entry
        proc.gen = entry(proc.ctx)
        proc.done = False
        proc.pending = None
        proc.send_value = None
        proc.throw = None
        self._ready.append(proc)

    def spawn_process(self, slot, entry, ctx_state=None, state=ProcessState.RESPAWNED):
        p = self._new_process(slot, state, ctx_state)
        self.log(slot, "spawn", f"pid={p.pid}")
        self.start(p, entry)
        return p

    def stop(self, proc):
        """Discard a process's execution (structured unwind)."""
        self._forget_pending(proc)
        if proc in self._ready:
            self._ready.remove(proc)
        if proc.gen is not None and proc is not self._running:
            proc.gen.close()
        proc.gen = None

    def install_world_comm(self, comm):
        self.world_comm = comm

    # --- accounting / logging ---

    def charge(self, slot, category, amount):
        self.clocks[slot].charge(category, amount)

    def total(self, slot):
        return self.clocks[slot].total

    def log(self, slot, kind, details=""):
        t = self.clocks[slot].total if slot is not None else max(c.total for c in self.clocks)
        self.events.append(f"{float(t)!r} {slot if slot is not None else '-'} {kind} {details}".rstrip())

    def dump_events(self, fh):
        for line in self.events:
            fh.write(line + "\n")

    # --- failures ---

    def current(self, slot):
        return self.slot_procs[slot]

    def kill(self, target):
        """Mark a process Failed.  Killing an already failed process is a no-op."""
        proc = target if isinstance(target, Process) else self.slot_procs[target]
        if not proc.alive:
            return
        proc.state = ProcessState.FAILED
        self.stop(proc)
        self.log(proc.slot, "kill", f"pid={proc.pid}")
        self._unhandled.append(proc)
        for key, pend in list(self._colls.items()):
            if proc in pend.comm.members and pend.kind in TOLERANT:
                self._try_complete(key)

    # --- main loop ---

    def run(self):
        if not self._started:
            self._started = True
            for p in self.procs:
                if p.gen is None and p.alive:
                    self.start(p)
        while True:
            if self._ready:
                proc = self._ready.pop(self.rng.randrange(len(self._ready)))
                self._step(proc)
                continue
            if self._quiescent():
                continue
            blocked = [p for p in self.procs if p.alive and not p.done and p.gen is not None]
            if blocked:
                raise Deadlock(f"no runnable rank; blocked: {blocked}")
            return self.results

    def _step(self, proc):
        self._running = proc
        try:
            while True:
                try:
                    if proc.throw is not None:
                        exc, proc.throw = proc.throw, None
                        req = proc.gen.throw(exc)
                    else:
                        val, proc.send_value = proc.send_value, None
                        req = proc.gen.send(val)
                except StopIteration as stop:
                    proc.done = True
                    proc.result = stop.value
                    proc.gen = None
                    if self.slot_procs[proc.slot] is proc:
                        self.results[proc.slot] = stop.value
                    return
                except Exception as exc:
                    raise Aborted(proc.slot, exc) from exc
                for hook in list(self.hooks):
                    hook(self, proc, req)
                if not proc.alive:
                    self._running = None
                    if proc.gen is not None:
                        proc.gen.close()
                        proc.gen = None
                    return
                if self._handle(proc, req):
                    return
        finally:
            self._running = None

    def _handle(self, proc, req):
        """Process one request.  Returns True if ``proc`` is now blocked."""
        if isinstance(req, Send):
            return self._send(proc, req)
        if isinstance(req, Recv):
            return self._recv(proc, req)
        if isinstance(req, Collective):
            return self._collective(proc, req)
        if isinstance(req, RevokeReq):
            self._revoke(proc, req.comm)
            return False
        if isinstance(req, KillSelf):
            proc.state = ProcessState.FAILED
            self.log(proc.slot, "kill", f"pid={proc.pid} {req.reason}".strip())
            self._unhandled.append(proc)
            proc.gen.close()
            proc.gen = None
            for key, pend in list(self._colls.items()):
                if proc in pend.comm.members and pend.kind in TOLERANT:
                    self._try_complete(key)
            return True
        raise TypeError(f"unknown request {req!r}")

    def _check_member(self, proc, comm, peer=None):
        if proc not in comm.members:
            raise InvalidRank(f"pid {proc.pid} is not a member of {comm}")
        if peer is not None and not 0 <= peer < comm.size:
            raise InvalidRank(f"rank {peer} out of range for {comm}")

    def _fail_now(self, proc, exc):
        proc.throw = exc
        return False

    def _msg_cost(self, nbytes):
        return self.cost.get("msg_latency") + self.cost.get("msg_per_byte") * nbytes

    def _send(self, proc, req):
        comm = req.comm
        try:
            self._check_member(proc, comm, req.dst)
        except InvalidRank as exc:
            return self._fail_now(proc, exc)
        if comm.revoked:
            return self._fail_now(proc, Revoked(f"send on revoked {comm}"))
        payload = req.payload
        if isinstance(payload, np.ndarray):
            payload = payload.tobytes()
        payload = bytes(payload)
        src = comm.rank_of(proc)
        proc.ctx.charge(self._msg_cost(len(payload)))
        key = (comm.id, src, req.dst, req.tag)
        if self.log_messages:
            self.log(proc.slot, "send", f"comm={comm.id} dst={req.dst} tag={req.tag} len={len(payload)}")
        self._mail[key].append(payload)
        waiter = self._recv_waiting.pop(key, None)
        if waiter is not None:
            self._deliver(waiter, key)
        return False

    def _deliver(self, proc, key):
        payload = self._mail[key].popleft()
        proc.ctx.charge(self._msg_cost(len(payload)))
        if self.log_messages:
            self.log(proc.slot, "recv", f"comm={key[0]} src={key[1]} tag={key[3]} len={len(payload)}")
        proc.pending = None
        proc.send_value = payload
        if self._running is not proc:
            self._ready.append(proc)

    def _recv(self, proc, req):
        comm = req.comm
        try:
            self._check_member(proc, comm, req.src)
        except InvalidRank as exc:
            return self._fail_now(proc, exc)
        if comm.revoked:
            return self._fail_now(proc, Revoked(f"recv on revoked {comm}"))
        key = (comm.id, req.src, comm.rank_of(proc), req.tag)
        if self._mail.get(key):
            self._deliver(proc, key)
            return False
        proc.pending = ("recv", key, comm)
        self._recv_waiting[key] = proc
        return True

    def _collective(self, proc, req):
        comm = req.comm
        try:
            self._check_member(proc, comm)
        except InvalidRank as exc:
            return self._fail_now(proc, exc)
        if comm.revoked and req.kind not in TOLERANT:
            return self._fail_now(proc, Revoked(f"{req.kind} on revoked {comm}"))
        # Fault-tolerant collectives get their own sequence so that ranks whose
        # ordinary collectives were interrupted at different points still meet.
        stream = (comm.id, req.kind if req.kind in TOLERANT else "")
        seq = proc.coll_seq[stream]
        proc.coll_seq[stream] += 1
        key = stream + (seq,)
        pend = self._colls.get(key)
        if pend is None:
            pend = self._colls[key] = _Pending(comm, req.kind, req.op)
        elif pend.kind != req.kind:
            raise CollectiveMismatch(
                f"rank {comm.rank_of(proc)} called {req.kind}, others {pend.kind} on {comm}")
        pend.arrivals[proc] = req.value
        proc.pending = ("coll", key, comm)
        self._try_complete(key)
        return proc.pending is not None

    def _try_complete(self, key):
        pend = self._colls.get(key)
        if pend is None:
            return
        comm = pend.comm
        if pend.kind in TOLERANT:
            needed = [p for p in comm.members if p.alive]
        else:
            needed = comm.members
        if not all(p in pend.arrivals for p in needed):
            return
        del self._colls[key]
        arrived = [p for p in comm.members if p in pend.arrivals and p.alive]
        if pend.kind == "agree" and any(not p.alive for p in comm.members):
            dead = [p.slot for p in comm.members if not p.alive]
            for p in arrived:
                self._wake(p, exc=PeerFailed(f"agree on {comm}: failed slots {dead}"))
            return
        results = self._complete(pend, arrived)
        rounds = ROUNDS[pend.kind] * log_rounds(comm.size)
        cost = self.cost.get("collective_round_cost") * rounds
        for p in arrived:
            p.ctx.charge(cost)
            self._wake(p, value=results[p])

    def _complete(self, pend, arrived):
        comm, kind = pend.comm, pend.kind
        ordered = [pend.arrivals[p] for p in comm.members if p in pend.arrivals]
        if kind == "barrier":
            return {p: None for p in arrived}
        if kind == "allreduce":
            r = _reduce(pend.op, ordered)
            return {p: _share(r) for p in arrived}
        if kind == "allgather":
            return {p: [_share(v) for v in ordered] for p in arrived}
        if kind == "bcast":
            r = pend.arrivals[comm.members[pend.op]]
            return {p: _share(r) for p in arrived}
        if kind == "agree":
            r = all(ordered)
            self.log(None, "agree", f"comm={comm.id} epoch={comm.epoch} result={r}")
            return {p: r for p in arrived}
        if kind == "shrink":
            new = self.new_comm(arrived, epoch=comm.epoch + 1)
            self.log(None, "shrink", f"comm={comm.id} -> {new.id} epoch={new.epoch} "
                                     f"slots={new.slots()}")
            return {p: new for p in arrived}
        if kind == "spawn":
            k, entry = ordered[0], pend.op
            present = {p.slot for p in comm.members}
            missing = [s for s in range(self.size) if s not in present][:k]
            if len(missing) < k:
                raise SimError(f"cannot spawn {k} replacements into a world of {self.size}")
            children = []
            inter = self.new_comm(None, comm.epoch, cls=InterComm, local=arrived, remote=children)
            for s in missing:
                child = self.spawn_process(s, entry)
                child.ctx.parent = inter
                children.append(child)
            inter.remote = children
            inter.members = list(inter.local) + children
            return {p: inter for p in arrived}
        if kind == "merge":
            members = sorted(arrived, key=lambda p: p.slot)
            new = self.new_comm(members, epoch=comm.epoch)
            self.log(None, "merge", f"comm={comm.id} -> {new.id} epoch={new.epoch} "
                                    f"size={new.size}")
            return {p: new for p in arrived}
        raise SimError(f"unknown collective {kind}")

    def _wake(self, proc, value=None, exc=None):
        proc.pending = None
        if exc is not None:
            proc.throw = exc
        else:
            proc.send_value = value
        if self._running is not proc:
            self._ready.append(proc)

    def _forget_pending(self, proc):
        if proc.pending is None:
            return
        kind, key, _ = proc.pending
        if kind == "recv":
            if self._recv_waiting.get(key) is proc:
                del self._recv_waiting[key]
        else:
            pend = self._colls.get(key)
            if pend is not None:
                pend.arrivals.pop(proc, None)
                if not pend.arrivals:
                    del self._colls[key]
        proc.pending = None

    def _revoke(self, proc, comm):
        proc.ctx.charge(self.cost.get("collective_round_cost")
                        * ROUNDS["revoke"] * log_rounds(comm.size))
        if comm.revoked:
            return
        comm.revoked = True
        self.log(proc.slot, "revoke", f"comm={comm.id} epoch={comm.epoch}")
        for p in list(comm.members):
            if p is proc or p.pending is None or p.pending[2] is not comm:
                continue
            kind, key, _ = p.pending
            if kind == "coll" and self._colls[key].kind in TOLERANT:
                continue
            self._forget_pending(p)
            self._wake(p, exc=Revoked(f"{comm} revoked"))

    def _depends_on_failed(self, proc):
        kind, key, comm = proc.pending
        if kind == "recv":
            src = comm.members[key[1]]
            return not src.alive and not self._mail.get(key)
        pend = self._colls[key]
        if pend.kind in TOLERANT:
            return False
        return any(not p.alive for p in comm.members)

    def _quiescent(self):
        """Resolve failures once nothing can run.  Returns True on progress."""
        if self._unhandled:
            failed, self._unhandled = self._unhandled, []
            if self.policy.on_failure(self, failed):
                return True
        progressed = False
        blocked = sorted((p for p in self.procs if p.alive and p.pending is not None),
                         key=lambda p: (p.slot, p.pid))
        for p in blocked:
            if self._depends_on_failed(p):
                self._forget_pending(p)
                self._wake(p, exc=PeerFailed("peer process failed"))
                progressed = True
        return progressed


def spawn_world(n, program, cost_model=None, seed=0, **kw):
    """Create a world of ``n`` ranks, each running ``program(ctx)``."""
    return World(n, program, cost_model=cost_model, seed=seed, **kw)
