from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ftmatch.simcore import (SUM, CollectiveMismatch, CostModel, Deadlock, InterComm,
                             PeerFailed, ProcessState, Revoked, VirtualClock, World,
                             log_rounds, spawn_world)


def noop(ctx):
    return ctx.rank
    yield


def survivors(world):
    return [r for s, r in enumerate(world.results) if world.current(s).alive]


# --- world construction ---

def test_spawn_world_64_alive_at_epoch_zero():
    w = spawn_world(64, noop, CostModel(), 7)
    assert w.world_comm.epoch == 0
    assert w.world_comm.size == 64
    assert all(p.state is ProcessState.ALIVE for p in w.procs)
    assert w.run() == list(range(64))


def test_single_rank_world_terminates():
    assert spawn_world(1, noop).run() == [0]


@pytest.mark.parametrize("n", [0, -3, 2.5])
def test_bad_world_size_rejected(n):
    with pytest.raises(ValueError):
        spawn_world(n, noop)


def chatty(ctx):
    comm = ctx.comm
    right, left = (ctx.rank + 1) % ctx.size, (ctx.rank - 1) % ctx.size
    total = 0
    for i in range(5):
        yield from comm.send(right, bytes([ctx.rank, i]))
        msg = yield from comm.recv(left)
        total += msg[0]
        total = yield from comm.allreduce(total, SUM)
    return total


def test_same_seed_identical_event_logs():
    a = spawn_world(5, chatty, seed=7, log_messages=True)
    b = spawn_world(5, chatty, seed=7, log_messages=True)
    assert a.run() == b.run()
    assert a.events == b.events
    assert a.events


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 2**32))
def test_virtual_time_independent_of_schedule(s1, s2):
    a = spawn_world(5, chatty, seed=s1)
    b = spawn_world(5, chatty, seed=s2)
    assert a.run() == b.run()
    assert [c.as_dict() for c in a.clocks] == [c.as_dict() for c in b.clocks]


# --- point to point ---

def test_send_recv_round_trip_charges_both():
    def prog(ctx):
        if ctx.rank == 0:
            yield from ctx.comm.send(1, b"12345678")
        else:
            return (yield from ctx.comm.recv(0))

    w = spawn_world(2, prog)
    assert w.run()[1] == b"12345678"
    expect = Fraction(100) + Fraction(8) * Fraction("0.1")
    assert w.clocks[0]["app"] == expect
    assert w.clocks[1]["app"] == expect


def test_fifo_per_pair():
    def prog(ctx):
        if ctx.rank == 0:
            for i in range(10):
                yield from ctx.comm.send(1, bytes([i]))
        else:
            got = []
            for _ in range(10):
                got.append((yield from ctx.comm.recv(0))[0])
            return got

    assert spawn_world(2, prog, seed=3).run()[1] == list(range(10))


def test_recv_from_failed_peer_raises():
    def prog(ctx):
        if ctx.rank == 1:
            yield from ctx.kill_self()
        try:
            yield from ctx.comm.recv(1)
        except PeerFailed:
            return "peer-failed"

    assert spawn_world(2, prog).run()[0] == "peer-failed"


def test_send_after_revoke_raises():
    def prog(ctx):
        if ctx.rank == 1:
            return "idle"
        yield from ctx.comm.revoke()
        try:
            yield from ctx.comm.send(1, b"x")
        except Revoked:
            return "revoked"

    assert spawn_world(2, prog).run() == ["revoked", "idle"]


# --- collectives ---

def test_allreduce_sum_of_ranks():
    def prog(ctx):
        return (yield from ctx.comm.allreduce(ctx.rank, SUM))

    w = spawn_world(4, prog)
    assert w.run() == [6, 6, 6, 6]
    assert all(c["app"] == 200 * log_rounds(4) for c in w.clocks)


def test_allreduce_single_rank_identity():
    def prog(ctx):
        return (yield from ctx.comm.allreduce(41, SUM))

    assert spawn_world(1, prog).run() == [41]


def test_allreduce_with_failed_member_raises_at_all_survivors():
    def prog(ctx):
        if ctx.rank == 2:
            yield from ctx.kill_self()
        try:
            yield from ctx.comm.allreduce(1, SUM)
        except PeerFailed:
            return "peer-failed"

    w = spawn_world(4, prog)
    w.run()
    assert survivors(w) == ["peer-failed"] * 3


def test_mismatched_collectives_detected():
    def prog(ctx):
        if ctx.rank == 0:
            yield from ctx.comm.barrier()
        else:
            yield from ctx.comm.allreduce(1, SUM)

    with pytest.raises(CollectiveMismatch):
        spawn_world(2, prog).run()


def test_deadlock_reported():
    def prog(ctx):
        yield from ctx.comm.recv(1 - ctx.rank)

    with pytest.raises(Deadlock):
        spawn_world(2, prog).run()


# --- revoke / shrink / spawn / merge / agree ---

def test_revoke_interrupts_blocked_recv():
    def prog(ctx):
        if ctx.rank == 1:
            try:
                yield from ctx.comm.recv(0)
            except Revoked:
                return "revoked"
        if ctx.rank == 0:
            yield from ctx.comm.revoke()
        return "done"

    for seed in range(5):
        w = spawn_world(4, prog, seed=seed)
        assert w.run() == ["done", "revoked", "done", "done"]
        assert w.world_comm.revoked


def test_old_epoch_revoke_does_not_touch_new_comm():
    def prog(ctx):
        old = ctx.comm
        yield from old.revoke()
        new = yield from old.shrink()
        total = yield from new.allreduce(ctx.rank, SUM)
        return old.revoked, new.revoked, new.epoch, total

    assert spawn_world(3, prog).run() == [(True, False, 1, 3)] * 3


def test_revoke_idempotent():
    def once(ctx):
        if ctx.rank == 0:
            yield from ctx.comm.revoke()
        return ctx.comm.revoked

    def twice(ctx):
        if ctx.rank == 0:
            yield from ctx.comm.revoke()
            yield from ctx.comm.revoke()
        return ctx.comm.revoked

    a, b = spawn_world(4, once), spawn_world(4, twice)
    a.run(), b.run()
    assert a.world_comm.revoked and b.world_comm.revoked
    assert sum(e.split()[2] == "revoke" for e in a.events) == 1
    assert sum(e.split()[2] == "revoke" for e in b.events) == 1


def shrink_program(dead):
    def prog(ctx):
        if ctx.rank in dead:
            yield from ctx.kill_self()
        comm = ctx.comm
        try:
            yield from comm.barrier()
        except PeerFailed:
            yield from comm.revoke()
        new = yield from comm.shrink()
        return new.slots(), new.rank_of(ctx.proc), new.epoch
    return prog


def test_shrink_compacts_one_failure():
    res = spawn_world(4, shrink_program({2})).run()
    live = [r for r in res if r is not None]
    assert all(r[0] == [0, 1, 3] for r in live)
    assert [r[1] for r in live] == [0, 1, 2]
    assert all(r[2] == 1 for r in live)


def test_shrink_two_failures():
    res = spawn_world(4, shrink_program({1, 3})).run()
    live = [r for r in res if r is not None]
    assert [r[0] for r in live] == [[0, 2], [0, 2]]
    assert [r[1] for r in live] == [0, 1]


def test_shrink_without_failures_new_epoch():
    res = spawn_world(4, shrink_program(set())).run()
    assert all(r == ([0, 1, 2, 3], i, 1) for i, r in enumerate(res))


def child(ctx):
    merged = yield from ctx.parent.merge()
    ctx.install_world(merged)
    ok = yield from merged.agree(True)
    return ("child", merged.rank_of(ctx.proc), merged.size, ok)


def test_spawn_merge_restores_positions():
    def prog(ctx):
        if ctx.rank == 2:
            yield from ctx.kill_self()
        comm = ctx.comm
        try:
            yield from comm.barrier()
        except PeerFailed:
            yield from comm.revoke()
        shrunk = yield from comm.shrink()
        inter = yield from shrunk.spawn_replacements(4 - shrunk.size, child)
        assert isinstance(inter, InterComm)
        merged = yield from inter.merge()
        ctx.install_world(merged)
        ok = yield from merged.agree(True)
        return ("survivor", merged.rank_of(ctx.proc), merged.size, ok)

    w = spawn_world(4, prog)
    res = w.run()
    assert res == [("survivor", 0, 4, True), ("survivor", 1, 4, True),
                   ("child", 2, 4, True), ("survivor", 3, 4, True)]
    assert w.current(2).state is ProcessState.RESPAWNED


@pytest.mark.parametrize("flags,expect", [((1, 1, 1, 1), True), ((1, 1, 0, 1), False)])
def test_agree_is_logical_and(flags, expect):
    def prog(ctx):
        return (yield from ctx.comm.agree(flags[ctx.rank]))

    assert spawn_world(4, prog).run() == [expect] * 4


def test_agree_with_dead_member_raises_everywhere():
    def prog(ctx):
        if ctx.rank == 3:
            yield from ctx.kill_self()
        try:
            yield from ctx.comm.agree(True)
        except PeerFailed:
            return "peer-failed"
        return "agreed"

    assert spawn_world(4, prog).run()[:3] == ["peer-failed"] * 3


# --- kill ---

def test_kill_marks_failed():
    w = spawn_world(4, noop)
    w.kill(2)
    w.run()
    assert [p.state for p in w.procs].count(ProcessState.FAILED) == 1
    assert w.current(2).state is ProcessState.FAILED
    assert sum(p.alive for p in w.procs) == 3


def test_kill_then_allreduce_peer_failed():
    def prog(ctx):
        try:
            return (yield from ctx.comm.allreduce(1, SUM))
        except PeerFailed:
            return "peer-failed"

    w = spawn_world(4, prog)
    w.kill(2)
    res = w.run()
    assert [res[s] for s in (0, 1, 3)] == ["peer-failed"] * 3


def test_kill_twice_single_event():
    w = spawn_world(4, noop)
    w.kill(2)
    w.kill(2)
    assert sum(" kill " in e for e in w.events) == 1


# --- accounting ---

def test_charge_examples():
    w = spawn_world(1, noop)
    w.charge(0, "app", 5)
    assert w.total(0) == 5
    w.charge(0, "app", 0)
    assert w.total(0) == 5
    c = VirtualClock()
    c.charge("app", 3)
    c.charge("app", 4)
    assert c.total == 7


def test_negative_charge_rejected():
    with pytest.raises(ValueError):
        VirtualClock().charge("app", -1)


def test_cost_model_validation():
    with pytest.raises(ValueError):
        CostModel(msg_latency=-1)
    with pytest.raises(ValueError):
        CostModel(redeploy_cost_per_rank=0)
    with pytest.raises(ValueError):
        CostModel.from_dict({"bogus": 1})
    assert CostModel.from_dict({"ckpt_write_per_byte": {"L1": 1}}).get(
        "ckpt_write_per_byte", "L2") == Fraction("0.5")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["app", "ckpt_write", "ckpt_read", "recovery"]),
                          st.integers(0, 10**6)), max_size=30))
def test_clock_categories_sum_to_total(charges):
    c = VirtualClock()
    prev = 0
    for cat, amt in charges:
        c.charge(cat, amt)
        assert c.total >= prev
        prev = c.total
    assert c.total == sum(c.as_dict().values())


@settings(max_examples=20, deadline=None)
@given(st.integers(2, 9), st.data())
def test_liveness_with_failures(n, data):
    """With failures, every live rank ends with a value or an error, never a hang."""
    dead = data.draw(st.sets(st.integers(0, n - 1), min_size=1, max_size=n - 1))
    seed = data.draw(st.integers(0, 1000))

    def prog(ctx):
        if ctx.rank in dead:
            yield from ctx.kill_self()
        try:
            for _ in range(3):
                yield from ctx.comm.send((ctx.rank + 1) % ctx.size, b"x")
                yield from ctx.comm.recv((ctx.rank - 1) % ctx.size)
                yield from ctx.comm.allreduce(1, SUM)
        except PeerFailed:
            return "error"
        return "value"

    w = World(n, prog, seed=seed)
    res = w.run()
    assert all(res[s] in ("error", "value") for s in range(n) if s not in dead)
