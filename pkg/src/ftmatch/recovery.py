"""Restart, ULFM-style non-shrinking and Reinit-style recovery policies."""

import enum

from .simcore import (Aborted, PeerFailed, Policy, ProcessState, Revoked, SimError,
                      log_rounds)


class UnrecoverableFailure(SimError):
    pass


class ReinitState(enum.Enum):
    NEW = "new"
    RESTARTED_SURVIVOR = "restarted_survivor"
    RESTARTED_RESPAWN = "restarted_respawn"


class RecoveryPolicy(enum.Enum):
    NONE = "none"
    RESTART = "restart-fti"
    ULFM = "ulfm-fti"
    REINIT = "reinit-fti"


# Reinit repairs inside the runtime: one round to broadcast the failure and
# one to rendezvous the respawned ranks, whatever the world size.
REINIT_ROUNDS = 2


class NoRecovery(Policy):
    name = "none"

    def entry(self, ctx):
        if ctx.state is None:
            ctx.state = ReinitState.NEW
        return (yield from ctx.world.program(ctx))


class Restart(NoRecovery):
    """Tear the whole job down and redeploy it; the program restarts from the store."""

    name = "restart-fti"

    def on_failure(self, world, failed):
        restart_on_failure(world)
        return True


class Reinit(NoRecovery):
    name = "reinit-fti"

    def on_failure(self, world, failed):
        reinit_on_failure(world)
        return True


class UlfmNonShrink(Policy):
    """Application-level repair: revoke, shrink, spawn, merge, agree."""

    name = "ulfm-fti"

    def entry(self, ctx):
        if ctx.state is None:
            ctx.state = ReinitState.NEW
        while True:
            try:
                return (yield from ctx.world.program(ctx))
            except (PeerFailed, Revoked) as exc:
                yield from ulfm_on_failure(ctx, exc)
                ctx.state = ReinitState.RESTARTED_SURVIVOR

    def child_entry(self, ctx):
        inter = ctx.parent
        try:
            with ctx.accounting("recovery"):
                merged = yield from inter.merge()
        except (PeerFailed, Revoked):
            # orphaned replacement: the survivors will spawn another one
            ctx.log("orphan")
            return None
        ctx.install_world(merged)
        try:
            with ctx.accounting("recovery"):
                yield from merged.agree(True)
        except (PeerFailed, Revoked) as exc:
            yield from ulfm_on_failure(ctx, exc)
            ctx.state = ReinitState.RESTARTED_SURVIVOR
        else:
            ctx.state = ReinitState.RESTARTED_RESPAWN
        while True:
            try:
                return (yield from ctx.world.program(ctx))
            except (PeerFailed, Revoked) as exc:
                yield from ulfm_on_failure(ctx, exc)
                ctx.state = ReinitState.RESTARTED_SURVIVOR

    def on_step(self, ctx):
        world = ctx.world
        ctx.charge(world.cost.get("ulfm_heartbeat_per_step_per_rank") * world.size,
                   category="app")


def ulfm_on_failure(ctx, exc=None):
    """Error-handler body run by each survivor; returns the repaired world.

    Non-failure error classes abort the job.  If another process dies while
    the repair is in flight, the repair starts over from revoke.
    """
    if exc is not None and not isinstance(exc, (PeerFailed, Revoked)):
        raise Aborted(ctx.slot, exc)
    world = ctx.world
    policy = world.policy
    with ctx.accounting("recovery"):
        while True:
            comm = ctx.comm
            try:
                yield from comm.revoke()
                shrunk = yield from comm.shrink()
                missing = world.size - shrunk.size
                inter = yield from shrunk.spawn_replacements(missing, policy.child_entry)
                merged = yield from inter.merge()
                ctx.install_world(merged)
                yield from merged.agree(True)
            except (PeerFailed, Revoked):
                ctx.log("repair_retry")
                continue
            if shrunk.rank_of(ctx.proc) == 0:
                world.stats["repairs"] += 1
                world.stats["recovery_rounds"] += ulfm_rounds(world.size)
                world.install_world_comm(merged)
                world.log(ctx.slot, "ulfm_repair", f"epoch={merged.epoch} size={merged.size}")
            return merged


def ulfm_rounds(n):
    """Collective rounds charged by one ULFM repair of a world of ``n`` ranks."""
    return log_rounds(n) + 2 * log_rounds(n) + log_rounds(n - 1) + log_rounds(n) \
        + 2 * log_rounds(n)


def _respawn_world(world, survivor_state, respawn_state, fresh_all=False):
    """Replace failed processes, unwind survivors and install a new world comm."""
    old = world.world_comm
    members = []
    for slot in range(world.size):
        proc = world.current(slot)
        if fresh_all or not proc.alive:
            if proc.alive:
                world.stop(proc)
                proc.state = ProcessState.FAILED
            state = ProcessState.ALIVE if fresh_all else ProcessState.RESPAWNED
            new = world._new_process(slot, state, respawn_state)
            world.log(slot, "spawn", f"pid={new.pid}")
            members.append(new)
        else:
            world.stop(proc)
            proc.ctx = type(proc.ctx)(world, proc, survivor_state)
            members.append(proc)
    comm = world.new_comm(members, epoch=old.epoch + 1, slot=(old.slot + 1) % 2)
    old.revoked = True
    world.install_world_comm(comm)
    for proc in members:
        proc.ctx.worldi = comm.slot
        proc.ctx.worldc[comm.slot] = comm
    return comm, members


def reinit_on_failure(world):
    """Runtime-level rollback: respawn failed ranks, unwind everyone to the entry."""
    comm, members = _respawn_world(world, ReinitState.RESTARTED_SURVIVOR,
                                   ReinitState.RESTARTED_RESPAWN)
    cost = world.cost.get("collective_round_cost") * REINIT_ROUNDS
    world.stats["repairs"] += 1
    world.stats["recovery_rounds"] += REINIT_ROUNDS
    for proc in members:
        world.charge(proc.slot, "recovery", cost)
    world.log(None, "reinit", f"epoch={comm.epoch}")
    for proc in members:
        world.start(proc)
    return comm


def restart_on_failure(world):
    """Redeploy the job from scratch; state comes back only through checkpoints."""
    comm, members = _respawn_world(world, ReinitState.NEW, ReinitState.NEW, fresh_all=True)
    n = world.size
    cost = world.cost.redeploy_cost(n) + world.cost.get("collective_round_cost") * log_rounds(n)
    world.stats["repairs"] += 1
    world.stats["recovery_rounds"] += log_rounds(n)
    for proc in members:
        world.charge(proc.slot, "recovery", cost)
    world.log(None, "restart", f"epoch={comm.epoch}")
    for proc in members:
        world.start(proc)
    return comm


_POLICIES = {
    RecoveryPolicy.NONE: NoRecovery,
    RecoveryPolicy.RESTART: Restart,
    RecoveryPolicy.ULFM: UlfmNonShrink,
    RecoveryPolicy.REINIT: Reinit,
}


def make_policy(policy):
    if isinstance(policy, Policy):
        return policy
    if isinstance(policy, str):
        try:
            policy = RecoveryPolicy(policy)
        except ValueError:
            names = ", ".join(p.value for p in RecoveryPolicy)
            raise ValueError(f"unknown ft design {policy!r}; choose from {names}") from None
    return _POLICIES[policy]()


def run_with_policy(world, policy, program=None):
    """Run ``world`` under ``policy``; returns per-rank results."""
    world.policy = make_policy(policy)
    if program is not None:
        world.program = program
    try:
        return world.run()
    except Aborted as exc:
        if isinstance(exc.error, (PeerFailed, Revoked)):
            raise UnrecoverableFailure(
                f"{world.policy.name}: rank {exc.slot} hit {exc.error!r}") from exc
        raise
