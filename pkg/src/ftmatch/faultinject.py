"""Seeded process-kill injection at iteration heads."""

import random
from dataclasses import dataclass, field


@dataclass
class FaultPlan:
    """Where and when to kill processes.

    ``target_rank`` / ``target_iter`` of ``None`` mean "draw uniformly from the
    seed"; an int pins the value.
    """

    seed: int = 0
    target_rank: int = None
    target_iter: int = None
    count: int = 1
    enabled: bool = True

    @classmethod
    def from_dict(cls, d):
        if d is None:
            return cls(enabled=False)
        return cls(seed=d.get("seed", 0), target_rank=d.get("rank"),
                   target_iter=d.get("iter"), count=d.get("count", 1),
                   enabled=d.get("enabled", True))


def resolve(plan, world_size, max_iter):
    """Turn ``plan`` into a concrete list of distinct ``(rank, iteration)`` pairs."""
    if world_size < 1 or max_iter < 1:
        raise ValueError("world_size and max_iter must be >= 1")
    if plan is None or not plan.enabled or plan.count <= 0:
        return []
    if plan.target_rank is not None and not 0 <= plan.target_rank < world_size:
        raise ValueError(f"fault rank {plan.target_rank} outside world of {world_size}")
    if plan.target_iter is not None and not 1 <= plan.target_iter <= max_iter:
        raise ValueError(f"fault iteration {plan.target_iter} outside [1, {max_iter}]")
    choices_r = 1 if plan.target_rank is not None else world_size
    choices_k = 1 if plan.target_iter is not None else max_iter
    if plan.count > choices_r * choices_k:
        raise ValueError(f"cannot place {plan.count} distinct faults")
    rng = random.Random(plan.seed)
    pairs = []
    while len(pairs) < plan.count:
        r = plan.target_rank if plan.target_rank is not None else rng.randrange(world_size)
        k = plan.target_iter if plan.target_iter is not None else rng.randint(1, max_iter)
        if (r, k) not in pairs:
            pairs.append((r, k))
    return pairs


@dataclass
class FaultEvent:
    rank: int
    iteration: int
    virtual_time: object


@dataclass
class FaultInjector:
    """World-owned plan state.  Each entry fires at most once, even after rollback."""

    entries: list
    fired: set = field(default_factory=set)
    events: list = field(default_factory=list)

    def maybe_inject(self, ctx, iteration):
        key = (ctx.slot, iteration)
        if key not in self.entries or key in self.fired:
            return
        self.fired.add(key)
        ev = FaultEvent(ctx.slot, iteration, ctx.world.total(ctx.slot))
        self.events.append(ev)
        ctx.log("fault", f"iter={iteration}")
        yield from ctx.kill_self(f"SIGTERM iter={iteration}")

    @property
    def pending(self):
        return [e for e in self.entries if e not in self.fired]


def install(world, plan, max_iter):
    inj = FaultInjector(resolve(plan, world.size, max_iter))
    world.services["faults"] = inj
    return inj
