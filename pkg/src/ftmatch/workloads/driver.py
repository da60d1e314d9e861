"""Resilient main loop shared by the workloads, and the single-run entry point."""

import hashlib
import logging
import tempfile
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from ..checkpoint import FTI, CheckpointFailed, Level
from ..faultinject import FaultPlan, install
from ..recovery import make_policy, run_with_policy
from ..simcore import CATEGORIES, CostModel, World
from .cg import CGSolver
from .jacobi import Jacobi2D
from .presets import DEFAULT_ITERS, resolve_input

log = logging.getLogger(__name__)

WORKLOADS = {"cg": CGSolver, "jacobi": Jacobi2D}


@dataclass(frozen=True)
class TimeBreakdown:
    app: Fraction = Fraction(0)
    ckpt_write: Fraction = Fraction(0)
    ckpt_read: Fraction = Fraction(0)
    recovery: Fraction = Fraction(0)

    @property
    def total(self):
        return self.app + self.ckpt_write + self.ckpt_read + self.recovery

    @classmethod
    def from_clock(cls, clock):
        return cls(*(clock[c] for c in CATEGORIES))

    @classmethod
    def critical_path(cls, parts):
        """Max over ranks, category by category."""
        parts = list(parts)
        if not parts:
            return cls()
        return cls(*(max(getattr(p, c) for p in parts) for c in CATEGORIES))

    def as_dict(self):
        return {c: getattr(self, c) for c in CATEGORIES}


@dataclass
class RunConfig:
    workload: str = "cg"
    input: object = "desk"
    nranks: int = 8
    iters: int = None
    interval: int = 10
    policy: str = "none"
    level: str = "L1"
    group_size: int = 4
    seed: int = 0
    fault_plan: FaultPlan = None
    cost_model: CostModel = None
    clobber_transients: bool = False

    def __post_init__(self):
        if self.interval < 1:
            raise ValueError("checkpoint interval must be >= 1")
        if self.iters is None:
            self.iters = DEFAULT_ITERS[self.workload]
        if self.iters < 1:
            raise ValueError("iteration count must be >= 1")
        Level(self.level)


@dataclass
class ResultRecord:
    workload: str
    policy: str
    nranks: int
    input: str
    answer: float
    digest: str
    solution: np.ndarray
    iterations_executed: int
    checkpoints: int
    breakdown: TimeBreakdown
    per_rank: list
    fault_events: list = field(default_factory=list)
    history: dict = field(default_factory=dict)
    repairs: int = 0
    events: list = field(default_factory=list)

    @property
    def recovery(self):
        return self.breakdown.recovery


def make_program(cfg, dims, system):
    cls = WORKLOADS[cfg.workload]

    def program(ctx):
        world = ctx.world
        app = cls(dims, ctx.rank, ctx.size)
        yield from app.setup(ctx)
        fti = system.init(ctx)
        for oid, (name, arr) in enumerate(app.protected()):
            fti.protect(oid, arr, name)
        status = yield from fti.status()
        if status.restart:
            fti.recover()
            if cfg.clobber_transients:
                app.clobber()
        inj = world.services.get("faults")
        lead = ctx.rank == 0
        for k in range(int(app.it[0]) + 1, cfg.iters + 1):
            if inj is not None:
                yield from inj.maybe_inject(ctx, k)
            world.policy.on_step(ctx)
            yield from app.iterate(ctx, k)
            if lead:
                world.stats["iterations"] += 1
                world.services["history"][k] = app.residual()
            if k % cfg.interval == 0:
                try:
                    yield from fti.checkpoint(k)
                except CheckpointFailed as exc:
                    ctx.log("ckpt_failed", str(exc))
                else:
                    if lead:
                        world.stats["checkpoints"] += 1
        return (yield from app.finish(ctx))

    return program


def digest(array):
    return hashlib.sha256(np.ascontiguousarray(array, dtype=np.float64).tobytes()).hexdigest()


def build_world(cfg, store_root):
    preset = resolve_input(cfg.workload, cfg.input)
    # constructing rank 0's state validates the decomposition up front
    WORKLOADS[cfg.workload](preset.dims, 0, cfg.nranks)
    system = FTI(store_root, cfg.level, cfg.group_size)
    world = World(cfg.nranks, make_program(cfg, preset.dims, system),
                  cost_model=cfg.cost_model or CostModel(), seed=cfg.seed)
    world.services["history"] = {}
    world.services["fti"] = system
    if cfg.fault_plan is not None:
        install(world, cfg.fault_plan, cfg.iters)
    return world, preset


def run(cfg=None, store_root=None, hooks=(), **kw):
    """Run one workload under one policy; returns a :class:`ResultRecord`.

    Keyword arguments override fields of ``cfg`` (or build one from scratch).
    """
    if cfg is None:
        cfg = RunConfig(**kw)
    elif kw:
        cfg = RunConfig(**{**cfg.__dict__, **kw})
    with tempfile.TemporaryDirectory(prefix="ftmatch-") as tmp:
        world, preset = build_world(cfg, store_root or tmp)
        world.hooks.extend(hooks)
        results = run_with_policy(world, make_policy(cfg.policy))
    answer, solution = results[0]
    per_rank = [TimeBreakdown.from_clock(c) for c in world.clocks]
    inj = world.services.get("faults")
    rec = ResultRecord(
        cfg.workload, make_policy(cfg.policy).name, cfg.nranks, preset.label,
        float(answer), digest(solution), solution, world.stats["iterations"],
        world.stats["checkpoints"], TimeBreakdown.critical_path(per_rank), per_rank,
        list(inj.events) if inj else [], dict(sorted(world.services["history"].items())),
        world.stats["repairs"], list(world.events))
    log.debug("%s/%s n=%d answer=%r", rec.workload, rec.policy, rec.nranks, rec.answer)
    return rec
