import tempfile
from fractions import Fraction

import pytest

from ftmatch.faultinject import FaultInjector, FaultPlan
from ftmatch.recovery import (REINIT_ROUNDS, Aborted, ReinitState, RecoveryPolicy,
                              UnrecoverableFailure, make_policy, run_with_policy,
                              ulfm_rounds)
from ftmatch.simcore import Collective, CostModel, World, log_rounds
from ftmatch.workloads import RunConfig, run
from ftmatch.workloads.driver import build_world, digest

POLICIES = ["restart-fti", "ulfm-fti", "reinit-fti"]


def fixed(rank, it):
    return FaultPlan(target_rank=rank, target_iter=it)


def cg(**kw):
    base = dict(workload="cg", input="desk", nranks=4, iters=30)
    return RunConfig(**{**base, **kw})


# --- policy plumbing ---

@pytest.mark.parametrize("name", ["none"] + POLICIES)
def test_make_policy_names(name):
    assert make_policy(name).name == name
    assert make_policy(RecoveryPolicy(name)).name == name


def test_make_policy_unknown():
    with pytest.raises(ValueError, match="unknown ft design"):
        make_policy("shrink")


def test_reinit_state_values():
    assert {s.value for s in ReinitState} == {"new", "restarted_survivor", "restarted_respawn"}


@pytest.mark.parametrize("policy", POLICIES)
def test_no_fault_same_answer_as_none(policy):
    golden = run(cg(policy="none"))
    rec = run(cg(policy=policy))
    assert rec.digest == golden.digest
    assert rec.answer == golden.answer
    assert rec.recovery == 0
    assert rec.repairs == 0


@pytest.mark.parametrize("workload,nranks", [("cg", 4), ("jacobi", 4)])
def test_single_fault_all_policies_bitwise(workload, nranks):
    golden = run(RunConfig(workload=workload, nranks=nranks, iters=30))
    for p in POLICIES:
        rec = run(RunConfig(workload=workload, nranks=nranks, iters=30, policy=p,
                            fault_plan=fixed(2, 17)))
        assert rec.digest == golden.digest, p
        assert rec.answer == golden.answer, p
        assert rec.repairs == 1
        assert rec.recovery > 0


def test_none_policy_fault_is_unrecoverable():
    with pytest.raises(UnrecoverableFailure):
        run(cg(policy="none", fault_plan=fixed(1, 5)))


# --- scripted re-entry states ---

def scripted(policy, n, kill_slot, kill_at_entry=0):
    """Each entry logs (slot, state); ``kill_slot`` dies once inside entry ``kill_at_entry``."""
    seen = []

    def program(ctx):
        seen.append((ctx.slot, ctx.state))
        yield from ctx.comm.barrier()
        if ctx.slot == kill_slot and len([s for s in seen if s[0] == kill_slot]) == \
                kill_at_entry + 1 and not ctx.world.stats["killed"]:
            ctx.world.stats["killed"] += 1
            yield from ctx.kill_self()
        yield from ctx.comm.barrier()
        return ctx.rank

    w = World(n, program)
    res = run_with_policy(w, policy)
    return w, res, seen


def test_reinit_kill_rank0_of_8():
    w, res, seen = scripted("reinit-fti", 8, kill_slot=0)
    assert res == list(range(8))
    reentries = seen[8:]
    assert len(reentries) == 8
    states = sorted(st.value for _, st in reentries)
    assert states.count("restarted_survivor") == 7
    assert dict(reentries)[0] is ReinitState.RESTARTED_RESPAWN
    assert all(st is ReinitState.NEW for _, st in seen[:8])
    assert w.world_comm.epoch == 1


def test_ulfm_states_after_repair():
    w, res, seen = scripted("ulfm-fti", 4, kill_slot=1)
    assert res == list(range(4))
    reentries = dict(seen[4:])
    assert reentries[1] is ReinitState.RESTARTED_RESPAWN
    assert all(reentries[s] is ReinitState.RESTARTED_SURVIVOR for s in (0, 2, 3))
    assert w.world_comm.size == 4


def test_restart_everyone_starts_new():
    w, res, seen = scripted("restart-fti", 4, kill_slot=2)
    assert res == list(range(4))
    assert all(st is ReinitState.NEW for _, st in seen)
    assert len(seen) == 8


def test_ulfm_example_resume_from_ten():
    rec = run(cg(policy="ulfm-fti", fault_plan=fixed(1, 17)))
    repairs = [e for e in rec.events if "ulfm_repair" in e]
    assert len(repairs) == 1
    assert "epoch=1 size=4" in repairs[0]
    # iterations 1..16 first, then 11..30 again after rolling back to 10
    assert rec.iterations_executed == 16 + 20


@pytest.mark.parametrize("policy", POLICIES)
def test_resume_point_is_latest_checkpoint(policy):
    rec = run(cg(policy=policy, fault_plan=fixed(1, 17)))
    assert rec.iterations_executed == 36


@pytest.mark.parametrize("policy", POLICIES)
def test_fault_before_first_checkpoint_restarts_from_zero(policy):
    golden = run(cg())
    rec = run(cg(policy=policy, fault_plan=fixed(3, 7)))
    assert rec.iterations_executed == 6 + 30
    assert rec.digest == golden.digest


def test_ulfm_failure_during_agree_retries():
    state = {"done": False}

    def hook(world, proc, req):
        if (isinstance(req, Collective) and req.kind == "agree" and not state["done"]
                and proc.ctx.category == "recovery" and proc.slot != 3):
            state["done"] = True
            world.kill(3)

    golden = run(cg())
    rec = run(cg(policy="ulfm-fti", fault_plan=fixed(1, 17)), hooks=[hook])
    assert state["done"]
    assert any("repair_retry" in e for e in rec.events)
    assert rec.digest == golden.digest


def test_ulfm_non_failure_error_aborts():
    def program(ctx):
        yield from ctx.comm.barrier()
        if ctx.rank == 2:
            raise RuntimeError("bad input")
        yield from ctx.comm.barrier()

    with pytest.raises(Aborted) as info:
        run_with_policy(World(4, program), "ulfm-fti")
    assert isinstance(info.value.error, RuntimeError)


def test_two_sequential_failures_progress():
    cfg = cg(policy="reinit-fti", iters=40)
    golden = run(cg(iters=40))
    with tempfile.TemporaryDirectory() as tmp:
        world, _ = build_world(cfg, tmp)
        world.services["faults"] = FaultInjector([(1, 14), (2, 27)])
        recovered = []
        program = world.program

        def spy(ctx):
            if ctx.state is not ReinitState.NEW and ctx.slot == 0:
                recovered.append(ctx.world.stats["repairs"])
            return (yield from program(ctx))

        world.program = spy
        res = run_with_policy(world, cfg.policy)
    assert recovered == [1, 2]
    hist = [e for e in world.events if " fault " in e]
    assert len(hist) == 2
    assert world.stats["iterations"] == 13 + (26 - 10) + (40 - 20)
    assert digest(res[0][1]) == golden.digest


# --- costs ---

@pytest.mark.parametrize("n", [4, 8, 16, 32])
def test_reinit_rounds_constant(n):
    rec = run(RunConfig(workload="jacobi", nranks=n, iters=20, policy="reinit-fti",
                        fault_plan=fixed(1, 15)))
    assert rec.recovery == 200 * REINIT_ROUNDS


def test_ulfm_rounds_grow():
    counts = [ulfm_rounds(n) for n in (4, 8, 16, 32)]
    assert counts == sorted(set(counts))
    for n in (4, 8, 16, 32):
        assert ulfm_rounds(n) >= 5 * log_rounds(n - 1)


def test_restart_cost_definition():
    n = 8
    rec = run(RunConfig(workload="jacobi", nranks=n, iters=20, policy="restart-fti",
                        fault_plan=fixed(1, 15)))
    cm = CostModel()
    assert rec.recovery == cm.redeploy_cost(n) + cm.get("collective_round_cost") * log_rounds(n)


def test_ulfm_recovery_time_is_round_cost():
    n = 8
    rec = run(RunConfig(workload="jacobi", nranks=n, iters=20, policy="ulfm-fti",
                        fault_plan=fixed(1, 15)))
    # the replacement pays only merge and agree, survivors pay everything
    assert rec.recovery == 200 * ulfm_rounds(n)


@pytest.mark.parametrize("workload", ["cg", "jacobi"])
@pytest.mark.parametrize("n", [4, 8])
def test_cost_ordering(workload, n):
    rec = {p: run(RunConfig(workload=workload, nranks=n, iters=20, policy=p,
                            input="bench" if workload == "cg" else "desk",
                            fault_plan=fixed(1, 15))).recovery for p in POLICIES}
    assert rec["restart-fti"] > rec["ulfm-fti"] > rec["reinit-fti"] > 0


def test_heartbeat_is_the_only_app_difference():
    n, iters = 8, 30
    app = {p: run(RunConfig(workload="jacobi", nranks=n, iters=iters, policy=p))
           .breakdown.app for p in POLICIES}
    hb = CostModel().get("ulfm_heartbeat_per_step_per_rank") * n * iters
    assert app["ulfm-fti"] - app["reinit-fti"] == hb
    assert app["reinit-fti"] == app["restart-fti"]
    assert isinstance(hb, Fraction)
