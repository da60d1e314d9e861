import json
import subprocess
import sys

import pytest

from ftmatch.cli import ckptfind_main, main
from ftmatch.workloads import RunConfig, run


def test_run_json(capsys):
    assert main(["run", "--workload", "jacobi", "--nranks", "4", "--iters", "20", "--json"]) == 0
    out = json.loads(capsys.readouterr().out)
    golden = run(RunConfig(workload="jacobi", nranks=4, iters=20))
    assert out["digest"] == golden.digest
    assert out["checkpoints"] == 2 and out["breakdown"]["recovery"] == 0


def test_run_with_fault(capsys, tmp_path):
    log = tmp_path / "events.log"
    argv = ["run", "--workload", "cg", "--nranks", "4", "--iters", "20", "--ft-design",
            "reinit-fti", "--procfi", "--fi-rank", "2", "--fi-iter", "13",
            "--event-log", str(log)]
    assert main(argv) == 0
    text = capsys.readouterr().out
    assert "fault       rank 2 at iteration 13" in text
    assert "recovery    400.0" in text
    assert " fault iter=13" in log.read_text()


def test_run_unrecoverable_exit_code(capsys):
    argv = ["run", "--workload", "jacobi", "--nranks", "4", "--iters", "10", "--procfi",
            "--fi-rank", "1", "--fi-iter", "3"]
    assert main(argv) == 3
    assert "unrecoverable" in capsys.readouterr().err


def test_run_bad_decomposition(capsys):
    assert main(["run", "--workload", "cg", "--nranks", "3", "--iters", "2"]) == 2
    assert "do not divide" in capsys.readouterr().err


def test_run_cost_model_file(capsys, tmp_path):
    cm = tmp_path / "cm.json"
    cm.write_text(json.dumps({"compute_per_element": 0}))
    main(["run", "--workload", "jacobi", "--nranks", "1", "--iters", "5", "--ckpt-interval",
          "100", "--cost-model", str(cm), "--json"])
    assert json.loads(capsys.readouterr().out)["breakdown"]["app"] == 0


def test_bench_and_summarize(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"workloads": ["jacobi"], "nranks": [4], "repetitions": 1,
                               "iters": {"jacobi": 15}}))
    out = tmp_path / "out"
    assert main(["bench", "--config", str(cfg), "--out", str(out), "-q"]) == 0
    assert (out / "results.csv").exists()
    assert "recovery ratios" in capsys.readouterr().out
    assert main(["summarize", str(out / "results.csv")]) == 0
    assert "jacobi" in capsys.readouterr().out


def test_summarize_empty_and_bad(capsys, tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("")
    assert main(["summarize", str(empty)]) == 0
    assert capsys.readouterr().out == "no results\n"
    bad = tmp_path / "b.csv"
    bad.write_text("a,b\n1,2\n")
    assert main(["summarize", str(bad)]) == 2


def test_trace_then_ckptfind(capsys, tmp_path):
    trace = tmp_path / "j.trace"
    assert main(["trace", "--workload", "jacobi", "-o", str(trace)]) == 0
    report = tmp_path / "r.tsv"
    assert ckptfind_main([str(trace), "--format", "tsv", "-o", str(report)]) == 0
    names = {line.split("\t")[0] for line in report.read_text().splitlines()[1:]}
    assert names == {"grid", "iter", "resid"}
    assert main(["ckptfind", str(trace)]) == 0
    assert "3 object(s)" in capsys.readouterr().out


def test_ckptfind_errors(capsys, tmp_path):
    bad = tmp_path / "bad.trace"
    bad.write_text("M 0 LOOP_BEGIN\nR 1 2 nope\n")
    assert ckptfind_main([str(bad)]) == 2
    assert "line 2" in capsys.readouterr().err
    noloop = tmp_path / "noloop.trace"
    noloop.write_text("R 0 1 mov | reads: | writes: r:a=1\n")
    assert ckptfind_main([str(noloop)]) == 2
    assert ckptfind_main([str(tmp_path / "missing")]) == 2


def test_unknown_design_rejected():
    with pytest.raises(SystemExit):
        main(["run", "--ft-design", "shrink"])


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "ftmatch", "run", "--workload", "jacobi",
                          "--nranks", "2", "--iters", "3", "--json"],
                         capture_output=True, text=True, check=True)
    assert json.loads(out.stdout)["iterations_executed"] == 3
