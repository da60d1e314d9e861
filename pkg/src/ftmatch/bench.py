"""Sweep driver: policy x scale x input x fault on/off, repeated, reported as CSV."""

import csv
import io
import itertools
import json
import logging
import statistics
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .faultinject import FaultPlan
from .simcore import CATEGORIES, CostModel
from .workloads.driver import RunConfig, TimeBreakdown, run
from .workloads.presets import DEFAULT_ITERS

__all__ = ["ExperimentConfig", "TimeBreakdown", "SuiteReport", "Findings", "run_suite",
           "summarize", "summarize_text", "render_summary", "CSV_HEADER"]

log = logging.getLogger(__name__)

KEYS = ["workload", "policy", "nranks", "input", "faulted", "rep"]
CSV_HEADER = KEYS + list(CATEGORIES) + ["total"]
PER_RANK_HEADER = KEYS + ["rank"] + list(CATEGORIES) + ["total"]
POLICIES = ["restart-fti", "ulfm-fti", "reinit-fti"]

# cg's desk cube has 16 z-planes, which does not split over 32 ranks
DEFAULT_INPUTS = {"cg": "bench", "jacobi": "desk"}


@dataclass
class ExperimentConfig:
    workloads: list = field(default_factory=lambda: ["cg", "jacobi"])
    inputs: dict = field(default_factory=lambda: dict(DEFAULT_INPUTS))
    nranks: list = field(default_factory=lambda: [4, 8, 16, 32])
    policies: list = field(default_factory=lambda: list(POLICIES))
    faulted: list = field(default_factory=lambda: [False, True])
    interval: int = 10
    repetitions: int = 5
    iters: dict = field(default_factory=lambda: dict(DEFAULT_ITERS))
    level: str = "L1"
    group_size: int = 4
    fault_plan: dict = field(default_factory=dict)
    cost_model: dict = field(default_factory=dict)
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "workload" in d:
            w = d.pop("workload")
            d["workloads"] = [w] if isinstance(w, str) else list(w)
        if "policy" in d:
            p = d.pop("policy")
            d["policies"] = [p] if isinstance(p, str) else list(p)
        if "input" in d:
            inp = d.pop("input")
            d["inputs"] = inp if isinstance(inp, dict) else {
                w: inp for w in d.get("workloads", cls().workloads)}
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def validate(self):
        if self.interval < 1:
            raise ValueError("interval must be >= 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.nranks or any(int(n) < 1 for n in self.nranks):
            raise ValueError("nranks must be a non-empty list of positive integers")
        for w in self.workloads:
            if w not in DEFAULT_ITERS:
                raise ValueError(f"unknown workload {w!r}")
        CostModel.from_dict(self.cost_model)

    def input_for(self, workload):
        return self.inputs.get(workload, DEFAULT_INPUTS.get(workload, "desk"))

    def iters_for(self, workload):
        return self.iters.get(workload, DEFAULT_ITERS[workload])

    def plan(self):
        d = {"seed": self.seed, **self.fault_plan}
        return FaultPlan.from_dict(d)

    def cells(self):
        """Every (workload, policy, nranks, faulted, rep) in a fixed order."""
        return list(itertools.product(self.workloads, self.policies,
                                      [int(n) for n in self.nranks],
                                      [bool(f) for f in self.faulted],
                                      range(self.repetitions)))

    def run_config(self, workload, policy, nranks, faulted, rep):
        return RunConfig(workload=workload, input=self.input_for(workload), nranks=nranks,
                         iters=self.iters_for(workload), interval=self.interval,
                         policy=policy, level=self.level, group_size=self.group_size,
                         seed=self.seed ^ rep, fault_plan=self.plan() if faulted else None,
                         cost_model=CostModel.from_dict(self.cost_model))

    def resolved(self):
        out = asdict(self)
        out["cost_model"] = asdict(CostModel.from_dict(self.cost_model))
        out["fault_plan"] = asdict(self.plan())
        out["inputs"] = {w: self.input_for(w) for w in self.workloads}
        out["iters"] = {w: self.iters_for(w) for w in self.workloads}
        return out


def fmt_time(x):
    return repr(float(x))


@dataclass
class SuiteReport:
    rows: list
    per_rank: list
    errors: list
    findings: "Findings" = None
    paths: dict = field(default_factory=dict)


def _row(keys, tb):
    return keys + [fmt_time(getattr(tb, c)) for c in CATEGORIES] + [fmt_time(tb.total)]


def run_suite(config, out_dir=None, progress=None):
    """Run every cell; write ``results.csv``, ``summary.txt`` and ``config.resolved.json``."""
    if isinstance(config, dict):
        config = ExperimentConfig.from_dict(config)
    rows, per_rank, errors = [], [], []
    for cell in config.cells():
        workload, policy, nranks, faulted, rep = cell
        keys = [workload, policy, str(nranks), config.input_for(workload),
                str(faulted).lower(), str(rep)]
        try:
            rec = run(config.run_config(*cell))
        except Exception as exc:  # one bad cell must not sink the sweep
            log.warning("cell %s failed: %s", keys, exc)
            errors.append(keys + [f"{type(exc).__name__}: {exc}"])
            continue
        keys[3] = rec.input
        # the reported total is the slowest rank's own total
        crit = rec.breakdown
        total = max(tb.total for tb in rec.per_rank)
        rows.append(keys + [fmt_time(getattr(crit, c)) for c in CATEGORIES] + [fmt_time(total)])
        for r, tb in enumerate(rec.per_rank):
            per_rank.append(_row(keys + [str(r)], tb))
        if progress:
            progress(keys)
    report = SuiteReport(rows, per_rank, errors)
    report.findings = summarize_text(_csv_text(CSV_HEADER, rows))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "results": out / "results.csv",
            "per_rank": out / "results_per_rank.csv",
            "summary": out / "summary.txt",
            "config": out / "config.resolved.json",
        }
        paths["results"].write_text(_csv_text(CSV_HEADER, rows))
        paths["per_rank"].write_text(_csv_text(PER_RANK_HEADER, per_rank))
        paths["summary"].write_text(render_summary(report.findings, rows))
        paths["config"].write_text(json.dumps(config.resolved(), indent=2, sort_keys=True) + "\n")
        if errors:
            paths["errors"] = out / "errors.csv"
            paths["errors"].write_text(_csv_text(KEYS + ["error"], errors))
        report.paths = paths
    return report


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


# --- summary ---------------------------------------------------------------

@dataclass
class ScaleFinding:
    workload: str
    nranks: int
    ulfm_over_reinit: float = None
    restart_over_reinit: float = None
    ckpt_share: float = None


@dataclass
class Findings:
    scales: list = field(default_factory=list)
    # (workload, policy) -> "increasing" | "constant" | "decreasing" | "mixed"
    trends: dict = field(default_factory=dict)
    # (workload, policy, nranks, faulted) -> mean breakdown dict
    means: dict = field(default_factory=dict)

    @property
    def empty(self):
        return not self.means


def _trend(values):
    if len(values) < 2:
        return "constant"
    diffs = [b - a for a, b in zip(values, values[1:])]
    if all(d == 0 for d in diffs):
        return "constant"
    if all(d > 0 for d in diffs):
        return "increasing"
    if all(d < 0 for d in diffs):
        return "decreasing"
    return "mixed"


def _ratio(a, b):
    if a is None or b is None:
        return None
    return a / b if b else float("inf") if a else None


def summarize(source):
    """Findings from a suite CSV given as a path or an open file."""
    text = source.read() if hasattr(source, "read") else Path(source).read_text()
    return summarize_text(text)


def summarize_text(text):
    if not text.strip():
        return Findings()
    reader = csv.DictReader(io.StringIO(text))
    missing = set(CSV_HEADER) - set(reader.fieldnames or [])
    if missing:
        raise ValueError(f"CSV missing columns: {sorted(missing)}")
    groups = {}
    for row in reader:
        key = (row["workload"], row["policy"], int(row["nranks"]), row["faulted"] == "true")
        groups.setdefault(key, []).append(row)
    out = Findings()
    for key, rows in sorted(groups.items()):
        out.means[key] = {c: statistics.fmean(float(r[c]) for r in rows)
                          for c in list(CATEGORIES) + ["total"]}
    scales = sorted({(w, n) for w, _, n, _ in groups})
    for w, n in scales:
        rec = {p: out.means.get((w, p, n, True), {}).get("recovery") for p in POLICIES}
        f = ScaleFinding(w, n, _ratio(rec["ulfm-fti"], rec["reinit-fti"]),
                         _ratio(rec["restart-fti"], rec["reinit-fti"]))
        shares = [(m["ckpt_write"] + m["ckpt_read"]) / m["total"]
                  for (w2, _, n2, _), m in out.means.items() if (w2, n2) == (w, n) and m["total"]]
        f.ckpt_share = statistics.fmean(shares) if shares else None
        out.scales.append(f)
    for w, p in sorted({(w, p) for w, p, _, _ in groups}):
        faulted = sorted((n, m["recovery"]) for (w2, p2, n, fl), m in out.means.items()
                         if (w2, p2) == (w, p) and fl)
        if faulted:
            out.trends[(w, p)] = _trend([v for _, v in faulted])
    return out


def render_summary(findings, rows=None):
    if findings.empty:
        return "no results\n"
    lines = ["mean virtual time per configuration",
             f"{'workload':<8} {'policy':<12} {'nranks':>6} {'faulted':<7} "
             + " ".join(f"{c:>12}" for c in list(CATEGORIES) + ["total"])]
    for (w, p, n, fl), m in findings.means.items():
        lines.append(f"{w:<8} {p:<12} {n:>6} {str(fl).lower():<7} "
                     + " ".join(f"{m[c]:>12.1f}" for c in list(CATEGORIES) + ["total"]))
    lines += ["", "recovery ratios (faulted runs) and checkpoint share of total",
              f"{'workload':<8} {'nranks':>6} {'ulfm/reinit':>12} {'restart/reinit':>15} "
              f"{'ckpt share':>11}"]
    show = lambda v, spec: "-" if v is None else format(v, spec)  # noqa: E731
    for f in findings.scales:
        lines.append(f"{f.workload:<8} {f.nranks:>6} {show(f.ulfm_over_reinit, '12.2f')} "
                     f"{show(f.restart_over_reinit, '15.2f')} {show(f.ckpt_share, '11.3f')}")
    lines += ["", "recovery time trend over scale"]
    for (w, p), t in findings.trends.items():
        lines.append(f"{w:<8} {p:<12} {t}")
    return "\n".join(lines) + "\n"
