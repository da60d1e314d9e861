"""Text and TSV renderings of a checkpoint set."""

import csv
import io

TSV_HEADER = ["name", "kind", "line", "base", "length", "locations"]


def _cells(obj):
    base = "" if obj.base is None else f"0x{obj.base:x}"
    length = "" if obj.length is None else str(obj.length)
    line = "-" if obj.line_no is None else str(obj.line_no)
    return [obj.name, "register" if obj.kind == "reg" else "memory", line, base, length,
            str(obj.n_locations)]


def render_tsv(cset):
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(TSV_HEADER)
    for obj in cset.objects():
        w.writerow(_cells(obj))
    return buf.getvalue()


def render_text(cset):
    objs = cset.objects()
    if not objs:
        return "no locations need checkpointing\n"
    lines = [f"{len(objs)} object(s) to checkpoint ({len(cset)} location(s)):"]
    for obj in objs:
        name, kind, line, base, length, n = _cells(obj)
        where = f" base={base} length={length}" if kind == "memory" else ""
        lines.append(f"  {name:<12} {kind:<8} line={line}{where} locations={n}")
    return "\n".join(lines) + "\n"


def render(cset, fmt="text"):
    if fmt == "tsv":
        return render_tsv(cset)
    if fmt == "text":
        return render_text(cset)
    raise ValueError(f"unknown report format {fmt!r}")
