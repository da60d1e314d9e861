"""Line-based dynamic instruction trace format.

Records and markers, one per line::

    R <seq> <line_no> <opcode> | reads: r:i=3,m:1008=2.5 | writes: r:t=7
    M <seq> LOOP_BEGIN
    M <seq> ITER_BEGIN <k>
    M <seq> ALLOC <hex-base> <len> <name>

Blank lines and lines starting with ``#`` are ignored.  Values are opaque
tokens compared by exact equality.
"""

import io
from dataclasses import dataclass, field


class ParseError(ValueError):
    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class MissingLoopBegin(ValueError):
    pass


REG = "reg"
MEM = "mem"


@dataclass(frozen=True)
class Location:
    kind: str
    id: object  # register name or integer address
    alloc_extent: tuple = field(default=None, compare=False, hash=False)

    def key(self):
        return f"r:{self.id}" if self.kind == REG else f"m:{self.id:x}"

    def contains(self, addr):
        if self.alloc_extent is None:
            return self.id == addr
        base, length = self.alloc_extent
        return base <= addr < base + length

    def __str__(self):
        return self.key()


def reg(name):
    return Location(REG, name)


def mem(addr, extent=None):
    return Location(MEM, addr, extent)


@dataclass(frozen=True)
class LoopBegin:
    pass


@dataclass(frozen=True)
class IterBegin:
    k: int


@dataclass(frozen=True)
class Alloc:
    base: int
    length: int
    name: str


@dataclass
class TraceRecord:
    seq: int
    line_no: int = None
    opcode: str = None
    reads: list = field(default_factory=list)   # [(Location, value)]
    writes: list = field(default_factory=list)
    marker: object = None

    def to_line(self):
        m = self.marker
        if isinstance(m, LoopBegin):
            return f"M {self.seq} LOOP_BEGIN"
        if isinstance(m, IterBegin):
            return f"M {self.seq} ITER_BEGIN {m.k}"
        if isinstance(m, Alloc):
            return f"M {self.seq} ALLOC {m.base:x} {m.length} {m.name}"
        fmt = lambda items: ",".join(f"{loc.key()}={v}" for loc, v in items)  # noqa: E731
        return (f"R {self.seq} {self.line_no} {self.opcode} | reads: {fmt(self.reads)}"
                f" | writes: {fmt(self.writes)}")


def _location(tok, lineno):
    kind, sep, ident = tok.partition(":")
    if not sep or not ident:
        raise ParseError(lineno, f"bad location {tok!r}")
    if kind == "r":
        return reg(ident)
    if kind == "m":
        try:
            return mem(int(ident, 16))
        except ValueError:
            raise ParseError(lineno, f"bad address {ident!r}") from None
    raise ParseError(lineno, f"unknown location kind {kind!r}")


def _operands(text, label, lineno):
    text = text.strip()
    if not text.startswith(label + ":"):
        raise ParseError(lineno, f"expected '{label}:'")
    body = text[len(label) + 1:].strip()
    out = []
    if not body:
        return out
    for item in body.split(","):
        k, sep, v = item.strip().partition("=")
        if not sep or not v or any(c.isspace() for c in v):
            raise ParseError(lineno, f"bad operand {item.strip()!r}")
        out.append((_location(k, lineno), v))
    return out


def _int(tok, lineno, what, base=10):
    try:
        return int(tok, base)
    except ValueError:
        raise ParseError(lineno, f"bad {what} {tok!r}") from None


def parse_line(line, lineno=0):
    line = line.strip()
    if not line or line.startswith("#"):
        return None
    head, *rest = line.split("|")
    parts = head.split()
    if parts[0] == "M":
        if rest or len(parts) < 3:
            raise ParseError(lineno, "malformed marker")
        seq = _int(parts[1], lineno, "seq")
        kind = parts[2]
        if kind == "LOOP_BEGIN" and len(parts) == 3:
            return TraceRecord(seq, marker=LoopBegin())
        if kind == "ITER_BEGIN" and len(parts) == 4:
            return TraceRecord(seq, marker=IterBegin(_int(parts[3], lineno, "iteration")))
        if kind == "ALLOC" and len(parts) == 6:
            base = _int(parts[3], lineno, "base", 16)
            length = _int(parts[4], lineno, "length")
            if length <= 0:
                raise ParseError(lineno, "allocation length must be positive")
            return TraceRecord(seq, marker=Alloc(base, length, parts[5]))
        raise ParseError(lineno, f"unknown marker {' '.join(parts[2:])!r}")
    if parts[0] != "R" or len(parts) != 4 or len(rest) != 2:
        raise ParseError(lineno, "expected 'R <seq> <line> <opcode> | reads: ... | writes: ...'")
    return TraceRecord(_int(parts[1], lineno, "seq"), _int(parts[2], lineno, "line number"),
                       parts[3], _operands(rest[0], "reads", lineno),
                       _operands(rest[1], "writes", lineno))


def parse_trace(stream):
    """Parse a trace from a file object, a string or an iterable of lines."""
    if isinstance(stream, str):
        stream = io.StringIO(stream)
    records = []
    loop_seen = False
    last_seq = last_iter = None
    for lineno, line in enumerate(stream, 1):
        rec = parse_line(line, lineno)
        if rec is None:
            continue
        if last_seq is not None and rec.seq <= last_seq:
            raise ParseError(lineno, f"seq {rec.seq} does not increase (previous {last_seq})")
        last_seq = rec.seq
        if isinstance(rec.marker, LoopBegin):
            if loop_seen:
                raise ParseError(lineno, "second LOOP_BEGIN")
            loop_seen = True
        elif isinstance(rec.marker, IterBegin):
            if not loop_seen:
                raise ParseError(lineno, "ITER_BEGIN before LOOP_BEGIN")
            if last_iter is not None and rec.marker.k <= last_iter:
                raise ParseError(lineno, f"iteration {rec.marker.k} does not increase")
            last_iter = rec.marker.k
        records.append(rec)
    if not loop_seen:
        raise MissingLoopBegin("trace has no LOOP_BEGIN marker")
    return records


def write_trace(records, fh):
    for rec in records:
        fh.write(rec.to_line() + "\n")
