"""Serial analogs of the workloads that emit dynamic instruction traces.

Each generator runs the real arithmetic on a tiny problem and records every
load and store at element granularity, so the trace carries true values.
"""

import numpy as np

from ..ckptfind.trace import Alloc, IterBegin, LoopBegin, TraceRecord, mem, reg

WORD = 8


class TraceWriter:
    def __init__(self):
        self.records = []
        self.seq = 0
        self._next_base = 0x10000

    def _emit(self, **kw):
        self.records.append(TraceRecord(self.seq, **kw))
        self.seq += 1

    def alloc(self, name, n, base=None):
        if base is None:
            base = self._next_base
            self._next_base += (n * WORD + 0xFFF) & ~0xFFF
        self._emit(marker=Alloc(base, n * WORD, name))
        return base

    def loop_begin(self):
        self._emit(marker=LoopBegin())

    def iter_begin(self, k):
        self._emit(marker=IterBegin(k))

    def op(self, line, opcode, reads=(), writes=()):
        self._emit(line_no=line, opcode=opcode,
                   reads=[(loc, _tok(v)) for loc, v in reads],
                   writes=[(loc, _tok(v)) for loc, v in writes])


def _tok(v):
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


class Array:
    """A traced 1-D float array at a fixed base address."""

    def __init__(self, tw, name, n, base=None):
        self.name = name
        self.base = tw.alloc(name, n, base)
        self.v = np.zeros(n)

    def loc(self, i):
        return mem(self.base + WORD * int(i))

    def at(self, i):
        return self.loc(i), self.v[i]


def cg_trace(dims=(3, 3, 3), iters=4):
    """CG on a tiny 7-point Laplacian; ``Ap`` is allocated inside the loop."""
    nx, ny, nz = dims
    n = nx * ny * nz
    tw = TraceWriter()
    idx = lambda i, j, k: (k * ny + j) * nx + i  # noqa: E731

    def nbrs(c):
        k, rem = divmod(c, nx * ny)
        j, i = divmod(rem, nx)
        out = []
        for di, dj, dk in ((0, 0, -1), (0, 0, 1), (0, -1, 0), (0, 1, 0), (-1, 0, 0), (1, 0, 0)):
            a, b, d = i + di, j + dj, k + dk
            if 0 <= a < nx and 0 <= b < ny and 0 <= d < nz:
                out.append(idx(a, b, d))
        return out

    b = Array(tw, "b", n)
    x = Array(tw, "x", n)
    r = Array(tw, "r", n)
    p = Array(tw, "p", n)
    for c in range(n):
        b.v[c] = 6.0 - len(nbrs(c))
        tw.op(20, "store", writes=[b.at(c)])
    for c in range(n):
        tw.op(21, "store", writes=[x.at(c)])
        r.v[c] = b.v[c]
        tw.op(22, "copy", reads=[b.at(c)], writes=[r.at(c)])
        p.v[c] = r.v[c]
        tw.op(23, "copy", reads=[r.at(c)], writes=[p.at(c)])
    rho = 0.0
    tw.op(24, "mov", writes=[(reg("rho"), rho)])
    for c in range(n):
        new = rho + r.v[c] * r.v[c]
        tw.op(25, "fma", reads=[r.at(c), (reg("rho"), rho)], writes=[(reg("rho"), new)])
        rho = new
    it = 0
    tw.op(27, "mov", writes=[(reg("iter"), it)])
    tw.loop_begin()
    ap_base = None
    for k in range(1, iters + 1):
        tw.iter_begin(k)
        ap = Array(tw, "Ap", n, ap_base)
        ap_base = ap.base
        for c in range(n):
            s = 6.0 * p.v[c]
            for m in nbrs(c):
                s -= p.v[m]
            ap.v[c] = s
            tw.op(31, "stencil", reads=[p.at(c)] + [p.at(m) for m in nbrs(c)],
                  writes=[ap.at(c)])
        pap = 0.0
        tw.op(32, "mov", writes=[(reg("pAp"), pap)])
        for c in range(n):
            new = pap + p.v[c] * ap.v[c]
            tw.op(33, "fma", reads=[p.at(c), ap.at(c), (reg("pAp"), pap)],
                  writes=[(reg("pAp"), new)])
            pap = new
        alpha = rho / pap
        tw.op(34, "fdiv", reads=[(reg("rho"), rho), (reg("pAp"), pap)],
              writes=[(reg("alpha"), alpha)])
        for c in range(n):
            old = x.v[c]
            x.v[c] = old + alpha * p.v[c]
            tw.op(35, "axpy", reads=[(x.loc(c), old), (reg("alpha"), alpha), p.at(c)],
                  writes=[x.at(c)])
        for c in range(n):
            old = r.v[c]
            r.v[c] = old - alpha * ap.v[c]
            tw.op(36, "axpy", reads=[(r.loc(c), old), (reg("alpha"), alpha), ap.at(c)],
                  writes=[r.at(c)])
        rnew = 0.0
        tw.op(37, "mov", writes=[(reg("rnew"), rnew)])
        for c in range(n):
            new = rnew + r.v[c] * r.v[c]
            tw.op(38, "fma", reads=[r.at(c), (reg("rnew"), rnew)], writes=[(reg("rnew"), new)])
            rnew = new
        beta = rnew / rho
        tw.op(39, "fdiv", reads=[(reg("rnew"), rnew), (reg("rho"), rho)],
              writes=[(reg("beta"), beta)])
        for c in range(n):
            old = p.v[c]
            p.v[c] = r.v[c] + beta * old
            tw.op(40, "xpay", reads=[r.at(c), (reg("beta"), beta), (p.loc(c), old)],
                  writes=[p.at(c)])
        tw.op(41, "mov", reads=[(reg("rnew"), rnew)], writes=[(reg("rho"), rnew)])
        rho = rnew
        tw.op(42, "add", reads=[(reg("iter"), it)], writes=[(reg("iter"), it + 1)])
        it += 1
    return tw.records


def jacobi_trace(dims=(6, 6), iters=5, hot=1.0):
    """Jacobi sweep over one two-plane grid array with halo."""
    nx, ny = dims
    w, h = nx + 2, ny + 2
    tw = TraceWriter()
    grid = Array(tw, "grid", 2 * h * w)
    cell = lambda plane, i, j: (plane * h + i) * w + j  # noqa: E731
    for plane in range(2):
        for i in range(h):
            for j in range(w):
                c = cell(plane, i, j)
                grid.v[c] = hot if (i == 0 and 0 < j < w - 1) else 0.0
                tw.op(10, "store", writes=[grid.at(c)])
    resid = 0.0
    tw.op(12, "mov", writes=[(reg("resid"), resid)])
    it = 0
    tw.op(13, "mov", writes=[(reg("iter"), it)])
    tw.loop_begin()
    for k in range(1, iters + 1):
        tw.iter_begin(k)
        old, new = (k - 1) % 2, k % 2
        resid = 0.0
        tw.op(20, "mov", writes=[(reg("resid"), resid)])
        for i in range(1, h - 1):
            for j in range(1, w - 1):
                srcs = [cell(old, i - 1, j), cell(old, i + 1, j),
                        cell(old, i, j - 1), cell(old, i, j + 1)]
                v = 0.25 * (((grid.v[srcs[0]] + grid.v[srcs[1]]) + grid.v[srcs[2]])
                            + grid.v[srcs[3]])
                c = cell(new, i, j)
                grid.v[c] = v
                tw.op(22, "stencil", reads=[grid.at(s) for s in srcs], writes=[grid.at(c)])
                d = v - grid.v[cell(old, i, j)]
                tw.op(23, "fsub", reads=[grid.at(c), grid.at(cell(old, i, j))],
                      writes=[(reg("d"), d)])
                acc = resid + d * d
                tw.op(24, "fma", reads=[(reg("d"), d), (reg("resid"), resid)],
                      writes=[(reg("resid"), acc)])
                resid = acc
        tw.op(26, "add", reads=[(reg("iter"), it)], writes=[(reg("iter"), it + 1)])
        it += 1
    return tw.records


TRACES = {"cg": cg_trace, "jacobi": jacobi_trace}


def workload_trace(workload, **kw):
    try:
        gen = TRACES[workload]
    except KeyError:
        raise ValueError(f"no trace generator for {workload!r}") from None
    return gen(**kw)
