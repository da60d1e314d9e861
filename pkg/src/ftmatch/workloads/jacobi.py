"""5-point Jacobi relaxation on a 2D block decomposition with a hot top edge."""

import math

import numpy as np

from ..simcore import CONCAT, ORDERED_SUM

TAGS = {"n": 21, "s": 22, "w": 23, "e": 24}
OPPOSITE = {"n": "s", "s": "n", "w": "e", "e": "w"}


def decompose(n, ny, nx):
    """Most square ``(py, px)`` process grid that divides an ``ny`` x ``nx`` grid."""
    best = None
    for py in range(1, n + 1):
        if n % py:
            continue
        px = n // py
        if ny % py or nx % px:
            continue
        score = abs(math.log(py / px))
        if best is None or score < best[0]:
            best = (score, py, px)
    if best is None:
        raise ValueError(f"jacobi: a {nx}x{ny} grid has no block decomposition over {n} ranks")
    return best[1], best[2]


class Jacobi2D:
    name = "jacobi"

    def __init__(self, dims, rank, size, hot=1.0):
        nx, ny = dims
        self.dims = (nx, ny)
        self.rank, self.size = rank, size
        self.py, self.px = decompose(size, ny, nx)
        self.h, self.w = ny // self.py, nx // self.px
        self.bi, self.bj = divmod(rank, self.px)
        self.n = self.h * self.w
        # both planes, halo included; plane k % 2 holds iterate k
        self.grid = np.zeros((2, self.h + 2, self.w + 2))
        self.it = np.zeros(1, dtype=np.int64)
        self.resid = np.zeros(1)
        if self.bi == 0:
            self.grid[:, 0, 1:-1] = hot
        self.scratch = np.zeros((self.h, self.w))

    def neighbours(self):
        out = {}
        if self.bi > 0:
            out["n"] = self.rank - self.px
        if self.bi < self.py - 1:
            out["s"] = self.rank + self.px
        if self.bj > 0:
            out["w"] = self.rank - 1
        if self.bj < self.px - 1:
            out["e"] = self.rank + 1
        return out

    def protected(self):
        return [("grid", self.grid), ("iter", self.it), ("resid", self.resid)]

    def setup(self, ctx):
        return
        yield

    def _halo(self, ctx, plane):
        comm = ctx.comm
        nbrs = self.neighbours()
        edges = {"n": plane[1, 1:-1], "s": plane[-2, 1:-1],
                 "w": plane[1:-1, 1], "e": plane[1:-1, -2]}
        for side, peer in nbrs.items():
            yield from comm.send(peer, np.ascontiguousarray(edges[side]), TAGS[side])
        for side, peer in nbrs.items():
            buf = np.frombuffer((yield from comm.recv(peer, TAGS[OPPOSITE[side]])))
            if side == "n":
                plane[0, 1:-1] = buf
            elif side == "s":
                plane[-1, 1:-1] = buf
            elif side == "w":
                plane[1:-1, 0] = buf
            else:
                plane[1:-1, -1] = buf

    def iterate(self, ctx, k):
        old, new = self.grid[(k - 1) % 2], self.grid[k % 2]
        yield from self._halo(ctx, old)
        s = old[:-2, 1:-1] + old[2:, 1:-1]
        s = s + old[1:-1, :-2]
        s = s + old[1:-1, 2:]
        new[1:-1, 1:-1] = 0.25 * s
        self.scratch[...] = new[1:-1, 1:-1] - old[1:-1, 1:-1]
        ctx.compute(6 * self.n)
        self.resid[0] = yield from ctx.comm.allreduce(self.scratch * self.scratch, ORDERED_SUM)
        self.it[0] = k

    def residual(self):
        return float(self.resid[0])

    def clobber(self):
        self.scratch.fill(np.nan)

    def finish(self, ctx):
        """``(checksum, assembled field)`` identical at every rank."""
        cur = self.grid[int(self.it[0]) % 2, 1:-1, 1:-1]
        checksum = yield from ctx.comm.allreduce(cur, ORDERED_SUM)
        blocks = yield from ctx.comm.allreduce(cur, CONCAT)
        nx, ny = self.dims
        field = blocks.reshape(self.py, self.px, self.h, self.w).transpose(0, 2, 1, 3)
        return checksum, field.reshape(ny, nx)
