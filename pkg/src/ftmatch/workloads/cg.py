"""Unpreconditioned conjugate gradient on a 7-point Laplacian, z-slab decomposition.

The system is ``A x = b`` with ``A = 6I - (sum of the six neighbours)`` and
zero Dirichlet boundaries, and ``b = A @ ones`` so the exact solution is all
ones.  Every dot product goes through ``ORDERED_SUM`` and the stencil is
evaluated in a fixed order, so the assembled iterate does not depend on how
many ranks computed it.
"""

import numpy as np

from ..simcore import CONCAT, ORDERED_SUM

TAG_DOWN = 11
TAG_UP = 12


def stencil(pad):
    """``A`` applied to the interior of a zero-padded block."""
    c = pad[1:-1, 1:-1, 1:-1]
    nb = pad[:-2, 1:-1, 1:-1] + pad[2:, 1:-1, 1:-1]
    nb = nb + pad[1:-1, :-2, 1:-1]
    nb = nb + pad[1:-1, 2:, 1:-1]
    nb = nb + pad[1:-1, 1:-1, :-2]
    nb = nb + pad[1:-1, 1:-1, 2:]
    return 6.0 * c - nb


class CGSolver:
    name = "cg"

    def __init__(self, dims, rank, size):
        nx, ny, nz = dims
        if nz % size:
            raise ValueError(f"cg: {nz} z-planes do not divide across {size} ranks")
        self.dims = (nx, ny, nz)
        self.rank, self.size = rank, size
        self.nzl = nz // size
        self.z0 = rank * self.nzl
        shape = (self.nzl, ny, nx)
        self.n = self.nzl * ny * nx
        self.x = np.zeros(shape)
        self.r = np.zeros(shape)
        self.p = np.zeros(shape)
        self.it = np.zeros(1, dtype=np.int64)
        self.rho = np.zeros(1)
        # transients, rebuilt every iteration
        self.pad = np.zeros((self.nzl + 2, ny + 2, nx + 2))
        self.ap = np.zeros(shape)
        self.b = self._rhs()

    def _rhs(self):
        nx, ny, nz = self.dims
        ones = np.zeros((self.nzl + 2, ny + 2, nx + 2))
        lo, hi = self.z0 - 1, self.z0 + self.nzl
        ones[1:-1, 1:-1, 1:-1] = 1.0
        if lo >= 0:
            ones[0, 1:-1, 1:-1] = 1.0
        if hi < nz:
            ones[-1, 1:-1, 1:-1] = 1.0
        return stencil(ones)

    def protected(self):
        return [("x", self.x), ("r", self.r), ("p", self.p), ("iter", self.it),
                ("rho", self.rho)]

    def setup(self, ctx):
        self.r[...] = self.b
        self.p[...] = self.b
        self.rho[0] = yield from self._dot(ctx, self.r, self.r)

    def _dot(self, ctx, a, b):
        ctx.compute(2 * self.n)
        return (yield from ctx.comm.allreduce(a * b, ORDERED_SUM))

    def _halo(self, ctx, v):
        comm = ctx.comm
        pad = self.pad
        # rebuilt in full each time so nothing in the buffer outlives an iteration
        pad.fill(0.0)
        pad[1:-1, 1:-1, 1:-1] = v
        if self.rank > 0:
            yield from comm.send(self.rank - 1, v[0], TAG_DOWN)
        if self.rank < self.size - 1:
            yield from comm.send(self.rank + 1, v[-1], TAG_UP)
        plane = pad.shape[1:]
        if self.rank > 0:
            buf = yield from comm.recv(self.rank - 1, TAG_UP)
            pad[0, 1:-1, 1:-1] = np.frombuffer(buf).reshape(plane[0] - 2, plane[1] - 2)
        if self.rank < self.size - 1:
            buf = yield from comm.recv(self.rank + 1, TAG_DOWN)
            pad[-1, 1:-1, 1:-1] = np.frombuffer(buf).reshape(plane[0] - 2, plane[1] - 2)

    def iterate(self, ctx, k):
        yield from self._halo(ctx, self.p)
        self.ap[...] = stencil(self.pad)
        ctx.compute(7 * self.n)
        pap = yield from self._dot(ctx, self.p, self.ap)
        alpha = self.rho[0] / pap
        self.x += alpha * self.p
        self.r -= alpha * self.ap
        ctx.compute(4 * self.n)
        rho_new = yield from self._dot(ctx, self.r, self.r)
        beta = rho_new / self.rho[0]
        self.p[...] = self.r + beta * self.p
        ctx.compute(2 * self.n)
        self.rho[0] = rho_new
        self.it[0] = k

    def residual(self):
        return float(np.sqrt(self.rho[0]))

    def clobber(self):
        self.pad.fill(np.nan)
        self.ap.fill(np.nan)

    def finish(self, ctx):
        """``(residual norm, assembled solution)`` identical at every rank."""
        full = yield from ctx.comm.allreduce(self.x, CONCAT)
        nx, ny, nz = self.dims
        return self.residual(), full.reshape(nz, ny, nx)
