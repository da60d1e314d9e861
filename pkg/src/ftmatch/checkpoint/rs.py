"""Systematic Reed-Solomon erasure code over GF(2^8).

The generator is ``[I; C]`` with ``C`` a Cauchy matrix, so every square
submatrix built from ``k`` distinct rows is invertible and any ``k`` of the
``k + m`` shards reconstruct the data.
"""

import numpy as np

PRIM = 0x11D  # x^8 + x^4 + x^3 + x^2 + 1


class TooManyErasures(ValueError):
    pass


def _tables():
    exp = np.zeros(512, dtype=np.uint8)
    log = np.zeros(256, dtype=np.int32)
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x <<= 1
        if x & 0x100:
            x ^= PRIM
    exp[255:510] = exp[:255]
    a = np.arange(256)
    mul = exp[(log[a][:, None] + log[a][None, :]) % 255].astype(np.uint8)
    mul[0, :] = 0
    mul[:, 0] = 0
    return exp, log, mul


EXP, LOG, MUL = _tables()


def gf_mul(a, b):
    return int(MUL[a, b])


def gf_inv(a):
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return int(EXP[255 - LOG[a]])


def gf_mat_inv(m):
    n = len(m)
    a = [list(row) + [1 if i == j else 0 for j in range(n)] for i, row in enumerate(m)]
    for col in range(n):
        piv = next((r for r in range(col, n) if a[r][col]), None)
        if piv is None:
            raise ValueError("singular matrix")
        a[col], a[piv] = a[piv], a[col]
        inv = gf_inv(a[col][col])
        a[col] = [gf_mul(inv, v) for v in a[col]]
        for r in range(n):
            if r != col and a[r][col]:
                f = a[r][col]
                a[r] = [v ^ gf_mul(f, w) for v, w in zip(a[r], a[col])]
    return [row[n:] for row in a]


def _matmul(coeffs, blocks):
    """Rows of GF coefficients times stacked byte blocks."""
    out = np.zeros((len(coeffs), blocks.shape[1]), dtype=np.uint8)
    for i, row in enumerate(coeffs):
        acc = out[i]
        for c, blk in zip(row, blocks):
            if c:
                acc ^= MUL[c][blk]
    return out


class ReedSolomon:
    def __init__(self, data_shards, parity_shards=None):
        if data_shards < 1:
            raise ValueError("need at least one data shard")
        if parity_shards is None:
            parity_shards = -(-data_shards // 2)
        if data_shards + parity_shards > 256:
            raise ValueError("GF(256) supports at most 256 shards")
        self.k = data_shards
        self.m = parity_shards
        self.parity_matrix = [[gf_inv((self.k + i) ^ j) for j in range(self.k)]
                              for i in range(self.m)]

    @property
    def n(self):
        return self.k + self.m

    def _row(self, idx):
        if idx < self.k:
            return [1 if j == idx else 0 for j in range(self.k)]
        return self.parity_matrix[idx - self.k]

    @staticmethod
    def _stack(shards):
        blocks = [np.frombuffer(bytes(s), dtype=np.uint8) for s in shards]
        if len({b.size for b in blocks}) > 1:
            raise ValueError("shards must have equal length")
        return np.stack(blocks) if blocks else np.zeros((0, 0), dtype=np.uint8)

    def encode(self, data):
        """Parity shards for ``k`` equal-length data shards."""
        if len(data) != self.k:
            raise ValueError(f"expected {self.k} data shards, got {len(data)}")
        blocks = self._stack(data)
        return [bytes(row) for row in _matmul(self.parity_matrix, blocks)]

    def decode(self, shards):
        """Recover the ``k`` data shards.

        ``shards`` is either a mapping ``index -> bytes`` or a length ``n``
        sequence with ``None`` marking erased shards.
        """
        if not isinstance(shards, dict):
            if len(shards) != self.n:
                raise ValueError(f"expected {self.n} shard slots, got {len(shards)}")
            shards = {i: s for i, s in enumerate(shards) if s is not None}
        present = sorted(i for i in shards if 0 <= i < self.n)
        if len(present) < self.k:
            raise TooManyErasures(f"{self.n - len(present)} erasures, at most {self.m} recoverable")
        if all(i in shards for i in range(self.k)):
            return [bytes(shards[i]) for i in range(self.k)]
        use = present[:self.k]
        inv = gf_mat_inv([self._row(i) for i in use])
        blocks = self._stack([shards[i] for i in use])
        return [bytes(row) for row in _matmul(inv, blocks)]


def rs_encode(data_shards, parity_shards=None):
    return ReedSolomon(len(data_shards), parity_shards).encode(data_shards)


def rs_decode(shards, data_shards, parity_shards=None):
    return ReedSolomon(data_shards, parity_shards).decode(shards)
