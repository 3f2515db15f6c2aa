"""Binary linear algebra over GF(2).

Bit blocks are plain one-dimensional ``uint8`` numpy arrays holding 0/1.
Parity-check matrices are stored sparsely as Tanner-graph adjacency (CSR in
both orientations); rank and systematic decomposition run on a dense,
bit-packed copy.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numba
import numpy as np
import scipy.sparse as sp

from .errors import ConsistencyError, DimensionError, RankDeficient

__all__ = [
    "bitblock",
    "ParityCheckMatrix",
    "SystematicForm",
    "mat_vec_mul",
    "gf2_rank",
    "systematic_decompose",
    "vstack",
]


def bitblock(bits, n: int | None = None) -> np.ndarray:
    """Return a read-only ``uint8`` copy of ``bits`` after validating it.

    Raises ``DimensionError`` if the input is not one-dimensional, or if ``n``
    is given and the length differs, and ``ValueError`` on entries outside
    {0, 1}.
    """
    arr = np.array(bits, dtype=np.int64, copy=True)
    if arr.ndim != 1:
        raise DimensionError(f"bit block must be 1-D, got shape {arr.shape}")
    if n is not None and arr.shape[0] != n:
        raise DimensionError(f"expected {n} bits, got {arr.shape[0]}")
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise ValueError("bit block entries must be 0 or 1")
    out = arr.astype(np.uint8)
    out.flags.writeable = False
    return out


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


class ParityCheckMatrix:
    """Sparse binary ``m x n`` matrix with row and column adjacency views.

    Edges are numbered in row-major order: edge ``e`` joins check
    ``edge_chk[e]`` and variable ``edge_var[e]``; the edges of check ``j``
    are ``row_ptr[j]:row_ptr[j+1]`` and the edges of variable ``i`` are
    ``col_edges[col_ptr[i]:col_ptr[i+1]]``. Instances are immutable.
    """

    def __init__(self, m: int, n: int, rows: Sequence[Iterable[int]]):
        if m < 0 or n < 0:
            raise DimensionError("matrix dimensions must be non-negative")
        if len(rows) != m:
            raise DimensionError(f"expected {m} rows, got {len(rows)}")
        row_lists = []
        for j, r in enumerate(rows):
            idx = np.asarray(sorted(int(v) for v in r), dtype=np.int64)
            if idx.size and (idx[0] < 0 or idx[-1] >= n):
                raise DimensionError(f"row {j} has a column index outside [0, {n})")
            if idx.size > 1 and np.any(np.diff(idx) == 0):
                raise ConsistencyError(f"row {j} repeats a column index")
            row_lists.append(idx)
        self.m = int(m)
        self.n = int(n)
        degrees = np.array([r.size for r in row_lists], dtype=np.int64)
        row_ptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(degrees, out=row_ptr[1:])
        edge_var = (np.concatenate(row_lists) if row_lists
                    else np.zeros(0, dtype=np.int64)).astype(np.int64)
        edge_chk = np.repeat(np.arange(m, dtype=np.int64), degrees)
        # stable sort keeps checks ascending within each variable
        order = np.argsort(edge_var, kind="stable")
        col_ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(edge_var, minlength=n), out=col_ptr[1:])
        self.row_ptr = _frozen(row_ptr)
        self.edge_var = _frozen(edge_var)
        self.edge_chk = _frozen(edge_chk)
        self.col_ptr = _frozen(col_ptr)
        self.col_edges = _frozen(order.astype(np.int64))

    # constructors ---------------------------------------------------------

    @classmethod
    def from_dense(cls, dense) -> "ParityCheckMatrix":
        a = np.asarray(dense)
        if a.ndim != 2:
            raise DimensionError("dense matrix must be 2-D")
        if a.size and not np.isin(a, (0, 1)).all():
            raise ValueError("dense matrix entries must be 0 or 1")
        m, n = a.shape
        return cls(m, n, [np.flatnonzero(a[j]) for j in range(m)])

    @classmethod
    def from_adjacency(cls, m: int, n: int, rows, cols) -> "ParityCheckMatrix":
        """Build from both adjacency views, checking that they agree."""
        if len(cols) != n:
            raise DimensionError(f"expected {n} column lists, got {len(cols)}")
        H = cls(m, n, rows)
        for i, c in enumerate(cols):
            c = sorted(int(v) for v in c)
            if len(set(c)) != len(c):
                raise ConsistencyError(f"column {i} repeats a row index")
            if tuple(c) != H.cols[i]:
                raise ConsistencyError(
                    f"column {i} lists checks {c} but rows give {list(H.cols[i])}")
        return H

    # views ----------------------------------------------------------------

    @cached_property
    def rows(self) -> tuple[tuple[int, ...], ...]:
        ev = self.edge_var.tolist()
        rp = self.row_ptr.tolist()
        return tuple(tuple(ev[rp[j]:rp[j + 1]]) for j in range(self.m))

    @cached_property
    def cols(self) -> tuple[tuple[int, ...], ...]:
        chk = self.edge_chk[self.col_edges].tolist()
        cp = self.col_ptr.tolist()
        return tuple(tuple(chk[cp[i]:cp[i + 1]]) for i in range(self.n))

    @cached_property
    def row_degrees(self) -> np.ndarray:
        return _frozen(np.diff(self.row_ptr))

    @cached_property
    def col_degrees(self) -> np.ndarray:
        return _frozen(np.diff(self.col_ptr))

    @property
    def num_edges(self) -> int:
        return int(self.edge_var.size)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.m, self.n)

    @cached_property
    def csr(self) -> sp.csr_matrix:
        data = np.ones(self.num_edges, dtype=np.int64)
        return sp.csr_matrix((data, self.edge_var, self.row_ptr), shape=self.shape)

    def to_dense(self) -> np.ndarray:
        out = np.zeros(self.shape, dtype=np.uint8)
        out[self.edge_chk, self.edge_var] = 1
        return out

    def packed(self) -> np.ndarray:
        """Rows as little-endian bit-packed ``uint64`` words, shape ``(m, ceil(n/64))``."""
        return _pack_rows(self.to_dense())

    def permute_columns(self, source: Sequence[int]) -> "ParityCheckMatrix":
        """New matrix whose column ``i`` is this matrix's column ``source[i]``."""
        source = np.asarray(source, dtype=np.int64)
        if source.shape != (self.n,) or not np.array_equal(np.sort(source), np.arange(self.n)):
            raise DimensionError("source must be a permutation of range(n)")
        dest = np.empty(self.n, dtype=np.int64)
        dest[source] = np.arange(self.n)
        new_var = dest[self.edge_var]
        rows = [new_var[self.row_ptr[j]:self.row_ptr[j + 1]] for j in range(self.m)]
        return ParityCheckMatrix(self.m, self.n, rows)

    # identity -------------------------------------------------------------

    def _key(self):
        return (self.m, self.n, self.row_ptr.tobytes(), self.edge_var.tobytes())

    def __eq__(self, other):
        if not isinstance(other, ParityCheckMatrix):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __repr__(self):
        return f"ParityCheckMatrix(m={self.m}, n={self.n}, edges={self.num_edges})"


@dataclass(frozen=True)
class SystematicForm:
    """``H = A . (Hprime | E_m) . B`` with B given as a column permutation.

    Column ``s`` of ``(Hprime | E_m)`` is column ``perm[s]`` of ``A^-1 H``;
    the identity block sits on ``independent_positions`` of the original
    matrix, in row order ``perm[t:]``.
    """

    A: np.ndarray
    Hprime: np.ndarray
    perm: np.ndarray
    independent_positions: frozenset[int]

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def n(self) -> int:
        return self.perm.shape[0]

    def recompose(self) -> np.ndarray:
        m, t = self.Hprime.shape
        system = np.concatenate([self.Hprime, np.eye(m, dtype=np.uint8)], axis=1)
        # float32 is exact here: entries are sums of at most m < 2**24 ones
        prod = self.A.astype(np.float32) @ system.astype(np.float32)
        prod = (prod.astype(np.int64) & 1).astype(np.uint8)
        out = np.empty_like(prod)
        out[:, self.perm] = prod
        return out


def mat_vec_mul(H: ParityCheckMatrix, x) -> np.ndarray:
    """Syndrome ``H . x`` over GF(2)."""
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != H.n:
        raise DimensionError(f"vector length {x.shape} does not match n={H.n}")
    z = (H.csr @ x.astype(np.int64)) & 1
    return bitblock(z)


def vstack(mats: Sequence[ParityCheckMatrix]) -> ParityCheckMatrix:
    """Stack matrices of equal width vertically."""
    if not mats:
        raise DimensionError("nothing to stack")
    n = mats[0].n
    if any(h.n != n for h in mats):
        raise DimensionError("all matrices must have the same number of columns")
    rows = [r for h in mats for r in h.rows]
    return ParityCheckMatrix(len(rows), n, rows)


# packed elimination ------------------------------------------------------

def _pack_rows(dense: np.ndarray) -> np.ndarray:
    m, n = dense.shape
    words = max(1, -(-n // 64))
    padded = np.zeros((m, words * 64), dtype=np.uint8)
    padded[:, :n] = dense
    return np.packbits(padded, axis=1, bitorder="little").view(np.uint64).copy()


def _unpack_rows(packed: np.ndarray, n: int) -> np.ndarray:
    bits = np.unpackbits(packed.view(np.uint8), axis=1, bitorder="little")
    return bits[:, :n].copy()


@numba.njit(cache=True)
def _rank_kernel(rows):
    m, w = rows.shape
    used = np.zeros(m, dtype=np.bool_)
    rank = 0
    one = np.uint64(1)
    for c in range(w * 64):
        if rank == m:
            break
        wd = c >> 6
        bit = one << np.uint64(c & 63)
        piv = -1
        for r in range(m):
            if not used[r] and rows[r, wd] & bit:
                piv = r
                break
        if piv < 0:
            continue
        used[piv] = True
        rank += 1
        for r in range(piv + 1, m):
            if not used[r] and rows[r, wd] & bit:
                for k in range(wd, w):
                    rows[r, k] ^= rows[piv, k]
    return rank


@numba.njit(cache=True)
def _rref_kernel(rows, candidates, pivot_of_row):
    m, w = rows.shape
    one = np.uint64(1)
    rank = 0
    for idx in range(candidates.shape[0]):
        if rank == m:
            break
        c = candidates[idx]
        wd = c >> 6
        bit = one << np.uint64(c & 63)
        piv = -1
        for r in range(m):
            if pivot_of_row[r] < 0 and rows[r, wd] & bit:
                piv = r
                break
        if piv < 0:
            continue
        pivot_of_row[piv] = c
        rank += 1
        for r in range(m):
            if r != piv and rows[r, wd] & bit:
                for k in range(w):
                    rows[r, k] ^= rows[piv, k]
    return rank


def _as_dense(H) -> np.ndarray:
    if isinstance(H, ParityCheckMatrix):
        return H.to_dense()
    a = np.asarray(H, dtype=np.uint8)
    if a.ndim != 2:
        raise DimensionError("matrix must be 2-D")
    return a & 1


def gf2_rank(H) -> int:
    """Rank over GF(2) of a ``ParityCheckMatrix`` or dense 0/1 array."""
    dense = _as_dense(H)
    if dense.shape[0] == 0 or dense.shape[1] == 0:
        return 0
    return int(_rank_kernel(_pack_rows(dense)))


def systematic_decompose(H: ParityCheckMatrix, candidates: Sequence[int] | None = None
                         ) -> SystematicForm:
    """Reduce ``H`` to systematic form by row operations and a column permutation.

    Pivot columns are searched from the last column towards the first, and
    each pivot takes the topmost row that has not yet been used; rows are
    never swapped. With this order a matrix already shaped ``(H' | E_m)``
    decomposes with ``A = E_m`` and the identity permutation.

    ``candidates`` restricts the pivot search to the given columns (still
    scanned in descending index order). Raises ``RankDeficient`` if fewer
    than ``m`` pivots are found.
    """
    m, n = H.shape
    if candidates is None:
        cand = np.arange(n - 1, -1, -1, dtype=np.int64)
    else:
        cand = np.array(sorted({int(c) for c in candidates}, reverse=True), dtype=np.int64)
        if cand.size and (cand[-1] < 0 or cand[0] >= n):
            raise DimensionError("candidate column out of range")
    dense = H.to_dense()
    packed = _pack_rows(dense)
    pivot_of_row = np.full(m, -1, dtype=np.int64)
    rank = int(_rref_kernel(packed, cand, pivot_of_row)) if m else 0
    if rank < m:
        raise RankDeficient(f"matrix has GF(2) rank {rank} < m={m}")
    reduced = _unpack_rows(packed, n)
    pivots = pivot_of_row.copy()
    is_pivot = np.zeros(n, dtype=bool)
    is_pivot[pivots] = True
    free = np.flatnonzero(~is_pivot)
    perm = np.concatenate([free, pivots]).astype(np.int64)
    A = dense[:, pivots].copy()
    Hprime = reduced[:, free].copy()
    for arr in (A, Hprime, perm):
        arr.flags.writeable = False
    return SystematicForm(A=A, Hprime=Hprime, perm=perm,
                          independent_positions=frozenset(int(p) for p in pivots))
