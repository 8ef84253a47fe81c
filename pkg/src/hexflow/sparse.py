"""Sparse kernels, small dense SPD solves and incomplete factorizations.

Matrices are scipy CSR throughout.  ``canonical`` enforces the storage
convention used everywhere in this package: sorted indices, merged
duplicates and no explicitly stored zeros (so ``nnz`` counts match the
value pattern, not the structural one).
"""

from __future__ import annotations

import heapq
import logging

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular

from .errors import FactorizationError

logger = logging.getLogger(__name__)

#: relative size below which a pivot is replaced by a sign-preserving shift
PIVOT_GUARD = 1e-12


def canonical(A) -> sp.csr_matrix:
    """Return ``A`` as canonical CSR: sorted, duplicate-free, no stored zeros."""
    A = sp.csr_matrix(A)
    A.sum_duplicates()
    A.sort_indices()
    A.eliminate_zeros()
    return A


def spmv(A: sp.csr_matrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix-vector product with an explicit shape check."""
    x = np.asarray(x, dtype=float)
    if A.shape[1] != x.shape[0]:
        raise ValueError(f"shape mismatch: {A.shape} @ {x.shape}")
    return A @ x


def take_row_ranges(indptr, ids):
    """Positions of the CSR/CSC storage spans of the given rows/columns.

    Returns (take, owner) with ``take`` indexing into indices/data and
    ``owner`` giving the position in ``ids`` each entry belongs to.
    """
    counts = indptr[ids + 1] - indptr[ids]
    total = int(counts.sum())
    if total == 0:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    starts = indptr[ids] - np.concatenate([[0], np.cumsum(counts[:-1])])
    take = np.repeat(starts, counts) + np.arange(total)
    owner = np.repeat(np.arange(ids.size), counts)
    return take, owner


def extract_principal_submatrix(A: sp.csr_matrix, rows, cols=None) -> np.ndarray:
    """Dense copy of A[rows, cols] (cols defaults to rows).

    Index arrays must be in bounds; used for the small restricted solves,
    so the result is returned dense.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = rows if cols is None else np.asarray(cols, dtype=np.int64)
    n, m = A.shape
    if rows.size and (rows.min() < 0 or rows.max() >= n):
        raise IndexError("row index out of range")
    if cols.size and (cols.min() < 0 or cols.max() >= m):
        raise IndexError("column index out of range")
    out = np.zeros((rows.size, cols.size))
    if rows.size == 0 or cols.size == 0:
        return out
    take, owner = take_row_ranges(A.indptr, rows)
    entry_cols = A.indices[take]
    order = np.argsort(cols, kind="stable")
    pos = np.searchsorted(cols, entry_cols, sorter=order)
    hit = pos < cols.size
    hit[hit] &= cols[order[pos[hit]]] == entry_cols[hit]
    out[owner[hit], order[pos[hit]]] = A.data[take[hit]]
    return out


def dense_spd_solve(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve M x = b for dense SPD M by Cholesky.

    A failure here signals a bug upstream (a restricted block that is not
    SPD), so it is raised as :class:`FactorizationError` rather than
    silently regularized.
    """
    try:
        c, low = scipy.linalg.cho_factor(M, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise FactorizationError(f"dense Cholesky failed: {exc}") from exc
    return scipy.linalg.cho_solve((c, low), b, check_finite=False)


class InnerFactorization:
    """Triangular factors of an incomplete LU or Cholesky factorization.

    ``kind`` is "ilu" (unit lower L, upper U) or "ic" (lower L, applied as
    L L^T).  ``nnz_stored`` counts the entries a compact implementation
    would keep: the unit diagonal of L is not counted for ILU, and the IC
    factor is counted once for L and once for L^T minus the shared
    diagonal, so that a zero-fill factorization of A stores exactly
    ``A.nnz`` values.
    """

    def __init__(self, kind, L, U, pivot_shifts):
        self.kind = kind
        self.L = L
        self.U = U
        self.pivot_shifts = pivot_shifts

    @property
    def nnz_stored(self) -> int:
        n = self.L.shape[0]
        if self.kind == "ilu":
            return self.L.nnz - n + self.U.nnz
        return 2 * self.L.nnz - n

    def apply(self, r: np.ndarray) -> np.ndarray:
        """Approximate A^{-1} r via forward/backward triangular solves."""
        y = spsolve_triangular(self.L, r, lower=True,
                               unit_diagonal=(self.kind == "ilu"))
        return spsolve_triangular(self.U, y, lower=False)

    __call__ = apply


def _row_dicts(A: sp.csr_matrix):
    indptr, indices, data = A.indptr, A.indices, A.data
    for i in range(A.shape[0]):
        s, e = indptr[i], indptr[i + 1]
        yield i, indices[s:e], data[s:e]


def ilu_factorize(A: sp.csr_matrix, fill_tol: float, no_fill: bool = False) -> InnerFactorization:
    """Threshold incomplete LU of a square sparse matrix.

    Entries of the working row smaller in magnitude than
    ``fill_tol * ||row||_inf`` (infinity norm of the original row) are
    dropped; the diagonal is always kept.  ``fill_tol = 0`` keeps all fill
    and reproduces the exact LU factorization (no pivoting).  With
    ``no_fill`` the factor pattern is frozen to the pattern of ``A``.

    Pivots smaller than ``PIVOT_GUARD * ||row||_inf`` are replaced by a
    sign-preserving shift of that size; occurrences are logged and counted
    on the returned factorization.
    """
    A = canonical(A)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")
    if fill_tol < 0:
        raise ValueError("fill_tol must be >= 0")

    urows_idx: list[np.ndarray] = []
    urows_val: list[np.ndarray] = []
    udiag = np.empty(n)
    lrows: list[tuple[list, list]] = []
    shifts = 0

    for i, idx, val in _row_dicts(A):
        row = dict(zip(idx.tolist(), val.tolist()))
        norm = np.abs(val).max() if val.size else 1.0
        tau = fill_tol * norm
        allowed = set(idx.tolist()) if no_fill else None

        heap = [j for j in row if j < i]
        heapq.heapify(heap)
        seen = set(heap)
        l_idx, l_val = [], []
        while heap:
            k = heapq.heappop(heap)
            a_ik = row.pop(k)
            if abs(a_ik) < tau:
                continue
            lik = a_ik / udiag[k]
            uind, uval = urows_idx[k], urows_val[k]
            for t in range(uind.size):
                j = int(uind[t])
                if allowed is not None and j not in allowed:
                    continue
                if j in row:
                    row[j] -= lik * uval[t]
                else:
                    row[j] = -lik * uval[t]
                    if j < i and j not in seen:
                        heapq.heappush(heap, j)
                        seen.add(j)
            l_idx.append(k)
            l_val.append(lik)

        piv = row.pop(i, 0.0)
        if abs(piv) < PIVOT_GUARD * norm:
            piv = (PIVOT_GUARD * norm) if piv >= 0 else -(PIVOT_GUARD * norm)
            shifts += 1
        u_items = sorted((j, v) for j, v in row.items() if j > i and abs(v) >= tau)
        urows_idx.append(np.array([j for j, _ in u_items], dtype=np.int64))
        urows_val.append(np.array([v for _, v in u_items]))
        udiag[i] = piv
        lrows.append((l_idx, l_val))

    if shifts:
        logger.warning("ilu_factorize: guarded %d small pivots", shifts)

    L = _rows_to_csr(((li + [i], lv + [1.0]) for i, (li, lv) in enumerate(lrows)), n)
    U = _rows_to_csr((([i, *urows_idx[i]], [udiag[i], *urows_val[i]])
                      for i in range(n)), n)
    return InnerFactorization("ilu", L, U, shifts)


def ic_factorize(A: sp.csr_matrix, fill_tol: float, no_fill: bool = False) -> InnerFactorization:
    """Threshold incomplete Cholesky of a sparse SPD matrix.

    Same drop and pivot-guard conventions as :func:`ilu_factorize`; the
    result applies (L L^T)^{-1}.
    """
    A = canonical(A)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")

    cols: list[list] = [[] for _ in range(n)]  # (row, value) per column of L
    lrows_idx: list[list] = []
    lrows_val: list[list] = []
    shifts = 0

    for i, idx, val in _row_dicts(A):
        norm = np.abs(val).max() if val.size else 1.0
        tau = fill_tol * norm
        sel = idx <= i
        row = dict(zip(idx[sel].tolist(), val[sel].tolist()))
        allowed = set(idx[sel].tolist()) if no_fill else None

        heap = [j for j in row if j < i]
        heapq.heapify(heap)
        seen = set(heap)
        l_idx, l_val = [], []
        while heap:
            k = heapq.heappop(heap)
            w = row.pop(k)
            if abs(w) < tau:
                continue
            lik = w / lrows_val[k][-1]  # diagonal of row k is stored last
            for j, ljk in cols[k]:
                if j <= k or j >= i:
                    continue
                if allowed is not None and j not in allowed:
                    continue
                if j in row:
                    row[j] -= lik * ljk
                else:
                    row[j] = -lik * ljk
                    if j not in seen:
                        heapq.heappush(heap, j)
                        seen.add(j)
            row[i] = row.get(i, 0.0) - lik * lik
            l_idx.append(k)
            l_val.append(lik)

        d = row.get(i, 0.0)
        if d < PIVOT_GUARD * norm:
            d = PIVOT_GUARD * norm
            shifts += 1
        l_idx.append(i)
        l_val.append(np.sqrt(d))
        order = np.argsort(l_idx)
        lrows_idx.append([l_idx[t] for t in order])
        lrows_val.append([l_val[t] for t in order])
        for j, v in zip(lrows_idx[-1][:-1], lrows_val[-1][:-1]):
            cols[j].append((i, v))

    if shifts:
        logger.warning("ic_factorize: guarded %d small/indefinite pivots", shifts)

    L = _rows_to_csr(zip(lrows_idx, lrows_val), n)
    return InnerFactorization("ic", L, L.T.tocsr(), shifts)


def _rows_to_csr(rows, n) -> sp.csr_matrix:
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for idx, val in rows:
        indices.extend(idx)
        data.extend(val)
        indptr.append(len(indices))
    return sp.csr_matrix((np.array(data), np.array(indices, dtype=np.int32),
                          np.array(indptr, dtype=np.int32)), shape=(n, n))


def ilu_apply(fac: InnerFactorization, r: np.ndarray) -> np.ndarray:
    """Apply an inner factorization to a residual vector."""
    return fac.apply(r)


def mm_write(A, path, symmetric: bool = False) -> None:
    """Write a matrix or vector in Matrix Market format (17 significant digits)."""
    if isinstance(A, np.ndarray):
        A = A.reshape(-1, 1) if A.ndim == 1 else A
        scipy.io.mmwrite(path, A, precision=17)
        return
    scipy.io.mmwrite(path, A, precision=17,
                     symmetry="symmetric" if symmetric else "general")


def mm_read(path) -> sp.csr_matrix:
    """Read a Matrix Market file as canonical CSR (vectors come back as n x 1)."""
    M = scipy.io.mmread(path)
    if isinstance(M, np.ndarray):
        return canonical(sp.csr_matrix(M))
    return canonical(M)
