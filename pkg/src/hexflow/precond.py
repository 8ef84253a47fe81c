"""Block LDU preconditioner with explicitly approximated decoupling factors.

The inverse of the 2x2 block system factorizes into triangular factors
around the Schur complement S = A_cc - A_cf A_ff^{-1} A_fc.  The dense
decoupling factors G = -A_cf A_ff^{-1} and F = -A_ff^{-1} A_fc are
approximated row by row (column by column for F) on small index sets: the
restriction of the SPD matrix -A_ff to a set Q stays SPD, and the
restricted solve gives the minimum-energy approximation of the true
factor row supported on Q.  The product H = G A_ff F then yields the
sparse Schur approximation S = A_cc - H.

Application uses the factored form with inexact inner inverses for -A_ff
(incomplete Cholesky) and S (incomplete LU); the approximate G and F only
ever enter through H, never through the triangular application factors.

Stage 1 (factors, H, face-block factorization) depends only on the face
blocks and is reused across time steps; stage 2 (S and its factorization)
is rebuilt whenever A_cc changes.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .assembly import BlockSystem
from .patterns import PatternSet, base_pattern
from .sparse import (InnerFactorization, canonical, dense_spd_solve,
                     extract_principal_submatrix, ic_factorize, ilu_factorize,
                     take_row_ranges)

FILTRATION_MODES = ("none", "pre", "post-schur", "post-product")


@dataclass(frozen=True)
class DynamicConfig:
    """Knobs of the residual-driven pattern growth.

    Each sweep solves on the current set, prolongs the residual and adds
    at most ``n_add`` of its largest new entries, until ``n_ent`` entries
    were added in total or ``it_max`` sweeps have run (whichever first;
    ``it_max`` defaults to ``n_ent``, which never binds while progress is
    being made).
    """

    n_add: int = 1
    n_ent: int = 4
    it_max: int | None = None
    tau_filt: float = 0.0
    filtration: str = "none"

    def __post_init__(self):
        if self.n_add < 1:
            raise ValueError("n_add must be >= 1")
        if self.n_ent < 0:
            raise ValueError("n_ent must be >= 0")
        if self.it_max is not None and self.it_max < 1:
            raise ValueError("it_max must be >= 1")
        if self.filtration not in FILTRATION_MODES:
            raise ValueError(f"filtration must be one of {FILTRATION_MODES}")

    @property
    def sweep_limit(self) -> int:
        return self.it_max if self.it_max is not None else max(self.n_ent, 1)


def solve_restricted_row(A_ff: sp.csr_matrix, rhs: np.ndarray,
                         idx: np.ndarray) -> np.ndarray:
    """Minimum-energy approximation of (-A_ff)^{-1} rhs supported on idx.

    Solves the restriction of -A_ff to idx and prolongs the solution back
    to full length; the restricted residual of the result vanishes.
    """
    n = A_ff.shape[0]
    out = np.zeros(n)
    if idx.size:
        sub = extract_principal_submatrix(A_ff, idx)
        out[idx] = dense_spd_solve(-sub, rhs[idx])
    return out


def _restricted_solve(A_ff, rhs_idx, rhs_val, idx):
    """Dense restricted solve with a sparse right-hand side; values on idx."""
    sub = extract_principal_submatrix(A_ff, idx)
    b = np.zeros(idx.size)
    pos = np.searchsorted(idx, rhs_idx)
    hit = (pos < idx.size)
    hit[hit] &= idx[pos[hit]] == rhs_idx[hit]
    b[pos[hit]] = rhs_val[hit]
    return dense_spd_solve(-sub, b)


def _prolonged_residual(A_csc, rhs_idx, rhs_val, idx, x):
    """Support and values of rhs + A_ff R^T x, evaluated sparsely."""
    take, owner = take_row_ranges(A_csc.indptr, idx)
    touched = A_csc.indices[take]
    cand = np.unique(np.concatenate([rhs_idx, touched]))
    r = np.zeros(cand.size)
    r[np.searchsorted(cand, rhs_idx)] = rhs_val
    np.add.at(r, np.searchsorted(cand, touched), A_csc.data[take] * x[owner])
    return cand, r


def grow_pattern_dynamic(A_ff: sp.csr_matrix, rhs_idx, rhs_val,
                         cfg: DynamicConfig, A_csc=None):
    """Residual-driven enlargement of one starting set (its rhs pattern).

    Returns the final index set and the restricted solution on it.  Ties
    when picking the largest residual entries break deterministically by
    (magnitude descending, index ascending); entries already in the set
    are never candidates, and a sweep that finds none stops the growth.
    """
    if A_csc is None:
        A_csc = A_ff.tocsc()
    idx = np.unique(np.asarray(rhs_idx, dtype=np.int64))
    x = _restricted_solve(A_ff, rhs_idx, rhs_val, idx)
    n_prog, k = 0, 0
    while n_prog < cfg.n_ent and k < cfg.sweep_limit:
        k += 1
        n = min(cfg.n_add, cfg.n_ent - n_prog)
        cand, r = _prolonged_residual(A_csc, rhs_idx, rhs_val, idx, x)
        fresh = ~np.isin(cand, idx)
        new, rnew = cand[fresh], np.abs(r[fresh])
        keep = rnew > 0
        new, rnew = new[keep], rnew[keep]
        if new.size == 0:
            break
        order = np.lexsort((new, -rnew))[:n]
        idx = np.sort(np.concatenate([idx, new[order]]))
        n_prog += order.size
        x = _restricted_solve(A_ff, rhs_idx, rhs_val, idx)
    return idx, x


def filter_rows(M: sp.csr_matrix, tau: float, keep_diagonal: bool = True) -> sp.csr_matrix:
    """Drop row entries below tau times the row Euclidean norm.

    Diagonal entries survive any threshold so downstream factorizations
    cannot lose their pivots.
    """
    if tau <= 0:
        return M
    M = canonical(M).copy()
    for i in range(M.shape[0]):
        lo, hi = M.indptr[i], M.indptr[i + 1]
        if lo == hi:
            continue
        vals = M.data[lo:hi]
        small = np.abs(vals) < tau * np.linalg.norm(vals)
        if keep_diagonal:
            small &= M.indices[lo:hi] != i
        vals[small] = 0.0
    M.eliminate_zeros()
    return M


def _filter_vector(vals: np.ndarray, tau: float) -> np.ndarray:
    if tau <= 0:
        return vals
    out = vals.copy()
    out[np.abs(out) < tau * np.linalg.norm(out)] = 0.0
    return out


@dataclass
class Stage1:
    """Once-per-simulation artifacts: factors, their product, face solver."""

    G: sp.csr_matrix                 # restriction-like factor, cells x faces
    F: sp.csr_matrix                 # prolongation-like factor, faces x cells
    H: sp.csr_matrix                 # G A_ff F, cells x cells
    face_inner: InnerFactorization   # incomplete Cholesky of -A_ff
    pattern_sizes: np.ndarray


@dataclass
class Stage2:
    """Per-time-step artifacts: Schur approximation and its factorization."""

    S: sp.csr_matrix
    schur_inner: InnerFactorization


def _factor_rows_for_range(A_ff, A_csc, A_cf, A_fc_csc, sets, dynamic, tau, ms):
    out = []
    for m in ms:
        g_idx = A_cf.indices[A_cf.indptr[m]:A_cf.indptr[m + 1]].astype(np.int64)
        g_val = A_cf.data[A_cf.indptr[m]:A_cf.indptr[m + 1]]
        if dynamic is not None:
            idx, g = grow_pattern_dynamic(A_ff, g_idx, g_val, dynamic, A_csc)
        else:
            idx = sets[m]
            g = _restricted_solve(A_ff, g_idx, g_val, idx)
        f_idx = A_fc_csc.indices[A_fc_csc.indptr[m]:A_fc_csc.indptr[m + 1]].astype(np.int64)
        f_val = A_fc_csc.data[A_fc_csc.indptr[m]:A_fc_csc.indptr[m + 1]]
        f = _restricted_solve(A_ff, f_idx, f_val, idx)
        out.append((idx, _filter_vector(g, tau), _filter_vector(f, tau)))
    return out


def build_stage1(system: BlockSystem, *, patterns: PatternSet | None = None,
                 dynamic: DynamicConfig | None = None, tau_filt: float | None = None,
                 filtration: str | None = None, face_drop_tol: float = 0.0,
                 no_fill: bool = False, n_workers: int = 1) -> Stage1:
    """Compute the approximate decoupling factors, their product and the
    inner face-block factorization.

    Exactly one of ``patterns`` (base/static sets) or ``dynamic`` must be
    given; the dynamic variant grows each cell's set from its balance-row
    pattern.  Per-cell work is independent, so it is fanned out over
    ``n_workers`` threads and merged back in cell order, making the result
    identical for any worker count.
    """
    if (patterns is None) == (dynamic is None):
        raise ValueError("give exactly one of patterns or dynamic")
    if filtration is None:
        filtration = dynamic.filtration if dynamic is not None else "none"
    if tau_filt is None:
        tau_filt = dynamic.tau_filt if dynamic is not None else 0.0
    if filtration not in FILTRATION_MODES:
        raise ValueError(f"filtration must be one of {FILTRATION_MODES}")

    A_ff, A_cf, A_fc = system.A_ff, system.A_cf, system.A_fc
    n_c, n_f = A_cf.shape[0], A_ff.shape[0]
    A_csc = A_ff.tocsc()
    A_fc_csc = A_fc.tocsc()
    sets = patterns.sets if patterns is not None else None
    pre_tau = tau_filt if filtration == "pre" else 0.0

    chunks = np.array_split(np.arange(n_c), max(1, n_workers))
    if n_workers <= 1:
        results = [_factor_rows_for_range(A_ff, A_csc, A_cf, A_fc_csc, sets,
                                          dynamic, pre_tau, ms) for ms in chunks]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            futures = [pool.submit(_factor_rows_for_range, A_ff, A_csc, A_cf,
                                   A_fc_csc, sets, dynamic, pre_tau, ms)
                       for ms in chunks]
            results = [f.result() for f in futures]

    rows, cols, g_vals, f_vals, sizes = [], [], [], [], []
    for m, (idx, g, f) in enumerate(r for chunk in results for r in chunk):
        rows.append(np.full(idx.size, m, dtype=np.int64))
        cols.append(idx)
        g_vals.append(g)
        f_vals.append(f)
        sizes.append(idx.size)
    rows = np.concatenate(rows) if rows else np.empty(0, dtype=np.int64)
    cols = np.concatenate(cols) if cols else np.empty(0, dtype=np.int64)
    G = canonical(sp.coo_matrix((np.concatenate(g_vals) if g_vals else [],
                                 (rows, cols)), shape=(n_c, n_f)))
    F = canonical(sp.coo_matrix((np.concatenate(f_vals) if f_vals else [],
                                 (cols, rows)), shape=(n_f, n_c)))
    H = canonical(G @ A_ff @ F)
    if filtration == "post-product":
        H = filter_rows(H, tau_filt)
    face_inner = ic_factorize(-A_ff, face_drop_tol, no_fill=no_fill)
    return Stage1(G, F, H, face_inner, np.array(sizes))


def build_stage2(A_cc: sp.csr_matrix, stage1: Stage1, *, tau_filt: float = 0.0,
                 filtration: str = "none", schur_drop_tol: float = 0.0,
                 no_fill: bool = False) -> Stage2:
    """Schur approximation S = A_cc - H and its inner factorization."""
    S = canonical(A_cc - stage1.H)
    if filtration == "post-schur":
        S = filter_rows(S, tau_filt)
    return Stage2(S, ilu_factorize(S, schur_drop_tol, no_fill=no_fill))


@dataclass
class BlockLDUPreconditioner:
    """Two-stage factored-inverse preconditioner for the block system."""

    system: BlockSystem
    stage1: Stage1
    stage2: Stage2 | None = None
    settings: dict = field(default_factory=dict)

    @classmethod
    def build(cls, system: BlockSystem, *, patterns=None, dynamic=None,
              tau_filt=None, filtration=None, face_drop_tol=0.0,
              schur_drop_tol=0.0, no_fill=False, n_workers=1):
        s1 = build_stage1(system, patterns=patterns, dynamic=dynamic,
                          tau_filt=tau_filt, filtration=filtration,
                          face_drop_tol=face_drop_tol, no_fill=no_fill,
                          n_workers=n_workers)
        if filtration is None and dynamic is not None:
            filtration = dynamic.filtration
        if tau_filt is None and dynamic is not None:
            tau_filt = dynamic.tau_filt
        pre = cls(system, s1, settings=dict(
            tau_filt=tau_filt or 0.0, filtration=filtration or "none",
            schur_drop_tol=schur_drop_tol, no_fill=no_fill))
        pre.refresh(system)
        return pre

    def refresh(self, system: BlockSystem) -> None:
        """Rebuild stage 2 against a (possibly updated) cell block."""
        self.system = system
        self.stage2 = build_stage2(
            system.A_cc, self.stage1,
            tau_filt=self.settings.get("tau_filt", 0.0),
            filtration=self.settings.get("filtration", "none"),
            schur_drop_tol=self.settings.get("schur_drop_tol", 0.0),
            no_fill=self.settings.get("no_fill", False))

    def apply(self, r: np.ndarray) -> np.ndarray:
        """Factored-inverse action; G and F are not used here."""
        if self.stage2 is None:
            raise RuntimeError("stage 2 has not been built; call refresh()")
        n_f = self.system.n_free_faces
        r_f, r_c = r[:n_f], r[n_f:]
        t_f = -self.stage1.face_inner.apply(r_f)
        t_c = self.stage2.schur_inner.apply(r_c - self.system.A_cf @ t_f)
        y_f = t_f + self.stage1.face_inner.apply(self.system.A_fc @ t_c)
        return np.concatenate([y_f, t_c])

    __call__ = apply

    @property
    def density(self) -> float:
        return compute_density(self, self.system)

    def dump(self, directory) -> None:
        """Write the factors, their product and the Schur approximation as
        Matrix Market files (G.mtx, F.mtx, H.mtx, S.mtx) for inspection."""
        import pathlib

        from .sparse import mm_write
        directory = pathlib.Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        mm_write(self.stage1.G, directory / "G.mtx")
        mm_write(self.stage1.F, directory / "F.mtx")
        mm_write(self.stage1.H, directory / "H.mtx")
        if self.stage2 is not None:
            mm_write(self.stage2.S, directory / "S.mtx")


def compute_density(pre: BlockLDUPreconditioner, system: BlockSystem) -> float:
    """Stored-entry ratio of the preconditioner parts to the system blocks."""
    if pre.stage2 is None:
        raise RuntimeError("stage 2 has not been built")
    num = (pre.stage1.face_inner.nnz_stored + system.A_fc.nnz
           + system.A_cf.nnz + pre.stage2.schur_inner.nnz_stored)
    den = system.A_ff.nnz + system.A_fc.nnz + system.A_cf.nnz + system.A_cc.nnz
    return num / den


def patterns_for(system: BlockSystem, kind: str, prototype: str = "A",
                 grid=None) -> PatternSet:
    """Base or static pattern set in the system's reduced numbering."""
    if kind == "base":
        return base_pattern(system.A_cf)
    if kind == "static":
        from .patterns import static_patterns
        return static_patterns(grid or system.grid, system.face_index, prototype)
    raise ValueError(f"unknown pattern kind {kind!r}")
