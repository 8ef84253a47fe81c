"""RT0 elemental matrices and assembly of the 2x2 block flow system.

Unknowns are face pressures (Lagrange multipliers, one per non-eliminated
face) followed by cell pressures.  The assembled system

    [A_ff  A_fc] [pi]   [rhs_f]
    [A_cf  A_cc] [p ] = [rhs_c]

couples flux-continuity rows (one per free face) with per-cell mass
balance rows.  A_ff is symmetric negative definite; A_fc and A_cf are not
transposes of each other because the balance rows use the strong
inter-element flux, which ties each cell to its neighbors' faces.

Faces with a prescribed pressure are eliminated: their columns are moved
to the right-hand side and their rows dropped, which keeps -A_ff SPD.
Boundary faces without any prescription are no-flow.  Steady state is
requested with ``dt=math.inf``; the storage term is then dropped exactly.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import refelem
from .errors import AssemblyError, GeometryError, SingularSystemError
from .grid import BoundarySpec, ConductivityField, FluidRockProps, HexGrid
from .sparse import canonical

#: per-row relative threshold below which inverse-matrix dust is zeroed,
#: so regular elements keep their exact opposite-face-only coupling
_BINV_CLEAN = 1e-13


@dataclass(frozen=True)
class ElementMatrix:
    """Velocity mass matrix of one element, its inverse and row sums."""

    B: np.ndarray         # (6, 6), SPD
    Binv: np.ndarray      # (6, 6)
    row_sums: np.ndarray  # (6,), sums of Binv rows


@dataclass(frozen=True)
class ElementOperators:
    """Batched inverse elemental matrices for the whole grid."""

    Binv: np.ndarray      # (n_elems, 6, 6)
    row_sums: np.ndarray  # (n_elems, 6)
    diag: np.ndarray      # (n_elems, 6), Binv[e, i, i]


def _elemental_B_batch(coords, Kinv, gamma):
    pts, wts = refelem.gauss_points_3d()
    n = coords.shape[0]
    B = np.zeros((n, 6, 6))
    for p, w in zip(pts, wts):
        grads = refelem.shape_gradients(p)[0]
        J = refelem.jacobians(coords, grads)
        det = np.linalg.det(J)
        bad = np.flatnonzero(det <= 0)
        if bad.size:
            raise GeometryError(f"element {bad[0]} has a non-positive Jacobian")
        eta = refelem.rt0_basis(p)[0]                    # (6, 3)
        M = np.einsum("ecb,fb->ecf", J, eta)             # mapped basis columns
        B += w * np.einsum("eaf,eab,ebg->efg", M, Kinv, M) / det[:, None, None]
    B *= gamma
    return 0.5 * (B + B.transpose(0, 2, 1))


def element_operators(grid: HexGrid, field: ConductivityField,
                      gamma: float) -> ElementOperators:
    """Inverse elemental matrices B^{-1} for every element of the grid."""
    Kinv = np.linalg.inv(field.tensors)
    Kinv = 0.5 * (Kinv + Kinv.transpose(0, 2, 1))
    B = _elemental_B_batch(grid.elem_coords(), Kinv, gamma)
    Binv = np.linalg.inv(B)
    Binv = 0.5 * (Binv + Binv.transpose(0, 2, 1))
    scale = np.abs(Binv).max(axis=2, keepdims=True)
    Binv[np.abs(Binv) < _BINV_CLEAN * scale] = 0.0
    Binv = 0.5 * (Binv + Binv.transpose(0, 2, 1))
    rs = Binv.sum(axis=2)
    dg = Binv[:, np.arange(6), np.arange(6)]
    return ElementOperators(Binv, rs, dg)


def elemental_B(grid: HexGrid, e: int, K: np.ndarray, gamma: float) -> ElementMatrix:
    """Velocity mass matrix of element ``e`` for conductivity tensor ``K``."""
    K = np.asarray(K, dtype=float)
    Kinv = np.linalg.inv(K)
    Kinv = 0.5 * (Kinv + Kinv.T)
    coords = grid.elem_coords()[e:e + 1]
    B = _elemental_B_batch(coords, Kinv[None], gamma)[0]
    Binv = np.linalg.inv(B)
    Binv = 0.5 * (Binv + Binv.T)
    return ElementMatrix(B, Binv, Binv.sum(axis=1))


@dataclass(frozen=True)
class FluxWeights:
    """Strong inter-element flux through a shared face as a linear functional.

    q = own_p * p(own) + nb_p * p(neighbor) + own_pi . pi(faces of own)
        + nb_pi . pi(faces of neighbor), positive out of the owning element.
    """

    own_p: float
    nb_p: float
    own_pi: np.ndarray   # (6,), zero at the shared slot
    nb_pi: np.ndarray    # (6,), zero at the shared slot


def interelement_flux_coefficients(binv_own: np.ndarray, binv_nb: np.ndarray,
                                   local_own: int, local_nb: int) -> FluxWeights:
    """Weights of the flux through the face shared by two elements."""
    d_o = binv_own[local_own, local_own]
    d_n = binv_nb[local_nb, local_nb]
    den = d_o + d_n
    if den <= 0:
        raise AssemblyError("non-positive interface weight; elemental matrices "
                            "are not SPD")
    w_o, w_n = d_n / den, d_o / den
    own_pi = -w_o * binv_own[local_own].copy()
    own_pi[local_own] = 0.0
    nb_pi = w_n * binv_nb[local_nb].copy()
    nb_pi[local_nb] = 0.0
    return FluxWeights(w_o * binv_own[local_own].sum(),
                       -w_n * binv_nb[local_nb].sum(), own_pi, nb_pi)


@dataclass(frozen=True)
class BlockSystem:
    """Assembled blocks and right-hand side in reduced (free-face) numbering."""

    A_ff: sp.csr_matrix
    A_fc: sp.csr_matrix
    A_cf: sp.csr_matrix
    A_cc: sp.csr_matrix
    rhs_f: np.ndarray
    rhs_c: np.ndarray
    dt: float
    free_faces: np.ndarray        # global ids of the face unknowns
    face_index: np.ndarray        # global face -> reduced index, -1 eliminated
    dirichlet_faces: np.ndarray
    dirichlet_values: np.ndarray
    A_cc_steady: sp.csr_matrix
    accumulation: np.ndarray      # volume * storage coefficient per cell
    rhs_c_base: np.ndarray
    ops: ElementOperators
    grid: HexGrid

    @property
    def n_free_faces(self) -> int:
        return self.free_faces.size

    @property
    def n_cells(self) -> int:
        return self.A_cc.shape[0]

    @property
    def n_unknowns(self) -> int:
        return self.n_free_faces + self.n_cells

    def full_matrix(self) -> sp.csr_matrix:
        return canonical(sp.bmat([[self.A_ff, self.A_fc],
                                  [self.A_cf, self.A_cc]], format="csr"))

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_f, self.rhs_c])

    def split(self, u: np.ndarray):
        return u[:self.n_free_faces], u[self.n_free_faces:]

    def face_pressures(self, pi_reduced: np.ndarray) -> np.ndarray:
        """Full per-face pressure vector with prescribed values inserted."""
        out = np.empty(self.grid.n_faces)
        out[self.free_faces] = pi_reduced
        out[self.dirichlet_faces] = self.dirichlet_values
        return out


def assemble(grid: HexGrid, field: ConductivityField, props: FluidRockProps,
             bc: BoundarySpec, dt: float, p_prev: np.ndarray | None = None,
             source: np.ndarray | None = None) -> BlockSystem:
    """Assemble the block system for one time step (``dt=math.inf``: steady)."""
    if not dt > 0:
        raise ValueError("dt must be positive (math.inf for steady state)")
    n_e, n_f = grid.n_elems, grid.n_faces
    dirichlet, neumann = bc.resolve(grid)
    boundary = set(grid.boundary_faces.tolist())
    # wells may pin interior face pressures; prescribed fluxes stay on the hull
    for f in neumann:
        if f not in boundary:
            raise AssemblyError(f"face {f} with a prescribed flux is interior")
    if math.isinf(dt) and not dirichlet:
        raise SingularSystemError(
            "steady problem with no prescribed pressure has a constant "
            "nullspace; prescribe a pressure or use a finite dt")

    ops = element_operators(grid, field, props.gamma)
    Binv, rsums, diag = ops.Binv, ops.row_sums, ops.diag
    etf = grid.elem_to_faces

    # flux continuity rows: A_ff = -sum_E P_E Binv^E P_E^T, A_fc from row sums
    rows, cols, vals = [], [], []
    for i in range(6):
        for j in range(6):
            rows.append(etf[:, i])
            cols.append(etf[:, j])
            vals.append(-Binv[:, i, j])
    A_ff_full = sp.coo_matrix((np.concatenate(vals),
                               (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n_f, n_f)).tocsr()

    rows, cols, vals = [], [], []
    eids = np.arange(n_e)
    for i in range(6):
        rows.append(etf[:, i])
        cols.append(eids)
        vals.append(rsums[:, i])
    A_fc_full = sp.coo_matrix((np.concatenate(vals),
                               (np.concatenate(rows), np.concatenate(cols))),
                              shape=(n_f, n_e)).tocsr()

    f_pi_full = np.zeros(n_f)
    for f, vn in neumann.items():
        f_pi_full[f] = vn * grid.face_area[f]

    # balance rows: strong flux on interior faces, one-sided on the boundary
    d_other = np.zeros((n_e, 6))
    nb = np.full((n_e, 6), -1, dtype=np.int64)
    nb_local = np.full((n_e, 6), -1, dtype=np.int64)
    for slot in range(6):
        f = etf[:, slot]
        own = grid.face_to_elems[f, 0] == eids
        other = np.where(own, grid.face_to_elems[f, 1], grid.face_to_elems[f, 0])
        oslot = np.where(own, grid.face_local[f, 1], grid.face_local[f, 0])
        interior = other >= 0
        nb[:, slot] = other
        nb_local[:, slot] = np.where(interior, oslot, -1)
        d_other[interior, slot] = diag[other[interior], oslot[interior]]

    interior_mask = nb >= 0
    w = np.where(interior_mask, d_other / (diag + d_other), 1.0)

    cf_rows, cf_cols, cf_vals = [], [], []
    cc_rows, cc_cols, cc_vals = [], [], []
    for e in range(n_e):
        faces = etf[e]
        coef = -(w[e] @ Binv[e])
        coef[interior_mask[e]] += w[e, interior_mask[e]] * diag[e, interior_mask[e]]
        cf_rows.extend([e] * 6)
        cf_cols.extend(faces.tolist())
        cf_vals.extend(coef.tolist())
        cc_rows.append(e)
        cc_cols.append(e)
        cc_vals.append(float(w[e] @ rsums[e]))
        for slot in np.flatnonzero(interior_mask[e]):
            n_el = nb[e, slot]
            ln = nb_local[e, slot]
            w_far = 1.0 - w[e, slot]
            far = w_far * Binv[n_el, ln]
            far[ln] = 0.0
            nz = np.flatnonzero(far)
            cf_rows.extend([e] * nz.size)
            cf_cols.extend(etf[n_el, nz].tolist())
            cf_vals.extend(far[nz].tolist())
            cc_rows.append(e)
            cc_cols.append(int(n_el))
            cc_vals.append(float(-w_far * rsums[n_el, ln]))

    A_cf_full = sp.coo_matrix((cf_vals, (cf_rows, cf_cols)), shape=(n_e, n_f)).tocsr()
    A_cc_steady = canonical(sp.coo_matrix((cc_vals, (cc_rows, cc_cols)),
                                          shape=(n_e, n_e)))

    src = np.zeros(n_e) if source is None else np.asarray(source, dtype=float)
    rhs_c_full = grid.elem_volume * src

    # eliminate prescribed-pressure faces
    dir_faces = np.array(sorted(dirichlet), dtype=np.int64)
    dir_vals = np.array([dirichlet[f] for f in dir_faces], dtype=float)
    keep = np.ones(n_f, dtype=bool)
    keep[dir_faces] = False
    free = np.flatnonzero(keep)
    face_index = np.full(n_f, -1, dtype=np.int64)
    face_index[free] = np.arange(free.size)

    A_ff = canonical(A_ff_full[free][:, free])
    A_fc = canonical(A_fc_full[free])
    A_cf = canonical(A_cf_full[:, free])
    rhs_f = f_pi_full[free]
    rhs_c_base = rhs_c_full.copy()
    if dir_faces.size:
        rhs_f = rhs_f - A_ff_full[free][:, dir_faces] @ dir_vals
        rhs_c_base = rhs_c_base - A_cf_full[:, dir_faces] @ dir_vals

    accumulation = grid.elem_volume * props.storage_coeff
    system = BlockSystem(
        A_ff=A_ff, A_fc=A_fc, A_cf=A_cf, A_cc=A_cc_steady,
        rhs_f=rhs_f, rhs_c=rhs_c_base, dt=math.inf,
        free_faces=free, face_index=face_index,
        dirichlet_faces=dir_faces, dirichlet_values=dir_vals,
        A_cc_steady=A_cc_steady, accumulation=accumulation,
        rhs_c_base=rhs_c_base, ops=ops, grid=grid)
    if math.isinf(dt):
        return system
    return update_accumulation(system, dt, p_prev)


def update_accumulation(system: BlockSystem, dt: float,
                        p_prev: np.ndarray | None = None) -> BlockSystem:
    """New system for time step ``dt``; only A_cc and rhs_c change.

    The face blocks are shared with the input system, so stage-1
    preconditioner work built on them can be reused as is.
    """
    if not dt > 0:
        raise ValueError("dt must be positive (math.inf for steady state)")
    if math.isinf(dt):
        return dataclasses.replace(system, dt=dt, A_cc=system.A_cc_steady,
                                   rhs_c=system.rhs_c_base)
    n = system.n_cells
    if p_prev is None:
        p_prev = np.zeros(n)
    p_prev = np.asarray(p_prev, dtype=float)
    A_cc = canonical(system.A_cc_steady
                     + sp.diags(system.accumulation / dt, format="csr"))
    rhs_c = system.rhs_c_base + system.accumulation * p_prev / dt
    return dataclasses.replace(system, dt=dt, A_cc=A_cc, rhs_c=rhs_c)


def recover_face_fluxes(system: BlockSystem, pi_reduced: np.ndarray,
                        p: np.ndarray) -> np.ndarray:
    """Per-face fluxes at the solution, positive out of the owning element.

    Interior faces use the strong two-sided expression; boundary faces the
    owner's one-sided flux.
    """
    grid = system.grid
    pi = system.face_pressures(pi_reduced)
    Binv, rsums, diag = system.ops.Binv, system.ops.row_sums, system.ops.diag
    pi_local = pi[grid.elem_to_faces]                       # (n_e, 6)
    q_one = rsums * p[:, None] - np.einsum("eij,ej->ei", Binv, pi_local)
    lam = q_one + diag * pi_local                           # strong-flux numerators

    owner = grid.face_to_elems[:, 0]
    nbr = grid.face_to_elems[:, 1]
    lo = grid.face_local[:, 0]
    ln = grid.face_local[:, 1]
    q = q_one[owner, lo].copy()
    it = np.flatnonzero(nbr >= 0)
    d_o = diag[owner[it], lo[it]]
    d_n = diag[nbr[it], ln[it]]
    q[it] = (d_n * lam[owner[it], lo[it]] - d_o * lam[nbr[it], ln[it]]) / (d_o + d_n)
    return q


def element_outflows(grid: HexGrid, q_faces: np.ndarray) -> np.ndarray:
    """Signed flux out of each element through its six faces, (n_elems, 6)."""
    sign = np.where(grid.face_to_elems[grid.elem_to_faces, 0]
                    == np.arange(grid.n_elems)[:, None], 1.0, -1.0)
    return sign * q_faces[grid.elem_to_faces]


def balance_residuals(system: BlockSystem, pi_reduced: np.ndarray, p: np.ndarray,
                      p_prev: np.ndarray | None = None,
                      source: np.ndarray | None = None) -> np.ndarray:
    """Relative per-cell mass balance residual at the solution."""
    grid = system.grid
    q = recover_face_fluxes(system, pi_reduced, p)
    signed = element_outflows(grid, q)
    net = signed.sum(axis=1)
    gross = np.abs(signed).sum(axis=1)
    src = np.zeros(grid.n_elems) if source is None else grid.elem_volume * source
    if math.isinf(system.dt):
        acc = np.zeros(grid.n_elems)
    else:
        if p_prev is None:
            p_prev = np.zeros(grid.n_elems)
        acc = system.accumulation * (p - p_prev) / system.dt
    scale = np.maximum(gross + np.abs(acc) + np.abs(src),
                       np.abs(q).max() + 1e-300)
    return np.abs(acc + net - src) / scale
