"""Hexahedral grids, conductivity fields, fluid/rock properties, boundaries.

Grids are boxes of nx*ny*nz trilinear hexahedra, optionally deformed into
a dome.  Elements and faces are numbered x-fastest; the local face order
of every element is (-x, +x, -y, +y, -z, +z).  Grid objects are immutable
after construction and safe to share between threads.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from . import refelem
from .errors import GeometryError

AXIS_TAGS = ("x-", "x+", "y-", "y+", "z-", "z+")


@dataclass(frozen=True)
class HexGrid:
    """Topology and geometry of a hexahedral box grid."""

    nx: int
    ny: int
    nz: int
    node_coords: np.ndarray      # (n_nodes, 3)
    elem_to_nodes: np.ndarray    # (n_elems, 8)
    elem_to_faces: np.ndarray    # (n_elems, 6), local order (-x,+x,-y,+y,-z,+z)
    face_to_elems: np.ndarray    # (n_faces, 2), owner first, -1 if boundary
    face_local: np.ndarray       # (n_faces, 2), local slot in owner/neighbor
    face_area: np.ndarray        # (n_faces,)
    elem_volume: np.ndarray      # (n_elems,)

    @property
    def n_elems(self) -> int:
        return self.elem_to_faces.shape[0]

    @property
    def n_faces(self) -> int:
        return self.face_to_elems.shape[0]

    @property
    def boundary_faces(self) -> np.ndarray:
        return np.flatnonzero(self.face_to_elems[:, 1] < 0)

    def elem_index(self, i, j, k) -> int:
        return int(i + self.nx * (j + self.ny * k))

    def elem_ijk(self, e):
        k, r = divmod(int(e), self.nx * self.ny)
        j, i = divmod(r, self.nx)
        return i, j, k

    def neighbor(self, e: int, slot: int) -> int:
        """Element across local face ``slot`` of ``e``, or -1 at the boundary."""
        f = self.elem_to_faces[e, slot]
        a, b = self.face_to_elems[f]
        return int(b if a == e else a)

    def elem_coords(self) -> np.ndarray:
        """Node coordinates per element, shape (n_elems, 8, 3)."""
        return self.node_coords[self.elem_to_nodes]


def build_structured(nx: int, ny: int, nz: int,
                     dx: float, dy: float, dz: float) -> HexGrid:
    """Regular box grid of nx*ny*nz hexahedra with spacings dx, dy, dz."""
    if min(nx, ny, nz) < 1:
        raise ValueError("grid dimensions must be >= 1")
    if min(dx, dy, dz) <= 0:
        raise ValueError("grid spacings must be > 0")
    nx, ny, nz = int(nx), int(ny), int(nz)

    ii, jj, kk = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1),
                             np.arange(nz + 1), indexing="ij")
    node_coords = np.stack([ii * dx, jj * dy, kk * dz], axis=-1)
    node_coords = node_coords.transpose(2, 1, 0, 3).reshape(-1, 3)

    def nid(i, j, k):
        return i + (nx + 1) * (j + (ny + 1) * k)

    ei, ej, ek = np.meshgrid(np.arange(nx), np.arange(ny), np.arange(nz),
                             indexing="ij")
    ei = ei.transpose(2, 1, 0).ravel()
    ej = ej.transpose(2, 1, 0).ravel()
    ek = ek.transpose(2, 1, 0).ravel()
    elem_to_nodes = np.stack([
        nid(ei, ej, ek), nid(ei + 1, ej, ek),
        nid(ei + 1, ej + 1, ek), nid(ei, ej + 1, ek),
        nid(ei, ej, ek + 1), nid(ei + 1, ej, ek + 1),
        nid(ei + 1, ej + 1, ek + 1), nid(ei, ej + 1, ek + 1),
    ], axis=1).astype(np.int64)

    n_xf = (nx + 1) * ny * nz
    n_yf = nx * (ny + 1) * nz

    def fx(i, j, k):
        return i + (nx + 1) * (j + ny * k)

    def fy(i, j, k):
        return n_xf + i + nx * (j + (ny + 1) * k)

    def fz(i, j, k):
        return n_xf + n_yf + i + nx * (j + ny * k)

    elem_to_faces = np.stack([
        fx(ei, ej, ek), fx(ei + 1, ej, ek),
        fy(ei, ej, ek), fy(ei, ej + 1, ek),
        fz(ei, ej, ek), fz(ei, ej, ek + 1),
    ], axis=1).astype(np.int64)

    n_faces = n_xf + n_yf + nx * ny * (nz + 1)
    n_elems = nx * ny * nz
    assert n_faces > n_elems
    face_to_elems = np.full((n_faces, 2), -1, dtype=np.int64)
    face_local = np.full((n_faces, 2), -1, dtype=np.int64)
    eids = np.arange(n_elems)
    # owner is the lower-indexed element, which carries an interior face at
    # its + slot, so + slots claim ownership first
    for slot in (1, 3, 5, 0, 2, 4):
        faces = elem_to_faces[:, slot]
        first = face_to_elems[faces, 0] < 0
        face_to_elems[faces[first], 0] = eids[first]
        face_local[faces[first], 0] = slot
        face_to_elems[faces[~first], 1] = eids[~first]
        face_local[faces[~first], 1] = slot

    elem_volume, face_area = _compute_geometry(
        node_coords, elem_to_nodes, elem_to_faces, face_to_elems, face_local)
    return HexGrid(nx, ny, nz, node_coords, elem_to_nodes, elem_to_faces,
                   face_to_elems, face_local, face_area, elem_volume)


def _compute_geometry(node_coords, elem_to_nodes, elem_to_faces,
                      face_to_elems, face_local):
    coords = node_coords[elem_to_nodes]
    pts, wts = refelem.gauss_points_3d()
    vol = np.zeros(coords.shape[0])
    for p, w in zip(pts, wts):
        J = refelem.jacobians(coords, refelem.shape_gradients(p)[0])
        det = np.linalg.det(J)
        bad = np.flatnonzero(det <= 0)
        if bad.size:
            raise GeometryError(f"element {bad[0]} is inverted "
                                f"(non-positive Jacobian at a quadrature point)")
        vol += w * det

    # face areas from the owner side's bilinear patch
    owners = face_to_elems[:, 0]
    fnodes = elem_to_nodes[owners[:, None],
                           refelem.LOCAL_FACE_NODES[face_local[:, 0]]]
    fcoords = node_coords[fnodes]             # (n_faces, 4, 3)
    qpts, qwts = refelem.gauss_points_2d()
    area = np.zeros(fcoords.shape[0])
    for (u, v), w in zip(qpts, qwts):
        dNu = np.array([-(1 - v), (1 - v), (1 + v), -(1 + v)]) / 4.0
        dNv = np.array([-(1 - u), -(1 + u), (1 + u), (1 - u)]) / 4.0
        ru = np.einsum("fnc,n->fc", fcoords, dNu)
        rv = np.einsum("fnc,n->fc", fcoords, dNv)
        area += w * np.linalg.norm(np.cross(ru, rv), axis=1)
    return vol, area


def deform_dome(grid: HexGrid, amplitude: float, radius: float) -> HexGrid:
    """Lift all node layers by a radial cosine-squared bump.

    The bump is centered on the footprint of the grid and vanishes for
    r >= radius; every z-layer is shifted equally, which shears the cells
    without changing their volumes.  Topology is untouched.
    """
    if amplitude < 0:
        raise ValueError("amplitude must be >= 0")
    if amplitude == 0:
        return grid
    if radius <= 0:
        raise ValueError("radius must be > 0")
    coords = grid.node_coords.copy()
    cx = 0.5 * (coords[:, 0].min() + coords[:, 0].max())
    cy = 0.5 * (coords[:, 1].min() + coords[:, 1].max())
    r = np.hypot(coords[:, 0] - cx, coords[:, 1] - cy)
    coords[:, 2] += amplitude * np.where(
        r < radius, np.cos(0.5 * np.pi * r / radius) ** 2, 0.0)
    vol, area = _compute_geometry(coords, grid.elem_to_nodes, grid.elem_to_faces,
                                  grid.face_to_elems, grid.face_local)
    return dataclasses.replace(grid, node_coords=coords,
                               elem_volume=vol, face_area=area)


def dome_bump(grid: HexGrid, amplitude: float, radius: float):
    """Bump height evaluated at (x, y); used by tests and angle checks."""
    coords = grid.node_coords
    cx = 0.5 * (coords[:, 0].min() + coords[:, 0].max())
    cy = 0.5 * (coords[:, 1].min() + coords[:, 1].max())

    def bump(x, y):
        r = np.hypot(x - cx, y - cy)
        return amplitude * np.where(r < radius,
                                    np.cos(0.5 * np.pi * r / radius) ** 2, 0.0)
    return bump


# ---------------------------------------------------------------------------
# conductivity fields


@dataclass(frozen=True)
class ConductivityField:
    """Per-element symmetric positive definite conductivity tensors [m/d]."""

    tensors: np.ndarray                 # (n_elems, 3, 3)
    theta_x: np.ndarray | None = None   # optional rotation angles [rad]
    theta_y: np.ndarray | None = None

    def __post_init__(self):
        t = self.tensors
        if t.ndim != 3 or t.shape[1:] != (3, 3):
            raise ValueError("tensors must have shape (n_elems, 3, 3)")
        if not np.allclose(t, t.transpose(0, 2, 1)):
            raise ValueError("conductivity tensors must be symmetric")
        if np.any(np.linalg.eigvalsh(t)[:, 0] <= 0):
            raise ValueError("conductivity tensors must be positive definite")

    @classmethod
    def homogeneous(cls, n_elems: int, kx: float, ky=None, kz=None):
        ky = kx if ky is None else ky
        kz = kx if kz is None else kz
        t = np.zeros((n_elems, 3, 3))
        t[:, 0, 0], t[:, 1, 1], t[:, 2, 2] = kx, ky, kz
        return cls(t)

    @classmethod
    def from_diagonals(cls, kx, ky, kz):
        kx, ky, kz = (np.asarray(v, dtype=float) for v in (kx, ky, kz))
        t = np.zeros((kx.size, 3, 3))
        t[:, 0, 0], t[:, 1, 1], t[:, 2, 2] = kx, ky, kz
        return cls(t)


def synth_heterogeneous_field(grid: HexGrid, seed: int, value_range,
                              mode: str = "loguniform") -> ConductivityField:
    """Synthetic heterogeneous isotropic field, deterministic per seed.

    "loguniform" draws each element independently, uniform in log10 over
    ``value_range``.  "layered" draws one base value per z-layer plus a
    lognormal within-layer jitter, clipped to the range.
    """
    lo, hi = float(value_range[0]), float(value_range[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or lo <= 0 or lo > hi:
        raise ValueError("value_range must be finite, positive and ordered")
    rng = np.random.default_rng(seed)
    n = grid.n_elems
    if mode == "loguniform":
        k = 10.0 ** rng.uniform(np.log10(lo), np.log10(hi), size=n)
    elif mode == "layered":
        per_layer = 10.0 ** rng.uniform(np.log10(lo), np.log10(hi), size=grid.nz)
        layer = np.arange(n) // (grid.nx * grid.ny)
        k = per_layer[layer] * 10.0 ** rng.normal(0.0, 0.5, size=n)
        k = np.clip(k, lo, hi)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return ConductivityField.from_diagonals(k, k, k)


def load_raster_field(path, grid: HexGrid) -> ConductivityField:
    """Read kx, ky, kz triples per cell (x-fastest cell order) from text.

    The file holds at least 3 * n_elems whitespace-separated positive
    reals: for each cell, its kx ky kz values in turn.
    """
    with open(path) as fh:
        values = np.array(fh.read().split(), dtype=float)
    need = 3 * grid.n_elems
    if values.size < need:
        raise ValueError(f"raster file {path}: expected at least {need} values, "
                         f"got {values.size} (cell {values.size // 3})")
    values = values[:need].reshape(grid.n_elems, 3)
    bad = np.flatnonzero(~(values > 0).all(axis=1))
    if bad.size:
        raise ValueError(f"raster file {path}: non-positive conductivity "
                         f"at cell {bad[0]}")
    return ConductivityField.from_diagonals(values[:, 0], values[:, 1], values[:, 2])


def surface_rotation_angles(grid: HexGrid):
    """Per-element tilt angles of the top surface, for tensor rotation.

    The angles are the average slopes of the deformed top surface over each
    element's footprint: theta_y = atan(dz/dx) about the y axis and
    theta_x = -atan(dz/dy) about the x axis (right-hand rule), so that the
    rotated vertical axis follows the surface normal.  Every element of a
    column gets its column's angles.
    """
    nx, ny, nz = grid.nx, grid.ny, grid.nz
    top = grid.node_coords[:, 2].reshape(nz + 1, ny + 1, nx + 1)[-1]
    z00 = top[:-1, :-1]
    z01 = top[1:, :-1]
    z10 = top[:-1, 1:]
    z11 = top[1:, 1:]
    coords = grid.node_coords
    dx_col = (coords[grid.elem_to_nodes[:nx * ny, 1], 0]
              - coords[grid.elem_to_nodes[:nx * ny, 0], 0]).reshape(ny, nx)
    dy_col = (coords[grid.elem_to_nodes[:nx * ny, 3], 1]
              - coords[grid.elem_to_nodes[:nx * ny, 0], 1]).reshape(ny, nx)
    sx = ((z10 + z11) - (z00 + z01)) / (2 * dx_col)
    sy = ((z01 + z11) - (z00 + z10)) / (2 * dy_col)
    theta_y = np.tile(np.arctan(sx).ravel(), nz)
    theta_x = np.tile(-np.arctan(sy).ravel(), nz)
    return theta_x, theta_y


def _rotation_matrices(theta_x, theta_y):
    n = theta_x.size
    cx, sxn = np.cos(-theta_x), np.sin(-theta_x)
    cy, syn = np.cos(-theta_y), np.sin(-theta_y)
    Rx = np.zeros((n, 3, 3))
    Rx[:, 0, 0] = 1
    Rx[:, 1, 1], Rx[:, 1, 2] = cx, -sxn
    Rx[:, 2, 1], Rx[:, 2, 2] = sxn, cx
    Ry = np.zeros((n, 3, 3))
    Ry[:, 1, 1] = 1
    Ry[:, 0, 0], Ry[:, 0, 2] = cy, syn
    Ry[:, 2, 0], Ry[:, 2, 2] = -syn, cy
    return np.einsum("nab,nbc->nac", Ry, Rx)


def rotate_tensor_field(field: ConductivityField, grid: HexGrid) -> ConductivityField:
    """Rotate each tensor to follow the (deformed) top surface.

    Uses the field's own angles when present, otherwise derives them from
    the grid via :func:`surface_rotation_angles`.  K -> R K R^T with
    R = R_y(-theta_y) R_x(-theta_x); eigenvalues are preserved.
    """
    if field.theta_x is not None and field.theta_y is not None:
        tx, ty = np.asarray(field.theta_x, float), np.asarray(field.theta_y, float)
    else:
        tx, ty = surface_rotation_angles(grid)
    if not (np.all(np.isfinite(tx)) and np.all(np.isfinite(ty))):
        raise ValueError("rotation angles must be finite")
    R = _rotation_matrices(tx, ty)
    rotated = np.einsum("nab,nbc,ndc->nad", R, field.tensors, R)
    rotated = 0.5 * (rotated + rotated.transpose(0, 2, 1))
    return ConductivityField(rotated, theta_x=tx, theta_y=ty)


# ---------------------------------------------------------------------------
# fluid/rock properties and boundary conditions


@dataclass(frozen=True)
class FluidRockProps:
    """Fluid specific weight, compressibilities and per-element porosity."""

    gamma: float                 # bar/m
    alpha: float                 # soil compressibility, 1/bar
    beta: float                  # fluid compressibility, 1/bar
    porosity: np.ndarray         # (n_elems,)

    def __post_init__(self):
        phi = np.asarray(self.porosity, dtype=float)
        if np.any(phi <= 0) or np.any(phi > 1):
            raise ValueError("porosity must lie in (0, 1]")
        object.__setattr__(self, "porosity", phi)
        if np.any(self.storage_coeff <= 0):
            raise ValueError("specific storage must be positive")

    @property
    def storage_coeff(self) -> np.ndarray:
        """Specific storage c = gamma * (alpha + phi * beta), 1/m."""
        return self.gamma * (self.alpha + self.porosity * self.beta)

    @classmethod
    def uniform(cls, n_elems, gamma=0.101, alpha=4.67e-5, beta=4.84e-5, porosity=0.2):
        return cls(gamma, alpha, beta, np.full(n_elems, float(porosity)))


def boundary_plane_faces(grid: HexGrid, tag: str) -> np.ndarray:
    """Boundary face ids on one of the six box sides ("x-", "x+", ...)."""
    if tag not in AXIS_TAGS:
        raise ValueError(f"unknown plane tag {tag!r}")
    slot = AXIS_TAGS.index(tag)
    bnd = grid.boundary_faces
    return bnd[grid.face_local[bnd, 0] == slot]


def well_column_faces(grid: HexGrid, i: int, j: int) -> np.ndarray:
    """Lateral (x/y) faces of all cells in column (i, j)."""
    if not (0 <= i < grid.nx and 0 <= j < grid.ny):
        raise ValueError(f"well column ({i}, {j}) outside grid")
    elems = [grid.elem_index(i, j, k) for k in range(grid.nz)]
    return np.unique(grid.elem_to_faces[elems][:, :4])


@dataclass
class BoundarySpec:
    """Prescribed face pressures and fluxes plus constant-pressure wells.

    Wells intercept the full thickness of a column and are imposed as
    prescribed pressures on the lateral faces of the column's cells.
    Unlisted boundary faces default to no-flow.
    """

    dirichlet: dict = dataclasses.field(default_factory=dict)   # face -> p [bar]
    neumann: dict = dataclasses.field(default_factory=dict)     # face -> v_n [m/d]
    well_columns: list = dataclasses.field(default_factory=list)  # (i, j, p)

    def add_plane(self, grid, tag, *, pressure=None, flux=None):
        faces = boundary_plane_faces(grid, tag)
        if (pressure is None) == (flux is None):
            raise ValueError("give exactly one of pressure or flux")
        target = self.dirichlet if pressure is not None else self.neumann
        value = pressure if pressure is not None else flux
        for f in faces:
            target[int(f)] = float(value)
        return self

    def resolve(self, grid):
        """Expand wells and validate; returns (dirichlet, neumann) dicts."""
        dirichlet = {int(f): float(v) for f, v in self.dirichlet.items()}
        for (i, j, p) in self.well_columns:
            for f in well_column_faces(grid, i, j):
                dirichlet[int(f)] = float(p)
        neumann = {int(f): float(v) for f, v in self.neumann.items()}
        overlap = set(dirichlet) & set(neumann)
        if overlap:
            raise ValueError(f"faces {sorted(overlap)[:5]} have both a prescribed "
                             f"pressure and a prescribed flux")
        return dirichlet, neumann
