"""Shared helpers: small assembled systems and dense oracles."""

import math

import numpy as np
import scipy.linalg

from hexflow.assembly import assemble
from hexflow.grid import (BoundarySpec, ConductivityField, FluidRockProps,
                          build_structured, deform_dome,
                          synth_heterogeneous_field)


def make_system(nx=2, ny=2, nz=2, *, dt=math.inf, seed=None, k=1.0,
                dome=0.0, bc_kind="ends", gamma=1.0, spacings=(1.0, 1.0, 1.0),
                p_prev=None):
    """Assemble a small test system with a few standard configurations."""
    grid = build_structured(nx, ny, nz, *spacings)
    if dome > 0:
        radius = 0.75 * max(nx * spacings[0], ny * spacings[1]) / 2
        grid = deform_dome(grid, dome * spacings[2], radius)
    if seed is None:
        field = ConductivityField.homogeneous(grid.n_elems, k)
    else:
        field = synth_heterogeneous_field(grid, seed, (1e-4, 1.0))
    props = FluidRockProps.uniform(grid.n_elems, gamma=gamma)
    bc = BoundarySpec()
    if bc_kind == "ends":
        bc.add_plane(grid, "x-", pressure=2.0)
        bc.add_plane(grid, "x+", pressure=1.0)
    elif bc_kind == "wells":
        bc = BoundarySpec(well_columns=[(0, 0, 200.0), (nx - 1, ny - 1, 100.0)])
    elif bc_kind != "none":
        raise ValueError(bc_kind)
    if p_prev is None and not math.isinf(dt):
        p_prev = np.zeros(grid.n_elems)
    return assemble(grid, field, props, bc, dt=dt, p_prev=p_prev)


def dense_inverse(system):
    return scipy.linalg.inv(system.full_matrix().toarray())


def dense_schur(system):
    A_ff = system.A_ff.toarray()
    S = system.A_cc.toarray() - system.A_cf.toarray() @ scipy.linalg.solve(
        A_ff, system.A_fc.toarray())
    return S
