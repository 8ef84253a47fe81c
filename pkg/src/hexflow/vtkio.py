"""Legacy-ASCII VTK export of hexahedral grids with cell data."""

from __future__ import annotations

import numpy as np


def write_vtk(grid, cell_data: dict, path) -> None:
    """Write the grid as an unstructured-grid VTK file with cell scalars."""
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nhexflow grid\nASCII\n")
        fh.write("DATASET UNSTRUCTURED_GRID\n")
        n_nodes = grid.node_coords.shape[0]
        fh.write(f"POINTS {n_nodes} double\n")
        for x, y, z in grid.node_coords:
            fh.write(f"{x:.12g} {y:.12g} {z:.12g}\n")
        n_e = grid.n_elems
        fh.write(f"CELLS {n_e} {9 * n_e}\n")
        for nodes in grid.elem_to_nodes:
            fh.write("8 " + " ".join(map(str, nodes.tolist())) + "\n")
        fh.write(f"CELL_TYPES {n_e}\n")
        fh.write("\n".join(["12"] * n_e) + "\n")
        if cell_data:
            fh.write(f"CELL_DATA {n_e}\n")
            for name, values in cell_data.items():
                values = np.asarray(values, dtype=float)
                fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                fh.write("\n".join(f"{v:.12g}" for v in values) + "\n")
