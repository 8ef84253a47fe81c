"""Per-cell face index sets that drive the restricted decoupling solves.

A pattern set holds, for every cell, the face unknowns on which that
cell's rows of the approximate decoupling factors may be nonzero.  The
algebraic base pattern is the nonzero column set of each cell's balance
row.  Static prototypes (A..E) are geometric patches built from cell
adjacency; they are truncated at the grid boundary and intersected with
the free (non-eliminated) face set before use.

Prototype geometry, interior cell, regular grid (counts in parentheses):

* A (18): own faces, plus the outward "far" face of each axis neighbor at
  distances one and two - an axis-aligned extension for axis-dominated flow.
* B (24): as A, extended to distance three along each axis.
* C (36): every face of the cell and of its six neighbors - the full
  first-ring connectivity that a deformed grid produces naturally.
* D (42): C plus the distance-two far faces - the widest patch.
* E (18): own faces, each neighbor's far face, plus one transversal face
  of each neighbor chosen by cycling the axes (x->y->z->x, keeping the
  sign) - same cell patch as A but spread across directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import HexGrid

PROTOTYPES = ("A", "B", "C", "D", "E")


@dataclass(frozen=True)
class PatternSet:
    """One sorted, unique face-index array per cell (reduced numbering)."""

    sets: list
    provenance: str

    def __len__(self):
        return len(self.sets)

    def sizes(self) -> np.ndarray:
        return np.array([s.size for s in self.sets])

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(f"# provenance: {self.provenance}\n")
            for m, s in enumerate(self.sets):
                fh.write(f"{m}: {' '.join(map(str, s.tolist()))}\n")


def base_pattern(A_cf: sp.csr_matrix) -> PatternSet:
    """Nonzero column sets of the cell-to-face block, row by row."""
    A = A_cf.tocsr()
    sets = [np.sort(A.indices[A.indptr[m]:A.indptr[m + 1]].astype(np.int64))
            for m in range(A.shape[0])]
    return PatternSet(sets, "base")


def _far_chain(grid: HexGrid, m: int, slot: int, depth: int):
    """Outward faces of the cells at distance 1..depth along one direction."""
    faces = []
    cur = m
    for _ in range(depth):
        cur = grid.neighbor(cur, slot)
        if cur < 0:
            break
        faces.append(int(grid.elem_to_faces[cur, slot]))
    return faces


def _lateral_cycle(slot: int) -> int:
    """Transversal slot for prototype E: next axis in the cycle, same sign."""
    axis, sign = divmod(slot, 2)
    return 2 * ((axis + 1) % 3) + sign


def neighborhood_faces(grid: HexGrid, m: int) -> np.ndarray:
    """All faces of cell ``m`` and of its face neighbors (first ring)."""
    faces = set(grid.elem_to_faces[m].tolist())
    for slot in range(6):
        nb = grid.neighbor(m, slot)
        if nb >= 0:
            faces.update(grid.elem_to_faces[nb].tolist())
    return np.array(sorted(faces), dtype=np.int64)


def structured_base_faces(grid: HexGrid, m: int) -> np.ndarray:
    """Own faces plus each neighbor's far face (regular-grid base stencil)."""
    faces = set(grid.elem_to_faces[m].tolist())
    for slot in range(6):
        faces.update(_far_chain(grid, m, slot, 1))
    return np.array(sorted(faces), dtype=np.int64)


def static_pattern(grid: HexGrid, proto: str, m: int) -> np.ndarray:
    """Global face-index set of prototype ``proto`` around cell ``m``.

    Patches needing cells outside the grid are truncated at the boundary.
    """
    if proto not in PROTOTYPES:
        raise ValueError(f"unknown prototype {proto!r}; expected one of {PROTOTYPES}")
    faces = set(grid.elem_to_faces[m].tolist())
    if proto in ("A", "B", "E"):
        depth = {"A": 2, "B": 3, "E": 1}[proto]
        for slot in range(6):
            faces.update(_far_chain(grid, m, slot, depth))
        if proto == "E":
            for slot in range(6):
                nb = grid.neighbor(m, slot)
                if nb >= 0:
                    faces.add(int(grid.elem_to_faces[nb, _lateral_cycle(slot)]))
    else:  # C, D
        faces.update(neighborhood_faces(grid, m).tolist())
        if proto == "D":
            for slot in range(6):
                faces.update(_far_chain(grid, m, slot, 2))
    return np.array(sorted(faces), dtype=np.int64)


def static_patterns(grid: HexGrid, face_index: np.ndarray, proto: str) -> PatternSet:
    """Prototype patterns for every cell, mapped to free-face numbering.

    Eliminated (prescribed-pressure) faces are removed from every set.
    """
    sets = []
    for m in range(grid.n_elems):
        reduced = face_index[static_pattern(grid, proto, m)]
        sets.append(np.sort(reduced[reduced >= 0]))
    return PatternSet(sets, f"static:{proto}")
