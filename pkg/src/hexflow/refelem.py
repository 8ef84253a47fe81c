"""Trilinear reference hexahedron: shape functions, quadrature, RT0 basis.

The reference element is [-1, 1]^3 with the usual 8-node ordering
(counter-clockwise bottom face, then top).  Local faces are ordered
(-x, +x, -y, +y, -z, +z) to match ``HexGrid.elem_to_faces``.
"""

from __future__ import annotations

import numpy as np

# corner nodes of the reference cube
REF_NODES = np.array([
    [-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
    [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1],
], dtype=float)

# corner nodes of each local face, ordered to parametrize the face patch
LOCAL_FACE_NODES = np.array([
    [0, 3, 7, 4],   # -x
    [1, 2, 6, 5],   # +x
    [0, 1, 5, 4],   # -y
    [3, 2, 6, 7],   # +y
    [0, 1, 2, 3],   # -z
    [4, 5, 6, 7],   # +z
])


def gauss_points_3d():
    """2x2x2 Gauss points and unit weights on [-1,1]^3."""
    g = 1.0 / np.sqrt(3.0)
    pts = np.array([[sx * g, sy * g, sz * g]
                    for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)])
    return pts, np.ones(len(pts))


def gauss_points_2d():
    g = 1.0 / np.sqrt(3.0)
    pts = np.array([[sx * g, sy * g] for sy in (-1, 1) for sx in (-1, 1)])
    return pts, np.ones(len(pts))


def shape_functions(xi):
    """Trilinear shape functions at points xi, shape (npts, 8)."""
    xi = np.atleast_2d(xi)
    s = REF_NODES  # signs
    return ((1 + xi[:, None, 0] * s[None, :, 0])
            * (1 + xi[:, None, 1] * s[None, :, 1])
            * (1 + xi[:, None, 2] * s[None, :, 2])) / 8.0


def shape_gradients(xi):
    """Gradients dN_a/dxi at points xi, shape (npts, 8, 3)."""
    xi = np.atleast_2d(xi)
    s = REF_NODES
    fx = 1 + xi[:, None, 0] * s[None, :, 0]
    fy = 1 + xi[:, None, 1] * s[None, :, 1]
    fz = 1 + xi[:, None, 2] * s[None, :, 2]
    out = np.empty((xi.shape[0], 8, 3))
    out[:, :, 0] = s[None, :, 0] * fy * fz / 8.0
    out[:, :, 1] = s[None, :, 1] * fx * fz / 8.0
    out[:, :, 2] = s[None, :, 2] * fx * fy / 8.0
    return out


def rt0_basis(xi):
    """Lowest-order Raviart-Thomas basis on the reference cube.

    Unit outward flux through the matching face, zero through the others;
    shape (npts, 6, 3), faces in (-x,+x,-y,+y,-z,+z) order.
    """
    xi = np.atleast_2d(xi)
    npts = xi.shape[0]
    out = np.zeros((npts, 6, 3))
    out[:, 0, 0] = (xi[:, 0] - 1) / 8.0
    out[:, 1, 0] = (xi[:, 0] + 1) / 8.0
    out[:, 2, 1] = (xi[:, 1] - 1) / 8.0
    out[:, 3, 1] = (xi[:, 1] + 1) / 8.0
    out[:, 4, 2] = (xi[:, 2] - 1) / 8.0
    out[:, 5, 2] = (xi[:, 2] + 1) / 8.0
    return out


def jacobians(elem_coords, grads):
    """Jacobians of the trilinear map for a batch of elements.

    elem_coords: (n_e, 8, 3); grads: (8, 3) at one point.
    Returns J with shape (n_e, 3, 3), J[e, a, b] = d x_a / d xi_b.
    """
    return np.einsum("enc,nb->ecb", elem_coords, grads)
