"""Structured triangulations of the unit square.

Nodes are laid out row by row: node j*(m+1)+i sits at (i/m, j/m). Every grid
cell is split along its lower-left to upper-right diagonal, so the mesh for a
given m is fully deterministic.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

__all__ = ["Mesh", "build_unit_square_mesh", "dump_mesh"]

BOUNDARY_SIDES = ("bottom", "right", "top", "left")


@dataclass(frozen=True)
class Mesh:
    """Conforming triangle mesh of the unit square.

    nodes          -- (n_nodes, 2) vertex coordinates
    triangles      -- (n_tri, 3) vertex indices, counterclockwise
    boundary_edges -- (n_edges, 2) vertex indices along the boundary
    boundary_sides -- side tag per boundary edge ("bottom"/"right"/"top"/"left")
    m              -- number of intervals per side
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_sides: tuple
    m: int

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]


def build_unit_square_mesh(m: int) -> Mesh:
    """Triangulate the unit square with m intervals per side.

    Produces (m+1)^2 nodes and 2*m^2 triangles. Cell (i, j) with corners
    a=(i,j), b=(i+1,j), c=(i+1,j+1), d=(i,j+1) is cut along a-c into the
    triangles (a, b, c) and (a, c, d); both are counterclockwise.
    """
    if not isinstance(m, (int, np.integer)) or m < 1:
        raise InvalidArgumentError(f"m must be a positive integer, got {m!r}")
    m = int(m)

    side = np.arange(m + 1) / m
    xx, yy = np.meshgrid(side, side)          # yy varies with the row index
    nodes = np.column_stack([xx.ravel(), yy.ravel()])

    def nid(i, j):
        return j * (m + 1) + i

    tris = np.empty((2 * m * m, 3), dtype=np.int64)
    t = 0
    for j in range(m):
        for i in range(m):
            a, b = nid(i, j), nid(i + 1, j)
            c, d = nid(i + 1, j + 1), nid(i, j + 1)
            tris[t] = (a, b, c)
            tris[t + 1] = (a, c, d)
            t += 2

    edges = []
    sides = []
    for i in range(m):                         # bottom, left to right
        edges.append((nid(i, 0), nid(i + 1, 0)))
        sides.append("bottom")
    for j in range(m):                         # right, bottom to top
        edges.append((nid(m, j), nid(m, j + 1)))
        sides.append("right")
    for i in range(m):                         # top, right to left
        edges.append((nid(m - i, m), nid(m - i - 1, m)))
        sides.append("top")
    for j in range(m):                         # left, top to bottom
        edges.append((nid(0, m - j), nid(0, m - j - 1)))
        sides.append("left")

    return Mesh(
        nodes=nodes,
        triangles=tris,
        boundary_edges=np.asarray(edges, dtype=np.int64),
        boundary_sides=tuple(sides),
        m=m,
    )


def dump_mesh(mesh: Mesh) -> str:
    """Plain-text dump: one "x1 x2" line per node, then triangle index triples."""
    lines = [f"{x:.17g} {y:.17g}" for x, y in mesh.nodes]
    lines.extend(f"{a} {b} {c}" for a, b, c in mesh.triangles)
    return "\n".join(lines) + "\n"
