"""Meshes: 1D intervals with optional radial measure, and structured disk
triangulations built from concentric rings (no external mesh generator)."""

from __future__ import annotations

import dataclasses
import math

import numpy as np


class MeshError(ValueError):
    """Invalid mesh construction request."""


@dataclasses.dataclass
class Mesh:
    """Simplicial mesh with the integration measure baked in.

    1D meshes live on [0, radius] with measure r^radial_weight dr; weight 1
    is the polar reduction of the disk, weight 2 the spherical one, weight 0
    a plain interval.  2D meshes are triangulations of the disk of the given
    radius with the usual area measure.
    """

    dim: int
    vertices: np.ndarray          # (nv,) in 1D, (nv, 2) in 2D
    cells: np.ndarray             # (nc, 2) or (nc, 3), int
    boundary: np.ndarray          # (nv,) bool mask
    radius: float
    radial_weight: int = 0

    @property
    def num_vertices(self):
        return self.vertices.shape[0]

    @property
    def num_cells(self):
        return self.cells.shape[0]

    def cell_vertices(self):
        """Coordinates of each cell's vertices, shape (nc, nodes, dim_coords)."""
        return self.vertices[self.cells]


def build_radial_mesh(n_cells, radius=0.32, weight=1):
    """Uniform 1D mesh on [0, radius] with measure r^weight dr.

    weight=1 mimics a disk (polar measure), weight=2 a ball, weight=0 a
    plain interval.  The origin is a symmetry point, not a boundary, so for
    weight >= 1 only the outer endpoint carries the boundary flag.
    """
    if n_cells < 2:
        raise MeshError(f"n_cells must be >= 2, got {n_cells}")
    if radius <= 0:
        raise MeshError(f"radius must be > 0, got {radius}")
    if weight not in (0, 1, 2):
        raise MeshError(f"radial weight must be 0, 1 or 2, got {weight}")
    vertices = np.linspace(0.0, radius, n_cells + 1)
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    boundary = np.zeros(n_cells + 1, dtype=bool)
    boundary[-1] = True
    if weight == 0:
        boundary[0] = True
    return Mesh(dim=1, vertices=vertices, cells=cells.astype(np.int64),
                boundary=boundary, radius=radius, radial_weight=weight)


def build_disk_mesh(h_target, radius=0.32):
    """Structured triangulation of the disk from concentric rings.

    Ring j holds 6j vertices at radius j*radius/m; between consecutive rings
    the annulus is triangulated sector by sector.  All boundary vertices lie
    exactly on the circle and the longest edge stays below 1.5*h_target.
    """
    if not (0 < h_target < radius):
        raise MeshError(f"need 0 < h_target < radius, got h_target={h_target}, radius={radius}")
    m = int(math.ceil(radius / h_target))
    if m < 2:
        m = 2

    verts = [(0.0, 0.0)]
    ring_start = [None, 1]
    for j in range(1, m + 1):
        r = radius * j / m
        ang = 2.0 * np.pi * np.arange(6 * j) / (6 * j)
        verts.extend(zip(r * np.cos(ang), r * np.sin(ang)))
        ring_start.append(ring_start[j] + 6 * j)
    vertices = np.array(verts)

    def ring_index(j, t):
        return ring_start[j] + (t % (6 * j))

    cells = []
    # innermost fan around the center vertex
    for t in range(6):
        cells.append((0, ring_index(1, t), ring_index(1, t + 1)))
    # annulus between ring j-1 and ring j, per sector
    for j in range(2, m + 1):
        for s in range(6):
            for t in range(j):
                o0 = ring_index(j, s * j + t)
                o1 = ring_index(j, s * j + t + 1)
                i0 = ring_index(j - 1, s * (j - 1) + t)
                cells.append((i0, o0, o1))
            for t in range(j - 1):
                i0 = ring_index(j - 1, s * (j - 1) + t)
                i1 = ring_index(j - 1, s * (j - 1) + t + 1)
                o1 = ring_index(j, s * j + t + 1)
                cells.append((i0, o1, i1))
    cells = np.array(cells, dtype=np.int64)

    # enforce positive (counter-clockwise) orientation
    p = vertices[cells]
    signed = 0.5 * ((p[:, 1, 0] - p[:, 0, 0]) * (p[:, 2, 1] - p[:, 0, 1])
                    - (p[:, 2, 0] - p[:, 0, 0]) * (p[:, 1, 1] - p[:, 0, 1]))
    flip = signed < 0
    cells[flip] = cells[flip][:, [0, 2, 1]]
    if np.any(np.isclose(np.abs(signed), 0.0)):
        raise MeshError("degenerate triangle produced; refine h_target")

    edge_vecs = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 1], p[:, 0] - p[:, 2]])
    max_edge = float(np.max(np.linalg.norm(edge_vecs, axis=-1)))
    if max_edge > 1.5 * h_target:
        raise MeshError(f"max edge {max_edge:.4g} exceeds 1.5*h_target={1.5 * h_target:.4g}")

    boundary = np.zeros(len(vertices), dtype=bool)
    boundary[ring_start[m]:] = True
    return Mesh(dim=2, vertices=vertices, cells=cells, boundary=boundary,
                radius=radius, radial_weight=0)


def edge_topology(mesh):
    """Edge list and cell-to-edge map of a triangle mesh.

    Returns (edges, cell_edges, boundary_edges): edges as sorted vertex
    pairs (ne, 2); cell_edges (nc, 3) indexing local edges (v0,v1), (v1,v2),
    (v2,v0); boundary_edges a bool mask of edges with a single adjacent cell.
    """
    if mesh.dim != 2:
        raise MeshError("edge topology is defined for 2D meshes")
    c = mesh.cells
    raw = np.concatenate([c[:, [0, 1]], c[:, [1, 2]], c[:, [2, 0]]])
    raw_sorted = np.sort(raw, axis=1)
    edges, inverse, counts = np.unique(raw_sorted, axis=0,
                                       return_inverse=True, return_counts=True)
    cell_edges = inverse.reshape(3, mesh.num_cells).T
    return edges, cell_edges, counts == 1


# ---------------------------------------------------------------------------
# Plain-text mesh exchange
# ---------------------------------------------------------------------------
# Format: a header line
#   # mesh dim=<1|2> radius=<R> weight=<w>
# followed by one "v x [y]" line per vertex and one "c i j [k]" line per
# cell.  Boundary flags are reconstructed on load.

def save_mesh(mesh, path):
    with open(path, "w") as fh:
        fh.write(f"# mesh dim={mesh.dim} radius={mesh.radius!r} weight={mesh.radial_weight}\n")
        if mesh.dim == 1:
            for x in mesh.vertices:
                fh.write(f"v {x!r}\n")
        else:
            for x, y in mesh.vertices:
                fh.write(f"v {x!r} {y!r}\n")
        for cell in mesh.cells:
            fh.write("c " + " ".join(str(i) for i in cell) + "\n")


def load_mesh(path):
    verts, cells = [], []
    dim = radius = weight = None
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                fields = dict(tok.split("=") for tok in line[1:].split() if "=" in tok)
                dim = int(fields["dim"])
                radius = float(fields["radius"])
                weight = int(fields["weight"])
            elif line.startswith("v "):
                verts.append([float(t) for t in line[2:].split()])
            elif line.startswith("c "):
                cells.append([int(t) for t in line[2:].split()])
    if dim is None:
        raise MeshError(f"{path}: missing mesh header line")
    cells = np.array(cells, dtype=np.int64)
    if dim == 1:
        vertices = np.array([v[0] for v in verts])
        boundary = np.zeros(len(vertices), dtype=bool)
        boundary[-1] = True
        if weight == 0:
            boundary[0] = True
        return Mesh(dim=1, vertices=vertices, cells=cells, boundary=boundary,
                    radius=radius, radial_weight=weight)
    vertices = np.array(verts)
    mesh = Mesh(dim=2, vertices=vertices, cells=cells,
                boundary=np.zeros(len(vertices), dtype=bool),
                radius=radius, radial_weight=0)
    edges, _, bnd_edges = edge_topology(mesh)
    on_boundary = np.unique(edges[bnd_edges])
    mesh.boundary[on_boundary] = True
    return mesh
