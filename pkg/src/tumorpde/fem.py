"""P1 scalar finite elements: quadrature, assembly, boundary conditions.

Quadrature is 3-point Gauss on intervals and the edge-midpoint rule on
triangles, exact for quadratics, so every pairing of two piecewise-linear
functions integrates exactly.  Nonlinear coefficients are evaluated nodally
and interpolated (mass-lumped products).
"""

from __future__ import annotations

import dataclasses
import warnings

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, MeshError

# 3-point Gauss-Legendre on [0, 1]
_G3_POINTS = np.array([0.5 - np.sqrt(15.0) / 10.0, 0.5, 0.5 + np.sqrt(15.0) / 10.0])
_G3_WEIGHTS = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])

# edge-midpoint rule on the reference triangle, barycentric coordinates
_TRI_BARY = np.array([[0.5, 0.5, 0.0],
                      [0.0, 0.5, 0.5],
                      [0.5, 0.0, 0.5]])
_TRI_WEIGHTS = np.array([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0])


class FemError(ValueError):
    """Dimension mismatch or invalid assembly input."""


@dataclasses.dataclass
class ScalarField:
    """Nodal coefficients of a piecewise-linear scalar function."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.mesh.num_vertices,):
            raise FemError(f"field has {self.values.shape} values for "
                           f"{self.mesh.num_vertices} vertices")
        if not np.all(np.isfinite(self.values)):
            raise FemError("field values must be finite")

    def copy(self):
        return ScalarField(self.mesh, self.values.copy())


@dataclasses.dataclass
class AssembledOperator:
    """Sparse operator in CSR form with a symmetry tag."""

    matrix: sp.csr_matrix
    symmetric: bool = False

    @property
    def shape(self):
        return self.matrix.shape

    def dot(self, x):
        return self.matrix @ x

    def toarray(self):
        return self.matrix.toarray()


def _coefficient_values(mesh, coefficient):
    """Nodal values of an assembly coefficient (field, array, scalar or None)."""
    if coefficient is None:
        return None
    if isinstance(coefficient, ScalarField):
        if coefficient.mesh is not mesh:
            raise FemError("coefficient defined on a different mesh")
        return coefficient.values
    arr = np.asarray(coefficient, dtype=float)
    if arr.ndim == 0:
        return np.full(mesh.num_vertices, float(arr))
    if arr.shape != (mesh.num_vertices,):
        raise FemError(f"coefficient shape {arr.shape} does not match mesh")
    return arr


def quadrature(mesh):
    """Quadrature data: (points, weights, basis values, basis gradients).

    points: (nc, nq, dim); weights already carry the cell measure and, in
    1D, the radial factor r^w; basis values (nq, nbasis); basis gradients
    (nc, nbasis, dim), constant per cell.
    """
    if mesh.dim == 1:
        left = mesh.vertices[mesh.cells[:, 0]]
        h = mesh.vertices[mesh.cells[:, 1]] - left
        pts = left[:, None] + np.outer(h, _G3_POINTS)
        wts = np.outer(h, _G3_WEIGHTS)
        if mesh.radial_weight:
            wts = wts * pts ** mesh.radial_weight
        basis = np.column_stack([1.0 - _G3_POINTS, _G3_POINTS])
        grads = np.stack([-1.0 / h, 1.0 / h], axis=1)[:, :, None]
        return pts[:, :, None], wts, basis, grads
    p = mesh.cell_vertices()                       # (nc, 3, 2)
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    area = 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    pts = np.einsum("qk,nkd->nqd", _TRI_BARY, p)
    wts = np.outer(area, _TRI_WEIGHTS)
    basis = _TRI_BARY
    # gradients of barycentric coordinates
    inv_det = 1.0 / (2.0 * area)
    g1 = np.stack([p[:, 1, 1] - p[:, 2, 1], p[:, 2, 0] - p[:, 1, 0]], axis=1)
    g2 = np.stack([p[:, 2, 1] - p[:, 0, 1], p[:, 0, 0] - p[:, 2, 0]], axis=1)
    g3 = np.stack([p[:, 0, 1] - p[:, 1, 1], p[:, 1, 0] - p[:, 0, 0]], axis=1)
    grads = np.stack([g1, g2, g3], axis=1) * inv_det[:, None, None]
    return pts, wts, basis, grads


def cell_areas(mesh):
    """Unweighted cell measures (lengths or areas)."""
    if mesh.dim == 1:
        return mesh.vertices[mesh.cells[:, 1]] - mesh.vertices[mesh.cells[:, 0]]
    p = mesh.cell_vertices()
    d1 = p[:, 1] - p[:, 0]
    d2 = p[:, 2] - p[:, 0]
    return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])


def _scatter(mesh, local):
    """Scatter per-cell local matrices (nc, nb, nb) into a global CSR matrix."""
    nb = mesh.cells.shape[1]
    rows = np.repeat(mesh.cells, nb, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, nb)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(mesh.num_vertices, mesh.num_vertices))
    return mat.tocsr()


def assemble_mass(mesh, coefficient=None):
    """Weighted mass matrix M_ij = int c phi_i phi_j dmu."""
    cvals = _coefficient_values(mesh, coefficient)
    _, wts, basis, _ = quadrature(mesh)
    if cvals is None:
        cq = np.ones_like(wts)
    else:
        cq = cvals[mesh.cells] @ basis.T               # (nc, nq)
    local = np.einsum("nq,qa,qb->nab", wts * cq, basis, basis)
    return AssembledOperator(_scatter(mesh, local), symmetric=True)


def assemble_stiffness(mesh, coefficient=None):
    """Weighted stiffness K_ij = int c grad(phi_i).grad(phi_j) dmu."""
    cvals = _coefficient_values(mesh, coefficient)
    _, wts, basis, grads = quadrature(mesh)
    if cvals is None:
        cq = np.ones_like(wts)
    else:
        if np.any(cvals < 0):
            warnings.warn("negative diffusion coefficient: losing coercivity",
                          RuntimeWarning, stacklevel=2)
        cq = cvals[mesh.cells] @ basis.T
    wq = np.sum(wts * cq, axis=1)                      # gradients constant per cell
    local = np.einsum("n,nad,nbd->nab", wq, grads, grads)
    return AssembledOperator(_scatter(mesh, local), symmetric=True)


def assemble_convection(mesh, velocity):
    """Weak convection C_ij = -int phi_j v.grad(phi_i) dmu.

    ``velocity`` may be a constant, a nodal array/ScalarField (1D profile),
    or any object with ``at_quadrature(mesh) -> (nc, nq, dim)`` values
    (vector fields from the flow solver).
    """
    _, wts, basis, grads = quadrature(mesh)
    if hasattr(velocity, "at_quadrature"):
        vq = velocity.at_quadrature(mesh)              # (nc, nq, dim)
    else:
        vvals = _coefficient_values(mesh, velocity)
        vq = (vvals[mesh.cells] @ basis.T)[:, :, None]
    vdotg = np.einsum("nqd,nad->nqa", vq, grads)       # v.grad(phi_a)
    local = -np.einsum("nq,nqa,qb->nab", wts, vdotg, basis)
    return AssembledOperator(_scatter(mesh, local), symmetric=False)


def lumped_mass(mesh):
    """Row sums of the mass matrix: int phi_i dmu (positive weights)."""
    _, wts, basis, _ = quadrature(mesh)
    contrib = np.einsum("nq,qa->na", wts, basis)
    w = np.zeros(mesh.num_vertices)
    np.add.at(w, mesh.cells, contrib)
    return w


def integrate(mesh, nodal_values):
    """Integral of the nodal interpolant against the mesh measure."""
    return float(lumped_mass(mesh) @ np.asarray(nodal_values, dtype=float))


def domain_measure(mesh):
    """Measure of the whole domain (R^2/2, R^3/3 radial; area in 2D)."""
    return float(np.sum(lumped_mass(mesh)))


def apply_dirichlet(operator, rhs, mask, value):
    """Impose u = value on flagged rows of a linear system.

    Flagged rows become identity rows with the boundary value on the right
    hand side; flagged columns are eliminated into the right hand side so a
    symmetric operator keeps a symmetric free block.  Returns a new
    (AssembledOperator, rhs) pair.
    """
    mat = operator.matrix if isinstance(operator, AssembledOperator) else operator
    n = mat.shape[0]
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (n,):
        raise FemError(f"boundary mask shape {mask.shape} does not match system size {n}")
    rhs = np.asarray(rhs, dtype=float).copy()
    lift = np.where(mask, float(value), 0.0)
    rhs -= mat @ lift
    keep = sp.diags((~mask).astype(float))
    fixed = sp.diags(mask.astype(float))
    new_mat = (keep @ mat @ keep + fixed).tocsr()
    rhs[mask] = value
    sym = operator.symmetric if isinstance(operator, AssembledOperator) else False
    return AssembledOperator(new_mat, symmetric=sym), rhs


def interpolate(mesh, fn):
    """Nodal interpolation of a callable of the coordinates."""
    if mesh.dim == 1:
        vals = fn(mesh.vertices)
    else:
        vals = fn(mesh.vertices[:, 0], mesh.vertices[:, 1])
    return ScalarField(mesh, np.broadcast_to(np.asarray(vals, dtype=float),
                                             (mesh.num_vertices,)).copy())


# ---------------------------------------------------------------------------
# Field snapshot exchange: "vertex_index,x,[y,]value" per row
# ---------------------------------------------------------------------------

def save_field(field, path, precision=17):
    mesh = field.mesh
    fmt = f"%.{precision}g"
    with open(path, "w") as fh:
        if mesh.dim == 1:
            fh.write("vertex_index,x,value\n")
            for i, (x, v) in enumerate(zip(mesh.vertices, field.values)):
                fh.write(f"{i},{fmt % x},{fmt % v}\n")
        else:
            fh.write("vertex_index,x,y,value\n")
            for i, ((x, y), v) in enumerate(zip(mesh.vertices, field.values)):
                fh.write(f"{i},{fmt % x},{fmt % y},{fmt % v}\n")


def load_field(path, mesh):
    data = np.genfromtxt(path, delimiter=",", skip_header=1)
    data = np.atleast_2d(data)
    order = np.argsort(data[:, 0])
    return ScalarField(mesh, data[order, -1])
