"""Unsteady Darcy-Forchheimer-Brinkman solves in BDM1 x DG0.

The velocity lives in the lowest-order Brezzi-Douglas-Marini space (full
piecewise-linear vectors with continuous normal traces, two degrees of
freedom per edge), pressure is piecewise constant.  The viscous term uses
the elementwise full-gradient form of the discrete scheme, not the
symmetric-gradient form of the continuous model; the drag nonlinearities
are handled with a lagged-modulus Picard iteration.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import FemError, quadrature
from .mesh import Mesh, edge_topology


class PicardError(RuntimeError):
    """Drag linearization failed to converge; carries the last residual."""

    def __init__(self, residual, iterations):
        super().__init__(f"Picard iteration did not converge: "
                         f"residual {residual:.3e} after {iterations} iterations")
        self.residual = residual
        self.iterations = iterations


class BDMSpace:
    """Lowest-order BDM space on a triangulation.

    Global degrees of freedom are, per edge, the normal component of the
    field at the edge's two endpoints (endpoints ordered by vertex index,
    normal fixed by the same ordering), which makes the normal trace
    continuous and needs no orientation signs.
    """

    def __init__(self, mesh: Mesh):
        if mesh.dim != 2:
            raise FemError("BDM space requires a 2D mesh")
        self.mesh = mesh
        edges, cell_edges, bnd = edge_topology(mesh)
        self.edges = edges
        self.cell_edges = cell_edges
        self.boundary_edges = bnd
        self.num_dofs = 2 * edges.shape[0]

        tang = mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]]
        tang /= np.linalg.norm(tang, axis=1)[:, None]
        self.normals = np.column_stack([tang[:, 1], -tang[:, 0]])

        # cell_dofs[c] = 6 global dof ids: (edge0 lo, edge0 hi, edge1 lo, ...)
        nc = mesh.num_cells
        self.cell_dofs = np.empty((nc, 6), dtype=np.int64)
        self.cell_dofs[:, 0::2] = 2 * cell_edges
        self.cell_dofs[:, 1::2] = 2 * cell_edges + 1

        # local basis: solve the 6x6 unisolvence system per cell against the
        # monomial basis {(1,0),(x,0),(y,0),(0,1),(0,x),(0,y)}
        pts = mesh.vertices[edges]                     # (ne, 2 endpoints, 2)
        nmat = np.zeros((nc, 6, 6))
        for le in range(3):
            e = cell_edges[:, le]
            n = self.normals[e]
            for a in range(2):
                p = pts[e, a]                          # evaluation point
                row = 2 * le + a
                nmat[:, row, 0] = n[:, 0]
                nmat[:, row, 1] = p[:, 0] * n[:, 0]
                nmat[:, row, 2] = p[:, 1] * n[:, 0]
                nmat[:, row, 3] = n[:, 1]
                nmat[:, row, 4] = p[:, 0] * n[:, 1]
                nmat[:, row, 5] = p[:, 1] * n[:, 1]
        self.coeff = np.linalg.inv(nmat)               # (nc, monomial, dof)

        qpts, qwts, _, _ = quadrature(mesh)
        self.qpts = qpts
        self.qwts = qwts
        # basis values at quadrature points: (nc, nq, dof, 2)
        ones = np.ones(qpts.shape[:2])
        mono_x = np.stack([ones, qpts[:, :, 0], qpts[:, :, 1]], axis=-1)
        self.basis_q = np.empty((mesh.num_cells, qpts.shape[1], 6, 2))
        self.basis_q[..., 0] = np.einsum("nqm,nmj->nqj", mono_x, self.coeff[:, 0:3, :])
        self.basis_q[..., 1] = np.einsum("nqm,nmj->nqj", mono_x, self.coeff[:, 3:6, :])
        # constant gradients (nc, dof, 2 component, 2 deriv) and divergences
        self.grad = np.empty((mesh.num_cells, 6, 2, 2))
        self.grad[:, :, 0, 0] = self.coeff[:, 1, :]
        self.grad[:, :, 0, 1] = self.coeff[:, 2, :]
        self.grad[:, :, 1, 0] = self.coeff[:, 4, :]
        self.grad[:, :, 1, 1] = self.coeff[:, 5, :]
        self.div = self.coeff[:, 1, :] + self.coeff[:, 5, :]
        self.areas = np.sum(qwts, axis=1)

        bmask = np.zeros(self.num_dofs, dtype=bool)
        bmask[2 * np.nonzero(bnd)[0]] = True
        bmask[2 * np.nonzero(bnd)[0] + 1] = True
        self.boundary_dofs = bmask

    # -- assembly ----------------------------------------------------------
    def _scatter(self, local):
        rows = np.repeat(self.cell_dofs, 6, axis=1).ravel()
        cols = np.tile(self.cell_dofs, (1, 6)).ravel()
        return sp.coo_matrix((local.ravel(), (rows, cols)),
                             shape=(self.num_dofs, self.num_dofs)).tocsr()

    def mass(self, weight_q=None):
        """Vector mass matrix, optionally weighted per quadrature point."""
        w = self.qwts if weight_q is None else self.qwts * weight_q
        local = np.einsum("nq,nqid,nqjd->nij", w, self.basis_q, self.basis_q)
        return self._scatter(local)

    def broken_stiffness(self, coeff_q=None):
        """Elementwise gradient stiffness int c grad(v):grad(w)."""
        w = np.sum(self.qwts if coeff_q is None else self.qwts * coeff_q, axis=1)
        local = np.einsum("n,nicd,njcd->nij", w, self.grad, self.grad)
        return self._scatter(local)

    def divergence_matrix(self):
        """B[c, j] = int_c div(basis_j); rows span the DG0 pressure space."""
        rows = np.repeat(np.arange(self.mesh.num_cells), 6)
        cols = self.cell_dofs.ravel()
        vals = (self.div * self.areas[:, None]).ravel()
        return sp.coo_matrix((vals, (rows, cols)),
                             shape=(self.mesh.num_cells, self.num_dofs)).tocsr()

    def load(self, force_q):
        """Load vector from per-quadrature-point forces (nc, nq, 2)."""
        local = np.einsum("nq,nqd,nqjd->nj", self.qwts, force_q, self.basis_q)
        out = np.zeros(self.num_dofs)
        np.add.at(out, self.cell_dofs, local)
        return out

    def at_quadrature_from_dofs(self, dofs):
        """Field values at quadrature points, (nc, nq, 2)."""
        local = dofs[self.cell_dofs]
        return np.einsum("nqjd,nj->nqd", self.basis_q, local)

    def interpolate(self, fn):
        """BDM interpolation of an analytic vector field (exact on [P1]^2)."""
        dofs = np.empty(self.num_dofs)
        for a in range(2):
            p = self.mesh.vertices[self.edges[:, a]]
            v = np.asarray(fn(p[:, 0], p[:, 1]), dtype=float)
            dofs[2 * np.arange(self.edges.shape[0]) + a] = np.sum(v.T * self.normals, axis=1) \
                if v.shape[0] == 2 else np.sum(v * self.normals, axis=1)
        return dofs

    def l2_norm(self, dofs):
        return float(np.sqrt(max(dofs @ (self.mass() @ dofs), 0.0)))


@dataclasses.dataclass
class VectorField:
    """Velocity field: BDM coefficients in 2D, a radial nodal profile in 1D."""

    mesh: Mesh
    dofs: np.ndarray
    space: BDMSpace | None = None

    @classmethod
    def zero(cls, mesh, space=None):
        if mesh.dim == 1:
            return cls(mesh, np.zeros(mesh.num_vertices), None)
        space = space if space is not None else BDMSpace(mesh)
        return cls(mesh, np.zeros(space.num_dofs), space)

    def at_quadrature(self, mesh):
        if mesh is not self.mesh:
            raise FemError("vector field defined on a different mesh")
        if self.mesh.dim == 1:
            _, wts, basis, _ = quadrature(mesh)
            vq = self.dofs[mesh.cells] @ basis.T
            return vq[:, :, None]
        return self.space.at_quadrature_from_dofs(self.dofs)

    def is_zero(self):
        return not np.any(self.dofs)


@dataclasses.dataclass
class PressureField:
    """Piecewise-constant pressure, normalized to zero area-weighted mean."""

    mesh: Mesh
    values: np.ndarray


def divergence_residual(v: VectorField):
    """max over cells of |int_cell div v|, the quantity the DG0 constraint controls."""
    if v.mesh.dim == 1:
        return 0.0
    b = v.space.divergence_matrix()
    return float(np.max(np.abs(b @ v.dofs)))


def solve_dfb_step(space: BDMSpace, v_prev, params, dt,
                   mu_k=None, phi_k=None, sigma_k=None,
                   viscosity=None, forcing_q=None, f_1=None, f_2=None,
                   picard_tol=1e-8, picard_max=50, v_init=None):
    """One implicit step of the velocity/pressure system.

    The drag terms are linearized around the previous Picard iterate
    (F_1 |v^m| + F_2 |v^m|^2 as a mass weight) and iterated until the
    max-norm increment of the dofs drops below ``picard_tol``.  The forcing
    defaults to the capillary/chemotactic body force
    (mu_k + chi_0 sigma_k) grad(phi_k); pass ``forcing_q`` (values at
    quadrature points, shape (nc, nq, 2)) to override.

    Returns (VectorField, PressureField, picard_iterations).
    """
    mesh = space.mesh
    if dt <= 0:
        raise FemError(f"dt must be positive, got {dt}")
    f1 = params.f_1 if f_1 is None else f_1
    f2 = params.f_2 if f_2 is None else f_2

    _, _, basis, grads = quadrature(mesh)
    if forcing_q is None:
        svals = mu_k + params.chi_0 * sigma_k
        sq = svals[mesh.cells] @ basis.T                     # (nc, nq)
        gphi = np.einsum("nad,na->nd", grads, phi_k[mesh.cells])
        forcing_q = sq[:, :, None] * gphi[:, None, :]
    load = dt * space.load(forcing_q)

    if viscosity is None:
        visc_q = None
    else:
        vv = np.asarray(viscosity, dtype=float)
        visc_q = (vv[mesh.cells] @ basis.T) if vv.ndim else np.full_like(space.qwts, float(vv))

    m_v = space.mass()
    k_visc = space.broken_stiffness(visc_q)
    if viscosity is None:
        k_visc = params.nu * k_visc
    b = space.divergence_matrix()
    n_v = space.num_dofs
    n_p = mesh.num_cells
    areas = space.areas

    v_prev_dofs = v_prev.dofs if isinstance(v_prev, VectorField) else np.asarray(v_prev)
    rhs_v0 = m_v @ v_prev_dofs + load
    v_m = (v_init.dofs if isinstance(v_init, VectorField) else v_init) \
        if v_init is not None else v_prev_dofs
    v_m = np.asarray(v_m, dtype=float).copy()

    clamped = space.boundary_dofs
    keep = sp.diags((~clamped).astype(float))
    fix = sp.diags(clamped.astype(float))

    iterations = 0
    residual = np.inf
    for m in range(picard_max):
        iterations = m + 1
        if f1 or f2:
            speed = np.linalg.norm(space.at_quadrature_from_dofs(v_m), axis=2)
            drag = space.mass(weight_q=dt * (f1 * speed + f2 * speed**2))
        else:
            drag = None
        a_block = (1.0 + dt * params.alpha) * m_v + dt * k_visc
        if drag is not None:
            a_block = a_block + drag
        a_block = keep @ a_block @ keep + fix

        bt = (keep @ (-dt * b.T)).tocsr()
        b_c = (b @ keep).tocsr()
        system = sp.bmat([
            [a_block, bt, None],
            [b_c, None, areas[:, None]],
            [None, areas[None, :], None],
        ], format="csc")
        rhs = np.concatenate([np.where(clamped, 0.0, rhs_v0), np.zeros(n_p), [0.0]])
        sol = spla.splu(system).solve(rhs)
        v_new = sol[:n_v]
        p_new = sol[n_v:n_v + n_p]

        residual = float(np.max(np.abs(v_new - v_m))) if n_v else 0.0
        v_m = v_new
        if residual <= picard_tol or not (f1 or f2):
            break
    else:
        raise PicardError(residual, iterations)

    p_new = p_new - (areas @ p_new) / np.sum(areas)
    return (VectorField(mesh, v_m, space),
            PressureField(mesh, p_new),
            iterations)
