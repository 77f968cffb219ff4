"""Convolution kernels and the nonlocal chemical potential.

Convolutions integrate over the computational domain only (no periodic
wrap, no exterior extension) using the same mesh quadrature as the scalar
assembly.  The direct-summation path below is the reference; it is
vectorized over nodes but mathematically the plain double sum.
"""

from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np

from .fem import ScalarField, quadrature
from .model import ConvexSplit, ParameterVector, psi_eval


class KernelError(ValueError):
    """Kernel/domain configuration problem."""


@dataclasses.dataclass(frozen=True)
class Kernel:
    """Even convolution kernel with precomputed L1 data.

    ``profile`` maps displacement vectors of shape (..., dim) to kernel
    values; ``support_radius`` is the truncation radius; the L1 norms are
    supplied by the factories (computed numerically where no closed form
    exists).
    """

    profile: Callable
    dim: int
    support_radius: float
    l1_norm: float
    grad_l1_norm: float
    name: str = "kernel"

    def __call__(self, displacements):
        return self.profile(np.asarray(displacements, dtype=float))


def _radial_profile(fn, dim):
    def profile(x):
        x = np.asarray(x, dtype=float)
        if x.ndim == 0 or x.shape[-1] != dim:
            raise KernelError(f"expected displacement vectors with {dim} components")
        return fn(np.linalg.norm(x, axis=-1))
    return profile


def gaussian_kernel(width, dim=1, amplitude=None):
    """Truncated Gaussian A exp(-|x|^2 / 2 s^2) supported on |x| <= 4s.

    With ``amplitude=None`` the kernel is normalized to unit mass over its
    support.
    """
    if width <= 0:
        raise KernelError(f"width must be positive, got {width}")
    s = float(width)
    cut = 4.0 * s
    r = np.linspace(0.0, cut, 4001)
    core = np.exp(-r**2 / (2.0 * s**2))
    if dim == 1:
        raw_mass = 2.0 * np.trapz(core, r)
        raw_grad = 2.0 * np.trapz(np.abs(-r / s**2) * core, r)
    elif dim == 2:
        raw_mass = 2.0 * np.pi * np.trapz(r * core, r)
        raw_grad = 2.0 * np.pi * np.trapz(r * (r / s**2) * core, r)
    else:
        raise KernelError("only 1D and 2D kernels are shipped")
    amp = (1.0 / raw_mass) if amplitude is None else float(amplitude)

    def fn(dist):
        return np.where(dist <= cut, amp * np.exp(-dist**2 / (2.0 * s**2)), 0.0)

    return Kernel(profile=_radial_profile(fn, dim), dim=dim, support_radius=cut,
                  l1_norm=amp * raw_mass, grad_l1_norm=amp * raw_grad,
                  name=f"gaussian(s={s})")


def indicator_kernel(k, dim=1):
    """Rescaled indicator family k^(d+2) on the ball |x| <= 1/k.

    As k grows the induced nonlocal operator approaches a multiple of the
    (negative) Laplacian.
    """
    if k <= 0:
        raise KernelError(f"k must be positive, got {k}")
    k = float(k)
    amp = k ** (dim + 2)
    cut = 1.0 / k
    if dim == 1:
        mass = amp * 2.0 * cut
        grad = 2.0 * amp            # total variation of the jumps
    else:
        mass = amp * np.pi * cut**2
        grad = amp * 2.0 * np.pi * cut

    def fn(dist):
        return np.where(dist <= cut, amp, 0.0)

    return Kernel(profile=_radial_profile(fn, dim), dim=dim, support_radius=cut,
                  l1_norm=mass, grad_l1_norm=grad, name=f"indicator(k={k})")


def diffusion_coefficient(kernel):
    """Second moment c = (1/2) int J(z) z_1^2 dz of the kernel.

    This is the effective interface coefficient: on smooth fields
    phi*(J*1) - J*phi -> -c Laplacian(phi) as the support shrinks.
    """
    cut = kernel.support_radius
    if kernel.dim == 1:
        z = np.linspace(-cut, cut, 8001)
        vals = kernel.profile(z[:, None])
        return 0.5 * float(np.trapz(vals * z**2, z))
    r = np.linspace(0.0, cut, 2001)
    tt = np.linspace(0.0, 2.0 * np.pi, 721)
    rr, th = np.meshgrid(r, tt, indexing="ij")
    pts = np.stack([rr * np.cos(th), rr * np.sin(th)], axis=-1)
    vals = kernel.profile(pts) * rr * (rr * np.cos(th)) ** 2
    inner = np.trapz(vals, tt, axis=1)
    return 0.5 * float(np.trapz(inner, r))


def _check_domain(kernel, mesh):
    if kernel.dim != (1 if mesh.dim == 1 else 2):
        raise KernelError(f"kernel dimension {kernel.dim} does not match mesh dimension {mesh.dim}")
    extent = mesh.radius if mesh.dim == 1 else 2.0 * mesh.radius
    if kernel.support_radius > 2.0 * extent:
        raise KernelError("kernel support exceeds the domain; no padding policy is defined")


def convolution_matrix(kernel, mesh, chunk=256):
    """Dense matrix G with (J*phi)(x_i) = (G phi)_i by mesh quadrature."""
    _check_domain(kernel, mesh)
    pts, wts, basis, _ = quadrature(mesh)
    nodes = mesh.vertices if mesh.dim == 2 else mesh.vertices[:, None]
    nv = mesh.num_vertices
    nc, nq = wts.shape
    nb = basis.shape[1]
    flat_pts = pts.reshape(nc * nq, -1)
    flat_wts = wts.reshape(-1)
    out = np.zeros((nv, nv))
    for start in range(0, nv, chunk):
        stop = min(start + chunk, nv)
        disp = nodes[start:stop, None, :] - flat_pts[None, :, :]
        kv = (kernel.profile(disp) * flat_wts[None, :]).reshape(stop - start, nc, nq)
        contrib = np.einsum("xnq,qa->xna", kv, basis)      # (chunk, nc, nb)
        block = np.zeros((stop - start, nv))
        for a in range(nb):
            np.add.at(block, (slice(None), mesh.cells[:, a]), contrib[:, :, a])
        out[start:stop] = block
    return out


def convolve(kernel, field, matrix=None):
    """(J * phi)(x_i) at mesh nodes by quadrature; linear in phi."""
    if matrix is not None:
        return ScalarField(field.mesh, matrix @ field.values)
    mesh = field.mesh
    _check_domain(kernel, mesh)
    pts, wts, basis, _ = quadrature(mesh)
    phiq = field.values[mesh.cells] @ basis.T              # (nc, nq)
    nodes = mesh.vertices if mesh.dim == 2 else mesh.vertices[:, None]
    flat_pts = pts.reshape(-1, pts.shape[-1])
    flat_val = (wts * phiq).reshape(-1)
    out = np.empty(mesh.num_vertices)
    chunk = max(1, int(2**22 // max(flat_pts.shape[0], 1)))
    for start in range(0, mesh.num_vertices, chunk):
        stop = min(start + chunk, mesh.num_vertices)
        disp = nodes[start:stop, None, :] - flat_pts[None, :, :]
        out[start:stop] = kernel.profile(disp) @ flat_val
    return ScalarField(mesh, out)


def convolve_unit(kernel, mesh):
    """Nodal values of J * 1 over the domain."""
    ones = ScalarField(mesh, np.ones(mesh.num_vertices))
    return convolve(kernel, ones).values


def nonlocal_mu(phi_t, phi_sigma, kernel, params: ParameterVector):
    """Nonlocal chemical potential psi'(phi) + phi (J*1) - J*phi - chi_0 sigma."""
    mesh = phi_t.mesh
    if phi_sigma.mesh is not mesh:
        raise KernelError("fields live on different meshes")
    j1 = convolve_unit(kernel, mesh)
    jphi = convolve(kernel, phi_t).values
    _, dpsi, _ = psi_eval(phi_t.values, params.e_bar)
    vals = dpsi + phi_t.values * j1 - jphi - params.chi_0 * phi_sigma.values
    return ScalarField(mesh, vals)


def semi_implicit_nonlocal_mu(phi_new, phi_old, sigma_old, j1, jphi_old,
                              split: ConvexSplit):
    """Time-discrete nonlocal potential with the stabilizing sign convention.

    The nonnegative multiplication operator phi*(J*1) is implicit, the
    smoothing convolution J*phi and the chemotaxis term are explicit:
    mu = psi_c'(phi_new) - psi_e'(phi_old) + phi_new*(J*1) - J*phi_old
    - chi_0 sigma_old.
    """
    return (split.psi_c_prime(phi_new) - split.psi_e_prime(phi_old)
            + phi_new * j1 - jphi_old - split.chi_0 * sigma_old)
