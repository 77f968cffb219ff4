"""Semi-implicit time integration of the coupled tumor/nutrient/flow system.

Each backward-Euler step is decoupled by an inner Gauss-Seidel loop:
velocity/pressure first, then the nutrient, then the tumor/potential pair,
repeated until the max-norm tumor increment drops below the tolerance.
The contractive part of the potential is advanced implicitly (linearized
by one Newton step about the current iterate), the expansive part, the
chemotaxis coupling and the reaction cut-offs are explicit.

Mass-type products use the lumped weights throughout, which makes the
pure Cahn-Hilliard step an exact discrete gradient flow of the recorded
energy (evaluated with nodally interpolated potential terms).
"""

from __future__ import annotations

import dataclasses
import math
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

from . import kernels as _kernels
from .fem import (ScalarField, apply_dirichlet, assemble_convection,
                  assemble_stiffness, lumped_mass)
from .flow import BDMSpace, PressureField, VectorField, solve_dfb_step
from .mesh import Mesh
from .model import ConvexSplit, MobilityModel, ParameterVector, cutoff, psi_eval

VARIANTS = ("I", "II", "III", "nonlocal")


class GaussSeidelError(RuntimeError):
    """Inner fixed-point loop hit the iteration cap."""

    def __init__(self, t, increment, iterations):
        super().__init__(f"Gauss-Seidel loop did not converge at t={t:.6g}: "
                         f"increment {increment:.3e} after {iterations} iterations")
        self.t = t
        self.increment = increment
        self.iterations = iterations


@dataclasses.dataclass
class StepperConfig:
    """Time loop controls."""

    dt: float = 0.05
    t_end: float = 21.0
    gs_tol: float = 1e-6
    gs_max_iter: int = 100
    picard_tol: float = 1e-8
    picard_max: int = 50
    model_variant: str = "III"
    d_radial: int = 2
    snapshot_interval: float = 3.0
    strict_inner_test: bool = False   # also test sigma/velocity increments

    def __post_init__(self):
        if self.dt <= 0 or self.gs_tol <= 0 or self.gs_max_iter < 1:
            raise ValueError("need dt > 0, gs_tol > 0, gs_max_iter >= 1")
        if self.model_variant not in VARIANTS:
            raise ValueError(f"unknown model variant {self.model_variant!r}; "
                             f"choose from {VARIANTS}")
        if self.d_radial not in (2, 3):
            raise ValueError("d_radial must be 2 or 3")


@dataclasses.dataclass
class FieldState:
    """Solution quintuple at one time level."""

    t: float
    phi_t: ScalarField
    mu: ScalarField
    phi_sigma: ScalarField
    v: VectorField
    p: PressureField


@dataclasses.dataclass(frozen=True)
class StepRecord:
    t: float
    confluence: float
    energy: float
    mass: float
    gs_iterations: int


@dataclasses.dataclass
class Trajectory:
    records: list
    snapshots: list
    final: FieldState

    def times(self):
        return np.array([r.t for r in self.records])

    def confluences(self):
        return np.array([r.confluence for r in self.records])


def _tridiag_bands(csr):
    return csr.diagonal(0).copy(), csr.diagonal(1).copy()


class Simulation:
    """Cached assembly + the step/run drivers for one mesh and parameter set."""

    def __init__(self, mesh: Mesh, params: ParameterVector, config: StepperConfig,
                 kernel=None, mobilities: MobilityModel | None = None):
        self.mesh = mesh
        self.params = params
        self.config = config
        self.kernel = kernel
        self.split = ConvexSplit(params.e_bar, params.chi_0, params.delta_sigma)
        self.mobilities = mobilities if mobilities is not None else MobilityModel.constants(params)
        self._constant_mobilities = mobilities is None

        self.w = lumped_mass(mesh)
        self.stiffness = assemble_stiffness(mesh).matrix
        self._kd, self._ko = _tridiag_bands(self.stiffness) if mesh.dim == 1 else (None, None)

        variant = config.model_variant
        self._with_flow = mesh.dim == 2 and variant in ("II", "III", "nonlocal")
        self.space = BDMSpace(mesh) if self._with_flow else None
        if variant == "nonlocal":
            if kernel is None:
                raise ValueError("nonlocal variant requires a kernel")
            self.conv_matrix = _kernels.convolution_matrix(kernel, mesh)
            self.j_unit = self.conv_matrix @ np.ones(mesh.num_vertices)
        else:
            self.conv_matrix = None
            self.j_unit = None

    # -- diagnostics -------------------------------------------------------
    def confluence(self, phi_values):
        return float(self.w @ phi_values) / float(np.sum(self.w))

    def mass(self, phi_values):
        return float(self.w @ phi_values)

    def energy(self, phi, mu_unused, sigma):
        p = self.params
        psi = psi_eval(phi, p.e_bar)[0]
        nodal = psi + sigma**2 / (2.0 * p.delta_sigma) - p.chi_0 * phi * sigma
        grad_part = 0.5 * p.eps_t**2 * float(phi @ (self.stiffness @ phi))
        return float(self.w @ nodal) + grad_part

    # -- initial data --------------------------------------------------------
    def initial_state(self, phi0: ScalarField, sigma0: ScalarField | None = None):
        """Assemble a consistent state at t=0 (chemical potential included)."""
        mesh = self.mesh
        if sigma0 is None:
            sigma0 = ScalarField(mesh, np.ones(mesh.num_vertices))
        sig = sigma0.values.copy()
        sig[mesh.boundary] = 1.0
        phi = phi0.values
        p = self.params
        if self.config.model_variant == "nonlocal":
            mu0 = psi_eval(phi, p.e_bar)[1] + phi * self.j_unit \
                - self.conv_matrix @ phi - p.chi_0 * sig
        else:
            mu0 = psi_eval(phi, p.e_bar)[1] - p.chi_0 * sig \
                + p.eps_t**2 * (self.stiffness @ phi) / self.w
        return FieldState(t=0.0,
                          phi_t=ScalarField(mesh, phi.copy()),
                          mu=ScalarField(mesh, mu0),
                          phi_sigma=ScalarField(mesh, sig),
                          v=VectorField.zero(mesh, self.space),
                          p=PressureField(mesh, np.zeros(mesh.num_cells)))

    # -- inner solves --------------------------------------------------------
    def _mobility_values(self, which, phi, sigma):
        fn = getattr(self.mobilities, which)
        return fn(phi, sigma)

    def _solve_nutrient_1d(self, sigma_n, phi_k, sigma_k):
        p, cfg, mesh = self.params, self.config, self.mesh
        dt = cfg.dt
        if self._constant_mobilities:
            kd, ko, msig = self._kd, self._ko, p.m_sigma
        else:
            mvals = self._mobility_values("nutrient", phi_k, sigma_k)
            kd, ko = _tridiag_bands(assemble_stiffness(self.mesh, mvals).matrix)
            msig = 1.0
        d = self.w + dt / p.delta_sigma * msig * kd \
            + dt * p.lambda_sigma * self.w * cutoff(phi_k)
        o = dt / p.delta_sigma * msig * ko
        kphi = msig * (self.stiffness @ phi_k) if self._constant_mobilities else None
        if kphi is None:
            kmat = sp.diags([ko, kd, ko], [-1, 0, 1], format="csr")
            kphi = kmat @ phi_k
        rhs = self.w * sigma_n + dt * p.chi_0 * kphi

        # Dirichlet sigma = 1 on boundary endpoints (row+column elimination)
        bnd = mesh.boundary
        n = mesh.num_vertices
        d = d.copy()
        o = o.copy()
        if bnd[-1]:
            rhs[-2] -= o[-1] * 1.0
            o[-1] = 0.0
            d[-1] = 1.0
            rhs[-1] = 1.0
        if bnd[0]:
            rhs[1] -= o[0] * 1.0
            o[0] = 0.0
            d[0] = 1.0
            rhs[0] = 1.0
        ab = np.zeros((3, n))
        ab[0, 1:] = o
        ab[1] = d
        ab[2, :-1] = o
        return solve_banded((1, 1), ab, rhs)

    def _solve_phase_1d(self, phi_n, phi_k, sigma_new, sigma_n, jphi_n=None):
        p, cfg = self.params, self.config
        dt = cfg.dt
        n = self.mesh.num_vertices
        w = self.w
        split = self.split
        psi_c1 = split.psi_c_prime(phi_k)
        psi_c2 = split.psi_c_second(phi_k)
        psi_e1 = split.psi_e_prime(phi_n)
        growth = sigma_new * cutoff(phi_k * (1.0 - phi_k))

        if self._constant_mobilities:
            mt_kd, mt_ko = p.m_t * self._kd, p.m_t * self._ko
        else:
            mvals = self._mobility_values("tumor", phi_k, sigma_new)
            mt_kd, mt_ko = _tridiag_bands(assemble_stiffness(self.mesh, mvals).matrix)

        ab = np.zeros((7, 2 * n))
        ab[3, 0::2] = w * (1.0 + dt * p.lambda_a)
        ab[2, 1::2] = dt * mt_kd
        ab[4, 1:2 * n - 2:2] = dt * mt_ko
        ab[0, 3::2] = dt * mt_ko
        ab[3, 1::2] = w
        if cfg.model_variant == "nonlocal":
            ab[4, 0::2] = -w * (psi_c2 + self.j_unit)
            explicit = psi_c1 - psi_c2 * phi_k - psi_e1 - jphi_n - p.chi_0 * sigma_n
        else:
            ab[4, 0::2] = -(w * psi_c2 + p.eps_t**2 * self._kd)
            ab[6, 0:2 * n - 3:2] = -p.eps_t**2 * self._ko
            ab[2, 2:2 * n - 1:2] = -p.eps_t**2 * self._ko
            explicit = psi_c1 - psi_c2 * phi_k - psi_e1 - p.chi_0 * sigma_n

        rhs = np.empty(2 * n)
        rhs[0::2] = w * phi_n + dt * p.lambda_t * w * growth
        rhs[1::2] = w * explicit
        sol = solve_banded((3, 3), ab, rhs)
        return sol[0::2], sol[1::2]

    def _solve_nutrient_2d(self, sigma_n, phi_k, sigma_k, conv):
        p, cfg, mesh = self.params, self.config, self.mesh
        dt = cfg.dt
        if self._constant_mobilities:
            k_sig = p.m_sigma * self.stiffness
        else:
            mvals = self._mobility_values("nutrient", phi_k, sigma_k)
            k_sig = assemble_stiffness(mesh, mvals).matrix
        a = sp.diags(self.w + dt * p.lambda_sigma * self.w * cutoff(phi_k)) \
            + dt / p.delta_sigma * k_sig
        if conv is not None:
            a = a + dt * conv
        rhs = self.w * sigma_n + dt * p.chi_0 * (k_sig @ phi_k)
        op, rhs = apply_dirichlet(a.tocsr(), rhs, mesh.boundary, 1.0)
        return spla.spsolve(op.matrix.tocsc(), rhs)

    def _solve_phase_2d(self, phi_n, phi_k, sigma_new, sigma_n, conv, jphi_n=None):
        p, cfg, mesh = self.params, self.config, self.mesh
        dt = cfg.dt
        n = mesh.num_vertices
        w = self.w
        split = self.split
        psi_c1 = split.psi_c_prime(phi_k)
        psi_c2 = split.psi_c_second(phi_k)
        psi_e1 = split.psi_e_prime(phi_n)
        growth = sigma_new * cutoff(phi_k * (1.0 - phi_k))

        if self._constant_mobilities:
            k_t = p.m_t * self.stiffness
        else:
            mvals = self._mobility_values("tumor", phi_k, sigma_new)
            k_t = assemble_stiffness(mesh, mvals).matrix

        a11 = sp.diags(w * (1.0 + dt * p.lambda_a))
        if conv is not None:
            a11 = a11 + dt * conv
        a12 = dt * k_t
        if cfg.model_variant == "nonlocal":
            a21 = sp.diags(-w * (psi_c2 + self.j_unit))
            explicit = psi_c1 - psi_c2 * phi_k - psi_e1 - jphi_n - p.chi_0 * sigma_n
        else:
            a21 = sp.diags(-w * psi_c2) - p.eps_t**2 * self.stiffness
            explicit = psi_c1 - psi_c2 * phi_k - psi_e1 - p.chi_0 * sigma_n
        a22 = sp.diags(w)
        system = sp.bmat([[a11, a12], [a21, a22]], format="csc")
        rhs = np.concatenate([w * phi_n + dt * p.lambda_t * w * growth, w * explicit])
        sol = spla.splu(system).solve(rhs)
        return sol[:n], sol[n:]

    # -- one time step -------------------------------------------------------
    def step(self, state: FieldState):
        """Advance one backward-Euler step; returns (state, gs_iterations)."""
        p, cfg, mesh = self.params, self.config, self.mesh
        variant = cfg.model_variant

        phi_n = state.phi_t.values
        sigma_n = state.phi_sigma.values
        mu_n = state.mu.values
        v_n = state.v

        phi_k = phi_n.copy()
        sigma_k = sigma_n.copy()
        mu_k = mu_n.copy()
        v_k, p_k = v_n, state.p
        jphi_n = self.conv_matrix @ phi_n if variant == "nonlocal" else None

        increment = math.inf
        iterations = 0
        for k in range(cfg.gs_max_iter):
            iterations = k + 1
            if self._with_flow:
                visc = None if self._constant_mobilities else \
                    self._mobility_values("viscosity", phi_k, sigma_k)
                f1 = 0.0 if variant == "II" else None
                f2 = 0.0 if variant == "II" else None
                v_new, p_new, _ = solve_dfb_step(
                    self.space, v_n, p, cfg.dt,
                    mu_k=mu_k, phi_k=phi_k, sigma_k=sigma_k,
                    viscosity=visc, f_1=f1, f_2=f2,
                    picard_tol=cfg.picard_tol, picard_max=cfg.picard_max,
                    v_init=v_k)
                conv = assemble_convection(mesh, v_new).matrix
            else:
                v_new, p_new = v_k, p_k
                conv = None

            if mesh.dim == 1:
                sigma_new = self._solve_nutrient_1d(sigma_n, phi_k, sigma_k)
                phi_new, mu_new = self._solve_phase_1d(phi_n, phi_k, sigma_new,
                                                       sigma_n, jphi_n)
            else:
                sigma_new = self._solve_nutrient_2d(sigma_n, phi_k, sigma_k, conv)
                phi_new, mu_new = self._solve_phase_2d(phi_n, phi_k, sigma_new,
                                                       sigma_n, conv, jphi_n)

            increment = float(np.max(np.abs(phi_new - phi_k)))
            if cfg.strict_inner_test:
                increment = max(increment,
                                float(np.max(np.abs(sigma_new - sigma_k))),
                                float(np.max(np.abs(v_new.dofs - v_k.dofs)))
                                if self._with_flow else 0.0)
            phi_k, mu_k, sigma_k = phi_new, mu_new, sigma_new
            v_k, p_k = v_new, p_new
            if increment < cfg.gs_tol:
                break
        else:
            raise GaussSeidelError(state.t + cfg.dt, increment, iterations)

        new_state = FieldState(t=state.t + cfg.dt,
                               phi_t=ScalarField(mesh, phi_k),
                               mu=ScalarField(mesh, mu_k),
                               phi_sigma=ScalarField(mesh, sigma_k),
                               v=v_k, p=p_k)
        return new_state, iterations

    # -- outer loop ------------------------------------------------------------
    def run(self, initial: FieldState):
        """Advance to t_end, recording diagnostics every step and snapshots
        at the configured cadence."""
        cfg = self.config
        state = initial
        records = [StepRecord(state.t, self.confluence(state.phi_t.values),
                              self.energy(state.phi_t.values, state.mu.values,
                                          state.phi_sigma.values),
                              self.mass(state.phi_t.values), 0)]
        snapshots = [state]
        next_snapshot = state.t + cfg.snapshot_interval
        n_steps = int(round((cfg.t_end - state.t) / cfg.dt))
        for _ in range(n_steps):
            state, iters = self.step(state)
            records.append(StepRecord(state.t, self.confluence(state.phi_t.values),
                                      self.energy(state.phi_t.values, state.mu.values,
                                                  state.phi_sigma.values),
                                      self.mass(state.phi_t.values), iters))
            if state.t >= next_snapshot - 1e-9:
                snapshots.append(state)
                next_snapshot += cfg.snapshot_interval
        if snapshots[-1] is not state:
            snapshots.append(state)
        return Trajectory(records=records, snapshots=snapshots, final=state)


# ---------------------------------------------------------------------------
# Module-level operation wrappers and initial conditions
# ---------------------------------------------------------------------------

def step(state: FieldState, config: StepperConfig, params: ParameterVector,
         kernel=None, mobilities=None):
    """One-off step; builds a fresh Simulation (use the class for loops)."""
    sim = Simulation(state.phi_t.mesh, params, config, kernel=kernel,
                     mobilities=mobilities)
    return sim.step(state)[0]


def run(initial: FieldState, config: StepperConfig, params: ParameterVector,
        kernel=None, mobilities=None):
    sim = Simulation(initial.phi_t.mesh, params, config, kernel=kernel,
                     mobilities=mobilities)
    return sim.run(initial)


def confluence(state: FieldState):
    """Measure-averaged tumor fraction (1/|Omega|) int phi_T."""
    mesh = state.phi_t.mesh
    w = lumped_mass(mesh)
    return float(w @ state.phi_t.values) / float(np.sum(w))


def ginzburg_landau_energy(state: FieldState, params: ParameterVector):
    """int psi(phi) + eps^2/2 |grad phi|^2 + sigma^2/(2 delta) - chi_0 phi sigma.

    Potential and nutrient terms are evaluated on the nodal interpolant
    (the convention of the scheme); the gradient term is exact.
    """
    mesh = state.phi_t.mesh
    w = lumped_mass(mesh)
    k = assemble_stiffness(mesh).matrix
    phi = state.phi_t.values
    sigma = state.phi_sigma.values
    psi = psi_eval(phi, params.e_bar)[0]
    nodal = psi + sigma**2 / (2.0 * params.delta_sigma) - params.chi_0 * phi * sigma
    return float(w @ nodal) + 0.5 * params.eps_t**2 * float(phi @ (k @ phi))


def initial_radial_tumor(mesh: Mesh, confluence_0: float, steepness: float):
    """Sigmoid profile 1 / (1 + exp(M (r - r_init))), r_init = R sqrt(c0)."""
    if not (0 < confluence_0 < 1):
        raise ValueError(f"confluence_0 must be in (0, 1), got {confluence_0}")
    if steepness <= 0:
        raise ValueError(f"steepness must be positive, got {steepness}")
    r = np.abs(mesh.vertices) if mesh.dim == 1 else np.linalg.norm(mesh.vertices, axis=1)
    r_init = mesh.radius * math.sqrt(confluence_0)
    z = np.clip(steepness * (r - r_init), -700.0, 700.0)
    return ScalarField(mesh, 1.0 / (1.0 + np.exp(z)))


def initial_2d_tumor(mesh: Mesh, shape: str, confluence_0: float = 0.00562):
    """Indicator initial data: (a) slightly elliptic, (b) highly elliptic,
    (c) separated, (d) irregularly perturbed."""
    if mesh.dim != 2:
        raise ValueError("2D initial shapes need a 2D mesh")
    x1 = mesh.vertices[:, 0]
    x2 = mesh.vertices[:, 1]
    r2 = mesh.radius**2 * confluence_0
    if shape == "a":
        inside = 0.9 * x1**2 + x2**2 <= r2
    elif shape == "b":
        inside = 0.15 * x1**2 + x2**2 <= r2
    elif shape == "c":
        inside = (0.9 * (x1 - 0.05) ** 2 + x2**2 <= r2) \
            | (0.9 * (x1 + 0.05) ** 2 + x2**2 <= r2)
    elif shape == "d":
        inside = (np.sin(7.2 * x1 + 5.6 * x2) + 1.0) * (4.0 * x1 - 0.2) ** 2 \
            + (np.sin(8.0 * x1) + 1.0) * 64.0 * x2**2 <= 1.0
    else:
        raise ValueError(f"unknown initial shape {shape!r}; expected a, b, c or d")
    return ScalarField(mesh, inside.astype(float))
