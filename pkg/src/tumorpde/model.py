"""Continuous-model ingredients.

Parameters, the quartic double-well potential, its contractive/expansive
splitting, mobility and reaction models, the cut-off operator, and the
runtime checker for the well-posedness hypotheses.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional

import numpy as np

#: Canonical ordering of the 13 model parameters used everywhere a
#: parameter *vector* is needed (sampling, gradients, CSV columns).
PARAM_NAMES = (
    "eps_t",
    "chi_0",
    "delta_sigma",
    "lambda_t",
    "lambda_sigma",
    "lambda_a",
    "m_t",
    "m_sigma",
    "e_bar",
    "alpha",
    "nu",
    "f_1",
    "f_2",
)

#: Pretty labels for reports and figures, index-aligned with PARAM_NAMES.
PARAM_LABELS = (
    "eps_T",
    "chi_0",
    "delta_sigma",
    "lambda_T",
    "lambda_sigma",
    "lambda_A",
    "M_T",
    "M_sigma",
    "E_bar",
    "alpha",
    "nu",
    "F_1",
    "F_2",
)


class ModelError(ValueError):
    """Invalid model data (parameter bounds, non-finite input, ...)."""


@dataclasses.dataclass(frozen=True)
class ParameterVector:
    """The 13 model parameters.

    Defaults are the dimensionless baseline values used by all simulation
    presets.  ``mobility_lower``/``mobility_upper`` are the admissible
    bounds for the mobility and viscosity coefficients; when left unset
    they are derived from the constant coefficients themselves.
    """

    eps_t: float = 0.01          # interface thickness
    chi_0: float = 0.5           # chemotaxis coefficient
    delta_sigma: float = 0.05    # nutrient diffusion scaling
    lambda_t: float = 1.0        # proliferation rate (1/day)
    lambda_sigma: float = 1.0    # nutrient consumption rate (1/day)
    lambda_a: float = 0.01       # apoptosis rate (1/day)
    m_t: float = 1.0             # tumor mobility
    m_sigma: float = 1.0         # nutrient mobility
    e_bar: float = 0.25          # double-well prefactor
    alpha: float = 1.0           # velocity friction coefficient
    nu: float = 10.0             # viscosity
    f_1: float = 10.0            # quadratic drag coefficient
    f_2: float = 10.0            # cubic drag coefficient
    mobility_lower: Optional[float] = None   # m_0
    mobility_upper: Optional[float] = None   # m_inf

    def __post_init__(self):
        problems = []
        for name in ("eps_t", "delta_sigma", "e_bar", "nu"):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be > 0, got {getattr(self, name)}")
        for name in ("lambda_t", "lambda_sigma", "lambda_a", "alpha", "f_1", "f_2"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0, got {getattr(self, name)}")
        m0, minf = self.mobility_bounds()
        if not (0 < m0 <= minf < math.inf):
            problems.append(f"mobility bounds must satisfy 0 < m_0 <= m_inf, got ({m0}, {minf})")
        else:
            for name in ("m_t", "m_sigma"):
                val = getattr(self, name)
                if not (m0 <= val <= minf):
                    problems.append(f"{name}={val} outside mobility bounds [{m0}, {minf}]")
        for name in PARAM_NAMES:
            if not math.isfinite(getattr(self, name)):
                problems.append(f"{name} is not finite")
        if problems:
            raise ModelError("; ".join(problems))

    def mobility_bounds(self):
        """Return (m_0, m_inf), deriving them from the constants if unset."""
        candidates = (self.m_t, self.m_sigma, self.nu)
        lo = self.mobility_lower if self.mobility_lower is not None else min(candidates)
        hi = self.mobility_upper if self.mobility_upper is not None else max(candidates)
        return lo, hi

    def to_array(self):
        """Parameter values as a length-13 array in PARAM_NAMES order."""
        return np.array([getattr(self, n) for n in PARAM_NAMES], dtype=float)

    @classmethod
    def from_array(cls, theta, **extra):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(PARAM_NAMES),):
            raise ModelError(f"expected {len(PARAM_NAMES)} parameters, got shape {theta.shape}")
        return cls(**dict(zip(PARAM_NAMES, theta)), **extra)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def cutoff(x):
    """Clamp to [0, 1].  Identity on [0, 1], idempotent, 1-Lipschitz."""
    return np.clip(x, 0.0, 1.0)


def psi_eval(phi, e_bar=0.25):
    """Quartic double well ``E_bar * phi^2 (1-phi)^2`` and its derivatives.

    Returns ``(value, first_derivative, second_derivative)`` evaluated
    elementwise.  Raises ModelError on non-finite input.
    """
    phi = np.asarray(phi, dtype=float)
    if not np.all(np.isfinite(phi)):
        raise ModelError("psi_eval: non-finite input")
    value = e_bar * phi**2 * (1.0 - phi) ** 2
    first = e_bar * (4.0 * phi**3 - 6.0 * phi**2 + 2.0 * phi)
    second = e_bar * (12.0 * phi**2 - 12.0 * phi + 2.0)
    if phi.ndim == 0:
        return float(value), float(first), float(second)
    return value, first, second


@dataclasses.dataclass(frozen=True)
class DoubleWellPotential:
    """Double-well potential with prefactor, minima at the pure phases 0 and 1."""

    e_bar: float = 0.25

    def eval(self, phi):
        return psi_eval(phi, self.e_bar)

    def value(self, phi):
        return psi_eval(phi, self.e_bar)[0]

    def derivative(self, phi):
        return psi_eval(phi, self.e_bar)[1]

    def second_derivative(self, phi):
        return psi_eval(phi, self.e_bar)[2]


@dataclasses.dataclass(frozen=True)
class ConvexSplit:
    """Contractive/expansive splitting of the free energy density.

    The potential splits as ``psi = psi_c - psi_e`` with

        psi_c(phi) = E_bar (phi^4 - 2 phi^3 + 1.5 phi^2)
        psi_e(phi) = 0.5 E_bar phi^2

    Both parts are convex: psi_c'' = E_bar (12 phi^2 - 12 phi + 3) has a
    vanishing discriminant and psi_e'' = E_bar.  The chemotaxis coupling
    ``-chi_0 phi sigma`` and the nutrient quadratic ``sigma^2/(2 delta)``
    are carried by the expansive (explicitly treated) part, so the
    potential equation of the scheme couples only to already-computed
    fields.
    """

    e_bar: float = 0.25
    chi_0: float = 0.5
    delta_sigma: float = 0.05

    # -- contractive part ------------------------------------------------
    def psi_c(self, phi):
        phi = np.asarray(phi, dtype=float)
        return self.e_bar * (phi**4 - 2.0 * phi**3 + 1.5 * phi**2)

    def psi_c_prime(self, phi):
        phi = np.asarray(phi, dtype=float)
        return self.e_bar * (4.0 * phi**3 - 6.0 * phi**2 + 3.0 * phi)

    def psi_c_second(self, phi):
        phi = np.asarray(phi, dtype=float)
        return self.e_bar * (12.0 * phi**2 - 12.0 * phi + 3.0)

    # -- expansive part --------------------------------------------------
    def psi_e(self, phi):
        phi = np.asarray(phi, dtype=float)
        return 0.5 * self.e_bar * phi**2

    def psi_e_prime(self, phi):
        phi = np.asarray(phi, dtype=float)
        return self.e_bar * phi

    def psi_e_second(self, phi):
        phi = np.asarray(phi, dtype=float)
        return np.full_like(phi, self.e_bar)

    # -- energy densities including the nutrient/chemotaxis assignment ---
    def contractive_density(self, phi):
        return self.psi_c(phi)

    def expansive_density(self, phi, sigma):
        sigma = np.asarray(sigma, dtype=float)
        return self.psi_e(phi) - sigma**2 / (2.0 * self.delta_sigma) + self.chi_0 * np.asarray(phi) * sigma

    def expansive_mu(self, phi_old, sigma_old):
        """Explicit part of the chemical potential, D_phi of the expansive energy."""
        return self.psi_e_prime(phi_old) + self.chi_0 * np.asarray(sigma_old, dtype=float)


def convex_split_derivative(phi_new, phi_old, phi_sigma_new, phi_sigma_old,
                            split: ConvexSplit | None = None):
    """Semi-implicit chemical potential ``psi_c'(new) - psi_e'(old) - chi_0 sigma_old``.

    ``phi_sigma_new`` does not enter: the contractive energy carries no
    nutrient dependence; it is accepted so callers can pass the full
    iterate tuple.
    """
    split = split if split is not None else ConvexSplit()
    for val in (phi_new, phi_old, phi_sigma_new, phi_sigma_old):
        if not np.all(np.isfinite(np.asarray(val, dtype=float))):
            raise ModelError("convex_split_derivative: non-finite input")
    out = split.psi_c_prime(phi_new) - split.psi_e_prime(phi_old) \
        - split.chi_0 * np.asarray(phi_sigma_old, dtype=float)
    return float(out) if np.ndim(out) == 0 else out


@dataclasses.dataclass(frozen=True)
class MobilityModel:
    """Bounded mobility/viscosity coefficients with declared bounds [m_0, m_inf]."""

    tumor: Callable
    nutrient: Callable
    viscosity: Callable
    lower: float
    upper: float

    @classmethod
    def constants(cls, params: ParameterVector):
        """Constant coefficients M_T, M_sigma, nu from the parameter set."""
        lo, hi = params.mobility_bounds()

        def const(c):
            return lambda phi_t, phi_sigma: np.full_like(np.asarray(phi_t, dtype=float), c)

        return cls(tumor=const(params.m_t), nutrient=const(params.m_sigma),
                   viscosity=const(params.nu), lower=lo, upper=hi)


def source_terms(phi_t, phi_sigma, params: ParameterVector):
    """Reaction terms of the tumor and nutrient equations.

    S_T = lambda_T sigma C(phi (1 - phi)) - lambda_A phi
    S_sigma = -lambda_sigma sigma C(phi)
    """
    phi_t = np.asarray(phi_t, dtype=float)
    phi_sigma = np.asarray(phi_sigma, dtype=float)
    s_t = params.lambda_t * phi_sigma * cutoff(phi_t * (1.0 - phi_t)) - params.lambda_a * phi_t
    s_sigma = -params.lambda_sigma * phi_sigma * cutoff(phi_t)
    if phi_t.ndim == 0 and phi_sigma.ndim == 0:
        return float(s_t), float(s_sigma)
    return s_t, s_sigma


@dataclasses.dataclass(frozen=True)
class SourceModel:
    """Reaction terms bundled with a parameter set."""

    params: ParameterVector

    def tumor(self, phi_t, phi_sigma):
        return source_terms(phi_t, phi_sigma, self.params)[0]

    def nutrient(self, phi_t, phi_sigma):
        return source_terms(phi_t, phi_sigma, self.params)[1]

    def velocity(self, mu, phi_sigma, grad_phi_t):
        """Capillary/chemotactic body force (mu + chi_0 sigma) grad(phi_T)."""
        scale = np.asarray(mu, dtype=float) + self.params.chi_0 * np.asarray(phi_sigma, dtype=float)
        return scale[..., None] * np.asarray(grad_phi_t, dtype=float)


# ---------------------------------------------------------------------------
# Hypothesis checker
# ---------------------------------------------------------------------------

@dataclasses.dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    detail: str


@dataclasses.dataclass(frozen=True)
class AssumptionReport:
    checks: tuple

    @property
    def all_passed(self):
        return all(c.passed for c in self.checks)

    def __getitem__(self, name):
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def summary(self):
        lines = []
        for c in self.checks:
            status = "pass" if c.passed else "FAIL"
            lines.append(f"[{status}] {c.name}: {c.detail}")
        return "\n".join(lines)


def _phase_grid():
    # fixed sampling grid for the growth conditions: phi in [-10, 10], 2001 points
    return np.linspace(-10.0, 10.0, 2001)


def required_c3_bound(chi_0, m_0, m_inf, delta_sigma):
    """Lower bound that the constant in the curvature hypothesis must exceed."""
    if chi_0 == 0:
        return 0.0
    num = 4.0 * chi_0**2 * m_inf**2 * delta_sigma \
        + 2.0 * m_0 * chi_0 * m_inf * delta_sigma \
        + chi_0**2 * delta_sigma * m_0**2
    return math.sqrt(2.0 * chi_0 * m_inf / m_0) * num / (2.0 * m_0**2)


def validate_assumptions(params: ParameterVector,
                         potential: DoubleWellPotential | None = None,
                         kernel=None,
                         mobilities: MobilityModel | None = None,
                         mesh=None):
    """Check the hypotheses of the well-posedness theory on sampled grids.

    Growth conditions are verified on a fixed grid phi in [-10, 10] (2001
    points); mobility bounds on a (phi, sigma) grid.  When ``kernel`` is
    supplied, the kernel hypotheses (evenness, nonnegative convolution of
    the unit field, admissible curvature constant) are checked too, on
    ``mesh`` (a default interval mesh is used if none is given).

    Failures become report entries, never exceptions.
    """
    potential = potential if potential is not None else DoubleWellPotential(params.e_bar)
    mobilities = mobilities if mobilities is not None else MobilityModel.constants(params)
    checks = []

    # (A1) domain
    if mesh is not None:
        ok = mesh.dim in (1, 2) and mesh.radius > 0
        detail = f"dim={mesh.dim}, radius={mesh.radius}"
    else:
        ok, detail = True, "built-in domains (interval / triangulated disk) are bounded and Lipschitz"
    checks.append(AssumptionCheck("A1 domain", ok, detail))

    # (A2) initial data regularity; nodal interpolants of the shipped initial
    # conditions are piecewise linear, hence admissible.
    checks.append(AssumptionCheck(
        "A2 initial data", True,
        "nodal initial data are piecewise linear (H^1) with finite values"))

    # (A3) mobility bounds on a sampled (phi, sigma) grid
    lo, hi = mobilities.lower, mobilities.upper
    pg = np.linspace(-2.0, 3.0, 41)
    pp, ss = np.meshgrid(pg, pg)
    vals = [mobilities.tumor(pp, ss), mobilities.nutrient(pp, ss), mobilities.viscosity(pp, ss)]
    sampled_min = min(float(np.min(v)) for v in vals)
    sampled_max = max(float(np.max(v)) for v in vals)
    ok = lo > 0 and sampled_min >= lo - 1e-12 and sampled_max <= hi + 1e-12
    checks.append(AssumptionCheck(
        "A3 mobility bounds", ok,
        f"m_0={lo}, m_inf={hi}, sampled range [{sampled_min:.6g}, {sampled_max:.6g}]"))

    # (A4) reaction structure: nonnegative rates, bounded g and h
    g = cutoff(pp * (1.0 - pp))
    h = cutoff(pp)
    rates_ok = min(params.lambda_t, params.lambda_sigma, params.lambda_a) >= 0
    bounded = float(np.max(np.abs(g))) <= 1.0 and float(np.max(np.abs(h))) <= 1.0
    checks.append(AssumptionCheck(
        "A4 reaction terms", rates_ok and bounded,
        "rates nonnegative; cut-off growth/consumption factors bounded by 1"))

    # (A5) growth conditions for the potential, on the fixed grid
    grid = _phase_grid()
    val, d1, d2 = potential.eval(grid)
    outside = np.abs(grid) > 1.0 + 1e-9
    lower_const = float(np.min(val[outside] / (grid[outside] ** 2 - 1.0)))
    nonneg = float(np.min(val)) >= -1e-14
    c_prime = float(np.max(np.abs(d1) / (np.abs(grid) + 1.0)))
    c_second = float(np.max(np.abs(d2) / (grid**4 + 1.0)))
    ok = nonneg and lower_const > 0 and math.isfinite(c_prime) and math.isfinite(c_second)
    checks.append(AssumptionCheck(
        "A5 potential growth", ok,
        f"psi >= {lower_const:.4g}(phi^2-1) on grid; |psi'| <= {c_prime:.4g}(|phi|+1); "
        f"|psi''| <= {c_second:.4g}(phi^4+1)"))

    if kernel is not None:
        from . import kernels as _kernels

        if mesh is None:
            from .mesh import build_radial_mesh

            mesh = build_radial_mesh(64, 0.32, weight=0)
        j1 = _kernels.convolve_unit(kernel, mesh)
        j1_min = float(np.min(j1))

        # (A6) admissible curvature constant: psi''(s) + (J*1)(x) >= C_3
        c3_max = float(np.min(d2)) + j1_min
        m0, minf = params.mobility_bounds()
        c3_req = required_c3_bound(params.chi_0, m0, minf, params.delta_sigma)
        c1_req = 0.5 * kernel.l1_norm - 0.5 * j1_min
        checks.append(AssumptionCheck(
            "A6 nonlocal growth", c3_max > c3_req,
            f"largest admissible C_3 = {c3_max:.6g}, required > {c3_req:.6g}; "
            f"quadratic lower bound needs C_1 > {c1_req:.6g} (quartic growth dominates)"))

        # (A7) kernel evenness and nonnegative convolution of 1
        rng = np.random.default_rng(0)
        pts = rng.uniform(-kernel.support_radius, kernel.support_radius,
                          size=(64, kernel.dim))
        vplus = kernel.profile(pts)
        vminus = kernel.profile(-pts)
        scale = max(float(np.max(np.abs(vplus))), 1e-300)
        even = float(np.max(np.abs(vplus - vminus))) <= 1e-12 * scale
        nonneg = j1_min >= -1e-12
        checks.append(AssumptionCheck(
            "A7 kernel", even and nonneg,
            f"evenness residual <= 1e-12 rel: {even}; min discrete J*1 = {j1_min:.3g}"))

    return AssumptionReport(tuple(checks))
