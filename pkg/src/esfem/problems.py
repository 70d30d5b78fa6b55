"""Concrete coupled problems: velocity laws, manufactured solutions, kinetics.

The manufactured benchmark drives a sphere through the logistic radius
r(t) = r0*rK / (rK*exp(-k t) + r0*(1 - exp(-k t))) while the surface field
u(x, t) = x1*x2*exp(-6 t) diffuses on it.  The forcing terms below make
that pair an exact solution of the coupled system

    du/dt (material) + u div v - lap u = f,
    v - alpha lap v - beta lap x = (delta u + g) normal.

The test suite re-derives both forcing identities term by term with
finite-difference and spherical-harmonic oracles.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse.linalg as spla

from . import assembly
from .errors import OffSurface
from .mesh import SurfaceMesh

ELLIPTIC = "regularized_elliptic"
MCF = "regularized_mcf"
DYNAMIC = "dynamic"


@dataclass(frozen=True)
class VelocityLaw:
    """Which equation determines the surface velocity, and its parameters.

    alpha  weight of the elliptic regularization (lap v term)
    beta   weight of the mean curvature term (lap x term)
    delta  strength of the normal coupling to the surface field
    """

    variant: str
    alpha: float
    beta: float = 0.0
    delta: float = 0.0

    def __post_init__(self):
        if self.variant not in (ELLIPTIC, MCF, DYNAMIC):
            raise ValueError(f"unknown velocity law variant: {self.variant!r}")
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError("alpha and beta must be non-negative")
        if self.variant != DYNAMIC and self.alpha == 0.0 and self.beta == 0.0:
            # The bare mass matrix would enforce an ill-posed pointwise law.
            raise ValueError("regularized laws need alpha > 0 or beta > 0")


def velocity_law(alpha: float, beta: float = 0.0, delta: float = 0.0) -> VelocityLaw:
    """Pick the regularized variant from the coefficients."""
    variant = MCF if beta > 0.0 else ELLIPTIC
    return VelocityLaw(variant, alpha, beta, delta)


@dataclass(frozen=True)
class ManufacturedSphere:
    """Logistic radius family r0 -> rK with growth rate k."""

    r0: float = 1.0
    rK: float = 2.0
    k: float = 0.5

    def __post_init__(self):
        if min(self.r0, self.rK, self.k) <= 0.0:
            raise ValueError("r0, rK and k must be positive")

    def radius(self, t):
        ekt = np.exp(-self.k * np.asarray(t, dtype=float))
        return self.r0 * self.rK / (self.rK * ekt + self.r0 * (1.0 - ekt))

    def radius_rate(self, t):
        r = self.radius(t)
        return self.k * r * (1.0 - r / self.rK)


def exact_solution(sphere: ManufacturedSphere, p, t):
    """Exact flow position, field and velocity at unit-sphere labels p.

    Returns (X, u, v) with X = r(t) p, u = X1 X2 exp(-6 t) and the purely
    radial velocity v = (rdot/r) X.
    """
    p = np.asarray(p, dtype=float).reshape(-1, 3)
    r = float(sphere.radius(t))
    rdot = float(sphere.radius_rate(t))
    x = r * p
    u = x[:, 0] * x[:, 1] * np.exp(-6.0 * t)
    v = (rdot / r) * x
    return x, u, v


def manufactured_forcing(sphere: ManufacturedSphere, alpha, beta, delta, t, x):
    """Forcing pair (f, g) of the manufactured problem at points x on the
    radius-r(t) sphere.

    f = (4 rdot/r - 6 + 6/r^2) u  and  g = rdot + 2 alpha rdot/r^2
    + 2 beta/r - delta u, with u = x1 x2 exp(-6 t).  Raises OffSurface when
    any |x| deviates from r(t) by more than 1e-6 relative; the load
    closures used in time stepping evaluate the same formulas without that
    check because the numerical surface carries an O(h^2) radius error.
    """
    x = np.asarray(x, dtype=float).reshape(-1, 3)
    r = float(sphere.radius(t))
    radii = np.sqrt((x**2).sum(axis=1))
    if np.any(np.abs(radii - r) > 1e-6 * r):
        raise OffSurface(f"points deviate from the radius-{r:.6g} sphere")
    rdot = float(sphere.radius_rate(t))
    u = x[:, 0] * x[:, 1] * np.exp(-6.0 * t)
    f = (4.0 * rdot / r - 6.0 + 6.0 / r**2) * u
    g = rdot + 2.0 * alpha * rdot / r**2 + 2.0 * beta / r - delta * u
    return f, g


@dataclass(frozen=True)
class TumorKinetics:
    """Two-species activator-depleted reaction terms.

    f1 = gamma (a - u + u^2 w),  f2 = gamma (b - u^2 w); the second species
    diffuses with coefficient D_c.
    """

    D_c: float = 10.0
    gamma: float = 100.0
    a: float = 0.1
    b: float = 0.9

    def __post_init__(self):
        if min(self.D_c, self.gamma, self.a, self.b) <= 0.0:
            raise ValueError("all kinetics parameters must be positive")

    def steady_state(self):
        u = self.a + self.b
        return u, self.b / u**2

    def f1(self, u, w):
        return self.gamma * (self.a - u + u * u * w)

    def f2(self, u, w):
        return self.gamma * (self.b - u * u * w)


def tumor_kinetics(kinetics: TumorKinetics, u, w):
    """Evaluate both reaction terms; satisfies f1 + f2 = gamma (a + b - u)."""
    return kinetics.f1(u, w), kinetics.f2(u, w)


@dataclass(frozen=True)
class ProblemSpec:
    """Everything the time stepper needs to advance one coupled system.

    pde_forcing       f(x, u, grad_u, t) -> values at quadrature points,
                      vectorized; None means no forcing
    velocity_forcing  g(x, t) -> scalar normal speed contribution, or None
    kinetics          two-species reaction terms (then ``w`` is active and
                      pde_forcing is ignored)
    exact             manufactured solution, when one exists
    """

    law: VelocityLaw
    pde_forcing: Optional[Callable] = None
    velocity_forcing: Optional[Callable] = None
    kinetics: Optional[TumorKinetics] = None
    exact: Optional[ManufacturedSphere] = None

    def initial_fields(self, mesh: SurfaceMesh):
        """Nodal initial data: exact values at the nodes when available."""
        if self.exact is not None:
            _, u0, _ = exact_solution(self.exact, mesh.coords / self.exact.r0, 0.0)
            return u0, None
        return np.zeros(mesh.num_nodes), None


def example1_problem(alpha=1.0, beta=0.0, delta=0.4, r0=1.0, rK=2.0, k=0.5) -> ProblemSpec:
    """Coupled benchmark: field-driven expanding sphere with manufactured forcing."""
    sphere = ManufacturedSphere(r0, rK, k)

    def f(x, u, grad_u, t):
        r = float(sphere.radius(t))
        rdot = float(sphere.radius_rate(t))
        uex = x[:, 0] * x[:, 1] * np.exp(-6.0 * t)
        return (4.0 * rdot / r - 6.0 + 6.0 / r**2) * uex

    def g(x, t):
        r = float(sphere.radius(t))
        rdot = float(sphere.radius_rate(t))
        uex = x[:, 0] * x[:, 1] * np.exp(-6.0 * t)
        return rdot + 2.0 * alpha * rdot / r**2 + 2.0 * beta / r - delta * uex

    return ProblemSpec(
        law=velocity_law(alpha, beta, delta),
        pde_forcing=f,
        velocity_forcing=g,
        exact=sphere,
    )


def example3_problem(alpha, beta, r0=1.0, rK=2.0, k=0.5) -> ProblemSpec:
    """Regularization comparison: same expanding sphere, no field coupling."""
    return example1_problem(alpha=alpha, beta=beta, delta=0.0, r0=r0, rK=rK, k=k)


def tumor_problem(alpha, beta, delta, kinetics: Optional[TumorKinetics] = None) -> ProblemSpec:
    """Two-species pattern-forming system whose field pushes the surface."""
    return ProblemSpec(
        law=velocity_law(alpha, beta, delta),
        kinetics=kinetics if kinetics is not None else TumorKinetics(),
    )


def tumor_initial_data(
    mesh: SurfaceMesh,
    kinetics: TumorKinetics,
    seed: int,
    perturbation_bound: float = 0.01,
    pre_time: float = 5.0,
    tau_pre: float = 1e-3,
):
    """Initial fields for the tumor run.

    Perturbs the steady state by per-node uniform [0, perturbation_bound]
    noise (counter-based generator, so identical seeds give identical
    fields) and relaxes the pure reaction-diffusion system on the frozen
    initial surface until ``pre_time`` with a linearly implicit Euler step.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    n = mesh.num_nodes
    u_star, w_star = kinetics.steady_state()
    u = u_star + rng.uniform(0.0, perturbation_bound, n) if perturbation_bound > 0 else np.full(n, u_star)
    w = w_star + rng.uniform(0.0, perturbation_bound, n) if perturbation_bound > 0 else np.full(n, w_star)

    mass = assembly.assemble_mass(mesh)
    stiff = assembly.assemble_stiffness(mesh)
    solve_u = spla.splu((mass + tau_pre * stiff).tocsc()).solve
    solve_w = spla.splu((mass + tau_pre * kinetics.D_c * stiff).tocsc()).solve

    def f1(x, u_q, grad_u, t, w_q):
        return kinetics.f1(u_q, w_q)

    def f2(x, u_q, grad_u, t, w_q):
        return kinetics.f2(u_q, w_q)

    n_steps = int(round(pre_time / tau_pre))
    for _ in range(n_steps):
        load1 = assembly.assemble_scalar_load(mesh, f1, u=u, extra_fields=(w,))
        load2 = assembly.assemble_scalar_load(mesh, f2, u=u, extra_fields=(w,))
        u_new = solve_u(mass @ u + tau_pre * load1)
        w_new = solve_w(mass @ w + tau_pre * load2)
        u, w = u_new, w_new
    return u, w
