"""Linearly implicit Euler stepping of the coupled node/field system.

One step advances, in order: (1) assemble mass and stiffness on the
current surface, (2) solve the velocity law for the new node positions
(matrices frozen at the old surface, the mean curvature term implicit),
(3) reassemble on the new surface, (4) advance the scalar field(s) with
the mass-transport term treated exactly and the nonlinearity evaluated
at the old field.  Surface first, then PDE on the new surface, keeps the
d/dt(M u) update telescoping exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.sparse.linalg as spla

from . import assembly, problems
from .errors import DegenerateElement, LinearSolveFailure, MeshDegenerated
from .mesh import SurfaceMesh, mesh_quality

DIRECT = "cholesky"
CG = "cg"


@dataclass(frozen=True)
class SystemState:
    """Snapshot of the coupled system at one time.

    x is the flat node-major node vector (3N), u the scalar field (N),
    v the nodal velocity (3N), w the optional second species.  The mesh
    carries the topology and the same coordinates as x.
    """

    t: float
    x: np.ndarray
    u: np.ndarray
    v: np.ndarray
    mesh: SurfaceMesh
    w: Optional[np.ndarray] = None


@dataclass(frozen=True)
class StepperConfig:
    tau: float
    t_end: float
    solver: str = DIRECT
    cg_tol: float = 1e-12
    cg_max_iter: int = 10000
    abort_min_angle: float = 5.0
    normal_coupling: str = "nodal"
    loads_on: str = "old"
    snapshot_every: int = 1

    def __post_init__(self):
        if self.tau <= 0.0 or self.t_end < self.tau:
            raise ValueError("need 0 < tau <= t_end")
        if self.solver not in (DIRECT, CG):
            raise ValueError(f"unknown solver: {self.solver!r}")
        if self.loads_on not in ("old", "new"):
            raise ValueError(f"loads_on must be 'old' or 'new', got {self.loads_on!r}")


def make_solver(matrix, config: StepperConfig):
    """Factor an SPD sparse matrix once; returns solve(rhs) for (N,) or (N, k)."""
    if config.solver == DIRECT:
        lu = spla.splu(matrix.tocsc())

        def solve(rhs):
            return lu.solve(np.asarray(rhs))

        return solve

    matrix = matrix.tocsr()
    inv_diag = 1.0 / matrix.diagonal()
    precond = spla.LinearOperator(matrix.shape, matvec=lambda r: inv_diag * r)

    def solve(rhs):
        rhs = np.asarray(rhs)
        cols = rhs.reshape(rhs.shape[0], -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            xj, info = spla.cg(
                matrix, cols[:, j], rtol=config.cg_tol, atol=0.0,
                maxiter=config.cg_max_iter, M=precond,
            )
            if info != 0:
                res = float(np.linalg.norm(matrix @ xj - cols[:, j]))
                raise LinearSolveFailure("conjugate gradient did not converge", res)
            out[:, j] = xj
        return out.reshape(rhs.shape)

    return solve


def _velocity_load(spec, mesh, u, t, config):
    """Right-hand side of the velocity law: delta * N(x) u + g load, (N, 3)."""
    law = spec.law
    n = mesh.num_nodes
    load = np.zeros(3 * n)
    if law.delta != 0.0:
        load += law.delta * assembly.assemble_normal_coupling(mesh, u, config.normal_coupling)
    if spec.velocity_forcing is not None:
        g = spec.velocity_forcing
        load += assembly.assemble_normal_load(mesh, lambda x, _u, _g, tt: g(x, tt), time=t)
    return load.reshape(n, 3)


def _advance_fields(spec, mass_old, state, mesh_new, mass_new, stiff_new, config):
    """PDE step(s) on the new surface; returns (u_new, w_new)."""
    tau, t_new = config.tau, state.t + config.tau
    if spec.kinetics is not None:
        kin = spec.kinetics
        load_u = assembly.assemble_scalar_load(
            mesh_new, lambda x, uq, gq, tt, wq: kin.f1(uq, wq),
            u=state.u, time=t_new, extra_fields=(state.w,),
        )
        load_w = assembly.assemble_scalar_load(
            mesh_new, lambda x, uq, gq, tt, wq: kin.f2(uq, wq),
            u=state.u, time=t_new, extra_fields=(state.w,),
        )
        u_new = make_solver(mass_new + tau * stiff_new, config)(mass_old @ state.u + tau * load_u)
        w_new = make_solver(mass_new + tau * kin.D_c * stiff_new, config)(
            mass_old @ state.w + tau * load_w
        )
        return u_new, w_new
    if spec.pde_forcing is not None:
        f = spec.pde_forcing
        load = assembly.assemble_scalar_load(
            mesh_new, lambda x, uq, gq, tt: f(x, uq, gq, tt), u=state.u, time=t_new
        )
    else:
        load = np.zeros(mesh_new.num_nodes)
    u_new = make_solver(mass_new + tau * stiff_new, config)(mass_old @ state.u + tau * load)
    return u_new, None


def step_coupled(state: SystemState, spec, config: StepperConfig, matrices=None):
    """One step of the regularized (elliptic or mean curvature) velocity law.

    Returns the new state and the (mass, stiffness) pair assembled on the
    new surface, which the caller can feed back as ``matrices`` to avoid
    reassembling.
    """
    law = spec.law
    mesh = state.mesh
    tau, t_new = config.tau, state.t + config.tau
    mass, stiff = matrices if matrices is not None else (
        assembly.assemble_mass(mesh), assembly.assemble_stiffness(mesh))

    k_scalar = (mass + law.alpha * stiff).tocsr() if law.alpha != 0.0 else mass
    system = (k_scalar + tau * law.beta * stiff).tocsr() if law.beta != 0.0 else k_scalar
    solve = make_solver(system, config)

    x_pts = state.x.reshape(-1, 3)
    load = _velocity_load(spec, mesh, state.u, t_new, config)
    x_new_pts = solve(k_scalar @ x_pts + tau * load)
    if config.loads_on == "new":
        # One corrector pass: loads re-evaluated on the predicted surface
        # (matrices stay frozen at the old one).
        mesh_pred = mesh.with_coords(x_new_pts)
        load = _velocity_load(spec, mesh_pred, state.u, t_new, config)
        x_new_pts = solve(k_scalar @ x_pts + tau * load)
    x_new = x_new_pts.reshape(-1)
    v_new = (x_new - state.x) / tau

    mesh_new = mesh.with_coords(x_new_pts)
    mass_new = assembly.assemble_mass(mesh_new)
    stiff_new = assembly.assemble_stiffness(mesh_new)
    u_new, w_new = _advance_fields(spec, mass, state, mesh_new, mass_new, stiff_new, config)
    new_state = SystemState(t=t_new, x=x_new, u=u_new, v=v_new, mesh=mesh_new, w=w_new)
    return new_state, (mass_new, stiff_new)


def step_dynamic(state: SystemState, spec, config: StepperConfig, matrices=None):
    """One step of the dynamic velocity law (velocity itself evolves)."""
    law = spec.law
    mesh = state.mesh
    tau, t_new = config.tau, state.t + config.tau
    mass, stiff = matrices if matrices is not None else (
        assembly.assemble_mass(mesh), assembly.assemble_stiffness(mesh))

    system = (mass + tau * law.alpha * stiff).tocsr() if law.alpha != 0.0 else mass
    solve = make_solver(system, config)
    v_pts = state.v.reshape(-1, 3)
    load = _velocity_load(spec, mesh, state.u, t_new, config)
    v_new_pts = solve(mass @ v_pts + tau * load)
    v_new = v_new_pts.reshape(-1)
    x_new = state.x + tau * v_new

    mesh_new = mesh.with_coords(x_new.reshape(-1, 3))
    mass_new = assembly.assemble_mass(mesh_new)
    stiff_new = assembly.assemble_stiffness(mesh_new)
    u_new, w_new = _advance_fields(spec, mass, state, mesh_new, mass_new, stiff_new, config)
    new_state = SystemState(t=t_new, x=x_new, u=u_new, v=v_new, mesh=mesh_new, w=w_new)
    return new_state, (mass_new, stiff_new)


def initial_state(spec, mesh0: SurfaceMesh, u0=None, w0=None, v0=None) -> SystemState:
    """Build the starting state; fields default to the exact nodal data."""
    if u0 is None:
        u0, w_default = spec.initial_fields(mesh0)
        w0 = w0 if w0 is not None else w_default
    u0 = np.asarray(u0, dtype=float)
    x0 = mesh0.node_vector
    v0 = np.zeros_like(x0) if v0 is None else np.asarray(v0, dtype=float)
    return SystemState(t=0.0, x=x0, u=u0, v=v0, mesh=mesh0,
                       w=None if w0 is None else np.asarray(w0, dtype=float))


def run(spec, mesh0: SurfaceMesh, config: StepperConfig, observers=(),
        start: Optional[SystemState] = None):
    """Advance from t=0 to t_end with uniform steps; returns the trajectory.

    t_end/tau must be an integer to 1e-9.  Observers are called
    synchronously as observer(step_index, state) for the initial state and
    after every step; they must not mutate the state.  On mesh degeneration
    the partial trajectory is attached to the raised error.
    """
    n_steps_f = config.t_end / config.tau
    n_steps = int(round(n_steps_f))
    if abs(n_steps_f - n_steps) > 1e-9 or n_steps < 1:
        raise ValueError(f"t_end/tau = {n_steps_f} is not an integer step count")

    state = start if start is not None else initial_state(spec, mesh0)
    step = step_dynamic if spec.law.variant == problems.DYNAMIC else step_coupled
    trajectory = [state]
    for obs in observers:
        obs(0, state)
    matrices = None
    for n in range(1, n_steps + 1):
        try:
            state, matrices = step(state, spec, config, matrices)
        except DegenerateElement as exc:
            # An element collapsed within the step, before the quality
            # monitor could see the new surface.
            err = MeshDegenerated(state.t + config.tau, mesh_quality(state.mesh))
            err.partial_trajectory = trajectory
            raise err from exc
        quality = mesh_quality(state.mesh)
        if (quality.min_angle_deg < config.abort_min_angle
                or quality.min_area < 1e-14 * state.mesh.h_max**2):
            err = MeshDegenerated(state.t, quality)
            err.partial_trajectory = trajectory
            raise err
        for obs in observers:
            obs(n, state)
        if n == n_steps or (config.snapshot_every > 0 and n % config.snapshot_every == 0):
            trajectory.append(state)
    return trajectory
