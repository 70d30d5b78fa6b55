"""Surface-dependent matrices, load vectors and discrete norms.

All integrals are over the flat triangles of a ``SurfaceMesh`` with the
piecewise linear nodal basis.  Mass/load integrands use the 3-point
edge-midpoint rule, which is exact for quadratics and hence for all
products of two linear basis functions; stiffness entries only involve
constant gradients and are exact with the plain area weight.

Assembly accumulates element contributions in a fixed order into a
precomputed sparsity pattern, so repeated assemblies of the same mesh are
bitwise identical, and the symmetric local blocks make the global
matrices exactly symmetric entry by entry.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import DegenerateElement, DimensionMismatch, FieldLengthMismatch, NonFiniteIntegrand
from .mesh import SurfaceMesh

# Local P1 mass block for a triangle of unit area.
_MASS_TEMPLATE = np.array([[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]]) / 12.0


@dataclass(frozen=True)
class QuadratureRule:
    """Barycentric quadrature rule on the reference triangle.

    Weights sum to one; integrals are ``area * sum(w_q * f(x_q))``.
    """

    points: np.ndarray  # (Q, 3) barycentric coordinates
    weights: np.ndarray  # (Q,)
    degree: int

    def __post_init__(self):
        object.__setattr__(self, "points", np.asarray(self.points, dtype=float))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))


#: Degree-2 rule at the three edge midpoints.
MIDPOINT_RULE = QuadratureRule(
    points=np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
    weights=np.array([1.0, 1.0, 1.0]) / 3.0,
    degree=2,
)


def _checked_areas(mesh):
    area = mesh.element_areas
    if area.min() < 1e-14 * mesh.h_max**2:
        bad = int(np.argmin(area))
        raise DegenerateElement(bad, float(area[bad]))
    return area


def _pattern(mesh):
    """CSR sparsity pattern of the P1 pair coupling, cached per topology."""
    cache = mesh._topo_cache
    if "pattern" not in cache:
        t = mesh.triangles
        n = mesh.num_nodes
        rows = np.repeat(t, 3, axis=1).ravel()
        cols = np.tile(t, (1, 3)).ravel()
        keys = rows.astype(np.int64) * n + cols
        unique_keys, inv = np.unique(keys, return_inverse=True)
        indices = (unique_keys % n).astype(np.int32)
        counts = np.bincount((unique_keys // n).astype(np.int64), minlength=n)
        indptr = np.zeros(n + 1, dtype=np.int32)
        np.cumsum(counts, out=indptr[1:])
        for arr in (inv, indices, indptr):
            arr.setflags(write=False)
        cache["pattern"] = (inv, indices, indptr, unique_keys.size)
    return cache["pattern"]


def _assemble_pairs(mesh, local):
    """Sum (T, 3, 3) local blocks into the global CSR matrix."""
    inv, indices, indptr, nnz = _pattern(mesh)
    data = np.bincount(inv, weights=local.ravel(), minlength=nnz)
    n = mesh.num_nodes
    mat = sp.csr_matrix((data, indices.copy(), indptr.copy()), shape=(n, n))
    mat.has_sorted_indices = True
    return mat


def assemble_mass(mesh: SurfaceMesh) -> sp.csr_matrix:
    """Mass matrix M with M[j, k] = integral of phi_j phi_k."""
    area = _checked_areas(mesh)
    local = area[:, None, None] * _MASS_TEMPLATE
    return _assemble_pairs(mesh, local)


def assemble_stiffness(mesh: SurfaceMesh) -> sp.csr_matrix:
    """Stiffness matrix A with A[j, k] = integral of grad phi_j . grad phi_k.

    Constants lie in the kernel: A @ 1 = 0 up to roundoff.
    """
    area = _checked_areas(mesh)
    g = mesh.basis_gradients
    local = area[:, None, None] * np.einsum("tik,tjk->tij", g, g)
    return _assemble_pairs(mesh, local)


@dataclass(frozen=True)
class BlockSystemMatrix:
    """Blockwise operator: the scalar matrix applied to each Cartesian
    component of a node-major 3N vector."""

    scalar_part: sp.csr_matrix

    @property
    def dim(self) -> int:
        return 3 * self.scalar_part.shape[0]

    def apply(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        if w.size != self.dim:
            raise DimensionMismatch(f"expected a vector of length {self.dim}, got {w.size}")
        return np.asarray(self.scalar_part @ w.reshape(-1, 3)).reshape(-1)


def build_velocity_matrix(mesh: SurfaceMesh, alpha: float) -> BlockSystemMatrix:
    """The velocity-law system operator with scalar part M + alpha A (SPD)."""
    if alpha < 0.0:
        raise ValueError("alpha must be non-negative")
    scalar = assemble_mass(mesh)
    if alpha != 0.0:
        scalar = (scalar + alpha * assemble_stiffness(mesh)).tocsr()
    return BlockSystemMatrix(scalar)


def assemble_normal_coupling(mesh: SurfaceMesh, u, mode: str = "nodal") -> np.ndarray:
    """Normal coupling vector driving the velocity law with the field u.

    ``nodal`` (default) puts the nodal coefficient u_j inside the integral:
    entry 3j+l is u_j * integral of (normal)_l phi_j.  ``interpolated``
    integrates the interpolant u_h instead; the two differ at O(h^2).
    """
    u = np.asarray(u, dtype=float)
    n = mesh.num_nodes
    if u.size != n:
        raise FieldLengthMismatch(f"field has {u.size} entries, expected {n}")
    area = _checked_areas(mesh)
    normal = mesh.element_normals
    t = mesh.triangles
    out = np.zeros((n, 3))
    if mode == "nodal":
        # integral of phi_j over one triangle is area/3
        w = (area / 3.0)[:, None] * normal
        for i in range(3):
            for c in range(3):
                out[:, c] += np.bincount(t[:, i], weights=w[:, c], minlength=n)
        out *= u[:, None]
    elif mode == "interpolated":
        coeff = np.einsum("ij,tj->ti", _MASS_TEMPLATE, u[t]) * area[:, None]
        for i in range(3):
            contrib = coeff[:, i : i + 1] * normal
            for c in range(3):
                out[:, c] += np.bincount(t[:, i], weights=contrib[:, c], minlength=n)
    else:
        raise ValueError(f"unknown normal coupling mode: {mode!r}")
    return out.reshape(-1)


def _load_fields(mesh, u, extra_fields):
    n = mesh.num_nodes
    fields = []
    for f in (u, *extra_fields):
        if f is None:
            f = np.zeros(n)
        f = np.asarray(f, dtype=float)
        if f.size != n:
            raise FieldLengthMismatch(f"field has {f.size} entries, expected {n}")
        fields.append(f)
    return fields


def _quad_point_values(mesh, rule, fields):
    """Per quadrature point: barycentric weights, positions, field values."""
    t = mesh.triangles
    corners = mesh.coords[t]  # (T, 3, 3)
    grads = np.einsum("tik,ti->tk", mesh.basis_gradients, fields[0][t])
    for lam, wq in zip(rule.points, rule.weights):
        pos = np.einsum("k,tkj->tj", lam, corners)
        vals = [f[t] @ lam for f in fields]
        yield lam, wq, pos, vals, grads


def assemble_scalar_load(
    mesh: SurfaceMesh,
    integrand,
    u=None,
    time: float = 0.0,
    extra_fields=(),
    rule: QuadratureRule = MIDPOINT_RULE,
) -> np.ndarray:
    """Load vector with entries integral of integrand * phi_j.

    ``integrand(x, u, grad_u, t, *extras)`` must be vectorized: it receives
    quadrature-point positions (Q, 3), interpolated field values (Q,), the
    elementwise-constant tangential gradient (Q, 3) and the time, plus the
    interpolated values of any ``extra_fields``, and returns (Q,) values.
    """
    n = mesh.num_nodes
    fields = _load_fields(mesh, u, extra_fields)
    area = _checked_areas(mesh)
    t = mesh.triangles
    out = np.zeros(n)
    for lam, wq, pos, vals, grads in _quad_point_values(mesh, rule, fields):
        f_vals = np.asarray(integrand(pos, vals[0], grads, time, *vals[1:]), dtype=float)
        if not np.all(np.isfinite(f_vals)):
            raise NonFiniteIntegrand(f"integrand non-finite at t={time}")
        base = wq * area * f_vals
        for i in range(3):
            if lam[i] != 0.0:
                out += np.bincount(t[:, i], weights=base * lam[i], minlength=n)
    return out


def assemble_normal_load(
    mesh: SurfaceMesh,
    scalar_integrand,
    u=None,
    time: float = 0.0,
    extra_fields=(),
    rule: QuadratureRule = MIDPOINT_RULE,
) -> np.ndarray:
    """Vector load (3N,) with the element normal multiplying the integrand.

    Entry 3j+l is the integral of integrand * (normal)_l * phi_j.
    """
    n = mesh.num_nodes
    fields = _load_fields(mesh, u, extra_fields)
    area = _checked_areas(mesh)
    normal = mesh.element_normals
    t = mesh.triangles
    out = np.zeros((n, 3))
    for lam, wq, pos, vals, grads in _quad_point_values(mesh, rule, fields):
        f_vals = np.asarray(scalar_integrand(pos, vals[0], grads, time, *vals[1:]), dtype=float)
        if not np.all(np.isfinite(f_vals)):
            raise NonFiniteIntegrand(f"integrand non-finite at t={time}")
        base = (wq * area * f_vals)[:, None] * normal
        for i in range(3):
            if lam[i] != 0.0:
                for c in range(3):
                    out[:, c] += np.bincount(t[:, i], weights=base[:, c] * lam[i], minlength=n)
    return out.reshape(-1)


def discrete_norms(M, A, alpha: float, w) -> tuple[float, float, float]:
    """(|w|_M, |w|_A, |w|_K) with |w|_K^2 = |w|_M^2 + alpha |w|_A^2.

    Length-N vectors are measured directly; length-3N vectors blockwise
    (sum of the three componentwise quadratic forms).
    """
    w = np.asarray(w, dtype=float)
    n = M.shape[0]
    if w.size == n:
        cols = w[:, None]
    elif w.size == 3 * n:
        cols = w.reshape(-1, 3)
    else:
        raise DimensionMismatch(f"vector length {w.size} fits neither N={n} nor 3N={3 * n}")
    m2 = float(np.einsum("ij,ij->", cols, M @ cols))
    a2 = float(np.einsum("ij,ij->", cols, A @ cols))
    m2, a2 = max(m2, 0.0), max(a2, 0.0)
    return np.sqrt(m2), np.sqrt(a2), np.sqrt(m2 + alpha * a2)


# ---------------------------------------------------------------------------
# Bilinear forms over one surface (used by the lemma checks)

def tangential_divergence(mesh: SurfaceMesh, e) -> np.ndarray:
    """Elementwise-constant tangential divergence of the P1 field e (3N,)."""
    e = np.asarray(e, dtype=float).reshape(-1, 3)
    return np.einsum("tik,tik->t", mesh.basis_gradients, e[mesh.triangles])


def mass_divergence_form(mesh: SurfaceMesh, velocity, w, z) -> float:
    """integral of w_h z_h (div velocity_h): the mass-transport form.

    Exact for P1 data (quadratic integrand times a constant).
    """
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    div = tangential_divergence(mesh, velocity)
    t = mesh.triangles
    wz = np.einsum("ti,ij,tj->t", w[t], _MASS_TEMPLATE, z[t])
    return float(np.sum(mesh.element_areas * div * wz))


def stiffness_difference_form(mesh: SurfaceMesh, e, w, z) -> float:
    """integral of grad w . (trace(E) I - E - E^T) grad z with E = grad e_h."""
    e = np.asarray(e, dtype=float).reshape(-1, 3)
    w = np.asarray(w, dtype=float)
    z = np.asarray(z, dtype=float)
    g = mesh.basis_gradients
    t = mesh.triangles
    E = np.einsum("tik,til->tkl", g, e[t])
    D = np.trace(E, axis1=1, axis2=2)[:, None, None] * np.eye(3) - (E + E.transpose(0, 2, 1))
    gw = np.einsum("tik,ti->tk", g, w[t])
    gz = np.einsum("tik,ti->tk", g, z[t])
    return float(np.sum(mesh.element_areas * np.einsum("tk,tkl,tl->t", gw, D, gz)))


def write_coordinate_matrix(matrix, path) -> None:
    """Dump a sparse matrix as '<row> <col> <value>' lines (0-based)."""
    coo = sp.csr_matrix(matrix).sorted_indices().tocoo()
    with open(path, "w") as f:
        for i, j, v in zip(coo.row, coo.col, coo.data):
            f.write("%d %d %.17g\n" % (i, j, v))
