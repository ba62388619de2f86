"""Mixed finite element assembly on the reference mesh.

Spaces: lowest-order Nedelec (edge) elements for the tangentially continuous
field and P1 Lagrange elements for the multiplier.  On each triangle the
edge basis attached to the global edge (lo, hi) is the Whitney function

    N = lam_lo * grad(lam_hi) - lam_hi * grad(lam_lo),

which is exactly the covariant Piola image of the reference-element basis
under the affine element map; orienting every edge from its low to its high
vertex index makes the tangential trace globally single-valued.

The deformation never moves the mesh: it enters the integrands only through
the per-triangle kinematic factors (jacobian, inverse-transpose gradient).
All integrands are polynomial of degree <= 2 once those factors are frozen,
so the three-point edge-midpoint rule integrates every form exactly.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import InadmissibleDeformation
from .mesh_io import LOCAL_EDGES, Mesh
from .reference_transform import (
    DeformationField,
    det_derivative,
    gradient_all,
    invT_derivative,
    kinematics_at,
)

# Degree-2 quadrature: edge midpoints in barycentric coordinates, equal weights.
QP_BARY = np.array([
    [0.5, 0.5, 0.0],
    [0.0, 0.5, 0.5],
    [0.5, 0.0, 0.5],
])
QP_WEIGHT = 1.0 / 3.0


@dataclass
class DofMap:
    """Degree-of-freedom bookkeeping for the mixed pair of spaces.

    Tangential edge DOFs and vertex DOFs on the boundary are constrained
    (perfect electric conductor wall / homogeneous Dirichlet multiplier).
    """

    n_edge: int
    n_vertex: int
    constrained_edge: np.ndarray    # (E,) bool
    constrained_vertex: np.ndarray  # (V,) bool

    @classmethod
    def from_mesh(cls, mesh: Mesh) -> "DofMap":
        ce = np.zeros(mesh.n_edges, dtype=bool)
        ce[mesh.boundary_edges] = True
        cv = np.zeros(mesh.n_vertices, dtype=bool)
        cv[mesh.boundary_vertices] = True
        return cls(mesh.n_edges, mesh.n_vertices, ce, cv)

    @cached_property
    def free_edges(self) -> np.ndarray:
        return np.nonzero(~self.constrained_edge)[0]

    @cached_property
    def free_vertices(self) -> np.ndarray:
        return np.nonzero(~self.constrained_vertex)[0]

    @property
    def n_free_edge(self) -> int:
        return len(self.free_edges)

    @property
    def n_free_vertex(self) -> int:
        return len(self.free_vertices)

    @property
    def n_total(self) -> int:
        """Total DOF count of the assembled mixed system."""
        return self.n_edge + self.n_vertex

    @property
    def n_free(self) -> int:
        return self.n_free_edge + self.n_free_vertex

    def expand_edge(self, u_red: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_edge)
        full[self.free_edges] = u_red
        return full

    def restrict_edge(self, u_full: np.ndarray) -> np.ndarray:
        return np.asarray(u_full)[self.free_edges]

    def expand_vertex(self, p_red: np.ndarray) -> np.ndarray:
        full = np.zeros(self.n_vertex)
        full[self.free_vertices] = p_red
        return full

    def restrict_vertex(self, p_full: np.ndarray) -> np.ndarray:
        return np.asarray(p_full)[self.free_vertices]


@dataclass
class AssembledForms:
    """Sparse matrices of the three transformed bilinear forms.

    A: curl-curl form (edge x edge), symmetric positive semidefinite.
    B: constraint coupling (edge x vertex), b(u, phi) = u^T B phi.
    M: weighted vector mass (edge x edge), symmetric positive definite on
       free DOFs for admissible deformations.
    """

    A: sp.csr_matrix
    B: sp.csr_matrix
    M: sp.csr_matrix


@dataclass
class ShapeFunctional:
    """A linear functional on the control space.

    coeffs[v, c] is the value on the P1 vector nodal basis function of
    vertex v, component c; pairing with a nodal field is the plain sum of
    coefficient products.
    """

    coeffs: np.ndarray  # (V, 2)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if self.coeffs.ndim != 2 or self.coeffs.shape[1] != 2:
            raise ValueError(
                f"coeffs must be (V, 2), got {self.coeffs.shape}")

    @property
    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1)

    def pair(self, direction: np.ndarray) -> float:
        """Apply the functional to a nodal direction ((V,2) or flat)."""
        return float(self.flat @ np.asarray(direction).reshape(-1))

    def __add__(self, other: "ShapeFunctional") -> "ShapeFunctional":
        return ShapeFunctional(self.coeffs + other.coeffs)


def _local_edge_pairs(tri: np.ndarray) -> list[tuple[int, int]]:
    """Local vertex index pairs, each ordered by ascending global index."""
    pairs = []
    for a, b in LOCAL_EDGES:
        pairs.append((a, b) if tri[a] < tri[b] else (b, a))
    return pairs


def _triangle_kinematics(mesh: Mesh, q: DeformationField):
    """Per-triangle kinematics for an admissible deformation.

    Raises:
        InadmissibleDeformation: jacobian <= 0 somewhere.
    """
    grads = gradient_all(q)
    dets = (1.0 + grads[:, 0, 0]) * (1.0 + grads[:, 1, 1]) \
        - grads[:, 0, 1] * grads[:, 1, 0]
    if dets.min() <= 0.0:
        bad = int(np.argmin(dets))
        raise InadmissibleDeformation(
            f"jacobian {dets[bad]:.3e} <= 0 on triangle {bad}")
    return [kinematics_at(grads[t]) for t in range(mesh.n_triangles)]


def assemble_forms(mesh: Mesh, dofs: DofMap, q: DeformationField) -> AssembledForms:
    """Assemble the transformed curl-curl, coupling and mass forms.

    Matrices are full-sized (all DOFs); apply_dirichlet reduces them.

    Raises:
        InadmissibleDeformation: jacobian <= 0 on some triangle.
    """
    kins = _triangle_kinematics(mesh, q)
    grads = mesh.barycentric_gradients
    areas = mesh.areas
    n_t = mesh.n_triangles

    rows_a, cols_a, vals_a = [], [], []
    rows_b, cols_b, vals_b = [], [], []
    vals_m = []

    for t in range(n_t):
        tri = mesh.triangles[t]
        glob_e = mesh.triangle_edges[t]
        gl = grads[t]                                # (3, 2)
        kin = kins[t]
        area = areas[t]

        pairs = _local_edge_pairs(tri)
        curls = np.array([2.0 * (gl[i, 0] * gl[j, 1] - gl[i, 1] * gl[j, 0])
                          for i, j in pairs])
        # Whitney basis values at the quadrature points, already pulled back.
        nval = np.empty((3, 3, 2))                   # (basis, point, 2)
        for k, (i, j) in enumerate(pairs):
            for p in range(3):
                nval[k, p] = QP_BARY[p, i] * gl[j] - QP_BARY[p, j] * gl[i]
        tn = nval @ kin.DFinvT.T                     # DFinvT @ N, batched
        tg = gl @ kin.DFinvT.T                       # DFinvT @ grad(lam)

        w = QP_WEIGHT * area * kin.J
        m_loc = w * np.einsum("kpi,lpi->kl", tn, tn)
        b_loc = w * np.einsum("kpi,vi->kv", tn, tg)
        a_loc = (area / kin.J) * np.outer(curls, curls)

        ee = np.broadcast_arrays(glob_e[:, None], glob_e[None, :])
        rows_a.append(ee[0].ravel())
        cols_a.append(ee[1].ravel())
        vals_a.append(a_loc.ravel())
        vals_m.append(m_loc.ravel())
        ev = np.broadcast_arrays(glob_e[:, None], tri[None, :])
        rows_b.append(ev[0].ravel())
        cols_b.append(ev[1].ravel())
        vals_b.append(b_loc.ravel())

    shape_ee = (dofs.n_edge, dofs.n_edge)
    shape_ev = (dofs.n_edge, dofs.n_vertex)
    ra = np.concatenate(rows_a)
    ca = np.concatenate(cols_a)
    a_mat = sp.coo_matrix((np.concatenate(vals_a), (ra, ca)), shape=shape_ee).tocsr()
    m_mat = sp.coo_matrix((np.concatenate(vals_m), (ra, ca)), shape=shape_ee).tocsr()
    b_mat = sp.coo_matrix(
        (np.concatenate(vals_b), (np.concatenate(rows_b), np.concatenate(cols_b))),
        shape=shape_ev).tocsr()
    return AssembledForms(A=a_mat, B=b_mat, M=m_mat)


def apply_dirichlet(forms: AssembledForms, dofs: DofMap) -> AssembledForms:
    """Eliminate constrained rows and columns by symmetric reduction."""
    fe = dofs.free_edges
    fv = dofs.free_vertices
    return AssembledForms(
        A=forms.A[fe][:, fe].tocsr(),
        B=forms.B[fe][:, fv].tocsr(),
        M=forms.M[fe][:, fe].tocsr(),
    )


def gradient_incidence(mesh: Mesh) -> sp.csr_matrix:
    """Edge-gradient map G (edges x vertices): grad of a P1 function psi,
    expressed in the Whitney edge basis, has coefficients (G psi)."""
    e = np.arange(mesh.n_edges)
    rows = np.concatenate([e, e])
    cols = np.concatenate([mesh.edges[:, 0], mesh.edges[:, 1]])
    vals = np.concatenate([-np.ones(mesh.n_edges), np.ones(mesh.n_edges)])
    return sp.coo_matrix((vals, (rows, cols)),
                         shape=(mesh.n_edges, mesh.n_vertices)).tocsr()


def assemble_scalar_h1(mesh: Mesh) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """P1 mass and stiffness matrices on the undeformed reference mesh."""
    grads = mesh.barycentric_gradients
    areas = mesh.areas
    # Exact P1 mass: area/6 on the diagonal, area/12 off it.
    base = np.full((3, 3), 1.0 / 12.0) + np.eye(3) / 12.0
    m_loc = areas[:, None, None] * base
    s_loc = areas[:, None, None] * np.einsum("tvi,twi->tvw", grads, grads)

    tri = mesh.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    shape = (mesh.n_vertices, mesh.n_vertices)
    mass = sp.coo_matrix((m_loc.ravel(), (rows, cols)), shape=shape).tocsr()
    stiff = sp.coo_matrix((s_loc.ravel(), (rows, cols)), shape=shape).tocsr()
    return mass, stiff


def assemble_control_gram(mesh: Mesh) -> sp.csr_matrix:
    """Gram matrix of the H1 inner product on the P1 vector control space.

    Layout matches DeformationField.flat (components interleaved per vertex);
    both components carry the same scalar mass + stiffness block.
    """
    mass, stiff = assemble_scalar_h1(mesh)
    return sp.kron(mass + stiff, sp.identity(2), format="csr")


def assemble_shape_derivative(mesh: Mesh, dofs: DofMap, q: DeformationField,
                              state, adjoint, lam: float) -> ShapeFunctional:
    """Assemble the form part of the reduced shape derivative.

    Returns the functional p -> -a'(u,z)p - b'(z,psi)p - b'(u,chi)p
    + lam * m'(u,z)p against the nodal basis of the control space; the cost
    functional's own q-derivative is added separately by the objective
    module.  Expects full-length coefficient vectors (zeros on constrained
    DOFs) in `state` (u, psi) and `adjoint` (z, chi).
    """
    kins = _triangle_kinematics(mesh, q)
    grads = mesh.barycentric_gradients
    areas = mesh.areas

    u = np.asarray(state.u)
    psi = np.asarray(state.psi)
    z = np.asarray(adjoint.z)
    chi = np.asarray(adjoint.chi)

    coeffs = np.zeros((mesh.n_vertices, 2))
    basis = np.eye(2)

    for t in range(mesh.n_triangles):
        tri = mesh.triangles[t]
        glob_e = mesh.triangle_edges[t]
        gl = grads[t]
        kin = kins[t]
        area = areas[t]
        w = QP_WEIGHT * area

        pairs = _local_edge_pairs(tri)
        curls = np.array([2.0 * (gl[i, 0] * gl[j, 1] - gl[i, 1] * gl[j, 0])
                          for i, j in pairs])
        nval = np.empty((3, 3, 2))
        for k, (i, j) in enumerate(pairs):
            for p in range(3):
                nval[k, p] = QP_BARY[p, i] * gl[j] - QP_BARY[p, j] * gl[i]

        ue = u[glob_e]
        ze = z[glob_e]
        curl_u = float(ue @ curls)
        curl_z = float(ze @ curls)
        uvec = np.einsum("k,kpi->pi", ue, nval)      # (3 points, 2)
        zvec = np.einsum("k,kpi->pi", ze, nval)
        gpsi = psi[tri] @ gl                         # (2,)
        gchi = chi[tri] @ gl

        inv_t = kin.DFinvT
        tu = uvec @ inv_t.T
        tz = zvec @ inv_t.T
        tgpsi = inv_t @ gpsi
        tgchi = inv_t @ gchi

        for v in range(3):
            for c in range(2):
                grad_p = np.outer(basis[c], gl[v])
                jp = det_derivative(kin, grad_p)
                dp = invT_derivative(kin, grad_p)

                a_term = (-jp / kin.J ** 2) * curl_u * curl_z * area

                dz = zvec @ dp.T
                b_z_psi = w * (
                    jp * (tz @ tgpsi).sum()
                    + kin.J * (dz @ tgpsi).sum()
                    + kin.J * (tz @ (dp @ gpsi)).sum())

                du = uvec @ dp.T
                b_u_chi = w * (
                    jp * (tu @ tgchi).sum()
                    + kin.J * (du @ tgchi).sum()
                    + kin.J * (tu @ (dp @ gchi)).sum())

                m_term = w * (
                    jp * np.einsum("pi,pi->", tu, tz)
                    + kin.J * np.einsum("pi,pi->", du, tz)
                    + kin.J * np.einsum("pi,pi->", tu, dz))

                coeffs[tri[v], c] += (
                    -a_term - b_z_psi - b_u_chi + lam * m_term)

    return ShapeFunctional(coeffs)
