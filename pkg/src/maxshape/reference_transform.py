"""Pointwise deformation calculus for the method of mappings.

The control is a continuous piecewise-linear displacement field q on the
reference mesh; the physical domain is the image of x + q(x).  Its gradient
is constant per triangle, so all kinematic quantities (deformation gradient,
jacobian, inverse transpose) are per-triangle as well.  The mesh coordinates
are never moved: the deformation enters assembly only through these factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularDeformation
from .mesh_io import Mesh

_IDENTITY = np.eye(2)


@dataclass
class DeformationField:
    """Per-vertex displacement, the control variable of the optimization."""

    mesh: Mesh
    values: np.ndarray  # (V, 2)

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.shape != (self.mesh.n_vertices, 2):
            raise ValueError(
                f"values shape {self.values.shape} does not match mesh "
                f"({self.mesh.n_vertices} vertices)")

    @classmethod
    def zero(cls, mesh: Mesh) -> "DeformationField":
        return cls(mesh, np.zeros((mesh.n_vertices, 2)))

    @classmethod
    def from_flat(cls, mesh: Mesh, vec: np.ndarray) -> "DeformationField":
        return cls(mesh, np.asarray(vec, dtype=np.float64).reshape(-1, 2))

    @property
    def flat(self) -> np.ndarray:
        """Coefficients as a flat vector (x0, y0, x1, y1, ...)."""
        return self.values.reshape(-1)


@dataclass(frozen=True)
class PointKinematics:
    """Deformation gradient, its determinant and inverse transpose at a point."""

    DF: np.ndarray          # (2, 2)
    J: float
    DFinvT: np.ndarray      # (2, 2)

    @property
    def DFinv(self) -> np.ndarray:
        return self.DFinvT.T


def kinematics_at(grad_q: np.ndarray) -> PointKinematics:
    """Kinematics induced by a displacement gradient at a point.

    Raises:
        SingularDeformation: det(I + grad_q) <= 0.
    """
    df = _IDENTITY + np.asarray(grad_q, dtype=np.float64)
    j = df[0, 0] * df[1, 1] - df[0, 1] * df[1, 0]
    if j <= 0.0:
        raise SingularDeformation(j)
    inv_t = np.array([[df[1, 1], -df[1, 0]], [-df[0, 1], df[0, 0]]]) / j
    return PointKinematics(DF=df, J=j, DFinvT=inv_t)


def det_derivative(kin: PointKinematics, grad_p: np.ndarray) -> float:
    """Directional derivative of the jacobian: J * tr(DF^-1 grad_p).

    Evaluated through the 2x2 adjugate, so no division by J is required.
    """
    df = kin.DF
    gp = grad_p
    # tr(adj(DF) @ grad_p) for adj = [[d, -b], [-c, a]]
    return (df[1, 1] * gp[0, 0] - df[0, 1] * gp[1, 0]
            - df[1, 0] * gp[0, 1] + df[0, 0] * gp[1, 1])


def invT_derivative(kin: PointKinematics, grad_p: np.ndarray) -> np.ndarray:
    """Directional derivative of DF^-T: -DF^-T grad_p^T DF^-T."""
    return -kin.DFinvT @ np.asarray(grad_p).T @ kin.DFinvT


def gradient_at(q: DeformationField, triangle: int) -> np.ndarray:
    """Exact gradient of the P1 interpolant of q on one triangle.

    Returns the 2x2 matrix with entries d(q_i)/d(x_j).
    """
    verts = q.mesh.triangles[triangle]
    return q.values[verts].T @ q.mesh.barycentric_gradients[triangle]


def gradient_all(q: DeformationField) -> np.ndarray:
    """(T, 2, 2) displacement gradients on every triangle at once."""
    vals = q.values[q.mesh.triangles]                   # (T, 3, 2)
    return np.einsum("tvi,tvj->tij", vals, q.mesh.barycentric_gradients)


def jacobian_all(q: DeformationField) -> np.ndarray:
    """(T,) jacobians det(I + grad q), one per triangle (any sign)."""
    g = gradient_all(q)
    return (1.0 + g[:, 0, 0]) * (1.0 + g[:, 1, 1]) - g[:, 0, 1] * g[:, 1, 0]


def jacobian_range(q: DeformationField) -> tuple[float, float]:
    """Extremes (min, max) of the deformation jacobian over all triangles."""
    j = jacobian_all(q)
    return float(j.min()), float(j.max())
