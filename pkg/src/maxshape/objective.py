"""Cost functional: eigenvalue targeting, H1 regularization, log barrier.

    J(q, lam) = 1/2 |lam - lam_*|^2
              + alpha/2 (||q||^2 + ||grad q||^2)
              - beta * integral of ln(J_q - eps)

The barrier keeps the deformation locally injective (jacobian above eps).
Its q-derivative uses the factor 1/(J_q - eps), the actual derivative of
the integrand; with eps = 1e-4 the difference to 1/J_q is tiny, but only
the consistent form passes finite-difference validation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .errors import InfeasibleBarrier
from .fem_assembly import ShapeFunctional, assemble_control_gram
from .mesh_io import Mesh
from .reference_transform import (
    DeformationField,
    det_derivative,
    gradient_all,
    jacobian_all,
    kinematics_at,
)


@dataclass
class ObjectiveParams:
    """Target eigenvalue and regularization weights."""

    lambda_target: float
    alpha: float = 100.0
    beta: float = 1e-6
    epsilon: float = 1e-4

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be >= 0")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1) so that q = 0 is feasible")


def evaluate(mesh: Mesh, q: DeformationField, lam: float,
             params: ObjectiveParams, gram: sp.spmatrix | None = None) -> float:
    """Value of the cost functional; +inf signals barrier infeasibility.

    The regularization term is evaluated through the control-space Gram
    matrix, i.e. with the same quadrature used everywhere else (exact for
    piecewise-linear q).  Pass a precomputed Gram to skip its assembly.
    """
    jac = jacobian_all(q)
    if jac.min() <= params.epsilon:
        return math.inf
    target = 0.5 * (lam - params.lambda_target) ** 2
    if gram is None:
        gram = assemble_control_gram(mesh)
    flat = q.flat
    reg = 0.5 * params.alpha * float(flat @ (gram @ flat))
    barrier = -params.beta * float(mesh.areas @ np.log(jac - params.epsilon))
    return target + reg + barrier


def derivative_q(mesh: Mesh, q: DeformationField,
                 params: ObjectiveParams,
                 gram: sp.spmatrix | None = None) -> ShapeFunctional:
    """Partial q-derivative of the cost functional as a nodal functional.

    Raises:
        InfeasibleBarrier: jacobian <= epsilon somewhere.
    """
    jac = jacobian_all(q)
    if jac.min() <= params.epsilon:
        bad = int(np.argmin(jac))
        raise InfeasibleBarrier(
            f"jacobian {jac[bad]:.3e} <= eps on triangle {bad}")

    if gram is None:
        gram = assemble_control_gram(mesh)
    coeffs = (params.alpha * (gram @ q.flat)).reshape(-1, 2).copy()

    grads_q = gradient_all(q)
    grads_l = mesh.barycentric_gradients
    areas = mesh.areas
    basis = np.eye(2)
    for t in range(mesh.n_triangles):
        kin = kinematics_at(grads_q[t])
        factor = -params.beta * areas[t] / (kin.J - params.epsilon)
        tri = mesh.triangles[t]
        for v in range(3):
            for c in range(2):
                grad_p = np.outer(basis[c], grads_l[t, v])
                coeffs[tri[v], c] += factor * det_derivative(kin, grad_p)
    return ShapeFunctional(coeffs)


def derivative_lambda(lam: float, params: ObjectiveParams) -> float:
    """Partial derivative of the cost functional in the eigenvalue."""
    return lam - params.lambda_target
