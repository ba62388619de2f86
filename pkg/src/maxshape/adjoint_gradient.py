"""State and adjoint eigenproblem solves, reduced derivative, Riesz gradient.

Both bilinear forms of the eigenvalue problem are symmetric, so the adjoint
eigenproblem coincides with the state problem and only the normalization of
the adjoint pair differs: m(q; u, z) must equal the negative eigenvalue
derivative of the cost, giving z = (lambda_target - lambda) * u.  This exact
scaling is the production path; a verification mode re-solves the eigenvalue
problem and checks agreement.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import LinearSolveFailure, VerificationMismatch
from .eigensolver import (
    EigenSelection,
    MixedEigenPair,
    select_and_normalize,
    solve_gevp,
)
from .fem_assembly import (
    DofMap,
    ShapeFunctional,
    apply_dirichlet,
    assemble_control_gram,
    assemble_forms,
    assemble_shape_derivative,
)
from .mesh_io import Mesh
from .objective import ObjectiveParams, derivative_q
from .reference_transform import DeformationField


@dataclass
class AdjointPair:
    """Adjoint eigenfunction and multiplier.

    scale is the factor relating the adjoint to the normalized state
    eigenfunction: z = scale * u with scale = lambda_target - lambda, which
    realizes the normalization m(q; u, z) = -dJ/dlambda.
    """

    z: np.ndarray
    chi: np.ndarray
    scale: float


@dataclass
class QGradient:
    """Riesz representative of the reduced derivative in the control space."""

    field: DeformationField
    norm_q: float

    @property
    def vector(self) -> np.ndarray:
        return self.field.flat


def solve_state(mesh: Mesh, dofs: DofMap, q: DeformationField,
                sel: EigenSelection,
                v0: np.ndarray | None = None) -> MixedEigenPair:
    """Solve the constrained eigenvalue problem at deformation q.

    Returns the selected, normalized pair with full-length coefficient
    vectors (zeros on constrained DOFs).
    """
    forms = apply_dirichlet(assemble_forms(mesh, dofs, q), dofs)
    pairs = solve_gevp(forms, sel, v0=v0)
    pair = select_and_normalize(pairs, sel, forms.M)
    return MixedEigenPair(
        lam=pair.lam,
        u=dofs.expand_edge(pair.u),
        psi=dofs.expand_vertex(pair.psi),
        residual=pair.residual,
        gap_warning=pair.gap_warning,
    )


def solve_adjoint(q: DeformationField, state: MixedEigenPair,
                  lambda_target: float, *, verify: bool = False,
                  mesh: Mesh | None = None, dofs: DofMap | None = None,
                  sel: EigenSelection | None = None,
                  verify_tol: float = 1e-6) -> AdjointPair:
    """Adjoint pair by exact scaling of the state eigenfunction.

    With verify=True the adjoint eigenproblem is solved independently
    through the eigensolver (requires mesh, dofs, sel) and compared against
    the scaled state.

    Raises:
        VerificationMismatch: direct solve disagrees beyond verify_tol.
    """
    scale = lambda_target - state.lam
    adj = AdjointPair(z=scale * state.u, chi=scale * state.psi, scale=scale)
    if not verify:
        return adj

    if mesh is None or dofs is None or sel is None:
        raise ValueError("verification mode needs mesh, dofs and sel")
    forms = apply_dirichlet(assemble_forms(mesh, dofs, q), dofs)
    independent = EigenSelection(
        index=sel.index, gap_min=sel.gap_min, nev=sel.nev,
        shift=1.07 * sel.shift if sel.shift else None, tol=sel.tol)
    pairs = solve_gevp(forms, independent)
    direct = select_and_normalize(pairs, independent, forms.M)
    z_dir = dofs.expand_edge(direct.u)
    chi_dir = dofs.expand_vertex(direct.psi)
    # Align the arbitrary eigenvector sign with the state before scaling.
    if float(z_dir @ state.u) < 0:
        z_dir = -z_dir
        chi_dir = -chi_dir
    err = np.linalg.norm(scale * z_dir - adj.z) + \
        np.linalg.norm(scale * chi_dir - adj.chi)
    ref = max(np.linalg.norm(adj.z), 1.0)
    if err > verify_tol * ref:
        raise VerificationMismatch(
            f"scaled state and direct adjoint differ by {err:.3e} "
            f"(tolerance {verify_tol:.1e} * {ref:.3e})")
    return adj


def reduced_derivative(mesh: Mesh, dofs: DofMap, q: DeformationField,
                       state: MixedEigenPair, adjoint: AdjointPair,
                       params: ObjectiveParams,
                       gram: sp.spmatrix | None = None) -> ShapeFunctional:
    """Full derivative of the reduced cost: form terms plus cost terms."""
    form_part = assemble_shape_derivative(mesh, dofs, q, state, adjoint,
                                          state.lam)
    cost_part = derivative_q(mesh, q, params, gram=gram)
    return form_part + cost_part


def riesz_gradient(mesh: Mesh, functional: ShapeFunctional,
                   gram: sp.spmatrix | None = None,
                   solve: "callable | None" = None) -> QGradient:
    """Invert the H1 Riesz map of the control space.

    The control space carries no boundary conditions.  Pass the Gram matrix
    and a prefactored solver (e.g. splu(...).solve) to amortize assembly and
    factorization; neither depends on the deformation.

    Raises:
        LinearSolveFailure: relative residual above 1e-10.
    """
    rhs = functional.flat
    if not np.any(rhs):
        return QGradient(field=DeformationField.zero(mesh), norm_q=0.0)
    if gram is None:
        gram = assemble_control_gram(mesh)
    if solve is None:
        solve = spla.factorized(gram.tocsc())
    x = solve(rhs)
    res = np.linalg.norm(gram @ x - rhs) / np.linalg.norm(rhs)
    if res > 1e-10:
        raise LinearSolveFailure(f"Riesz solve residual {res:.3e} > 1e-10")
    # By the Riesz identity the squared norm is the duality pairing.
    norm_sq = float(rhs @ x)
    return QGradient(field=DeformationField.from_flat(mesh, x),
                     norm_q=float(np.sqrt(max(norm_sq, 0.0))))
