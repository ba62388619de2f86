"""Reduced optimization problem: the glue between FEM, eigensolver and BFGS.

MaxwellShapeProblem owns everything that is deformation-independent (mesh,
DOF maps, control-space Gram matrix and its factorization, eigensolver warm
start) and exposes the callable surface the optimizer drives.  Controls
cross this interface as flat coefficient vectors.
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.sparse.linalg as spla

from . import adjoint_gradient, objective
from .eigensolver import EigenSelection, MixedEigenPair
from .errors import EigenSolverError, SingularDeformation
from .fem_assembly import DofMap, ShapeFunctional, assemble_control_gram
from .mesh_io import Mesh
from .objective import ObjectiveParams
from .reference_transform import DeformationField, jacobian_range

log = logging.getLogger(__name__)


class MaxwellShapeProblem:
    """Eigenvalue-targeting shape problem on a fixed reference mesh."""

    def __init__(self, mesh: Mesh, params: ObjectiveParams,
                 sel: EigenSelection, seed: int = 0):
        self.mesh = mesh
        self.params = params
        if sel.shift is None:
            # Keep the spectral transform target near the eigenvalue we chase.
            sel = EigenSelection(
                index=sel.index, gap_min=sel.gap_min,
                shift=max(0.9 * params.lambda_target, 1e-12),
                nev=sel.nev, tol=sel.tol, strict_gap=sel.strict_gap,
                maxiter=sel.maxiter)
        self.sel = sel
        self.dofs = DofMap.from_mesh(mesh)
        self.gram = assemble_control_gram(mesh)
        self._gram_solve = spla.factorized(self.gram.tocsc())
        rng = np.random.default_rng(seed)
        self._warm = rng.standard_normal(self.dofs.n_free)

    # -- control helpers ----------------------------------------------------

    @property
    def n_control(self) -> int:
        return 2 * self.mesh.n_vertices

    def zero_control(self) -> np.ndarray:
        return np.zeros(self.n_control)

    def field(self, q: np.ndarray) -> DeformationField:
        return DeformationField.from_flat(self.mesh, q)

    # -- problem protocol ---------------------------------------------------

    def solve_state(self, q: np.ndarray) -> MixedEigenPair:
        state = adjoint_gradient.solve_state(
            self.mesh, self.dofs, self.field(q), self.sel, v0=self._warm)
        self._warm = np.concatenate([
            self.dofs.restrict_edge(state.u),
            self.dofs.restrict_vertex(state.psi)])
        return state

    def solve_adjoint(self, q: np.ndarray, state: MixedEigenPair):
        return adjoint_gradient.solve_adjoint(
            self.field(q), state, self.params.lambda_target)

    def reduced_derivative(self, q: np.ndarray, state: MixedEigenPair,
                           adjoint) -> ShapeFunctional:
        return adjoint_gradient.reduced_derivative(
            self.mesh, self.dofs, self.field(q), state, adjoint, self.params,
            gram=self.gram)

    def riesz_gradient(self, functional: ShapeFunctional):
        return adjoint_gradient.riesz_gradient(
            self.mesh, functional, gram=self.gram, solve=self._gram_solve)

    def evaluate(self, q: np.ndarray, lam: float | None = None) -> float:
        """Objective value at control q; +inf on infeasible/unsolvable points."""
        field = self.field(q)
        jq_min, _ = jacobian_range(field)
        if jq_min <= self.params.epsilon:
            return math.inf
        if lam is None:
            try:
                lam = self.solve_state(q).lam
            except (EigenSolverError, SingularDeformation) as exc:
                log.debug("treating solver failure as infeasible: %s", exc)
                return math.inf
        return objective.evaluate(self.mesh, field, lam, self.params,
                                  gram=self.gram)

    def q_inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(np.asarray(u) @ (self.gram @ np.asarray(v)))

    def q_norm(self, u: np.ndarray) -> float:
        return math.sqrt(max(self.q_inner(u, u), 0.0))

    def jacobian_range(self, q: np.ndarray) -> tuple[float, float]:
        return jacobian_range(self.field(q))

    # -- derived quantities -------------------------------------------------

    def derivative_functional(self, q: np.ndarray
                              ) -> tuple[ShapeFunctional, MixedEigenPair]:
        """Reduced derivative and the state it was computed from."""
        state = self.solve_state(q)
        adjoint = self.solve_adjoint(q, state)
        return self.reduced_derivative(q, state, adjoint), state
