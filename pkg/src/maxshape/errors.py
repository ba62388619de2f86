"""Exception hierarchy shared by all maxshape modules."""


class MaxshapeError(Exception):
    """Base class for all errors raised by this package."""


# -- mesh I/O ---------------------------------------------------------------

class MeshError(MaxshapeError):
    """Base class for mesh construction and parsing errors."""


class UnsupportedVersion(MeshError):
    """MSH file is not Gmsh 2.2 ASCII."""


class MalformedSection(MeshError):
    """An MSH section (or triangle geometry) could not be interpreted."""


class EmptyMesh(MeshError):
    """The input contains no triangles."""


class NonManifoldEdge(MeshError):
    """An edge is shared by more than two triangles."""


class DimensionMismatch(MeshError):
    """An output field length matches neither vertex nor cell count."""


# -- deformation calculus ---------------------------------------------------

class SingularDeformation(MaxshapeError):
    """det(I + grad q) <= 0 at an evaluation point.

    This is a signal, not a fatal condition: line searches treat it as an
    infinite objective value.
    """

    def __init__(self, jacobian: float, message: str | None = None):
        self.jacobian = jacobian
        super().__init__(message or f"deformation jacobian {jacobian:g} <= 0")


class InadmissibleDeformation(MaxshapeError):
    """The deformation has non-positive jacobian on some triangle."""


class InfeasibleBarrier(MaxshapeError):
    """The deformation violates the barrier domain (jacobian <= offset)."""


# -- eigenvalue solver ------------------------------------------------------

class EigenSolverError(MaxshapeError):
    """Base class for generalized eigenvalue solver failures."""


class FactorizationFailed(EigenSolverError):
    """The shifted operator K - sigma*M could not be factorized."""


class NoConvergence(EigenSolverError):
    """The Krylov iteration did not converge to the requested accuracy."""


class InsufficientSpectrum(EigenSolverError):
    """Fewer finite eigenvalues were found than requested."""


class GapViolation(MaxshapeError):
    """The selected eigenvalue is not separated from its neighbours."""


class VerificationMismatch(MaxshapeError):
    """Directly solved adjoint disagrees with the scaled state."""


# -- gradient and optimization ----------------------------------------------

class LinearSolveFailure(MaxshapeError):
    """A sparse linear solve did not reach the required residual."""


class LineSearchFailed(MaxshapeError):
    """No Armijo step was accepted within the trial budget."""


class DegenerateCurvature(MaxshapeError):
    """(y, B y) <= 0: the inverse Hessian lost positive definiteness.

    With damping in place this indicates a bug, not a runtime condition.
    """


# -- configuration ----------------------------------------------------------

class ConfigError(MaxshapeError):
    """The run configuration is invalid or incomplete."""
