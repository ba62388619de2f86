"""Generalized eigenvalue solver for the mixed saddle-point pencil.

The discrete problem is K x = lam * Mt x with

    K  = [[A, B], [B^T, 0]],      Mt = [[M, 0], [0, 0]],

assembled on free DOFs.  Mt is singular, so the pencil carries a cluster of
infinite eigenvalues; under the shift-invert transform

    OP = (K - sigma * Mt)^{-1} Mt,    theta = 1 / (lam - sigma),

those map to theta = 0 and are discarded by a threshold, while the finite
eigenvalues nearest the shift dominate the transformed spectrum.  Small
systems fall back to a dense QZ solve of the same pencil.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    FactorizationFailed,
    GapViolation,
    InsufficientSpectrum,
    NoConvergence,
)
from .fem_assembly import AssembledForms

log = logging.getLogger(__name__)

# Below this pencil size the dense QZ path is both faster and more robust.
DENSE_THRESHOLD = 300


@dataclass
class MixedEigenPair:
    """Eigenvalue with edge-space eigenvector and vertex-space multiplier.

    Invariants after select_and_normalize: u^T M u = 1, the largest-magnitude
    entry of u is positive, and ||B^T u|| <= 1e-6 ||M u|| certifies the pair
    as divergence-free (spurious-free).
    """

    lam: float
    u: np.ndarray
    psi: np.ndarray
    residual: float
    gap_warning: bool = False


@dataclass
class EigenSelection:
    """Which eigenpair to compute and how accurately.

    index counts finite eigenvalues from the smallest; gap_min is the
    required separation from the rest of the computed spectrum; shift is the
    spectral transform target (must not be an eigenvalue); nev defaults to
    max(6, index + 3).
    """

    index: int = 0
    gap_min: float = 0.0
    shift: float | None = None
    nev: int | None = None
    tol: float = 1e-5
    strict_gap: bool = False
    maxiter: int | None = None

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("index must be >= 0")
        if self.gap_min < 0:
            raise ValueError("gap_min must be >= 0")
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if self.nev is not None and self.nev < self.index + 2:
            raise ValueError("nev must be >= index + 2 for the gap check")

    @property
    def nev_effective(self) -> int:
        return self.nev if self.nev is not None else max(6, self.index + 3)


def build_pencil(forms: AssembledForms) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Block matrices (K, Mt) of the mixed pencil from reduced forms."""
    n_e = forms.A.shape[0]
    n_v = forms.B.shape[1]
    k_mat = sp.bmat([[forms.A, forms.B], [forms.B.T, None]], format="csr") \
        if n_v else forms.A.tocsr()
    zero = sp.csr_matrix((n_v, n_v))
    mt = sp.bmat([[forms.M, None], [None, zero]], format="csr") \
        if n_v else forms.M.tocsr()
    return k_mat, mt


def solve_gevp(forms: AssembledForms, sel: EigenSelection,
               v0: np.ndarray | None = None) -> list[MixedEigenPair]:
    """Compute the nev finite eigenvalues nearest the shift, sorted ascending.

    Each returned eigenvector is normalized to u^T M u = 1 and satisfies the
    relative pencil residual bound of the selection tolerance.

    Raises:
        FactorizationFailed: K - sigma*Mt is singular.
        NoConvergence: the Krylov iteration hit its cap, or a computed pair
            exceeds the residual tolerance.
        InsufficientSpectrum: fewer finite eigenvalues than requested.
    """
    if sel.shift is None:
        raise ValueError("EigenSelection.shift must be set before solving")
    n_e = forms.A.shape[0]
    n_v = forms.B.shape[1]
    n = n_e + n_v
    nev = sel.nev_effective
    if n_e == 0:
        raise InsufficientSpectrum("no free edge DOFs")
    k_mat, mt = build_pencil(forms)
    sigma = float(sel.shift)

    if n <= max(DENSE_THRESHOLD, 2 * nev + 12):
        lams, vecs = _dense_finite_spectrum(k_mat, mt, sel)
    else:
        lams, vecs = _arpack_finite_spectrum(k_mat, mt, sigma, nev, sel, v0)

    if len(lams) < nev:
        raise InsufficientSpectrum(
            f"found {len(lams)} finite eigenvalues, requested {nev}")

    order = np.argsort(np.abs(lams - sigma))[:nev]
    lams = lams[order]
    vecs = vecs[:, order]
    order = np.argsort(lams)
    lams = lams[order]
    vecs = vecs[:, order]

    pairs = []
    for i, lam in enumerate(lams):
        x = vecs[:, i]
        u = x[:n_e]
        psi = x[n_e:]
        mu = forms.M @ u
        nrm = np.sqrt(u @ mu)
        if nrm <= 0:
            raise NoConvergence(f"eigenvector {i} has zero mass norm")
        u = u / nrm
        psi = psi / nrm
        x = x / nrm
        res = _pencil_residual(k_mat, mt, lam, x)
        if res > sel.tol:
            raise NoConvergence(
                f"eigenpair {i} (lam={lam:.6g}) residual {res:.2e} "
                f"exceeds tol {sel.tol:.2e}")
        pairs.append(MixedEigenPair(lam=float(lam), u=u, psi=psi, residual=res))
    return pairs


def _pencil_residual(k_mat, mt, lam: float, x: np.ndarray) -> float:
    num = np.linalg.norm(k_mat @ x - lam * (mt @ x))
    den = abs(lam) * np.linalg.norm(mt @ x)
    return float(num / max(den, np.finfo(float).tiny))


def _dense_finite_spectrum(k_mat, mt, sel: EigenSelection):
    kd = k_mat.toarray()
    md = mt.toarray()
    (alpha, beta), vr = scipy.linalg.eig(kd, md, homogeneous_eigvals=True)
    # The zero mass block yields structurally infinite eigenvalues: beta = 0
    # up to rounding.  Anything with a non-negligible beta is finite.
    finite = np.abs(beta) > 1e-8 * max(np.abs(beta).max(), 1e-300)
    w = alpha[finite] / beta[finite]
    real = np.abs(w.imag) <= 1e-8 * (1.0 + np.abs(w.real))
    return w.real[real], vr.real[:, finite][:, real]


def _arpack_finite_spectrum(k_mat, mt, sigma: float, nev: int,
                            sel: EigenSelection, v0: np.ndarray | None):
    n = k_mat.shape[0]
    try:
        lu = spla.splu((k_mat - sigma * mt).tocsc())
    except RuntimeError as exc:
        raise FactorizationFailed(
            f"factorization of K - sigma*M failed at sigma={sigma:g}: {exc}"
        ) from exc

    op = spla.LinearOperator((n, n), matvec=lambda x: lu.solve(mt @ x))
    # A couple of spare Ritz pairs guard against near-zero theta dropouts.
    k = min(nev + 2, n - 2)
    ncv = min(n, max(3 * k + 8, 30))
    if v0 is not None and len(v0) != n:
        v0 = None
    if v0 is None:
        # fixed starting vector keeps repeated solves bit-identical
        v0 = np.random.default_rng(0).standard_normal(n)
    try:
        theta, x = spla.eigs(op, k=k, which="LM", v0=v0, ncv=ncv,
                             tol=sel.tol * 1e-2, maxiter=sel.maxiter)
    except spla.ArpackNoConvergence as exc:
        raise NoConvergence(f"ARPACK did not converge: {exc}") from exc

    theta = theta.real
    keep = np.abs(theta) >= 10.0 * sel.tol
    lams = sigma + 1.0 / theta[keep]
    return lams, x.real[:, keep]


def select_and_normalize(pairs: list[MixedEigenPair], sel: EigenSelection,
                         m_mat: sp.spmatrix) -> MixedEigenPair:
    """Pick the requested pair, normalize it and check its spectral gap.

    The eigenvector is rescaled to u^T M u = 1 with the largest-magnitude
    entry of u positive (a deterministic representative); the multiplier is
    rescaled alongside.  The gap is checked against the other computed
    eigenvalues only.

    Raises:
        InsufficientSpectrum: index beyond the computed list.
        GapViolation: separation below gap_min in strict mode.
    """
    if sel.index >= len(pairs):
        raise InsufficientSpectrum(
            f"index {sel.index} outside the {len(pairs)} computed pairs")
    chosen = pairs[sel.index]
    u = chosen.u.copy()
    psi = chosen.psi.copy()

    nrm = np.sqrt(u @ (m_mat @ u))
    u /= nrm
    psi /= nrm
    if u[np.argmax(np.abs(u))] < 0:
        u = -u
        psi = -psi

    gap_warning = False
    if sel.gap_min > 0 and len(pairs) > 1:
        others = [p.lam for i, p in enumerate(pairs) if i != sel.index]
        gap = min(abs(chosen.lam - l) for l in others)
        if gap < sel.gap_min:
            if sel.strict_gap:
                raise GapViolation(
                    f"gap {gap:.3e} below required {sel.gap_min:.3e} at "
                    f"lam={chosen.lam:.6g}")
            log.warning("eigenvalue gap %.3e below required %.3e", gap,
                        sel.gap_min)
            gap_warning = True

    return MixedEigenPair(lam=chosen.lam, u=u, psi=psi,
                          residual=chosen.residual, gap_warning=gap_warning)
