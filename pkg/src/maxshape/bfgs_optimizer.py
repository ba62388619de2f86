"""Damped inverse limited-memory BFGS in the control-space inner product.

The inverse Hessian approximation B_k is never stored as a matrix.  Each
update keeps the damped step d~, the gradient difference y, the cached
action B_k y and two scalars; applying B_k unrolls the recursion over the
stored records with B_0 = b0_scale * identity.  Powell-style damping of the
step keeps every stored curvature (d~, y) positive, so B_k stays positive
definite and -B_k g is always a descent direction.

All inner products here are taken with a caller-supplied bilinear form
(the H1 Gram of the control space); coefficient dot products never appear.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateCurvature, LineSearchFailed

QDot = Callable[[np.ndarray, np.ndarray], float]


@dataclass
class OptimizerConfig:
    """Stopping rule, line search and damping parameters."""

    tol: float = 1e-7
    k_max: int = 100
    gamma: float = 0.1
    rho_ls: float = 0.1
    ls_max: int = 10
    xi: float = 0.2
    m_mem: int = 20
    b0_scale: float = 1.0

    def __post_init__(self):
        if self.tol <= 0:
            raise ValueError("tol must be > 0")
        if not 0.0 < self.gamma < 0.5:
            raise ValueError("gamma must lie in (0, 0.5)")
        if not 0.0 < self.rho_ls < 1.0:
            raise ValueError("rho_ls must lie in (0, 1)")
        if not 0.0 < self.xi < 1.0:
            raise ValueError("xi must lie in (0, 1)")
        if self.ls_max < 1 or self.m_mem < 1 or self.k_max < 0:
            raise ValueError("ls_max, m_mem must be >= 1 and k_max >= 0")
        if self.b0_scale <= 0:
            raise ValueError("b0_scale must be > 0")


@dataclass
class _DampedPair:
    d_tilde: np.ndarray
    y: np.ndarray
    by: np.ndarray     # action of the operator on y at push time
    s1: float          # (d~, y)_Q
    s2: float          # (d~ - By, y)_Q


class BfgsHistory:
    """Bounded history of damped update pairs defining the operator action.

    Dropping the oldest pair at capacity restarts the recursion from B_0, so
    the cached actions B_k y and derived scalars of the surviving pairs are
    recomputed against the truncated recursion.  Every stored curvature
    (d~, y) stays positive, hence each truncated operator is again a chain
    of positivity-preserving updates of B_0.
    """

    def __init__(self, qdot: QDot, b0_scale: float, m_mem: int = 20):
        if b0_scale <= 0:
            raise ValueError("b0_scale must be > 0")
        self.qdot = qdot
        self.b0_scale = b0_scale
        self.m_mem = m_mem
        self.pairs: deque[_DampedPair] = deque()

    def __len__(self) -> int:
        return len(self.pairs)

    def push(self, d_tilde: np.ndarray, y: np.ndarray) -> None:
        """Store a damped pair; the oldest record is evicted at capacity.

        Raises:
            DegenerateCurvature: (d~, y) <= 0, which damping must prevent.
        """
        s1 = self.qdot(d_tilde, y)
        if s1 <= 0.0:
            raise DegenerateCurvature(f"stored curvature {s1:.3e} <= 0")
        if len(self.pairs) >= self.m_mem:
            self.pairs.popleft()
            self._rebase()
        by = _apply(self.b0_scale, self.qdot, self.pairs, y)
        s2 = self.qdot(d_tilde - by, y)
        self.pairs.append(_DampedPair(
            d_tilde=np.array(d_tilde, copy=True),
            y=np.array(y, copy=True),
            by=by, s1=s1, s2=s2))

    def _rebase(self) -> None:
        pairs = list(self.pairs)
        for i, p in enumerate(pairs):
            p.by = _apply(self.b0_scale, self.qdot, pairs[:i], p.y)
            p.s2 = self.qdot(p.d_tilde - p.by, p.y)


def _apply(b0_scale: float, qdot: QDot, pairs, g: np.ndarray) -> np.ndarray:
    v = b0_scale * np.asarray(g, dtype=np.float64).copy()
    for p in pairs:
        w = p.d_tilde - p.by
        dg = qdot(p.d_tilde, g)
        wg = qdot(w, g)
        v += (w * dg + p.d_tilde * wg) / p.s1 - p.d_tilde * (p.s2 / p.s1 ** 2) * dg
    return v


def apply_inverse_hessian(hist: BfgsHistory, g: np.ndarray) -> np.ndarray:
    """Evaluate B_k g by unrolling the stored update records."""
    return _apply(hist.b0_scale, hist.qdot, hist.pairs, g)


def damp(y: np.ndarray, d_tilde: np.ndarray, hist: BfgsHistory,
         xi: float) -> tuple[np.ndarray, float]:
    """Powell damping of the step against the current operator.

    Returns (d~', theta) with d~' = theta*d~ + (1-theta)*B_k y, which
    guarantees (y, d~')_Q >= xi * (y, B_k y)_Q > 0.

    Raises:
        DegenerateCurvature: (y, B_k y) <= 0 (operator invariant broken).
    """
    by = apply_inverse_hessian(hist, y)
    yby = hist.qdot(y, by)
    if yby <= 0.0:
        raise DegenerateCurvature(f"(y, B y) = {yby:.3e} <= 0")
    yd = hist.qdot(y, d_tilde)
    if yd >= xi * yby:
        return np.array(d_tilde, copy=True), 1.0
    theta = (1.0 - xi) * yby / (yby - yd)
    return theta * d_tilde + (1.0 - theta) * by, theta


def armijo(j_eval: Callable[[np.ndarray], float], q: np.ndarray,
           d: np.ndarray, g_dot_d: float, cfg: OptimizerConfig,
           j0: float | None = None) -> tuple[float, np.ndarray, float]:
    """Backtracking line search on t in {1, rho, rho^2, ...}.

    Accepts the first t with j(q + t*d) <= j(q) + gamma*t*(grad, d)_Q.
    Evaluations returning +inf (barrier violation, solver failure) simply
    fail the test.

    Raises:
        LineSearchFailed: no step accepted within ls_max trials, or d is
            not a descent direction.
    """
    if g_dot_d >= 0.0:
        raise LineSearchFailed(
            f"not a descent direction: (grad, d)_Q = {g_dot_d:.3e} >= 0")
    if j0 is None:
        j0 = j_eval(q)
    t = 1.0
    for _ in range(cfg.ls_max + 1):
        q_new = q + t * d
        j_new = j_eval(q_new)
        if j_new <= j0 + cfg.gamma * t * g_dot_d:
            return t, q_new, j_new
        t *= cfg.rho_ls
    raise LineSearchFailed(
        f"no Armijo step within {cfg.ls_max} backtracking trials")


@dataclass
class IterationRecord:
    """One row of the optimization log."""

    k: int
    lam: float
    j_value: float
    grad_norm: float
    step: float
    theta: float
    jq_min: float
    jq_max: float
    cos_angle: float = math.nan  # cosine of the angle between d and -grad


class OptimizeStatus(enum.Enum):
    CONVERGED = "converged"
    ITERATION_CAP = "iteration_cap"
    STALLED = "stalled"


def optimize(problem, q0: np.ndarray, cfg: OptimizerConfig,
             callback: Callable[[int, np.ndarray, IterationRecord], None] | None = None,
             ) -> tuple[np.ndarray, list[IterationRecord], OptimizeStatus]:
    """Damped inverse BFGS loop on the reduced problem.

    `problem` provides solve_state(q), solve_adjoint(q, state),
    reduced_derivative(q, state, adjoint), riesz_gradient(functional),
    evaluate(q, lam=None), q_inner(u, v) and jacobian_range(q); controls are
    flat coefficient vectors.  One IterationRecord is emitted per visited
    iterate; the terminal iterate carries step 0.
    """
    hist = BfgsHistory(qdot=problem.q_inner, b0_scale=cfg.b0_scale,
                       m_mem=cfg.m_mem)
    records: list[IterationRecord] = []

    q = np.array(q0, dtype=np.float64, copy=True)
    state = problem.solve_state(q)
    j_val = problem.evaluate(q, lam=state.lam)
    grad = _gradient(problem, q, state)

    status = OptimizeStatus.ITERATION_CAP
    k = 0
    while True:
        jq_min, jq_max = problem.jacobian_range(q)
        rec = IterationRecord(k=k, lam=state.lam, j_value=j_val,
                              grad_norm=grad.norm_q, step=0.0, theta=1.0,
                              jq_min=jq_min, jq_max=jq_max)
        if grad.norm_q <= cfg.tol:
            status = OptimizeStatus.CONVERGED
            records.append(rec)
            break
        if k >= cfg.k_max:
            status = OptimizeStatus.ITERATION_CAP
            records.append(rec)
            break

        gvec = grad.vector
        d = -apply_inverse_hessian(hist, gvec)
        g_dot_d = problem.q_inner(gvec, d)
        d_norm = math.sqrt(max(problem.q_inner(d, d), 0.0))
        if d_norm > 0 and grad.norm_q > 0:
            rec.cos_angle = -g_dot_d / (d_norm * grad.norm_q)

        try:
            t, q_new, j_new = armijo(problem.evaluate, q, d, g_dot_d, cfg,
                                     j0=j_val)
        except LineSearchFailed:
            status = OptimizeStatus.STALLED
            records.append(rec)
            break

        state_new = problem.solve_state(q_new)
        grad_new = _gradient(problem, q_new, state_new)

        d_step = t * d                     # equals q_new - q
        y = grad_new.vector - gvec
        if problem.q_inner(y, y) > 0.0:
            d_damped, theta = damp(y, d_step, hist, cfg.xi)
            hist.push(d_damped, y)
        else:
            theta = 1.0                    # no curvature information

        rec.step = t
        rec.theta = theta
        records.append(rec)
        if callback is not None:
            callback(k, q_new, rec)

        q = q_new
        state = state_new
        grad = grad_new
        j_val = j_new
        k += 1

    return q, records, status


def _gradient(problem, q: np.ndarray, state):
    adjoint = problem.solve_adjoint(q, state)
    functional = problem.reduced_derivative(q, state, adjoint)
    return problem.riesz_gradient(functional)


def write_iteration_csv(records: Sequence[IterationRecord]) -> str:
    """Render records as CSV ('.' decimal, ',' separator, header row)."""
    lines = ["k,lambda,j_value,grad_norm,step,theta,jq_min,jq_max"]
    for r in records:
        lines.append(",".join([
            str(r.k),
            _fmt(r.lam), _fmt(r.j_value), _fmt(r.grad_norm),
            _fmt(r.step), _fmt(r.theta), _fmt(r.jq_min), _fmt(r.jq_max),
        ]))
    return "\n".join(lines) + "\n"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")
