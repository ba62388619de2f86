import math
from types import SimpleNamespace

import numpy as np
import pytest

from maxshape import (
    BfgsHistory,
    OptimizeStatus,
    OptimizerConfig,
    apply_inverse_hessian,
    armijo,
    assemble_control_gram,
    damp,
    generate_unit_square,
    optimize,
)
from maxshape.errors import DegenerateCurvature, LineSearchFailed


@pytest.fixture(scope="module")
def gram10():
    """10-dimensional principal block of the control Gram of a 2x2 grid."""
    gram = assemble_control_gram(generate_unit_square(2)).toarray()
    return gram[:10, :10]


def make_qdot(gram):
    return lambda u, v: float(u @ (gram @ v))


def dense_operator(hist, gram):
    """Independent dense realization of the stored update recursion."""
    n = gram.shape[0]
    b = hist.b0_scale * np.eye(n)
    for p in hist.pairs:
        w = p.d_tilde - p.by
        b = b + (np.outer(w, p.d_tilde) + np.outer(p.d_tilde, w)) @ gram / p.s1 \
            - (p.s2 / p.s1 ** 2) * np.outer(p.d_tilde, p.d_tilde) @ gram
    return b


def push_random_pairs(hist, rng, count, dim):
    """Feed damped random pairs through the production path."""
    for _ in range(count):
        y = rng.standard_normal(dim)
        d = rng.standard_normal(dim)
        d_damped, _ = damp(y, d, hist, xi=0.2)
        hist.push(d_damped, y)


class TestApplyInverseHessian:
    def test_empty_history_is_scaled_identity(self, gram10, rng):
        hist = BfgsHistory(make_qdot(gram10), b0_scale=2.5)
        g = rng.standard_normal(10)
        np.testing.assert_allclose(apply_inverse_hessian(hist, g), 2.5 * g,
                                   rtol=1e-15)

    def test_degenerate_pair_is_identity_update(self, gram10, rng):
        # d~ = B0 y makes every correction term cancel
        hist = BfgsHistory(make_qdot(gram10), b0_scale=0.7)
        y = rng.standard_normal(10)
        hist.push(0.7 * y, y)
        g = rng.standard_normal(10)
        np.testing.assert_allclose(apply_inverse_hessian(hist, g), 0.7 * g,
                                   rtol=1e-12, atol=1e-14)

    def test_matches_dense_oracle(self, gram10, rng):
        qdot = make_qdot(gram10)
        hist = BfgsHistory(qdot, b0_scale=1.3, m_mem=10)
        push_random_pairs(hist, rng, 3, 10)
        dense = dense_operator(hist, gram10)
        for _ in range(10):
            g = rng.standard_normal(10)
            recursive = apply_inverse_hessian(hist, g)
            np.testing.assert_allclose(recursive, dense @ g, rtol=1e-12,
                                       atol=1e-12)

    def test_secant_property_when_undamped(self, gram10, rng):
        # theta = 1 pushes the raw pair; the update must map y to d~
        qdot = make_qdot(gram10)
        hist = BfgsHistory(qdot, b0_scale=1.0)
        y = rng.standard_normal(10)
        by = apply_inverse_hessian(hist, y)
        d = by + 3.0 * y  # (y, d)_Q > (y, By)_Q: no damping needed
        d_damped, theta = damp(y, d, hist, xi=0.2)
        assert theta == 1.0
        hist.push(d_damped, y)
        np.testing.assert_allclose(apply_inverse_hessian(hist, y), d,
                                   rtol=1e-10)


class TestDamp:
    def test_no_damping_branch(self, gram10, rng):
        hist = BfgsHistory(make_qdot(gram10), b0_scale=1.0)
        y = rng.standard_normal(10)
        d = apply_inverse_hessian(hist, y) * 2.0
        d_new, theta = damp(y, d, hist, xi=0.2)
        assert theta == 1.0
        np.testing.assert_array_equal(d_new, d)

    def test_strongly_negative_curvature(self, gram10, rng):
        # (y, d)_Q = -(y, By)_Q gives theta = (1-xi)/2 and post-damping
        # curvature exactly xi*(y, By)_Q
        qdot = make_qdot(gram10)
        hist = BfgsHistory(qdot, b0_scale=1.0)
        y = rng.standard_normal(10)
        by = apply_inverse_hessian(hist, y)
        yby = qdot(y, by)
        d = rng.standard_normal(10)
        d -= by * (qdot(y, d) / yby)        # (y, d)_Q = 0
        d -= by                              # (y, d)_Q = -(y, By)_Q
        assert qdot(y, d) == pytest.approx(-yby, rel=1e-12)
        d_new, theta = damp(y, d, hist, xi=0.2)
        assert theta == pytest.approx(0.4, rel=1e-12)
        assert qdot(y, d_new) == pytest.approx(0.2 * yby, rel=1e-10)

    def test_zero_curvature(self, gram10, rng):
        qdot = make_qdot(gram10)
        hist = BfgsHistory(qdot, b0_scale=1.0)
        y = rng.standard_normal(10)
        by = apply_inverse_hessian(hist, y)
        yby = qdot(y, by)
        d = rng.standard_normal(10)
        d -= by * (qdot(y, d) / yby)
        assert abs(qdot(y, d)) <= 1e-12 * yby
        d_new, theta = damp(y, d, hist, xi=0.2)
        assert theta == pytest.approx(0.8, rel=1e-10)
        assert qdot(y, d_new) == pytest.approx(0.2 * yby, rel=1e-9)

    def test_store_without_damping_rejected(self, gram10, rng):
        hist = BfgsHistory(make_qdot(gram10), b0_scale=1.0)
        y = rng.standard_normal(10)
        with pytest.raises(DegenerateCurvature):
            hist.push(-y, y)


class TestEviction:
    def test_capacity_respected(self, gram10, rng):
        hist = BfgsHistory(make_qdot(gram10), b0_scale=1.0, m_mem=3)
        push_random_pairs(hist, rng, 7, 10)
        assert len(hist) == 3

    def test_positive_definite_after_eviction(self, gram10, rng):
        # caches are rebased onto the truncated recursion, so the operator
        # stays a chain of positivity-preserving updates of B0
        qdot = make_qdot(gram10)
        hist = BfgsHistory(qdot, b0_scale=1.0, m_mem=2)
        for k in range(12):
            push_random_pairs(hist, rng, 1, 10)
            for _ in range(20):
                p = rng.standard_normal(10)
                assert qdot(p, apply_inverse_hessian(hist, p)) > 0

    def test_dense_oracle_after_eviction(self, gram10, rng):
        qdot = make_qdot(gram10)
        hist = BfgsHistory(qdot, b0_scale=0.8, m_mem=3)
        push_random_pairs(hist, rng, 9, 10)
        dense = dense_operator(hist, gram10)
        g = rng.standard_normal(10)
        np.testing.assert_allclose(apply_inverse_hessian(hist, g), dense @ g,
                                   rtol=1e-12, atol=1e-12)


class TestArmijo:
    def test_quadratic_accepts_full_step(self, gram10, rng):
        qdot = make_qdot(gram10)
        q = rng.standard_normal(10)

        def j_eval(x):
            return 0.5 * qdot(x, x)

        d = -q
        t, q_new, j_new = armijo(j_eval, q, d, qdot(q, d),
                                 OptimizerConfig(gamma=0.1))
        assert t == 1.0
        assert j_new == 0.0
        np.testing.assert_array_equal(q_new, np.zeros(10))

    def test_barrier_wall_backtracks(self):
        # j is +inf for x <= 0.5 along the ray; the first feasible trial
        # t = rho sits below the wall and satisfies the decrease condition
        def j_eval(x):
            if x[0] <= 0.5:
                return math.inf
            return 0.5 * (x[0] - 0.6) ** 2

        q = np.array([1.0])
        d = np.array([-1.0])
        g_dot_d = -0.4
        t, q_new, j_new = armijo(j_eval, q, d, g_dot_d,
                                 OptimizerConfig(gamma=0.1, rho_ls=0.1))
        assert t == pytest.approx(0.1)
        assert q_new[0] == pytest.approx(0.9)

    def test_ascent_direction_rejected(self):
        with pytest.raises(LineSearchFailed):
            armijo(lambda x: float(x[0]), np.array([1.0]), np.array([1.0]),
                   g_dot_d=0.5, cfg=OptimizerConfig())

    def test_exhaustion(self):
        # claim a steep slope the function never delivers
        def j_eval(x):
            return float(x[0])

        with pytest.raises(LineSearchFailed):
            armijo(j_eval, np.array([1.0]), np.array([1.0]), g_dot_d=-5.0,
                   cfg=OptimizerConfig(ls_max=4))

    def test_never_accepts_above_armijo_line(self, gram10, rng):
        qdot = make_qdot(gram10)
        q = rng.standard_normal(10)
        d = -q
        calls = []

        def j_eval(x):
            val = 0.5 * qdot(x, x)
            calls.append((x.copy(), val))
            return val

        cfg = OptimizerConfig(gamma=0.3, rho_ls=0.5)
        j0 = 0.5 * qdot(q, q)
        g_dot_d = qdot(q, d)
        t, _, j_new = armijo(j_eval, q, d, g_dot_d, cfg, j0=j0)
        assert j_new <= j0 + cfg.gamma * t * g_dot_d


class QuadraticProblem:
    """min 0.5 (q - q*)^T H (q - q*) posed through the problem protocol."""

    def __init__(self, gram, h_mat, q_star):
        self.gram = gram
        self.h_mat = h_mat
        self.q_star = q_star
        self.gram_inv = np.linalg.inv(gram)

    def solve_state(self, q):
        return SimpleNamespace(lam=0.0)

    def evaluate(self, q, lam=None):
        e = q - self.q_star
        return 0.5 * float(e @ (self.h_mat @ e))

    def solve_adjoint(self, q, state):
        return None

    def reduced_derivative(self, q, state, adjoint):
        coeffs = self.h_mat @ (q - self.q_star)
        return SimpleNamespace(flat=coeffs, pair=lambda p: float(coeffs @ p))

    def riesz_gradient(self, functional):
        vec = self.gram_inv @ functional.flat
        norm = math.sqrt(max(float(functional.flat @ vec), 0.0))
        return SimpleNamespace(vector=vec, norm_q=norm)

    def q_inner(self, u, v):
        return float(u @ (self.gram @ v))

    def jacobian_range(self, q):
        return 1.0, 1.0


class TestOptimize:
    def make_problem(self, gram10, rng):
        a = rng.standard_normal((10, 10))
        h_mat = a @ a.T + 10.0 * np.eye(10)
        q_star = rng.standard_normal(10)
        return QuadraticProblem(gram10, h_mat, q_star)

    def test_stationary_start(self, gram10, rng):
        prob = self.make_problem(gram10, rng)
        cfg = OptimizerConfig(tol=1e-7, k_max=50)
        q, records, status = optimize(prob, prob.q_star.copy(), cfg)
        assert status is OptimizeStatus.CONVERGED
        assert records[-1].k == 0
        np.testing.assert_array_equal(q, prob.q_star)

    def test_converges_on_quadratic(self, gram10, rng):
        prob = self.make_problem(gram10, rng)
        cfg = OptimizerConfig(tol=1e-9, k_max=200, b0_scale=0.05)
        q, records, status = optimize(prob, np.zeros(10), cfg)
        assert status is OptimizeStatus.CONVERGED
        np.testing.assert_allclose(q, prob.q_star, atol=1e-6)

    def test_monotone_descent(self, gram10, rng):
        prob = self.make_problem(gram10, rng)
        cfg = OptimizerConfig(tol=1e-9, k_max=200, b0_scale=0.05)
        _, records, _ = optimize(prob, np.zeros(10), cfg)
        values = [r.j_value for r in records]
        assert all(b <= a for a, b in zip(values, values[1:]))

    def test_iteration_cap(self, gram10, rng):
        prob = self.make_problem(gram10, rng)
        cfg = OptimizerConfig(tol=1e-16, k_max=3, b0_scale=0.05)
        _, records, status = optimize(prob, np.zeros(10), cfg)
        assert status is OptimizeStatus.ITERATION_CAP
        assert records[-1].k == 3

    def test_callback_invoked_per_step(self, gram10, rng):
        prob = self.make_problem(gram10, rng)
        seen = []
        cfg = OptimizerConfig(tol=1e-9, k_max=100, b0_scale=0.05)
        optimize(prob, np.zeros(10), cfg,
                 callback=lambda k, q, rec: seen.append(k))
        assert seen == list(range(len(seen)))
        assert len(seen) >= 1


class TestOptimizerConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        {"gamma": 0.5}, {"gamma": 0.0}, {"rho_ls": 1.0}, {"xi": 0.0},
        {"xi": 1.0}, {"tol": 0.0}, {"m_mem": 0}, {"b0_scale": 0.0},
    ])
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValueError):
            OptimizerConfig(**kwargs)
