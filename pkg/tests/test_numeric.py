import numpy as np
import numpy.testing as npt
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from censcov import weibull_aft as aft
from censcov.errors import NonConvergence, NonFinite, SingularJacobian
from censcov.numeric import (DEFAULT_RULE, SEMI_INFINITE_LOG, QuadratureRule, SolverConfig,
                             finite_diff_jacobian, gauss_legendre, integrate_lower_truncated,
                             semi_infinite_rule, solve_estimating_equation)


class TestSolver:
    def test_scalar_linear(self):
        root = solve_estimating_equation(lambda t: t - 3.0, [0.0])
        npt.assert_allclose(root, [3.0], atol=1e-8)

    def test_analytic_root(self):
        root = solve_estimating_equation(lambda t: np.array([t[0] ** 2 - 4.0, t[1] - 1.0]),
                                         [1.0, 0.0])
        npt.assert_allclose(root, [2.0, 1.0], atol=1e-8)

    def test_least_squares_gradient_matches_normal_equations(self):
        rng = np.random.default_rng(11)
        design = np.column_stack([np.ones(200), rng.normal(size=(200, 2))])
        y = design @ [1.0, -2.0, 0.5] + rng.normal(size=200)

        def gradient(beta):
            return design.T @ (design @ beta - y) / y.size

        root = solve_estimating_equation(gradient, np.zeros(3))
        expected = np.linalg.solve(design.T @ design, design.T @ y)
        npt.assert_allclose(root, expected, atol=1e-8)

    def test_singular_jacobian(self):
        with pytest.raises(SingularJacobian):
            solve_estimating_equation(lambda t: np.array([t[0] + t[1] - 1, 2 * t[0] + 2 * t[1]]),
                                      [0.0, 0.0])

    def test_iteration_cap(self):
        cfg = SolverConfig(max_iterations=1)
        with pytest.raises(NonConvergence):
            solve_estimating_equation(lambda t: np.exp(t) - 5.0, [0.0], cfg)

    def test_no_descent_reported(self):
        # t^2 + 1 has no real root; the iterates stall at the minimum
        with pytest.raises((NonConvergence, SingularJacobian)):
            solve_estimating_equation(lambda t: np.array([t[0] ** 2 + 1.0]), [0.5])

    def test_residual_decaying_at_infinity_is_not_a_root(self):
        # 1 / (1 + t) has no root; Newton doubles t while the residual shrinks
        phi = lambda t: np.where(t > -1, 1.0 / (1.0 + t), np.nan)  # noqa: E731
        with pytest.raises(NonConvergence):
            solve_estimating_equation(phi, [0.0], SolverConfig(max_iterations=200))

    def test_nan_region_is_avoided(self):
        # phi undefined for t <= 0; the full Newton step from 3 lands there
        def phi(t):
            with np.errstate(invalid="ignore", divide="ignore"):
                return np.where(t > 0, np.log(t) + 4.0, np.nan)

        root = solve_estimating_equation(phi, [3.0])
        npt.assert_allclose(root, np.exp(-4.0), rtol=1e-7)

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=3, max_size=3),
           st.lists(st.floats(-5, 5), min_size=9, max_size=9))
    def test_quadratic_gradient_converges_from_any_start(self, start, entries):
        mat = np.reshape(entries, (3, 3))
        hess = mat @ mat.T + np.eye(3)
        target = np.array([1.0, -2.0, 3.0])
        root = solve_estimating_equation(lambda t: hess @ (t - target), start,
                                         SolverConfig(max_iterations=50))
        npt.assert_allclose(hess @ (root - target), 0.0, atol=1e-8)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(tolerance=0.0)
        with pytest.raises(ValueError):
            SolverConfig(max_iterations=0)
        with pytest.raises(ValueError):
            SolverConfig(fd_step=0.1)


class TestQuadrature:
    def test_exponential(self):
        npt.assert_allclose(integrate_lower_truncated(lambda x: np.exp(-x), 0.0), 1.0, atol=1e-6)

    def test_gamma_two(self):
        npt.assert_allclose(integrate_lower_truncated(lambda x: x * np.exp(-x), 0.0), 1.0,
                            atol=1e-6)

    def test_weibull_tail(self):
        density = stats.weibull_min(2.0, scale=1.0).pdf
        npt.assert_allclose(integrate_lower_truncated(density, 0.5), np.exp(-0.25), atol=1e-6)

    def test_scalar_only_integrand(self):
        npt.assert_allclose(integrate_lower_truncated(lambda x: float(np.exp(-x)), 0.0), 1.0,
                            atol=1e-6)

    def test_non_finite_integrand(self):
        with pytest.raises(NonFinite):
            integrate_lower_truncated(lambda x: np.full_like(x, np.nan), 0.0)

    def test_finite_rule_rejected(self):
        with pytest.raises(ValueError):
            integrate_lower_truncated(np.exp, 0.0, gauss_legendre(8))

    def test_gauss_legendre_polynomial_exactness(self):
        rule = gauss_legendre(5, 0.0, 2.0)
        npt.assert_allclose(np.sum(rule.weights * rule.nodes ** 9), 2.0 ** 10 / 10, rtol=1e-13)

    def test_rule_validation(self):
        with pytest.raises(ValueError):
            QuadratureRule(np.array([1.0, 2.0]), np.array([1.0, -1.0]))
        with pytest.raises(ValueError):
            QuadratureRule(np.array([1.0]), np.array([1.0, 1.0]))

    @pytest.mark.parametrize("shape", [0.5, 0.7, 1.0, 1.5, 2.0, 3.0, 5.0])
    @pytest.mark.parametrize("scale", [0.1, 1.0, 10.0])
    def test_weibull_normalisation_log_rule(self, shape, scale):
        rule = semi_infinite_rule(64, SEMI_INFINITE_LOG)
        params = aft.AftParams.from_shape([np.log(scale)], shape)
        total = integrate_lower_truncated(lambda x: np.exp(aft.log_density(x, None, params)),
                                          0.0, rule, scale=scale)
        npt.assert_allclose(total, 1.0, atol=1e-6)

    @pytest.mark.parametrize("shape", [1.0, 1.5, 2.0, 3.0])
    def test_weibull_normalisation_default_rule(self, shape):
        # densities finite at the origin are handled by the default map
        params = aft.AftParams.from_shape([0.3], shape)
        total = integrate_lower_truncated(lambda x: np.exp(aft.log_density(x, None, params)),
                                          0.0, DEFAULT_RULE, scale=np.exp(0.3))
        npt.assert_allclose(total, 1.0, atol=1e-6)

    @pytest.mark.parametrize("lower", [0.0, 0.3, 2.0])
    def test_doubling_nodes_changes_little(self, lower):
        def g(x):
            return stats.norm.pdf(x, 1.2, 0.7) * stats.weibull_min.pdf(x, 2.0, scale=1.1)

        coarse = integrate_lower_truncated(g, lower, semi_infinite_rule(64), scale=1.1)
        fine = integrate_lower_truncated(g, lower, semi_infinite_rule(128), scale=1.1)
        npt.assert_allclose(coarse, fine, rtol=1e-8, atol=1e-12)


class TestJacobian:
    def test_analytic(self):
        jac = finite_diff_jacobian(lambda t: np.array([t[0] ** 2, t[0] * t[1]]), [1.0, 2.0])
        npt.assert_allclose(jac, [[2.0, 0.0], [2.0, 1.0]], atol=1e-6)

    def test_identity(self):
        npt.assert_allclose(finite_diff_jacobian(lambda t: t, [0.3, -7.0, 1e3]), np.eye(3),
                            atol=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-10, 10), min_size=6, max_size=6),
           st.lists(st.floats(-100, 100), min_size=3, max_size=3))
    def test_affine_map_exact(self, entries, point):
        mat = np.reshape(entries, (2, 3))
        jac = finite_diff_jacobian(lambda t: mat @ t + 1.0, point)
        npt.assert_allclose(jac, mat, atol=1e-7 * (1 + np.abs(mat).max()))

    def test_non_finite(self):
        with pytest.raises(NonFinite):
            with np.errstate(invalid="ignore", divide="ignore"):
                finite_diff_jacobian(lambda t: np.log(t), [0.0])
