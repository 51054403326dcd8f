import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, special

from robustrisk.exceptions import EvaluationError, SolverError
from robustrisk.numerics import (QuadratureGrid, _half_normal_rule, expected_excess, expected_huber,
                                 expected_huber_grad, expected_soft_threshold_sq,
                                 expected_soft_threshold_sq_grad, gaussian_expectation, integral_I,
                                 logistic_loss, moreau_logistic, positive_part_second_moment,
                                 positive_part_second_moment_grad, prox_logistic, solve_nonlinear_system,
                                 std_normal_funcs)

finite = dict(allow_nan=False, allow_infinity=False)


def mp_gauss(f, breaks=()):
    """E f(Z) by mpmath quadrature, split at the kinks of f."""
    pts = [-mpmath.inf] + sorted(mpmath.mpf(b) for b in breaks) + [mpmath.inf]
    with mpmath.workdps(30):
        return float(mpmath.quad(lambda z: f(z) * mpmath.npdf(z), pts))


class TestNormalHelpers:
    def test_values(self):
        erf, cdf, pdf = std_normal_funcs(np.array([0.0, 1.0]))
        np.testing.assert_allclose(erf, [0.0, special.erf(1.0)])
        np.testing.assert_allclose(cdf, [0.5, 0.8413447460685429])
        np.testing.assert_allclose(pdf, [1 / np.sqrt(2 * np.pi), np.exp(-0.5) / np.sqrt(2 * np.pi)])

    def test_logistic_loss_no_overflow(self):
        np.testing.assert_allclose(logistic_loss([-800.0, 0.0, 800.0]), [800.0, np.log(2.0), 0.0])


class TestProx:
    def test_frozen_values(self):
        # mpmath findroot of t - x - mu / (1 + e^t)
        assert prox_logistic(0.0, 1.0) == pytest.approx(0.40105813754154707, abs=1e-14)
        assert prox_logistic(10.0, 1.0) == pytest.approx(10.00004539580797, abs=1e-12)

    def test_against_mpmath(self):
        for x, mu in [(-3.0, 0.5), (2.0, 7.0), (-40.0, 3.0), (0.1, 1e-4)]:
            ref = mpmath.findroot(lambda t: t - x - mu / (1 + mpmath.exp(t)), x)
            assert prox_logistic(x, mu) == pytest.approx(float(ref), abs=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(-200, 200, **finite), st.floats(1e-6, 200, **finite))
    def test_residual_and_bracket(self, x, mu):
        p = prox_logistic(x, mu)
        assert abs(p - x - mu * special.expit(-p)) <= 1e-10 * max(1.0, abs(x) + mu)
        assert x <= p <= x + mu

    def test_vectorized(self):
        x = np.linspace(-5, 5, 11)
        np.testing.assert_allclose(prox_logistic(x, 2.0), [prox_logistic(v, 2.0) for v in x])

    def test_bad_mu(self):
        with pytest.raises(ValueError):
            prox_logistic(0.0, 0.0)

    def test_nonconvergence_raises(self):
        with pytest.raises(SolverError):
            prox_logistic(0.3, 5.0, max_iter=1)


class TestMoreau:
    def test_envelope_is_minimum(self):
        x, t = 0.7, 1.3
        p = np.linspace(-5, 5, 200001)
        brute = np.min(logistic_loss(p) + (x - p) ** 2 / (2 * t))
        assert moreau_logistic(x, t).value == pytest.approx(brute, abs=1e-9)

    @pytest.mark.parametrize("x,t", [(0.0, 1.0), (-2.5, 0.3), (4.0, 6.0), (1e-3, 1e-2)])
    def test_partials_vs_finite_differences(self, x, t):
        k = moreau_logistic(x, t)
        h = 1e-5
        dx = (moreau_logistic(x + h, t).value - moreau_logistic(x - h, t).value) / (2 * h)
        dt = (moreau_logistic(x, t + h * t).value - moreau_logistic(x, t - h * t).value) / (2 * h * t)
        np.testing.assert_allclose(k.d_x, dx, rtol=1e-6, atol=1e-10)
        np.testing.assert_allclose(k.d_t, dt, rtol=1e-6, atol=1e-10)

    def test_small_t_tends_to_loss(self):
        np.testing.assert_allclose(moreau_logistic(1.5, 1e-8).value, logistic_loss(1.5), rtol=1e-7)


class TestClosedFormExpectations:
    @pytest.mark.parametrize("s,mu", [(1.0, 0.0), (0.5, 0.3), (2.0, 3.0)])
    def test_expected_excess(self, s, mu):
        ref = mp_gauss(lambda z: max(abs(s * z) - mu, 0), [-mu / s, mu / s])
        assert expected_excess(s, mu) == pytest.approx(ref, abs=1e-12)

    @pytest.mark.parametrize("mu,s", [(0.0, 1.0), (0.5, 1.0), (1.0, 0.3), (3.0, 2.0), (0.2, 5.0)])
    def test_soft_threshold(self, mu, s):
        ref = mp_gauss(lambda z: max(abs(s * z) - mu, 0) ** 2, [-mu / s, mu / s])
        assert expected_soft_threshold_sq(mu, s) == pytest.approx(ref, abs=1e-8)

    @pytest.mark.parametrize("a,b", [(1.0, 0.0), (1.0, 1.0), (0.3, 2.0), (2.0, 0.1), (-1.5, 0.7)])
    def test_huber(self, a, b):
        def hub(x):
            x = abs(x)
            return x * x / 2 if x <= b else b * x - b * b / 2
        brk = [-b / abs(a), b / abs(a)] if b > 0 else []
        assert expected_huber(a, b) == pytest.approx(mp_gauss(lambda z: hub(a * z), brk), abs=1e-8)

    def test_huber_frozen(self):
        assert expected_huber(1.0, 1.0) == pytest.approx(0.4246602166562292, abs=1e-14)

    @pytest.mark.parametrize("a,b", [(1.0, 0.0), (1.0, -5.0), (0.5, 1.0), (2.0, -0.3), (3.0, 4.0)])
    def test_positive_part(self, a, b):
        ref = mp_gauss(lambda z: max(b + a * z, 0) ** 2, [-b / a])
        assert positive_part_second_moment(a, b) == pytest.approx(ref, abs=1e-8)

    def test_positive_part_far_tail(self):
        # E (Z - 5)_+^2
        assert positive_part_second_moment(1.0, -5.0) == pytest.approx(1.9343295e-8, rel=1e-6)

    def test_positive_part_degenerate(self):
        np.testing.assert_allclose(positive_part_second_moment([0.0, 0.0], [2.0, -1.0]), [4.0, 0.0])

    def test_domain(self):
        with pytest.raises(ValueError):
            expected_soft_threshold_sq(-1.0, 1.0)
        with pytest.raises(ValueError):
            expected_huber(1.0, -0.1)
        with pytest.raises(ValueError):
            positive_part_second_moment(-1.0, 0.0)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 5.0, **finite), st.floats(0.05, 5.0, **finite))
    def test_soft_threshold_gradients(self, mu, s):
        _, gm, gs = expected_soft_threshold_sq_grad(mu, s)
        h = 1e-6
        fm = (expected_soft_threshold_sq(mu + h, s) - expected_soft_threshold_sq(max(mu - h, 0), s)) / (
            mu + h - max(mu - h, 0))
        fs = (expected_soft_threshold_sq(mu, s + h) - expected_soft_threshold_sq(mu, s - h)) / (2 * h)
        np.testing.assert_allclose([gm, gs], [fm, fs], atol=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(-5.0, 5.0, **finite).filter(lambda a: abs(a) > 0.05), st.floats(0.0, 5.0, **finite))
    def test_huber_gradients(self, a, b):
        _, ga, gb = expected_huber_grad(a, b)
        h = 1e-6
        fa = (expected_huber(a + h, b) - expected_huber(a - h, b)) / (2 * h)
        fb = (expected_huber(a, b + h) - expected_huber(a, max(b - h, 0))) / (b + h - max(b - h, 0))
        np.testing.assert_allclose([ga, gb], [fa, fb], atol=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.05, 5.0, **finite), st.floats(-5.0, 5.0, **finite))
    def test_positive_part_gradients(self, a, b):
        _, ga, gb = positive_part_second_moment_grad(a, b)
        h = 1e-6
        fa = (positive_part_second_moment(a + h, b) - positive_part_second_moment(a - h, b)) / (2 * h)
        fb = (positive_part_second_moment(a, b + h) - positive_part_second_moment(a, b - h)) / (2 * h)
        np.testing.assert_allclose([ga, gb], [fa, fb], atol=1e-6)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 5.0, **finite), st.floats(0.01, 5.0, **finite))
    def test_soft_threshold_bounded_by_second_moment(self, mu, s):
        g = expected_soft_threshold_sq(mu, s)
        assert 0.0 <= g <= s * s * (1 + 1e-12)


def mp_integral_I(t, u):
    with mpmath.workdps(30):
        if abs(u) == 1:
            return float(mpmath.sign(u) * (mpmath.ncdf(t) - mpmath.mpf(1) / 2))
        c = u / mpmath.sqrt(2 * (1 - mpmath.mpf(u) ** 2))
        f = lambda x: mpmath.npdf(x) * mpmath.erf(x * c)
        pts = [0] + [p for p in (1, 3, 6) if p < t] + [t]
        return float(mpmath.quad(f, pts))


class TestIntegralI:
    @pytest.mark.parametrize("t,u", [(0.5, 0.3), (2.0, -0.7), (1.0, 0.999), (4.0, 0.1), (0.1, 0.95),
                                     (3.0, 1.0), (1.2, -1.0)])
    def test_against_mpmath(self, t, u):
        assert integral_I(t, u) == pytest.approx(mp_integral_I(t, u), abs=1e-14)

    def test_zero_t(self):
        assert integral_I(0.0, 0.5) == 0.0

    def test_odd_in_u(self):
        t = np.linspace(0, 3, 7)
        np.testing.assert_allclose(integral_I(t, -0.4), -integral_I(t, 0.4), atol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.0, 8.0, **finite), st.floats(-1.0, 1.0, **finite))
    def test_bounded(self, t, u):
        # |erf| <= 1 inside the integrand
        assert abs(integral_I(t, u)) <= special.ndtr(t) - 0.5 + 1e-15

    def test_domain(self):
        with pytest.raises(ValueError):
            integral_I(-1.0, 0.0)
        with pytest.raises(ValueError):
            integral_I(1.0, 1.5)


class TestQuadrature:
    def test_half_normal_moments(self):
        nodes, weights = _half_normal_rule(96)
        for k in (0, 1, 2, 5, 10, 40, 100):
            exact = 2 ** (k / 2) * special.gamma((k + 1) / 2) / np.sqrt(np.pi)
            np.testing.assert_allclose(weights @ nodes ** k, exact, rtol=1e-12)

    def test_polynomial_exactness(self):
        # E |Z1|^3 Z2^4 = 2 sqrt(2/pi) * 3
        val = gaussian_expectation(lambda a, b: a ** 3 * b ** 4)
        np.testing.assert_allclose(val, 2 * np.sqrt(2 / np.pi) * 3, rtol=1e-13)

    def test_smooth_function(self):
        # E exp(-|Z1| - Z2^2/2) = 2 e^{1/2} Phi(-1) / sqrt 2
        val = gaussian_expectation(lambda a, b: np.exp(-a - 0.5 * b * b))
        np.testing.assert_allclose(val, 2 * np.exp(0.5) * special.ndtr(-1.0) / np.sqrt(2.0), rtol=1e-12)

    def test_kink_against_adaptive(self):
        f = lambda a, b: np.maximum(1.0 - a + 0.5 * b, 0.0) ** 2
        ref = integrate.dblquad(lambda b, a: f(a, b) * 2 * np.exp(-0.5 * (a * a + b * b)) / (2 * np.pi),
                                0, 12, -12, 12, epsabs=1e-11)[0]
        np.testing.assert_allclose(gaussian_expectation(f), ref, atol=1e-5)

    def test_mesh_matches(self):
        g = QuadratureGrid.build(32)
        zp, zq, w = g.mesh()
        np.testing.assert_allclose(np.sum(w * zp ** 2 * zq ** 2), 1.0, rtol=1e-13)
        assert zp.size == 32 * 32

    def test_nonfinite_reports_node(self):
        with pytest.raises(EvaluationError, match="z_par"):
            gaussian_expectation(lambda a, b: np.where(a > 3, np.inf, 0.0) + 0 * b)


class TestSolver:
    def test_scalar(self):
        rep = solve_nonlinear_system(lambda x: np.array([x[0] ** 2 - 2]), [1.0], [True])
        assert rep.converged
        np.testing.assert_allclose(rep.solution, [np.sqrt(2)], rtol=1e-12)

    def test_system(self):
        res = lambda x: np.array([x[0] + x[1] - 3, x[0] * x[1] - 2])
        rep = solve_nonlinear_system(res, [2.5, 0.7], [True, True])
        assert rep.converged
        np.testing.assert_allclose(sorted(rep.solution), [1, 2], rtol=1e-10)

    def test_unsigned_variable(self):
        c = np.array([-1.5, 0.25, 3.0])
        rep = solve_nonlinear_system(lambda x: x - c, np.zeros(3))
        np.testing.assert_allclose(rep.solution, c, atol=1e-12)

    def test_no_root(self):
        rep = solve_nonlinear_system(lambda x: np.array([x[0] ** 2 + 1]), [0.5], restarts=2)
        assert not rep.converged

    def test_deterministic(self):
        res = lambda x: np.array([np.cos(x[0]) - x[0]])
        a = solve_nonlinear_system(res, [3.0], restarts=4)
        b = solve_nonlinear_system(res, [3.0], restarts=4)
        assert a.solution[0] == b.solution[0]
