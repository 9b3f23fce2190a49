"""Unit tests for Richardson-extrapolated finite differences."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.utils import finite_difference as fd


class TestDerivative:
    """Test cases for one-variable derivatives."""

    def test_first_derivative_of_exponential(self):
        """Test first derivative with extrapolation reaches near machine precision."""
        value, error = fd.derivative(np.exp, 0.3)

        assert value == pytest.approx(np.exp(0.3), rel=1e-10)
        assert error < 1e-8

    def test_second_derivative_of_sine(self):
        """Test second derivative uses the 5-point stencil."""
        value, _ = fd.derivative(np.sin, 0.7, order=2)

        assert value == pytest.approx(-np.sin(0.7), rel=1e-6)

    def test_polynomial_is_exact(self):
        """Test cubic polynomials are differentiated to rounding error."""
        value, _ = fd.derivative(lambda t: 2.0 + 3.0 * t + 0.5 * t ** 3, 0.0)

        assert value == pytest.approx(3.0, abs=1e-10)

    def test_array_valued_function(self):
        """Test vector-valued functions are differentiated componentwise."""
        value, _ = fd.derivative(lambda t: np.array([np.sin(t), np.cos(t)]), 0.0)

        assert_allclose(value, [1.0, 0.0], atol=1e-11)

    def test_unsupported_order(self):
        """Test error for derivative orders other than 1 and 2."""
        with pytest.raises(ValueError, match="orders 1 and 2"):
            fd.derivative(np.exp, 0.0, order=3)

    def test_single_step_has_no_error_estimate(self):
        """Test a single step returns the raw stencil and a nan error."""
        value, error = fd.derivative(np.exp, 0.0, steps=(1e-3,))

        assert value == pytest.approx(1.0, rel=1e-6)
        assert np.isnan(error)


class TestRichardsonTable:
    """Test cases for the extrapolation table."""

    def test_removes_leading_error_terms(self):
        """Test synthetic estimates with h^2 and h^4 errors extrapolate exactly."""
        value, _ = fd.richardson_table(lambda h: 1.0 + 5.0 * h ** 2 + 7.0 * h ** 4, (0.1, 0.05, 0.025), 2)

        assert value == pytest.approx(1.0, abs=1e-12)

    def test_halving_steps(self):
        """Test the halving sequence."""
        assert fd.halving_steps(1e-3, 2) == (1e-3, 5e-4, 2.5e-4)


class TestGradientHessian:
    """Test cases for vectorized gradients and Hessians."""

    def test_gradient_of_quadratic(self):
        """Test gradient of a quadratic form."""
        Q = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 3.0]])
        points = np.array([[1.0, 0.0, 0.0], [0.3, -0.4, 0.8]])

        grad = fd.gradient(lambda v: 0.5 * np.einsum('...i,ij,...j->...', v, Q, v), points)

        assert_allclose(grad, points @ Q, atol=1e-10)

    def test_hessian_of_cubic(self):
        """Test Hessian including mixed entries."""
        point = np.array([0.5, -1.0, 2.0])

        hess = fd.hessian(lambda v: v[..., 0] ** 2 * v[..., 1] + v[..., 1] * v[..., 2] ** 2, point)

        x, y, z = point
        expected = np.array([
            [2 * y, 2 * x, 0.0],
            [2 * x, 0.0, 2 * z],
            [0.0, 2 * z, 2 * y],
        ])
        assert_allclose(hess, expected, atol=1e-6)
