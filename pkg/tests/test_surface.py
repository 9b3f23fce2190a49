"""Unit tests for surface charts, grid sampling and spectral differentiation."""

import numpy as np
import pytest
from numpy.polynomial.legendre import leggauss
from numpy.testing import assert_allclose

from src.body import ConvexBody
from src.surface import (
    DegenerateChartError,
    HarmonicSeries,
    InvalidParameterError,
    SurfaceChart,
    chart_from_spec,
    gauss_differentiation_matrix,
    make_minkowski_sphere,
    make_radial_graph,
    make_round_sphere,
    make_torus,
    sample,
    scale_chart,
    translate_chart,
)


@pytest.fixture
def ellipsoid():
    """Create a mildly anisotropic ellipsoid."""
    return ConvexBody.ellipsoid([[1.21, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.81]])


class TestQuadrature:
    """Test cases for areas and enclosed volumes."""

    def test_round_sphere_area_and_volume(self):
        """Test exact area and volume of a round sphere."""
        surf = sample(make_round_sphere(2.0), (32, 16))

        assert surf.area() == pytest.approx(16.0 * np.pi, rel=1e-13)
        assert surf.enclosed_volume() == pytest.approx(32.0 * np.pi / 3.0, rel=1e-13)

    def test_round_sphere_outward_normal(self):
        """Test xi points away from the center."""
        surf = sample(make_round_sphere(1.0, center=[0.3, -0.2, 0.1]), (16, 8))

        assert_allclose(surf.xi, surf.positions - np.array([0.3, -0.2, 0.1]), atol=1e-14)

    def test_circle_length_and_area(self):
        """Test the n=2 round sphere is a circle."""
        surf = sample(make_round_sphere(2.0, center=[1.0, 1.0]), 64)

        assert surf.grid_shape == (64,)
        assert surf.area() == pytest.approx(4.0 * np.pi, rel=1e-13)
        assert surf.enclosed_volume() == pytest.approx(4.0 * np.pi, rel=1e-13)

    def test_torus_area_and_volume(self):
        """Test the torus values 4 pi^2 R r and 2 pi^2 R r^2."""
        surf = sample(make_torus(2.0, 0.5), (32, 32))

        assert surf.area() == pytest.approx(4.0 * np.pi ** 2 * 2.0 * 0.5, rel=1e-12)
        assert surf.enclosed_volume() == pytest.approx(2.0 * np.pi ** 2 * 2.0 * 0.25, rel=1e-12)

    def test_minkowski_sphere_volume(self, ellipsoid):
        """Test the volume of lambda * B for an ellipsoid."""
        surf = sample(make_minkowski_sphere(ellipsoid, 2.0), (64, 32))

        expected = 8.0 * 4.0 / 3.0 * np.pi * 1.1 * 1.0 * 0.9
        assert surf.enclosed_volume() == pytest.approx(expected, rel=1e-10)

    def test_ellipse_area(self):
        """Test the area enclosed by a planar Minkowski circle."""
        body = ConvexBody.ellipsoid([[1.44, 0.0], [0.0, 0.64]])
        surf = sample(make_minkowski_sphere(body), 128)

        assert surf.enclosed_volume() == pytest.approx(np.pi * 1.2 * 0.8, rel=1e-12)

    def test_integration_is_deterministic(self, ellipsoid):
        """Test repeated integration returns identical floats."""
        surf = sample(make_minkowski_sphere(ellipsoid), (32, 16))

        assert surf.area() == surf.area()
        assert sample(make_minkowski_sphere(ellipsoid), (32, 16)).area() == surf.area()

    def test_quadrature_error_estimate(self):
        """Test the halved-resolution estimate and its lower limit."""
        fine = sample(make_round_sphere(1.0), (32, 16))
        coarse = sample(make_round_sphere(1.0), (16, 8))

        assert fine.quadrature_error_estimate() < 1e-12
        assert np.isnan(coarse.quadrature_error_estimate())


class TestSpectralDerivatives:
    """Test cases for grid differentiation."""

    def test_gauss_matrix_on_cubic(self):
        """Test collocation differentiation is exact on polynomials."""
        s, w = leggauss(12)

        matrix = gauss_differentiation_matrix(s, w)

        assert_allclose(matrix @ s ** 3, 3.0 * s ** 2, atol=1e-12)

    def test_periodic_derivative(self):
        """Test the circle derivative of a trigonometric polynomial."""
        surf = sample(make_round_sphere(1.0, dimension=2), 32)
        theta = surf.params[0]

        assert_allclose(surf.partial(np.sin(3 * theta), 0), 3 * np.cos(3 * theta), atol=1e-12)

    @pytest.mark.parametrize("make", [
        lambda body: make_round_sphere(1.5),
        lambda body: make_minkowski_sphere(body, 1.0, center=[0.3, -0.2, 0.1]),
        lambda body: make_radial_graph(HarmonicSeries(3, 1.0, [0, 0, 0.1, 0.05])),
    ])
    def test_partials_match_chart(self, ellipsoid, make):
        """Test spectral partials of positions reproduce the analytic chart partials."""
        surf = sample(make(ellipsoid), (48, 24))

        partials = surf.partials(surf.positions)

        assert partials.shape == (2,) + surf.positions.shape
        assert_allclose(partials[0], surf.first_partials[..., 0], atol=1e-9)
        assert_allclose(partials[1], surf.first_partials[..., 1], atol=1e-9)

    def test_second_partials_match_chart(self, ellipsoid):
        """Test theta-derivatives of x_theta reproduce the analytic second partials."""
        surf = sample(make_minkowski_sphere(ellipsoid), (48, 24))
        x_theta = surf.first_partials[..., 0]

        assert_allclose(surf.partial(x_theta, 0), surf.second_partials[..., 0, 0], atol=1e-8)
        assert_allclose(surf.partial(x_theta, 1), surf.second_partials[..., 0, 1], atol=1e-8)

    def test_torus_partials(self):
        """Test both periodic axes of a torus."""
        surf = sample(make_torus(2.0, 0.5), (16, 16))

        partials = surf.partials(surf.positions)

        assert_allclose(partials[0], surf.first_partials[..., 0], atol=1e-12)
        assert_allclose(partials[1], surf.first_partials[..., 1], atol=1e-12)

    def test_shape_mismatch(self):
        """Test error for values that do not live on the grid."""
        surf = sample(make_round_sphere(1.0), (16, 8))

        with pytest.raises(ValueError, match="do not match grid"):
            surf.partial(np.zeros((8, 16)), 0)


class TestCharts:
    """Test cases for chart constructors and transformations."""

    def test_default_resolutions(self):
        """Test default and integer resolutions per topology."""
        assert sample(make_round_sphere(1.0), 32).grid_shape == (32, 16)
        assert sample(make_round_sphere(1.0), 8).grid_shape == (8, 8)
        assert sample(make_round_sphere(1.0), 12).grid_shape == (12, 8)
        assert sample(make_torus(2.0, 0.5)).grid_shape == (64, 64)
        assert sample(make_round_sphere(1.0, dimension=2)).grid_shape == (128,)

    def test_scale_and_translate(self, ellipsoid):
        """Test scaling multiplies area by t^2 and translation keeps volume."""
        chart = make_minkowski_sphere(ellipsoid)
        base = sample(chart, (32, 16))

        scaled = sample(scale_chart(chart, 1.5), (32, 16))
        moved = sample(translate_chart(chart, [1.0, 2.0, 3.0]), (32, 16))

        assert scaled.area() == pytest.approx(2.25 * base.area(), rel=1e-13)
        assert moved.enclosed_volume() == pytest.approx(base.enclosed_volume(), rel=1e-12)
        assert_allclose(moved.center, [1.0, 2.0, 3.0])

    def test_callable_radius_field(self):
        """Test a user radius function agrees with the harmonic series."""
        analytic = sample(make_radial_graph(HarmonicSeries(3, 1.0, [0, 0, 0.1])), (16, 8))
        numeric = sample(make_radial_graph(lambda nu: 1.0 + 0.1 * nu[..., 2]), (16, 8))

        assert_allclose(numeric.positions, analytic.positions, atol=1e-14)
        assert_allclose(numeric.first_partials, analytic.first_partials, atol=1e-8)

    def test_chart_from_spec(self, ellipsoid):
        """Test building charts from parsed surface specs."""
        chart = chart_from_spec({'kind': 'minkowski_sphere', 'lambda': 2.0, 'center': [0.0, 0.0, 1.0]}, ellipsoid)

        assert chart.kind == "minkowski_sphere"
        assert chart.params['lambda'] == 2.0
        assert_allclose(chart.center, [0.0, 0.0, 1.0])

    def test_minkowski_sphere_needs_body(self):
        """Test error for a Minkowski sphere spec without a body."""
        with pytest.raises(InvalidParameterError, match="needs a body"):
            chart_from_spec({'kind': 'minkowski_sphere', 'lambda': 1.0})

    def test_torus_in_the_plane(self):
        """Test error for a torus spec with n=2."""
        with pytest.raises(InvalidParameterError, match="only available for n=3"):
            chart_from_spec({'kind': 'torus', 'R': 2.0, 'r': 0.5}, dimension=2)

    @pytest.mark.parametrize("R, r", [(0.5, 0.5), (1.0, -0.1), (0.4, 0.5)])
    def test_invalid_torus(self, R, r):
        """Test error unless R > r > 0."""
        with pytest.raises(InvalidParameterError, match="R > r > 0"):
            make_torus(R, r)

    def test_invalid_radius(self):
        """Test error for a non-positive sphere radius."""
        with pytest.raises(InvalidParameterError, match="must be positive"):
            make_round_sphere(0.0)

    def test_center_dimension_mismatch(self):
        """Test error for a center of the wrong dimension."""
        with pytest.raises(InvalidParameterError, match="does not match dimension"):
            make_round_sphere(1.0, center=[0.0, 0.0], dimension=3)

    def test_nonpositive_radius_field(self):
        """Test error when the radial function vanishes somewhere."""
        with pytest.raises(InvalidParameterError, match="not positive at validation node"):
            make_radial_graph(HarmonicSeries(3, 0.1, [0, 0, 1.0]))

    def test_resolution_too_small(self):
        """Test error for a grid below the minimum resolution."""
        with pytest.raises(InvalidParameterError, match="two resolutions >= 8"):
            sample(make_round_sphere(1.0), (16, 4))

    def test_degenerate_chart(self):
        """Test a chart with vanishing partials is rejected with its node."""
        def evaluate(theta, s):
            shape = np.shape(theta + s)
            return np.zeros(shape + (3,)), np.zeros(shape + (3, 2)), np.zeros(shape + (3, 2, 2))

        chart = SurfaceChart(3, "sphere", "round_sphere", evaluate)

        with pytest.raises(DegenerateChartError, match=r"not an immersion at node \(0, 0\)"):
            sample(chart, (8, 8))
