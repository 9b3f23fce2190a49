"""Unit tests for Euclidean and Minkowski frames."""

import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.body import ConvexBody
from src.frames import (
    FrameConsistencyError,
    check_drho_identity,
    compute_frames,
    dump_frames_csv,
    frames_summary,
    umbilicity_report,
)
from src.surface import (
    HarmonicSeries,
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


@pytest.fixture
def sphere_frames(ellipsoid):
    """Frames of the unit round sphere measured with the ellipsoid."""
    return compute_frames(ellipsoid, sample(make_round_sphere(1.0), (32, 24)))


class TestCurvatures:
    """Test cases for principal curvatures on known surfaces."""

    def test_ball_round_sphere(self):
        """Test a sphere of radius 2 in the Euclidean case."""
        frames = compute_frames(ConvexBody.ball(), sample(make_round_sphere(2.0), (16, 8)))

        assert_allclose(frames.lambdas, 0.5, atol=1e-12)
        assert_allclose(frames.rho, 2.0, atol=1e-12)
        assert_allclose(frames.H_m, 0.5, atol=1e-12)
        assert_allclose(frames.K_m, 0.25, atol=1e-12)

    @pytest.mark.parametrize("scale", [0.5, 1.0, 2.0])
    def test_minkowski_sphere_is_umbilic(self, ellipsoid, scale):
        """Test every principal curvature of lambda * B equals 1 / lambda."""
        frames = compute_frames(ellipsoid, sample(make_minkowski_sphere(ellipsoid, scale), (48, 24)))

        assert_allclose(frames.lambdas, 1.0 / scale, atol=1e-8)
        assert_allclose(frames.rho, scale, atol=1e-8)
        assert umbilicity_report(frames)['umbilic_fraction'] == 1.0

    def test_planar_minkowski_circle(self):
        """Test the n=2 case with a single principal curvature."""
        body = ConvexBody.ellipsoid([[1.44, 0.0], [0.0, 0.64]])
        frames = compute_frames(body, sample(make_minkowski_sphere(body, 2.0), 64))

        assert frames.lambdas.shape == (64, 1)
        assert_allclose(frames.lambdas, 0.5, atol=1e-8)

    def test_torus_with_ball(self):
        """Test the torus curvatures cos v / (R + r cos v) and 1 / r."""
        surf = sample(make_torus(2.0, 0.5), (16, 16))
        frames = compute_frames(ConvexBody.ball(), surf)

        v = surf.params[1]
        expected = np.sort(np.stack([np.cos(v) / (2.0 + 0.5 * np.cos(v)), np.full(v.shape, 2.0)], axis=-1), axis=-1)
        assert_allclose(frames.lambdas, expected, atol=1e-12)

    def test_lambdas_are_eigenvalues_of_d_eta(self, sphere_frames):
        """Test the generalized eigenvalues match the spectrum of d(eta)."""
        spectrum = np.sort(np.linalg.eigvals(sphere_frames.d_eta).real, axis=-1)

        assert_allclose(sphere_frames.lambdas, spectrum, atol=1e-9)

    def test_round_sphere_not_umbilic(self, sphere_frames):
        """Test a round sphere is not umbilic for an anisotropic body."""
        report = umbilicity_report(sphere_frames)

        assert report['umbilic_fraction'] < 0.1
        assert report['max_spread'] > 0.1


class TestFrameIdentities:
    """Test cases for frame consistency and identities."""

    def test_health_metrics(self, sphere_frames):
        """Test residuals of tangentiality, the shape operator cross-check, self-adjointness and reconstruction."""
        assert np.max(sphere_frames.tangential_residual) < 1e-7
        assert np.max(sphere_frames.crosscheck_residual) < 1e-7
        assert np.max(sphere_frames.self_adjoint_residual) < 1e-7
        assert np.max(sphere_frames.reconstruction_residual) < 1e-7

    def test_dupin_eigenvectors_orthonormal(self, sphere_frames):
        """Test eigenvectors are orthonormal for the Dupin metric."""
        vectors = sphere_frames.dupin_eigenvectors
        gram = np.swapaxes(vectors, -1, -2) @ sphere_frames.dupin_gram @ vectors

        assert_allclose(gram, np.broadcast_to(np.eye(2), gram.shape), atol=1e-10)

    def test_eta_partials_match_chain_rule(self, ellipsoid, sphere_frames):
        """Test spectral chart derivatives of eta against Hess(h) applied to d(xi)."""
        frames = sphere_frames
        xi_partials = frames.tangent_basis @ frames.shape_operator @ frames.chart_to_basis
        expected = ellipsoid.support_hessian(frames.xi) @ xi_partials

        assert_allclose(frames.eta_partials, expected, atol=1e-8)

    def test_drho_identity(self, ellipsoid):
        """Test the derivative of rho on an off-center surface."""
        surf = sample(make_minkowski_sphere(ellipsoid, 1.0, center=[0.3, -0.2, 0.1]), (48, 24))
        frames = compute_frames(ellipsoid, surf)

        assert np.ptp(frames.rho) > 0.1
        assert check_drho_identity(frames) < 1e-6

    def test_summary(self, sphere_frames):
        """Test the summary reports ranges and the curvature inequality."""
        summary = frames_summary(sphere_frames)

        assert summary['node_count'] == 32 * 24
        assert summary['lambda_min'] <= summary['lambda_max']
        assert summary['lemma_holds'] is True
        assert summary['lemma_margin_min'] >= -1e-10

    def test_node_access(self, sphere_frames):
        """Test single-node frame extraction."""
        point = sphere_frames.node(25)

        assert point.index == (1, 1)
        assert point.params[0] == pytest.approx(2.0 * np.pi / 32)
        assert_allclose(point.xi, point.position, atol=1e-14)
        assert point.H_m == pytest.approx(float(np.mean(point.lambdas)))

    def test_corrupted_hessian_is_rejected(self, ellipsoid, mocker):
        """Test a wrong body Hessian is caught by the shape operator cross-check."""
        original = ellipsoid._hessian
        mocker.patch.object(ellipsoid, '_hessian', side_effect=lambda v: original(v) + 0.1 * np.ones((3, 3)))

        with pytest.raises(FrameConsistencyError, match="disagrees with Hess"):
            compute_frames(ellipsoid, sample(make_round_sphere(1.0), (16, 8)))

    def test_wrong_second_partials_are_rejected(self, ellipsoid):
        """Test chart second derivatives off by 5% fail the cross-check instead of skewing lambda."""
        surf = sample(make_round_sphere(1.0), (32, 24))
        surf.second_partials = 1.05 * surf.second_partials

        with pytest.raises(FrameConsistencyError, match="chart second derivatives"):
            compute_frames(ellipsoid, surf)

    def test_non_tangential_eta_is_rejected(self, ellipsoid, mocker):
        """Test an inverse Gauss map with a normal drift fails the tangential solve."""
        original = ellipsoid.inverse_gauss
        mocker.patch.object(ellipsoid, 'inverse_gauss', side_effect=lambda nu: original(nu) + 0.01 * nu * nu[..., :1])

        with pytest.raises(FrameConsistencyError, match="normal component"):
            compute_frames(ellipsoid, sample(make_round_sphere(1.0), (32, 24)))


class TestFrameCovariance:
    """Test cases for the behavior of frames under homotheties and translations."""

    @pytest.fixture
    def graph(self):
        """Radial graph 1 + 0.1 z over the sphere."""
        return make_radial_graph(HarmonicSeries(3, 1.0, [0, 0, 0.1]))

    def test_scaling_covariance(self, ellipsoid, graph):
        """Test scaling by c divides lambda by c and multiplies rho by c."""
        base = compute_frames(ellipsoid, sample(graph, (48, 24)))
        scaled = compute_frames(ellipsoid, sample(scale_chart(graph, 1.5), (48, 24)))

        assert_allclose(scaled.lambdas, base.lambdas / 1.5, rtol=1e-9)
        assert_allclose(scaled.rho, 1.5 * base.rho, rtol=1e-9)

    def test_translation_invariance(self, ellipsoid, graph):
        """Test translating the surface leaves the curvatures unchanged."""
        base = compute_frames(ellipsoid, sample(graph, (48, 24)))
        moved = compute_frames(ellipsoid, sample(translate_chart(graph, [0.4, -0.3, 0.2]), (48, 24)))

        assert_allclose(moved.lambdas, base.lambdas, atol=1e-12)
        assert_allclose(moved.H_m, base.H_m, atol=1e-12)
        assert_allclose(moved.B_m_sq, base.B_m_sq, atol=1e-12)

    @pytest.mark.parametrize("scale", [0.5, 1.5])
    def test_perturbed_ball_minkowski_sphere(self, scale):
        """Test a Minkowski sphere of a perturbed ball is umbilic with curvature 1 / lambda."""
        body = ConvexBody.perturbed_ball(1.0, 0.05, [0, 0, 0, 0.5, 0, 0, 0, 1.0])
        frames = compute_frames(body, sample(make_minkowski_sphere(body, scale), (48, 24)))

        assert_allclose(frames.lambdas, 1.0 / scale, atol=1e-8)
        assert umbilicity_report(frames)['umbilic_fraction'] == 1.0


class TestDumpFramesCsv:
    """Test cases for the per-node CSV dump."""

    def test_dump_rows_and_header(self, sphere_frames, tmp_path):
        """Test one row per node with the documented header."""
        path = tmp_path / "out" / "frames.csv"

        dump_frames_csv(sphere_frames, path)

        with open(path, encoding='utf-8') as f:
            rows = list(csv.reader(f))
        assert rows[0][:3] == ['node', 'theta', 's']
        assert rows[0][-4:] == ['H_m', 'K_m', 'B_m_sq', 'rho']
        assert 'lambda_2' in rows[0]
        assert len(rows) == 1 + 32 * 24

    def test_dump_is_reproducible(self, sphere_frames, tmp_path):
        """Test two dumps are byte-identical."""
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"

        dump_frames_csv(sphere_frames, first)
        dump_frames_csv(sphere_frames, second)

        assert first.read_bytes() == second.read_bytes()
