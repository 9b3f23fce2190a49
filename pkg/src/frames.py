"""Euclidean and Minkowski frames at every sample node of a surface."""

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from src.body import ConvexBody
from src.surface import SampledSurface
from src.utils.config import GeometryError, Tolerances
from src.utils.logger import get_logger


logger = get_logger()


class FrameConsistencyError(GeometryError):
    """Raised when d(eta) has a normal component above tolerance."""
    pass


@dataclass(frozen=True)
class PointFrame:
    """Frame data at a single node."""

    index: Tuple[int, ...]
    params: Tuple[float, ...]
    position: np.ndarray
    tangent_basis: np.ndarray
    metric: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    support_at_normal: float
    d_eta: np.ndarray
    dupin_gram: np.ndarray
    lambdas: np.ndarray
    H_m: float
    K_m: float
    B_m_sq: float
    rho: float


class FrameSet:
    """
    Frames of a sampled surface as grid-shaped arrays.

    Matrices in the tangent plane are expressed in the orthonormal basis
    ``tangent_basis`` obtained by QR of the chart partials, J = E R with
    positive diagonal R.
    """

    def __init__(self, body: ConvexBody, surf: SampledSurface, **arrays: np.ndarray):
        self.body = body
        self.surf = surf
        self.dimension = surf.dimension
        self.position = arrays['position']
        self.tangent_basis = arrays['tangent_basis']
        self.chart_to_basis = arrays['chart_to_basis']
        self.metric = arrays['metric']
        self.xi = arrays['xi']
        self.eta = arrays['eta']
        self.support_at_normal = arrays['support_at_normal']
        self.du = arrays['du']
        self.shape_operator = arrays['shape_operator']
        self.d_eta = arrays['d_eta']
        self.eta_partials = arrays['eta_partials']
        self.dupin_gram = arrays['dupin_gram']
        self.dupin_eigenvectors = arrays['dupin_eigenvectors']
        self.lambdas = arrays['lambdas']
        self.tangential_residual = arrays['tangential_residual']
        self.crosscheck_residual = arrays['crosscheck_residual']
        self.self_adjoint_residual = arrays['self_adjoint_residual']
        self.reconstruction_residual = arrays['reconstruction_residual']

        self.H_m = np.mean(self.lambdas, axis=-1)
        self.K_m = np.prod(self.lambdas, axis=-1)
        self.B_m_sq = np.sum(self.lambdas ** 2, axis=-1)
        self.rho = np.sum(self.position * self.xi, axis=-1) / self.support_at_normal

    @property
    def grid_shape(self) -> Tuple[int, ...]:
        return self.surf.grid_shape

    @property
    def node_count(self) -> int:
        return self.surf.node_count

    @property
    def omega_density(self) -> np.ndarray:
        """<eta, xi> so that d(omega) = omega_density * dS."""
        return self.support_at_normal

    def integrate_omega(self, values: np.ndarray) -> float:
        """Integral against the Minkowski area measure d(omega) = <eta, xi> dS."""
        return self.surf.integrate(values * self.support_at_normal)

    def minkowski_area(self) -> float:
        return self.integrate_omega(np.ones(self.grid_shape))

    def node(self, i: int) -> PointFrame:
        """Frame at flat node index ``i``."""
        index = np.unravel_index(i, self.grid_shape)
        params = tuple(float(p[index]) for p in self.surf.params)
        return PointFrame(
            index=tuple(int(k) for k in index),
            params=params,
            position=self.position[index],
            tangent_basis=self.tangent_basis[index],
            metric=self.metric[index],
            xi=self.xi[index],
            eta=self.eta[index],
            support_at_normal=float(self.support_at_normal[index]),
            d_eta=self.d_eta[index],
            dupin_gram=self.dupin_gram[index],
            lambdas=self.lambdas[index],
            H_m=float(self.H_m[index]),
            K_m=float(self.K_m[index]),
            B_m_sq=float(self.B_m_sq[index]),
            rho=float(self.rho[index]),
        )


def _transpose(matrix: np.ndarray) -> np.ndarray:
    return np.swapaxes(matrix, -1, -2)


def _orthonormal_chart_basis(first_partials: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    basis, upper = np.linalg.qr(first_partials)
    signs = np.sign(np.diagonal(upper, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    return basis * signs[..., None, :], upper * signs[..., :, None]


def _fix_eigenvector_signs(vectors: np.ndarray) -> np.ndarray:
    """Flip each column so its first component above 1e-12 is positive."""
    significant = np.abs(vectors) > 1e-12
    first = np.argmax(significant, axis=-2)
    leading = np.take_along_axis(vectors, first[..., None, :], axis=-2)
    signs = np.where(leading < 0.0, -1.0, 1.0)
    return vectors * signs


def _tangential_solve(basis: np.ndarray, vectors: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Least-squares coefficients of ambient vectors in the tangent basis.

    The basis columns are orthonormal, so E^T is the pseudo-inverse of E.

    Returns:
        (coefficients, normal remainder)
    """
    coefficients = _transpose(basis) @ vectors
    return coefficients, vectors - basis @ coefficients


def _raise_at_worst(residual: np.ndarray, tolerance: float, surf: SampledSurface, template: str) -> None:
    worst = int(np.argmax(residual))
    value = float(residual.flat[worst])
    if value > tolerance:
        index = tuple(int(i) for i in np.unravel_index(worst, surf.grid_shape))
        raise FrameConsistencyError(template.format(value=value, index=index))


def compute_frames(
    body: ConvexBody,
    surf: SampledSurface,
    tolerances: Optional[Tolerances] = None,
) -> FrameSet:
    """
    Compute the Euclidean and Minkowski frames at every node.

    d(eta) comes from spectral derivatives of eta along the chart, solved for
    tangential coefficients: d_j eta = E A R e_j. The normal remainder of
    that solve is the tangential residual. The shape operator in the
    orthonormal basis is S = -R^-T L R^-1 with L_ij = <x_ij, xi>, and
    D S with D = E^T Hess(h)(xi) E cross-checks d(eta). The Dupin Gram
    matrix is b = D^-1 and the principal curvatures solve
    (b d(eta)) v = lambda b v.

    Args:
        body: Convex body defining the Minkowski geometry
        surf: Sampled surface
        tolerances: Tolerances (frame_residual and frame_crosscheck are used)

    Returns:
        FrameSet

    Raises:
        NotPositivelyCurvedError: If the body Hessian degenerates at a surface normal
        FrameConsistencyError: If d(eta) is not tangential within tolerance, or
            disagrees with the shape operator route
    """
    tolerances = tolerances or Tolerances()
    xi = surf.xi
    first = surf.first_partials

    basis, upper = _orthonormal_chart_basis(first)
    upper_inv = np.linalg.inv(upper)
    metric = _transpose(first) @ first
    eta = body.inverse_gauss(xi)
    hess = body.inverse_gauss_jacobian(xi)
    support = np.sum(eta * xi, axis=-1)

    eta_partials = np.moveaxis(surf.partials(eta), 0, -1)
    coefficients, normal_remainder = _tangential_solve(basis, eta_partials)
    d_eta = coefficients @ upper_inv
    d_eta_norm = np.maximum(np.linalg.norm(d_eta, axis=(-2, -1)), 1e-300)
    tangential_residual = np.linalg.norm(normal_remainder @ upper_inv, axis=(-2, -1)) / d_eta_norm
    _raise_at_worst(
        tangential_residual, tolerances.frame_residual, surf,
        "d(eta) has a normal component {value:.3e} (relative) at node {index}; check the chart or body derivatives",
    )

    second_fundamental = np.einsum('...kij,...k->...ij', surf.second_partials, xi)
    shape_operator = -_transpose(upper_inv) @ second_fundamental @ upper_inv
    tangential_hessian = _transpose(basis) @ hess @ basis
    crosscheck_residual = np.linalg.norm(d_eta - tangential_hessian @ shape_operator, axis=(-2, -1)) / d_eta_norm
    _raise_at_worst(
        crosscheck_residual, tolerances.frame_crosscheck, surf,
        "d(eta) disagrees with Hess(h) S by {value:.3e} (relative) at node {index}; "
        "check the chart second derivatives or the body Hessian",
    )

    du = 0.5 * (tangential_hessian + _transpose(tangential_hessian))
    dupin_gram = np.linalg.inv(du)
    dupin_gram = 0.5 * (dupin_gram + _transpose(dupin_gram))

    # (b A) v = lambda b v reduced with b = C C^T to (C^-1 (b A) C^-T) y = lambda y
    pencil = dupin_gram @ d_eta
    chol = np.linalg.cholesky(dupin_gram)
    chol_inv = np.linalg.inv(chol)
    reduced = chol_inv @ (0.5 * (pencil + _transpose(pencil))) @ _transpose(chol_inv)
    lambdas, reduced_vectors = np.linalg.eigh(0.5 * (reduced + _transpose(reduced)))
    eigenvectors = _fix_eigenvector_signs(_transpose(chol_inv) @ reduced_vectors)

    pencil_norm = np.maximum(np.linalg.norm(pencil, axis=(-2, -1)), 1e-300)
    self_adjoint_residual = np.linalg.norm(pencil - _transpose(pencil), axis=(-2, -1)) / pencil_norm

    diagonal = lambdas[..., None, :] * np.eye(lambdas.shape[-1])
    rebuilt = eigenvectors @ diagonal @ np.linalg.inv(eigenvectors)
    reconstruction_residual = np.linalg.norm(d_eta - rebuilt, axis=(-2, -1)) / d_eta_norm

    frames = FrameSet(
        body,
        surf,
        position=surf.positions,
        tangent_basis=basis,
        chart_to_basis=upper,
        metric=metric,
        xi=xi,
        eta=eta,
        support_at_normal=support,
        du=du,
        shape_operator=shape_operator,
        d_eta=d_eta,
        eta_partials=eta_partials,
        dupin_gram=dupin_gram,
        dupin_eigenvectors=eigenvectors,
        lambdas=lambdas,
        tangential_residual=tangential_residual,
        crosscheck_residual=crosscheck_residual,
        self_adjoint_residual=self_adjoint_residual,
        reconstruction_residual=reconstruction_residual,
    )
    logger.debug(
        f"Frames on {surf.chart.describe()} with {body.describe()}: "
        f"tangential residual {float(np.max(tangential_residual)):.3e}, "
        f"shape operator cross-check {float(np.max(crosscheck_residual)):.3e}, "
        f"self-adjointness {float(np.max(self_adjoint_residual)):.3e}, "
        f"reconstruction {float(np.max(reconstruction_residual)):.3e}"
    )
    return frames


def check_drho_identity(frames: FrameSet, surf: Optional[SampledSurface] = None) -> float:
    """
    Compare e_i(rho) with <eta, xi>^-1 <x - rho*eta, d(xi) e_i> at every node.

    The left side differentiates rho spectrally along the chart; the right
    side uses frame data only.

    Returns:
        max |left - right| / (max |grad rho| + 1)
    """
    surf = surf or frames.surf
    coordinate = np.moveaxis(surf.partials(frames.rho), 0, -1)
    upper_inv_t = _transpose(np.linalg.inv(frames.chart_to_basis))
    left = np.einsum('...ij,...j->...i', upper_inv_t, coordinate)

    offset = frames.position - frames.rho[..., None] * frames.eta
    tangential = np.einsum('...ki,...k->...i', frames.tangent_basis, offset)
    right = np.einsum('...ji,...j->...i', frames.shape_operator, tangential) / frames.support_at_normal[..., None]

    residual = float(np.max(np.abs(left - right)))
    scale = float(np.max(np.linalg.norm(left, axis=-1))) + 1.0
    logger.debug(f"e_i(rho) identity residual {residual:.3e} (scale {scale:.3e})")
    return residual / scale


def umbilicity_report(frames: FrameSet, tolerance: float = Tolerances.umbilic) -> Dict[str, Any]:
    """
    Per-node spread of the principal curvatures and umbilic classification.

    A node is umbilic when max(lambda) - min(lambda) <= tolerance * (|H_m| + 1).
    """
    spread = frames.lambdas[..., -1] - frames.lambdas[..., 0]
    umbilic = spread <= tolerance * (np.abs(frames.H_m) + 1.0)
    return {
        'max_spread': float(np.max(spread)),
        'umbilic_count': int(np.count_nonzero(umbilic)),
        'umbilic_fraction': float(np.count_nonzero(umbilic)) / frames.node_count,
        'node_count': frames.node_count,
        'tolerance': tolerance,
    }


def frames_summary(frames: FrameSet, tolerances: Optional[Tolerances] = None) -> Dict[str, Any]:
    """Ranges of the curvature quantities plus frame health metrics."""
    tolerances = tolerances or Tolerances()
    n = frames.dimension
    lemma_margin = frames.B_m_sq - (n - 1) * frames.H_m ** 2
    umbilic = umbilicity_report(frames, tolerances.umbilic)
    return {
        'node_count': frames.node_count,
        'lambda_min': float(np.min(frames.lambdas)),
        'lambda_max': float(np.max(frames.lambdas)),
        'H_m_min': float(np.min(frames.H_m)),
        'H_m_max': float(np.max(frames.H_m)),
        'H_m_spread': float(np.max(frames.H_m) - np.min(frames.H_m)),
        'K_m_min': float(np.min(frames.K_m)),
        'K_m_max': float(np.max(frames.K_m)),
        'rho_min': float(np.min(frames.rho)),
        'rho_max': float(np.max(frames.rho)),
        'max_lambda_spread': umbilic['max_spread'],
        'umbilic_fraction': umbilic['umbilic_fraction'],
        'lemma_margin_min': float(np.min(lemma_margin)),
        'lemma_holds': bool(np.min(lemma_margin) >= -tolerances.lemma_inequality),
        'max_tangential_residual': float(np.max(frames.tangential_residual)),
        'max_crosscheck_residual': float(np.max(frames.crosscheck_residual)),
        'max_self_adjoint_residual': float(np.max(frames.self_adjoint_residual)),
        'max_reconstruction_residual': float(np.max(frames.reconstruction_residual)),
    }


def dump_frames_csv(frames: FrameSet, path: Union[str, Path]) -> None:
    """
    Write one row per node: index, parameters, x, xi, eta, lambdas, H_m, K_m, B_m^2, rho.

    Floats are written with 17 significant digits so dumps are reproducible.
    """
    n = frames.dimension
    m = n - 1
    axes = 'xyz'[:n]
    param_names = ['theta'] if frames.surf.topology == 'circle' else (
        ['theta', 's'] if frames.surf.topology == 'sphere' else ['u', 'v']
    )
    header = (
        ['node'] + param_names
        + [f'x_{a}' for a in axes] + [f'xi_{a}' for a in axes] + [f'eta_{a}' for a in axes]
        + [f'lambda_{i + 1}' for i in range(m)] + ['H_m', 'K_m', 'B_m_sq', 'rho']
    )

    def flat(array, width):
        return np.reshape(array, (frames.node_count, width))

    columns = np.hstack([
        np.stack([p.ravel() for p in frames.surf.params], axis=-1),
        flat(frames.position, n),
        flat(frames.xi, n),
        flat(frames.eta, n),
        flat(frames.lambdas, m),
        frames.H_m.reshape(-1, 1),
        frames.K_m.reshape(-1, 1),
        frames.B_m_sq.reshape(-1, 1),
        frames.rho.reshape(-1, 1),
    ])

    output = Path(path)
    output.parent.mkdir(parents=True, exist_ok=True)
    with open(output, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for i, row in enumerate(columns):
            writer.writerow([i] + [f"{value:.17g}" for value in row])
    logger.info(f"Frames written to {output}")
