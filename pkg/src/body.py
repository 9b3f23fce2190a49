"""Smooth convex gauge bodies described by their support function."""

import json
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Sequence, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from src.utils import finite_difference as fd
from src.utils.config import GeometryError, Tolerances
from src.utils.logger import get_logger


logger = get_logger()


class InvalidDirectionError(GeometryError):
    """Raised when a direction is not a unit vector within tolerance."""
    pass


class InvalidBodyError(GeometryError):
    """Raised when body parameters do not describe a body with the origin inside."""
    pass


class NotPositivelyCurvedError(GeometryError):
    """Raised when the support Hessian is not positive definite on the tangent plane."""
    pass


class BodyValidationError(GeometryError):
    """Raised by BodyValidationReport.raise_for_failure."""
    pass


Monomial = Tuple[float, Tuple[int, ...]]

# Homogeneous harmonic polynomials used as perturbation / radial-field modes.
# Coefficient lists in body and surface specs index into these tables.
HARMONIC_POLYNOMIALS: Dict[int, List[List[Monomial]]] = {
    2: [
        [(1.0, (1, 0))],
        [(1.0, (0, 1))],
        [(1.0, (2, 0)), (-1.0, (0, 2))],
        [(2.0, (1, 1))],
        [(1.0, (3, 0)), (-3.0, (1, 2))],
        [(3.0, (2, 1)), (-1.0, (0, 3))],
        [(1.0, (4, 0)), (-6.0, (2, 2)), (1.0, (0, 4))],
        [(4.0, (3, 1)), (-4.0, (1, 3))],
    ],
    3: [
        [(1.0, (1, 0, 0))],
        [(1.0, (0, 1, 0))],
        [(1.0, (0, 0, 1))],
        [(1.0, (1, 1, 0))],
        [(1.0, (0, 1, 1))],
        [(1.0, (1, 0, 1))],
        [(1.0, (2, 0, 0)), (-1.0, (0, 2, 0))],
        [(2.0, (0, 0, 2)), (-1.0, (2, 0, 0)), (-1.0, (0, 2, 0))],
        [(1.0, (3, 0, 0)), (-3.0, (1, 2, 0))],
        [(3.0, (2, 1, 0)), (-1.0, (0, 3, 0))],
        [(1.0, (2, 0, 1)), (-1.0, (0, 2, 1))],
        [(1.0, (1, 1, 1))],
        [(4.0, (1, 0, 2)), (-1.0, (3, 0, 0)), (-1.0, (1, 2, 0))],
        [(4.0, (0, 1, 2)), (-1.0, (2, 1, 0)), (-1.0, (0, 3, 0))],
        [(2.0, (0, 0, 3)), (-3.0, (2, 0, 1)), (-3.0, (0, 2, 1))],
    ],
}


def _monomial(points: np.ndarray, exponents: Sequence[int]) -> np.ndarray:
    value = np.ones(points.shape[:-1])
    for k, power in enumerate(exponents):
        if power:
            value = value * points[..., k] ** power
    return value


class HomogeneousExtension:
    """
    Value, gradient and Hessian of ``q(v) * |v|**power`` for a homogeneous polynomial q.

    With ``power = 1 - degree`` this is the 1-homogeneous extension of q
    restricted to the sphere (support perturbations); with
    ``power = -degree`` it is the 0-homogeneous one (radial fields).
    """

    def __init__(self, terms: List[Monomial], power: float):
        self.terms = terms
        self.power = power

    def _poly(self, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = v.shape[-1]
        value = np.zeros(v.shape[:-1])
        grad = np.zeros(v.shape)
        hess = np.zeros(v.shape + (n,))
        for coef, exps in self.terms:
            value += coef * _monomial(v, exps)
            for i in range(n):
                if exps[i] == 0:
                    continue
                di = list(exps)
                di[i] -= 1
                grad[..., i] += coef * exps[i] * _monomial(v, di)
                for j in range(n):
                    if di[j] == 0:
                        continue
                    dij = list(di)
                    dij[j] -= 1
                    hess[..., i, j] += coef * exps[i] * di[j] * _monomial(v, dij)
        return value, grad, hess

    def evaluate(self, v: np.ndarray, order: int = 2):
        """Return (value, gradient, Hessian) truncated to ``order`` derivatives."""
        v = np.asarray(v, dtype=float)
        q, dq, hq = self._poly(v)
        p = self.power
        r2 = np.sum(v * v, axis=-1)
        r = np.sqrt(r2)
        phi = r ** p
        value = q * phi
        if order == 0:
            return value
        dphi = (p * r ** (p - 2))[..., None] * v
        grad = dq * phi[..., None] + q[..., None] * dphi
        if order == 1:
            return value, grad
        eye = np.eye(v.shape[-1])
        hphi = (p * r ** (p - 2))[..., None, None] * (
            eye + ((p - 2) / r2)[..., None, None] * v[..., :, None] * v[..., None, :]
        )
        hess = (
            hq * phi[..., None, None]
            + dq[..., :, None] * dphi[..., None, :]
            + dphi[..., :, None] * dq[..., None, :]
            + q[..., None, None] * hphi
        )
        return value, grad, hess


def harmonic_series(dimension: int, coeffs: Sequence[float], power_shift: int) -> List[Tuple[float, HomogeneousExtension]]:
    """
    Pair each nonzero coefficient with the extension of its harmonic polynomial.

    Args:
        dimension: Ambient dimension
        coeffs: Coefficients indexing HARMONIC_POLYNOMIALS[dimension]
        power_shift: 1 for 1-homogeneous extensions, 0 for 0-homogeneous ones

    Raises:
        InvalidBodyError: If more coefficients than tabulated polynomials are given
    """
    table = HARMONIC_POLYNOMIALS[dimension]
    if len(coeffs) > len(table):
        raise InvalidBodyError(
            f"At most {len(table)} harmonic coefficients are supported in dimension {dimension}"
        )
    series = []
    for coef, terms in zip(coeffs, table):
        if coef == 0.0:
            continue
        degree = sum(terms[0][1])
        series.append((float(coef), HomogeneousExtension(terms, power_shift - degree)))
    return series


def tangent_basis(nu: np.ndarray) -> np.ndarray:
    """
    Deterministic orthonormal basis of the plane orthogonal to each direction.

    Args:
        nu: Unit directions of shape (..., n)

    Returns:
        Array of shape (..., n, n-1) whose columns span nu-perp
    """
    nu = np.asarray(nu, dtype=float)
    if nu.shape[-1] == 2:
        return np.stack([-nu[..., 1], nu[..., 0]], axis=-1)[..., None]

    helper = np.zeros(nu.shape)
    use_z = np.abs(nu[..., 2]) < 0.9
    helper[..., 2] = np.where(use_z, 1.0, 0.0)
    helper[..., 0] = np.where(use_z, 0.0, 1.0)
    t1 = helper - np.sum(helper * nu, axis=-1, keepdims=True) * nu
    t1 /= np.linalg.norm(t1, axis=-1, keepdims=True)
    t2 = np.cross(nu, t1)
    return np.stack([t1, t2], axis=-1)


def direction_grid(dimension: int, resolution: int) -> np.ndarray:
    """
    Unit directions on the validation grid.

    n=2 uses 2*resolution equispaced angles; n=3 uses 2*resolution azimuths
    times ``resolution`` Gauss-Legendre polar nodes.

    Returns:
        Array of shape (M, n)
    """
    theta = 2.0 * np.pi * np.arange(2 * resolution) / (2 * resolution)
    if dimension == 2:
        return np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    s, _ = leggauss(resolution)
    tt, ss = np.meshgrid(theta, s, indexing='ij')
    c = np.sqrt(1.0 - ss ** 2)
    return np.stack([c * np.cos(tt), c * np.sin(tt), ss], axis=-1).reshape(-1, 3)


class ConvexBody:
    """
    Smooth convex body B with the origin in its interior.

    All evaluations are pure functions of the (immutable) body parameters and
    accept arrays of directions with shape (..., n). The only mutable state is
    the lock-guarded volume cache behind ``cached_volume``.
    """

    FAMILIES = ("ball", "ellipsoid", "perturbed_ball", "custom")

    def __init__(
        self,
        dimension: int,
        family: str,
        params: Dict[str, Any],
        support: Callable[[np.ndarray], np.ndarray],
        support_gradient: Callable[[np.ndarray], np.ndarray],
        support_hessian: Callable[[np.ndarray], np.ndarray],
        direction_tolerance: float = Tolerances.direction_unit,
    ):
        """
        Initialize a body from its 1-homogeneous support function and derivatives.

        Prefer the family constructors (ball, ellipsoid, perturbed_ball,
        from_support) over calling this directly.
        """
        if dimension not in (2, 3):
            raise InvalidBodyError(f"Dimension must be 2 or 3, got {dimension}")
        if family not in self.FAMILIES:
            raise InvalidBodyError(f"Unknown body family: {family}")
        self.dimension = dimension
        self.family = family
        self.params = params
        self._support = support
        self._gradient = support_gradient
        self._hessian = support_hessian
        self.direction_tolerance = direction_tolerance
        self._volume_cache: Dict[Tuple[int, ...], float] = {}
        self._volume_lock = threading.Lock()

        h = self._support(direction_grid(dimension, 8))
        if not np.all(np.isfinite(h)) or np.min(h) <= 0.0:
            raise InvalidBodyError(
                f"Support function of {self.describe()} is not positive on all directions "
                f"(min {np.min(h):.3e}); the origin must lie in the interior"
            )

    def __repr__(self) -> str:
        return f"ConvexBody({self.describe()})"

    def cached_volume(self, resolution: Tuple[int, ...], compute: Callable[[], float]) -> float:
        """Volume of B at ``resolution``, computed at most once per resolution across threads."""
        with self._volume_lock:
            if resolution not in self._volume_cache:
                self._volume_cache[resolution] = compute()
            return self._volume_cache[resolution]

    def describe(self) -> str:
        """Short human-readable description of the body."""
        details = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.family}[n={self.dimension}{', ' + details if details else ''}]"

    @classmethod
    def ball(cls, radius: float = 1.0, dimension: int = 3) -> "ConvexBody":
        """Euclidean ball of the given radius centered at the origin."""
        if radius <= 0:
            raise InvalidBodyError(f"Ball radius must be positive, got {radius}")

        def support(v):
            return radius * np.linalg.norm(v, axis=-1)

        def gradient(v):
            return radius * v / np.linalg.norm(v, axis=-1, keepdims=True)

        def hessian(v):
            r = np.linalg.norm(v, axis=-1)
            unit = v / r[..., None]
            eye = np.eye(v.shape[-1])
            return (radius / r)[..., None, None] * (eye - unit[..., :, None] * unit[..., None, :])

        return cls(dimension, "ball", {"radius": radius}, support, gradient, hessian)

    @classmethod
    def ellipsoid(cls, Q: Sequence[Sequence[float]]) -> "ConvexBody":
        """
        Ellipsoid {x : x^T Q^-1 x <= 1} with support sqrt(v^T Q v).

        Raises:
            InvalidBodyError: If Q is not symmetric positive definite
        """
        Q = np.asarray(Q, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] not in (2, 3):
            raise InvalidBodyError(f"Ellipsoid matrix must be 2x2 or 3x3, got shape {Q.shape}")
        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12 * np.max(np.abs(Q))):
            raise InvalidBodyError("Ellipsoid matrix must be symmetric")
        try:
            np.linalg.cholesky(Q)
        except np.linalg.LinAlgError:
            raise InvalidBodyError("Ellipsoid matrix must be positive definite")

        def support(v):
            return np.sqrt(np.einsum('...i,ij,...j->...', v, Q, v))

        def gradient(v):
            return (v @ Q) / support(v)[..., None]

        def hessian(v):
            h = support(v)
            qv = v @ Q
            return (Q - qv[..., :, None] * qv[..., None, :] / (h * h)[..., None, None]) / h[..., None, None]

        return cls(Q.shape[0], "ellipsoid", {"Q": Q.tolist()}, support, gradient, hessian)

    @classmethod
    def perturbed_ball(
        cls,
        radius: float,
        epsilon: float,
        coeffs: Sequence[float],
        dimension: int = 3,
    ) -> "ConvexBody":
        """
        Ball with support r + eps * P, P a combination of harmonic polynomials.

        Args:
            radius: Base radius r
            epsilon: Perturbation amplitude
            coeffs: Coefficients of HARMONIC_POLYNOMIALS[dimension]
            dimension: Ambient dimension

        Raises:
            InvalidBodyError: If the support is not positive (origin not interior)
        """
        if radius <= 0:
            raise InvalidBodyError(f"Base radius must be positive, got {radius}")
        series = harmonic_series(dimension, coeffs, power_shift=1)
        base = cls.ball(radius, dimension)

        def support(v):
            value = base._support(v)
            for coef, ext in series:
                value = value + epsilon * coef * ext.evaluate(v, order=0)
            return value

        def gradient(v):
            grad = base._gradient(v)
            for coef, ext in series:
                grad = grad + epsilon * coef * ext.evaluate(v, order=1)[1]
            return grad

        def hessian(v):
            hess = base._hessian(v)
            for coef, ext in series:
                hess = hess + epsilon * coef * ext.evaluate(v, order=2)[2]
            return hess

        params = {"radius": radius, "epsilon": epsilon, "coeffs": [float(c) for c in coeffs]}
        return cls(dimension, "perturbed_ball", params, support, gradient, hessian)

    @classmethod
    def from_support(
        cls,
        dimension: int,
        func: Callable[[np.ndarray], np.ndarray],
        gradient_step: float = 1e-5,
        hessian_step: float = 1e-3,
        levels: int = 2,
    ) -> "ConvexBody":
        """
        Body from a user-supplied vectorized 1-homogeneous support function.

        Derivatives are Richardson-extrapolated central differences.
        """
        def gradient(v):
            return fd.gradient(func, v, step=gradient_step, levels=levels)

        def hessian(v):
            return fd.hessian(func, v, step=hessian_step, levels=levels)

        return cls(dimension, "custom", {}, func, gradient, hessian)

    def normalize_directions(self, nu: np.ndarray) -> np.ndarray:
        """
        Re-normalize directions within tolerance of unit length.

        Raises:
            InvalidDirectionError: If any direction is farther than the tolerance from unit length
        """
        nu = np.asarray(nu, dtype=float)
        if nu.shape[-1] != self.dimension:
            raise InvalidDirectionError(
                f"Directions must have {self.dimension} components, got shape {nu.shape}"
            )
        norms = np.linalg.norm(nu, axis=-1)
        deviation = np.abs(norms - 1.0)
        if np.any(deviation > self.direction_tolerance):
            worst = np.unravel_index(np.argmax(deviation), deviation.shape)
            raise InvalidDirectionError(
                f"Direction {nu[worst].tolist()} has norm {norms[worst]:.12g}; expected a unit vector"
            )
        return nu / norms[..., None]

    def support_extension(self, v: np.ndarray) -> np.ndarray:
        """1-homogeneous extension h_B(v) for arbitrary nonzero vectors."""
        return self._support(np.asarray(v, dtype=float))

    def support_value(self, nu: np.ndarray) -> np.ndarray:
        """Support function h_B at unit directions."""
        return self._support(self.normalize_directions(nu))

    def inverse_gauss(self, nu: np.ndarray) -> np.ndarray:
        """Inverse Gauss map u(nu), the gradient of the 1-homogeneous support."""
        return self._gradient(self.normalize_directions(nu))

    def support_hessian(self, nu: np.ndarray) -> np.ndarray:
        """Ambient Hessian of the 1-homogeneous support; annihilates nu."""
        return self._hessian(self.normalize_directions(nu))

    def inverse_gauss_jacobian(self, nu: np.ndarray) -> np.ndarray:
        """
        Differential du(nu) as an ambient symmetric matrix acting on nu-perp.

        Raises:
            NotPositivelyCurvedError: If the restriction to nu-perp is not positive definite
        """
        nu = self.normalize_directions(nu)
        hess = self._hessian(nu)
        basis = tangent_basis(nu)
        restricted = np.swapaxes(basis, -1, -2) @ hess @ basis
        eigenvalues = np.linalg.eigvalsh(0.5 * (restricted + np.swapaxes(restricted, -1, -2)))
        lowest = eigenvalues[..., 0]
        if np.any(lowest <= 0.0):
            worst = np.unravel_index(np.argmin(lowest), lowest.shape)
            raise NotPositivelyCurvedError(
                f"Support Hessian of {self.describe()} is not positive definite at "
                f"nu={nu[worst].tolist()} (min eigenvalue {lowest[worst]:.3e})"
            )
        return hess

    def support_third(
        self,
        nu: np.ndarray,
        a: np.ndarray,
        b: np.ndarray,
        step: float = 1e-3,
        levels: int = 2,
    ) -> np.ndarray:
        """
        Third derivative of the support extension contracted as D^3 h(nu)[a, b, .].

        Computed as the Richardson-extrapolated central difference of the
        analytic Hessian along the unit direction of ``a``.
        """
        nu = np.asarray(nu, dtype=float)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        a_norm = np.linalg.norm(a, axis=-1, keepdims=True)
        a_unit = np.divide(a, a_norm, out=np.zeros_like(a), where=a_norm > 0)

        def hess_times_b(h):
            return (
                np.einsum('...ij,...j->...i', self._hessian(nu + h * a_unit), b)
                - np.einsum('...ij,...j->...i', self._hessian(nu - h * a_unit), b)
            ) / (2.0 * h)

        value, _ = fd.richardson_table(hess_times_b, fd.halving_steps(step, levels), leading_order=2)
        return value * a_norm


def body_from_spec(spec: Dict[str, Any]) -> ConvexBody:
    """Build a body from a parsed body spec (see utils.config.parse_body_spec)."""
    family = spec['family']
    if family == 'ball':
        return ConvexBody.ball(spec['radius'], spec['dimension'])
    if family == 'ellipsoid':
        return ConvexBody.ellipsoid(spec['Q'])
    return ConvexBody.perturbed_ball(spec['radius'], spec['epsilon'], spec['coeffs'], spec['dimension'])


@dataclass
class BodyValidationReport:
    """Result of checking the ConvexBody invariants on a direction grid."""

    body: str
    grid_resolution: int
    node_count: int
    min_support: float
    min_hessian_eigenvalue: float
    max_euler_residual: float
    max_gauge_residual: float
    max_symmetry_residual: float
    worst_node: int
    worst_direction: List[float]
    failures: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def add_failure(self, invariant: str, node: int, direction: np.ndarray, value: float):
        """Record a violated invariant at a node."""
        self.failures.append({
            'invariant': invariant,
            'node': int(node),
            'direction': [float(x) for x in direction],
            'value': float(value),
        })

    def raise_for_failure(self):
        """Raise BodyValidationError naming the first failing node, if any."""
        if self.failures:
            first = self.failures[0]
            raise BodyValidationError(
                f"{self.body}: {first['invariant']} violated at node {first['node']} "
                f"(direction {first['direction']}, value {first['value']:.3e})"
            )

    def to_dict(self) -> Dict[str, Any]:
        """Convert report to dictionary."""
        return {
            'body': self.body,
            'grid_resolution': self.grid_resolution,
            'node_count': self.node_count,
            'passed': self.passed,
            'min_support': self.min_support,
            'min_hessian_eigenvalue': self.min_hessian_eigenvalue,
            'max_euler_residual': self.max_euler_residual,
            'max_gauge_residual': self.max_gauge_residual,
            'max_symmetry_residual': self.max_symmetry_residual,
            'worst_node': self.worst_node,
            'worst_direction': self.worst_direction,
            'failures': self.failures,
        }

    def save_to_file(self, filepath: str):
        """Save report to JSON file."""
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2)


def validate_body(
    body: ConvexBody,
    grid_resolution: int = 32,
    euler_tolerance: float = 1e-10,
    gauge_tolerance: float = 1e-8,
    symmetry_tolerance: float = 1e-9,
) -> BodyValidationReport:
    """
    Check the body invariants on a grid of unit directions.

    Checks: positive support, Euler relation <u(nu), nu> = h(nu), symmetric
    Hessian, positive definite tangential Hessian, and gauge consistency
    (u(nu) lies on the boundary: max over grid directions mu of
    <u(nu), mu> / h(mu) equals 1).

    Args:
        body: Body to validate
        grid_resolution: Polar resolution of the direction grid (>= 8)

    Returns:
        BodyValidationReport; failures list the worst node per invariant
    """
    if grid_resolution < 8:
        raise ValueError(f"grid_resolution must be at least 8, got {grid_resolution}")

    nu = direction_grid(body.dimension, grid_resolution)
    h = body._support(nu)
    u = body._gradient(nu)
    hess = body._hessian(nu)

    euler = np.abs(np.sum(u * nu, axis=-1) - h) / h
    symmetry = (
        np.linalg.norm(hess - np.swapaxes(hess, -1, -2), axis=(-1, -2))
        / np.maximum(np.linalg.norm(hess, axis=(-1, -2)), 1e-300)
    )
    basis = tangent_basis(nu)
    restricted = np.swapaxes(basis, -1, -2) @ hess @ basis
    eigenvalues = np.linalg.eigvalsh(0.5 * (restricted + np.swapaxes(restricted, -1, -2)))[..., 0]

    gauge = np.empty(len(nu))
    chunk = 512
    for start in range(0, len(nu), chunk):
        ratios = (u[start:start + chunk] @ nu.T) / h[None, :]
        gauge[start:start + chunk] = np.abs(np.max(ratios, axis=1) - 1.0)

    worst = int(np.argmin(eigenvalues))
    report = BodyValidationReport(
        body=body.describe(),
        grid_resolution=grid_resolution,
        node_count=len(nu),
        min_support=float(np.min(h)),
        min_hessian_eigenvalue=float(eigenvalues[worst]),
        max_euler_residual=float(np.max(euler)),
        max_gauge_residual=float(np.max(gauge)),
        max_symmetry_residual=float(np.max(symmetry)),
        worst_node=worst,
        worst_direction=[float(x) for x in nu[worst]],
    )

    if eigenvalues[worst] <= 0.0:
        report.add_failure('positive_curvature', worst, nu[worst], eigenvalues[worst])
    checks = [
        ('euler_relation', euler, euler_tolerance),
        ('gauge_consistency', gauge, gauge_tolerance),
        ('hessian_symmetry', symmetry, symmetry_tolerance),
    ]
    for name, values, tolerance in checks:
        node = int(np.argmax(values))
        if values[node] > tolerance:
            report.add_failure(name, node, nu[node], values[node])

    if report.passed:
        logger.info(
            f"Body {report.body} valid on {report.node_count} directions "
            f"(min tangential Hessian eigenvalue {report.min_hessian_eigenvalue:.6g})"
        )
    else:
        logger.warning(f"Body {report.body} failed validation: {report.failures}")
    return report
