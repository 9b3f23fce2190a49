"""Closed parametric hypersurfaces, tensor-grid sampling and spectral calculus on the grid."""

from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import fft

from src.body import ConvexBody, direction_grid, harmonic_series
from src.utils import finite_difference as fd
from src.utils.config import MIN_RESOLUTION, GeometryError
from src.utils.logger import get_logger


logger = get_logger()

DEFAULT_RESOLUTION = {2: (128,), 3: (64, 32)}


class InvalidParameterError(GeometryError):
    """Raised when a chart is requested with invalid parameters."""
    pass


class DegenerateChartError(GeometryError):
    """Raised when a chart fails to be an immersion at a sample node."""
    pass


# ---------------------------------------------------------------------------
# Unit-direction parameterizations and their derivatives
# ---------------------------------------------------------------------------

def circle_directions(theta: np.ndarray):
    """nu(theta) = (cos, sin) with first and second derivatives."""
    nu = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    d1 = np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
    return nu, [d1], [[-nu]]


def sphere_directions(theta: np.ndarray, s: np.ndarray):
    """
    nu(theta, s) with s = cos(polar angle), plus first and second partials.

    Partials in s are singular at the poles; sample nodes never sit there.
    """
    c = np.sqrt(1.0 - s ** 2)
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    zero = np.zeros_like(theta + s)
    nu = np.stack([c * cos_t, c * sin_t, s + zero], axis=-1)
    d_theta = np.stack([-c * sin_t, c * cos_t, zero], axis=-1)
    d_s = np.stack([-s / c * cos_t, -s / c * sin_t, np.ones_like(zero)], axis=-1)
    d_tt = np.stack([-c * cos_t, -c * sin_t, zero], axis=-1)
    d_ts = np.stack([s / c * sin_t, -s / c * cos_t, zero], axis=-1)
    d_ss = np.stack([-cos_t / c ** 3, -sin_t / c ** 3, zero], axis=-1)
    return nu, [d_theta, d_s], [[d_tt, d_ts], [d_ts, d_ss]]


def _projection_derivatives(nu: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Second derivative of v -> v/|v| at unit nu, contracted with a and b."""
    na = np.sum(nu * a, axis=-1, keepdims=True)
    nb = np.sum(nu * b, axis=-1, keepdims=True)
    ab = np.sum(a * b, axis=-1, keepdims=True)
    return -na * b - nb * a - ab * nu + 3.0 * na * nb * nu


def _apply(matrix: np.ndarray, vector: np.ndarray) -> np.ndarray:
    return np.einsum('...ij,...j->...i', matrix, vector)


# ---------------------------------------------------------------------------
# Direction maps: F from unit directions to the surface
# ---------------------------------------------------------------------------

class RoundSphereMap:
    """F(nu) = center + radius * nu."""

    def __init__(self, radius: float, center: np.ndarray):
        self.radius = radius
        self.center = center

    def value(self, nu):
        return self.center + self.radius * nu

    def jacobian(self, nu):
        eye = np.eye(nu.shape[-1])
        return self.radius * (eye - nu[..., :, None] * nu[..., None, :])

    def second(self, nu, a, b):
        return self.radius * _projection_derivatives(nu, a, b)


class MinkowskiSphereMap:
    """F(nu) = center + scale * u(nu): the homothet center + scale * boundary of B."""

    def __init__(self, body: ConvexBody, scale: float, center: np.ndarray):
        self.body = body
        self.scale = scale
        self.center = center

    def value(self, nu):
        return self.center + self.scale * self.body._gradient(nu)

    def jacobian(self, nu):
        return self.scale * self.body._hessian(nu)

    def second(self, nu, a, b):
        return self.scale * self.body.support_third(nu, a, b)


class HarmonicSeries:
    """
    Radius field r(nu) = base + sum_k c_k Y_k(nu) with analytic derivatives.

    Y_k are the tabulated harmonic polynomials restricted to the sphere and
    extended 0-homogeneously.
    """

    def __init__(self, dimension: int, base: float, coeffs: Sequence[float]):
        self.dimension = dimension
        self.base = base
        self.coeffs = [float(c) for c in coeffs]
        self._series = harmonic_series(dimension, self.coeffs, power_shift=0)

    def __call__(self, nu):
        return self.evaluate(nu, order=0)

    def evaluate(self, v, order: int = 2):
        v = np.asarray(v, dtype=float)
        n = v.shape[-1]
        value = np.full(v.shape[:-1], self.base)
        grad = np.zeros(v.shape)
        hess = np.zeros(v.shape + (n,))
        for coef, ext in self._series:
            terms = ext.evaluate(v, order=max(order, 0))
            if order == 0:
                value = value + coef * terms
                continue
            value = value + coef * terms[0]
            grad = grad + coef * terms[1]
            if order == 2:
                hess = hess + coef * terms[2]
        if order == 0:
            return value
        if order == 1:
            return value, grad
        return value, grad, hess


class CallableRadius:
    """User-supplied radius field on unit directions with FD derivatives."""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], gradient_step: float = 1e-5, hessian_step: float = 1e-3):
        self.func = func
        self.gradient_step = gradient_step
        self.hessian_step = hessian_step

    def _extended(self, v):
        return self.func(v / np.linalg.norm(v, axis=-1, keepdims=True))

    def __call__(self, nu):
        return self.func(np.asarray(nu, dtype=float))

    def evaluate(self, v, order: int = 2):
        v = np.asarray(v, dtype=float)
        value = self._extended(v)
        if order == 0:
            return value
        grad = fd.gradient(self._extended, v, step=self.gradient_step)
        if order == 1:
            return value, grad
        return value, grad, fd.hessian(self._extended, v, step=self.hessian_step)


class RadialMap:
    """F(nu) = r(nu) * nu for a positive radius field."""

    def __init__(self, radius_field):
        self.radius_field = radius_field

    def value(self, nu):
        return self.radius_field.evaluate(nu, order=0)[..., None] * nu

    def jacobian(self, nu):
        r, grad_r = self.radius_field.evaluate(nu, order=1)
        eye = np.eye(nu.shape[-1])
        projector = eye - nu[..., :, None] * nu[..., None, :]
        return nu[..., :, None] * grad_r[..., None, :] + r[..., None, None] * projector

    def second(self, nu, a, b):
        r, grad_r, hess_r = self.radius_field.evaluate(nu, order=2)
        ga = np.sum(grad_r * a, axis=-1, keepdims=True)
        gb = np.sum(grad_r * b, axis=-1, keepdims=True)
        hab = np.einsum('...i,...ij,...j->...', a, hess_r, b)[..., None]
        pa = a - np.sum(nu * a, axis=-1, keepdims=True) * nu
        pb = b - np.sum(nu * b, axis=-1, keepdims=True) * nu
        return hab * nu + ga * pb + gb * pa + r[..., None] * _projection_derivatives(nu, a, b)


# ---------------------------------------------------------------------------
# Charts
# ---------------------------------------------------------------------------

@dataclass
class SurfaceChart:
    """
    Closed immersed hypersurface given by a chart with analytic derivatives.

    ``evaluate(*params)`` returns (x, first partials, second partials) with
    shapes (..., n), (..., n, n-1) and (..., n, n-1, n-1). Parameters are
    theta for circles, (theta, s) with s = cos(polar angle) for spheres and
    (u, v) for tori.
    """

    dimension: int
    topology: str
    kind: str
    evaluate: Callable[..., Tuple[np.ndarray, np.ndarray, np.ndarray]]
    params: Dict[str, Any] = field(default_factory=dict)
    embedded: bool = True
    center: Optional[np.ndarray] = None
    orientation: int = 1

    def describe(self) -> str:
        details = ", ".join(f"{k}={v}" for k, v in self.params.items())
        return f"{self.kind}[n={self.dimension}{', ' + details if details else ''}]"


def _directional_chart(dimension: int, direction_map, kind: str, params: Dict[str, Any], center) -> SurfaceChart:
    topology = "circle" if dimension == 2 else "sphere"

    def evaluate(*args):
        if dimension == 2:
            nu, d1, d2 = circle_directions(args[0])
        else:
            nu, d1, d2 = sphere_directions(*args)
        m = dimension - 1
        x = direction_map.value(nu)
        jac_map = direction_map.jacobian(nu)
        first = np.stack([_apply(jac_map, d1[i]) for i in range(m)], axis=-1)
        second = np.empty(x.shape + (m, m))
        for i in range(m):
            for j in range(i, m):
                second[..., i, j] = direction_map.second(nu, d1[i], d1[j]) + _apply(jac_map, d2[i][j])
                second[..., j, i] = second[..., i, j]
        return x, first, second

    return SurfaceChart(dimension, topology, kind, evaluate, params, True, center)


def _center_vector(center, dimension: Optional[int]) -> np.ndarray:
    if center is None:
        if dimension is None:
            raise InvalidParameterError("Either center or dimension must be given")
        return np.zeros(dimension)
    center = np.asarray(center, dtype=float)
    if center.shape not in ((2,), (3,)):
        raise InvalidParameterError(f"Center must have 2 or 3 components, got {center.tolist()}")
    if dimension is not None and center.shape[0] != dimension:
        raise InvalidParameterError(f"Center {center.tolist()} does not match dimension {dimension}")
    return center


def make_round_sphere(radius: float = 1.0, center=None, dimension: Optional[int] = None) -> SurfaceChart:
    """
    Round sphere (circle for n=2) of the given radius.

    Raises:
        InvalidParameterError: If radius <= 0
    """
    if radius <= 0:
        raise InvalidParameterError(f"Sphere radius must be positive, got {radius}")
    center = _center_vector(center, dimension if dimension is not None else (None if center is not None else 3))
    params = {'radius': radius, 'center': center.tolist()}
    return _directional_chart(center.shape[0], RoundSphereMap(radius, center), "round_sphere", params, center)


def make_minkowski_sphere(body: ConvexBody, scale: float = 1.0, center=None) -> SurfaceChart:
    """
    Minkowski sphere center + scale * boundary(B), parameterized by normals.

    By construction xi = nu and eta = u(nu), so d(eta) = identity / scale.
    """
    if scale <= 0:
        raise InvalidParameterError(f"Minkowski sphere scale must be positive, got {scale}")
    center = _center_vector(center, body.dimension)
    params = {'lambda': scale, 'center': center.tolist(), 'body': body.describe()}
    return _directional_chart(body.dimension, MinkowskiSphereMap(body, scale, center), "minkowski_sphere", params, center)


def make_radial_graph(radius_field, n: int = 3, validation_resolution: int = 16) -> SurfaceChart:
    """
    Star-shaped surface nu -> r(nu) * nu.

    Args:
        radius_field: HarmonicSeries, or any callable on unit directions
        n: Ambient dimension
        validation_resolution: Resolution of the positivity check grid

    Raises:
        InvalidParameterError: If r <= 0 at a validation node
    """
    if n not in (2, 3):
        raise InvalidParameterError(f"Dimension must be 2 or 3, got {n}")
    if not isinstance(radius_field, (HarmonicSeries, CallableRadius)):
        radius_field = CallableRadius(radius_field)

    nodes = direction_grid(n, validation_resolution)
    radii = radius_field.evaluate(nodes, order=0)
    worst = int(np.argmin(radii))
    if radii[worst] <= 0.0:
        raise InvalidParameterError(
            f"Radius field is not positive at validation node {worst} "
            f"(direction {nodes[worst].tolist()}, r={radii[worst]:.3e})"
        )

    params: Dict[str, Any] = {}
    if isinstance(radius_field, HarmonicSeries):
        params = {'base': radius_field.base, 'coeffs': radius_field.coeffs}
    return _directional_chart(n, RadialMap(radius_field), "radial_graph", params, np.zeros(n))


def make_torus(R: float, r: float) -> SurfaceChart:
    """
    Torus of revolution about the z-axis (n=3) with outward normal.

    Raises:
        InvalidParameterError: Unless R > r > 0
    """
    if not r > 0 or not R > r:
        raise InvalidParameterError(f"Torus requires R > r > 0, got R={R}, r={r}")

    def evaluate(u, v):
        cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
        ring = R + r * cv
        zero = np.zeros_like(u + v)
        x = np.stack([ring * cu, ring * su, r * sv + zero], axis=-1)
        x_u = np.stack([-ring * su, ring * cu, zero], axis=-1)
        x_v = np.stack([-r * sv * cu, -r * sv * su, r * cv + zero], axis=-1)
        x_uu = np.stack([-ring * cu, -ring * su, zero], axis=-1)
        x_uv = np.stack([r * sv * su, -r * sv * cu, zero], axis=-1)
        x_vv = np.stack([-r * cv * cu, -r * cv * su, -r * sv + zero], axis=-1)
        first = np.stack([x_u, x_v], axis=-1)
        second = np.stack([np.stack([x_uu, x_uv], axis=-1), np.stack([x_uv, x_vv], axis=-1)], axis=-1)
        return x, first, second

    return SurfaceChart(3, "torus", "torus", evaluate, {'R': R, 'r': r}, True, np.zeros(3))


def scale_chart(chart: SurfaceChart, factor: float) -> SurfaceChart:
    """Chart of the surface scaled by ``factor`` about the origin."""
    if factor <= 0:
        raise InvalidParameterError(f"Scale factor must be positive, got {factor}")

    def evaluate(*args):
        x, first, second = chart.evaluate(*args)
        return factor * x, factor * first, factor * second

    center = None if chart.center is None else factor * chart.center
    params = dict(chart.params, scaled_by=factor)
    return SurfaceChart(chart.dimension, chart.topology, chart.kind, evaluate, params, chart.embedded, center, chart.orientation)


def translate_chart(chart: SurfaceChart, offset) -> SurfaceChart:
    """Chart of the surface translated by ``offset``."""
    offset = np.asarray(offset, dtype=float)

    def evaluate(*args):
        x, first, second = chart.evaluate(*args)
        return x + offset, first, second

    center = offset if chart.center is None else chart.center + offset
    params = dict(chart.params, translated_by=offset.tolist())
    return SurfaceChart(chart.dimension, chart.topology, chart.kind, evaluate, params, chart.embedded, center, chart.orientation)


def chart_from_spec(spec: Dict[str, Any], body: Optional[ConvexBody] = None, dimension: int = 3) -> SurfaceChart:
    """Build a chart from a parsed surface spec (see utils.config.parse_surface_spec)."""
    kind = spec['kind']
    if body is not None:
        dimension = body.dimension
    center = spec.get('center')
    if kind == 'round_sphere':
        return make_round_sphere(spec['radius'], center, dimension)
    if kind == 'minkowski_sphere':
        if body is None:
            raise InvalidParameterError("A Minkowski sphere needs a body")
        return make_minkowski_sphere(body, spec['lambda'], center)
    if kind == 'radial_graph':
        return make_radial_graph(HarmonicSeries(dimension, spec['base'], spec['coeffs']), dimension)
    if dimension != 3:
        raise InvalidParameterError("Tori are only available for n=3")
    return make_torus(spec['R'], spec['r'])


# ---------------------------------------------------------------------------
# Grid calculus
# ---------------------------------------------------------------------------

def raw_normal(first_partials: np.ndarray) -> np.ndarray:
    """
    Unnormalized normal whose length is the area density sqrt(det g).

    n=3: x_1 x x_2; n=2: the tangent rotated clockwise (outward for
    counter-clockwise curves).
    """
    if first_partials.shape[-2] == 3:
        return np.cross(first_partials[..., 0], first_partials[..., 1])
    tangent = first_partials[..., 0]
    return np.stack([tangent[..., 1], -tangent[..., 0]], axis=-1)


def gauss_differentiation_matrix(nodes: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """
    Collocation differentiation matrix on Gauss-Legendre nodes.

    Uses the closed-form barycentric weights (-1)^j sqrt((1 - x_j^2) w_j) of
    ascending Gauss-Legendre nodes.
    """
    bary = (-1.0) ** np.arange(len(nodes)) * np.sqrt((1.0 - nodes ** 2) * weights)
    diff = nodes[:, None] - nodes[None, :]
    np.fill_diagonal(diff, 1.0)
    matrix = (bary[None, :] / bary[:, None]) / diff
    np.fill_diagonal(matrix, 0.0)
    np.fill_diagonal(matrix, -np.sum(matrix, axis=1))
    return matrix


def _periodic_derivative(values: np.ndarray, axis: int) -> np.ndarray:
    count = values.shape[axis]
    coeffs = fft.rfft(values, axis=axis)
    wavenumbers = np.arange(coeffs.shape[axis], dtype=float)
    if count % 2 == 0:
        wavenumbers[-1] = 0.0
    shape = [1] * values.ndim
    shape[axis] = -1
    return fft.irfft(coeffs * (1j * wavenumbers).reshape(shape), n=count, axis=axis)


def _polar_derivative(values: np.ndarray, s: np.ndarray, matrix: np.ndarray) -> np.ndarray:
    """
    d/ds on a (theta, s) grid for functions smooth on the sphere.

    Odd azimuthal modes carry a sqrt(1 - s^2) factor; it is divided out
    before polynomial collocation and restored afterwards.
    """
    count = values.shape[0]
    coeffs = fft.rfft(values, axis=0)
    shape = [1] * values.ndim
    shape[1] = -1
    c = np.sqrt(1.0 - s ** 2).reshape(shape)
    s_col = s.reshape(shape)

    even = np.einsum('jk,mk...->mj...', matrix, coeffs)
    reduced = coeffs / c
    odd = np.einsum('jk,mk...->mj...', matrix, reduced) * c - reduced * s_col / c

    odd_modes = (np.arange(coeffs.shape[0]) % 2 == 1).reshape([-1] + [1] * (values.ndim - 1))
    return fft.irfft(np.where(odd_modes, odd, even), n=count, axis=0)


class SampledSurface:
    """
    A chart sampled on a tensor grid with quadrature weights.

    Periodic axes use equispaced nodes with trapezoid weights; the polar axis
    of sphere charts uses Gauss-Legendre nodes in s = cos(polar angle).
    Arrays are laid out with the grid axes first: positions have shape
    grid_shape + (n,).
    """

    def __init__(self, chart: SurfaceChart, resolution: Tuple[int, ...]):
        self.chart = chart
        self.dimension = chart.dimension
        self.topology = chart.topology
        self.resolution = tuple(int(r) for r in resolution)

        axes, axis_weights = self._axes()
        self.param_axes = axes
        self.params = np.meshgrid(*axes, indexing='ij')
        self.weights = axis_weights[0]
        for w in axis_weights[1:]:
            self.weights = self.weights[..., None] * w
        self.grid_shape = self.weights.shape

        self.positions, self.first_partials, self.second_partials = chart.evaluate(*self.params)
        self.normal_raw = chart.orientation * raw_normal(self.first_partials)
        self.area_density = np.linalg.norm(self.normal_raw, axis=-1)
        self._check_immersion()
        self.xi = self.normal_raw / self.area_density[..., None]

        self._gauss_matrix = None
        if self.topology == "sphere":
            s, w = leggauss(self.resolution[1])
            self._gauss_matrix = gauss_differentiation_matrix(s, w)

        logger.debug(f"Sampled {chart.describe()} at resolution {self.resolution}")

    def _axes(self):
        res = self.resolution
        if self.topology == "circle":
            if len(res) != 1 or res[0] < 8:
                raise InvalidParameterError(f"Circle charts need one resolution >= 8, got {res}")
            return [self._periodic_axis(res[0])], [np.full(res[0], 2.0 * np.pi / res[0])]
        if len(res) != 2 or min(res) < 8:
            raise InvalidParameterError(f"{self.topology} charts need two resolutions >= 8, got {res}")
        if self.topology == "sphere":
            s, w = leggauss(res[1])
            return [self._periodic_axis(res[0]), s], [np.full(res[0], 2.0 * np.pi / res[0]), w]
        return (
            [self._periodic_axis(res[0]), self._periodic_axis(res[1])],
            [np.full(res[0], 2.0 * np.pi / res[0]), np.full(res[1], 2.0 * np.pi / res[1])],
        )

    @staticmethod
    def _periodic_axis(count: int) -> np.ndarray:
        return 2.0 * np.pi * np.arange(count) / count

    def _check_immersion(self):
        singular = np.linalg.svd(self.first_partials, compute_uv=False)
        smallest = singular[..., -1]
        scale = max(float(np.max(singular[..., 0])), 1e-300)
        node = int(np.argmin(smallest))
        if smallest.flat[node] <= 1e-8 * scale:
            index = np.unravel_index(node, self.grid_shape)
            raise DegenerateChartError(
                f"Chart {self.chart.describe()} is not an immersion at node {tuple(int(i) for i in index)} "
                f"(min singular value {smallest.flat[node]:.3e})"
            )

    @property
    def node_count(self) -> int:
        return int(np.prod(self.grid_shape))

    def integrate(self, values: np.ndarray) -> float:
        """
        Integral of a grid function against dS.

        The flattened contiguous product is reduced by numpy's pairwise
        summation, so the result is bit-reproducible.
        """
        integrand = np.ascontiguousarray(values * self.weights * self.area_density, dtype=float)
        return float(np.sum(integrand.ravel()))

    def partials(self, values: np.ndarray) -> np.ndarray:
        """
        Spectral partial derivatives of a grid function along each parameter.

        Args:
            values: Array of shape grid_shape + trailing dims

        Returns:
            Array of shape (n-1,) + values.shape
        """
        return np.stack([self.partial(values, axis) for axis in range(self.dimension - 1)])

    def partial(self, values: np.ndarray, axis: int) -> np.ndarray:
        """Spectral derivative of a grid function along one parameter axis."""
        values = np.asarray(values, dtype=float)
        if values.shape[:len(self.grid_shape)] != self.grid_shape:
            raise ValueError(f"Values of shape {values.shape} do not match grid {self.grid_shape}")
        if axis == 1 and self.topology == "sphere":
            return _polar_derivative(values, self.param_axes[1], self._gauss_matrix)
        return _periodic_derivative(values, axis)

    def area(self) -> float:
        """Euclidean area (length for n=2)."""
        return self.integrate(np.ones(self.grid_shape))

    def enclosed_volume(self) -> float:
        """Algebraic enclosed volume (1/n) * integral of <x, xi> dS."""
        return self.integrate(np.sum(self.positions * self.xi, axis=-1)) / self.dimension

    def characteristic_length(self) -> float:
        """Length scale area**(1/(n-1)) used to scale absolute tolerances."""
        return self.area() ** (1.0 / (self.dimension - 1))

    def quadrature_error_estimate(self) -> float:
        """|area(resolution) - area(resolution / 2)|, or nan below the minimum resolution."""
        coarse = tuple(r // 2 for r in self.resolution)
        if min(coarse) < 8:
            return float('nan')
        return abs(self.area() - sample(self.chart, coarse).area())


def sample(chart: SurfaceChart, resolution: Optional[Union[int, Sequence[int]]] = None) -> SampledSurface:
    """
    Sample a chart on its tensor grid.

    Args:
        chart: Surface chart
        resolution: N (circle) or (N_1, N_2); defaults to 128 / (64, 32).
            A single N for a sphere chart means (N, max(N // 2, 8)), for a torus (N, N).

    Raises:
        InvalidParameterError: If the resolution is below 8 on any axis
        DegenerateChartError: If the chart is not an immersion at some node
    """
    if resolution is None:
        resolution = DEFAULT_RESOLUTION[chart.dimension]
        if chart.topology == "torus":
            resolution = (64, 64)
    elif isinstance(resolution, (int, np.integer)) or len(resolution) == 1:
        count = int(np.ravel(resolution)[0])
        if chart.topology == "circle":
            resolution = (count,)
        elif chart.topology == "sphere":
            resolution = (count, max(count // 2, MIN_RESOLUTION))
        else:
            resolution = (count, count)
    return SampledSurface(chart, tuple(resolution))
