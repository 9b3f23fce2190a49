"""Variations of surfaces, first and second variation formulas, Delta_m and the stability spectrum."""

import json
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import linalg

from src.body import ConvexBody
from src.frames import FrameSet, umbilicity_report
from src.functionals import surface_functionals
from src.surface import DegenerateChartError, SampledSurface
from src.utils import finite_difference as fd
from src.utils.config import GeometryError, Tolerances
from src.utils.logger import get_logger


logger = get_logger()

DEFAULT_T_STEPS = (1e-3, 5e-4, 2.5e-4)
FUNCTIONALS = ("A_m", "V", "J_m")


class VariationError(GeometryError):
    """Raised when a variation cannot be built or evaluated."""
    pass


class BasisDegeneracyError(GeometryError):
    """Raised when the stability basis is too small, unresolvable or numerically dependent."""
    pass


# ---------------------------------------------------------------------------
# Basis functions on the parameter grid
# ---------------------------------------------------------------------------

def normalized_legendre(l_max: int, s: np.ndarray) -> Dict[Tuple[int, int], np.ndarray]:
    """
    Associated Legendre functions normalized to unit L2 norm on [-1, 1].

    Returns:
        Dictionary (l, m) -> values at s, for 0 <= m <= l <= l_max
    """
    s = np.asarray(s, dtype=float)
    c = np.sqrt(1.0 - s ** 2)
    table: Dict[Tuple[int, int], np.ndarray] = {(0, 0): np.full(s.shape, 1.0 / np.sqrt(2.0))}
    for m in range(1, l_max + 1):
        table[(m, m)] = np.sqrt((2 * m + 1) / (2 * m)) * c * table[(m - 1, m - 1)]
    for m in range(0, l_max):
        table[(m + 1, m)] = np.sqrt(2 * m + 3) * s * table[(m, m)]
        for l in range(m + 2, l_max + 1):
            a = np.sqrt((4 * l * l - 1) / (l * l - m * m))
            b = np.sqrt(((l - 1) ** 2 - m * m) / (4 * (l - 1) ** 2 - 1))
            table[(l, m)] = a * (s * table[(l - 1, m)] - b * table[(l - 2, m)])
    return table


def _sphere_modes(surf: SampledSurface, degree: int, include_constant: bool):
    theta = surf.params[0]
    legendre = normalized_legendre(degree, surf.param_axes[1])
    start = 0 if include_constant else 1
    for l in range(start, degree + 1):
        for m in range(0, l + 1):
            radial = legendre[(l, m)][None, :]
            yield f"Y[{l},{m},cos]", l, np.cos(m * theta) * radial
            if m > 0:
                yield f"Y[{l},{m},sin]", l, np.sin(m * theta) * radial


def _fourier_modes(surf: SampledSurface, degree: int, include_constant: bool):
    if include_constant:
        yield "1", 0, np.ones(surf.grid_shape)
    if surf.topology == "circle":
        theta = surf.params[0]
        for k in range(1, degree + 1):
            yield f"cos({k}t)", k, np.cos(k * theta)
            yield f"sin({k}t)", k, np.sin(k * theta)
        return
    u, v = surf.params
    for total in range(1, degree + 1):
        for j in range(0, total + 1):
            k = total - j
            if j == 0:
                yield f"cos({k}v)", total, np.cos(k * v)
                yield f"sin({k}v)", total, np.sin(k * v)
            elif k == 0:
                yield f"cos({j}u)", total, np.cos(j * u)
                yield f"sin({j}u)", total, np.sin(j * u)
            else:
                for name_u, fu in (("cos", np.cos), ("sin", np.sin)):
                    for name_v, fv in (("cos", np.cos), ("sin", np.sin)):
                        yield f"{name_u}({j}u){name_v}({k}v)", total, fu(j * u) * fv(k * v)


def _max_resolvable_degree(surf: SampledSurface) -> int:
    """Highest mode degree whose pairwise products the grid still resolves."""
    if surf.topology == "sphere":
        return min(surf.resolution[0] // 4, surf.resolution[1] // 2)
    return min(r // 4 for r in surf.resolution)


def chart_basis(surf: SampledSurface, count: int, include_constant: bool = False) -> List[Tuple[str, np.ndarray]]:
    """
    First ``count`` smooth basis functions on the chart, graded by degree.

    Sphere charts use cos/sin(m theta) times normalized associated Legendre
    functions in s; circles and tori use Fourier modes.

    Raises:
        BasisDegeneracyError: If the grid cannot resolve ``count`` functions
    """
    limit = _max_resolvable_degree(surf)
    modes = _sphere_modes(surf, limit, include_constant) if surf.topology == "sphere" else \
        _fourier_modes(surf, limit, include_constant)
    basis = []
    for label, _, values in modes:
        if len(basis) == count:
            break
        basis.append((label, values))
    if len(basis) < count:
        raise BasisDegeneracyError(
            f"Resolution {surf.resolution} resolves only {len(basis)} basis functions; "
            f"lower the basis size below {count} or raise the resolution"
        )
    return basis


# ---------------------------------------------------------------------------
# Scalar fields
# ---------------------------------------------------------------------------

class ScalarField:
    """
    A function sampled on the parameter grid of a surface.

    Derivatives are spectral (see SampledSurface.partials) and cached.
    """

    def __init__(self, surf: SampledSurface, values: np.ndarray, label: str = "field"):
        values = np.asarray(values, dtype=float)
        if values.shape != surf.grid_shape:
            raise VariationError(f"Field of shape {values.shape} does not match grid {surf.grid_shape}")
        self.surf = surf
        self.values = values
        self.label = label
        self._partials: Optional[np.ndarray] = None

    def __repr__(self) -> str:
        return f"ScalarField({self.label})"

    @property
    def partials(self) -> np.ndarray:
        """Coordinate partials with shape grid_shape + (n-1,)."""
        if self._partials is None:
            self._partials = np.moveaxis(self.surf.partials(self.values), 0, -1)
        return self._partials

    def orthonormal_gradient(self, frames: FrameSet) -> np.ndarray:
        """Components of grad f in the orthonormal tangent basis, R^-T d(f)."""
        upper_inv_t = np.swapaxes(np.linalg.inv(frames.chart_to_basis), -1, -2)
        return np.einsum('...ij,...j->...i', upper_inv_t, self.partials)

    def surface_gradient(self, frames: FrameSet) -> np.ndarray:
        """Ambient vector grad f; tangential by construction."""
        return np.einsum('...ki,...i->...k', frames.tangent_basis, self.orthonormal_gradient(frames))

    def dupin_gradient(self, frames: FrameSet) -> np.ndarray:
        """Ambient vector du(grad f)."""
        grad = np.einsum('...ij,...j->...i', frames.du, self.orthonormal_gradient(frames))
        return np.einsum('...ki,...i->...k', frames.tangent_basis, grad)

    def with_values(self, values: np.ndarray, label: Optional[str] = None) -> "ScalarField":
        return ScalarField(self.surf, values, label or self.label)

    @classmethod
    def constant(cls, surf: SampledSurface, c: float = 1.0) -> "ScalarField":
        return cls(surf, np.full(surf.grid_shape, float(c)), f"constant({c})")

    @classmethod
    def from_positions(cls, surf: SampledSurface, func: Callable[[np.ndarray], np.ndarray], label: str = "f(x)") -> "ScalarField":
        """Field f(x) evaluated at the sample positions."""
        return cls(surf, func(surf.positions), label)

    @classmethod
    def translation_component(cls, frames: FrameSet, v: Sequence[float]) -> "ScalarField":
        """<v, xi> / <eta, xi>: the Birkhoff-normal speed of the translation by v."""
        v = np.asarray(v, dtype=float)
        values = np.einsum('...k,k->...', frames.xi, v) / frames.support_at_normal
        return cls(frames.surf, values, f"translation_component({v.tolist()})")

    @classmethod
    def rho(cls, frames: FrameSet) -> "ScalarField":
        return cls(frames.surf, frames.rho, "rho")

    @classmethod
    def random(cls, surf: SampledSurface, seed: int = 0, degree: int = 3, amplitude: float = 0.2) -> "ScalarField":
        """
        Seeded smooth field: random combination of the chart basis up to ``degree``.

        Coefficients decay like 1/(1 + degree) so higher modes stay small.
        """
        rng = np.random.default_rng(seed)
        degree = min(degree, _max_resolvable_degree(surf))
        modes = _sphere_modes(surf, degree, True) if surf.topology == "sphere" else \
            _fourier_modes(surf, degree, True)
        values = np.zeros(surf.grid_shape)
        for _, grade, mode in modes:
            values += amplitude * rng.standard_normal() / (1.0 + grade) * mode
        return cls(surf, values, f"random(seed={seed}, degree={degree})")


def field_from_spec(spec: Dict[str, Any], frames: FrameSet) -> ScalarField:
    """Build a field from the ``field`` entry of a parsed variation spec."""
    kind = spec['kind']
    if kind == 'random':
        return ScalarField.random(frames.surf, spec['seed'], spec['degree'])
    if kind == 'translation_component':
        if len(spec['v']) != frames.dimension:
            raise VariationError(f"Translation vector {spec['v']} does not match dimension {frames.dimension}")
        return ScalarField.translation_component(frames, spec['v'])
    return ScalarField.constant(frames.surf, spec['c'])


def _values(f) -> np.ndarray:
    return f.values if isinstance(f, ScalarField) else np.asarray(f, dtype=float)


def _as_field(f, surf: SampledSurface) -> ScalarField:
    return f if isinstance(f, ScalarField) else ScalarField(surf, f)


def omega_mean(frames: FrameSet, values: np.ndarray) -> float:
    """Mean of a grid function with respect to d(omega)."""
    return frames.integrate_omega(values) / frames.minkowski_area()


def project_mean_zero(f, frames: FrameSet) -> Tuple[ScalarField, float]:
    """
    Subtract the d(omega)-mean of a field.

    Returns:
        Tuple of (projected field, |mean| / (max|f| + 1))
    """
    f = _as_field(f, frames.surf)
    mean = omega_mean(frames, f.values)
    magnitude = abs(mean) / (float(np.max(np.abs(f.values))) + 1.0)
    logger.debug(f"Mean-zero projection of {f.label}: removed {mean:.3e}")
    return f.with_values(f.values - mean), magnitude


# ---------------------------------------------------------------------------
# Variations and finite-difference derivatives of functionals
# ---------------------------------------------------------------------------

@dataclass
class VariationSpec:
    """
    A one-parameter family F(t, p) = x(p) + t W(p).

    kind is one of birkhoff_normal (W = f eta), scaling (W = x),
    translation (W = v) or general (W an ambient field on the grid).
    """

    kind: str
    field: Optional[ScalarField] = None
    vector: Optional[Sequence[float]] = None
    W: Optional[np.ndarray] = None
    t_steps: Tuple[float, ...] = DEFAULT_T_STEPS

    def __post_init__(self):
        if self.kind == 'birkhoff_normal' and self.field is None:
            raise VariationError("A Birkhoff-normal variation needs a field")
        if self.kind == 'translation' and self.vector is None:
            raise VariationError("A translation variation needs a vector")
        if self.kind == 'general' and self.W is None:
            raise VariationError("A general variation needs a vector field W")
        if self.kind not in ('birkhoff_normal', 'scaling', 'translation', 'general'):
            raise VariationError(f"Unknown variation kind: {self.kind}")

    def describe(self) -> str:
        if self.kind == 'birkhoff_normal':
            return f"birkhoff_normal({self.field.label})"
        if self.kind == 'translation':
            return f"translation({list(self.vector)})"
        return self.kind

    def velocity(self, frames: FrameSet) -> Tuple[np.ndarray, np.ndarray]:
        """
        W and its chart partials.

        Returns:
            Tuple of arrays with shapes grid_shape + (n,) and grid_shape + (n, n-1)
        """
        surf = frames.surf
        if self.kind == 'birkhoff_normal':
            f = self.field.values[..., None]
            W = f * frames.eta
            partials = self.field.partials[..., None, :] * frames.eta[..., :, None] + f[..., None] * frames.eta_partials
            return W, partials
        if self.kind == 'scaling':
            return surf.positions, surf.first_partials
        if self.kind == 'translation':
            v = np.asarray(self.vector, dtype=float)
            return np.broadcast_to(v, surf.positions.shape), np.zeros(surf.first_partials.shape)
        W = np.asarray(self.W, dtype=float)
        return W, np.moveaxis(surf.partials(W), 0, -1)


def variation_from_spec(spec: Dict[str, Any], frames: FrameSet) -> VariationSpec:
    """Build a VariationSpec from a parsed variation spec."""
    kind = spec['variation']
    if kind == 'birkhoff_normal':
        return VariationSpec(kind, field=field_from_spec(spec['field'], frames))
    if kind == 'translation':
        if len(spec['v']) != frames.dimension:
            raise VariationError(f"Translation vector {spec['v']} does not match dimension {frames.dimension}")
        return VariationSpec(kind, vector=spec['v'])
    return VariationSpec(kind)


def default_reference_curvature(frames: FrameSet) -> float:
    """d(omega)-weighted mean of H_m, the default H_m_ref of J_m."""
    return omega_mean(frames, frames.H_m)


def fd_functional_derivative(
    body: ConvexBody,
    frames: FrameSet,
    spec: VariationSpec,
    which: str = "A_m",
    order: int = 1,
    H_m_ref: Optional[float] = None,
) -> Tuple[float, float]:
    """
    Richardson-extrapolated central difference of a functional along a variation.

    The functional at t is evaluated on the deformed grid x + t W with
    partials J + t dW, using the quadrature of the unperturbed surface.

    Args:
        body: Convex body
        frames: Frames of the unperturbed surface
        spec: Variation
        which: 'A_m', 'V' or 'J_m'
        order: 1 or 2
        H_m_ref: Reference curvature of J_m; defaults to the d(omega)-mean of H_m

    Returns:
        Tuple of (derivative, error estimate)

    Raises:
        DegenerateChartError: If a stencil surface is degenerate even after halving the steps
    """
    if which not in FUNCTIONALS:
        raise VariationError(f"Unknown functional {which!r}; expected one of {', '.join(FUNCTIONALS)}")
    surf = frames.surf
    n = surf.dimension
    if which == "J_m" and H_m_ref is None:
        H_m_ref = default_reference_curvature(frames)
    W, W_partials = spec.velocity(frames)

    def functional(t: float) -> float:
        values = surface_functionals(
            body,
            surf.positions + t * W,
            surf.first_partials + t * W_partials,
            surf.weights,
            surf.chart.orientation,
        )
        if which == "A_m":
            return values['area_minkowski']
        if which == "V":
            return values['volume']
        return values['area_minkowski'] - (n - 1) * H_m_ref * values['volume']

    steps = tuple(spec.t_steps)
    try:
        value, error = fd.derivative(functional, 0.0, steps, order)
    except DegenerateChartError as e:
        steps = tuple(h / 2 for h in steps)
        logger.warning(f"Degenerate stencil surface for {spec.describe()} ({e}); retrying with steps {steps}")
        value, error = fd.derivative(functional, 0.0, steps, order)

    logger.debug(f"FD d^{order}{which}/dt^{order} along {spec.describe()}: {value:.15g} (error {error:.3e})")
    return float(value), error


# ---------------------------------------------------------------------------
# Analytic variation formulas
# ---------------------------------------------------------------------------

def first_variation_formula(frames: FrameSet, surf: SampledSurface, f) -> float:
    """(n-1) * integral of H_m f d(omega) for the Birkhoff-normal variation with speed f."""
    return (surf.dimension - 1) * frames.integrate_omega(frames.H_m * _values(f))


def birkhoff_normal_component(frames: FrameSet, W: np.ndarray) -> np.ndarray:
    """N_eta(W) = <W, xi> / <eta, xi>."""
    return np.sum(np.asarray(W) * frames.xi, axis=-1) / frames.support_at_normal


def first_variation_general(frames: FrameSet, surf: SampledSurface, W: np.ndarray) -> float:
    """(n-1) * integral of H_m N_eta(W) d(omega) for an arbitrary ambient velocity W."""
    return (surf.dimension - 1) * frames.integrate_omega(frames.H_m * birkhoff_normal_component(frames, W))


def minkowski_laplacian(frames: FrameSet, surf: SampledSurface, f) -> ScalarField:
    """
    Delta_m f = <eta, xi>^-1 div(<eta, xi>^2 du(grad f)).

    The tangent field is taken to chart coordinates X^i and the divergence is
    (1/sqrt g) sum_i d_i(sqrt g X^i), each flux differentiated along its own
    parameter only.
    """
    f = _as_field(f, surf)
    h = frames.support_at_normal
    grad = f.orthonormal_gradient(frames)
    field_e = (h ** 2)[..., None] * np.einsum('...ij,...j->...i', frames.du, grad)
    coords = np.einsum('...ij,...j->...i', np.linalg.inv(frames.chart_to_basis), field_e)

    flux = surf.area_density[..., None] * coords
    divergence = sum(surf.partial(flux[..., i], i) for i in range(surf.dimension - 1)) / surf.area_density
    return f.with_values(divergence / h, f"Delta_m({f.label})")


def second_variation_gradient_form(frames: FrameSet, surf: SampledSurface, f) -> float:
    """
    Integral of (-B_m^2 f^2 + <eta, xi> <grad f, du(grad f)>) d(omega) on the mean-zero part of f.

    (du grad f, du grad f)_b equals <grad f, du grad f>, so the Dupin Gram
    matrix never has to be inverted here.
    """
    f, _ = project_mean_zero(_as_field(f, surf), frames)
    grad = f.orthonormal_gradient(frames)
    dupin_energy = np.einsum('...i,...ij,...j->...', grad, frames.du, grad)
    return frames.integrate_omega(-frames.B_m_sq * f.values ** 2 + frames.support_at_normal * dupin_energy)


def second_variation_divergence_form(frames: FrameSet, surf: SampledSurface, f) -> float:
    """-integral of f (B_m^2 f + Delta_m f) d(omega) on the mean-zero part of f."""
    f, _ = project_mean_zero(_as_field(f, surf), frames)
    laplacian = minkowski_laplacian(frames, surf, f)
    return -frames.integrate_omega(f.values * (frames.B_m_sq * f.values + laplacian.values))


def minkowski_identity_residual(frames: FrameSet, surf: Optional[SampledSurface] = None) -> float:
    """|integral of (1 - rho H_m) d(omega)| / integral of d(omega)."""
    return abs(frames.integrate_omega(1.0 - frames.rho * frames.H_m)) / frames.minkowski_area()


def delta_m_self_adjointness(frames: FrameSet, f, g) -> float:
    """Relative asymmetry |<g, Delta_m f> - <f, Delta_m g>| in L2(d omega)."""
    surf = frames.surf
    f, g = _as_field(f, surf), _as_field(g, surf)
    fg = frames.integrate_omega(g.values * minkowski_laplacian(frames, surf, f).values)
    gf = frames.integrate_omega(f.values * minkowski_laplacian(frames, surf, g).values)
    return abs(fg - gf) / max(abs(fg), abs(gf), 1e-300)


def delta_m_divergence_residual(frames: FrameSet, f) -> float:
    """|integral of Delta_m f d(omega)| relative to the integral of |Delta_m f| d(omega)."""
    laplacian = minkowski_laplacian(frames, frames.surf, f).values
    return abs(frames.integrate_omega(laplacian)) / max(frames.integrate_omega(np.abs(laplacian)), 1e-300)


def laplacian_rho_check(frames: FrameSet, surf: Optional[SampledSurface] = None, tolerances: Optional[Tolerances] = None) -> Dict[str, Any]:
    """
    Compare Delta_m rho with (n-1) H_m - rho B_m^2 on constant-H_m surfaces.

    Surfaces whose H_m spread exceeds the CMC tolerance are reported as not
    applicable instead of checked.

    Returns:
        Dictionary with applicable, residual (absolute max norm) and H_m_spread
    """
    tolerances = tolerances or Tolerances()
    surf = surf or frames.surf
    spread = float(np.max(frames.H_m) - np.min(frames.H_m))
    if spread > tolerances.cmc_spread:
        logger.debug(f"Delta_m rho check not applicable: H_m spread {spread:.3e}")
        return {'applicable': False, 'residual': None, 'H_m_spread': spread,
                'reason': "H_m is not constant on this surface"}

    n = surf.dimension
    left = minkowski_laplacian(frames, surf, ScalarField.rho(frames)).values
    right = (n - 1) * frames.H_m - frames.rho * frames.B_m_sq
    return {'applicable': True, 'residual': float(np.max(np.abs(left - right))), 'H_m_spread': spread,
            'reason': None}


def cmc_stability_certificate(frames: FrameSet, surf: Optional[SampledSurface] = None, tolerances: Optional[Tolerances] = None) -> Dict[str, Any]:
    """
    Quantities of the stability argument for closed CMC surfaces.

    With f = 1 - rho H_m (mean-zero by the Minkowski identity) the second
    variation reduces to -integral of B_m^2 (1 - rho H_m) d(omega), and on CMC
    surfaces to -deficit, where deficit = integral of (B_m^2 - (n-1) H_m^2) d(omega).
    """
    tolerances = tolerances or Tolerances()
    surf = surf or frames.surf
    n = surf.dimension
    deficit = frames.integrate_omega(frames.B_m_sq - (n - 1) * frames.H_m ** 2)
    reduced = -frames.integrate_omega(frames.B_m_sq * (1.0 - frames.rho * frames.H_m))
    test_field = ScalarField(surf, 1.0 - frames.rho * frames.H_m, "1 - rho H_m")
    spread = float(np.max(frames.H_m) - np.min(frames.H_m))
    return {
        'deficit': deficit,
        'H_m_spread': spread,
        'cmc': spread <= tolerances.cmc_spread,
        'reduced_second_variation': reduced,
        'test_field_second_variation': second_variation_gradient_form(frames, surf, test_field),
        'umbilic_fraction': umbilicity_report(frames, tolerances.umbilic)['umbilic_fraction'],
    }


# ---------------------------------------------------------------------------
# Stability spectrum
# ---------------------------------------------------------------------------

@dataclass
class SpectrumReport:
    """Eigen-decomposition of the second variation on a mean-zero function basis."""

    eigenvalues: np.ndarray
    coefficients: np.ndarray
    basis_labels: List[str]
    basis_values: np.ndarray = field(repr=False)
    mass_condition: float = 0.0
    residual: float = 0.0
    q_norm: float = 0.0
    near_zero_count: int = 0
    projection_magnitudes: List[float] = field(default_factory=list)

    def lowest(self, k: int) -> np.ndarray:
        return self.eigenvalues[:k]

    def eigenfunction_values(self, k: int) -> np.ndarray:
        """Eigenfunction k on the grid."""
        return self.basis_values @ self.coefficients[:, k]

    def to_dict(self, k: Optional[int] = None) -> Dict[str, Any]:
        k = len(self.eigenvalues) if k is None else k
        return {
            'eigenvalues': [float(mu) for mu in self.eigenvalues[:k]],
            'basis': self.basis_labels,
            'basis_size': len(self.basis_labels),
            'mass_condition': self.mass_condition,
            'residual': self.residual,
            'q_norm': self.q_norm,
            'near_zero_count': self.near_zero_count,
            'max_projection_magnitude': max(self.projection_magnitudes) if self.projection_magnitudes else 0.0,
        }

    def save_to_file(self, filepath: str, k: Optional[int] = None):
        """Save report to JSON file."""
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(k), f, indent=2, sort_keys=True)


def stability_spectrum(
    frames: FrameSet,
    surf: Optional[SampledSurface] = None,
    basis_size: int = 25,
    tolerances: Optional[Tolerances] = None,
    max_condition: float = 1e12,
) -> SpectrumReport:
    """
    Generalized eigenvalues of the second variation Q against the L2(d omega) mass M.

    Basis functions are chart modes divided by <eta, xi>, then projected to
    d(omega)-mean zero; Q is the bilinear form of second_variation_gradient_form.
    On a Minkowski sphere the degree-one modes divided by <eta, xi> are the
    translation components <v, xi>/<eta, xi>, so the kernel lies in the span.

    Raises:
        BasisDegeneracyError: If basis_size < n + 2, the grid cannot resolve the
            basis or M is numerically singular
    """
    tolerances = tolerances or Tolerances()
    surf = surf or frames.surf
    n = surf.dimension
    if basis_size < n + 2:
        raise BasisDegeneracyError(f"Basis size must be at least {n + 2} for n={n}, got {basis_size}")

    basis = chart_basis(surf, basis_size)
    labels = [label for label, _ in basis]
    values = np.stack([v for _, v in basis], axis=-1) / frames.support_at_normal[..., None]
    means = np.array([omega_mean(frames, values[..., k]) for k in range(basis_size)])
    projections = [abs(m) / (float(np.max(np.abs(values[..., k]))) + 1.0) for k, m in enumerate(means)]
    values = values - means

    partials = np.moveaxis(surf.partials(values), 0, -2)
    upper_inv_t = np.swapaxes(np.linalg.inv(frames.chart_to_basis), -1, -2)
    grads = upper_inv_t @ partials
    dupin_grads = frames.du @ grads

    weight = (surf.weights * surf.area_density * frames.support_at_normal).ravel()
    F = values.reshape(-1, basis_size)
    G = grads.reshape(-1, n - 1, basis_size)
    DG = dupin_grads.reshape(-1, n - 1, basis_size)
    h = frames.support_at_normal.ravel()
    b_sq = frames.B_m_sq.ravel()

    mass = np.einsum('g,gi,gj->ij', weight, F, F)
    form = np.einsum('g,gi,gj->ij', -weight * b_sq, F, F) + np.einsum('g,gai,gaj->ij', weight * h, G, DG)
    mass = 0.5 * (mass + mass.T)
    form = 0.5 * (form + form.T)

    condition = float(np.linalg.cond(mass))
    if not np.isfinite(condition) or condition > max_condition:
        raise BasisDegeneracyError(
            f"Mass matrix is numerically singular (condition {condition:.3e}); lower the basis size below {basis_size}"
        )
    try:
        eigenvalues, vectors = linalg.eigh(form, mass)
    except linalg.LinAlgError as e:
        raise BasisDegeneracyError(f"Generalized eigenproblem failed ({e}); lower the basis size below {basis_size}")

    leading = vectors[np.argmax(np.abs(vectors) > 1e-12, axis=0), np.arange(basis_size)]
    vectors = vectors * np.where(leading < 0.0, -1.0, 1.0)

    q_norm = float(np.linalg.norm(form, 2))
    residual = float(np.max(np.linalg.norm(form @ vectors - (mass @ vectors) * eigenvalues, axis=0)))
    residual /= max(q_norm, 1e-300)
    near_zero = int(np.count_nonzero(np.abs(eigenvalues) <= tolerances.kernel * q_norm))

    report = SpectrumReport(
        eigenvalues=eigenvalues,
        coefficients=vectors,
        basis_labels=labels,
        basis_values=values,
        mass_condition=condition,
        residual=residual,
        q_norm=q_norm,
        near_zero_count=near_zero,
        projection_magnitudes=projections,
    )
    logger.info(
        f"Stability spectrum with {basis_size} basis functions: lowest {eigenvalues[:min(5, basis_size)].round(8).tolist()}, "
        f"cond(M) {condition:.3e}, residual {residual:.3e}"
    )
    return report


def kernel_subspace_angle(frames: FrameSet, report: SpectrumReport, count: Optional[int] = None) -> float:
    """
    Largest principal angle between the lowest eigenfunctions and the translation components.

    Angles are measured in L2(d omega) after mean-zero projection.
    """
    n = frames.dimension
    count = count or n
    sqrt_weight = np.sqrt(frames.surf.weights * frames.surf.area_density * frames.support_at_normal).ravel()
    translations = []
    for axis in range(n):
        direction = np.zeros(n)
        direction[axis] = 1.0
        f, _ = project_mean_zero(ScalarField.translation_component(frames, direction), frames)
        translations.append(f.values.ravel() * sqrt_weight)
    eigenfunctions = [report.eigenfunction_values(k).ravel() * sqrt_weight for k in range(count)]
    return float(np.max(linalg.subspace_angles(np.stack(translations, axis=-1), np.stack(eigenfunctions, axis=-1))))
