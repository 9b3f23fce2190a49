"""Spec-file parsing, tolerance configuration and the package error root."""

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import dotenv_values


class GeometryError(Exception):
    """Base class for every error raised by this package."""
    pass


class SpecError(GeometryError):
    """Exception raised when a body, surface or variation spec cannot be parsed."""
    pass


ENV_PREFIX = "MINKOWSKI_TOL_"

BODY_FAMILIES = ("ball", "ellipsoid", "perturbed_ball")
SURFACE_KINDS = ("round_sphere", "minkowski_sphere", "radial_graph", "torus")
FIELD_KINDS = ("random", "translation_component", "constant")
VARIATION_KINDS = ("birkhoff_normal", "scaling", "translation")

MIN_RESOLUTION = 8
MAX_RESOLUTION = 1024


@dataclass(frozen=True)
class Tolerances:
    """Numeric tolerances of every check; defaults are the acceptance values."""

    direction_unit: float = 1e-8
    frame_residual: float = 1e-6
    frame_crosscheck: float = 1e-6
    self_adjoint: float = 1e-8
    lemma_inequality: float = 1e-10
    umbilic: float = 1e-8
    drho: float = 1e-6
    minkowski_identity: float = 1e-8
    first_variation: float = 1e-6
    general_translation: float = 1e-8
    general_scaling: float = 1e-8
    second_variation_forms: float = 1e-6
    second_variation_fd: float = 1e-5
    laplacian_rho: float = 1e-6
    cmc_spread: float = 1e-6
    isoperimetric: float = 1e-8
    delta_m_self_adjoint: float = 1e-7
    divergence: float = 1e-8
    kernel: float = 1e-5
    spectrum_nonnegative: float = 1e-6
    deficit: float = 1e-9
    eigen_residual: float = 1e-8

    def scaled(self, factor: float) -> "Tolerances":
        """Return a copy with every tolerance multiplied by ``factor``."""
        if factor <= 0:
            raise SpecError(f"Tolerance scale must be positive, got {factor}")
        return replace(self, **{f.name: getattr(self, f.name) * factor for f in fields(self)})

    def to_dict(self) -> Dict[str, float]:
        """Convert tolerances to dictionary."""
        return asdict(self)


def load_tolerances(env_path: Optional[str] = None, scale: float = 1.0) -> Tolerances:
    """
    Build tolerances from defaults, an optional dotenv file and a global scale.

    Overrides are read as ``MINKOWSKI_TOL_<NAME>=value`` lines, e.g.
    ``MINKOWSKI_TOL_DRHO=1e-5``.

    Args:
        env_path: Path to a dotenv file; ignored when None or missing
        scale: Factor applied to every tolerance after overrides

    Returns:
        Tolerances instance

    Raises:
        SpecError: If an override names an unknown tolerance or is not a number
    """
    overrides: Dict[str, float] = {}
    if env_path and Path(env_path).exists():
        known = {f.name for f in fields(Tolerances)}
        for key, value in dotenv_values(env_path).items():
            if not key.startswith(ENV_PREFIX):
                continue
            name = key[len(ENV_PREFIX):].lower()
            if name not in known:
                raise SpecError(f"Unknown tolerance override: {key}")
            try:
                overrides[name] = float(value)
            except (TypeError, ValueError):
                raise SpecError(f"Tolerance override {key} is not a number: {value!r}")

    return replace(Tolerances(), **overrides).scaled(scale)


def load_json_spec(path: Union[str, Path]) -> Dict[str, Any]:
    """
    Read a JSON spec file.

    Args:
        path: Path to the spec file

    Returns:
        Parsed JSON object

    Raises:
        SpecError: If the file is missing, malformed (with line/column) or not an object
    """
    spec_path = Path(path)
    if not spec_path.exists():
        raise SpecError(f"Spec file not found: {spec_path}")

    try:
        data = json.loads(spec_path.read_text(encoding='utf-8'))
    except json.JSONDecodeError as e:
        raise SpecError(
            f"Malformed JSON in {spec_path} at line {e.lineno}, column {e.colno}: {e.msg}"
        )

    if not isinstance(data, dict):
        raise SpecError(f"Spec {spec_path} must contain a JSON object")
    return data


def _require(spec: Dict[str, Any], keys: List[str], what: str) -> None:
    missing = [key for key in keys if key not in spec]
    if missing:
        raise SpecError(f"{what} spec is missing required keys: {', '.join(missing)}")


def _as_float_list(value: Any, what: str) -> List[float]:
    try:
        return [float(v) for v in value]
    except (TypeError, ValueError):
        raise SpecError(f"{what} must be a list of numbers, got {value!r}")


def parse_body_spec(spec: Dict[str, Any]) -> Dict[str, Any]:
    """
    Validate and normalize a body spec.

    Returns:
        Dictionary with keys dimension, family and the family parameters
    """
    _require(spec, ['dimension', 'family'], "Body")
    dimension = spec['dimension']
    if dimension not in (2, 3):
        raise SpecError(f"Body dimension must be 2 or 3, got {dimension!r}")

    family = spec['family']
    if family not in BODY_FAMILIES:
        raise SpecError(f"Unknown body family {family!r}; expected one of {', '.join(BODY_FAMILIES)}")

    parsed: Dict[str, Any] = {'dimension': dimension, 'family': family}
    if family == 'ball':
        parsed['radius'] = float(spec.get('radius', 1.0))
    elif family == 'ellipsoid':
        _require(spec, ['Q'], "Ellipsoid body")
        rows = [_as_float_list(row, "Ellipsoid Q row") for row in spec['Q']]
        if len(rows) != dimension or any(len(row) != dimension for row in rows):
            raise SpecError(f"Ellipsoid Q must be {dimension}x{dimension}")
        parsed['Q'] = rows
    else:
        _require(spec, ['epsilon', 'coeffs'], "Perturbed ball body")
        parsed['radius'] = float(spec.get('radius', 1.0))
        parsed['epsilon'] = float(spec['epsilon'])
        parsed['coeffs'] = _as_float_list(spec['coeffs'], "Perturbation coeffs")
    return parsed


def parse_surface_spec(spec: Dict[str, Any]) -> Dict[str, Any]:
    """
    Validate and normalize a surface spec.

    Returns:
        Dictionary with keys kind, optional dimension and the kind parameters
    """
    _require(spec, ['kind'], "Surface")
    kind = spec['kind']
    if kind not in SURFACE_KINDS:
        raise SpecError(f"Unknown surface kind {kind!r}; expected one of {', '.join(SURFACE_KINDS)}")

    parsed: Dict[str, Any] = {'kind': kind}
    if 'center' in spec:
        parsed['center'] = _as_float_list(spec['center'], "Surface center")
    if kind == 'round_sphere':
        parsed['radius'] = float(spec.get('radius', 1.0))
    elif kind == 'minkowski_sphere':
        parsed['lambda'] = float(spec.get('lambda', 1.0))
    elif kind == 'radial_graph':
        _require(spec, ['coeffs'], "Radial graph")
        parsed['coeffs'] = _as_float_list(spec['coeffs'], "Radial graph coeffs")
        parsed['base'] = float(spec.get('base', 1.0))
    else:
        _require(spec, ['R', 'r'], "Torus")
        parsed['R'] = float(spec['R'])
        parsed['r'] = float(spec['r'])
    return parsed


def parse_variation_spec(spec: Dict[str, Any]) -> Dict[str, Any]:
    """
    Validate and normalize a variation experiment spec.

    Returns:
        Dictionary with keys variation, field (for Birkhoff-normal variations) and orders
    """
    _require(spec, ['variation'], "Variation")
    variation = spec['variation']
    if variation not in VARIATION_KINDS:
        raise SpecError(
            f"Unknown variation {variation!r}; expected one of {', '.join(VARIATION_KINDS)}"
        )

    parsed: Dict[str, Any] = {'variation': variation}
    orders = [int(o) for o in spec.get('orders', [1, 2])]
    if not orders or any(o not in (1, 2) for o in orders):
        raise SpecError(f"Variation orders must be a non-empty subset of [1, 2], got {orders}")
    parsed['orders'] = orders

    if variation == 'translation':
        parsed['v'] = _as_float_list(spec.get('v', [1.0, 0.0, 0.0]), "Translation vector")

    if variation == 'birkhoff_normal':
        _require(spec, ['field'], "Birkhoff-normal variation")
        field_spec = spec['field']
        kind = field_spec.get('kind') if isinstance(field_spec, dict) else None
        if kind not in FIELD_KINDS:
            raise SpecError(f"Unknown field kind {kind!r}; expected one of {', '.join(FIELD_KINDS)}")
        field: Dict[str, Any] = {'kind': kind}
        if kind == 'random':
            field['seed'] = int(field_spec.get('seed', 0))
            field['degree'] = int(field_spec.get('degree', 3))
        elif kind == 'translation_component':
            _require(field_spec, ['v'], "Translation-component field")
            field['v'] = _as_float_list(field_spec['v'], "Field translation vector")
        else:
            field['c'] = float(field_spec.get('c', 1.0))
        parsed['field'] = field
    return parsed


def parse_resolution(text: str) -> Tuple[int, ...]:
    """
    Parse a ``--res`` value such as ``"64,32"`` or ``"128"``.

    Raises:
        SpecError: If any entry is not an integer within [8, 1024]
    """
    try:
        values = tuple(int(part) for part in text.split(',') if part.strip())
    except ValueError:
        raise SpecError(f"Resolution must be comma-separated integers, got {text!r}")

    if not values or len(values) > 2:
        raise SpecError(f"Resolution must have one or two entries, got {text!r}")
    for value in values:
        if not MIN_RESOLUTION <= value <= MAX_RESOLUTION:
            raise SpecError(
                f"Resolution entries must lie in [{MIN_RESOLUTION}, {MAX_RESOLUTION}], got {value}"
            )
    return values
