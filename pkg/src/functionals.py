"""Global integral quantities: areas, volumes, mixed volume, isoperimetric ratio and J_m."""

import json
from dataclasses import asdict, dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from src.body import ConvexBody
from src.frames import FrameSet, compute_frames, umbilicity_report
from src.surface import (
    DEFAULT_RESOLUTION,
    DegenerateChartError,
    SampledSurface,
    SurfaceChart,
    make_minkowski_sphere,
    raw_normal,
    sample,
)
from src.utils.config import GeometryError, Tolerances
from src.utils.logger import get_logger


logger = get_logger()


class EmbeddingRequiredError(GeometryError):
    """Raised when an operation defined for domains receives a non-embedded chart."""
    pass


@dataclass
class FunctionalReport:
    """Integral quantities of a surface with respect to a body."""

    area_euclidean: float
    area_minkowski: float
    volume: float
    body_volume: float
    mixed_volume: float
    isoperimetric_ratio: float
    J_m: Optional[float] = None
    H_m_ref: Optional[float] = None
    quadrature_error: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        """Convert report to dictionary."""
        return asdict(self)

    def save_to_file(self, filepath: str):
        """Save report to JSON file."""
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)


def ellipsoid_volume(Q: Sequence[Sequence[float]]) -> float:
    """Closed-form volume of the ellipsoid with support sqrt(v^T Q v)."""
    Q = np.asarray(Q, dtype=float)
    root = float(np.sqrt(np.linalg.det(Q)))
    if Q.shape[0] == 2:
        return np.pi * root
    return 4.0 * np.pi / 3.0 * root


def _matching_resolution(body: ConvexBody, surf: Optional[SampledSurface]) -> Tuple[int, ...]:
    if surf is not None and surf.topology in ("circle", "sphere"):
        return surf.resolution
    return DEFAULT_RESOLUTION[body.dimension]


def body_volume(body: ConvexBody, resolution: Optional[Tuple[int, ...]] = None) -> float:
    """
    vol(B) computed by quadrature on the boundary of B, cached per resolution.

    Args:
        body: Convex body
        resolution: Sampling resolution of the boundary chart
    """
    resolution = tuple(resolution or DEFAULT_RESOLUTION[body.dimension])

    def compute() -> float:
        volume = sample(make_minkowski_sphere(body), resolution).enclosed_volume()
        logger.debug(f"vol({body.describe()}) = {volume:.15g} at {resolution}")
        return volume

    return body.cached_volume(resolution, compute)


def surface_functionals(
    body: ConvexBody,
    positions: np.ndarray,
    first_partials: np.ndarray,
    weights: np.ndarray,
    orientation: int = 1,
) -> Dict[str, float]:
    """
    Area, Minkowski area and enclosed volume from raw grid data.

    Uses the raw normal N = |N| xi and the 1-homogeneity of the support,
    h_B(N) = h_B(xi) |N|, so no frames are needed. This is the evaluation path
    for deformed surfaces along variations.

    Raises:
        DegenerateChartError: If the raw normal vanishes at some node
    """
    normal = orientation * raw_normal(first_partials)
    density = np.linalg.norm(normal, axis=-1)
    scale = max(float(np.max(density)), 1e-300)
    worst = int(np.argmin(density))
    if density.flat[worst] <= 1e-12 * scale:
        raise DegenerateChartError(
            f"Deformed surface is not an immersion at node {np.unravel_index(worst, density.shape)}"
        )
    n = positions.shape[-1]

    def total(values):
        return float(np.sum(np.ascontiguousarray(values * weights).ravel()))

    return {
        'area_euclidean': total(density),
        'area_minkowski': total(body.support_extension(normal)),
        'volume': total(np.sum(positions * normal, axis=-1)) / n,
    }


def functional_report(
    body: ConvexBody,
    surf: SampledSurface,
    frames: Optional[FrameSet] = None,
    H_m_ref: Optional[float] = None,
) -> FunctionalReport:
    """
    Compute the integral quantities of a surface.

    Args:
        body: Convex body
        surf: Sampled surface
        frames: Frames of ``surf``; computed when omitted
        H_m_ref: Reference mean curvature for J_m; J_m is omitted when None

    Returns:
        FunctionalReport
    """
    frames = frames if frames is not None else compute_frames(body, surf)
    n = surf.dimension
    area = surf.area()
    area_minkowski = frames.minkowski_area()
    volume = surf.enclosed_volume()
    vol_body = body_volume(body, _matching_resolution(body, surf))
    mixed = area_minkowski / n

    if volume > 0:
        ratio = mixed / (volume ** ((n - 1) / n) * vol_body ** (1.0 / n))
    else:
        ratio = float('nan')

    J_m = None
    if H_m_ref is not None:
        J_m = area_minkowski - (n - 1) * H_m_ref * volume

    report = FunctionalReport(
        area_euclidean=area,
        area_minkowski=area_minkowski,
        volume=volume,
        body_volume=vol_body,
        mixed_volume=mixed,
        isoperimetric_ratio=ratio,
        J_m=J_m,
        H_m_ref=H_m_ref,
        quadrature_error=surf.quadrature_error_estimate(),
    )
    logger.debug(f"Functionals of {surf.chart.describe()}: {report.to_dict()}")
    return report


@dataclass
class IsoperimetricRow:
    """One row of the isoperimetric table."""

    kind: str
    surface: str
    ratio: float
    passed: bool
    equality: bool
    minkowski_sphere: bool

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def isoperimetric_check(
    body: ConvexBody,
    surfaces: Sequence[Union[SurfaceChart, SampledSurface]],
    resolution: Optional[Tuple[int, ...]] = None,
    tolerances: Optional[Tolerances] = None,
) -> List[IsoperimetricRow]:
    """
    Evaluate the mixed-volume isoperimetric ratio on embedded surfaces.

    Equality cases (|ratio - 1| within tolerance) are confirmed as Minkowski
    spheres by requiring every node umbilic and constant H_m.

    Raises:
        EmbeddingRequiredError: If a chart is not embedded
    """
    tolerances = tolerances or Tolerances()
    rows = []
    for item in surfaces:
        surf = item if isinstance(item, SampledSurface) else sample(item, resolution)
        chart = surf.chart
        if not chart.embedded:
            raise EmbeddingRequiredError(
                f"Isoperimetric check needs an embedded surface, got {chart.describe()}"
            )

        frames = compute_frames(body, surf, tolerances)
        report = functional_report(body, surf, frames)
        ratio = report.isoperimetric_ratio
        equality = abs(ratio - 1.0) <= tolerances.isoperimetric

        umbilic = umbilicity_report(frames, tolerances.umbilic)
        spread = float(np.max(frames.H_m) - np.min(frames.H_m))
        sphere_like = umbilic['umbilic_fraction'] == 1.0 and spread <= tolerances.cmc_spread

        row = IsoperimetricRow(
            kind=chart.kind,
            surface=chart.describe(),
            ratio=ratio,
            passed=ratio >= 1.0 - tolerances.isoperimetric and (not equality or sphere_like),
            equality=equality,
            minkowski_sphere=sphere_like,
        )
        if equality and not sphere_like:
            logger.warning(f"Isoperimetric equality on {chart.describe()} which is not a Minkowski sphere")
        rows.append(row)
        logger.debug(f"Isoperimetric ratio of {chart.describe()}: {ratio:.15g}")
    return rows
