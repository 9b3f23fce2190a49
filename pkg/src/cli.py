"""Command-line front end: runs geometry computations and writes JSON/CSV reports."""

import argparse
import csv
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from src.body import (
    BodyValidationError,
    ConvexBody,
    InvalidBodyError,
    InvalidDirectionError,
    NotPositivelyCurvedError,
    body_from_spec,
    direction_grid,
    validate_body,
)
from src.frames import FrameConsistencyError, FrameSet, check_drho_identity, compute_frames, dump_frames_csv, frames_summary
from src.functionals import EmbeddingRequiredError, functional_report, isoperimetric_check
from src.surface import DegenerateChartError, InvalidParameterError, SampledSurface, chart_from_spec, sample
from src.utils.config import (
    SpecError,
    Tolerances,
    load_json_spec,
    load_tolerances,
    parse_body_spec,
    parse_resolution,
    parse_surface_spec,
    parse_variation_spec,
)
from src.utils.logger import close_logger, setup_logger
from src.variation import (
    BasisDegeneracyError,
    ScalarField,
    VariationError,
    VariationSpec,
    cmc_stability_certificate,
    default_reference_curvature,
    delta_m_divergence_residual,
    delta_m_self_adjointness,
    fd_functional_derivative,
    first_variation_formula,
    first_variation_general,
    kernel_subspace_angle,
    laplacian_rho_check,
    minkowski_identity_residual,
    project_mean_zero,
    second_variation_divergence_form,
    second_variation_gradient_form,
    stability_spectrum,
    variation_from_spec,
)


COMMANDS = ("body-info", "surface-report", "functionals", "variation-check", "identity-suite", "stability")
RANDOM_FIELD_COUNT = 5
EIGENFUNCTION_COUNT = 10

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INPUT_ERROR = 2
EXIT_INTERRUPTED = 130

INPUT_ERRORS = (SpecError, InvalidParameterError, InvalidBodyError, InvalidDirectionError, VariationError)
CHECK_ERRORS = (
    FrameConsistencyError,
    BasisDegeneracyError,
    DegenerateChartError,
    NotPositivelyCurvedError,
    BodyValidationError,
    EmbeddingRequiredError,
)


@dataclass
class RunConfig:
    """Validated command-line configuration."""

    command: str
    body_path: str
    out_dir: str = "out"
    surface_path: Optional[str] = None
    variation_path: Optional[str] = None
    resolution: Optional[Tuple[int, ...]] = None
    basis_size: int = 25
    seed: int = 0
    tol_scale: float = 1.0
    env_path: Optional[str] = ".env"
    log_file: Optional[str] = None
    grid_resolution: int = 32

    def validate(self):
        """
        Check paths and ranges.

        Raises:
            SpecError: If a required path is missing or the output directory is not writable
        """
        if not Path(self.body_path).exists():
            raise SpecError(f"Body spec not found: {self.body_path}")
        needs_surface = self.command not in ("body-info",)
        if needs_surface and not self.surface_path:
            raise SpecError(f"Command {self.command} needs --surface")
        if self.surface_path and not Path(self.surface_path).exists():
            raise SpecError(f"Surface spec not found: {self.surface_path}")
        if self.command == "variation-check" and not self.variation_path:
            raise SpecError("Command variation-check needs --variation")
        if self.variation_path and not Path(self.variation_path).exists():
            raise SpecError(f"Variation spec not found: {self.variation_path}")
        if self.tol_scale <= 0:
            raise SpecError(f"--tol-scale must be positive, got {self.tol_scale}")
        if self.basis_size < 1:
            raise SpecError(f"--basis must be positive, got {self.basis_size}")

        out = Path(self.out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise SpecError(f"Output directory {out} cannot be created: {e}")
        if not os.access(out, os.W_OK):
            raise SpecError(f"Output directory {out} is not writable")


@dataclass
class CheckResult:
    """Outcome of one identity check."""

    name: str
    value: Optional[float]
    tolerance: float
    passed: bool
    applicable: bool = True
    detail: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class SuiteReport:
    """Pass/fail table of the identity suite."""

    body: str
    surface: str
    resolution: List[int]
    checks: List[CheckResult] = field(default_factory=list)
    tolerances: Dict[str, float] = field(default_factory=dict)

    def add(self, name: str, value: Optional[float], tolerance: float, passed: Optional[bool] = None, detail: str = ""):
        if passed is None:
            passed = value is not None and bool(value <= tolerance)
        self.checks.append(CheckResult(name, None if value is None else float(value), tolerance, bool(passed), True, detail))

    def skip(self, name: str, tolerance: float, detail: str):
        self.checks.append(CheckResult(name, None, tolerance, True, False, detail))

    @property
    def passed(self) -> bool:
        return all(check.passed for check in self.checks)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'body': self.body,
            'surface': self.surface,
            'resolution': self.resolution,
            'passed': self.passed,
            'checks': [check.to_dict() for check in self.checks],
            'tolerances': self.tolerances,
        }

    def save_to_file(self, filepath: str):
        _write_json(filepath, self.to_dict())

    def print_table(self):
        print(f"\n{'check':<34} {'value':>14} {'tolerance':>11}  status")
        print("-" * 70)
        for check in self.checks:
            value = "-" if check.value is None else f"{check.value:.3e}"
            status = "n/a" if not check.applicable else ("PASS" if check.passed else "FAIL")
            print(f"{check.name:<34} {value:>14} {check.tolerance:>11.1e}  {status}")
        print("-" * 70)
        print(f"Overall: {'PASS' if self.passed else 'FAIL'}")


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def _write_json(filepath, data: Dict[str, Any]):
    with open(filepath, 'w', encoding='utf-8') as f:
        json.dump(_jsonable(data), f, indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

def load_body(config: RunConfig) -> ConvexBody:
    return body_from_spec(parse_body_spec(load_json_spec(config.body_path)))


def load_surface(config: RunConfig, body: ConvexBody) -> SampledSurface:
    chart = chart_from_spec(parse_surface_spec(load_json_spec(config.surface_path)), body)
    return sample(chart, config.resolution)


def load_tolerances_for(config: RunConfig) -> Tolerances:
    return load_tolerances(config.env_path, config.tol_scale)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_body_info(config: RunConfig) -> int:
    """Validate the body; write report.json and the Wulff-shape point cloud wulff.csv."""
    body = load_body(config)
    report = validate_body(body, grid_resolution=config.grid_resolution)
    out = Path(config.out_dir)
    report.save_to_file(str(out / "report.json"))

    directions = direction_grid(body.dimension, config.grid_resolution)
    points = body.inverse_gauss(directions)
    axes = 'xyz'[:body.dimension]
    with open(out / "wulff.csv", 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow([f'nu_{a}' for a in axes] + [f'{a}' for a in axes])
        for nu, point in zip(directions, points):
            writer.writerow([f"{v:.17g}" for v in np.concatenate([nu, point])])

    print(f"Body: {body.describe()}")
    print(f"Min support: {report.min_support:.6g}  Min Hessian eigenvalue: {report.min_hessian_eigenvalue:.6g}")
    print(f"Validation: {'PASS' if report.passed else 'FAIL'}")
    for failure in report.failures:
        print(f"  - {failure}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_surface_report(config: RunConfig) -> int:
    """Frames summary, functionals and frames.csv for the configured pair."""
    tolerances = load_tolerances_for(config)
    body = load_body(config)
    surf = load_surface(config, body)
    frames = compute_frames(body, surf, tolerances)
    summary = frames_summary(frames, tolerances)
    functionals = functional_report(body, surf, frames)

    out = Path(config.out_dir)
    _write_json(out / "report.json", {
        'body': body.describe(),
        'surface': surf.chart.describe(),
        'resolution': list(surf.resolution),
        'frames': summary,
        'functionals': functionals.to_dict(),
        'tolerances': tolerances.to_dict(),
    })
    dump_frames_csv(frames, out / "frames.csv")

    print(f"Surface: {surf.chart.describe()} at {surf.resolution}")
    print(f"lambda in [{summary['lambda_min']:.10g}, {summary['lambda_max']:.10g}]")
    print(f"H_m in [{summary['H_m_min']:.10g}, {summary['H_m_max']:.10g}]  umbilic fraction {summary['umbilic_fraction']:.4f}")
    print(f"A_m = {functionals.area_minkowski:.12g}  V = {functionals.volume:.12g}  "
          f"ratio = {functionals.isoperimetric_ratio:.12g}")
    return EXIT_OK


def cmd_functionals(config: RunConfig) -> int:
    """FunctionalReport as report.json plus a one-row functionals.csv."""
    tolerances = load_tolerances_for(config)
    body = load_body(config)
    surf = load_surface(config, body)
    frames = compute_frames(body, surf, tolerances)
    report = functional_report(body, surf, frames, H_m_ref=default_reference_curvature(frames))
    data = report.to_dict()

    out = Path(config.out_dir)
    report.save_to_file(str(out / "report.json"))
    with open(out / "functionals.csv", 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        keys = sorted(data)
        writer.writerow(keys)
        writer.writerow(["" if data[k] is None else f"{data[k]:.17g}" for k in keys])

    for key in sorted(data):
        print(f"{key}: {data[key]}")
    return EXIT_OK


def _relative(a: float, b: float, scale: float) -> float:
    return abs(a - b) / max(scale, 1e-300)


def _second_variation_scale(frames: FrameSet, f: ScalarField) -> float:
    """Integral of |-B_m^2 f^2| + <eta, xi> <grad f, du grad f>; the natural size of either form."""
    grad = f.orthonormal_gradient(frames)
    energy = np.einsum('...i,...ij,...j->...', grad, frames.du, grad)
    return frames.integrate_omega(frames.B_m_sq * f.values ** 2 + frames.support_at_normal * energy)


def cmd_variation_check(config: RunConfig) -> int:
    """Finite-difference derivatives vs analytic formulas for one variation spec; writes variation.json."""
    tolerances = load_tolerances_for(config)
    body = load_body(config)
    surf = load_surface(config, body)
    frames = compute_frames(body, surf, tolerances)
    parsed = parse_variation_spec(load_json_spec(config.variation_path))
    spec = variation_from_spec(parsed, frames)
    n = surf.dimension

    results: Dict[str, Any] = {'variation': spec.describe(), 'orders': parsed['orders']}
    passed = True
    if 1 in parsed['orders']:
        fd_area, fd_error = fd_functional_derivative(body, frames, spec, "A_m", 1)
        fd_volume, _ = fd_functional_derivative(body, frames, spec, "V", 1)
        W, _ = spec.velocity(frames)
        formula = first_variation_general(frames, surf, W)
        scale = (n - 1) * frames.integrate_omega(np.abs(frames.H_m * np.sum(W * frames.xi, axis=-1) / frames.support_at_normal))
        mismatch = _relative(formula, fd_area, scale)
        ok = mismatch <= tolerances.first_variation
        passed &= ok
        results['first_order'] = {
            'fd_A_m': fd_area, 'fd_A_m_error': fd_error, 'fd_V': fd_volume,
            'formula_A_m': formula, 'relative_mismatch': mismatch, 'passed': ok,
        }

    if 2 in parsed['orders']:
        if spec.kind != 'birkhoff_normal':
            results['second_order'] = {'applicable': False, 'reason': "second variation formulas need a Birkhoff-normal variation"}
        else:
            f, magnitude = project_mean_zero(spec.field, frames)
            projected = VariationSpec('birkhoff_normal', field=f, t_steps=spec.t_steps)
            gradient_form = second_variation_gradient_form(frames, surf, f)
            divergence_form = second_variation_divergence_form(frames, surf, f)
            scale = _second_variation_scale(frames, f)
            forms_mismatch = _relative(gradient_form, divergence_form, scale)
            ok = forms_mismatch <= tolerances.second_variation_forms
            entry = {
                'gradient_form': gradient_form, 'divergence_form': divergence_form,
                'forms_relative_mismatch': forms_mismatch, 'projection_magnitude': magnitude,
            }
            spread = float(np.max(frames.H_m) - np.min(frames.H_m))
            if spread <= tolerances.cmc_spread:
                fd_j, fd_error = fd_functional_derivative(body, frames, projected, "J_m", 2)
                fd_mismatch = _relative(gradient_form, fd_j, scale)
                ok &= fd_mismatch <= tolerances.second_variation_fd
                entry.update({'fd_J_m': fd_j, 'fd_J_m_error': fd_error, 'fd_relative_mismatch': fd_mismatch})
            else:
                entry['fd_J_m'] = None
            entry['passed'] = ok
            passed &= ok
            results['second_order'] = entry

    results['passed'] = passed
    results['tolerances'] = tolerances.to_dict()
    _write_json(Path(config.out_dir) / "variation.json", results)
    print(json.dumps(_jsonable(results), indent=2, sort_keys=True))
    return EXIT_OK if passed else EXIT_CHECK_FAILED


def run_identity_suite(body: ConvexBody, surf: SampledSurface, tolerances: Tolerances, seed: int = 0) -> SuiteReport:
    """Run every frame, functional and variation check on one body/surface pair."""
    n = surf.dimension
    report = SuiteReport(body.describe(), surf.chart.describe(), list(surf.resolution), tolerances=tolerances.to_dict())
    frames = compute_frames(body, surf, tolerances)
    area = frames.minkowski_area()
    summary = frames_summary(frames, tolerances)

    report.add("frame_tangential", summary['max_tangential_residual'], tolerances.frame_residual)
    report.add("frame_crosscheck", summary['max_crosscheck_residual'], tolerances.frame_crosscheck)
    report.add("frame_self_adjointness", summary['max_self_adjoint_residual'], tolerances.self_adjoint)
    report.add("frame_reconstruction", summary['max_reconstruction_residual'], tolerances.eigen_residual)
    report.add("curvature_inequality", -summary['lemma_margin_min'], tolerances.lemma_inequality)
    report.add("drho_identity", check_drho_identity(frames, surf), tolerances.drho)
    report.add("minkowski_identity", minkowski_identity_residual(frames, surf), tolerances.minkowski_identity)

    fields = [ScalarField.random(surf, seed + k) for k in range(RANDOM_FIELD_COUNT)]
    worst_first = 0.0
    for f in fields:
        fd_value, _ = fd_functional_derivative(body, frames, VariationSpec('birkhoff_normal', field=f), "A_m", 1)
        formula = first_variation_formula(frames, surf, f)
        scale = (n - 1) * frames.integrate_omega(np.abs(frames.H_m * f.values))
        worst_first = max(worst_first, _relative(formula, fd_value, scale))
    report.add("first_variation_vs_fd", worst_first, tolerances.first_variation)

    worst_translation = 0.0
    curvature_scale = (n - 1) * frames.integrate_omega(np.abs(frames.H_m))
    for axis in range(n):
        direction = np.zeros(n)
        direction[axis] = 1.0
        value = first_variation_general(frames, surf, np.broadcast_to(direction, surf.positions.shape))
        worst_translation = max(worst_translation, abs(value) / max(curvature_scale, 1e-300))
    report.add("general_variation_translation", worst_translation, tolerances.general_translation)
    scaling = first_variation_general(frames, surf, surf.positions)
    report.add("general_variation_scaling", _relative(scaling, (n - 1) * area, (n - 1) * area), tolerances.general_scaling)

    cmc = float(np.max(frames.H_m) - np.min(frames.H_m)) <= tolerances.cmc_spread
    worst_forms, worst_fd = 0.0, 0.0
    for f in fields:
        f, _ = project_mean_zero(f, frames)
        gradient_form = second_variation_gradient_form(frames, surf, f)
        scale = _second_variation_scale(frames, f)
        worst_forms = max(worst_forms, _relative(gradient_form, second_variation_divergence_form(frames, surf, f), scale))
        if cmc:
            fd_value, _ = fd_functional_derivative(body, frames, VariationSpec('birkhoff_normal', field=f), "J_m", 2)
            worst_fd = max(worst_fd, _relative(gradient_form, fd_value, scale))
    report.add("second_variation_forms", worst_forms, tolerances.second_variation_forms)
    if cmc:
        report.add("second_variation_vs_fd", worst_fd, tolerances.second_variation_fd)
    else:
        report.skip("second_variation_vs_fd", tolerances.second_variation_fd, "H_m is not constant on this surface")

    rho_check = laplacian_rho_check(frames, surf, tolerances)
    if rho_check['applicable']:
        report.add("laplacian_rho", rho_check['residual'], tolerances.laplacian_rho)
    else:
        report.skip("laplacian_rho", tolerances.laplacian_rho, rho_check['reason'])

    report.add("delta_m_self_adjointness", delta_m_self_adjointness(frames, fields[0], fields[1]), tolerances.delta_m_self_adjoint)
    report.add("delta_m_divergence", delta_m_divergence_residual(frames, fields[0]), tolerances.divergence)

    if surf.chart.embedded:
        row = isoperimetric_check(body, [surf], tolerances=tolerances)[0]
        report.add("isoperimetric_ratio", 1.0 - row.ratio, tolerances.isoperimetric, passed=row.passed,
                   detail=f"ratio {row.ratio:.15g}")
    else:
        report.skip("isoperimetric_ratio", tolerances.isoperimetric, "surface is not embedded")

    certificate = cmc_stability_certificate(frames, surf, tolerances)
    report.add("stability_deficit_nonnegative", -certificate['deficit'] / area, tolerances.deficit,
               detail=f"deficit {certificate['deficit']:.6e}, umbilic fraction {certificate['umbilic_fraction']:.4f}")
    return report


def cmd_identity_suite(config: RunConfig) -> int:
    """Run all identity checks; exit 0 iff every applicable check passes."""
    tolerances = load_tolerances_for(config)
    body = load_body(config)
    surf = load_surface(config, body)
    report = run_identity_suite(body, surf, tolerances, config.seed)
    report.save_to_file(str(Path(config.out_dir) / "report.json"))
    report.print_table()
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_stability(config: RunConfig) -> int:
    """Stability spectrum: spectrum.json plus eigenfunctions.csv on the grid."""
    tolerances = load_tolerances_for(config)
    body = load_body(config)
    surf = load_surface(config, body)
    frames = compute_frames(body, surf, tolerances)
    spectrum = stability_spectrum(frames, surf, config.basis_size, tolerances)
    certificate = cmc_stability_certificate(frames, surf, tolerances)

    data = spectrum.to_dict()
    data['certificate'] = certificate
    data['surface'] = surf.chart.describe()
    data['body'] = body.describe()
    if data['near_zero_count'] >= body.dimension:
        data['kernel_subspace_angle'] = kernel_subspace_angle(frames, spectrum)
    data['tolerances'] = tolerances.to_dict()

    out = Path(config.out_dir)
    _write_json(out / "spectrum.json", data)

    count = min(EIGENFUNCTION_COUNT, config.basis_size)
    params = [p.ravel() for p in surf.params]
    columns = [spectrum.eigenfunction_values(k).ravel() for k in range(count)]
    names = ['theta'] if surf.topology == 'circle' else (['theta', 's'] if surf.topology == 'sphere' else ['u', 'v'])
    with open(out / "eigenfunctions.csv", 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(names + [f'phi_{k}' for k in range(count)])
        for row in np.stack(params + columns, axis=-1):
            writer.writerow([f"{v:.17g}" for v in row])

    print(f"Lowest eigenvalues: {[round(float(mu), 10) for mu in spectrum.lowest(count)]}")
    print(f"Near-zero eigenvalues: {spectrum.near_zero_count}  cond(M) = {spectrum.mass_condition:.3e}")
    nonnegative = spectrum.eigenvalues[0] >= -tolerances.spectrum_nonnegative * spectrum.q_norm
    print(f"Spectrum nonnegative: {'yes' if nonnegative else 'no'}")
    return EXIT_OK


HANDLERS = {
    "body-info": cmd_body_info,
    "surface-report": cmd_surface_report,
    "functionals": cmd_functionals,
    "variation-check": cmd_variation_check,
    "identity-suite": cmd_identity_suite,
    "stability": cmd_stability,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Minkowski surface geometry: frames, functionals, variations and stability"
    )
    subparsers = parser.add_subparsers(dest='command', required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--body', required=True, help='Path to body spec (JSON)')
    common.add_argument('--surface', default=None, help='Path to surface spec (JSON)')
    common.add_argument('--res', default=None, help='Resolution N or N,M (each in [8, 1024])')
    common.add_argument('--out', default='out', help='Output directory (default: out)')
    common.add_argument('--tol-scale', type=float, default=1.0, help='Multiply every tolerance by this factor')
    common.add_argument('--env', default='.env', help='Dotenv file with MINKOWSKI_TOL_<NAME> overrides (default: .env)')
    common.add_argument('--log-file', default=None, help='Path to log file (default: <out>/run.log)')
    common.add_argument('--seed', type=int, default=0, help='Seed of the pseudorandom test fields (default: 0)')

    for name in COMMANDS:
        sub = subparsers.add_parser(name, parents=[common], help=HANDLERS[name].__doc__.split('\n')[0])
        if name == "stability":
            sub.add_argument('--basis', type=int, default=25, help='Basis size (default: 25)')
        if name == "variation-check":
            sub.add_argument('--variation', required=True, help='Path to variation spec (JSON)')
        if name == "body-info":
            sub.add_argument('--grid', type=int, default=32, help='Validation grid resolution (default: 32)')
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    config = RunConfig(
        command=args.command,
        body_path=args.body,
        out_dir=args.out,
        surface_path=args.surface,
        variation_path=getattr(args, 'variation', None),
        resolution=parse_resolution(args.res) if args.res else None,
        basis_size=getattr(args, 'basis', 25),
        seed=args.seed,
        tol_scale=args.tol_scale,
        env_path=args.env,
        log_file=args.log_file,
        grid_resolution=getattr(args, 'grid', 32),
    )
    config.validate()
    return config


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for CLI; returns the process exit code."""
    args = build_parser().parse_args(argv)

    try:
        config = config_from_args(args)
    except SpecError as e:
        print(f"Input error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR

    logger = setup_logger(log_file=config.log_file or str(Path(config.out_dir) / "run.log"))
    start = time.perf_counter()
    try:
        logger.info(f"Running {config.command}")
        code = HANDLERS[config.command](config)
        logger.info(f"{config.command} finished with exit code {code} in {time.perf_counter() - start:.2f}s")
        return code
    except KeyboardInterrupt:
        print("\n\nRun interrupted by user", file=sys.stderr)
        return EXIT_INTERRUPTED
    except INPUT_ERRORS as e:
        logger.error(f"Input error: {e}")
        print(f"Input error: {e}", file=sys.stderr)
        return EXIT_INPUT_ERROR
    except CHECK_ERRORS as e:
        logger.error(f"{type(e).__name__}: {e}")
        print(f"{type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_CHECK_FAILED
    finally:
        close_logger()


if __name__ == '__main__':
    sys.exit(main())
