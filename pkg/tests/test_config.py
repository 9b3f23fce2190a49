"""Unit tests for spec parsing and tolerance configuration."""

import json

import pytest

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


@pytest.fixture
def spec_file(tmp_path):
    """Write a JSON spec and return its path."""
    def write(content, name="spec.json"):
        path = tmp_path / name
        path.write_text(content if isinstance(content, str) else json.dumps(content), encoding='utf-8')
        return str(path)
    return write


class TestLoadJsonSpec:
    """Test cases for reading spec files."""

    def test_load_success(self, spec_file):
        """Test successful parsing of a spec file."""
        data = load_json_spec(spec_file({"dimension": 3, "family": "ball"}))

        assert data == {"dimension": 3, "family": "ball"}

    def test_file_not_found(self):
        """Test error when the spec file doesn't exist."""
        with pytest.raises(SpecError, match="Spec file not found"):
            load_json_spec('nonexistent_spec.json')

    def test_malformed_json_reports_location(self, spec_file):
        """Test malformed JSON names line and column."""
        path = spec_file('{\n  "dimension": 3,\n  "family": \n}')

        with pytest.raises(SpecError, match=r"line 4, column 1"):
            load_json_spec(path)

    def test_non_object(self, spec_file):
        """Test error when the spec is not a JSON object."""
        with pytest.raises(SpecError, match="must contain a JSON object"):
            load_json_spec(spec_file("[1, 2, 3]"))


class TestParseSpecs:
    """Test cases for body, surface and variation spec validation."""

    def test_body_ellipsoid(self):
        """Test ellipsoid spec keeps its matrix."""
        parsed = parse_body_spec({"dimension": 2, "family": "ellipsoid", "Q": [[2, 0], [0, 1]]})

        assert parsed['Q'] == [[2.0, 0.0], [0.0, 1.0]]

    def test_body_missing_keys(self):
        """Test error when required keys are missing."""
        with pytest.raises(SpecError, match="missing required keys: epsilon, coeffs"):
            parse_body_spec({"dimension": 3, "family": "perturbed_ball"})

    def test_body_unknown_family(self):
        """Test error for unknown body families."""
        with pytest.raises(SpecError, match="Unknown body family"):
            parse_body_spec({"dimension": 3, "family": "cube"})

    def test_body_wrong_matrix_shape(self):
        """Test error when Q does not match the dimension."""
        with pytest.raises(SpecError, match="3x3"):
            parse_body_spec({"dimension": 3, "family": "ellipsoid", "Q": [[1, 0], [0, 1]]})

    def test_surface_defaults(self):
        """Test defaults of the surface kinds."""
        assert parse_surface_spec({"kind": "minkowski_sphere"})['lambda'] == 1.0
        assert parse_surface_spec({"kind": "radial_graph", "coeffs": [0.1]})['base'] == 1.0

    def test_surface_torus_requires_radii(self):
        """Test error when a torus lacks its radii."""
        with pytest.raises(SpecError, match="Torus spec is missing"):
            parse_surface_spec({"kind": "torus", "R": 2.0})

    def test_variation_random_field(self):
        """Test parsing of a random-field variation spec."""
        parsed = parse_variation_spec({
            "variation": "birkhoff_normal",
            "field": {"kind": "random", "seed": 7, "degree": 3},
            "orders": [1, 2],
        })

        assert parsed['field'] == {'kind': 'random', 'seed': 7, 'degree': 3}
        assert parsed['orders'] == [1, 2]

    def test_variation_invalid_order(self):
        """Test error for derivative orders other than 1 and 2."""
        with pytest.raises(SpecError, match="orders"):
            parse_variation_spec({"variation": "scaling", "orders": [3]})

    def test_variation_unknown_field(self):
        """Test error for unknown field kinds."""
        with pytest.raises(SpecError, match="Unknown field kind"):
            parse_variation_spec({"variation": "birkhoff_normal", "field": {"kind": "noise"}})


class TestResolution:
    """Test cases for --res parsing."""

    def test_two_entries(self):
        """Test a two-entry resolution."""
        assert parse_resolution("64,32") == (64, 32)

    def test_out_of_range(self):
        """Test error for entries outside [8, 1024]."""
        with pytest.raises(SpecError, match=r"\[8, 1024\]"):
            parse_resolution("4")

    def test_not_integers(self):
        """Test error for non-integer entries."""
        with pytest.raises(SpecError, match="comma-separated integers"):
            parse_resolution("64,abc")


class TestTolerances:
    """Test cases for tolerance configuration."""

    def test_defaults(self):
        """Test default tolerances."""
        tolerances = load_tolerances()

        assert tolerances == Tolerances()
        assert tolerances.drho == 1e-6

    def test_env_override_and_scale(self, tmp_path):
        """Test dotenv overrides followed by the global scale."""
        env = tmp_path / ".env"
        env.write_text("MINKOWSKI_TOL_DRHO=1e-5\nOTHER_SETTING=1\n", encoding='utf-8')

        tolerances = load_tolerances(str(env), scale=10.0)

        assert tolerances.drho == pytest.approx(1e-4)
        assert tolerances.kernel == pytest.approx(1e-4)

    def test_unknown_override(self, tmp_path):
        """Test error for overrides of unknown tolerances."""
        env = tmp_path / ".env"
        env.write_text("MINKOWSKI_TOL_NOPE=1\n", encoding='utf-8')

        with pytest.raises(SpecError, match="Unknown tolerance override"):
            load_tolerances(str(env))

    def test_non_positive_scale(self):
        """Test error for a non-positive scale."""
        with pytest.raises(SpecError, match="positive"):
            Tolerances().scaled(0.0)

    def test_to_dict(self):
        """Test tolerances convert to a dictionary."""
        assert Tolerances().to_dict()['deficit'] == 1e-9
