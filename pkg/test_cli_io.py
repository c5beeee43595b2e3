"""
File schemas, z-specs and the click commands end to end.
"""
import json

import numpy as np
import pytest
from click.testing import CliRunner

import config
import suites
from app import cli
from cli_io import (
    decode_complex,
    decode_matrix,
    encode_matrix,
    load_operator,
    operator_from_dict,
    operator_to_dict,
    parse_z_spec,
    read_json,
    save_operator,
    write_json,
)
from errors import ParseError, StepFailure, UsageError, ValidationError
from jacobi_forward import JacobiCoeffs
from jacobi_inverse import sample_geometry


@pytest.fixture(autouse=True)
def restore_settings(monkeypatch):
    """Global CLI options write into config; undo after each test"""
    monkeypatch.setattr(config, "CONTOUR_NODES", config.CONTOUR_NODES)
    monkeypatch.setattr(config, "CONTOUR_TOL", config.CONTOUR_TOL)


@pytest.fixture
def runner():
    return CliRunner(mix_stderr=False)


def invoke(runner, *args):
    result = runner.invoke(cli, [str(a) for a in args])
    record = json.loads(result.stdout) if result.stdout.strip() else None
    return result, record


def test_decode_complex():
    assert decode_complex(2) == 2
    assert decode_complex([1.5, -2]) == 1.5 - 2j
    with pytest.raises(ParseError):
        decode_complex("1+2j")
    with pytest.raises(ParseError):
        decode_complex([True, 0])
    with pytest.raises(ParseError):
        decode_complex([float("nan"), 0])


def test_decode_matrix():
    M = np.array([[1, 2j], [-2j, 3]])
    assert np.array_equal(decode_matrix(encode_matrix(M)), M)
    with pytest.raises(ParseError, match="square"):
        decode_matrix([[1, 2], [3]])
    with pytest.raises(ParseError, match="2x2"):
        decode_matrix([[1]], m=2)


def test_write_json_is_atomic(workdir):
    path = write_json(workdir / "out" / "report.json", {"value": [1, 2]})
    assert read_json(path) == {"value": [1, 2]}
    assert [p.name for p in path.parent.iterdir()] == ["report.json"]


def test_read_json_errors(workdir):
    (workdir / "broken.json").write_text("{not json", encoding="utf-8")
    (workdir / "list.json").write_text("[1, 2]", encoding="utf-8")
    with pytest.raises(ParseError):
        read_json(workdir / "broken.json")
    with pytest.raises(ParseError):
        read_json(workdir / "list.json")
    with pytest.raises(UsageError):
        read_json(workdir / "missing.json")


def test_operator_file_roundtrip(workdir, jacobi_2x2, schrodinger_bump):
    save_operator(workdir / "jacobi.json", jacobi_2x2)
    again = load_operator(workdir / "jacobi.json")
    assert (again.k_min, again.k_max) == (jacobi_2x2.k_min, jacobi_2x2.k_max)
    for k in range(jacobi_2x2.k_min, jacobi_2x2.k_max + 1):
        assert np.array_equal(again.A_at(k), jacobi_2x2.A_at(k))
        assert np.array_equal(again.B_at(k), jacobi_2x2.B_at(k))
    model = operator_from_dict(operator_to_dict(schrodinger_bump))
    assert np.array_equal(model.Q, schrodinger_bump.Q)


def test_operator_schema_errors():
    with pytest.raises(ParseError, match="kind"):
        operator_from_dict({"kind": "lattice", "m": 1})
    with pytest.raises(ParseError, match="m must"):
        operator_from_dict({"kind": "jacobi", "m": 0, "coefficients": []})
    bad_grid = {"kind": "schrodinger", "m": 1, "grid": {"x0": 0, "R": 1, "h": 0.3}, "Q": {"bumps": []}}
    with pytest.raises(ValidationError):
        operator_from_dict(bad_grid)


def test_parse_z_spec():
    zs, geometry = parse_z_spec("ray:lo=1,hi=100,n=5")
    assert geometry["geometry"] == "ray" and len(zs) == 5
    assert sample_geometry(zs) == "ray"
    zs, geometry = parse_z_spec("ring:radius=4,n=16")
    assert geometry == {"geometry": "ring", "radius": 4.0, "count": 16}
    assert np.allclose(np.abs(zs), 4.0)
    zs, _ = parse_z_spec("list:1j; 2+0.5j")
    assert list(zs) == [1j, 2 + 0.5j]


@pytest.mark.parametrize("spec, error", [
    ("disk:radius=2", ParseError),
    ("ray:lo=1,top=5", ParseError),
    ("ray:lo=5,hi=1", ValidationError),
    ("list:1j;1j", ValidationError),
    ("list:", ParseError),
])
def test_parse_z_spec_rejects(spec, error):
    with pytest.raises(error):
        parse_z_spec(spec)


def test_forward_then_invert(runner, workdir, demo_dir, jacobi_2x2):
    result, record = invoke(runner, "forward", demo_dir / "jacobi_2x2.json", "--z", "ring:radius=8,n=32",
                            "--site", 0, "-o", "samples.json")
    assert result.exit_code == 0, result.stdout
    assert record == {"success": True, "samples": 32, "out": "samples.json"}

    result, record = invoke(runner, "invert", "samples.json", "--case", "ii", "-o", "report.json")
    assert result.exit_code == 0, result.stdout
    assert record["valid_B_range"] == [-4, 4]
    report = read_json("report.json")
    assert report["provenance"]["tool"] == "weyl-inverse"
    for row in report["coefficients"]:
        if "B" in row and -4 <= row["k"] <= 4:
            assert np.linalg.norm(decode_matrix(row["B"]) - jacobi_2x2.B_at(row["k"]), 2) <= 1e-6
    assert (workdir / "logs").is_dir()


def test_forward_then_invert_on_a_ray(runner, workdir, demo_dir, jacobi_2x2):
    result, _ = invoke(runner, "forward", demo_dir / "jacobi_2x2.json", "--z", "ray:lo=10,hi=1e5,n=12",
                       "--site", 0, "-o", "samples.json")
    assert result.exit_code == 0, result.stdout
    result, record = invoke(runner, "invert", "samples.json", "--case", "i", "-o", "report.json")
    assert result.exit_code == 0, result.stdout
    assert record["valid_A_range"][0] <= 0 <= record["valid_A_range"][1]
    assert record["valid_B_range"][0] <= 0 <= record["valid_B_range"][1]
    report = read_json("report.json")
    assert report["metadata"]["geometry"] == "ray"
    rows = {row["k"]: row for row in report["coefficients"]}
    assert np.linalg.norm(decode_matrix(rows[0]["A"]) - jacobi_2x2.A_at(0), 2) <= 1e-6
    assert np.linalg.norm(decode_matrix(rows[0]["B"]) - jacobi_2x2.B_at(0), 2) <= 1e-6
    for k, row in rows.items():
        if "B" in row:
            assert np.linalg.norm(decode_matrix(row["B"]) - jacobi_2x2.B_at(k), 2) <= 10 * config.RAY_LEVEL_TOL


def test_invert_rejects_scattered_points(runner, workdir, demo_dir):
    result, _ = invoke(runner, "forward", demo_dir / "jacobi_2x2.json", "--z", "list:2j;3+1j;-2+2j;10j;-7+0.5j",
                       "--site", 0, "-o", "samples.json")
    assert result.exit_code == 0, result.stdout
    result, record = invoke(runner, "invert", "samples.json", "--case", "i", "-o", "report.json")
    assert result.exit_code == 2
    assert record["error"] == "ValidationError"
    assert not (workdir / "report.json").exists()


def test_invert_case_iii_needs_hints(runner, workdir, demo_dir):
    invoke(runner, "forward", demo_dir / "jacobi_2x2.json", "--z", "ring:n=8", "--site", 0, "-o", "samples.json")
    result, record = invoke(runner, "invert", "samples.json", "--case", "iii", "-o", "report.json")
    assert result.exit_code == 2
    assert record["success"] is False and record["error"] == "UsageError"
    assert not (workdir / "report.json").exists()


def test_parse_error_exit_code(runner, workdir):
    (workdir / "op.json").write_text('{"kind": "jacobi", "m": 1, "coefficients": [{"k": "zero"}]}', encoding="utf-8")
    result, record = invoke(runner, "forward", "op.json", "--z", "list:1j", "--site", 0, "-o", "s.json")
    assert result.exit_code == 2
    assert record["error"] == "ParseError"


def test_verify_free_operator_passes(runner, workdir, demo_dir):
    result, record = invoke(runner, "verify", demo_dir / "free_jacobi.json", "-o", "verify.json")
    assert result.exit_code == 0, result.stdout
    assert record["passed"] and not record["failed"]
    names = {c["name"] for c in record["checks"]}
    assert {"bound", "riccati", "wronskian", "oracle", "roundtrip"} <= names


def test_verify_reports_bound_violation(runner, workdir, jacobi_2x2):
    loose = JacobiCoeffs.from_maps(*jacobi_2x2.to_maps(), m=2, bound=0.5)
    save_operator("loose.json", loose)
    result, record = invoke(runner, "verify", "loose.json", "--suite", "bound")
    assert result.exit_code == 1
    assert record["failed"] == ["bound"]


def test_verify_unknown_suite(runner, workdir, demo_dir):
    result, record = invoke(runner, "verify", demo_dir / "free_jacobi.json", "--suite", "energy")
    assert result.exit_code == 2
    assert record["error"] == "UsageError"


def test_verify_records_failed_evolution(runner, workdir, demo_dir, monkeypatch):
    def failing(mdl, zs):
        raise StepFailure("step size underflow")

    monkeypatch.setattr(suites, "evolve_many", failing)
    result, record = invoke(runner, "verify", demo_dir / "schrodinger_bump.json", "--suite", "riccati")
    assert result.exit_code == 1
    assert record["failed"] == ["evolution"]


def test_continuum_check_errors_become_failed_records(schrodinger_bump, monkeypatch):
    def failing(mdl, fld):
        raise StepFailure("residual integration failed")

    monkeypatch.setattr(suites, "riccati_residual_schrodinger", failing)
    checks = suites.run_suite(schrodinger_bump, "riccati")
    assert [c["name"] for c in checks] == ["riccati"]
    assert checks[0]["passed"] is False
    assert checks[0]["detail"].startswith("StepFailure")


def test_continuum_forward_then_invert(runner, workdir, demo_dir):
    result, record = invoke(runner, "continuum-forward", demo_dir / "schrodinger_bump.json",
                            "--z", "list:1j;2+1j", "--point", 0.5, "-o", "g.json")
    assert result.exit_code == 0, result.stdout
    assert record["x"] == pytest.approx(0.5)
    result, record = invoke(runner, "continuum-invert", "g.json", "-o", "m.json")
    assert result.exit_code == 0, result.stdout
    assert record["pairs"] == 2
    assert record["reference_gap"] <= 1e-7


def test_continuum_forward_rejects_offgrid_point(runner, workdir, demo_dir):
    result, record = invoke(runner, "continuum-forward", demo_dir / "dirac_bump.json",
                            "--z", "list:2j", "--point", 0.013, "-o", "g.json")
    assert result.exit_code == 2
    assert record["error"] == "ValidationError"


def test_probe_local_on_lattice(runner, workdir, demo_dir, jacobi_2x2):
    A, B = jacobi_2x2.to_maps()
    B = dict(B)
    B[-2] = B[-2] + 0.5 * np.eye(2)
    save_operator("other.json", JacobiCoeffs.from_maps(A, B, m=2))
    result, record = invoke(runner, "probe-local", demo_dir / "jacobi_2x2.json", "other.json",
                            "--z", "ray:lo=10,hi=1000,n=12", "--site", 0, "--mode", "minus", "-o", "probe.json")
    assert result.exit_code == 0, result.stdout
    assert record["order"] == 4
    assert record["windows"]["B_minus"] == [-1, 0]


def test_local_agreement_identical_lattices_are_unbounded(runner, workdir, demo_dir):
    path = demo_dir / "jacobi_2x2.json"
    result, record = invoke(runner, "probe-local", path, path, "--z", "ray:lo=10,hi=1000,n=12",
                            "--site", 0, "-o", "local.json")
    assert result.exit_code == 0, result.stdout
    assert record["n_est"] is None
    assert record["windows"] == {"A_minus": "unbounded", "B_minus": "unbounded"}


def _bump_model(path, bumps):
    data = {
        "kind": "schrodinger",
        "m": 1,
        "grid": {"x0": 0.0, "R": 3.0, "h": 0.02},
        "Q": {"bumps": [{"center": c, "width": w, "amplitude": [[[amp, 0.0]]]} for c, w, amp in bumps]},
    }
    path.write_text(json.dumps(data), encoding="utf-8")
    return path


def test_local_closeness_grid_models_default_ray(runner, workdir):
    first = _bump_model(workdir / "first.json", [(-0.5, 1.0, 1.0)])
    second = _bump_model(workdir / "second.json", [(-0.5, 1.0, 1.0), (2.0, 0.5, 0.8)])
    result, record = invoke(runner, "probe-local", first, second, "--point", 0.0, "--a", 1.0, "-o", "local.json")
    assert result.exit_code == 0, result.stdout
    assert record["geometry"]["lo"] == config.CLOSENESS_LO
    assert record["geometry"]["hi"] == config.CLOSENESS_HI
    assert record["a_fit"] >= 0.9
    assert record["flags"] == []


def test_probe_local_needs_a_ray(runner, workdir, demo_dir):
    path = demo_dir / "jacobi_2x2.json"
    result, record = invoke(runner, "probe-local", path, path, "--z", "ring:n=8", "--site", 0, "-o", "probe.json")
    assert result.exit_code == 2
    assert record["error"] == "ValidationError"


def test_probe_local_mixed_kinds(runner, workdir, demo_dir):
    result, record = invoke(runner, "probe-local", demo_dir / "jacobi_2x2.json", demo_dir / "schrodinger_bump.json",
                            "--site", 0, "-o", "probe.json")
    assert result.exit_code == 2
    assert record["error"] == "UsageError"


def test_health(runner, workdir):
    result, record = invoke(runner, "health")
    assert result.exit_code == 0
    assert record["success"] is True
    assert record["max_workers"] == config.MAX_WORKERS
    assert record["settings"]["ode_method"] == config.ODE_METHOD
    assert record["system_resources"]["cpu_cores"] >= 1


def test_global_options_reach_config(runner, workdir):
    result, _ = invoke(runner, "--nodes", 128, "--tol", 1e-9, "health")
    assert result.exit_code == 0
    assert config.CONTOUR_NODES == 128
    assert config.CONTOUR_TOL == 1e-9
