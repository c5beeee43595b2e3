"""
File schemas, atomic output and the command drivers behind the CLI.

All files are UTF-8 JSON. A complex number is ``[re, im]``; a matrix is a row-major
list of rows of complex numbers. Every report carries a ``provenance`` block with the
effective settings, host information and package versions.
"""
import json
import logging
import math
import os
import platform
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import psutil

import config
from continuum import (
    DIRAC,
    SCHRODINGER,
    DiracModel,
    SchrodingerModel,
    diag_green,
    evolve_many,
    local_closeness_probe,
    recover_M_dirac,
    recover_M_schrodinger,
)
from errors import ParseError, UsageError, ValidationError, WeylError
from jacobi_forward import GreensSample, JacobiCoeffs, greens_sample
from jacobi_inverse import (
    AgreementMode,
    Case,
    ReconstructionReport,
    invert_from_greens,
    local_agreement_order,
    ray_points,
    ring_points,
)

logger = logging.getLogger(__name__)

TOOL_NAME = "weyl-inverse"
__version__ = "0.3.0"

Operator = Union[JacobiCoeffs, SchrodingerModel, DiracModel]


@dataclass
class RunSettings:
    """Global CLI options, shared by every command"""

    tol: Optional[float] = None
    nodes: int = config.CONTOUR_NODES
    ray_angle: float = config.RAY_ANGLE
    seed: int = 0

    def apply(self) -> None:
        """Push overrides into the runtime configuration read by the kernels"""
        config.CONTOUR_NODES = self.nodes
        if self.tol is not None:
            config.CONTOUR_TOL = self.tol

    def as_dict(self) -> Dict[str, Any]:
        return {"tol": self.tol, "nodes": self.nodes, "ray_angle": self.ray_angle, "seed": self.seed}


# Value codecs

def encode_complex(z: complex) -> List[float]:
    z = complex(z)
    return [z.real, z.imag]


def decode_complex(value: Any, name: str = "value") -> complex:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        z = complex(value)
    elif isinstance(value, (list, tuple)) and len(value) == 2 and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        z = complex(value[0], value[1])
    else:
        raise ParseError(f"{name} must be a number or a [re, im] pair")
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ParseError(f"{name} is not finite")
    return z


def encode_matrix(M) -> List[List[List[float]]]:
    M = np.asarray(M, dtype=complex)
    return [[encode_complex(v) for v in row] for row in M]


def decode_matrix(rows: Any, name: str = "matrix", m: Optional[int] = None) -> np.ndarray:
    if not isinstance(rows, list) or not rows or not all(isinstance(r, list) for r in rows):
        raise ParseError(f"{name} must be a non-empty list of rows")
    n = len(rows)
    if any(len(r) != n for r in rows):
        raise ParseError(f"{name} must be square")
    if m is not None and n != m:
        raise ParseError(f"{name} must be {m}x{m}, got {n}x{n}")
    return np.array(
        [[decode_complex(v, f"{name}[{i}][{j}]") for j, v in enumerate(r)] for i, r in enumerate(rows)],
        dtype=complex,
    )


def _require(data: Dict[str, Any], key: str, where: str) -> Any:
    if not isinstance(data, dict) or key not in data:
        raise ParseError(f"{where}: missing field '{key}'")
    return data[key]


# Atomic JSON files

def read_json(path: Union[str, Path]) -> Dict[str, Any]:
    path = Path(path)
    try:
        with open(path, "r", encoding="utf-8") as handle:
            data = json.load(handle)
    except FileNotFoundError as exc:
        raise UsageError(f"file not found: {path}") from exc
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be an object")
    return data


def write_json(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    """Write to a temporary file next to ``path`` and rename it into place"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            json.dump(data, handle, indent=2)
            handle.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise
    logger.info(f"Wrote {path}")
    return path


def provenance(settings: Optional[RunSettings] = None, **extra: Any) -> Dict[str, Any]:
    versions = {}
    for package in ("numpy", "scipy", "click", "psutil", "python-dotenv"):
        try:
            versions[package] = importlib_metadata.version(package)
        except importlib_metadata.PackageNotFoundError:
            versions[package] = None
    record = {
        "tool": TOOL_NAME,
        "version": __version__,
        "settings": config.settings_snapshot(),
        "cli": (settings or RunSettings()).as_dict(),
        "host": {
            "platform": platform.platform(),
            "python": platform.python_version(),
            "cpu_count": psutil.cpu_count(logical=True),
            "memory_total": psutil.virtual_memory().total,
        },
        "versions": versions,
    }
    record.update(extra)
    return record


# Operators

def _bump_profile(spec: Any, grid: np.ndarray, m: int, name: str) -> np.ndarray:
    """Sum of amplitude * (1 - t^2)^4 bumps, t = (x - center) / width, zero for |t| >= 1"""
    bumps = _require(spec, "bumps", name)
    if not isinstance(bumps, list):
        raise ParseError(f"{name}.bumps must be a list")
    total = np.zeros((grid.size, m, m), dtype=complex)
    for i, bump in enumerate(bumps):
        where = f"{name}.bumps[{i}]"
        center = float(_require(bump, "center", where))
        width = float(_require(bump, "width", where))
        if width <= 0:
            raise ValidationError(f"{where}: width must be positive")
        amplitude = decode_matrix(_require(bump, "amplitude", where), f"{where}.amplitude", m)
        t = (grid - center) / width
        shape = np.where(np.abs(t) < 1, (1 - t ** 2) ** 4, 0.0)
        total += shape[:, None, None] * amplitude
    return total


def _grid_profile(spec: Any, grid: np.ndarray, m: int, name: str) -> np.ndarray:
    if isinstance(spec, dict):
        return _bump_profile(spec, grid, m, name)
    if not isinstance(spec, list) or len(spec) != grid.size:
        raise ParseError(f"{name} must list {grid.size} matrices or describe bumps")
    return np.array([decode_matrix(M, f"{name}[{i}]", m) for i, M in enumerate(spec)])


def operator_from_dict(data: Dict[str, Any]) -> Operator:
    kind = _require(data, "kind", "operator")
    m = _require(data, "m", "operator")
    if not isinstance(m, int) or m < 1:
        raise ParseError("operator: m must be a positive integer")
    meta = data.get("metadata", {}) or {}
    if kind == "jacobi":
        A, B = {}, {}
        for i, record in enumerate(_require(data, "coefficients", "operator")):
            where = f"coefficients[{i}]"
            k = _require(record, "k", where)
            if not isinstance(k, int):
                raise ParseError(f"{where}: k must be an integer")
            if "A" in record:
                A[k] = decode_matrix(record["A"], f"A({k})", m)
            if "B" in record:
                B[k] = decode_matrix(record["B"], f"B({k})", m)
        bound = meta.get("bound")
        return JacobiCoeffs.from_maps(A, B, m=m, bound=None if bound is None else float(bound))
    if kind in (SCHRODINGER, DIRAC):
        grid_spec = _require(data, "grid", "operator")
        x0 = float(_require(grid_spec, "x0", "grid"))
        R = float(_require(grid_spec, "R", "grid"))
        h = float(_require(grid_spec, "h", "grid"))
        probe = SchrodingerModel.free(m, x0, R, h)
        grid = probe.grid
        if kind == SCHRODINGER:
            Q = _grid_profile(_require(data, "Q", "operator"), grid, m, "Q")
            return SchrodingerModel(m=m, x0=x0, R=R, h=h, Q=Q)
        B11 = _grid_profile(_require(data, "B11", "operator"), grid, m, "B11")
        B12 = _grid_profile(_require(data, "B12", "operator"), grid, m, "B12")
        return DiracModel(m=m, x0=x0, R=R, h=h, B11=B11, B12=B12)
    raise ParseError(f"unknown operator kind '{kind}'")


def operator_to_dict(op: Operator) -> Dict[str, Any]:
    if isinstance(op, JacobiCoeffs):
        A, B = op.to_maps()
        return {
            "kind": "jacobi",
            "m": op.m,
            "coefficients": [{"k": k, "A": encode_matrix(A[k]), "B": encode_matrix(B[k])} for k in sorted(A)],
            "metadata": {"bound": op.bound, "support": [op.k_min, op.k_max]},
        }
    grid = {"x0": op.x0, "R": op.R, "h": op.h}
    if isinstance(op, SchrodingerModel):
        return {"kind": SCHRODINGER, "m": op.m, "grid": grid, "Q": [encode_matrix(Q) for Q in op.Q]}
    return {
        "kind": DIRAC,
        "m": op.m,
        "grid": grid,
        "B11": [encode_matrix(M) for M in op.B11],
        "B12": [encode_matrix(M) for M in op.B12],
    }


def load_operator(path: Union[str, Path]) -> Operator:
    op = operator_from_dict(read_json(path))
    logger.info(f"Loaded {type(op).__name__} (m={op.m}) from {path}")
    return op


def save_operator(path: Union[str, Path], op: Operator) -> Path:
    return write_json(path, operator_to_dict(op))


# Sampling geometry

def _spec_params(body: str, allowed: Sequence[str]) -> Dict[str, float]:
    params: Dict[str, float] = {}
    for part in filter(None, (p.strip() for p in body.split(","))):
        key, sep, value = part.partition("=")
        key = key.strip()
        if not sep or key not in allowed:
            raise ParseError(f"unexpected z-spec parameter '{part}' (allowed: {', '.join(allowed)})")
        try:
            params[key] = float(value)
        except ValueError as exc:
            raise ParseError(f"z-spec parameter {key} is not a number: '{value}'") from exc
    return params


def parse_z_spec(spec: str, ray_angle: Optional[float] = None) -> Tuple[np.ndarray, Dict[str, Any]]:
    """Points and geometry description for ``ray:...``, ``ring:...`` or ``list:...``"""
    kind, _, body = spec.partition(":")
    kind = kind.strip().lower()
    if kind == "ray":
        p = _spec_params(body, ("lo", "hi", "n", "angle"))
        angle = p.get("angle", ray_angle if ray_angle is not None else config.RAY_ANGLE)
        lo, hi = p.get("lo", config.RAY_LO), p.get("hi", config.RAY_HI)
        n = int(p.get("n", config.RAY_COUNT))
        if not (0 < lo < hi) or n < 2 or not 0 < angle < math.pi:
            raise ValidationError(f"ray needs 0 < lo < hi, n >= 2 and angle in (0, pi): {spec}")
        return ray_points(angle, lo, hi, n), {"geometry": "ray", "angle": angle, "lo": lo, "hi": hi, "count": n}
    if kind == "ring":
        p = _spec_params(body, ("radius", "n"))
        radius = p.get("radius", config.RING_RADIUS)
        n = int(p.get("n", config.RING_COUNT))
        if radius <= 0 or n < 2:
            raise ValidationError(f"ring needs radius > 0 and n >= 2: {spec}")
        return ring_points(radius, n), {"geometry": "ring", "radius": radius, "count": n}
    if kind == "list":
        points = []
        for item in filter(None, (s.strip() for s in body.split(";"))):
            try:
                points.append(complex(item.replace(" ", "")))
            except ValueError as exc:
                raise ParseError(f"cannot read '{item}' as a complex number") from exc
        if not points:
            raise ParseError("list z-spec has no points")
        if len(set(points)) != len(points):
            raise ValidationError("z values must be distinct")
        return np.array(points), {"geometry": "list", "count": len(points)}
    raise ParseError(f"z-spec must start with ray:, ring: or list:, got '{spec}'")


# Sample files

def samples_to_dict(samples: Sequence[GreensSample], geometry: Dict[str, Any]) -> Dict[str, Any]:
    return {
        "kind": "jacobi_samples",
        "k0": samples[0].k0 if samples else None,
        "geometry": geometry,
        "samples": [
            {
                "z": encode_complex(s.z),
                "g0": encode_matrix(s.g0),
                "g1": encode_matrix(s.g1),
                "G01": encode_matrix(s.G01),
                "G10": encode_matrix(s.G10),
            }
            for s in samples
        ],
    }


def samples_from_dict(data: Dict[str, Any]) -> List[GreensSample]:
    if data.get("kind") != "jacobi_samples":
        raise ParseError("not a Jacobi sample file")
    k0 = _require(data, "k0", "samples")
    if not isinstance(k0, int):
        raise ParseError("k0 must be an integer")
    out = []
    for i, record in enumerate(_require(data, "samples", "sample file")):
        where = f"samples[{i}]"
        blocks = {name: decode_matrix(_require(record, name, where), f"{where}.{name}") for name in ("g0", "g1", "G01", "G10")}
        out.append(GreensSample(z=decode_complex(_require(record, "z", where), f"{where}.z"), k0=k0, **blocks))
    zs = [s.z for s in out]
    if len(set(zs)) != len(zs):
        raise ValidationError("sample z values must be distinct")
    return out


def _sweep(fn, zs: Sequence[complex]) -> list:
    with ThreadPoolExecutor(max_workers=config.MAX_WORKERS) as executor:
        return list(executor.map(fn, zs))


def report_to_dict(report: ReconstructionReport) -> Dict[str, Any]:
    sites = sorted(set(report.A) | set(report.B))
    rows = []
    for k in sites:
        row: Dict[str, Any] = {"k": k}
        if k in report.A:
            row["A"] = encode_matrix(report.A[k])
        if k in report.B:
            row["B"] = encode_matrix(report.B[k])
        rows.append(row)
    return {
        "kind": "reconstruction",
        "coefficients": rows,
        "valid_A_range": list(report.valid_A_range) if report.valid_A_range else None,
        "valid_B_range": list(report.valid_B_range) if report.valid_B_range else None,
        "residuals": report.residuals,
        "metadata": report.metadata,
    }


# Commands

def cmd_forward(
    operator_path: Union[str, Path],
    z_spec: str,
    site: int,
    out_path: Union[str, Path],
    settings: Optional[RunSettings] = None,
) -> Dict[str, Any]:
    """Green's samples of a Jacobi operator at site ``site``"""
    settings = settings or RunSettings()
    op = load_operator(operator_path)
    if not isinstance(op, JacobiCoeffs):
        raise UsageError("forward expects a Jacobi operator; use continuum-forward for grid models")
    zs, geometry = parse_z_spec(z_spec, settings.ray_angle)
    samples = _sweep(lambda z: greens_sample(op, z, site), zs)
    data = samples_to_dict(samples, geometry)
    data["provenance"] = provenance(settings, operator=str(operator_path))
    write_json(out_path, data)
    logger.info(f"Computed {len(samples)} Green's samples at k0={site} ({geometry['geometry']})")
    return data


def cmd_continuum_forward(
    operator_path: Union[str, Path],
    z_spec: str,
    point: float,
    out_path: Union[str, Path],
    settings: Optional[RunSettings] = None,
) -> Dict[str, Any]:
    """g, g' and M+/- at gridpoint ``point`` of a Schrödinger or Dirac model"""
    settings = settings or RunSettings()
    op = load_operator(operator_path)
    if isinstance(op, JacobiCoeffs):
        raise UsageError("continuum-forward expects a Schrödinger or Dirac model")
    j = op.index(point)
    zs, geometry = parse_z_spec(z_spec, settings.ray_angle)
    fields = evolve_many(op, zs)
    records = []
    for fld in fields:
        g, gprime = diag_green(fld, op).at(point)
        records.append({
            "z": encode_complex(fld.z),
            "g": encode_matrix(g),
            "gprime": encode_matrix(gprime),
            "M_plus": encode_matrix(fld.M_plus[j]),
            "M_minus": encode_matrix(fld.M_minus[j]),
            "branch": encode_complex(fld.branch),
        })
    data: Dict[str, Any] = {
        "kind": "continuum_samples",
        "model_kind": SCHRODINGER if isinstance(op, SchrodingerModel) else DIRAC,
        "x": float(op.grid[j]),
        "geometry": geometry,
        "samples": records,
    }
    if isinstance(op, DiracModel):
        data["B11"] = encode_matrix(op.B11[j])
        data["B12"] = encode_matrix(op.B12[j])
    data["provenance"] = provenance(settings, operator=str(operator_path))
    write_json(out_path, data)
    return data


def cmd_invert(
    sample_path: Union[str, Path],
    case_flag: str,
    hints_path: Optional[Union[str, Path]],
    out_path: Union[str, Path],
    settings: Optional[RunSettings] = None,
) -> Dict[str, Any]:
    """Reconstruct coefficients from a Jacobi sample file"""
    settings = settings or RunSettings()
    try:
        case = Case(case_flag)
    except ValueError as exc:
        raise UsageError(f"case must be one of i, ii, iii; got '{case_flag}'") from exc
    samples = samples_from_dict(read_json(sample_path))
    hint = None
    if hints_path is not None:
        hint = decode_matrix(_require(read_json(hints_path), "A0", "hints"), "A0", samples[0].m)
    if case == Case.III and hint is None:
        raise UsageError("case iii takes A(k0) as data: pass a hints file with an 'A0' matrix")
    report = invert_from_greens(samples, case, A0_hint=hint)
    data = report_to_dict(report)
    data["provenance"] = provenance(settings, samples=str(sample_path))
    write_json(out_path, data)
    return data


def cmd_continuum_invert(
    sample_path: Union[str, Path],
    out_path: Union[str, Path],
    settings: Optional[RunSettings] = None,
) -> Dict[str, Any]:
    """M+ and M- at the sampled point from (g, g') at every z"""
    settings = settings or RunSettings()
    data = read_json(sample_path)
    if data.get("kind") != "continuum_samples":
        raise ParseError("not a continuum sample file")
    kind = _require(data, "model_kind", "samples")
    x = float(_require(data, "x", "samples"))
    if kind == DIRAC:
        B11 = decode_matrix(_require(data, "B11", "samples"), "B11")
        B12 = decode_matrix(_require(data, "B12", "samples"), "B12")
    pairs = []
    for i, record in enumerate(_require(data, "samples", "samples")):
        where = f"samples[{i}]"
        z = decode_complex(_require(record, "z", where), f"{where}.z")
        g = decode_matrix(_require(record, "g", where), f"{where}.g")
        gprime = decode_matrix(_require(record, "gprime", where), f"{where}.gprime")
        if kind == DIRAC:
            pair = recover_M_dirac(g, gprime, B11, B12, z, x)
        else:
            pair = recover_M_schrodinger(g, gprime, z, x)
        entry: Dict[str, Any] = {
            "z": encode_complex(z),
            "M_plus": encode_matrix(pair.M_plus),
            "M_minus": encode_matrix(pair.M_minus),
        }
        if "M_plus" in record and "M_minus" in record:
            reference_plus = decode_matrix(record["M_plus"], f"{where}.M_plus")
            reference_minus = decode_matrix(record["M_minus"], f"{where}.M_minus")
            entry["reference_gap"] = max(
                float(np.linalg.norm(pair.M_plus - reference_plus, 2)),
                float(np.linalg.norm(pair.M_minus - reference_minus, 2)),
            )
        pairs.append(entry)
    out = {
        "kind": "continuum_recovery",
        "model_kind": kind,
        "x": x,
        "pairs": pairs,
        "provenance": provenance(settings, samples=str(sample_path)),
    }
    write_json(out_path, out)
    return out


def cmd_verify(
    operator_path: Union[str, Path],
    suite_flag: str = "full",
    out_path: Optional[Union[str, Path]] = None,
    settings: Optional[RunSettings] = None,
) -> Dict[str, Any]:
    """Run the invariant suites against one operator; ``passed`` is true iff every check passes"""
    from suites import run_suite

    settings = settings or RunSettings()
    op = load_operator(operator_path)
    checks = run_suite(op, suite_flag, tol=settings.tol, seed=settings.seed)
    failed = [c["name"] for c in checks if not c["passed"]]
    data = {
        "kind": "verification",
        "suite": suite_flag,
        "passed": not failed,
        "failed": failed,
        "checks": checks,
        "provenance": provenance(settings, operator=str(operator_path)),
    }
    if failed:
        logger.warning(f"verify: {len(failed)} of {len(checks)} checks failed: {', '.join(failed)}")
    else:
        logger.info(f"verify: all {len(checks)} checks passed")
    if out_path is not None:
        write_json(out_path, data)
    return data


def cmd_probe_local(
    first_path: Union[str, Path],
    second_path: Union[str, Path],
    z_spec: Optional[str],
    out_path: Union[str, Path],
    site: Optional[int] = None,
    point: Optional[float] = None,
    a: float = 0.0,
    mode: str = "minus",
    settings: Optional[RunSettings] = None,
) -> Dict[str, Any]:
    """Decay of the data difference of two operators along a ray"""
    settings = settings or RunSettings()
    first, second = load_operator(first_path), load_operator(second_path)
    if z_spec is None:
        if isinstance(first, JacobiCoeffs):
            z_spec = f"ray:lo={config.RAY_LO},hi={config.RAY_HI},n={config.RAY_COUNT}"
        else:
            # grid data reach integrator noise long before |z| = RAY_HI
            z_spec = f"ray:lo={config.CLOSENESS_LO},hi={config.CLOSENESS_HI},n={config.CLOSENESS_COUNT}"
    zs, geometry = parse_z_spec(z_spec, settings.ray_angle)
    if geometry["geometry"] != "ray":
        raise ValidationError("probe-local samples along a ray")
    if isinstance(first, JacobiCoeffs) and isinstance(second, JacobiCoeffs):
        if site is None:
            raise UsageError("probe-local on Jacobi operators needs --site")
        try:
            agreement_mode = AgreementMode(mode)
        except ValueError as exc:
            raise UsageError(f"unknown mode '{mode}'") from exc
        s1 = _sweep(lambda z: greens_sample(first, z, site), zs)
        s2 = _sweep(lambda z: greens_sample(second, z, site), zs)
        estimate = local_agreement_order(s1, s2, agreement_mode)
        result = {
            "kind": "agreement_order",
            "mode": agreement_mode.value,
            "n_est": None if math.isinf(estimate.n_est) else estimate.n_est,
            "order": estimate.order,
            "slope": None if math.isinf(estimate.slope) else estimate.slope,
            "windows": {k: v if isinstance(v, str) else (list(v) if v else None) for k, v in estimate.windows.items()},
            "points_used": estimate.points_used,
            "flags": estimate.flags,
        }
    elif isinstance(first, JacobiCoeffs) or isinstance(second, JacobiCoeffs):
        raise UsageError("probe-local compares two operators of one kind")
    else:
        if point is None:
            raise UsageError("probe-local on grid models needs --point")
        estimate = local_closeness_probe(first, second, point, a, geometry["angle"], np.abs(zs))
        result = {
            "kind": "closeness",
            "a": a,
            "a_fit": None if math.isinf(estimate.a_fit) else estimate.a_fit,
            "variable": estimate.variable,
            "points_used": estimate.points_used,
            "flags": estimate.flags,
        }
    result["geometry"] = geometry
    result["provenance"] = provenance(settings, operators=[str(first_path), str(second_path)])
    write_json(out_path, result)
    return result


def error_record(exc: BaseException) -> Dict[str, Any]:
    if isinstance(exc, WeylError):
        return exc.to_record()
    return {"success": False, "error": type(exc).__name__, "message": str(exc)}
