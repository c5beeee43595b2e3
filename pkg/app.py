"""
Command-line entry point: forward Green's data, inverse reconstruction, invariant
suites and locality probes for matrix Jacobi, Schrödinger and Dirac operators.
"""
import json
import logging
from typing import Any, Callable, Dict, Optional

import click
import psutil

import config
from cli_io import (
    TOOL_NAME,
    RunSettings,
    __version__,
    cmd_continuum_forward,
    cmd_continuum_invert,
    cmd_forward,
    cmd_invert,
    cmd_probe_local,
    cmd_verify,
    error_record,
)
from errors import EXIT_COMPUTATION, WeylError

logger = logging.getLogger(__name__)


def _emit(data: Dict[str, Any]) -> None:
    click.echo(json.dumps(data, indent=2))


def _run(ctx: click.Context, fn: Callable[..., Dict[str, Any]], summary: Callable[[Dict[str, Any]], Dict[str, Any]], **kwargs):
    """Call a command driver; errors become a JSON record on stdout and an exit code"""
    settings: RunSettings = ctx.obj
    try:
        result = fn(settings=settings, **kwargs)
    except WeylError as exc:
        logger.error(f"{ctx.info_name} failed: {type(exc).__name__}: {exc}")
        _emit(exc.to_record())
        ctx.exit(exc.exit_code)
    except Exception as exc:
        logger.exception(f"{ctx.info_name} failed unexpectedly")
        _emit(error_record(exc))
        ctx.exit(EXIT_COMPUTATION)
    _emit({"success": True, **summary(result)})
    return result


@click.group()
@click.version_option(__version__, prog_name=TOOL_NAME)
@click.option("--tol", type=float, default=None, help="Pass threshold for verify checks and contour agreement tolerance.")
@click.option("--nodes", type=click.IntRange(min=16), default=config.CONTOUR_NODES, show_default=True,
              help="Initial trapezoid node count on contours.")
@click.option("--ray-angle", type=float, default=config.RAY_ANGLE, show_default=True,
              help="Default ray argument for ray z-specs.")
@click.option("--seed", type=int, default=0, show_default=True, help="Seed for randomly drawn test points.")
@click.option("--log-level", type=click.Choice(["DEBUG", "INFO", "WARNING", "ERROR"], case_sensitive=False),
              default=None, help="Root log level (default from LOG_LEVEL).")
@click.option("-v", "--verbose", is_flag=True, help="Also show INFO records on the console.")
@click.pass_context
def cli(ctx: click.Context, tol: Optional[float], nodes: int, ray_angle: float, seed: int,
        log_level: Optional[str], verbose: bool):
    """Weyl-Titchmarsh forward and inverse computations."""
    config.setup_logging(log_level, verbose)
    settings = RunSettings(tol=tol, nodes=nodes, ray_angle=ray_angle, seed=seed)
    settings.apply()
    ctx.obj = settings
    logger.info(f"{TOOL_NAME} {__version__} starting with configuration:")
    logger.info(f"  Workers: {config.MAX_WORKERS}, contour nodes: {config.CONTOUR_NODES}, contour tol: {config.CONTOUR_TOL:g}")
    logger.info(f"  Ray angle: {ray_angle:.6g}, seed: {seed}, log dir: {config.LOG_DIR}")


@cli.command()
@click.argument("operator", type=click.Path(dir_okay=False))
@click.option("--z", "z_spec", required=True, help="ray:lo=..,hi=..,n=..[,angle=..] | ring:radius=..,n=.. | list:z1;z2")
@click.option("--site", type=int, required=True, help="Lattice site k0.")
@click.option("-o", "--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def forward(ctx, operator, z_spec, site, out_path):
    """Green's matrix samples of a Jacobi operator at one site."""
    _run(ctx, cmd_forward, lambda r: {"samples": len(r["samples"]), "out": out_path},
         operator_path=operator, z_spec=z_spec, site=site, out_path=out_path)


@cli.command()
@click.argument("samples", type=click.Path(dir_okay=False))
@click.option("--case", "case_flag", type=click.Choice(["i", "ii", "iii"]), default="i", show_default=True)
@click.option("--hints", "hints_path", type=click.Path(dir_okay=False), default=None, help="JSON file with an 'A0' matrix.")
@click.option("-o", "--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def invert(ctx, samples, case_flag, hints_path, out_path):
    """Reconstruct A(k), B(k) from Green's samples."""
    _run(ctx, cmd_invert,
         lambda r: {"valid_A_range": r["valid_A_range"], "valid_B_range": r["valid_B_range"],
                    "residuals": r["residuals"], "out": out_path},
         sample_path=samples, case_flag=case_flag, hints_path=hints_path, out_path=out_path)


@cli.command()
@click.argument("operator", type=click.Path(dir_okay=False))
@click.option("--suite", "suite_flag", default="full", show_default=True,
              help="full, or one of bound, riccati, herglotz, wronskian, identities, oracle, energy, conjugation, roundtrip.")
@click.option("-o", "--out", "out_path", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def verify(ctx, operator, suite_flag, out_path):
    """Run invariant suites; exit 0 only if every check passes."""
    result = _run(ctx, cmd_verify,
                  lambda r: {"passed": r["passed"], "failed": r["failed"],
                             "checks": [{k: c[k] for k in ("name", "passed", "value")} for c in r["checks"]]},
                  operator_path=operator, suite_flag=suite_flag, out_path=out_path)
    if not result["passed"]:
        ctx.exit(EXIT_COMPUTATION)


@cli.command("continuum-forward")
@click.argument("operator", type=click.Path(dir_okay=False))
@click.option("--z", "z_spec", required=True)
@click.option("--point", type=float, required=True, help="Gridpoint x at which g and g' are reported.")
@click.option("-o", "--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def continuum_forward(ctx, operator, z_spec, point, out_path):
    """Diagonal Green's data of a Schrödinger or Dirac model."""
    _run(ctx, cmd_continuum_forward, lambda r: {"samples": len(r["samples"]), "x": r["x"], "out": out_path},
         operator_path=operator, z_spec=z_spec, point=point, out_path=out_path)


@cli.command("continuum-invert")
@click.argument("samples", type=click.Path(dir_okay=False))
@click.option("-o", "--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def continuum_invert(ctx, samples, out_path):
    """Recover M+ and M- from (g, g') samples."""
    _run(ctx, cmd_continuum_invert,
         lambda r: {"pairs": len(r["pairs"]),
                    "reference_gap": max((p.get("reference_gap", 0.0) for p in r["pairs"]), default=None),
                    "out": out_path},
         sample_path=samples, out_path=out_path)


@cli.command("probe-local")
@click.argument("first", type=click.Path(dir_okay=False))
@click.argument("second", type=click.Path(dir_okay=False))
@click.option("--z", "z_spec", default=None, help="Ray z-spec (default: the configured ray, or the closeness ray for grid models).")
@click.option("--site", type=int, default=None, help="Lattice site k0 (Jacobi operators).")
@click.option("--point", type=float, default=None, help="Gridpoint x0 (grid models).")
@click.option("--a", "a", type=float, default=0.0, show_default=True, help="Half-width of the agreement interval.")
@click.option("--mode", type=click.Choice(["minus", "plus", "case_i", "case_ii", "case_iii"]), default="minus", show_default=True)
@click.option("-o", "--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.pass_context
def probe_local(ctx, first, second, z_spec, site, point, a, mode, out_path):
    """Decay of data differences between two operators along a ray."""
    _run(ctx, cmd_probe_local, lambda r: {k: v for k, v in r.items() if k != "provenance"},
         first_path=first, second_path=second, z_spec=z_spec, out_path=out_path,
         site=site, point=point, a=a, mode=mode)


@cli.command()
def health():
    """Worker pool, host resources and effective numerical settings."""
    memory = psutil.virtual_memory()
    _emit({
        "success": True,
        "tool": TOOL_NAME,
        "version": __version__,
        "max_workers": config.MAX_WORKERS,
        "system_resources": {
            "cpu_cores": psutil.cpu_count(),
            "memory_percent": memory.percent,
            "memory_available_gb": round(memory.available / (1024 ** 3), 2),
        },
        "settings": config.settings_snapshot(),
    })


def main() -> None:
    cli()


if __name__ == "__main__":
    main()
