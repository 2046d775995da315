from __future__ import annotations

import logging
import sys
from pathlib import Path

import click

from .benchmark import (
    DOMAINS,
    FORMATS,
    UNEXPECTED_ERRORS,
    ExperimentConfig,
    ResultCache,
    ResultRow,
    build_domain,
    discretize,
    monolithic_oracle,
    parse_range,
    relative_difference,
    run_experiment,
    solution_errors,
    solve_point,
)
from .coupling import VARIANTS
from .errors import IetiStokesError
from .geometry import load_multipatch, save_multipatch
from .report import comparison_lines, emit_report
from .solver import PRECONDITIONERS

HERE = Path(__file__).parent
CACHE_FILE = HERE / "cache.json"

VERIFY_TOL = 1e-8


def split_choices(values: tuple[str, ...], allowed: tuple[str, ...]) -> list[str]:
    """Options may be repeated or given as comma lists."""
    out = [v.strip() for value in values for v in value.split(",") if v.strip()]
    return out or list(allowed)


def report_errors_and_exit() -> None:
    if UNEXPECTED_ERRORS:
        for line in UNEXPECTED_ERRORS:
            click.echo(line, err=True)
        click.echo("ERROR: some sweep points failed. Please check the output above.", err=True)
        sys.exit(1)


def sweep(
    domain: str,
    levels: str,
    degrees: str,
    variant: tuple[str, ...],
    precond: tuple[str, ...],
    tol: float,
    seed: int,
    fmt: str,
    geometry: Path | None,
    patches: int,
    threads: int,
    no_cache: bool,
) -> tuple[ExperimentConfig, list[ResultRow]]:
    try:
        cfg = ExperimentConfig(
            domain=domain,
            levels=parse_range(levels),
            degrees=parse_range(degrees),
            variants=split_choices(variant, VARIANTS),
            preconditioners=split_choices(precond, PRECONDITIONERS),
            tolerance=tol,
            seed=seed,
            output_format=fmt,
            geometry=geometry,
            patches=patches,
            threads=threads,
        )
    except IetiStokesError as e:
        raise click.BadParameter(str(e))

    with ResultCache.load(CACHE_FILE, force_invalid=no_cache) as cache:
        rows = run_experiment(cfg, cache)
    return cfg, rows


def sweep_options(fn):  # type: ignore
    options = [
        click.option("-d", "--domain", type=click.Choice(DOMAINS), required=True),
        click.option("--levels", default="2", help="Levels, 'a..b' or comma list."),
        click.option("--degrees", default="2", help="Degrees, 'a..b' or comma list."),
        click.option("--variant", multiple=True, help="Primal variants c, ce, cn."),
        click.option("--precond", multiple=True, help="Preconditioners sd1, sd2."),
        click.option("--tol", type=float, default=1e-6, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option(
            "-g",
            "--geometry",
            type=click.Path(exists=True, dir_okay=False, path_type=Path),
            help="Geometry file for the yeti domain.",
        ),
        click.option("--patches", type=int, default=8, show_default=True),
        click.option(
            "--threads",
            type=int,
            default=1,
            envvar="IETI_STOKES_THREADS",
            show_default=True,
            help="Workers for patch-local solves.",
        ),
        click.option("-n", "--no-cache", is_flag=True, help="Do not use cached results."),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for info, -vv for debug output.")
def main(verbose: int) -> None:
    """IETI-DP solver for the Stokes equations on multi-patch spline domains."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s - %(levelname)s - %(message)s")


@main.command()
@sweep_options
@click.option("-f", "--format", "fmt", type=click.Choice(FORMATS), default="csv")
@click.option(
    "--value",
    type=click.Choice(("iterations", "kappa")),
    default="iterations",
    help="Quantity shown in markdown tables.",
)
@click.option("-o", "--out", type=click.Path(dir_okay=False, path_type=Path))
def run(
    domain: str,
    levels: str,
    degrees: str,
    variant: tuple[str, ...],
    precond: tuple[str, ...],
    tol: float,
    seed: int,
    geometry: Path | None,
    patches: int,
    threads: int,
    no_cache: bool,
    fmt: str,
    value: str,
    out: Path | None,
) -> None:
    """Run a parameter sweep and write the result table."""
    cfg, rows = sweep(
        domain,
        levels,
        degrees,
        variant,
        precond,
        tol,
        seed,
        fmt,
        geometry,
        patches,
        threads,
        no_cache,
    )
    text = emit_report(rows, cfg.output_format, out, value)
    if out is None:
        click.echo(text, nl=False)
    report_errors_and_exit()


@main.command()
@sweep_options
def compare(
    domain: str,
    levels: str,
    degrees: str,
    variant: tuple[str, ...],
    precond: tuple[str, ...],
    tol: float,
    seed: int,
    geometry: Path | None,
    patches: int,
    threads: int,
    no_cache: bool,
) -> None:
    """Compare measured iteration counts with the published tables."""
    _, rows = sweep(
        domain,
        levels,
        degrees,
        variant,
        precond,
        tol,
        seed,
        "csv",
        geometry,
        patches,
        threads,
        no_cache,
    )
    lines = comparison_lines(rows)
    for line in lines:
        click.echo(line)
    if not lines:
        click.echo("No published reference values for these sweep points.")
    report_errors_and_exit()


@main.command()
@click.option("-d", "--domain", type=click.Choice(DOMAINS), default="unit-square")
@click.option("--level", type=int, default=1, show_default=True)
@click.option("--degree", type=int, default=2, show_default=True)
@click.option("--patches", type=int, default=2, show_default=True)
@click.option(
    "-g", "--geometry", type=click.Path(exists=True, dir_okay=False, path_type=Path)
)
@click.option("--seed", type=int, default=0, show_default=True)
def verify(
    domain: str, level: int, degree: int, patches: int, geometry: Path | None, seed: int
) -> None:
    """Compare IETI-DP solutions with a monolithic direct solve."""
    mp, refinement = build_domain(domain, patches, geometry)
    disc = discretize(mp, refinement, level, degree)
    reference = monolithic_oracle(disc)
    err_u, err_p = solution_errors(disc, reference)
    click.echo(f"direct solve: velocity L2 error {err_u:.3e}, pressure L2 error {err_p:.3e}")

    failed = False
    for variant in VARIANTS:
        for precond in PRECONDITIONERS:
            report = solve_point(disc, variant, precond, tol=1e-11, seed=seed)
            diff = relative_difference(report.solution, reference)
            ok = report.converged and diff <= VERIFY_TOL
            failed = failed or not ok
            click.echo(
                f"{variant}/{precond}: {report.iterations} iterations, "
                f"relative difference {diff:.2e} {'ok' if ok else 'FAILED'}"
            )
    if failed:
        sys.exit(1)


@main.command()
@click.argument("geometry", type=click.Path(exists=True, dir_okay=False, path_type=Path))
def info(geometry: Path) -> None:
    """Print the topology of a geometry file."""
    try:
        mp = load_multipatch(geometry)
    except IetiStokesError as e:
        click.echo(f"ERROR: {e}", err=True)
        sys.exit(1)
    click.echo(f"patches: {mp.n_patches}")
    click.echo(f"interfaces: {len(mp.interfaces)}")
    for itf in mp.interfaces:
        flag = " (reversed)" if itf.reversed else ""
        click.echo(f"    {itf.patch_a}:{itf.side_a} - {itf.patch_b}:{itf.side_b}{flag}")
    click.echo(f"boundary sides: {len(mp.boundary)}")
    click.echo(f"vertices: {len(mp.corner_classes)}")
    click.echo(f"boundary vertices: {len(mp.boundary_vertex_classes())}")


@main.command()
@click.option(
    "-d", "--domain", type=click.Choice(("unit-square", "quarter-annulus")), required=True
)
@click.option("--patches", type=int, default=8, show_default=True)
@click.argument("out", type=click.Path(dir_okay=False, path_type=Path))
def export(domain: str, patches: int, out: Path) -> None:
    """Write a built-in domain to a geometry file."""
    mp, _ = build_domain(domain, patches)
    save_multipatch(mp, out)
    click.echo(f"wrote {mp.n_patches} patches to {out}")


if __name__ == "__main__":
    main()
