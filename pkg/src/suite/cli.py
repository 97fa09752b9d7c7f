"""
`ginv` command line: one subcommand per suite, sharing the same options.

Exit status is 0 when every metric with a limit passed, 1 when some metric failed or a
suite raised, 2 for an invalid configuration.
"""
from pathlib import Path
from typing import Callable, Optional

import typer
from rich.console import Console
from rich.table import Table

from src.core.exceptions import BaseAppException, ConfigInvalid
from src.core.logging_setup import get_logger
from src.core.report import VerificationReport, emit, emit_table
from src.suite.config import load_suite_config
from src.suite.runner import SUITE_NAMES, run_suite

logger = get_logger("cli")

app = typer.Typer(add_completion=False, help="Verification suites for G-invariant singular integrals.")
console = Console()

SUITE_HELP = {
    "group": "Group closure and orbit-distance axioms.",
    "aoi": "Approximation of the identity and almost orthogonality of D_k.",
    "reproduce": "Calderon system, Neumann inverse and reproduction residuals.",
    "cz": "Calderon-Zygmund decomposition and weak (1,1) ratios.",
    "t1": "Kernel constants, T1/T*1 diagnostics, weak boundedness, L-infinity extension.",
    "paraproduct": "Paraproducts and the T1 reduction.",
    "norms": "Holder, Besov, BMO and molecule norms.",
    "all": "Every suite on one shared grid and family.",
}


def summary_table(report: VerificationReport) -> Table:
    table = Table(title=f"{report.suite}: {len(report.metrics)} metrics, {len(report.failed)} failed")
    table.add_column("metric")
    table.add_column("value", justify="right")
    table.add_column("bound", justify="right")
    table.add_column("pass", justify="center")
    for metric in report.metrics:
        flag = {True: "[green]yes[/green]", False: "[red]NO[/red]", None: ""}[metric.passed]
        bound = "" if metric.bound is None else f"{metric.bound:.3e}"
        table.add_row(metric.name, f"{metric.value:.6e}", bound, flag)
    return table


def _execute(name: str, overrides: dict) -> None:
    try:
        config = load_suite_config(**overrides)
    except ConfigInvalid as e:
        for line in e.payload.get("errors", [e.message]):
            console.print(f"[red]config[/red] {line}")
        raise typer.Exit(code=2)

    try:
        report = run_suite(name, config)
    except BaseAppException as e:
        console.print(f"[red]{type(e).__name__}[/red] in suite '{e.payload.get('suite', name)}': {e.message}")
        raise typer.Exit(code=1)

    try:
        if config.out:
            emit(report, "json", config.out, include_timing=config.timing)
            for table in report.tables:
                emit_table(report, table, config.out.with_name(f"{config.out.stem}.{table}.csv"))
        if config.csv:
            emit(report, "csv", config.csv)
    except BaseAppException as e:
        console.print(f"[red]{type(e).__name__}[/red]: {e.message}")
        raise typer.Exit(code=1)

    console.print(summary_table(report))
    if config.timing and report.wall_time is not None:
        console.print(f"wall time {report.wall_time:.2f}s")
    raise typer.Exit(code=0 if report.all_passed else 1)


def _make_command(name: str) -> Callable[..., None]:
    def command(
        group: Optional[str] = typer.Option(None, "--group", help="Root system preset or root file"),
        dim: Optional[int] = typer.Option(None, "--dim", help="Ambient dimension (TRIVIAL group)"),
        n: Optional[int] = typer.Option(None, "--n", help="Grid points per axis, odd"),
        box: Optional[float] = typer.Option(None, "--box", help="Box half width"),
        kmin: Optional[int] = typer.Option(None, "--kmin", help="Coarsest scale"),
        kmax: Optional[int] = typer.Option(None, "--kmax", help="Finest scale"),
        M: Optional[list[int]] = typer.Option(None, "--M", help="Calderon order, repeatable"),
        tol: Optional[float] = typer.Option(None, "--tol", help="Neumann inversion tolerance"),
        seed: Optional[int] = typer.Option(None, "--seed", help="Sampling seed"),
        out: Optional[Path] = typer.Option(None, "--out", help="JSON report path"),
        csv: Optional[Path] = typer.Option(None, "--csv", help="CSV metric table path"),
        parallel: Optional[bool] = typer.Option(None, "--parallel/--sequential", help="Run sub-suites concurrently"),
        timing: Optional[bool] = typer.Option(None, "--timing/--no-timing", help="Print and keep the wall time"),
    ) -> None:
        _execute(
            name,
            {
                "group": group, "dim": dim, "n": n, "box": box, "k_min": kmin, "k_max": kmax,
                "m_values": M or None, "tol": tol, "seed": seed, "out": out, "csv": csv,
                "parallel": parallel, "timing": timing,
            },
        )

    command.__doc__ = SUITE_HELP[name]
    return command


for _name in SUITE_NAMES:
    app.command(name=_name)(_make_command(_name))


def main() -> None:
    app()


if __name__ == "__main__":
    main()
