"""Command-line front end: ``asf estimate|simulate|mc|diagnose``."""
import logging
from typing import Optional

import typer
from rich.console import Console

from .services.run_service import EXIT_CONFIG, load_config, run
from .utils.errors import ConfigError
from .utils.logging_config import configure_logging

app = typer.Typer(add_completion=False, no_args_is_help=True, help="Average structural function estimation.")
err_console = Console(stderr=True)
logger = logging.getLogger(__name__)

ConfigOpt = typer.Option(None, "--config", help="JSON run configuration.")
DataOpt = typer.Option(None, "--data", help="CSV with columns y, x, z*, w*.")
EstimatorOpt = typer.Option(None, "--estimator", help="Estimator name.")
X0Opt = typer.Option(None, "--x0", help="Comma-separated evaluation points.")
TrimOpt = typer.Option(None, "--trim", help="Trimming quantiles 'low,high'.")
BandwidthOpt = typer.Option(None, "--bandwidth", help="Second-stage bandwidth.")
SeedOpt = typer.Option(None, "--seed", help="Master seed.")
RepsOpt = typer.Option(None, "--reps", help="Monte Carlo replications.")
OutOpt = typer.Option(None, "--out", help="Output path (standard output when omitted).")
ThreadsOpt = typer.Option(None, "--threads", help="Worker threads; 0 uses every core.")
LogLevelOpt = typer.Option(None, "--log-level", help="Logging level.")


def _floats(text: str | None, flag: str) -> list[float] | None:
    if text is None:
        return None
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise ConfigError(f"{flag} expects comma-separated numbers, got {text!r}") from exc


def _trim(text: str | None) -> dict | None:
    values = _floats(text, "--trim")
    if values is None:
        return None
    if len(values) != 2:
        raise ConfigError(f"--trim expects two quantiles 'low,high', got {text!r}")
    return {"quantiles": values}


def _execute(subcommand, config, data, estimator, x0, trim, bandwidth, seed, reps, out, threads, log_level):
    configure_logging(level=log_level)
    try:
        overrides = {
            "subcommand": subcommand,
            "data": data,
            "estimator": estimator,
            "x0": _floats(x0, "--x0"),
            "trim": _trim(trim),
            "bandwidth": bandwidth,
            "seed": seed,
            "reps": reps,
            "out": out,
            "threads": threads,
        }
        run_config = load_config(config, overrides)
    except ConfigError as exc:
        err_console.print(f"[red]configuration error:[/red] {exc}")
        raise typer.Exit(EXIT_CONFIG)
    status = run(run_config)
    if status:
        err_console.print(f"[red]{subcommand} failed[/red] (exit status {status}); see the log above")
    raise typer.Exit(status)


@app.command()
def estimate(
    config: Optional[str] = ConfigOpt, data: Optional[str] = DataOpt, estimator: Optional[str] = EstimatorOpt,
    x0: Optional[str] = X0Opt, trim: Optional[str] = TrimOpt, bandwidth: Optional[float] = BandwidthOpt,
    seed: Optional[int] = SeedOpt, reps: Optional[int] = RepsOpt, out: Optional[str] = OutOpt,
    threads: Optional[int] = ThreadsOpt, log_level: Optional[str] = LogLevelOpt,
):
    """Estimate the ASF at each x0 and write the report."""
    _execute("estimate", config, data, estimator, x0, trim, bandwidth, seed, reps, out, threads, log_level)


@app.command()
def simulate(
    config: Optional[str] = ConfigOpt, data: Optional[str] = DataOpt, estimator: Optional[str] = EstimatorOpt,
    x0: Optional[str] = X0Opt, trim: Optional[str] = TrimOpt, bandwidth: Optional[float] = BandwidthOpt,
    seed: Optional[int] = SeedOpt, reps: Optional[int] = RepsOpt, out: Optional[str] = OutOpt,
    threads: Optional[int] = ThreadsOpt, log_level: Optional[str] = LogLevelOpt,
):
    """Draw a dataset from the configured design and write it as CSV."""
    _execute("simulate", config, data, estimator, x0, trim, bandwidth, seed, reps, out, threads, log_level)


@app.command()
def mc(
    config: Optional[str] = ConfigOpt, data: Optional[str] = DataOpt, estimator: Optional[str] = EstimatorOpt,
    x0: Optional[str] = X0Opt, trim: Optional[str] = TrimOpt, bandwidth: Optional[float] = BandwidthOpt,
    seed: Optional[int] = SeedOpt, reps: Optional[int] = RepsOpt, out: Optional[str] = OutOpt,
    threads: Optional[int] = ThreadsOpt, log_level: Optional[str] = LogLevelOpt,
):
    """Run a Monte Carlo experiment; the JSON report gets a flat CSV twin."""
    _execute("mc", config, data, estimator, x0, trim, bandwidth, seed, reps, out, threads, log_level)


@app.command()
def diagnose(
    config: Optional[str] = ConfigOpt, data: Optional[str] = DataOpt, estimator: Optional[str] = EstimatorOpt,
    x0: Optional[str] = X0Opt, trim: Optional[str] = TrimOpt, bandwidth: Optional[float] = BandwidthOpt,
    seed: Optional[int] = SeedOpt, reps: Optional[int] = RepsOpt, out: Optional[str] = OutOpt,
    threads: Optional[int] = ThreadsOpt, log_level: Optional[str] = LogLevelOpt,
):
    """Common-support, influence and small-ball diagnostics."""
    _execute("diagnose", config, data, estimator, x0, trim, bandwidth, seed, reps, out, threads, log_level)


def main():
    app()
