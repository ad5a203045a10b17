"""Console script for koopman_isc."""
import functools
import logging
import sys
from pathlib import Path
from typing import Any, Optional

import click

from koopman_isc import __version__
from koopman_isc.config import SCENARIOS, PipelineConfig, load_config, read_mapping
from koopman_isc.exceptions import KoopmanISCError
from koopman_isc.helpers.helpers import deep_update, filter_mapping, relabel_mapping
from koopman_isc.helpers.xarray import read_telemetry_csv, write_telemetry_csv
from koopman_isc.pipeline import calibrate_from_telemetry, run_detection
from koopman_isc.scenarios import run_config, scenario_config

logger = logging.getLogger(__name__)

DETECTOR_OPTIONS = (
    "threshold",
    "delay",
    "learn",
    "predict",
    "safety_factor",
    "workers",
    "stop_on_flag",
    "dump_modes",
)
OPTION_KEYS = {"delay": "delay_tau"}


def detector_overrides(options: dict[str, Any]) -> dict[str, Any]:
    """The detector section built from the command line options that were given."""
    given = filter_mapping(options, keep=DETECTOR_OPTIONS)
    given = {k: v for k, v in given.items() if v is not False}
    return relabel_mapping(given, OPTION_KEYS)


def exits_on_error(command):
    """Report package errors as one line on stderr and exit with their exit code."""

    @functools.wraps(command)
    def wrapper(*args, **kwargs):
        try:
            return command(*args, **kwargs)
        except KoopmanISCError as err:
            click.echo(f"error: {err}", err=True)
            sys.exit(getattr(err, "exit_code", 1))

    return wrapper


def detector_options(command):
    options = [
        click.option("--threshold", help="Threshold J, a positive number or 'auto'."),
        click.option("--delay", type=int, help="Hankel delay tau, in samples."),
        click.option("--learn", type=int, help="Learning window L, in samples."),
        click.option("--predict", type=int, help="Prediction window P, in samples."),
        click.option("--workers", type=int, help="Threads for the per-module work of a window."),
        click.option("--stop-on-flag", is_flag=True, help="Stop at the first flagged module."),
        click.option("--dump-modes", is_flag=True, help="Also write modes.csv and kappa.txt."),
    ]
    for option in reversed(options):
        command = option(command)
    return command


def _summarize(report):
    for event in report.events:
        click.echo(
            f"ISC flag: module {event['module']} at t={event['time']:.2f}s "
            f"(r={event['r_value']:.4g} >= J={event['threshold']:.4g})"
        )
    if not report.events:
        click.echo(f"no flags in {report.n_windows} windows (J={report.threshold_J:.4g})")


@click.group()
@click.option("-v", "--verbose", count=True, help="-v for INFO, -vv for DEBUG.")
@click.version_option(version=__version__)
def main(verbose: int):
    """Detect internal short circuits in battery packs from module voltages."""
    level = {0: logging.WARNING, 1: logging.INFO}.get(verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option(
    "--config", "config_path", type=click.Path(exists=True, dir_okay=False), required=True
)
@click.option("--seed", type=int, help="Replaces the config's seed.")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@exits_on_error
def simulate(config_path: str, seed: Optional[int], out_dir: str):
    """Simulate a scenario config and write telemetry.csv."""
    config = load_config(config_path, filter_mapping({"seed": seed}))
    data = config.simulation().simulate(config.duration)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_telemetry_csv(data, out / "telemetry.csv")
    (out / "config_resolved.txt").write_text(config.dump(), encoding="utf-8")
    click.echo(f"wrote {data.sizes['time']} samples of {data.sizes['module']} modules to {out}")


def _pipeline_config(config_path: Optional[str], seed: Optional[int], options) -> PipelineConfig:
    mapping = read_mapping(config_path) if config_path else {}
    detector = deep_update(mapping.get("detector") or {}, detector_overrides(options))
    if seed is None:
        seed = mapping.get("seed", 0)
    return PipelineConfig.from_mapping(detector, seed)


@main.command()
@click.argument("telemetry", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--seed", type=int)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@detector_options
@exits_on_error
def detect(
    telemetry: str,
    config_path: Optional[str],
    seed: Optional[int],
    out_dir: str,
    **options,
):
    """Run the detector on a telemetry CSV (time,I,V1,...,Vm)."""
    config = _pipeline_config(config_path, seed, options)
    report = run_detection(
        read_telemetry_csv(telemetry), config, metadata={"telemetry": str(telemetry)}
    )
    report.write(out_dir, config.dump())
    _summarize(report)


@main.command()
@click.argument("name", type=click.Choice(SCENARIOS))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              help="Extra YAML merged over the scenario.")
@click.option("--seed", type=int)
@click.option("--out", "out_dir", type=click.Path(file_okay=False))
@click.option("--no-fault", is_flag=True, help="Run without the scenario's fault.")
@detector_options
@exits_on_error
def scenario(name: str, config_path, seed, out_dir, no_fault: bool, **options):
    """Simulate and detect one of the shipped scenarios end to end."""
    overrides = {"detector": detector_overrides(options)}
    config = scenario_config(name, overrides, seed, fault=not no_fault, config_path=config_path)
    report = run_config(config, out_dir)
    _summarize(report)


@main.command()
@click.argument("telemetry", type=click.Path(exists=True, dir_okay=False))
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--learn", type=int)
@click.option("--predict", type=int)
@click.option("--safety-factor", type=float)
@exits_on_error
def calibrate(telemetry: str, config_path: Optional[str], **options):
    """Print the threshold J calibrated on a fault-free telemetry CSV."""
    config = _pipeline_config(config_path, None, options)
    click.echo(f"{calibrate_from_telemetry(read_telemetry_csv(telemetry), config):.9g}")


if __name__ == "__main__":
    sys.exit(main())  # pragma: no cover
