"""
Formatters turning detection results into datasets and report files.

Every writer uses fixed numeric formats so that identical runs give
byte-identical files.
"""
import json
import logging
from collections.abc import Iterable, Mapping, Sequence
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import xarray as xr
from attrs import mutable, Factory

from koopman_isc.koopman_model import KoopmanLinearModel, dump_matrix
from koopman_isc.helpers.xarray import (
    TIME_FORMAT,
    VOLTAGE_FORMAT,
    CURRENT_FORMAT,
    hold_between_windows,
)

logger = logging.getLogger(__name__)

VALUE_FORMAT = "%.12g"

PathLike = Union[str, Path]


def _savetxt(path: PathLike, columns: Mapping[str, tuple[np.ndarray, str]]):
    names = list(columns)
    table = np.column_stack([np.asarray(values, dtype=float) for values, _ in columns.values()])
    np.savetxt(
        path,
        table,
        fmt=[fmt for _, fmt in columns.values()],
        delimiter=",",
        header=",".join(names),
        comments="",
    )


class DataFormatter:
    """
    Format a piece of detection output in some consistent way.
    """

    def to_xarray_dataset(self) -> xr.Dataset:
        raise NotImplementedError

    def to_csv(self, path: PathLike):
        raise NotImplementedError


@mutable
class format_residuals(DataFormatter):
    """Long-form per-window table: window,end_time,module,xi,Xi,r,flagged."""

    trace: xr.Dataset

    def to_xarray_dataset(self) -> xr.Dataset:
        return self.trace

    def to_csv(self, path: PathLike):
        trace = self.trace.transpose("window", "module")
        n_windows, n_modules = trace["xi"].shape
        windows = np.repeat(trace["window"].values, n_modules)
        _savetxt(
            path,
            {
                "window": (windows, "%d"),
                "end_time": (np.repeat(trace["end_time"].values, n_modules), TIME_FORMAT),
                "module": (np.tile(trace["module"].values, n_windows), "%d"),
                "xi": (trace["xi"].values.reshape(-1), VALUE_FORMAT),
                "Xi": (trace["Xi"].values.reshape(-1), VALUE_FORMAT),
                "r": (trace["r"].values.reshape(-1), VALUE_FORMAT),
                "flagged": (trace["flagged"].values.reshape(-1).astype(int), "%d"),
            },
        )


@mutable
class format_events(DataFormatter):
    events: Sequence[Mapping[str, Any]] = Factory(list)

    def to_jsonl(self, path: PathLike):
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for event in self.events:
                handle.write(json.dumps(dict(event)) + "\n")


@mutable
class format_figdata(DataFormatter):
    """
    Sample-time series for the voltage, current, xi and r panels.

    xi and r are per-window quantities; they are held between window ends.
    """

    telemetry: xr.Dataset
    trace: xr.Dataset
    threshold_J: float = np.nan

    def to_xarray_dataset(self) -> xr.Dataset:
        times = self.telemetry["time"].values
        return xr.Dataset(
            data_vars={
                "voltage": self.telemetry["voltage"],
                "current": np.abs(self.telemetry["current"]),
                "xi": hold_between_windows(self.trace["xi"], times),
                "r": hold_between_windows(self.trace["r"], times),
            },
            attrs={"threshold_J": self.threshold_J},
        )

    def to_csv_files(self, out_dir: PathLike):
        dataset = self.to_xarray_dataset()
        out_dir = Path(out_dir)
        times = dataset["time"].values
        modules = dataset["module"].values

        def per_module(name, fmt, prefix):
            values = dataset[name].transpose("time", "module").values
            columns = {"time": (times, TIME_FORMAT)}
            columns.update(
                {f"{prefix}{k}": (values[:, i], fmt) for i, k in enumerate(modules)}
            )
            return columns

        _savetxt(out_dir / "figdata_voltages.csv", per_module("voltage", VOLTAGE_FORMAT, "V"))
        _savetxt(
            out_dir / "figdata_current.csv",
            {"time": (times, TIME_FORMAT), "I": (dataset["current"].values, CURRENT_FORMAT)},
        )
        _savetxt(out_dir / "figdata_xi.csv", per_module("xi", VALUE_FORMAT, "xi"))
        r_columns = per_module("r", VALUE_FORMAT, "r")
        r_columns["J"] = (np.full(times.size, self.threshold_J), VALUE_FORMAT)
        _savetxt(out_dir / "figdata_r.csv", r_columns)


@mutable
class format_modes(DataFormatter):
    rows: Iterable[tuple] = Factory(list)

    def to_csv(self, path: PathLike):
        rows = np.array(list(self.rows), dtype=float).reshape(-1, 5)
        _savetxt(
            path,
            {
                "window": (rows[:, 0], "%d"),
                "module": (rows[:, 1], "%d"),
                "re_lambda": (rows[:, 2], VALUE_FORMAT),
                "im_lambda": (rows[:, 3], VALUE_FORMAT),
                "mode_mag": (rows[:, 4], VALUE_FORMAT),
            },
        )


@mutable
class format_operators(DataFormatter):
    """Every (window, module) Koopman operator, one commented block per matrix."""

    operators: Iterable[tuple[int, int, KoopmanLinearModel]] = Factory(list)

    def to_text(self, path: PathLike):
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for window, module, model in self.operators:
                dump_matrix(model, handle, header=f"window {window} module {module}")


def write_report(report, out_dir: PathLike, config_dump: Optional[str] = None):
    """
    Write a DetectionReport's files into out_dir, creating it if needed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    trace = report.trace()
    format_residuals(trace).to_csv(out_dir / "residuals.csv")
    format_events(report.events).to_jsonl(out_dir / "events.jsonl")
    if report.telemetry is not None:
        format_figdata(report.telemetry, trace, report.threshold_J).to_csv_files(out_dir)
    rows = [row for diag in report.diagnostics for row in diag.mode_rows]
    if rows:
        format_modes(rows).to_csv(out_dir / "modes.csv")
    operators = [
        (diag.window, module, model)
        for diag in report.diagnostics
        for module, model in diag.operators
    ]
    if operators:
        format_operators(operators).to_text(out_dir / "kappa.txt")
    if config_dump is not None:
        (out_dir / "config_resolved.txt").write_text(config_dump, encoding="utf-8")
    summary = {
        "metadata": report.metadata,
        "threshold": report.threshold_J,
        "windows": report.n_windows,
        "calibration_windows": report.calibration_windows,
        "flags": {str(module): time for module, time in sorted(report.flags.items())},
        "separation": {str(module): report.separation(module) for module in report.flagged_modules},
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8", newline="\n") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
    logger.info("report written to %s", out_dir)
