from collections.abc import Sequence
from pathlib import Path
from typing import Union

import numpy as np
import pandas as pd
import xarray as xr

from koopman_isc.exceptions import InputError
from koopman_isc.pack import Measurement

TIME_FORMAT = "%.6f"
VOLTAGE_FORMAT = "%.9f"
CURRENT_FORMAT = "%.6f"


def telemetry_to_xarray(measurements: Sequence) -> xr.Dataset:
    """
    Stack Measurement records into a dataset with dims (time, module).

    Modules are labelled 1..m.
    """
    if len(measurements) == 0:
        raise InputError("no measurements to stack")
    times = np.array([m.time for m in measurements])
    voltages = np.stack([m.module_voltages for m in measurements])
    currents = np.array([m.pack_current for m in measurements])
    modules = np.arange(1, voltages.shape[1] + 1)
    return xr.Dataset(
        data_vars={
            "voltage": (("time", "module"), voltages, {"units": "V"}),
            "current": (("time",), currents, {"units": "A"}),
        },
        coords={"time": times, "module": modules},
    )


def telemetry_from_xarray(dataset: xr.Dataset) -> list[Measurement]:
    voltages = dataset["voltage"].transpose("time", "module").values
    return [
        Measurement(float(t), v, float(i))
        for t, v, i in zip(dataset["time"].values, voltages, dataset["current"].values)
    ]


def write_telemetry_csv(dataset: xr.Dataset, path: Union[str, Path]):
    """Header time,I,V1,...,Vm; one row per sample."""
    voltages = dataset["voltage"].transpose("time", "module").values
    m = voltages.shape[1]
    table = np.column_stack([dataset["time"].values, dataset["current"].values, voltages])
    header = ",".join(["time", "I"] + [f"V{i}" for i in range(1, m + 1)])
    np.savetxt(
        path,
        table,
        fmt=[TIME_FORMAT, CURRENT_FORMAT] + [VOLTAGE_FORMAT] * m,
        delimiter=",",
        header=header,
        comments="",
    )


def read_telemetry_csv(path: Union[str, Path]) -> xr.Dataset:
    try:
        frame = pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as err:
        raise InputError(f"cannot read telemetry {path}: {err}") from err
    columns = list(frame.columns)
    voltage_columns = [c for c in columns if c.startswith("V")]
    expected = ["time", "I"] + [f"V{i}" for i in range(1, len(voltage_columns) + 1)]
    if columns != expected or len(voltage_columns) < 2:
        raise InputError(f"telemetry header must be time,I,V1,...,Vm; got {columns}")
    try:
        finite = np.all(np.isfinite(frame.to_numpy(dtype=float)))
    except (TypeError, ValueError):
        finite = False
    if not finite:
        raise InputError(f"telemetry {path} contains non-numeric or missing values")
    return xr.Dataset(
        data_vars={
            "voltage": (("time", "module"), frame[voltage_columns].to_numpy(dtype=float)),
            "current": (("time",), frame["I"].to_numpy(dtype=float)),
        },
        coords={
            "time": frame["time"].to_numpy(dtype=float),
            "module": np.arange(1, len(voltage_columns) + 1),
        },
    )


def hold_between_windows(
    per_window: xr.DataArray, times: Sequence[float]
) -> xr.DataArray:
    """
    Render a per-window quantity at sample times as a staircase.

    per_window must carry an end_time coordinate on its window dim. Each value
    holds from its window's end time until the next window ends; samples
    before the first window end are NaN.
    """
    staircase = per_window.swap_dims({"window": "end_time"}).drop_vars("window")
    return staircase.reindex(end_time=np.asarray(times), method="ffill").rename(
        end_time="time"
    )
