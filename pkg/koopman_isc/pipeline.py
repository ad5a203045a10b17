"""
The sliding-window detection loop.

For every window of L + P samples and every module: fit a Koopman model on
the first L samples, predict the next P, decompose the prediction error into
Koopman modes, and compare the modules' mode distributions. Windows slide by P.
"""
import logging
from collections import deque
from collections.abc import Iterable, Iterator
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Optional, Union

import numpy as np
import xarray as xr
from numpy.typing import NDArray
from attrs import frozen, Factory

from koopman_isc.config import PipelineConfig
from koopman_isc.exceptions import (
    DegenerateDataError,
    InsufficientDataError,
    LengthMismatchError,
)
from koopman_isc.helpers.formatters import write_report
from koopman_isc.helpers.xarray import telemetry_from_xarray, telemetry_to_xarray
from koopman_isc.isc_detector import (
    ModePool,
    ResidualState,
    average_distances,
    calibrate_threshold,
    check_threshold,
    estimate_density,
    make_grid,
    update_residual,
)
from koopman_isc.koopman_model import KoopmanLinearModel, predict
from koopman_isc.mode_generator import ModeSample, error_sequence, mode_rows
from koopman_isc.pack import Measurement

logger = logging.getLogger(__name__)

Telemetry = Union[xr.Dataset, Iterable[Measurement]]


@frozen
class WindowDiagnostics:
    window: int
    end_time: float
    degenerate_modules: tuple[int, ...] = ()
    blocks: tuple[int, ...] = ()
    mode_rows: tuple = ()
    operators: tuple[tuple[int, KoopmanLinearModel], ...] = ()

    @property
    def all_degenerate(self) -> bool:
        return len(self.degenerate_modules) == len(self.blocks)


def _module_modes(
    series: NDArray[np.float64], module_index: int, config: PipelineConfig
) -> tuple[ModeSample, list, bool, Optional[KoopmanLinearModel]]:
    learn, predict_len = config.hankel.learn_len_L, config.hankel.predict_len_P
    learning, measured = series[:learn], series[learn:]
    model = None
    try:
        model, trend = config.predictor.fit_window(learning)
        predicted = predict(model, predict_len) + trend
    except DegenerateDataError:
        # a flat learning window carries no dynamics; hold its last value
        predicted = np.full(measured.size, learning[-1])
    errors = error_sequence(measured, predicted, module_index)
    sample, decompositions = config.km_generator(errors)
    return sample, decompositions, model is None or len(sample) == 0, model


def run_window(
    buffer: NDArray[np.float64],
    config: PipelineConfig,
    window: int = 0,
    end_time: float = np.nan,
    pool: Optional[ModePool] = None,
) -> tuple[NDArray[np.float64], WindowDiagnostics]:
    """
    Average KL distance xi of every module for one window.

    With a pool, each module's distribution is estimated from its mode
    statistics pooled with those of the earlier windows the pool holds.

    :param buffer: (m, L + P) module voltages, oldest sample first
    :type buffer: NDArray[np.float64]
    :param config: detector settings
    :type config: PipelineConfig
    :param pool: mode statistics of earlier windows, updated in place
    :type pool: Optional[ModePool]
    :return: xi (m,) and what happened along the way
    :rtype: tuple[NDArray[np.float64], WindowDiagnostics]
    """
    buffer = np.asarray(buffer, dtype=float)
    expected = config.hankel.window_len
    if buffer.ndim != 2 or buffer.shape[1] != expected or buffer.shape[0] < 2:
        raise InsufficientDataError(
            f"window buffer must be (m >= 2, {expected}), got {buffer.shape}"
        )
    modules = range(buffer.shape[0])

    def work(i):
        return _module_modes(buffer[i], i + 1, config)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            results = list(executor.map(work, modules))
    else:
        results = [work(i) for i in modules]

    samples = [sample for sample, _, _, _ in results]
    if pool is not None:
        samples = pool.add(samples)
    grid = make_grid(samples, config.grid_n_z)
    distributions = [estimate_density(sample, grid) for sample in samples]
    xi = average_distances(distributions)

    rows, operators = [], []
    if config.dump_modes:
        for i, (_, decompositions, _, model) in enumerate(results):
            rows.extend(mode_rows(window, i + 1, decompositions))
            if model is not None:
                operators.append((i + 1, model))
    diagnostics = WindowDiagnostics(
        window=window,
        end_time=float(end_time),
        degenerate_modules=tuple(i + 1 for i, (_, _, bad, _) in enumerate(results) if bad),
        blocks=tuple(len(decompositions) for _, decompositions, _, _ in results),
        mode_rows=tuple(rows),
        operators=tuple(operators),
    )
    if diagnostics.degenerate_modules:
        logger.warning(
            "window %d: degenerate data in modules %s", window, diagnostics.degenerate_modules
        )
    logger.debug("window %d (t=%.2fs): xi=%s", window, end_time, np.array2string(xi, precision=4))
    return xi, diagnostics


def iter_windows(
    measurements: Iterable[Measurement], learn_len: int, predict_len: int
) -> Iterator[tuple[int, NDArray[np.float64], NDArray[np.float64]]]:
    """
    Slide a window of learn_len + predict_len samples over a measurement stream by predict_len.

    Yields (window index, sample times, (m, L + P) voltages). Only one window
    of samples is held at a time; the stream is pulled as windows are consumed.
    """
    size = learn_len + predict_len
    times = deque(maxlen=size)
    voltages = deque(maxlen=size)
    window = 0
    pending = size
    n_modules = None
    for measurement in measurements:
        if n_modules is None:
            n_modules = measurement.module_voltages.size
        elif measurement.module_voltages.size != n_modules:
            raise LengthMismatchError(
                f"measurement at t={measurement.time} carries "
                f"{measurement.module_voltages.size} module voltages, expected {n_modules}"
            )
        times.append(measurement.time)
        voltages.append(measurement.module_voltages)
        pending -= 1
        if pending == 0:
            yield window, np.array(times), np.array(voltages).T
            window += 1
            pending = predict_len


def window_count(n_samples: int, learn_len: int, predict_len: int) -> int:
    """floor((N - L) / P), the number of windows a stream of N samples closes."""
    return max((n_samples - learn_len) // predict_len, 0)


@frozen(eq=False)
class DetectionReport:
    """Everything a detection run produced, ready to be written out."""

    residuals: ResidualState
    threshold_J: float
    events: list[dict[str, Any]] = Factory(list)
    diagnostics: list[WindowDiagnostics] = Factory(list)
    telemetry: Optional[xr.Dataset] = None
    metadata: dict[str, Any] = Factory(dict)
    calibration_windows: int = 0

    @property
    def flags(self) -> dict[int, float]:
        return dict(self.residuals.flags)

    @property
    def flagged_modules(self) -> list[int]:
        return sorted(self.residuals.flags)

    @property
    def n_windows(self) -> int:
        return self.residuals.n_windows

    def trace(self) -> xr.Dataset:
        trace = self.residuals.trace()
        trace.attrs["threshold_J"] = self.threshold_J
        return trace

    def separation(self, module: Optional[int] = None) -> float:
        """
        Residual of a flagged module over the largest other residual, at its crossing window.
        """
        if module is None:
            if not self.residuals.flags:
                return float("nan")
            module = min(self.residuals.flags, key=self.residuals.flags.get)
        window = self.residuals.flag_windows[module]
        r = self.residuals.r_history[window]
        others = np.delete(r, module - 1)
        healthy = others.max() if others.size else 0.0
        return float("inf") if healthy == 0 else float(r[module - 1] / healthy)

    def write(self, out_dir, config_dump: Optional[str] = None):
        write_report(self, out_dir, config_dump)


def _as_stream(telemetry: Telemetry) -> Iterable[Measurement]:
    if isinstance(telemetry, xr.Dataset):
        return telemetry_from_xarray(telemetry)
    return telemetry


def run_detection(
    telemetry: Telemetry,
    config: PipelineConfig,
    metadata: Optional[dict[str, Any]] = None,
    keep_telemetry: bool = True,
) -> DetectionReport:
    """
    Run the detector over a whole telemetry stream.

    With an automatic threshold, the first calibration_windows windows are
    taken to be fault-free: they only feed the calibration and are never
    checked against J.

    :raises InsufficientDataError: if the stream does not fill one window
    :raises DegenerateDataError: if no module of any window carried usable data
    """
    seen: list[Measurement] = []

    def tap(stream):
        for measurement in stream:
            if keep_telemetry:
                seen.append(measurement)
            yield measurement

    learn, predict = config.hankel.learn_len_L, config.hankel.predict_len_P
    auto = config.threshold_J == "auto"
    state: Optional[ResidualState] = None
    calibration_trace = []
    events = []
    diagnostics = []
    pool = ModePool(config.pool_windows)

    for window, times, buffer in iter_windows(tap(_as_stream(telemetry)), learn, predict):
        if state is None:
            state = ResidualState(
                n_modules=buffer.shape[0], threshold_J=None if auto else config.threshold_J
            )
        end_time = float(times[-1])
        xi, diag = run_window(buffer, config, window, end_time, pool)
        diagnostics.append(diag)
        update_residual(state, xi, end_time)

        if auto and state.threshold_J is None:
            calibration_trace.append(state.residual_r.copy())
            if len(calibration_trace) == config.calibration_windows:
                state.threshold_J = calibrate_threshold(calibration_trace, config.safety_factor)
            continue

        for module, crossing_time in check_threshold(state):
            events.append(
                {
                    "time": crossing_time,
                    "module": module,
                    "r_value": float(state.residual_r[module - 1]),
                    "threshold": float(state.threshold_J),
                }
            )
        if config.stop_on_first_flag and state.flags:
            logger.info("stopping at the first flag, window %d", window)
            break

    if state is None:
        raise InsufficientDataError(
            f"telemetry holds fewer than L + P = {learn + predict} samples"
        )
    if all(d.all_degenerate for d in diagnostics):
        raise DegenerateDataError("every module of every window was degenerate")
    if state.threshold_J is None:
        logger.warning(
            "only %d of %d calibration windows available; no detection performed",
            len(calibration_trace),
            config.calibration_windows,
        )
        state.threshold_J = calibrate_threshold(calibration_trace, config.safety_factor)

    return DetectionReport(
        residuals=state,
        threshold_J=float(state.threshold_J),
        events=events,
        diagnostics=diagnostics,
        telemetry=telemetry_to_xarray(seen) if seen else None,
        metadata=dict(metadata or {}),
        calibration_windows=len(calibration_trace),
    )


def residual_trace(telemetry: Telemetry, config: PipelineConfig) -> ResidualState:
    """Residuals of every window, with no threshold applied."""
    state = None
    pool = ModePool(config.pool_windows)
    for window, times, buffer in iter_windows(
        _as_stream(telemetry), config.hankel.learn_len_L, config.hankel.predict_len_P
    ):
        if state is None:
            state = ResidualState(n_modules=buffer.shape[0])
        xi, _ = run_window(buffer, config, window, float(times[-1]), pool)
        update_residual(state, xi, float(times[-1]))
    if state is None:
        raise InsufficientDataError("telemetry does not fill a single window")
    return state


def calibrate_from_telemetry(
    telemetry: Telemetry, config: PipelineConfig, min_windows: int = 3
) -> float:
    """Threshold J from a fault-free recording: safety_factor times its largest residual."""
    state = residual_trace(telemetry, config)
    if state.n_windows < min_windows:
        raise InsufficientDataError(
            f"calibration needs at least {min_windows} windows, the recording has {state.n_windows}"
        )
    return calibrate_threshold(state.r_history, config.safety_factor)
