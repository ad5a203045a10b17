"""
Module-level ISC detection from Koopman-mode samples.

Per window: kernel density estimates of every module's mode magnitudes on a
shared grid, the average Kullback-Leibler divergence xi^i of each module from
all modules, and the residual r^i = Xi^i - min_j Xi^j of the cumulative sums
Xi^i. A module whose residual reaches the threshold J is flagged for good.
"""
import logging
from collections import deque
from collections.abc import Sequence
from typing import Optional

import numpy as np
import scipy.stats
import xarray as xr
from numpy.typing import ArrayLike, NDArray
from attrs import frozen, mutable, field, Factory

from koopman_isc.exceptions import CalibrationError, GridMismatchError, LengthMismatchError
from koopman_isc.mode_generator import ModeSample

logger = logging.getLogger(__name__)

MASS_FLOOR = 1e-12
MIN_BANDWIDTH = 1e-6
MIN_THRESHOLD = 1e-6
DEFAULT_GRID_SIZE = 256


@frozen(eq=False)
class SampleGrid:
    points_z: NDArray[np.float64] = field()

    @points_z.validator
    def _check_points(self, attribute, value):
        if value.ndim != 1 or value.size < 2 or np.any(np.diff(value) <= 0):
            raise ValueError("sample grid needs at least two strictly increasing points")

    @property
    def spacing(self) -> float:
        return float(self.points_z[1] - self.points_z[0])

    @property
    def n_z(self) -> int:
        return self.points_z.size

    def same_as(self, other: "SampleGrid") -> bool:
        return self is other or np.array_equal(self.points_z, other.points_z)


@frozen(eq=False)
class ModeDistribution:
    masses: NDArray[np.float64] = field(converter=lambda v: np.asarray(v, dtype=float))
    module_index: int
    grid: SampleGrid

    @masses.validator
    def _check_masses(self, attribute, value):
        if value.shape != self.grid.points_z.shape:
            raise GridMismatchError("masses and grid differ in length")
        if np.any(value < 0) or abs(value.sum() - 1.0) > 1e-9:
            raise ValueError("masses must be non-negative and sum to 1")


def make_grid(
    samples: Sequence[ModeSample], n_z: int = DEFAULT_GRID_SIZE
) -> SampleGrid:
    """
    n_z points spaced uniformly between the pooled minimum and maximum of all samples.

    A pooled range of zero width is widened symmetrically so the grid stays valid.
    """
    pooled = [s.statistics for s in samples if len(s) > 0]
    if not pooled:
        logger.warning("no mode samples in any module; using the unit grid")
        return SampleGrid(np.linspace(0.0, 1.0, n_z))
    values = np.concatenate(pooled)
    low, high = float(values.min()), float(values.max())
    if high <= low:
        half_width = max(abs(low) * 1e-6, 1e-12)
        low, high = low - half_width, high + half_width
    return SampleGrid(np.linspace(low, high, n_z))


def silverman_bandwidth(values: NDArray[np.float64]) -> float:
    """0.9 min(sigma, IQR / 1.34) N^(-1/5), floored at 1e-6."""
    n = values.size
    sigma = float(np.std(values, ddof=1)) if n > 1 else 0.0
    spread = min(sigma, float(scipy.stats.iqr(values)) / 1.34)
    return max(0.9 * spread * n ** (-0.2), MIN_BANDWIDTH)


def _floor_and_normalize(masses: NDArray[np.float64]) -> NDArray[np.float64]:
    # affine floor keeps both sum == 1 and min >= MASS_FLOOR
    masses = masses / masses.sum()
    return masses * (1.0 - masses.size * MASS_FLOOR) + MASS_FLOOR


def estimate_density(samples: ModeSample, grid: SampleGrid) -> ModeDistribution:
    """
    Gaussian-kernel density estimate of the samples, as probability masses on grid.

    :param samples: one module's mode statistics
    :type samples: ModeSample
    :param grid: the pooled grid shared by all modules of the window
    :type grid: SampleGrid
    :return: masses density * spacing, floored at 1e-12 and normalized
    :rtype: ModeDistribution
    """
    z = grid.points_z
    if len(samples) == 0:
        logger.warning("module %d has no mode samples; uniform distribution", samples.module_index)
        return ModeDistribution(np.full(z.size, 1.0 / z.size), samples.module_index, grid)

    values = samples.statistics
    h = silverman_bandwidth(values)
    kernel = scipy.stats.norm.pdf((z[:, None] - values[None, :]) / h)
    density = kernel.sum(axis=1) / (values.size * h)
    masses = density * grid.spacing
    if not masses.sum() > 0:
        # every sample sits many bandwidths away from the grid points
        logger.warning(
            "module %d: kernel mass underflows on the grid; binning to nearest points",
            samples.module_index,
        )
        nearest = np.clip(np.rint((values - z[0]) / grid.spacing).astype(int), 0, z.size - 1)
        masses = np.bincount(nearest, minlength=z.size).astype(float)
    return ModeDistribution(_floor_and_normalize(masses), samples.module_index, grid)


def kld(p: ModeDistribution, q: ModeDistribution) -> float:
    """KLD(P || Q) = sum_z P(z) log(P(z) / Q(z)), natural log."""
    if not p.grid.same_as(q.grid):
        raise GridMismatchError(
            f"modules {p.module_index} and {q.module_index} use different grids"
        )
    return float(scipy.stats.entropy(p.masses, q.masses))


def average_distance(distributions: Sequence[ModeDistribution], i: int) -> float:
    """xi = sum_j KLD(P_i || P_j) / m, for the distribution at position i (0-based)."""
    p = distributions[i]
    return sum(kld(p, q) for q in distributions) / len(distributions)


def average_distances(distributions: Sequence[ModeDistribution]) -> NDArray[np.float64]:
    return np.array([average_distance(distributions, i) for i in range(len(distributions))])


@mutable
class ModePool:
    """
    Each module's mode statistics over the last depth windows (all windows if None).

    Statistics are kept per window, so the oldest window drops out once depth
    windows are held.
    """

    depth: Optional[int] = None
    windows: list[deque] = Factory(list)

    def add(self, samples: Sequence[ModeSample]) -> list[ModeSample]:
        """Append one window's samples and return the pooled sample of every module."""
        if not self.windows:
            self.windows = [deque(maxlen=self.depth) for _ in samples]
        if len(samples) != len(self.windows):
            raise LengthMismatchError(
                f"{len(samples)} modules in this window, {len(self.windows)} before"
            )
        pooled = []
        for history, sample in zip(self.windows, samples):
            history.append(sample.statistics)
            pooled.append(ModeSample(sample.module_index, np.concatenate(history)))
        return pooled


@mutable
class ResidualState:
    """
    Accumulator of the per-window average distances and the residuals built from them.

    Module indices in flags are 1-based. threshold_J stays None until set or calibrated.
    """

    n_modules: int
    threshold_J: Optional[float] = None
    xi_history: list[NDArray[np.float64]] = Factory(list)
    r_history: list[NDArray[np.float64]] = Factory(list)
    end_times: list[float] = Factory(list)
    cumulative_Xi: NDArray[np.float64] = Factory(
        lambda self: np.zeros(self.n_modules), takes_self=True
    )
    residual_r: NDArray[np.float64] = Factory(
        lambda self: np.zeros(self.n_modules), takes_self=True
    )
    flags: dict[int, float] = Factory(dict)
    flag_windows: dict[int, int] = Factory(dict)

    @property
    def n_windows(self) -> int:
        return len(self.xi_history)

    def trace(self) -> xr.Dataset:
        """Per-window xi, Xi, r and flag status as a (window, module) dataset."""
        n = self.n_windows
        modules = np.arange(1, self.n_modules + 1)
        xi = np.array(self.xi_history).reshape(n, self.n_modules)
        r = np.array(self.r_history).reshape(n, self.n_modules)
        flagged = np.zeros((n, self.n_modules), dtype=bool)
        for module, window in self.flag_windows.items():
            flagged[window:, module - 1] = True
        return xr.Dataset(
            data_vars={
                "xi": (("window", "module"), xi),
                "Xi": (("window", "module"), np.cumsum(xi, axis=0)),
                "r": (("window", "module"), r),
                "flagged": (("window", "module"), flagged),
            },
            coords={
                "window": np.arange(n),
                "module": modules,
                "end_time": ("window", np.array(self.end_times, dtype=float)),
            },
        )


def update_residual(
    state: ResidualState, xi_k: ArrayLike, end_time: float = np.nan
) -> ResidualState:
    """Accumulate one window: Xi += xi_k, r = Xi - min(Xi)."""
    xi = np.clip(np.asarray(xi_k, dtype=float), 0.0, None)
    state.xi_history.append(xi)
    state.end_times.append(float(end_time))
    state.cumulative_Xi = state.cumulative_Xi + xi
    state.residual_r = state.cumulative_Xi - state.cumulative_Xi.min()
    state.r_history.append(state.residual_r.copy())
    return state


def check_threshold(state: ResidualState) -> list[tuple[int, float]]:
    """
    Flag every unflagged module whose residual reached the threshold.

    :return: the newly flagged (module_index, crossing_time) pairs; flags latch
    """
    if state.threshold_J is None or state.n_windows == 0:
        return []
    crossing_time = state.end_times[-1]
    new_flags = []
    for i, r in enumerate(state.residual_r):
        module = i + 1
        if r >= state.threshold_J and module not in state.flags:
            state.flags[module] = crossing_time
            state.flag_windows[module] = state.n_windows - 1
            new_flags.append((module, crossing_time))
            logger.warning(
                "ISC flag: module %d at t=%.3fs (r=%.6g >= J=%.6g)",
                module,
                crossing_time,
                r,
                state.threshold_J,
            )
    return new_flags


def calibrate_threshold(
    nominal_residual_trace: Sequence[ArrayLike], safety_factor: float = 5.0
) -> float:
    """
    J = safety_factor * the largest residual seen in a fault-free trace.

    An all-zero trace would give J = 0; the result is floored at 1e-6.
    """
    trace = [np.asarray(r, dtype=float) for r in nominal_residual_trace]
    if not trace:
        raise CalibrationError("cannot calibrate a threshold from an empty residual trace")
    nominal_max = max(float(r.max()) for r in trace)
    threshold = safety_factor * nominal_max
    if not threshold > MIN_THRESHOLD:
        logger.error(
            "calibrated threshold %.3g is below the floor; using %.0e", threshold, MIN_THRESHOLD
        )
        return MIN_THRESHOLD
    logger.info("calibrated threshold J=%.6g from %d windows", threshold, len(trace))
    return threshold
