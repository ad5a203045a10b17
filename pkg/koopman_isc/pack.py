"""Battery pack parameters, faults and state for an m-parallel / n-series pack."""
import logging
from typing import Optional

import numpy as np
from numpy.typing import ArrayLike, NDArray
from attrs import frozen, field, validators, Factory

from koopman_isc.exceptions import ConfigError, LengthMismatchError
from koopman_isc.helpers.mixins import SamplingMixin
from koopman_isc.ocv import OcvCurve

logger = logging.getLogger(__name__)

SECONDS_PER_HOUR = 3600.0


def _positive_array(instance, attribute, value):
    if not np.all(np.isfinite(value)) or np.any(value <= 0):
        raise ConfigError(f"{attribute.name} must be strictly positive, got {value}")


def _as_float_array(value: ArrayLike) -> NDArray[np.float64]:
    return np.asarray(value, dtype=float)


@frozen(eq=False)
class CellParams:
    """
    Equivalent-circuit parameters of one cell, or of a whole pack when the
    fields are (m, n) arrays.

    capacity_Q is in ampere-seconds; use from_datasheet() to start from Ah.
    """

    capacity_Q: NDArray[np.float64] = field(
        converter=_as_float_array, validator=_positive_array
    )
    polar_capacitance_C: NDArray[np.float64] = field(
        converter=_as_float_array, validator=_positive_array
    )
    ohmic_R: NDArray[np.float64] = field(
        converter=_as_float_array, validator=_positive_array
    )
    polar_R_c: NDArray[np.float64] = field(
        converter=_as_float_array, validator=_positive_array
    )

    @classmethod
    def from_datasheet(
        cls, capacity_ah: float, capacitance: float, ohmic_r: float, polar_r: float
    ) -> "CellParams":
        return cls(capacity_ah * SECONDS_PER_HOUR, capacitance, ohmic_r, polar_r)

    def as_tuple(self) -> tuple:
        return (self.capacity_Q, self.polar_capacitance_C, self.ohmic_R, self.polar_R_c)

    @property
    def time_constant(self) -> NDArray[np.float64]:
        return self.polar_R_c * self.polar_capacitance_C


# Nominal 5 Ah LiFePO4 cell used by the shipped scenarios.
NOMINAL_CELL = CellParams.from_datasheet(5.0, 4.3e3, 3.8e-3, 4.0e-3)


@frozen
class CellState:
    soc: float
    v_c: float


@frozen
class PackConfig(SamplingMixin):
    """
    Geometry, nominal cell parameters and measurement setup of a pack.

    dt (seconds) is inherited from SamplingMixin, which also derives sample_rate.
    """

    modules_m: int = field(converter=int, validator=validators.ge(2))
    series_n: int = field(converter=int, validator=validators.ge(1))
    nominal_params: CellParams = field(default=NOMINAL_CELL)
    param_uncertainty: float = field(default=0.05, converter=float)
    ocv: OcvCurve = field(factory=OcvCurve.default)
    noise_amplitude: float = field(
        default=2e-3, converter=float, validator=validators.ge(0)
    )
    rng_seed: int = field(default=0, converter=int)

    @param_uncertainty.validator
    def _check_uncertainty(self, attribute, value):
        if not 0.0 <= value < 1.0:
            raise ConfigError(f"param_uncertainty must lie in [0, 1), got {value}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.modules_m, self.series_n)


@frozen
class FaultSpec:
    """An internal short of resistance r_short across one cell, from onset_time on."""

    module_index: int = field(converter=int, validator=validators.ge(1))
    cell_index: int = field(converter=int, validator=validators.ge(1))
    r_short: float = field(converter=float, validator=validators.gt(0))
    onset_time: float = field(default=0.0, converter=float, validator=validators.ge(0))

    def is_active(self, time: float, tol: float = 1e-9) -> bool:
        return self.onset_time <= time + tol

    def check_fits(self, config: PackConfig):
        if self.module_index > config.modules_m or self.cell_index > config.series_n:
            raise ConfigError(
                f"fault at module {self.module_index}, cell {self.cell_index} "
                f"lies outside a {config.modules_m}x{config.series_n} pack"
            )


@frozen(eq=False)
class PackState:
    """
    Full state of the pack at one sampling instant.

    soc and v_c are the integrated states. The remaining arrays describe the
    electrical operating point at this instant: module_currents from
    Kirchhoff's laws, short_currents through active shorts, and each cell's
    terminal voltage. Positive current means discharge.
    """

    soc: NDArray[np.float64] = field()
    v_c: NDArray[np.float64]
    params: CellParams
    ocv: OcvCurve
    dt: float
    step_index: int = 0
    pack_current: float = 0.0
    module_currents: NDArray[np.float64] = field(
        default=Factory(lambda self: np.zeros(self.soc.shape[0]), takes_self=True)
    )
    terminal_voltage: float = field(default=np.nan)
    short_currents: NDArray[np.float64] = field(
        default=Factory(lambda self: np.zeros_like(self.soc), takes_self=True)
    )
    cell_voltage: NDArray[np.float64] = field(
        default=Factory(
            lambda self: self.ocv(self.soc) - self.v_c, takes_self=True
        )
    )

    @soc.validator
    def _check_shape(self, attribute, value):
        if value.ndim != 2:
            raise ConfigError(f"pack state arrays must be (m, n), got {value.shape}")

    @property
    def time(self) -> float:
        return self.step_index * self.dt

    @property
    def shape(self) -> tuple[int, int]:
        return self.soc.shape

    def cell(self, module_index: int, cell_index: int) -> CellState:
        """The state of one cell, 1-based indices as in FaultSpec."""
        i, j = module_index - 1, cell_index - 1
        return CellState(float(self.soc[i, j]), float(self.v_c[i, j]))

    def total_charge(self) -> float:
        """Sum over cells of Q * soc, in ampere-seconds."""
        return float(np.sum(self.params.capacity_Q * self.soc))


@frozen
class Measurement:
    time: float
    module_voltages: NDArray[np.float64] = field(converter=_as_float_array)
    pack_current: float = field(converter=float)

    @module_voltages.validator
    def _check_modules(self, attribute, value):
        if value.ndim != 1 or value.size < 2:
            raise LengthMismatchError(
                f"a measurement carries one voltage per module, m >= 2, got shape {value.shape}"
            )


def build_pack(
    config: PackConfig,
    initial_soc: float,
    rng: Optional[np.random.Generator] = None,
) -> PackState:
    """
    Build a resting pack with every cell at initial_soc.

    Each of the four cell parameters is perturbed multiplicatively by an
    independent factor drawn uniformly from [1 - u, 1 + u], u = param_uncertainty.

    :param config: pack description
    :type config: PackConfig
    :param initial_soc: starting state of charge of every cell
    :type initial_soc: float
    :param rng: random generator, defaults to one seeded with config.rng_seed
    :type rng: Optional[np.random.Generator], optional
    :return: the initial state at time 0
    :rtype: PackState
    """
    if not 0.0 <= initial_soc <= 1.0:
        raise ConfigError(f"initial_soc must lie in [0, 1], got {initial_soc}")
    if rng is None:
        rng = np.random.default_rng(config.rng_seed)

    u = config.param_uncertainty
    shape = config.shape
    perturbed = []
    for nominal in config.nominal_params.as_tuple():
        if u > 0:
            factor = rng.uniform(1.0 - u, 1.0 + u, size=shape)
        else:
            factor = np.ones(shape)
        perturbed.append(nominal * factor)
    params = CellParams(*perturbed)
    logger.debug("built %dx%d pack with %.1f%% parameter spread", *shape, 100 * u)

    return PackState(
        soc=np.full(shape, float(initial_soc)),
        v_c=np.zeros(shape),
        params=params,
        ocv=config.ocv,
        dt=config.dt,
    )
