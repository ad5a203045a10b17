import logging
from importlib import resources
from pathlib import Path
from typing import Union

import numpy as np
from numpy.typing import ArrayLike, NDArray
from attrs import frozen, field

from koopman_isc.exceptions import ConfigError

logger = logging.getLogger(__name__)

DEFAULT_OCV_TABLE = "lfp_ocv.csv"


def _as_breakpoints(value: ArrayLike) -> NDArray[np.float64]:
    table = np.asarray(value, dtype=float)
    if table.ndim != 2 or table.shape[1] != 2:
        raise ConfigError(f"OCV table must be a list of (soc, ocv) pairs, got shape {table.shape}")
    return table


@frozen(eq=False)
class OcvCurve:
    """
    Piecewise-linear open-circuit voltage as a function of state of charge.

    breakpoints is an (N, 2) array of (soc, ocv) rows.
    """

    breakpoints: NDArray[np.float64] = field(converter=_as_breakpoints)

    @breakpoints.validator
    def _check_breakpoints(self, attribute, value):
        soc, ocv = value[:, 0], value[:, 1]
        if len(soc) < 2:
            raise ConfigError("OCV table needs at least two breakpoints")
        if np.any(np.diff(soc) <= 0):
            raise ConfigError("OCV soc breakpoints must be strictly increasing")
        if soc[0] != 0.0 or soc[-1] != 1.0:
            raise ConfigError("OCV soc breakpoints must cover 0 and 1")
        if np.any(np.diff(ocv) < 0):
            raise ConfigError("OCV must be non-decreasing in soc")
        if not np.all(np.isfinite(value)):
            raise ConfigError("OCV table contains non-finite values")

    @property
    def soc(self) -> NDArray[np.float64]:
        return self.breakpoints[:, 0]

    @property
    def ocv(self) -> NDArray[np.float64]:
        return self.breakpoints[:, 1]

    def __call__(self, soc: ArrayLike) -> NDArray[np.float64]:
        return ocv_lookup(self, soc)

    @classmethod
    def from_csv(cls, path: Union[str, Path]) -> "OcvCurve":
        """Load a two-column (soc, ocv) table; '#' starts a comment."""
        try:
            table = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        except (OSError, ValueError) as err:
            raise ConfigError(f"cannot read OCV table {path}: {err}") from err
        return cls(table)

    @classmethod
    def default(cls) -> "OcvCurve":
        """The shipped LiFePO4-like table."""
        with resources.as_file(
            resources.files("koopman_isc.data") / DEFAULT_OCV_TABLE
        ) as path:
            return cls.from_csv(path)


def ocv_lookup(curve: OcvCurve, soc: ArrayLike) -> NDArray[np.float64]:
    """
    Interpolate the OCV at soc, which may be a scalar or an array of any shape.

    Out-of-range soc is clamped to [0, 1] first.
    """
    clamped = np.clip(np.asarray(soc, dtype=float), 0.0, 1.0)
    return np.interp(clamped, curve.soc, curve.ocv)
