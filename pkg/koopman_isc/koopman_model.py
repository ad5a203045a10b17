"""
Hankel dynamic mode decomposition of a scalar series.

A learning window y_0..y_{L-1} is delay-embedded with tau delays and the
approximate Koopman operator is the least-squares map between consecutive
embedded states, kappa = Upsilon_u pinv(Upsilon_o).
"""
import logging
from pathlib import Path
from typing import Literal, TextIO, Union

import numpy as np
import scipy.linalg
from numpy.polynomial import Polynomial
from numpy.typing import ArrayLike, NDArray
from attrs import frozen, field, validators

from koopman_isc.exceptions import DegenerateDataError, WindowSizeError

logger = logging.getLogger(__name__)

PINV_RTOL = 1e-10

Trend = Literal["none", "level", "linear"]
TRENDS = ("none", "level", "linear")


@frozen
class HankelConfig:
    delay_tau: int = field(default=20, converter=int, validator=validators.ge(1))
    learn_len_L: int = field(default=1500, converter=int)
    predict_len_P: int = field(default=700, converter=int, validator=validators.ge(1))

    @learn_len_L.validator
    def _check_learn_len(self, attribute, value):
        if value < self.delay_tau + 2:
            raise WindowSizeError(
                f"learning window of {value} samples is too short for {self.delay_tau} delays"
            )

    @property
    def window_len(self) -> int:
        return self.learn_len_L + self.predict_len_P


@frozen(eq=False)
class HankelWindows:
    upsilon_o: NDArray[np.float64]
    upsilon_u: NDArray[np.float64]

    @property
    def delay_tau(self) -> int:
        return self.upsilon_o.shape[0] - 1


@frozen(eq=False)
class KoopmanLinearModel:
    kappa: NDArray[np.float64] = field()
    last_embedded: NDArray[np.float64]

    @kappa.validator
    def _check_finite(self, attribute, value):
        if not np.all(np.isfinite(value)):
            raise DegenerateDataError("Koopman operator has non-finite entries")


def build_hankel(series: ArrayLike, tau: int) -> HankelWindows:
    """
    Delay-embed series into the pair of shifted Hankel windows.

    Column c of upsilon_o is (y_c, ..., y_{c+tau}) for c = 0..L-tau-2, and
    upsilon_u holds the same columns advanced by one sample.

    :param series: scalar samples y_0..y_{L-1}
    :type series: ArrayLike
    :param tau: number of embedded delays
    :type tau: int
    :raises WindowSizeError: if L < tau + 2
    :rtype: HankelWindows
    """
    y = np.asarray(series, dtype=float).ravel()
    if tau < 1 or y.size < tau + 2:
        raise WindowSizeError(f"{y.size} samples cannot be embedded with tau={tau}")
    embedded = np.lib.stride_tricks.sliding_window_view(y, tau + 1).T
    return HankelWindows(
        upsilon_o=np.ascontiguousarray(embedded[:, :-1]),
        upsilon_u=np.ascontiguousarray(embedded[:, 1:]),
    )


def fit(windows: HankelWindows, rtol: float = PINV_RTOL) -> KoopmanLinearModel:
    """
    kappa = Upsilon_u pinv(Upsilon_o), dropping singular values below rtol * sigma_max.
    """
    if not np.any(windows.upsilon_o):
        raise DegenerateDataError("learning window is identically zero")
    pinv = scipy.linalg.pinv(windows.upsilon_o, atol=0.0, rtol=rtol)
    kappa = windows.upsilon_u @ pinv
    return KoopmanLinearModel(kappa=kappa, last_embedded=windows.upsilon_u[:, -1].copy())


def predict(model: KoopmanLinearModel, steps: int) -> NDArray[np.float64]:
    """Iterate v <- kappa v from the last embedded state and read the newest slot."""
    if steps < 1:
        raise WindowSizeError(f"cannot predict {steps} steps")
    out = np.empty(steps)
    v = model.last_embedded
    for s in range(steps):
        v = model.kappa @ v
        out[s] = v[-1]
    return out


def spectrum(model: KoopmanLinearModel) -> NDArray[np.complex128]:
    return scipy.linalg.eigvals(model.kappa)


def fit_residual(windows: HankelWindows, model: KoopmanLinearModel) -> float:
    """Frobenius norm of Upsilon_u - kappa Upsilon_o."""
    return float(np.linalg.norm(windows.upsilon_u - model.kappa @ windows.upsilon_o))


def dump_matrix(model: KoopmanLinearModel, target: Union[str, Path, TextIO], header: str = ""):
    """Write kappa row-major, whitespace separated, for debugging. target may be an open file."""
    np.savetxt(target, model.kappa, fmt="%.17g", header=header)


def learning_trend(
    y: NDArray[np.float64], horizon: int, kind: Trend = "linear"
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Trend of a learning window and its continuation over the next horizon samples.

    "level" is the window mean, "linear" the least-squares line through the
    window, "none" is zero.
    """
    if kind == "none":
        return np.zeros(y.size), np.zeros(horizon)
    k = np.arange(y.size + horizon, dtype=float)
    if np.ptp(y) == 0:
        # a flat window is its own level; its float mean may not be
        line = np.full(k.size, y[0])
    elif kind == "level":
        line = np.full(k.size, y.mean())
    else:
        line = Polynomial.fit(k[: y.size], y, 1)(k)
    return line[: y.size], line[y.size :]


@frozen
class KoopmanPredictor:
    """
    Fit on the first L samples of a window and predict the next P.

    The learning window's trend (see learning_trend) is removed before
    embedding and its continuation added back to the prediction, so the
    operator models fluctuations about the trend rather than the trend itself.
    """

    hankel: HankelConfig = field(factory=HankelConfig)
    detrend: Trend = field(default="linear", validator=validators.in_(TRENDS))
    rtol: float = PINV_RTOL

    def fit_window(
        self, learning: ArrayLike
    ) -> tuple[KoopmanLinearModel, NDArray[np.float64]]:
        """The operator of the detrended window and the trend over the prediction window."""
        y = np.asarray(learning, dtype=float)
        if y.size != self.hankel.learn_len_L:
            raise WindowSizeError(
                f"expected {self.hankel.learn_len_L} learning samples, got {y.size}"
            )
        trend, continued = learning_trend(y, self.hankel.predict_len_P, self.detrend)
        model = fit(build_hankel(y - trend, self.hankel.delay_tau), self.rtol)
        return model, continued

    def __call__(self, learning: ArrayLike) -> NDArray[np.float64]:
        model, continued = self.fit_window(learning)
        return predict(model, self.hankel.predict_len_P) + continued
