"""
Koopman modes of a prediction-error sequence by the companion-matrix variant
of the Arnoldi algorithm.

Snapshots Theta = [y_0 ... y_{k-1}] are fitted to the next snapshot y_k by a
least-squares recurrence a. The roots of the companion polynomial are the
Ritz values, and the Ritz vectors (Koopman modes scaled by the eigenfunction
values at the first snapshot) solve v T = Theta for the Vandermonde matrix
T_ip = lambda_i ** p.
"""
import logging
from collections.abc import Sequence
from typing import Optional

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray
from attrs import frozen, field, validators

from koopman_isc.exceptions import (
    DegenerateDataError,
    IllConditionedModesError,
    InsufficientDataError,
    LengthMismatchError,
)

logger = logging.getLogger(__name__)

PINV_RTOL = 1e-10
DUPLICATE_TOL = 1e-8
MAGNITUDE_TOL = 1e-6
MAX_CONDITION = 1e12


@frozen(eq=False)
class ErrorSequence:
    values: NDArray[np.float64]
    module_index: int = 1

    def __len__(self):
        return len(self.values)


@frozen(eq=False)
class KrylovData:
    theta: NDArray[np.float64] = field()
    final_snapshot: NDArray[np.float64]

    @theta.validator
    def _check_theta(self, attribute, value):
        if value.ndim != 2 or min(value.shape) < 1:
            raise InsufficientDataError(f"snapshot matrix must be d x k, got {value.shape}")


@frozen(eq=False)
class RitzDecomposition:
    companion_coeffs_a: NDArray[np.float64]
    ritz_values: NDArray[np.complex128]
    ritz_vectors: NDArray[np.complex128]
    fit_residual_e: NDArray[np.float64]


@frozen(eq=False)
class ModeSample:
    module_index: int
    statistics: NDArray[np.float64] = field(converter=lambda v: np.asarray(v, dtype=float))

    @statistics.validator
    def _check_statistics(self, attribute, value):
        if not np.all(np.isfinite(value)) or np.any(value < 0):
            raise ValueError("mode statistics must be finite and non-negative")

    def __len__(self):
        return self.statistics.size


def error_sequence(
    measured: ArrayLike, predicted: ArrayLike, module_index: int = 1
) -> ErrorSequence:
    measured = np.asarray(measured, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    if measured.shape != predicted.shape:
        raise LengthMismatchError(
            f"measured {measured.shape} and predicted {predicted.shape} differ"
        )
    return ErrorSequence(measured - predicted, module_index)


def embed_error(
    errors: ErrorSequence, embed_dim_d: int, num_snapshots_k: int, offset: int = 0
) -> KrylovData:
    """
    Delay windows of length d starting at offset, offset+1, ...: the first k
    form Theta and window k is the final snapshot.
    """
    needed = offset + embed_dim_d + num_snapshots_k
    if embed_dim_d < 1 or num_snapshots_k < 1 or len(errors) < needed:
        raise InsufficientDataError(
            f"{len(errors)} error samples cannot hold d={embed_dim_d}, "
            f"k={num_snapshots_k} at offset {offset}"
        )
    block = errors.values[offset:needed]
    windows = np.lib.stride_tricks.sliding_window_view(block, embed_dim_d).T
    return KrylovData(
        theta=np.ascontiguousarray(windows[:, :num_snapshots_k]),
        final_snapshot=windows[:, num_snapshots_k].copy(),
    )


def companion_fit(data: KrylovData) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """
    Least-squares recurrence coefficients a with Theta a ~ y_k, and e = Theta a - y_k.

    e is orthogonal to the columns of Theta.
    """
    if not np.any(data.theta):
        raise DegenerateDataError("snapshot matrix is identically zero")
    pinv = scipy.linalg.pinv(data.theta, atol=0.0, rtol=PINV_RTOL)
    coeffs = pinv @ data.final_snapshot
    residual = data.theta @ coeffs - data.final_snapshot
    return coeffs, residual


def companion_matrix(coeffs_a: ArrayLike) -> NDArray[np.float64]:
    """C = [[0, a_0], [I_{k-1}, a_1..a_{k-1}]]."""
    a = np.asarray(coeffs_a, dtype=float).ravel()
    k = a.size
    companion = np.zeros((k, k))
    companion[1:, :-1] = np.eye(k - 1)
    companion[:, -1] = a
    return companion


def sort_ritz(values: ArrayLike) -> NDArray[np.complex128]:
    """Descending magnitude, ties by descending real then imaginary part."""
    values = np.asarray(values, dtype=complex)
    order = np.lexsort((-values.imag, -values.real, -np.abs(values)))
    return values[order]


def ritz_values(coeffs_a: ArrayLike) -> NDArray[np.complex128]:
    """Roots of z^k - a_{k-1} z^{k-1} - ... - a_0, as eigenvalues of the companion matrix."""
    if np.size(coeffs_a) < 1:
        raise InsufficientDataError("need at least one recurrence coefficient")
    return sort_ritz(scipy.linalg.eigvals(companion_matrix(coeffs_a)))


def merge_duplicates(
    values: ArrayLike, tol: float = DUPLICATE_TOL
) -> NDArray[np.complex128]:
    """Drop values within tol of an earlier one; T is singular at exact duplicates."""
    kept = []
    for value in np.asarray(values, dtype=complex):
        if all(abs(value - other) >= tol for other in kept):
            kept.append(value)
    return np.array(kept, dtype=complex)


def dedupe_magnitudes(
    values: ArrayLike, tol: float = MAGNITUDE_TOL
) -> NDArray[np.complex128]:
    kept = []
    for value in np.asarray(values, dtype=complex):
        if all(abs(abs(value) - abs(other)) >= tol for other in kept):
            kept.append(value)
    return np.array(kept, dtype=complex)


def vandermonde(values: ArrayLike, k: int) -> NDArray[np.complex128]:
    """T with T[i, p] = values[i] ** p for p = 0..k-1."""
    return np.vander(np.asarray(values, dtype=complex), k, increasing=True)


def ritz_vectors(data: KrylovData, ritz_values: ArrayLike) -> NDArray[np.complex128]:
    """
    Solve v T = Theta for the Ritz vectors v (d x k).

    Near-duplicate Ritz values are merged first, so fewer than k columns may
    come back.

    :raises IllConditionedModesError: if cond(T) exceeds 1e12
    """
    values = merge_duplicates(ritz_values)
    k = data.theta.shape[1]
    t = vandermonde(values, k)
    if t.shape[0] == k:
        condition = np.linalg.cond(t)
        if not np.isfinite(condition) or condition > MAX_CONDITION:
            raise IllConditionedModesError(f"cond(T) = {condition:.3g}")
        return scipy.linalg.solve(t.T, data.theta.T.astype(complex)).T
    # merged set: T is no longer square, solve in the least-squares sense
    return _lstsq_modes(data, t)


def _lstsq_modes(data: KrylovData, t: NDArray[np.complex128]) -> NDArray[np.complex128]:
    solution, *_ = scipy.linalg.lstsq(t.T, data.theta.T.astype(complex))
    return solution.T


def decompose(data: KrylovData) -> RitzDecomposition:
    """
    Companion fit, Ritz values and Ritz vectors of one block of snapshots.

    Falls back to the magnitude-deduplicated Ritz set if the full Vandermonde
    matrix is ill-conditioned.
    """
    coeffs, residual = companion_fit(data)
    values = ritz_values(coeffs)
    try:
        vectors = ritz_vectors(data, values)
        values = merge_duplicates(values)
    except IllConditionedModesError as err:
        values = dedupe_magnitudes(values)
        logger.debug("%s; retrying with %d magnitude-distinct Ritz values", err, values.size)
        vectors = _lstsq_modes(data, vandermonde(values, data.theta.shape[1]))
    return RitzDecomposition(
        companion_coeffs_a=coeffs,
        ritz_values=values,
        ritz_vectors=vectors,
        fit_residual_e=residual,
    )


def mode_statistics(
    ritz_vectors: ArrayLike,
    ritz_values: Optional[ArrayLike] = None,
    module_index: int = 1,
) -> ModeSample:
    """Entrywise magnitudes of every Ritz vector, flattened."""
    return ModeSample(module_index, np.abs(np.asarray(ritz_vectors)).ravel())


@frozen
class KMGenerator:
    """
    Koopman modes of a whole prediction-error window.

    With tile, the window is cut into consecutive blocks of d + k samples and
    every block is decomposed; otherwise only the block at the start of the
    window is. All magnitudes are pooled into one ModeSample.
    """

    embed_dim_d: int = field(default=10, converter=int, validator=validators.ge(1))
    num_snapshots_k: int = field(default=1, converter=int, validator=validators.ge(1))
    tile: bool = True

    @property
    def block_len(self) -> int:
        return self.embed_dim_d + self.num_snapshots_k

    def offsets(self, length: int) -> range:
        if length < self.block_len:
            raise InsufficientDataError(
                f"{length} error samples are fewer than d + k = {self.block_len}"
            )
        if not self.tile:
            return range(0, 1)
        return range(0, length - self.block_len + 1, self.block_len)

    def decompositions(self, errors: ErrorSequence) -> list[RitzDecomposition]:
        found = []
        for offset in self.offsets(len(errors)):
            data = embed_error(errors, self.embed_dim_d, self.num_snapshots_k, offset)
            try:
                found.append(decompose(data))
            except DegenerateDataError:
                logger.debug(
                    "module %d: zero error block at offset %d", errors.module_index, offset
                )
        return found

    def __call__(self, errors: ErrorSequence) -> tuple[ModeSample, list[RitzDecomposition]]:
        decompositions = self.decompositions(errors)
        if decompositions:
            statistics = np.concatenate(
                [np.abs(d.ritz_vectors).ravel() for d in decompositions]
            )
        else:
            statistics = np.empty(0)
        return ModeSample(errors.module_index, statistics), decompositions


def mode_rows(
    window: int, module_index: int, decompositions: Sequence[RitzDecomposition]
) -> list[tuple]:
    """Rows (window, module, re_lambda, im_lambda, mode_mag) for the mode dump."""
    rows = []
    for decomposition in decompositions:
        magnitudes = np.linalg.norm(decomposition.ritz_vectors, axis=0)
        for value, magnitude in zip(decomposition.ritz_values, magnitudes):
            rows.append((window, module_index, value.real, value.imag, magnitude))
    return rows
