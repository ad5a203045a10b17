import numpy as np
from numpy.typing import NDArray
from attrs import frozen, field, validators


def convert_period_and_rate(value: float) -> float:
    return 1.0 / value


@frozen(slots=False)
class SamplingMixin:
    """
    Implements a 'dt' and 'sample_rate' interface.

    dt has primacy; sample_rate is derived from it so the two can never disagree.
    """

    dt: float = field(
        default=0.01, kw_only=True, converter=float, validator=validators.gt(0)
    )

    @property
    def sample_rate(self) -> float:
        return convert_period_and_rate(self.dt)

    def num_samples(self, duration: float) -> int:
        """Number of whole samples that fit in duration seconds."""
        return int(np.floor(duration / self.dt + 1e-9))

    def sample_times(self, n: int, start: int = 0) -> NDArray[np.float64]:
        """
        Times of samples start..start+n-1.

        Computed as index * dt rather than by accumulation, so long runs do not drift.
        """
        return (start + np.arange(n)) * self.dt
