from abc import ABC, abstractmethod
from collections.abc import Sequence

import numpy as np

from koopman_isc.pack import FaultSpec, Measurement, PackState


class Engine(ABC):
    """
    Interface for a class that advances a battery pack through time and observes it.
    """

    @abstractmethod
    def step(
        self, state: PackState, pack_current: float, faults: Sequence[FaultSpec] = ()
    ) -> PackState:
        """
        Advance the pack by one sampling interval.

        :param state: state at the current instant
        :type state: PackState
        :param pack_current: pack current in amperes, positive for discharge
        :type pack_current: float
        :param faults: internal shorts; those whose onset has passed are applied
        :type faults: Sequence[FaultSpec]
        """
        pass

    @abstractmethod
    def measure(self, state: PackState, rng: np.random.Generator) -> Measurement:
        """
        Observe the module voltages of state.

        :param state: state returned by step()
        :type state: PackState
        :param rng: source of measurement noise
        :type rng: np.random.Generator
        """
        pass
