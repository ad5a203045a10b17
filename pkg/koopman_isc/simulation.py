import logging
from collections.abc import Iterator, Sequence
from typing import Literal, Optional

import numpy as np
import xarray as xr
from attrs import frozen, mutable, field, validators, Factory

from koopman_isc.ecm import EcmEngine
from koopman_isc.engine import Engine
from koopman_isc.exceptions import ConfigError
from koopman_isc.helpers.xarray import telemetry_to_xarray
from koopman_isc.pack import FaultSpec, Measurement, PackConfig, PackState, build_pack

logger = logging.getLogger(__name__)


@frozen
class CurrentProfile:
    """
    Pack current demanded over time.

    kind "rest" draws nothing. kind "constant-current" draws magnitude amperes,
    entering the pack for "charge" and leaving it for "discharge"; internally
    a charge is a negative current.
    """

    kind: Literal["rest", "constant-current"] = field(
        default="rest", validator=validators.in_(["rest", "constant-current"])
    )
    magnitude: float = field(default=0.0, converter=float, validator=validators.ge(0))
    direction: Literal["charge", "discharge"] = field(
        default="charge", validator=validators.in_(["charge", "discharge"])
    )

    def __call__(self, time: float) -> float:
        if self.kind == "rest":
            return 0.0
        sign = -1.0 if self.direction == "charge" else 1.0
        return sign * self.magnitude


def simulate(
    engine: Engine,
    state: PackState,
    profile: CurrentProfile,
    faults: Sequence[FaultSpec],
    n_samples: int,
    rng: np.random.Generator,
) -> Iterator[Measurement]:
    """Yield n_samples measurements, the first one taken at state itself."""
    for k in range(n_samples):
        if k > 0:
            state = engine.step(state, profile(state.time), faults)
        yield engine.measure(state, rng)


@mutable
class Simulation:
    """
    Manages a simulation of a pack under a current profile with injected faults.

    The pack is built from config with config.rng_seed; the same generator
    then supplies the measurement noise, so a run is reproducible from the seed.
    """

    config: PackConfig
    profile: CurrentProfile = Factory(CurrentProfile)
    faults: list[FaultSpec] = Factory(list)
    initial_soc: float = field(default=0.5, converter=float)
    settle_polarization: bool = False
    engine: Engine = Factory(lambda self: EcmEngine(self.config), takes_self=True)
    data: Optional[xr.Dataset] = field(init=False, default=None)

    def __attrs_post_init__(self):
        for fault in self.faults:
            fault.check_fits(self.config)

    def initial_state(self, rng: np.random.Generator) -> PackState:
        state = build_pack(self.config, self.initial_soc, rng)
        return self.engine.prepare(state, self.profile(0.0), self.settle_polarization)

    def stream(self, duration: float) -> Iterator[Measurement]:
        """Generate measurements lazily; used to feed the detector sample by sample."""
        n_samples = self.config.num_samples(duration)
        if n_samples < 1:
            raise ConfigError(f"duration {duration}s holds no samples")
        rng = np.random.default_rng(self.config.rng_seed)
        state = self.initial_state(rng)
        logger.info(
            "simulating %d samples at %g Hz with %d fault(s)",
            n_samples,
            self.config.sample_rate,
            len(self.faults),
        )
        return simulate(self.engine, state, self.profile, self.faults, n_samples, rng)

    def simulate(self, duration: float, keep_data: bool = True) -> xr.Dataset:
        data = telemetry_to_xarray(list(self.stream(duration)))
        if keep_data is True:
            self.data = data
        return data
