"""
Coupled cell-level equivalent circuit model of a parallel-connected pack of series strings.

Each cell is an OCV source, an ohmic resistance R and one RC polarization branch:

    d soc / dt = -I / Q
    d v_c / dt = I / C - v_c / (R_c C)
    V = OCV(soc) - v_c - I R

The modules share the pack terminals, so their currents follow from
Kirchhoff's laws every step. An internal short drains I_sc = V_cell / r_short
from its cell, evaluated with the terminal voltage of the previous step.
"""
import logging
from collections.abc import Sequence

import numpy as np
from numpy.typing import NDArray
from attrs import frozen, evolve

from koopman_isc.engine import Engine
from koopman_isc.exceptions import SimulationFault
from koopman_isc.pack import FaultSpec, Measurement, PackConfig, PackState

logger = logging.getLogger(__name__)


def module_emf(state: PackState) -> NDArray[np.float64]:
    """E^i = sum_j (OCV_ij - v_c_ij) for every module."""
    return np.sum(state.ocv(state.soc) - state.v_c, axis=1)


def solve_module_currents(
    state: PackState, pack_current: float
) -> tuple[NDArray[np.float64], float]:
    """
    Split the pack current between the parallel modules.

    Solves V_t = E^i - I^i R_s^i for every module i together with
    sum_i I^i = pack_current, in closed form.

    :return: module currents (m,) and the terminal voltage
    :rtype: tuple[NDArray[np.float64], float]
    """
    emf = module_emf(state)
    if not np.all(np.isfinite(emf)):
        raise SimulationFault(f"non-finite module EMF at t={state.time:.6f}s: {emf}")
    r_series = np.sum(state.params.ohmic_R, axis=1)
    conductance = 1.0 / r_series
    v_t = (np.sum(emf * conductance) - pack_current) / np.sum(conductance)
    currents = (emf - v_t) * conductance
    return currents, float(v_t)


def short_currents(state: PackState, faults: Sequence[FaultSpec]) -> NDArray[np.float64]:
    """Currents through the shorts that are active at state.time."""
    i_sc = np.zeros(state.shape)
    for fault in faults:
        if fault.is_active(state.time):
            i, j = fault.module_index - 1, fault.cell_index - 1
            i_sc[i, j] += state.cell_voltage[i, j] / fault.r_short
    return i_sc


def _operating_point(state: PackState, pack_current: float) -> PackState:
    currents, v_t = solve_module_currents(state, pack_current)
    cell_current = currents[:, None] + state.short_currents
    cell_voltage = (
        state.ocv(state.soc) - state.v_c - cell_current * state.params.ohmic_R
    )
    return evolve(
        state,
        pack_current=float(pack_current),
        module_currents=currents,
        terminal_voltage=v_t,
        cell_voltage=cell_voltage,
    )


def step(
    state: PackState,
    config: PackConfig,
    pack_current: float,
    faults: Sequence[FaultSpec] = (),
) -> PackState:
    """
    Forward-Euler step of every cell by config.dt.

    The returned state carries the operating point at the new instant, so
    measure() can be called on it directly.
    """
    dt = config.dt
    params = state.params
    i_sc = short_currents(state, faults)
    currents, _ = solve_module_currents(state, pack_current)
    i_eff = currents[:, None] + i_sc

    soc = state.soc - i_eff * dt / params.capacity_Q
    v_c = state.v_c + dt * (
        i_eff / params.polar_capacitance_C
        - state.v_c / (params.polar_R_c * params.polar_capacitance_C)
    )
    if not (np.all(np.isfinite(soc)) and np.all(np.isfinite(v_c))):
        raise SimulationFault(f"non-finite cell state after t={state.time:.6f}s")

    out_of_range = (soc < 0.0) | (soc > 1.0)
    if np.any(out_of_range):
        newly = out_of_range & (state.soc > 0.0) & (state.soc < 1.0)
        if np.any(newly):
            cells = [(int(i) + 1, int(j) + 1) for i, j in zip(*np.nonzero(newly))]
            logger.warning(
                "soc left [0, 1] at t=%.2fs for cells %s; clamping", state.time, cells
            )
        soc = np.clip(soc, 0.0, 1.0)

    advanced = evolve(
        state, soc=soc, v_c=v_c, step_index=state.step_index + 1, short_currents=i_sc
    )
    return _operating_point(advanced, pack_current)


def measure(
    state: PackState, config: PackConfig, rng: np.random.Generator
) -> Measurement:
    """
    Module voltages V^i = sum_j V_ij, each with additive noise uniform in
    [-noise_amplitude, +noise_amplitude].
    """
    voltages = np.sum(state.cell_voltage, axis=1)
    if config.noise_amplitude > 0:
        voltages = voltages + rng.uniform(
            -config.noise_amplitude, config.noise_amplitude, size=voltages.shape
        )
    return Measurement(state.time, voltages, state.pack_current)


def settle_polarization(
    state: PackState, pack_current: float, iterations: int = 8
) -> PackState:
    """
    Put every RC branch at its steady state v_c = I_ij R_c for a constant pack current.

    The module currents depend on v_c through the module EMFs, so the two are
    iterated to a fixed point; the coupling is weak and a few rounds suffice.
    """
    for _ in range(iterations):
        currents, _ = solve_module_currents(state, pack_current)
        v_c = (currents[:, None] + state.short_currents) * state.params.polar_R_c
        state = evolve(state, v_c=v_c)
    return _operating_point(state, pack_current)


@frozen
class EcmEngine(Engine):
    """The coupled ECM behind the Engine interface."""

    config: PackConfig

    def step(
        self, state: PackState, pack_current: float, faults: Sequence[FaultSpec] = ()
    ) -> PackState:
        return step(state, self.config, pack_current, faults)

    def measure(self, state: PackState, rng: np.random.Generator) -> Measurement:
        return measure(state, self.config, rng)

    def prepare(
        self, state: PackState, pack_current: float, settle: bool = False
    ) -> PackState:
        """Operating point of a freshly built pack, optionally with settled RC branches."""
        if settle:
            return settle_polarization(state, pack_current)
        return _operating_point(state, pack_current)
