import numpy as np
import pytest

from koopman_isc.config import PipelineConfig
from koopman_isc.koopman_model import HankelConfig
from koopman_isc.ocv import OcvCurve
from koopman_isc.pack import CellParams, Measurement, PackConfig, PackState, NOMINAL_CELL


@pytest.fixture
def flat_ocv():
    """3.4 V whatever the state of charge."""
    return OcvCurve([[0.0, 3.4], [1.0, 3.4]])


@pytest.fixture
def ideal_pack_config():
    """Two single-cell modules, identical cells, no noise."""
    return PackConfig(modules_m=2, series_n=1, param_uncertainty=0.0, noise_amplitude=0.0)


@pytest.fixture
def nominal_pack_config():
    """The 3S5P pack of the shipped scenarios, without parameter spread or noise."""
    return PackConfig(modules_m=5, series_n=3, param_uncertainty=0.0, noise_amplitude=0.0)


def uniform_params(shape, cell=NOMINAL_CELL):
    return CellParams(*(np.full(shape, float(value)) for value in cell.as_tuple()))


@pytest.fixture
def make_state(flat_ocv):
    def factory(v_c, soc=0.5, ocv=flat_ocv, dt=0.01):
        v_c = np.asarray(v_c, dtype=float)
        return PackState(
            soc=np.full(v_c.shape, soc),
            v_c=v_c,
            params=uniform_params(v_c.shape),
            ocv=ocv,
            dt=dt,
        )

    return factory


@pytest.fixture
def fast_pipeline():
    """Short windows so that a few hundred samples give several windows."""
    return PipelineConfig(
        hankel=HankelConfig(delay_tau=5, learn_len_L=100, predict_len_P=60),
        embed_dim_d=4,
        num_snapshots_k=6,
        grid_n_z=64,
    )


def synthetic_telemetry(n_samples, n_modules=3, seed=0, noise=2e-3, offsets=None, dt=0.01):
    """Noisy module voltages around a common slow wave, as Measurement records."""
    rng = np.random.default_rng(seed)
    times = np.arange(n_samples) * dt
    common = 10.0 + 0.01 * np.sin(2 * np.pi * 0.05 * times)
    voltages = common[:, None] + rng.uniform(-noise, noise, size=(n_samples, n_modules))
    if offsets is not None:
        voltages = voltages + np.asarray(offsets)
    return [Measurement(t, v, 0.0) for t, v in zip(times, voltages)]


@pytest.fixture
def telemetry_factory():
    return synthetic_telemetry
