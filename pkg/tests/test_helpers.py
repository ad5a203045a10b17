import numpy as np
import pytest
import xarray as xr

from koopman_isc.exceptions import InputError
from koopman_isc.helpers.helpers import deep_update, filter_mapping, relabel_mapping
from koopman_isc.helpers.mixins import SamplingMixin, convert_period_and_rate
from koopman_isc.helpers.xarray import (
    hold_between_windows,
    read_telemetry_csv,
    telemetry_from_xarray,
    telemetry_to_xarray,
    write_telemetry_csv,
)
from koopman_isc.pack import Measurement


def test_filter_mapping_drops_none_and_unkept_keys():
    options = {"learn": 1000, "predict": None, "seed": 3}
    assert filter_mapping(options) == {"learn": 1000, "seed": 3}
    assert filter_mapping(options, keep=["learn", "predict", "threshold"]) == {"learn": 1000}


def test_relabel_mapping_keeps_unmapped_keys():
    assert relabel_mapping({"delay": 5, "learn": 100}, {"delay": "delay_tau"}) == {
        "delay_tau": 5,
        "learn": 100,
    }


def test_deep_update_merges_nested_and_dotted_keys():
    base = {"detector": {"learn": 1500, "predict": 700}, "seed": 1}
    merged = deep_update(base, {"detector.learn": 1000, "detector": {"threshold": 0.5}})
    assert merged == {"detector": {"learn": 1000, "predict": 700, "threshold": 0.5}, "seed": 1}
    assert base["detector"]["learn"] == 1500


def test_sampling_mixin_derives_the_rate():
    assert convert_period_and_rate(0.01) == pytest.approx(100.0)
    sampling = SamplingMixin(dt=0.02)
    assert sampling.sample_rate == pytest.approx(50.0)
    assert sampling.num_samples(1.0) == 50
    with pytest.raises(ValueError):
        SamplingMixin(dt=0.0)


def measurements():
    return [Measurement(0.01 * k, [9.96 + 1e-4 * k, 9.95], -25.0) for k in range(4)]


def test_telemetry_dataset_layout():
    data = telemetry_to_xarray(measurements())
    assert data["voltage"].dims == ("time", "module")
    assert list(data["module"].values) == [1, 2]
    assert data["voltage"].sel(module=1).values[3] == pytest.approx(9.9603)
    back = telemetry_from_xarray(data)
    assert back[2].time == pytest.approx(0.02)
    np.testing.assert_array_equal(back[2].module_voltages, measurements()[2].module_voltages)


def test_empty_telemetry_is_rejected():
    with pytest.raises(InputError):
        telemetry_to_xarray([])


def test_telemetry_csv_layout(tmp_path):
    path = tmp_path / "telemetry.csv"
    write_telemetry_csv(telemetry_to_xarray(measurements()), path)
    lines = path.read_text().splitlines()
    assert lines[0] == "time,I,V1,V2"
    assert lines[1] == "0.000000,-25.000000,9.960000000,9.950000000"
    data = read_telemetry_csv(path)
    np.testing.assert_allclose(data["voltage"].values[:, 1], 9.95)
    np.testing.assert_allclose(data["current"].values, -25.0)


@pytest.mark.parametrize(
    "content",
    [
        "time,V1,V2\n0.0,1.0,2.0\n",
        "time,I,V1\n0.0,0.0,1.0\n",
        "time,I,V2,V1\n0.0,0.0,1.0,2.0\n",
        "time,I,V1,V2\n0.0,0.0,abc,2.0\n",
        "",
    ],
)
def test_malformed_telemetry_is_an_input_error(tmp_path, content):
    path = tmp_path / "bad.csv"
    path.write_text(content)
    with pytest.raises(InputError):
        read_telemetry_csv(path)


def test_hold_between_windows_draws_a_staircase():
    per_window = xr.DataArray(
        [[1.0], [2.0]],
        dims=("window", "module"),
        coords={"window": [0, 1], "module": [1], "end_time": ("window", [0.2, 0.4])},
    )
    held = hold_between_windows(per_window, [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    values = held.sel(module=1).values
    assert np.isnan(values[:2]).all()
    np.testing.assert_array_equal(values[2:], [1.0, 1.0, 2.0, 2.0])
