import numpy as np
import pytest

from koopman_isc.exceptions import DegenerateDataError, WindowSizeError
from koopman_isc.koopman_model import (
    HankelConfig,
    KoopmanLinearModel,
    KoopmanPredictor,
    build_hankel,
    dump_matrix,
    fit,
    fit_residual,
    learning_trend,
    predict,
    spectrum,
)


def two_mode_series(n):
    k = np.arange(n)
    return 2.0 * 0.95**k + 0.8**k


def test_hankel_windows_by_hand():
    windows = build_hankel([1, 2, 3, 4, 5], 1)
    np.testing.assert_array_equal(windows.upsilon_o, [[1, 2, 3], [2, 3, 4]])
    np.testing.assert_array_equal(windows.upsilon_u, [[2, 3, 4], [3, 4, 5]])
    assert windows.delay_tau == 1


def test_hankel_shift_property():
    windows = build_hankel(np.random.default_rng(0).normal(size=50), 6)
    np.testing.assert_array_equal(windows.upsilon_o[:, 1:], windows.upsilon_u[:, :-1])
    np.testing.assert_array_equal(windows.upsilon_o[1:, :], windows.upsilon_u[:-1, :])


def test_hankel_of_constant_series_repeats_one_column():
    windows = build_hankel(np.full(10, 3.3), 3)
    np.testing.assert_array_equal(windows.upsilon_o, 3.3)


def test_hankel_boundary_length_gives_one_column():
    windows = build_hankel(np.arange(7.0), 5)
    assert windows.upsilon_o.shape == (6, 1)


def test_hankel_rejects_short_series():
    with pytest.raises(WindowSizeError):
        build_hankel(np.arange(6.0), 5)


def test_hankel_config_rejects_short_learning_window():
    with pytest.raises(WindowSizeError):
        HankelConfig(delay_tau=20, learn_len_L=21, predict_len_P=10)
    assert HankelConfig().window_len == 2200


def test_geometric_series_is_fitted_and_continued():
    y = 0.9 ** np.arange(150)
    windows = build_hankel(y[:50], 1)
    model = fit(windows)
    np.testing.assert_allclose(model.kappa @ windows.upsilon_o, windows.upsilon_u, atol=1e-10)
    prediction = predict(model, 100)
    np.testing.assert_allclose(prediction, y[50:], rtol=1e-8)


def test_two_mode_oracle():
    y = two_mode_series(300)
    windows = build_hankel(y[:200], 5)
    model = fit(windows)
    prediction = predict(model, 100)
    truth = y[200:]
    rmse = np.sqrt(np.mean((prediction - truth) ** 2)) / np.sqrt(np.mean(truth**2))
    assert rmse < 1e-6
    eigenvalues = spectrum(model)
    for root in (0.95, 0.8):
        assert np.min(np.abs(eigenvalues - root)) < 1e-8
    assert fit_residual(windows, model) < 1e-9


def test_constant_series_is_a_fixed_point():
    windows = build_hankel(np.full(40, 9.96), 4)
    model = fit(windows)
    np.testing.assert_allclose(model.kappa @ np.full(5, 9.96), 9.96, rtol=1e-10)
    np.testing.assert_allclose(predict(model, 20), 9.96, rtol=1e-10)


def test_zero_series_is_degenerate():
    with pytest.raises(DegenerateDataError):
        fit(build_hankel(np.zeros(30), 3))


def test_zero_state_predicts_zeros():
    model = KoopmanLinearModel(kappa=np.eye(3), last_embedded=np.zeros(3))
    np.testing.assert_array_equal(predict(model, 5), 0.0)


def test_predict_needs_a_step():
    model = KoopmanLinearModel(kappa=np.eye(2), last_embedded=np.ones(2))
    with pytest.raises(WindowSizeError):
        predict(model, 0)


def test_non_finite_operator_is_rejected():
    with pytest.raises(DegenerateDataError):
        KoopmanLinearModel(kappa=np.full((2, 2), np.nan), last_embedded=np.ones(2))


def test_operator_is_scale_equivariant():
    y = np.random.default_rng(3).normal(size=200)
    kappa = fit(build_hankel(y, 5)).kappa
    scaled = fit(build_hankel(10.0 * y, 5)).kappa
    np.testing.assert_allclose(scaled, kappa, atol=1e-9)


@pytest.mark.parametrize("detrend", ["none", "level", "linear"])
def test_predictor_continues_an_offset_decay(detrend):
    k = np.arange(150)
    y = 10.0 + 0.5 * 0.9**k
    hankel = HankelConfig(delay_tau=5, learn_len_L=100, predict_len_P=50)
    predictor = KoopmanPredictor(hankel, detrend)
    np.testing.assert_allclose(predictor(y[:100]), y[100:], atol=1e-7)


def test_linear_trend_is_continued():
    y = 3.0 + 0.01 * np.arange(8.0)
    trend, continued = learning_trend(y[:5], 3, "linear")
    np.testing.assert_allclose(trend, y[:5])
    np.testing.assert_allclose(continued, y[5:])


def test_level_and_flat_trends():
    trend, continued = learning_trend(np.array([1.0, 2.0, 6.0]), 2, "level")
    np.testing.assert_array_equal(continued, [3.0, 3.0])
    trend, continued = learning_trend(np.full(4, 9.96), 2, "linear")
    np.testing.assert_array_equal(trend, 9.96)
    np.testing.assert_array_equal(continued, 9.96)
    trend, continued = learning_trend(np.ones(3), 2, "none")
    np.testing.assert_array_equal(continued, 0.0)


def test_linear_detrend_follows_a_noisy_ramp():
    # a charging pack: a slow common ramp under measurement noise
    rng = np.random.default_rng(5)
    k = np.arange(200)
    ramp = 10.0 + 2e-4 * k
    y = ramp + rng.uniform(-1e-3, 1e-3, size=k.size)
    hankel = HankelConfig(delay_tau=5, learn_len_L=150, predict_len_P=50)
    error = KoopmanPredictor(hankel, "linear")(y[:150]) - ramp[150:]
    assert abs(error.mean()) < 2e-3
    assert np.max(np.abs(error)) < 5e-3


def test_flat_learning_window_is_degenerate_after_detrending():
    predictor = KoopmanPredictor(HankelConfig(delay_tau=5, learn_len_L=100, predict_len_P=50))
    with pytest.raises(DegenerateDataError):
        predictor(np.full(100, 9.96))


def test_unknown_trend_is_rejected():
    with pytest.raises(ValueError):
        KoopmanPredictor(detrend="quadratic")


def test_predictor_checks_learning_length():
    predictor = KoopmanPredictor(HankelConfig(delay_tau=5, learn_len_L=100, predict_len_P=50))
    with pytest.raises(WindowSizeError):
        predictor(np.ones(99))


def test_dump_matrix_is_row_major_text(tmp_path):
    model = fit(build_hankel(two_mode_series(60), 3))
    path = tmp_path / "kappa.txt"
    dump_matrix(model, path)
    np.testing.assert_array_equal(np.loadtxt(path), model.kappa)


def test_dump_matrix_appends_to_an_open_file(tmp_path):
    model = fit(build_hankel(two_mode_series(60), 3))
    path = tmp_path / "kappa.txt"
    with open(path, "w") as handle:
        dump_matrix(model, handle, header="first")
        dump_matrix(model, handle, header="second")
    assert path.read_text().startswith("# first\n")
    np.testing.assert_array_equal(np.loadtxt(path), np.vstack([model.kappa, model.kappa]))
