import numpy as np
import pytest
import scipy.stats

from koopman_isc.exceptions import CalibrationError, GridMismatchError, LengthMismatchError
from koopman_isc.isc_detector import (
    ModeDistribution,
    ModePool,
    ResidualState,
    SampleGrid,
    average_distance,
    average_distances,
    calibrate_threshold,
    check_threshold,
    estimate_density,
    kld,
    make_grid,
    silverman_bandwidth,
    update_residual,
)
from koopman_isc.mode_generator import ModeSample

TWO_POINTS = SampleGrid(np.array([0.0, 1.0]))


def two_point(masses, module=1):
    return ModeDistribution(np.array(masses), module, TWO_POINTS)


def test_kld_by_hand():
    p, q = two_point([0.5, 0.5]), two_point([0.9, 0.1], 2)
    # 0.5 ln(0.5 / 0.9) + 0.5 ln(0.5 / 0.1)
    assert kld(p, q) == pytest.approx(0.5108, abs=1e-4)
    # 0.9 ln(0.9 / 0.5) + 0.1 ln(0.1 / 0.5): the divergence is not symmetric
    assert kld(q, p) == pytest.approx(0.3681, abs=1e-4)


def test_kld_of_identical_distributions_is_zero():
    p = two_point([0.3, 0.7])
    assert kld(p, p) == 0.0


def test_kld_is_non_negative_over_random_pairs():
    rng = np.random.default_rng(0)
    grid = SampleGrid(np.linspace(0.0, 1.0, 32))
    for _ in range(1000):
        masses = rng.random((2, 32)) ** 4 + 1e-12
        masses /= masses.sum(axis=1, keepdims=True)
        p = ModeDistribution(masses[0], 1, grid)
        q = ModeDistribution(masses[1], 2, grid)
        assert kld(p, q) >= -1e-12


def test_kld_needs_a_shared_grid():
    other = ModeDistribution(np.array([0.5, 0.5]), 2, SampleGrid(np.array([0.0, 2.0])))
    with pytest.raises(GridMismatchError):
        kld(two_point([0.5, 0.5]), other)


def test_distribution_must_be_normalized():
    with pytest.raises(ValueError):
        two_point([0.5, 0.6])


def test_average_distance_of_two_modules():
    distributions = [two_point([0.5, 0.5]), two_point([0.9, 0.1], 2)]
    assert average_distance(distributions, 0) == pytest.approx(0.2554, abs=1e-4)
    np.testing.assert_allclose(average_distances(distributions), [0.2554, 0.1840], atol=1e-4)


def test_identical_distributions_are_at_zero_distance():
    distributions = [two_point([0.2, 0.8], i) for i in range(1, 5)]
    np.testing.assert_array_equal(average_distances(distributions), 0.0)


def test_grid_spans_the_pooled_samples():
    grid = make_grid([ModeSample(1, [0.2, 0.5]), ModeSample(2, [0.1, 0.9])], 9)
    assert grid.points_z[0] == pytest.approx(0.1)
    assert grid.points_z[-1] == pytest.approx(0.9)
    assert grid.spacing == pytest.approx(0.1)
    assert grid.n_z == 9


def test_degenerate_pool_is_widened():
    grid = make_grid([ModeSample(1, [0.3, 0.3]), ModeSample(2, [0.3])], 5)
    assert grid.points_z[0] < 0.3 < grid.points_z[-1]


def test_grid_without_any_sample_is_the_unit_interval():
    grid = make_grid([ModeSample(1, []), ModeSample(2, [])], 4)
    np.testing.assert_allclose(grid.points_z, np.linspace(0.0, 1.0, 4))


def test_bandwidth_is_floored_for_constant_samples():
    assert silverman_bandwidth(np.full(10, 2.0)) == 1e-6


def test_point_mass_concentrates_on_its_grid_point():
    grid = SampleGrid(np.linspace(0.0, 1.0, 101))
    distribution = estimate_density(ModeSample(1, np.full(20, 0.5)), grid)
    assert np.argmax(distribution.masses) == 50


def test_underflowing_kernel_falls_back_to_nearest_point():
    grid = SampleGrid(np.linspace(0.0, 1.0, 101))
    distribution = estimate_density(ModeSample(1, np.full(20, 0.505)), grid)
    assert np.argmax(distribution.masses) in (50, 51)
    assert distribution.masses.sum() == pytest.approx(1.0)


def test_empty_sample_gives_a_uniform_distribution():
    grid = SampleGrid(np.linspace(0.0, 1.0, 8))
    distribution = estimate_density(ModeSample(3, []), grid)
    np.testing.assert_allclose(distribution.masses, 1.0 / 8)
    assert distribution.module_index == 3


def test_masses_are_floored_and_normalized():
    grid = SampleGrid(np.linspace(0.0, 20.0, 256))
    samples = ModeSample(1, np.abs(np.random.default_rng(1).normal(5.0, 1.0, size=50)))
    masses = estimate_density(samples, grid).masses
    assert masses.sum() == pytest.approx(1.0, abs=1e-9)
    assert masses.min() >= 1e-12


def test_kde_recovers_a_normal_density():
    grid = SampleGrid(np.linspace(0.0, 10.0, 256))
    samples = ModeSample(1, np.abs(np.random.default_rng(2).normal(5.0, 1.0, size=10_000)))
    masses = estimate_density(samples, grid).masses
    assert np.sum(grid.points_z * masses) == pytest.approx(5.0, abs=0.05)
    density = masses / grid.spacing
    assert np.max(np.abs(density - scipy.stats.norm.pdf(grid.points_z, loc=5.0))) < 0.06


def test_spread_out_module_is_the_farthest():
    # a shorted module keeps the small modes of its neighbours and adds large ones
    rng = np.random.default_rng(3)
    samples = [ModeSample(i, np.abs(rng.normal(size=600))) for i in range(1, 5)]
    samples.append(ModeSample(5, 3.0 * np.abs(rng.normal(size=600))))
    grid = make_grid(samples, 256)
    xi = average_distances([estimate_density(s, grid) for s in samples])
    assert np.argmax(xi) == 4
    assert xi[4] > 2 * np.max(xi[:4])


def test_shifted_module_outgrows_the_healthy_residuals():
    rng = np.random.default_rng(5)
    state = ResidualState(5)
    for _ in range(5):
        samples = [ModeSample(i, np.abs(rng.normal(5.0, 1.0, size=600))) for i in range(1, 5)]
        # three within-module standard deviations above the others
        samples.append(ModeSample(5, rng.normal(8.0, 1.0, size=600)))
        grid = make_grid(samples, 256)
        update_residual(state, average_distances([estimate_density(s, grid) for s in samples]))
    r = state.residual_r
    assert np.argmax(r) == 4
    assert r[4] >= 10 * r[:4].max()


def test_pool_concatenates_the_windows_it_holds():
    pool = ModePool(depth=2)
    for k in range(3):
        pooled = pool.add([ModeSample(1, [k]), ModeSample(2, [10 + k])])
    np.testing.assert_array_equal(pooled[0].statistics, [1.0, 2.0])
    np.testing.assert_array_equal(pooled[1].statistics, [11.0, 12.0])
    assert [sample.module_index for sample in pooled] == [1, 2]


def test_unbounded_pool_keeps_every_window():
    pool = ModePool()
    for k in range(4):
        (pooled,) = pool.add([ModeSample(1, [k, k])])
    assert len(pooled) == 8


def test_pool_rejects_a_changing_module_count():
    pool = ModePool()
    pool.add([ModeSample(1, [0.1]), ModeSample(2, [0.2])])
    with pytest.raises(LengthMismatchError):
        pool.add([ModeSample(1, [0.1])])


def test_residual_by_hand():
    state = update_residual(ResidualState(3), [0.1, 0.2, 0.3], end_time=21.99)
    np.testing.assert_allclose(state.residual_r, [0.0, 0.1, 0.2])
    update_residual(state, [0.3, 0.0, 0.0], end_time=28.99)
    np.testing.assert_allclose(state.cumulative_Xi, [0.4, 0.2, 0.3])
    np.testing.assert_allclose(state.residual_r, [0.2, 0.0, 0.1])
    assert state.n_windows == 2
    assert state.end_times == [21.99, 28.99]


def test_residual_gauge_over_random_windows():
    rng = np.random.default_rng(4)
    state = ResidualState(5)
    previous = np.zeros(5)
    for _ in range(20):
        update_residual(state, rng.random(5))
        assert state.residual_r.min() == 0.0
        assert np.all(state.cumulative_Xi >= previous)
        previous = state.cumulative_Xi.copy()


def test_slightly_negative_distances_are_clipped():
    state = update_residual(ResidualState(2), [-1e-13, 0.1])
    np.testing.assert_array_equal(state.cumulative_Xi, [0.0, 0.1])


def test_flags_latch(caplog):
    state = ResidualState(3, threshold_J=0.15)
    update_residual(state, [0.1, 0.2, 0.3], end_time=36.0)
    with caplog.at_level("WARNING", logger="koopman_isc.isc_detector"):
        assert check_threshold(state) == [(3, 36.0)]
    assert "module 3" in caplog.text
    update_residual(state, [0.5, 0.0, 0.0], end_time=43.0)
    assert check_threshold(state) == [(1, 43.0)]
    assert state.flags == {3: 36.0, 1: 43.0}
    assert state.flag_windows == {3: 0, 1: 1}


def test_no_threshold_no_flags():
    state = update_residual(ResidualState(2), [0.0, 10.0])
    assert check_threshold(state) == []


def test_trace_dataset():
    state = ResidualState(2, threshold_J=0.5)
    for k, xi in enumerate([[0.0, 0.3], [0.0, 0.3], [0.1, 0.0]]):
        update_residual(state, xi, end_time=10.0 * (k + 1))
        check_threshold(state)
    trace = state.trace()
    assert trace["r"].dims == ("window", "module")
    np.testing.assert_allclose(trace["Xi"].sel(module=2).values, [0.3, 0.6, 0.6])
    np.testing.assert_array_equal(trace["flagged"].sel(module=2).values, [False, True, True])
    np.testing.assert_allclose(trace["end_time"].values, [10.0, 20.0, 30.0])


def test_calibration_by_hand():
    assert calibrate_threshold([[0.0, 0.1], [0.2, 0.0]], 5.0) == pytest.approx(1.0)


def test_calibration_floor():
    assert calibrate_threshold([np.zeros(3)]) == 1e-6


def test_calibration_needs_a_trace():
    with pytest.raises(CalibrationError):
        calibrate_threshold([])
