import math

import numpy as np
import pytest

from extraflow.errors import DimensionError, ParameterError, SpecError
from extraflow.flow import Grid, TimeSchedule, sample, seeded_rng, uniform_schedule
from extraflow.guidance import GuidanceConfig, two_stage_sample
from extraflow.oracle import (
    DegradationConfig, DegradedSource, LossRatioPoint, MixtureSpec, band_limited_field, bind_source,
    conditional_mean, degraded_source, degraded_velocity, exact_source, loss_ratio, loss_ratio_curve,
    mixture_velocity, nearest_mean_error, posterior_weights, sample_pair, velocity_loss,
)
from extraflow.projection import ProjectionConfig, highpass, lowpass


def single_component(spread=0.5, resolution=8, channels=1, seed=5):
    means = band_limited_field(seed, channels, resolution, resolution // 2)[None]
    return MixtureSpec.from_means([1.0], means, data_spread=spread)


def test_band_limited_field_shape_and_rms():
    field = band_limited_field(11, 3, 64, 16, amplitude=2.0)
    assert field.shape == (3, 64, 64)
    assert np.sqrt(np.mean(field ** 2)) == pytest.approx(2.0)

    spectrum = np.abs(np.fft.fft2(field, axes=(-2, -1)))
    k = np.abs(np.fft.fftfreq(64, d=1 / 64))
    outside = (k[:, None] >= 8) | (k[None, :] >= 8)
    assert spectrum[:, outside].max() < 1e-9


def test_band_limited_field_is_seeded():
    assert np.array_equal(band_limited_field(3, 1, 32, 8), band_limited_field(3, 1, 32, 8))
    assert not np.array_equal(band_limited_field(3, 1, 32, 8), band_limited_field(4, 1, 32, 8))


def test_testbed_mixture(testbed):
    assert testbed.k == 3
    means = testbed.mean_images()
    assert means.shape == (3, 3, 128, 128)
    assert testbed.mean_images(32).shape == (3, 3, 32, 32)
    assert np.allclose(testbed.mean_images(32), means.reshape(3, 3, 32, 4, 32, 4).mean(axis=(3, 5)))


def test_mixture_rejects_bad_resolution(testbed):
    with pytest.raises(DimensionError):
        testbed.mean_images(48)
    with pytest.raises(ParameterError):
        testbed.mean_images(256)


def test_mixture_validation():
    with pytest.raises(ParameterError):
        MixtureSpec(weights=(0.5, 0.4), mean_seeds=(1, 2))
    with pytest.raises(ParameterError):
        MixtureSpec(weights=(1.0,), mean_seeds=(1, 2))
    with pytest.raises(ParameterError):
        MixtureSpec(weights=(1.0,), data_spread=-0.1, mean_seeds=(1,))


def test_mixture_dict(testbed):
    again = MixtureSpec.from_dict(testbed.to_dict())
    assert np.array_equal(again.mean_images(32), testbed.mean_images(32))
    with pytest.raises(SpecError):
        MixtureSpec.from_dict({"weights": [1.0]})
    with pytest.raises(SpecError):
        single_component().to_dict()


def test_sample_pair_is_seeded(testbed):
    a0, a1 = sample_pair(testbed, 32, (4, 2))
    b0, b1 = sample_pair(testbed, 32, (4, 2))
    assert np.array_equal(a0.data, b0.data) and np.array_equal(a1.data, b1.data)
    assert nearest_mean_error(a1, testbed)[0] == pytest.approx(0.1, rel=0.1)


def test_posterior_at_t0_is_the_prior(testbed, noise_grid):
    w = posterior_weights(noise_grid(height=32, width=32), 0.0, testbed)
    assert np.allclose(w, testbed.weights)


def test_posterior_picks_the_right_component(testbed):
    for k in range(3):
        x = Grid.wrap(0.5 * testbed.mean_images(32)[k])
        w = posterior_weights(x, 0.5, testbed)
        assert w.sum() == pytest.approx(1.0)
        assert int(np.argmax(w)) == k


def test_temperature_flattens_the_posterior(testbed):
    means = testbed.mean_images(8)
    x = Grid.wrap(0.3 * means[0] + 0.7 * seeded_rng(1).standard_normal(means[0].shape))
    cold = posterior_weights(x, 0.3, testbed)
    hot = posterior_weights(x, 0.3, testbed, temperature=50.0)
    assert hot.max() <= cold.max()
    with pytest.raises(ParameterError):
        posterior_weights(x, 0.3, testbed, temperature=0.0)


def test_velocity_rejects_t1_and_bad_shapes(testbed):
    with pytest.raises(ParameterError):
        mixture_velocity(Grid.zeros(3, 8, 8), 1.0, testbed)
    with pytest.raises(DimensionError):
        mixture_velocity(Grid.zeros(1, 8, 8), 0.5, testbed)
    with pytest.raises(DimensionError):
        mixture_velocity(Grid.zeros(3, 8, 16), 0.5, testbed)


def test_single_gaussian_conditional_mean():
    spec = single_component(spread=0.5)
    m = spec.mean_images()[0]
    x = Grid.wrap(seeded_rng(2).standard_normal(m.shape))
    t = 0.4
    var = t * t * 0.25 + (1 - t) ** 2
    expected = m + (t * 0.25 / var) * (x.data - t * m)
    assert np.allclose(conditional_mean(x, t, spec).data, expected)
    assert np.allclose(mixture_velocity(x, t, spec).data, (expected - x.data) / (1 - t))


def test_point_mass_flow_lands_on_the_mean():
    spec = single_component(spread=0.0)
    x0 = Grid.wrap(seeded_rng(9).standard_normal((1, 8, 8)))
    out = sample(exact_source(spec), uniform_schedule(10), x0)
    assert np.allclose(out.data, spec.mean_images()[0])


def test_single_gaussian_loss_matches_closed_form():
    spread = 0.5
    spec = single_component(spread=spread)
    n_samples, pixels = 64, 64
    for t in (0.2, 0.5, 0.8):
        expected = spread ** 2 / (t * t * spread ** 2 + (1 - t) ** 2)
        loss = velocity_loss(exact_source(spec), spec, 8, t, n_samples, seed=0)
        # per-pixel squared Gaussian residuals: standard error sqrt(2 / N) relative
        assert loss == pytest.approx(expected, rel=4 * math.sqrt(2 / (n_samples * pixels)))


def test_exact_velocity_minimises_the_loss(testbed):
    source = exact_source(testbed)
    exact = velocity_loss(source, testbed, 8, 0.5, 16, seed=1)
    shifted = velocity_loss(lambda x, t: source(x, t) + 0.3, testbed, 8, 0.5, 16, seed=1)
    assert exact < shifted


def test_loss_ratio_undefined_for_zero_native_loss():
    assert math.isnan(loss_ratio(1.0, 0.0))
    assert loss_ratio(3.0, 2.0) == 1.5
    assert not LossRatioPoint(0.5, 0.0, 1.0, loss_ratio(1.0, 0.0)).defined
    assert LossRatioPoint(0.5, 2.0, 3.0, 1.5).defined


def test_gap_zero_keeps_ratio_near_one(testbed):
    schedule = TimeSchedule((0.0, 0.3, 0.6, 1.0))
    points = loss_ratio_curve(testbed, 32, 128, schedule, DegradationConfig.exact(), 8, seed=0)
    for p in points:
        assert 0.9 <= p.ratio <= 1.1


def test_midband_degradation_peaks_inside(testbed):
    schedule = TimeSchedule((0.0, 0.1, 0.5, 0.9, 1.0))
    points = loss_ratio_curve(testbed, 32, 128, schedule, DegradationConfig.default(), 4, seed=0)
    ratios = [p.ratio for p in points]
    assert all(r > 1.0 for r in ratios)
    assert ratios[1] > ratios[0] and ratios[1] > ratios[2]


def test_degraded_velocity_is_deterministic(testbed, noise_grid):
    x = noise_grid(height=128, width=128)
    deg = DegradationConfig.default()
    a = degraded_velocity(x, 0.4, testbed, deg)
    b = degraded_velocity(x, 0.4, testbed, deg)
    assert np.array_equal(a.data, b.data)


def test_degradation_without_gap_is_exact(testbed, noise_grid):
    x = noise_grid(height=32, width=32)
    deg = DegradationConfig(gap=0.0)
    assert np.array_equal(degraded_velocity(x, 0.3, testbed, deg).data, mixture_velocity(x, 0.3, testbed).data)


def test_no_high_band_noise_inside_the_band(testbed, noise_grid):
    # at the band resolution only the posterior corruption remains
    x = noise_grid(height=32, width=32)
    deg = DegradationConfig(gap=1.0, hf_noise_scale=4.0, posterior_temperature=1.0)
    assert np.allclose(degraded_velocity(x, 0.5, testbed, deg).data, mixture_velocity(x, 0.5, testbed).data)


def test_degradation_config():
    assert DegradationConfig.from_dict("exact") == DegradationConfig.exact()
    custom = DegradationConfig.from_dict({"preset": "default", "gap": 0.5})
    assert custom.gap == 0.5 and custom.hf_noise_scale == 4.0
    assert DegradationConfig.default().profile_at(0.5) == pytest.approx(1.0)
    assert DegradationConfig.default().profile_at(0.0) == pytest.approx(0.0)
    with pytest.raises(SpecError):
        DegradationConfig.from_dict({"gap": 0.5, "noise": 1})
    with pytest.raises(SpecError):
        DegradationConfig.from_dict({"gap": 2.0})
    with pytest.raises(SpecError):
        DegradationConfig.from_dict("strong")


def test_nearest_mean_error(testbed):
    x = Grid.wrap(testbed.mean_images(32)[2])
    err, k = nearest_mean_error(x, testbed)
    assert k == 2
    assert err == pytest.approx(0.0, abs=1e-12)


def scalar_mixture():
    return MixtureSpec.from_means([0.3, 0.7], [-1.0, 1.5], data_spread=0.4)


@pytest.mark.parametrize("x, t", [
    (x, t) for t in (0.2, 0.5, 0.8) for x in (-1.0, 0.0, 0.6, 1.4)
])
def test_velocity_matches_monte_carlo_posterior(x, t):
    spec = scalar_mixture()
    rng = seeded_rng(17, int(t * 10), int((x + 2) * 10))
    n = 200_000

    component = rng.choice(2, size=n, p=[0.3, 0.7])
    x1 = np.array([-1.0, 1.5])[component] + 0.4 * rng.standard_normal(n)
    # likelihood of reaching x at time t from each draw
    w = np.exp(-(x - t * x1) ** 2 / (2 * (1 - t) ** 2))
    w /= w.sum()

    expected = np.sum(w * x1)
    stderr = math.sqrt(np.sum(w ** 2 * (x1 - expected) ** 2))

    v = mixture_velocity(Grid([[[x]]]), t, spec).data.item()
    assert abs(v - (expected - x) / (1 - t)) <= 4 * stderr / (1 - t)


def test_point_mass_velocity_loss_vanishes():
    spec = single_component(spread=0.0)
    for t in (0.1, 0.5, 0.9):
        assert velocity_loss(exact_source(spec), spec, 8, t, 8, seed=0) < 1e-10


def test_exact_loss_decreases_once_components_separate():
    spec = MixtureSpec.from_means([0.5, 0.5], [-3.0, 3.0])
    losses = [velocity_loss(exact_source(spec), spec, 1, t, 256, seed=0) for t in (0.1, 0.3, 0.5, 0.7, 0.9)]
    assert losses[0] > 1.0
    # decreasing until the posterior is certain and only rounding remains
    assert all(b < a or b < 1e-12 for a, b in zip(losses, losses[1:]))


def test_component_order_does_not_change_the_velocity(testbed, noise_grid):
    means = testbed.mean_images(32)
    weights = np.array([0.2, 0.3, 0.5])
    perm = [2, 0, 1]
    a = MixtureSpec.from_means(weights, means, data_spread=0.1)
    b = MixtureSpec.from_means(weights[perm], means[perm], data_spread=0.1)

    x = noise_grid(height=32, width=32)
    for t in (0.2, 0.7):
        assert np.allclose(mixture_velocity(x, t, a).data, mixture_velocity(x, t, b).data)
        assert np.allclose(posterior_weights(x, t, a)[perm], posterior_weights(x, t, b))


def test_posterior_concentrates_near_the_end(testbed):
    spec = MixtureSpec.from_means(testbed.weights, testbed.mean_images(8))
    eps = seeded_rng(3).standard_normal((3, 8, 8))
    for k in range(spec.k):
        for t in (0.99, 0.995):
            x = Grid.wrap(t * spec.mean_images()[k] + (1 - t) * eps)
            w = posterior_weights(x, t, spec)
            assert int(np.argmax(w)) == k
            assert w.max() >= 0.999


@pytest.mark.slow
def test_sample_pair_moments():
    spec = scalar_mixture()
    n = 10_000
    x0 = np.empty(n)
    x1 = np.empty(n)
    for i in range(n):
        a, b = sample_pair(spec, 1, (21, i))
        x0[i], x1[i] = a.data.item(), b.data.item()

    mean = 0.3 * -1.0 + 0.7 * 1.5
    var = 0.4 ** 2 + 0.3 * 0.7 * 2.5 ** 2
    for draws, mu, sigma2 in ((x0, 0.0, 1.0), (x1, mean, var)):
        assert abs(draws.mean() - mu) <= 3 * math.sqrt(sigma2 / n)
        centred = (draws - draws.mean()) ** 2
        assert abs(centred.mean() - sigma2) <= 3 * centred.std() / math.sqrt(n)


@pytest.mark.slow
def test_unguided_error_grows_with_the_gap(testbed):
    schedules = (uniform_schedule(30), uniform_schedule(30))
    errors = []
    for gap in (0.0, 0.25, 0.5, 0.75, 1.0):
        deg = DegradationConfig(gap=gap)
        sq = [
            nearest_mean_error(two_stage_sample(testbed, 32, 128, schedules, GuidanceConfig("none"), seed,
                                                degradation=deg).x1_extra, testbed)[0] ** 2
            for seed in range(16)
        ]
        errors.append(float(np.mean(sq)))
    assert all(b >= a for a, b in zip(errors, errors[1:]))


def test_degraded_loss_never_beats_exact(testbed):
    deg = DegradationConfig.default()
    for resolution in (32, 64, 128):
        exact = velocity_loss(exact_source(testbed), testbed, resolution, 0.5, 8, seed=3)
        degraded = velocity_loss(degraded_source(testbed, deg, 32), testbed, resolution, 0.5, 8, seed=3)
        assert degraded >= exact * (1 - 1e-12)
        if resolution > 32:
            assert degraded > exact


def test_high_band_noise_is_keyed_by_run(testbed, noise_grid):
    x = noise_grid(height=128, width=128)
    deg = DegradationConfig.default()
    a = degraded_velocity(x, 0.5, testbed, deg, key=(1,))
    b = degraded_velocity(x, 0.5, testbed, deg, key=(2,))
    assert not np.allclose(a.data, b.data)

    band = ProjectionConfig.native_band(32, 128)
    assert np.allclose(lowpass(a, band).data, lowpass(b, band).data)

    source = DegradedSource(testbed, deg).bind((1,))
    assert np.array_equal(source(x, 0.5).data, a.data)
    plain = exact_source(testbed)
    assert bind_source(plain, (1,)) is plain


def test_high_band_noise_sits_above_the_run_band(testbed, noise_grid):
    x = noise_grid(height=128, width=128)
    deg = DegradationConfig.default()
    a = degraded_velocity(x, 0.5, testbed, deg, key=(1,), native_res=64)
    b = degraded_velocity(x, 0.5, testbed, deg, key=(2,), native_res=64)
    diff = a - b

    band = ProjectionConfig.native_band(64, 128)
    assert np.allclose(lowpass(diff, band).data, 0.0, atol=1e-10)
    assert highpass(diff, band).rms() > 0.1

    full = degraded_velocity(x, 0.5, testbed, deg, key=(1,), native_res=128)
    assert np.array_equal(full.data, degraded_velocity(x, 0.5, testbed, deg, key=(2,), native_res=128).data)


def test_loss_testbed_loss_falls_with_time():
    spec = MixtureSpec.loss_testbed()
    times = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    losses = [velocity_loss(exact_source(spec), spec, 32, t, 16, seed=0) for t in times]
    assert all(b < a for a, b in zip(losses, losses[1:]))
    assert losses[0] == pytest.approx(9 / (0.01 * 9 + 0.81), rel=0.1)
