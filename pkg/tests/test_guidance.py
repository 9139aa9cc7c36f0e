import statistics

import numpy as np
import pytest

from extraflow.errors import DimensionError, ParameterError, SpecError
from extraflow.flow import Grid, ScalePair, interpolate, sample, seeded_rng, uniform_schedule
from extraflow.guidance import (
    EXTRA_NOISE, AlphaSchedule, GuidanceConfig, GuidanceContext, StageSources, WeightSchedule, alpha_cosine,
    high_band_energy, make_guide, projected_flow_velocity, projection_error, sample_native, sdedit_start,
    skip_residual_velocity, two_stage_sample,
)
from extraflow.oracle import DegradationConfig, MixtureSpec, band_limited_field, bind_source
from extraflow.projection import ProjectionConfig, downsample, highpass, lowpass, upsample_bandlimited

SCHEDULES = (uniform_schedule(10), uniform_schedule(10))


@pytest.fixture(scope="module")
def small_mixture():
    return MixtureSpec(
        weights=(1 / 3, 1 / 3, 1 / 3),
        data_spread=0.1,
        canonical_resolution=32,
        channels=3,
        band_resolution=8,
        mean_seeds=(11, 23, 37),
    )


def run(spec, guidance, seed, **kwargs):
    kwargs.setdefault("degradation", DegradationConfig.default())
    return two_stage_sample(spec, 8, 32, SCHEDULES, guidance, seed, **kwargs)


def test_alpha_cosine():
    assert alpha_cosine(0.0) == pytest.approx(1.5)
    assert alpha_cosine(0.5) == pytest.approx(1.0)
    assert alpha_cosine(1.0) == pytest.approx(0.5)
    assert AlphaSchedule.constant(0.7)(0.3) == 0.7


def test_weight_schedule():
    w = WeightSchedule("cosine", 2.0)
    assert w(0.0) == pytest.approx(2.0)
    assert w(1.0) == pytest.approx(0.0)
    assert WeightSchedule("constant", 0.5)(0.9) == 0.5
    with pytest.raises(ParameterError):
        WeightSchedule("cosine", -1.0)


def test_guidance_config_dict():
    cfg = GuidanceConfig.from_dict({"mode": "sdedit", "sdedit_start_t": 0.4, "alpha": {"kind": "constant", "value": 1}})
    assert cfg.mode == "sdedit"
    assert cfg.alpha_schedule(0.9) == 1.0
    assert GuidanceConfig.from_dict(cfg.to_dict()) == cfg
    assert GuidanceConfig.from_dict("none").mode == "none"
    with pytest.raises(SpecError):
        GuidanceConfig.from_dict({"mode": "cfg"})
    with pytest.raises(SpecError):
        GuidanceConfig.from_dict({"sdedit_start_t": 1.0})


def test_context_requires_matching_shapes():
    with pytest.raises(DimensionError):
        GuidanceContext(Grid.zeros(3, 32, 32), Grid.zeros(3, 16, 16), ScalePair(256, 1024))


def test_projected_flow_only_touches_the_low_band(noise_grid):
    proj = ProjectionConfig.native_band(8, 32)
    ctx = GuidanceContext.from_native(noise_grid(height=8, width=8), noise_grid(height=32, width=32, seed=1))
    v = noise_grid(height=32, width=32, seed=2)
    x = noise_grid(height=32, width=32, seed=3)

    guided = projected_flow_velocity(v, x, ctx, 0.4, 1.2, proj)
    assert np.allclose(highpass(guided, proj).data, highpass(v, proj).data, atol=1e-12)
    assert projected_flow_velocity(v, x, ctx, 0.4, 0.0, proj) is v
    with pytest.raises(ParameterError):
        projected_flow_velocity(v, x, ctx, 1.0, 1.0, proj)


def test_skip_residual_is_still_on_its_reference_path(noise_grid):
    ctx = GuidanceContext.from_native(noise_grid(height=8, width=8), noise_grid(height=32, width=32, seed=1))
    v = noise_grid(height=32, width=32, seed=2)
    on_path = interpolate(ctx.x0_extra, ctx.x1_native_up, 0.3)

    assert np.allclose(skip_residual_velocity(v, on_path, ctx, 0.3, 5.0).data, v.data, atol=1e-12)
    assert skip_residual_velocity(v, on_path, ctx, 0.3, 0.0) is v

    off_path = noise_grid(height=32, width=32, seed=3)
    pulled = skip_residual_velocity(v, off_path, ctx, 0.5, 1.0)
    reference = interpolate(ctx.x0_extra, ctx.x1_native_up, 0.5)
    assert np.allclose(pulled.data, v.data + (reference.data - off_path.data) / 0.5)


def test_make_guide_binds_each_mode(noise_grid):
    proj = ProjectionConfig.native_band(8, 32)
    ctx = GuidanceContext.from_native(noise_grid(height=8, width=8), noise_grid(height=32, width=32, seed=1))
    v = noise_grid(height=32, width=32, seed=2)
    x = noise_grid(height=32, width=32, seed=3)

    assert make_guide(GuidanceConfig("none"), ctx, proj) is None
    assert make_guide(GuidanceConfig("sdedit"), ctx, proj) is None

    pf = make_guide(GuidanceConfig("projected_flow", alpha_schedule=AlphaSchedule.constant(0.5)), ctx, proj)
    assert np.allclose(pf(v, x, 0.3).data, projected_flow_velocity(v, x, ctx, 0.3, 0.5, proj).data)

    skip = make_guide(GuidanceConfig("skip_residual", skip_residual_weight=WeightSchedule("constant", 2.0)), ctx, proj)
    assert np.allclose(skip(v, x, 0.3).data, skip_residual_velocity(v, x, ctx, 0.3, 2.0).data)


def test_unit_alpha_lands_exactly_on_the_guide(small_mixture):
    guidance = GuidanceConfig("projected_flow", alpha_schedule=AlphaSchedule.constant(1.0))
    for seed in range(3):
        res = run(small_mixture, guidance, seed)
        assert projection_error(res.x1_extra, res.context, res.projection) < 1e-9


def test_projected_flow_beats_unguided(small_mixture):
    sources = StageSources.from_mixture(small_mixture, DegradationConfig.default())
    errors = {"none": [], "projected_flow": []}
    for seed in range(4):
        native = sample_native(sources, 8, SCHEDULES[0], seed)
        for mode in errors:
            res = run(sources, GuidanceConfig(mode), seed, x1_native=native)
            errors[mode].append(projection_error(res.x1_extra, res.context, res.projection))
    assert statistics.median(errors["projected_flow"]) < statistics.median(errors["none"])


def test_unguided_run_is_the_plain_sampler(small_mixture):
    deg = DegradationConfig.default()
    res = run(small_mixture, GuidanceConfig("none"), 5, degradation=deg)
    x0 = Grid.noise((3, 32, 32), seeded_rng(5, EXTRA_NOISE))
    extra = bind_source(StageSources.from_mixture(small_mixture, deg).extra, 5, 8)
    direct = sample(extra, SCHEDULES[1], x0)
    assert np.array_equal(res.x1_extra.data, direct.data)


def test_two_stage_is_deterministic(small_mixture):
    a = run(small_mixture, GuidanceConfig(), 2)
    b = run(small_mixture, GuidanceConfig(), 2)
    assert np.array_equal(a.x1_native.data, b.x1_native.data)
    assert np.array_equal(a.x1_extra.data, b.x1_extra.data)

    reused = run(small_mixture, GuidanceConfig(), 2, x1_native=a.x1_native)
    assert np.array_equal(reused.x1_extra.data, a.x1_extra.data)


def test_two_stage_checks_native_shape(small_mixture):
    with pytest.raises(DimensionError):
        run(small_mixture, GuidanceConfig(), 0, x1_native=Grid.zeros(3, 16, 16))


def test_sdedit_starts_late(small_mixture):
    seen = []
    run(small_mixture, GuidanceConfig("sdedit", sdedit_start_t=0.6), 1,
        observer=lambda step, t, v, guided: seen.append(t))
    assert seen[0] == 0.6
    assert len(seen) == 4


def test_sdedit_start_state(noise_grid):
    ctx = GuidanceContext.from_native(noise_grid(height=8, width=8), noise_grid(height=32, width=32, seed=1))
    state = sdedit_start(ctx, 0.3, 7)
    assert state.t == 0.3
    again = sdedit_start(ctx, 0.3, 7)
    assert np.array_equal(state.x.data, again.x.data)
    with pytest.raises(ParameterError):
        sdedit_start(ctx, 1.0, 7)


def test_skip_residual_keeps_high_band_of_own_noise():
    means = band_limited_field(5, 1, 32, 8)[None]
    spec = MixtureSpec.from_means([1.0], means, data_spread=0.5)
    sources = StageSources.from_mixture(spec)
    skip = GuidanceConfig("skip_residual")

    skip_errors, plain_errors = [], []
    for seed in range(4):
        native = sample_native(sources, 8, SCHEDULES[0], seed)
        res = two_stage_sample(sources, 8, 32, SCHEDULES, skip, seed, x1_native=native)
        plain = two_stage_sample(sources, 8, 32, SCHEDULES, GuidanceConfig("none"), seed, x1_native=native)

        high = highpass(res.x1_extra, res.projection).data.ravel()
        own = highpass(res.context.x0_extra, res.projection).data.ravel()
        assert np.corrcoef(high, own)[0, 1] > 0.999

        skip_errors.append(projection_error(res.x1_extra, res.context, res.projection))
        plain_errors.append(projection_error(plain.x1_extra, plain.context, plain.projection))

    assert statistics.median(skip_errors) < statistics.median(plain_errors)


def test_metrics_on_the_guide_itself(noise_grid):
    proj = ProjectionConfig.native_band(8, 32)
    guide = upsample_bandlimited(noise_grid(height=8, width=8), 4)
    ctx = GuidanceContext(guide, noise_grid(height=32, width=32), ScalePair.from_grids(8, 32))
    assert projection_error(guide, ctx, proj) == pytest.approx(0.0, abs=1e-12)
    assert high_band_energy(guide, proj) == pytest.approx(0.0, abs=1e-20)



def single_gaussian(spread=0.5):
    means = band_limited_field(5, 1, 32, 8)[None]
    return MixtureSpec.from_means([1.0], means, data_spread=spread)


def test_opposite_alphas_average_to_the_raw_velocity(noise_grid):
    proj = ProjectionConfig.native_band(8, 32)
    ctx = GuidanceContext.from_native(noise_grid(height=8, width=8), noise_grid(height=32, width=32, seed=1))
    v = noise_grid(height=32, width=32, seed=2)
    x = noise_grid(height=32, width=32, seed=3)

    for alpha in (0.3, 1.0, 1.5):
        up = projected_flow_velocity(v, x, ctx, 0.4, alpha, proj)
        down = projected_flow_velocity(v, x, ctx, 0.4, -alpha, proj)
        assert np.allclose(up.data + down.data, 2 * v.data, atol=1e-12)


def test_low_band_is_pulled_along_the_line_to_the_guide(noise_grid):
    proj = ProjectionConfig.native_band(8, 32)
    ctx = GuidanceContext.from_native(noise_grid(height=8, width=8), noise_grid(height=32, width=32, seed=1))
    v = noise_grid(height=32, width=32, seed=2)
    x = noise_grid(height=32, width=32, seed=3)
    t, alpha = 0.35, 0.7

    guided = projected_flow_velocity(v, x, ctx, t, alpha, proj)
    target = (lowpass(ctx.x1_native_up, proj).data - lowpass(x, proj).data) / (1 - t)
    expected = (1 - alpha) * lowpass(v, proj).data + alpha * target
    assert np.allclose(lowpass(guided, proj).data, expected, atol=1e-10)


def test_velocity_already_on_the_guide_line_is_kept(noise_grid):
    proj = ProjectionConfig.native_band(8, 32)
    ctx = GuidanceContext.from_native(noise_grid(height=8, width=8), noise_grid(height=32, width=32, seed=1))
    x = noise_grid(height=32, width=32, seed=3)
    t = 0.6

    target = (ctx.x1_native_up.data - lowpass(x, proj).data) / (1 - t)
    v = Grid.wrap(highpass(noise_grid(height=32, width=32, seed=4), proj).data + target)
    for alpha in (0.5, 1.0, 1.5):
        assert np.allclose(projected_flow_velocity(v, x, ctx, t, alpha, proj).data, v.data, atol=1e-10)


def test_sdedit_start_trades_fidelity_for_freedom():
    sources = StageSources.from_mixture(single_gaussian())

    def median_error(start_t):
        errors = []
        for seed in range(4):
            native = sample_native(sources, 8, SCHEDULES[0], seed)
            res = two_stage_sample(sources, 8, 32, SCHEDULES, GuidanceConfig("sdedit", sdedit_start_t=start_t),
                                   seed, x1_native=native)
            errors.append(projection_error(res.x1_extra, res.context, res.projection))
        return statistics.median(errors)

    early, middle, late = median_error(0.05), median_error(0.6), median_error(0.95)
    assert late < middle < early


def test_exact_two_stage_matches_native_low_band_statistics(small_mixture):
    sources = StageSources.from_mixture(small_mixture)
    native_energy, extra_energy = [], []
    for seed in range(32):
        res = run(sources, GuidanceConfig("none"), seed)
        native_energy.append(float(np.mean(res.x1_native.data ** 2)))
        extra_energy.append(float(np.mean(downsample(res.x1_extra, 4).data ** 2)))

    ratio = statistics.fmean(extra_energy) / statistics.fmean(native_energy)
    assert 0.9 <= ratio <= 1.1


@pytest.mark.slow
def test_testbed_ordering_with_default_guidance(testbed):
    sources = StageSources.from_mixture(testbed, DegradationConfig.default())
    schedules = (uniform_schedule(30), uniform_schedule(30))
    guidance = GuidanceConfig()

    errors = {mode: [] for mode in ("projected_flow", "sdedit", "skip_residual", "none")}
    for seed in range(16):
        native = sample_native(sources, 32, schedules[0], seed)
        for mode in errors:
            res = two_stage_sample(sources, 32, 128, schedules, guidance.with_mode(mode), seed, x1_native=native)
            errors[mode].append(projection_error(res.x1_extra, res.context, res.projection))

    medians = [statistics.median(errors[mode]) for mode in errors]
    assert medians == sorted(medians)
    assert len(set(medians)) == len(medians)
