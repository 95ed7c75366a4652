"""Tests for the closed-form average MSE, its approximations and bounds."""

import math

import numpy as np
import pytest

from src.reconstruction.analytic import (
    BoundAxis,
    MseValue,
    Scheme,
    SchemeConfig,
    blep_dip_threshold,
    bounds,
    dmse_deps,
    instantaneous_mse,
    inter_reception_expectations,
    mse,
    mse_approx,
    mse_asyn_infer,
    mse_asyn_infer_approx,
    mse_no_infer,
    mse_syn_infer,
    mse_syn_infer_approx,
    reception_weights,
    reindex,
    slot_advance_probability,
    upsilon,
)
from src.reconstruction.errors import InvalidConfigError
from src.reconstruction.field import SensorField, SourceParams, equidistant_field, mssc, place_sensors
from src.reconstruction.spt import LinkParams


def zero_blep_value(source, link, period_s):
    """sigma2 - sigma2 gamma_o e^{-2a tau} (1 - e^{-2aT}) / (2aT (gamma_o + 1))"""
    a, gamma = source.a_per_s, source.gamma_o
    return source.sigma2_x - (source.sigma2_x * gamma * math.exp(-2 * a * link.delay_s)
                              * -math.expm1(-2 * a * period_s) / (2 * a * period_s * (gamma + 1)))


def dip_field():
    """Target at the origin, sensor 4 close by, every other sensor far away"""
    return SensorField(positions=[(0, 0), (200, 0), (0, 200), (10, 0), (-200, 0)])


def test_single_sensor_syn_equals_no_infer(source, link):
    field = place_sensors(1, seed=4)
    for period in (0.05, 0.15, 0.4):
        for eps in (0.0, 0.3, 0.865, 1.0):
            syn = SchemeConfig(scheme=Scheme.SYN_INFER, period_s=period, sensors=1)
            no = SchemeConfig(scheme=Scheme.NO_INFER, period_s=period, sensors=1)
            assert mse_syn_infer(source, field, link, syn, eps_bar=eps).value == pytest.approx(
                mse_no_infer(source, link, no, eps_bar=eps).value, abs=1e-12)


def test_no_infer_ignores_sensor_count(source, link):
    a = mse_no_infer(source, link, SchemeConfig(scheme=Scheme.NO_INFER, sensors=1))
    b = mse_no_infer(source, link, SchemeConfig(scheme=Scheme.NO_INFER, sensors=5))
    assert a.value == b.value


def test_zero_blep_closed_form(source, link, field, syn_scheme, no_scheme):
    expected = zero_blep_value(source, link, 0.15)
    assert mse_syn_infer(source, field, link, syn_scheme, eps_bar=0.0).value == pytest.approx(expected, abs=1e-12)
    assert mse_no_infer(source, link, no_scheme, eps_bar=0.0).value == pytest.approx(expected, abs=1e-12)


def test_certain_loss_gives_prior_variance(source, link, field, syn_scheme, asyn_scheme, no_scheme):
    for scheme in (no_scheme, syn_scheme, asyn_scheme):
        assert mse(source, field, link, scheme, eps_bar=1.0).value == pytest.approx(source.sigma2_x, abs=1e-12)


def test_inference_helps_at_defaults(source, link, field, syn_scheme, no_scheme):
    no = mse_no_infer(source, link, no_scheme).value
    syn = mse_syn_infer(source, field, link, syn_scheme).value
    assert syn < no < source.sigma2_x


def test_mse_components(source, link, field, syn_scheme, asyn_scheme):
    syn = mse_syn_infer(source, field, link, syn_scheme)
    assert isinstance(syn, MseValue)
    assert float(syn) == syn.value
    assert {"eps_bar", "beta_syn"} <= set(syn.components)
    asyn = mse_asyn_infer(source, field, link, asyn_scheme)
    assert len(asyn.components["psi"]) == 5


def test_syn_approx_exact_for_equidistant_field(source, link, syn_scheme):
    field = equidistant_field(5, 30.0)
    m = mssc(source, field)
    for eps in (0.1, 0.5, 0.9):
        exact = mse_syn_infer(source, field, link, syn_scheme, eps_bar=eps).value
        approx = mse_syn_infer_approx(source, m, link, syn_scheme, eps_bar=eps).value
        assert approx == pytest.approx(exact, rel=1e-12)


def test_asyn_approx_exact_for_equidistant_field(source, link):
    field = equidistant_field(5, 30.0)
    m = mssc(source, field)
    scheme = SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.01)
    exact = mse_asyn_infer(source, field, link, scheme).value
    assert mse_asyn_infer_approx(source, m, link, scheme).value == pytest.approx(exact, rel=1e-12)


def test_asyn_approx_exact_at_even_shift(source, link, field, asyn_scheme):
    """With h = T/M every reception weight is equal, so only the mean factor matters."""
    exact = mse_asyn_infer(source, field, link, asyn_scheme).value
    approx = mse_asyn_infer_approx(source, mssc(source, field), link, asyn_scheme).value
    assert approx == pytest.approx(exact, rel=1e-12)


def test_syn_approx_without_correlation_at_zero_blep(source, link, syn_scheme, no_scheme):
    approx = mse_syn_infer_approx(source, 0.0, link, syn_scheme, eps_bar=0.0).value
    assert approx == pytest.approx(mse_no_infer(source, link, no_scheme, eps_bar=0.0).value, abs=1e-12)


def test_syn_approx_close_to_exact_on_random_fields(source, link, syn_scheme):
    gaps = []
    for seed in range(100):
        field = place_sensors(5, 10.0, seed=seed)
        exact = mse_syn_infer(source, field, link, syn_scheme).value
        approx = mse_syn_infer_approx(source, mssc(source, field), link, syn_scheme).value
        gaps.append(abs(approx - exact) / exact)
    assert max(gaps) < 0.02


def test_approx_needs_two_sensors(source, link):
    with pytest.raises(InvalidConfigError):
        mse_syn_infer_approx(source, 0.5, link, SchemeConfig(scheme=Scheme.SYN_INFER, sensors=1))


def test_mse_approx_dispatch(source, link, no_scheme):
    assert mse_approx(source, 0.3, link, no_scheme).value == mse_no_infer(source, link, no_scheme).value


def test_reception_weights_constant_at_even_shift():
    a, T, M = 2.0, 0.15, 5
    x, y = math.exp(-2 * a * T / M), math.exp(-2 * a * T)
    for eps in (0.0, 0.5, 0.9):
        psi = reception_weights(eps, x, y, M)
        np.testing.assert_allclose(psi, 1.0 - x, rtol=1e-12)


def test_reindex_orders_by_factor(source, field):
    reindexed = reindex(source, field.with_target(3))
    assert reindexed.order[0] == 3
    assert reindexed.factors[0] == 1.0
    assert np.all(np.diff(reindexed.factors[1:]) <= 0)
    assert sorted(reindexed.order) == [1, 2, 3, 4, 5]


def test_scheme_target_overrides_field_target(source, link, field):
    scheme = SchemeConfig(scheme=Scheme.SYN_INFER, target=2)
    assert mse_syn_infer(source, field, link, scheme).value == pytest.approx(
        mse_syn_infer(source, field.with_target(2), link, scheme).value)


def test_config_errors(source, link, field):
    with pytest.raises(InvalidConfigError):
        mse_syn_infer(source, field, link, SchemeConfig(scheme=Scheme.SYN_INFER, period_s=0.005))
    with pytest.raises(InvalidConfigError):
        mse_asyn_infer(source, field, link, SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.05))
    with pytest.raises(InvalidConfigError):
        SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.01, sensors=1)
    with pytest.raises(InvalidConfigError):
        SchemeConfig(scheme=Scheme.ASYN_INFER)
    with pytest.raises(InvalidConfigError):
        mse_syn_infer(source, place_sensors(3), link, SchemeConfig(scheme=Scheme.SYN_INFER))
    with pytest.raises(InvalidConfigError):
        mse_syn_infer(source, field, link, SchemeConfig(scheme=Scheme.SYN_INFER), eps_bar=1.5)


def test_simplified_blep_selector(source, link, field, syn_scheme):
    value = mse_syn_infer(source, field, link, syn_scheme, blep="simplified")
    assert value.components["eps_bar"] == pytest.approx(0.855, abs=2e-3)
    with pytest.raises(InvalidConfigError):
        mse_syn_infer(source, field, link, syn_scheme, blep="exact")


@pytest.mark.parametrize("scheme", [
    SchemeConfig(scheme=Scheme.NO_INFER),
    SchemeConfig(scheme=Scheme.SYN_INFER),
    SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.03),
    SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.01),
])
def test_dmse_deps_matches_finite_differences(source, link, field, scheme):
    step = 1e-6
    for eps in (0.2, 0.5, 0.8):
        fd = (mse(source, field, link, scheme, eps_bar=eps + step).value
              - mse(source, field, link, scheme, eps_bar=eps - step).value) / (2 * step)
        assert float(dmse_deps(source, field, link, scheme, eps)) == pytest.approx(fd, rel=1e-4, abs=1e-8)


def test_instantaneous_mse_of_fresh_own_sample(source, field):
    assert float(instantaneous_mse(source, field, 1, 0.0)) == pytest.approx(1.0 / 6.0)
    older = instantaneous_mse(source, field, 1, np.array([0.0, 0.1, 1.0]))
    assert np.all(np.diff(older) > 0)


def test_upsilon_at_even_shift(source, link, field, asyn_scheme):
    assert upsilon(source, field, link, asyn_scheme) == pytest.approx(-0.25, abs=1e-12)
    assert upsilon(source, field, link, asyn_scheme, ordering="raw") == pytest.approx(-0.25, abs=1e-12)
    with pytest.raises(InvalidConfigError):
        upsilon(source, field, link, SchemeConfig(scheme=Scheme.SYN_INFER))


def test_monotone_in_blep_at_even_shift(source, link, field, asyn_scheme):
    values = [mse_asyn_infer(source, field, link, asyn_scheme, eps_bar=q).value for q in np.linspace(0, 1, 51)]
    assert np.all(np.diff(values) > 0)


@pytest.mark.parametrize("seed", [42, 0, 7, 19])
def test_syn_monotone_in_blep(source, link, syn_scheme, seed):
    field = place_sensors(5, 10.0, seed=seed)
    values = [mse_syn_infer(source, field, link, syn_scheme, eps_bar=q).value for q in np.linspace(0, 1, 51)]
    assert np.all(np.diff(values) > 0)


@pytest.mark.parametrize("scheme", [
    SchemeConfig(scheme=Scheme.SYN_INFER),
    SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.005),
    SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.03),
])
def test_mse_rises_as_spatial_correlation_weakens(source, link, field, scheme):
    """Larger b shrinks every spatial factor and the MSSC; the MSE must grow"""
    decays = [0.0, 0.005, 0.01, 0.02, 0.05, 0.1, 0.5]
    values = [mse(source.with_changes(b_per_m=b), field, link, scheme).value for b in decays]
    levels = [mssc(source.with_changes(b_per_m=b), field) for b in decays]
    assert np.all(np.diff(levels) < 0)
    assert np.all(np.diff(values) > 0)


@pytest.mark.parametrize("scheme", [
    SchemeConfig(scheme=Scheme.SYN_INFER),
    SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.005),
])
def test_approx_falls_as_mssc_grows(source, link, scheme):
    values = [mse_approx(source, level, link, scheme).value for level in np.linspace(0, 1, 21)]
    assert np.all(np.diff(values) < 0)


def test_asyn_approx_close_to_exact_on_random_fields(source, link):
    """Short shift, where the weights differ per transmitter and the approximation is not exact"""
    scheme = SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.005)
    gaps = []
    for seed in range(100):
        field = place_sensors(5, 10.0, seed=seed)
        exact = mse_asyn_infer(source, field, link, scheme).value
        approx = mse_asyn_infer_approx(source, mssc(source, field), link, scheme).value
        gaps.append(abs(approx - exact) / exact)
    assert 0.0 < max(gaps) < 0.05


def test_dip_then_rise_with_short_shift(source, link):
    """A strong second-to-last transmitter and weak MSSC: the MSE first falls in eps."""
    field = dip_field()
    scheme = SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.005)
    assert mssc(source, field) < blep_dip_threshold(source, field, link, scheme)
    assert float(dmse_deps(source, field, link, scheme, 1e-6)) < 0

    grid = np.linspace(0.0, 1.0, 101)
    values = np.array([mse_asyn_infer(source, field, link, scheme, eps_bar=q).value for q in grid])
    best = int(np.argmin(values))
    assert 0 < best < grid.size - 1
    assert values[-1] == pytest.approx(source.sigma2_x, abs=1e-12)


def test_blep_bounds_limits(source, link, field, syn_scheme, asyn_scheme):
    lower, upper = bounds(source, field, link, syn_scheme, BoundAxis.BLEP)
    assert lower.value == pytest.approx(mse_syn_infer(source, field, link, syn_scheme, eps_bar=0.0).value, abs=1e-12)
    assert upper.value == pytest.approx(mse_syn_infer(source, field, link, syn_scheme, eps_bar=1.0).value, abs=1e-12)

    lower, upper = bounds(source, field, link, asyn_scheme, "blep")
    assert lower.value == pytest.approx(mse_asyn_infer(source, field, link, asyn_scheme, eps_bar=0.0).value, abs=1e-12)
    assert upper.value == pytest.approx(source.sigma2_x, abs=1e-12)


def test_blep_lower_bound_at_dip(source, link):
    field = dip_field()
    scheme = SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.005)
    lower, _ = bounds(source, field, link, scheme, "blep")
    grid_min = min(mse_asyn_infer(source, field, link, scheme, eps_bar=q).value for q in np.linspace(0, 1, 1001))
    assert lower.value <= grid_min + 1e-12
    assert lower.value == pytest.approx(grid_min, abs=1e-6)
    assert 0.0 < lower.components["eps_star"] < 1.0


@pytest.mark.parametrize("scheme", [
    SchemeConfig(scheme=Scheme.SYN_INFER),
    SchemeConfig(scheme=Scheme.ASYN_INFER, shift_s=0.01),
])
def test_spatial_bounds_limits(source, link, scheme):
    """All factors 1 reaches the lower bound; factors 0 reach the upper bound."""
    field = equidistant_field(5, 100.0)
    lower, upper = bounds(source, field, link, scheme, BoundAxis.SPATIAL)
    together = mse(source.with_changes(b_per_m=0.0), field, link, scheme).value
    apart = mse(source.with_changes(b_per_m=1.0), field, link, scheme).value
    assert lower.value == pytest.approx(together, abs=1e-12)
    assert upper.value == pytest.approx(apart, abs=1e-12)


def test_no_infer_bounds(source, link, no_scheme):
    lower, upper = bounds(source, None, link, no_scheme, "blep")
    assert lower.value == pytest.approx(zero_blep_value(source, link, 0.15), abs=1e-12)
    assert upper.value == source.sigma2_x
    lower, upper = bounds(source, None, link, no_scheme, "spatial")
    assert lower.value == upper.value


@pytest.mark.parametrize("kind", [Scheme.SYN_INFER, Scheme.ASYN_INFER])
@pytest.mark.parametrize("axis", ["blep", "spatial"])
def test_mse_within_bounds_on_random_configs(kind, axis):
    rng = np.random.default_rng(2024 if axis == "blep" else 2025)
    for trial in range(100):
        source = SourceParams(gamma_o=rng.uniform(1.0, 20.0), a_per_s=rng.uniform(0.5, 5.0),
                              b_per_m=rng.uniform(0.0, 0.05))
        link = LinkParams.from_db(rng.uniform(100, 200), float(rng.integers(60, 200)), 1e-4,
                                  rng.uniform(0.0, 20.0))
        period = rng.uniform(0.05, 0.5)
        field = place_sensors(5, 10.0, seed=trial)
        if kind is Scheme.ASYN_INFER:
            low, high = link.symbol_s, (period - link.delay_s) / 4
            scheme = SchemeConfig(scheme=kind, period_s=period, shift_s=rng.uniform(low, high))
        else:
            scheme = SchemeConfig(scheme=kind, period_s=period)
        value = mse(source, field, link, scheme).value
        lower, upper = bounds(source, field, link, scheme, axis)
        assert lower.value - 1e-12 <= value <= upper.value + 1e-12


def test_inter_reception_expectations(syn_scheme):
    stats = inter_reception_expectations(syn_scheme, 0.5, 2.0)
    assert stats["mean_gap_s"] == pytest.approx(0.15 / (5 * 0.5))
    assert stats["mean_period_gap_s"] == pytest.approx(0.15 / (1 - 0.5 ** 5))
    no_stats = inter_reception_expectations(SchemeConfig(scheme=Scheme.NO_INFER), 0.5, 2.0)
    assert no_stats["mean_period_gap_s"] == pytest.approx(0.3)


def test_slot_advance_probabilities_sum_to_one():
    probs = [slot_advance_probability(0.865, k) for k in range(1, 1000)]
    assert sum(probs) == pytest.approx(1.0, abs=1e-12)
    assert slot_advance_probability(0.0, 1) == 1.0
