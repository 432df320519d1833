import math

import numpy as np
import pytest

from errors import DivergenceError, DomainError
from grid_domain import box_of_measure, rasterize, scale_domain, two_balls
from riesz_kernel import RieszParams
from spectrum_functions import Spectrum
from trace_estimator import (
    bll_compare,
    cycle_variance_finite,
    eigensum,
    interval_frobenius_trace,
    make_rng,
    sample_point,
    trace_cycle_mc,
)


@pytest.fixture
def interval_domain(unit_interval):
    return rasterize(unit_interval, 1 / 64)


def test_argument_checks(planar, unit_square):
    domain = rasterize(unit_square, 1 / 8)
    with pytest.raises(DomainError):
        trace_cycle_mc(planar, domain, 1, 10_000, seed=0)
    with pytest.raises(DomainError):
        trace_cycle_mc(planar, domain, 2.5, 10_000, seed=0)
    with pytest.raises(DivergenceError, match="p0"):
        trace_cycle_mc(planar, domain, 2, 10_000, seed=0)
    with pytest.raises(DomainError):
        trace_cycle_mc(planar, domain, 3, 10, seed=0)
    with pytest.raises(DomainError):
        trace_cycle_mc(planar, domain, 3, 10_000, seed=0, lanes=0)


def test_sample_point_lies_in_a_cell(l_domain):
    rng = make_rng(5)
    cells = {tuple(k) for k in l_domain.indices.tolist()}
    for _ in range(20):
        point = sample_point(l_domain, rng)
        assert tuple(np.floor(point / l_domain.h).astype(int).tolist()) in cells


def test_reproducible_for_fixed_seed(planar, l_domain):
    first = trace_cycle_mc(planar, l_domain, 3, 20_000, seed=7, lanes=2)
    second = trace_cycle_mc(planar, l_domain, 3, 20_000, seed=7, lanes=2, threads=2)
    assert first.estimate == second.estimate
    assert first.std_error == second.std_error
    other = trace_cycle_mc(planar, l_domain, 3, 20_000, seed=7, stream=1, lanes=2)
    assert other.estimate != first.estimate


def test_exact_dilation_scaling(planar, l_domain):
    t = 2.0
    base = trace_cycle_mc(planar, l_domain, 3, 10_000, seed=1)
    scaled = trace_cycle_mc(planar, scale_domain(l_domain, t), 3, 10_000, seed=1)
    factor = t ** (planar.alpha * 3)
    assert scaled.estimate == pytest.approx(factor * base.estimate, rel=1e-10)
    assert scaled.std_error == pytest.approx(factor * base.std_error, rel=1e-10)
    assert scaled.rejections == base.rejections


def test_interval_trace_against_closed_form(interval_domain):
    params = RieszParams(0.8, 1)
    exact = interval_frobenius_trace(params)
    estimate = trace_cycle_mc(params, interval_domain, 2, 200_000, seed=0)
    assert estimate.finite_variance
    assert abs(estimate.estimate - exact) <= 4 * estimate.std_error


def test_standard_error_shrinks_like_inverse_root(interval_domain):
    params = RieszParams(0.9, 1)
    small = trace_cycle_mc(params, interval_domain, 2, 20_000, seed=2)
    large = trace_cycle_mc(params, interval_domain, 2, 320_000, seed=2)
    assert small.std_error / large.std_error == pytest.approx(4.0, rel=0.2)


def test_infinite_variance_is_flagged(unit_interval):
    params = RieszParams(0.4, 1)
    estimate = trace_cycle_mc(params, rasterize(unit_interval, 1 / 16), 3, 5_000, seed=0)
    assert not estimate.finite_variance


@pytest.mark.parametrize(
    "alpha, dim, s, finite",
    [
        (0.4, 1, 3, False),
        (0.6, 1, 2, False),
        (0.6, 1, 6, True),
        (0.8, 1, 2, True),
        (1.0, 2, 3, False),
        (1.5, 2, 2, False),
        (1.5, 2, 3, True),
        (2.5, 3, 4, True),
    ],
)
def test_cycle_variance_condition(alpha, dim, s, finite):
    assert cycle_variance_finite(RieszParams(alpha, dim), s) is finite


def test_variance_flag_depends_on_cycle_length(unit_interval, unit_square):
    interval = rasterize(unit_interval, 1 / 64)
    assert not trace_cycle_mc(RieszParams(0.6, 1), interval, 2, 20_000, seed=2).finite_variance
    square = rasterize(unit_square, 1 / 8)
    assert not trace_cycle_mc(RieszParams(1.5, 2), square, 2, 5_000, seed=2).finite_variance
    assert trace_cycle_mc(RieszParams(1.5, 2), square, 3, 5_000, seed=2).finite_variance


def test_mean_over_seeds_is_unbiased(interval_domain):
    params = RieszParams(0.9, 1)
    exact = interval_frobenius_trace(params)
    estimates = [trace_cycle_mc(params, interval_domain, 2, 20_000, seed=seed) for seed in range(20)]
    assert all(estimate.finite_variance for estimate in estimates)
    pooled = np.mean([estimate.std_error for estimate in estimates]) / math.sqrt(20)
    assert abs(np.mean([estimate.estimate for estimate in estimates]) - exact) < 3 * pooled


def test_two_balls_split_evenly():
    domain = rasterize(two_balls(1.0, 1.0, 2), 1 / 16)
    rng = make_rng(42)
    draws = 100_000
    left = sum(sample_point(domain, rng)[0] < 0 for _ in range(draws))
    assert abs(left - draws / 2) < 3 * math.sqrt(draws / 4)


def test_first_points_repeat_for_a_fixed_seed(l_domain):
    rng_a, rng_b = make_rng(42), make_rng(42)
    first = np.array([sample_point(l_domain, rng_a) for _ in range(10)])
    second = np.array([sample_point(l_domain, rng_b) for _ in range(10)])
    np.testing.assert_array_equal(first, second)


def test_interval_frobenius_trace():
    params = RieszParams(0.8, 1)
    assert interval_frobenius_trace(params) == pytest.approx(params.c**2 * 2 / (0.6 * 1.6), rel=1e-14)
    assert interval_frobenius_trace(params, 2.0) == pytest.approx(
        2.0**1.6 * interval_frobenius_trace(params), rel=1e-14
    )
    with pytest.raises(DivergenceError):
        interval_frobenius_trace(RieszParams(0.5, 1))
    with pytest.raises(DomainError):
        interval_frobenius_trace(RieszParams(1.0, 2))


def test_eigensum_clips_negative_values():
    assert eigensum(Spectrum([2.0, 1.0, -0.5]), 3) == 9.0


def test_ball_beats_square():
    params = RieszParams(1.5, 2)
    domain = rasterize(box_of_measure(1.0, 2), 1 / 32)
    report = bll_compare(params, domain, 3, 1_000_000, seed=0)
    assert not report.vacuous
    assert report.holds
    assert report.significant
    assert report.to_dict()["significant"]


def test_ball_beats_two_far_balls():
    params = RieszParams(1.5, 2)
    domain = rasterize(two_balls(1.0, 2.0, 2), 1 / 32)
    report = bll_compare(params, domain, 3, 20_000, seed=4, lanes=2, threads=2)
    assert report.significant
    assert 0.9 < report.normalization < 1.1
    assert math.isfinite(report.combined_error)
