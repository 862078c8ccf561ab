import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate

from ponmon.analysis import (
    DistanceDistribution,
    SweepParams,
    any_overlap,
    default_sweep_params,
    min_accumulated_dispersion,
    pulse_intervals,
    run_design,
    run_interference_mc,
    run_sweep,
)
from ponmon.encoders import Codebook
from ponmon.optics import FiberParams


def two_user_overlap_probability(b1, b2, d_m, fiber, low, high):
    """P(two pulses overlap) for users uniform on [low, high] m, by quadrature.

    tau is linear in d with slope k; for a fixed d1 the overlapping d2 form
    the interval where tau2 < tau1 + T1(d1) and tau1 < tau2 + T2(d2). The
    accumulated dispersion must keep one sign over the range.
    """
    k = 2 * fiber.group_index / 2.9979e-4  # ps per metre
    a, b = d_m, 2 * fiber.dispersion * 1e-3
    s = math.copysign(1.0, a + b * low)
    assert math.copysign(1.0, a + b * high) == s

    def length(d1):
        t1 = s * (a + b * d1) * b1
        upper = d1 + t1 / k
        lower = (k * d1 - s * b2 * a) / (k + s * b2 * b)
        return max(0.0, min(upper, high) - max(lower, low))

    val, _ = integrate.quad(length, low, high, limit=200, points=[low + 0.1, high - 0.1])
    return val / (high - low) ** 2


def test_two_user_probability_matches_quadrature():
    book = Codebook(0.2, 0.05, 2)
    fiber = FiberParams()
    dist = DistanceDistribution("uniform", 3000.0, 3002.0)
    trials = 20_000
    res = run_interference_mc(book, dist, trials, seed=9, D_m=-1659.0, fiber=fiber)
    p = two_user_overlap_probability(0.2, 0.25, -1659.0, fiber, 3000.0, 3002.0)
    sigma = math.sqrt(p * (1 - p) / trials)
    assert 0.01 < p < 0.1
    assert abs(res.probability - p) < 4 * sigma
    assert res.ci_low < res.probability < res.ci_high


def test_single_user_and_forced_coincidence():
    book = Codebook(0.2, 0.05, 64)
    one = run_interference_mc(book, DistanceDistribution(), 200, 0, n_users=1)
    assert one.probability == 0.0
    same = run_interference_mc(book, DistanceDistribution("fixed", 5000.0), 200, 0)
    assert same.probability == 1.0 and same.overlaps == 200


def test_64_user_probability_is_nonzero():
    book = Codebook(0.2, 0.05, 64)
    res = run_interference_mc(book, DistanceDistribution("uniform", 1000.0, 20000.0), 2000, 1, D_m=5000.0)
    assert 0.0 < res.probability < 0.5
    assert res.ci_low <= res.probability <= res.ci_high


def test_mc_is_deterministic_and_worker_independent():
    book = Codebook(0.2, 0.05, 8)
    dist = DistanceDistribution("uniform", 3000.0, 3005.0)
    a = run_interference_mc(book, dist, 400, 5)
    b = run_interference_mc(book, dist, 400, 5)
    c = run_interference_mc(book, dist, 400, 5, workers=2)
    assert a == b == c


def test_mc_input_checks():
    book = Codebook(0.2, 0.05, 4)
    with pytest.raises(ValueError):
        run_interference_mc(book, DistanceDistribution(), 99, 0)
    with pytest.raises(ValueError):
        run_interference_mc(book, DistanceDistribution(), 100, 0, n_users=5)
    with pytest.raises(ValueError):
        DistanceDistribution("uniform", 10.0, 5.0)


@given(st.lists(st.tuples(st.floats(0, 100), st.floats(0.01, 10)), min_size=1, max_size=12))
def test_any_overlap_matches_pairwise_check(intervals):
    start = np.array([s for s, _ in intervals])
    end = start + np.array([w for _, w in intervals])
    brute = any(start[i] < end[j] and start[j] < end[i]
                for i in range(len(start)) for j in range(i + 1, len(start)))
    assert any_overlap(start, end) == brute


def test_pulse_intervals():
    start, end = pulse_intervals(np.array([3300.0]), np.array([0.24]), -1659.0, FiberParams())
    assert end[0] - start[0] == pytest.approx(371.232)


def test_design_reports():
    fiber = FiberParams.from_group_velocity(2e8)
    rep = run_design(64, 0.2, 250.0, 5000.0, fiber)
    assert rep.codebook.delta_b == pytest.approx(0.05)
    assert rep.t_max == pytest.approx(16750.0, rel=1e-12)
    assert rep.min_separation == pytest.approx(1.675, rel=1e-12)
    single = run_design(1, 0.3, 250.0, 5000.0)
    assert single.to_csv().splitlines()[-1] == "1,0.3,1500"
    pair = run_design(2, 0.24, 100.0, 2000.0)
    assert np.allclose(pair.codebook.bandwidths, [0.24, 0.29])


def test_design_dispersion_check():
    fiber = FiberParams()
    # D_m = 5000 and D > 0: the smallest |D_i| is at the CO
    assert min_accumulated_dispersion(5000.0, fiber, 20000.0) == pytest.approx(5000.0)
    assert min_accumulated_dispersion(-5000.0, fiber, 20000.0) == pytest.approx(5000.0 - 680.0)
    # sign change inside the range
    assert min_accumulated_dispersion(-340.0, fiber, 20000.0) == 0.0
    ok = run_design(64, 0.2, 250.0, 5000.0, D_m=5000.0, max_distance=20000.0)
    bad = run_design(64, 0.2, 250.0, 5000.0, D_m=-5000.0, max_distance=20000.0)
    assert ok.dispersion_ok and not bad.dispersion_ok
    assert run_design(2, 0.2, 250.0, 5000.0).dispersion_ok is None


def test_single_point_sweep_has_no_fit():
    params = SweepParams("width_vs_distance", (-1659.0,), (3.3,), (0.24,))
    res = run_sweep(params)
    assert len(res.rows) == 1 and res.fits == ()
    assert not any(line.startswith("#") for line in res.to_csv().splitlines())


def test_sweep_csv_layout():
    base = default_sweep_params("width_vs_bandwidth")
    params = SweepParams("width_vs_bandwidth", (3000.0,), (10.0,), (0.3, 0.6), probe=base.probe,
                         receiver=base.receiver)
    lines = run_sweep(params).to_csv().splitlines()
    assert lines[0].startswith("# fit dispersion_ps_per_nm=3000 distance_km=10 slope_ps_per_nm=")
    assert lines[1] == "dispersion_ps_per_nm,distance_km,bandwidth_nm,fwhm_ps,expected_fwhm_ps"
    assert len(lines) == 4


def test_sweep_validation():
    with pytest.raises(ValueError):
        SweepParams("width_vs_time", (1.0,), (1.0,), (1.0,))
    with pytest.raises(ValueError):
        SweepParams("width_vs_distance", (1.0,), (), (1.0,))
