import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ponmon.optics import (
    FiberParams,
    SpectralGrid,
    Waveform,
    check_fraunhofer,
    delay_to_distance,
    dispersion_to_gdd,
    distance_to_delay,
    nm_to_thz,
    total_dispersion,
    wavelength_at_time,
)

C = 2.9979e5  # nm/ps, the package's fixed constant


def test_total_dispersion_reference_link():
    # -1659 + 2 * 17 * 3.3
    assert total_dispersion(-1659.0, FiberParams(), 3300.0) == pytest.approx(-1546.8, abs=1e-9)


def test_gdd_matches_closed_form():
    # phi2 = -D lambda^2 / (2 pi c)
    expected = 1659.0 * 1550.0**2 / (2 * math.pi * C)
    assert dispersion_to_gdd(-1659.0, 1550.0) == pytest.approx(expected, rel=1e-12)
    assert dispersion_to_gdd(1659.0, 1550.0) == pytest.approx(-expected, rel=1e-12)


def test_round_trip_delay_example():
    # 2 * 3300 m * 1.468 / (2.9979e-4 m/ps)
    assert distance_to_delay(3300.0, FiberParams()) == pytest.approx(2 * 3300 * 1.468 / 2.9979e-4, rel=1e-12)


def test_group_velocity_override():
    fiber = FiberParams.from_group_velocity(2e8)
    assert fiber.group_velocity == pytest.approx(2e-4, rel=1e-12)
    # 1 m round trip at 2e8 m/s is 10 ns
    assert distance_to_delay(1.0, fiber) == pytest.approx(1e4, rel=1e-12)


@given(st.floats(0, 1e5))
def test_delay_distance_inverse(d):
    fiber = FiberParams()
    assert delay_to_distance(distance_to_delay(d, fiber), fiber) == pytest.approx(d, rel=1e-12, abs=1e-9)


def test_negative_distance_rejected():
    with pytest.raises(ValueError):
        distance_to_delay(-1.0, FiberParams())
    with pytest.raises(ValueError):
        delay_to_distance(-1.0, FiberParams())


def test_nm_to_thz():
    assert nm_to_thz(1.0, 1550.0) == pytest.approx(C / 1550.0**2, rel=1e-12)


def test_wavelength_at_time():
    assert wavelength_at_time(1000.0, 1000.0, -1659.0, 1550.0) == pytest.approx(1550.0)
    assert wavelength_at_time(1000.0 + 1659.0, 1000.0, 1659.0, 1550.0) == pytest.approx(1551.0)
    with pytest.raises(ValueError):
        wavelength_at_time(0.0, 0.0, 0.0, 1550.0)


def test_fraunhofer_ratio_definition():
    fwhm = 2.659
    t0 = fwhm / math.sqrt(2 * math.log(2))
    phi2 = abs(dispersion_to_gdd(-1659.0, 1550.0))
    rep = check_fraunhofer(fwhm, -1659.0, 1550.0)
    assert rep.ratio == pytest.approx(phi2 / (t0**2 / (8 * math.pi)), rel=1e-9)
    assert rep.satisfied
    assert not check_fraunhofer(100.0, -10.0, 1550.0).satisfied


def test_grid_validation():
    with pytest.raises(ValueError):
        SpectralGrid(1550.0, 1000, 1e-3)
    with pytest.raises(ValueError):
        SpectralGrid.from_span(1550.0, 5.0, max_feature_nm=1.0)


def test_grid_axes_consistent():
    g = SpectralGrid.from_span(1550.0, 20.0, 2**12)
    assert g.span_nm == pytest.approx(20.0, rel=1e-6)
    assert g.time_window == pytest.approx(1 / g.freq_spacing)
    assert g.dt * g.n_points == pytest.approx(g.time_window)
    lam = g.wavelengths()
    # frequency ascends, so wavelength descends
    assert np.all(np.diff(lam) < 0)
    assert lam[g.n_points // 2] == pytest.approx(1550.0)


def test_covering_grid_meets_both_requirements():
    g = SpectralGrid.covering(1550.0, 10.0, 5000.0, max_feature_nm=1.0)
    assert g.span_nm >= 10.0
    assert g.time_window >= 5000.0
    assert g.covers(1550.0, 4.0)


def test_waveform_is_read_only_and_finite():
    wf = Waveform(0.0, 1.0, np.ones(4))
    with pytest.raises(ValueError):
        wf.samples[0] = 2.0
    with pytest.raises(ValueError):
        Waveform(0.0, 1.0, np.array([1.0, np.nan]))
    with pytest.raises(ValueError):
        Waveform(0.0, 0.0, np.ones(2))
