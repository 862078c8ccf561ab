"""End-to-end monitoring response of a PON with single-FBG encoders.

Each branch response is rendered in a local time window (closed-form
far-field mapping or full-field propagation), passed through the receiver
(photodiode low-pass, sampling) and placed on the global time base. Noise
and ADC quantisation are applied once to the assembled trace.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import signal

from .encoders import FbgEncoder
from .optics import (
    FiberParams,
    SpectralGrid,
    Waveform,
    check_fraunhofer,
    dispersion_to_gdd,
    distance_to_delay,
    nm_to_thz,
    total_dispersion,
    wavelength_at_time,
)
from .propagation import (
    ProbePulseSpec,
    apply_dispersion,
    generate_probe_pulse,
    resample,
    to_intensity_waveform,
)
from .optics import SpectralField

MODELS = ("farfield", "fullfield")


class FraunhoferWarning(UserWarning):
    """Accumulated dispersion too small for a faithful wavelength-to-time mapping."""


@dataclass(frozen=True)
class Branch:
    id: str
    distance: float  # m, central office to encoder
    encoder: FbgEncoder
    excess_loss: float = 0.0  # dB, one way

    def __post_init__(self):
        if not self.distance > 0:
            raise ValueError(f"branch {self.id}: distance must be > 0")
        if self.excess_loss < 0:
            raise ValueError(f"branch {self.id}: excess_loss must be >= 0")


@dataclass(frozen=True)
class PonTopology:
    """Branches behind a 1:N splitter. Distances are measured from the CO,
    so ``feeder_length`` is informational only."""

    branches: tuple[Branch, ...] = ()
    split_ratio: int = 1
    fiber: FiberParams = field(default_factory=FiberParams)
    feeder_length: float = 0.0
    losses_enabled: bool = True

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(self.branches))
        if self.split_ratio < max(1, len(self.branches)):
            raise ValueError("split_ratio must be >= number of branches")
        ids = [b.id for b in self.branches]
        if len(set(ids)) != len(ids):
            raise ValueError("branch ids must be unique")
        centers = {b.encoder.center_wavelength for b in self.branches}
        if len(centers) > 1:
            raise ValueError("all encoders must share one center wavelength")

    def max_delay(self) -> float:
        if not self.branches:
            return 0.0
        return max(distance_to_delay(b.distance, self.fiber) for b in self.branches)


@dataclass(frozen=True)
class ReceiverConfig:
    pd_bandwidth: float = 5.0  # GHz, 3 dB
    sample_rate: float = 20.0  # Gsps
    adc_bits: int = 0  # 0 = ideal
    noise_rms: float = 0.0  # fraction of the strongest pulse peak
    seed: int = 0
    adc_full_scale: float | None = None  # default 1.25 x reference peak

    def __post_init__(self):
        if not self.pd_bandwidth > 0:
            raise ValueError("pd_bandwidth must be > 0")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be > 0")
        if self.adc_bits < 0 or self.noise_rms < 0:
            raise ValueError("adc_bits and noise_rms must be >= 0")
        if self.sample_rate < 2 * self.pd_bandwidth:
            warnings.warn("sample rate below twice the photodiode bandwidth", stacklevel=3)

    @property
    def dt(self) -> float:
        """Output sample period [ps]."""
        return 1e3 / self.sample_rate


@dataclass(frozen=True)
class MonitoringModuleConfig:
    D_m: float = -1659.0  # ps/nm
    probe: ProbePulseSpec = field(default_factory=ProbePulseSpec)
    receiver: ReceiverConfig = field(default_factory=ReceiverConfig)
    repetition_period: float = 5e8  # ps

    def __post_init__(self):
        if not self.repetition_period > 0:
            raise ValueError("repetition_period must be > 0")


def link_loss(branch: Branch, topo: PonTopology) -> float:
    """Round-trip loss [dB]: fiber, splitter and excess loss both ways plus
    the reflection loss of the encoder peak."""
    if not topo.losses_enabled:
        return 0.0
    one_way = (topo.fiber.attenuation * branch.distance * 1e-3
               + 10 * math.log10(topo.split_ratio) + branch.excess_loss)
    return 2 * one_way - 10 * math.log10(branch.encoder.peak_reflectivity)


def _link_gain(branch: Branch, topo: PonTopology) -> float:
    return 10 ** (-link_loss(branch, topo) / 10)


def _effective_bandwidth(encoder: FbgEncoder, probe: ProbePulseSpec) -> float:
    """Gaussian-product estimate of the reflected spectral width."""
    return 1.0 / math.sqrt(encoder.bandwidth**-2 + probe.spectral_fwhm**-2)


def _mapped_extent(encoder: FbgEncoder, probe: ProbePulseSpec) -> float:
    """Half-width [nm] of the reflected spectrum carrying non-negligible power."""
    return min(encoder.extent, 4.0 * probe.spectral_fwhm)


def fraunhofer_for_branch(branch: Branch, mm: MonitoringModuleConfig, topo: PonTopology):
    """Far-field check against the transform-limited width of the reflected spectrum."""
    D_i = total_dispersion(mm.D_m, topo.fiber, branch.distance)
    lam0 = branch.encoder.center_wavelength
    b_eff = _effective_bandwidth(branch.encoder, mm.probe)
    tl = 2 * math.log(2) / math.pi / nm_to_thz(b_eff, lam0)
    return check_fraunhofer(tl, D_i, lam0)


def branch_response_farfield(branch: Branch, mm: MonitoringModuleConfig, topo: PonTopology,
                             dt: float | None = None) -> Waveform:
    """Closed-form reflected pulse: R(lambda(t)) times the probe spectrum.

    The time axis is aligned to integer multiples of ``dt``. Intensity is
    scaled by the stationary-phase factor 1 / (2 pi |phi2|), so the pulse
    energy equals the reflected spectral energy.
    """
    enc, probe = branch.encoder, mm.probe
    D_i = total_dispersion(mm.D_m, topo.fiber, branch.distance)
    if D_i == 0:
        raise ValueError(f"branch {branch.id}: zero accumulated dispersion")
    if not fraunhofer_for_branch(branch, mm, topo).satisfied:
        warnings.warn(f"branch {branch.id}: temporal Fraunhofer condition not met",
                      FraunhoferWarning, stacklevel=2)
    tau = distance_to_delay(branch.distance, topo.fiber)
    half_t = abs(D_i) * _mapped_extent(enc, probe)
    if dt is None:
        dt = abs(D_i) * _effective_bandwidth(enc, probe) / 64
    i0 = math.floor((tau - half_t) / dt)
    i1 = math.ceil((tau + half_t) / dt)
    t = dt * np.arange(i0, i1 + 1)
    lam = wavelength_at_time(t, tau, D_i, enc.center_wavelength)
    phi2 = dispersion_to_gdd(D_i, enc.center_wavelength)
    density = probe.peak_spectral_density() * probe.spectral_profile(lam)
    intensity = _link_gain(branch, topo) * enc.normalized(lam) * density / (2 * math.pi * abs(phi2))
    return Waveform(float(t[0]), dt, intensity)


def fullfield_grid(branch: Branch, mm: MonitoringModuleConfig, topo: PonTopology) -> SpectralGrid:
    """Grid wide enough for probe and encoder and long enough for the dispersed pulse."""
    enc, probe = branch.encoder, mm.probe
    D_i = total_dispersion(mm.D_m, topo.fiber, branch.distance)
    widest = max(probe.spectral_fwhm, enc.bandwidth)
    span = 8.4 * widest  # margin so discretisation keeps the +-4B edges inside
    b_eff = _effective_bandwidth(enc, probe)
    tl = 2 * math.log(2) / math.pi / nm_to_thz(b_eff, probe.center_wavelength)
    window = 3.0 * abs(D_i) * _mapped_extent(enc, probe) + 64 * tl
    return SpectralGrid.covering(probe.center_wavelength, span, window, max_feature_nm=widest)


def branch_response_fullfield(branch: Branch, mm: MonitoringModuleConfig, topo: PonTopology,
                              grid: SpectralGrid | None = None) -> Waveform:
    """Propagate the probe field: D_m, encoder reflection, PON round trip.

    The encoder multiplies the field amplitude by sqrt(R / R_peak); the
    reflection loss is carried by the link gain, as in the far-field path.
    """
    if grid is None:
        grid = fullfield_grid(branch, mm, topo)
    enc = branch.encoder
    if not grid.covers(enc.center_wavelength, 4 * enc.bandwidth):
        raise ValueError(f"branch {branch.id}: grid does not cover the encoder")
    tau = distance_to_delay(branch.distance, topo.fiber)
    field_ = generate_probe_pulse(mm.probe, grid)
    field_ = apply_dispersion(field_, mm.D_m)
    field_ = SpectralField(grid, field_.amplitudes * np.sqrt(enc.normalized(grid.wavelengths())))
    field_ = apply_dispersion(field_, 2 * topo.fiber.dispersion * branch.distance * 1e-3)
    wf = to_intensity_waveform(field_, tau)
    return wf.with_samples(wf.samples * _link_gain(branch, topo))


@lru_cache(maxsize=8)
def _bessel4():
    return signal.bessel(4, 1.0, btype="low", analog=True, norm="mag")


def photodiode_response(freq_ghz: np.ndarray, pd_bandwidth: float) -> np.ndarray:
    """Magnitude of a 4th-order Bessel low-pass with 3 dB point at ``pd_bandwidth``."""
    b, a = _bessel4()
    _, h = signal.freqs(b, a, worN=np.abs(freq_ghz) / pd_bandwidth)
    return np.abs(h)


def receive(waveform: Waveform, receiver: ReceiverConfig) -> Waveform:
    """Photodiode filtering and sampling of a noise-free local window.

    The filter is zero-phase (magnitude only). Output samples sit at integer
    multiples of the receiver sample period.
    """
    dt = waveform.dt
    pad = int(math.ceil(12e3 / receiver.pd_bandwidth / dt)) + int(math.ceil(16 * receiver.dt / dt))
    x = np.pad(waveform.samples, (pad, pad))
    n = x.size
    n_fft = 1 << (n - 1).bit_length()
    freq_ghz = np.fft.rfftfreq(n_fft, dt) * 1e3
    y = np.fft.irfft(np.fft.rfft(x, n_fft) * photodiode_response(freq_ghz, receiver.pd_bandwidth), n_fft)[:n]
    padded = Waveform(waveform.t0 - pad * dt, dt, y)
    dt_out = receiver.dt
    k0 = math.ceil(padded.t0 / dt_out)
    k1 = math.floor((padded.t0 + (n - 1) * dt) / dt_out)
    return resample(padded, dt_out, t0=k0 * dt_out, n_samples=k1 - k0 + 1)


@lru_cache(maxsize=32)
def receiver_impulse_fwhm(pd_bandwidth: float) -> float:
    """FWHM [ps] of the photodiode impulse response."""
    dt = 0.25e3 / pd_bandwidth / 64
    n = 1 << 16
    freq_ghz = np.fft.rfftfreq(n, dt) * 1e3
    h = np.fft.fftshift(np.fft.irfft(photodiode_response(freq_ghz, pd_bandwidth), n))
    p = int(np.argmax(h))
    half = h[p] / 2
    right = p + int(np.argmax(h[p:] < half))
    left = p - int(np.argmax(h[p::-1] < half))
    xr = right - 1 + (h[right - 1] - half) / (h[right - 1] - h[right])
    xl = left + 1 - (h[left + 1] - half) / (h[left + 1] - h[left])
    return float((xr - xl) * dt)


def expected_fwhm_for_branch(branch: Branch, mm: MonitoringModuleConfig, topo: PonTopology) -> float:
    return abs(total_dispersion(mm.D_m, topo.fiber, branch.distance)) * branch.encoder.bandwidth


def nominal_reference_peak(mm: MonitoringModuleConfig) -> float:
    """Far-field peak of a lossless reflection at D_m; noise reference for empty traces."""
    lam0 = mm.probe.center_wavelength
    phi2 = abs(dispersion_to_gdd(mm.D_m, lam0)) if mm.D_m else 1.0
    return mm.probe.peak_spectral_density() / (2 * math.pi * phi2)


def branch_response(branch: Branch, mm: MonitoringModuleConfig, topo: PonTopology,
                    model: str = "farfield") -> Waveform:
    """Received (filtered, sampled, noise-free) pulse of one branch."""
    if model == "farfield":
        rx = mm.receiver
        d_i = total_dispersion(mm.D_m, topo.fiber, branch.distance)
        target = min(abs(d_i) * _effective_bandwidth(branch.encoder, mm.probe) / 32,
                     1e3 / rx.pd_bandwidth / 20, rx.dt / 4)
        k = max(1, math.ceil(rx.dt / target))
        wf = branch_response_farfield(branch, mm, topo, dt=rx.dt / k)
    elif model == "fullfield":
        wf = branch_response_fullfield(branch, mm, topo)
    else:
        raise ValueError(f"unknown model {model!r}; expected one of {MODELS}")
    return receive(wf, mm.receiver)


def default_span(topo: PonTopology, mm: MonitoringModuleConfig) -> tuple[float, float]:
    if not topo.branches:
        return 0.0, 10 * abs(mm.D_m) * mm.probe.spectral_fwhm
    widest = max(expected_fwhm_for_branch(b, mm, topo) for b in topo.branches)
    return 0.0, topo.max_delay() + 10 * widest


def quantize(x: np.ndarray, bits: int, full_scale: float) -> np.ndarray:
    """Mid-rise bipolar quantiser over [-full_scale, full_scale]."""
    step = 2 * full_scale / 2**bits
    q = (np.floor(x / step) + 0.5) * step
    return np.clip(q, -full_scale + step / 2, full_scale - step / 2)


def simulate_pon_response(topo: PonTopology, mm: MonitoringModuleConfig, *,
                          model: str = "farfield", span: tuple[float, float] | None = None,
                          seed: int | None = None) -> Waveform:
    """Acquired OTDR-like trace of the whole PON.

    ``span`` restricts the acquisition window (ps); by default it covers
    ``[0, max tau + 10 max FWHM]``. ``seed`` overrides the receiver seed.
    """
    if topo.max_delay() >= mm.repetition_period:
        raise ValueError("repetition period must exceed the maximum round-trip delay")
    rx = mm.receiver
    start, stop = default_span(topo, mm) if span is None else span
    k0 = math.ceil(start / rx.dt - 1e-9)
    n = max(int(math.floor(stop / rx.dt + 1e-9)) - k0 + 1, 1)
    trace = np.zeros(n)
    for branch in topo.branches:
        pulse = branch_response(branch, mm, topo, model)
        off = int(round(pulse.t0 / rx.dt)) - k0
        lo, hi = max(off, 0), min(off + pulse.samples.size, n)
        if lo < hi:
            trace[lo:hi] += pulse.samples[lo - off:hi - off]
    peak = float(trace.max()) if topo.branches else 0.0
    reference = peak if peak > 0 else nominal_reference_peak(mm)
    if rx.noise_rms > 0:
        rng = np.random.default_rng(rx.seed if seed is None else seed)
        trace += rng.normal(0.0, rx.noise_rms * reference, n)
    if rx.adc_bits > 0:
        fs = rx.adc_full_scale if rx.adc_full_scale else 1.25 * reference
        trace = quantize(trace, rx.adc_bits, fs)
    return Waveform(k0 * rx.dt, rx.dt, trace)


def expected_pulses(topo: PonTopology, mm: MonitoringModuleConfig) -> list[dict]:
    """Per-branch delay, dispersion and closed-form pulse width for metadata sidecars."""
    rows = []
    for b in topo.branches:
        d_i = total_dispersion(mm.D_m, topo.fiber, b.distance)
        rows.append({
            "branch_id": b.id,
            "distance_m": b.distance,
            "bandwidth_nm": b.encoder.bandwidth,
            "tau_ps": distance_to_delay(b.distance, topo.fiber),
            "total_dispersion_ps_per_nm": d_i,
            "fwhm_ps": abs(d_i) * b.encoder.bandwidth,
            "link_loss_db": link_loss(b, topo),
        })
    return rows
