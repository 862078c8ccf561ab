"""Broadband probe pulse, quadratic-phase dispersion and time-domain conversion."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import special

from .optics import (
    C_NM_PER_PS,
    SPAN_FACTOR,
    SpectralField,
    SpectralGrid,
    Waveform,
    dispersion_to_gdd,
    nm_to_thz,
)

LN2 = math.log(2.0)


class AliasingWarning(UserWarning):
    """Upsampling a trace whose spectrum already reaches its Nyquist band."""


@dataclass(frozen=True)
class ProbePulseSpec:
    """Spectral description of the broadband probe pulse.

    ``shape`` is ``"gaussian"`` or ``"super_gaussian"`` (with ``order``);
    ``order=1`` super-Gaussian equals the Gaussian. ``chirp`` adds a
    quadratic spectral phase ``chirp * w^2 / (2 W0^2)`` where ``W0`` is the
    1/e half-width of the spectral intensity, so a Gaussian with chirp C is
    ``sqrt(1 + C^2)`` times longer than its transform limit.
    ``peak_power`` [mW] is the peak of the transform-limited pulse.
    """

    center_wavelength: float = 1550.0
    spectral_fwhm: float = 1.33
    shape: str = "gaussian"
    order: int = 1
    chirp: float = 0.0
    peak_power: float = 1.0

    def __post_init__(self):
        if not self.spectral_fwhm > 0:
            raise ValueError("spectral_fwhm must be > 0")
        if not self.peak_power > 0:
            raise ValueError("peak_power must be > 0")
        if self.shape not in ("gaussian", "super_gaussian"):
            raise ValueError(f"unknown probe shape {self.shape!r}")
        if self.order < 1:
            raise ValueError("super-Gaussian order must be >= 1")

    @property
    def effective_order(self) -> int:
        return 1 if self.shape == "gaussian" else self.order

    def spectral_profile(self, wavelength) -> np.ndarray:
        """Normalised spectral intensity (1 at the centre, 1/2 at +-FWHM/2)."""
        x = 2.0 * (np.asarray(wavelength, dtype=float) - self.center_wavelength) / self.spectral_fwhm
        return np.exp(-LN2 * np.abs(x) ** (2 * self.effective_order))

    def peak_spectral_density(self) -> float:
        """Spectral density |X|^2 at the centre [mW ps/THz] giving ``peak_power``."""
        lam = self.center_wavelength + self.spectral_fwhm * np.linspace(-4, 4, 8001)
        freq = C_NM_PER_PS / lam
        root = np.sqrt(self.spectral_profile(lam))
        # lam increases, freq decreases
        integral = -np.trapezoid(root, freq)
        return self.peak_power / integral**2

    def transform_limited_fwhm(self) -> float:
        """Temporal FWHM [ps] of the unchirped Gaussian-equivalent pulse."""
        return 2 * LN2 / math.pi / nm_to_thz(self.spectral_fwhm, self.center_wavelength)


@dataclass(frozen=True, eq=False)
class ComplexTimeSignal:
    t0: float
    dt: float
    samples: np.ndarray

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    def energy(self) -> float:
        return float(np.sum(np.abs(self.samples) ** 2) * self.dt)


def generate_probe_pulse(spec: ProbePulseSpec, grid: SpectralGrid) -> SpectralField:
    """Sample the probe spectrum on ``grid``."""
    if grid.span_nm < SPAN_FACTOR * spec.spectral_fwhm * (1 - 1e-12):
        raise ValueError(
            f"grid span {grid.span_nm:.4g} nm < {SPAN_FACTOR:g} x probe FWHM {spec.spectral_fwhm:g} nm"
        )
    if abs(grid.center_wavelength - spec.center_wavelength) > grid.wavelength_spacing:
        raise ValueError("grid must be centred on the probe wavelength")
    lam = grid.wavelengths()
    amp = np.sqrt(spec.peak_spectral_density() * spec.spectral_profile(lam))
    if spec.chirp:
        w0 = 2 * math.pi * nm_to_thz(spec.spectral_fwhm, spec.center_wavelength) / (2 * math.sqrt(LN2))
        amp = amp * np.exp(1j * spec.chirp * grid.angular_offsets() ** 2 / (2 * w0**2))
    return SpectralField(grid, amp)


def apply_dispersion(field: SpectralField, D_total: float) -> SpectralField:
    """Multiply by exp(i phi2 w^2 / 2), phi2 being the GDD of ``D_total`` ps/nm.

    Time signals are built with the exp(-i w t) convention, so a spectral
    component at offset w arrives at ``t = phi2 * w``, i.e. ``t = D * dlambda``.
    """
    if D_total == 0:
        return field
    phi2 = dispersion_to_gdd(D_total, field.grid.center_wavelength)
    w = field.grid.angular_offsets()
    return SpectralField(field.grid, field.amplitudes * np.exp(0.5j * phi2 * w**2))


def to_time_domain(field: SpectralField, t_offset: float = 0.0) -> ComplexTimeSignal:
    """Complex temporal envelope; sample ``n_points//2`` sits at ``t_offset``.

    Scaled so that sum |a|^2 dt equals the spectral energy sum |X|^2 df.
    """
    g = field.grid
    a = g.freq_spacing * np.fft.fftshift(np.fft.fft(np.fft.ifftshift(field.amplitudes)))
    return ComplexTimeSignal(t_offset - (g.n_points // 2) * g.dt, g.dt, a)


def to_intensity_waveform(field: SpectralField, t_offset: float = 0.0) -> Waveform:
    sig = to_time_domain(field, t_offset)
    return Waveform(sig.t0, sig.dt, np.abs(sig.samples) ** 2)


def _kaiser(x: np.ndarray, beta: float = 8.0) -> np.ndarray:
    inside = np.abs(x) < 1
    out = np.zeros_like(x)
    out[inside] = special.i0(beta * np.sqrt(1 - x[inside] ** 2)) / special.i0(beta)
    return out


def _kernel(frac: np.ndarray, taps: np.ndarray, scale: float, half_width: int) -> np.ndarray:
    u = (frac[:, None] - taps[None, :]) * scale
    w = np.sinc(u) * _kaiser(u / half_width)
    return w / w.sum(axis=1, keepdims=True)


def _band_edge_fraction(samples: np.ndarray) -> float:
    spec = np.abs(np.fft.rfft(samples - samples.mean())) ** 2
    total = spec.sum()
    if total == 0:
        return 0.0
    return float(spec[int(0.8 * spec.size):].sum() / total)


def resample(waveform: Waveform, new_dt: float, *, t0: float | None = None,
             n_samples: int | None = None, half_width: int = 16) -> Waveform:
    """Band-limited (Kaiser-windowed sinc) interpolation onto a new time grid.

    When downsampling the kernel also low-passes to the new Nyquist band.
    The output grid starts at ``t0`` (default: the input start) and holds
    ``n_samples`` points (default: as many as fit inside the input span).
    Samples outside the input are taken equal to the nearest edge sample.
    """
    if not new_dt > 0:
        raise ValueError("new_dt must be > 0")
    dt = waveform.dt
    if t0 is None and n_samples is None and math.isclose(new_dt, dt, rel_tol=1e-12):
        return Waveform(waveform.t0, waveform.dt, waveform.samples.copy())
    x = waveform.samples
    if t0 is None:
        t0 = waveform.t0
    if n_samples is None:
        t_end = waveform.t0 + (x.size - 1) * dt
        n_samples = int(math.floor((t_end - t0) / new_dt + 1e-9)) + 1
    n_samples = max(int(n_samples), 0)
    if new_dt < dt and x.size > 8 and _band_edge_fraction(x) > 1e-3:
        warnings.warn("input spectrum reaches its Nyquist band; upsampling cannot "
                      "recover aliased content", AliasingWarning, stacklevel=2)
    dt_eff = max(dt, new_dt)
    scale = dt / dt_eff
    k = int(math.ceil(half_width / scale))
    taps = np.arange(-k + 1, k + 1)
    pos = (t0 + new_dt * np.arange(n_samples) - waveform.t0) / dt
    if n_samples == 0:
        return Waveform(t0, new_dt, np.zeros(0))
    ratio = new_dt / dt
    if abs(ratio - round(ratio)) < 1e-9 and abs(pos[0] - round(pos[0])) < 1e-6:
        # integer ratio on aligned grids: one kernel applied with a strided view
        r, b0 = int(round(ratio)), int(round(pos[0]))
        w = _kernel(np.zeros(1), taps, scale, half_width)[0]
        lo = max(0, k - 1 - b0)
        hi = max(0, b0 + (n_samples - 1) * r + k - (x.size - 1))
        xp = np.pad(x, (lo, hi), mode="edge")
        view = np.lib.stride_tricks.sliding_window_view(xp, taps.size)
        start = b0 - k + 1 + lo
        return Waveform(t0, new_dt, view[start:start + (n_samples - 1) * r + 1:r] @ w)
    out = np.empty(n_samples)
    chunk = max(1, 2_000_000 // taps.size)
    base = np.floor(pos + 1e-9).astype(np.int64)
    frac = np.round(pos - base, 9)
    # grids aligned by an integer ratio share one kernel
    uniq, which = np.unique(frac, return_inverse=True)
    shared = _kernel(uniq, taps, scale, half_width) if uniq.size <= 64 else None
    for s in range(0, n_samples, chunk):
        idx = base[s:s + chunk, None] + taps[None, :]
        if shared is not None:
            w = shared[which[s:s + chunk]]
        else:
            w = _kernel(frac[s:s + chunk], taps, scale, half_width)
        out[s:s + chunk] = np.sum(w * x[np.clip(idx, 0, x.size - 1)], axis=1)
    return Waveform(t0, new_dt, out)
