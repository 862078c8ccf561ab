"""Constants, unit conversions, sampling grids and signal containers.

Internal units: ps (time), nm (wavelength), m (distance), THz (frequency),
ps/nm (accumulated dispersion) and ps/(nm km) for the fiber coefficient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

#: Speed of light in vacuum [nm/ps].
C_NM_PER_PS = 2.9979e5
#: Speed of light in vacuum [m/ps].
C_M_PER_PS = C_NM_PER_PS * 1e-9
#: Default group index of standard single-mode fiber near 1550 nm.
DEFAULT_GROUP_INDEX = 1.468
#: Minimum |phi2| / (t0^2 / 8 pi) accepted as far-field (wavelength-to-time) regime.
FRAUNHOFER_THRESHOLD = 100.0
#: Required ratio between grid wavelength span and widest spectral feature.
SPAN_FACTOR = 8.0


def _finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"non-finite input: {v!r}")


@dataclass(frozen=True)
class FiberParams:
    """PON fiber: dispersion coefficient, attenuation and group index."""

    dispersion: float = 17.0  # ps/(nm km)
    attenuation: float = 0.22  # dB/km
    group_index: float = DEFAULT_GROUP_INDEX

    def __post_init__(self):
        _finite(self.dispersion, self.attenuation, self.group_index)
        if self.group_index <= 1.0:
            raise ValueError("group_index must be > 1")
        if self.attenuation < 0:
            raise ValueError("attenuation must be >= 0")

    @classmethod
    def from_group_velocity(cls, v_g: float, **kwargs) -> "FiberParams":
        """Build from a group velocity in m/s instead of a group index."""
        return cls(group_index=C_M_PER_PS * 1e12 / v_g, **kwargs)

    @property
    def group_velocity(self) -> float:
        """Group velocity in m/ps."""
        return C_M_PER_PS / self.group_index


@dataclass(frozen=True)
class SpectralGrid:
    """Uniform optical frequency grid centred on a carrier wavelength.

    Point ``k`` sits at the frequency offset ``(k - n_points/2) * freq_spacing``
    from the carrier, so the carrier is at index ``n_points // 2``.
    ``max_feature_nm`` is a declared hint for the widest spectral feature that
    will be placed on the grid; the span must be at least 8x that width.
    """

    center_wavelength: float  # nm
    n_points: int
    freq_spacing: float  # THz
    max_feature_nm: float = 0.0

    def __post_init__(self):
        _finite(self.center_wavelength, self.freq_spacing)
        n = self.n_points
        if n < 2 or n & (n - 1):
            raise ValueError(f"n_points must be a power of two >= 2, got {n}")
        if self.freq_spacing <= 0:
            raise ValueError("freq_spacing must be > 0")
        if self.center_wavelength <= 0:
            raise ValueError("center_wavelength must be > 0")
        if self.span_nm < SPAN_FACTOR * self.max_feature_nm * (1 - 1e-12):
            raise ValueError(
                f"grid span {self.span_nm:.4g} nm is narrower than "
                f"{SPAN_FACTOR:g} x {self.max_feature_nm:.4g} nm"
            )

    @classmethod
    def from_span(cls, center_wavelength: float, span_nm: float, n_points: int = 2**16,
                  max_feature_nm: float = 0.0) -> "SpectralGrid":
        """Grid with ``n_points`` covering ``span_nm`` around the carrier."""
        df = C_NM_PER_PS * span_nm / center_wavelength**2 / n_points
        return cls(center_wavelength, n_points, df, max_feature_nm)

    @classmethod
    def covering(cls, center_wavelength: float, span_nm: float, time_window: float,
                 max_feature_nm: float = 0.0, max_points: int = 2**22) -> "SpectralGrid":
        """Smallest power-of-two grid spanning ``span_nm`` whose time window is
        at least ``time_window`` ps."""
        dt = center_wavelength**2 / (C_NM_PER_PS * span_nm)
        n = 2 ** max(1, math.ceil(math.log2(max(time_window / dt, 2.0))))
        if n > max_points:
            raise ValueError(f"grid would need {n} points (limit {max_points})")
        return cls.from_span(center_wavelength, span_nm, n, max_feature_nm)

    @property
    def carrier_frequency(self) -> float:
        """Carrier frequency in THz."""
        return C_NM_PER_PS / self.center_wavelength

    @property
    def span_nm(self) -> float:
        return self.n_points * self.freq_spacing * self.center_wavelength**2 / C_NM_PER_PS

    @property
    def wavelength_spacing(self) -> float:
        """Wavelength step near the carrier [nm]."""
        return self.freq_spacing * self.center_wavelength**2 / C_NM_PER_PS

    @property
    def dt(self) -> float:
        """Sample period of the conjugate time grid [ps]."""
        return 1.0 / (self.n_points * self.freq_spacing)

    @property
    def time_window(self) -> float:
        return 1.0 / self.freq_spacing

    def freq_offsets(self) -> np.ndarray:
        return (np.arange(self.n_points) - self.n_points // 2) * self.freq_spacing

    def angular_offsets(self) -> np.ndarray:
        """Angular frequency offsets from the carrier [rad/ps]."""
        return 2 * np.pi * self.freq_offsets()

    def wavelengths(self) -> np.ndarray:
        """Exact wavelength of every grid point [nm] (decreasing with index)."""
        return C_NM_PER_PS / (self.carrier_frequency + self.freq_offsets())

    def times(self) -> np.ndarray:
        """Time axis of the conjugate grid, zero at index n_points//2 [ps]."""
        return (np.arange(self.n_points) - self.n_points // 2) * self.dt

    def covers(self, center: float, half_width: float) -> bool:
        lam = self.wavelengths()
        return lam.min() <= center - half_width and lam.max() >= center + half_width


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Complex spectral envelope sampled on a :class:`SpectralGrid`."""

    grid: SpectralGrid
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.grid.n_points,):
            raise ValueError(f"expected {self.grid.n_points} amplitudes, got {amps.shape}")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    def energy(self) -> float:
        """Discrete Parseval energy sum |X|^2 df."""
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.grid.freq_spacing)

    def intensity(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True, eq=False)
class Waveform:
    """Real sampled trace; ``t0`` is the time of sample 0 after probe emission."""

    t0: float
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.samples.size)

    def energy(self) -> float:
        """Trapezoidal integral of the samples over time."""
        if self.samples.size < 2:
            return float(self.samples.sum() * self.dt)
        return float(np.trapezoid(self.samples, dx=self.dt))

    def with_samples(self, samples: np.ndarray) -> "Waveform":
        return Waveform(self.t0, self.dt, samples)


def dispersion_to_gdd(D_total: float, center_wavelength: float) -> float:
    """Group-delay dispersion [ps^2] equivalent to an accumulated dispersion [ps/nm]."""
    _finite(D_total, center_wavelength)
    if center_wavelength <= 0:
        raise ValueError("center_wavelength must be > 0")
    return -D_total * center_wavelength**2 / (2 * np.pi * C_NM_PER_PS)


@dataclass(frozen=True)
class DispersionBudget:
    D_m: float  # monitoring-module dispersion, ps/nm
    D_total: float  # ps/nm
    gdd: float  # ps^2

    @classmethod
    def for_branch(cls, D_m: float, fiber: FiberParams, distance: float,
                   center_wavelength: float) -> "DispersionBudget":
        """Round trip to an encoder ``distance`` metres from the central office."""
        D_total = total_dispersion(D_m, fiber, distance)
        return cls(D_m, D_total, dispersion_to_gdd(D_total, center_wavelength))


def total_dispersion(D_m: float, fiber: FiberParams, distance: float) -> float:
    """Accumulated round-trip dispersion D_m + 2 D d [ps/nm] (d in metres)."""
    return D_m + 2.0 * fiber.dispersion * distance * 1e-3


@dataclass(frozen=True)
class FraunhoferReport:
    ratio: float
    satisfied: bool


def gaussian_half_width(fwhm: float) -> float:
    """1/e half-width of the field amplitude of a Gaussian with intensity FWHM ``fwhm``."""
    return fwhm / math.sqrt(2 * math.log(2))


def check_fraunhofer(temporal_fwhm_t0: float, D_total: float,
                     center_wavelength: float) -> FraunhoferReport:
    """Check the temporal far-field condition |phi2| >> t0^2 / (8 pi).

    ``t0`` is the amplitude 1/e half-width of a Gaussian pulse with the given
    intensity FWHM. The condition counts as satisfied for a ratio of at
    least :data:`FRAUNHOFER_THRESHOLD`.
    """
    if not temporal_fwhm_t0 > 0:
        raise ValueError("temporal FWHM must be > 0")
    if D_total == 0:
        return FraunhoferReport(0.0, False)
    t0 = gaussian_half_width(temporal_fwhm_t0)
    ratio = abs(dispersion_to_gdd(D_total, center_wavelength)) / (t0**2 / (8 * np.pi))
    return FraunhoferReport(float(ratio), bool(ratio >= FRAUNHOFER_THRESHOLD))


def distance_to_delay(d, fiber: FiberParams):
    """Round-trip group delay [ps] to a point ``d`` metres away."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be >= 0")
    out = 2.0 * d / fiber.group_velocity
    return float(out) if out.ndim == 0 else out


def delay_to_distance(tau, fiber: FiberParams):
    """Distance [m] whose round-trip group delay is ``tau`` ps."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0):
        raise ValueError("delay must be >= 0")
    out = tau * fiber.group_velocity / 2.0
    return float(out) if out.ndim == 0 else out


def wavelength_at_time(t, tau: float, D_total: float, center_wavelength: float):
    """Wavelength mapped onto time ``t`` by an accumulated dispersion ``D_total``."""
    if D_total == 0:
        raise ValueError("wavelength-to-time mapping undefined for zero dispersion")
    return center_wavelength + (np.asarray(t, dtype=float) - tau) / D_total


def nm_to_thz(bandwidth_nm: float, center_wavelength: float) -> float:
    """Small-bandwidth conversion of a wavelength width to a frequency width."""
    return C_NM_PER_PS * bandwidth_nm / center_wavelength**2
