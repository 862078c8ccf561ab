"""Single-FBG encoder reflectivity models and bandwidth codebook design."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .optics import FiberParams, SpectralGrid

LN2 = math.log(2.0)
# sinc(u)^2 == 1/2 at this u (np.sinc convention)
_SINC2_HALF = 0.4429462

PROFILES = ("gaussian", "super_gaussian", "uniform_sinc")


@dataclass(frozen=True)
class FbgEncoder:
    """A branch encoder: one FBG whose reflectivity FWHM ``bandwidth`` [nm] is the signature.

    The grating is treated as magnitude-only (no chirp of its own).
    """

    id: str
    center_wavelength: float
    bandwidth: float
    peak_reflectivity: float = 0.9
    profile: str = "gaussian"
    order: int = 2  # super-Gaussian only

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("encoder bandwidth must be > 0")
        if not 0 < self.peak_reflectivity <= 1:
            raise ValueError("peak_reflectivity must be in (0, 1]")
        if self.profile not in PROFILES:
            raise ValueError(f"unknown FBG profile {self.profile!r}")
        if self.profile == "super_gaussian" and self.order < 1:
            raise ValueError("super-Gaussian order must be >= 1")

    def normalized(self, wavelength) -> np.ndarray:
        """Reflectivity divided by its peak value."""
        x = (np.asarray(wavelength, dtype=float) - self.center_wavelength) / self.bandwidth
        if self.profile == "gaussian":
            return np.exp(-4 * LN2 * x**2)
        if self.profile == "super_gaussian":
            return np.exp(-LN2 * np.abs(2 * x) ** (2 * self.order))
        return np.sinc(2 * _SINC2_HALF * x) ** 2

    def reflectivity(self, wavelength) -> np.ndarray:
        return self.peak_reflectivity * self.normalized(wavelength)

    @property
    def extent(self) -> float:
        """Half-width [nm] beyond which the reflectivity is negligible."""
        return (12.0 if self.profile == "uniform_sinc" else 4.0) * self.bandwidth


def fbg_reflectivity(encoder: FbgEncoder, grid: SpectralGrid) -> np.ndarray:
    """Power reflectivity of ``encoder`` at every grid wavelength."""
    if not grid.covers(encoder.center_wavelength, 4 * encoder.bandwidth):
        raise ValueError(
            f"grid does not cover {encoder.center_wavelength} +- 4 x {encoder.bandwidth} nm"
        )
    return encoder.reflectivity(grid.wavelengths())


@dataclass(frozen=True)
class Codebook:
    """Equally spaced bandwidth family B_i = B1 + (i - 1) dB, i = 1..N."""

    b1: float
    delta_b: float
    n_codes: int

    def __post_init__(self):
        if not self.b1 > 0:
            raise ValueError("B1 must be > 0")
        if not self.delta_b > 0:
            raise ValueError("delta_B must be > 0")
        if self.n_codes < 1:
            raise ValueError("codebook needs at least one code")

    @property
    def bandwidths(self) -> np.ndarray:
        return self.b1 + np.arange(self.n_codes) * self.delta_b

    def bandwidth(self, index: int) -> float:
        """Bandwidth of 1-based code ``index``."""
        if not 1 <= index <= self.n_codes:
            raise IndexError(f"code index {index} outside 1..{self.n_codes}")
        return self.b1 + (index - 1) * self.delta_b

    @property
    def b_max(self) -> float:
        return self.bandwidth(self.n_codes)

    def index_of(self, bandwidth: float, rel_tol: float = 1e-6) -> int | None:
        """1-based index of a codebook bandwidth, or None if it is not a codeword."""
        k = int(round((bandwidth - self.b1) / self.delta_b)) + 1
        if 1 <= k <= self.n_codes and math.isclose(self.bandwidth(k), bandwidth,
                                                    rel_tol=rel_tol, abs_tol=1e-12):
            return k
        return None

    def expected_widths(self, D_total: float) -> np.ndarray:
        """Pulse FWHMs [ps] of every code at accumulated dispersion ``D_total``."""
        return abs(D_total) * self.bandwidths

    def to_dict(self) -> dict:
        return {"b1_nm": self.b1, "delta_b_nm": self.delta_b, "n_codes": self.n_codes}

    @classmethod
    def from_dict(cls, data: dict) -> "Codebook":
        return cls(float(data["b1_nm"]), float(data["delta_b_nm"]), int(data["n_codes"]))


def design_codebook(n_codes: int, b1: float, delta_t: float, d_min: float) -> Codebook:
    """Codebook whose adjacent codes differ by ``delta_t`` ps at the smallest
    accumulated dispersion ``d_min`` ps/nm: dB = dT / D_min."""
    for name, v in (("N", n_codes), ("B1", b1), ("delta_T", delta_t), ("D_min", d_min)):
        if not v > 0:
            raise ValueError(f"{name} must be > 0")
    return Codebook(b1, delta_t / d_min, int(n_codes))


def min_separation_distance(t_max: float, fiber: FiberParams) -> float:
    """Branch-length difference [m] that keeps pulses of width ``t_max`` ps apart."""
    if t_max < 0:
        raise ValueError("t_max must be >= 0")
    return fiber.group_velocity * t_max / 2.0
