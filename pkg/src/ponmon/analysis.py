"""Experiment harness: pulse-width sweeps, codebook design reports and
Monte Carlo estimates of pulse-overlap probability."""
from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .decoder import DecoderConfig, detect_pulses
from .encoders import Codebook, FbgEncoder, design_codebook, min_separation_distance
from .optics import FiberParams, distance_to_delay, total_dispersion
from .pon import (
    Branch,
    MonitoringModuleConfig,
    PonTopology,
    ReceiverConfig,
    receiver_impulse_fwhm,
    simulate_pon_response,
)
from .propagation import ProbePulseSpec

SWEEP_KINDS = ("width_vs_bandwidth", "width_vs_distance")


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)) and not isinstance(v, bool):
        return str(int(v))
    return f"{float(v):.10g}"


def _map(fn, items, workers: int):
    if workers <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


# -- sweeps -------------------------------------------------------------------

@dataclass(frozen=True)
class SweepParams:
    """Grid and hardware of a pulse-width sweep.

    ``dispersions_ps_per_nm`` lists D_m values; width_vs_distance uses only
    the first. Losses are off so every point sits well above the
    detection threshold.
    """

    kind: str
    dispersions_ps_per_nm: tuple[float, ...]
    distances_km: tuple[float, ...]
    bandwidths_nm: tuple[float, ...]
    fiber: FiberParams = field(default_factory=FiberParams)
    probe: ProbePulseSpec = field(default_factory=ProbePulseSpec)
    receiver: ReceiverConfig = field(default_factory=ReceiverConfig)
    model: str = "farfield"

    def __post_init__(self):
        if self.kind not in SWEEP_KINDS:
            raise ValueError(f"unknown sweep kind {self.kind!r}")
        for name in ("dispersions_ps_per_nm", "distances_km", "bandwidths_nm"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, values)
        if any(d <= 0 for d in self.distances_km):
            raise ValueError("distances must be > 0")
        if any(b <= 0 for b in self.bandwidths_nm):
            raise ValueError("bandwidths must be > 0")


def default_sweep_params(kind: str) -> SweepParams:
    if kind == "width_vs_bandwidth":
        # a flat-topped probe much wider than every encoder and a fast
        # receiver, so the trace replicates the encoder spectrum itself
        return SweepParams(
            kind, (3000.0, -3000.0), (5.0, 10.0, 20.0), tuple(np.round(np.arange(2, 11) * 0.1, 10)),
            probe=ProbePulseSpec(spectral_fwhm=10.0, shape="super_gaussian", order=4),
            receiver=ReceiverConfig(pd_bandwidth=50.0, sample_rate=100.0))
    if kind == "width_vs_distance":
        return SweepParams(kind, (-1659.0,), tuple(np.round(np.arange(1, 21) * 0.5, 10)), (0.24, 0.29))
    raise ValueError(f"unknown sweep kind {kind!r}")


@dataclass(frozen=True)
class SweepResult:
    kind: str
    columns: tuple[str, ...]
    rows: tuple[tuple, ...]
    fits: tuple[dict, ...]

    def to_csv(self) -> str:
        lines = []
        for fit in self.fits:
            lines.append("# fit " + " ".join(f"{k}={_fmt(v)}" for k, v in fit.items()))
        lines.append(",".join(self.columns))
        lines.extend(",".join(_fmt(v) for v in row) for row in self.rows)
        return "\n".join(lines) + "\n"


def measure_branch_width(bandwidth: float, distance_m: float, D_m: float, params: SweepParams) -> float:
    """Simulate one lossless branch and return the decoder-measured FWHM [ps]."""
    enc = FbgEncoder("sweep", params.probe.center_wavelength, bandwidth)
    topo = PonTopology((Branch("sweep", distance_m, enc),), fiber=params.fiber, losses_enabled=False)
    mm = MonitoringModuleConfig(D_m, params.probe, params.receiver)
    tau = distance_to_delay(distance_m, params.fiber)
    width = abs(total_dispersion(D_m, params.fiber, distance_m)) * bandwidth
    half = 5 * max(width, receiver_impulse_fwhm(params.receiver.pd_bandwidth)) + 64 * params.receiver.dt
    trace = simulate_pon_response(topo, mm, model=params.model, span=(tau - half, tau + half))
    cfg = DecoderConfig(Codebook(bandwidth, bandwidth, 1), D_m=D_m, fiber=params.fiber)
    events = detect_pulses(trace, cfg)
    if not events:
        return float("nan")
    return max(events, key=lambda ev: ev.amplitude).fwhm_hat


def _sweep_point(job):
    bandwidth, distance_m, d_m, params = job
    return measure_branch_width(bandwidth, distance_m, d_m, params)


def _line_fit(x, y) -> tuple[float, float] | None:
    x, y = np.asarray(x, float), np.asarray(y, float)
    ok = np.isfinite(y)
    if np.unique(x[ok]).size < 2:
        return None
    slope, intercept = np.polyfit(x[ok], y[ok], 1)
    return float(slope), float(intercept)


def run_sweep(params: SweepParams, workers: int = 1) -> SweepResult:
    """Pulse width measured on the full simulated trace over a parameter grid.

    width_vs_bandwidth fits T against B for every (D_m, d) pair; its slope
    should equal |D_m + 2 D d|. width_vs_distance fits T against d for every
    bandwidth; its slope should equal the signed 2 D B. Single-point
    groups get no fit line.
    """
    fiber = params.fiber
    if params.kind == "width_vs_bandwidth":
        groups = [(dm, d) for dm in params.dispersions_ps_per_nm for d in params.distances_km]
        jobs = [(b, d * 1e3, dm, params) for dm, d in groups for b in params.bandwidths_nm]
    else:
        dm = params.dispersions_ps_per_nm[0]
        groups = list(params.bandwidths_nm)
        jobs = [(b, d * 1e3, dm, params) for b in groups for d in params.distances_km]
    widths = _map(_sweep_point, jobs, workers)

    rows, fits = [], []
    if params.kind == "width_vs_bandwidth":
        columns = ("dispersion_ps_per_nm", "distance_km", "bandwidth_nm", "fwhm_ps", "expected_fwhm_ps")
        n = len(params.bandwidths_nm)
        for g, (dm, d) in enumerate(groups):
            meas = widths[g * n:(g + 1) * n]
            d_i = total_dispersion(dm, fiber, d * 1e3)
            for b, w in zip(params.bandwidths_nm, meas):
                rows.append((dm, d, b, w, abs(d_i) * b))
            fit = _line_fit(params.bandwidths_nm, meas)
            if fit:
                fits.append({"dispersion_ps_per_nm": dm, "distance_km": d, "slope_ps_per_nm": fit[0],
                             "intercept_ps": fit[1], "expected_slope_ps_per_nm": abs(d_i)})
    else:
        columns = ("bandwidth_nm", "distance_km", "fwhm_ps", "expected_fwhm_ps")
        n = len(params.distances_km)
        for g, b in enumerate(groups):
            meas = widths[g * n:(g + 1) * n]
            expected = [abs(total_dispersion(dm, fiber, d * 1e3)) * b for d in params.distances_km]
            rows.extend((b, d, w, e) for d, w, e in zip(params.distances_km, meas, expected))
            fit = _line_fit(params.distances_km, meas)
            if fit:
                fits.append({"bandwidth_nm": b, "slope_ps_per_km": fit[0], "intercept_ps": fit[1],
                             "expected_slope_ps_per_km": _line_fit(params.distances_km, expected)[0]})
    return SweepResult(params.kind, columns, tuple(rows), tuple(fits))


# -- codebook design ------------------------------------------------------------

@dataclass(frozen=True)
class DesignReport:
    codebook: Codebook
    d_min: float  # ps/nm
    delta_t: float  # ps
    fiber: FiberParams
    achieved_d_min: float | None = None  # ps/nm over the configured distance range

    @property
    def widths(self) -> np.ndarray:
        """Pulse FWHM [ps] of every code at D_min."""
        return self.codebook.expected_widths(self.d_min)

    @property
    def t_max(self) -> float:
        return self.d_min * self.codebook.b_max

    @property
    def min_separation(self) -> float:
        """Branch-length difference [m] that keeps the widest pulses apart."""
        return min_separation_distance(self.t_max, self.fiber)

    @property
    def dispersion_ok(self) -> bool | None:
        if self.achieved_d_min is None:
            return None
        return self.achieved_d_min >= self.d_min * (1 - 1e-12)

    def to_dict(self) -> dict:
        return {
            "n_codes": self.codebook.n_codes,
            "b1_nm": self.codebook.b1,
            "delta_b_nm": self.codebook.delta_b,
            "delta_t_ps": self.delta_t,
            "d_min_ps_per_nm": self.d_min,
            "group_velocity_m_per_s": self.fiber.group_velocity * 1e12,
            "t_max_ps": self.t_max,
            "min_separation_m": self.min_separation,
            "achieved_d_min_ps_per_nm": self.achieved_d_min,
            "dispersion_ok": self.dispersion_ok,
            "codes": [{"code_index": i + 1, "bandwidth_nm": float(b), "fwhm_at_d_min_ps": float(t)}
                      for i, (b, t) in enumerate(zip(self.codebook.bandwidths, self.widths))],
        }

    def to_csv(self) -> str:
        lines = [f"# {k}={_fmt(v)}" for k, v in self.to_dict().items()
                 if k != "codes" and v is not None]
        lines.append("code_index,bandwidth_nm,fwhm_at_d_min_ps")
        lines.extend(f"{i + 1},{_fmt(b)},{_fmt(t)}"
                     for i, (b, t) in enumerate(zip(self.codebook.bandwidths, self.widths)))
        return "\n".join(lines) + "\n"


def min_accumulated_dispersion(D_m: float, fiber: FiberParams, max_distance: float,
                               min_distance: float = 0.0) -> float:
    """Smallest |D_m + 2 D d| [ps/nm] over d in [min_distance, max_distance] m."""
    lo = total_dispersion(D_m, fiber, min_distance)
    hi = total_dispersion(D_m, fiber, max_distance)
    if lo * hi <= 0:
        return 0.0
    return min(abs(lo), abs(hi))


def run_design(n_codes: int, b1: float, delta_t: float, d_min: float,
               fiber: FiberParams | None = None, *, D_m: float | None = None,
               max_distance: float | None = None) -> DesignReport:
    """Codebook table at D_min, widest pulse and minimum branch separation.

    With ``D_m`` and ``max_distance`` [m] the report also checks that every
    branch up to that distance accumulates at least D_min.
    """
    fiber = fiber or FiberParams()
    book = design_codebook(n_codes, b1, delta_t, d_min)
    achieved = None
    if D_m is not None and max_distance is not None:
        achieved = min_accumulated_dispersion(D_m, fiber, max_distance)
    return DesignReport(book, float(d_min), float(delta_t), fiber, achieved)


# -- interference Monte Carlo -----------------------------------------------------

@dataclass(frozen=True)
class DistanceDistribution:
    """User distance law: ``uniform`` on [low, high] m or ``fixed`` at ``low``."""

    kind: str = "uniform"
    low: float = 1000.0
    high: float = 20000.0

    def __post_init__(self):
        if self.kind not in ("uniform", "fixed"):
            raise ValueError(f"unknown distance distribution {self.kind!r}")
        if not self.low > 0:
            raise ValueError("distances must be > 0")
        if self.kind == "uniform" and not self.high > self.low:
            raise ValueError("uniform distribution needs high > low")

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        if self.kind == "fixed":
            return np.full(n, self.low)
        return rng.uniform(self.low, self.high, n)


@dataclass(frozen=True)
class InterferenceResult:
    trials: int
    overlaps: int
    n_users: int
    probability: float
    ci_low: float
    ci_high: float

    def to_dict(self) -> dict:
        return {"trials": self.trials, "overlapping_trials": self.overlaps, "n_users": self.n_users,
                "probability": self.probability, "ci95_low": self.ci_low, "ci95_high": self.ci_high}


def pulse_intervals(distances: np.ndarray, bandwidths: np.ndarray, D_m: float,
                    fiber: FiberParams) -> tuple[np.ndarray, np.ndarray]:
    """Start and end [ps] of every reflected pulse: [tau, tau + T]."""
    d = np.asarray(distances, float)
    tau = distance_to_delay(d, fiber)
    width = np.abs(D_m + 2 * fiber.dispersion * d * 1e-3) * np.asarray(bandwidths, float)
    return tau, tau + width


def any_overlap(start: np.ndarray, end: np.ndarray) -> bool:
    order = np.argsort(start, kind="stable")
    s, e = start[order], end[order]
    return bool(np.any(s[1:] < np.maximum.accumulate(e)[:-1]))


def _mc_chunk(job) -> int:
    seeds, n_users, dist, bandwidths, D_m, fiber = job
    hits = 0
    for ss in seeds:
        rng = np.random.default_rng(ss)
        start, end = pulse_intervals(dist.sample(rng, n_users), bandwidths, D_m, fiber)
        hits += any_overlap(start, end)
    return hits


def run_interference_mc(codebook: Codebook, distribution: DistanceDistribution, trials: int,
                        seed: int, *, D_m: float = -1659.0, fiber: FiberParams | None = None,
                        n_users: int | None = None, workers: int = 1) -> InterferenceResult:
    """Fraction of trials in which any two reflected pulses overlap in time.

    User ``i`` carries code ``i``. Every trial draws from its own child of
    ``SeedSequence(seed)``, so the estimate does not depend on ``workers``.
    The interval is the Wilson score 95 % interval.
    """
    if trials < 100:
        raise ValueError("trials must be >= 100")
    fiber = fiber or FiberParams()
    n_users = codebook.n_codes if n_users is None else int(n_users)
    if not 1 <= n_users <= codebook.n_codes:
        raise ValueError(f"n_users must be in 1..{codebook.n_codes}")
    bandwidths = codebook.bandwidths[:n_users]
    children = np.random.SeedSequence(seed).spawn(trials)
    n_chunks = max(1, workers) * 4
    bounds = np.linspace(0, trials, n_chunks + 1).astype(int)
    jobs = [(children[a:b], n_users, distribution, bandwidths, D_m, fiber)
            for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
    hits = int(sum(_map(_mc_chunk, jobs, workers)))
    ci = stats.binomtest(hits, trials).proportion_ci(confidence_level=0.95, method="wilson")
    return InterferenceResult(trials, hits, n_users, hits / trials, float(ci.low), float(ci.high))
