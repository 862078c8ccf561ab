"""Recognition algorithm: find reflections, measure their width, map width
to encoder bandwidth and bandwidth to a codebook entry, then report the
health of every registered branch."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, signal

from .encoders import Codebook
from .optics import FiberParams, Waveform, delay_to_distance, total_dispersion

STATUSES = ("healthy", "degraded", "lost", "unknown")
FOUR_LN2 = 4 * math.log(2)


class MeasurementError(ValueError):
    """A pulse width could not be measured (no half-maximum crossing)."""


class UndecodableEventError(ValueError):
    """Zero accumulated dispersion at the event's distance."""


@dataclass(frozen=True)
class DetectionEvent:
    tau_hat: float  # ps
    fwhm_hat: float  # ps
    amplitude: float
    window: tuple[int, int]  # sample indices, inclusive
    code_index: int | None = None  # set by the overlap resolver
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {"tau_ps": self.tau_hat, "fwhm_ps": self.fwhm_hat, "amplitude": self.amplitude}


@dataclass(frozen=True)
class DecodedUser:
    branch_id: str | None
    distance_hat: float  # m
    bandwidth_hat: float  # nm
    code_index: int | None
    confidence: float
    status: str = "unknown"
    amplitude: float = 0.0

    def to_dict(self) -> dict:
        return {
            "branch_id": self.branch_id,
            "code_index": self.code_index,
            "distance_m": self.distance_hat,
            "bandwidth_nm": self.bandwidth_hat,
            "confidence": self.confidence,
            "status": self.status,
        }


@dataclass(frozen=True)
class DecoderConfig:
    """Everything the monitoring module knows a priori.

    ``receiver_fwhm`` [ps] (photodiode impulse width) only widens the
    overlap resolver's pulse templates. ``reference_amplitude`` is the
    expected peak of a single reflection; windows above 1.5x of it are
    treated as possible overlaps.
    """

    codebook: Codebook
    D_m: float = -1659.0
    fiber: FiberParams = field(default_factory=FiberParams)
    detect_threshold: float = 0.1
    delta_t: float = 250.0  # ps
    receiver_fwhm: float = 0.0
    reference_amplitude: float | None = None
    noise_sigmas: float = 6.0

    def __post_init__(self):
        if not 0 < self.detect_threshold < 1:
            raise ValueError("detect_threshold must be in (0, 1)")


def median3(x: np.ndarray) -> np.ndarray:
    """Three-sample running median (edges kept)."""
    if x.size < 3:
        return x.copy()
    a, b, c = x[:-2], x[1:-1], x[2:]
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    np.minimum(hi, c, out=hi)
    out = np.empty_like(x)
    out[0], out[-1] = x[0], x[-1]
    np.maximum(lo, hi, out=out[1:-1])
    return out


def _median3_max(x: np.ndarray) -> float:
    """max(median3(x)) without filtering the whole trace."""
    if x.size < 3:
        return float(x.max())
    p = int(np.argmax(x))
    bound = float(median3(x[max(p - 1, 0):p + 2]).max())
    cand = np.flatnonzero(x >= bound)
    idx = np.unique(np.clip(np.concatenate([cand - 1, cand, cand + 1]), 1, x.size - 2))
    med = np.median(np.stack([x[idx - 1], x[idx], x[idx + 1]]), axis=0)
    return max(float(med.max()), float(x[0]), float(x[-1]), bound)


def _noise_sigma(x: np.ndarray, n_blocks: int = 200, block: int = 500) -> float:
    """Robust (MAD) deviation of the median-filtered trace from evenly spaced blocks."""
    if x.size <= n_blocks * block:
        y = median3(x)
    else:
        starts = np.linspace(0, x.size - block, n_blocks).astype(np.int64)
        y = np.concatenate([median3(x[a:a + block])[1:-1] for a in starts])
    med = np.median(y)
    return float(1.4826 * np.median(np.abs(y - med)))


def _above(x: np.ndarray, thr: float) -> np.ndarray:
    """median3(x) > thr, i.e. at least two of three neighbours above ``thr``."""
    m = x > thr
    if x.size < 3:
        return m
    out = m.copy()
    a, b, c = m[:-2], m[1:-1], m[2:]
    out[1:-1] = (a & b) | (b & c) | (a & c)
    return out


def peak_position(y: np.ndarray, p: int) -> tuple[float, float]:
    """Sub-sample peak (index, value) by 3-point parabola; plateaus use their centre."""
    top = y[p]
    lo = hi = p
    while lo > 0 and y[lo - 1] == top:
        lo -= 1
    while hi < y.size - 1 and y[hi + 1] == top:
        hi += 1
    if hi > lo or p == 0 or p == y.size - 1:
        return 0.5 * (lo + hi), float(top)
    a, b, c = y[p - 1], y[p], y[p + 1]
    den = a - 2 * b + c
    if den >= 0:
        return float(p), float(b)
    off = 0.5 * (a - c) / den
    return p + off, float(b - 0.25 * (a - c) * off)


def _grow_window(y: np.ndarray, s: int, e: int, lo_lim: int, hi_lim: int,
                 slack: float = 0.0, floor: float = 0.2) -> tuple[int, int]:
    """Extend [s, e] down both falling edges to ``floor`` of the local peak
    (or the first local minimum). Weak pulses whose above-threshold core
    misses their own half-maximum still get a measurable window."""
    level = floor * float(y[s:e + 1].max())
    while s > lo_lim and y[s] > level and y[s - 1] <= y[s] + slack:
        s -= 1
    while e < hi_lim and y[e] > level and y[e + 1] <= y[e] + slack:
        e += 1
    return s, e


def detect_pulses(waveform: Waveform, cfg: DecoderConfig) -> list[DetectionEvent]:
    """One event per contiguous region above threshold after a 3-sample median.

    The threshold is the larger of ``detect_threshold`` times the trace
    maximum and ``noise_sigmas`` robust noise deviations.
    """
    x = waveform.samples
    if x.size == 0:
        raise ValueError("empty waveform")
    top = _median3_max(x)
    if top <= 0:
        return []
    sigma = _noise_sigma(x)
    thr = max(cfg.detect_threshold * top, cfg.noise_sigmas * sigma)
    above = _above(x, thr)
    if not above.any():
        return []
    edges = np.diff(above.astype(np.int8))
    starts = list(np.flatnonzero(edges == 1) + 1)
    ends = list(np.flatnonzero(edges == -1))
    if above[0]:
        starts.insert(0, 0)
    if above[-1]:
        ends.append(x.size - 1)
    events = []
    bounds = list(zip(starts, ends))
    for i, (s, e) in enumerate(bounds):
        lo_lim = bounds[i - 1][1] + 1 if i else 0
        hi_lim = bounds[i + 1][0] - 1 if i + 1 < len(bounds) else x.size - 1
        s, e = int(s), int(e)
        a = max(lo_lim, s - 3 * (e - s) - 16)
        b = min(hi_lim, e + 3 * (e - s) + 16)
        s, e = _grow_window(median3(x[a:b + 1]), s - a, e - a, 0, b - a, 3 * sigma)
        s, e = s + a, e + a
        s0, e0 = max(s - 2, lo_lim), min(e + 2, hi_lim)
        seg = x[s0:e0 + 1]
        pos, amp = peak_position(seg, int(np.argmax(seg)))
        tau = waveform.t0 + (s0 + pos) * waveform.dt
        ev = DetectionEvent(tau, 0.0, amp, (s0, e0))
        try:
            fw = measure_fwhm(waveform, ev)
        except MeasurementError:
            fw = float("nan")
        events.append(replace(ev, fwhm_hat=fw))
    events.sort(key=lambda ev: ev.tau_hat)
    return events


def _half_level(seg: np.ndarray, p: int) -> float:
    """Half of the peak level; the peak is a least-squares parabola through the
    samples above 70 % of the maximum, which tempers noise on the top sample."""
    top = seg[p]
    lo = hi = p
    while lo > 0 and seg[lo - 1] >= 0.7 * top:
        lo -= 1
    while hi < seg.size - 1 and seg[hi + 1] >= 0.7 * top:
        hi += 1
    if hi - lo < 4:
        return 0.5 * peak_position(seg, p)[1]
    u = np.arange(lo, hi + 1) - p
    c2, c1, c0 = np.polyfit(u, seg[lo:hi + 1], 2)
    vertex = -c1 / (2 * c2) if c2 < 0 else math.inf
    if not u[0] <= vertex <= u[-1]:
        # no interior maximum: the fit would extrapolate
        return 0.5 * float(top)
    return 0.5 * float(c0 - c1**2 / (4 * c2))


def _gaussian_fwhm(seg: np.ndarray, p: int, floor: float = 0.3) -> float:
    """FWHM in samples of a Gaussian fitted as a weighted parabola to log(seg)."""
    lo = hi = p
    while lo > 0 and seg[lo - 1] > floor * seg[p]:
        lo -= 1
    while hi < seg.size - 1 and seg[hi + 1] > floor * seg[p]:
        hi += 1
    if hi - lo < 2:
        raise MeasurementError("too few samples above the fit floor")
    u = np.arange(lo, hi + 1) - p
    y = seg[lo:hi + 1]
    c2, _, _ = np.polyfit(u, np.log(y), 2, w=y)
    if c2 >= 0:
        raise MeasurementError("pulse top is not Gaussian-like")
    return 2 * math.sqrt(math.log(2) / -c2)


def measure_fwhm(waveform: Waveform, event: DetectionEvent, method: str = "crossing") -> float:
    """Full width at half maximum [ps].

    ``"crossing"`` (default) interpolates the half-maximum crossings
    linearly and makes no assumption about the pulse shape. ``"gaussian"``
    fits a Gaussian to the samples above 30 % of the peak, which averages
    noise better on Gaussian-like pulses.
    """
    s0, e0 = event.window
    if not 0 <= s0 <= e0 < waveform.samples.size:
        raise ValueError(f"invalid event window {event.window}")
    seg = waveform.samples[s0:e0 + 1]
    p = int(np.argmax(seg))
    if method == "gaussian":
        return _gaussian_fwhm(seg, p) * waveform.dt
    if method != "crossing":
        raise ValueError(f"unknown FWHM method {method!r}")
    half = _half_level(seg, p)
    below_r = np.flatnonzero(seg[p:] < half)
    below_l = np.flatnonzero(seg[p::-1] < half)
    if below_r.size == 0 or below_l.size == 0:
        raise MeasurementError("no half-maximum crossing inside the event window")
    r = p + int(below_r[0])
    l = p - int(below_l[0])
    xr = r - 1 + (seg[r - 1] - half) / (seg[r - 1] - seg[r])
    xl = l + 1 - (seg[l + 1] - half) / (seg[l + 1] - seg[l])
    return float((xr - xl) * waveform.dt)


def expected_fwhm(bandwidth: float, distance: float, D_m: float, fiber: FiberParams) -> float:
    """Pulse FWHM [ps] |D_m + 2 D d| B with d in metres."""
    if bandwidth < 0:
        raise ValueError("bandwidth must be >= 0")
    return abs(total_dispersion(D_m, fiber, distance)) * bandwidth


def infer_bandwidth(fwhm: float, tau: float, cfg: DecoderConfig) -> float:
    """Encoder bandwidth [nm] from a measured width and delay."""
    d_i = total_dispersion(cfg.D_m, cfg.fiber, delay_to_distance(tau, cfg.fiber))
    if d_i == 0:
        raise UndecodableEventError("zero accumulated dispersion at the event distance")
    return fwhm / abs(d_i)


def identify(bandwidth: float, codebook: Codebook) -> tuple[int | None, float]:
    """Nearest codeword and a confidence 1 - 2|B - B_k| / dB in [0, 1].

    Midpoint ties go to the lower index. Bandwidths outside
    [B1 - dB/2, BN + dB/2] match nothing.
    """
    db = codebook.delta_b
    x = (bandwidth - codebook.b1) / db
    if not -0.5 - 1e-9 <= x <= codebook.n_codes - 0.5 + 1e-9:
        return None, 0.0
    k = math.floor(x)
    frac = x - k
    if frac > 0.5 + 1e-9:
        k += 1
    k = min(max(k, 0), codebook.n_codes - 1)
    conf = 1.0 - 2.0 * abs(bandwidth - codebook.bandwidth(k + 1)) / db
    return k + 1, float(min(max(conf, 0.0), 1.0))


# -- overlap resolution -----------------------------------------------------

def _is_multimodal(seg: np.ndarray) -> bool:
    y = median3(seg)
    peaks, _ = signal.find_peaks(y, prominence=0.1 * float(y.max()))
    return peaks.size > 1


def resolve_overlap(waveform: Waveform, window: tuple[int, int], cfg: DecoderConfig,
                    max_components: int = 8, residual_stop: float = 0.05,
                    max_sweeps: int = 20) -> list[DetectionEvent]:
    """Greedy matching pursuit with codebook pulse templates.

    Each step adds the (code, delay) Gaussian template that removes the most
    residual energy, then re-fits every component given the others and all
    amplitudes jointly (non-negative least squares), sweeping until the
    components settle (at most ``max_sweeps`` times). Stops once the residual
    drops below ``residual_stop`` of the window energy or after
    ``max_components`` components; in the latter case every event carries
    the ``low_confidence`` flag.
    """
    s0, e0 = window
    y = np.asarray(waveform.samples[s0:e0 + 1], dtype=float)
    t = waveform.t0 + waveform.dt * np.arange(s0, e0 + 1)
    energy = float(np.sum(y**2))
    if energy == 0:
        return []
    t_mid = 0.5 * (t[0] + t[-1])
    d_i = total_dispersion(cfg.D_m, cfg.fiber, delay_to_distance(max(t_mid, 0.0), cfg.fiber))
    widths = np.sqrt((abs(d_i) * cfg.codebook.bandwidths) ** 2 + cfg.receiver_fwhm**2)
    coarse = t.copy()

    def best_single(r, taus):
        best = (0, float(taus[0]), -np.inf)
        for k, w in enumerate(widths):
            g = np.exp(-FOUR_LN2 * ((t[None, :] - taus[:, None]) / w) ** 2)
            c = g @ r
            score = np.where(c > 0, c**2 / np.sum(g**2, axis=1), -np.inf)
            j = int(np.argmax(score))
            if score[j] > best[2]:
                best = (k, float(taus[j]), float(score[j]))
        return best

    def refine(r, k_hint, tau_hint):
        # coarse-to-fine delay search around the hint over all codes
        step = waveform.dt
        k, tau = k_hint, tau_hint
        for _ in range(4):
            taus = tau + step * np.arange(-4, 5)
            k, tau, _ = best_single(r, taus)
            step /= 4
        return k, tau

    def fit_amplitudes(comps):
        g = np.stack([np.exp(-FOUR_LN2 * ((t - tau) / widths[k]) ** 2) for k, tau in comps], axis=1)
        amps, _ = optimize.nnls(g, y)
        return amps, g @ amps

    comps: list[tuple[int, float]] = []
    amps = np.zeros(0)
    model = np.zeros_like(y)
    for _ in range(max_components):
        k, tau, _ = best_single(y - model, coarse)
        comps.append(refine(y - model, k, tau))
        for _sweep in range(max_sweeps):
            before = list(comps)
            for i in range(len(comps)):
                amps, model = fit_amplitudes(comps)
                others = model - amps[i] * np.exp(-FOUR_LN2 * ((t - comps[i][1]) / widths[comps[i][0]]) ** 2)
                comps[i] = refine(y - others, *comps[i])
            if all(k0 == k1 and abs(t0 - t1) < 1e-3 * waveform.dt
                   for (k0, t0), (k1, t1) in zip(before, comps)):
                break
        amps, model = fit_amplitudes(comps)
        keep = amps > 1e-6 * amps.max()
        comps = [c for c, kp in zip(comps, keep) if kp]
        amps, model = fit_amplitudes(comps)
        if np.sum((y - model) ** 2) < residual_stop * energy:
            break
    converged = np.sum((y - model) ** 2) < residual_stop * energy
    events = []
    for (k, tau), a in sorted(zip(comps, amps), key=lambda ca: ca[0][1]):
        flags = [] if converged else ["low_confidence"]
        if cfg.reference_amplitude and a > 1.5 * cfg.reference_amplitude:
            flags.append("ambiguous")
        events.append(DetectionEvent(tau, float(widths[k]), float(a), window, k + 1, tuple(flags)))
    return events


def _anomalous(waveform: Waveform, ev: DetectionEvent, cfg: DecoderConfig) -> bool:
    s0, e0 = ev.window
    if _is_multimodal(waveform.samples[s0:e0 + 1]):
        return True
    if cfg.reference_amplitude and ev.amplitude > 1.5 * cfg.reference_amplitude:
        return True
    if not math.isfinite(ev.fwhm_hat):
        return True
    try:
        b = infer_bandwidth(ev.fwhm_hat, max(ev.tau_hat, 0.0), cfg)
    except UndecodableEventError:
        return False
    return identify(b, cfg.codebook)[0] is None


def decode_event(ev: DetectionEvent, cfg: DecoderConfig) -> DecodedUser:
    d_hat = float(delay_to_distance(max(ev.tau_hat, 0.0), cfg.fiber))
    if ev.code_index is not None:
        b = cfg.codebook.bandwidth(ev.code_index)
        conf = 0.5 if ev.flags else 1.0
        return DecodedUser(None, d_hat, b, ev.code_index, conf, "unknown", ev.amplitude)
    if not math.isfinite(ev.fwhm_hat):
        return DecodedUser(None, d_hat, float("nan"), None, 0.0, "unknown", ev.amplitude)
    b = infer_bandwidth(ev.fwhm_hat, max(ev.tau_hat, 0.0), cfg)
    k, conf = identify(b, cfg.codebook)
    return DecodedUser(None, d_hat, b, k, conf, "unknown", ev.amplitude)


def decode(waveform: Waveform, cfg: DecoderConfig) -> tuple[list[DetectionEvent], list[DecodedUser]]:
    """Full pipeline: detect, measure, resolve anomalous windows, identify."""
    events: list[DetectionEvent] = []
    for ev in detect_pulses(waveform, cfg):
        if _anomalous(waveform, ev, cfg):
            parts = resolve_overlap(waveform, ev.window, cfg)
            if len(parts) == 1 and not parts[0].flags and math.isfinite(ev.fwhm_hat):
                # one clean pulse: keep the model-free measurement
                events.append(ev)
            else:
                events.extend(parts)
        else:
            events.append(ev)
    users = []
    for ev in events:
        try:
            users.append(decode_event(ev, cfg))
        except UndecodableEventError:
            d_hat = float(delay_to_distance(max(ev.tau_hat, 0.0), cfg.fiber))
            users.append(DecodedUser(None, d_hat, float("nan"), None, 0.0, "unknown", ev.amplitude))
    return events, users


# -- diagnosis ----------------------------------------------------------------

@dataclass(frozen=True)
class RegistryEntry:
    branch_id: str
    code_index: int
    distance: float  # m, expected
    reference_amplitude: float | None = None


def diagnose(decoded: list[DecodedUser], registry: list[RegistryEntry], *,
             distance_tolerance: float = 2.0,
             degradation_fraction: float = 0.5) -> list[DecodedUser]:
    """Match decoded reflections against registered branches.

    A registered code seen within ``distance_tolerance`` metres of its
    expected distance is healthy, or degraded when its amplitude is below
    ``degradation_fraction`` of the registered reference. Registered
    branches without a match are lost (their expected distance is the
    localisation hint). Unmatched reflections are reported as unknown.
    """
    codes = [r.code_index for r in registry]
    if len(set(codes)) != len(codes):
        raise ValueError("registry code indices must be unique")
    ids = [r.branch_id for r in registry]
    if len(set(ids)) != len(ids):
        raise ValueError("registry branch ids must be unique")
    used: set[int] = set()
    report: list[DecodedUser] = []
    for entry in registry:
        best, best_err = None, None
        for i, u in enumerate(decoded):
            if i in used or u.code_index != entry.code_index:
                continue
            err = abs(u.distance_hat - entry.distance)
            if err <= distance_tolerance and (best_err is None or err < best_err):
                best, best_err = i, err
        if best is None:
            report.append(DecodedUser(entry.branch_id, entry.distance, float("nan"),
                                      entry.code_index, 0.0, "lost", 0.0))
            continue
        used.add(best)
        u = decoded[best]
        status = "healthy"
        if (entry.reference_amplitude is not None
                and u.amplitude < degradation_fraction * entry.reference_amplitude):
            status = "degraded"
        report.append(replace(u, branch_id=entry.branch_id, status=status))
    for i, u in enumerate(decoded):
        if i not in used:
            report.append(replace(u, branch_id=None, status="unknown"))
    return report
