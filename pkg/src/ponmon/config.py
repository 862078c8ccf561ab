"""JSON scenario documents.

Every physical quantity carries its unit in the field name. Errors raise
:class:`ConfigError` with the dotted path of the offending field.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

from .decoder import DecoderConfig, RegistryEntry
from .encoders import Codebook, FbgEncoder, design_codebook
from .optics import FiberParams
from .pon import MODELS, Branch, MonitoringModuleConfig, PonTopology, ReceiverConfig
from .propagation import ProbePulseSpec

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path or '<root>'}: {message}")


class _Section:
    """Typed access to one JSON object with path-aware errors and unknown-key checks."""

    def __init__(self, data, path: str, allowed: set[str]):
        if not isinstance(data, dict):
            raise ConfigError(path, "expected an object")
        extra = sorted(set(data) - allowed)
        if extra:
            raise ConfigError(self._join(path, extra[0]), "unknown field")
        self.data, self.path = data, path

    @staticmethod
    def _join(path, key):
        return f"{path}.{key}" if path else str(key)

    def at(self, key):
        return self._join(self.path, key)

    def has(self, key):
        return key in self.data and self.data[key] is not None

    def number(self, key, default=None, *, positive=False, nonneg=False):
        if not self.has(key):
            if default is None:
                raise ConfigError(self.at(key), "required")
            return float(default)
        v = self.data[key]
        if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
            raise ConfigError(self.at(key), "expected a finite number")
        if positive and not v > 0:
            raise ConfigError(self.at(key), "must be > 0")
        if nonneg and v < 0:
            raise ConfigError(self.at(key), "must be >= 0")
        return float(v)

    def integer(self, key, default=None, *, minimum=None):
        if not self.has(key):
            if default is None:
                raise ConfigError(self.at(key), "required")
            return int(default)
        v = self.data[key]
        if isinstance(v, bool) or not isinstance(v, int):
            raise ConfigError(self.at(key), "expected an integer")
        if minimum is not None and v < minimum:
            raise ConfigError(self.at(key), f"must be >= {minimum}")
        return v

    def boolean(self, key, default):
        if not self.has(key):
            return default
        v = self.data[key]
        if not isinstance(v, bool):
            raise ConfigError(self.at(key), "expected true or false")
        return v

    def string(self, key, default=None, choices=None):
        if not self.has(key):
            if default is None:
                raise ConfigError(self.at(key), "required")
            return default
        v = self.data[key]
        if not isinstance(v, str):
            raise ConfigError(self.at(key), "expected a string")
        if choices is not None and v not in choices:
            raise ConfigError(self.at(key), f"expected one of {', '.join(choices)}")
        return v

    def section(self, key, allowed, required=False):
        if not self.has(key):
            if required:
                raise ConfigError(self.at(key), "required")
            return _Section({}, self.at(key), allowed)
        return _Section(self.data[key], self.at(key), allowed)

    def items(self, key, required=False):
        if not self.has(key):
            if required:
                raise ConfigError(self.at(key), "required")
            return []
        v = self.data[key]
        if not isinstance(v, list):
            raise ConfigError(self.at(key), "expected a list")
        return [(f"{self.at(key)}[{i}]", item) for i, item in enumerate(v)]

    def numbers(self, key, default=None):
        if not self.has(key):
            if default is None:
                raise ConfigError(self.at(key), "required")
            return list(default)
        out = []
        for p, v in self.items(key):
            if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
                raise ConfigError(p, "expected a finite number")
            out.append(float(v))
        if not out:
            raise ConfigError(self.at(key), "must not be empty")
        return out


def _guard(path, fn, *args, **kwargs):
    """Re-raise domain validation errors with a field path."""
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(path, str(exc)) from exc


def check_schema(root: _Section) -> None:
    version = root.integer("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {version}; expected {SCHEMA_VERSION}")


def parse_fiber(sec: _Section) -> FiberParams:
    fiber = _guard(sec.path, FiberParams,
                   dispersion=sec.number("dispersion_ps_per_nm_km", 17.0),
                   attenuation=sec.number("attenuation_db_per_km", 0.22, nonneg=True),
                   group_index=sec.number("group_index", 1.468, positive=True))
    if sec.has("group_velocity_m_per_s"):
        if sec.has("group_index"):
            raise ConfigError(sec.at("group_velocity_m_per_s"), "give group_index or group_velocity_m_per_s, not both")
        vg = sec.number("group_velocity_m_per_s", positive=True)
        fiber = _guard(sec.at("group_velocity_m_per_s"), FiberParams.from_group_velocity,
                       vg, dispersion=fiber.dispersion, attenuation=fiber.attenuation)
    return fiber


_FIBER_KEYS = {"dispersion_ps_per_nm_km", "attenuation_db_per_km", "group_index", "group_velocity_m_per_s"}


def parse_codebook(sec: _Section) -> Codebook:
    n = sec.integer("n_codes", minimum=1)
    b1 = sec.number("b1_nm", positive=True)
    if sec.has("delta_b_nm"):
        if sec.has("delta_t_ps") or sec.has("d_min_ps_per_nm"):
            raise ConfigError(sec.at("delta_b_nm"), "give delta_b_nm or delta_t_ps with d_min_ps_per_nm, not both")
        return _guard(sec.path, Codebook, b1, sec.number("delta_b_nm", positive=True), n)
    return _guard(sec.path, design_codebook, n, b1,
                  sec.number("delta_t_ps", positive=True), sec.number("d_min_ps_per_nm", positive=True))


_CODEBOOK_KEYS = {"n_codes", "b1_nm", "delta_b_nm", "delta_t_ps", "d_min_ps_per_nm"}


def parse_probe(sec: _Section) -> ProbePulseSpec:
    return _guard(sec.path, ProbePulseSpec,
                  center_wavelength=sec.number("center_wavelength_nm", 1550.0, positive=True),
                  spectral_fwhm=sec.number("spectral_fwhm_nm", 1.33, positive=True),
                  shape=sec.string("shape", "gaussian", ("gaussian", "super_gaussian")),
                  order=sec.integer("order", 1, minimum=1),
                  chirp=sec.number("chirp", 0.0),
                  peak_power=sec.number("peak_power_mw", 1.0, positive=True))


_PROBE_KEYS = {"center_wavelength_nm", "spectral_fwhm_nm", "shape", "order", "chirp", "peak_power_mw"}


def parse_receiver(sec: _Section, seed: int) -> ReceiverConfig:
    fs = sec.number("adc_full_scale", 0.0, nonneg=True) if sec.has("adc_full_scale") else None
    return _guard(sec.path, ReceiverConfig,
                  pd_bandwidth=sec.number("pd_bandwidth_ghz", 5.0, positive=True),
                  sample_rate=sec.number("sample_rate_gsps", 20.0, positive=True),
                  adc_bits=sec.integer("adc_bits", 0, minimum=0),
                  noise_rms=sec.number("noise_rms", 0.0, nonneg=True),
                  seed=seed, adc_full_scale=fs or None)


_RECEIVER_KEYS = {"pd_bandwidth_ghz", "sample_rate_gsps", "adc_bits", "noise_rms", "adc_full_scale"}


@dataclass(frozen=True)
class ScenarioConfig:
    topology: PonTopology
    monitoring_module: MonitoringModuleConfig
    decoder: DecoderConfig
    codebook: Codebook
    registry: tuple[RegistryEntry, ...]
    seed: int = 0
    model: str = "farfield"
    distance_tolerance: float = 2.0  # m
    degradation_fraction: float = 0.5
    span: tuple[float, float] | None = None  # ps

    def with_seed(self, seed: int) -> "ScenarioConfig":
        from dataclasses import replace
        mm = replace(self.monitoring_module, receiver=replace(self.monitoring_module.receiver, seed=seed))
        return replace(self, seed=seed, monitoring_module=mm)


_ROOT_KEYS = {"schema_version", "seed", "model", "fiber", "codebook", "topology",
              "monitoring_module", "decoder", "registry", "acquisition"}


def _parse_branch(path, item, codebook: Codebook, center: float) -> tuple[Branch, int]:
    sec = _Section(item, path, {"id", "distance_m", "code_index", "bandwidth_nm",
                                "excess_loss_db", "peak_reflectivity", "profile", "profile_order"})
    if sec.has("code_index") == sec.has("bandwidth_nm"):
        raise ConfigError(path, "give exactly one of code_index or bandwidth_nm")
    if sec.has("code_index"):
        k = sec.integer("code_index", minimum=1)
        if k > codebook.n_codes:
            raise ConfigError(sec.at("code_index"), f"outside 1..{codebook.n_codes}")
        bw = codebook.bandwidth(k)
    else:
        bw = sec.number("bandwidth_nm", positive=True)
        k = codebook.index_of(bw)
        if k is None:
            raise ConfigError(sec.at("bandwidth_nm"), f"{bw} nm is not a codebook bandwidth")
    bid = sec.data.get("id", str(k))
    if not isinstance(bid, (str, int)) or isinstance(bid, bool):
        raise ConfigError(sec.at("id"), "expected a string")
    enc = _guard(path, FbgEncoder, str(bid), center, bw,
                 peak_reflectivity=sec.number("peak_reflectivity", 0.9, positive=True),
                 profile=sec.string("profile", "gaussian", ("gaussian", "super_gaussian", "uniform_sinc")),
                 order=sec.integer("profile_order", 2, minimum=1))
    branch = _guard(path, Branch, str(bid), sec.number("distance_m", positive=True), enc,
                    sec.number("excess_loss_db", 0.0, nonneg=True))
    return branch, k


def parse_scenario(data) -> ScenarioConfig:
    root = _Section(data, "", _ROOT_KEYS)
    check_schema(root)
    seed = root.integer("seed", 0, minimum=0)
    model = root.string("model", "farfield", MODELS)
    fiber = parse_fiber(root.section("fiber", _FIBER_KEYS))
    codebook = parse_codebook(root.section("codebook", _CODEBOOK_KEYS, required=True))

    mm_sec = root.section("monitoring_module", {"dispersion_ps_per_nm", "repetition_period_ps",
                                                "probe", "receiver"})
    probe = parse_probe(mm_sec.section("probe", _PROBE_KEYS))
    receiver = parse_receiver(mm_sec.section("receiver", _RECEIVER_KEYS), seed)
    d_m = mm_sec.number("dispersion_ps_per_nm", -1659.0)
    mm = _guard(mm_sec.path, MonitoringModuleConfig, d_m, probe, receiver,
                mm_sec.number("repetition_period_ps", 5e8, positive=True))

    topo_sec = root.section("topology", {"split_ratio", "feeder_length_m", "losses_enabled", "branches"})
    parsed = [_parse_branch(p, item, codebook, probe.center_wavelength) for p, item in topo_sec.items("branches")]
    branches = tuple(b for b, _ in parsed)
    topo = _guard(topo_sec.path, PonTopology, branches,
                  split_ratio=topo_sec.integer("split_ratio", max(1, len(branches)), minimum=1),
                  fiber=fiber,
                  feeder_length=topo_sec.number("feeder_length_m", 0.0, nonneg=True),
                  losses_enabled=topo_sec.boolean("losses_enabled", True))
    if topo.max_delay() >= mm.repetition_period:
        raise ConfigError(mm_sec.at("repetition_period_ps"), "must exceed the maximum round-trip delay")

    dec_sec = root.section("decoder", {"detect_threshold", "delta_t_ps", "noise_sigmas",
                                       "reference_amplitude", "distance_tolerance_m",
                                       "degradation_fraction"})
    ref = dec_sec.number("reference_amplitude", 1.0, positive=True) if dec_sec.has("reference_amplitude") else None
    dec = _guard(dec_sec.path, DecoderConfig, codebook, D_m=d_m, fiber=fiber,
                 detect_threshold=dec_sec.number("detect_threshold", 0.1),
                 delta_t=dec_sec.number("delta_t_ps", 250.0, positive=True),
                 reference_amplitude=ref,
                 noise_sigmas=dec_sec.number("noise_sigmas", 6.0, nonneg=True))
    tol = dec_sec.number("distance_tolerance_m", 2.0, positive=True)
    frac = dec_sec.number("degradation_fraction", 0.5, nonneg=True)

    if root.has("registry"):
        registry = []
        for p, item in root.items("registry"):
            sec = _Section(item, p, {"branch_id", "code_index", "distance_m", "reference_amplitude"})
            k = sec.integer("code_index", minimum=1)
            if k > codebook.n_codes:
                raise ConfigError(sec.at("code_index"), f"outside 1..{codebook.n_codes}")
            amp = sec.number("reference_amplitude", 1.0, positive=True) if sec.has("reference_amplitude") else None
            registry.append(RegistryEntry(str(sec.string("branch_id")), k,
                                          sec.number("distance_m", positive=True), amp))
    else:
        registry = [RegistryEntry(b.id, k, b.distance) for b, k in parsed]
    codes = [r.code_index for r in registry]
    if len(set(codes)) != len(codes):
        raise ConfigError("registry", "code indices must be unique")
    if len({r.branch_id for r in registry}) != len(registry):
        raise ConfigError("registry", "branch ids must be unique")

    span = None
    if root.has("acquisition"):
        acq = root.section("acquisition", {"start_ps", "stop_ps"})
        span = (acq.number("start_ps"), acq.number("stop_ps"))
        if not span[1] > span[0]:
            raise ConfigError(acq.at("stop_ps"), "must exceed start_ps")
    return ScenarioConfig(topo, mm, dec, codebook, tuple(registry), seed, model, tol, frac, span)


def load_json(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("", f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from exc


def load_scenario(path) -> ScenarioConfig:
    return parse_scenario(load_json(path))


def parse_sweep(data, kind: str):
    """Sweep document; omitted fields take the defaults of ``kind``."""
    from .analysis import SWEEP_KINDS, SweepParams, default_sweep_params
    root = _Section(data, "", {"schema_version", "kind", "model", "dispersions_ps_per_nm", "distances_km",
                               "bandwidths_nm", "fiber", "probe", "receiver"})
    check_schema(root)
    kind = root.string("kind", kind, SWEEP_KINDS)
    base = default_sweep_params(kind)
    probe = parse_probe(root.section("probe", _PROBE_KEYS)) if root.has("probe") else base.probe
    receiver = (parse_receiver(root.section("receiver", _RECEIVER_KEYS), 0)
                if root.has("receiver") else base.receiver)
    return _guard("", SweepParams, kind,
                  tuple(root.numbers("dispersions_ps_per_nm", base.dispersions_ps_per_nm)),
                  tuple(root.numbers("distances_km", base.distances_km)),
                  tuple(root.numbers("bandwidths_nm", base.bandwidths_nm)),
                  fiber=parse_fiber(root.section("fiber", _FIBER_KEYS)) if root.has("fiber") else base.fiber,
                  probe=probe, receiver=receiver,
                  model=root.string("model", base.model, MODELS))


@dataclass(frozen=True)
class InterferenceConfig:
    codebook: Codebook
    distribution: object  # analysis.DistanceDistribution
    D_m: float
    fiber: FiberParams
    n_users: int
    trials: int
    seed: int


def parse_interference(data) -> InterferenceConfig:
    from .analysis import DistanceDistribution
    root = _Section(data, "", {"schema_version", "codebook", "fiber", "dispersion_ps_per_nm", "n_users",
                               "distance_distribution", "trials", "seed"})
    check_schema(root)
    codebook = parse_codebook(root.section("codebook", _CODEBOOK_KEYS, required=True))
    dist_sec = root.section("distance_distribution", {"kind", "low_m", "high_m"})
    kind = dist_sec.string("kind", "uniform", ("uniform", "fixed"))
    low = dist_sec.number("low_m", 1000.0, positive=True)
    high = dist_sec.number("high_m", 20000.0, positive=True) if kind == "uniform" else low
    dist = _guard(dist_sec.path, DistanceDistribution, kind, low, high)
    n_users = root.integer("n_users", codebook.n_codes, minimum=1)
    if n_users > codebook.n_codes:
        raise ConfigError("n_users", f"must not exceed the {codebook.n_codes} codes")
    return InterferenceConfig(codebook, dist, root.number("dispersion_ps_per_nm", -1659.0),
                              parse_fiber(root.section("fiber", _FIBER_KEYS)), n_users,
                              root.integer("trials", 10000, minimum=100), root.integer("seed", 0, minimum=0))
