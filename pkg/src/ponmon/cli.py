"""Command-line entry point.

Exit codes: 0 success (decode: every registered branch healthy),
2 usage, configuration or trace-file error, 3 fault detected by decode.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis
from .config import ConfigError, load_json, load_scenario, parse_interference, parse_sweep
from .decoder import RegistryEntry, peak_position, decode, diagnose
from .optics import FiberParams
from .pon import branch_response, expected_pulses, receiver_impulse_fwhm, simulate_pon_response
from .traceio import TraceFormatError, read_trace, write_trace_bin, write_trace_csv

EXIT_OK, EXIT_USAGE, EXIT_FAULT = 0, 2, 3
SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become Python numbers."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _emit(text: str, out_dir: str | None, name: str) -> None:
    if out_dir is None:
        sys.stdout.write(text)
        return
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / name).write_text(text)


# -- commands -------------------------------------------------------------------

def cmd_simulate(args) -> int:
    if args.format not in ("bin", "csv"):
        raise UsageError("simulate writes bin or csv traces")
    scn = load_scenario(args.config)
    if args.seed is not None:
        scn = scn.with_seed(args.seed)
    wf = simulate_pon_response(scn.topology, scn.monitoring_module, model=scn.model, span=scn.span)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    write_trace_bin(out / "trace.bin", wf)
    files = ["trace.bin"]
    if args.format == "csv":
        write_trace_csv(out / "trace.csv", wf)
        files.append("trace.csv")
    pulses = expected_pulses(scn.topology, scn.monitoring_module)
    for row in pulses:
        row["code_index"] = scn.codebook.index_of(row["bandwidth_nm"])
    meta = {
        "schema_version": SCHEMA_VERSION,
        "seed": scn.seed,
        "model": scn.model,
        "trace": {"files": files, "t0_ps": wf.t0, "dt_ps": wf.dt, "n_samples": len(wf)},
        "expected_pulses": pulses,
    }
    (out / "metadata.json").write_text(dumps(meta))
    return EXIT_OK


def baseline_registry(scn) -> list[RegistryEntry]:
    """Fill missing reference amplitudes with the noise-free peak of the
    healthy branch of the same id."""
    branches = {b.id: b for b in scn.topology.branches}
    out = []
    for entry in scn.registry:
        if entry.reference_amplitude is None and entry.branch_id in branches:
            pulse = branch_response(branches[entry.branch_id], scn.monitoring_module, scn.topology, scn.model)
            peak = peak_position(pulse.samples, int(np.argmax(pulse.samples)))[1]
            entry = replace(entry, reference_amplitude=peak)
        out.append(entry)
    return out


def cmd_decode(args) -> int:
    if args.format != "json":
        raise UsageError("decode reports are json")
    scn = load_scenario(args.config)
    wf = read_trace(args.trace)
    cfg = replace(scn.decoder,
                  receiver_fwhm=receiver_impulse_fwhm(scn.monitoring_module.receiver.pd_bandwidth))
    events, users = decode(wf, cfg)
    report = diagnose(users, baseline_registry(scn), distance_tolerance=scn.distance_tolerance,
                      degradation_fraction=scn.degradation_fraction)
    registered = [u for u in report if u.branch_id is not None]
    code = EXIT_OK if all(u.status == "healthy" for u in registered) else EXIT_FAULT
    summary = {s: sum(u.status == s for u in report) for s in ("healthy", "degraded", "lost", "unknown")}
    doc = {
        "schema_version": SCHEMA_VERSION,
        "events": [dict(ev.to_dict(), flags=list(ev.flags)) for ev in events],
        "users": [u.to_dict() for u in report],
        "summary": summary,
        "exit_code": code,
    }
    _emit(dumps(doc), args.out, "report.json")
    return code


def cmd_sweep(args) -> int:
    data = load_json(args.config) if args.config else {"schema_version": SCHEMA_VERSION}
    params = parse_sweep(data, args.kind)
    result = analysis.run_sweep(params, workers=args.workers)
    if args.format == "json":
        doc = {"kind": result.kind, "columns": list(result.columns),
               "rows": [list(r) for r in result.rows], "fits": list(result.fits)}
        _emit(dumps(doc), args.out, f"sweep_{result.kind}.json")
    elif args.format == "csv":
        _emit(result.to_csv(), args.out, f"sweep_{result.kind}.csv")
    else:
        raise UsageError("sweep writes csv or json")
    return EXIT_OK


def cmd_design(args) -> int:
    if args.group_velocity_m_per_s is not None:
        fiber = FiberParams.from_group_velocity(args.group_velocity_m_per_s)
    else:
        fiber = FiberParams(group_index=args.group_index)
    if (args.dispersion_ps_per_nm is None) != (args.max_distance_m is None):
        raise UsageError("--dispersion-ps-per-nm and --max-distance-m go together")
    try:
        report = analysis.run_design(args.n_codes, args.b1_nm, args.delta_t_ps, args.d_min_ps_per_nm,
                                     fiber, D_m=args.dispersion_ps_per_nm, max_distance=args.max_distance_m)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    if args.format == "json":
        _emit(dumps(report.to_dict()), args.out, "design.json")
    elif args.format == "csv":
        _emit(report.to_csv(), args.out, "design.csv")
    else:
        raise UsageError("design writes csv or json")
    return EXIT_OK


def cmd_interference(args) -> int:
    if args.format != "json":
        raise UsageError("interference reports are json")
    icfg = parse_interference(load_json(args.config))
    trials = icfg.trials if args.trials is None else args.trials
    seed = icfg.seed if args.seed is None else args.seed
    if trials < 100:
        raise UsageError("--trials must be >= 100")
    res = analysis.run_interference_mc(icfg.codebook, icfg.distribution, trials, seed,
                                       D_m=icfg.D_m, fiber=icfg.fiber, n_users=icfg.n_users,
                                       workers=args.workers)
    doc = dict(res.to_dict(), seed=seed, schema_version=SCHEMA_VERSION)
    _emit(dumps(doc), args.out, "interference.json")
    return EXIT_OK


# -- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ponmon", description="Bandwidth-coded FBG PON monitoring toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fmt_default, config_required=True):
        sp.add_argument("--config", required=config_required, help="JSON document")
        sp.add_argument("--out", help="output directory (default: stdout or current directory)")
        sp.add_argument("--format", choices=("csv", "json", "bin"), default=fmt_default)

    sp = sub.add_parser("simulate", help="synthesise a monitoring trace")
    common(sp, "bin")
    sp.add_argument("--seed", type=int, help="override the scenario seed")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("decode", help="identify and diagnose branches in a trace")
    sp.add_argument("trace", help="trace file (.bin or .csv)")
    common(sp, "json")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("sweep", help="pulse width against bandwidth or distance")
    sp.add_argument("kind", choices=analysis.SWEEP_KINDS)
    common(sp, "csv", config_required=False)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("design", help="codebook design report")
    sp.add_argument("--n-codes", type=int, required=True)
    sp.add_argument("--b1-nm", type=float, required=True)
    sp.add_argument("--delta-t-ps", type=float, required=True)
    sp.add_argument("--d-min-ps-per-nm", type=float, required=True)
    grp = sp.add_mutually_exclusive_group()
    grp.add_argument("--group-velocity-m-per-s", type=float)
    grp.add_argument("--group-index", type=float, default=FiberParams().group_index)
    sp.add_argument("--dispersion-ps-per-nm", type=float, help="D_m for the accumulated-dispersion check")
    sp.add_argument("--max-distance-m", type=float, help="farthest branch for the check")
    sp.add_argument("--out")
    sp.add_argument("--format", choices=("csv", "json", "bin"), default="json")
    sp.set_defaults(func=cmd_design)

    sp = sub.add_parser("interference", help="Monte Carlo pulse-overlap probability")
    common(sp, "json")
    sp.add_argument("--trials", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--workers", type=int, default=1)
    sp.set_defaults(func=cmd_interference)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "seed", None) is not None and not 0 <= args.seed < 2**64:
        parser.error("--seed must be an unsigned 64-bit integer")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
    except TraceFormatError as exc:
        print(f"trace error: {exc}", file=sys.stderr)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
