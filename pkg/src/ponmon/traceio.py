"""Trace files.

Binary layout (little-endian): ``t0`` float64 [ps], ``dt`` float64 [ps],
``count`` uint64, then ``count`` float64 samples.
CSV layout: a ``t_ps,value`` header line followed by one row per sample.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .optics import Waveform

_HEADER = struct.Struct("<ddQ")


class TraceFormatError(ValueError):
    pass


def write_trace_bin(path, wf: Waveform) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(wf.t0, wf.dt, wf.samples.size))
        fh.write(wf.samples.astype("<f8").tobytes())


def read_trace_bin(path) -> Waveform:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise TraceFormatError(f"cannot read trace {path}: {exc}") from exc
    if len(raw) < _HEADER.size:
        raise TraceFormatError("trace shorter than its header")
    t0, dt, count = _HEADER.unpack_from(raw)
    if len(raw) != _HEADER.size + 8 * count:
        raise TraceFormatError(
            f"trace declares {count} samples but carries {(len(raw) - _HEADER.size) / 8:g}")
    samples = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size, count=count)
    try:
        return Waveform(t0, dt, samples.astype(float))
    except ValueError as exc:
        raise TraceFormatError(str(exc)) from exc


def write_trace_csv(path, wf: Waveform) -> None:
    t = wf.times()
    with open(path, "w", newline="\n") as fh:
        fh.write("t_ps,value\n")
        for ti, v in zip(t.tolist(), wf.samples.tolist()):
            fh.write(f"{ti!r},{v!r}\n")


def read_trace_csv(path) -> Waveform:
    try:
        with open(path) as fh:
            header = fh.readline().strip()
            if header != "t_ps,value":
                raise TraceFormatError(f"unexpected CSV header {header!r}")
            data = np.loadtxt(fh, delimiter=",", ndmin=2)
    except OSError as exc:
        raise TraceFormatError(f"cannot read trace {path}: {exc}") from exc
    except ValueError as exc:
        raise TraceFormatError(f"malformed CSV trace: {exc}") from exc
    if data.shape[0] < 2 or data.shape[1] != 2:
        raise TraceFormatError("CSV trace needs at least two t_ps,value rows")
    t = data[:, 0]
    steps = np.diff(t)
    dt = float(steps.mean())
    if not np.allclose(steps, dt, rtol=1e-6, atol=1e-9):
        raise TraceFormatError("CSV trace is not uniformly sampled")
    return Waveform(float(t[0]), dt, data[:, 1])


def read_trace(path) -> Waveform:
    """Read a trace, choosing the format from the file suffix (.csv or binary)."""
    return read_trace_csv(path) if str(path).endswith(".csv") else read_trace_bin(path)
