import copy
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import gaussian
from ponmon.cli import main
from ponmon.config import ConfigError, parse_scenario
from ponmon.optics import FiberParams, Waveform, distance_to_delay
from ponmon.traceio import TraceFormatError, read_trace, read_trace_bin, write_trace_bin, write_trace_csv

TAU_3300 = distance_to_delay(3300.0, FiberParams())

TWO_USERS = {
    "schema_version": 1,
    "seed": 11,
    "codebook": {"n_codes": 2, "b1_nm": 0.24, "delta_b_nm": 0.05},
    "topology": {
        "split_ratio": 2,
        "branches": [
            {"id": "user-1", "distance_m": 3300.0, "code_index": 1},
            {"id": "user-2", "distance_m": 3300.48, "bandwidth_nm": 0.29},
        ],
    },
    "monitoring_module": {"dispersion_ps_per_nm": -1659, "receiver": {"noise_rms": 0.0}},
    "acquisition": {"start_ps": TAU_3300 - 20000, "stop_ps": TAU_3300 + 40000},
}


def _write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


# -- config -------------------------------------------------------------------

def test_scenario_parses():
    scn = parse_scenario(TWO_USERS)
    assert [b.encoder.bandwidth for b in scn.topology.branches] == pytest.approx([0.24, 0.29])
    assert [r.code_index for r in scn.registry] == [1, 2]
    assert scn.monitoring_module.receiver.seed == 11
    assert scn.decoder.D_m == -1659


@pytest.mark.parametrize("mutate, path", [
    (lambda d: d.pop("codebook"), "codebook"),
    (lambda d: d.update(schema_version=2), "schema_version"),
    (lambda d: d["topology"]["branches"][0].update(distance_m=-5), "topology.branches[0].distance_m"),
    (lambda d: d["topology"]["branches"][1].update(bandwidth_nm=0.27), "topology.branches[1].bandwidth_nm"),
    (lambda d: d["topology"]["branches"][0].update(code_index=3), "topology.branches[0].code_index"),
    (lambda d: d["topology"].update(split_ratio=1), "topology"),
    (lambda d: d["monitoring_module"].update(dispersion_ps_per_nm="big"), "monitoring_module.dispersion_ps_per_nm"),
    (lambda d: d["monitoring_module"].update(colour="red"), "monitoring_module.colour"),
    (lambda d: d.update(registry=[{"branch_id": "a", "code_index": 1, "distance_m": 1.0},
                                  {"branch_id": "b", "code_index": 1, "distance_m": 2.0}]), "registry"),
])
def test_config_errors_carry_field_path(mutate, path):
    doc = copy.deepcopy(TWO_USERS)
    mutate(doc)
    with pytest.raises(ConfigError) as info:
        parse_scenario(doc)
    assert info.value.path == path


def test_designed_codebook_and_group_velocity():
    doc = copy.deepcopy(TWO_USERS)
    doc["codebook"] = {"n_codes": 64, "b1_nm": 0.2, "delta_t_ps": 250, "d_min_ps_per_nm": 5000}
    doc["fiber"] = {"group_velocity_m_per_s": 2e8}
    doc["topology"]["branches"] = [{"id": "x", "distance_m": 100.0, "code_index": 64}]
    scn = parse_scenario(doc)
    assert scn.codebook.delta_b == pytest.approx(0.05)
    assert scn.topology.fiber.group_velocity == pytest.approx(2e-4)


# -- trace files ------------------------------------------------------------------

def test_trace_round_trip(tmp_path):
    wf = Waveform(123.5, 50.0, np.random.default_rng(0).normal(size=1000))
    write_trace_bin(tmp_path / "t.bin", wf)
    back = read_trace_bin(tmp_path / "t.bin")
    assert back.t0 == wf.t0 and back.dt == wf.dt
    assert back.samples.tobytes() == wf.samples.tobytes()
    write_trace_csv(tmp_path / "t.csv", wf)
    csv = read_trace(tmp_path / "t.csv")
    assert np.array_equal(csv.samples, wf.samples)
    assert csv.dt == pytest.approx(50.0)
    assert (tmp_path / "t.csv").read_text().startswith("t_ps,value\n")


def test_binary_header_layout(tmp_path):
    wf = Waveform(1.0, 2.0, np.array([3.0, 4.0]))
    write_trace_bin(tmp_path / "t.bin", wf)
    raw = (tmp_path / "t.bin").read_bytes()
    assert len(raw) == 8 + 8 + 8 + 2 * 8
    assert np.frombuffer(raw[:16], "<f8").tolist() == [1.0, 2.0]
    assert np.frombuffer(raw[16:24], "<u8")[0] == 2
    assert np.frombuffer(raw[24:], "<f8").tolist() == [3.0, 4.0]


def test_corrupt_traces_rejected(tmp_path):
    (tmp_path / "short.bin").write_bytes(b"\x00" * 10)
    with pytest.raises(TraceFormatError):
        read_trace_bin(tmp_path / "short.bin")
    wf = Waveform(0.0, 1.0, np.ones(8))
    write_trace_bin(tmp_path / "t.bin", wf)
    (tmp_path / "cut.bin").write_bytes((tmp_path / "t.bin").read_bytes()[:-3])
    with pytest.raises(TraceFormatError):
        read_trace_bin(tmp_path / "cut.bin")
    (tmp_path / "bad.csv").write_text("time,value\n0,1\n")
    with pytest.raises(TraceFormatError):
        read_trace(tmp_path / "bad.csv")
    with pytest.raises(TraceFormatError):
        read_trace(tmp_path / "missing.bin")


# -- commands ---------------------------------------------------------------------

def _simulate(tmp_path, doc, out="run", *extra):
    cfg = _write(tmp_path, doc)
    assert main(["simulate", "--config", cfg, "--out", str(tmp_path / out), *extra]) == 0
    return cfg, tmp_path / out


def test_simulate_writes_trace_and_metadata(tmp_path):
    cfg, out = _simulate(tmp_path, TWO_USERS, "run", "--format", "csv")
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["seed"] == 11
    assert meta["trace"]["files"] == ["trace.bin", "trace.csv"]
    widths = [p["fwhm_ps"] for p in meta["expected_pulses"]]
    assert widths == pytest.approx([371.232, 448.567], rel=1e-4)
    assert read_trace(out / "trace.csv").samples.size == meta["trace"]["n_samples"]


def test_metadata_widths_match_decoded_widths(tmp_path, capsys):
    cfg, out = _simulate(tmp_path, TWO_USERS)
    assert main(["decode", str(out / "trace.bin"), "--config", cfg]) == 0
    report = json.loads(capsys.readouterr().out)
    meta = json.loads((out / "metadata.json").read_text())
    measured = [e["fwhm_ps"] for e in report["events"]]
    expected = [p["fwhm_ps"] for p in meta["expected_pulses"]]
    assert measured == pytest.approx(expected, rel=0.02)


def test_decode_two_users_healthy(tmp_path, capsys):
    doc = copy.deepcopy(TWO_USERS)
    doc["monitoring_module"]["receiver"]["noise_rms"] = 0.02
    cfg, out = _simulate(tmp_path, doc)
    assert main(["decode", str(out / "trace.bin"), "--config", cfg]) == 0
    report = json.loads(capsys.readouterr().out)
    assert [(u["branch_id"], u["code_index"], u["status"]) for u in report["users"]] == [
        ("user-1", 1, "healthy"), ("user-2", 2, "healthy")]
    assert set(report["events"][0]) == {"tau_ps", "fwhm_ps", "amplitude", "flags"}


def test_decode_lost_branch_exit_3(tmp_path, capsys):
    cfg, out = _simulate(tmp_path, TWO_USERS)
    wf = read_trace(out / "trace.bin")
    t = wf.times()
    tau2 = distance_to_delay(3300.48, FiberParams())
    x = np.where((t > tau2 - 1500) & (t < tau2 + 2500), 0.0, wf.samples)
    write_trace_bin(tmp_path / "cut.bin", wf.with_samples(x))
    assert main(["decode", str(tmp_path / "cut.bin"), "--config", cfg, "--out", str(tmp_path / "rep")]) == 3
    report = json.loads((tmp_path / "rep" / "report.json").read_text())
    statuses = {u["branch_id"]: u["status"] for u in report["users"]}
    assert statuses == {"user-1": "healthy", "user-2": "lost"}
    assert report["exit_code"] == 3


def test_decode_reports_unregistered_pulse(tmp_path, capsys):
    cfg, out = _simulate(tmp_path, TWO_USERS)
    wf = read_trace(out / "trace.bin")
    extra_tau = TAU_3300 + 25000
    x = wf.samples + gaussian(wf.times(), extra_tau, 371.0, wf.samples.max())
    write_trace_bin(tmp_path / "extra.bin", wf.with_samples(x))
    assert main(["decode", str(tmp_path / "extra.bin"), "--config", cfg]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["summary"] == {"healthy": 2, "degraded": 0, "lost": 0, "unknown": 1}


def test_empty_topology(tmp_path):
    doc = copy.deepcopy(TWO_USERS)
    doc["topology"] = {"branches": []}
    doc.pop("acquisition")
    doc["monitoring_module"]["receiver"]["noise_rms"] = 0.01
    cfg, out = _simulate(tmp_path, doc)
    meta = json.loads((out / "metadata.json").read_text())
    assert meta["expected_pulses"] == []
    assert read_trace(out / "trace.bin").samples.std() > 0


def test_64_branch_metadata(tmp_path):
    rng = np.random.default_rng(4)
    doc = copy.deepcopy(TWO_USERS)
    doc["codebook"] = {"n_codes": 64, "b1_nm": 0.2, "delta_b_nm": 0.05}
    doc["topology"] = {"split_ratio": 64, "branches": [
        {"id": f"u{k}", "distance_m": float(d), "code_index": k}
        for k, d in enumerate(rng.uniform(1000, 20000, 64), start=1)]}
    doc["acquisition"] = {"start_ps": 0, "stop_ps": 1e6}
    cfg, out = _simulate(tmp_path, doc)
    meta = json.loads((out / "metadata.json").read_text())
    assert len(meta["expected_pulses"]) == 64


def test_usage_and_config_errors_exit_2(tmp_path, capsys):
    bad = _write(tmp_path, {"schema_version": 1}, "bad.json")
    assert main(["simulate", "--config", bad, "--out", str(tmp_path / "x")]) == 2
    assert "codebook" in capsys.readouterr().err
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["simulate", "--config", str(tmp_path / "broken.json")]) == 2
    good = _write(tmp_path, TWO_USERS)
    (tmp_path / "junk.bin").write_bytes(b"junk")
    assert main(["decode", str(tmp_path / "junk.bin"), "--config", good]) == 2
    assert main(["simulate", "--config", good, "--format", "json", "--out", str(tmp_path / "y")]) == 2
    with pytest.raises(SystemExit) as info:
        main(["simulate"])
    assert info.value.code == 2
    with pytest.raises(SystemExit) as info:
        main(["simulate", "--config", good, "--seed", "-1"])
    assert info.value.code == 2


def test_seed_override_changes_noise(tmp_path):
    doc = copy.deepcopy(TWO_USERS)
    doc["monitoring_module"]["receiver"]["noise_rms"] = 0.02
    _, a = _simulate(tmp_path, doc, "a", "--seed", "1")
    _, b = _simulate(tmp_path, doc, "b", "--seed", "2")
    assert (a / "trace.bin").read_bytes() != (b / "trace.bin").read_bytes()
    assert json.loads((a / "metadata.json").read_text())["seed"] == 1


def test_design_command(tmp_path, capsys):
    assert main(["design", "--n-codes", "64", "--b1-nm", "0.2", "--delta-t-ps", "250",
                 "--d-min-ps-per-nm", "5000", "--group-velocity-m-per-s", "2e8"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["delta_b_nm"] == pytest.approx(0.05)
    assert doc["t_max_ps"] == pytest.approx(16750.0)
    assert doc["min_separation_m"] == pytest.approx(1.675)
    assert len(doc["codes"]) == 64
    assert main(["design", "--n-codes", "0", "--b1-nm", "0.2", "--delta-t-ps", "250",
                 "--d-min-ps-per-nm", "5000"]) == 2


def test_sweep_and_interference_commands(tmp_path, capsys):
    sweep = _write(tmp_path, {"schema_version": 1, "distances_km": [5.0]}, "sweep.json")
    assert main(["sweep", "width_vs_distance", "--config", sweep]) == 0
    text = capsys.readouterr().out
    assert "# fit" not in text and text.splitlines()[0] == "bandwidth_nm,distance_km,fwhm_ps,expected_fwhm_ps"
    mc = _write(tmp_path, {"schema_version": 1, "codebook": {"n_codes": 4, "b1_nm": 0.2, "delta_b_nm": 0.05},
                           "distance_distribution": {"kind": "fixed", "low_m": 5000}}, "mc.json")
    assert main(["interference", "--config", mc, "--trials", "100", "--seed", "3"]) == 0
    assert json.loads(capsys.readouterr().out)["probability"] == 1.0
    assert main(["interference", "--config", mc, "--trials", "10"]) == 2


def test_module_entry_point(tmp_path):
    cfg = _write(tmp_path, {"schema_version": 1})
    proc = subprocess.run([sys.executable, "-m", "ponmon", "simulate", "--config", cfg],
                          capture_output=True, text=True, cwd=tmp_path)
    assert proc.returncode == 2
    assert "codebook" in proc.stderr
