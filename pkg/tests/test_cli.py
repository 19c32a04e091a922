import json
import subprocess
import sys

import numpy as np
import pytest

from faultsig import io as rio
from faultsig.alarm import AlarmEvent
from faultsig.cli import main
from faultsig.signature import SignatureLibrary


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def fails(capsys, *argv):
    with pytest.raises(SystemExit) as info:
        main([str(a) for a in argv])
    err = capsys.readouterr().err
    return info.value.code, json.loads(err)


@pytest.fixture
def library_file(tmp_path, libraries):
    path = tmp_path / "hybrid.json"
    libraries["hybrid"].save(path)
    return path


@pytest.fixture
def sideband_record(tmp_path, capsys):
    path = tmp_path / "sb.dat"
    run(capsys, "generate", "-o", path, "--faults", "sideband", "--scenario-seed", 4,
        "--duration", 6, "--onset", 2)
    return path


def test_generate(tmp_path, capsys):
    path = tmp_path / "r.csv"
    code, out, _ = run(capsys, "generate", "-o", path, "--faults", "harmonic,valve",
                       "--noise", "uniform", "--duration", 1, "--encoding", "csv", "--aux-channels", 1)
    doc = json.loads(out)
    assert code == 0
    assert doc["labels"] == ["harmonic", "valve"] and doc["sample_count"] == 10_000
    assert doc["channels"] == ["ia", "ib", "ic", "pressure"]
    r = rio.read_record(path)
    assert r.n_channels == 4 and r.sample_rate_hz == 10_000.0


def test_generate_is_deterministic(tmp_path, capsys):
    for name in ("a.dat", "b.dat"):
        run(capsys, "generate", "-o", tmp_path / name, "--faults", "valve", "--duration", 1)
    assert (tmp_path / "a.dat").read_bytes() == (tmp_path / "b.dat").read_bytes()


def test_analyze_report_and_exports(tmp_path, capsys, sideband_record, library_file):
    export = tmp_path / "plots"
    code, out, _ = run(capsys, "analyze", sideband_record, "--library", library_file,
                       "--export-dir", export)
    doc = json.loads(out)
    assert code == 0 and len(doc["windows"]) == 3
    assert abs(doc["dominant_hz"] - 50.0) <= 2500.0 / 1024
    assert "timings_s" in doc
    assert all("sideband" in [c[0] for c in w["classification"]] for w in doc["windows"][1:])
    names = {p.name for p in export.iterdir()}
    assert {"report.json", "events.jsonl", "window_000_sources.csv",
            "window_000_source_0_spectrogram.csv", "window_000_unmixing.json"} <= names
    unmixing = json.loads((export / "window_000_unmixing.json").read_text())
    assert np.array(unmixing["projection"]).shape[1] == 3
    events = [AlarmEvent.from_json(line) for line in (export / "events.jsonl").read_text().splitlines()]
    assert events and events[0].label == "sideband"


def test_analyze_no_timing_is_reproducible(tmp_path, capsys, sideband_record):
    outs = []
    for name in ("a.json", "b.json"):
        run(capsys, "analyze", sideband_record, "--no-timing", "-o", tmp_path / name)
        outs.append((tmp_path / name).read_text())
    assert outs[0] == outs[1]
    assert "timings_s" not in json.loads(outs[0])


def test_config_file_and_flag_override(tmp_path, capsys, sideband_record):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"decimation": 2, "window_s": 3.0, "smooth_window": 3}))
    _, out, _ = run(capsys, "analyze", sideband_record, "--config", cfg, "--no-timing")
    doc = json.loads(out)
    assert doc["analysis_rate_hz"] == 5000.0 and len(doc["windows"]) == 2
    _, out, _ = run(capsys, "analyze", sideband_record, "--config", cfg, "--decimation", 4,
                    "--no-timing")
    assert json.loads(out)["analysis_rate_hz"] == 2500.0


def test_monitor_writes_jsonl(tmp_path, capsys, sideband_record, library_file):
    path = tmp_path / "events.jsonl"
    code, _, _ = run(capsys, "monitor", sideband_record, "--library", library_file, "-o", path)
    assert code == 0
    lines = path.read_text().splitlines()
    assert lines
    for line in lines:
        assert set(json.loads(line)) == {"time_s", "transition", "label", "score"}
    assert json.loads(lines[0])["transition"] == "Raised"


def test_monitor_requires_library(capsys, sideband_record):
    code, err = fails(capsys, "monitor", sideband_record)
    assert code == 1 and err["error"] == "CliError"


def test_calibrate_builtin_and_manifest(tmp_path, capsys):
    lib_path = tmp_path / "lib.json"
    code, out, _ = run(capsys, "calibrate", "-o", lib_path, "--healthy-seeds", 1,
                       "--single-seeds", 1, "--pair-seeds", 0)
    doc = json.loads(out)
    assert code == 0 and doc["records"] == 12
    assert doc["labels"] == ["harmonic", "sideband", "valve"]
    assert SignatureLibrary.load(lib_path).labels == ("harmonic", "sideband", "valve")

    for name, faults in (("h.dat", ""), ("v.dat", "valve")):
        run(capsys, "generate", "-o", tmp_path / name, "--faults", faults, "--duration", 4)
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps([
        {"path": "h.dat", "labels": []},
        {"path": "v.dat", "labels": ["valve"], "onset_s": 2.0},
    ]))
    code, out, _ = run(capsys, "calibrate", "-o", tmp_path / "m.json", "--manifest", manifest,
                       "--mode", "stft_only")
    doc = json.loads(out)
    assert doc["records"] == 2 and doc["labels"] == ["valve"] and doc["mode"] == "stft_only"


def test_compare_with_given_libraries(tmp_path, capsys, libraries):
    argv = ["compare", "--seeds", 2, "--modes", "hybrid,fusion_only"]
    for mode in ("hybrid", "fusion_only"):
        path = tmp_path / f"{mode}.json"
        libraries[mode].save(path)
        argv += ["--mode-library", f"{mode}={path}"]
    code, out, _ = run(capsys, *argv)
    doc = json.loads(out)
    assert code == 0 and doc["suite"] == "valve"
    assert doc["scenarios"] == ["valve/impulsive/0", "valve/impulsive/1"]
    assert [m["mode"] for m in doc["modes"]] == ["hybrid", "fusion_only"]
    for m in doc["modes"]:
        assert m["fault_windows"] == 6 and m["windows"] == 8
        assert set(m) >= {"true_positives", "false_positives", "detection_latency_windows",
                          "detection_rate"}


def test_bench(capsys):
    code, out, _ = run(capsys, "bench", "--repeat", 1, "--unit-s", 1)
    doc = json.loads(out)
    assert code == 0
    assert doc["channels"] == 4 and doc["sample_rate_hz"] == 50_000.0
    assert doc["decimation"] == 20 and doc["budget_s"] == 2.0
    assert doc["best_s"] == pytest.approx(min(doc["runs_s"]))
    assert set(doc["stage_s"]) >= {"decimate", "bss", "stft"}


@pytest.mark.parametrize(
    "argv,kind,code",
    [
        (["analyze"], "UsageError", 2),
        (["explode"], "UsageError", 2),
        (["analyze", "missing.dat"], "MalformedHeaderError", 1),
        (["generate", "-o", "{tmp}/x.dat", "--faults", "bogus"], "ValueError", 1),
        (["generate", "-o", "{tmp}/x.dat", "--decimation", "40"], "ConfigError", 1),
        (["compare", "--modes", "hybrid,magic"], "CliError", 1),
        (["compare", "--mode-library", "nope"], "CliError", 1),
    ],
)
def test_errors_are_json(tmp_path, capsys, argv, kind, code):
    argv = [a.replace("{tmp}", str(tmp_path)) for a in argv]
    got_code, err = fails(capsys, *argv)
    assert got_code == code
    assert err["error"] == kind and err["message"]


def test_truncated_record_error(tmp_path, capsys, sideband_record):
    sideband_record.write_bytes(sideband_record.read_bytes()[:100])
    code, err = fails(capsys, "analyze", sideband_record)
    assert code == 1 and err["error"] == "TruncatedPayloadError"
    assert "100" in err["message"]


def test_record_rate_mismatch(capsys, sideband_record):
    code, err = fails(capsys, "analyze", sideband_record, "--sample-rate", 20000)
    assert code == 1 and err["error"] == "ConfigError"
    assert "sample_rate_hz" in err["message"]


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "faultsig.cli", "--help"],
                          capture_output=True, text=True, check=True)
    for name in ("generate", "calibrate", "analyze", "monitor", "compare", "bench"):
        assert name in proc.stdout
