import csv
import json

import pytest

from throttlesim.harness import cli
from throttlesim.harness.config import load_config, preset_text
from throttlesim.harness.experiments import (ExperimentReport, PRIOR_CHANNELS_BPS,
                                             UnknownExperiment, run_experiment)
from throttlesim.harness.report import emit_report


def _report(**tables):
    return ExperimentReport("demo", {}, "abc123", 7, {"n": 1}, tables, {"x": 0.1234567891})


def test_empty_table_gives_header_only_csv(tmp_path):
    rep = _report(empty=[])
    paths = emit_report(rep, tmp_path, ["csv"])
    assert paths["empty"].read_text() == "\n"


def test_csv_quotes_only_when_needed(tmp_path):
    rep = _report(t=[{"a": 1, "b": "x,y"}, {"a": 2, "b": 'say "hi"'}])
    text = emit_report(rep, tmp_path, ["csv"])["t"].read_text()
    assert text == 'a,b\n1,"x,y"\n2,"say ""hi"""\n'
    assert list(csv.DictReader(text.splitlines()))[1]["b"] == 'say "hi"'


def test_summary_is_self_describing(tmp_path):
    path = emit_report(_report(), tmp_path, ["summary"])["summary"]
    data = json.loads(path.read_text())
    assert data["config_hash"] == "abc123" and data["seed"] == 7
    assert data["summary"]["x"] == 0.123457


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(ValueError):
        emit_report(_report(), tmp_path, ["xml"])


def test_unwritable_output_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OSError):
        emit_report(_report(), blocker / "sub", ["summary"])


def test_unknown_experiment():
    with pytest.raises(UnknownExperiment):
        run_experiment(load_config("mobile"), "nope")


def test_throughput_summary_and_ratios():
    rep = run_experiment(load_config("mobile"), "throughput", bits=100)
    for ch, bps in rep.summary["throughput_bps"].items():
        assert bps == pytest.approx(2899, rel=0.05)
        for name, base in PRIOR_CHANNELS_BPS.items():
            assert rep.summary["ratios"][ch][name] == pytest.approx(bps / base, rel=1e-3)
    assert rep.config_hash and rep.seed == 1


def _read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_cli_run_is_byte_identical(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    args = ["run", "mitigation_matrix", "--set", "bits=40", "--seed", "5"]
    assert cli.main(args + ["--out-dir", str(a)]) == 0
    assert cli.main(args + ["--out-dir", str(b)]) == 0
    assert _read_all(a) == _read_all(b)
    assert "mitigation_matrix_summary.json" in _read_all(a)


def test_cli_format_selection(tmp_path, capsys):
    assert cli.main(["run", "limits_demo", "--format", "summary", "--out-dir", str(tmp_path)]) == 0
    assert [p.name for p in tmp_path.iterdir()] == ["limits_demo_summary.json"]


def test_cli_calibrate(tmp_path, capsys):
    assert cli.main(["calibrate", "--out-dir", str(tmp_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["oracle_ok"] is True
    assert (tmp_path / "calibration.csv").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[machine]\nbogus = 1\n")
    assert cli.main(["calibrate", "--config", str(bad)]) == cli.EXIT_CONFIG
    assert cli.main(["report", "nope", "--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["run", "throughput", "--set", "speed=9"]) == cli.EXIT_CONFIG


def test_cli_calibration_failure_exit_code(tmp_path, capsys):
    targets = tmp_path / "t.csv"
    targets.write_text("class,freq_ghz,cores,tp_us,vr\n256b_Heavy,1.0,1,5.0,mbvr\n")
    cfg = tmp_path / "m.ini"
    cfg.write_text(preset_text("mobile").replace("targets = tp_targets.csv",
                                                 f"targets = {targets}"))
    assert cli.main(["calibrate", "--config", str(cfg)]) == cli.EXIT_CALIBRATION
