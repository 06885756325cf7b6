"""Command line entry points produce their files and self-check cleanly."""

import json

from isactrack.cli import main


def test_oracle_check_passes(capsys):
    rc = main(["oracle-check", "--seeds", "1"])
    out = capsys.readouterr().out
    assert rc == 0
    assert "OK" in out


def test_calibrate_cfar_emits_json(capsys):
    rc = main(["calibrate-cfar", "--p-fa", "1e-2", "--shape", "8,8,9",
               "--maps", "20"])
    doc = json.loads(capsys.readouterr().out)
    assert rc == 0
    assert doc["alpha"] > 0
    assert doc["map_shape"] == [8, 8, 9]


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "o"
    rc = main(["run", "--policy", "fixed:10", "--trials", "1", "--seed", "5",
               "--delta-t", "0.2", "--out", str(out)])
    assert rc == 0
    names = {p.name for p in out.iterdir()}
    assert {"epochs.csv", "cdf_fixed_10.csv", "coverage_fixed_10.csv",
            "summary.json"} <= names
    doc = json.loads((out / "summary.json").read_text())
    assert "fixed:10" in doc["policies"]
    assert doc["config"]["delta_T"] == 0.2