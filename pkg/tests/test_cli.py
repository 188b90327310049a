import csv
import json
import subprocess
import sys

import pytest

from blowuplab import cli


def _ini(tmp_path, text, name="run.ini"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def test_usage_errors(tmp_path, capsys):
    assert cli.main([]) == cli.EXIT_USAGE
    assert cli.main(["nonsense"]) == cli.EXIT_USAGE
    assert cli.main(["steady", "--d", "10", "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert "usage error" in capsys.readouterr().err
    empty = _ini(tmp_path, "")
    assert cli.main(["simulate", "--config", empty, "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert "kind = constant" in capsys.readouterr().err
    assert cli.main(["verify", "--suite", "nope"]) == cli.EXIT_USAGE
    assert cli.main(["simulate", "--preset", "nope"]) == cli.EXIT_USAGE
    bad = _ini(tmp_path, "[solver]\ngrid_sise = 256\n", "bad.ini")
    assert cli.main(["simulate", "--config", bad, "--out", str(tmp_path)]) == cli.EXIT_USAGE
    assert "grid_size" in capsys.readouterr().err
    assert cli.main(["presets", "--threads", "0"]) == cli.EXIT_USAGE


def test_presets_listed(capsys):
    assert cli.main(["presets"]) == cli.EXIT_OK
    out = capsys.readouterr().out
    assert "corollary-2-2" in out and "rational-family" in out


def test_manifest_rejects_unknown_keys(tmp_path):
    good = {k: None for k in cli.MANIFEST_KEYS}
    good["version"] = cli.MANIFEST_VERSION
    p = tmp_path / "m.json"
    p.write_text(json.dumps(good))
    assert cli.read_manifest(p)["version"] == cli.MANIFEST_VERSION
    p.write_text(json.dumps(dict(good, extra=1)))
    with pytest.raises(cli.UsageError):
        cli.read_manifest(p)


def test_simulate_rational_family(tmp_path, capsys):
    ini = _ini(tmp_path, "[solver]\ngrid_size = 256\n")
    rc = cli.main(["simulate", "--preset", "rational-family", "--config", ini,
                   "--out", str(tmp_path)])
    assert rc == cli.EXIT_OK
    run_dir = tmp_path / capsys.readouterr().out.strip().splitlines()[-1].split("/")[-1]
    m = cli.read_manifest(run_dir / "manifest.json")
    init = m["outcome"]["initial_data"]
    assert init["inic"] and init["inicon0"] and init["btpositive"]
    assert m["outcome"]["blowup_detected"] and m["outcome"]["T"] > 0
    assert not [e for e in m["events"] if e["kind"] == "initial_data"]
    with open(run_dir / "trace.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "b0"]
    # full precision floats
    assert float(rows[5][0]) == float(repr(float(rows[5][0])))
    assert all(len(r) == 2 for r in rows)


def test_same_inputs_same_run_id(tmp_path, capsys):
    for _ in range(2):
        assert cli.main(["spectrum", "--profile", "star", "--out", str(tmp_path)]) == cli.EXIT_OK
    dirs = [p for p in tmp_path.iterdir() if p.is_dir()]
    assert len(dirs) == 1 and dirs[0].name.startswith("spectrum-")
    with open(dirs[0] / "spectrum.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["index", "lambda", "unstable"]
    assert abs(float(rows[2][1]) - 2 / 3) < 1e-3 and rows[2][2] == "1"


def test_out_from_environment(tmp_path):
    env = {"BLOWUPLAB_OUT": str(tmp_path / "envout"), "PATH": "/usr/bin:/bin"}
    p = subprocess.run([sys.executable, "-m", "blowuplab", "steady", "--d", "3"],
                       env=env, capture_output=True, text=True, timeout=300)
    assert p.returncode == 0, p.stderr
    runs = list((tmp_path / "envout").iterdir())
    assert len(runs) == 1 and (runs[0] / "family.csv").exists()
    k, a0, C, n = p.stdout.split("\n")[0].split()
    assert k == "1" and abs(float(a0) - 6.0) < 1e-6 and n == "1"
