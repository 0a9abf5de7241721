import json
import subprocess
import sys
from math import sqrt

import pytest
from numpy.testing import assert_allclose

from pinchcheck.cli import EXIT_INVARIANT, EXIT_OK, EXIT_USAGE, build_parser, main, report_to_csv
from pinchcheck.presets import ConfigError, RunConfig


@pytest.fixture(autouse=True)
def fixed_clock(monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_build_echoes_quotient_radius(capsys, tmp_path):
    path = tmp_path / "q.txt"
    code, out, _ = run(capsys, "build", "--preset", "p3e-quotient", "--points", "600", "--out", str(path))
    assert code == EXIT_OK
    header = json.loads(out)
    assert_allclose(header["a"], sqrt(2 / 3))
    assert header["orientable"] is False
    assert path.exists()


def test_build_without_points_is_usage_error(capsys):
    with pytest.raises(SystemExit) as info:
        main(["build", "--preset", "sphere"])
    assert info.value.code == EXIT_USAGE


def test_p_larger_than_n(capsys):
    code, _, err = run(capsys, "spectrum", "--preset", "sphere", "--n", "2", "--p", "3", "--points", "200")
    assert code == EXIT_USAGE
    assert "p must lie" in err


def test_unknown_suite(capsys):
    code, _, err = run(capsys, "compare-toolkit", "--preset", "sphere", "--points", "300", "--suite", "bogus")
    assert code == EXIT_USAGE


def test_spectrum_csv_rows(capsys):
    code, out, _ = run(capsys, "spectrum", "--preset", "sphere", "--points", "800", "--method", "lattice",
                       "--format", "csv")
    assert code == EXIT_OK
    lines = out.strip().splitlines()
    assert lines[0] == "index,eigenvalue,residual,converged,reference,within_margin"
    assert len(lines) == 10
    assert float(lines[2].split(",")[4]) == 2.0


def test_spectrum_json_envelope(capsys):
    code, out, _ = run(capsys, "spectrum", "--preset", "sphere", "--points", "400", "--method", "lattice", "--k", "4")
    assert code == EXIT_OK
    rep = json.loads(out)
    assert rep["schema_version"] == "1.0"
    assert rep["command"] == "spectrum"
    assert rep["timestamp"].startswith("1970-01-01")
    assert len(rep["results"]["rows"]) == 4
    assert set(rep["exponents"]) >= {"eta0", "L", "alpha_rate"}


def test_manifold_file_roundtrip(capsys, tmp_path):
    path = tmp_path / "s.txt"
    run(capsys, "build", "--preset", "sphere", "--points", "300", "--out", str(path))
    code, out, _ = run(capsys, "spectrum", "--manifold", str(path), "--k", "3")
    assert code == EXIT_OK
    assert json.loads(out)["manifold"]["N"] == 300
    code, _, _ = run(capsys, "spectrum", "--manifold", str(tmp_path / "missing.txt"))
    assert code == EXIT_USAGE


def test_kahler_ricci_precondition_is_usage_error(capsys):
    code, _, err = run(capsys, "kahler", "--preset", "s2xs2", "--points", "400", "--suite", "bound")
    assert code == EXIT_USAGE
    assert "Ric" in err


def test_toolkit_and_determinism(capsys, tmp_path):
    argv = ["compare-toolkit", "--preset", "sphere", "--points", "1500", "--seed", "3"]
    a = run(capsys, *argv)
    b = run(capsys, *argv)
    assert a[0] == b[0] == EXIT_OK
    assert a[1] == b[1]
    assert json.loads(a[1])["invariants"] == {"cosi": True, "trif": True}


def test_csv_report_flattening():
    text = report_to_csv({"a": {"b": 1.5, "c": [1, 2]}, "d": "x,y"})
    assert text.splitlines() == ["key,value", "a.b,1.5", "a.c,1;2", 'd,"x,y"']


def test_runconfig_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"preset": "sphere", "colour": "red"})
    with pytest.raises(ConfigError):
        RunConfig(preset="nope").with_preset_defaults()
    cfg = RunConfig(preset="s4xs3").with_preset_defaults()
    assert cfg.n == 7 and cfg.p == 3 and cfg.sizes == (200, 30)
    assert "out" not in cfg.to_dict()


def test_parser_lists_commands():
    text = build_parser().format_help()
    for name in ("build", "spectrum", "verify-grosjean", "gh-approx", "orientability", "kahler", "compare-toolkit"):
        assert name in text


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pinchcheck", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "verify-grosjean" in res.stdout


def test_exit_code_constants():
    assert (EXIT_OK, EXIT_USAGE, EXIT_INVARIANT) == (0, 2, 4)
