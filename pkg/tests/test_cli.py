import json
import subprocess
import sys

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shapeband.cli import RunConfig, ValidationError, main


def run(argv, capsys):
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def test_missing_out_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["calibrate", "--class", "isotonic", "--m", "10"])
    assert exc.value.code == 2


def test_bad_alpha_names_field(capsys):
    code, _, err = run(["calibrate", "--class", "isotonic", "--m", "10", "--alpha", "0.7",
                        "--out", "x.kv"], capsys)
    assert code == 2 and "alpha" in err and len(err.strip().splitlines()) == 1


def test_constants(capsys):
    code, out, _ = run(["constants", "--class", "convex", "--d", "2"], capsys)
    assert code == 0 and "1.19788" in out and "0.68278" in out
    code, out, _ = run(["constants", "--class", "isotonic", "--format", "json"], capsys)
    doc = json.loads(out)
    assert round(doc["lower"], 5) == 1.86121 and doc["exponent"] == 0.25


def test_pipeline_is_byte_reproducible(tmp_path, capsys, monkeypatch):
    monkeypatch.chdir(tmp_path)
    outputs = []
    for threads in ("1", "3"):
        d = tmp_path / f"run{threads}"
        d.mkdir()
        assert main(["simulate", "--function", "sum", "--m", "12", "--seed", "3",
                     "--out", f"{d}/data.csv"]) == 0
        assert main(["calibrate", "--class", "isotonic", "--m", "12", "--nsim", "200",
                     "--seed", "7", "--threads", threads, "--out", f"{d}/cal.kv"]) == 0
        assert main(["band", "--data", f"{d}/data.csv", "--class", "isotonic", "--cal",
                     f"{d}/cal.kv", "--out", f"{d}/band.csv", "--plot-data", f"{d}/plot.json",
                     "--function", "sum"]) == 0
        outputs.append([(d / n).read_bytes() for n in ("data.csv", "cal.kv", "band.csv",
                                                       "plot.json")])
    assert outputs[0] == outputs[1]
    out = capsys.readouterr().out
    assert "kappa=" in out and "width min=" in out and "median=" in out


def test_band_errors(tmp_path, capsys):
    data, cal = tmp_path / "data.csv", tmp_path / "cal.kv"
    main(["simulate", "--function", "zero", "--m", "10", "--out", str(data)])
    main(["calibrate", "--class", "isotonic", "--m", "10", "--nsim", "100", "--out", str(cal)])
    lines = data.read_text().splitlines()
    data.write_text("\n".join(lines[:5] + lines[6:]) + "\n")
    code, _, err = run(["band", "--data", str(data), "--class", "isotonic", "--cal", str(cal),
                        "--out", str(tmp_path / "b.csv")], capsys)
    assert code == 2 and "(0.1, 0.5)" in err
    main(["simulate", "--function", "zero", "--m", "10", "--out", str(data)])
    code, _, err = run(["band", "--data", str(data), "--class", "convex", "--cal", str(cal),
                        "--out", str(tmp_path / "b.csv")], capsys)
    assert code == 2 and "kernel_pair" in err
    code, _, err = run(["band", "--data", str(tmp_path / "nope.csv"), "--class", "convex",
                        "--cal", str(cal), "--out", str(tmp_path / "b.csv")], capsys)
    assert code == 1 and err.count("\n") == 1


def test_coverage_and_rates(tmp_path, capsys):
    cache = str(tmp_path / "cache")
    code, out, _ = run(["coverage", "--function", "sum", "--class", "convex", "--m", "10",
                        "--reps", "30", "--nsim", "100", "--cache-dir", cache,
                        "--out", str(tmp_path / "cov.kv")], capsys)
    assert code == 0 and "x1+x2" in out and "convex" in out
    code, out, _ = run(["rates", "--function", "zero", "--class", "isotonic", "--grids",
                        "8,10,12", "--region", "x1<=0.5", "--reps", "3", "--nsim", "100",
                        "--cache-dir", cache], capsys)
    assert code == 0 and "slope" in out and "x1<=0.5" in out
    code, _, err = run(["rates", "--function", "zero", "--class", "isotonic", "--grids",
                        "8,x"], capsys)
    assert code == 2 and "grids" in err


def test_unknown_function(capsys):
    code, _, err = run(["simulate", "--function", "nope", "--m", "8", "--out", "x"], capsys)
    assert code == 2 and "function" in err


@settings(max_examples=50)
@given(st.builds(RunConfig,
                 subcommand=st.sampled_from(["calibrate", "band", "coverage", "rates"]),
                 shape_class=st.one_of(st.none(), st.sampled_from(["isotonic", "convex"])),
                 m=st.one_of(st.none(), st.integers(4, 200)), d=st.integers(1, 4),
                 alpha=st.floats(0.002, 0.5), nsim=st.one_of(st.none(), st.integers(100, 10**5)),
                 replicates=st.integers(1, 1000), seed=st.integers(0, 2**63),
                 policy=st.one_of(st.none(), st.sampled_from(["full", "dyadic"])),
                 sigma=st.floats(0.01, 10), threads=st.one_of(st.none(), st.integers(1, 64)),
                 out=st.one_of(st.none(), st.text("abc/._", min_size=1)),
                 grids=st.lists(st.integers(4, 99), max_size=5).map(tuple),
                 regions=st.lists(st.sampled_from(["x1<=0.3", "0.45<=x1<=0.55"]),
                                  max_size=2).map(tuple),
                 all_builtins=st.booleans()))
def test_run_config_round_trip(cfg):
    cfg.validate()
    assert RunConfig.from_text(cfg.to_text()) == cfg


def test_run_config_validation():
    with pytest.raises(ValidationError) as exc:
        RunConfig("calibrate", m=3).validate()
    assert exc.value.field == "m"
    with pytest.raises(ValidationError) as exc:
        RunConfig("calibrate", sigma=0.0).validate()
    assert exc.value.field == "sigma"


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "shapeband", "constants", "--class", "isotonic"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "1.86121" in res.stdout
