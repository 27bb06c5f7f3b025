import numpy as np
import pytest

from smoge.cli import UsageError, main, parse_config
from smoge.data import Dataset
from smoge.files import RunManifest, format_number, read_measure, read_toml, write_measure, write_rows
from smoge.model import MixingMeasure

TRUTH = MixingMeasure([0.3, 0.0], [[1.5, -1.0], [0.0, 0.0]], [[1.0, 2.0, -1.0], [-1.0, -1.0, 1.5]], [0.5, 0.8])


@pytest.fixture
def measure_file(tmp_path):
    path = tmp_path / "g.toml"
    write_measure(TRUTH, path)
    return path


# config resolution

def test_b4_defaults_resolved():
    rec = parse_config("select", {}, {"dgp": "b4", "sep": 5.0, "d": 2, "kstar": 2}, env={})
    assert rec["n"] == [500]
    assert rec["candidates"] == [1, 2, 3, 4, 5, 6, 7]
    assert rec["iterations"] == 4000
    assert rec["iteration_divisor"] == 5 and rec["reps"] == 20


def test_flag_beats_file_and_env_beats_file():
    rec = parse_config("select", {"dgp": "b2", "reps": 7, "seed": 3}, {"reps": 9}, env={"SMOGE_SEED": "11"})
    assert rec["reps"] == 9 and rec["seed"] == 11
    rec = parse_config("select", {"dgp": "b2", "seed": 3}, {"seed": 4}, env={"SMOGE_SEED": "11"})
    assert rec["seed"] == 4


@pytest.mark.parametrize("file_values,flags", [
    ({"dgp": "b2", "reps": -1}, {}),
    ({"dgp": "b2", "bogus": 1}, {}),
    ({"dgp": "b2", "reps": "many"}, {}),
    ({"dgp": "b4", "sep": 5.0, "d": 3, "kstar": 2}, {}),
    ({}, {}),
    ({"dgp": "b2", "candidates": [2, 1]}, {}),
])
def test_usage_errors(file_values, flags):
    with pytest.raises(UsageError):
        parse_config("select", file_values, flags, env={})


def test_manifest_config_round_trip(tmp_path):
    rec = parse_config("select", {}, {"dgp": "b4", "sep": 5.0, "d": 2, "kstar": 2, "out": str(tmp_path)}, env={})
    m = RunManifest("x", "select", rec, rec["seed"], "t0")
    m.write(tmp_path / "manifest.toml")
    again = parse_config("select", RunManifest.read(tmp_path / "manifest.toml").config, {}, env={})
    assert again == rec


# file formats

def test_measure_toml_round_trip(measure_file):
    assert read_measure(measure_file).allclose(TRUTH)


def test_measure_unknown_key(tmp_path, measure_file):
    text = measure_file.read_text() + "\nextra = 1\n"
    bad = tmp_path / "bad.toml"
    bad.write_text(text)
    with pytest.raises(ValueError):
        read_measure(bad)


def test_number_formatting(tmp_path):
    assert format_number(0.1) == "0.10000000000000001"
    assert format_number(1 / 3, 4) == "0.3333"
    assert format_number(7) == "7"
    write_rows([{"a": 1 / 3, "b": 2}], tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text() == "a,b\n0.33333333333333331,2\n"


# commands

def test_losses_identical_files(measure_file, capsys):
    assert main(["losses", "--g", str(measure_file), "--gstar", str(measure_file)]) == 0
    out = capsys.readouterr().out
    assert "total = 0\n" in out


def test_losses_csv(tmp_path, measure_file):
    other = tmp_path / "h.toml"
    write_measure(TRUTH.replace(sigma2=[0.6, 0.8]), other)
    assert main(["losses", "--g", str(other), "--gstar", str(measure_file), "--csv", str(tmp_path / "l.csv")]) == 0
    row = (tmp_path / "l.csv").read_text().splitlines()[1].split(",")
    assert float(row[1]) == pytest.approx(np.exp(0.3) * 0.1)


def test_identifiability_command(capsys):
    assert main(["identifiability", "--family", "linear", "--order", "2"]) == 0
    assert "verdict = degenerate" in capsys.readouterr().out
    assert main(["identifiability", "--family", "sigmoid", "--order", "2"]) == 0
    assert "verdict = identifiable" in capsys.readouterr().out


def test_unknown_subcommand_and_missing():
    assert main(["bogus"]) == 1
    assert main([]) == 1
    assert main(["select", "--dgp", "b2", "--reps", "-3"]) == 1
    assert main(["losses", "--g", "nope.toml", "--gstar", "nope.toml"]) == 1


def test_simulate_fit_pipeline(tmp_path):
    sim = tmp_path / "sim"
    assert main(["simulate", "--dgp", "b2", "--n", "40", "--seed", "3", "--out", str(sim)]) == 0
    data = Dataset.from_csv(sim / "data.csv")
    assert data.n == 40
    m = read_toml(sim / "manifest.toml")
    assert m["outputs"] == ["data.csv", "data.csv.provenance.json"] and m["exit_code"] == 0
    out = tmp_path / "fit"
    assert main(["fit", "--data", str(sim / "data.csv"), "--K", "2", "--iterations", "200", "--out", str(out)]) == 0
    assert read_measure(out / "point_estimate.toml").K == 2
    assert (out / "elbo_trace.csv").read_text().startswith("iteration,elbo\n")


def test_fit_numerical_failure_writes_manifest(tmp_path):
    sim = tmp_path / "sim"
    main(["simulate", "--dgp", "b2", "--n", "40", "--out", str(sim)])
    out = tmp_path / "fit"
    with np.errstate(all="ignore"):
        code = main(["fit", "--data", str(sim / "data.csv"), "--K", "2", "--learning-rate", "1e4", "--out", str(out)])
    assert code == 2
    m = read_toml(out / "manifest.toml")
    assert m["exit_code"] == 2 and m["notes"]


def test_select_deterministic(tmp_path, monkeypatch):
    monkeypatch.delenv("SMOGE_SEED", raising=False)
    args = ["select", "--dgp", "b2", "--n", "30", "--candidates", "1,2", "--reps", "2", "--iterations", "500",
            "--jobs", "1"]
    assert main(args + ["--out", str(tmp_path / "a")]) == 0
    assert main(args + ["--out", str(tmp_path / "b")]) == 0
    for name in ("selection_table.csv", "replications.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    config = tmp_path / "again.toml"
    import tomli_w
    rec = read_toml(tmp_path / "a" / "manifest.toml")["config"]
    rec["out"] = str(tmp_path / "c")
    config.write_bytes(tomli_w.dumps(rec).encode())
    assert main(["select", "--config", str(config)]) == 0
    assert (tmp_path / "c" / "replications.csv").read_bytes() == (tmp_path / "a" / "replications.csv").read_bytes()


def test_select_env_seed(tmp_path, monkeypatch):
    monkeypatch.setenv("SMOGE_SEED", "5")
    assert main(["select", "--dgp", "b2", "--n", "20", "--candidates", "1", "--reps", "1", "--iterations", "50",
                 "--jobs", "1", "--out", str(tmp_path)]) == 0
    assert read_toml(tmp_path / "manifest.toml")["master_seed"] == 5


def test_rates_command(tmp_path, measure_file):
    out = tmp_path / "rates"
    code = main(["rates", "--dgp-file", str(measure_file), "--n-grid", "50,100,200", "--reps", "1",
                 "--iterations", "200", "--n-mc", "2000", "--jobs", "1", "--out", str(out)])
    assert code == 0
    assert (out / "points.csv").read_text().startswith("n,rep,hellinger,hellinger_sq_se,l1")
    assert len((out / "slopes.csv").read_text().splitlines()) == 3
    assert main(["rates", "--dgp-file", str(measure_file), "--n-grid", "50,100"]) == 1


def test_round_flag(tmp_path, measure_file, capsys):
    other = tmp_path / "h.toml"
    write_measure(TRUTH.replace(sigma2=[0.6, 0.8]), other)
    main(["losses", "--g", str(other), "--gstar", str(measure_file), "--round", "3"])
    assert "total = 0.135\n" in capsys.readouterr().out
