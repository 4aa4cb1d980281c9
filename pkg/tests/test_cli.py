import csv
import json

import pytest
import yaml

from fracsource import cli
from fracsource.cli import EXIT_CONFIG, EXIT_NUMERIC, EXIT_OK, main
from fracsource.fintegral import QuadratureError

SMALL = {"K": 4, "n": 64, "paths": 300, "chunk": 64}


def config(tmp_path, **extra):
    p = tmp_path / "run.yaml"
    p.write_text(yaml.safe_dump({**SMALL, **extra}))
    return str(p)


def provenance(path):
    with open(path) as fh:
        return [line for line in fh if line.startswith("#")]


@pytest.fixture(scope="module")
def simulated(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("sim")
    cfg = config(tmp)
    out = tmp / "out"
    assert main(["simulate", "--config", cfg, "--out-dir", str(out), "--seed", "7"]) == EXIT_OK
    return cfg, out


def test_simulate_outputs(simulated):
    _, out = simulated
    head = provenance(out / "ensemble_moments.csv")
    assert head[0].strip() == "# seed=7" and head[1].startswith("# config_sha256=")
    rows = [r for r in csv.reader(l for l in open(out / "ensemble_moments.csv") if l[0] != "#")]
    assert rows[0] == ["k", "lambda", "mean", "se_mean", "var", "se_var"]
    assert len(rows) == 5
    cov = [l for l in open(out / "covariance.csv") if l[0] != "#"]
    assert len(cov) >= 4
    summary = json.loads((out / "run_summary.json").read_text())
    assert summary["seed"] == 7 and summary["n_paths"] == 300
    assert summary["config"]["K"] == 4 and "numpy" in summary["versions"]
    assert summary["config_sha256"] in head[1]


def test_seventeen_digits(simulated):
    _, out = simulated
    row = [l for l in open(out / "ensemble_moments.csv") if l[0] not in "#k"][0].strip().split(",")
    # %.17g round-trips every double
    assert all("%.17g" % float(x) == x for x in row[1:])


def test_threads_do_not_change_bytes(tmp_path):
    cfg = config(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", cfg, "--out-dir", str(a), "--threads", "1"]) == 0
    assert main(["simulate", "--config", cfg, "--out-dir", str(b), "--threads", "3"]) == 0
    for name in ("ensemble_moments.csv", "covariance.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_seed_changes_moments(tmp_path):
    cfg = config(tmp_path)
    main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "a"), "--seed", "1"])
    main(["simulate", "--config", cfg, "--out-dir", str(tmp_path / "b"), "--seed", "2"])
    a = (tmp_path / "a" / "ensemble_moments.csv").read_text().split("\n", 2)[2]
    b = (tmp_path / "b" / "ensemble_moments.csv").read_text().split("\n", 2)[2]
    assert a != b


def test_reconstruct_end_to_end(simulated, tmp_path):
    cfg, out = simulated
    rc = main(["reconstruct", "--config", cfg, "--seed", "7", "--out-dir", str(tmp_path),
               "--moments", str(out / "ensemble_moments.csv"), "--kcut", "3"])
    assert rc == EXIT_OK
    assert provenance(tmp_path / "reconstruction.csv")[0].strip() == "# seed=7"
    payload = json.loads((tmp_path / "reconstruction.json").read_text())
    assert payload["K_cut"] == 3 and payload["seed"] == 7
    assert len(payload["A"]) == 4 and all(a >= c for a, c in zip(payload["A"], payload["C1"]))


def test_reconstruct_is_byte_stable(simulated, tmp_path):
    cfg, out = simulated
    args = ["reconstruct", "--config", cfg, "--seed", "7", "--moments", str(out / "ensemble_moments.csv")]
    main(args + ["--out-dir", str(tmp_path / "a")])
    main(args + ["--out-dir", str(tmp_path / "b")])
    for name in ("reconstruction.csv", "reconstruction.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_reconstruct_schema_errors(tmp_path, capsys):
    cfg = config(tmp_path)
    assert main(["reconstruct", "--config", cfg, "--moments", str(tmp_path / "none.csv")]) == EXIT_CONFIG
    bad = tmp_path / "bad.csv"
    bad.write_text("k,lambda,mean\n1,9.8,0.1\n")
    assert main(["reconstruct", "--config", cfg, "--moments", str(bad)]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_instability_command(tmp_path):
    cfg = config(tmp_path, K=12)
    assert main(["instability", "--config", cfg, "--out-dir", str(tmp_path), "--gamma", "0.4"]) == 0
    head = provenance(tmp_path / "instability.csv")
    assert any(l.startswith("# gamma=0.4") for l in head)
    payload = json.loads((tmp_path / "instability.json").read_text())
    assert payload["gamma"] == 0.4 and len(payload["lambdas"]) == 12


def test_instability_short_range_is_config_error(tmp_path):
    assert main(["instability", "--config", config(tmp_path), "--out-dir", str(tmp_path)]) == EXIT_CONFIG


def test_hypothesis_violation_exit_code(tmp_path, capsys):
    rc = main(["simulate", "--config", config(tmp_path, alpha=0.4, hurst=0.5),
               "--out-dir", str(tmp_path)])
    assert rc == EXIT_CONFIG
    assert "alpha + H > 1" in capsys.readouterr().err


def test_missing_bound_exit_code(tmp_path):
    cfg = config(tmp_path, source={"h": {"kind": "constant", "value": 2.0}})
    assert main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_CONFIG


@pytest.mark.parametrize("flags", [["--threads", "0"], ["--kcut", "9"], ["--gamma", "1.5"]])
def test_bad_flags(tmp_path, flags):
    assert main(["simulate", "--config", config(tmp_path), "--out-dir", str(tmp_path)] + flags) == 2


def test_numerical_failure_exit_code(tmp_path, monkeypatch, capsys):
    def boom(*a, **k):
        raise QuadratureError("tolerance not reached")

    monkeypatch.setattr(cli, "compute_factors", boom)
    cfg = config(tmp_path)
    main(["simulate", "--config", cfg, "--out-dir", str(tmp_path)])
    assert main(["reconstruct", "--config", cfg, "--out-dir", str(tmp_path)]) == EXIT_NUMERIC
    assert "QuadratureError" in capsys.readouterr().err


def test_selftest_passes(capsys):
    assert main(["selftest"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 3
