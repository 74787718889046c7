import csv
import json

import numpy as np
import pytest

from qclt.cli import UsageError, main, parse_config, parse_grid, parse_n_list


def _model(tmp_path, name="model.json", **doc):
    base = {"builder": "ising", "n": 8, "params": {"B": 1.0, "J": 1.0}, "boundary": "open"}
    base.update(doc)
    path = tmp_path / name
    path.write_text(json.dumps(base))
    return str(path)


def test_measure_happy_path(tmp_path, capsys):
    model = _model(tmp_path)
    out = tmp_path / "out"
    code = main(["measure", "--model", model, "--state", "all-up", "--n", "10", "--out", str(out)])
    assert code == 0
    assert {p.name for p in out.iterdir()} == {"measure.csv", "measure.json", "report.json"}
    report = json.loads((out / "report.json").read_text())
    assert report["method"] == "exact" and report["fallback"] is None
    assert report["variance"] == pytest.approx(9 / 4)
    rows = list(csv.reader((out / "measure.csv").open()))
    assert rows[0] == ["value", "weight"] and len(rows) == 1 + 2**10
    assert "KS distance" in capsys.readouterr().out


def test_measure_degenerate_variance(tmp_path, capsys):
    model = _model(tmp_path, params={"B": 1.0, "J": 0.0})
    code = main(["measure", "--model", model, "--state", "all-up", "--out", str(tmp_path / "o")])
    assert code == 2
    err = json.loads(capsys.readouterr().out)
    assert err["error"] == "degenerate variance" and err["exit_code"] == 2
    assert json.loads((tmp_path / "o" / "error.json").read_text()) == err


def test_malformed_model_is_usage_error(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"builder": "ising", "n": ')
    assert main(["measure", "--model", str(path)]) == 1
    path.write_text('{"builder": "potts", "n": 3}')
    assert main(["measure", "--model", str(path)]) == 1
    assert main(["measure", "--model", str(tmp_path / "missing.json")]) == 1


def test_verify_default_passes(tmp_path, capsys):
    model = _model(tmp_path)
    code = main(["verify", "--model", model, "--out", str(tmp_path / "v")])
    assert code == 0
    report = json.loads((tmp_path / "v" / "report.json").read_text())
    names = {c["name"] for c in report["checks"]}
    assert {"locality_commutator", "block_factorization", "charfn_factorization", "lyapunov_bound", "truncation_bound"} <= names
    assert all(c["passed"] for c in report["checks"])
    assert report["k"] == 4
    assert "all checks passed" in capsys.readouterr().out


def test_verify_degenerate_blocking(tmp_path):
    model = _model(tmp_path)
    assert main(["verify", "--model", model, "--k", "8", "--out", str(tmp_path / "v")]) == 0
    report = json.loads((tmp_path / "v" / "report.json").read_text())
    assert report["factorization_pairs"] == 0
    assert main(["verify", "--model", model, "--k", "9"]) == 1


def test_verify_json_is_byte_stable(tmp_path, capsys):
    model = _model(tmp_path)
    outputs = []
    for run in range(2):
        assert main(["verify", "--model", model, "--state", "random", "--seed", "7", "--json", "--out", str(tmp_path / f"r{run}")]) == 0
        outputs.append(capsys.readouterr().out)
    assert outputs[0] == outputs[1]
    assert json.loads(outputs[0])["passed"] is True
    assert (tmp_path / "r0" / "report.json").read_bytes() == (tmp_path / "r1" / "report.json").read_bytes()


def test_verify_failed_check_exits_three(tmp_path):
    model = _model(tmp_path, state={"builder": "random", "seed": 1})
    code = main(["verify", "--model", model, "--tol", "charfn_factorization=1e-30", "--out", str(tmp_path / "v")])
    assert code == 3
    report = json.loads((tmp_path / "v" / "report.json").read_text())
    assert not report["passed"]


def test_sweep_table(tmp_path, capsys):
    model = _model(tmp_path, state={"builder": "all-up"})
    out = tmp_path / "s"
    assert main(["sweep", "--model", model, "--n-list", "4:10:2", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "sweep.csv").open()))
    assert [int(r["n"]) for r in rows] == [4, 6, 8, 10]
    ks = [float(r["ks"]) for r in rows]
    assert np.all(np.diff(ks) < 0)
    assert "lyapunov" in capsys.readouterr().out


def test_sweep_empty_list(tmp_path, capsys):
    model = _model(tmp_path)
    assert main(["sweep", "--model", model, "--n-list", ""]) == 1
    assert "n_list is empty" in capsys.readouterr().err


def test_sweep_rejects_custom_model(tmp_path):
    path = tmp_path / "custom.json"
    path.write_text(json.dumps({"builder": "custom", "n": 1, "custom_terms": {"site_terms": [[[1, 0], [0, -1]]], "bond_terms": []}}))
    assert main(["sweep", "--model", str(path), "--n-list", "2,3"]) == 1


def test_dynamics_two_site_oracle(tmp_path):
    model = _model(tmp_path, n=2, params={"B": 1.0, "J": 2.0})
    out = tmp_path / "d"
    assert main(["dynamics", "--model", model, "--state", "all-up", "--t-grid", "0:2:21", "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "trace.csv").open()))
    t = np.array([float(r["t"]) for r in rows])
    fid = np.array([float(r["fidelity"]) for r in rows])
    omega = np.sqrt(5.0)
    np.testing.assert_allclose(fid, np.cos(omega * t) ** 2 + 0.8 * np.sin(omega * t) ** 2, atol=1e-12)
    np.testing.assert_allclose([float(r["gaussian_model"]) for r in rows], np.exp(-t**2))


def test_dynamics_transition_report(tmp_path):
    state_b = tmp_path / "b.json"
    locals_ = [[[0, 0], [1, 0]]] * 10
    locals_[0] = locals_[1] = [[1, 0], [0, 0]]
    state_b.write_text(json.dumps({"locals": locals_}))
    model = _model(tmp_path, n=10)
    out = tmp_path / "d"
    assert main(["dynamics", "--model", model, "--state", "all-down", "--state-b", str(state_b), "--out", str(out)]) == 0
    tr = json.loads((out / "report.json").read_text())["transition"]
    assert tr["regime_ok"] and tr["within_bound"]
    assert (out / "transition.csv").exists()


def test_schema_command(capsys):
    assert main(["schema"]) == 0
    assert json.loads(capsys.readouterr().out)["properties"]["builder"]["enum"] == ["ising", "harmonic", "custom"]


def test_kpm_fallback_is_recorded(tmp_path):
    model = _model(tmp_path)
    out = tmp_path / "k"
    code = main(["measure", "--model", model, "--n", "13", "--state", "random", "--M", "1024", "--r-grid=-1,0,1", "--out", str(out)])
    assert code == 0
    report = json.loads((out / "report.json").read_text())
    assert report["method"] == "kpm"
    assert "exact -> kpm" in report["fallback"]
    assert (out / "measure.csv").read_text().startswith("grid,density")


def test_numeric_failure_exits_three(tmp_path):
    model = _model(tmp_path)
    args = ["measure", "--model", model, "--n", "13", "--state", "random", "--M", "64", "--r-grid", "3.5"]
    assert main(args + ["--tol", "krylov_max_dim=2", "--out", str(tmp_path / "n")]) == 3
    # too few moments broaden the density beyond the standardization tolerance
    assert main(args + ["--out", str(tmp_path / "m")]) == 3


def test_usage_errors():
    assert main([]) == 1
    assert main(["bogus"]) == 1
    assert main(["--help"]) == 0
    with pytest.raises(UsageError, match="strictly increasing"):
        parse_grid("1,0.5")
    with pytest.raises(UsageError):
        parse_grid("0:1")
    with pytest.raises(UsageError, match="empty"):
        parse_n_list("5:4")
    assert parse_n_list("4:12:4") == [4, 8, 12]
    np.testing.assert_allclose(parse_grid("-1:1:5"), [-1, -0.5, 0, 0.5, 1])


def test_parse_config_defaults(tmp_path):
    model = _model(tmp_path)
    cfg = parse_config(["measure", "--model", model])
    assert cfg.seed == 0 and cfg.M == 2048 and cfg.state is None and cfg.method == "auto"
    with pytest.raises(UsageError, match="tolerance"):
        parse_config(["measure", "--model", model, "--tol", "speed=3"])
    with pytest.raises(UsageError, match="--state"):
        parse_config(["measure", "--model", model, "--state", "sideways"])
