import csv
import json

import numpy as np
import pytest

from linkadditive.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from linkadditive.montecarlo import Dgp, generate_sample


def _write_data(path, Y, X):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["y"] + [f"x{j + 1}" for j in range(X.shape[1])])
        for y, row in zip(Y, X):
            w.writerow([repr(float(y))] + [repr(float(v)) for v in row])
    return path


@pytest.fixture(scope="module")
def data_file(tmp_path_factory):
    ds = generate_sample(Dgp(n=300), 11)
    return _write_data(tmp_path_factory.mktemp("data") / "design.csv", ds.Y, ds.X)


def _read_csv(path):
    with path.open() as fh:
        return list(csv.DictReader(fh))


def test_fit_output_contract(tmp_path, data_file):
    out = tmp_path / "fit"
    assert main(["fit", "--data", str(data_file), "--out", str(out), "--kappa", "4,2", "--h", "0.5,1.4",
                 "--grid-size", "41"]) == EXIT_OK
    rows = _read_csv(out / "component_1.csv")
    assert len(rows) == 41
    assert list(rows[0]) == ["x_cube", "x", "m_tilde", "m_hat", "boundary", "degenerate", "beta", "V",
                             "ci_lower", "ci_upper"]
    mid = rows[20]
    assert float(mid["ci_lower"]) <= float(mid["m_hat"]) <= float(mid["ci_upper"])
    summary = json.loads((out / "summary.json").read_text())
    assert summary["h"] == [0.5, 1.4] and len(summary["components"]) == 2
    assert json.loads((out / "config.json").read_text())["command"] == "fit"
    assert not (out / "error.json").exists()


def test_fit_bias_corrected_and_plugin(tmp_path, data_file):
    out = tmp_path / "bc"
    assert main(["fit", "--data", str(data_file), "--out", str(out), "--kappa", "4,2", "--bandwidth", "plugin",
                 "--ci-mode", "bias-corrected", "--grid-size", "21"]) == EXIT_OK
    summary = json.loads((out / "summary.json").read_text())
    assert summary["selection"]["method"] == "plugin"
    assert all(np.isfinite(float(r["beta"])) for r in _read_csv(out / "component_1.csv")[5:16])


def test_simulate_is_byte_identical_across_thread_counts(tmp_path):
    args = ["simulate", "--replications", "6", "--h", "0.5,1.4", "--grid-size", "51", "--seed", "3"]
    assert main(args + ["--out", str(tmp_path / "a"), "--threads", "1"]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b"), "--threads", "3"]) == EXIT_OK
    for name in ("report.csv", "ise.csv", "report.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_single_replication_ise_equals_eimse(tmp_path):
    out = tmp_path / "one"
    assert main(["simulate", "--replications", "1", "--h", "0.5,1.4", "--grid-size", "51", "--out", str(out)]) == 0
    ise = _read_csv(out / "ise.csv")
    report = _read_csv(out / "report.csv")
    assert len(ise) == 1
    assert [float(r["eimse"]) for r in report] == [float(ise[0]["ise_1"]), float(ise[0]["ise_2"])]


def test_config_file_precedence(tmp_path):
    cfg = tmp_path / "exp.json"
    cfg.write_text(json.dumps({"dgp": {"d": 2, "n": 200}, "estimator": "oracle", "kappa": [2, 2],
                               "h": [0.6, 1.7], "replications": 5, "seed": 9, "grid": 31, "trim": 0.8}))
    out = tmp_path / "sim"
    assert main(["simulate", "--config", str(cfg), "--replications", "2", "--out", str(out)]) == EXIT_OK
    echo = json.loads((out / "config.json").read_text())
    assert (echo["replications"], echo["seed"], echo["n"], echo["grid_size"]) == (2, 9, 200, 31)
    assert json.loads((out / "report.json").read_text())["replications"] == 2


def test_bandwidth_trace_rows(tmp_path):
    out = tmp_path / "bw"
    assert main(["bandwidth", "--n", "200", "--seed", "1", "--candidates", "1,2,3", "--c-lo", "1", "--c-hi", "3",
                 "--no-polish", "--out", str(out)]) == EXIT_OK
    assert len(_read_csv(out / "trace.csv")) == 9
    result = json.loads((out / "bandwidth.json").read_text())
    assert all(c in (1.0, 2.0, 3.0) for c in result["C_h"])


def test_diagnose(tmp_path, data_file):
    out = tmp_path / "diag"
    assert main(["diagnose", "--data", str(data_file), "--out", str(out)]) == EXIT_OK
    diag = json.loads((out / "diagnose.json").read_text())
    assert diag["basis_gram_error"] < 1e-10 and diag["q_hat_min_eigenvalue"] > 0


def _error(out, capsys):
    record = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert record == json.loads((out / "error.json").read_text())
    return record


def test_bad_estimator_is_usage_error(tmp_path, capsys):
    out = tmp_path / "bad"
    assert main(["simulate", "--estimator", "spline", "--h", "0.5", "--out", str(out)]) == EXIT_USAGE
    record = _error(out, capsys)
    assert "two-stage-LL" in record["message"]


def test_missing_file_is_data_error(tmp_path, capsys):
    out = tmp_path / "missing"
    assert main(["fit", "--data", str(tmp_path / "nope.csv"), "--out", str(out)]) == EXIT_DATA
    assert _error(out, capsys)["error"] == "data"


def test_oversized_series_is_data_error(tmp_path, capsys):
    X = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    data = _write_data(tmp_path / "small.csv", (X[:, 0] > 0).astype(float), X)
    out = tmp_path / "ident"
    assert main(["fit", "--data", str(data), "--kappa", "30", "--h", "0.5", "--out", str(out)]) == EXIT_DATA
    _error(out, capsys)


def test_linear_truth_plugin_is_numerical_error(tmp_path, capsys):
    X = np.random.default_rng(1).uniform(-1, 1, (300, 2))
    data = _write_data(tmp_path / "lin.csv", 0.3 * X[:, 0] - 0.2 * X[:, 1], X)
    out = tmp_path / "zb"
    code = main(["fit", "--data", str(data), "--link", "identity", "--kappa", "1", "--basis", "legendre-shifted",
                 "--bandwidth", "plugin", "--out", str(out)])
    assert code == EXIT_NUMERICAL
    assert _error(out, capsys)["type"] == "ZeroBiasError"


def test_unknown_config_key_and_bad_threads(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "u")]) == EXIT_USAGE
    assert main(["simulate", "--h", "0.5", "--threads", "0", "--out", str(tmp_path / "t")]) == EXIT_USAGE
    assert main(["fit"]) == EXIT_USAGE
