import csv
import json
import subprocess
import sys
from importlib import resources

import jsonschema
import numpy as np
import pytest

from turnpike_lab.cli import main


def _schema(name):
    text = resources.files("turnpike_lab").joinpath("schemas", f"{name}.json").read_text()
    return json.loads(text)


def _validate(path, name):
    doc = json.loads(path.read_text())
    jsonschema.validate(doc, _schema(name))
    return doc


TANH_INSTANCE = {"a": [[0.0]], "b": [[1.0]], "c": [[1.0]], "k": [[1.0]],
                 "horizon": 3.0, "x0": [1.0], "dt": 1e-3}


@pytest.fixture
def tanh_file(tmp_path):
    path = tmp_path / "tanh.json"
    path.write_text(json.dumps(TANH_INSTANCE))
    return path


def test_all_schemas_are_valid_documents():
    for name in ["problem", "instance", "steady_state", "structural", "riccati",
                 "solve_ocp", "turnpike"]:
        jsonschema.Draft202012Validator.check_schema(_schema(name))


def test_model_then_steady_state(tmp_path):
    prob = tmp_path / "prob.json"
    out = tmp_path / "ss.json"
    assert main(["model", "--name", "appendix_b", "--n", "8", "-o", str(prob)]) == 0
    _validate(prob, "problem")
    assert main(["steady-state", str(prob), "-o", str(out)]) == 0
    doc = _validate(out, "steady_state")
    np.testing.assert_allclose(doc["x_e"], 0.0, atol=1e-14)
    np.testing.assert_allclose(doc["u_e"], 0.0, atol=1e-14)
    assert float(np.sum(np.square(doc["w"]))) == pytest.approx(36.0, rel=1e-10)


def test_model_instance(tmp_path):
    out = tmp_path / "inst.json"
    assert main(["model", "--name", "heat", "--n", "6", "--horizon", "2", "--dt", "0.01",
                 "-o", str(out)]) == 0
    doc = _validate(out, "instance")
    assert doc["horizon"] == 2.0 and len(doc["x0"]) == 6


def test_solve_ocp_oracle(tmp_path, tanh_file):
    out, series = tmp_path / "out.json", tmp_path / "traj.csv"
    assert main(["solve-ocp", str(tanh_file), "--oracle", "-o", str(out),
                 "--csv", str(series)]) == 0
    doc = _validate(out, "solve_ocp")
    assert doc["oracle_cost_gap"] <= 1e-5
    with series.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t", "x_1", "u_1", "utilde_1"]
    assert len(rows) == 3002
    assert float(rows[1][2]) == pytest.approx(-np.tanh(3.0), abs=1e-6)


def test_invalid_json_writes_nothing(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    out, series = tmp_path / "out.json", tmp_path / "out.csv"
    assert main(["solve-ocp", str(bad), "-o", str(out), "--csv", str(series)]) == 1
    assert not out.exists() and not series.exists()


def test_invalid_problem_exits_one(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"a": [[0.0, 1.0]], "b": [[1.0]], "c": [[1.0]], "k": [[1.0]]}))
    assert main(["steady-state", str(bad), "-o", str(tmp_path / "o.json")]) == 1
    assert not (tmp_path / "o.json").exists()


def test_usage_error_exits_one():
    with pytest.raises(SystemExit) as info:
        main(["turnpike", "--horizons"])
    assert info.value.code == 1


def test_numerical_failure_exits_two(tmp_path):
    prob = tmp_path / "p.json"
    prob.write_text(json.dumps({"a": [[1.0]], "b": [[0.0]], "c": [[1.0]], "k": [[1.0]]}))
    out = tmp_path / "r.json"
    assert main(["riccati", str(prob), "-o", str(out)]) == 2
    assert not out.exists()


def test_structural_outputs(tmp_path):
    out = tmp_path / "s.json"
    assert main(["structural", "--model", "random", "--param", "n=3", "--param", "seed=2",
                 "--samples", "20", "-o", str(out)]) == 0
    doc = _validate(out, "structural")
    assert doc["stabilizable"] and doc["detectable"]
    prob = tmp_path / "p.json"
    prob.write_text(json.dumps({"a": [[1.0]], "b": [[0.0]], "c": [[1.0]], "k": [[1.0]]}))
    assert main(["structural", str(prob), "-o", str(out)]) == 0
    doc = _validate(out, "structural")
    assert doc["stabilizable"] is False


def test_riccati_outputs(tmp_path, tanh_file):
    out, series = tmp_path / "r.json", tmp_path / "r.csv"
    assert main(["riccati", str(tanh_file), "-o", str(out), "--csv", str(series)]) == 0
    doc = _validate(out, "riccati")
    assert doc["p_min"][0][0] == pytest.approx(1.0, abs=1e-10)
    assert doc["decay_fit"]["beta"] > 0
    assert series.read_text().splitlines()[0] == "t,frob_norm_P,frob_norm_P_minus_Pmin"


def test_counterexample_csv(tmp_path):
    out = tmp_path / "c.csv"
    assert main(["counterexample", "--max-dim", "16", "--step", "4", "-o", str(out)]) == 0
    rows = list(csv.reader(out.open()))
    assert rows[0] == ["N", "w_norm", "w_residual"]
    for n, w_norm, _ in rows[1:]:
        assert float(w_norm) ** 2 == pytest.approx(int(n) * (int(n) + 1) / 2, rel=1e-10)


def test_turnpike_outputs(tmp_path):
    prob = tmp_path / "heat.json"
    assert main(["model", "--name", "heat", "--n", "8", "-o", str(prob)]) == 0
    out, series = tmp_path / "t.json", tmp_path / "t.csv"
    assert main(["turnpike", str(prob), "--horizons", "2,4", "--dt", "0.01",
                 "--random-x0", "2", "-o", str(out), "--csv", str(series)]) == 0
    doc = _validate(out, "turnpike")
    assert doc["verdicts"]["envelope_found"]
    assert doc["verdicts"]["mid_deviation_decreasing"]
    assert series.read_text().splitlines()[0] == "T,t,dev_x,dev_u"


def test_csv_outputs_are_byte_identical(tmp_path, tanh_file):
    texts = []
    for run in range(2):
        series = tmp_path / f"run{run}.csv"
        assert main(["turnpike", "--model", "random", "--param", "n=3", "--param", "seed=4",
                     "--horizons", "2,4", "--dt", "0.01", "--random-x0", "3", "--seed", "9",
                     "-o", str(tmp_path / f"run{run}.json"), "--csv", str(series)]) == 0
        texts.append(series.read_bytes())
        traj = tmp_path / f"traj{run}.csv"
        assert main(["solve-ocp", str(tanh_file), "-o", str(tmp_path / "s.json"),
                     "--csv", str(traj)]) == 0
        texts.append(traj.read_bytes())
    assert texts[0] == texts[2] and texts[1] == texts[3]
    assert "-0," not in texts[1].decode()


def test_stdout_and_entry_point(tanh_file):
    proc = subprocess.run([sys.executable, "-m", "turnpike_lab", "steady-state",
                           str(tanh_file)], capture_output=True, text=True, check=False)
    assert proc.returncode == 0
    doc = json.loads(proc.stdout)
    jsonschema.validate(doc, _schema("steady_state"))
