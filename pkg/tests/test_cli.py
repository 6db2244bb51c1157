'''
Tests the command-line front end end to end.
'''
import json

import orjson
import pytest
from typer.testing import CliRunner

from app.cli import app
from app.services.dataset_service import write_csv
from app.services.simulation_service import DgpSpec, generate

runner = CliRunner()


@pytest.fixture
def binary_csv(tmp_path):
    data, _ = generate(DgpSpec(name="DGP-D", n=400, seed=13))
    path = tmp_path / "binary.csv"
    write_csv(data, path)
    return path


def test_simulate_from_a_config_file(tmp_path):
    config = tmp_path / "sim.json"
    config.write_text(json.dumps({"dgp": {"name": "DGP-P", "n": 40}}))
    out = tmp_path / "sim.csv"
    result = runner.invoke(app, ["simulate", "--config", str(config), "--seed", "3", "--out", str(out)])
    assert result.exit_code == 0, result.output
    lines = out.read_text().splitlines()
    assert lines[0] == "y,x,z1,w1"
    assert len(lines) == 41


def test_estimate_from_csv(binary_csv, tmp_path):
    out = tmp_path / "estimate.json"
    result = runner.invoke(app, [
        "estimate", "--data", str(binary_csv), "--x0", "0,1", "--estimator", "parametric", "--out", str(out),
    ])
    assert result.exit_code == 0, result.output
    document = orjson.loads(out.read_bytes())
    assert [e["x0"] for e in document["results"]["estimates"]] == [0.0, 1.0]
    assert document["config"]["estimator"] == "parametric"


def test_missing_x0_is_a_configuration_error(binary_csv):
    result = runner.invoke(app, ["estimate", "--data", str(binary_csv)])
    assert result.exit_code == 2


def test_bad_trim_flag(binary_csv):
    result = runner.invoke(app, ["estimate", "--data", str(binary_csv), "--x0", "1", "--trim", "0.1"])
    assert result.exit_code == 2


def test_unobserved_level_is_an_estimation_error(binary_csv, tmp_path):
    result = runner.invoke(app, [
        "estimate", "--data", str(binary_csv), "--x0", "0.5", "--bandwidth", "0.8",
        "--out", str(tmp_path / "never.json"),
    ])
    assert result.exit_code == 1
    assert not (tmp_path / "never.json").exists()


def test_missing_data_file(tmp_path):
    result = runner.invoke(app, ["estimate", "--data", str(tmp_path / "absent.csv"), "--x0", "1"])
    assert result.exit_code == 2


def test_monte_carlo_writes_report_and_table(tmp_path):
    config = tmp_path / "mc.json"
    config.write_text(json.dumps({"dgp": {"name": "DGP-C", "n": 150}, "estimators": ["naive", "parametric"]}))
    result = runner.invoke(app, [
        "mc", "--config", str(config), "--reps", "3", "--threads", "1", "--out", str(tmp_path / "mc_report.json"),
    ])
    assert result.exit_code == 0, result.output
    document = orjson.loads((tmp_path / "mc_report.json").read_bytes())
    assert {c["estimator"] for c in document["results"]["cells"]} == {"naive", "parametric"}
    assert (tmp_path / "mc_report.csv").exists()
