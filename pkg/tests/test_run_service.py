'''
Tests run configuration loading, the subcommand runner and report output.
'''
import json

import orjson
import pytest

from app.services.report_service import build_report, deterministic_part, dumps, write_table
from app.services.run_service import EXIT_CONFIG, EXIT_ESTIMATION, EXIT_OK, load_config, parse_config, perform, run
from app.utils.errors import ConfigError

DGP_D = {"name": "DGP-D", "n": 600}


def test_parse_config_defaults():
    config = parse_config({"dgp": DGP_D, "x0": [1]})
    assert config.subcommand == "estimate"
    assert config.estimator == "semiparametric"
    assert config.trim.quantiles == (0.05, 0.95)
    assert config.settings().trim.quantiles == (0.05, 0.95)


@pytest.mark.parametrize("values", [
    {"dgp": DGP_D},
    {"dgp": DGP_D, "x0": [1], "estimator": "magic"},
    {"dgp": DGP_D, "columns": {"y": [1.0]}, "x0": [1]},
    {"subcommand": "mc", "data": "sample.csv"},
    {"subcommand": "mc", "dgp": DGP_D, "estimators": ["naive", "magic"]},
    {"subcommand": "simulate", "dgp": DGP_D, "data": "sample.csv"},
    {"subcommand": "mc", "dgp": DGP_D, "columns": {"y": [1.0], "x": [0.0]}},
    {"dgp": DGP_D, "x0": [1], "bandwidth": -1.0},
    {"dgp": DGP_D, "x0": [1], "colour": "blue"},
])
def test_parse_config_rejects(values):
    with pytest.raises(ConfigError):
        parse_config(values)


def test_flags_override_the_file(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps({"dgp": DGP_D, "x0": [0, 1], "seed": 4, "trim": {"quantiles": [0.1, 0.9]}}))
    config = load_config(str(path), {"seed": 9, "x0": None, "trim": {"quantiles": [0.2, 0.8]}})
    assert config.seed == 9
    assert config.x0 == [0.0, 1.0]
    assert config.trim.quantiles == (0.2, 0.8)


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(str(tmp_path / "missing.json"))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(str(bad))
    listed = tmp_path / "list.json"
    listed.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_config(str(listed))


def test_estimate_report_with_truth():
    config = parse_config({"dgp": DGP_D, "x0": [0, 1], "estimator": "parametric", "seed": 2})
    document, _ = perform(config)
    assert document["kind"] == "estimate"
    assert set(document) == {"schema_version", "kind", "config", "results", "metadata"}
    results = document["results"]
    assert results["n"] == 600
    assert set(results["truth"]) == {"0", "1"}
    assert len(results["estimates"]) == 2
    assert "threads" not in document["config"]


def test_report_does_not_depend_on_threads():
    values = {"dgp": DGP_D, "x0": [1], "bandwidth": 0.8, "seed": 5}
    one, _ = perform(parse_config({**values, "threads": 1}))
    two, _ = perform(parse_config({**values, "threads": 2}))
    assert deterministic_part(one) == deterministic_part(two)
    assert one["metadata"]["threads"] == 1


def test_simulate_returns_the_dataset():
    document, data = perform(parse_config({"subcommand": "simulate", "dgp": {"name": "DGP-C", "n": 50}}))
    assert data.n == 50
    assert set(document["results"]["columns"]) == {"y", "x", "z1", "w1"}
    assert len(document["results"]["beta"]) == 4


def test_run_exit_codes(tmp_path):
    out = tmp_path / "estimate.json"
    ok = parse_config({"dgp": DGP_D, "x0": [1], "estimator": "naive", "out": str(out)})
    assert run(ok) == EXIT_OK
    assert orjson.loads(out.read_bytes())["kind"] == "estimate"

    no_level = parse_config({"dgp": {"name": "DGP-C", "n": 200}, "x0": [0.5], "estimator": "semiparametric-discrete",
                             "bandwidth": 0.8})
    assert run(no_level) == EXIT_ESTIMATION

    missing = parse_config({"data": str(tmp_path / "absent.csv"), "x0": [1]})
    assert run(missing) == EXIT_CONFIG


def test_mc_run_writes_json_and_csv(tmp_path):
    out = tmp_path / "mc.json"
    config = parse_config({
        "subcommand": "mc", "dgp": {"name": "DGP-C", "n": 150}, "estimator": "naive", "reps": 3,
        "threads": 1, "out": str(out),
    })
    assert run(config) == EXIT_OK
    document = orjson.loads(out.read_bytes())
    assert len(document["results"]["cells"]) == 1
    assert "cell_wall_seconds" in document["metadata"]
    assert (tmp_path / "mc.csv").read_text().startswith("dgp,estimator,n,x0")


def test_dumps_sorts_keys_and_maps_nan_to_null():
    payload = dumps({"b": float("nan"), "a": 1})
    assert payload.index(b'"a"') < payload.index(b'"b"')
    assert orjson.loads(payload) == {"a": 1, "b": None}
    assert payload.endswith(b"\n")


def test_deterministic_part_drops_metadata():
    first = build_report("estimate", {}, {"mu": 1.0}, {"wall_seconds": 0.1})
    second = build_report("estimate", {}, {"mu": 1.0}, {"wall_seconds": 0.2})
    assert deterministic_part(first) == deterministic_part(second)
    assert dumps(first) != dumps(second)


def test_write_table_without_output():
    assert write_table(None, None) is None


def test_mc_sizes_are_validated_like_the_dgp(tmp_path):
    config = parse_config({"subcommand": "mc", "dgp": DGP_D, "estimator": "naive", "sizes": [5, 50, 500]})
    with pytest.raises(ConfigError):
        perform(config)
    assert run(config.model_copy(update={"out": str(tmp_path / "mc.json")})) == EXIT_CONFIG
