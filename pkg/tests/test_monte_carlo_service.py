'''
Tests the Monte Carlo driver and the rate check.
'''
import numpy as np
import pytest

from app.services.inference_service import Rate
from app.services.monte_carlo_service import (
    McCell,
    McCellResult,
    McReport,
    _theory_exponent,
    rate_check,
    run_monte_carlo,
)
from app.services.pipeline_service import PipelineSettings
from app.services.simulation_service import DgpSpec, true_asf
from app.utils.errors import ConfigError, ReplicationFailure

SMALL = McCell(dgp=DgpSpec(name="DGP-C", n=200), estimators=("parametric", "naive"), x0=(0.0, 1.0), replications=4)


def test_small_run_reports_every_cell():
    report = run_monte_carlo([SMALL], master_seed=7, n_jobs=1)
    assert len(report.cells) == 4
    frame = report.to_frame()
    assert set(frame["estimator"]) == {"parametric", "naive"}
    assert (frame["failures"] == 0).all()
    assert (frame["rmse"] >= frame["bias"].abs()).all()
    assert (frame["median_abs_error"] >= 0).all()
    parametric = frame[(frame["estimator"] == "parametric") & (frame["x0"] == 1.0)].iloc[0]
    assert parametric["truth"] == pytest.approx(true_asf(DgpSpec(name="DGP-C"), 1.0))
    assert parametric["theory_exponent"] == -0.5
    naive = frame[(frame["estimator"] == "naive") & (frame["x0"] == 1.0)].iloc[0]
    # the naive estimator targets the untrimmed ASF
    assert naive["truth"] == pytest.approx(2.0)
    assert report.to_dict()["master_seed"] == 7


def test_parallel_run_matches_serial_run():
    serial = run_monte_carlo([SMALL], master_seed=3, n_jobs=1).to_frame()
    parallel = run_monte_carlo([SMALL], master_seed=3, n_jobs=2).to_frame()
    assert list(serial.columns) == list(parallel.columns)
    for column in ("bias", "rmse", "coverage", "mc_variance"):
        np.testing.assert_allclose(serial[column].astype(float), parallel[column].astype(float), rtol=1e-12)


def test_constant_outcome_is_always_covered():
    cell = McCell(dgp=DgpSpec(name="DGP-CONST", n=150), estimators=("parametric",), x0=(0.5,), replications=3)
    result = run_monte_carlo([cell], n_jobs=1).cells[0]
    assert result.truth == 1.0
    assert result.coverage == 1.0
    assert abs(result.bias) < 1e-10


def test_failing_estimator_raises():
    cell = McCell(dgp=DgpSpec(name="DGP-C", n=100), estimators=("semiparametric-discrete",), x0=(0.5,),
                  replications=2)
    with pytest.raises(ReplicationFailure):
        run_monte_carlo([cell], PipelineSettings(bandwidth=0.8), n_jobs=1)


def test_cell_validation():
    with pytest.raises(ConfigError):
        McCell(dgp=DgpSpec(), estimators=("naive",), x0=(1.0,), replications=1)
    with pytest.raises(ConfigError):
        McCell(dgp=DgpSpec(), estimators=("naive",), x0=(), replications=5)
    with pytest.raises(ConfigError):
        McCell(dgp=DgpSpec(), estimators=(), x0=(1.0,), replications=5)


def _cell(n, rmse):
    return McCellResult(
        dgp="DGP-C", estimator="parametric", n=n, x0=1.0, truth=2.0, replications=100, failures=0,
        bias=0.0, rmse=rmse, median_abs_error=rmse, coverage=0.95, mean_sigma2=1.0, mc_variance=rmse ** 2,
        variance_ratio=1.0, rate="sqrt-n", theory_exponent=-0.5,
    )


def test_rate_check_recovers_the_slope():
    report = McReport(cells=[_cell(n, 3.0 / np.sqrt(n)) for n in (250, 1000, 4000)], ci_level=0.95, master_seed=0)
    (row,) = rate_check(report)
    assert row["slope"] == pytest.approx(-0.5)
    assert row["deviation"] == pytest.approx(0.0, abs=1e-10)


def test_rate_check_needs_three_sizes():
    report = McReport(cells=[_cell(n, 1 / n) for n in (250, 1000)], ci_level=0.95, master_seed=0)
    with pytest.raises(ConfigError):
        rate_check(report)


def test_theory_exponent_follows_the_bandwidth_rule():
    diagnostics = {"d_v": 1, "degree": 1}
    # the default rule sits at the midpoint of (1/5, 1/3)
    assert _theory_exponent(Rate.SQRT_N_B.value, diagnostics) == pytest.approx(-11 / 30)
    assert _theory_exponent(Rate.SQRT_N_B.value, diagnostics, fixed_bandwidth=True) == -0.5
    assert _theory_exponent(Rate.SQRT_N.value, diagnostics) == -0.5
    assert _theory_exponent(Rate.CONSISTENCY.value, diagnostics) is None


def test_fixed_bandwidth_run_reports_the_parametric_exponent():
    cell = McCell(dgp=DgpSpec(name="DGP-C", n=200), estimators=("semiparametric",), x0=(0.0,), replications=2)
    (result,) = run_monte_carlo([cell], PipelineSettings(bandwidth=0.9, degree=1), n_jobs=1).cells
    assert result.rate == Rate.SQRT_N_B.value
    assert result.theory_exponent == -0.5
