"""
Monte Carlo driver: repeated draws from a reference design, the full
estimation pipeline on each draw and bias / RMSE / coverage per cell.

Replication r of a design uses the stream seeded by (master seed, r), and
results are reduced in replication order, so serial and parallel runs give
identical numbers.
"""
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from tqdm import tqdm

from config import Config
from ..utils.errors import ConfigError, EstimationError, ReplicationFailure
from .inference_service import Rate
from .locpoly_service import SmoothingMode
from .pipeline_service import PipelineSettings, run_estimator
from .semiparametric_service import admissible_window
from .simulation_service import DgpSpec, generate, true_asf

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class McCell:
    dgp: DgpSpec
    estimators: tuple[str, ...]
    x0: tuple[float, ...]
    replications: int

    def __post_init__(self):
        if self.replications < 2:
            raise ConfigError(f"a Monte Carlo cell needs at least 2 replications, got {self.replications}")
        if not self.x0:
            raise ConfigError("a Monte Carlo cell needs at least one x0")
        if not self.estimators:
            raise ConfigError("a Monte Carlo cell needs at least one estimator")


@dataclass(frozen=True)
class McCellResult:
    dgp: str
    estimator: str
    n: int
    x0: float
    truth: float
    replications: int
    failures: int
    bias: float
    rmse: float
    median_abs_error: float
    coverage: float | None
    mean_sigma2: float | None
    mc_variance: float
    variance_ratio: float | None
    rate: str
    theory_exponent: float | None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class McReport:
    cells: list[McCellResult]
    ci_level: float
    master_seed: int
    wall_times: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "ci_level": self.ci_level,
            "master_seed": self.master_seed,
            "cells": [c.to_dict() for c in self.cells],
        }

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([c.to_dict() for c in self.cells])


def _covers(ci, truth) -> bool:
    slack = 1e-9 * max(1.0, abs(truth))
    return ci[0] - slack <= truth <= ci[1] + slack


def _theory_exponent(rate, diagnostics, fixed_bandwidth=False):
    """Expected slope of log RMSE on log n under the bandwidth rule actually used."""
    if rate == Rate.SQRT_N.value:
        return -0.5
    if rate == Rate.SQRT_N_B.value:
        if fixed_bandwidth:
            return -0.5
        lower, upper = admissible_window(1, diagnostics.get("d_v", 1), diagnostics.get("degree", 1),
                                         SmoothingMode.CONTINUOUS_X)
        return -(1.0 - 0.5 * (lower + upper)) / 2.0
    return None


def _replicate(dgp: DgpSpec, replication: int, estimators, x0, settings: PipelineSettings):
    data, _ = generate(dgp, replication)
    out = {}
    for estimator in estimators:
        try:
            result = run_estimator(data, replace(settings, estimator=estimator, n_jobs=1), x0)
            out[estimator] = [
                (e.mu_hat, e.sigma2_hat, e.rate_denominator, e.ci, e.rate.value, e.diagnostics)
                for e in result.estimates
            ]
        except EstimationError as exc:
            logger.debug("replication %d of %s failed for %s: %s", replication, dgp.name, estimator, exc)
            out[estimator] = None
    return out


def _aggregate(dgp, estimator, k, x0, truth, rows, replications, failures, fixed_bandwidth=False):
    mus = [r[k][0] for r in rows]
    m = len(mus)
    mean_mu = math.fsum(mus) / m
    bias = mean_mu - truth
    rmse = math.sqrt(math.fsum((mu - truth) ** 2 for mu in mus) / m)
    median_abs_error = float(np.median(np.abs(np.asarray(mus) - truth)))
    mc_variance = math.fsum((mu - mean_mu) ** 2 for mu in mus) / max(m - 1, 1)
    rate = rows[0][k][4]
    has_variance = rate != Rate.CONSISTENCY.value
    coverage = mean_sigma2 = ratio = None
    if has_variance:
        coverage = sum(_covers(r[k][3], truth) for r in rows) / m
        mean_sigma2 = math.fsum(r[k][1] for r in rows) / m
        scaled = math.fsum(r[k][1] / r[k][2] for r in rows) / m
        ratio = scaled / mc_variance if mc_variance > 0 else None
    return McCellResult(
        dgp=dgp.name, estimator=estimator, n=dgp.n, x0=x0, truth=truth, replications=replications,
        failures=failures, bias=bias, rmse=rmse, median_abs_error=median_abs_error, coverage=coverage,
        mean_sigma2=mean_sigma2, mc_variance=mc_variance, variance_ratio=ratio, rate=rate,
        theory_exponent=_theory_exponent(rate, rows[0][k][5], fixed_bandwidth),
    )


def run_monte_carlo(cells, settings: PipelineSettings = PipelineSettings(), master_seed: int = 0,
                    n_jobs: int | None = None, progress: bool = False) -> McReport:
    """
    Run every cell and aggregate per (design, estimator, n, x0).

    Raises ReplicationFailure when more than 2% of the replications of any
    estimator in a cell fail.
    """
    n_jobs = n_jobs or Config.THREADS or -1
    results = []
    wall_times = {}
    for cell in cells:
        dgp = cell.dgp.model_copy(update={"seed": master_seed})
        started = time.perf_counter()
        reps = range(cell.replications)
        if progress:
            reps = tqdm(reps, desc=f"{dgp.name} n={dgp.n}", leave=False)
        outputs = Parallel(n_jobs=n_jobs)(
            delayed(_replicate)(dgp, r, cell.estimators, cell.x0, settings) for r in reps
        )
        wall_times[f"{dgp.name}/n={dgp.n}"] = time.perf_counter() - started

        for estimator in cell.estimators:
            rows = [o[estimator] for o in outputs if o[estimator] is not None]
            failures = cell.replications - len(rows)
            if failures > Config.MAX_FAILED_REPLICATIONS * cell.replications:
                raise ReplicationFailure(
                    f"{failures} of {cell.replications} replications of {estimator} on {dgp.name} "
                    f"(n={dgp.n}) failed"
                )
            quantiles = settings.trim.quantiles if estimator not in ("parametric-unconditional", "naive") else None
            if settings.trim.box is not None:
                logger.warning("explicit trimming boxes have no population truth; using the quantile default")
                quantiles = Config.TRIM_QUANTILES
            for k, x0 in enumerate(cell.x0):
                truth = true_asf(dgp, x0, quantiles)
                results.append(_aggregate(dgp, estimator, k, float(x0), truth, rows, cell.replications, failures,
                                          fixed_bandwidth=settings.bandwidth is not None))
        logger.info("Monte Carlo cell %s n=%d done: %d replications", dgp.name, dgp.n, cell.replications)
    return McReport(cells=results, ci_level=Config.CI_LEVEL, master_seed=master_seed, wall_times=wall_times)


def rate_check(report: McReport) -> list[dict]:
    """
    Slope of log RMSE on log n per (design, estimator, x0), with the deviation
    from the exponent implied by the estimator's rate.
    """
    frame = report.to_frame()
    out = []
    for (dgp, estimator, x0), group in frame.groupby(["dgp", "estimator", "x0"], sort=True):
        group = group.sort_values("n")
        if group["n"].nunique() < 3:
            raise ConfigError(f"rate check needs at least 3 sample sizes for {estimator} on {dgp}")
        slope = float(np.polyfit(np.log(group["n"]), np.log(group["rmse"]), 1)[0])
        theory = group["theory_exponent"].iloc[0]
        theory = None if theory is None or pd.isna(theory) else float(theory)
        out.append({
            "dgp": dgp, "estimator": estimator, "x0": float(x0), "slope": slope,
            "theory": theory, "deviation": None if theory is None else slope - theory,
        })
    return out
