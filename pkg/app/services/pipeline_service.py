"""
Estimator dispatch shared by the CLI, the HTTP routes and the Monte Carlo
driver: one first stage per dataset, then the chosen ASF estimator at every
requested x0.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from config import Config
from ..utils.errors import ConfigError
from .dataset_service import Dataset, TrimmingSet
from .first_stage_service import FirstStageFit, ProxyModel, fit_mle, fixed_first_stage, influence_check
from .inference_service import AsfEstimate
from .kernel_service import KernelSpec
from .locpoly_service import LocPolyConfig, SmoothingMode
from .nonparametric_service import asf_nonparametric, estimate_conditional_cdf, small_ball_diagnostic
from .parametric_service import KroneckerBasis, asf_conditional, asf_naive, asf_unconditional, fit_ols
from .semiparametric_service import (
    bandwidth_for,
    common_support_diagnostic,
    estimate_asf_continuous,
    estimate_asf_discrete,
)

logger = logging.getLogger(__name__)

ESTIMATORS = (
    "semiparametric",
    "semiparametric-continuous",
    "semiparametric-discrete",
    "parametric",
    "parametric-unconditional",
    "nonparametric",
    "naive",
)

DEFAULT_DEGREE = {SmoothingMode.CONTINUOUS_X: 1, SmoothingMode.DISCRETE_X: 2}


@dataclass(frozen=True)
class PipelineSettings:
    estimator: str = "semiparametric"
    degree: int | None = None
    bandwidth: float | None = None
    kernel: str = "triweight"
    trim: TrimmingSet = field(default_factory=TrimmingSet)
    location_terms: tuple[str, ...] | None = None
    scale_terms: tuple[str, ...] = ("1",)
    proxy: str | None = None
    fixed_scale: float | None = None
    information: str = "opg"
    # hold the first stage at this beta (zero influence) instead of fitting it
    fixed_beta: tuple[float, ...] | None = None
    p1_terms: tuple[str, ...] | None = None
    p2_terms: tuple[str, ...] | None = None
    bandwidth_fs: float | None = None
    grid_size: int = 101
    n_jobs: int | None = None

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ConfigError(f"unknown estimator {self.estimator!r}; choose one of {', '.join(ESTIMATORS)}")

    @property
    def uses_trim(self) -> bool:
        return self.estimator not in ("parametric-unconditional", "naive")

    def proxy_model(self, data: Dataset) -> ProxyModel:
        location = self.location_terms or ("1", "x") + data.z_names
        return ProxyModel(
            location_terms=location, scale_terms=self.scale_terms, proxy=self.proxy,
            fixed_scale=self.fixed_scale, information=self.information,
        )

    def mode(self, data: Dataset) -> SmoothingMode:
        if self.estimator == "semiparametric-continuous":
            return SmoothingMode.CONTINUOUS_X
        if self.estimator == "semiparametric-discrete":
            return SmoothingMode.DISCRETE_X
        return SmoothingMode.DISCRETE_X if data.x_discrete else SmoothingMode.CONTINUOUS_X


@dataclass(frozen=True)
class PipelineResult:
    estimates: list[AsfEstimate]
    first_stage: FirstStageFit | None = None

    def to_dict(self) -> dict:
        return {
            "first_stage": None if self.first_stage is None else self.first_stage.to_dict(),
            "estimates": [e.to_dict() for e in self.estimates],
        }


def first_stage(data: Dataset, settings: PipelineSettings) -> FirstStageFit:
    model = settings.proxy_model(data)
    if settings.fixed_beta is not None:
        return fixed_first_stage(data, model, settings.fixed_beta)
    return fit_mle(data, model)


def locpoly_config(data: Dataset, fs: FirstStageFit, settings: PipelineSettings) -> LocPolyConfig:
    mode = settings.mode(data)
    degree = DEFAULT_DEGREE[mode] if settings.degree is None else settings.degree
    bandwidth = settings.bandwidth or bandwidth_for(data, fs, degree, mode)
    return LocPolyConfig(degree=degree, bandwidth=bandwidth, kernel=KernelSpec(settings.kernel), mode=mode)


def _basis(data: Dataset, fs: FirstStageFit, settings: PipelineSettings) -> KroneckerBasis:
    if settings.p2_terms is not None:
        p2 = settings.p2_terms
    elif fs.d_v == 1:
        p2 = ("1", "v", "v^2")
    else:
        p2 = ("1", "v1", "v2", "v1^2", "v2^2", "v1*v2")
    if settings.p1_terms is not None:
        return KroneckerBasis(p1_terms=settings.p1_terms, p2_terms=p2)
    if data.x_discrete:
        return KroneckerBasis.for_levels(data.levels(), p2_terms=p2)
    return KroneckerBasis(p1_terms=("1", "x", "x^2"), p2_terms=p2)


def run_estimator(data: Dataset, settings: PipelineSettings, x0_list) -> PipelineResult:
    """Estimate the ASF at every x0 with the configured estimator."""
    x0_list = [float(x) for x in x0_list]
    if not x0_list:
        raise ConfigError("at least one evaluation point x0 is required")
    estimator = settings.estimator

    if estimator == "naive":
        return PipelineResult([asf_naive(x0, data, settings.p1_terms) for x0 in x0_list])

    if estimator == "nonparametric":
        cdfs = estimate_conditional_cdf(data, settings.bandwidth_fs, settings.grid_size, settings.proxy,
                                        kernel=KernelSpec(settings.kernel))
        return PipelineResult([
            asf_nonparametric(x0, data, settings.trim, settings.bandwidth, cdfs=cdfs, kernel=KernelSpec(settings.kernel))
            for x0 in x0_list
        ])

    fs = first_stage(data, settings)
    if estimator in ("parametric", "parametric-unconditional"):
        fit = fit_ols(data, fs, _basis(data, fs, settings))
        if estimator == "parametric":
            estimates = [asf_conditional(x0, fit, fs, settings.trim, data) for x0 in x0_list]
        else:
            estimates = [asf_unconditional(x0, fit, fs) for x0 in x0_list]
        return PipelineResult(estimates, fs)

    config = locpoly_config(data, fs, settings)
    if config.mode is SmoothingMode.DISCRETE_X:
        estimates = [estimate_asf_discrete(x0, data, fs, settings.trim, config, settings.n_jobs) for x0 in x0_list]
    else:
        estimates = [estimate_asf_continuous(x0, data, fs, settings.trim, config, settings.n_jobs) for x0 in x0_list]
    return PipelineResult(estimates, fs)


def default_radii(cdfs, count: int = 8) -> np.ndarray:
    """Halving radii starting at the L2 norm of the pointwise sd of the CDF rows."""
    spread = float(cdfs.norm.norm(np.std(cdfs.values, axis=0)))
    top = spread if spread > 0 else 1.0
    return top * 0.5 ** np.arange(count)


def diagnose(data: Dataset, settings: PipelineSettings, x0_list, radii=None) -> dict:
    """Common-support coverage per x0, first-stage influence check and the small-ball table."""
    x0_list = [float(x) for x in x0_list]
    fs = first_stage(data, settings)
    config = locpoly_config(data, fs, settings)
    mask = settings.trim.indicator(data)
    coverage = {
        f"{x0:g}": common_support_diagnostic(x0, data, fs, mask, config.bandwidth, data.x_discrete)
        for x0 in x0_list
    }
    cdfs = estimate_conditional_cdf(data, settings.bandwidth_fs, settings.grid_size, settings.proxy)
    radii = default_radii(cdfs) if radii is None else np.asarray(radii, dtype=float)
    return {
        "first_stage": fs.to_dict(),
        "influence": influence_check(fs, data, jackknife=0).to_dict(),
        "bandwidth": config.bandwidth,
        "support_coverage": coverage,
        "trimming_share": float(np.mean(mask)),
        "small_ball": small_ball_diagnostic(cdfs, radii),
        "coverage_threshold": 0.95,
        "max_failed_share": Config.MAX_FAILED_SHARE,
    }
