"""
Multivariate local polynomial regression by kernel-weighted least squares.

For an evaluation point e the regressors are scaled as u_i = (r_i - e) / b and
the normal equations S_n beta = X'W y / n are solved with
S_n = X'W X / n and W = diag(b^{-d} K(u_i)). Coefficients are returned divided
by b^{|pi|}, so the entry for pi estimates the pi-th derivative over pi!.

In discrete-x mode the leading ``x_dims`` coordinates are matched exactly
(weight 1{x_i = x_0}) and only the remaining coordinates are smoothed.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from joblib import Parallel, delayed
from scipy import linalg

from ..utils.errors import (
    ConfigError,
    DegreeTooLow,
    DimensionMismatch,
    EstimationError,
    InsufficientLocalData,
    SingularDesign,
)
from .kernel_service import KernelSpec, MultiIndexBasis, design_matrix, enumerate_multi_indices, product_kernel

logger = logging.getLogger(__name__)


class SmoothingMode(str, Enum):
    CONTINUOUS_X = "continuous-x"
    DISCRETE_X = "discrete-x"


@dataclass(frozen=True)
class LocPolyConfig:
    degree: int = 1
    bandwidth: float = 1.0
    kernel: KernelSpec = field(default_factory=KernelSpec)
    ridge_epsilon: float = 1e-12
    mode: SmoothingMode = SmoothingMode.CONTINUOUS_X
    # leading regressor columns that form the x block
    x_dims: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mode", SmoothingMode(self.mode))
        if self.degree < 0:
            raise ConfigError(f"degree must be non-negative, got {self.degree}")
        if not np.isfinite(self.bandwidth) or self.bandwidth <= 0:
            raise ConfigError(f"bandwidth must be positive, got {self.bandwidth}")
        if not 0 <= self.ridge_epsilon <= 1e-8:
            raise ConfigError(f"ridge_epsilon must lie in [0, 1e-8], got {self.ridge_epsilon}")
        if self.x_dims < 0:
            raise ConfigError(f"x_dims must be non-negative, got {self.x_dims}")

    def replace(self, **changes) -> "LocPolyConfig":
        values = {name: getattr(self, name) for name in self.__dataclass_fields__}
        values.update(changes)
        return LocPolyConfig(**values)


@dataclass(frozen=True)
class LocPolyFit:
    coefficients: np.ndarray
    S_n: np.ndarray
    effective_n: int
    basis: MultiIndexBasis
    bandwidth: float
    # first smoothed coordinate that belongs to v
    v_offset: int
    # e1' S_n^{-1}
    e1_s_inv: np.ndarray = field(repr=False)
    # equivalent-kernel weights: value == weights @ y
    weights: np.ndarray = field(repr=False)


def _split(regressors, eval_point, config):
    if config.mode is SmoothingMode.DISCRETE_X:
        k = config.x_dims
        if k >= regressors.shape[1]:
            raise DimensionMismatch("discrete-x mode needs at least one smoothed coordinate")
        match = np.all(regressors[:, :k] == eval_point[:k], axis=1)
        return regressors[:, k:], eval_point[k:], match, 0
    if config.x_dims > regressors.shape[1]:
        raise DimensionMismatch(
            f"x_dims={config.x_dims} exceeds the {regressors.shape[1]} regressor columns"
        )
    return regressors, eval_point, None, config.x_dims


def _solve(s_n, rhs, ridge_epsilon):
    scale = float(np.mean(np.diag(s_n)))
    threshold = ridge_epsilon * scale
    smallest = float(np.linalg.eigvalsh(s_n)[0])
    if scale <= 0 or smallest <= threshold:
        raise SingularDesign(
            f"local design is singular (smallest eigenvalue {smallest:.3e}, threshold {threshold:.3e})"
        )
    try:
        factor = linalg.cho_factor(s_n)
    except linalg.LinAlgError:
        logger.debug("cholesky failed, retrying with ridge %.3e", threshold)
        try:
            factor = linalg.cho_factor(s_n + threshold * np.eye(s_n.shape[0]))
        except linalg.LinAlgError as exc:
            raise SingularDesign("local design could not be factorized") from exc
    beta = linalg.cho_solve(factor, rhs)
    e1 = np.zeros(s_n.shape[0])
    e1[0] = 1.0
    e1_s_inv = linalg.cho_solve(factor, e1)
    return beta, e1_s_inv


def fit_at(regressors, response, eval_point, config: LocPolyConfig) -> LocPolyFit:
    """
    Local polynomial fit at one evaluation point.

    Parameters
    ----------
    regressors : array (n, d)
        Regressor rows; in continuous-x mode the first ``config.x_dims`` columns
        are x and the rest are v.
    response : array (n,)
    eval_point : array (d,)
    config : LocPolyConfig

    Raises
    ------
    InsufficientLocalData
        Fewer observations with positive weight than basis terms.
    SingularDesign
        The local design matrix is singular beyond the ridge threshold.
    """
    regressors = np.asarray(regressors, dtype=float)
    if regressors.ndim == 1:
        regressors = regressors[:, None]
    response = np.asarray(response, dtype=float)
    eval_point = np.atleast_1d(np.asarray(eval_point, dtype=float))
    n = regressors.shape[0]
    if response.shape != (n,):
        raise DimensionMismatch(f"response has shape {response.shape}, expected ({n},)")
    if eval_point.size != regressors.shape[1]:
        raise DimensionMismatch(
            f"evaluation point has {eval_point.size} coordinates, regressors have {regressors.shape[1]}"
        )

    smoothed, center, match, v_offset = _split(regressors, eval_point, config)
    d = smoothed.shape[1]
    b = config.bandwidth
    scaled = (smoothed - center) / b
    kern = product_kernel(config.kernel, scaled) / b ** d
    if match is not None:
        kern = np.where(match, kern, 0.0)
    active = np.flatnonzero(kern > 0)

    basis = enumerate_multi_indices(d, config.degree)
    if active.size < basis.size:
        raise InsufficientLocalData(
            f"{active.size} observations with positive weight, {basis.size} required"
        )
    design = design_matrix(basis, scaled[active])
    weighted = design * kern[active, None]
    s_n = design.T @ weighted / n
    rhs = weighted.T @ response[active] / n
    scaled_beta, e1_s_inv = _solve(s_n, rhs, config.ridge_epsilon)

    weights = np.zeros(n)
    weights[active] = weighted @ e1_s_inv / n
    return LocPolyFit(
        coefficients=scaled_beta / b ** basis.orders,
        S_n=s_n,
        effective_n=int(active.size),
        basis=basis,
        bandwidth=b,
        v_offset=v_offset,
        e1_s_inv=e1_s_inv,
        weights=weights,
    )


def value(fit: LocPolyFit) -> float:
    return float(fit.coefficients[0])


def gradient_v(fit: LocPolyFit) -> np.ndarray:
    """Estimated gradient of the regression function in the v coordinates."""
    if fit.basis.max_degree < 1:
        raise DegreeTooLow("a gradient needs a local polynomial of degree at least 1")
    units = fit.basis.unit_positions()[fit.v_offset:]
    return fit.coefficients[units].copy()


def _try_fit(regressors, response, eval_point, config):
    try:
        return fit_at(regressors, response, eval_point, config)
    except EstimationError:
        return None


def fit_many(regressors, response, eval_points, config: LocPolyConfig, n_jobs=None):
    """
    Fit at every row of ``eval_points``.

    Returns the list of fits (``None`` where the local fit failed) in input
    order together with the indices of the failed points.
    """
    eval_points = np.asarray(eval_points, dtype=float)
    if eval_points.ndim == 1:
        eval_points = eval_points[:, None]
    regressors = np.asarray(regressors, dtype=float)
    response = np.asarray(response, dtype=float)
    if n_jobs in (None, 1) or len(eval_points) < 64:
        fits = [_try_fit(regressors, response, e, config) for e in eval_points]
    else:
        fits = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_try_fit)(regressors, response, e, config) for e in eval_points
        )
    failed = [i for i, f in enumerate(fits) if f is None]
    return fits, failed
