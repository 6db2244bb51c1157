"""
Partial-means ASF estimators on generated control values.

The second stage regresses Y on (X, V_hat) by local polynomials, the third
stage averages the fit at (x0, V_hat_i) over the trimmed sample. Continuous X
smooths over (x, v); discrete X matches x exactly and smooths over v only.

Both variance estimators are written through the equivalent-kernel weights of
the local fits: with l_j the weights of the fit at evaluation point j and
A_i = sum_j T_j l_j(i), the kernel double sums collapse to A_i eps_i.
"""
import logging
from dataclasses import dataclass

import numpy as np

from config import Config
from ..utils.errors import (
    ConfigError,
    DegreeTooLow,
    EmptyTrim,
    InfeasibleWindow,
    InsufficientLocalData,
    NoObservationsAtLevel,
)
from .dataset_service import Dataset, TrimmingSet, trimming_share
from .first_stage_service import FirstStageFit, theta_jacobian
from .inference_service import AsfEstimate, Rate
from .kernel_service import enumerate_multi_indices, kappa_gradient
from .locpoly_service import LocPolyConfig, SmoothingMode, fit_many, gradient_v

logger = logging.getLogger(__name__)

RULE_OF_THUMB = 1.06


def admissible_window(d_x: int, d_v: int, q: int, mode) -> tuple[float, float]:
    """
    Open interval of exponents gamma for b = c n^-gamma allowed by the rate
    conditions of the estimator.

    Continuous X: n b^(dx+2(q+1)) -> 0 bounds gamma from below; the log-n
    condition bounds it by min(1/(dx+2dv), 1/(3dx)) from above.
    Discrete X: n b^(2(q+1)) -> 0 from below; n b^4 -> inf and the log-n
    condition give min(1/4, 1/(2 max(dv, 3/2))) from above.
    """
    mode = SmoothingMode(mode)
    if q < 0 or d_v < 1:
        raise ConfigError(f"invalid window request d_v={d_v}, q={q}")
    if mode is SmoothingMode.CONTINUOUS_X:
        if d_x < 1:
            raise ConfigError("continuous-x smoothing needs d_x >= 1")
        lower = 1.0 / (d_x + 2 * (q + 1))
        upper = min(1.0 / (d_x + 2 * d_v), 1.0 / (3 * d_x))
        bound = f"1/(d_x+2(q+1)) = {lower:.4f} < min(1/(d_x+2d_v), 1/(3d_x)) = {upper:.4f}"
    else:
        lower = 1.0 / (2 * (q + 1))
        upper = min(0.25, 1.0 / (2 * max(d_v, 1.5)))
        bound = f"1/(2(q+1)) = {lower:.4f} < min(1/4, 1/(2max(d_v,3/2))) = {upper:.4f}"
    if not lower < upper:
        raise InfeasibleWindow(
            f"no bandwidth exponent satisfies {bound} for d_x={d_x}, d_v={d_v}, q={q}",
            lower=lower, upper=upper,
        )
    return lower, upper


def default_bandwidth(n: int, d_x: int, d_v: int, q: int, mode, scale: float = 1.0) -> float:
    """1.06 * scale * n^-gamma with gamma at the midpoint of the admissible window."""
    if n < 2:
        raise ConfigError(f"a bandwidth needs n >= 2, got {n}")
    if not scale > 0:
        raise ConfigError(f"bandwidth scale must be positive, got {scale}")
    lower, upper = admissible_window(d_x, d_v, q, mode)
    gamma = 0.5 * (lower + upper)
    return float(RULE_OF_THUMB * scale * n ** (-gamma))


def _pooled_sd(columns: np.ndarray) -> float:
    sd = float(np.sqrt(np.mean(np.var(columns, axis=0, ddof=1))))
    return sd if sd > 0 else 1.0


def bandwidth_for(data: Dataset, fs: FirstStageFit, q: int, mode) -> float:
    """Default bandwidth scaled by the pooled sample sd of the smoothed coordinates."""
    mode = SmoothingMode(mode)
    v = fs.control_values
    smoothed = np.column_stack([data.x, v]) if mode is SmoothingMode.CONTINUOUS_X else v
    b = default_bandwidth(data.n, 1, fs.d_v, q, mode, _pooled_sd(smoothed))
    logger.info("default %s bandwidth %.4g (n=%d, d_v=%d, q=%d)", mode.value, b, data.n, fs.d_v, q)
    return b


def common_support_diagnostic(x0, data: Dataset, fs: FirstStageFit, trim_mask: np.ndarray,
                              bandwidth: float, discrete: bool) -> float:
    """
    Share of trimmed V_hat_i inside the coordinate-wise range of V_hat among
    observations with X at (or within one bandwidth of) x0.
    """
    v = fs.control_values
    near = data.x == x0 if discrete else np.abs(data.x - x0) <= bandwidth
    if not near.any() or not trim_mask.any():
        coverage = 0.0
    else:
        lo, hi = v[near].min(axis=0), v[near].max(axis=0)
        inside = np.all((v[trim_mask] >= lo) & (v[trim_mask] <= hi), axis=1)
        coverage = float(np.mean(inside))
    if coverage < 0.95:
        logger.warning("common support: only %.1f%% of trimmed control values are covered at x0=%g",
                       100 * coverage, x0)
    return coverage


@dataclass
class _PartialMean:
    """State shared by a point estimate and its variance."""
    x0: float
    config: LocPolyConfig
    regressors: np.ndarray
    trim: np.ndarray
    tau: float
    fits: dict
    m_hat: np.ndarray
    mu_hat: float
    dropped: int


def _evaluation_points(x0, v, rows):
    return np.column_stack([np.full(len(rows), x0), v[rows]])


def _check_failures(failed_rows, total):
    if not failed_rows:
        return
    share = len(failed_rows) / max(total, 1)
    logger.warning("dropped %d of %d evaluation points whose local fit failed", len(failed_rows), total)
    if share > Config.MAX_FAILED_SHARE:
        raise InsufficientLocalData(
            f"{len(failed_rows)} of {total} local fits failed ({100 * share:.1f}% > "
            f"{100 * Config.MAX_FAILED_SHARE:.0f}%)",
            indices=failed_rows,
        )


def _partial_mean(x0, data, fs, trim, config, n_jobs, extra_rows=()):
    mask = trim.indicator(data) if isinstance(trim, TrimmingSet) else np.asarray(trim, dtype=bool)
    trimming_share(mask)
    regressors = np.column_stack([data.x, fs.control_values])
    rows = np.union1d(np.flatnonzero(mask), np.asarray(extra_rows, dtype=int))
    fits_list, failed = fit_many(regressors, data.y, _evaluation_points(x0, fs.control_values, rows),
                                 config, n_jobs=n_jobs)
    fits = {int(i): f for i, f in zip(rows, fits_list) if f is not None}
    failed_rows = [int(rows[k]) for k in failed]
    trimmed_failed = [i for i in failed_rows if mask[i]]
    _check_failures(trimmed_failed, int(mask.sum()))

    effective = mask.copy()
    effective[trimmed_failed] = False
    if not effective.any():
        raise EmptyTrim("every trimmed evaluation point failed")
    m_hat = np.full(data.n, np.nan)
    for i, f in fits.items():
        m_hat[i] = f.coefficients[0]
    tau = float(np.mean(effective))
    mu_hat = float(np.mean(m_hat[effective]))
    return _PartialMean(
        x0=float(x0), config=config, regressors=regressors, trim=effective, tau=tau,
        fits=fits, m_hat=m_hat, mu_hat=mu_hat, dropped=len(trimmed_failed),
    )


def _trimmed_weight_sum(pm: _PartialMean, n: int) -> np.ndarray:
    """A_i = sum over trimmed j of the equivalent-kernel weight l_j(i)."""
    total = np.zeros(n)
    for j in np.flatnonzero(pm.trim):
        total += pm.fits[int(j)].weights
    return total


def _diagnostics(pm, data, fs, coverage, **extra):
    return {
        "tau_hat": pm.tau,
        "n_trimmed": int(pm.trim.sum()),
        "dropped_points": pm.dropped,
        "mean_effective_n": float(np.mean([pm.fits[int(j)].effective_n for j in np.flatnonzero(pm.trim)])),
        "degree": pm.config.degree,
        "kernel": pm.config.kernel.family.value,
        "d_v": fs.d_v,
        "support_coverage": coverage,
        **extra,
    }


# -- continuous X -------------------------------------------------------------

def _continuous_config(config: LocPolyConfig) -> LocPolyConfig:
    return config.replace(mode=SmoothingMode.CONTINUOUS_X, x_dims=1)


def _x0_scalar(x0) -> float:
    values = np.atleast_1d(np.asarray(x0, dtype=float))
    if values.size != 1:
        raise ConfigError(f"x0 must be a scalar treatment value, got {x0!r}")
    return float(values[0])


def _variance_continuous_from(pm: _PartialMean, data: Dataset, n_jobs=None) -> float:
    """
    Reported sigma2 = b^dx * mean((A_i eps_i / tau)^2).

    Rows whose own residual fit fails are left out of the mean; more than
    ``Config.MAX_FAILED_SHARE`` of the contributing rows failing raises
    InsufficientLocalData.
    """
    A = _trimmed_weight_sum(pm, data.n)
    rows = np.flatnonzero(A != 0)
    own, failed = fit_many(pm.regressors, data.y, pm.regressors[rows], pm.config, n_jobs=n_jobs)
    failed_rows = [int(rows[k]) for k in failed]
    _check_failures(failed_rows, len(rows))
    eps = np.zeros(data.n)
    for k, f in zip(rows, own):
        if f is not None:
            eps[k] = data.y[k] - f.coefficients[0]
    kept = np.ones(data.n, dtype=bool)
    kept[failed_rows] = False
    printed = float(np.mean((A[kept] * eps[kept] / pm.tau) ** 2))
    return pm.config.bandwidth * printed


def estimate_asf_continuous(x0, data: Dataset, fs: FirstStageFit, trim, config: LocPolyConfig,
                            n_jobs=None) -> AsfEstimate:
    """
    Conditional ASF at x0 for a continuous treatment.

    Fits the local polynomial at (x0, V_hat_i) for every trimmed i, averages the
    intercepts and attaches the plug-in variance at the sqrt(n b^dx) rate.
    """
    x0 = _x0_scalar(x0)
    config = _continuous_config(config)
    pm = _partial_mean(x0, data, fs, trim, config, n_jobs)
    coverage = common_support_diagnostic(x0, data, fs, pm.trim, config.bandwidth, discrete=False)
    sigma2 = _variance_continuous_from(pm, data, n_jobs)
    logger.info("continuous ASF at x0=%g: mu=%.6g sigma2=%.4g", x0, pm.mu_hat, sigma2)
    return AsfEstimate(
        x0=x0, mu_hat=pm.mu_hat, sigma2_hat=sigma2, rate=Rate.SQRT_N_B, n=data.n,
        estimator="semiparametric", bandwidth=config.bandwidth, d_x=1,
        diagnostics=_diagnostics(pm, data, fs, coverage),
    )


def variance_continuous(x0, data: Dataset, fs: FirstStageFit, trim, config: LocPolyConfig,
                        n_jobs=None) -> float:
    x0 = _x0_scalar(x0)
    pm = _partial_mean(x0, data, fs, trim, _continuous_config(config), n_jobs)
    return _variance_continuous_from(pm, data, n_jobs)


# -- discrete X ---------------------------------------------------------------

def _discrete_config(config: LocPolyConfig) -> LocPolyConfig:
    return config.replace(mode=SmoothingMode.DISCRETE_X, x_dims=1)


def _level_rows(x0, data):
    at_level = data.x == x0
    if not at_level.any():
        raise NoObservationsAtLevel(f"no observation has X == {x0:g}")
    return at_level


def _variance_discrete_from(pm: _PartialMean, data: Dataset, fs: FirstStageFit, at_level: np.ndarray):
    n = data.n
    b = pm.config.bandwidth
    d_v = fs.d_v
    trim = pm.trim
    tau = pm.tau

    eps = np.zeros(n)
    for j in np.flatnonzero(at_level):
        if int(j) in pm.fits:
            eps[j] = data.y[j] - pm.m_hat[j]
    A = _trimmed_weight_sum(pm, n)
    m_trim = np.where(trim, pm.m_hat, 0.0)
    psi = m_trim / tau - pm.mu_hat + A * eps / tau

    k = fs.influence.shape[1]
    gamma = np.zeros(k)
    if np.any(fs.influence != 0):
        if pm.config.degree < 1:
            raise DegreeTooLow("the first-stage correction needs a local polynomial of degree at least 1")
        jac_x0 = theta_jacobian(fs, data, x_override=pm.x0)
        jac_obs = fs.theta_jacobian
        v = fs.control_values
        basis = enumerate_multi_indices(d_v, pm.config.degree)

        # kernel-derivative double sum
        level = np.flatnonzero(at_level)
        first = np.zeros(k)
        for i in np.flatnonzero(trim):
            u = (v[level] - v[i]) / b
            near = np.all(np.abs(u) < 1.0, axis=1)
            if not near.any():
                continue
            rows = level[near]
            dkappa = kappa_gradient(pm.config.kernel, basis, u[near])
            g_dk = np.einsum("q,mqd->md", pm.fits[int(i)].e1_s_inv, dkappa)
            first += np.einsum("md,mdk->k", g_dk * eps[rows, None], jac_x0[rows])
        first *= -1.0 / (n * n * b ** (d_v + 1))

        grads = np.zeros((n, d_v))
        for j, f in pm.fits.items():
            grads[j] = gradient_v(f)
        second = -np.einsum("j,jd,jdk->k", A, grads, jac_x0) / n
        third = np.einsum("i,id,idk->k", trim.astype(float), grads, jac_obs) / n
        gamma = (first + second + third) / tau

    sigma2 = float(np.mean((psi + fs.influence @ gamma) ** 2))
    return sigma2, psi, gamma


def estimate_asf_discrete(x0, data: Dataset, fs: FirstStageFit, trim, config: LocPolyConfig,
                          n_jobs=None) -> AsfEstimate:
    """
    Conditional ASF at the treatment level x0.

    Local fits use only observations with X == x0 and smooth over V_hat; the
    variance includes the first-stage correction through the influence values.
    """
    x0 = _x0_scalar(x0)
    config = _discrete_config(config)
    at_level = _level_rows(x0, data)
    pm = _partial_mean(x0, data, fs, trim, config, n_jobs, extra_rows=np.flatnonzero(at_level))
    coverage = common_support_diagnostic(x0, data, fs, pm.trim, config.bandwidth, discrete=True)
    sigma2, _, gamma = _variance_discrete_from(pm, data, fs, at_level)
    logger.info("discrete ASF at x0=%g: mu=%.6g sigma2=%.4g", x0, pm.mu_hat, sigma2)
    return AsfEstimate(
        x0=x0, mu_hat=pm.mu_hat, sigma2_hat=sigma2, rate=Rate.SQRT_N, n=data.n,
        estimator="semiparametric", bandwidth=config.bandwidth, d_x=1,
        diagnostics=_diagnostics(pm, data, fs, coverage, rho_hat=float(np.mean(at_level)),
                                 gamma_hat=[float(g) for g in gamma]),
    )


def variance_discrete(x0, data: Dataset, fs: FirstStageFit, trim, config: LocPolyConfig, n_jobs=None):
    """Returns (sigma2, psi_hat, Gamma_hat)."""
    x0 = _x0_scalar(x0)
    at_level = _level_rows(x0, data)
    pm = _partial_mean(x0, data, fs, trim, _discrete_config(config), n_jobs,
                       extra_rows=np.flatnonzero(at_level))
    return _variance_discrete_from(pm, data, fs, at_level)


def estimate_asf(x0, data: Dataset, fs: FirstStageFit, trim, config: LocPolyConfig, n_jobs=None) -> AsfEstimate:
    if data.x_discrete:
        return estimate_asf_discrete(x0, data, fs, trim, config, n_jobs)
    return estimate_asf_continuous(x0, data, fs, trim, config, n_jobs)
