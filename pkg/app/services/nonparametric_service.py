"""
Fully nonparametric ASF with the conditional CDF of the proxy as control.

First stage: kernel estimate of F(w | x, z) on a shared w-grid. Second stage:
Nadaraya-Watson regression of Y on (X, F_hat_i) with the L2 distance between
CDFs. Third stage: partial mean over the trimmed sample.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from config import Config
from ..utils.errors import ConfigError, DimensionMismatch, EmptyNeighborhood, ZeroDenominator
from .dataset_service import Dataset, TrimmingSet, trimming_share
from .inference_service import AsfEstimate, Rate
from .kernel_service import KernelSpec, eval_kernel, product_kernel

logger = logging.getLogger(__name__)

GRID_SIZE = 101
_CHUNK = 512


@dataclass(frozen=True)
class FunctionalNorm:
    """Trapezoid L2 norm on the w-grid (Lebesgue measure on the grid range)."""
    grid: np.ndarray
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
            raise ConfigError("the w-grid must be strictly increasing with at least two points")
        steps = np.diff(grid)
        weights = np.zeros(grid.size)
        weights[:-1] += steps / 2
        weights[1:] += steps / 2
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "weights", weights)

    def embed(self, values: np.ndarray) -> np.ndarray:
        """Rows scaled so that Euclidean distance equals the L2 distance."""
        return np.atleast_2d(values) * np.sqrt(self.weights)

    def norm(self, values) -> float:
        return float(np.sqrt(np.sum(self.weights * np.asarray(values, dtype=float) ** 2)))


@dataclass(frozen=True)
class CdfOnGrid:
    grid: np.ndarray
    values: np.ndarray = field(repr=False)
    bandwidth: float = 0.0

    @property
    def norm(self) -> FunctionalNorm:
        return FunctionalNorm(self.grid)

    @property
    def n(self) -> int:
        return int(self.values.shape[0])


def w_grid(w: np.ndarray, size: int = GRID_SIZE) -> np.ndarray:
    """``size`` equally spaced points on [min W - sd/2, max W + sd/2]."""
    if size < 2:
        raise ConfigError(f"the w-grid needs at least two points, got {size}")
    sd = float(np.std(w))
    spread = 0.5 * sd if sd > 0 else 0.5
    return np.linspace(np.min(w) - spread, np.max(w) + spread, size)


def default_first_stage_bandwidth(n: int, d_xz: int) -> float:
    return float(1.06 * n ** (-1.0 / (4 + d_xz)))


def default_second_stage_bandwidth(data: Dataset) -> float:
    sd = float(np.std(data.x, ddof=1))
    return float(1.06 * (sd if sd > 0 else 1.0) * data.n ** (-1.0 / 6.0))


def _standardized(columns):
    sd = columns.std(axis=0, ddof=1)
    sd[sd == 0] = 1.0
    return (columns - columns.mean(axis=0)) / sd


def estimate_conditional_cdf(data: Dataset, bandwidth_fs: float | None = None,
                             w_grid_size: int = GRID_SIZE, proxy: str | None = None,
                             kernel: KernelSpec = KernelSpec()) -> CdfOnGrid:
    """
    F_hat(w | X_i, Z_i) = sum_j 1{W_j <= w} K_ij / sum_j K_ij on a shared grid.

    Continuous conditioning columns are standardized and enter a product
    kernel with bandwidth ``bandwidth_fs``; a discrete X enters as an exact
    match. Each row is made monotone by a running maximum and clipped to [0, 1].
    """
    w = data.proxy(proxy)
    continuous = data.z if data.x_discrete else np.column_stack([data.x, data.z])
    scaled = _standardized(continuous)
    if bandwidth_fs is None:
        bandwidth_fs = default_first_stage_bandwidth(data.n, scaled.shape[1] + int(data.x_discrete))
    if not bandwidth_fs > 0:
        raise ConfigError(f"first-stage bandwidth must be positive, got {bandwidth_fs}")

    grid = w_grid(w, w_grid_size)
    order = np.argsort(w, kind="stable")
    cut = np.searchsorted(w[order], grid, side="right")
    values = np.empty((data.n, grid.size))
    empty = []
    for start in range(0, data.n, _CHUNK):
        rows = np.arange(start, min(start + _CHUNK, data.n))
        diffs = (scaled[rows, None, :] - scaled[None, :, :]) / bandwidth_fs
        k = product_kernel(kernel, diffs.reshape(-1, scaled.shape[1])).reshape(len(rows), data.n)
        if data.x_discrete:
            k = k * (data.x[rows, None] == data.x[None, :])
        total = k.sum(axis=1)
        cum = np.concatenate([np.zeros((len(rows), 1)), np.cumsum(k[:, order], axis=1)], axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            values[rows] = cum[:, cut] / total[:, None]
        empty.extend(int(i) for i in rows[total <= 0])
    if empty:
        raise ZeroDenominator(f"{len(empty)} conditioning points have no kernel neighbours", indices=empty)
    values = np.clip(np.maximum.accumulate(values, axis=1), 0.0, 1.0)
    logger.info("conditional CDF on %d grid points, bandwidth %.4g", grid.size, bandwidth_fs)
    return CdfOnGrid(grid=grid, values=values, bandwidth=float(bandwidth_fs))


def functional_norm_distance(a, b, norm: FunctionalNorm) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != norm.grid.shape or b.shape != norm.grid.shape:
        raise DimensionMismatch(f"CDF rows of shape {a.shape} and {b.shape} do not match the grid {norm.grid.shape}")
    return norm.norm(a - b)


def _nw_weights(x0, rows_v, data, cdfs, b_n, discrete, kernel):
    norm = cdfs.norm
    dist = cdist(norm.embed(rows_v), norm.embed(cdfs.values))
    k_v = eval_kernel(kernel, dist / b_n)
    if discrete:
        k_x = (data.x == x0).astype(float)
    else:
        k_x = eval_kernel(kernel, (data.x - x0) / b_n)
    return k_v * k_x[None, :]


def nw_functional(x0, v, data: Dataset, cdfs: CdfOnGrid, b_n: float, mode: str = "continuous",
                  kernel: KernelSpec = KernelSpec()) -> float:
    """
    Nadaraya-Watson estimate of E[Y | X = x0, V = v] with V a CDF row.

    ``mode="discrete"`` replaces the X kernel by the indicator 1{X_i = x0}.
    """
    if mode not in ("continuous", "discrete"):
        raise ConfigError(f"mode must be 'continuous' or 'discrete', got {mode!r}")
    if not b_n > 0:
        raise ConfigError(f"bandwidth must be positive, got {b_n}")
    weights = _nw_weights(x0, np.asarray(v, dtype=float), data, cdfs, b_n, mode == "discrete", kernel)[0]
    total = weights.sum()
    if total <= 0:
        raise EmptyNeighborhood(f"no observation has positive weight around x0={x0:g}; bandwidth too small")
    return float(weights @ data.y / total)


def asf_nonparametric(x0, data: Dataset, trim, b_n: float | None = None, bandwidth_fs: float | None = None,
                      cdfs: CdfOnGrid | None = None, kernel: KernelSpec = KernelSpec()) -> AsfEstimate:
    """Partial mean of ``nw_functional`` over the trimmed sample; a point estimate only."""
    x0 = float(x0)
    mask = trim.indicator(data) if isinstance(trim, TrimmingSet) else np.asarray(trim, dtype=bool)
    trimming_share(mask)
    if cdfs is None:
        cdfs = estimate_conditional_cdf(data, bandwidth_fs, kernel=kernel)
    if b_n is None:
        b_n = default_second_stage_bandwidth(data)
    discrete = data.x_discrete

    rows = np.flatnonzero(mask)
    fitted = np.full(rows.size, np.nan)
    for start in range(0, rows.size, _CHUNK):
        chunk = rows[start:start + _CHUNK]
        weights = _nw_weights(x0, cdfs.values[chunk], data, cdfs, b_n, discrete, kernel)
        total = weights.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            fitted[start:start + chunk.size] = weights @ data.y / total
    failed = rows[~np.isfinite(fitted)]
    if failed.size:
        logger.warning("dropped %d of %d evaluation points with an empty neighbourhood", failed.size, rows.size)
        if failed.size / rows.size > Config.MAX_FAILED_SHARE:
            raise EmptyNeighborhood(
                f"{failed.size} of {rows.size} evaluation points have no neighbours at bandwidth {b_n:.4g}"
            )
    mu = float(np.mean(fitted[np.isfinite(fitted)]))
    return AsfEstimate(
        x0=x0, mu_hat=mu, sigma2_hat=float("nan"), rate=Rate.CONSISTENCY, n=data.n,
        estimator="nonparametric", bandwidth=float(b_n),
        diagnostics={
            "tau_hat": float(np.mean(mask)),
            "dropped_points": int(failed.size),
            "first_stage_bandwidth": cdfs.bandwidth,
            "grid_size": int(cdfs.grid.size),
        },
    )


def small_ball_diagnostic(cdfs: CdfOnGrid, radii) -> list[dict]:
    """
    Empirical small-ball probabilities of the estimated controls.

    For each radius r the mean over i of the share of j != i with
    ||V_i - V_j|| <= r, and the log-log slope against the previous radius,
    which estimates the effective dimension of the controls.
    """
    radii = np.asarray(radii, dtype=float)
    if radii.size < 2 or np.any(radii <= 0) or np.any(np.diff(radii) >= 0):
        raise ConfigError("radii must be at least two strictly decreasing positive values")
    embedded = cdfs.norm.embed(cdfs.values)
    n = embedded.shape[0]
    if n < 2:
        raise ConfigError("the small-ball diagnostic needs at least two observations")
    counts = np.zeros(radii.size)
    for start in range(0, n, _CHUNK):
        dist = cdist(embedded[start:start + _CHUNK], embedded)
        # each row counts itself at distance zero
        counts += (dist[:, :, None] <= radii[None, None, :]).sum(axis=(0, 1)) - dist.shape[0]
    probability = counts / (n * (n - 1))

    table = []
    for k, (radius, prob) in enumerate(zip(radii, probability)):
        slope = None
        if k > 0 and prob > 0 and probability[k - 1] > 0:
            slope = float(np.log(probability[k - 1] / prob) / np.log(radii[k - 1] / radius))
        table.append({"radius": float(radius), "probability": float(prob), "slope": slope})
    return table
