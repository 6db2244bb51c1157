"""
First-stage fit of the proxy distribution.

The proxy W is modelled as Gaussian given (X, Z) with location
``L(x, z)' b`` and log standard deviation ``S(x, z)' g`` where L and S are
user-declared basis terms. The control value is the index
theta(x, z, beta) = location (d_v = 1) or (location, log-scale) (d_v = 2) when
the log-scale has its own index.
"""
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import linalg, optimize, stats

from ..utils.errors import ConfigError, DimensionMismatch, NonConvergence, RankDeficientDesign
from ..utils.terms import Term, parse_terms, term_matrix
from .dataset_service import Dataset

logger = logging.getLogger(__name__)

SCALE_FLOOR = 1e-8
GRADIENT_TOLERANCE = 1e-8
_LOG_FLOOR = float(np.log(SCALE_FLOOR))
_HALF_LOG_2PI = 0.5 * float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class ProxyModel:
    location_terms: tuple[str, ...] = ("1", "x", "z1")
    scale_terms: tuple[str, ...] = ("1",)
    proxy: str | None = None
    family: str = "gaussian"
    # known standard deviation; when set only the location is estimated
    fixed_scale: float | None = None
    information: str = "opg"

    def __post_init__(self):
        object.__setattr__(self, "location_terms", tuple(self.location_terms))
        object.__setattr__(self, "scale_terms", tuple(self.scale_terms))
        if self.family != "gaussian":
            raise ConfigError(f"unsupported proxy family {self.family!r}")
        if self.information not in ("opg", "hessian"):
            raise ConfigError(f"information must be 'opg' or 'hessian', got {self.information!r}")
        if "1" not in {t.text for t in self.location}:
            raise ConfigError("the location basis must include the intercept term '1'")
        if self.fixed_scale is not None and not self.fixed_scale > 0:
            raise ConfigError(f"fixed_scale must be positive, got {self.fixed_scale}")
        if self.fixed_scale is None and "1" not in {t.text for t in self.scale}:
            raise ConfigError("the log-scale basis must include the intercept term '1'")

    @property
    def location(self) -> tuple[Term, ...]:
        return parse_terms(self.location_terms)

    @property
    def scale(self) -> tuple[Term, ...]:
        return parse_terms(self.scale_terms)

    @property
    def scale_indexed(self) -> bool:
        return self.fixed_scale is None and len(self.scale_terms) > 1

    @property
    def d_v(self) -> int:
        return 2 if self.scale_indexed else 1

    @property
    def n_location(self) -> int:
        return len(self.location_terms)

    @property
    def n_params(self) -> int:
        return self.n_location + (0 if self.fixed_scale is not None else len(self.scale_terms))

    def parameter_names(self) -> list[str]:
        names = [f"location:{t}" for t in self.location_terms]
        if self.fixed_scale is None:
            names += [f"log_scale:{t}" for t in self.scale_terms]
        return names


@dataclass(frozen=True)
class FirstStageFit:
    model: ProxyModel
    beta_hat: np.ndarray
    loglik: float
    control_values: np.ndarray
    influence: np.ndarray = field(repr=False)
    theta_jacobian: np.ndarray = field(repr=False)
    z_names: tuple[str, ...] = ()
    converged: bool = True
    degenerate: bool = False
    iterations: int = 0

    @property
    def d_v(self) -> int:
        return self.model.d_v

    def to_dict(self) -> dict:
        return {
            "beta_hat": dict(zip(self.model.parameter_names(), map(float, self.beta_hat))),
            "loglik": float(self.loglik),
            "d_v": self.d_v,
            "information": self.model.information,
            "converged": self.converged,
            "degenerate": self.degenerate,
            "iterations": self.iterations,
        }


def _regressor_columns(data: Dataset, x_override=None):
    cols = data.columns(x_override)
    return {name: cols[name] for name in ("x",) + data.z_names}


def _designs(data: Dataset, model: ProxyModel, x_override=None):
    cols = _regressor_columns(data, x_override)
    loc = term_matrix(model.location, cols, data.n)
    scale = term_matrix(model.scale, cols, data.n) if model.fixed_scale is None else None
    return loc, scale


def _split(beta, model):
    return beta[: model.n_location], beta[model.n_location:]


def _location_and_log_scale(beta, model, loc, scale):
    b, g = _split(beta, model)
    mu = loc @ b
    if model.fixed_scale is not None:
        s = np.full(loc.shape[0], np.log(model.fixed_scale))
    else:
        s = np.maximum(scale @ g, _LOG_FLOOR)
    return mu, s


def _loglik_parts(beta, model, loc, scale, w):
    mu, s = _location_and_log_scale(beta, model, loc, scale)
    sigma = np.exp(s)
    r = (w - mu) / sigma
    return -_HALF_LOG_2PI - s - 0.5 * r * r, r, sigma


def loglik(beta, data: Dataset, model: ProxyModel) -> float:
    loc, scale = _designs(data, model)
    parts, _, _ = _loglik_parts(np.asarray(beta, dtype=float), model, loc, scale, data.proxy(model.proxy))
    return float(np.sum(parts))


def _scores(beta, model, loc, scale, w):
    """(n, k) per-observation scores of the log-likelihood."""
    _, r, sigma = _loglik_parts(beta, model, loc, scale, w)
    blocks = [loc * (r / sigma)[:, None]]
    if model.fixed_scale is None:
        blocks.append(scale * (r * r - 1.0)[:, None])
    return np.hstack(blocks)


def _hessian(beta, model, loc, scale, w):
    """Summed Hessian of the log-likelihood."""
    _, r, sigma = _loglik_parts(beta, model, loc, scale, w)
    h_bb = -(loc / (sigma ** 2)[:, None]).T @ loc
    if model.fixed_scale is None:
        h_bg = -(loc * (2.0 * r / sigma)[:, None]).T @ scale
        h_gg = -(scale * (2.0 * r * r)[:, None]).T @ scale
        return np.block([[h_bb, h_bg], [h_bg.T, h_gg]])
    return h_bb


def score(beta, data: Dataset, model: ProxyModel) -> np.ndarray:
    """Summed analytic score."""
    loc, scale = _designs(data, model)
    return _scores(np.asarray(beta, dtype=float), model, loc, scale, data.proxy(model.proxy)).sum(axis=0)


def _check_rank(matrix, label, n, k):
    if n <= k:
        raise RankDeficientDesign(f"{n} observations cannot identify {k} first-stage parameters")
    rank = np.linalg.matrix_rank(matrix)
    if rank < matrix.shape[1]:
        raise RankDeficientDesign(f"{label} design has rank {rank} < {matrix.shape[1]} columns")


def control_values(fit_or_beta, data: Dataset = None, model: ProxyModel = None, x_override=None) -> np.ndarray:
    """
    V_i = theta(X_i, Z_i, beta) as an (n, d_v) matrix.

    Accepts a FirstStageFit (with ``data``) or a raw ``beta`` with ``data`` and
    ``model``; ``x_override`` evaluates the index at a constant x.
    """
    if isinstance(fit_or_beta, FirstStageFit):
        beta, model = fit_or_beta.beta_hat, fit_or_beta.model
    else:
        beta = np.asarray(fit_or_beta, dtype=float)
    if data is None or model is None:
        raise ConfigError("control values need the dataset and the proxy model")
    if beta.shape != (model.n_params,):
        raise DimensionMismatch(f"beta has shape {beta.shape}, the model has {model.n_params} parameters")
    loc, scale = _designs(data, model, x_override)
    b, g = _split(beta, model)
    location = loc @ b
    if model.scale_indexed:
        return np.column_stack([location, scale @ g])
    return location[:, None]


def theta_jacobian(fit_or_beta, data: Dataset, model: ProxyModel = None, x_override=None) -> np.ndarray:
    """(n, d_v, k) derivatives of theta(X_i, Z_i, beta) with respect to beta'."""
    if isinstance(fit_or_beta, FirstStageFit):
        model = fit_or_beta.model
    loc, scale = _designs(data, model, x_override)
    n, p = loc.shape
    jac = np.zeros((n, model.d_v, model.n_params))
    jac[:, 0, :p] = loc
    if model.scale_indexed:
        jac[:, 1, p:] = scale
    return jac


def _influence(scores, hessian, n, information):
    if information == "hessian":
        info = -hessian / n
    else:
        info = scores.T @ scores / n
    try:
        return linalg.solve(info, scores.T, assume_a="sym").T
    except linalg.LinAlgError as exc:
        raise RankDeficientDesign("first-stage information matrix is singular") from exc


def _ols(design, w):
    coef, *_ = linalg.lstsq(design, w)
    return coef


def _finish(data, model, beta, w, loc, scale, *, converged=True, degenerate=False, iterations=0):
    parts, _, _ = _loglik_parts(beta, model, loc, scale, w)
    if degenerate:
        influence = np.zeros((data.n, model.n_params))
    else:
        scores = _scores(beta, model, loc, scale, w)
        influence = _influence(scores, _hessian(beta, model, loc, scale, w), data.n, model.information)
    return FirstStageFit(
        model=model,
        beta_hat=beta,
        loglik=float(np.sum(parts)),
        control_values=control_values(beta, data, model),
        influence=influence,
        theta_jacobian=theta_jacobian(beta, data, model),
        z_names=data.z_names,
        converged=converged,
        degenerate=degenerate,
        iterations=iterations,
    )


def fit_mle(data: Dataset, model: ProxyModel, max_iter: int = 500) -> FirstStageFit:
    """
    Maximum likelihood fit of the proxy model.

    BFGS on the mean negative log-likelihood with the analytic gradient, then
    Newton steps with the analytic Hessian until the summed gradient satisfies
    ``max |grad| <= 1e-8 n``. A fixed known scale reduces the problem to least
    squares, which is solved in closed form.

    Raises
    ------
    RankDeficientDesign
        Too few observations or a rank-deficient location/scale design.
    NonConvergence
        The gradient tolerance is not met within ``max_iter`` iterations.
    """
    w = data.proxy(model.proxy)
    loc, scale = _designs(data, model)
    n = data.n
    _check_rank(loc, "location", n, model.n_params)
    if scale is not None:
        _check_rank(scale, "log-scale", n, model.n_params)

    b0 = _ols(loc, w)
    if model.fixed_scale is not None:
        logger.info("first stage: closed-form least squares with known scale %.4g", model.fixed_scale)
        return _finish(data, model, b0, w, loc, scale)

    resid_sd = float(np.sqrt(np.mean((w - loc @ b0) ** 2)))
    g0 = np.zeros(scale.shape[1])
    g0[[t.text for t in model.scale].index("1")] = np.log(max(resid_sd, SCALE_FLOOR))
    if resid_sd <= SCALE_FLOOR:
        logger.warning("first stage: proxy is an exact function of the location basis, scale floor applied")
        return _finish(data, model, np.concatenate([b0, g0]), w, loc, scale, degenerate=True)

    def objective(beta):
        parts, _, _ = _loglik_parts(beta, model, loc, scale, w)
        return -float(np.mean(parts))

    def gradient(beta):
        return -_scores(beta, model, loc, scale, w).mean(axis=0)

    start = np.concatenate([b0, g0])
    result = optimize.minimize(
        objective, start, jac=gradient, method="BFGS",
        options={"gtol": GRADIENT_TOLERANCE, "maxiter": max_iter},
    )
    beta = result.x
    tolerance = GRADIENT_TOLERANCE * n
    iterations = int(result.nit)
    for _ in range(50):
        grad = _scores(beta, model, loc, scale, w).sum(axis=0)
        if np.max(np.abs(grad)) <= tolerance:
            break
        step = linalg.solve(_hessian(beta, model, loc, scale, w), grad, assume_a="sym")
        current = objective(beta)
        shrink = 1.0
        while shrink > 1e-6 and objective(beta - shrink * step) > current:
            shrink *= 0.5
        beta = beta - shrink * step
        iterations += 1
    grad = _scores(beta, model, loc, scale, w).sum(axis=0)
    if np.max(np.abs(grad)) > tolerance:
        raise NonConvergence(
            f"first stage stopped with max |gradient| {np.max(np.abs(grad)):.3e} above {tolerance:.3e}"
        )
    logger.info("first stage converged after %d iterations, loglik %.6f", iterations, -objective(beta) * n)
    return _finish(data, model, beta, w, loc, scale, iterations=iterations)


def fixed_first_stage(data: Dataset, model: ProxyModel, beta: Sequence[float]) -> FirstStageFit:
    """A first stage held at a known beta: control values from beta and zero influence."""
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (model.n_params,):
        raise DimensionMismatch(f"beta has shape {beta.shape}, the model has {model.n_params} parameters")
    w = data.proxy(model.proxy)
    loc, scale = _designs(data, model)
    return _finish(data, model, beta, w, loc, scale, degenerate=True)


def conditional_cdf(w, x, z, fit: FirstStageFit):
    """
    Phi((w - location) / scale) at theta(x, z, beta_hat).

    ``z`` holds one value per instrument column (in ``fit.z_names`` order);
    ``w``, ``x`` and the rows of ``z`` broadcast together.
    """
    model = fit.model
    x = np.atleast_1d(np.asarray(x, dtype=float))
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != len(fit.z_names):
        raise DimensionMismatch(f"z has {z.shape[1]} columns, the fit used {len(fit.z_names)}")
    rows = max(x.size, z.shape[0])
    cols = {"x": np.broadcast_to(x, (rows,))}
    cols.update({name: np.broadcast_to(z[:, k], (rows,)) for k, name in enumerate(fit.z_names)})
    loc = term_matrix(model.location, cols, rows)
    scale = term_matrix(model.scale, cols, rows) if model.fixed_scale is None else None
    mu, s = _location_and_log_scale(fit.beta_hat, model, loc, scale)
    out = stats.norm.cdf((np.asarray(w, dtype=float) - mu) / np.exp(s))
    return float(out[0]) if np.ndim(w) == 0 and out.size == 1 else out


@dataclass(frozen=True)
class InfluenceReport:
    mean_norm: float
    mean_tolerance: float
    mean_ok: bool
    jackknife_indices: tuple[int, ...] = ()
    jackknife_median_error: float | None = None
    jackknife_tolerance: float = 0.05
    jackknife_ok: bool | None = None

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.jackknife_ok is not False

    def to_dict(self) -> dict:
        return {
            "mean_norm": self.mean_norm,
            "mean_tolerance": self.mean_tolerance,
            "mean_ok": self.mean_ok,
            "jackknife_indices": list(self.jackknife_indices),
            "jackknife_median_error": self.jackknife_median_error,
            "jackknife_tolerance": self.jackknife_tolerance,
            "jackknife_ok": self.jackknife_ok,
            "passed": self.passed,
        }


def influence_check(fit: FirstStageFit, data: Dataset, model: ProxyModel = None,
                    jackknife: int = 20, seed: int = 0, tolerance: float = 0.05) -> InfluenceReport:
    """
    Diagnose the influence values of a fit.

    Checks that the column means vanish (first-order condition) and, for
    ``jackknife`` randomly chosen observations, that n (beta_hat - beta_(-i))
    is close to phi_i in relative norm (median over the chosen rows).
    """
    model = model or fit.model
    phi = fit.influence
    scale = np.maximum(np.sqrt(np.mean(phi ** 2, axis=0)), 1.0)
    mean_norm = float(np.max(np.abs(phi.mean(axis=0)) / scale))
    mean_tolerance = 1e-6
    report = dict(mean_norm=mean_norm, mean_tolerance=mean_tolerance, mean_ok=mean_norm <= mean_tolerance)
    if jackknife <= 0 or fit.degenerate:
        return InfluenceReport(**report)

    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    chosen = np.sort(rng.choice(data.n, size=min(jackknife, data.n), replace=False))
    errors = []
    for i in chosen:
        rest = data.take(np.delete(np.arange(data.n), i))
        left_out = fit_mle(rest, model)
        diff = data.n * (fit.beta_hat - left_out.beta_hat)
        denom = max(float(np.linalg.norm(phi[i])), np.finfo(float).tiny)
        errors.append(float(np.linalg.norm(diff - phi[i])) / denom)
    median = float(np.median(errors))
    logger.info("influence check: mean norm %.3e, jackknife median relative error %.4f", mean_norm, median)
    return InfluenceReport(
        **report,
        jackknife_indices=tuple(int(i) for i in chosen),
        jackknife_median_error=median,
        jackknife_tolerance=tolerance,
        jackknife_ok=median <= tolerance,
    )
