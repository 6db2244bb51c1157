"""
Flexible parametric ASF: least squares of Y on r(x, v) = p1(x) kron p2(v)
with the generated control values, then averages of gamma' r(x0, V_hat_i)
over the full sample (unconditional) or the trimmed sample (conditional).
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from ..utils.errors import ConfigError, DimensionMismatch, SingularSecondMoment
from ..utils.terms import Term, parse_terms, term_derivative_matrix, term_matrix
from .dataset_service import Dataset, TrimmingSet, trimming_share
from .first_stage_service import FirstStageFit
from .inference_service import AsfEstimate, Rate

logger = logging.getLogger(__name__)

MAX_CONDITION = 1e12


def control_names(d_v: int) -> tuple[str, ...]:
    return ("v",) if d_v == 1 else tuple(f"v{k + 1}" for k in range(d_v))


def _control_columns(v: np.ndarray) -> dict[str, np.ndarray]:
    v = np.atleast_2d(v.T).T
    names = control_names(v.shape[1])
    cols = {name: v[:, k] for k, name in enumerate(names)}
    if v.shape[1] == 1:
        cols["v1"] = v[:, 0]
    return cols


@dataclass(frozen=True)
class KroneckerBasis:
    """r(x, v) = p1(x) kron p2(v); both blocks must contain the constant term."""
    p1_terms: tuple[str, ...] = ("1", "x", "x^2")
    p2_terms: tuple[str, ...] = ("1", "v", "v^2")

    def __post_init__(self):
        object.__setattr__(self, "p1_terms", tuple(self.p1_terms))
        object.__setattr__(self, "p2_terms", tuple(self.p2_terms))
        for label, terms in (("p1", self.p1), ("p2", self.p2)):
            if "1" not in {t.text for t in terms}:
                raise ConfigError(f"the {label} basis must include the constant term '1'")
        if any(name != "x" for t in self.p1 for name in t.variables):
            raise ConfigError(f"p1 terms may only use x: {self.p1_terms}")
        if any(not name.startswith("v") for t in self.p2 for name in t.variables):
            raise ConfigError(f"p2 terms may only use the control values v, v1, v2, ...: {self.p2_terms}")

    @classmethod
    def for_levels(cls, levels, p2_terms=("1", "v", "v^2")) -> "KroneckerBasis":
        """p1 = constant plus indicators of every level but the first."""
        p1 = ("1",) + tuple(f"x=={float(level):g}" for level in sorted(levels)[1:])
        return cls(p1_terms=p1, p2_terms=p2_terms)

    @property
    def p1(self) -> tuple[Term, ...]:
        return parse_terms(self.p1_terms)

    @property
    def p2(self) -> tuple[Term, ...]:
        return parse_terms(self.p2_terms)

    @property
    def size(self) -> int:
        return len(self.p1_terms) * len(self.p2_terms)

    def names(self) -> list[str]:
        return [f"{a}*{c}" for a in self.p1_terms for c in self.p2_terms]

    def evaluate(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(n, len(p1) * len(p2)) matrix of r(x_i, v_i)."""
        n = v.shape[0]
        left = term_matrix(self.p1, {"x": np.broadcast_to(x, (n,))}, n)
        right = term_matrix(self.p2, _control_columns(v), n)
        return (left[:, :, None] * right[:, None, :]).reshape(n, -1)

    def derivative_v(self, x: np.ndarray, v: np.ndarray) -> np.ndarray:
        """(n, len(r), d_v) derivatives of r(x_i, v) in v at v_i."""
        n, d_v = v.shape
        left = term_matrix(self.p1, {"x": np.broadcast_to(x, (n,))}, n)
        cols = _control_columns(v)
        out = np.empty((n, self.size, d_v))
        for k, name in enumerate(control_names(d_v)):
            right = term_derivative_matrix(self.p2, cols, name, n)
            if d_v == 1:
                right = right + term_derivative_matrix(self.p2, cols, "v1", n)
            out[:, :, k] = (left[:, :, None] * right[:, None, :]).reshape(n, -1)
        return out


@dataclass(frozen=True)
class ParametricAsfFit:
    basis: KroneckerBasis
    gamma_hat: np.ndarray
    second_moment: np.ndarray = field(repr=False)
    second_moment_inv: np.ndarray = field(repr=False)
    condition_number: float
    residuals: np.ndarray = field(repr=False)
    design: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return int(self.residuals.shape[0])

    def to_dict(self) -> dict:
        return {
            "gamma_hat": dict(zip(self.basis.names(), map(float, self.gamma_hat))),
            "condition_number": float(self.condition_number),
        }


def fit_ols(data: Dataset, fs: FirstStageFit, basis: KroneckerBasis) -> ParametricAsfFit:
    """
    Least squares of Y on r(X_i, V_hat_i) through the normal equations.

    Raises SingularSecondMoment when n <= len(r) or the sample second-moment
    matrix has condition number above 1e12.
    """
    design = basis.evaluate(data.x, fs.control_values)
    n, size = design.shape
    if n <= size:
        raise SingularSecondMoment(float("inf"))
    second = design.T @ design / n
    condition = float(np.linalg.cond(second))
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularSecondMoment(condition)
    factor = linalg.cho_factor(second)
    gamma = linalg.cho_solve(factor, design.T @ data.y / n)
    logger.info("parametric fit: %d basis functions, condition number %.3e", size, condition)
    return ParametricAsfFit(
        basis=basis,
        gamma_hat=gamma,
        second_moment=second,
        second_moment_inv=linalg.cho_solve(factor, np.eye(size)),
        condition_number=condition,
        residuals=data.y - design @ gamma,
        design=design,
    )


def _at_x0(x0, fit, fs):
    r0 = fit.basis.evaluate(np.full(fs.control_values.shape[0], float(x0)), fs.control_values)
    return r0, r0 @ fit.gamma_hat


def _mask(trim, data):
    if trim is None:
        return None
    if isinstance(trim, TrimmingSet):
        if data is None:
            raise ConfigError("a trimming set needs the dataset")
        return trim.indicator(data)
    return np.asarray(trim, dtype=bool)


def parametric_influence(x0, fit: ParametricAsfFit, fs: FirstStageFit, data: Dataset = None,
                         trim=None, derivative_at: str = "x0") -> tuple[np.ndarray, np.ndarray]:
    """
    Influence values psi_i of the parametric ASF and the first-stage row
    Gamma (the derivative of mu_hat in beta).

    psi_i = T_i (gamma' r(x0, V_i) - mu) / tau + rbar' Q^-1 r_i eps_i
            + [rbar' Q^-1 (mean(eps D) - mean(r gamma' D)) + gamma' Dbar] phi_i

    with D_i = dr(x0, V_i)/dv' dtheta(X_i, Z_i)/dbeta'. Without ``trim`` the
    unconditional version (T = 1). ``derivative_at="observed"`` evaluates
    dr/dv' at X_i inside the least-squares correction instead of x0.
    """
    if derivative_at not in ("x0", "observed"):
        raise ConfigError(f"derivative_at must be 'x0' or 'observed', got {derivative_at!r}")
    if data is not None and data.n != fit.n:
        raise DimensionMismatch(f"dataset has {data.n} rows, the fit used {fit.n}")
    n = fit.n
    mask = _mask(trim, data)
    weights = np.ones(n) if mask is None else mask.astype(float)
    tau = trimming_share(weights > 0)
    r0, values = _at_x0(x0, fit, fs)
    mu = float(np.sum(weights * values) / np.sum(weights))

    v = fs.control_values
    jac = fs.theta_jacobian
    D0 = np.einsum("nrd,ndk->nrk", fit.basis.derivative_v(np.full(n, float(x0)), v), jac)
    if derivative_at == "observed":
        if data is None:
            raise ConfigError("derivative_at='observed' needs the dataset")
        D_ls = np.einsum("nrd,ndk->nrk", fit.basis.derivative_v(data.x, v), jac)
    else:
        D_ls = D0

    r_bar = (weights @ r0) / np.sum(weights)
    d_bar = np.einsum("n,nrk->rk", weights, D0) / np.sum(weights)
    lead = fit.second_moment_inv @ r_bar
    eps = fit.residuals
    eps_d = np.einsum("n,nrk->rk", eps, D_ls) / n
    r_gamma_d = np.einsum("nr,nk->rk", fit.design, np.einsum("r,nrk->nk", fit.gamma_hat, D_ls)) / n
    gamma_row = lead @ (eps_d - r_gamma_d) + fit.gamma_hat @ d_bar

    psi = weights * (values - mu) / tau + (fit.design @ lead) * eps + fs.influence @ gamma_row
    return psi, gamma_row


def variance_parametric(x0, fit: ParametricAsfFit, fs: FirstStageFit, data: Dataset = None,
                        trim=None, derivative_at: str = "x0") -> float:
    """Plug-in variance of the parametric ASF, the mean of the squared influence values."""
    psi, _ = parametric_influence(x0, fit, fs, data, trim, derivative_at)
    return float(np.mean(psi ** 2))


def _estimate(x0, fit, fs, mask, data, estimator):
    r0, values = _at_x0(x0, fit, fs)
    if mask is None:
        mu = float(np.mean(values))
        share = 1.0
    else:
        share = trimming_share(mask)
        mu = float(np.mean(values[mask]))
    sigma2 = variance_parametric(x0, fit, fs, data, trim=mask)
    return AsfEstimate(
        x0=float(x0), mu_hat=mu, sigma2_hat=sigma2, rate=Rate.SQRT_N, n=fit.n, estimator=estimator,
        diagnostics={"tau_hat": share, "basis_size": fit.basis.size, **fit.to_dict()},
    )


def asf_unconditional(x0, fit: ParametricAsfFit, fs: FirstStageFit) -> AsfEstimate:
    """Full-sample average of gamma' r(x0, V_hat_i); no support condition is needed."""
    return _estimate(x0, fit, fs, None, None, "parametric-unconditional")


def asf_conditional(x0, fit: ParametricAsfFit, fs: FirstStageFit, trim, data: Dataset = None) -> AsfEstimate:
    """Trimmed average of gamma' r(x0, V_hat_i); ``trim`` is a mask or a TrimmingSet with ``data``."""
    return _estimate(x0, fit, fs, _mask(trim, data), data, "parametric-conditional")


def asf_naive(x0, data: Dataset, p1_terms=None) -> AsfEstimate:
    """
    OLS of Y on p1(X) with no control, predicted at x0.

    The variance is the heteroskedasticity-robust sandwich for p1(x0)' gamma.
    Biased whenever X is endogenous; kept as the reference the control
    estimators are measured against.
    """
    if p1_terms is None:
        p1_terms = KroneckerBasis.for_levels(data.levels()).p1_terms if data.x_discrete else ("1", "x")
    basis = KroneckerBasis(p1_terms=p1_terms, p2_terms=("1",))
    dummy_v = np.zeros((data.n, 1))
    design = basis.evaluate(data.x, dummy_v)
    n, size = design.shape
    if n <= size:
        raise SingularSecondMoment(float("inf"))
    second = design.T @ design / n
    condition = float(np.linalg.cond(second))
    if not np.isfinite(condition) or condition > MAX_CONDITION:
        raise SingularSecondMoment(condition)
    factor = linalg.cho_factor(second)
    gamma = linalg.cho_solve(factor, design.T @ data.y / n)
    resid = data.y - design @ gamma
    p0 = basis.evaluate(np.array([float(x0)]), np.zeros((1, 1)))[0]
    lead = linalg.cho_solve(factor, p0)
    sigma2 = float(np.mean((design @ lead * resid) ** 2))
    return AsfEstimate(
        x0=float(x0), mu_hat=float(p0 @ gamma), sigma2_hat=sigma2, rate=Rate.SQRT_N, n=n,
        estimator="naive", diagnostics={"condition_number": condition},
    )
