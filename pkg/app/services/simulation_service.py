"""
Reference data generating processes with known ASF.

Every design draws a scalar X, one instrument Z, the heterogeneity eps with
eps | X, Z ~ N(theta(X, Z), s^2), theta(x, z) = beta1 x + beta2 z, and a proxy
W = eps + tau_w e that depends on (X, Z) only through eps. The control value
is V = theta(X, Z), so the regression m0(x, v) = E[Y | X = x, V = v] is known
in closed form.

    DGP-C      continuous X, Y = (a0 + eps) + (a1 + delta eps) X + zeta
    DGP-D      binary X with P(X = 1 | Z) = logistic(Z),
               Y = a0 + eps + a1 X + c eps X + zeta
    DGP-P      DGP-C with a random slope, Y = (a0 + eps) + (a1 + delta eps + zeta2) X + zeta
    DGP-EXO    DGP-C with beta1 = 0 and delta = 0
    DGP-CONST  DGP-C design with Y equal to a0
"""
import logging
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import special, stats

from config import Config
from ..utils.quadrature import legendre_rule, normal_rule
from .dataset_service import Dataset

logger = logging.getLogger(__name__)

DgpName = Literal["DGP-C", "DGP-D", "DGP-P", "DGP-EXO", "DGP-CONST"]


class DgpSpec(BaseModel):
    """Structural parameters of a reference design."""
    model_config = ConfigDict(frozen=True, extra="forbid")

    name: DgpName = "DGP-C"
    n: int = Field(1000, ge=10)
    seed: int = Field(0, ge=0, lt=2 ** 64)
    a0: float = 1.0
    a1: float = 1.0
    delta: float = 0.5
    beta1: float = 0.5
    beta2: float = 1.0
    tau_w: float = Field(0.5, gt=0)
    s: float = Field(1.0, gt=0)
    c: float = 0.5
    slope_sd: float = Field(0.5, ge=0)

    @model_validator(mode="before")
    @classmethod
    def _exogenous_design(cls, values):
        # the exogenous design switches off both endogeneity channels
        if isinstance(values, dict) and values.get("name") == "DGP-EXO":
            values = {**values, "beta1": 0.0, "delta": 0.0}
        return values

    @property
    def discrete(self) -> bool:
        return self.name == "DGP-D"

    @property
    def noise_sd(self) -> float:
        return 1.0 if self.discrete else self.s


def replication_rng(seed: int, replication: int = 0) -> np.random.Generator:
    """Counter-based stream for one (master seed, replication) pair."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(replication)])))


@dataclass(frozen=True)
class DgpOracle:
    spec: DgpSpec
    beta: np.ndarray
    control_values: np.ndarray = field(repr=False)
    eps: np.ndarray = field(repr=False)

    @property
    def location_terms(self) -> tuple[str, ...]:
        return ("1", "x", "z1")

    def m0(self, x, v):
        return regression_function(self.spec, x, v)

    def trim_box(self, quantiles=Config.TRIM_QUANTILES) -> dict[str, tuple[float, float]]:
        return population_box(self.spec, quantiles)

    def true_asf(self, x0, quantiles=Config.TRIM_QUANTILES) -> float:
        return true_asf(self.spec, x0, quantiles)


def regression_function(spec: DgpSpec, x, v):
    """m0(x, v) = E[Y | X = x, V = v]."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if spec.name == "DGP-CONST":
        return np.full(np.broadcast(x, v).shape, spec.a0)
    if spec.discrete:
        return spec.a0 + v + spec.a1 * x + spec.c * v * x
    return spec.a0 + v + (spec.a1 + spec.delta * v) * x


def generate(spec: DgpSpec, replication: int = 0) -> tuple[Dataset, DgpOracle]:
    """Draw one dataset (columns y, x, z1, w1) and its oracle; bit-identical for a fixed seed."""
    rng = replication_rng(spec.seed, replication)
    n = spec.n
    z = rng.standard_normal(n)
    if spec.discrete:
        x = (rng.random(n) < special.expit(z)).astype(float)
    else:
        x = rng.standard_normal(n)
    theta = spec.beta1 * x + spec.beta2 * z
    eps = theta + spec.noise_sd * rng.standard_normal(n)
    w = eps + spec.tau_w * rng.standard_normal(n)
    zeta = rng.standard_normal(n)
    slope_noise = spec.slope_sd * rng.standard_normal(n)

    if spec.name == "DGP-CONST":
        y = np.full(n, spec.a0)
    elif spec.discrete:
        y = spec.a0 + eps + spec.a1 * x + spec.c * eps * x + zeta
    elif spec.name == "DGP-P":
        y = (spec.a0 + eps) + (spec.a1 + spec.delta * eps + slope_noise) * x + zeta
    else:
        y = (spec.a0 + eps) + (spec.a1 + spec.delta * eps) * x + zeta

    data = Dataset(
        y=y, x=x, z=z[:, None], w=w[:, None], z_names=("z1",), w_names=("w1",), x_discrete=spec.discrete,
    )
    proxy_sd = np.hypot(spec.noise_sd, spec.tau_w)
    oracle = DgpOracle(
        spec=spec,
        beta=np.array([0.0, spec.beta1, spec.beta2, np.log(proxy_sd)]),
        control_values=theta[:, None],
        eps=eps,
    )
    return data, oracle


def population_box(spec: DgpSpec, quantiles=Config.TRIM_QUANTILES) -> dict[str, tuple[float, float]]:
    """Population analogue of the quantile trimming box; ``None`` means no trimming."""
    if quantiles is None:
        return {"x": (-np.inf, np.inf), "z1": (-np.inf, np.inf)}
    lo, hi = quantiles
    z_box = (float(stats.norm.ppf(lo)), float(stats.norm.ppf(hi)))
    if spec.discrete:
        # P(X = 0) = 1/2 by the symmetry of the logistic selection
        x_box = (0.0 if lo <= 0.5 else 1.0, 0.0 if hi < 0.5 else 1.0)
    else:
        x_box = z_box
    return {"x": x_box, "z1": z_box}


def _truncated_mean(lo, hi):
    return float(stats.truncnorm.mean(lo, hi))


def _discrete_moments(box, nodes=200):
    """
    P(T), E[X | T], E[Z | T] for the binary design. An unrestricted z is
    integrated by Gauss-Hermite, a truncated one by Gauss-Legendre over the box.
    """
    z_lo, z_hi = box["z1"]
    if np.isinf(z_lo) and np.isinf(z_hi):
        rule = normal_rule(nodes)
        density = np.ones(nodes)
    else:
        rule = legendre_rule(max(z_lo, -12.0), min(z_hi, 12.0), nodes)
        density = stats.norm.pdf(rule.knots)
    p1 = special.expit(rule.knots)
    x_lo, x_hi = box["x"]
    take0 = float(x_lo <= 0.0 <= x_hi)
    take1 = float(x_lo <= 1.0 <= x_hi)
    mass = density * (take0 * (1 - p1) + take1 * p1)
    total = rule.integrate(mass)
    mean_x = rule.integrate(density * take1 * p1) / total
    mean_z = rule.integrate(mass * rule.knots) / total
    return total, mean_x, mean_z


def mean_eps_given_trim(spec: DgpSpec, quantiles=Config.TRIM_QUANTILES) -> float:
    """E[eps | (X, Z) in the population box]."""
    box = population_box(spec, quantiles)
    if spec.discrete:
        _, mean_x, mean_z = _discrete_moments(box)
    else:
        mean_x = _truncated_mean(*box["x"])
        mean_z = _truncated_mean(*box["z1"])
    return spec.beta1 * mean_x + spec.beta2 * mean_z


def true_asf(spec: DgpSpec, x0, quantiles=Config.TRIM_QUANTILES) -> float:
    """
    mu(x0) = E[g(x0, eps, zeta) | (X, Z) in the trimming box]; ``quantiles=None``
    gives the unconditional ASF. Every design is affine in eps, so the truth
    only needs E[eps | T].
    """
    x0 = float(x0)
    if spec.name == "DGP-CONST":
        return spec.a0
    e = mean_eps_given_trim(spec, quantiles)
    if spec.discrete:
        return spec.a0 + spec.a1 * x0 + (1.0 + spec.c * x0) * e
    return spec.a0 + e + (spec.a1 + spec.delta * e) * x0


def true_asf_mc(spec: DgpSpec, x0, quantiles=Config.TRIM_QUANTILES, draws: int = 10 ** 7,
                chunk: int = 10 ** 6, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo cross-check of ``true_asf``: (estimate, standard error)."""
    x0 = float(x0)
    box = population_box(spec, quantiles)
    rng = replication_rng(seed, 2 ** 32 - 1)
    total = total_sq = 0.0
    kept = 0
    for start in range(0, draws, chunk):
        size = min(chunk, draws - start)
        z = rng.standard_normal(size)
        if spec.discrete:
            x = (rng.random(size) < special.expit(z)).astype(float)
        else:
            x = rng.standard_normal(size)
        eps = spec.beta1 * x + spec.beta2 * z + spec.noise_sd * rng.standard_normal(size)
        zeta = rng.standard_normal(size)
        slope = spec.slope_sd * rng.standard_normal(size)
        inside = (x >= box["x"][0]) & (x <= box["x"][1]) & (z >= box["z1"][0]) & (z <= box["z1"][1])
        g = _structural(spec, x0, eps[inside], zeta[inside], slope[inside])
        kept += int(inside.sum())
        total += float(np.sum(g))
        total_sq += float(np.sum(g * g))
    mean = total / kept
    var = max(total_sq / kept - mean * mean, 0.0)
    return mean, float(np.sqrt(var / kept))


def _structural(spec: DgpSpec, x0, eps, zeta, slope) -> np.ndarray:
    if spec.name == "DGP-CONST":
        return np.full(eps.shape, spec.a0)
    if spec.discrete:
        return spec.a0 + eps + spec.a1 * x0 + spec.c * eps * x0 + zeta
    extra = slope * x0 if spec.name == "DGP-P" else 0.0
    return (spec.a0 + eps) + (spec.a1 + spec.delta * eps) * x0 + extra + zeta
