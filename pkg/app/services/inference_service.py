"""Point estimates with their variance and normal confidence intervals."""
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import stats

from config import Config
from ..utils.errors import ConfigError


class Rate(str, Enum):
    SQRT_N = "sqrt-n"
    SQRT_N_B = "sqrt-n-b^dx"
    # point estimate only, no variance
    CONSISTENCY = "consistency-only"


@dataclass(frozen=True)
class AsfEstimate:
    x0: float
    mu_hat: float
    sigma2_hat: float
    rate: Rate
    n: int
    estimator: str
    bandwidth: float | None = None
    d_x: int = 1
    ci_level: float = Config.CI_LEVEL
    ci: tuple[float, float] = (np.nan, np.nan)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "rate", Rate(self.rate))
        if self.sigma2_hat < 0:
            raise ConfigError(f"sigma2_hat must be non-negative, got {self.sigma2_hat}")
        if self.rate is Rate.SQRT_N_B and not self.bandwidth:
            raise ConfigError("a sqrt-n-b^dx rate needs the bandwidth")
        if np.isnan(self.ci[0]) and np.isfinite(self.sigma2_hat):
            object.__setattr__(self, "ci", confidence_interval(self, self.ci_level))

    @property
    def rate_denominator(self) -> float:
        if self.rate is Rate.SQRT_N_B:
            return self.n * self.bandwidth ** self.d_x
        return float(self.n)

    @property
    def standard_error(self) -> float:
        return float(np.sqrt(self.sigma2_hat / self.rate_denominator))

    def with_level(self, level: float) -> "AsfEstimate":
        return replace(self, ci_level=level, ci=confidence_interval(self, level))

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "x0": float(self.x0),
            "mu_hat": float(self.mu_hat),
            "sigma2_hat": float(self.sigma2_hat),
            "standard_error": self.standard_error,
            "rate": self.rate.value,
            "n": self.n,
            "bandwidth": self.bandwidth,
            "ci_level": self.ci_level,
            "ci": [float(self.ci[0]), float(self.ci[1])],
            "diagnostics": self.diagnostics,
        }


def confidence_interval(est: AsfEstimate, level: float) -> tuple[float, float]:
    """mu_hat +/- z_{1-alpha/2} sqrt(sigma2_hat / D) with D = n or n b^dx."""
    if not 0.0 < level < 1.0:
        raise ConfigError(f"confidence level must lie in (0, 1), got {level}")
    z = float(stats.norm.ppf(0.5 + level / 2.0))
    half = z * est.standard_error
    return float(est.mu_hat - half), float(est.mu_hat + half)
