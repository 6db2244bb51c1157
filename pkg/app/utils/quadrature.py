"""
One-dimensional quadrature rules for the kernel moment matrices and the
closed-form ASF of the reference designs.

Base rules are cached per node count; a rule on [lo, hi] or for N(mean, sd^2)
is an affine map of the cached one.
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class QuadratureRule:
    knots: np.ndarray
    weights: np.ndarray

    @property
    def nodes(self) -> int:
        return int(self.knots.size)

    def integrate(self, values) -> float:
        """Weighted sum of ``values`` taken at the knots."""
        return float(np.dot(self.weights, values))


def _check_nodes(nodes: int):
    if nodes < 1:
        raise ConfigError(f"a quadrature rule needs at least one node, got {nodes}")


@lru_cache(maxsize=32)
def _legendre(nodes: int):
    knots, weights = np.polynomial.legendre.leggauss(nodes)
    knots.setflags(write=False)
    weights.setflags(write=False)
    return knots, weights


@lru_cache(maxsize=32)
def _hermite(nodes: int):
    # physicists' rule for exp(-t^2); t = u / sqrt(2) turns it into the N(0, 1) density
    knots, weights = np.polynomial.hermite.hermgauss(nodes)
    knots, weights = np.sqrt(2.0) * knots, weights / np.sqrt(np.pi)
    knots.setflags(write=False)
    weights.setflags(write=False)
    return knots, weights


def legendre_rule(lo: float, hi: float, nodes: int) -> QuadratureRule:
    """Gauss-Legendre rule for plain integrals over the finite interval [lo, hi]."""
    _check_nodes(nodes)
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ConfigError(f"Gauss-Legendre needs a finite interval with lo < hi, got [{lo}, {hi}]")
    knots, weights = _legendre(nodes)
    half = 0.5 * (hi - lo)
    return QuadratureRule(knots=half * knots + 0.5 * (hi + lo), weights=half * weights)


def normal_rule(nodes: int, mean: float = 0.0, sd: float = 1.0) -> QuadratureRule:
    """Gauss-Hermite rule for expectations under N(mean, sd^2); the weights sum to one."""
    _check_nodes(nodes)
    if not sd > 0:
        raise ConfigError(f"normal rule needs a positive sd, got {sd}")
    knots, weights = _hermite(nodes)
    return QuadratureRule(knots=mean + sd * knots, weights=weights.copy())
