"""
Kernel functions, multi-index bookkeeping and kernel moment matrices.

Multi-indices are ordered by total degree first; within a degree the tuple
with the larger entry closer to the last position comes first, so for d=2
the degree-one block is (0, 1), (1, 0). The count of tuples of degree k is
C(d+k-1, d-1); the basis size Q is taken from the enumeration itself.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from itertools import combinations_with_replacement
from math import comb

import numpy as np

from config import Config
from ..utils.errors import ConfigError, DimensionMismatch, QuadratureNonConvergence
from ..utils.quadrature import legendre_rule

logger = logging.getLogger(__name__)


class KernelFamily(str, Enum):
    TRIWEIGHT = "triweight"
    BIWEIGHT = "biweight"
    EPANECHNIKOV = "epanechnikov"


# normalization constant, power of (1 - u^2), continuous derivatives at |u| = 1
_FAMILIES = {
    KernelFamily.TRIWEIGHT: (35.0 / 32.0, 3, 2),
    KernelFamily.BIWEIGHT: (15.0 / 16.0, 2, 1),
    KernelFamily.EPANECHNIKOV: (3.0 / 4.0, 1, 0),
}


@dataclass(frozen=True)
class KernelSpec:
    """Univariate kernel ``c (1 - u^2)^p`` on [-1, 1]; multivariate use is a product."""
    family: KernelFamily = KernelFamily.TRIWEIGHT

    def __post_init__(self):
        object.__setattr__(self, "family", KernelFamily(self.family))
        if self.smoothness < 2:
            logger.warning(
                "kernel %s is only C^%d at its support edge; variance formulas assume C^2",
                self.family.value, self.smoothness,
            )

    @property
    def radius(self) -> float:
        return 1.0

    @property
    def normalization(self) -> float:
        return _FAMILIES[self.family][0]

    @property
    def power(self) -> int:
        return _FAMILIES[self.family][1]

    @property
    def smoothness(self) -> int:
        return _FAMILIES[self.family][2]


@dataclass(frozen=True)
class MultiIndexBasis:
    dimension: int
    max_degree: int
    indices: tuple[tuple[int, ...], ...]
    exponents: np.ndarray = field(repr=False, compare=False)

    @property
    def size(self) -> int:
        return len(self.indices)

    Q = size

    @property
    def orders(self) -> np.ndarray:
        return self.exponents.sum(axis=1)

    def position(self, index) -> int:
        return self.indices.index(tuple(index))

    def unit_positions(self) -> list[int]:
        """Positions of the degree-one indices e_1, ..., e_d (in coordinate order)."""
        out = []
        for k in range(self.dimension):
            unit = [0] * self.dimension
            unit[k] = 1
            out.append(self.position(unit))
        return out


def stars_and_bars_count(d: int, q: int) -> int:
    return sum(comb(d + k - 1, d - 1) for k in range(q + 1))


def _position_key(index):
    # larger entries near the last position win inside one degree block
    return tuple(-e for e in reversed(index))


@lru_cache(maxsize=None)
def enumerate_multi_indices(d: int, q: int) -> MultiIndexBasis:
    """All d-tuples of non-negative integers with total degree at most q, in basis order."""
    if d < 1:
        raise ConfigError(f"multi-index dimension must be at least 1, got {d}")
    if q < 0:
        raise ConfigError(f"polynomial degree must be non-negative, got {q}")
    indices = []
    for k in range(q + 1):
        block = []
        for positions in combinations_with_replacement(range(d), k):
            entries = [0] * d
            for p in positions:
                entries[p] += 1
            block.append(tuple(entries))
        indices.extend(sorted(block, key=_position_key))
    exponents = np.array(indices, dtype=int).reshape(len(indices), d)
    exponents.setflags(write=False)
    return MultiIndexBasis(dimension=d, max_degree=q, indices=tuple(indices), exponents=exponents)


def _scalar_or_array(values):
    return float(values) if np.ndim(values) == 0 else values


def eval_kernel(spec: KernelSpec, u):
    """K(u); zero outside [-1, 1]."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) <= spec.radius
    base = np.where(inside, 1.0 - u * u, 0.0)
    return _scalar_or_array(spec.normalization * base ** spec.power)


def eval_kernel_derivative(spec: KernelSpec, u):
    """K'(u); zero at and outside the support edge for the C^1 families."""
    u = np.asarray(u, dtype=float)
    inside = np.abs(u) < spec.radius
    base = np.where(inside, 1.0 - u * u, 0.0)
    p = spec.power
    return _scalar_or_array(
        np.where(inside, -2.0 * p * spec.normalization * u * base ** (p - 1), 0.0)
    )


def product_kernel(spec: KernelSpec, scaled: np.ndarray) -> np.ndarray:
    """Product kernel over the columns of an (n, d) array of scaled distances."""
    scaled = np.atleast_2d(scaled)
    return np.prod(eval_kernel(spec, scaled), axis=1)


def product_kernel_gradient(spec: KernelSpec, scaled: np.ndarray) -> np.ndarray:
    """(n, d) gradient of the product kernel."""
    scaled = np.atleast_2d(scaled)
    values = eval_kernel(spec, scaled)
    derivs = eval_kernel_derivative(spec, scaled)
    n, d = scaled.shape
    grad = np.empty((n, d))
    for k in range(d):
        others = np.prod(np.delete(values, k, axis=1), axis=1) if d > 1 else np.ones(n)
        grad[:, k] = derivs[:, k] * others
    return grad


def polynomial_basis(basis: MultiIndexBasis, u) -> np.ndarray:
    """t(u) = (u^pi(1), ..., u^pi(Q)) for a single point u of length d."""
    u = np.asarray(u, dtype=float).ravel()
    if u.size != basis.dimension:
        raise DimensionMismatch(f"point has {u.size} coordinates, basis expects {basis.dimension}")
    return design_matrix(basis, u[None, :])[0]


def design_matrix(basis: MultiIndexBasis, points: np.ndarray) -> np.ndarray:
    """(n, Q) matrix of monomials evaluated at the rows of ``points``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if points.shape[1] != basis.dimension:
        raise DimensionMismatch(
            f"points have {points.shape[1]} coordinates, basis expects {basis.dimension}"
        )
    return np.prod(points[:, None, :] ** basis.exponents[None, :, :], axis=2)


def design_gradient(basis: MultiIndexBasis, points: np.ndarray) -> np.ndarray:
    """(n, Q, d) derivatives of each monomial with respect to each coordinate."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    grad = np.zeros((n, basis.size, d))
    for k in range(d):
        lowered = basis.exponents.copy()
        lowered[:, k] = np.maximum(lowered[:, k] - 1, 0)
        monomials = np.prod(points[:, None, :] ** lowered[None, :, :], axis=2)
        grad[:, :, k] = basis.exponents[:, k][None, :] * monomials
    return grad


def kappa(spec: KernelSpec, basis: MultiIndexBasis, scaled: np.ndarray) -> np.ndarray:
    """kappa(u) = t(u) K(u) for each row of ``scaled``; shape (n, Q)."""
    return design_matrix(basis, scaled) * product_kernel(spec, scaled)[:, None]


def kappa_gradient(spec: KernelSpec, basis: MultiIndexBasis, scaled: np.ndarray) -> np.ndarray:
    """d kappa / d u' for each row of ``scaled``; shape (n, Q, d)."""
    scaled = np.atleast_2d(scaled)
    t = design_matrix(basis, scaled)
    dt = design_gradient(basis, scaled)
    k = product_kernel(spec, scaled)
    dk = product_kernel_gradient(spec, scaled)
    return dt * k[:, None, None] + t[:, :, None] * dk[:, None, :]


@dataclass(frozen=True)
class MomentMatrices:
    S0: np.ndarray
    M: np.ndarray
    d_x: int
    d_v: int
    degree: int
    nodes: int
    rule: str = "gauss-legendre"

    def variance_constant(self) -> float:
        """e1' S0^{-1} M S0^{-1} e1, the kernel factor of the continuous-X variance."""
        s_inv_e1 = np.linalg.solve(self.S0, np.eye(self.S0.shape[0])[:, 0])
        return float(s_inv_e1 @ self.M @ s_inv_e1)


def _univariate_moments(spec, max_power, nodes, squared=False):
    rule = legendre_rule(-spec.radius, spec.radius, nodes)
    k = eval_kernel(spec, rule.knots)
    if squared:
        k = k * k
    return np.array([rule.integrate(rule.knots ** p * k) for p in range(max_power + 1)])


def _moment_matrices_at(spec, d_x, d_v, q, nodes):
    d = d_x + d_v
    basis = enumerate_multi_indices(d, q)
    E = basis.exponents
    mom = _univariate_moments(spec, 2 * q, nodes)
    mom_sq = _univariate_moments(spec, 2 * q, nodes, squared=True)
    Q = basis.size
    S0 = np.ones((Q, Q))
    M = np.ones((Q, Q))
    for i in range(Q):
        for j in range(Q):
            combined = E[i] + E[j]
            S0[i, j] = np.prod(mom[combined])
            x_part = np.prod(mom_sq[combined[:d_x]]) if d_x else 1.0
            v_part = np.prod(mom[E[i, d_x:]]) * np.prod(mom[E[j, d_x:]])
            M[i, j] = x_part * v_part
    return S0, M


def compute_moment_matrices(spec: KernelSpec, d_x: int, d_v: int, q: int,
                            nodes: int | None = None) -> MomentMatrices:
    """
    S0 and M for the product kernel in (x, v).

    The product structure makes every entry a product of univariate moments of
    K (and of K^2 for the x block of M), which are integrated by Gauss-Legendre
    on the kernel support. The rule is re-run with twice the nodes; a change
    above 1e-6 in any entry raises QuadratureNonConvergence.
    """
    if d_x < 0 or d_v < 0 or d_x + d_v < 1:
        raise ConfigError(f"invalid kernel dimensions d_x={d_x}, d_v={d_v}")
    if q < 0:
        raise ConfigError(f"polynomial degree must be non-negative, got {q}")
    nodes = Config.QUADRATURE_NODES if nodes is None else nodes
    if nodes < 16:
        raise ConfigError(f"at least 16 quadrature nodes are required, got {nodes}")
    S0, M = _moment_matrices_at(spec, d_x, d_v, q, nodes)
    S0_fine, M_fine = _moment_matrices_at(spec, d_x, d_v, q, 2 * nodes)
    change = max(np.max(np.abs(S0 - S0_fine)), np.max(np.abs(M - M_fine)))
    if change > 1e-6:
        raise QuadratureNonConvergence(
            f"moment matrices moved by {change:.3e} when doubling {nodes} nodes"
        )
    return MomentMatrices(S0=S0_fine, M=M_fine, d_x=d_x, d_v=d_v, degree=q, nodes=2 * nodes)
