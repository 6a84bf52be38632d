"""
U-statistics sum_{l=2}^n sum_{j<l} h(X_l, X_j) along chain paths and their CLT normalization.

Kernels are either a symmetric S x S matrix over chain states, which gives access to the exact
projections of the finite-chain oracle, or a vectorized function of two observed values.
"""

from dataclasses import dataclass
from typing import Callable, Tuple, Union
import logging

import numpy as np

from base import DegenerateKernel, InvalidParameterError
from chain_oracle import (
    FiniteChain,
    SYMMETRY_TOL,
    bivariate_poisson_solve,
    exact_sigma2,
    q_sequences,
    validate_path,
)

logger = logging.getLogger(__name__)

DEGENERACY_TOL = 1e-14

Kernel = Union[np.ndarray, Callable[[np.ndarray, np.ndarray], np.ndarray]]


class UStatSpec:
    """A symmetric kernel; the weights are w_n(l, j) = 1 for j != l and 0 on the diagonal."""

    def __init__(self, kernel: Kernel):
        if callable(kernel):
            self.matrix = None
            self.fn = kernel
            return
        h = np.array(kernel, dtype=float)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise InvalidParameterError(f"Kernel matrix must be square, got shape {h.shape}.")
        if np.max(np.abs(h - h.T)) > SYMMETRY_TOL * (1.0 + np.max(np.abs(h))):
            raise InvalidParameterError("Kernel matrix must be symmetric.")
        h.setflags(write=False)
        self.matrix = h
        self.fn = None

    @classmethod
    def sum_kernel(cls, f) -> "UStatSpec":
        """h(x, y) = f(x) + f(y)."""
        f = np.asarray(f, dtype=float)
        return cls(f[:, None] + f[None, :])

    @classmethod
    def product_kernel(cls, f) -> "UStatSpec":
        """h(x, y) = f(x) f(y)."""
        f = np.asarray(f, dtype=float)
        return cls(np.outer(f, f))

    def require_matrix(self, S: int) -> np.ndarray:
        if self.matrix is None:
            raise InvalidParameterError("Exact projections need a kernel matrix over the chain states.")
        if self.matrix.shape != (S, S):
            raise InvalidParameterError(f"Kernel is {self.matrix.shape}, chain has {S} states.")
        return self.matrix


def u_statistic(obs, spec: UStatSpec) -> float:
    """
    sum over ordered pairs j < l of h(obs_l, obs_j). obs are state indices for a matrix kernel
    and real values for a function kernel.
    """
    obs = np.asarray(obs)
    if obs.ndim != 1:
        raise InvalidParameterError("Observations must be one-dimensional.")
    if obs.shape[0] < 2:
        return 0.0
    if spec.matrix is not None:
        h = spec.matrix
        if np.any(obs < 0) or np.any(obs >= h.shape[0]):
            raise InvalidParameterError("State index outside the kernel matrix.")
        counts = np.bincount(obs.astype(np.int64), minlength=h.shape[0]).astype(float)
        return float((counts @ h @ counts - np.dot(counts, np.diag(h))) / 2.0)
    x = obs.astype(float)
    values = np.asarray(spec.fn(x[:, None], x[None, :]), dtype=float)
    return float(np.sum(np.tril(values, -1)))


@dataclass(frozen=True)
class CltNormalization:
    """sigma_n_sq = n (n - 1)^2 sigma_n1_sq."""

    theta: float
    sigma_n1_sq: float
    sigma_n_sq: float
    n: int

    @classmethod
    def build(cls, theta: float, sigma_n1_sq: float, n: int) -> "CltNormalization":
        return cls(theta=theta, sigma_n1_sq=sigma_n1_sq, sigma_n_sq=n * (n - 1) ** 2 * sigma_n1_sq, n=n)

    @property
    def pairs(self) -> int:
        return self.n * (self.n - 1) // 2


def _normalization(path: np.ndarray, chain: FiniteChain, spec: UStatSpec):
    h = spec.require_matrix(chain.S)
    sol = bivariate_poisson_solve(chain, h)
    n = path.shape[0] - 1
    sigma_n1_sq = exact_sigma2(chain, sol.h1bar)
    if sigma_n1_sq <= DEGENERACY_TOL:
        raise DegenerateKernel(f"Long-run variance of the first-order projection is {sigma_n1_sq:.3g}; kernel is degenerate.")
    return sol, CltNormalization.build(sol.theta, sigma_n1_sq, n)


def clt_normalize(path, chain: FiniteChain, spec: UStatSpec) -> Tuple[float, CltNormalization]:
    """
    (U_n - theta n(n-1)/2) / sigma_n on the observations X_1..X_n of a path X_0..X_n.

    Args:
        path: States X_0..X_n; X_0 is not part of the statistic.
        chain: The chain that generated the path, used for theta and sigma_n.
        spec: Kernel of the U-statistic.

    Returns:
        The normalized statistic and the CltNormalization it was divided by.
    """
    path = validate_path(path, chain, min_length=3)
    _, norm = _normalization(path, chain, spec)
    u = u_statistic(path[1:], spec)
    return float((u - norm.theta * norm.pairs) / np.sqrt(norm.sigma_n_sq)), norm


def linear_statistic(path, chain: FiniteChain, spec: UStatSpec) -> float:
    """(sigma_{n,1} sqrt(n))^{-1} sum_l h1(X_l)."""
    path = validate_path(path, chain, min_length=3)
    sol, norm = _normalization(path, chain, spec)
    n = norm.n
    return float(np.sum(sol.h1bar[path[1:]]) / np.sqrt(norm.sigma_n1_sq * n))


def quadratic_remainder(path, chain: FiniteChain, spec: UStatSpec) -> float:
    """
    zeta_n = U_n - C(n, 2) theta - (n - 1) sum_l h1(X_l) - sum_l sum_{j<l} Q_{n,l,j}.

    Works for degenerate kernels too; it only needs the projections.
    """
    path = validate_path(path, chain, min_length=3)
    h = spec.require_matrix(chain.S)
    sol = bivariate_poisson_solve(chain, h)
    n = path.shape[0] - 1
    u = u_statistic(path[1:], spec)
    linear = (n - 1) * float(np.sum(sol.h1bar[path[1:]]))
    quad = q_sequences(path, chain, bivariate=sol).strict_lower_sum()
    return float(u - sol.theta * n * (n - 1) / 2.0 - linear - quad)
