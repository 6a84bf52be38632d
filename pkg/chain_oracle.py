"""
Exact machinery on finite-state Markov chains.

Stationary laws, univariate and bivariate Poisson equations, the quadratic martingale array
Q_{n,l,j}, the exact long-run variance, and machine-precision checks of the martingale
decompositions of quadratic forms and lag-window estimators.

Paths are state-index arrays X_0, X_1, ..., X_n; observations are X_1..X_n and X_0 only enters
through the martingale increments.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Union
import logging

import numpy as np
import pandas as pd
from scipy import linalg

from base import ChainError, InvalidParameterError, SolverError
from lagwindow import lag_window_estimate, quadratic_form_value
from windows import WindowFunction, lag_weights

logger = logging.getLogger(__name__)

STOCHASTIC_TOL = 1e-12
SYMMETRY_TOL = 1e-12
SIGMA2_AGREEMENT = 1e-9

WeightFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def check_chain(P) -> np.ndarray:
    """Validates a row-stochastic matrix and returns it as a float array."""
    P = np.array(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1] or P.shape[0] == 0:
        raise ChainError(f"Transition matrix must be square and nonempty, got shape {P.shape}.")
    if not np.all(np.isfinite(P)):
        raise ChainError("Transition matrix has non-finite entries.")
    if np.any(P < 0):
        raise ChainError("Transition matrix has negative entries.")
    row_err = np.max(np.abs(P.sum(axis=1) - 1.0))
    if row_err > STOCHASTIC_TOL:
        raise ChainError(f"Rows must sum to 1 (max deviation {row_err:.3g}).")
    return P


def is_primitive(P: np.ndarray) -> bool:
    """
    Irreducible and aperiodic, decided exactly on the transition graph: a nonnegative S x S
    matrix is primitive iff its (S-1)^2 + 1 power is entrywise positive.
    """
    S = P.shape[0]
    base = (P > 0).astype(np.int64)
    result = np.eye(S, dtype=np.int64)
    e = (S - 1) ** 2 + 1
    while e:
        if e & 1:
            result = (result @ base > 0).astype(np.int64)
        base = (base @ base > 0).astype(np.int64)
        e >>= 1
    return bool(np.all(result > 0))


class FiniteChain:
    """
    Finite-state chain with transition matrix P and initial distribution rho.

    Without an explicit initial law the chain starts from its stationary law when that exists,
    otherwise from the uniform law.
    """

    def __init__(self, P, initial=None):
        P = check_chain(P)
        P.setflags(write=False)
        self.P = P
        self.S = P.shape[0]
        if initial is None:
            initial = self.stationary if self.primitive else np.full(self.S, 1.0 / self.S)
        initial = np.array(initial, dtype=float)
        if initial.shape != (self.S,) or np.any(initial < 0) or abs(initial.sum() - 1.0) > STOCHASTIC_TOL:
            raise ChainError("Initial distribution must be a probability vector over the states.")
        initial.setflags(write=False)
        self.initial = initial

    @cached_property
    def primitive(self) -> bool:
        return is_primitive(self.P)

    def require_primitive(self) -> None:
        if not self.primitive:
            raise ChainError("Chain is reducible or periodic; the oracle needs an irreducible aperiodic chain.")

    @cached_property
    def stationary(self) -> np.ndarray:
        return stationary(self)

    @cached_property
    def _pi_matrix(self) -> np.ndarray:
        return np.tile(self.stationary, (self.S, 1))

    @cached_property
    def _fundamental_lu(self):
        # I - P + Pi is invertible for a primitive chain; its inverse is the fundamental matrix
        return linalg.lu_factor(np.eye(self.S) - self.P + self._pi_matrix)

    def solve_centered(self, rhs: np.ndarray) -> np.ndarray:
        """(I - P + Pi)^{-1} rhs, the pi-centered solution of (I - P) x = rhs for pi-centered rhs."""
        self.require_primitive()
        return linalg.lu_solve(self._fundamental_lu, rhs)

    @cached_property
    def deviation(self) -> np.ndarray:
        return deviation_operator(self)

    @classmethod
    def from_csv(cls, path: str, initial=None) -> "FiniteChain":
        """S rows of S comma-separated probabilities, no header."""
        frame = pd.read_csv(path, header=None)
        return cls(frame.to_numpy(dtype=float), initial)

    def __str__(self):
        return f"FiniteChain(S={self.S})"


def read_chain_csv(path: str, initial=None) -> FiniteChain:
    return FiniteChain.from_csv(path, initial)


def random_chain(S: int, rng: np.random.Generator, concentration: float = 1.0) -> FiniteChain:
    """Rows drawn from a symmetric Dirichlet; strictly positive, hence primitive."""
    if S < 1:
        raise InvalidParameterError("Number of states must be positive.")
    P = rng.dirichlet(np.full(S, concentration), size=S)
    P = P / P.sum(axis=1, keepdims=True)
    return FiniteChain(P)


def stationary(chain: FiniteChain) -> np.ndarray:
    """
    The invariant law pi with pi P = pi and sum(pi) = 1.

    One balance equation is redundant; it is replaced by the normalization row.
    """
    chain.require_primitive()
    S = chain.S
    A = chain.P.T - np.eye(S)
    A[-1, :] = 1.0
    rhs = np.zeros(S)
    rhs[-1] = 1.0
    pi = linalg.solve(A, rhs)
    resid = np.max(np.abs(pi @ chain.P - pi))
    if resid > 1e-10 or np.any(pi < -1e-12):
        raise SolverError(f"Stationary solve failed (residual {resid:.3g}).")
    pi = np.clip(pi, 0.0, None)
    pi = pi / pi.sum()
    pi.setflags(write=False)
    logger.debug("stationary law for S=%d, residual %.3g", S, resid)
    return pi


@dataclass(frozen=True)
class PoissonSolution:
    """
    Solution of G - PG = h with h = f - pi(f) and pi(G) = 0.
    """

    h: np.ndarray
    G: np.ndarray
    PG: np.ndarray
    mean: float

    def residual(self, chain: FiniteChain) -> float:
        return float(np.max(np.abs((self.G - chain.P @ self.G) - self.h)))


def poisson_solve(chain: FiniteChain, f) -> PoissonSolution:
    f = np.asarray(f, dtype=float)
    if f.shape != (chain.S,):
        raise InvalidParameterError(f"Function must have one value per state ({chain.S}), got shape {f.shape}.")
    chain.require_primitive()
    mean = float(chain.stationary @ f)
    h = f - mean
    G = chain.solve_centered(h)
    PG = chain.P @ G
    sol = PoissonSolution(h=h, G=G, PG=PG, mean=mean)
    resid = sol.residual(chain)
    if resid > 1e-9 * (1.0 + np.max(np.abs(h))):
        raise SolverError(f"Poisson equation residual {resid:.3g} too large.")
    return sol


def deviation_operator(chain: FiniteChain) -> np.ndarray:
    """
    D = sum_{n>=0} (P^n - Pi), obtained as the fundamental matrix minus Pi.

    Solves (I - P) D = I - Pi with Pi D = 0.
    """
    chain.require_primitive()
    Z = chain.solve_centered(np.eye(chain.S))
    return Z - chain._pi_matrix


def conditional_mean_residual(chain: FiniteChain, poisson: PoissonSolution) -> float:
    """max_x |sum_y P(x, y) (G(y) - PG(x))|: the martingale increments have conditional mean 0."""
    return float(np.max(np.abs(chain.P @ poisson.G - poisson.PG)))


def exact_sigma2(chain: FiniteChain, f) -> float:
    """
    Long-run variance of f along the stationary chain, computed as pi(h (2G - h)) and checked
    against the martingale form sum_x pi(x) sum_y P(x, y) (G(y) - PG(x))^2.
    """
    sol = poisson_solve(chain, f)
    pi = chain.stationary
    direct = float(pi @ (sol.h * (2.0 * sol.G - sol.h)))
    increments = sol.G[None, :] - sol.PG[:, None]
    martingale = float(pi @ np.sum(chain.P * increments**2, axis=1))
    if abs(direct - martingale) > SIGMA2_AGREEMENT * (1.0 + abs(direct)):
        raise SolverError(f"Long-run variance formulas disagree: {direct!r} vs {martingale!r}.")
    return direct


def hoeffding_projection(chain: FiniteChain, h):
    """
    theta = pi' h pi, h1(x) = sum_z h(x, z) pi(z) - theta, h2 = h - h1(x) - h1(y) - theta.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (chain.S, chain.S):
        raise InvalidParameterError(f"Kernel must be {chain.S}x{chain.S}, got {h.shape}.")
    scale = 1.0 + np.max(np.abs(h))
    if np.max(np.abs(h - h.T)) > SYMMETRY_TOL * scale:
        raise InvalidParameterError("Kernel matrix must be symmetric.")
    pi = chain.stationary
    theta = float(pi @ h @ pi)
    h1 = h @ pi - theta
    h2 = h - h1[:, None] - h1[None, :] - theta
    return theta, h1, h2


@dataclass(frozen=True)
class BivariateSolution:
    """
    Hoeffding pieces of a symmetric kernel and the solution G2 of the bivariate Poisson equation.

    PG2[x, y] = sum_z P(x, z) G2(z, y); P2G2[x, y] = sum_{z,u} P(x, z) P(y, u) G2(z, u).
    """

    theta: float
    h1bar: np.ndarray
    h2bar: np.ndarray
    G2bar: np.ndarray
    PG2bar: np.ndarray
    P2G2bar: np.ndarray

    def lam(self, x1, x2, y1, y2):
        """Lambda_2(x1, x2; y1, y2); broadcasts over state-index arrays."""
        return self.G2bar[y1, y2] - self.PG2bar[x2, y1] - self.PG2bar[x1, y2] + self.P2G2bar[x1, x2]


def bivariate_poisson_solve(chain: FiniteChain, h) -> BivariateSolution:
    chain.require_primitive()
    theta, h1, h2 = hoeffding_projection(chain, h)
    D = chain.deviation
    G2 = D @ h2 @ D.T
    G2 = 0.5 * (G2 + G2.T)
    PG2 = chain.P @ G2
    P2G2 = chain.P @ G2 @ chain.P.T
    return BivariateSolution(theta=theta, h1bar=h1, h2bar=h2, G2bar=G2, PG2bar=PG2, P2G2bar=P2G2)


def verify_bivariate_poisson(sol: BivariateSolution, chain: FiniteChain) -> float:
    """max_{x,y} |h2(x, y) - [G2(x, y) - PG2(y, x) - PG2(x, y) + P2G2(x, y)]|."""
    rhs = sol.G2bar - sol.PG2bar.T - sol.PG2bar + sol.P2G2bar
    return float(np.max(np.abs(sol.h2bar - rhs)))


def verify_martingale_property(sol: BivariateSolution, chain: FiniteChain) -> float:
    """
    max of |sum_y P(x, y) Lambda_2(u, x, v, y)| over (u, x, v) and of
    |sum_v P(u, v) Lambda_2(u, x, v, y)| over (u, x, y).
    """
    P = chain.P
    lam = (
        sol.G2bar[None, None, :, :]
        - sol.PG2bar[None, :, :, None]
        - sol.PG2bar[:, None, None, :]
        + sol.P2G2bar[:, :, None, None]
    )
    second = np.einsum("bd,abcd->abc", P, lam)
    first = np.einsum("ac,abcd->abd", P, lam)
    return float(max(np.max(np.abs(second)), np.max(np.abs(first))))


def validate_path(path, chain: FiniteChain, min_length: int = 2) -> np.ndarray:
    path = np.asarray(path)
    if path.ndim != 1 or path.shape[0] < min_length:
        raise ChainError(f"Path must be a 1-d array of at least {min_length} states.")
    if not np.issubdtype(path.dtype, np.integer):
        if np.any(path != np.round(path)):
            raise ChainError("Path entries must be integer state indices.")
        path = path.astype(np.int64)
    if np.any(path < 0) or np.any(path >= chain.S):
        raise ChainError(f"Path has states outside [0, {chain.S}).")
    return path


def strict_pair_sum(F: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> float:
    """
    sum_l sum_{j<l} F[rows[l], cols[j]] in O(n S) using running counts of earlier states.
    """
    S = F.shape[1]
    onehot = np.zeros((cols.shape[0], S))
    onehot[np.arange(cols.shape[0]), cols] = 1.0
    before = np.cumsum(onehot, axis=0) - onehot
    return float(np.sum(F[rows] * before))


@dataclass
class QSequences:
    """
    Martingale increments along a path.

    q[l-1] = G(X_l) - PG(X_{l-1}) for l = 1..n; pair(l, j) = Lambda_2(X_{j-1}, X_{l-1}; X_j, X_l).
    """

    path: np.ndarray
    q: np.ndarray
    bivariate: Optional[BivariateSolution] = None
    n: int = field(init=False)

    def __post_init__(self):
        self.n = int(self.path.shape[0] - 1)

    def _need_bivariate(self) -> BivariateSolution:
        if self.bivariate is None:
            raise InvalidParameterError("Pairwise increments need a bivariate solution.")
        return self.bivariate

    def pair(self, l: int, j: int) -> float:
        sol = self._need_bivariate()
        if not (1 <= j <= self.n and 1 <= l <= self.n):
            raise ChainError(f"Indices (l={l}, j={j}) outside 1..{self.n}.")
        X = self.path
        return float(sol.lam(X[j - 1], X[l - 1], X[j], X[l]))

    def pair_matrix(self) -> np.ndarray:
        """Dense n x n array M[l-1, j-1] = Q_{n,l,j}."""
        sol = self._need_bivariate()
        cur, prev = self.path[1:], self.path[:-1]
        return (
            sol.G2bar[np.ix_(cur, cur)]
            - sol.PG2bar[np.ix_(prev, cur)]
            - sol.PG2bar[np.ix_(prev, cur)].T
            + sol.P2G2bar[np.ix_(prev, prev)].T
        )

    def strict_lower_sum(self) -> float:
        """sum_{l=2}^n sum_{j<l} Q_{n,l,j} without forming the n x n array."""
        sol = self._need_bivariate()
        cur, prev = self.path[1:], self.path[:-1]
        return (
            strict_pair_sum(sol.G2bar, cur, cur)
            - strict_pair_sum(sol.PG2bar, prev, cur)
            - strict_pair_sum(sol.PG2bar.T, cur, prev)
            + strict_pair_sum(sol.P2G2bar.T, prev, prev)
        )


def q_sequences(
    path, chain: FiniteChain, poisson: Optional[PoissonSolution] = None, bivariate: Optional[BivariateSolution] = None
) -> QSequences:
    """Without a univariate solution only the pairwise increments are available."""
    path = validate_path(path, chain)
    q = np.zeros(0) if poisson is None else poisson.G[path[1:]] - poisson.PG[path[:-1]]
    return QSequences(path=path, q=q, bivariate=bivariate)


def _toeplitz_bilinear(x: np.ndarray, y: np.ndarray, v: np.ndarray, s: int, t: int) -> float:
    """
    sum_{l,j=0}^n x_l y_j W(l+s, j+t) where W(r, c) = v[r-c] on 1 <= c <= r <= n and 0 elsewhere.
    """
    n = x.shape[0] - 1
    total = 0.0
    for d in range(v.shape[0]):
        if v[d] == 0.0:
            continue
        e = d - s + t
        lo = max(0, max(0, 1 - t) + e)
        hi = min(n - s, n + e)
        if lo > hi:
            continue
        total += v[d] * np.dot(x[lo : hi + 1], y[lo - e : hi - e + 1])
    return total


@dataclass(frozen=True)
class DecompositionReport:
    gamma_sq: float
    term_diag: float
    term_quad: float
    term_rn: float
    term_zeta: float
    residual: float
    n: int
    c_n: float

    @property
    def scale(self) -> float:
        return 1.0 + abs(self.gamma_sq)

    def as_dict(self) -> dict:
        return {
            "n": self.n,
            "c_n": self.c_n,
            "gamma_sq": self.gamma_sq,
            "term_diag": self.term_diag,
            "term_quad": self.term_quad,
            "term_rn": self.term_rn,
            "term_zeta": self.term_zeta,
            "residual": self.residual,
        }


def lag_quadratic_weights(w: WindowFunction, c_n: float, n: int) -> np.ndarray:
    """v[0] = 1/n, v[k] = 2 w_b(k / c_n) / n: the weights w_{n,b}(k) of the quadratic form."""
    lags = lag_weights(w, c_n, n)
    return np.concatenate(([1.0 / n], 2.0 * lags / n))


def decomposition_report(path, w: WindowFunction, c_n: float, chain: FiniteChain, f) -> DecompositionReport:
    """
    Gamma^2 = n^{-1} sum Q_l^2 + sum_l sum_{j<l} w_{n,b}(l-j) Q_l Q_j + R_n + zeta_n.

    zeta_n is assembled from the summation-by-parts form: each of the three telescoping pieces
    of h(X_l)h(X_j) - Q_l Q_j is summed against the difference of the weights shifted by one
    index, boundary rows included.
    """
    path = validate_path(path, chain, min_length=3)
    poisson = poisson_solve(chain, f)
    n = path.shape[0] - 1
    raw = np.asarray(f, dtype=float)[path[1:]]
    est = lag_window_estimate(raw, w, c_n)
    centered = poisson.h[path[1:]]
    _, r_n = quadratic_form_value(centered, w, c_n)

    v = lag_quadratic_weights(w, c_n, n)
    q = poisson.G[path[1:]] - poisson.PG[path[:-1]]
    term_diag = float(np.dot(q, q) / n)
    term_quad = 0.0
    for d in range(1, v.shape[0]):
        term_quad += v[d] * np.dot(q[d:], q[:-d])

    g = poisson.G[path]
    p = poisson.PG[path]
    zeta = (
        _toeplitz_bilinear(p, g, v, 1, 0)
        - _toeplitz_bilinear(p, g, v, 0, 0)
        + _toeplitz_bilinear(g, p, v, 0, 1)
        - _toeplitz_bilinear(g, p, v, 0, 0)
        + _toeplitz_bilinear(p, p, v, 0, 0)
        - _toeplitz_bilinear(p, p, v, 1, 1)
    )
    residual = est.gamma_sq - (term_diag + term_quad + r_n + zeta)
    return DecompositionReport(
        gamma_sq=est.gamma_sq,
        term_diag=term_diag,
        term_quad=float(term_quad),
        term_rn=r_n,
        term_zeta=float(zeta),
        residual=float(residual),
        n=n,
        c_n=float(c_n),
    )


def ustat_weights(l: np.ndarray, j: np.ndarray) -> np.ndarray:
    """w_n(l, j) = 1 for l != j, 0 on the diagonal."""
    return (l != j).astype(float)


def lag_window_weights(w: WindowFunction, c_n: float, n: int) -> WeightFn:
    """The lag-window quadratic-form weights w_{n,b}(l - j) as a pairwise evaluator."""
    v = lag_quadratic_weights(w, c_n, n)

    def weights(l: np.ndarray, j: np.ndarray) -> np.ndarray:
        d = l - j
        out = np.zeros(np.broadcast(l, j).shape)
        ok = (d >= 0) & (d < v.shape[0])
        out[ok] = v[d[ok]]
        return out

    return weights


@dataclass(frozen=True)
class HoeffdingTerms:
    u_n: float
    u_n0: float
    linear: float
    diagonal: float
    quadratic: float
    zeta_explicit: float
    zeta_implicit: float

    @property
    def mismatch(self) -> float:
        return abs(self.zeta_explicit - self.zeta_implicit)


def _weight_matrix(weights: Union[WeightFn, np.ndarray], n: int) -> np.ndarray:
    """Lower-triangular T[l-1, j-1] = w_n(l, j) for 1 <= j <= l <= n."""
    if callable(weights):
        idx = np.arange(1, n + 1)
        W = np.asarray(weights(idx[:, None], idx[None, :]), dtype=float)
    else:
        W = np.asarray(weights, dtype=float)
    if W.shape != (n, n):
        raise InvalidParameterError(f"Weight matrix must be {n}x{n}, got {W.shape}.")
    if not np.all(np.isfinite(W)):
        raise InvalidParameterError("Weights must be finite.")
    return np.tril(W)


def hoeffding_terms(path, weights: Union[WeightFn, np.ndarray], h, chain: FiniteChain) -> HoeffdingTerms:
    """
    U_n(h) = U_{n,0} + sum_l w_{n,1}(l) h1(X_l) + sum_l w_n(l,l) Q_{n,l,l}
             + sum_l sum_{j<l} w_n(l,j) Q_{n,l,j} + zeta_n.

    zeta_explicit sums the three telescoping differences of h2(X_l, X_j) - Q_{n,l,j} by parts
    against the zero-extended weights; zeta_implicit is what is left of U_n after the other
    four terms. Dense in n, meant for paths of a few hundred steps.
    """
    path = validate_path(path, chain)
    n = path.shape[0] - 1
    h = np.asarray(h, dtype=float)
    sol = bivariate_poisson_solve(chain, h)
    T = _weight_matrix(weights, n)
    obs = path[1:]

    u_n = float(np.sum(T * h[np.ix_(obs, obs)]))
    u_n0 = sol.theta * float(np.sum(T))
    w1 = T.sum(axis=1) + T.sum(axis=0)
    linear = float(np.dot(w1, sol.h1bar[obs]))

    Q = q_sequences(path, chain, bivariate=sol).pair_matrix()
    diagonal = float(np.dot(np.diag(T), np.diag(Q)))
    quadratic = float(np.sum(np.tril(T, -1) * Q))

    # zero-extended weights on indices 0..n+1
    Wt = np.zeros((n + 2, n + 2))
    Wt[1 : n + 1, 1 : n + 1] = T
    core = Wt[: n + 1, : n + 1]
    row_shift = Wt[1:, : n + 1] - core
    col_shift = (Wt[: n + 1, 1:] - core).T
    diag_shift = core - Wt[1:, 1:]
    A = sol.PG2bar[np.ix_(path, path)]
    B = sol.P2G2bar[np.ix_(path, path)]
    zeta_explicit = float(np.sum(A * (row_shift + col_shift)) + np.sum(B * diag_shift))
    zeta_implicit = u_n - u_n0 - linear - diagonal - quadratic
    return HoeffdingTerms(
        u_n=u_n,
        u_n0=u_n0,
        linear=linear,
        diagonal=diagonal,
        quadratic=quadratic,
        zeta_explicit=zeta_explicit,
        zeta_implicit=float(zeta_implicit),
    )


@dataclass(frozen=True)
class LinearDecomposition:
    total: float
    martingale: float
    remainder: float

    @property
    def residual(self) -> float:
        return self.total - self.martingale - self.remainder


def linear_martingale_decomposition(path, a, chain: FiniteChain, f) -> LinearDecomposition:
    """
    sum_l a_l h(X_l) = sum_l a_l Q_l + eps, with h = f - pi(f) and, by Abel summation,
    eps = sum_l (a_l - a_{l-1}) PG(X_{l-1}) - a_n PG(X_n), taking a_0 = 0.
    """
    path = validate_path(path, chain)
    n = path.shape[0] - 1
    a = np.asarray(a, dtype=float)
    if a.shape != (n,):
        raise InvalidParameterError(f"Need one coefficient per observation ({n}), got shape {a.shape}.")
    if not np.all(np.isfinite(a)):
        raise InvalidParameterError("Coefficients must be finite.")
    sol = poisson_solve(chain, f)
    total = float(np.dot(a, sol.h[path[1:]]))
    q = sol.G[path[1:]] - sol.PG[path[:-1]]
    martingale = float(np.dot(a, q))
    steps = np.diff(np.concatenate(([0.0], a)))
    remainder = float(np.dot(steps, sol.PG[path[:-1]]) - a[-1] * sol.PG[path[-1]])
    return LinearDecomposition(total=total, martingale=martingale, remainder=remainder)


def weighted_lln_average(path, a, chain: FiniteChain, f) -> float:
    """(sum |a_l|)^{-1} sum_l a_l (f(X_l) - pi(f)); tends to 0 in probability."""
    path = validate_path(path, chain)
    a = np.asarray(a, dtype=float)
    f = np.asarray(f, dtype=float)
    norm = np.sum(np.abs(a))
    if norm == 0:
        raise InvalidParameterError("Coefficients must not all vanish.")
    centered = f[path[1:]] - float(chain.stationary @ f)
    return float(np.dot(a, centered) / norm)
