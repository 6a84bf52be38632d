"""
Example processes: GARCH(1,1), a Poisson log-linear posterior explored by random-walk
Metropolis, synthetic count data, and paths of finite-state chains.

Every sampler takes an RngStream (or a numpy Generator) and only advances that stream.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union
import logging

import numpy as np
from scipy import linalg, special

from base import ChainError, InvalidParameterError, RngStream
from chain_oracle import FiniteChain

logger = logging.getLogger(__name__)

LogTarget = Callable[[np.ndarray], float]
RngLike = Union[RngStream, np.random.Generator]

# steps of proposals and uniforms drawn per block in rwm_sample
RWM_CHUNK = 4096


def _gen(rng: RngLike) -> np.random.Generator:
    return rng.generator if isinstance(rng, RngStream) else rng


@dataclass(frozen=True)
class GarchParams:
    """u_n = sqrt(h_n) eps_n, h_n = omega + beta h_{n-1} + alpha u_{n-1}^2."""

    omega: float = 1.0
    alpha: float = 0.1
    beta: float = 0.7
    h0: float = 1.0

    def __post_init__(self):
        if not self.omega > 0 or not self.h0 > 0:
            raise InvalidParameterError(f"omega and h0 must be positive, got omega={self.omega}, h0={self.h0}.")
        if self.alpha < 0 or self.beta < 0:
            raise InvalidParameterError(f"alpha and beta must be nonnegative, got alpha={self.alpha}, beta={self.beta}.")


@dataclass(frozen=True)
class GarchPath:
    u: np.ndarray
    h: np.ndarray


def simulate_garch(
    p: GarchParams,
    n: int,
    rng: Optional[RngLike] = None,
    eps: Optional[np.ndarray] = None,
    burnin: int = 0,
) -> GarchPath:
    """
    u_0..u_n and h_0..h_n with u_0 = sqrt(h0) eps_0. A forced `eps` must hold n + burnin + 1
    innovations; the first `burnin` steps are dropped from the output.
    """
    if n < 1:
        raise InvalidParameterError(f"Need n >= 1, got {n}.")
    if burnin < 0:
        raise InvalidParameterError("Burn-in must be nonnegative.")
    total = n + burnin + 1
    if eps is None:
        if rng is None:
            raise InvalidParameterError("Need a random stream when no innovations are forced.")
        eps = _gen(rng).standard_normal(total)
    else:
        eps = np.asarray(eps, dtype=float)
        if eps.shape != (total,):
            raise InvalidParameterError(f"Need {total} innovations, got shape {eps.shape}.")
    u = np.empty(total)
    h = np.empty(total)
    h[0] = p.h0
    u[0] = np.sqrt(h[0]) * eps[0]
    for k in range(1, total):
        h[k] = p.omega + p.beta * h[k - 1] + p.alpha * u[k - 1] ** 2
        u[k] = np.sqrt(h[k]) * eps[k]
    return GarchPath(u=u[burnin:], h=h[burnin:])


def garch_stationary_mean(p: GarchParams) -> float:
    """E[u^2] = omega / (1 - alpha - beta) under the stationary law."""
    persistence = p.alpha + p.beta
    if persistence >= 1:
        raise InvalidParameterError(f"alpha + beta = {persistence:g} >= 1: no finite stationary second moment.")
    return p.omega / (1.0 - persistence)


def garch_moment_condition(p: GarchParams, nu: float, nodes: int = 80) -> float:
    """
    E[(beta + alpha Z^2)^nu] for Z ~ N(0, 1) by Gauss-Hermite quadrature. Values below 1 for some
    nu > 0 give a geometrically ergodic volatility chain; the simulators do not enforce this.
    """
    if nu <= 0:
        raise InvalidParameterError("nu must be positive.")
    x, wts = special.roots_hermitenorm(nodes)
    return float(np.sum(wts * (p.beta + p.alpha * x * x) ** nu) / np.sqrt(2.0 * np.pi))


class ThetaLayout:
    """
    Offsets inside theta = [mu, alpha_1..alpha_{Ne-1}, beta_1..beta_Np, eps (Ne x Np, row-major),
    sigma2_eps, sigma2_beta]. alpha_{Ne} is not stored; it is minus the sum of the free alphas.
    """

    def __init__(self, Ne: int, Np: int):
        if Ne < 1 or Np < 1:
            raise InvalidParameterError(f"Need Ne >= 1 and Np >= 1, got Ne={Ne}, Np={Np}.")
        self.Ne = Ne
        self.Np = Np
        self.mu = 0
        self.alpha = slice(1, Ne)
        self.beta = slice(Ne, Ne + Np)
        self.eps = slice(Ne + Np, Ne + Np + Ne * Np)
        self.sigma2_eps = Ne + Np + Ne * Np
        self.sigma2_beta = self.sigma2_eps + 1
        self.dim = self.sigma2_beta + 1

    def full_alpha(self, theta: np.ndarray) -> np.ndarray:
        free = theta[self.alpha]
        return np.append(free, -np.sum(free))

    def pack(self, mu, alpha_free, beta, eps, sigma2_eps, sigma2_beta) -> np.ndarray:
        theta = np.empty(self.dim)
        theta[self.mu] = mu
        theta[self.alpha] = alpha_free
        theta[self.beta] = beta
        theta[self.eps] = np.asarray(eps, dtype=float).reshape(-1)
        theta[self.sigma2_eps] = sigma2_eps
        theta[self.sigma2_beta] = sigma2_beta
        return theta

    def names(self):
        out = ["mu"] + [f"alpha_{e + 1}" for e in range(self.Ne - 1)] + [f"beta_{q + 1}" for q in range(self.Np)]
        out += [f"eps_{e + 1}_{q + 1}" for e in range(self.Ne) for q in range(self.Np)]
        return out + ["sigma2_eps", "sigma2_beta"]


@dataclass
class PoissonRegModel:
    """Counts y[e, p] ~ Poisson(n_ep[e, p] exp(mu + alpha_e + beta_p + eps_ep))."""

    y: np.ndarray
    n_ep: np.ndarray
    layout: ThetaLayout = field(init=False)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float)
        if self.y.ndim != 2:
            raise InvalidParameterError("Counts must be an Ne x Np array.")
        self.n_ep = np.broadcast_to(np.asarray(self.n_ep, dtype=float), self.y.shape).copy()
        if np.any(self.y < 0) or np.any(self.y != np.round(self.y)):
            raise InvalidParameterError("Counts must be nonnegative integers.")
        if np.any(self.n_ep <= 0):
            raise InvalidParameterError("Baselines n_ep must be positive.")
        self.layout = ThetaLayout(*self.y.shape)

    @property
    def Ne(self) -> int:
        return self.y.shape[0]

    @property
    def Np(self) -> int:
        return self.y.shape[1]


def log_posterior(theta, model: PoissonRegModel) -> float:
    """
    Unnormalized log posterior under flat priors on (mu, alpha, beta, eps) and on the positive
    variances. -inf when a variance is not positive.
    """
    theta = np.asarray(theta, dtype=float)
    lay = model.layout
    if theta.shape != (lay.dim,):
        raise InvalidParameterError(f"theta must have {lay.dim} entries, got shape {theta.shape}.")
    s2e = theta[lay.sigma2_eps]
    s2b = theta[lay.sigma2_beta]
    if s2e <= 0 or s2b <= 0:
        return -np.inf
    alpha = lay.full_alpha(theta)
    beta = theta[lay.beta]
    eps = theta[lay.eps].reshape(model.Ne, model.Np)
    eta = theta[lay.mu] + alpha[:, None] + beta[None, :] + eps
    loglik = np.sum(model.y * eta) - np.sum(model.n_ep * np.exp(eta))
    Ne, Np = model.Ne, model.Np
    penalty = (
        0.5 * Ne * Np * np.log(s2e)
        + 0.5 * Np * np.log(s2b)
        + np.sum(eps**2) / (2.0 * s2e)
        + np.sum(beta**2) / (2.0 * s2b)
    )
    return float(loglik - penalty)


@dataclass(frozen=True)
class PoissonTruth:
    mu: float = -1.0
    alpha: Sequence[float] = (0.35, 0.15)
    sigma2_eps: float = 0.1
    sigma2_beta: float = 0.3


def generate_poisson_data(truth: PoissonTruth, Ne: int, Np: int, n_ep=1000.0, rng: Optional[RngLike] = None) -> PoissonRegModel:
    """Draws beta, eps and the counts; the last area effect is minus the sum of the others."""
    if Ne < 2 or Np < 1:
        raise InvalidParameterError(f"Need Ne >= 2 and Np >= 1, got Ne={Ne}, Np={Np}.")
    if len(truth.alpha) != Ne - 1:
        raise InvalidParameterError(f"Need {Ne - 1} free alphas, got {len(truth.alpha)}.")
    if truth.sigma2_eps < 0 or truth.sigma2_beta < 0:
        raise InvalidParameterError("Variances must be nonnegative.")
    gen = _gen(rng)
    alpha = np.append(np.asarray(truth.alpha, dtype=float), -np.sum(truth.alpha))
    beta = gen.normal(0.0, np.sqrt(truth.sigma2_beta), Np)
    eps = gen.normal(0.0, np.sqrt(truth.sigma2_eps), (Ne, Np))
    n_ep = np.broadcast_to(np.asarray(n_ep, dtype=float), (Ne, Np))
    rate = n_ep * np.exp(truth.mu + alpha[:, None] + beta[None, :] + eps)
    y = gen.poisson(rate)
    return PoissonRegModel(y=y, n_ep=n_ep)


@dataclass(frozen=True, eq=False)
class RwmConfig:
    """Proposal theta' = theta + sqrt(kappa) L z with L L' = Sigma (identity when omitted)."""

    init: np.ndarray
    steps: int = 10_000
    burnin: int = 1_000
    kappa: float = 1.0
    Sigma: Optional[np.ndarray] = None

    def __post_init__(self):
        init = np.atleast_1d(np.asarray(self.init, dtype=float))
        object.__setattr__(self, "init", init)
        if self.kappa <= 0:
            raise InvalidParameterError(f"kappa must be positive, got {self.kappa}.")
        if self.steps < 1 or not 0 <= self.burnin < self.steps:
            raise InvalidParameterError(f"Need 0 <= burnin < steps, got burnin={self.burnin}, steps={self.steps}.")
        Sigma = np.eye(init.shape[0]) if self.Sigma is None else np.asarray(self.Sigma, dtype=float)
        if Sigma.shape != (init.shape[0], init.shape[0]) or not np.allclose(Sigma, Sigma.T):
            raise InvalidParameterError("Sigma must be a symmetric d x d matrix.")
        try:
            chol = linalg.cholesky(Sigma, lower=True)
        except linalg.LinAlgError as exc:
            raise InvalidParameterError("Sigma must be positive definite.") from exc
        object.__setattr__(self, "Sigma", Sigma)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return int(self.init.shape[0])

    def with_kappa(self, kappa: float) -> "RwmConfig":
        return RwmConfig(init=self.init, steps=self.steps, burnin=self.burnin, kappa=kappa, Sigma=self.Sigma)


@dataclass(frozen=True)
class RwmResult:
    chain: np.ndarray
    acceptance_rate: float


def rwm_sample(log_target: LogTarget, cfg: RwmConfig, rng: RngLike, keep: Optional[Sequence[int]] = None) -> RwmResult:
    """
    Random-walk Metropolis, accepting when log U < log pi(theta') - log pi(theta).

    Proposal normals and uniforms are drawn RWM_CHUNK steps at a time, so memory does not grow
    with the run length beyond the kept chain.

    Args:
        log_target: Unnormalized log density; -inf outside the support.
        cfg: Start, step counts, kappa and proposal covariance.
        rng: RngStream or numpy Generator.
        keep: Coordinates to store; all of them when omitted.

    Returns:
        RwmResult whose chain holds the post-burn-in states (columns in `keep` order) and whose
        acceptance rate covers the post-burn-in steps only.
    """
    gen = _gen(rng)
    theta = cfg.init.copy()
    lp = log_target(theta)
    if not np.isfinite(lp):
        raise InvalidParameterError(f"Log target is not finite at the initial point ({lp}).")
    d = cfg.dim
    cols = np.arange(d) if keep is None else np.asarray(keep, dtype=int)
    if cols.size == 0 or cols.min() < 0 or cols.max() >= d:
        raise InvalidParameterError(f"Kept coordinates must lie in [0, {d}).")
    step = np.sqrt(cfg.kappa) * cfg._chol
    kept = np.empty((cfg.steps - cfg.burnin, cols.shape[0]))
    n_accept = 0
    for start in range(0, cfg.steps, RWM_CHUNK):
        size = min(RWM_CHUNK, cfg.steps - start)
        z = gen.standard_normal((size, d))
        log_u = np.log(gen.random(size))
        for j in range(size):
            k = start + j
            proposal = theta + step @ z[j]
            lp_new = log_target(proposal)
            if log_u[j] < lp_new - lp:
                theta = proposal
                lp = lp_new
                if k >= cfg.burnin:
                    n_accept += 1
            if k >= cfg.burnin:
                kept[k - cfg.burnin] = theta[cols]
    rate = n_accept / (cfg.steps - cfg.burnin)
    logger.debug("RWM d=%d kappa=%.4g: acceptance %.3f over %d steps", d, cfg.kappa, rate, cfg.steps - cfg.burnin)
    return RwmResult(chain=kept, acceptance_rate=rate)


def tune_kappa(
    log_target: LogTarget,
    cfg: RwmConfig,
    rng: RngLike,
    target: float = 0.234,
    rounds: int = 8,
    pilot_steps: int = 2000,
) -> float:
    """
    Rescales kappa over short pilot runs, multiplying it by exp(3 (acceptance - target)) after
    each round; every pilot restarts from the last state of the previous one.
    """
    if not 0 < target < 1:
        raise InvalidParameterError("Target acceptance must lie in (0, 1).")
    kappa = cfg.kappa
    init = cfg.init
    for r in range(rounds):
        pilot = RwmConfig(init=init, steps=pilot_steps, burnin=0, kappa=kappa, Sigma=cfg.Sigma)
        res = rwm_sample(log_target, pilot, rng)
        init = res.chain[-1]
        logger.debug("tuning round %d: kappa=%.4g acceptance=%.3f", r, kappa, res.acceptance_rate)
        kappa *= float(np.exp(3.0 * (res.acceptance_rate - target)))
    logger.info("tuned kappa=%.4g toward acceptance %.3f", kappa, target)
    return kappa


def default_init(layout: ThetaLayout) -> np.ndarray:
    """Zero effects and unit variances."""
    return layout.pack(0.0, np.zeros(layout.Ne - 1), np.zeros(layout.Np), np.zeros(layout.Ne * layout.Np), 1.0, 1.0)


def posterior_reference_mean(model: PoissonRegModel, coordinate: int, steps: int = 200_000, seed: int = 0) -> float:
    """
    Posterior mean of theta[coordinate] from one long tuned run; stands in for the unknown exact
    value when judging coverage.
    """
    lay = model.layout
    if not 0 <= coordinate < lay.dim:
        raise InvalidParameterError(f"Coordinate {coordinate} outside [0, {lay.dim}).")
    stream = RngStream(seed, 0)
    target = lambda theta: log_posterior(theta, model)
    base_cfg = RwmConfig(init=default_init(lay), steps=steps, burnin=steps // 10)
    kappa = tune_kappa(target, base_cfg.with_kappa(1.0 / lay.dim), stream.child(0))
    res = rwm_sample(target, base_cfg.with_kappa(kappa), stream, keep=[coordinate])
    return float(np.mean(res.chain[:, 0]))


def simulate_finite_chain(chain: FiniteChain, n: int, rng: RngLike) -> np.ndarray:
    """X_0 ~ initial law, then X_{k+1} ~ P(X_k, .) by inverse CDF; returns n + 1 states."""
    if n < 0:
        raise ChainError("Path length must be nonnegative.")
    gen = _gen(rng)
    S = chain.S
    cum = np.cumsum(chain.P, axis=1)
    start = np.cumsum(chain.initial)
    u = gen.random(n + 1)
    path = np.empty(n + 1, dtype=np.int64)
    path[0] = min(int(np.searchsorted(start, u[0], side="right")), S - 1)
    for k in range(n):
        path[k + 1] = min(int(np.searchsorted(cum[path[k]], u[k + 1], side="right")), S - 1)
    return path
