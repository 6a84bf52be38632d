"""
Monte Carlo for the fixed-b limit law B(1)/sqrt(K_b) and its critical values.

Two schemes are provided. `euler` discretizes the stochastic integrals of K_b on an m-point grid
with left-endpoint (Ito) evaluation. `discrete` studentizes the mean of m i.i.d. normals by the
lag-window estimate with c_n = m, i.e. the pre-limit statistic. They agree in distribution as
m grows and serve as checks on each other.

Windows that are not positive definite (quadratic, truncated) give K <= 0 on a sizeable share of
draws. Under the default `absolute` policy such a draw is studentized by sqrt(|K|) and only
counted; under `resample` it is redrawn from the same stream and the rejection rate is capped.
"""

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, List, Optional, Tuple, Union
import logging

import numpy as np
import pandas as pd
from scipy import fft as sp_fft
from scipy import special

from base import InvalidParameterError, RejectionLimitExceeded, RngStream, TableMismatch, batched_map
from lagwindow import lag_window_estimate
from windows import WindowFunction, eval_window, g_b, lag_weights, mean_weight

logger = logging.getLogger(__name__)

SCHEMES = ("euler", "discrete")
NONPOSITIVE_POLICIES = ("absolute", "resample")
MAX_REJECT_RATE = 0.01
MAX_RESAMPLES = 1000

# 0.975-quantiles of B(1)/sqrt(K_b) as published, keyed by window kind then b
REFERENCE_QUANTILES: Dict[str, Dict[float, float]] = {
    "bartlett": {0.3: 2.828, 0.5: 3.557, 0.9: 4.735},
    "quadratic": {0.3: 4.134, 0.5: 6.580, 0.9: 12.575},
    "truncated": {0.3: 5.496, 0.5: 6.299, 0.9: 13.045},
}


def _check_policy(nonpositive: str) -> None:
    if nonpositive not in NONPOSITIVE_POLICIES:
        raise InvalidParameterError(f"Unknown nonpositive-K policy {nonpositive!r}; use one of {NONPOSITIVE_POLICIES}.")


@dataclass(frozen=True)
class KbConfig:
    """
    m: Euler grid size (or series length for the discrete scheme); R: replicates kept.
    nonpositive: `absolute` studentizes a draw with K <= 0 by sqrt(|K|), `resample` redraws it.
    """

    m: int = 2000
    R: int = 200_000
    master_seed: int = 20240601
    batch_size: int = 1000
    n_jobs: int = 1
    nonpositive: str = "absolute"

    def __post_init__(self):
        if self.m < 2:
            raise InvalidParameterError(f"Grid size m must be at least 2, got {self.m}.")
        if self.R < 1:
            raise InvalidParameterError(f"Number of replications must be positive, got {self.R}.")
        if self.master_seed < 0:
            raise InvalidParameterError("Seed must be nonnegative.")
        if self.batch_size < 1 or self.n_jobs == 0:
            raise InvalidParameterError("batch_size must be positive and n_jobs nonzero.")
        _check_policy(self.nonpositive)


@dataclass(frozen=True)
class KbDraw:
    stat: float
    k_hat: float

    @property
    def accepted(self) -> bool:
        return bool(np.isfinite(self.stat))

    @property
    def nonpositive(self) -> bool:
        return self.k_hat <= 0


def _studentize(num, k, nonpositive: str):
    """num / sqrt(k) where the policy allows it, nan elsewhere. Works elementwise on arrays."""
    num = np.asarray(num, dtype=float)
    k = np.asarray(k, dtype=float)
    scale = np.abs(k) if nonpositive == "absolute" else np.where(k > 0, k, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(scale > 0, num / np.sqrt(scale), np.nan)


@dataclass(frozen=True)
class _EulerKernel:
    lag_w: np.ndarray  # lag_w[k] = w_b(k / m), lag_w[0] = 0 keeps the inner sum strict
    g: np.ndarray  # g_b((i - 1) / m), i = 1..m
    mw: float
    nfft: int
    lag_w_hat: np.ndarray


@lru_cache(maxsize=32)
def _euler_kernel(w: WindowFunction, m: int) -> _EulerKernel:
    grid = np.arange(m, dtype=float) / m
    lag_w = eval_window(w, grid)
    lag_w[0] = 0.0
    nfft = sp_fft.next_fast_len(2 * m, real=True)
    return _EulerKernel(
        lag_w=lag_w,
        g=g_b(w, grid),
        mw=mean_weight(w),
        nfft=nfft,
        lag_w_hat=sp_fft.rfft(lag_w, nfft),
    )


def _generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator
    if isinstance(rng, np.random.Generator):
        return rng
    raise InvalidParameterError("Need an RngStream or numpy Generator when no draws are forced.")


def _euler_from_increments(kernel: _EulerKernel, dB: np.ndarray, nonpositive: str) -> KbDraw:
    m = dB.shape[0]
    inner = np.convolve(dB, kernel.lag_w)[:m]
    double = 2.0 * np.dot(dB, inner)
    b1 = float(np.sum(dB))
    linear = float(np.dot(kernel.g, dB))
    k_hat = 1.0 + double - 2.0 * b1 * linear + 2.0 * b1 * b1 * kernel.mw
    return KbDraw(stat=float(_studentize(b1, k_hat, nonpositive)), k_hat=float(k_hat))


def simulate_kb_euler(
    w: WindowFunction,
    m: int,
    rng=None,
    increments: Optional[np.ndarray] = None,
    nonpositive: str = "absolute",
) -> KbDraw:
    """
    One Euler draw of (B(1)/sqrt(K), K) with

        K = 1 + 2 sum_{i} dB_i sum_{j<i} w_b((i-j)/m) dB_j - 2 B(1) sum_i g_b((i-1)/m) dB_i
              + 2 B(1)^2 int_0^1 (1-t) w_b(t) dt

    and dB_i ~ N(0, 1/m) unless `increments` are given.

    Args:
        w: Window carrying its support b.
        m: Grid size, at least 2.
        rng: RngStream or numpy Generator; ignored when `increments` is given.
        increments: Forced dB_1..dB_m.
        nonpositive: `absolute` divides by sqrt(|K|) when K < 0; `resample` returns stat = nan
            for K <= 0 and leaves the redraw to the caller.

    Returns:
        KbDraw with the statistic and K. K = 0 always gives stat = nan.
    """
    if m < 2:
        raise InvalidParameterError(f"Grid size m must be at least 2, got {m}.")
    _check_policy(nonpositive)
    kernel = _euler_kernel(w, int(m))
    if increments is None:
        dB = _generator(rng).normal(0.0, 1.0 / np.sqrt(m), m)
    else:
        dB = np.asarray(increments, dtype=float)
        if dB.shape != (m,):
            raise InvalidParameterError(f"Need {m} increments, got shape {dB.shape}.")
    return _euler_from_increments(kernel, dB, nonpositive)


def simulate_kb_discrete(
    w: WindowFunction,
    m: int,
    rng=None,
    draws: Optional[np.ndarray] = None,
    nonpositive: str = "absolute",
) -> KbDraw:
    """
    (sum z_i / sqrt(m)) / sqrt(Gamma^2(z)) for z_1..z_m i.i.d. N(0, 1), Gamma^2 taken with
    window w (carrying b) and c_n = m. k_hat holds Gamma^2(z); the nonpositive policy is the
    one of simulate_kb_euler.
    """
    if m < 2:
        raise InvalidParameterError(f"Series length m must be at least 2, got {m}.")
    _check_policy(nonpositive)
    if draws is None:
        z = _generator(rng).standard_normal(m)
    else:
        z = np.asarray(draws, dtype=float)
        if z.shape != (m,):
            raise InvalidParameterError(f"Need {m} draws, got shape {z.shape}.")
    gamma_sq = lag_window_estimate(z, w, float(m)).gamma_sq
    stat = _studentize(np.sum(z) / np.sqrt(m), gamma_sq, nonpositive)
    return KbDraw(stat=float(stat), k_hat=float(gamma_sq))


# batch rows are (stat, k_hat, draws with K <= 0, draws generated)
_Row = Tuple[float, float, int, int]


def _resample(draw_one, stream: RngStream) -> Tuple[KbDraw, int, int]:
    nonpositive = generated = 0
    while True:
        draw = draw_one(stream.generator)
        generated += 1
        nonpositive += int(draw.nonpositive)
        if draw.accepted:
            return draw, nonpositive, generated
        if generated >= MAX_RESAMPLES:
            raise RejectionLimitExceeded(f"Replicate {stream.stream_id} rejected {generated} draws in a row.")


def _collect(streams, nums, ks, nonpositive: str, redraw) -> List[_Row]:
    stats = _studentize(nums, ks, nonpositive)
    out = []
    for stream, stat, k in zip(streams, stats, ks):
        if np.isfinite(stat):
            out.append((float(stat), float(k), int(k <= 0), 1))
            continue
        draw, n_nonpositive, generated = _resample(redraw, stream)
        out.append((draw.stat, draw.k_hat, n_nonpositive + 1, generated + 1))
    return out


def _euler_batch(w: WindowFunction, m: int, seed: int, nonpositive: str, ids: List[int]) -> List[_Row]:
    kernel = _euler_kernel(w, m)
    streams = [RngStream(seed, i) for i in ids]
    dB = np.stack([s.normal(m, scale=1.0 / np.sqrt(m)) for s in streams])
    spec = sp_fft.rfft(dB, kernel.nfft, axis=1)
    inner = sp_fft.irfft(spec * kernel.lag_w_hat, kernel.nfft, axis=1)[:, :m]
    double = 2.0 * np.einsum("ij,ij->i", dB, inner)
    b1 = dB.sum(axis=1)
    linear = dB @ kernel.g
    k_hat = 1.0 + double - 2.0 * b1 * linear + 2.0 * b1 * b1 * kernel.mw
    return _collect(streams, b1, k_hat, nonpositive, lambda g: simulate_kb_euler(w, m, g, nonpositive=nonpositive))


def _discrete_batch(w: WindowFunction, m: int, seed: int, nonpositive: str, ids: List[int]) -> List[_Row]:
    weights = lag_weights(w, float(m), m)
    n_lags = weights.shape[0]
    streams = [RngStream(seed, i) for i in ids]
    z = np.stack([s.generator.standard_normal(m) for s in streams])
    x = z - z.mean(axis=1, keepdims=True)
    nfft = sp_fft.next_fast_len(m + n_lags + 1, real=True)
    spec = sp_fft.rfft(x, nfft, axis=1)
    acov = sp_fft.irfft(spec * np.conj(spec), nfft, axis=1)[:, : n_lags + 1] / m
    gamma_sq = acov[:, 0] + 2.0 * acov[:, 1:] @ weights
    sums = z.sum(axis=1) / np.sqrt(m)
    return _collect(streams, sums, gamma_sq, nonpositive, lambda g: simulate_kb_discrete(w, m, g, nonpositive=nonpositive))


@dataclass
class KbSample:
    """
    R draws of the pivot in replicate order, with their K (or Gamma^2) values.

    n_nonpositive counts every generated draw with K <= 0, kept or redrawn; n_generated counts
    all generated draws, so it exceeds R only under the `resample` policy.
    """

    window: WindowFunction
    scheme: str
    draws: np.ndarray
    k_hat: np.ndarray
    n_nonpositive: int
    n_generated: int
    config: KbConfig
    sorted_draws: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.sorted_draws = np.sort(self.draws)

    @property
    def reject_rate(self) -> float:
        """Share of generated draws with K <= 0."""
        return self.n_nonpositive / self.n_generated


def simulate_kb_samples(w: WindowFunction, cfg: KbConfig, scheme: str = "euler") -> KbSample:
    """
    R replicates of the chosen scheme.

    Replicate i draws from RngStream(master_seed, i) and, when a draw has to be redrawn, keeps
    drawing from that same stream, so the sample depends only on (w, m, R, seed, scheme, policy).

    Args:
        w: Window carrying b.
        cfg: Grid size, replicate count, seed, parallelism and the nonpositive-K policy.
        scheme: `euler` or `discrete`.

    Returns:
        KbSample with draws in replicate order and the K <= 0 bookkeeping.

    Raises:
        RejectionLimitExceeded: under the `resample` policy, when more than MAX_REJECT_RATE of
            the generated draws had K <= 0 or one replicate hit MAX_RESAMPLES in a row.
    """
    if scheme not in SCHEMES:
        raise InvalidParameterError(f"Unknown scheme {scheme!r}; use one of {SCHEMES}.")
    batch = _euler_batch if scheme == "euler" else _discrete_batch
    rows = batched_map(
        lambda ids: batch(w, cfg.m, cfg.master_seed, cfg.nonpositive, ids),
        cfg.R,
        n_jobs=cfg.n_jobs,
        batch_size=cfg.batch_size,
    )
    sample = KbSample(
        window=w,
        scheme=scheme,
        draws=np.array([r[0] for r in rows]),
        k_hat=np.array([r[1] for r in rows]),
        n_nonpositive=int(sum(r[2] for r in rows)),
        n_generated=int(sum(r[3] for r in rows)),
        config=cfg,
    )
    rate = sample.reject_rate
    logger.info("%s %s: %d draws, %d with K <= 0 (%.3g%%)", scheme, w, cfg.R, sample.n_nonpositive, 100 * rate)
    if cfg.nonpositive == "resample":
        if rate > MAX_REJECT_RATE:
            raise RejectionLimitExceeded(
                f"{scheme} scheme for {w} rejected {100 * rate:.2f}% of draws (limit {100 * MAX_REJECT_RATE:.0f}%); "
                f"increase the grid size m or use the absolute policy."
            )
        if rate > MAX_REJECT_RATE / 2:
            logger.warning("Rejection rate %.3g%% for %s is close to the limit.", 100 * rate, w)
    return sample


def order_statistic(sorted_sample: np.ndarray, p: float) -> float:
    """Upper order statistic at index ceil(p R) (1-based); no interpolation."""
    R = sorted_sample.shape[0]
    if R == 0:
        raise InvalidParameterError("Empty sample.")
    if not 0.0 < p < 1.0:
        raise InvalidParameterError(f"Probability must lie in (0, 1), got {p}.")
    idx = int(np.ceil(p * R - 1e-9)) - 1
    return float(sorted_sample[min(max(idx, 0), R - 1)])


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}.")


@dataclass
class CriticalValueTable:
    window: WindowFunction
    quantiles: Dict[float, float]
    R: int
    m: int
    seed: int
    reject_rate: float
    scheme: str = "euler"
    sample: Optional[np.ndarray] = None
    nonpositive: str = "absolute"

    @property
    def b(self) -> float:
        return self.window.b

    def matches(self, w: WindowFunction) -> bool:
        return self.window == w

    def quantile(self, alpha: float) -> float:
        """t_{1 - alpha/2}."""
        for a, q in self.quantiles.items():
            if abs(a - alpha) <= 1e-12:
                return q
        raise TableMismatch(f"No critical value for alpha={alpha} in table for {self.window}.")

    def to_frame(self) -> pd.DataFrame:
        rows = [
            {
                "window": self.window.kind,
                "b": self.window.b,
                "alpha": a,
                "quantile": q,
                "reps": self.R,
                "grid": self.m,
                "seed": self.seed,
                "reject_rate": self.reject_rate,
                "nonpositive": self.nonpositive,
            }
            for a, q in sorted(self.quantiles.items(), reverse=True)
        ]
        return pd.DataFrame(rows)


def critical_value_table(
    w: WindowFunction,
    alphas: Iterable[float],
    cfg: KbConfig,
    scheme: str = "euler",
    keep_sample: bool = False,
) -> CriticalValueTable:
    """All requested (1 - alpha/2)-quantiles from a single simulated sample."""
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise InvalidParameterError("Need at least one alpha.")
    for a in alphas:
        _check_alpha(a)
    sample = simulate_kb_samples(w, cfg, scheme)
    quantiles = {a: order_statistic(sample.sorted_draws, 1.0 - a / 2.0) for a in alphas}
    return CriticalValueTable(
        window=w,
        quantiles=quantiles,
        R=cfg.R,
        m=cfg.m,
        seed=cfg.master_seed,
        reject_rate=sample.reject_rate,
        scheme=scheme,
        sample=sample.sorted_draws if keep_sample else None,
        nonpositive=cfg.nonpositive,
    )


def critical_value(w: WindowFunction, alpha: float, cfg: KbConfig, scheme: str = "euler") -> float:
    """
    Empirical (1 - alpha/2)-quantile of B(1)/sqrt(K_b).

    Args:
        w: Window carrying b.
        alpha: Two-sided level in (0, 1).
        cfg: Simulation settings; the result is a pure function of them.
        scheme: `euler` or `discrete`.

    Returns:
        The upper order statistic at index ceil((1 - alpha/2) R) of the sorted draws.

    Note:
        Repeated calls with one cfg redo the simulation; use critical_value_table for several
        alphas.
    """
    _check_alpha(alpha)
    return critical_value_table(w, [alpha], cfg, scheme).quantile(alpha)


def bootstrap_quantile_se(sample: np.ndarray, p: float, reps: int = 200, seed: int = 0) -> float:
    """Bootstrap standard error of the order-statistic p-quantile of `sample`."""
    sample = np.asarray(sample, dtype=float)
    if reps < 2:
        raise InvalidParameterError("Need at least two bootstrap replicates.")
    gen = RngStream(seed).generator
    R = sample.shape[0]
    values = np.empty(reps)
    for r in range(reps):
        resampled = np.sort(sample[gen.integers(0, R, R)])
        values[r] = order_statistic(resampled, p)
    return float(np.std(values, ddof=1))


def normal_quantile(p: float) -> float:
    """Phi^{-1}(p)."""
    if not np.isfinite(p) or not 0.0 < p < 1.0:
        raise InvalidParameterError(f"Probability must lie in (0, 1), got {p}.")
    return float(special.ndtri(p))


def normal_cdf(x: Union[float, np.ndarray]):
    return special.ndtr(x)
