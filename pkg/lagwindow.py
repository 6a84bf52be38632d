"""
Sample autocovariances and the lag-window estimator Gamma^2_{n,b}(h) of the long-run variance.

Autocovariances use divisor n (not n - k); with triangular weights this keeps the Bartlett
estimate nonnegative for any real series.
"""

from dataclasses import dataclass
from typing import Tuple
import logging

import numpy as np
from scipy import fft as sp_fft

from base import InvalidParameterError, NonpositiveVarianceEstimate, ScalarSeries, as_series
from windows import WindowFunction, lag_weights

logger = logging.getLogger(__name__)

# lag loops below this many multiply-adds are done directly, larger ones through the FFT
DIRECT_WORK_LIMIT = 4_000_000


@dataclass(frozen=True)
class LagWindowEstimate:
    gamma_sq: float
    c_n: float
    window: WindowFunction
    gamma0: float
    n: int
    max_lag: int

    @property
    def sigma_hat(self) -> float:
        if self.gamma_sq <= 0:
            raise NonpositiveVarianceEstimate(self.gamma_sq, f"{self.window}, c_n={self.c_n:g}")
        return float(np.sqrt(self.gamma_sq))

    def __str__(self):
        return f"Gamma^2={self.gamma_sq:.6g} (gamma0={self.gamma0:.6g}, c_n={self.c_n:g}, {self.window})"


def lagged_products(x: np.ndarray, max_lag: int) -> np.ndarray:
    """
    sum_j x_j x_{j+k} for k = 0..max_lag (no centering, no division).
    """
    n = x.shape[0]
    max_lag = int(min(max_lag, n - 1))
    if max_lag < 0:
        return np.zeros(0)
    if n * (max_lag + 1) <= DIRECT_WORK_LIMIT or max_lag <= 32:
        out = np.empty(max_lag + 1)
        out[0] = np.dot(x, x)
        for k in range(1, max_lag + 1):
            out[k] = np.dot(x[:-k], x[k:])
        return out
    nfft = sp_fft.next_fast_len(n + max_lag + 1, real=True)
    spec = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(spec * np.conj(spec), nfft)
    return acov[: max_lag + 1]


def sample_autocovariances(s, max_lag: int) -> np.ndarray:
    """gamma_{n,k} for k = 0..max_lag with divisor n."""
    s = as_series(s)
    s.require_length(1)
    x = s.values - s.mean()
    return lagged_products(x, max_lag) / s.n


def autocovariance(s, k: int) -> float:
    """
    k-th order sample autocovariance n^{-1} sum_{j=1}^{n-k} (h_j - mu_n)(h_{j+k} - mu_n).
    """
    s = as_series(s)
    s.require_length(1)
    if k < 0 or k > s.n - 1 or int(k) != k:
        raise InvalidParameterError(f"Lag k={k} out of range [0, {s.n - 1}].")
    x = s.values - s.mean()
    k = int(k)
    if k == 0:
        return float(np.dot(x, x) / s.n)
    return float(np.dot(x[:-k], x[k:]) / s.n)


def lag_window_estimate(s, w: WindowFunction, c_n: float) -> LagWindowEstimate:
    """
    Gamma^2 = gamma_0 + 2 sum_{k>=1} w_b(k / c_n) gamma_k, skipping lags where the window vanishes.

    Args:
        s: Series of at least two values, or anything as_series accepts.
        w: Window kind and support b.
        c_n: Bandwidth, positive. Lag k gets weight w_b(k / c_n).

    Returns:
        LagWindowEstimate holding Gamma^2, gamma_0 and the number of lags used. Gamma^2 may be
        negative; sigma_hat raises NonpositiveVarianceEstimate in that case.

    Raises:
        InvalidParameterError: c_n <= 0.
    """
    s = as_series(s)
    s.require_length(2)
    if c_n <= 0:
        raise InvalidParameterError(f"Bandwidth c_n must be positive, got {c_n}.")
    weights = lag_weights(w, c_n, s.n)
    gammas = sample_autocovariances(s, weights.shape[0])
    gamma_sq = gammas[0] + 2.0 * np.dot(weights, gammas[1:])
    logger.debug("lag window %s over %d lags, n=%d: %.6g", w, weights.shape[0], s.n, gamma_sq)
    return LagWindowEstimate(
        gamma_sq=float(gamma_sq),
        c_n=float(c_n),
        window=w,
        gamma0=float(gammas[0]),
        n=s.n,
        max_lag=int(weights.shape[0]),
    )


def quadratic_form_value(s, w: WindowFunction, c_n: float) -> Tuple[float, float]:
    """
    Splits Gamma^2 into the quadratic form sum_l sum_{j<=l} w_{n,b}(l-j) h_j h_l of the raw
    (uncentered) values and the remainder R_n carrying every term in S_{n,0}.

    w_{n,b}(0) = 1/n and w_{n,b}(k) = 2 w_b(k / c_n) / n for k >= 1.
    """
    s = as_series(s)
    s.require_length(2)
    if c_n <= 0:
        raise InvalidParameterError(f"Bandwidth c_n must be positive, got {c_n}.")
    n = s.n
    x = s.values
    weights = lag_weights(w, c_n, n)
    n_lags = weights.shape[0]
    products = lagged_products(x, n_lags)
    quad = products[0] / n + 2.0 / n * np.dot(weights, products[1:])

    total = float(np.sum(x))
    full = np.zeros(n - 1)
    full[:n_lags] = weights
    k = np.arange(1, n, dtype=float)
    cum = np.concatenate(([0.0], np.cumsum(full)))  # cum[m] = sum_{k=1}^m w_b(k / c_n)
    trailing = np.dot(x, cum)  # sum_{j>=2} h_j sum_{k<j} w_k
    leading = np.dot(x, cum[::-1])  # sum_{j<=n-1} h_j sum_{k<=n-j} w_k
    r_n = (
        2.0 * total**2 / n**2 * np.dot(full, 1.0 - k / n)
        - 2.0 * total / n**2 * (trailing + leading)
        - total**2 / n**2
    )
    return float(quad), float(r_n)


def studentized_mean(s, mu: float, w: WindowFunction, c_n: float) -> float:
    """
    sum_j (h_j - mu) / sqrt(n Gamma^2): approximately N(0, 1) for c_n = o(n) and
    B(1)/sqrt(K_b) in the fixed-b regime.
    """
    s = as_series(s)
    est = lag_window_estimate(s, w, c_n)
    if est.gamma_sq <= 0:
        raise NonpositiveVarianceEstimate(est.gamma_sq, "studentized mean")
    return float(np.sum(s.values - mu) / np.sqrt(s.n * est.gamma_sq))
