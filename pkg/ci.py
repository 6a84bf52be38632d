from dataclasses import dataclass
import logging

import numpy as np

from base import InvalidParameterError, NonpositiveVarianceEstimate, TableMismatch, as_series
from fixedb import CriticalValueTable, normal_quantile
from lagwindow import lag_window_estimate
from windows import WindowFunction

logger = logging.getLogger(__name__)

METHODS = ("classical", "fixedb")


@dataclass(frozen=True)
class ConfidenceInterval:
    """
    center +- half_width for the stationary mean.

    param is delta for the classical interval and b for the fixed-b one; critical is the z or t
    quantile used. fallback marks a classical interval built from gamma_0 because Gamma^2 <= 0,
    or a fixed-b interval studentized by sqrt(|Gamma^2|).
    """

    center: float
    half_width: float
    alpha: float
    sigma_hat: float
    method: str
    param: float
    critical: float
    fallback: bool = False

    def __post_init__(self):
        if self.half_width < 0:
            raise InvalidParameterError("Half width must be nonnegative.")
        if self.method not in METHODS:
            raise InvalidParameterError(f"Unknown interval method {self.method!r}.")

    @property
    def lower(self) -> float:
        return self.center - self.half_width

    @property
    def upper(self) -> float:
        return self.center + self.half_width

    def as_dict(self) -> dict:
        return {
            "center": self.center,
            "lower": self.lower,
            "upper": self.upper,
            "half_width": self.half_width,
            "sigma_hat": self.sigma_hat,
            "method": self.method,
            "param": self.param,
        }

    def __str__(self):
        return f"[{self.lower:.6g}, {self.upper:.6g}] ({self.method}, param={self.param:g}, alpha={self.alpha:g})"


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha}.")


def classical_ci(s, alpha: float, delta: float, w: WindowFunction, fallback_gamma0: bool = False) -> ConfidenceInterval:
    """
    mu_n +- z_{1-alpha/2} sqrt(Gamma^2) / sqrt(n), Gamma^2 taken with b = 1 and c_n = n^delta.

    Args:
        s: Observed series, at least two values.
        alpha: Two-sided level in (0, 1).
        delta: Bandwidth exponent in (0, 1).
        w: Window kind; its b is ignored.
        fallback_gamma0: Replace a nonpositive Gamma^2 by gamma_0 instead of raising.

    Raises:
        NonpositiveVarianceEstimate: Gamma^2 <= 0 and no usable fallback.
    """
    _check_alpha(alpha)
    if not 0.0 < delta < 1.0:
        raise InvalidParameterError(f"delta must lie in (0, 1), got {delta}.")
    s = as_series(s)
    s.require_length(2)
    est = lag_window_estimate(s, WindowFunction(w.kind, 1.0), float(s.n) ** delta)
    gamma_sq = est.gamma_sq
    fallback = False
    if gamma_sq <= 0:
        if not fallback_gamma0 or est.gamma0 <= 0:
            raise NonpositiveVarianceEstimate(gamma_sq, f"classical interval, {w.kind}, delta={delta:g}")
        logger.warning("Gamma^2 = %.3g <= 0; falling back to gamma_0 = %.3g.", gamma_sq, est.gamma0)
        gamma_sq = est.gamma0
        fallback = True
    z = normal_quantile(1.0 - alpha / 2.0)
    sigma_hat = float(np.sqrt(gamma_sq))
    return ConfidenceInterval(
        center=s.mean(),
        half_width=z * sigma_hat / np.sqrt(s.n),
        alpha=alpha,
        sigma_hat=sigma_hat,
        method="classical",
        param=float(delta),
        critical=z,
        fallback=fallback,
    )


def fixedb_ci(s, alpha: float, b: float, w: WindowFunction, table: CriticalValueTable) -> ConfidenceInterval:
    """
    mu_n +- t_{1-alpha/2} sqrt(Gamma^2) / sqrt(n), Gamma^2 taken with w_b and c_n = n.

    This is the unit window at c_n = b n. t comes from a table simulated for the same window and b.

    Args:
        s: Observed series h(X_1), ..., h(X_n).
        alpha: Two-sided level in (0, 1).
        b: Window support in (0, 1].
        w: Window kind; its own b is replaced by `b`.
        table: Critical values for (w.kind, b) holding `alpha`.

    Returns:
        The interval. When the table was simulated under the `absolute` policy, a negative Gamma^2
        is studentized by sqrt(|Gamma^2|), matching how the critical value treats K <= 0, and the
        interval is flagged with fallback=True.

    Raises:
        TableMismatch: the table is for another window or b, or lacks alpha.
        NonpositiveVarianceEstimate: Gamma^2 == 0, or Gamma^2 < 0 with a `resample` table.
    """
    _check_alpha(alpha)
    if not 0.0 < b <= 1.0:
        raise InvalidParameterError(f"b must lie in (0, 1], got {b}.")
    window = WindowFunction(w.kind, b)
    if not table.matches(window):
        raise TableMismatch(f"Table is for {table.window}, interval needs {window}.")
    t = table.quantile(alpha)
    s = as_series(s)
    s.require_length(2)
    est = lag_window_estimate(s, window, float(s.n))
    fallback = False
    if est.gamma_sq < 0 and table.nonpositive == "absolute":
        logger.debug("Gamma^2 = %.3g < 0 for %s; studentizing by its absolute value.", est.gamma_sq, window)
        sigma_hat = float(np.sqrt(-est.gamma_sq))
        fallback = True
    else:
        sigma_hat = est.sigma_hat
    return ConfidenceInterval(
        center=s.mean(),
        half_width=t * sigma_hat / np.sqrt(s.n),
        alpha=alpha,
        sigma_hat=sigma_hat,
        method="fixedb",
        param=float(b),
        critical=t,
        fallback=fallback,
    )


def covers(ci: ConfidenceInterval, truth: float) -> bool:
    return ci.lower <= truth <= ci.upper
