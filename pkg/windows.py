"""
Window (weight) functions w_b on [0, inf) and the integrals the fixed-b limit needs.

Built-in kinds have closed forms for the running integral I(t) = int_0^t w_b(u) du and the
first moment F(t) = int_0^t u w_b(u) du; anything else falls back to scipy quadrature.
"""

from typing import Tuple
import logging

import numpy as np
from scipy import integrate

from base import InvalidParameterError

logger = logging.getLogger(__name__)

KINDS = ("bartlett", "quadratic", "truncated", "parzen")

QUAD_TOL = 1e-10


class WindowFunction:
    """
    Weight function w_b with support [0, b].

    The truncated window is the right-open indicator 1{0 <= x < b}; it breaks continuity at b
    but is kept because the published critical values use it.
    """

    def __init__(self, kind: str, b: float = 1.0):
        kind = kind.lower()
        if kind not in KINDS:
            raise InvalidParameterError(f"Unknown window kind: {kind}. Must be one of {KINDS}.")
        if not np.isfinite(b) or b <= 0:
            raise InvalidParameterError(f"Window parameter b must be positive, got {b}.")
        self.kind = kind
        self.b = float(b)

    def __call__(self, x):
        return eval_window(self, x)

    def __eq__(self, other):
        return isinstance(other, WindowFunction) and self.kind == other.kind and self.b == other.b

    def __hash__(self):
        return hash((self.kind, self.b))

    def __repr__(self):
        return f"WindowFunction({self.kind!r}, b={self.b})"

    def __str__(self):
        return f"{self.kind}(b={self.b:g})"


def window_from_name(name: str, b: float = 1.0) -> WindowFunction:
    return WindowFunction(name.strip(), b)


def _unit_shape(kind: str, r: np.ndarray) -> np.ndarray:
    # r = x / b, already restricted to [0, 1)
    if kind == "bartlett":
        return 1.0 - r
    if kind == "quadratic":
        return 1.0 - r * r
    if kind == "truncated":
        return np.ones_like(r)
    # parzen
    return np.where(r <= 0.5, 1.0 - 6.0 * r**2 + 6.0 * r**3, 2.0 * (1.0 - r) ** 3)


def eval_window(w: WindowFunction, x):
    """
    Value of w_b at x >= 0; zero for x >= b. Accepts scalars or arrays.
    """
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0):
        raise InvalidParameterError("Window argument must be nonnegative.")
    r = arr / w.b
    inside = r < 1.0
    out = np.zeros_like(r)
    out[inside] = _unit_shape(w.kind, r[inside])
    out = np.clip(out, 0.0, 1.0)
    if np.ndim(x) == 0:
        return float(out)
    return out


def _unit_integral(kind: str, r: float) -> float:
    """int_0^r w(s) ds for the unit-support shape, r in [0, 1]."""
    if kind == "bartlett":
        return r - r * r / 2.0
    if kind == "quadratic":
        return r - r**3 / 3.0
    if kind == "truncated":
        return r
    if r <= 0.5:
        return r - 2.0 * r**3 + 1.5 * r**4
    return 0.375 - 0.5 * (1.0 - r) ** 4


def _unit_first_moment(kind: str, r: float) -> float:
    """int_0^r s w(s) ds for the unit-support shape, r in [0, 1]."""
    if kind == "bartlett":
        return r * r / 2.0 - r**3 / 3.0
    if kind == "quadratic":
        return r * r / 2.0 - r**4 / 4.0
    if kind == "truncated":
        return r * r / 2.0
    if r <= 0.5:
        return r * r / 2.0 - 1.5 * r**4 + 1.2 * r**5
    return 0.0875 - 0.5 * (1.0 - r) ** 4 + 0.4 * (1.0 - r) ** 5


def _has_closed_form(w: WindowFunction, numeric: bool) -> bool:
    return not numeric and w.kind in KINDS


def _breakpoints(w: WindowFunction, upper: float):
    pts = [p for p in (w.b, 0.5 * w.b) if 0.0 < p < upper]
    return pts or None


def running_integral(w: WindowFunction, t: float, numeric: bool = False) -> float:
    """I(t) = int_0^t w_b(u) du."""
    if t < 0:
        raise InvalidParameterError("Integration limit must be nonnegative.")
    if _has_closed_form(w, numeric):
        r = min(t / w.b, 1.0)
        return w.b * _unit_integral(w.kind, r)
    if t == 0:
        return 0.0
    val, _ = integrate.quad(lambda u: eval_window(w, u), 0.0, t, epsabs=QUAD_TOL, points=_breakpoints(w, t))
    return val


def first_moment(w: WindowFunction, t: float, numeric: bool = False) -> float:
    """F(t) = int_0^t u w_b(u) du."""
    if t < 0:
        raise InvalidParameterError("Integration limit must be nonnegative.")
    if _has_closed_form(w, numeric):
        r = min(t / w.b, 1.0)
        return w.b * w.b * _unit_first_moment(w.kind, r)
    if t == 0:
        return 0.0
    val, _ = integrate.quad(lambda u: u * eval_window(w, u), 0.0, t, epsabs=QUAD_TOL, points=_breakpoints(w, t))
    return val


def g_b(w: WindowFunction, t, numeric: bool = False):
    """
    g_b(t) = int_0^t w_b(u) du + int_0^{1-t} w_b(u) du, for t in [0, 1].

    Symmetric in t <-> 1 - t. Accepts scalars or arrays.
    """
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or np.any(arr > 1):
        raise InvalidParameterError("g_b is defined on [0, 1].")
    vec = np.vectorize(lambda s: running_integral(w, s, numeric) + running_integral(w, 1.0 - s, numeric), otypes=[float])
    out = vec(arr)
    if np.ndim(t) == 0:
        return float(out)
    return out


def mean_weight(w: WindowFunction, numeric: bool = False) -> float:
    """int_0^1 (1 - t) w_b(t) dt."""
    c = min(1.0, w.b)
    return running_integral(w, c, numeric) - first_moment(w, c, numeric)


def lag_weights(w: WindowFunction, c_n: float, n: int) -> np.ndarray:
    """
    w_b(k / c_n) for k = 1..n-1, trimmed after the last lag where the window is nonzero.
    """
    if c_n <= 0:
        raise InvalidParameterError(f"Bandwidth c_n must be positive, got {c_n}.")
    if n < 2:
        return np.zeros(0)
    # lags beyond b * c_n vanish, so only evaluate up to there
    k_max = int(min(n - 1, np.ceil(w.b * c_n) + 1))
    k = np.arange(1, k_max + 1, dtype=float)
    weights = eval_window(w, k / c_n)
    nonzero = np.flatnonzero(weights)
    if nonzero.size == 0:
        return np.zeros(0)
    return weights[: nonzero[-1] + 1]


def rescale_bandwidth(w: WindowFunction, c_n: float) -> Tuple[WindowFunction, float]:
    """
    Maps (w_b, c_n) to the unit-support window with bandwidth b * c_n.

    Both parametrizations give the same lag weights since w_b(x) = w_1(x / b).
    """
    return WindowFunction(w.kind, 1.0), w.b * c_n


class BandwidthRule:
    """
    Maps a sample size n to the bandwidth c_n.

    Classical: c_n = n ** delta with delta in (0, 1). FixedB: c_n = n, with b carried by the window.
    """

    def __init__(self, variant: str, value: float):
        variant = variant.lower()
        if variant == "classical":
            if not 0.0 < value < 1.0:
                raise InvalidParameterError(f"delta must lie in (0, 1), got {value}.")
        elif variant == "fixedb":
            if not 0.0 < value <= 1.0:
                raise InvalidParameterError(f"b must lie in (0, 1], got {value}.")
        else:
            raise InvalidParameterError(f"Unknown bandwidth rule: {variant}.")
        self.variant = variant
        self.value = float(value)

    @classmethod
    def parse(cls, text: str, default_b: float = 1.0) -> "BandwidthRule":
        """Accepts `delta:<d>` or `fixedb[:<b>]`; a bare `fixedb` takes default_b."""
        text = text.strip().lower()
        if text.startswith("delta:"):
            return cls("classical", float(text.split(":", 1)[1]))
        if text.startswith("fixedb"):
            parts = text.split(":", 1)
            return cls("fixedb", float(parts[1]) if len(parts) == 2 else default_b)
        raise InvalidParameterError(f"Cannot parse bandwidth rule {text!r}; use delta:<d> or fixedb[:<b>].")

    def c_n(self, n: int) -> float:
        if n < 1:
            raise InvalidParameterError("Sample size must be positive.")
        if self.variant == "classical":
            return max(1.0, float(n) ** self.value)
        return float(n)

    def __str__(self):
        return f"delta:{self.value:g}" if self.variant == "classical" else f"fixedb:{self.value:g}"
