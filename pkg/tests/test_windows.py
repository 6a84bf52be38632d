import numpy as np
import pytest
from numpy.testing import assert_allclose

from base import InvalidParameterError
from lagwindow import lag_window_estimate
from windows import (
    KINDS,
    BandwidthRule,
    WindowFunction,
    eval_window,
    first_moment,
    g_b,
    lag_weights,
    mean_weight,
    rescale_bandwidth,
    running_integral,
    window_from_name,
)


class TestEvalWindow:
    """Closed-form window values."""

    def test_bartlett_midpoint(self):
        assert eval_window(WindowFunction("bartlett", 1.0), 0.5) == pytest.approx(0.5)

    def test_quadratic_vanishes_at_b(self):
        assert eval_window(WindowFunction("quadratic", 1.0), 1.0) == 0.0

    def test_bartlett_small_b(self):
        assert eval_window(WindowFunction("bartlett", 0.3), 0.15) == pytest.approx(0.5)

    def test_truncated_right_open(self):
        w = WindowFunction("truncated", 0.3)
        assert w(0.29) == 1.0
        assert w(0.3) == 0.0

    def test_parzen_pieces(self):
        w = WindowFunction("parzen", 1.0)
        assert w(0.25) == pytest.approx(0.71875)
        assert w(0.75) == pytest.approx(0.03125)
        assert w(0.5) == pytest.approx(0.25)

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("b", [0.3, 0.5, 0.9, 1.0, 2.0])
    def test_range_and_support(self, kind, b):
        w = WindowFunction(kind, b)
        x = np.linspace(0.0, 3.0, 601)
        vals = w(x)
        assert np.all(vals >= 0.0) and np.all(vals <= 1.0)
        assert np.all(vals[x >= b] == 0.0)
        assert w(0.0) == 1.0

    def test_array_input_keeps_shape(self):
        w = WindowFunction("bartlett", 1.0)
        assert w(np.array([[0.0, 0.5], [1.0, 2.0]])).shape == (2, 2)

    def test_negative_argument_rejected(self):
        with pytest.raises(InvalidParameterError):
            WindowFunction("bartlett", 1.0)(-0.1)


class TestConstruction:
    """Window and bandwidth-rule validation."""

    @pytest.mark.parametrize("b", [0.0, -1.0, np.inf, np.nan])
    def test_bad_b(self, b):
        with pytest.raises(InvalidParameterError):
            WindowFunction("bartlett", b)

    def test_unknown_kind(self):
        with pytest.raises(InvalidParameterError):
            WindowFunction("hann", 1.0)

    def test_from_name_is_case_insensitive(self):
        assert window_from_name(" Bartlett ", 0.5) == WindowFunction("bartlett", 0.5)

    def test_equality_and_hash(self):
        assert {WindowFunction("parzen", 0.5), WindowFunction("parzen", 0.5)} == {WindowFunction("parzen", 0.5)}


class TestIntegrals:
    """g_b, mean_weight and their quadrature fallback."""

    def test_g_b_values(self):
        w = WindowFunction("bartlett", 1.0)
        assert g_b(w, 0.0) == pytest.approx(0.5)
        assert g_b(w, 0.5) == pytest.approx(0.75)

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("b", [0.3, 0.5, 0.9, 1.0])
    def test_g_b_symmetric(self, kind, b):
        t = np.linspace(0.0, 1.0, 101)
        w = WindowFunction(kind, b)
        assert_allclose(g_b(w, t), g_b(w, 1.0 - t), atol=1e-12)

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("b", [0.3, 0.5, 0.9, 1.0])
    def test_closed_form_matches_quadrature(self, kind, b):
        t = np.linspace(0.0, 1.0, 101)
        w = WindowFunction(kind, b)
        assert_allclose(g_b(w, t), g_b(w, t, numeric=True), atol=1e-8)
        assert mean_weight(w) == pytest.approx(mean_weight(w, numeric=True), abs=1e-8)

    @pytest.mark.parametrize("kind", KINDS)
    def test_moments_beyond_support(self, kind):
        w = WindowFunction(kind, 0.4)
        assert running_integral(w, 0.9) == pytest.approx(running_integral(w, 0.4))
        assert first_moment(w, 0.9) == pytest.approx(first_moment(w, 0.4))

    @pytest.mark.parametrize(
        "kind,b,expected",
        [("bartlett", 1.0, 1.0 / 3.0), ("truncated", 1.0, 0.5), ("truncated", 0.5, 0.375), ("quadratic", 1.0, 5.0 / 12.0)],
    )
    def test_mean_weight(self, kind, b, expected):
        assert mean_weight(WindowFunction(kind, b)) == pytest.approx(expected)

    def test_g_b_domain(self):
        with pytest.raises(InvalidParameterError):
            g_b(WindowFunction("bartlett", 1.0), 1.5)


class TestLagWeights:
    """Lag weights and bandwidth rescaling."""

    def test_trimmed_bartlett(self):
        assert_allclose(lag_weights(WindowFunction("bartlett", 1.0), 4.0, 10), [0.75, 0.5, 0.25])

    def test_capped_by_series_length(self):
        assert lag_weights(WindowFunction("truncated", 1.0), 100.0, 5).shape == (4,)

    def test_short_series(self):
        assert lag_weights(WindowFunction("bartlett", 1.0), 3.0, 1).size == 0

    @pytest.mark.parametrize("kind", KINDS)
    def test_rescaled_window_gives_same_estimate(self, kind):
        x = np.random.default_rng(3).standard_normal(200)
        w = WindowFunction(kind, 0.25)
        unit, c_n = rescale_bandwidth(w, 200.0)
        assert unit.b == 1.0 and c_n == 50.0
        assert lag_window_estimate(x, w, 200.0).gamma_sq == pytest.approx(lag_window_estimate(x, unit, c_n).gamma_sq, abs=1e-12)


class TestBandwidthRule:
    """Parsing and evaluating bandwidth rules."""

    def test_classical(self):
        rule = BandwidthRule.parse("delta:0.5")
        assert rule.c_n(100) == pytest.approx(10.0)
        assert str(rule) == "delta:0.5"

    def test_fixedb(self):
        rule = BandwidthRule.parse("fixedb:0.3")
        assert rule.value == 0.3
        assert rule.c_n(100) == 100.0
        assert BandwidthRule.parse("fixedb").value == 1.0
        assert BandwidthRule.parse("fixedb", default_b=0.5).value == 0.5
        assert BandwidthRule.parse("fixedb:0.3", default_b=0.5).value == 0.3

    def test_c_n_at_least_one(self):
        assert BandwidthRule("classical", 0.5).c_n(1) == 1.0

    @pytest.mark.parametrize("text", ["delta:1.5", "delta:0", "fixedb:1.2", "nw:4"])
    def test_invalid(self, text):
        with pytest.raises(InvalidParameterError):
            BandwidthRule.parse(text)
