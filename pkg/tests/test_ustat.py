import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from base import DegenerateKernel, InvalidParameterError, RngStream
from chain_oracle import exact_sigma2, hoeffding_terms, poisson_solve, ustat_weights
from samplers import simulate_finite_chain
from ustat import UStatSpec, clt_normalize, linear_statistic, quadratic_remainder, u_statistic


class TestUStatistic:
    """Pair sums over j < l."""

    def test_product_of_values(self):
        assert u_statistic([1.0, -1.0, 2.0], UStatSpec(lambda x, y: x * y)) == pytest.approx(-1.0)

    def test_constant_kernel_counts_pairs(self):
        assert u_statistic(np.arange(7.0), UStatSpec(lambda x, y: np.ones_like(x * y))) == pytest.approx(21.0)

    def test_sum_kernel(self):
        values = np.array([0.5, 2.0, -1.0, 4.0])
        assert u_statistic(values, UStatSpec(lambda x, y: x + y)) == pytest.approx(3.0 * values.sum())

    def test_matrix_matches_function(self):
        gen = np.random.default_rng(0)
        f = gen.standard_normal(4)
        obs = gen.integers(0, 4, 50)
        by_matrix = u_statistic(obs, UStatSpec.product_kernel(f))
        by_function = u_statistic(f[obs], UStatSpec(lambda x, y: x * y))
        assert by_matrix == pytest.approx(by_function, rel=1e-12)

    def test_short_input(self):
        assert u_statistic([3], UStatSpec.sum_kernel([1.0, 2.0, 3.0, 4.0])) == 0.0

    def test_asymmetric_matrix(self):
        with pytest.raises(InvalidParameterError):
            UStatSpec([[0.0, 1.0], [0.0, 0.0]])

    def test_state_out_of_range(self):
        with pytest.raises(InvalidParameterError):
            u_statistic([0, 2], UStatSpec(np.ones((2, 2))))

    def test_function_kernel_has_no_projection(self, two_state):
        with pytest.raises(InvalidParameterError):
            clt_normalize([0, 1, 0], two_state, UStatSpec(lambda x, y: x * y))


class TestNormalization:
    """Exact centering and scaling on the two-state chain."""

    def test_sum_kernel(self, two_state, indicator):
        spec = UStatSpec.sum_kernel(indicator)
        path = simulate_finite_chain(two_state, 200, RngStream(1))
        stat, norm = clt_normalize(path, two_state, spec)
        assert norm.theta == pytest.approx(2.0 / 3.0)
        assert norm.sigma_n1_sq == pytest.approx(34.0 / 27.0, rel=1e-10)
        assert norm.sigma_n_sq == pytest.approx(200 * 199**2 * 34.0 / 27.0, rel=1e-10)
        u = u_statistic(path[1:], spec)
        assert stat == pytest.approx((u - 2.0 / 3.0 * 200 * 199 / 2) / np.sqrt(norm.sigma_n_sq))

    def test_sum_kernel_is_linear(self, two_state, indicator):
        spec = UStatSpec.sum_kernel(indicator)
        path = simulate_finite_chain(two_state, 150, RngStream(2))
        stat, _ = clt_normalize(path, two_state, spec)
        assert stat == pytest.approx(linear_statistic(path, two_state, spec), rel=1e-10)
        assert quadratic_remainder(path, two_state, spec) == pytest.approx(0.0, abs=1e-9)

    def test_degenerate_kernel(self, two_state, indicator):
        h = poisson_solve(two_state, indicator).h
        with pytest.raises(DegenerateKernel):
            clt_normalize([0, 1, 1, 0], two_state, UStatSpec.product_kernel(h))

    def test_variance_of_projection(self, three_state):
        h = np.array([[1.0, 0.5, -1.0], [0.5, 2.0, 0.0], [-1.0, 0.0, 0.3]])
        spec = UStatSpec(h)
        path = simulate_finite_chain(three_state, 50, RngStream(3))
        _, norm = clt_normalize(path, three_state, spec)
        h1 = h @ three_state.stationary - norm.theta
        assert norm.sigma_n1_sq == pytest.approx(exact_sigma2(three_state, h1), rel=1e-12)


class TestRemainder:
    """zeta_n of the U-statistic decomposition."""

    def test_matches_dense_decomposition(self, three_state):
        f = np.array([1.0, -2.0, 0.5])
        spec = UStatSpec.product_kernel(f)
        for i in range(10):
            path = simulate_finite_chain(three_state, 40, RngStream(4, i))
            terms = hoeffding_terms(path, ustat_weights, spec.matrix, three_state)
            assert quadratic_remainder(path, three_state, spec) == pytest.approx(terms.zeta_implicit, abs=1e-9)
            assert terms.zeta_explicit == pytest.approx(terms.zeta_implicit, abs=1e-8 * (1.0 + abs(terms.u_n)))

    def test_constant_kernel(self, three_state):
        path = simulate_finite_chain(three_state, 60, RngStream(5))
        assert quadratic_remainder(path, three_state, UStatSpec(np.full((3, 3), -1.5))) == pytest.approx(0.0, abs=1e-9)

    def test_transpose_invariance(self, three_state):
        h = np.array([[1.0, 0.5, -1.0], [0.5, 2.0, 0.0], [-1.0, 0.0, 0.3]])
        path = simulate_finite_chain(three_state, 80, RngStream(6))
        assert quadratic_remainder(path, three_state, UStatSpec(h.T)) == quadratic_remainder(path, three_state, UStatSpec(h))


@pytest.mark.slow
class TestClt:
    """Monte Carlo behaviour of the normalized statistic."""

    @pytest.mark.parametrize("kernel", ["sum", "sum_and_product"])
    def test_standard_normal_limit(self, two_state, indicator, kernel):
        if kernel == "sum":
            spec = UStatSpec.sum_kernel(indicator)
        else:
            spec = UStatSpec(indicator[:, None] + indicator[None, :] + np.outer(indicator, indicator))
        stats_ = [clt_normalize(simulate_finite_chain(two_state, 5000, RngStream(7, i)), two_state, spec)[0] for i in range(2000)]
        assert stats.kstest(stats_, "norm").pvalue > 0.01

    def test_remainder_is_negligible(self, two_state, indicator):
        spec = UStatSpec(indicator[:, None] + indicator[None, :] + np.outer(indicator, indicator))
        medians = []
        for n in (200, 5000):
            ratios = []
            for i in range(200):
                path = simulate_finite_chain(two_state, n, RngStream(8, i))
                _, norm = clt_normalize(path, two_state, spec)
                ratios.append(abs(quadratic_remainder(path, two_state, spec)) / np.sqrt(norm.sigma_n_sq))
            medians.append(np.median(ratios))
        assert medians[1] < medians[0]
