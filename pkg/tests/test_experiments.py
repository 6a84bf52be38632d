import numpy as np
import pytest

import fixedb
from base import InvalidParameterError
from chain_oracle import FiniteChain
from experiments import (
    ConsistencyConfig,
    ExperimentConfig,
    SeriesFactory,
    coverage_frame,
    coverage_tables,
    provenance_line,
    run_consistency,
    run_coverage,
    run_oracle_check,
    run_quantile_check,
    run_ustat,
    true_mean,
)
from fixedb import REFERENCE_QUANTILES, CriticalValueTable, KbConfig
from samplers import GarchParams
from ustat import UStatSpec
from windows import WindowFunction

TWO_STATE = FiniteChain([[0.9, 0.1], [0.2, 0.8]])


def reference_tables(bs=(0.5,), kind="bartlett"):
    return {
        b: CriticalValueTable(window=WindowFunction(kind, b), quantiles={0.05: REFERENCE_QUANTILES[kind][b]}, R=200_000, m=2000, seed=0, reject_rate=0.0)
        for b in bs
    }


def finite_config(**kwargs):
    settings = dict(model="finite", chain=TWO_STATE, f=(0.0, 1.0), n=500, burnin=50, R=6, deltas=(0.5,), bs=(0.5,))
    settings.update(kwargs)
    return ExperimentConfig(**settings)


class TestConfig:
    """Experiment settings and provenance."""

    def test_unknown_model(self):
        with pytest.raises(InvalidParameterError):
            ExperimentConfig(model="arma")

    def test_finite_needs_chain(self):
        with pytest.raises(InvalidParameterError):
            ExperimentConfig(model="finite")
        with pytest.raises(InvalidParameterError):
            finite_config(f=(0.0, 1.0, 2.0))

    def test_provenance(self):
        line = finite_config(master_seed=11).provenance()
        assert line.startswith("# ")
        assert "master_seed=11" in line and "chain=S=2" in line and "bs=0.5" in line

    def test_provenance_line(self):
        assert provenance_line(seed=3, window="bartlett") == "# seed=3 window=bartlett"

    def test_true_mean(self):
        assert true_mean(ExperimentConfig(garch=GarchParams())) == pytest.approx(5.0)
        assert true_mean(finite_config()) == pytest.approx(1.0 / 3.0)


class TestSeriesFactory:
    """Observed series per replicate."""

    def test_garch_series(self):
        factory = SeriesFactory(ExperimentConfig(n=300, burnin=20, R=2))
        x = factory(0)
        assert x.shape == (300,)
        assert np.all(x >= 0)
        np.testing.assert_array_equal(x, factory(0))
        assert not np.array_equal(x, factory(1))

    def test_finite_series(self):
        x = SeriesFactory(finite_config())(2)
        assert x.shape == (500,)
        assert set(np.unique(x)) <= {0.0, 1.0}

    @pytest.mark.slow
    def test_poisson_regression_series(self):
        cfg = ExperimentConfig(model="poissonreg", n=2000, burnin=500, R=2, Np=5, reference_mean=0.35)
        x = SeriesFactory(cfg)(0)
        assert x.shape == (2000,)
        assert np.all(np.isfinite(x))


class TestCoverage:
    """Coverage bookkeeping."""

    def test_counts_add_up(self):
        rows = run_coverage(finite_config(), tables=reference_tables())
        assert [(r.method, r.param) for r in rows] == [("classical", 0.5), ("fixedb", 0.5)]
        for r in rows:
            assert r.failures + r.covered + r.not_covered == r.R
            assert 0.0 <= r.coverage <= 1.0
            assert r.avg_length > 0

    def test_single_replicate(self):
        rows = run_coverage(finite_config(R=1), tables=reference_tables())
        assert all(r.coverage in (0.0, 1.0) for r in rows)

    def test_jobs_do_not_change_results(self):
        a = coverage_frame(run_coverage(finite_config(), tables=reference_tables()))
        b = coverage_frame(run_coverage(finite_config(n_jobs=2), tables=reference_tables()))
        assert a.equals(b)

    def test_simulated_tables_for_quadratic_window(self):
        cfg = finite_config(window="quadratic", bs=(0.3, 0.9), kb_reps=300, kb_grid=50, master_seed=5)
        tables = coverage_tables(cfg)
        assert sorted(tables) == [0.3, 0.9]
        assert all(t.nonpositive == "absolute" and t.window.kind == "quadratic" for t in tables.values())
        rows = run_coverage(cfg, tables=tables)
        assert [r.method for r in rows] == ["classical", "fixedb", "fixedb"]
        assert all(r.failures + r.covered + r.not_covered == r.R for r in rows)

    def test_frame_columns(self):
        frame = coverage_frame(run_coverage(finite_config(R=2), tables=reference_tables()))
        assert {"method", "param", "coverage", "avg_length", "failures", "covered"} <= set(frame.columns)

    @pytest.mark.slow
    def test_garch_fixedb_is_more_robust(self):
        cfg = ExperimentConfig(model="garch", n=20_000, burnin=4_000, R=200, kb_reps=50_000, master_seed=71, n_jobs=-1)
        tables = coverage_tables(cfg)
        assert all(t.R == 50_000 and t.m == 2000 for t in tables.values())
        rows = run_coverage(cfg, tables=tables)
        classical = [r.coverage for r in rows if r.method == "classical"]
        fixed = {r.param: r.coverage for r in rows if r.method == "fixedb"}
        assert len(classical) == 5 and len(fixed) == 9
        assert 0.90 <= fixed[0.5] <= 0.98
        assert max(fixed.values()) - min(fixed.values()) <= max(classical) - min(classical)

    @pytest.mark.slow
    def test_finite_chain_coverage_band(self):
        cfg = finite_config(n=20_000, burnin=100, R=200, bs=(0.3, 0.5, 0.9), n_jobs=-1)
        for row in run_coverage(cfg, tables=reference_tables(bs=(0.3, 0.5, 0.9))):
            assert 0.90 <= row.coverage <= 0.98


class TestQuantileCheck:
    """Simulated quantiles next to the published ones."""

    def test_small_run(self, monkeypatch):
        monkeypatch.setattr(fixedb, "MAX_REJECT_RATE", 1.0)
        frame = run_quantile_check(KbConfig(m=200, R=2000, master_seed=1), windows=("bartlett",), bs=(0.3,), boot_reps=20)
        assert len(frame) == 1
        row = frame.iloc[0]
        assert row["published"] == 2.828
        assert row["nonpositive"] == "absolute"
        assert row["abs_diff"] == pytest.approx(abs(row["simulated"] - 2.828))
        assert row["boot_se"] > 0


class TestConsistency:
    """Gamma^2 against the exact long-run variance."""

    def test_small_run(self):
        cfg = ConsistencyConfig(chain=TWO_STATE, f=(0.0, 1.0), ns=(100, 400), deltas=(0.5,), R=5)
        frame = run_consistency(cfg)
        assert list(frame["n"]) == [100, 400]
        assert np.allclose(frame["sigma2"], 34.0 / 27.0)
        assert np.all(frame["median_abs_error"] >= 0)

    def test_bad_delta(self):
        with pytest.raises(InvalidParameterError):
            ConsistencyConfig(chain=TWO_STATE, f=(0.0, 1.0), deltas=(1.5,))

    @pytest.mark.slow
    def test_error_shrinks(self):
        cfg = ConsistencyConfig(chain=TWO_STATE, f=(0.0, 1.0), ns=(1_000, 100_000), deltas=(0.6,), R=100, decompose=False, n_jobs=-1)
        frame = run_consistency(cfg)
        small, large = frame["median_abs_error"]
        assert large <= 0.12
        assert large < small


class TestOracleAndUStat:
    """Residual reports and U-statistic replicates."""

    @pytest.mark.parametrize("check", ["poisson", "bivariate"])
    def test_exact_checks(self, check):
        frame = run_oracle_check(TWO_STATE, check)
        assert len(frame) == 1
        residuals = [c for c in frame.columns if c.endswith("residual")]
        assert residuals and np.all(frame[residuals].to_numpy() <= 1e-10)

    def test_poisson_report(self):
        frame = run_oracle_check(TWO_STATE, "poisson", f=[0.0, 1.0])
        assert frame["sigma2"].iloc[0] == pytest.approx(34.0 / 27.0)

    @pytest.mark.parametrize("check,column", [("decomp", "relative_residual"), ("hoeffding", "relative_mismatch")])
    def test_path_checks(self, check, column):
        frame = run_oracle_check(TWO_STATE, check, n=60, R=4, master_seed=2)
        assert len(frame) == 4
        assert np.all(frame[column] <= 1e-8)

    def test_unknown_check(self):
        with pytest.raises(InvalidParameterError):
            run_oracle_check(TWO_STATE, "spectral")

    def test_ustat_replicates(self):
        spec = UStatSpec.sum_kernel([0.0, 1.0])
        frame = run_ustat(TWO_STATE, spec, n=100, R=3, master_seed=4)
        assert list(frame["replicate"]) == [0, 1, 2]
        np.testing.assert_allclose(frame["standardized"], frame["linear"], rtol=1e-10)
