import io

import numpy as np
import pandas as pd
import pytest

import fixedb
from base import InvalidParameterError
from cli import main, read_config
from lagwindow import lag_window_estimate
from windows import WindowFunction

SERIES = [0.3, -1.2, 2.5, 0.7, 0.0, 1.1, -0.4, 0.9, 1.6, -2.0, 0.2, 0.8]


@pytest.fixture
def series_csv(tmp_path):
    path = tmp_path / "series.csv"
    path.write_text("value\n" + "\n".join(str(v) for v in SERIES) + "\n")
    return str(path)


@pytest.fixture
def chain_csv(tmp_path):
    path = tmp_path / "P.csv"
    path.write_text("0.9,0.1\n0.2,0.8\n")
    return str(path)


def read_output(capsys) -> pd.DataFrame:
    out = capsys.readouterr().out
    assert out.startswith("# ")
    return pd.read_csv(io.StringIO(out), comment="#")


class TestEstimate:
    def test_classical_rule(self, series_csv, capsys):
        assert main(["estimate", series_csv, "--cn-rule", "delta:0.5"]) == 0
        frame = read_output(capsys)
        expected = lag_window_estimate(SERIES, WindowFunction("bartlett"), len(SERIES) ** 0.5).gamma_sq
        assert frame["gamma_sq"].iloc[0] == pytest.approx(expected)
        assert frame["n"].iloc[0] == len(SERIES)

    def test_fixedb_rule(self, series_csv, capsys):
        assert main(["estimate", series_csv, "--window", "parzen", "--cn-rule", "fixedb:0.5"]) == 0
        frame = read_output(capsys)
        expected = lag_window_estimate(SERIES, WindowFunction("parzen", 0.5), float(len(SERIES))).gamma_sq
        assert frame["gamma_sq"].iloc[0] == pytest.approx(expected)

    def test_bare_fixedb_rule_takes_b(self, series_csv, capsys):
        assert main(["estimate", series_csv, "--cn-rule", "fixedb", "--b", "0.5"]) == 0
        frame = read_output(capsys)
        expected = lag_window_estimate(SERIES, WindowFunction("bartlett", 0.5), float(len(SERIES))).gamma_sq
        assert frame["gamma_sq"].iloc[0] == pytest.approx(expected)
        assert frame["gamma_sq"].iloc[0] != pytest.approx(lag_window_estimate(SERIES, WindowFunction("bartlett"), float(len(SERIES))).gamma_sq)

    def test_whitespace_series(self, tmp_path, capsys):
        path = tmp_path / "raw.txt"
        path.write_text("1 -1 0\n")
        assert main(["estimate", str(path), "--cn-rule", "delta:0.6309297535714574"]) == 0
        assert read_output(capsys)["gamma_sq"].iloc[0] == pytest.approx(1.0 / 3.0)

    def test_writes_file(self, series_csv, tmp_path):
        out = tmp_path / "est.csv"
        assert main(["estimate", series_csv, "--out", str(out), "--quiet"]) == 0
        assert pd.read_csv(out, comment="#").shape == (1, 5)

    def test_bad_rule(self, series_csv):
        assert main(["estimate", series_csv, "--cn-rule", "delta:2"]) == 2


class TestIntervals:
    def test_classical(self, series_csv, capsys):
        assert main(["ci", series_csv, "--delta", "0.5"]) == 0
        row = read_output(capsys).iloc[0]
        assert row["center"] == pytest.approx(np.mean(SERIES))
        assert row["lower"] < row["center"] < row["upper"]
        assert row["method"] == "classical"

    def test_fixedb_from_table(self, series_csv, tmp_path, capsys):
        table = tmp_path / "t.csv"
        argv = ["critvals", "--b", "0.5", "--reps", "500", "--grid", "50", "--scheme", "discrete", "--seed", "1", "--out", str(table)]
        assert main(argv) == 0
        assert main(["ci", series_csv, "--method", "fixedb", "--b", "0.5", "--table", str(table)]) == 0
        row = read_output(capsys).iloc[0]
        assert row["method"] == "fixedb" and row["param"] == 0.5

    def test_table_for_other_b(self, series_csv, tmp_path):
        table = tmp_path / "t.csv"
        argv = ["critvals", "--b", "0.3", "--reps", "200", "--grid", "40", "--scheme", "discrete", "--seed", "1", "--out", str(table)]
        assert main(argv) == 0
        assert main(["ci", series_csv, "--method", "fixedb", "--b", "0.5", "--table", str(table)]) == 2

    def test_fixedb_needs_seed_or_table(self, series_csv):
        assert main(["ci", series_csv, "--method", "fixedb"]) == 2

    def test_constant_series(self, tmp_path):
        path = tmp_path / "flat.csv"
        path.write_text("value\n" + "2.0\n" * 20)
        assert main(["ci", str(path)]) == 2


class TestCritvals:
    def test_columns(self, capsys):
        argv = ["critvals", "--alpha", "0.05,0.1", "--b", "0.5", "--reps", "300", "--grid", "40", "--scheme", "discrete", "--seed", "2"]
        assert main(argv) == 0
        frame = read_output(capsys)
        assert list(frame.columns) == ["window", "b", "alpha", "quantile", "reps", "grid", "seed", "reject_rate", "nonpositive"]
        assert list(frame["alpha"]) == [0.1, 0.05]
        assert frame["quantile"].iloc[0] <= frame["quantile"].iloc[1]

    def test_resample_policy_on_coarse_grid(self, capsys):
        argv = ["critvals", "--b", "1", "--reps", "2000", "--grid", "2", "--seed", "0"]
        assert main(argv) == 0
        assert read_output(capsys)["reject_rate"].iloc[0] > 0.01
        assert main(argv + ["--nonpositive", "resample"]) == 2

    def test_seed_required(self):
        with pytest.raises(SystemExit) as exc:
            main(["critvals"])
        assert exc.value.code == 2

    def test_exclusive_verbosity(self):
        with pytest.raises(SystemExit):
            main(["critvals", "--seed", "1", "--verbose", "--quiet"])


class TestPublishedGrid:
    def test_table1(self, capsys):
        assert main(["table1", "--reps", "200", "--grid", "40", "--seed", "1"]) == 0
        frame = read_output(capsys)
        assert len(frame) == 9
        assert set(frame["window"]) == {"bartlett", "quadratic", "truncated"}
        assert list(frame["published"][:3]) == [2.828, 3.557, 4.735]

    def test_alias_gives_same_table(self, capsys):
        argv = ["--reps", "200", "--grid", "40", "--seed", "1"]
        assert main(["table1"] + argv) == 0
        first = read_output(capsys)
        assert main(["quantile-check"] + argv) == 0
        assert read_output(capsys).equals(first)


class TestConfigFile:
    def test_values_and_override(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# critical values\nreps = 300\ngrid=40\nscheme = discrete  # no rejections\nseed=3\n")
        assert main(["critvals", "--config", str(cfg), "--b", "0.5"]) == 0
        frame = read_output(capsys)
        assert frame["reps"].iloc[0] == 300 and frame["grid"].iloc[0] == 40 and frame["seed"].iloc[0] == 3
        assert main(["critvals", "--config", str(cfg), "--b", "0.5", "--reps", "200"]) == 0
        assert read_output(capsys)["reps"].iloc[0] == 200

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("seed=1\nwindows=parzen\n")
        with pytest.raises(SystemExit):
            main(["critvals", "--config", str(cfg)])

    def test_boolean_flag(self, tmp_path, chain_csv, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text(f"chain={chain_csv}\nno_decompose=true\nseed=4\nns=50\nreps=2\n")
        assert main(["consistency", "--config", str(cfg)]) == 0
        assert np.isnan(read_output(capsys)["median_abs_zeta"].iloc[0])

    def test_malformed_line(self, tmp_path):
        cfg = tmp_path / "m.cfg"
        cfg.write_text("seed 1\n")
        with pytest.raises(InvalidParameterError):
            read_config(str(cfg))


class TestChainCommands:
    def test_oracle_poisson(self, chain_csv, tmp_path, capsys):
        f = tmp_path / "f.csv"
        f.write_text("0,1\n")
        assert main(["oracle", "--chain", chain_csv, "--f", str(f)]) == 0
        row = read_output(capsys).iloc[0]
        assert row["sigma2"] == pytest.approx(34.0 / 27.0)
        assert row["poisson_residual"] <= 1e-12

    def test_oracle_decomposition(self, chain_csv, capsys):
        assert main(["oracle", "--chain", chain_csv, "--check", "decomp", "--n", "80", "--reps", "3", "--seed", "1"]) == 0
        frame = read_output(capsys)
        assert len(frame) == 3
        assert np.all(frame["relative_residual"] <= 1e-10)

    @pytest.mark.parametrize("check", ["lemma2", "hoeffding"])
    def test_oracle_ustat_decomposition(self, chain_csv, capsys, check):
        assert main(["oracle", "--chain", chain_csv, "--check", check, "--n", "25", "--reps", "3", "--seed", "2"]) == 0
        assert np.all(read_output(capsys)["relative_mismatch"] <= 1e-8)

    @pytest.mark.parametrize("check", ["lemma2", "hoeffding", "decomp"])
    def test_oracle_path_check_needs_seed(self, chain_csv, check):
        assert main(["oracle", "--chain", chain_csv, "--check", check]) == 2

    def test_oracle_needs_chain(self):
        assert main(["oracle"]) == 2

    def test_simulate_states(self, chain_csv, capsys):
        assert main(["simulate", "--model", "finite", "--chain", chain_csv, "--n", "30", "--states", "--seed", "5"]) == 0
        frame = read_output(capsys)
        assert len(frame) == 31
        assert set(frame["state"]) <= {0, 1}

    def test_simulate_garch(self, capsys):
        assert main(["simulate", "--n", "40", "--seed", "6"]) == 0
        frame = read_output(capsys)
        assert len(frame) == 40
        assert np.all(frame["value"] >= 0)

    def test_ustat(self, chain_csv, capsys):
        assert main(["ustat", "--chain", chain_csv, "--n", "60", "--reps", "2", "--seed", "7"]) == 0
        frame = read_output(capsys)
        assert list(frame.columns) == ["replicate", "n", "standardized", "linear", "zeta_ratio"]

    def test_coverage_finite(self, chain_csv, capsys, monkeypatch):
        monkeypatch.setattr(fixedb, "MAX_REJECT_RATE", 1.0)
        argv = [
            "coverage", "--model", "finite", "--chain", chain_csv, "--n", "200", "--burnin", "10", "--reps", "2",
            "--deltas", "0.5", "--bs", "0.5", "--kb-reps", "300", "--kb-grid", "200", "--seed", "8",
        ]
        assert main(argv) == 0
        out = capsys.readouterr().out
        assert "model=finite" in out.splitlines()[0]
        frame = pd.read_csv(io.StringIO(out), comment="#")
        assert list(frame["method"]) == ["classical", "fixedb"]
