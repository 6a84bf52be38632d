"""
Experiment harness behind the command line: coverage studies, the critical-value table,
consistency and rate studies, oracle residual checks and U-statistic replicates.

Replicate i always draws from RngStream(master_seed, i) (offset per grid cell where a study has
several), and results are aggregated in replicate order, so every table is reproducible from
its provenance line.
"""

from dataclasses import asdict, dataclass, field, fields
from typing import Dict, List, Optional, Sequence, Tuple
import logging

import numpy as np
import pandas as pd

from base import InvalidParameterError, NonpositiveVarianceEstimate, RngStream, replicate_map
from chain_oracle import (
    FiniteChain,
    bivariate_poisson_solve,
    conditional_mean_residual,
    decomposition_report,
    exact_sigma2,
    hoeffding_terms,
    poisson_solve,
    ustat_weights,
    verify_bivariate_poisson,
    verify_martingale_property,
)
from ci import classical_ci, covers, fixedb_ci
from fixedb import REFERENCE_QUANTILES, CriticalValueTable, KbConfig, bootstrap_quantile_se, critical_value_table
from lagwindow import lag_window_estimate
from samplers import (
    GarchParams,
    PoissonTruth,
    RwmConfig,
    default_init,
    generate_poisson_data,
    garch_stationary_mean,
    log_posterior,
    posterior_reference_mean,
    rwm_sample,
    simulate_finite_chain,
    simulate_garch,
    tune_kappa,
)
from ustat import UStatSpec, clt_normalize, linear_statistic, quadratic_remainder
from windows import WindowFunction

logger = logging.getLogger(__name__)

MODELS = ("garch", "poissonreg", "finite")

# stream ids above any replicate index, for draws shared by all replicates
DATA_STREAM_ID = 1 << 40
TUNING_STREAM_ID = DATA_STREAM_ID + 1


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "garch"
    n: int = 20_000
    burnin: int = 4_000
    R: int = 200
    deltas: Tuple[float, ...] = (0.3, 0.4, 0.5, 0.6, 0.7)
    bs: Tuple[float, ...] = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
    window: str = "bartlett"
    alpha: float = 0.05
    master_seed: int = 0
    n_jobs: int = 1
    # fixed-b tables used by the coverage study
    kb_grid: int = 2000
    kb_reps: int = 50_000
    kb_nonpositive: str = "absolute"
    # garch
    garch: GarchParams = field(default_factory=GarchParams)
    # finite chain; f is the observed function of the state
    chain: Optional[FiniteChain] = field(default=None, compare=False)
    f: Optional[Tuple[float, ...]] = None
    # poisson regression posterior; coordinate 1 is alpha_1
    Ne: int = 3
    Np: int = 20
    n_ep: float = 1000.0
    coordinate: int = 1
    reference_mean: Optional[float] = None
    reference_steps: int = 200_000

    def __post_init__(self):
        if self.model not in MODELS:
            raise InvalidParameterError(f"Unknown model {self.model!r}; use one of {MODELS}.")
        if self.R < 1 or self.n < 2 or self.burnin < 0:
            raise InvalidParameterError(f"Need R >= 1, n >= 2 and burnin >= 0 (R={self.R}, n={self.n}, burnin={self.burnin}).")
        if not self.deltas or not self.bs:
            raise InvalidParameterError("The delta and b grids must be nonempty.")
        if not 0 < self.alpha < 1:
            raise InvalidParameterError(f"alpha must lie in (0, 1), got {self.alpha}.")
        if self.model == "finite" and (self.chain is None or self.f is None):
            raise InvalidParameterError("The finite model needs a chain and a function f.")
        if self.model == "finite" and len(self.f) != self.chain.S:
            raise InvalidParameterError(f"f has {len(self.f)} values, chain has {self.chain.S} states.")

    def provenance(self) -> str:
        items = []
        for fld in fields(self):
            value = getattr(self, fld.name)
            if fld.name == "chain":
                value = None if value is None else f"S={value.S}"
            elif fld.name == "garch":
                value = f"{value.omega:g}/{value.alpha:g}/{value.beta:g}/{value.h0:g}"
            elif isinstance(value, tuple):
                value = ",".join(f"{v:g}" for v in value)
            items.append(f"{fld.name}={value}")
        return "# " + " ".join(items)


def provenance_line(**settings) -> str:
    return "# " + " ".join(f"{k}={v}" for k, v in settings.items())


@dataclass(frozen=True)
class CoverageRow:
    """coverage is taken over the replicates whose interval exists; failures count the rest."""

    method: str
    param: float
    window: str
    n: int
    R: int
    coverage: float
    avg_length: float
    avg_sigma: float
    failures: int
    covered: int

    @property
    def not_covered(self) -> int:
        return self.R - self.failures - self.covered


def true_mean(cfg: ExperimentConfig, model=None) -> float:
    if cfg.model == "garch":
        return garch_stationary_mean(cfg.garch)
    if cfg.model == "finite":
        return float(cfg.chain.stationary @ np.asarray(cfg.f, dtype=float))
    if cfg.reference_mean is not None:
        return cfg.reference_mean
    logger.info("running a %d-step reference chain for the posterior mean", cfg.reference_steps)
    return posterior_reference_mean(model, cfg.coordinate, steps=cfg.reference_steps, seed=cfg.master_seed + 1)


class SeriesFactory:
    """Builds the observed series h(X_1..X_n) of replicate i for the configured model."""

    def __init__(self, cfg: ExperimentConfig):
        self.cfg = cfg
        self.model = None
        self.rwm = None
        if cfg.model == "poissonreg":
            truth = PoissonTruth() if cfg.Ne == 3 else PoissonTruth(alpha=(0.0,) * (cfg.Ne - 1))
            self.model = generate_poisson_data(truth, cfg.Ne, cfg.Np, cfg.n_ep, RngStream(cfg.master_seed, DATA_STREAM_ID))
            init = default_init(self.model.layout)
            base_cfg = RwmConfig(init=init, steps=cfg.n + cfg.burnin, burnin=cfg.burnin)
            kappa = tune_kappa(
                self._log_target,
                base_cfg.with_kappa(1.0 / self.model.layout.dim),
                RngStream(cfg.master_seed, TUNING_STREAM_ID),
            )
            self.rwm = base_cfg.with_kappa(kappa)

    def _log_target(self, theta):
        return log_posterior(theta, self.model)

    def __call__(self, i: int) -> np.ndarray:
        cfg = self.cfg
        stream = RngStream(cfg.master_seed, i)
        if cfg.model == "garch":
            path = simulate_garch(cfg.garch, cfg.n, stream, burnin=cfg.burnin)
            return path.u[1:] ** 2
        if cfg.model == "finite":
            path = simulate_finite_chain(cfg.chain, cfg.n + cfg.burnin, stream)
            return np.asarray(cfg.f, dtype=float)[path[cfg.burnin + 1 :]]
        res = rwm_sample(self._log_target, self.rwm, stream, keep=[cfg.coordinate])
        return res.chain[:, 0]


def coverage_tables(cfg: ExperimentConfig) -> Dict[float, CriticalValueTable]:
    kb = KbConfig(m=cfg.kb_grid, R=cfg.kb_reps, master_seed=cfg.master_seed, n_jobs=cfg.n_jobs, nonpositive=cfg.kb_nonpositive)
    return {b: critical_value_table(WindowFunction(cfg.window, b), [cfg.alpha], kb) for b in cfg.bs}


def _replicate_intervals(series: np.ndarray, cfg: ExperimentConfig, truth: float, tables) -> List[tuple]:
    out = []
    w = WindowFunction(cfg.window)
    for delta in cfg.deltas:
        try:
            ci = classical_ci(series, cfg.alpha, delta, w)
            out.append(("classical", delta, covers(ci, truth), 2 * ci.half_width, ci.sigma_hat))
        except NonpositiveVarianceEstimate:
            out.append(("classical", delta, None, np.nan, np.nan))
    for b in cfg.bs:
        try:
            ci = fixedb_ci(series, cfg.alpha, b, w, tables[b])
            out.append(("fixedb", b, covers(ci, truth), 2 * ci.half_width, ci.sigma_hat))
        except NonpositiveVarianceEstimate:
            out.append(("fixedb", b, None, np.nan, np.nan))
    return out


def run_coverage(cfg: ExperimentConfig, tables: Optional[Dict[float, CriticalValueTable]] = None) -> List[CoverageRow]:
    """
    Coverage and average length of both interval families over R replicates.

    Args:
        cfg: Model, sample size, replicate count, delta and b grids, window, level and seed.
        tables: Fixed-b critical values keyed by b. Simulated with coverage_tables(cfg) when
            omitted, which dominates the run time for large kb_reps.

    Returns:
        One CoverageRow per (method, parameter), classical rows first. Intervals that do not
        exist (Gamma^2 <= 0 where the method cannot use it) are counted as failures and left
        out of the coverage denominator.
    """
    factory = SeriesFactory(cfg)
    truth = true_mean(cfg, factory.model)
    if tables is None:
        tables = coverage_tables(cfg)
    logger.info("coverage study: model=%s n=%d R=%d truth=%.6g", cfg.model, cfg.n, cfg.R, truth)

    def one(i: int):
        return _replicate_intervals(factory(i), cfg, truth, tables)

    per_rep = replicate_map(one, cfg.R, n_jobs=cfg.n_jobs, batch_size=4)
    rows = []
    for k, (method, param, _, _, _) in enumerate(per_rep[0]):
        cells = [rep[k] for rep in per_rep]
        ok = [c for c in cells if c[2] is not None]
        failures = len(cells) - len(ok)
        covered = sum(1 for c in ok if c[2])
        if failures:
            logger.warning("%s param=%g: %d of %d intervals undefined", method, param, failures, cfg.R)
        rows.append(
            CoverageRow(
                method=method,
                param=float(param),
                window=cfg.window,
                n=cfg.n,
                R=cfg.R,
                coverage=covered / len(ok) if ok else 0.0,
                avg_length=float(np.mean([c[3] for c in ok])) if ok else float("nan"),
                avg_sigma=float(np.mean([c[4] for c in ok])) if ok else float("nan"),
                failures=failures,
                covered=covered,
            )
        )
    return rows


def coverage_frame(rows: Sequence[CoverageRow]) -> pd.DataFrame:
    return pd.DataFrame([asdict(r) for r in rows])


def run_quantile_check(
    kb: KbConfig,
    windows: Sequence[str] = ("bartlett", "quadratic", "truncated"),
    bs: Sequence[float] = (0.3, 0.5, 0.9),
    alpha: float = 0.05,
    boot_reps: int = 0,
) -> pd.DataFrame:
    """
    Simulated (1 - alpha/2)-quantiles over a window x b grid next to the published ones.

    Args:
        kb: Simulation settings shared by every cell, nonpositive-K policy included.
        windows: Window kinds.
        bs: Window supports.
        alpha: Two-sided level; published values exist for 0.05 only.
        boot_reps: When positive, adds the bootstrap standard error of each quantile.

    Returns:
        One row per (window, b) with the simulated and published quantiles and their distance.
    """
    rows = []
    for kind in windows:
        for b in bs:
            table = critical_value_table(WindowFunction(kind, b), [alpha], kb, keep_sample=boot_reps > 0)
            q = table.quantile(alpha)
            published = REFERENCE_QUANTILES.get(kind, {}).get(b, np.nan) if alpha == 0.05 else np.nan
            row = {
                "window": kind,
                "b": b,
                "simulated": q,
                "published": published,
                "abs_diff": abs(q - published),
                "reject_rate": table.reject_rate,
                "nonpositive": kb.nonpositive,
                "reps": kb.R,
                "grid": kb.m,
                "seed": kb.master_seed,
            }
            if boot_reps > 0:
                row["boot_se"] = bootstrap_quantile_se(table.sample, 1.0 - alpha / 2.0, boot_reps, kb.master_seed)
            rows.append(row)
            logger.info("%s b=%g: %.4f (published %.3f)", kind, b, q, published)
    return pd.DataFrame(rows)


@dataclass(frozen=True)
class ConsistencyConfig:
    chain: FiniteChain
    f: Tuple[float, ...]
    ns: Tuple[int, ...] = (1_000, 10_000, 100_000)
    deltas: Tuple[float, ...] = (0.6,)
    window: str = "bartlett"
    R: int = 100
    master_seed: int = 0
    n_jobs: int = 1
    decompose: bool = True

    def __post_init__(self):
        if self.R < 1 or not self.ns or not self.deltas:
            raise InvalidParameterError("Need R >= 1 and nonempty n and delta grids.")
        if any(not 0 < d <= 1 for d in self.deltas):
            raise InvalidParameterError("Every delta must lie in (0, 1].")
        if len(self.f) != self.chain.S:
            raise InvalidParameterError(f"f has {len(self.f)} values, chain has {self.chain.S} states.")


def run_consistency(cfg: ConsistencyConfig) -> pd.DataFrame:
    """
    Median |Gamma^2 - sigma^2| over R paths for each (n, delta) with c_n = n^delta, and the
    median magnitudes of the quadratic, R_n and zeta terms of the exact decomposition.
    delta = 1 is the fixed-b regime, where the error does not vanish.
    """
    f = np.asarray(cfg.f, dtype=float)
    sigma2 = exact_sigma2(cfg.chain, f)
    w = WindowFunction(cfg.window)
    rows = []
    for gi, n in enumerate(cfg.ns):
        for di, delta in enumerate(cfg.deltas):
            c_n = float(n) ** delta
            offset = (gi * len(cfg.deltas) + di) * cfg.R

            def one(i: int):
                path = simulate_finite_chain(cfg.chain, n, RngStream(cfg.master_seed, offset + i))
                if cfg.decompose:
                    rep = decomposition_report(path, w, c_n, cfg.chain, f)
                    return rep.gamma_sq, rep.term_quad, rep.term_rn, rep.term_zeta
                est = lag_window_estimate(f[path[1:]], w, c_n)
                return est.gamma_sq, np.nan, np.nan, np.nan

            res = np.array(replicate_map(one, cfg.R, n_jobs=cfg.n_jobs, batch_size=8))
            rows.append(
                {
                    "n": n,
                    "delta": delta,
                    "c_n": c_n,
                    "sigma2": sigma2,
                    "median_abs_error": float(np.median(np.abs(res[:, 0] - sigma2))),
                    "median_abs_quad": float(np.median(np.abs(res[:, 1]))),
                    "median_abs_rn": float(np.median(np.abs(res[:, 2]))),
                    "median_abs_zeta": float(np.median(np.abs(res[:, 3]))),
                    "R": cfg.R,
                    "seed": cfg.master_seed,
                }
            )
            logger.info("n=%d delta=%g: median |Gamma^2 - sigma^2| = %.4g", n, delta, rows[-1]["median_abs_error"])
    return pd.DataFrame(rows)


ORACLE_CHECKS = ("poisson", "bivariate", "decomp", "lemma2", "hoeffding")
# `lemma2` and `hoeffding` both name the U-statistic decomposition check
PATH_CHECKS = ("decomp", "lemma2", "hoeffding")


def run_oracle_check(
    chain: FiniteChain,
    check: str,
    f=None,
    kernel=None,
    n: int = 500,
    R: int = 100,
    window: str = "bartlett",
    delta: float = 0.5,
    master_seed: int = 0,
) -> pd.DataFrame:
    """
    Residual report for one family of exact identities. f defaults to the indicator of state 0
    and the kernel to the product kernel of f.
    """
    if check not in ORACLE_CHECKS:
        raise InvalidParameterError(f"Unknown check {check!r}; use one of {ORACLE_CHECKS}.")
    f = np.eye(chain.S)[0] if f is None else np.asarray(f, dtype=float)
    kernel = np.outer(f, f) if kernel is None else np.asarray(kernel, dtype=float)
    if check == "poisson":
        sol = poisson_solve(chain, f)
        return pd.DataFrame(
            [
                {
                    "poisson_residual": sol.residual(chain),
                    "conditional_mean_residual": conditional_mean_residual(chain, sol),
                    "sigma2": exact_sigma2(chain, f),
                    "mean": sol.mean,
                }
            ]
        )
    if check == "bivariate":
        sol = bivariate_poisson_solve(chain, kernel)
        return pd.DataFrame(
            [
                {
                    "theta": sol.theta,
                    "bivariate_residual": verify_bivariate_poisson(sol, chain),
                    "martingale_residual": verify_martingale_property(sol, chain),
                }
            ]
        )
    rows = []
    w = WindowFunction(window)
    for i in range(R):
        path = simulate_finite_chain(chain, n, RngStream(master_seed, i))
        if check == "decomp":
            rep = decomposition_report(path, w, float(n) ** delta, chain, f)
            rows.append({"replicate": i, **rep.as_dict(), "relative_residual": abs(rep.residual) / rep.scale})
        else:
            terms = hoeffding_terms(path, ustat_weights, kernel, chain)
            rows.append(
                {
                    "replicate": i,
                    "n": n,
                    "u_n": terms.u_n,
                    "zeta_explicit": terms.zeta_explicit,
                    "zeta_implicit": terms.zeta_implicit,
                    "relative_mismatch": terms.mismatch / (1.0 + abs(terms.u_n)),
                }
            )
    return pd.DataFrame(rows)


def run_ustat(
    chain: FiniteChain,
    spec: UStatSpec,
    n: int,
    R: int,
    master_seed: int = 0,
    n_jobs: int = 1,
    remainder: bool = True,
) -> pd.DataFrame:
    """Per-replicate standardized U-statistic, its linear part and |zeta_n| / sigma_n."""

    def one(i: int):
        path = simulate_finite_chain(chain, n, RngStream(master_seed, i))
        stat, norm = clt_normalize(path, chain, spec)
        lin = linear_statistic(path, chain, spec)
        ratio = abs(quadratic_remainder(path, chain, spec)) / np.sqrt(norm.sigma_n_sq) if remainder else np.nan
        return {"replicate": i, "n": n, "standardized": stat, "linear": lin, "zeta_ratio": ratio}

    return pd.DataFrame(replicate_map(one, R, n_jobs=n_jobs, batch_size=16))
