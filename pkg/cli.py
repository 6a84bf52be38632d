"""
Command-line entry point: `python cli.py <subcommand> [options]`.

Every subcommand writes CSV to stdout or --out, preceded by a `#` provenance line. Options can
also come from --config, a file of key=value lines whose keys are the long option names with
dashes replaced by underscores; options given on the command line win.
"""

import argparse
import logging
import sys
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from base import InvalidParameterError, RngStream, ScalarSeries, TableMismatch
from chain_oracle import FiniteChain, read_chain_csv
from ci import classical_ci, fixedb_ci
from experiments import (
    ORACLE_CHECKS,
    PATH_CHECKS,
    ConsistencyConfig,
    ExperimentConfig,
    SeriesFactory,
    coverage_frame,
    provenance_line,
    run_consistency,
    run_coverage,
    run_oracle_check,
    run_quantile_check,
    run_ustat,
)
from fixedb import NONPOSITIVE_POLICIES, SCHEMES, CriticalValueTable, KbConfig, critical_value_table
from lagwindow import lag_window_estimate
from samplers import GarchParams, simulate_finite_chain, simulate_garch
from ustat import UStatSpec
from windows import KINDS, BandwidthRule, WindowFunction

logger = logging.getLogger(__name__)

SEEDED = {"critvals", "table1", "quantile-check", "coverage", "consistency", "simulate", "ustat"}


def _float_tuple(text: str):
    return tuple(float(v) for v in str(text).split(",") if v.strip())


def _int_tuple(text: str):
    return tuple(int(float(v)) for v in str(text).split(",") if v.strip())


def read_vector(path: str) -> np.ndarray:
    return pd.read_csv(path, header=None, sep=r"[,\s]+", engine="python").to_numpy(dtype=float).reshape(-1)


def read_matrix(path: str) -> np.ndarray:
    return pd.read_csv(path, header=None).to_numpy(dtype=float)


def read_config(path: str) -> Dict[str, str]:
    values = {}
    with open(path, "r") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise InvalidParameterError(f"{path}:{lineno}: expected key=value, got {raw.strip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def emit(frame: pd.DataFrame, header: str, out: Optional[str]) -> None:
    text = header + "\n" + frame.to_csv(index=False)
    if out:
        with open(out, "w") as fh:
            fh.write(text)
        logger.info("wrote %d rows to %s", len(frame), out)
    else:
        sys.stdout.write(text)


def _window_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--window", default="bartlett", choices=KINDS)
    p.add_argument("--b", type=float, default=1.0)


def _chain_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--chain", help="CSV of the transition matrix, S rows of S probabilities")
    p.add_argument("--f", help="CSV of the observed function, one value per state")


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--out")
    common.add_argument("--config")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("--verbose", action="store_true")
    verbosity.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(description="Lag-window long-run variance estimation and fixed-b inference.")
    sub = parser.add_subparsers(dest="command", required=True)
    subparsers = {}

    p = sub.add_parser("estimate", parents=[common], help="lag-window estimate of a series")
    p.add_argument("series", help="CSV with header `value` or whitespace-separated numbers")
    _window_args(p)
    p.add_argument("--cn-rule", default="delta:0.5", help="delta:<d> or fixedb[:<b>]")
    subparsers["estimate"] = p

    p = sub.add_parser("ci", parents=[common], help="classical or fixed-b interval for the mean")
    p.add_argument("series")
    p.add_argument("--method", default="classical", choices=("classical", "fixedb"))
    p.add_argument("--window", default="bartlett", choices=KINDS)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--b", type=float, default=0.5)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--table", help="critvals CSV to read t from instead of simulating")
    p.add_argument("--reps", type=int, default=50_000)
    p.add_argument("--grid", type=int, default=2000)
    p.add_argument("--fallback-gamma0", action="store_true")
    p.add_argument("--nonpositive", default="absolute", choices=NONPOSITIVE_POLICIES, help="K <= 0 policy when simulating t")
    subparsers["ci"] = p

    p = sub.add_parser("critvals", parents=[common], help="simulated quantiles of B(1)/sqrt(K_b)")
    _window_args(p)
    p.add_argument("--alpha", type=_float_tuple, default="0.05")
    p.add_argument("--reps", type=int, default=200_000)
    p.add_argument("--grid", type=int, default=2000)
    p.add_argument("--scheme", default="euler", choices=SCHEMES)
    p.add_argument("--nonpositive", default="absolute", choices=NONPOSITIVE_POLICIES)
    subparsers["critvals"] = p

    p = sub.add_parser(
        "table1", aliases=["quantile-check"], parents=[common], help="the 3 x 3 critical-value grid next to published values"
    )
    p.add_argument("--reps", type=int, default=200_000)
    p.add_argument("--grid", type=int, default=2000)
    p.add_argument("--boot-reps", type=int, default=0)
    p.add_argument("--nonpositive", default="absolute", choices=NONPOSITIVE_POLICIES)
    subparsers["table1"] = subparsers["quantile-check"] = p

    p = sub.add_parser("coverage", parents=[common], help="coverage study of both interval families")
    p.add_argument("--model", default="garch", choices=("garch", "poissonreg", "finite"))
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--burnin", type=int, default=4_000)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--deltas", type=_float_tuple, default="0.3,0.4,0.5,0.6,0.7")
    p.add_argument("--bs", type=_float_tuple, default="0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")
    p.add_argument("--window", default="bartlett", choices=KINDS)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--kb-reps", type=int, default=50_000)
    p.add_argument("--kb-grid", type=int, default=2000)
    p.add_argument("--kb-nonpositive", default="absolute", choices=NONPOSITIVE_POLICIES)
    p.add_argument("--garch", type=_float_tuple, default="1,0.1,0.7", help="omega,alpha,beta")
    p.add_argument("--ne", type=int, default=3)
    p.add_argument("--np", type=int, default=20)
    p.add_argument("--n-ep", type=float, default=1000.0)
    p.add_argument("--coordinate", type=int, default=1)
    p.add_argument("--reference-mean", type=float)
    _chain_args(p)
    subparsers["coverage"] = p

    p = sub.add_parser("consistency", parents=[common], help="error of Gamma^2 against the exact sigma^2")
    _chain_args(p)
    p.add_argument("--ns", type=_int_tuple, default="1000,10000,100000")
    p.add_argument("--deltas", type=_float_tuple, default="0.6")
    p.add_argument("--window", default="bartlett", choices=KINDS)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--no-decompose", action="store_true")
    subparsers["consistency"] = p

    p = sub.add_parser("oracle", parents=[common], help="residuals of the exact finite-chain identities")
    _chain_args(p)
    p.add_argument("--check", default="poisson", choices=ORACLE_CHECKS)
    p.add_argument("--kernel", help="CSV of a symmetric S x S kernel")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--window", default="bartlett", choices=KINDS)
    p.add_argument("--delta", type=float, default=0.5)
    subparsers["oracle"] = p

    p = sub.add_parser("simulate", parents=[common], help="write a simulated series")
    p.add_argument("--model", default="garch", choices=("garch", "poissonreg", "finite"))
    p.add_argument("--n", type=int, default=20_000)
    p.add_argument("--burnin", type=int, default=0)
    p.add_argument("--garch", type=_float_tuple, default="1,0.1,0.7", help="omega,alpha,beta")
    p.add_argument("--ne", type=int, default=3)
    p.add_argument("--np", type=int, default=20)
    p.add_argument("--n-ep", type=float, default=1000.0)
    p.add_argument("--coordinate", type=int, default=1)
    p.add_argument("--states", action="store_true", help="finite model: write the state path X_0..X_n")
    _chain_args(p)
    subparsers["simulate"] = p

    p = sub.add_parser("ustat", parents=[common], help="standardized U-statistics over replicate paths")
    _chain_args(p)
    p.add_argument("--kernel", default="sum", help="`sum`, `product` (both built from --f) or a CSV kernel")
    p.add_argument("--n", type=int, default=5000)
    p.add_argument("--reps", type=int, default=2000)
    p.add_argument("--no-remainder", action="store_true")
    subparsers["ustat"] = p

    return parser, subparsers


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser, subparsers = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        values = read_config(args.config)
        sp = subparsers[args.command]
        known = {a.dest: a for a in sp._actions}
        unknown = sorted(set(values) - set(known))
        if unknown:
            parser.error(f"unknown keys in {args.config}: {', '.join(unknown)}")
        for key, value in values.items():
            if isinstance(known[key], (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                values[key] = value.lower() in ("1", "true", "yes", "on")
        sp.set_defaults(**values)
        args = parser.parse_args(argv)
    if args.command in SEEDED and args.seed is None:
        parser.error(f"--seed is required for `{args.command}`")
    return args


def configure_logging(args: argparse.Namespace) -> None:
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(
        level=level,
        format="%(asctime)s - %(levelname)s - %(message)s",
        datefmt="%H:%M:%S",
        stream=sys.stderr,
    )
    logging.getLogger("joblib").setLevel(logging.WARNING)


def _chain(args) -> FiniteChain:
    if not args.chain:
        raise InvalidParameterError(f"`{args.command}` needs --chain.")
    return read_chain_csv(args.chain)


def _load_f(args, chain: FiniteChain) -> np.ndarray:
    if args.f:
        f = read_vector(args.f)
        if f.shape != (chain.S,):
            raise InvalidParameterError(f"--f has {f.shape[0]} values, chain has {chain.S} states.")
        return f
    return np.eye(chain.S)[0]


def _garch(values) -> GarchParams:
    if len(values) != 3:
        raise InvalidParameterError("--garch takes omega,alpha,beta.")
    return GarchParams(omega=values[0], alpha=values[1], beta=values[2])


def cmd_estimate(args) -> None:
    s = ScalarSeries.from_csv(args.series)
    rule = BandwidthRule.parse(args.cn_rule, default_b=args.b)
    b = rule.value if rule.variant == "fixedb" else args.b
    w = WindowFunction(args.window, b)
    c_n = rule.c_n(s.n)
    est = lag_window_estimate(s, w, c_n)
    frame = pd.DataFrame([{"gamma_sq": est.gamma_sq, "gamma0": est.gamma0, "c_n": c_n, "n": s.n, "max_lag": est.max_lag}])
    emit(frame, provenance_line(command="estimate", window=args.window, b=b, cn_rule=rule), args.out)


def _table_from_csv(path: str, w: WindowFunction) -> CriticalValueTable:
    frame = pd.read_csv(path, comment="#")
    rows = frame[(frame["window"] == w.kind) & np.isclose(frame["b"], w.b)]
    if rows.empty:
        raise TableMismatch(f"{path} has no rows for {w}.")
    first = rows.iloc[0]
    return CriticalValueTable(
        window=w,
        quantiles={float(a): float(q) for a, q in zip(rows["alpha"], rows["quantile"])},
        R=int(first["reps"]),
        m=int(first["grid"]),
        seed=int(first["seed"]),
        reject_rate=float(first["reject_rate"]),
        nonpositive=str(first["nonpositive"]) if "nonpositive" in rows.columns else "absolute",
    )


def cmd_ci(args) -> None:
    s = ScalarSeries.from_csv(args.series)
    if args.method == "classical":
        ci = classical_ci(s, args.alpha, args.delta, WindowFunction(args.window), fallback_gamma0=args.fallback_gamma0)
    else:
        w = WindowFunction(args.window, args.b)
        if args.table:
            table = _table_from_csv(args.table, w)
        else:
            if args.seed is None:
                raise InvalidParameterError("--seed is required to simulate the critical value (or pass --table).")
            kb = KbConfig(m=args.grid, R=args.reps, master_seed=args.seed, n_jobs=args.jobs, nonpositive=args.nonpositive)
            table = critical_value_table(w, [args.alpha], kb)
        ci = fixedb_ci(s, args.alpha, args.b, w, table)
    emit(pd.DataFrame([ci.as_dict()]), provenance_line(command="ci", method=args.method, window=args.window, alpha=args.alpha, n=s.n), args.out)


def cmd_critvals(args) -> None:
    kb = KbConfig(m=args.grid, R=args.reps, master_seed=args.seed, n_jobs=args.jobs, nonpositive=args.nonpositive)
    table = critical_value_table(WindowFunction(args.window, args.b), args.alpha, kb, scheme=args.scheme)
    emit(table.to_frame(), provenance_line(command="critvals", scheme=args.scheme), args.out)


def cmd_quantile_check(args) -> None:
    kb = KbConfig(m=args.grid, R=args.reps, master_seed=args.seed, n_jobs=args.jobs, nonpositive=args.nonpositive)
    frame = run_quantile_check(kb, boot_reps=args.boot_reps)
    emit(frame, provenance_line(command=args.command, nonpositive=args.nonpositive, reps=args.reps, grid=args.grid, seed=args.seed), args.out)


def _experiment_config(args) -> ExperimentConfig:
    chain = f = None
    if args.model == "finite":
        chain = _chain(args)
        f = tuple(_load_f(args, chain))
    return ExperimentConfig(
        model=args.model,
        n=args.n,
        burnin=args.burnin,
        R=args.reps,
        deltas=args.deltas,
        bs=args.bs,
        window=args.window,
        alpha=args.alpha,
        master_seed=args.seed,
        n_jobs=args.jobs,
        kb_grid=args.kb_grid,
        kb_reps=args.kb_reps,
        kb_nonpositive=args.kb_nonpositive,
        garch=_garch(args.garch),
        chain=chain,
        f=f,
        Ne=args.ne,
        Np=args.np,
        n_ep=args.n_ep,
        coordinate=args.coordinate,
        reference_mean=args.reference_mean,
    )


def cmd_coverage(args) -> None:
    cfg = _experiment_config(args)
    emit(coverage_frame(run_coverage(cfg)), cfg.provenance(), args.out)


def cmd_consistency(args) -> None:
    chain = _chain(args)
    cfg = ConsistencyConfig(
        chain=chain,
        f=tuple(_load_f(args, chain)),
        ns=args.ns,
        deltas=args.deltas,
        window=args.window,
        R=args.reps,
        master_seed=args.seed,
        n_jobs=args.jobs,
        decompose=not args.no_decompose,
    )
    emit(run_consistency(cfg), provenance_line(command="consistency", chain=args.chain, window=args.window, seed=args.seed), args.out)


def cmd_oracle(args) -> None:
    chain = _chain(args)
    if args.check in PATH_CHECKS and args.seed is None:
        raise InvalidParameterError(f"--seed is required for --check {args.check}.")
    kernel = read_matrix(args.kernel) if args.kernel else None
    frame = run_oracle_check(
        chain,
        args.check,
        f=_load_f(args, chain),
        kernel=kernel,
        n=args.n,
        R=args.reps,
        window=args.window,
        delta=args.delta,
        master_seed=args.seed or 0,
    )
    emit(frame, provenance_line(command="oracle", check=args.check, chain=args.chain, n=args.n, seed=args.seed), args.out)


def cmd_simulate(args) -> None:
    header = provenance_line(command="simulate", model=args.model, n=args.n, burnin=args.burnin, seed=args.seed)
    if args.model == "garch":
        path = simulate_garch(_garch(args.garch), args.n, RngStream(args.seed), burnin=args.burnin)
        frame = pd.DataFrame({"value": path.u[1:] ** 2})
    elif args.model == "finite":
        chain = _chain(args)
        states = simulate_finite_chain(chain, args.n + args.burnin, RngStream(args.seed))[args.burnin :]
        frame = pd.DataFrame({"state": states}) if args.states else pd.DataFrame({"value": _load_f(args, chain)[states[1:]]})
    else:
        cfg = ExperimentConfig(
            model="poissonreg",
            n=args.n,
            burnin=args.burnin,
            R=1,
            master_seed=args.seed,
            Ne=args.ne,
            Np=args.np,
            n_ep=args.n_ep,
            coordinate=args.coordinate,
        )
        frame = pd.DataFrame({"value": SeriesFactory(cfg)(0)})
    emit(frame, header, args.out)


def cmd_ustat(args) -> None:
    chain = _chain(args)
    if args.kernel in ("sum", "product"):
        f = _load_f(args, chain)
        spec = UStatSpec.sum_kernel(f) if args.kernel == "sum" else UStatSpec.product_kernel(f)
    else:
        spec = UStatSpec(read_matrix(args.kernel))
    frame = run_ustat(chain, spec, args.n, args.reps, args.seed, args.jobs, remainder=not args.no_remainder)
    emit(frame, provenance_line(command="ustat", chain=args.chain, kernel=args.kernel, n=args.n, reps=args.reps, seed=args.seed), args.out)


COMMANDS = {
    "estimate": cmd_estimate,
    "ci": cmd_ci,
    "critvals": cmd_critvals,
    "table1": cmd_quantile_check,
    "quantile-check": cmd_quantile_check,
    "coverage": cmd_coverage,
    "consistency": cmd_consistency,
    "oracle": cmd_oracle,
    "simulate": cmd_simulate,
    "ustat": cmd_ustat,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args)
    try:
        COMMANDS[args.command](args)
    except (ValueError, ArithmeticError, RuntimeError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
