"""Command-line harness: validate | simulate | hedge | backtest | selfcheck.

Exit codes: 0 success, 1 input error, 2 model infeasible, 3 numerical-check
failure. All result files are byte-identical for a fixed (config, seed,
engine version); run manifests additionally record wall time.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
from typing import Dict, List, Optional, Sequence

from . import __version__
from .config import ConfigError, ExperimentConfig, RunManifest
from .hedging import (
    EstimatorMode,
    OptionKind,
    backtest,
    lrm_call_nested,
    lrm_call_t0,
    lrm_put_nested,
    lrm_put_t0,
    lrm_put_regression,
)
from .model import MeasureKind, simulate_batch, uniform_grid, validate_assumptions
from .rng import TAG_BACKTEST, TAG_GRID, TAG_SIMULATE, TAG_TERMINAL, substream
from .selfcheck import INJECT_MPR_CROSS_SIGN, all_passed, run_selfcheck

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_INFEASIBLE = 2
EXIT_CHECK = 3

HEDGE_COLUMNS = ["t", "s", "sigma_sq_left", "xi", "stderr", "method"]
SIMULATE_COLUMNS = ["path", "t", "sigma_sq_left", "sigma_sq_right", "int_var_step", "log_s", "s"]


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _render_csv(columns: Sequence[str], rows: List[Dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    return buf.getvalue()


def _render_json(rows) -> str:
    return json.dumps(rows, sort_keys=True, indent=2) + "\n"


def _emit(text: str, path: Optional[str]) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _load_config(path: Optional[str]) -> ExperimentConfig:
    if path is None:
        raise ConfigError("config: --config PATH is required")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from None
    return ExperimentConfig.from_json(text)


def _resolved_config(args) -> ExperimentConfig:
    cfg = _load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "out", None) is not None or getattr(args, "format", None) is not None:
        from .config import OutputSettings

        cfg = ExperimentConfig(cfg.model, cfg.run, cfg.option, OutputSettings(
            format=args.format or cfg.output.format,
            path=args.out if args.out is not None else cfg.output.path))
    return cfg


def cmd_validate(args) -> int:
    cfg = _resolved_config(args)
    cert = validate_assumptions(cfg.model)
    report = {
        "feasible": cert.feasible,
        "kappa_min": cert.kappa_min,
        "kappa_max": cert.kappa_max if cert.kappa_max != float("inf") else None,
        "kappa_interval": list(cert.kappa_interval) if cert.feasible else None,
        "binding_constraint": cert.binding_constraint.value,
        "boundary": cert.boundary,
    }
    if cfg.output.path is not None:
        _emit(_render_json(report), cfg.output.path)
    status = "feasible" if cert.feasible else "infeasible"
    interval = (f", kappa in ({cert.kappa_min:.6f}, "
                f"{cert.kappa_max:.6f})" if cert.feasible else "")
    print(f"{status}{interval}, binding constraint: {cert.binding_constraint.value}")
    return EXIT_OK if cert.feasible else EXIT_INFEASIBLE


def _require_feasible_cli(cfg: ExperimentConfig) -> None:
    if not validate_assumptions(cfg.model).feasible:
        raise SystemExit(EXIT_INFEASIBLE)


def cmd_hedge(args) -> int:
    cfg = _resolved_config(args)
    if cfg.option is None:
        raise ConfigError("config.option: required for hedge")
    if cfg.run.method not in ("terminal", "nested", "regression"):
        raise ConfigError("config.run.method: hedge supports terminal, nested, regression")
    cert = validate_assumptions(cfg.model)
    if not cert.feasible:
        print("model infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE

    params, run = cfg.model, cfg.run
    is_call = cfg.option.kind is OptionKind.CALL
    strike = cfg.option.strike
    mode = EstimatorMode(run.mode)
    rows: List[Dict] = []

    rng0 = substream(run.seed, TAG_TERMINAL)
    if run.method == "nested":
        est = (lrm_call_nested if is_call else lrm_put_nested)(
            params, strike, 0.0, (params.s0, params.sigma0_sq), run.n_inner, rng0, mode)
    else:
        est = (lrm_call_t0 if is_call else lrm_put_t0)(params, strike, run.n_paths, rng0, mode)
    rows.append({"t": 0.0, "s": params.s0, "sigma_sq_left": params.sigma0_sq,
                 "xi": est.xi, "stderr": est.stderr, "method": est.method.value})

    if run.method == "regression" and run.report_paths > 0:
        grid = uniform_grid(params.maturity, run.grid_steps)
        fit = lrm_put_regression(params, strike, grid, run.n_paths, run.basis_degree,
                                 substream(run.seed, TAG_GRID)).model
        report = simulate_batch(params, MeasureKind.PHYSICAL, grid, run.report_paths,
                                substream(run.seed, TAG_GRID, 1))
        offset = 1.0 if is_call else 0.0
        for p in range(run.report_paths):
            for k in range(grid.size - 1):
                xi_k = fit.xi(k, report.log_s[p:p + 1, k], report.sigma_sq_left[p:p + 1, k])[0]
                rows.append({"t": float(grid[k]), "s": float(report.s[p, k]),
                             "sigma_sq_left": float(report.sigma_sq_left[p, k]),
                             "xi": float(xi_k + offset), "stderr": None,
                             "method": "regression"})

    text = (_render_csv(HEDGE_COLUMNS, rows) if cfg.output.format == "csv"
            else _render_json(rows))
    _emit(text, cfg.output.path)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _resolved_config(args)
    cert = validate_assumptions(cfg.model)
    if not cert.feasible:
        print("model infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE
    params, run = cfg.model, cfg.run
    grid = uniform_grid(params.maturity, run.grid_steps)
    batch = simulate_batch(params, run.measure, grid, run.n_paths,
                           substream(run.seed, TAG_SIMULATE))
    rows = []
    for p in range(run.n_paths):
        for k in range(grid.size):
            rows.append({
                "path": p, "t": float(grid[k]),
                "sigma_sq_left": float(batch.sigma_sq_left[p, k]),
                "sigma_sq_right": float(batch.sigma_sq_right[p, k]),
                "int_var_step": float(batch.int_var_step[p, k - 1]) if k else None,
                "log_s": float(batch.log_s[p, k]),
                "s": float(batch.s[p, k]),
            })
    text = (_render_csv(SIMULATE_COLUMNS, rows) if cfg.output.format == "csv"
            else _render_json(rows))
    _emit(text, cfg.output.path)
    return EXIT_OK


def cmd_backtest(args) -> int:
    cfg = _resolved_config(args)
    if cfg.option is None:
        raise ConfigError("config.option: required for backtest")
    if cfg.run.method not in ("regression", "nested", "oracle"):
        raise ConfigError("config.run.method: backtest supports regression, nested, oracle")
    cert = validate_assumptions(cfg.model)
    if not cert.feasible:
        print("model infeasible", file=sys.stderr)
        return EXIT_INFEASIBLE

    params, run = cfg.model, cfg.run
    grid = uniform_grid(params.maturity, run.grid_steps)
    start = time.perf_counter()
    report = backtest(params, cfg.option, grid, run.n_paths, run.method,
                      substream(run.seed, TAG_BACKTEST), n_train=run.n_train,
                      basis_degree=run.basis_degree, n_inner=run.n_inner,
                      mode=EstimatorMode(run.mode))
    wall = time.perf_counter() - start

    ortho_pass = report.orthogonality_ci[0] <= 0.0 <= report.orthogonality_ci[1]
    drift_pass = report.cost_drift_ci[0] <= 0.0 <= report.cost_drift_ci[1]
    summary = {
        "option_kind": cfg.option.kind.value,
        "strike": cfg.option.strike,
        "hedge_method": run.method,
        "n_paths": run.n_paths,
        "grid_steps": run.grid_steps,
        "hedge_error_mean": report.hedge_error_mean,
        "hedge_error_std": report.hedge_error_std,
        "hedge_error_max_abs": report.hedge_error_max_abs,
        "cost_drift_mean": report.cost_drift_mean,
        "cost_drift_ci_low": report.cost_drift_ci[0],
        "cost_drift_ci_high": report.cost_drift_ci[1],
        "cost_drift_ci_contains_0": drift_pass,
        "orthogonality_corr": report.orthogonality_corr,
        "orthogonality_ci_low": report.orthogonality_ci[0],
        "orthogonality_ci_high": report.orthogonality_ci[1],
        "orthogonality_ci_contains_0": ortho_pass,
    }
    if cfg.output.format == "csv":
        rows = [{"key": k, "value": v} for k, v in summary.items()]
        text = _render_csv(["key", "value"], rows)
    else:
        text = _render_json(summary)
    _emit(text, cfg.output.path)

    if cfg.output.path is not None:
        manifest = RunManifest(config_hash=cfg.config_hash(), engine_version=__version__,
                               seed=run.seed, wall_time_s=wall,
                               checks={"orthogonality_ci_contains_0": ortho_pass,
                                       "cost_drift_ci_contains_0": drift_pass})
        _emit(manifest.to_json(), cfg.output.path + ".manifest.json")
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    config = None
    if args.config is not None:
        config = _load_config(args.config)
        if args.seed is not None:
            config = config.with_seed(args.seed)
    seed = args.seed if args.seed is not None else 0
    results = run_selfcheck(config, seed=seed, inject_bug=args.inject_bug)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status}  {r.name:<{width}}  {r.detail}")
    ok = all_passed(results)
    print(f"{'all checks passed' if ok else 'CHECK FAILURES PRESENT'} "
          f"({sum(r.passed for r in results)}/{len(results)})")
    if args.out is not None:
        payload = [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results]
        _emit(_render_json(payload), args.out)
    return EXIT_OK if ok else EXIT_CHECK


def _add_common(parser: argparse.ArgumentParser, config_required: bool = True) -> None:
    parser.add_argument("--config", metavar="PATH", required=False,
                        help="experiment config (JSON)")
    parser.add_argument("--seed", type=int, metavar="U64", help="override config seed")
    parser.add_argument("--out", metavar="PATH", help="write results to PATH")
    parser.add_argument("--format", choices=("csv", "json"), help="output format")
    parser.add_argument("--threads", type=int, default=1, metavar="N",
                        help="worker hint; results are identical for any value")
    parser.set_defaults(config_required=config_required)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bnshedge",
        description="Simulation and quadratic-hedging engine for OU stochastic volatility models")
    parser.add_argument("--version", action="version", version=f"bnshedge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check model feasibility and the kappa interval")
    _add_common(p)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("simulate", help="export simulated paths")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("hedge", help="estimate hedge ratios")
    _add_common(p)
    p.set_defaults(func=cmd_hedge)

    p = sub.add_parser("backtest", help="run a hedging backtest")
    _add_common(p)
    p.set_defaults(func=cmd_backtest)

    p = sub.add_parser("selfcheck", help="run the diagnostics suite")
    _add_common(p, config_required=False)
    p.add_argument("--inject-bug", choices=(INJECT_MPR_CROSS_SIGN,),
                   help="test-only fault injection; a correct build must then fail")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_INPUT
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:
        raise exc
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
