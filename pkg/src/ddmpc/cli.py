"""Command-line entry points for the experiment pipeline.

Exit codes: 0 success, 2 infeasible, 3 configuration error, 4 solver failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .constants import EstimationError, certify_constants, oracle_constants, SystemConstants
from .harness import (
    ConfigError,
    ExperimentConfig,
    example_config,
    export_log_csv,
    export_log_json,
    generate_data,
    plot_input_svg,
    plot_output_svg,
    reproduce_example,
    run_closed_loop,
)
from .hankel import is_persistently_exciting, save_record
from .mpc import InfeasibleStepError, InfeasibleTighteningError, make_controller, solve_step
from .tightening import compute_coefficients, feasibility_precheck

EXIT_OK = 0
EXIT_INFEASIBLE = 2
EXIT_CONFIG = 3
EXIT_SOLVER = 4


def _load_config(args) -> ExperimentConfig:
    if args.config:
        cfg = ExperimentConfig.load(args.config)
    else:
        cfg = example_config()
    if args.seed is not None:
        cfg = ExperimentConfig.from_dict({**cfg.to_dict(), "online_seed": args.seed})
    if args.constants_source:
        cfg = ExperimentConfig.from_dict(
            {**cfg.to_dict(), "constants_source": args.constants_source})
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _make_record(cfg: ExperimentConfig):
    model = cfg.model()
    n, L = cfg.order, cfg.mpc.horizon
    return model, generate_data(model, cfg.N, cfg.mpc.u_lo, cfg.mpc.u_hi,
                                cfg.data_seed, cfg.noise_bound, n, L + 2 * n)


def cmd_generate_data(args) -> int:
    cfg = _load_config(args)
    _, record = _make_record(cfg)
    out = _out_dir(args)
    save_record(record, out / "data.csv")
    report = is_persistently_exciting(record.u_data(), cfg.mpc.horizon + 2 * cfg.order)
    print(f"wrote {out / 'data.csv'} (N={record.N}, prefix={record.order})")
    print(f"excitation order {report.order}: rank {report.rank}/{report.required}, "
          f"smallest retained sv {report.smallest_retained_sv:.6g}")
    return EXIT_OK


def cmd_check_pe(args) -> int:
    cfg = _load_config(args)
    _, record = _make_record(cfg)
    order = cfg.mpc.horizon + 2 * cfg.order
    report = is_persistently_exciting(record.u_data(), order)
    payload = {
        "order": report.order, "rank": report.rank, "required": report.required,
        "is_pe": report.is_pe, "smallest_retained_sv": report.smallest_retained_sv,
    }
    print(json.dumps(payload, indent=2))
    return EXIT_OK if report.is_pe else EXIT_INFEASIBLE


def _constants_for(cfg: ExperimentConfig, model, record):
    n, L = cfg.order, cfg.mpc.horizon
    if cfg.constants_source == "oracle":
        return oracle_constants(model, record, L, cfg.mpc.u_lo, cfg.mpc.u_hi, cfg.mpc.y_max)
    if cfg.constants_source == "file":
        return SystemConstants.load(cfg.constants_path)
    return certify_constants(record, n, L, cfg.mpc.u_lo, cfg.mpc.u_hi, cfg.mpc.y_max)


def cmd_estimate_constants(args) -> int:
    cfg = _load_config(args)
    model, record = _make_record(cfg)
    consts = _constants_for(cfg, model, record)
    out = _out_dir(args)
    consts.save(out / "constants.json")
    print(f"gamma = {consts.gamma:.9g}   c_pe = {consts.c_pe:.9g}   "
          f"xi_max = {consts.xi_max:.9g}")
    print("  k    rho_k")
    for i, v in enumerate(consts.rho):
        print(f"{consts.rho_start + i:>3}    {v:.9g}")
    print(f"wrote {out / 'constants.json'}")
    return EXIT_OK


def cmd_compute_tightening(args) -> int:
    cfg = _load_config(args)
    model, record = _make_record(cfg)
    consts = _constants_for(cfg, model, record)
    coeffs = compute_coefficients(consts, cfg.noise_bound, cfg.mpc.horizon, cfg.order)
    out = _out_dir(args)
    if args.format == "csv":
        coeffs.save_csv(out / "coefficients.csv")
        print(f"wrote {out / 'coefficients.csv'}")
    else:
        coeffs.save(out / "coefficients.json")
        print(f"wrote {out / 'coefficients.json'}")
    if np.isfinite(cfg.mpc.y_max):
        pre = feasibility_precheck(coeffs, cfg.mpc.y_max)
        print(f"feasible: {pre.feasible}  flagged steps: {list(pre.flagged)}  "
              f"max admissible noise: {pre.max_admissible_noise:.6g}")
        if not pre.feasible:
            return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_solve_step(args) -> int:
    cfg = _load_config(args)
    model, record = _make_record(cfg)
    consts = _constants_for(cfg, model, record)
    coeffs = compute_coefficients(consts, cfg.noise_bound, cfg.mpc.horizon, cfg.order)
    try:
        state = make_controller(cfg.mpc, record, coeffs)
        sol = solve_step(state)
    except (InfeasibleTighteningError, InfeasibleStepError) as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    payload = {
        "t": 0, "J": sol.objective,
        "norms": {"u1": sol.u_norm1, "alpha1": sol.alpha_norm1,
                  "sigma_inf": sol.sigma_norminf},
        "slack_check_ok": sol.slack_check_ok,
        "active_tightened_rows": list(sol.active_rows),
        "first_inputs": sol.u_plan[cfg.order:2 * cfg.order].ravel().tolist(),
        "solver": {"iterations": sol.report.iterations,
                   "wall_time": sol.report.wall_time},
    }
    print(json.dumps(payload, indent=2))
    return EXIT_OK


def cmd_run_closed_loop(args) -> int:
    cfg = _load_config(args)
    log = run_closed_loop(cfg)
    out = _out_dir(args)
    if args.format == "json":
        export_log_json(log, out / "closed_loop.json")
    else:
        export_log_csv(log, out / "closed_loop.csv")
    export_log_json(log, out / "closed_loop.json")
    plot_input_svg(log, out / "input.svg")
    plot_output_svg(log, out / "output.svg")
    print(json.dumps(log.summary(), indent=2))
    if log.infeasible_events:
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_reproduce_example(args) -> int:
    report = reproduce_example(_out_dir(args))
    for name, entry in report.items():
        if isinstance(entry, dict) and "pass" in entry:
            print(f"{'PASS' if entry['pass'] else 'FAIL'}  {name}")
    print(f"report written to {Path(args.out_dir) / 'report.json'}")
    return EXIT_OK if report["all_pass"] else EXIT_INFEASIBLE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddmpc",
        description="Robust data-driven MPC experiments from a single noisy trajectory",
    )
    parser.add_argument("--config", help="experiment config JSON (defaults to the reference study)")
    parser.add_argument("--seed", type=int, default=None, help="override the online noise seed")
    parser.add_argument("--out-dir", default="out", help="output directory")
    parser.add_argument("--constants-source", choices=["data", "oracle", "file"],
                        default=None, help="where the tightening constants come from")
    parser.add_argument("--format", choices=["csv", "json"], default="csv")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in [
        ("generate-data", cmd_generate_data),
        ("check-pe", cmd_check_pe),
        ("estimate-constants", cmd_estimate_constants),
        ("compute-tightening", cmd_compute_tightening),
        ("solve-step", cmd_solve_step),
        ("run-closed-loop", cmd_run_closed_loop),
        ("reproduce-example", cmd_reproduce_example),
    ]:
        sp = sub.add_parser(name)
        sp.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationError as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except RuntimeError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
