"""Command line front end: ``vsds run | sweep | optimize-ff | check``.

Exit codes: 0 success, 1 acceptance failure, 2 usage or configuration
error, 3 simulation or optimisation failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .acceptance import AcceptanceSuite
from .config import ConfigError, ScenarioConfig, load_config
from .simulator import CONTROLLERS, build_controller, metrics, run_scenario
from .vsds_core import save_model_json

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_USAGE = 2
EXIT_SIM = 3

CRITERIA = AcceptanceSuite.NUMBERS

logger = logging.getLogger("vsds")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="directory for output files (default: cwd)")
    common.add_argument("--seed", type=int, default=0, help="seed for randomised checks")
    common.add_argument("--dt-override", type=float, default=None, help="replace sim.dt from the config")
    common.add_argument(
        "--disable-tank-decay",
        action="store_true",
        help="debug: drop the -(eta - kappa) s term of the tank dynamics",
    )
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="vsds", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", parents=[common], help="simulate one scenario")
    p.add_argument("--config", required=True)

    p = sub.add_parser("sweep", parents=[common], help="run several controllers on one scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--variants", nargs="*", required=True, choices=CONTROLLERS, metavar="METHOD")

    p = sub.add_parser("optimize-ff", parents=[common], help="solve the feed-forward QP and dump the model")
    p.add_argument("--config", required=True)

    p = sub.add_parser("check", parents=[common], help="run the acceptance suite")
    p.add_argument("--only", type=int, nargs="+", choices=CRITERIA, metavar="N")
    return parser


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config)
    if args.dt_override is not None:
        cfg = cfg.updated(sim={"dt": args.dt_override})
    return cfg


def _out_path(args, configured: str | None, default_name: str) -> Path:
    if configured:
        path = Path(configured)
    else:
        path = Path(args.out_dir) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _model_extra(ctrl) -> dict:
    extra = {"method": ctrl.method}
    if ctrl.ff is not None:
        extra["feedforward"] = ctrl.ff.to_dict()
        sol = ctrl.ff.solution
        if sol is not None:
            extra["qp"] = {
                "status": sol.status,
                "objective": sol.objective,
                "iterations": sol.iterations,
                "stationarity_residual": sol.stationarity_residual,
                "primal_residual": sol.primal_residual,
                "complementarity_residual": sol.complementarity_residual,
            }
    return extra


def cmd_run(args) -> int:
    cfg = _load(args)
    log = run_scenario(cfg, tank_decay=not args.disable_tank_decay)
    ctrl = log.meta["controller"]
    csv_path = _out_path(args, cfg.output.csv_path, f"{cfg.name}.csv")
    log.to_csv(csv_path)
    report = metrics(log).to_dict()
    report.update(name=cfg.name, method=cfg.ff.method, dt=cfg.sim.dt, t_final=cfg.sim.t_final)
    metrics_path = _out_path(args, cfg.output.metrics_path, f"{cfg.name}_metrics.json")
    metrics_path.write_text(json.dumps(report, indent=2))
    if ctrl.model is not None:
        model_path = _out_path(args, cfg.output.model_json_path, f"{cfg.name}_model.json")
        save_model_json(ctrl.model, model_path, _model_extra(ctrl))
    print(f"{cfg.name} [{cfg.ff.method}] final |x|={report['final_position_norm']:.3e} m, "
          f"RMS velocity error={report['rms_velocity_error']:.4f} m/s -> {csv_path}")
    return EXIT_OK


SWEEP_FIELDS = (
    "variant",
    "status",
    "error",
    "rms_velocity_error",
    "max_path_deviation",
    "convergence_time",
    "final_position_norm",
    "max_ext_force",
    "steady_ext_force",
    "tank_final",
    "tank_min",
    "tank_max",
    "max_passivity_violation",
)


def cmd_sweep(args) -> int:
    if not args.variants:
        print("vsds sweep: error: --variants needs at least one method", file=sys.stderr)
        return EXIT_USAGE
    cfg = _load(args)
    rows = []
    for variant in args.variants:
        row = {"variant": variant, "status": "ok", "error": ""}
        try:
            log = run_scenario(cfg.with_method(variant), tank_decay=not args.disable_tank_decay)
            row.update(metrics(log).to_dict())
        except Exception as exc:  # a failing variant must not stop the others
            logger.debug("variant %s failed", variant, exc_info=True)
            row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        rows.append(row)
        print(f"{variant:9s} {row['status']:6s} "
              + (f"rms={row['rms_velocity_error']:.4f} final|x|={row['final_position_norm']:.2e}" if row["status"] == "ok" else row["error"]))
    path = _out_path(args, None, f"{cfg.name}_sweep.csv")
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=SWEEP_FIELDS, restval="")
        writer.writeheader()
        writer.writerows(rows)
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_SIM


def cmd_optimize_ff(args) -> int:
    cfg = _load(args).with_method("qp")
    ctrl = build_controller(cfg, tank_decay=not args.disable_tank_decay)
    path = _out_path(args, cfg.output.model_json_path, f"{cfg.name}_model.json")
    save_model_json(ctrl.model, path, _model_extra(ctrl))
    sol = ctrl.ff.solution
    print(f"QP {sol.status} after {sol.iterations} iterations, objective {sol.objective:.6g}, "
          f"{len(ctrl.ff.gammas)} Gamma vectors -> {path}")
    return EXIT_OK if sol.status == "optimal" else EXIT_SIM


def cmd_check(args) -> int:
    suite = AcceptanceSuite(
        tank_decay=not args.disable_tank_decay,
        dt=args.dt_override or 1e-3,
        seed=args.seed,
        verbose=args.verbose,
    )
    results = suite.run_all(only=args.only, echo=print)
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" + (f"; failed: {failed}" if failed else ""))
    return EXIT_OK if not failed else EXIT_CHECK_FAILED


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "optimize-ff": cmd_optimize_ff, "check": cmd_check}


def main(argv=None) -> int:
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    np.random.seed(args.seed)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        for loc, msg in exc.errors:
            print(f"config error: {loc}: {msg}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:
        logger.debug("run failed", exc_info=True)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SIM


if __name__ == "__main__":
    sys.exit(main())
