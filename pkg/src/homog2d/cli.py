"""Command line entry point ``homog2d``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .study import (
    ConfigError,
    emit_outputs,
    parse_config,
    prepare_cell,
    run_probe,
    run_solve,
    run_study,
)

log = logging.getLogger("homog2d")

OK, HARD_ERROR, PARTIAL = 0, 1, 2


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _cmd_cell(cfg, args) -> int:
    cell = prepare_cell(cfg, use_cache=not args.no_cache)
    payload = {
        "field": cell.field.name,
        "field_hash": cell.field.descriptor_hash(),
        "m": cfg.m,
        "ahat": cell.ahat.tensor.tolist(),
        "certificate": cell.ahat.coercivity_lower_bound,
        "cell_residual": cell.correctors.residual,
        "flux_residual": cell.flux_residual,
        "flux_residual_uncorrected": cell.flux_residual_uncorrected,
        "from_cache": cell.from_cache,
    }
    _write_json(cfg.output_dir / "cell.json", payload)
    print(f"ahat = {cell.ahat.tensor.reshape(-1).tolist()}  certificate = {cell.ahat.coercivity_lower_bound:.6g}")
    return OK


def _cmd_solve(cfg, args) -> int:
    res = run_solve(cfg, variant=args.variant, use_cache=not args.no_cache)
    _write_json(cfg.output_dir / "solve.json", res)
    print(f"eps={res['epsilon']:.6g} converged={res['converged']} iterations={res['newton_iters']} "
          f"sup_err={res['sup_err']:.3e}")
    return OK if res["converged"] and res["homogenized_converged"] else PARTIAL


def _cmd_study(cfg, args) -> int:
    report = run_study(cfg, variant=args.variant, use_cache=not args.no_cache)
    paths = emit_outputs(report, cfg.output_dir)
    for r in report.records:
        status = "ok" if r.converged else f"FAILED ({r.error})"
        print(f"eps={r.epsilon:.6g} sup_err={r.sup_err:.3e} discrepancy={r.discrepancy:.3e} "
              f"iters={r.newton_iters} {status}")
    fit = report.slopes.get("sup_err")
    print("sup_err slope:", fit if isinstance(fit, str) else f"{fit['slope']:.3f} (residual {fit['residual']:.3f})")
    print("wrote", ", ".join(str(p) for p in paths.values()))
    return PARTIAL if report.failures else OK


def _cmd_probe(cfg, args) -> int:
    rep = run_probe(cfg, seed=args.seed, variant=args.variant, use_cache=not args.no_cache)
    payload = {
        "radius": rep.radius,
        "agree_tol": rep.agree_tol,
        "all_agree": rep.all_agree,
        "label": rep.label,
        "trials": [t.__dict__ for t in rep.trials],
    }
    _write_json(cfg.output_dir / "probe.json", payload)
    print(f"{len(rep.trials)} trials, radius {rep.radius}: {rep.label}")
    return OK if all(t.converged for t in rep.trials) else PARTIAL


COMMANDS = {"cell": _cmd_cell, "solve": _cmd_solve, "study": _cmd_study, "probe": _cmd_probe}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="homog2d", description="Periodic homogenization studies for 2D semilinear problems.")
    sub = p.add_subparsers(dest="command", required=True)
    helps = {
        "cell": "solve the cell problems and report the homogenized tensor",
        "solve": "homogenized solve plus one oscillating solve",
        "study": "full epsilon sweep with rate fits, CSV, report and plot",
        "probe": "local uniqueness probe around the oscillating solution",
    }
    for name, text in helps.items():
        s = sub.add_parser(name, help=text)
        s.add_argument("config", type=Path, help="study configuration file")
        s.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
        s.add_argument("--seed", type=int, help="random seed (overrides study.seed)")
        s.add_argument("--no-cache", action="store_true", help="ignore and do not write the corrector cache")
        s.add_argument("--variant", choices=("smoothed", "direct"), help="expansion used to seed Newton")
        s.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = parse_config(args.config)
        over = {}
        if args.out is not None:
            over["output_dir"] = args.out
        if args.seed is not None:
            over["seed"] = args.seed
        if over:
            cfg = cfg.with_overrides(**over)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"homog2d: {exc}", file=sys.stderr)
        return HARD_ERROR
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"homog2d: error: {exc}", file=sys.stderr)
        return HARD_ERROR


if __name__ == "__main__":
    sys.exit(main())
