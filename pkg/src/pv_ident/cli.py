"""Command-line entry point: ``pv-ident run | calibrate | modes``."""
from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import replace

from .config import load_config
from .errors import PVIdentError
from .harness import (
    CONVERGED,
    MODE_TRACKING,
    SCENARIOS,
    STC_COLD_START,
    calibrate_gain_multiplier,
    catalog_table,
    modes_config,
    run_scenario,
    stc_config,
    write_outputs,
)

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


def _fmt(v, unit="ms"):
    return "-" if v is None else f"{v * 1e3:.3f} {unit}"


def cmd_run(args) -> int:
    if args.config:
        cfg = load_config(args.config, args.scenario)
    elif args.scenario == MODE_TRACKING:
        cfg = modes_config()
    else:
        cfg = stc_config(scenario=args.scenario)
    if args.decimation is not None:
        cfg = replace(cfg, decimation=args.decimation)
    t0 = time.perf_counter()
    result = run_scenario(cfg, dump_regressor=args.dump_regressor)
    elapsed = time.perf_counter() - t0
    paths = write_outputs(result, args.out, cfg.decimation, args.dump_regressor, args.dump_drem)
    rep = result.report
    print(f"scenario {rep.scenario}: {rep.status} in {elapsed:.1f} s wall")
    for w in rep.windows:
        line = f"  {w.mode:<6} [{w.start * 1e3:7.3f}, {w.end * 1e3:7.3f}] ms  converged at {_fmt(w.convergence_time)}"
        if w.jump is not None:
            line += f"  jump {w.jump:.6g}  decay {_fmt(w.decay_time)}"
        print(line)
    print(f"  excitation {rep.excitation_verdict} (integral {rep.excitation_integral:.6g})")
    for name, p in paths.items():
        print(f"  wrote {name}: {p}")
    return EXIT_OK if rep.status == CONVERGED else EXIT_NOT_CONVERGED


def cmd_calibrate(args) -> int:
    base = load_config(args.config, STC_COLD_START) if args.config else None
    m = calibrate_gain_multiplier(args.target_ms, base)
    print(f"gain_multiplier = {m!r}")
    return EXIT_OK


def cmd_modes(args) -> int:
    print(catalog_table())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pv-ident", description="PV single-diode parameter identification runs")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="simulate a scenario and write estimates")
    r.add_argument("--scenario", choices=SCENARIOS, default=STC_COLD_START)
    r.add_argument("--config", help="INI file with [plant], [filters], [drem], [scenario]")
    r.add_argument("--out", required=True, help="output directory")
    r.add_argument("--decimation", type=int, help="keep every N-th CSV row")
    r.add_argument("--dump-regressor", action="store_true", help="also write regressor.csv")
    r.add_argument("--dump-drem", action="store_true", help="also write drem.csv")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("calibrate", help="find the gain multiplier for a target convergence time")
    c.add_argument("--target-ms", type=float, default=15.0)
    c.add_argument("--config", help="base configuration (stc scenario)")
    c.set_defaults(func=cmd_calibrate)

    m = sub.add_parser("modes", help="print the operating-mode catalog")
    m.set_defaults(func=cmd_modes)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PVIdentError, ValueError, OSError) as exc:
        print(f"pv-ident: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
