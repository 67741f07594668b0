"""Command line entry point: ``splitpon run|validate|grants-log``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, ScenarioConfig, parse_config, parse_override
from .topology import Mode

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_AUDIT = 2
EXIT_NOT_CONVERGED = 3


def load(args) -> ScenarioConfig:
    cfg = parse_config(args.config) if args.config else ScenarioConfig()
    overrides = dict(parse_override(item) for item in args.set or [])
    return cfg.with_overrides(**overrides) if overrides else cfg


def cmd_run(args) -> int:
    cfg = load(args)
    out = Path(args.out)
    which = ["fig3", "fig4", "tab1"] if args.experiment == "all" else [args.experiment]
    status = EXIT_OK
    for name in which:
        if name == "fig3":
            cells = ex.run_fig3(cfg, jobs=args.jobs)
            ex.write_text(out / "fig3.csv", ex.fig3_csv(cfg, cells))
            for c in cells:
                print(f"fig3 rate={c.rate_bps / 1e6:g}Mbps sigma={c.sigma * 1e3:g}ms "
                      f"PER={c.per:.3e}")
        elif name == "fig4":
            runs = ex.run_fig4(cfg, jobs=args.jobs)
            ex.write_text(out / "fig4.csv", ex.fig4_csv(cfg, runs))
            ex.write_text(out / "fig4_summary.csv", ex.fig4_summary_csv(cfg, runs))
            for r in runs:
                t95 = "not converged" if r.t95 is None else f"{r.t95 * 1e3:.1f} ms"
                print(f"fig4 {r.mode.value} {r.rate_bps / 1e6:g}Mbps t95={t95} "
                      f"steady={r.steady_bps / 1e6:.2f}Mbps")
                if r.t95 is None:
                    status = EXIT_NOT_CONVERGED
        else:
            rows = ex.run_tab1(cfg, jobs=args.jobs)
            ex.write_text(out / "tab1.csv", ex.tab1_csv(cfg, rows))
            print(ex.tab1_table(rows))
    return status


def cmd_validate(args) -> int:
    cfg = parse_config(args.config)
    print(f"ok: {args.config} (config hash {cfg.hash()})")
    return EXIT_OK


def cmd_grants(args) -> int:
    cfg = load(args)
    run = ex.run_fig4_run(cfg, Mode.PON, args.rate * 1e6, log_grants=True)
    ex.write_text(Path(args.out), ex.grants_csv(cfg, run))
    print(f"wrote {len(run.grant_log or [])} grant rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="splitpon",
                                description="RAN split over XGS-PON simulator")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add_config(sp):
        sp.add_argument("--config", help="scenario file (defaults built in)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key, e.g. --set deadline=1ms")

    run = sub.add_parser("run", help="run experiments and write CSV")
    run.add_argument("experiment", choices=["fig3", "fig4", "tab1", "all"])
    add_config(run)
    run.add_argument("--out", default="results", help="output directory")
    run.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    run.set_defaults(func=cmd_run)

    val = sub.add_parser("validate", help="check a scenario file")
    val.add_argument("config")
    val.set_defaults(func=cmd_validate)

    gl = sub.add_parser("grants-log", help="export the per-cycle DBA trace of one uplink run")
    add_config(gl)
    gl.add_argument("--rate", type=float, default=150.0, help="mobile rate in Mb/s")
    gl.add_argument("--out", default="results/grants.csv")
    gl.set_defaults(func=cmd_grants)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error:\n{exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ex.AuditFailure as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_AUDIT


if __name__ == "__main__":
    sys.exit(main())
