"""Command line entry point: ``specflow {spectrum,flow,verify,demo}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .expr import ExpressionSyntaxError
from .run import crossing_demo_scenario, run, with_overrides
from .scenario import ScenarioError, load_scenario


def _common(p: argparse.ArgumentParser, config: bool = True) -> None:
    if config:
        p.add_argument("--config", required=True, help="scenario TOML file")
    p.add_argument("--out", help="output directory (overrides output.directory)")
    p.add_argument("--svg", action="store_true", help="also write flow.svg")
    p.add_argument("--grid-size", type=int, help="override geometry.grid_size")
    p.add_argument("--seed", type=int, help="seed for randomized checks")
    p.add_argument("--json", action="store_true", help="print report.json to stdout")
    p.add_argument("--workers", type=int, default=None, help="threads for the parameter sweep")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specflow", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("spectrum", help="weighted spectrum at a single parameter value")
    _common(p)
    p.add_argument("--t", type=float, default=None, help="parameter value (default flow.t_min)")
    _common(sub.add_parser("flow", help="spectra and labelled branches along the sweep"))
    _common(sub.add_parser("verify", help="run every enabled check"))
    p = sub.add_parser("demo", help="built-in scenarios")
    p.add_argument("name", choices=["crossing"])
    _common(p, config=False)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "demo":
            scenario = crossing_demo_scenario()
            mode = "verify"
        else:
            scenario = load_scenario(args.config)
            mode = args.command
        scenario = with_overrides(scenario, args.grid_size, args.seed)
        report = run(scenario, mode=mode, out_dir=args.out, svg=args.svg,
                     t=getattr(args, "t", None), workers=args.workers)
    except (ScenarioError, ExpressionSyntaxError, ValueError) as exc:
        print(f"specflow: error: {exc}", file=sys.stderr)
        return 2
    if args.json:
        print(json.dumps(report.to_dict(), indent=2))
    else:
        for check in report.checks:
            print(check.line())
        print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
