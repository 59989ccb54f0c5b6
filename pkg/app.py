"""
HeatFlow Lab - Command Line
===========================
Main entrypoint for the HeatFlow Lab numerical workbench.

Verbs:
- flow       run the Donaldson heat flow for a scenario
- destab     extract the destabilizing subsheaf from a BlowUp run
- frobenius  build a holomorphic frame from a truncated series problem
- check      run the invariant and inequality suites

Examples:
    python app.py flow --preset split_1_-1
    python app.py destab --run runs/split_1_-1
    python app.py frobenius --problem problems/exp_scalar.json --float
    python app.py check all --threads 4
"""

import argparse
import logging
import sys
from typing import Dict, List, Optional

import settings
from errors import LabError
from scenario import preset_names
from workers import MasterWorker, VerificationWorker

logger = logging.getLogger('HeatFlowLab')


# ============================================================================
# ARGUMENTS
# ============================================================================

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="heatflow-lab",
                                     description="Donaldson heat flow on flat tori")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", metavar="PATH", help="scenario JSON file")
    common.add_argument("--preset", metavar="NAME", help="named preset from data/presets.json")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="overrides bundle.seed")
    common.add_argument("--threads", type=int, default=None, help="worker count (HEATFLOW_THREADS)")
    common.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING ...")

    verbs = parser.add_subparsers(dest="verb", required=True)
    verbs.add_parser("flow", parents=[common], help="run the heat flow")

    destab = verbs.add_parser("destab", parents=[common], help="analyze a BlowUp run")
    destab.add_argument("--run", metavar="DIR", help="prior run directory (otherwise the flow runs first)")

    frob = verbs.add_parser("frobenius", parents=[common], help="solve a series problem")
    frob.add_argument("--problem", metavar="PATH", help="problem JSON file")
    mode = frob.add_mutually_exclusive_group()
    mode.add_argument("--exact", dest="exact", action="store_true", default=None)
    mode.add_argument("--float", dest="exact", action="store_false")

    check = verbs.add_parser("check", parents=[common], help="run check suites")
    check.add_argument("suite", help=f"one of {', '.join(VerificationWorker.suites())}")

    verbs.add_parser("presets", help="list the named presets")
    return parser


# ============================================================================
# OUTPUT
# ============================================================================

def format_table(rows: List[Dict]) -> str:
    """Fixed-width pass/fail table for check results."""
    header = ("suite", "case", "value", "threshold", "result")
    body = [(r["suite"], r["case"], f"{r['value']:.3e}", f"{r['threshold']:.3e}",
             "PASS" if r["passed"] else "FAIL") for r in rows]
    widths = [max(len(str(line[i])) for line in [header] + body) for i in range(len(header))]
    lines = ["  ".join(str(c).ljust(w) for c, w in zip(line, widths)) for line in [header] + body]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


# ============================================================================
# DISPATCH
# ============================================================================

def dispatch(args: argparse.Namespace) -> int:
    if args.verb == "presets":
        print("\n".join(preset_names()))
        return 0

    master = MasterWorker.from_args(args.scenario, args.preset, out_dir=args.out,
                                    seed=args.seed, threads=args.threads)
    if args.verb == "flow":
        result = master.flow()
        print(f"{result['verdict'].value}  t={result['report']['t']:.6g}  "
              f"residual={result['report']['residual']:.3e}  -> {result['run_dir']}")
        return result["exit_status"]

    if args.verb == "destab":
        report = master.destab(args.run)
        mu_f = report["slope_subsheaf"]
        print(f"k={report['k']}  mu(F)={'undefined' if mu_f is None else f'{mu_f:.6g}'}  "
              f"mu(E)={report['slope_bundle']:.6g}  destabilizing={report['destabilizing']}")
        return 0

    if args.verb == "frobenius":
        solution = master.frobenius(args.problem, args.exact)
        print(f"{solution['mode']} degree {solution['degree']}  residuals {solution['residuals']}")
        return 0

    rows = master.check(args.suite)
    print(format_table(rows))
    return 0 if all(r["passed"] for r in rows) else 1


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings.configure_logging(getattr(args, "log_level", None))
    try:
        return dispatch(args)
    except LabError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return 1


if __name__ == "__main__":
    sys.exit(main())
