"""Command-line entry point ``dynkin-lab``.

Exit status: 0 when every executed stage passes its checks, 2 for
configuration errors, 3 for numerical failures and 4 when a stage ran but
failed its acceptance checks.
"""
import argparse
import sys

from . import __version__
from .errors import ConfigurationError, DynkinLabError, NumericalError
from .pipeline import STAGES, resolve_output_dir, run_pipeline
from .scenario import load

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CHECK = 0, 2, 3, 4

COMMANDS = {
    "solve-vi": "solve",
    "boundary": "boundary",
    "build-w": "build_w",
    "game": "game",
    "control": "control",
    "verify": "verify",
    "appendix": "appendix",
    "run": None,
}

_HELP = {
    "solve-vi": "solve the two-obstacle variational inequality",
    "boundary": "extract free boundaries and check ordering and topology",
    "build-w": "integrate V into W, build h and check the HJB relations",
    "game": "Monte Carlo saddle-point check of the stopping game",
    "control": "simulate reflected paths for the optimal and perturbed bands",
    "verify": "compare simulated control costs with W at the start point",
    "appendix": "one-dimensional scale/speed tables and pairing study",
    "run": "run the full pipeline (or the stages given by --stages)",
}


def _stage_list(text):
    return [s.strip().replace("-", "_") for s in text.split(",") if s.strip()]


def build_parser():
    parser = argparse.ArgumentParser(prog="dynkin-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    for name in COMMANDS:
        p = sub.add_parser(name, help=_HELP[name], description=_HELP[name])
        p.add_argument("--scenario", required=True,
                       help="scenario file, or a built-in name (s1, s2)")
        p.add_argument("--out", default=None,
                       help="output directory (default: $DYNKIN_OUTPUT_ROOT/<name>, the scenario's "
                            "output_dir, or runs/<name>)")
        p.add_argument("--stages", type=_stage_list, default=None,
                       help="comma-separated stages; for run the subset to execute, otherwise "
                            f"extra stages run together with this one ({', '.join(STAGES)})")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override a scenario entry (repeatable)")
        p.add_argument("-q", "--quiet", action="store_true", help="print only errors")
    return parser


def _requested(args):
    own = COMMANDS[args.command]
    extra = args.stages or []
    if own is None:
        return extra or None
    return [own] + [s for s in extra if s != own]


def main(argv=None):
    args = build_parser().parse_args(argv)
    say = (lambda *_: None) if args.quiet else print
    try:
        scenario = load(args.scenario)
        if args.overrides:
            scenario = scenario.with_overrides(args.overrides)
        out = resolve_output_dir(scenario, args.out)
        manifest = run_pipeline(scenario, _requested(args), out, log=say)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DynkinLabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    say(f"artifacts in {out}")
    if not manifest.passed:
        failed = [k for k, v in manifest.stages.items() if v["status"] != "pass"]
        print(f"checks failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
