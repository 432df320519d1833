import argparse
import sys

from errors import LabError, UsageError
from experiment_config import EXPERIMENT_KINDS, load_config
from experiments import run_experiment
from global_settings import LAB_VERSION, SIGNIFICANCE_RULE, THREADS_ENV_VAR
from logging_functions import log_action

DESCRIPTIONS = {
    "spectrum": "eigenvalues, decay envelope, positivity and nodal checks per shape",
    "schatten": "Schatten norms of each shape against the equal-measure ball",
    "rfk": "first eigenvalue of each shape against the equal-measure ball",
    "hks": "second eigenvalue of two separating balls, its limit and comparison shapes",
    "trace-mc": "Monte Carlo cyclic trace against the eigenvalue sum",
    "bll": "Monte Carlo cyclic trace of each shape against its ball",
    "rearrange-check": "Riesz rearrangement inequality on seeded grid functions",
    "converge": "refinement study with Richardson extrapolation",
    "probe-convolution": "numerical check of the Riesz kernel convolution identity",
}


class LabArgumentParser(argparse.ArgumentParser):
    # usage errors exit with code 1, like configuration errors
    def error(self, message):
        raise UsageError(message)


def build_parser():
    parser = LabArgumentParser(
        prog="rieszlab",
        description=f"Numerical lab for Riesz potentials on bounded domains. {SIGNIFICANCE_RULE}.",
        epilog=f"Exit codes: 0 all verdicts passed, 2 a verdict failed, 1 usage or configuration error. "
        f"{THREADS_ENV_VAR} sets the default thread count.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {LAB_VERSION}")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    for kind in EXPERIMENT_KINDS:
        sub = subparsers.add_parser(kind, help=DESCRIPTIONS[kind], description=DESCRIPTIONS[kind])
        sub.add_argument("--config", required=True, help="YAML experiment file")
        sub.add_argument("--out", help="Output directory (overrides the file)")
        sub.add_argument("--seed", type=int, help="Base seed for Monte Carlo and random functions")
        sub.add_argument("--threads", type=int, help="Worker threads for independent jobs and lanes")
        sub.add_argument("--h", help="Single cell size, e.g. 1/64 (replaces the resolution list)")
    return parser


def print_summary(result, written):
    for verdict in result.verdicts:
        print(
            f"{verdict.status:>12}  {verdict.shape:<24} h={verdict.h:<10.6g} {verdict.quantity:<28} "
            f"gap={verdict.gap:.6g} error={verdict.error:.3g}"
        )
    for path in written:
        print(f"wrote {path}")


def main(argv=None):
    """
    Entry point: parse arguments, run the experiment and map the outcome to an exit code.

    Returns:
        int: 0 when every verdict passed, 2 when one failed, 1 on usage or
        configuration errors.
    """
    try:
        args = build_parser().parse_args(argv)
        if args.command is None:
            raise UsageError(f"choose a command: {', '.join(EXPERIMENT_KINDS)}")
        config = load_config(args.config, kind=args.command).with_overrides(
            h=args.h, seed=args.seed, threads=args.threads, output_dir=args.out
        )
        if config.kind == "schatten" and config.exploratory:
            print("EXPLORATORY run: non-integer or sub-threshold p are reported without asserted verdicts")
        result, written = run_experiment(config)
    except LabError as e:
        log_action(f"{type(e).__name__}: {e}", action_type="CONFIG")
        print(f"error: {e}", file=sys.stderr)
        return 1
    print_summary(result, written)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
