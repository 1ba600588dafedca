"""Command-line entry point: ``linkbait run|sweep|validate``."""

from __future__ import annotations

import argparse
import json
import sys
from typing import Sequence

from .errors import ConfigInvalid, InvariantViolation, LinkbaitError
from .scenario import AXES, load_config, run, sweep

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INVARIANT = 3


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="linkbait", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one scenario and write its report directory")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--out", required=True)
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_sweep = sub.add_parser("sweep", help="run one scenario per axis value")
    p_sweep.add_argument("--config", required=True)
    p_sweep.add_argument("--axis", required=True, choices=sorted(AXES))
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.add_argument("--out", required=True)

    p_val = sub.add_parser("validate", help="check a config and print the effective parameters")
    p_val.add_argument("--config", required=True)
    return parser


def _report_problems(exc: ConfigInvalid) -> None:
    print("config error:", file=sys.stderr)
    for key, msg in sorted(exc.problems.items()):
        print(f"  {key or '<root>'}: {msg}", file=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.command == "validate":
            print(json.dumps(cfg.to_json(), indent=1, sort_keys=True))
            return EXIT_OK
        if args.command == "run":
            if args.seed is not None:
                cfg.seed = args.seed
            report = run(cfg, args.out)
            cong = report["congestion"]
            print(
                f"seed {report['seed']}: coverage {report['sifting']['coverage']:.3f}, "
                f"target congested: {cong['any_target_congested']}, report in {args.out}"
            )
            return EXIT_OK
        values = [v.strip() for v in args.values.split(",") if v.strip()]
        rows = sweep(cfg, args.axis, values, args.out)
        for value, summary in rows:
            print(value, json.dumps(summary, sort_keys=True))
        return EXIT_OK
    except ConfigInvalid as exc:
        _report_problems(exc)
        return EXIT_CONFIG
    except (ValueError, KeyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        print(f"invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except LinkbaitError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
