"""Command line front end: ``fepkit <kind> --config <file> [options]``.

Exit codes: 0 on success, 2 on configuration/validation errors, 3 when
``--assert`` is given and the experiment's acceptance condition failed.
"""

from __future__ import annotations

import argparse
import json
import sys

from .harness import KINDS, ConfigError, ExperimentConfig, run


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fepkit",
        description="Run one configured experiment and write its outputs.",
    )
    parser.add_argument("kind", choices=sorted(KINDS))
    parser.add_argument("--config", required=True, help="JSON experiment description")
    parser.add_argument("--seed", type=int, help="override the config's master seed")
    parser.add_argument("--out", help="override the config's output directory")
    parser.add_argument(
        "--assert", dest="assert_", action="store_true",
        help="exit 3 when the experiment's acceptance condition fails",
    )
    args = parser.parse_args(argv)

    try:
        with open(args.config) as fh:
            doc = json.load(fh)
        cfg = ExperimentConfig.from_json(doc, kind=args.kind)
        if args.seed is not None:
            cfg.seed = args.seed
        cfg.validate()
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    summary = run(cfg, out_dir=args.out)
    passed = summary.get("passed", True)
    status = "PASS" if passed else "FAIL"
    print(f"{status} {cfg.kind}/{cfg.task} -> {summary['output_dir']} "
          f"({summary['wall_seconds']:.2f} s)")
    for key, val in summary.items():
        if key not in ("passed", "wall_seconds", "output_dir"):
            print(f"  {key}: {val}")
    if args.assert_ and not passed:
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
