#!/usr/bin/env python3
"""Run the full fit -> train -> account -> report pipeline on one config.

Equivalent to calling the four CLI subcommands by hand; handy as a smoke
test and as a template for batch experiments.
"""

import argparse
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from dpfedsim.cli import main as cli
from dpfedsim.config import parse_config


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--config", default="configs/quickstart.toml")
    parser.add_argument("--out", default=None, help="override the output directory")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    args = parser.parse_args()

    cfg = parse_config(args.config)
    out = args.out or cfg.out_dir
    common = ["--config", args.config, "--out", out]
    if args.seed is not None:
        common += ["--seed", str(args.seed)]

    if cfg.grid is not None:
        code = cli(["fit"] + common)
        if code:
            return code
    train_args = ["train"] + common
    if cfg.policy.kind == "pacdp":
        train_args += ["--fit", os.path.join(out, "fit.json")]
    code = cli(train_args)
    if code:
        return code
    code = cli(["account", "--ledger", os.path.join(out, "ledger.csv"),
                "--delta", str(cfg.delta), "--out", out])
    if code:
        return code
    code = cli(["report", "--out", out])
    if code:
        return code
    print(f"pipeline done, outputs in {out}/")
    return 0


if __name__ == "__main__":
    sys.exit(main())
