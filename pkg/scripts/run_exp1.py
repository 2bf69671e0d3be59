#!/usr/bin/env python3
"""Reproduce the first experiment (Table 1 and the worst-case regret of the FTC policy).

    python scripts/run_exp1.py [--config configs/exp1.json] [--out out/exp1]
"""
import sys
from pathlib import Path

from ftc.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--config" not in args:
        args = ["--config", str(ROOT / "configs" / "exp1.json")] + args
    sys.exit(main(["-v", "exp1"] + args))
