#!/usr/bin/env python3
"""Reproduce the second experiment (preview-limited benchmark, FTC vs regret).

    python scripts/run_exp2.py [--config configs/exp2.json] [--out out/exp2]
"""
import sys
from pathlib import Path

from ftc.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    args = sys.argv[1:]
    if "--config" not in args:
        args = ["--config", str(ROOT / "configs" / "exp2.json")] + args
    sys.exit(main(["-v", "exp2"] + args))
