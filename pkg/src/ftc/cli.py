"""Command-line entry point: ``ftc {synth,exp1,exp2,props}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from ftc import experiments, properties
from ftc.errors import FtcError

log = logging.getLogger("ftc")

DEFAULTS = {
    "synth": experiments.exp1_config,
    "exp1": experiments.exp1_config,
    "exp2": experiments.exp2_config,
    "props": experiments.exp1_config,
}


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _criteria(text: str) -> list:
    return [c.strip() for c in text.split(",") if c.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ftc", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "synth": "synthesize controllers and write one JSON artifact per criterion",
        "exp1": "safe H2 / H-infinity / FTC comparison (table1.csv)",
        "exp2": "FTC vs regret under a preview-limited benchmark (delta_E.csv, delta_J.csv)",
        "props": "randomized invariant suite; nonzero exit on any failure",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", type=Path, help="JSON experiment config")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument("--seed", type=_u64, help="base seed (overrides the config)")
        p.add_argument("--criteria", type=_criteria, help="comma-separated subset of ftc,regret,h2,hinf")
        if name == "props":
            p.add_argument("--tol", type=float, help="override every invariant tolerance")
            p.add_argument("--trials", type=int, default=20)
    return parser


def load_config(args) -> experiments.ExperimentConfig:
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.criteria is not None:
        overrides["criteria"] = args.criteria
    if args.out is not None:
        overrides["out_dir"] = str(args.out)
    if args.config is None:
        return DEFAULTS[args.command](**overrides)
    path = Path(args.config)
    d = json.loads(path.read_text())
    d.update(overrides)
    return experiments.ExperimentConfig.from_dict(d, base_dir=path.parent)


def _props(cfg, args) -> tuple[dict, bool]:
    tol = args.tol if args.tol is not None else cfg.property_tolerance
    checks = properties.run_suite(seed=cfg.seed, tolerance=tol, trials=args.trials)
    report = {k: c.to_dict() for k, c in checks.items()}
    ok = all(c.passed for c in checks.values())
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "props_report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    for k, c in checks.items():
        print(f"{'PASS' if c.passed else 'FAIL'} {k}: {c.value:.3e} (tol {c.tol:.1e})")
    return report, ok


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = load_config(args)
        if args.command == "props":
            _, ok = _props(cfg, args)
            return 0 if ok else 1
        if args.command == "synth":
            summary = experiments.run_synthesis(cfg)
            print(json.dumps(summary, indent=2, sort_keys=True))
            return 0
        run = experiments.run_experiment_one if args.command == "exp1" else experiments.run_experiment_two
        report = run(cfg)
    except (FtcError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    summary = {k: v for k, v in report.items() if k != "table"}
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
