#!/usr/bin/env python3
"""Print a table1.csv next to the reference relative-cost table.

    python scripts/compare_table1.py out/exp1/table1.csv
"""
import csv
import sys
from collections import defaultdict

# reference percentages (0 = best policy of the row, None = reported as "> +100%")
REFERENCE = {
    "gauss01": {"h2": 0.0, "hinf": None, "ftc": 52.33},
    "uniform[0.5,1]": {"h2": 37.79, "hinf": 10.86, "ftc": 0.0},
    "uniform[0,1]": {"h2": 5.90, "hinf": 20.48, "ftc": 0.0},
    "constant_one": {"h2": 46.00, "hinf": 8.31, "ftc": 0.0},
    "sin": {"h2": 38.36, "hinf": 12.29, "ftc": 0.0},
    "sawtooth": {"h2": 29.74, "hinf": 16.41, "ftc": 0.0},
    "step": {"h2": 15.66, "hinf": 0.0, "ftc": 0.51},
    "stairs": {"h2": 18.98, "hinf": 3.60, "ftc": 0.0},
    "worst": {"h2": None, "hinf": 0.0, "ftc": 26.08},
}


def fmt(v):
    return ">+100%" if v is None else f"{v:+.2f}%"


def main(path):
    got = defaultdict(dict)
    for row in csv.DictReader(open(path)):
        got[row["profile"]][row["policy"]] = float(row["pct_vs_best"])
    print(f"{'profile':16s} {'policy':6s} {'ours':>10s} {'reference':>10s}")
    for prof, pub in REFERENCE.items():
        for pol, ref in pub.items():
            ours = got.get(prof, {}).get(pol)
            print(f"{prof:16s} {pol:6s} {fmt(ours) if ours is not None else 'n/a':>10s} {fmt(ref):>10s}")
        if prof in got:
            best = min(got[prof], key=got[prof].get)
            want = min((p for p in pub if pub[p] is not None), key=lambda p: pub[p])
            print(f"{'':16s} best: ours={best} reference={want} {'ok' if best == want else 'MISMATCH'}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "out/exp1/table1.csv")
