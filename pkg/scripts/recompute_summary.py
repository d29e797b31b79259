#!/usr/bin/env python3
"""Recompute benchmark summary statistics from ``cells.csv`` alone.

Uses only the standard library so the check does not share code with the
harness.  Compares against ``summary.csv`` next to it and exits non-zero on
any mismatch.

    python3 scripts/recompute_summary.py results/
"""

import csv
import math
import statistics
import sys
from pathlib import Path

KEYS = ("case", "method", "fad", "k", "lambda", "d", "n_d")


def recompute(cells_path):
    groups = {}
    with open(cells_path, newline="") as fh:
        for row in csv.DictReader(fh):
            groups.setdefault(tuple(row[k] for k in KEYS), []).append(row)
    out = {}
    for key, rows in groups.items():
        good = [r for r in rows if r["status"] == "optimal" and math.isfinite(float(r["mape_vmag"]))]
        m = sorted(float(r["mape_vmag"]) for r in good)
        stats = {"cells": len(rows), "ok": len(good)}
        if len(m) >= 2:
            q25, q50, q75 = statistics.quantiles(m, n=4, method="inclusive")
        elif m:
            q25 = q50 = q75 = m[0]
        if m:
            stats.update(
                mape_median=q50,
                mape_iqr=q75 - q25,
                mape_best=m[0],
                time_median=statistics.median(float(r["wall_time"]) for r in good),
            )
        out[key] = stats
    return out


def main(argv):
    d = Path(argv[1] if len(argv) > 1 else ".")
    mine = recompute(d / "cells.csv")
    bad = 0
    with open(d / "summary.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            key = tuple(row[k] for k in KEYS)
            ref = mine.pop(key, None)
            if ref is None:
                print("extra group in summary:", key)
                bad += 1
                continue
            for name in ("cells", "ok"):
                if int(row[name]) != ref[name]:
                    print(key, name, row[name], "!=", ref[name])
                    bad += 1
            for name in ("mape_median", "mape_iqr", "mape_best", "time_median"):
                want = ref.get(name, float("nan"))
                got = float(row[name]) if row[name] else float("nan")
                same = (math.isnan(want) and math.isnan(got)) or math.isclose(want, got, rel_tol=1e-12, abs_tol=1e-12)
                if not same:
                    print(key, name, got, "!=", want)
                    bad += 1
    for key in mine:
        print("group missing from summary:", key)
        bad += 1
    print("summary OK" if not bad else f"{bad} mismatches")
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
