#!/usr/bin/env python3
"""Median / MAD of diff_r_miss over replications, per scenario, missing rate and method.

    python scripts/imputation_table.py --scenarios 1 2 3 --rates 0.05 0.15 --reps 100 --jobs 4
"""
from __future__ import annotations

import argparse
import csv
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from gipca.imputation import METHODS
from gipca.simulation import ScenarioSpec, run_replications


@dataclass
class TableConfig:
    scenarios: list = field(default_factory=lambda: [1, 2, 3, 4, 5])
    rates: list = field(default_factory=lambda: [0.05, 0.15])
    reps: int = 100
    methods: list = field(default_factory=lambda: ["gipca", "colmean"])
    seed: int = 0
    signal_scale: float = 1.0
    jobs: int = 1
    out: Path = Path("results/imputation_table.csv")


def run(cfg: TableConfig) -> list:
    rows = []
    for scenario in cfg.scenarios:
        for rate in cfg.rates:
            spec = ScenarioSpec(scenario=scenario, missing_rate=rate, seed=cfg.seed, signal_scale=cfg.signal_scale)
            t0 = time.time()
            tab = run_replications(spec, cfg.reps, cfg.methods, n_jobs=cfg.jobs)
            secs = time.time() - t0
            for row in tab.summary():
                row["seconds"] = round(secs, 1)
                row["signal_scale"] = cfg.signal_scale
                rows.append(row)
                print(f"S{scenario} {rate:.0%} {row['method']:>8} src{row['source']} {row['family']:>8}: "
                      f"{row['median']:.3f} ({row['mad']:.3f})  n={row['n_ok']}", flush=True)
    cfg.out.parent.mkdir(parents=True, exist_ok=True)
    with open(cfg.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--scenarios", type=int, nargs="+", default=[1, 2, 3, 4, 5])
    ap.add_argument("--rates", type=float, nargs="+", default=[0.05, 0.15])
    ap.add_argument("--reps", type=int, default=100)
    ap.add_argument("--methods", nargs="+", default=["gipca", "colmean"], choices=METHODS)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--signal-scale", type=float, default=1.0, help="shrink joint singular values (e.g. 0.5, 0.2, 0.1)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results/imputation_table.csv"))
    a = ap.parse_args()
    logging.basicConfig(level=logging.WARNING)
    warnings.simplefilter("ignore", RuntimeWarning)
    run(TableConfig(a.scenarios, a.rates, a.reps, a.methods, a.seed, a.signal_scale, a.jobs, a.out))


if __name__ == "__main__":
    main()
