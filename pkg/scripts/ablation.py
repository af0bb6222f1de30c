"""Direction-mode and notch ablation on the bundled FLEXSTAGE_LIKE plant.

Runs PID+LP with raw subgradients, PID+LP with QP directions and
PID+LP+notch with QP directions, then prints one table row per case.
"""

import argparse
import csv
import dataclasses
import sys
import time
from pathlib import Path

from bwopt.io import build_run_config, load_config_layers
from bwopt.nsopt import DirectionMode
from bwopt.problem import synthesize

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

CASES = [
    ("PID+LP", "pid_lp.json", DirectionMode.RAW_SUBGRADIENT),
    ("PID+LP", "pid_lp.json", DirectionMode.QP_STEEPEST),
    ("PID+LP+notch", "pid_lp_notch.json", DirectionMode.QP_STEEPEST),
]


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--csv", help="also write the table here")
    args = ap.parse_args()

    rows = []
    for label, cfg, mode in CASES:
        run = build_run_config(*load_config_layers([CONFIGS / cfg]))
        solver = dataclasses.replace(run.solver, direction_mode=mode)
        t0 = time.perf_counter()
        rep = synthesize(run.plant, run.initial, solver, run.grid, run.bounds)
        rows.append({
            "controller": label, "mode": mode.value, "status": rep.status.value,
            "omega_bw_rad_s": f"{rep.omega_bw:.2f}", "omega_bw_hz": f"{rep.omega_bw_hz:.2f}",
            "hinf": f"{rep.hinf:.6f}", "iterations": rep.iterations, "fevals": rep.fevals,
            "seconds": f"{time.perf_counter() - t0:.1f}",
        })
        print(f"done: {label} {mode.value}", file=sys.stderr)

    cols = list(rows[0])
    width = {c: max(len(c), *(len(str(r[c])) for r in rows)) for c in cols}
    print("  ".join(c.ljust(width[c]) for c in cols))
    for r in rows:
        print("  ".join(str(r[c]).ljust(width[c]) for c in cols))
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, cols)
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
