"""Contour data for the two nonsmooth fixtures.

* ``two_axis_bandwidth.csv``: omega_bw over (omega_cx, omega_cy); the ridge
  omega_cx = omega_cy is where two singular values cross unity together.
* ``two_peak_hinf.csv``: ||S||_inf over (beta_1, beta_2); the kink is
  beta_1 = beta_2, where both peaks are active.
"""

import argparse
from pathlib import Path

import numpy as np

from bwopt.controller import ControllerParams
from bwopt.freq import FrequencyGrid, compute_bandwidth, peaks_from_sensitivity
from bwopt.io import write_csv
from bwopt.plants import PlantKind, PlantRecipe, make_plant, two_axis_structure


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="fixtures_out")
    ap.add_argument("--n", type=int, default=41, help="points per axis")
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    plant = make_plant(PlantRecipe(PlantKind.TWO_AXIS))
    grid = FrequencyGrid(1.0, 1e4, 800)
    rows = []
    for wx in np.linspace(50.0, 150.0, args.n):
        for wy in np.linspace(50.0, 150.0, args.n):
            bw = compute_bandwidth(plant, ControllerParams(two_axis_structure(), [wx, wy], [], []), grid)
            rows.append([wx, wy, bw.omega_bw, len(bw.cluster)])
    write_csv(out / "two_axis_bandwidth.csv", ["omega_cx", "omega_cy", "omega_bw", "cluster"], rows, "rad/s")

    tp = make_plant(PlantRecipe(PlantKind.TWO_PEAK_DUMMY))
    grid = FrequencyGrid(0.1, 1e5, 2000)
    rows = []
    for b1 in np.linspace(1.5, 4.5, args.n):
        for b2 in np.linspace(1.5, 4.5, args.n):
            peaks = peaks_from_sensitivity(lambda w: tp.value((b1, b2), w), grid)
            rows.append([b1, b2, peaks.hinf, peaks.r])
    write_csv(out / "two_peak_hinf.csv", ["beta_1", "beta_2", "hinf", "active_peaks"], rows,
              "beta dimensionless; hinf dimensionless")
    print(f"wrote {out}/two_axis_bandwidth.csv and {out}/two_peak_hinf.csv")


if __name__ == "__main__":
    main()
