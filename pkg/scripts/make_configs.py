"""Regenerate the bundled FLEXSTAGE_LIKE plant file and study configs in configs/."""

import argparse
from pathlib import Path

from bwopt.io import CONFIG_SCHEMA, controller_block, save_plant, write_json
from bwopt.plants import PlantKind, PlantRecipe, flexstage_initial_params, flexstage_structure, make_plant

# mu0 ~ 1/omega_c0 balances the bandwidth term against the scaled violation
STUDIES = {
    "pid_lp": dict(notches=False, c_v=0.7, c_mu=0.3),
    "pid_lp_notch": dict(notches=True, c_v=0.8, c_mu=0.2),
}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "configs"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_plant(make_plant(PlantRecipe(PlantKind.FLEXSTAGE_LIKE)), out / "flexstage_plant.json")
    for name, study in STUDIES.items():
        params = flexstage_initial_params(flexstage_structure(notches=study["notches"]))
        solver = {"S_max": 2.0, "c_v": study["c_v"], "c_mu": study["c_mu"], "mu0": 0.00265, "delta_bw": 0.02,
                  "delta_h": 0.005, "max_iter": 200, "direction_mode": "QP_STEEPEST"}
        write_json({"schema": CONFIG_SCHEMA, "plant": "flexstage_plant.json", "controller": controller_block(params),
                    "solver": solver}, out / f"{name}.json")
        print(f"wrote {out / name}.json")


if __name__ == "__main__":
    main()
