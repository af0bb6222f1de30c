"""``bwopt`` command line: synthesize, analyze, validate."""

from __future__ import annotations

import argparse
import dataclasses
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from .controller import ControllerParams
from .freq import (
    BandwidthError,
    UnstableClosedLoopError,
    check_stability,
    compute_bandwidth,
    compute_sensitivity_peaks,
    diagnostics_table,
    loop_matrix,
)
from .io import (
    InputError,
    RunConfig,
    build_run_config,
    controller_block,
    deep_merge,
    load_config_layers,
    report_dict,
    write_csv,
    write_history,
    write_json,
)
from .lti import eval_plant_at
from .nsopt import Status
from .problem import synthesize_restarts

EXIT_OK = 0
EXIT_NOT_CONVERGED = 2
EXIT_INPUT = 3

SV_UNITS = "omega rad/s; singular values dimensionless (plant units absorbed by the controller)"


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bwopt", description="Bandwidth-optimal decentralized motion control synthesis")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--plant", help="plant file (JSON, bwopt.plant/1)")
        p.add_argument("--config", action="append", default=[], help="config layer (JSON); repeatable, last wins")
        p.add_argument("--out", default=".", help="output directory")

    syn = sub.add_parser("synthesize", help="optimize the controller parameters")
    common(syn)
    syn.add_argument("--direction-mode", choices=["raw", "qp"], help="subgradient handling")
    syn.add_argument("--smax", type=float, help="bound on ||S||_inf")
    syn.add_argument("--max-iter", type=int, help="iteration budget")
    syn.add_argument("--seed", type=int, help="seed for the experimental restarts")
    syn.add_argument("--restarts", type=int, help="experimental: number of perturbed restarts (default 0)")

    ana = sub.add_parser("analyze", help="frequency-domain analysis of a fixed controller")
    common(ana)

    val = sub.add_parser("validate", help="parse the plant and config files only")
    common(val)
    return ap


def _overrides(args) -> dict:
    solver = {}
    if getattr(args, "direction_mode", None):
        solver["direction_mode"] = args.direction_mode
    if getattr(args, "smax", None) is not None:
        solver["S_max"] = args.smax
    if getattr(args, "max_iter", None) is not None:
        solver["max_iter"] = args.max_iter
    if getattr(args, "seed", None) is not None:
        solver["seed"] = args.seed
    if getattr(args, "restarts", None) is not None:
        solver["restarts"] = args.restarts
    return {"solver": solver} if solver else {}


def _load(args) -> RunConfig:
    merged, origin = load_config_layers(args.config)
    merged = deep_merge(merged, _overrides(args))
    plant = str(Path(args.plant).resolve()) if args.plant else None
    run = build_run_config(merged, origin, plant)
    if run.plant is None:
        raise InputError("no plant given (use --plant or a 'plant' entry in a config file)")
    return run


def _sv_rows(omegas: np.ndarray, mats: np.ndarray):
    sv = np.linalg.svd(mats, compute_uv=False)
    return [[w, *s] for w, s in zip(omegas, sv)]


def _write_loop_files(out: Path, run: RunConfig, params: ControllerParams) -> None:
    omegas = run.grid.omegas
    L = loop_matrix(run.plant, params, omegas)
    S = np.linalg.inv(np.eye(L.shape[-1]) + L)
    n = L.shape[-1]
    header = ["omega"] + [f"sigma_{i + 1}" for i in range(n)]
    write_csv(out / "loopgain.csv", header, _sv_rows(omegas, L), SV_UNITS)
    write_csv(out / "sensitivity.csv", header, _sv_rows(omegas, S), SV_UNITS)


def cmd_synthesize(args) -> int:
    run = _load(args)
    if run.initial is None:
        raise InputError("config has no 'controller' block with the initial controller")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = synthesize_restarts(run.plant, run.initial, run.solver, run.restarts, grid=run.grid, bounds=run.bounds)
    if report.status is Status.INITIAL_UNSTABLE:
        print(f"error: {report.message}", file=sys.stderr)
        return EXIT_INPUT
    write_json(report_dict(report, run.solver, run.plant_path), out / "report.json")
    write_history(report.history, out / "history.csv")
    _write_loop_files(out, run, report.params)
    write_json({"schema": "bwopt.config/1", "controller": controller_block(report.params),
                "grid": dataclasses.asdict(run.grid)}, out / "controller.json")
    print(f"{report.status.value}: omega_bw = {report.omega_bw:.6g} rad/s ({report.omega_bw_hz:.6g} Hz), "
          f"||S||_inf = {report.hinf:.6g}, {report.iterations} iterations, {report.fevals} evaluations")
    return EXIT_OK if report.status is Status.CONVERGED else EXIT_NOT_CONVERGED


def cmd_analyze(args) -> int:
    run = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    omegas = run.grid.omegas
    G = eval_plant_at(run.plant, 1j * omegas)
    n = G.shape[-1]
    mag = np.abs(G)
    off = mag.copy()
    off[:, np.arange(n), np.arange(n)] = 0.0
    rows = [[w, *np.diagonal(m), float(o.max())] for w, m, o in zip(omegas, mag, off)]
    write_csv(out / "plant_response.csv", ["omega"] + [f"abs_G{i + 1}{i + 1}" for i in range(n)] + ["coupling_envelope"],
              rows, "omega rad/s; |G_ii| and max off-diagonal |G_ij| in plant output/input units")
    result = {"schema_version": "bwopt.analysis/1", "n_channels": n}
    params = run.initial
    if params is None:
        # no controller: S is the identity
        result.update({"controller": None, "stable": True, "omega_bw": None, "hinf": 1.0})
    else:
        stab = check_stability(run.plant, params)
        result.update({"controller": controller_block(params), "stable": stab.stable,
                       "spectral_abscissa": stab.abscissa})
        if not stab.stable:
            write_json(result, out / "analysis.json")
            print(f"error: {UnstableClosedLoopError(stab.abscissa)}", file=sys.stderr)
            return EXIT_INPUT
        try:
            bw = compute_bandwidth(run.plant, params, run.grid, run.solver.delta_bw).omega_bw
        except BandwidthError:
            bw = None
        peaks = compute_sensitivity_peaks(run.plant, params, run.grid, run.solver.delta_h, check=False)
        result.update({"omega_bw": {"rad_s": bw, "hz": None if bw is None else bw / (2 * math.pi)},
                       "hinf": peaks.hinf, "peak_frequencies_rad_s": peaks.frequencies.tolist()})
        table = diagnostics_table(run.plant, params, run.grid)
        write_csv(out / "diagnostics.csv",
                  ["omega", "sigma_min_L", "sigma_max_S"] + [f"abs_L{i + 1}{i + 1}" for i in range(n)],
                  table.tolist(), "omega rad/s; singular values and loop magnitudes dimensionless")
        _write_loop_files(out, run, params)
    write_json(result, out / "analysis.json")
    bw = (result["omega_bw"] or {}).get("rad_s")
    bw_txt = f"{bw:.6g} rad/s" if bw is not None else "n/a"
    print(f"omega_bw = {bw_txt}, ||S||_inf = {result['hinf']:.6g}")
    return EXIT_OK


def cmd_validate(args) -> int:
    run = _load(args)
    parts = [f"plant ok ({run.plant.n_channels} channels, {run.plant.base.n_states} modes)"]
    if run.initial is not None:
        parts.append(f"controller ok ({run.initial.structure.n_params} parameters)")
    print("; ".join(parts))
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    handler = {"synthesize": cmd_synthesize, "analyze": cmd_analyze, "validate": cmd_validate}[args.command]
    try:
        return handler(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except UnstableClosedLoopError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
