"""Plant files, layered run configs, and report writers.

Plant file (JSON, ``"schema": "bwopt.plant/1"``, SI units)::

    {"schema": "bwopt.plant/1", "units": "SI",
     "modal": {"mass": [...], "damping": [...], "stiffness": [...]},
     "P": [[...]], "Q": [[...]], "T_u": [[...]], "T_y": [[...]], "n_channels": 7}

A plant file may instead hold ``{"schema": ..., "recipe": {"kind": ..., "parameters": {...}}}``.

Run configs are JSON objects with optional ``plant``, ``controller``,
``solver``, ``grid`` and ``bounds`` blocks. Several files are deep-merged in
order, and command-line overrides are applied last.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from .controller import ControllerParams, ControllerStructure, NotchSpec, PidLowpassSpec
from .freq import FrequencyGrid
from .lti import DecoupledPlant, ModalPlant
from .nsopt import DirectionMode, HistoryRecord, SolverConfig
from .problem import NotchBounds, SynthesisReport

__all__ = [
    "PLANT_SCHEMA",
    "CONFIG_SCHEMA",
    "REPORT_SCHEMA",
    "InputError",
    "RunConfig",
    "load_plant",
    "parse_plant",
    "plant_to_dict",
    "save_plant",
    "load_config_layers",
    "deep_merge",
    "build_run_config",
    "controller_block",
    "write_json",
    "write_csv",
    "report_dict",
    "write_history",
]

PLANT_SCHEMA = "bwopt.plant/1"
CONFIG_SCHEMA = "bwopt.config/1"
REPORT_SCHEMA = "bwopt.report/1"


class InputError(ValueError):
    """Malformed input file; the message names the file, field path and line."""


def _line_of(text: str, path: Sequence[str | int]) -> int | None:
    """Best-effort line number of a JSON field path in ``text``."""
    pos = 0
    found = None
    for key in path:
        if isinstance(key, int):
            continue
        m = re.compile(r'"' + re.escape(key) + r'"\s*:').search(text, pos)
        if not m:
            break
        pos = m.end()
        found = text.count("\n", 0, m.start()) + 1
    return found


def _path_str(path: Sequence[str | int]) -> str:
    out = ""
    for key in path:
        out += f"[{key}]" if isinstance(key, int) else (f".{key}" if out else str(key))
    return out or "<root>"


class _Ctx:
    """Carries the source text so errors can point at a line."""

    def __init__(self, source: str, text: str | None):
        self.source = source
        self.text = text

    def error(self, path: Sequence[str | int], msg: str) -> InputError:
        line = _line_of(self.text, path) if self.text else None
        where = f"{self.source}:{line}" if line else self.source
        return InputError(f"{where}: field '{_path_str(path)}': {msg}")


def _read_json(path: str | Path) -> tuple[Any, str]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: cannot read file ({exc.strerror})") from exc
    try:
        return json.loads(text), text
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg}, column {exc.colno})") from exc


def _matrix(ctx: _Ctx, obj: Mapping, key: str, path: list) -> np.ndarray:
    if key not in obj:
        raise ctx.error(path + [key], "missing")
    val = obj[key]
    if not isinstance(val, list) or not val or not all(isinstance(r, list) for r in val):
        raise ctx.error(path + [key], "expected a nonempty list of rows")
    width = len(val[0])
    for i, row in enumerate(val):
        if len(row) != width:
            raise ctx.error(path + [key, i], f"row has {len(row)} entries, expected {width}")
        for j, x in enumerate(row):
            if not isinstance(x, (int, float)) or isinstance(x, bool) or not math.isfinite(x):
                raise ctx.error(path + [key, i, j], f"expected a finite number, got {x!r}")
    return np.array(val, dtype=float)


def _vector(ctx: _Ctx, obj: Mapping, key: str, path: list) -> np.ndarray:
    if key not in obj:
        raise ctx.error(path + [key], "missing")
    val = obj[key]
    if not isinstance(val, list) or not val:
        raise ctx.error(path + [key], "expected a nonempty list of numbers")
    for i, x in enumerate(val):
        if not isinstance(x, (int, float)) or isinstance(x, bool) or not math.isfinite(x):
            raise ctx.error(path + [key, i], f"expected a finite number, got {x!r}")
    return np.array(val, dtype=float)


def parse_plant(data: Any, source: str = "<plant>", text: str | None = None) -> DecoupledPlant:
    ctx = _Ctx(source, text)
    if not isinstance(data, dict):
        raise ctx.error([], "expected a JSON object")
    if data.get("schema") != PLANT_SCHEMA:
        raise ctx.error(["schema"], f"expected {PLANT_SCHEMA!r}, got {data.get('schema')!r}")
    if "units" in data and data["units"] != "SI":
        raise ctx.error(["units"], "only SI units are supported")
    if "recipe" in data:
        from .plants import PlantKind, PlantRecipe, make_plant

        rec = data["recipe"]
        if not isinstance(rec, dict) or "kind" not in rec:
            raise ctx.error(["recipe", "kind"], "missing")
        try:
            kind = PlantKind(rec["kind"])
        except ValueError:
            raise ctx.error(["recipe", "kind"], f"unknown plant kind {rec['kind']!r}") from None
        if kind in (PlantKind.FROM_FILE, PlantKind.TWO_PEAK_DUMMY):
            raise ctx.error(["recipe", "kind"], f"{kind.value} cannot be used as a plant file recipe")
        try:
            return make_plant(PlantRecipe(kind, rec.get("parameters", {})))
        except (ValueError, TypeError, KeyError) as exc:
            raise ctx.error(["recipe", "parameters"], str(exc)) from None
    modal = data.get("modal")
    if not isinstance(modal, dict):
        raise ctx.error(["modal"], "missing or not an object")
    mass = _vector(ctx, modal, "mass", ["modal"])
    damping = _vector(ctx, modal, "damping", ["modal"])
    stiffness = _vector(ctx, modal, "stiffness", ["modal"])
    for key, vec in (("mass", mass), ("damping", damping), ("stiffness", stiffness)):
        if vec.size != mass.size:
            raise ctx.error(["modal", key], f"has {vec.size} entries, expected {mass.size}")
    bad = np.flatnonzero(mass <= 0)
    if bad.size:
        raise ctx.error(["modal", "mass", int(bad[0])], "modal mass must be strictly positive")
    for key, vec in (("damping", damping), ("stiffness", stiffness)):
        bad = np.flatnonzero(vec < 0)
        if bad.size:
            raise ctx.error(["modal", key, int(bad[0])], "must be nonnegative")
    P = _matrix(ctx, data, "P", [])
    Q = _matrix(ctx, data, "Q", [])
    if P.shape[0] != mass.size:
        raise ctx.error(["P"], f"has {P.shape[0]} rows, expected {mass.size} (one per mode)")
    if Q.shape[1] != mass.size:
        raise ctx.error(["Q"], f"has {Q.shape[1]} columns, expected {mass.size} (one per mode)")
    n = data.get("n_channels")
    if not isinstance(n, int) or isinstance(n, bool) or not 1 <= n <= P.shape[1]:
        raise ctx.error(["n_channels"], f"expected an integer in [1, {P.shape[1]}], got {n!r}")
    T_u = _matrix(ctx, data, "T_u", []) if "T_u" in data else np.eye(P.shape[1])
    T_y = _matrix(ctx, data, "T_y", []) if "T_y" in data else np.eye(n, Q.shape[0])
    if T_u.shape != (P.shape[1], P.shape[1]):
        raise ctx.error(["T_u"], f"must be {P.shape[1]}x{P.shape[1]}, got {T_u.shape[0]}x{T_u.shape[1]}")
    if T_y.shape != (n, Q.shape[0]):
        raise ctx.error(["T_y"], f"must be {n}x{Q.shape[0]}, got {T_y.shape[0]}x{T_y.shape[1]}")
    try:
        return DecoupledPlant(ModalPlant(mass, damping, stiffness, P, Q), T_u, T_y, n)
    except ValueError as exc:
        raise ctx.error(["T_u"] if "T_u" in str(exc) else [], str(exc)) from None


def load_plant(path: str | Path) -> DecoupledPlant:
    data, text = _read_json(path)
    return parse_plant(data, str(path), text)


def plant_to_dict(plant: DecoupledPlant) -> dict:
    b = plant.base
    return {
        "schema": PLANT_SCHEMA,
        "units": "SI",
        "modal": {"mass": b.mass.tolist(), "damping": b.damping.tolist(), "stiffness": b.stiffness.tolist()},
        "P": b.P.tolist(),
        "Q": b.Q.tolist(),
        "T_u": plant.T_u.tolist(),
        "T_y": plant.T_y.tolist(),
        "n_channels": plant.n_channels,
    }


def save_plant(plant: DecoupledPlant, path: str | Path) -> None:
    write_json(plant_to_dict(plant), path)


def deep_merge(base: Mapping, override: Mapping) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config_layers(paths: Sequence[str | Path]) -> tuple[dict, dict[str, tuple[str, str]]]:
    """Merge config files in order. Returns the merged dict and, per top-level
    block, the file and text it last came from (for error messages).

    A relative ``plant`` path is resolved against the file that sets it.
    """
    merged: dict = {}
    origin: dict[str, tuple[str, str]] = {}
    for path in paths:
        data, text = _read_json(path)
        ctx = _Ctx(str(path), text)
        if not isinstance(data, dict):
            raise ctx.error([], "expected a JSON object")
        schema = data.get("schema", CONFIG_SCHEMA)
        if schema != CONFIG_SCHEMA:
            raise ctx.error(["schema"], f"expected {CONFIG_SCHEMA!r}, got {schema!r}")
        unknown = set(data) - {"schema", "plant", "controller", "solver", "grid", "bounds"}
        if unknown:
            raise ctx.error([sorted(unknown)[0]], "unknown config block")
        if isinstance(data.get("plant"), str):
            data = dict(data, plant=str((Path(path).parent / data["plant"]).resolve()))
        merged = deep_merge(merged, data)
        for key in data:
            origin[key] = (str(path), text)
    return merged, origin


@dataclass(frozen=True)
class RunConfig:
    plant_path: str | None
    plant: DecoupledPlant | None
    initial: ControllerParams | None
    solver: SolverConfig
    grid: FrequencyGrid
    bounds: NotchBounds
    restarts: int = 0


def _dataclass_from(cls, block: Any, ctx: _Ctx, name: str):
    if block is None:
        return cls()
    if not isinstance(block, dict):
        raise ctx.error([name], "expected an object")
    names = {f.name for f in fields(cls)}
    for key in block:
        if key not in names:
            raise ctx.error([name, key], f"unknown option (known: {', '.join(sorted(names))})")
    try:
        return cls(**block)
    except (TypeError, ValueError) as exc:
        raise ctx.error([name], str(exc)) from None


def _parse_controller(block: Any, plant: DecoupledPlant | None, ctx: _Ctx) -> ControllerParams:
    if not isinstance(block, dict):
        raise ctx.error(["controller"], "expected an object")
    path = ["controller"]
    masses = _vector(ctx, block, "masses", path)
    n = masses.size
    if plant is not None and n != plant.n_channels:
        raise ctx.error(path + ["masses"], f"has {n} entries but the plant has {plant.n_channels} channels")
    per_channel = {}
    for key, default in (("alpha", 3.0), ("z_lp", 0.7)):
        val = block.get(key, default)
        if isinstance(val, list):
            per_channel[key] = _vector(ctx, block, key, path)
            if per_channel[key].size != n:
                raise ctx.error(path + [key], f"has {per_channel[key].size} entries, expected {n}")
        elif isinstance(val, (int, float)) and not isinstance(val, bool):
            per_channel[key] = np.full(n, float(val))
        else:
            raise ctx.error(path + [key], "expected a number or one number per channel")
    try:
        channels = tuple(PidLowpassSpec(float(m), float(a), float(z))
                         for m, a, z in zip(masses, per_channel["alpha"], per_channel["z_lp"]))
    except ValueError as exc:
        raise ctx.error(path, str(exc)) from None
    notches = []
    for i, item in enumerate(block.get("notches", [])):
        if not isinstance(item, dict) or "channel" not in item or "omega_n" not in item:
            raise ctx.error(path + ["notches", i], "expected {\"channel\": int, \"omega_n\": rad/s}")
        try:
            notches.append(NotchSpec(int(item["channel"]), float(item["omega_n"])))
        except (TypeError, ValueError) as exc:
            raise ctx.error(path + ["notches", i], str(exc)) from None
    try:
        structure = ControllerStructure(channels, tuple(notches))
    except ValueError as exc:
        raise ctx.error(path + ["notches"], str(exc)) from None
    omega_c = _vector(ctx, block, "omega_c", path)
    p = len(notches)
    beta = _vector(ctx, block, "beta", path) if p else np.zeros(0)
    zeta = _vector(ctx, block, "zeta", path) if p else np.zeros(0)
    for key, vec, size in (("omega_c", omega_c, n), ("beta", beta, p), ("zeta", zeta, p)):
        if vec.size != size:
            raise ctx.error(path + [key], f"has {vec.size} entries, expected {size}")
    if "scaling" in block:
        scaling = _vector(ctx, block, "scaling", path)
    else:
        scaling = np.concatenate([np.full(n, float(np.min(omega_c))), np.ones(2 * p)])
    try:
        return ControllerParams(structure, omega_c, beta, zeta, scaling)
    except ValueError as exc:
        raise ctx.error(path, str(exc)) from None


def build_run_config(merged: Mapping, origin: Mapping[str, tuple[str, str]] | None = None,
                     plant_override: str | None = None) -> RunConfig:
    origin = origin or {}

    def ctx_for(block: str) -> _Ctx:
        src, text = origin.get(block, ("<config>", None))
        return _Ctx(src, text)

    plant_path = plant_override or merged.get("plant")
    plant = load_plant(plant_path) if plant_path else None
    initial = _parse_controller(merged["controller"], plant, ctx_for("controller")) if "controller" in merged else None
    solver_block = merged.get("solver")
    restarts = 0
    if isinstance(solver_block, dict) and "restarts" in solver_block:
        solver_block = dict(solver_block)
        restarts = solver_block.pop("restarts")
        if not isinstance(restarts, int) or restarts < 0:
            raise ctx_for("solver").error(["solver", "restarts"], "expected a nonnegative integer")
    solver = _dataclass_from(SolverConfig, solver_block, ctx_for("solver"), "solver")
    grid = _dataclass_from(FrequencyGrid, merged.get("grid"), ctx_for("grid"), "grid")
    bounds = _dataclass_from(NotchBounds, merged.get("bounds"), ctx_for("bounds"), "bounds")
    return RunConfig(str(plant_path) if plant_path else None, plant, initial, solver, grid, bounds, restarts)


def _scalar_or_list(values: np.ndarray):
    return float(values[0]) if np.all(values == values[0]) else values.tolist()


def controller_block(params: ControllerParams) -> dict:
    st = params.structure
    return {
        "masses": st.masses.tolist(),
        "alpha": _scalar_or_list(st.alphas),
        "z_lp": _scalar_or_list(st.z_lps),
        "notches": [{"channel": n.channel, "omega_n": n.omega_n} for n in st.notches],
        "omega_c": params.omega_c.tolist(),
        "beta": params.beta.tolist(),
        "zeta": params.zeta.tolist(),
        "scaling": params.scaling.tolist(),
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, DirectionMode):
        return obj.value
    return obj


def write_json(obj: Mapping, path: str | Path) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def write_csv(path: str | Path, header: Sequence[str], rows, units: str) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# units: {units}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def report_dict(report: SynthesisReport, solver: SolverConfig, plant_path: str | None) -> dict:
    p = report.params
    return {
        "schema_version": REPORT_SCHEMA,
        "status": report.status.value,
        "message": report.message,
        "plant": Path(plant_path).name if plant_path else None,
        "theta_c": {"omega_c_rad_s": p.omega_c.tolist(), "beta": p.beta.tolist(), "zeta": p.zeta.tolist()},
        "omega_bw": {"rad_s": report.omega_bw, "hz": report.omega_bw_hz},
        "hinf": report.hinf,
        "S_max": solver.S_max,
        "iterations": report.iterations,
        "function_evaluations": report.fevals,
        "initial": {"omega_bw_rad_s": report.initial_omega_bw, "hinf": report.initial_hinf},
        "mu_final": report.mu,
        "stationarity": report.stationarity,
        "constraint_form": report.constraint_form,
        "solver": asdict(solver),
    }


def write_history(history: Sequence[HistoryRecord], path: str | Path) -> None:
    header = ["iter", "objective", "violation", "mu", "step", "direction_norm", "fevals", "stationarity"]
    rows = [[h.iteration, h.f, h.v, h.mu, h.step, h.direction_norm, h.fevals, h.stationarity] for h in history]
    write_csv(path, header, rows,
              "objective rad/s (negated bandwidth); violation dimensionless (scaled constraint); "
              "mu, step, direction_norm, stationarity dimensionless (scaled parameters)")
