"""Bandwidth maximization as a nonsmooth constrained problem, plus a toy problem.

``BandwidthProblem`` works in scaled coordinates ``x = theta / scaling`` and
returns ``f = -omega_bw`` and constraints

    c_0 = ||S||_inf / S_max - 1
    beta_min - beta_j, beta_j - 1, zeta_min - zeta_j, zeta_j - zeta_max

all of which must be nonpositive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .controller import ControllerParams, ControllerStructure
from .freq import (
    BandwidthError,
    FrequencyGrid,
    check_stability,
    compute_bandwidth,
    compute_sensitivity_peaks,
)
from .lti import DecoupledPlant
from .nsopt import Evaluation, HistoryRecord, SolverConfig, Status, solve
from .subgrad import TangentialCrossingError, constraint_subgradients, objective_subgradients

__all__ = [
    "NotchBounds",
    "BandwidthProblem",
    "ToyMaxProblem",
    "SynthesisReport",
    "synthesize",
    "synthesize_restarts",
]


@dataclass(frozen=True)
class NotchBounds:
    beta_min: float = 0.01
    beta_max: float = 1.0
    zeta_min: float = 0.005
    zeta_max: float = 1.0

    def __post_init__(self):
        if not 0 < self.beta_min < self.beta_max:
            raise ValueError("need 0 < beta_min < beta_max")
        if not 0 < self.zeta_min < self.zeta_max:
            raise ValueError("need 0 < zeta_min < zeta_max")


class BandwidthProblem:
    """``min -omega_bw`` subject to the robustness bound and notch boxes."""

    def __init__(
        self,
        plant: DecoupledPlant,
        structure: ControllerStructure,
        scaling: np.ndarray,
        config: SolverConfig,
        grid: FrequencyGrid | None = None,
        bounds: NotchBounds | None = None,
    ):
        if plant.n_channels != structure.n_channels:
            raise ValueError(
                f"plant has {plant.n_channels} channels, controller structure has {structure.n_channels}"
            )
        self.plant = plant
        self.structure = structure
        self.scaling = np.asarray(scaling, dtype=float)
        self.config = config
        self.grid = grid or FrequencyGrid()
        self.bounds = bounds or NotchBounds()
        self.n_vars = structure.n_params
        self.n_constraints = 1 + 4 * structure.n_notches

    def params(self, x) -> ControllerParams:
        return ControllerParams.from_theta(self.structure, np.asarray(x) * self.scaling, self.scaling)

    def _box(self, theta: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        n, p, m = self.structure.n_channels, self.structure.n_notches, self.n_vars
        b = self.bounds
        c, grads = [], []
        for j in range(p):
            for idx, lo, hi in ((n + j, b.beta_min, b.beta_max), (n + p + j, b.zeta_min, b.zeta_max)):
                e = np.zeros(m)
                e[idx] = self.scaling[idx]
                c += [lo - theta[idx], theta[idx] - hi]
                grads += [-e[None, :], e[None, :]]
        return np.array(c), grads

    def evaluate(self, x) -> Evaluation:
        x = np.asarray(x, dtype=float)
        try:
            params = self.params(x)
        except ValueError as exc:
            # a step left the domain of the controller parameterization
            return Evaluation.unstable(self.n_vars, self.n_constraints, reason=str(exc))
        stab = check_stability(self.plant, params)
        if not stab.stable:
            return Evaluation.unstable(self.n_vars, self.n_constraints, abscissa=stab.abscissa)
        try:
            bw = compute_bandwidth(self.plant, params, self.grid, self.config.delta_bw)
            g = objective_subgradients(self.plant, params, bw)
        except (BandwidthError, TangentialCrossingError) as exc:
            return Evaluation.unstable(self.n_vars, self.n_constraints, reason=str(exc))
        peaks = compute_sensitivity_peaks(self.plant, params, self.grid, self.config.delta_h, check=False)
        h = constraint_subgradients(self.plant, params, peaks)
        S_max = self.config.S_max
        box_c, box_g = self._box(params.theta)
        c = np.concatenate([[peaks.hinf / S_max - 1.0], box_c])
        c_sets = (h.gradients * self.scaling / S_max, *box_g)
        info = {"omega_bw": bw.omega_bw, "hinf": peaks.hinf, "abscissa": stab.abscissa,
                "cluster": len(bw.cluster), "peaks": peaks.r}
        return Evaluation(-bw.omega_bw, -g.gradients * self.scaling, c, c_sets, True, info)


class ToyMaxProblem:
    """``min max(x1, x2)`` subject to ``x1 + x2 >= 1``; optimum 0.5 at (0.5, 0.5)."""

    n_vars = 2
    n_constraints = 1

    def __init__(self, tie_tol: float = 1e-12):
        self.tie_tol = tie_tol

    def evaluate(self, x) -> Evaluation:
        x = np.asarray(x, dtype=float)
        f = float(max(x[0], x[1]))
        rows = [np.eye(2)[i] for i in range(2) if x[i] >= f - self.tie_tol * max(1.0, abs(f))]
        # put the strictly larger coordinate first so RAW mode is deterministic
        rows.sort(key=lambda r: -float(r @ x))
        c = np.array([1.0 - x[0] - x[1]])
        return Evaluation(f, np.array(rows), c, (np.array([[-1.0, -1.0]]),))


@dataclass(frozen=True)
class SynthesisReport:
    status: Status
    params: ControllerParams
    omega_bw: float
    hinf: float
    iterations: int
    fevals: int
    history: tuple[HistoryRecord, ...]
    initial_omega_bw: float
    initial_hinf: float
    mu: float
    stationarity: float
    message: str = ""
    constraint_form: str = "scaled: ||S||_inf / S_max - 1 <= 0"
    extra: dict = field(default_factory=dict)

    @property
    def omega_bw_hz(self) -> float:
        return self.omega_bw / (2.0 * math.pi)

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED


def synthesize(
    plant: DecoupledPlant,
    initial: ControllerParams,
    config: SolverConfig | None = None,
    grid: FrequencyGrid | None = None,
    bounds: NotchBounds | None = None,
) -> SynthesisReport:
    """Maximize the bandwidth starting from ``initial`` (which must stabilize the plant)."""
    config = config or SolverConfig()
    problem = BandwidthProblem(plant, initial.structure, initial.scaling, config, grid, bounds)
    x0 = initial.scaled_theta()
    ev0 = problem.evaluate(x0)
    if not ev0.stable:
        abscissa = ev0.info.get("abscissa", math.nan)
        return SynthesisReport(Status.INITIAL_UNSTABLE, initial, math.nan, math.inf, 0, 1, (), math.nan, math.inf,
                               config.mu0, math.inf,
                               f"initial controller does not stabilize the plant (spectral abscissa {abscissa:.6g})",
                               extra={"abscissa": abscissa})
    res = solve(problem, x0, config)
    ev = res.evaluation
    return SynthesisReport(
        res.status, problem.params(res.x), ev.info["omega_bw"], ev.info["hinf"], res.iterations, res.fevals,
        res.history, ev0.info["omega_bw"], ev0.info["hinf"], res.mu, res.stationarity, res.message,
    )


def synthesize_restarts(
    plant: DecoupledPlant,
    initial: ControllerParams,
    config: SolverConfig | None = None,
    restarts: int = 0,
    spread: float = 0.1,
    grid: FrequencyGrid | None = None,
    bounds: NotchBounds | None = None,
) -> SynthesisReport:
    """Experimental: rerun from log-normally perturbed crossovers, keep the best feasible result.

    Restart ``k`` scales every ``omega_c`` by ``exp(spread * z)`` with ``z`` drawn
    from ``config.seed``; unstable starts are skipped.
    """
    config = config or SolverConfig()
    best = synthesize(plant, initial, config, grid, bounds)
    rng = np.random.default_rng(config.seed)
    n = initial.structure.n_channels
    for _ in range(restarts):
        theta = initial.theta.copy()
        theta[:n] *= np.exp(spread * rng.standard_normal(n))
        rep = synthesize(plant, initial.with_theta(theta), config, grid, bounds)
        if rep.status is Status.INITIAL_UNSTABLE:
            continue
        feasible = rep.hinf <= config.S_max * (1 + config.feasibility_tol)
        if feasible and (best.status is Status.INITIAL_UNSTABLE or rep.omega_bw > best.omega_bw):
            best = rep
    return best
