"""BFGS-SQP for nonsmooth inequality-constrained problems.

The solver minimizes the penalty function ``phi = mu f + sum max(c_i, 0)``
with a BFGS inverse-Hessian approximation. At infeasible iterates the search
direction comes from a steering QP that lowers ``mu`` until the linearized
violation reduction is a fixed fraction of the best achievable one. A weak
Wolfe line search handles kinks, and termination asks for a small min-norm
element over the penalty gradients collected near the current iterate.

Problems implement ``evaluate(x) -> Evaluation``; each function comes with a
set of subgradients (rows), which ``DirectionMode`` reduces to one vector.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy.optimize import minimize

from .subgrad import min_norm_direction

__all__ = [
    "DirectionMode",
    "Status",
    "SolverConfig",
    "Evaluation",
    "Problem",
    "Point",
    "HistoryRecord",
    "SolverState",
    "SolveResult",
    "reduce_set",
    "penalty",
    "penalty_qp",
    "steering_qp",
    "weak_wolfe",
    "line_search",
    "check_stationarity",
    "bfgs_update",
    "solve",
]


class DirectionMode(str, Enum):
    RAW_SUBGRADIENT = "RAW_SUBGRADIENT"
    QP_STEEPEST = "QP_STEEPEST"

    @classmethod
    def parse(cls, value) -> "DirectionMode":
        if isinstance(value, cls):
            return value
        aliases = {"raw": cls.RAW_SUBGRADIENT, "qp": cls.QP_STEEPEST}
        key = str(value)
        return aliases.get(key.lower()) or cls(key.upper())


class Status(str, Enum):
    CONVERGED = "CONVERGED"
    NOT_CONVERGED_BUDGET = "NOT_CONVERGED_BUDGET"
    LINESEARCH_FAILED = "LINESEARCH_FAILED"
    INITIAL_UNSTABLE = "INITIAL_UNSTABLE"


@dataclass(frozen=True)
class SolverConfig:
    S_max: float = 2.0
    c_v: float = 0.7
    c_mu: float = 0.3
    mu0: float = 1.0
    delta_bw: float = 0.02
    delta_h: float = 0.005
    stationarity_tol: float = 1e-6
    feasibility_tol: float = 1e-8
    max_iter: int = 200
    max_fun_evals: int = 5000
    direction_mode: DirectionMode = DirectionMode.QP_STEEPEST
    cache_size: int | None = None  # None: min(2m, 40)
    cache_radius: float = 1e-4
    wolfe_c1: float = 1e-4
    wolfe_c2: float = 0.5
    max_bisections: int = 50
    max_expansions: int = 30
    max_steering: int = 10
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "direction_mode", DirectionMode.parse(self.direction_mode))
        if not self.S_max > 1:
            raise ValueError("S_max must exceed 1")
        for name in ("c_v", "c_mu"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")
        if not 0 < self.wolfe_c1 < self.wolfe_c2 < 1:
            raise ValueError("need 0 < wolfe_c1 < wolfe_c2 < 1")
        positive = ("mu0", "delta_bw", "delta_h", "stationarity_tol", "cache_radius")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.feasibility_tol < 0:
            raise ValueError("feasibility_tol must be nonnegative")
        if self.max_iter < 0 or self.max_fun_evals < 1:
            raise ValueError("budgets must be nonnegative")

    def cache_len(self, m: int) -> int:
        return self.cache_size if self.cache_size is not None else min(2 * m, 40)


@dataclass(frozen=True)
class Evaluation:
    """Objective and constraints (``c_i <= 0``) at one point.

    ``f_set`` and every ``c_sets[i]`` hold subgradients as rows. An unstable
    or otherwise undefined point has ``stable=False`` and infinite values.
    """

    f: float
    f_set: np.ndarray
    c: np.ndarray
    c_sets: tuple[np.ndarray, ...]
    stable: bool = True
    info: dict = field(default_factory=dict, compare=False)

    @classmethod
    def unstable(cls, m: int, n_c: int, **info) -> "Evaluation":
        nan = np.full((1, m), np.nan)
        return cls(math.inf, nan, np.full(n_c, math.inf), tuple(nan for _ in range(n_c)), False, info)


class Problem(Protocol):
    n_vars: int
    n_constraints: int

    def evaluate(self, x: np.ndarray) -> Evaluation: ...


@dataclass(frozen=True)
class Point:
    """An evaluated point.

    ``F`` and ``C[i]`` are the subgradient sets the direction subproblem sees
    (RAW mode keeps only the first row of each). Row 0 is always the gradient
    of the active singular value, so ``g_f`` and ``J`` are classical
    gradients wherever the functions are differentiable.
    """

    x: np.ndarray
    ev: Evaluation
    F: np.ndarray
    C: tuple[np.ndarray, ...]

    @property
    def f(self) -> float:
        return self.ev.f

    @property
    def c(self) -> np.ndarray:
        return self.ev.c

    @property
    def g_f(self) -> np.ndarray:
        return self.F[0]

    @property
    def J(self) -> np.ndarray:
        return np.array([Ci[0] for Ci in self.C]).reshape(len(self.C), self.x.size)

    @property
    def v(self) -> float:
        if not self.ev.stable:
            return math.inf
        return float(np.sum(np.maximum(self.ev.c, 0.0)))

    def phi(self, mu: float) -> float:
        return penalty(mu, self.f, self.c) if self.ev.stable else math.inf

    def grad_phi(self, mu: float) -> np.ndarray:
        return mu * self.g_f + self.J[self.c > 0].sum(axis=0)

    def model_slope(self, mu: float, d: np.ndarray) -> float:
        """Directional derivative of the max-type penalty model along ``d``."""
        out = mu * float(np.max(self.F @ d))
        for ci, Ci in zip(self.c, self.C):
            if ci > 0:
                out += float(np.max(Ci @ d))
            elif ci == 0:
                out += max(float(np.max(Ci @ d)), 0.0)
        return out


@dataclass(frozen=True)
class HistoryRecord:
    iteration: int
    f: float
    v: float
    mu: float
    step: float
    direction_norm: float
    fevals: int
    stationarity: float


@dataclass
class SolverState:
    point: Point
    H: np.ndarray
    mu: float
    grad_cache: deque
    history: list[HistoryRecord]
    fevals: int = 0
    iteration: int = 0
    scaled_H: bool = False


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    f: float
    v: float
    c: np.ndarray
    status: Status
    iterations: int
    fevals: int
    mu: float
    stationarity: float
    history: tuple[HistoryRecord, ...]
    final_x: np.ndarray
    message: str = ""
    evaluation: Evaluation | None = None


def penalty(mu: float, f: float, c: np.ndarray) -> float:
    return mu * f + float(np.sum(np.maximum(c, 0.0)))


def reduce_set(vectors: np.ndarray, mode: DirectionMode) -> np.ndarray:
    """RAW: the first subgradient; QP: the min-norm element of the hull."""
    vectors = np.atleast_2d(vectors)
    if mode is DirectionMode.RAW_SUBGRADIENT or vectors.shape[0] == 1:
        return vectors[0].copy()
    return min_norm_direction(vectors)[0]


def _make_point(x: np.ndarray, ev: Evaluation, mode: DirectionMode) -> Point:
    m = x.size
    if not ev.stable:
        nan = np.full((1, m), np.nan)
        return Point(x, ev, nan, tuple(nan for _ in ev.c))
    keep = 1 if mode is DirectionMode.RAW_SUBGRADIENT else None
    F = np.atleast_2d(ev.f_set)[:keep]
    C = tuple(np.atleast_2d(Ci)[:keep] for Ci in ev.c_sets)
    return Point(x, ev, F, C)


def _violation_reduction(c: np.ndarray, C: Sequence[np.ndarray], d: np.ndarray) -> float:
    """Predicted decrease of ``sum max(c, 0)`` under the max-type linearization along ``d``."""
    lin = np.array([ci + float(np.max(Ci @ d)) for ci, Ci in zip(c, C)])
    return float(np.sum(np.maximum(c, 0.0)) - np.sum(np.maximum(lin, 0.0)))


def _metric_min_norm(F: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``H q`` for the element ``q`` of ``conv(rows of F)`` with the smallest ``q' H q``."""
    L = np.linalg.cholesky(H)
    _, lam = min_norm_direction(F @ L)
    return H @ (lam @ F)


def penalty_qp(
    mu: float, F: np.ndarray, c: np.ndarray, C: Sequence[np.ndarray], H: np.ndarray
) -> np.ndarray:
    """Minimizer of the max-type penalty model plus ``d' H^-1 d / 2``.

    The model is ``mu max_l g_l'd + sum_i max(c_i + max_l h_il'd, 0)``. Its
    dual is ``min q'Hq/2 - sum_i c_i y_i`` over ``q = mu sum lambda_l g_l +
    sum_il w_il h_il`` with ``lambda`` on the simplex, ``w_il >= 0`` and
    ``y_i = sum_l w_il <= 1``; then ``d = -H q``. With no constraints the
    answer is ``-mu H`` times the min-norm point of ``conv{g_l}`` in the
    ``H`` metric, which is the steepest-descent direction when ``H = I``.
    """
    F = np.atleast_2d(F)
    m = F.shape[1]
    if mu > 0:
        d = -mu * _metric_min_norm(F, H)
        # the unconstrained step is optimal if it stays inside every linearization
        if all(ci + float(np.max(Ci @ d)) <= 0 for ci, Ci in zip(c, C)):
            return d
    blocks = ([mu * F] if mu > 0 else []) + [np.atleast_2d(Ci) for Ci in C]
    A = np.vstack(blocks).T  # columns are the generators of q
    sizes = [b.shape[0] for b in blocks]
    offs = np.concatenate([[0], np.cumsum(sizes)])
    n_f = sizes[0] if mu > 0 else 0
    lin = np.zeros(A.shape[1])
    for k, ci in enumerate(c):
        j = k + (1 if mu > 0 else 0)
        lin[offs[j]:offs[j + 1]] = ci
    AHA = A.T @ H @ A

    def fun(z):
        Az = AHA @ z
        return 0.5 * float(z @ Az) - float(lin @ z), Az - lin

    cons = []
    if n_f:
        cons.append({"type": "eq", "fun": lambda z: np.sum(z[:n_f]) - 1.0,
                     "jac": lambda z: np.concatenate([np.ones(n_f), np.zeros(z.size - n_f)])})
    for j in range(1 if n_f else 0, len(blocks)):
        sel = np.zeros(A.shape[1])
        sel[offs[j]:offs[j + 1]] = 1.0
        cons.append({"type": "ineq", "fun": lambda z, sel=sel: 1.0 - sel @ z, "jac": lambda z, sel=sel: -sel})
    z0 = np.zeros(A.shape[1])
    if n_f:
        z0[:n_f] = 1.0 / n_f
    for k, ci in enumerate(c):
        j = k + (1 if n_f else 0)
        if ci > 0:
            z0[offs[j]:offs[j + 1]] = 1.0 / sizes[j]
    res = minimize(fun, z0, jac=True, method="SLSQP", bounds=[(0.0, None)] * A.shape[1],
                   constraints=cons, options={"ftol": 1e-15, "maxiter": 500})
    z = np.maximum(res.x, 0.0)
    if n_f:
        z[:n_f] /= z[:n_f].sum()
    d = -H @ (A @ z)
    return d.reshape(m)


def steering_qp(
    mu: float, F: np.ndarray, c: np.ndarray, C: Sequence[np.ndarray], H: np.ndarray,
    c_v: float, c_mu: float, max_steering: int = 10,
) -> tuple[np.ndarray, float, float]:
    """Steered SQP direction. Returns ``(d, predicted violation reduction, mu)``.

    With no violated constraint this is the penalty QP at the current ``mu``
    (the quasi-Newton step on ``mu f`` unless it crosses a linearized
    constraint). Otherwise ``mu`` shrinks by ``c_mu`` until the predicted reduction reaches
    ``c_v`` times that of the pure feasibility direction (``mu = 0``).
    """
    F = np.atleast_2d(F)
    c = np.asarray(c, dtype=float)
    C = tuple(np.atleast_2d(Ci) for Ci in C)
    if float(np.sum(np.maximum(c, 0.0))) <= 0:
        return penalty_qp(mu, F, c, C, H), 0.0, mu
    d = penalty_qp(mu, F, c, C, H)
    red = _violation_reduction(c, C, d)
    red0 = _violation_reduction(c, C, penalty_qp(0.0, F, c, C, H))
    for _ in range(max_steering):
        if red >= c_v * red0:
            break
        mu *= c_mu
        d = penalty_qp(mu, F, c, C, H)
        red = _violation_reduction(c, C, d)
    return d, red, mu


def weak_wolfe(
    fun: Callable[[float], tuple[float, float, object]],
    phi0: float, dphi0: float,
    c1: float = 1e-4, c2: float = 0.5,
    max_bisections: int = 50, max_expansions: int = 30, alpha0: float = 1.0,
) -> tuple[float | None, object, int]:
    """Bracketing weak Wolfe search on ``phi(alpha)``.

    ``fun(alpha)`` returns ``(phi, dphi, payload)``; a non-finite ``phi``
    fails the sufficient-decrease test. Returns ``(alpha, payload, n_calls)``
    with ``alpha=None`` when no Armijo point was found. If the curvature
    condition never holds the last Armijo point is returned.
    """
    lo, hi = 0.0, math.inf
    alpha = alpha0
    best: tuple[float, object] | None = None
    calls = bisections = expansions = 0
    while True:
        phi, dphi, payload = fun(alpha)
        calls += 1
        if not (math.isfinite(phi) and phi <= phi0 + c1 * alpha * dphi0):
            hi = alpha
        elif not (math.isfinite(dphi) and dphi >= c2 * dphi0):
            lo = alpha
            best = (alpha, payload)
        else:
            return alpha, payload, calls
        if math.isfinite(hi):
            if bisections >= max_bisections:
                break
            bisections += 1
            alpha = 0.5 * (lo + hi)
        else:
            if expansions >= max_expansions:
                break
            expansions += 1
            alpha = 2.0 * lo
    if best is not None:
        return best[0], best[1], calls
    return None, None, calls


def line_search(
    problem: Problem, state: SolverState, d: np.ndarray, config: SolverConfig, budget: int
) -> tuple[float | None, Point | None, int]:
    """Weak Wolfe search on ``phi = mu f + v`` along ``d`` from ``state.point``.

    Sufficient decrease is measured against the slope of the max-type model
    at the start; the curvature test uses the active gradient at the trial.
    """
    mu, p0 = state.mu, state.point
    phi0 = p0.phi(mu)
    dphi0 = p0.model_slope(mu, d)
    used = 0

    def fun(alpha):
        nonlocal used
        if used >= budget:
            raise _BudgetExceeded
        used += 1
        x = p0.x + alpha * d
        pt = _make_point(x, problem.evaluate(x), config.direction_mode)
        if not pt.ev.stable:
            return math.inf, math.nan, pt
        return pt.phi(mu), float(pt.grad_phi(mu) @ d), pt

    try:
        alpha, pt, _ = weak_wolfe(fun, phi0, dphi0, config.wolfe_c1, config.wolfe_c2,
                                  config.max_bisections, config.max_expansions)
    except _BudgetExceeded:
        return None, None, used
    return alpha, pt, used


class _BudgetExceeded(Exception):
    pass


def _minkowski(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, None, :] + b[None, :, :]).reshape(-1, a.shape[1])


def _stationarity_vectors(point: Point, cache: Sequence[Point], mu: float, config: SolverConfig) -> np.ndarray:
    vecs = []
    for p in cache:
        if np.linalg.norm(p.x - point.x) > config.cache_radius:
            continue
        a = np.maximum(config.feasibility_tol, config.cache_radius * np.linalg.norm(p.J, axis=1))
        base = mu * p.F
        for i in np.flatnonzero(p.c > a):
            base = _minkowski(base, p.C[i])
        vecs.append(base)
        for i in np.flatnonzero(np.abs(p.c) <= a):
            vecs.append(_minkowski(base, p.C[i]))
    return np.vstack(vecs) if vecs else np.zeros((0, point.x.size))


def check_stationarity(state: SolverState, config: SolverConfig) -> tuple[bool, float]:
    """Min-norm element over cached penalty subgradients near the current iterate.

    Violated constraints add their subgradient sets (Minkowski sums). A
    constraint within reach of zero (``|c_i| <= max(feas_tol, eps ||J_i||)``)
    contributes both with and without its set, so the hull contains
    ``mu g + t h`` for ``t`` in ``[0, 1]``.
    """
    vecs = _stationarity_vectors(state.point, state.grad_cache, state.mu, config)
    if vecs.size == 0:
        return False, math.inf
    d, _ = min_norm_direction(vecs)
    norm = float(np.linalg.norm(d))
    return bool(norm <= config.stationarity_tol and state.point.v <= config.feasibility_tol), norm


def bfgs_update(H: np.ndarray, s: np.ndarray, y: np.ndarray, scale_first: bool = False) -> tuple[np.ndarray, bool]:
    """Inverse BFGS update; skipped (returns ``updated=False``) when ``s'y`` is too small."""
    ns = float(np.linalg.norm(s))
    if not ns > 0:
        return H, False
    # the update is invariant to scaling s and y together; normalizing avoids overflow
    s, y = s / ns, y / ns
    sy = float(s @ y)
    if not (sy > 1e-10 * np.linalg.norm(y)) or not math.isfinite(1.0 / sy):
        return H, False
    if scale_first:
        H = (sy / float(y @ y)) * np.eye(H.shape[0])
    rho = 1.0 / sy
    V = np.eye(H.shape[0]) - rho * np.outer(s, y)
    H = V @ H @ V.T + rho * np.outer(s, s)
    H = 0.5 * (H + H.T)
    if not np.all(np.isfinite(H)) or np.linalg.eigvalsh(H)[0] < 1e-12:
        return np.eye(H.shape[0]), True
    return H, True


def solve(problem: Problem, x0, config: SolverConfig | None = None) -> SolveResult:
    config = config or SolverConfig()
    x0 = np.asarray(x0, dtype=float).copy()
    m = x0.size
    mode = config.direction_mode
    p0 = _make_point(x0, problem.evaluate(x0), mode)
    if not p0.ev.stable:
        return SolveResult(x0, math.inf, math.inf, p0.c, Status.INITIAL_UNSTABLE, 0, 1, config.mu0, math.inf,
                           (), x0, "initial point is unstable", p0.ev)
    state = SolverState(p0, np.eye(m), config.mu0, deque(maxlen=config.cache_len(m)), [], fevals=1)
    state.grad_cache.append(p0)
    best = p0 if p0.v <= config.feasibility_tol else None

    status = Status.NOT_CONVERGED_BUDGET
    message = "iteration budget exhausted"
    stat = math.inf
    step = 0.0
    dnorm = 0.0
    while True:
        done, stat = check_stationarity(state, config)
        state.history.append(HistoryRecord(state.iteration, state.point.f, state.point.v, state.mu, step, dnorm,
                                           state.fevals, stat))
        if done:
            status, message = Status.CONVERGED, "stationarity and feasibility tolerances met"
            break
        if state.iteration >= config.max_iter:
            break
        if state.fevals >= config.max_fun_evals:
            message = "function evaluation budget exhausted"
            break

        accepted = None
        for attempt in range(2):
            p = state.point
            d, _, mu = steering_qp(state.mu, p.F, p.c, p.C, state.H, config.c_v, config.c_mu,
                                   config.max_steering)
            state.mu = mu
            if not p.model_slope(mu, d) < 0:
                alpha, new = None, None
            else:
                alpha, new, used = line_search(problem, state, d, config, config.max_fun_evals - state.fevals)
                state.fevals += used
            if alpha is not None and alpha * np.linalg.norm(d) > 1e-14 * (1.0 + np.linalg.norm(p.x)):
                accepted = (alpha, d, new)
                break
            if state.fevals >= config.max_fun_evals:
                break
            state.H = np.eye(m)
            state.scaled_H = False
        if accepted is None:
            if state.fevals >= config.max_fun_evals:
                message = "function evaluation budget exhausted"
            else:
                status, message = Status.LINESEARCH_FAILED, "no acceptable step after resetting the Hessian"
            break

        alpha, d, new = accepted
        s = new.x - state.point.x
        y = new.grad_phi(state.mu) - state.point.grad_phi(state.mu)
        state.H, updated = bfgs_update(state.H, s, y, scale_first=not state.scaled_H)
        state.scaled_H = state.scaled_H or updated
        state.point = new
        state.grad_cache.append(new)
        state.iteration += 1
        step, dnorm = alpha, float(np.linalg.norm(d))
        if new.v <= config.feasibility_tol and (best is None or new.f < best.f):
            best = new

    final = state.point
    # report the best feasible iterate; fall back to the last one
    report = best if best is not None else final
    return SolveResult(report.x.copy(), report.f, report.v, report.c.copy(), status, state.iteration, state.fevals,
                       state.mu, stat, tuple(state.history), final.x.copy(), message, report.ev)
