"""Bandwidth, sensitivity H-infinity peaks, and closed-loop stability."""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from .controller import ControllerParams, controller_diag, controller_freq_derivative, controller_state_space
from .lti import DecoupledPlant, StateSpace, build_state_space, eval_plant_at, eval_plant_derivative

__all__ = [
    "FrequencyGrid",
    "SingularTriplet",
    "BandwidthResult",
    "SensitivityPeak",
    "SensitivityPeaks",
    "StabilityResult",
    "BandwidthError",
    "UnstableClosedLoopError",
    "loop_matrix",
    "sensitivity_matrix",
    "bandwidth_from_loop",
    "peaks_from_sensitivity",
    "compute_bandwidth",
    "compute_sensitivity_peaks",
    "sensitivity_freq_derivative",
    "closed_loop_sensitivity_ss",
    "check_stability",
    "diagnostics_table",
    "THREADS_ENV",
]

THREADS_ENV = "BWOPT_NUM_THREADS"
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


class BandwidthError(ValueError):
    """The loop gain never crosses unity on the analysis grid."""


class UnstableClosedLoopError(ValueError):
    def __init__(self, abscissa: float):
        super().__init__(f"closed loop is unstable (spectral abscissa {abscissa:.6g}); ||S||_inf is infinite")
        self.abscissa = abscissa


@dataclass(frozen=True)
class FrequencyGrid:
    omega_min: float = 1e-1
    omega_max: float = 1e5
    n_points: int = 2000

    def __post_init__(self):
        if not 0 < self.omega_min < self.omega_max:
            raise ValueError("grid needs 0 < omega_min < omega_max")
        if self.n_points < 3:
            raise ValueError("grid needs at least 3 points")

    @property
    def omegas(self) -> np.ndarray:
        return np.logspace(math.log10(self.omega_min), math.log10(self.omega_max), self.n_points)


class SingularTriplet(NamedTuple):
    sigma: float
    u: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class BandwidthResult:
    omega_bw: float
    cluster: tuple[SingularTriplet, ...]
    later_crossings: tuple[float, ...] = ()

    @property
    def sigma_min(self) -> float:
        return self.cluster[0].sigma


@dataclass(frozen=True)
class SensitivityPeak:
    omega: float
    sigma_max: float
    cluster: tuple[SingularTriplet, ...]


@dataclass(frozen=True)
class SensitivityPeaks:
    hinf: float
    peaks: tuple[SensitivityPeak, ...]

    @property
    def r(self) -> int:
        return len(self.peaks)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([p.omega for p in self.peaks])


class StabilityResult(NamedTuple):
    stable: bool
    abscissa: float


def _n_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _parallel_map(fn: Callable[[np.ndarray], np.ndarray], omega: np.ndarray) -> np.ndarray:
    threads = _n_threads()
    if threads == 1 or omega.ndim == 0 or omega.size < 4 * threads:
        return fn(omega)
    chunks = np.array_split(omega, threads)
    with ThreadPoolExecutor(threads) as pool:
        return np.concatenate(list(pool.map(fn, chunks)), axis=0)


def loop_matrix(plant: DecoupledPlant, params: ControllerParams, omega) -> np.ndarray:
    """``L(jw) = G(jw) C(jw)`` with C diagonal, batched over ``omega``."""
    omega = np.asarray(omega, dtype=float)

    def fn(w):
        return eval_plant_at(plant, 1j * w) * controller_diag(params, w)[..., None, :]

    return _parallel_map(fn, omega)


def sensitivity_matrix(plant: DecoupledPlant, params: ControllerParams, omega) -> np.ndarray:
    L = loop_matrix(plant, params, omega)
    return np.linalg.inv(np.eye(L.shape[-1]) + L)


def _triplets(U, s, Vh, idx) -> tuple[SingularTriplet, ...]:
    return tuple(SingularTriplet(float(s[i]), U[:, i].copy(), Vh[i].conj().copy()) for i in idx)


def _sigma_min(loop_fn, omega: float) -> float:
    return float(np.linalg.svd(loop_fn(np.asarray(omega)), compute_uv=False)[-1])


def bandwidth_from_loop(
    loop_fn: Callable[[np.ndarray], np.ndarray],
    grid: FrequencyGrid,
    delta_bw: float = 0.02,
    rtol: float = 1e-12,
) -> BandwidthResult:
    """First downward crossing of ``sigma_min(L(jw))`` through 1.

    ``loop_fn`` maps an array of frequencies to stacked loop matrices. The
    grid scan brackets the crossing; Brent's method (which keeps the sign
    change bracket) refines it in ``log w``.
    """
    omegas = grid.omegas
    smin = np.linalg.svd(loop_fn(omegas), compute_uv=False)[:, -1]
    above = smin >= 1.0
    down = np.flatnonzero(above[:-1] & ~above[1:])
    if down.size == 0:
        raise BandwidthError("loop gain never crosses unity on the analysis grid")
    k = int(down[0])

    def h(logw):
        return _sigma_min(loop_fn, math.exp(logw)) - 1.0

    lo, hi = math.log(omegas[k]), math.log(omegas[k + 1])
    # batched and scalar SVDs can disagree in the last bit right at sigma = 1
    h_lo, h_hi = h(lo), h(hi)
    if h_lo <= 0.0:
        logw = lo
    elif h_hi >= 0.0:
        logw = hi
    else:
        logw = brentq(h, lo, hi, xtol=rtol, rtol=4 * np.finfo(float).eps, maxiter=200)
    omega_bw = math.exp(logw)
    U, s, Vh = np.linalg.svd(loop_fn(np.asarray(omega_bw)))
    idx = [i for i in range(s.size - 1, -1, -1) if s[i] <= (1.0 + delta_bw) * s[-1]]
    later = tuple(float(omegas[i]) for i in down[1:])
    return BandwidthResult(omega_bw, _triplets(U, s, Vh, idx), later)


def _golden_max(fn, a: float, b: float, rtol: float = 1e-8, max_iter: int = 60) -> tuple[float, float]:
    """Golden-section maximization of ``fn(log w)`` on ``[a, b]`` (log frequency)."""
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = fn(c), fn(d)
    for _ in range(max_iter):
        if abs(b - a) <= rtol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = fn(d)
    return (c, fc) if fc >= fd else (d, fd)


def _polish_peak(sens_fn, dsens_fn, w: float, val: float, rel: float = 1e-6) -> tuple[float, float]:
    """Root of ``d sigma_max/d w = Re[u^* dS/dw v]`` next to a golden-section maximum.

    Golden section only pins the peak to about ``sqrt(eps)`` in ``log w``; the
    subgradient at such a point is off by ``sigma'' * dw``, which matters
    when the true gradient is small.
    """

    def slope(x):
        U, s, Vh = np.linalg.svd(sens_fn(np.asarray(x)))
        return float(np.real(U[:, 0].conj() @ dsens_fn(x) @ Vh[0].conj()))

    lo, hi = w * (1.0 - rel), w * (1.0 + rel)
    s_lo, s_hi = slope(lo), slope(hi)
    if not (s_lo > 0.0 > s_hi):
        return w, val
    w_new = brentq(slope, lo, hi, xtol=1e-15 * w, rtol=4 * np.finfo(float).eps, maxiter=100)
    val_new = float(np.linalg.svd(sens_fn(np.asarray(w_new)), compute_uv=False)[0])
    # near the top the values agree to rounding, so only reject a clear loss
    return (w_new, val_new) if val_new >= val * (1.0 - 1e-12) else (w, val)


def peaks_from_sensitivity(
    sens_fn: Callable[[np.ndarray], np.ndarray],
    grid: FrequencyGrid,
    delta_h: float = 0.005,
    candidate_ratio: float = 0.9,
    dsens_fn: Callable[[float], np.ndarray] | None = None,
) -> SensitivityPeaks:
    """``||S||_inf`` by grid scan plus golden-section refinement of each local maximum.

    With ``dsens_fn`` (``dS/dw`` at a scalar frequency) each refined peak is
    polished to a stationary point of ``sigma_max``. All local peaks within
    ``delta_h`` of the norm are returned; each peak carries the singular
    triplets with ``sigma >= (1 - delta_h) * hinf``.
    """
    omegas = grid.omegas
    logw = np.log(omegas)
    smax = np.linalg.svd(sens_fn(omegas), compute_uv=False)[:, 0]
    N = smax.size
    cands = []
    for i in range(N):
        left = smax[i - 1] if i > 0 else -np.inf
        right = smax[i + 1] if i < N - 1 else -np.inf
        if smax[i] >= left and smax[i] >= right and smax[i] >= candidate_ratio * smax.max():
            cands.append(i)

    def sig(lw):
        return float(np.linalg.svd(sens_fn(np.asarray(math.exp(lw))), compute_uv=False)[0])

    refined = []
    for i in cands:
        if i == 0 or i == N - 1:
            refined.append((float(omegas[i]), float(smax[i])))
            continue
        lw, val = _golden_max(sig, float(logw[i - 1]), float(logw[i + 1]))
        if val < smax[i]:
            lw, val = float(logw[i]), float(smax[i])
        w = math.exp(lw)
        if dsens_fn is not None:
            w, val = _polish_peak(sens_fn, dsens_fn, w, val)
        refined.append((w, val))
    # plateaus produce adjacent duplicate candidates
    refined.sort()
    merged: list[tuple[float, float]] = []
    for w, val in refined:
        if merged and abs(math.log(w / merged[-1][0])) < 1e-6:
            if val > merged[-1][1]:
                merged[-1] = (w, val)
            continue
        merged.append((w, val))
    hinf = max(val for _, val in merged)
    peaks = []
    for w, val in merged:
        if val < (1.0 - delta_h) * hinf:
            continue
        U, s, Vh = np.linalg.svd(sens_fn(np.asarray(w)))
        idx = [j for j in range(s.size) if s[j] >= (1.0 - delta_h) * hinf]
        peaks.append(SensitivityPeak(w, float(s[0]), _triplets(U, s, Vh, idx)))
    peaks.sort(key=lambda p: -p.sigma_max)
    return SensitivityPeaks(float(hinf), tuple(peaks))


def compute_bandwidth(
    plant: DecoupledPlant, params: ControllerParams, grid: FrequencyGrid | None = None, delta_bw: float = 0.02
) -> BandwidthResult:
    grid = grid or FrequencyGrid()
    return bandwidth_from_loop(lambda w: loop_matrix(plant, params, w), grid, delta_bw)


def compute_sensitivity_peaks(
    plant: DecoupledPlant,
    params: ControllerParams,
    grid: FrequencyGrid | None = None,
    delta_h: float = 0.005,
    check: bool = True,
) -> SensitivityPeaks:
    grid = grid or FrequencyGrid()
    if check:
        stab = check_stability(plant, params)
        if not stab.stable:
            raise UnstableClosedLoopError(stab.abscissa)
    return peaks_from_sensitivity(lambda w: sensitivity_matrix(plant, params, w), grid, delta_h,
                                  dsens_fn=lambda w: sensitivity_freq_derivative(plant, params, w))


def sensitivity_freq_derivative(plant: DecoupledPlant, params: ControllerParams, omega: float) -> np.ndarray:
    """``dS(jw)/dw = -S (dG/dw C + G dC/dw) S`` at a scalar frequency."""
    w = np.asarray(omega, dtype=float)
    G = eval_plant_at(plant, 1j * w)
    c = controller_diag(params, w)
    dL = eval_plant_derivative(plant, w) * c[None, :] + G * controller_freq_derivative(params, w)[None, :]
    S = np.linalg.inv(np.eye(G.shape[-1]) + G * c[None, :])
    return -S @ dL @ S


def closed_loop_sensitivity_ss(plant: DecoupledPlant, params: ControllerParams) -> StateSpace:
    """Realization of ``S = (I + G C)^-1`` (output disturbance to output)."""
    P = build_state_space(plant)
    K = controller_state_space(params)
    A = np.block([[P.A - P.B @ K.D @ P.C, -P.B @ K.C], [K.B @ P.C, K.A]])
    B = np.vstack([-P.B @ K.D, K.B])
    C = np.hstack([P.C, np.zeros((P.C.shape[0], K.A.shape[0]))])
    D = np.eye(P.C.shape[0])
    return StateSpace(A, B, C, D)


def check_stability(plant: DecoupledPlant, params: ControllerParams, margin: float = 0.0) -> StabilityResult:
    """Stable iff every closed-loop eigenvalue has real part below ``-margin``."""
    A = closed_loop_sensitivity_ss(plant, params).A
    Ab, _ = scipy.linalg.matrix_balance(A, permute=False)
    abscissa = float(np.max(np.linalg.eigvals(Ab).real))
    return StabilityResult(abscissa < -margin, abscissa)


def diagnostics_table(plant: DecoupledPlant, params: ControllerParams, grid: FrequencyGrid) -> np.ndarray:
    """Columns: omega, sigma_min(L), sigma_max(S), |L_ii| for every channel."""
    omegas = grid.omegas
    L = loop_matrix(plant, params, omegas)
    S = np.linalg.inv(np.eye(L.shape[-1]) + L)
    sl = np.linalg.svd(L, compute_uv=False)[:, -1]
    ss = np.linalg.svd(S, compute_uv=False)[:, 0]
    diag = np.abs(np.diagonal(L, axis1=-2, axis2=-1))
    return np.column_stack([omegas, sl, ss, diag])
