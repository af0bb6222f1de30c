"""Clarke subgradients of the bandwidth and of ||S||_inf, and min-norm directions.

Both functions are extreme singular values of parameterized matrices, so a
subgradient per singular triplet follows from ``d sigma = Re[u^* dA v]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .controller import ControllerParams, controller_diag, controller_freq_derivative, controller_theta_derivatives
from .freq import BandwidthResult, SensitivityPeaks
from .lti import DecoupledPlant, eval_plant_at, eval_plant_derivative

__all__ = [
    "SubdifferentialSet",
    "TangentialCrossingError",
    "bandwidth_subgradients",
    "objective_subgradients",
    "sensitivity_subgradients",
    "constraint_subgradients",
    "min_norm_direction",
]


class TangentialCrossingError(ValueError):
    """``sigma_min(L)`` touches 1 without crossing, so the implicit function theorem fails."""


@dataclass(frozen=True)
class SubdifferentialSet:
    """Subgradients (rows of ``gradients``) and the ``(omega, sigma index)`` each came from."""

    gradients: np.ndarray
    provenance: tuple[tuple[float, int], ...]

    def __post_init__(self):
        g = np.atleast_2d(np.asarray(self.gradients, dtype=float))
        if g.shape[0] == 0:
            raise ValueError("a subdifferential set needs at least one vector")
        if len(self.provenance) != g.shape[0]:
            raise ValueError("one provenance entry per gradient is required")
        object.__setattr__(self, "gradients", g)
        object.__setattr__(self, "provenance", tuple(self.provenance))

    def __len__(self) -> int:
        return self.gradients.shape[0]

    @property
    def m(self) -> int:
        return self.gradients.shape[1]

    def scaled(self, factor) -> "SubdifferentialSet":
        return SubdifferentialSet(self.gradients * factor, self.provenance)


def bandwidth_subgradients(
    bw: BandwidthResult, dL_dtheta: Sequence[np.ndarray], dL_domega: np.ndarray, eps: float = 1e-12
) -> SubdifferentialSet:
    """Gradient of ``omega_bw`` for every cluster member, from loop derivatives at ``omega_bw``.

    ``g_l = -(d sigma_l/d theta) / (d sigma_l/d omega)``.
    """
    rows, prov = [], []
    for l, (sigma, u, v) in enumerate(bw.cluster):
        s_w = float(np.real(u.conj() @ dL_domega @ v))
        if abs(s_w) < eps:
            raise TangentialCrossingError(
                f"d sigma/d omega = {s_w:.3g} at omega_bw={bw.omega_bw:.6g}: crossover is not transversal"
            )
        s_t = np.array([np.real(u.conj() @ dL @ v) for dL in dL_dtheta])
        rows.append(-s_t / s_w)
        prov.append((bw.omega_bw, l))
    return SubdifferentialSet(np.array(rows), tuple(prov))


def objective_subgradients(plant: DecoupledPlant, params: ControllerParams, bw: BandwidthResult) -> SubdifferentialSet:
    """Subgradients of ``omega_bw`` (not negated) with respect to physical ``theta_c``."""
    w = np.asarray(bw.omega_bw)
    G = eval_plant_at(plant, 1j * w)
    dG = eval_plant_derivative(plant, w)
    c = controller_diag(params, w)
    dc = controller_freq_derivative(params, w)
    dL_dw = dG * c[None, :] + G * dc[None, :]
    channels, values = controller_theta_derivatives(params, w)
    rows, prov = [], []
    for l, (sigma, u, v) in enumerate(bw.cluster):
        s_w = float(np.real(u.conj() @ dL_dw @ v))
        if abs(s_w) < 1e-12:
            raise TangentialCrossingError(
                f"d sigma/d omega = {s_w:.3g} at omega_bw={bw.omega_bw:.6g}: crossover is not transversal"
            )
        # dL/dtheta_i = G[:, ch] dC_ch e_ch^T  =>  u^* dL v = (u^* G[:, ch]) dC_ch v[ch]
        uG = u.conj() @ G
        s_t = np.real(uG[channels] * values * v[channels])
        rows.append(-s_t / s_w)
        prov.append((bw.omega_bw, l))
    return SubdifferentialSet(np.array(rows), tuple(prov))


def sensitivity_subgradients(
    peaks: SensitivityPeaks, dS_dtheta: Callable[[float], Sequence[np.ndarray]]
) -> SubdifferentialSet:
    """``h_il = Re[u_il^* dS(j w_i)/d theta v_il]`` for every peak and cluster member."""
    rows, prov = [], []
    for peak in peaks.peaks:
        dS = dS_dtheta(peak.omega)
        for l, (sigma, u, v) in enumerate(peak.cluster):
            rows.append([np.real(u.conj() @ d @ v) for d in dS])
            prov.append((peak.omega, l))
    return SubdifferentialSet(np.array(rows), tuple(prov))


def constraint_subgradients(
    plant: DecoupledPlant, params: ControllerParams, peaks: SensitivityPeaks
) -> SubdifferentialSet:
    """Subgradients of ``||S||_inf`` using ``dS/dtheta = -S G dC/dtheta S``."""
    n = params.structure.n_channels
    rows, prov = [], []
    for peak in peaks.peaks:
        w = np.asarray(peak.omega)
        G = eval_plant_at(plant, 1j * w)
        c = controller_diag(params, w)
        S = np.linalg.inv(np.eye(n) + G * c[None, :])
        SG = S @ G
        channels, values = controller_theta_derivatives(params, w)
        for l, (sigma, u, v) in enumerate(peak.cluster):
            # u^* (-S G e_ch dC e_ch^T S) v = -(u^* SG[:, ch]) dC (S v)[ch]
            uSG = u.conj() @ SG
            Sv = S @ v
            rows.append(-np.real(uSG[channels] * values * Sv[channels]))
            prov.append((peak.omega, l))
    return SubdifferentialSet(np.array(rows), tuple(prov))


def min_norm_direction(
    vectors: SubdifferentialSet | np.ndarray, tol: float = 1e-10, max_iter: int = 500
) -> tuple[np.ndarray, np.ndarray]:
    """Minimum-norm point of the convex hull of the rows of ``vectors``.

    Wolfe's algorithm: keep a corral of affinely independent points, add the
    vertex most negatively aligned with the current point, and walk back
    toward the corral's affine minimizer whenever it leaves the simplex.
    Returns ``(d, weights)`` with ``d = weights @ vectors``.
    """
    P = vectors.gradients if isinstance(vectors, SubdifferentialSet) else np.atleast_2d(np.asarray(vectors, float))
    k = P.shape[0]
    if k == 0:
        raise ValueError("empty set")
    if k == 1:
        return P[0].copy(), np.ones(1)
    scale = float(np.max(np.sum(P * P, axis=1)))
    if scale == 0.0:
        return np.zeros(P.shape[1]), np.full(k, 1.0 / k)
    start = int(np.argmin(np.sum(P * P, axis=1)))
    corral = [start]
    lam = np.array([1.0])
    x = P[start].copy()
    for _ in range(max_iter):
        xx = float(x @ x)
        if xx <= 1e-30 * scale:
            break
        dots = P @ x
        j = int(np.argmin(dots))
        if dots[j] >= xx - tol * max(xx, 1e-16 * scale) or j in corral:
            break
        corral.append(j)
        lam = np.append(lam, 0.0)
        for _minor in range(max_iter):
            Pc = P[corral]
            # affine minimizer: min ||p0 + D^T b|| over b, with D the differences
            # to the first corral point (better conditioned than the KKT system)
            D = Pc[1:] - Pc[0]
            b = np.linalg.lstsq(D.T, -Pc[0], rcond=None)[0]
            alpha = np.concatenate([[1.0 - b.sum()], b])
            if np.all(alpha > 1e-16):
                lam = alpha
                break
            neg = alpha <= 1e-16
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.where(neg, lam / (lam - alpha), np.inf)
            theta = float(np.clip(np.min(ratios), 0.0, 1.0))
            lam = lam + theta * (alpha - lam)
            keep = lam > 1e-16
            keep[int(np.argmin(np.where(neg, ratios, np.inf)))] = False
            corral = [ci for ci, kp in zip(corral, keep) if kp]
            lam = lam[keep]
            lam = lam / lam.sum()
        x = lam @ P[corral]
    weights = np.zeros(k)
    weights[corral] = lam
    return weights @ P, weights
