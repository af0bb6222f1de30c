"""Synthetic plants used by the tests, the demos and the bundled study.

``FLEXSTAGE_LIKE`` mimics the structure of a maglev stage: six rigid-body
channels (x, y, z, Rx, Ry, Rz), one actively controlled flexible mode at
50 Hz, and two parasitic structural modes (606 Hz, 744 Hz) that couple into
several channels. It is not a model of any real stage.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Mapping

import numpy as np

from .controller import ControllerParams, ControllerStructure, NotchSpec, PidLowpassSpec
from .lti import DecoupledPlant, ModalPlant

__all__ = [
    "PlantKind",
    "PlantRecipe",
    "TwoPeakSensitivity",
    "make_plant",
    "flexstage_structure",
    "flexstage_initial_params",
    "two_axis_structure",
    "FLEXSTAGE_DEFAULTS",
    "TWO_AXIS_DEFAULTS",
    "TWO_PEAK_DEFAULTS",
]

HZ = 2.0 * math.pi


class PlantKind(str, Enum):
    TWO_AXIS = "TWO_AXIS"
    TWO_PEAK_DUMMY = "TWO_PEAK_DUMMY"
    FLEXSTAGE_LIKE = "FLEXSTAGE_LIKE"
    FROM_FILE = "FROM_FILE"


TWO_AXIS_DEFAULTS: dict[str, Any] = {
    "mass_x": 1.0,
    "mass_y": 1.0,
    "gain_x": 1.0,
    "gain_y": 1.0,
    # symmetric input/output coupling between the axes (0 = fully decoupled)
    "coupling": 0.0,
}

TWO_PEAK_DEFAULTS: dict[str, Any] = {
    "highpass_corner": 0.01,  # rad/s
    "peak_omegas": (10.0, 1000.0),  # rad/s
    "peak_zeta": 0.05,
}

FLEXSTAGE_DEFAULTS: dict[str, Any] = {
    "rigid_masses": (2.0, 2.0, 2.0, 0.02, 0.02, 0.03),
    # residual decoupling error on each rigid channel's diagonal gain
    "rigid_gains": (1.0, 0.995, 1.004, 0.992, 1.006, 0.997),
    "flex_hz": 50.0,
    "flex_zeta": 0.3,
    "flex_mass": 1.0,
    "flex_gain": 1.15,
    "parasitic_hz": (606.0, 744.0),
    "parasitic_zeta": (0.01, 0.01),
    # relative participation of each parasitic mode in each of the 7 channels
    "participation": (
        (0.030, 0.027, 0.005, 0.009, 0.0072, 0.008, 0.01),
        (0.006, 0.008, 0.030, 0.0072, 0.009, 0.0255, 0.01),
    ),
    "coupling_gain": 1.0,
    # per-channel non-collocated internal mode; a residue ratio above 1 flips
    # the high-frequency sign of G_ii, which bounds the achievable crossover
    "internal_hz": 1500.0,
    "internal_zeta": 0.02,
    "internal_ratio": 2.0,
    "notch_channels": (0, 1, 2, 5),
}


@dataclass(frozen=True)
class PlantRecipe:
    kind: PlantKind
    parameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", PlantKind(self.kind))
        object.__setattr__(self, "parameters", dict(self.parameters))


@dataclass(frozen=True)
class TwoPeakSensitivity:
    """Dummy SISO sensitivity: a high-pass filter times two peak filters.

    ``S(s) = s/(s + a) * prod_k (s^2 + 2 zeta beta_k w_k s + w_k^2)/(s^2 + 2 zeta w_k s + w_k^2)``
    so ``beta_k`` sets the height of peak ``k`` (``|S(j w_k)| ~ beta_k``).
    """

    highpass_corner: float
    peak_omegas: tuple[float, float]
    peak_zeta: float

    def _parts(self, beta, s):
        s = np.asarray(s, dtype=complex)
        hp = s / (s + self.highpass_corner)
        facs = []
        for b, w in zip(beta, self.peak_omegas):
            num = s**2 + 2 * self.peak_zeta * b * w * s + w**2
            den = s**2 + 2 * self.peak_zeta * w * s + w**2
            facs.append((num, den))
        return hp, facs

    def value(self, beta, omega) -> np.ndarray:
        """``S(jw)`` as stacked ``1x1`` matrices."""
        hp, facs = self._parts(beta, 1j * np.asarray(omega, dtype=float))
        out = hp
        for num, den in facs:
            out = out * num / den
        return out[..., None, None]

    def derivative(self, beta, omega) -> list[np.ndarray]:
        """``dS/dbeta_k`` at ``jw`` as ``1x1`` matrices."""
        omega = np.asarray(omega, dtype=float)
        s = 1j * omega
        S = self.value(beta, omega)
        out = []
        for (num, _), w in zip(self._parts(beta, s)[1], self.peak_omegas):
            out.append(S * (2 * self.peak_zeta * w * s / num)[..., None, None])
        return out


def _two_axis(p: Mapping[str, Any]) -> DecoupledPlant:
    mx, my = float(p["mass_x"]), float(p["mass_y"])
    gx, gy = float(p["gain_x"]), float(p["gain_y"])
    c = float(p["coupling"])
    if mx <= 0 or my <= 0:
        raise ValueError("masses must be positive")
    P = np.array([[math.sqrt(gx), c], [c, math.sqrt(gy)]])
    Q = np.array([[math.sqrt(gx), c], [c, math.sqrt(gy)]])
    base = ModalPlant([mx, my], [0.0, 0.0], [0.0, 0.0], P, Q)
    return DecoupledPlant.identity(base, 2)


def _mixing(n: int, seed_phase: float) -> np.ndarray:
    """Deterministic well-conditioned mixing matrix (near identity plus a smooth pattern)."""
    i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    return np.eye(n) + 0.15 * np.sin(seed_phase * (i + 1) * (j + 2)) / n


def _flexstage(p: Mapping[str, Any]) -> DecoupledPlant:
    rigid_m = np.asarray(p["rigid_masses"], dtype=float)
    rigid_g = np.asarray(p["rigid_gains"], dtype=float)
    if rigid_m.shape != (6,) or rigid_g.shape != (6,):
        raise ValueError("rigid_masses and rigid_gains need 6 entries")
    if np.any(rigid_m <= 0) or np.any(rigid_g <= 0):
        raise ValueError("rigid masses and gains must be positive")
    para_hz = np.asarray(p["parasitic_hz"], dtype=float)
    para_z = np.asarray(p["parasitic_zeta"], dtype=float)
    part = np.asarray(p["participation"], dtype=float)
    n_para = para_hz.size
    if para_z.shape != (n_para,) or part.shape != (n_para, 7):
        raise ValueError("parasitic_zeta and participation must match parasitic_hz")
    if np.any(part < 0):
        raise ValueError("participation factors must be nonnegative")
    kappa = float(p["coupling_gain"])
    if kappa < 0:
        raise ValueError("coupling_gain must be nonnegative")

    w_int = HZ * float(p["internal_hz"])
    z_int = float(p["internal_zeta"])
    r_int = float(p["internal_ratio"])
    if w_int <= 0 or z_int <= 0 or r_int < 0:
        raise ValueError("internal mode needs positive frequency and damping and a nonnegative ratio")

    n_ch = 7
    n_states = n_ch + n_para + n_ch
    chan_m = np.concatenate([rigid_m, [float(p["flex_mass"])]])
    chan_g = np.concatenate([rigid_g, [float(p["flex_gain"])]])
    w_flex = HZ * float(p["flex_hz"])
    mass = np.concatenate([chan_m, np.ones(n_para), np.ones(n_ch)])
    stiffness = np.concatenate([np.zeros(6), [chan_m[6] * w_flex**2], (HZ * para_hz) ** 2, np.full(n_ch, w_int**2)])
    damping = np.concatenate(
        [np.zeros(6), [2 * float(p["flex_zeta"]) * chan_m[6] * w_flex], 2 * para_z * HZ * para_hz,
         np.full(n_ch, 2 * z_int * w_int)]
    )

    # Decoupled design: P_hat[i, i] Q_hat[i, i] = g_i; a parasitic mode r adds
    # phi_ri psi_rj / (m_r (s^2 + ...)) with phi_ri psi_ri = rho_ri g_i m_r / m_i,
    # i.e. a resonance peak rho / (2 zeta) times the rigid line at w_r.
    P_hat = np.zeros((n_states, n_ch + 1))
    Q_hat = np.zeros((n_ch, n_states))
    P_hat[np.arange(n_ch), np.arange(n_ch)] = np.sqrt(chan_g)
    Q_hat[np.arange(n_ch), np.arange(n_ch)] = np.sqrt(chan_g)
    for r in range(n_para):
        amp = np.sqrt(kappa * part[r] * chan_g / chan_m)
        # alternating signs give structured cross-coupling between channels
        sign = np.where(np.arange(n_ch) % 2 == r % 2, 1.0, -1.0)
        P_hat[n_ch + r, :n_ch] = sign * amp
        Q_hat[:n_ch, n_ch + r] = amp
    # internal modes: residue -r g_i / m_i, so above w_int G_ii ~ (1 - r) g_i / (m_i s^2)
    amp_int = np.sqrt(r_int * chan_g / chan_m)
    P_hat[n_ch + n_para + np.arange(n_ch), np.arange(n_ch)] = amp_int
    Q_hat[np.arange(n_ch), n_ch + n_para + np.arange(n_ch)] = -amp_int
    # the eighth actuator is redundant (over-actuation); it only excites mode 0
    P_hat[n_ch, n_ch] = 0.1

    T_u = _mixing(n_ch + 1, 0.7)
    T_y = _mixing(n_ch, 1.3)
    P = P_hat @ T_u
    Q = np.linalg.solve(T_y, Q_hat)
    return DecoupledPlant(ModalPlant(mass, damping, stiffness, P, Q), T_u, T_y, n_ch)


def make_plant(recipe: PlantRecipe):
    """Build the plant for ``recipe``.

    Returns a ``DecoupledPlant``, except for ``TWO_PEAK_DUMMY`` which is a
    sensitivity function with no plant/controller factorization and returns
    a ``TwoPeakSensitivity``.
    """
    kind = recipe.kind
    if kind is PlantKind.TWO_AXIS:
        return _two_axis({**TWO_AXIS_DEFAULTS, **recipe.parameters})
    if kind is PlantKind.TWO_PEAK_DUMMY:
        p = {**TWO_PEAK_DEFAULTS, **recipe.parameters}
        omegas = tuple(float(w) for w in p["peak_omegas"])
        if len(omegas) != 2 or min(omegas) <= 0:
            raise ValueError("peak_omegas needs two positive frequencies")
        if p["highpass_corner"] <= 0 or p["peak_zeta"] <= 0:
            raise ValueError("highpass_corner and peak_zeta must be positive")
        return TwoPeakSensitivity(float(p["highpass_corner"]), omegas, float(p["peak_zeta"]))
    if kind is PlantKind.FLEXSTAGE_LIKE:
        unknown = set(recipe.parameters) - set(FLEXSTAGE_DEFAULTS)
        if unknown:
            raise ValueError(f"unknown FLEXSTAGE_LIKE parameters: {sorted(unknown)}")
        return _flexstage({**FLEXSTAGE_DEFAULTS, **recipe.parameters})
    if kind is PlantKind.FROM_FILE:
        from .io import load_plant

        return load_plant(recipe.parameters["path"])
    raise ValueError(f"unknown plant kind {kind}")


def two_axis_structure(masses=(1.0, 1.0), alpha: float = 3.0, z_lp: float = 0.7) -> ControllerStructure:
    return ControllerStructure(tuple(PidLowpassSpec(m, alpha, z_lp) for m in masses))


def flexstage_structure(notches: bool = False, parameters: Mapping[str, Any] | None = None) -> ControllerStructure:
    """Controller structure for FLEXSTAGE_LIKE; notches sit on the parasitic
    resonance that dominates each notched channel."""
    p = {**FLEXSTAGE_DEFAULTS, **(parameters or {})}
    masses = list(p["rigid_masses"]) + [p["flex_mass"]]
    channels = tuple(PidLowpassSpec(float(m)) for m in masses)
    notch_list = []
    if notches:
        part = np.asarray(p["participation"], dtype=float)
        for ch in p["notch_channels"]:
            r = int(np.argmax(part[:, ch]))
            notch_list.append(NotchSpec(int(ch), HZ * float(p["parasitic_hz"][r])))
    return ControllerStructure(channels, tuple(notch_list))


def flexstage_initial_params(
    structure: ControllerStructure, omega_rigid: float = 377.0, omega_flex: float = 439.0,
    beta0: float = 0.5, zeta0: float = 0.3,
) -> ControllerParams:
    omega_c = np.array([omega_rigid] * 6 + [omega_flex])
    p = structure.n_notches
    scaling = np.concatenate([np.full(7, omega_rigid), np.ones(2 * p)])
    return ControllerParams(structure, omega_c, np.full(p, beta0), np.full(p, zeta0), scaling)
