"""Decentralized PID + low-pass controllers with optional notch filters.

Each channel ``i`` uses

    C_i(s) = Kp (s + wI)/s (s/wD + 1) / (s^2/wlp^2 + 2 z s/wlp + 1) * prod N_j(s)

with ``Kp = m wc^2/alpha``, ``wI = wc/alpha^2``, ``wD = wc/alpha``,
``wlp = alpha wc`` and notches

    N(beta, zeta, s) = (s^2 + 2 beta zeta wn s + wn^2) / (s^2 + 2 zeta wn s + wn^2).

The decision vector is ``theta = [wc_1..wc_n, beta_1..beta_p, zeta_1..zeta_p]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .lti import FrequencyResponse, StateSpace

__all__ = [
    "PidLowpassSpec",
    "NotchSpec",
    "ControllerStructure",
    "ControllerParams",
    "eval_controller",
    "controller_diag",
    "controller_param_derivative",
    "controller_theta_derivatives",
    "controller_freq_derivative",
    "controller_state_space",
    "scale_params",
    "unscale_params",
]


@dataclass(frozen=True)
class PidLowpassSpec:
    modal_mass: float
    alpha: float = 3.0
    z_lp: float = 0.7

    def __post_init__(self):
        if not self.modal_mass > 0:
            raise ValueError("modal_mass must be positive")
        if not self.alpha > 1:
            raise ValueError("alpha must be > 1")
        if not 0 < self.z_lp < 1:
            raise ValueError("z_lp must be in (0, 1)")


@dataclass(frozen=True)
class NotchSpec:
    channel: int
    omega_n: float

    def __post_init__(self):
        if not self.omega_n > 0:
            raise ValueError("notch frequency must be positive")
        if self.channel < 0:
            raise ValueError("notch channel must be nonnegative")


@dataclass(frozen=True)
class ControllerStructure:
    """Fixed metadata: one PID spec per channel plus the notch list."""

    channels: tuple[PidLowpassSpec, ...]
    notches: tuple[NotchSpec, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        object.__setattr__(self, "notches", tuple(self.notches))
        for notch in self.notches:
            if notch.channel >= self.n_channels:
                raise ValueError(f"notch channel {notch.channel} out of range for {self.n_channels} channels")

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    @property
    def n_notches(self) -> int:
        return len(self.notches)

    @property
    def n_params(self) -> int:
        return self.n_channels + 2 * self.n_notches

    def param_channel(self, index: int) -> int:
        """Channel owning decision variable ``index``."""
        n, p = self.n_channels, self.n_notches
        if index < n:
            return index
        if index < n + p:
            return self.notches[index - n].channel
        if index < n + 2 * p:
            return self.notches[index - n - p].channel
        raise IndexError(f"parameter index {index} out of range for m={self.n_params}")

    def param_names(self) -> list[str]:
        n, p = self.n_channels, self.n_notches
        return [f"omega_c[{i}]" for i in range(n)] + [f"beta[{j}]" for j in range(p)] + [f"zeta[{j}]" for j in range(p)]

    @property
    def masses(self) -> np.ndarray:
        return np.array([c.modal_mass for c in self.channels])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([c.alpha for c in self.channels])

    @property
    def z_lps(self) -> np.ndarray:
        return np.array([c.z_lp for c in self.channels])


@dataclass(frozen=True)
class ControllerParams:
    structure: ControllerStructure
    omega_c: np.ndarray
    beta: np.ndarray
    zeta: np.ndarray
    scaling: np.ndarray | None = None

    def __post_init__(self):
        s = self.structure
        omega_c = np.atleast_1d(np.asarray(self.omega_c, dtype=float))
        beta = np.atleast_1d(np.asarray(self.beta, dtype=float)).reshape(-1)
        zeta = np.atleast_1d(np.asarray(self.zeta, dtype=float)).reshape(-1)
        if omega_c.shape != (s.n_channels,):
            raise ValueError(f"expected {s.n_channels} omega_c values, got {omega_c.size}")
        if beta.shape != (s.n_notches,) or zeta.shape != (s.n_notches,):
            raise ValueError(f"expected {s.n_notches} beta and zeta values")
        if np.any(~(omega_c > 0)):
            raise ValueError("omega_c must be positive")
        if np.any(~(zeta > 0)):
            raise ValueError("notch zeta must be positive")
        if np.any(~(beta > 0)):
            raise ValueError("notch beta must be positive")
        scaling = self.scaling
        if scaling is None:
            scaling = np.ones(s.n_params)
        scaling = np.asarray(scaling, dtype=float)
        if scaling.shape != (s.n_params,) or np.any(~(scaling > 0)):
            raise ValueError(f"scaling must be {s.n_params} positive values")
        for name, value in (("omega_c", omega_c), ("beta", beta), ("zeta", zeta), ("scaling", scaling)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([self.omega_c, self.beta, self.zeta])

    @classmethod
    def from_theta(cls, structure: ControllerStructure, theta, scaling=None) -> "ControllerParams":
        theta = np.asarray(theta, dtype=float)
        n, p = structure.n_channels, structure.n_notches
        if theta.shape != (n + 2 * p,):
            raise ValueError(f"theta must have length {n + 2 * p}")
        return cls(structure, theta[:n], theta[n : n + p], theta[n + p :], scaling)

    def with_theta(self, theta) -> "ControllerParams":
        return ControllerParams.from_theta(self.structure, theta, self.scaling)

    def scaled_theta(self) -> np.ndarray:
        return scale_params(self.theta, self.scaling)


def scale_params(raw, scaling) -> np.ndarray:
    """Physical -> internal (normalized) decision variables."""
    return np.asarray(raw, dtype=float) / np.asarray(scaling, dtype=float)


def unscale_params(scaled, scaling) -> np.ndarray:
    """Internal -> physical decision variables."""
    return np.asarray(scaled, dtype=float) * np.asarray(scaling, dtype=float)


def _pid_factors(params: ControllerParams, s: np.ndarray):
    st = params.structure
    m, a, z = st.masses, st.alphas, st.z_lps
    wc = params.omega_c
    kp = m * wc**2 / a
    wi = wc / a**2
    wd = wc / a
    wlp = a * wc
    s = s[..., None]
    integ = (s + wi) / s
    lead = s / wd + 1.0
    lp_den = s**2 / wlp**2 + 2.0 * z * s / wlp + 1.0
    return kp, wi, wd, wlp, integ, lead, lp_den


def _notch_parts(omega_n, beta, zeta, s):
    num = s**2 + 2.0 * beta * zeta * omega_n * s + omega_n**2
    den = s**2 + 2.0 * zeta * omega_n * s + omega_n**2
    return num, den


def controller_diag(params: ControllerParams, omega) -> np.ndarray:
    """Channel values ``C_i(jw)``, shape ``omega.shape + (n,)``."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega == 0):
        raise ValueError("controller has an integrator pole at omega = 0")
    s = 1j * omega
    kp, _, _, _, integ, lead, lp_den = _pid_factors(params, s)
    c = kp * integ * lead / lp_den
    for j, notch in enumerate(params.structure.notches):
        num, den = _notch_parts(notch.omega_n, params.beta[j], params.zeta[j], s)
        c[..., notch.channel] *= num / den
    return c


def _diag_embed(values: np.ndarray) -> np.ndarray:
    n = values.shape[-1]
    out = np.zeros(values.shape + (n,), dtype=complex)
    idx = np.arange(n)
    out[..., idx, idx] = values
    return out


def eval_controller(params: ControllerParams, omega) -> FrequencyResponse:
    omega = np.asarray(omega, dtype=float)
    return FrequencyResponse(omega, _diag_embed(controller_diag(params, omega)))


def controller_theta_derivatives(params: ControllerParams, omega) -> tuple[np.ndarray, np.ndarray]:
    """All analytic parameter derivatives at once.

    Returns ``(channels, values)``: ``channels[i]`` is the channel owning
    parameter ``i`` and ``values[i]`` (shape ``omega.shape``) is
    ``dC_channel/dtheta_i``.
    """
    omega = np.asarray(omega, dtype=float)
    st = params.structure
    n, p = st.n_channels, st.n_notches
    s = 1j * omega
    c = controller_diag(params, omega)
    a, z = st.alphas, st.z_lps
    wc = params.omega_c
    _, wi, wd, wlp, integ, lead, lp_den = _pid_factors(params, s)
    sc = s[..., None]
    # logarithmic derivative of every PID factor w.r.t. wc
    dlog = (
        2.0 / wc
        + (1.0 / a**2) / (sc + wi)
        + (-sc / (wd * wc)) / lead
        - (-2.0 * sc**2 / (wlp**2 * wc) - 2.0 * z * sc / (wlp * wc)) / lp_den
    )
    values = np.empty((n + 2 * p,) + omega.shape, dtype=complex)
    values[:n] = np.moveaxis(c * dlog, -1, 0)
    channels = np.array([st.param_channel(i) for i in range(n + 2 * p)], dtype=int)
    for j, notch in enumerate(st.notches):
        wn, b, zt = notch.omega_n, params.beta[j], params.zeta[j]
        num, den = _notch_parts(wn, b, zt, s)
        ch = c[..., notch.channel]
        values[n + j] = ch * (2.0 * zt * wn * s) / num
        values[n + p + j] = ch * ((2.0 * b * wn * s) / num - (2.0 * wn * s) / den)
    return channels, values


def controller_param_derivative(params: ControllerParams, omega, param_index: int) -> FrequencyResponse:
    """``dC(jw)/dtheta_i`` as a diagonal matrix (nonzero on the owning channel only)."""
    st = params.structure
    if not 0 <= param_index < st.n_params:
        raise IndexError(f"parameter index {param_index} out of range for m={st.n_params}")
    omega = np.asarray(omega, dtype=float)
    channels, values = controller_theta_derivatives(params, omega)
    diag = np.zeros(omega.shape + (st.n_channels,), dtype=complex)
    diag[..., channels[param_index]] = values[param_index]
    return FrequencyResponse(omega, _diag_embed(diag))


def controller_freq_derivative(params: ControllerParams, omega) -> np.ndarray:
    """Channel values of ``dC(jw)/dw`` (``j dC/ds``), shape ``omega.shape + (n,)``."""
    omega = np.asarray(omega, dtype=float)
    st = params.structure
    s = 1j * omega
    c = controller_diag(params, omega)
    z = st.z_lps
    _, wi, wd, wlp, integ, lead, lp_den = _pid_factors(params, s)
    sc = s[..., None]
    dlog = 1.0 / (sc + wi) - 1.0 / sc + (1.0 / wd) / lead - (2.0 * sc / wlp**2 + 2.0 * z / wlp) / lp_den
    dlog = np.array(dlog, dtype=complex)
    for j, notch in enumerate(st.notches):
        wn, b, zt = notch.omega_n, params.beta[j], params.zeta[j]
        num, den = _notch_parts(wn, b, zt, s)
        dlog[..., notch.channel] += (2.0 * s + 2.0 * b * zt * wn) / num - (2.0 * s + 2.0 * zt * wn) / den
    return 1j * c * dlog


def _series(first: StateSpace, second: StateSpace) -> StateSpace:
    A = np.block([[first.A, np.zeros((first.A.shape[0], second.A.shape[0]))], [second.B @ first.C, second.A]])
    B = np.vstack([first.B, second.B @ first.D])
    C = np.hstack([second.D @ first.C, second.C])
    D = second.D @ first.D
    return StateSpace(A, B, C, D)


def _channel_state_space(params: ControllerParams, channel: int) -> StateSpace:
    st = params.structure
    spec = st.channels[channel]
    wc = params.omega_c[channel]
    a, z = spec.alpha, spec.z_lp
    kp = spec.modal_mass * wc**2 / a
    wi, wd, wlp = wc / a**2, wc / a, a * wc
    # (s + wI)/s = 1 + wI/s
    sys = StateSpace(np.zeros((1, 1)), np.ones((1, 1)), np.array([[wi]]), np.ones((1, 1)))
    lead_lp = StateSpace(
        np.array([[0.0, 1.0], [-(wlp**2), -2.0 * z * wlp]]),
        np.array([[0.0], [1.0]]),
        kp * wlp**2 * np.array([[1.0, 1.0 / wd]]),
        np.zeros((1, 1)),
    )
    sys = _series(sys, lead_lp)
    for j, notch in enumerate(st.notches):
        if notch.channel != channel:
            continue
        wn, b, zt = notch.omega_n, params.beta[j], params.zeta[j]
        sys = _series(
            sys,
            StateSpace(
                np.array([[0.0, 1.0], [-(wn**2), -2.0 * zt * wn]]),
                np.array([[0.0], [1.0]]),
                np.array([[0.0, 2.0 * (b - 1.0) * zt * wn]]),
                np.ones((1, 1)),
            ),
        )
    return sys


def controller_state_space(params: ControllerParams) -> StateSpace:
    """Block-diagonal realization of ``C(s)``."""
    blocks: Sequence[StateSpace] = [_channel_state_space(params, i) for i in range(params.structure.n_channels)]
    nx = sum(b.A.shape[0] for b in blocks)
    n = len(blocks)
    A = np.zeros((nx, nx))
    B = np.zeros((nx, n))
    C = np.zeros((n, nx))
    D = np.zeros((n, n))
    k = 0
    for i, b in enumerate(blocks):
        r = b.A.shape[0]
        A[k : k + r, k : k + r] = b.A
        B[k : k + r, i] = b.B[:, 0]
        C[i, k : k + r] = b.C[0]
        D[i, i] = b.D[0, 0]
        k += r
    return StateSpace(A, B, C, D)
