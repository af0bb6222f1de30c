"""Modal second-order plants, decoupling, and frequency responses.

A plant is ``M x'' + D x' + K x = P u``, ``y = Q x`` with diagonal ``M, D, K``.
Decoupling transforms give ``P_hat = P T_u^-1`` and ``Q_hat = T_y Q``; the
controlled plant ``G(s)`` uses the first ``n_channels`` columns of ``P_hat``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

__all__ = [
    "ModalPlant",
    "DecoupledPlant",
    "FrequencyResponse",
    "StateSpace",
    "SingularFrequencyError",
    "build_state_space",
    "eval_plant",
    "eval_plant_at",
    "eval_plant_derivative",
    "eval_loop",
    "eval_sensitivity",
    "ss_response",
]


class SingularFrequencyError(ValueError):
    """A frequency response matrix is singular at the requested frequency."""

    def __init__(self, message: str, omega: float | None = None):
        super().__init__(message)
        self.omega = omega


def _as_diag_vector(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim == 2:
        if a.shape[0] != a.shape[1] or np.any(a - np.diag(np.diag(a))):
            raise ValueError(f"{name} must be a square diagonal matrix")
        a = np.diag(a).copy()
    if a.ndim != 1:
        raise ValueError(f"{name} must be a vector or a diagonal matrix")
    return a


@dataclass(frozen=True)
class ModalPlant:
    """Second-order modal model. ``mass``, ``damping`` and ``stiffness`` hold the
    diagonals of M, D and K."""

    mass: np.ndarray
    damping: np.ndarray
    stiffness: np.ndarray
    P: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        mass = _as_diag_vector(self.mass, "M")
        damping = _as_diag_vector(self.damping, "D")
        stiffness = _as_diag_vector(self.stiffness, "K")
        P = np.atleast_2d(np.asarray(self.P, dtype=float))
        Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        n = mass.size
        if damping.size != n or stiffness.size != n:
            raise ValueError("M, D, K must have the same size")
        if np.any(mass <= 0):
            raise ValueError("modal masses must be strictly positive (singular M)")
        if np.any(damping < 0) or np.any(stiffness < 0):
            raise ValueError("modal damping and stiffness must be nonnegative")
        if P.shape[0] != n:
            raise ValueError(f"P must have {n} rows, got {P.shape[0]}")
        if Q.shape[1] != n:
            raise ValueError(f"Q must have {n} columns, got {Q.shape[1]}")
        for name, value in (("mass", mass), ("damping", damping), ("stiffness", stiffness), ("P", P), ("Q", Q)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_states(self) -> int:
        return self.mass.size

    @property
    def n_inputs(self) -> int:
        return self.P.shape[1]

    @property
    def n_outputs(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class DecoupledPlant:
    base: ModalPlant
    T_u: np.ndarray
    T_y: np.ndarray
    n_channels: int
    P_hat: np.ndarray = field(init=False, repr=False)
    Q_hat: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        T_u = np.atleast_2d(np.asarray(self.T_u, dtype=float))
        T_y = np.atleast_2d(np.asarray(self.T_y, dtype=float))
        n = int(self.n_channels)
        base = self.base
        if T_u.shape != (base.n_inputs, base.n_inputs):
            raise ValueError(f"T_u must be {base.n_inputs}x{base.n_inputs}, got {T_u.shape}")
        cond = np.linalg.cond(T_u)
        if not np.isfinite(cond) or cond > 1e12:
            raise ValueError(f"T_u is not invertible (condition number {cond:.3g})")
        if T_y.shape != (n, base.n_outputs):
            raise ValueError(f"T_y must be {n}x{base.n_outputs}, got {T_y.shape}")
        if n < 1 or n > base.n_inputs:
            raise ValueError(f"n_channels must be in [1, {base.n_inputs}]")
        P_hat = np.linalg.solve(T_u.T, base.P.T).T[:, :n]
        Q_hat = T_y @ base.Q
        for name, value in (("T_u", T_u), ("T_y", T_y), ("P_hat", P_hat), ("Q_hat", Q_hat)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        object.__setattr__(self, "n_channels", n)

    @classmethod
    def identity(cls, base: ModalPlant, n_channels: int | None = None) -> "DecoupledPlant":
        """Plant whose modal input/output maps are already decoupled."""
        n = base.n_outputs if n_channels is None else n_channels
        return cls(base, np.eye(base.n_inputs), np.eye(n, base.n_outputs), n)

    @property
    def mass(self) -> np.ndarray:
        return self.base.mass

    @property
    def damping(self) -> np.ndarray:
        return self.base.damping

    @property
    def stiffness(self) -> np.ndarray:
        return self.base.stiffness


@dataclass(frozen=True)
class FrequencyResponse:
    """Samples of a square transfer matrix.

    ``omega`` is a scalar or a 1-D array; ``value`` has shape ``(n, n)`` or
    ``(N, n, n)`` to match.
    """

    omega: np.ndarray | float
    value: np.ndarray

    @property
    def n(self) -> int:
        return self.value.shape[-1]


@dataclass(frozen=True)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def response(self, s) -> np.ndarray:
        return ss_response(self, s)


def build_state_space(
    plant: DecoupledPlant, velocity_block: Literal["damping", "stiffness"] = "damping"
) -> StateSpace:
    """First-order realization with state ``[x, x']``.

    ``velocity_block="stiffness"`` reproduces a misprinted variant of the
    realization with ``-M^-1 K`` in the velocity column; it exists only so
    tests can show it disagrees with the modal form.
    """
    m, d, k = plant.mass, plant.damping, plant.stiffness
    n = m.size
    stiff = np.diag(-k / m)
    if velocity_block == "damping":
        vel = np.diag(-d / m)
    elif velocity_block == "stiffness":
        vel = stiff.copy()
    else:
        raise ValueError(f"unknown velocity_block {velocity_block!r}")
    A = np.block([[np.zeros((n, n)), np.eye(n)], [stiff, vel]])
    B = np.vstack([np.zeros_like(plant.P_hat), plant.P_hat / m[:, None]])
    C = np.hstack([plant.Q_hat, np.zeros_like(plant.Q_hat)])
    D = np.zeros((plant.n_channels, plant.n_channels))
    return StateSpace(A, B, C, D)


def ss_response(sys: StateSpace, s) -> np.ndarray:
    """``C (sI - A)^-1 B + D`` at complex ``s`` (scalar or 1-D array)."""
    s = np.asarray(s, dtype=complex)
    eye = np.eye(sys.A.shape[0])
    R = s[..., None, None] * eye - sys.A
    return sys.C @ np.linalg.solve(R, np.broadcast_to(sys.B, R.shape[:-2] + sys.B.shape)) + sys.D


def _modal_denominator(plant: DecoupledPlant, s: np.ndarray) -> np.ndarray:
    return s[..., None] ** 2 * plant.mass + s[..., None] * plant.damping + plant.stiffness


def eval_plant_at(plant: DecoupledPlant, s) -> np.ndarray:
    """G(s) at arbitrary complex ``s``; used directly by tests for conjugate symmetry."""
    s = np.asarray(s, dtype=complex)
    den = _modal_denominator(plant, s)
    if np.any(den == 0):
        raise SingularFrequencyError("modal resolvent is singular (undamped resonance or s = 0 rigid mode)")
    return (plant.Q_hat * (1.0 / den)[..., None, :]) @ plant.P_hat


def _check_omega(omega) -> np.ndarray:
    omega = np.asarray(omega, dtype=float)
    if np.any(~(omega > 0)):
        raise ValueError("frequencies must be strictly positive")
    return omega


def eval_plant(plant: DecoupledPlant, omega) -> FrequencyResponse:
    """``G(jw) = Q_hat (-w^2 M + jw D + K)^-1 P_hat`` from the modal data."""
    omega = _check_omega(omega)
    try:
        value = eval_plant_at(plant, 1j * omega)
    except SingularFrequencyError as exc:
        bad = omega if omega.ndim == 0 else omega[np.any(_modal_denominator(plant, 1j * omega) == 0, axis=-1)][0]
        raise SingularFrequencyError(f"plant has an undamped resonance at omega={float(bad):.6g} rad/s", float(bad)) from exc
    return FrequencyResponse(omega, value)


def eval_plant_derivative(plant: DecoupledPlant, omega) -> np.ndarray:
    """Analytic ``dG(jw)/dw``: derivative of the diagonal modal resolvent."""
    omega = _check_omega(omega)
    s = 1j * omega
    den = _modal_denominator(plant, s)
    dden = -2.0 * omega[..., None] * plant.mass + 1j * plant.damping
    return (plant.Q_hat * (-dden / den**2)[..., None, :]) @ plant.P_hat


def eval_loop(plant_eval: FrequencyResponse, controller_eval: FrequencyResponse) -> FrequencyResponse:
    """``L = G C``."""
    G, C = plant_eval.value, controller_eval.value
    if G.shape[-1] != C.shape[-2]:
        raise ValueError(f"dimension mismatch: G is {G.shape[-2:]}, C is {C.shape[-2:]}")
    return FrequencyResponse(plant_eval.omega, G @ C)


def eval_sensitivity(loop_eval: FrequencyResponse, rcond: float = 1e-13) -> FrequencyResponse:
    """``S = (I + L)^-1``; raises when ``I + L`` is numerically singular."""
    L = loop_eval.value
    n = L.shape[-1]
    IL = np.eye(n) + L
    s = np.linalg.svd(IL, compute_uv=False)
    bad = s[..., -1] <= rcond * np.maximum(s[..., 0], 1.0)
    if np.any(bad):
        omega = np.asarray(loop_eval.omega)
        w = float(omega if omega.ndim == 0 else omega[bad][0])
        raise SingularFrequencyError(
            f"I + L is singular at omega={w:.6g} rad/s (closed-loop pole on the imaginary axis)", w
        )
    return FrequencyResponse(loop_eval.omega, np.linalg.inv(IL))
