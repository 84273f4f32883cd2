"""PMSM electrical model in the rotor-flux oriented dq frame.

Drive constants, inverter elementary vectors, the dq voltage produced by a
held switching state, the continuous-time right-hand sides, and the 5x5
autonomous-system matrices for the state ``[i_d, i_q, sin eps, cos eps, 1]``.

All functions broadcast over numpy arrays so the simulator can run many
closed loops at once.
"""
from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, fields

import numpy as np

# Switching states; row n-1 holds (s_a, s_b, s_c) of vector n.
SWITCHING_TABLE = np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, +1, +1],
        [-1, -1, +1],
        [+1, -1, +1],
        [+1, +1, +1],
    ],
    dtype=int,
)

VECTORS = tuple(range(1, 9))
ACTIVE_SET = tuple(range(1, 8))  # vectors the controller and the data use; v8 duplicates v1


def wrap_angle(eps):
    """Map angles to (-pi, pi]."""
    eps = np.asarray(eps, dtype=float)
    wrapped = math.pi - np.mod(math.pi - eps, 2.0 * math.pi)
    wrapped = np.where((eps > -math.pi) & (eps <= math.pi), eps, wrapped)  # in-range values pass exactly
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class DriveParameters:
    """Nameplate constants of the motor and inverter (SI units)."""

    r_s: float = 0.018  # stator resistance, Ohm
    l_d: float = 370e-6  # d inductance, H
    l_q: float = 1200e-6  # q inductance, H
    psi_p: float = 0.066  # permanent magnet flux, V*s
    pole_pairs: int = 3
    u_dc: float = 300.0  # DC-link voltage, V
    i_max: float = 240.0  # max length of the dq current vector, A

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"drive parameter {f.name} must be finite and > 0, got {value!r}")
        if int(self.pole_pairs) != self.pole_pairs or self.pole_pairs < 1:
            raise ValueError(f"pole_pairs must be an integer >= 1, got {self.pole_pairs!r}")


@dataclass(frozen=True)
class OperatingConditions:
    n_me: float = 1000.0  # mechanical speed, 1/min
    t_s: float = 50e-6  # controller cycle time, s
    f_sw_max: float = 10e3  # Hz
    horizon: int = 1
    pole_pairs: int = 3

    def __post_init__(self):
        if not self.t_s > 0:
            raise ValueError(f"t_s must be > 0, got {self.t_s!r}")
        if self.horizon != 1:
            raise ValueError("only a prediction horizon of 1 is supported")
        if self.f_sw_max <= 0:
            raise ValueError("f_sw_max must be > 0")

    @property
    def omega_el(self) -> float:
        """Electrical angular frequency in rad/s."""
        return 2.0 * math.pi * self.n_me / 60.0 * self.pole_pairs


@dataclass(frozen=True)
class SwitchingState:
    n: int
    s_a: int
    s_b: int
    s_c: int


@dataclass(frozen=True)
class StateVector:
    """x = [i_d, i_q, sin eps, cos eps, 1]."""

    i_d: float
    i_q: float
    sin_eps: float
    cos_eps: float
    one: float = 1.0

    def __post_init__(self):
        if self.one != 1.0:
            raise ValueError("the constant element of a state vector must be 1")

    @classmethod
    def from_angle(cls, i_d: float, i_q: float, eps: float) -> StateVector:
        eps = wrap_angle(eps)
        return cls(float(i_d), float(i_q), math.sin(eps), math.cos(eps))

    @property
    def angle(self) -> float:
        return math.atan2(self.sin_eps, self.cos_eps)

    def as_array(self) -> np.ndarray:
        return np.array([self.i_d, self.i_q, self.sin_eps, self.cos_eps, self.one])

    @classmethod
    def from_array(cls, x) -> StateVector:
        x = np.asarray(x, dtype=float)
        if x.shape != (5,):
            raise ValueError(f"state vector needs 5 elements, got shape {x.shape}")
        return cls(*(float(v) for v in x))


def state_columns(i_d, i_q, eps) -> np.ndarray:
    """Stack states as columns of a (5, N) array."""
    i_d, i_q, eps = np.broadcast_arrays(
        np.asarray(i_d, float), np.asarray(i_q, float), np.asarray(eps, float)
    )
    return np.stack([i_d, i_q, np.sin(eps), np.cos(eps), np.ones_like(i_d)])


@dataclass(frozen=True)
class SystemMatrix:
    a: np.ndarray
    n: int


def _check_index(n, allowed=VECTORS):
    arr = np.asarray(n)
    if arr.dtype.kind not in "iu" and not np.all(np.mod(arr, 1) == 0):
        raise ValueError(f"vector index must be an integer, got {n!r}")
    if np.any(arr < allowed[0]) or np.any(arr > allowed[-1]):
        raise ValueError(f"vector index out of range {allowed[0]}..{allowed[-1]}: {n!r}")
    return arr.astype(int)


def elementary_vector(n: int) -> SwitchingState:
    n = int(_check_index(n))
    s_a, s_b, s_c = (int(s) for s in SWITCHING_TABLE[n - 1])
    return SwitchingState(n, s_a, s_b, s_c)


def alpha_beta_voltage(n, u_dc: float):
    """Stator voltage of vector n in the stationary frame, 2/3-scaled Clarke."""
    n = _check_index(n)
    s = SWITCHING_TABLE[n - 1]
    s_a, s_b, s_c = s[..., 0], s[..., 1], s[..., 2]
    u_alpha = u_dc / 3.0 * (s_a - 0.5 * s_b - 0.5 * s_c)
    u_beta = u_dc / 3.0 * (math.sqrt(3.0) / 2.0) * (s_b - s_c)
    return u_alpha, u_beta


def dq_voltage(sw, eps_el, u_dc: float):
    """Voltage (u_d, u_q) applied by a switching state at rotor angle eps_el.

    ``sw`` is a SwitchingState or a vector index (array of indices allowed).
    """
    n = sw.n if isinstance(sw, SwitchingState) else sw
    u_alpha, u_beta = alpha_beta_voltage(n, u_dc)
    c, s = np.cos(eps_el), np.sin(eps_el)
    return c * u_alpha + s * u_beta, -s * u_alpha + c * u_beta


def build_system_matrix(p: DriveParameters, omega_el: float, n: int) -> SystemMatrix:
    """Autonomous-system matrix A_n acting on [i_d, i_q, sin, cos, 1].

    The voltage columns are taken from the same rotation as ``dq_voltage`` so
    that rows 1-2 of ``A_n @ x`` reproduce ``basic_ode_rhs`` exactly.
    """
    if p.l_d <= 0 or p.l_q <= 0:
        raise ValueError("inductances must be positive")
    n = int(_check_index(n))
    u_alpha, u_beta = alpha_beta_voltage(n, p.u_dc)
    w = omega_el
    a = np.zeros((5, 5))
    a[0, 0] = -p.r_s / p.l_d
    a[0, 1] = p.l_q / p.l_d * w
    a[0, 2] = u_beta / p.l_d
    a[0, 3] = u_alpha / p.l_d
    a[1, 0] = -p.l_d / p.l_q * w
    a[1, 1] = -p.r_s / p.l_q
    a[1, 2] = -u_alpha / p.l_q
    a[1, 3] = u_beta / p.l_q
    a[1, 4] = -p.psi_p / p.l_q * w
    a[2, 3] = w
    a[3, 2] = -w
    a.setflags(write=False)
    return SystemMatrix(a, n)


def system_matrices(p: DriveParameters, omega_el: float) -> dict[int, np.ndarray]:
    return {n: build_system_matrix(p, omega_el, n).a for n in VECTORS}


def basic_ode_rhs(p: DriveParameters, omega_el, u_dq, i_dq):
    """Current derivatives of the constant-inductance model."""
    u_d, u_q = u_dq
    i_d, i_q = i_dq
    did = (-p.r_s * i_d + omega_el * p.l_q * i_q + u_d) / p.l_d
    diq = (-p.r_s * i_q - omega_el * p.l_d * i_d + u_q - p.psi_p * omega_el) / p.l_q
    return did, diq


class FluxMap(ABC):
    """Flux linkage psi_dq(i_d, i_q, eps) with analytic derivatives."""

    @abstractmethod
    def psi(self, i_d, i_q, eps):
        """Return (psi_d, psi_q)."""

    @abstractmethod
    def jacobian(self, i_d, i_q, eps):
        """Return (dpsi_d/di_d, dpsi_d/di_q, dpsi_q/di_d, dpsi_q/di_q)."""

    @abstractmethod
    def dpsi_deps(self, i_d, i_q, eps):
        """Return (dpsi_d/deps, dpsi_q/deps)."""


@dataclass(frozen=True)
class LinearFlux(FluxMap):
    l_d: float
    l_q: float
    psi_p: float

    @classmethod
    def from_parameters(cls, p: DriveParameters) -> LinearFlux:
        return cls(p.l_d, p.l_q, p.psi_p)

    def psi(self, i_d, i_q, eps):
        return self.l_d * i_d + self.psi_p, self.l_q * i_q

    def jacobian(self, i_d, i_q, eps):
        one = np.ones_like(np.asarray(i_d, float))
        return self.l_d * one, 0.0 * one, 0.0 * one, self.l_q * one

    def dpsi_deps(self, i_d, i_q, eps):
        zero = np.zeros_like(np.asarray(i_d, float))
        return zero, zero


@dataclass(frozen=True)
class SaturatedFlux(FluxMap):
    """Self-saturating inductances plus a sixth-harmonic ripple on the magnet flux.

    psi_d = L_d i_d / (1 + |i_d|/i_sat) + psi_p (1 + ripple cos 6 eps)
    psi_q = L_q i_q / (1 + |i_q|/i_sat)
    """

    l_d: float
    l_q: float
    psi_p: float
    i_sat: float = 300.0
    ripple: float = 0.01

    def __post_init__(self):
        if not self.i_sat > 0:
            raise ValueError("i_sat must be > 0")

    @classmethod
    def from_parameters(cls, p: DriveParameters, i_sat: float = 300.0, ripple: float = 0.01):
        return cls(p.l_d, p.l_q, p.psi_p, i_sat, ripple)

    def psi(self, i_d, i_q, eps):
        psi_d = self.l_d * i_d / (1.0 + np.abs(i_d) / self.i_sat)
        psi_d = psi_d + self.psi_p * (1.0 + self.ripple * np.cos(6.0 * eps))
        psi_q = self.l_q * i_q / (1.0 + np.abs(i_q) / self.i_sat)
        return psi_d, psi_q

    def jacobian(self, i_d, i_q, eps):
        j_dd = self.l_d / (1.0 + np.abs(i_d) / self.i_sat) ** 2
        j_qq = self.l_q / (1.0 + np.abs(i_q) / self.i_sat) ** 2
        zero = np.zeros_like(np.asarray(j_dd, float))
        return j_dd, zero, zero, j_qq

    def dpsi_deps(self, i_d, i_q, eps):
        zero = np.zeros_like(np.asarray(i_d, float) + np.asarray(eps, float))
        return zero - 6.0 * self.ripple * self.psi_p * np.sin(6.0 * eps), zero


def make_flux(kind: str, p: DriveParameters, i_sat: float = 300.0, ripple: float = 0.01) -> FluxMap:
    if kind == "linear":
        return LinearFlux.from_parameters(p)
    if kind == "saturated":
        return SaturatedFlux.from_parameters(p, i_sat=i_sat, ripple=ripple)
    raise ValueError(f"unknown flux map {kind!r} (expected 'linear' or 'saturated')")


def general_ode_rhs(p: DriveParameters, flux: FluxMap, omega_el, u_dq, i_dq, eps_el):
    """Current derivatives for an arbitrary flux map.

    Solves u = R i + w J psi + dpsi/dt with
    dpsi/dt = (dpsi/di) di/dt + w dpsi/deps for di/dt.
    """
    u_d, u_q = u_dq
    i_d, i_q = i_dq
    psi_d, psi_q = flux.psi(i_d, i_q, eps_el)
    j_dd, j_dq, j_qd, j_qq = flux.jacobian(i_d, i_q, eps_el)
    de_d, de_q = flux.dpsi_deps(i_d, i_q, eps_el)
    b_d = u_d - p.r_s * i_d + omega_el * psi_q - omega_el * de_d
    b_q = u_q - p.r_s * i_q - omega_el * psi_d - omega_el * de_q
    det = j_dd * j_qq - j_dq * j_qd
    ok = np.abs(det) > 1e-12 * (np.abs(j_dd * j_qq) + np.abs(j_dq * j_qd))
    if not np.all(ok):
        bad = np.flatnonzero(~np.atleast_1d(ok))[0]
        raise FloatingPointError(
            f"singular flux Jacobian at i_d={np.atleast_1d(i_d)[bad]}, "
            f"i_q={np.atleast_1d(i_q)[bad]}, eps={np.atleast_1d(eps_el)[bad]}"
        )
    did = (j_qq * b_d - j_dq * b_q) / det
    diq = (j_dd * b_q - j_qd * b_d) / det
    return did, diq


_PARAM_KEYS = {f.name for f in fields(DriveParameters)}
_COND_KEYS = {f.name for f in fields(OperatingConditions)} - {"pole_pairs"}


def read_key_values(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {raw.rstrip()!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            out[key] = value
    return out


def load_drive_config(path) -> tuple[DriveParameters, OperatingConditions]:
    """Drive parameters and operating conditions from a key-value file.

    Keys mirror the dataclass field names; unknown keys are rejected.
    """
    raw = read_key_values(path)
    unknown = set(raw) - _PARAM_KEYS - _COND_KEYS
    if unknown:
        raise ValueError(f"unknown configuration keys: {sorted(unknown)}")
    p_kw = {k: (int(v) if k == "pole_pairs" else float(v)) for k, v in raw.items() if k in _PARAM_KEYS}
    c_kw = {k: (int(v) if k == "horizon" else float(v)) for k, v in raw.items() if k in _COND_KEYS}
    params = DriveParameters(**p_kw)
    cond = OperatingConditions(pole_pairs=params.pole_pairs, **c_kw)
    return params, cond
