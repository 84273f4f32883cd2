"""Ground-truth plant: RK4 integration over one controller cycle, and
closed-loop dataset generation in the sample schema."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dataset import Dataset
from .machine import (
    DriveParameters,
    FluxMap,
    OperatingConditions,
    alpha_beta_voltage,
    general_ode_rhs,
    make_flux,
    wrap_angle,
)


class IntegrationError(RuntimeError):
    """The simulated currents left the plausible range (unstable plant or step)."""


@dataclass(frozen=True)
class PlantConfig:
    params: DriveParameters = DriveParameters()
    cond: OperatingConditions = OperatingConditions()
    flux: str = "saturated"  # "linear" or "saturated"
    i_sat: float = 300.0
    ripple: float = 0.01
    substeps: int = 10
    noise_sigma: float = 0.1  # current measurement noise, A
    seed: int = 0
    flux_map: FluxMap = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ValueError("substeps must be an integer >= 1")
        if not self.noise_sigma >= 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.cond.pole_pairs != self.params.pole_pairs:
            raise ValueError("pole pair count differs between parameters and operating conditions")
        object.__setattr__(self, "flux_map", make_flux(self.flux, self.params, self.i_sat, self.ripple))


def integrate_cycle(cfg: PlantConfig, i_d, i_q, eps, n):
    """Hold vector ``n`` for one cycle T_s; returns (i_d, i_q, eps) at the end.

    Classical RK4 with ``cfg.substeps`` equal steps. The angle advances
    analytically at constant speed; the dq voltage follows the rotating angle
    inside the cycle. Works elementwise on arrays.
    """
    p, flux = cfg.params, cfg.flux_map
    w = cfg.cond.omega_el
    h = cfg.cond.t_s / cfg.substeps
    u_alpha, u_beta = alpha_beta_voltage(n, p.u_dc)
    eps0 = np.asarray(eps, dtype=float)
    x_d = np.asarray(i_d, dtype=float)
    x_q = np.asarray(i_q, dtype=float)

    def rhs(t, a, b):
        e = eps0 + w * t
        c, s = np.cos(e), np.sin(e)
        u = (c * u_alpha + s * u_beta, -s * u_alpha + c * u_beta)
        return general_ode_rhs(p, flux, w, u, (a, b), e)

    for j in range(cfg.substeps):
        t = j * h
        k1 = rhs(t, x_d, x_q)
        k2 = rhs(t + h / 2, x_d + h / 2 * k1[0], x_q + h / 2 * k1[1])
        k3 = rhs(t + h / 2, x_d + h / 2 * k2[0], x_q + h / 2 * k2[1])
        k4 = rhs(t + h, x_d + h * k3[0], x_q + h * k3[1])
        x_d = x_d + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        x_q = x_q + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])

    limit = 10.0 * p.i_max
    if not (np.all(np.isfinite(x_d)) and np.all(np.isfinite(x_q))) or np.any(np.hypot(x_d, x_q) > limit):
        raise IntegrationError(f"current magnitude exceeded {limit} A during integration")
    return x_d, x_q, wrap_angle(eps0 + w * cfg.cond.t_s)


def check_setpoints(setpoints, i_max: float) -> np.ndarray:
    sp = np.asarray(setpoints, dtype=float).reshape(-1, 2)
    bad = (sp[:, 0] > 0) | (sp[:, 1] > 0) | (np.hypot(sp[:, 0], sp[:, 1]) > i_max * (1 + 1e-12))
    if np.any(bad):
        raise ValueError(
            f"set point {sp[np.argmax(bad)].tolist()} outside the operating quadrant "
            f"(i_d <= 0, i_q <= 0, |i| <= {i_max})"
        )
    return sp


def default_setpoints(count: int = 478, i_max: float = 240.0) -> np.ndarray:
    """Evenly spread set points over the quarter disc i_d, i_q <= 0, |i| <= i_max.

    Golden-angle (sunflower) layout, deterministic.
    """
    k = np.arange(count) + 0.5
    radius = i_max * np.sqrt(k / count)
    golden = math.pi * (3.0 - math.sqrt(5.0))
    frac = np.mod(k * golden / (2 * math.pi), 1.0)
    angle = -math.pi + frac * (math.pi / 2)  # third quadrant
    return np.column_stack([radius * np.cos(angle), radius * np.sin(angle)]).clip(max=0.0)


def generate_dataset(
    cfg: PlantConfig,
    setpoints,
    cycles_per_setpoint: int,
    random_vector_prob: float = 0.3,
    model=None,
    guard: bool = True,
) -> Dataset:
    """Closed-loop FCS-MPC runs at each set point, one sample per cycle.

    With probability ``random_vector_prob`` the controller's choice is replaced
    by a uniform draw from 1..7. With ``guard`` on, a replacement is dropped
    when the controller's model predicts it would take the current beyond
    ``i_max``. Measured currents carry Gaussian noise of ``cfg.noise_sigma``.
    All set points run in lock step; the output rows are shuffled.
    """
    from .models import exact_predictor
    from .mpc import choose_vectors

    if not 0.0 <= random_vector_prob <= 1.0:
        raise ValueError("random_vector_prob must lie in [0, 1]")
    if cycles_per_setpoint < 0:
        raise ValueError("cycles_per_setpoint must be >= 0")
    sp = check_setpoints(setpoints, cfg.params.i_max)
    if cycles_per_setpoint == 0 or len(sp) == 0:
        return Dataset.empty()
    if model is None:
        model = exact_predictor(cfg.params, cfg.cond)

    rng = np.random.default_rng(cfg.seed)
    count = len(sp)
    sigma = cfg.noise_sigma
    i_d, i_q = sp[:, 0].copy(), sp[:, 1].copy()
    eps = wrap_angle(rng.uniform(-math.pi, math.pi, count))
    n_prev = np.ones(count, dtype=np.int64)
    meas_d = i_d + rng.normal(0.0, sigma, count)
    meas_q = i_q + rng.normal(0.0, sigma, count)

    cols = {c: [] for c in ("i_d_k", "i_q_k", "epsilon_k", "n_k", "n_k_prev", "i_d_k1", "i_q_k1")}
    for _ in range(cycles_per_setpoint):
        n, _ = choose_vectors(model, meas_d, meas_q, eps, sp[:, 0], sp[:, 1], n_prev)
        replace = rng.random(count) < random_vector_prob
        drawn = rng.integers(1, 8, count)
        if guard:
            d_hat, q_hat = model.predict_batch(drawn, meas_d, meas_q, eps, n_prev)
            replace &= np.hypot(d_hat, q_hat) <= cfg.params.i_max
        n = np.where(replace, drawn, n)
        i_d, i_q, eps_next = integrate_cycle(cfg, i_d, i_q, eps, n)
        next_d = i_d + rng.normal(0.0, sigma, count)
        next_q = i_q + rng.normal(0.0, sigma, count)
        for key, value in (
            ("i_d_k", meas_d), ("i_q_k", meas_q), ("epsilon_k", eps), ("n_k", n),
            ("n_k_prev", n_prev), ("i_d_k1", next_d), ("i_q_k1", next_q),
        ):
            cols[key].append(value)
        meas_d, meas_q, eps, n_prev = next_d, next_q, eps_next, n
    order = rng.permutation(count * cycles_per_setpoint)
    return Dataset(*(np.concatenate(cols[c])[order] for c in cols))
