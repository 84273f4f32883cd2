"""Horizon-1 finite-control-set MPC on the current error."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .machine import ACTIVE_SET, SWITCHING_TABLE, StateVector, wrap_angle
from .plant import PlantConfig, integrate_cycle


@dataclass(frozen=True)
class Reference:
    i_d_ref: float
    i_q_ref: float
    i_max: float = 240.0

    def __post_init__(self):
        if self.i_d_ref > 0 or self.i_q_ref > 0 or math.hypot(self.i_d_ref, self.i_q_ref) > self.i_max:
            raise ValueError(
                f"reference ({self.i_d_ref}, {self.i_q_ref}) outside the operating quadrant"
            )


def candidate_costs(model, i_d, i_q, eps, ref_d, ref_q, n_prev, weights=(1.0, 1.0)) -> np.ndarray:
    """Cost of every candidate vector, shape (N, 7); column j is vector j+1."""
    i_d = np.atleast_1d(np.asarray(i_d, float))
    n_prev = np.broadcast_to(np.asarray(n_prev, int), i_d.shape)
    costs = np.empty((i_d.size, len(ACTIVE_SET)))
    for j, n in enumerate(ACTIVE_SET):
        d_hat, q_hat = model.predict_batch(np.full(i_d.shape, n), i_d, i_q, eps, n_prev)
        c = weights[0] * (d_hat - ref_d) ** 2 + weights[1] * (q_hat - ref_q) ** 2
        if not np.all(np.isfinite(c)):
            raise FloatingPointError(f"non-finite cost from {model.kind} sub-model n={n}")
        costs[:, j] = c
    return costs


def choose_vectors(model, i_d, i_q, eps, ref_d, ref_q, n_prev, weights=(1.0, 1.0)):
    """Vectorised controller step: (chosen n, its cost) for each state.

    Ties prefer keeping ``n_prev``, then the lowest index.
    """
    costs = candidate_costs(model, i_d, i_q, eps, ref_d, ref_q, n_prev, weights)
    best = costs.min(axis=1)
    ties = costs == best[:, None]
    n_prev = np.broadcast_to(np.asarray(n_prev, int), best.shape)
    keep = ties[np.arange(best.size), np.clip(n_prev, 1, 7) - 1] & (n_prev >= 1) & (n_prev <= 7)
    chosen = np.where(keep, n_prev, np.argmax(ties, axis=1) + 1)
    return chosen.astype(np.int64), best


def mpc_step(model, x: StateVector, ref: Reference, n_prev: int, weights=(1.0, 1.0)) -> int:
    n, _ = choose_vectors(model, [x.i_d], [x.i_q], [x.angle], ref.i_d_ref, ref.i_q_ref, [n_prev], weights)
    return int(n[0])


def phase_toggles(n_sequence, n_start: int = 1) -> int:
    """Number of phase-leg transitions along a vector sequence."""
    seq = np.concatenate([[n_start], np.asarray(n_sequence, int)])
    s = SWITCHING_TABLE[seq - 1]
    return int(np.sum(s[1:] != s[:-1]))


def switching_frequency(n_sequence, t_s: float, n_start: int = 1) -> float:
    """Mean per-phase switching frequency in Hz (two transitions = one period)."""
    cycles = len(n_sequence)
    if cycles == 0:
        return 0.0
    return phase_toggles(n_sequence, n_start) / (3 * 2 * cycles * t_s)


@dataclass
class ClosedLoopResult:
    cycle: np.ndarray
    i_d: np.ndarray  # true currents at the start of each cycle
    i_q: np.ndarray
    eps: np.ndarray
    n: np.ndarray
    cost: np.ndarray
    ref: Reference
    t_s: float
    rms_error: float  # steady-state RMS of |i - i_ref|, A
    f_sw: float  # Hz
    f_sw_max: float

    @property
    def f_sw_exceeded(self) -> bool:
        return self.f_sw > self.f_sw_max

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("cycle,i_d,i_q,n,cost\n")
            for row in zip(self.cycle.tolist(), self.i_d.tolist(), self.i_q.tolist(), self.n.tolist(), self.cost.tolist()):
                fh.write(f"{row[0]},{row[1]!r},{row[2]!r},{row[3]},{row[4]!r}\n")


def run_closed_loops(
    plant: PlantConfig,
    model,
    refs,
    cycles: int,
    x0=(0.0, 0.0, 0.0),
    n_prev: int = 1,
    settle: int | None = None,
    weights=(1.0, 1.0),
) -> list[ClosedLoopResult]:
    """Independent closed loops, one per reference, simulated in lock step.

    The controller sees noisy measurements (``plant.noise_sigma``, seeded by
    ``plant.seed``); the error metric uses the true currents over the cycles
    from ``settle`` on (default: second half).
    """
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    if not math.isclose(model.t_s, plant.cond.t_s, rel_tol=1e-9):
        raise ValueError(f"model cycle time {model.t_s} differs from plant cycle time {plant.cond.t_s}")
    refs = list(refs)
    settle = cycles // 2 if settle is None else settle
    rng = np.random.default_rng(plant.seed)
    sigma = plant.noise_sigma
    count = len(refs)
    ref_d = np.array([r.i_d_ref for r in refs], dtype=float)
    ref_q = np.array([r.i_q_ref for r in refs], dtype=float)
    i_d = np.full(count, float(x0[0]))
    i_q = np.full(count, float(x0[1]))
    eps = np.full(count, wrap_angle(x0[2]))
    prev = np.full(count, n_prev, dtype=np.int64)
    traj = np.empty((4, cycles, count))
    n_log = np.empty((cycles, count), dtype=np.int64)
    for k in range(cycles):
        md = i_d + rng.normal(0.0, sigma, count)
        mq = i_q + rng.normal(0.0, sigma, count)
        n, cost = choose_vectors(model, md, mq, eps, ref_d, ref_q, prev, weights)
        traj[:, k] = (i_d, i_q, eps, cost)
        n_log[k] = n
        i_d, i_q, eps = integrate_cycle(plant, i_d, i_q, eps, n)
        prev = n
    results = []
    for j, ref in enumerate(refs):
        err = np.hypot(traj[0, settle:, j] - ref.i_d_ref, traj[1, settle:, j] - ref.i_q_ref)
        results.append(
            ClosedLoopResult(
                cycle=np.arange(cycles),
                i_d=traj[0, :, j].copy(),
                i_q=traj[1, :, j].copy(),
                eps=traj[2, :, j].copy(),
                n=n_log[:, j].copy(),
                cost=traj[3, :, j].copy(),
                ref=ref,
                t_s=plant.cond.t_s,
                rms_error=float(np.sqrt(np.mean(err**2))) if err.size else float("nan"),
                f_sw=switching_frequency(n_log[:, j], plant.cond.t_s, n_prev),
                f_sw_max=plant.cond.f_sw_max,
            )
        )
    return results


def run_closed_loop(plant: PlantConfig, model, ref: Reference, cycles: int, **kwargs) -> ClosedLoopResult:
    """Single closed loop; see ``run_closed_loops`` for the keyword options."""
    return run_closed_loops(plant, model, [ref], cycles, **kwargs)[0]
