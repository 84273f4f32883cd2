"""Discrete-time models of the autonomous systems: exact and truncated series."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .machine import VECTORS, DriveParameters, StateVector, system_matrices


def _max_abs(m: np.ndarray) -> float:
    return float(np.max(np.abs(m))) if m.size else 0.0


def matrix_exponential(a, dt: float, tol: float = 1e-12) -> np.ndarray:
    """e^(A dt) by scaling and squaring over the truncated Taylor series.

    The argument is scaled by 2^-s so that its infinity norm is at most 0.5;
    the series stops once the next term is below ``tol`` relative to the
    partial sum (max-norm).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"square matrix required, got shape {a.shape}")
    if dt < 0:
        raise ValueError("dt must be >= 0")
    if not tol > 0:
        raise ValueError("tol must be > 0")
    if not (np.all(np.isfinite(a)) and math.isfinite(dt)):
        raise FloatingPointError("matrix exponential of non-finite input")
    b = a * dt
    norm = float(np.max(np.sum(np.abs(b), axis=1))) if b.size else 0.0
    squarings = max(0, math.ceil(math.log2(norm / 0.5))) if norm > 0.5 else 0
    b = b / 2.0**squarings

    result = np.eye(a.shape[0])
    term = np.eye(a.shape[0])
    for k in range(1, 200):
        term = term @ b / k
        result = result + term
        if _max_abs(term) < tol * _max_abs(result):
            break
    for _ in range(squarings):
        result = result @ result
    if not np.all(np.isfinite(result)):
        raise FloatingPointError("matrix exponential overflowed")
    return result


def series_exponential(a, dt: float, order: int) -> np.ndarray:
    """Taylor series of e^(A dt) truncated after the ``order``-th power."""
    if order < 0:
        raise ValueError("order must be >= 0")
    b = np.asarray(a, dtype=float) * dt
    result = np.eye(b.shape[0])
    term = np.eye(b.shape[0])
    for k in range(1, order + 1):
        term = term @ b / k
        result = result + term
    return result


@dataclass(frozen=True)
class TransitionMatrix:
    phi: np.ndarray
    t_s: float
    n: int
    kind: str  # "exact" or "first_order"


def exact_model(a, t_s: float, n: int = 0, tol: float = 1e-12) -> TransitionMatrix:
    return TransitionMatrix(matrix_exponential(a, t_s, tol), t_s, n, "exact")


def first_order_model(a, t_s: float, n: int = 0) -> TransitionMatrix:
    """K = I + A T_s."""
    if not t_s > 0:
        raise ValueError("t_s must be > 0")
    a = np.asarray(a, dtype=float)
    return TransitionMatrix(np.eye(a.shape[0]) + a * t_s, t_s, n, "first_order")


def propagate(m: TransitionMatrix, x):
    """One step x_{k+1} = Phi x_k; accepts a StateVector or (5,) / (5, N) arrays."""
    if isinstance(x, StateVector):
        return StateVector.from_array(m.phi @ x.as_array())
    return m.phi @ np.asarray(x, dtype=float)


def transition_matrices(
    p: DriveParameters, omega_el: float, t_s: float, kind: str = "exact", order: int | None = None
) -> dict[int, np.ndarray]:
    """Per-vector discrete models for all eight vectors.

    ``kind`` is ``"exact"`` or ``"first_order"``; ``order`` instead selects a
    Taylor truncation of arbitrary order.
    """
    mats = system_matrices(p, omega_el)
    out = {}
    for n in VECTORS:
        if order is not None:
            out[n] = series_exponential(mats[n], t_s, order)
        elif kind == "exact":
            out[n] = matrix_exponential(mats[n], t_s)
        elif kind == "first_order":
            out[n] = first_order_model(mats[n], t_s, n).phi
        else:
            raise ValueError(f"unknown discretization kind {kind!r}")
    return out


def write_matrix_csv(path, m: np.ndarray) -> None:
    """Row-major CSV, 17 significant digits."""
    m = np.atleast_2d(np.asarray(m, dtype=float))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in m:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def read_matrix_csv(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        rows = [[float(v) for v in line.split(",")] for line in fh if line.strip()]
    return np.array(rows)
