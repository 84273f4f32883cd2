"""Least-squares extraction of one linear discrete-time model per vector,
and one-step-ahead evaluation of any prediction model."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .dataset import Dataset
from .machine import ACTIVE_SET
from .models import MatrixModel, ModelConfigError

SV_CUTOFF = 1e-10


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class RegressionData:
    w: np.ndarray  # (5 + extras, j) regressors; row 5 is all ones
    y: np.ndarray  # (2, j) targets
    n: int

    @property
    def j(self) -> int:
        return self.w.shape[1]


@dataclass(frozen=True)
class FitReport:
    k_n: np.ndarray  # (2, regressors)
    residual_rms: np.ndarray  # per current channel, A
    condition_number: float
    sample_count: int
    n: int = 0


def build_regression(
    ds: Dataset,
    n: int,
    extra_features=(),
    neighborhood: tuple[float, float, float] | None = None,
) -> RegressionData:
    """Regressor/target matrices for the samples of subset n, in dataset order.

    ``extra_features`` are callables ``f(i_d, i_q, eps) -> array`` appended
    as additional regressor rows. ``neighborhood=(i_d0, i_q0, radius)`` keeps
    only samples whose currents at k lie within the given distance.
    """
    mask = ds.n_k == n
    if neighborhood is not None:
        d0, q0, radius = neighborhood
        mask &= np.hypot(ds.i_d_k - d0, ds.i_q_k - q0) <= radius
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        raise FitError(f"no samples for vector n={n}")
    i_d, i_q, eps = ds.i_d_k[idx], ds.i_q_k[idx], ds.epsilon_k[idx]
    rows = [i_d, i_q, np.sin(eps), np.cos(eps), np.ones(idx.size)]
    rows += [np.broadcast_to(np.asarray(f(i_d, i_q, eps), float), idx.shape) for f in extra_features]
    y = np.vstack([ds.i_d_k1[idx], ds.i_q_k1[idx]])
    return RegressionData(np.vstack(rows), y, n)


def pseudo_inverse(m: np.ndarray, cutoff: float = SV_CUTOFF) -> np.ndarray:
    """Moore-Penrose inverse via SVD; singular values below cutoff*s_max are dropped."""
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros(m.T.shape)
    inv = np.where(s > cutoff * s[0], 1.0 / np.where(s > 0, s, 1.0), 0.0)
    return (vt.T * inv) @ u.T


def ls_fit(r: RegressionData, ridge: float = 0.0) -> FitReport:
    """Solve min ||Y - K W||_F.

    ``ridge > 0`` switches to Tikhonov-regularised normal equations.
    """
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    w, y = r.w, r.y
    if w.shape[1] != y.shape[1]:
        raise FitError("regressor and target column counts differ")
    if not np.any(w):
        raise FitError(f"all-zero regressor matrix for n={r.n}")
    if r.j < w.shape[0]:
        warnings.warn(f"only {r.j} samples for {w.shape[0]} regressors (n={r.n})", stacklevel=2)
    s = np.linalg.svd(w, compute_uv=False)
    cond = float(s[0] / s[-1]) if s[-1] > 0 else float("inf")
    if ridge > 0:
        gram = w @ w.T + ridge * np.eye(w.shape[0])
        k = np.linalg.solve(gram, w @ y.T).T
    else:
        k = y @ pseudo_inverse(w)
    resid = y - k @ w
    rms = np.sqrt(np.mean(resid**2, axis=1))
    return FitReport(k, rms, cond, r.j, r.n)


def fit_ls_model(ds: Dataset, t_s: float, ridge: float = 0.0, neighborhood=None) -> tuple[MatrixModel, dict[int, FitReport]]:
    """One least-squares fit per vector 1..7 on the base regressors."""
    reports = {}
    for n in ACTIVE_SET:
        reports[n] = ls_fit(build_regression(ds, n, neighborhood=neighborhood), ridge)
    return MatrixModel("ls", {n: rep.k_n for n, rep in reports.items()}, t_s), reports


@dataclass(frozen=True)
class Evaluation:
    """One-step RMS error per subset and overall, per channel (A)."""

    per_subset: dict  # n -> (count, rms_d, rms_q)
    count: int
    rms_d: float
    rms_q: float

    @property
    def rms(self) -> float:
        """RMS over both channels."""
        return float(np.sqrt((self.rms_d**2 + self.rms_q**2) / 2))

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("subset,count,rms_d,rms_q\n")
            for n in sorted(self.per_subset):
                c, d, q = self.per_subset[n]
                fh.write(f"{n},{c},{d:.9g},{q:.9g}\n")
            fh.write(f"all,{self.count},{self.rms_d:.9g},{self.rms_q:.9g}\n")


def evaluate(model, test: Dataset) -> Evaluation:
    if len(test) == 0:
        raise ValueError("evaluation needs a non-empty dataset")
    try:
        d_hat, q_hat = model.predict_batch(test.n_k, test.i_d_k, test.i_q_k, test.epsilon_k, test.n_k_prev)
    except ModelConfigError as exc:
        raise ModelConfigError(f"model does not cover the test subsets: {exc}") from exc
    err_d = d_hat - test.i_d_k1
    err_q = q_hat - test.i_q_k1
    per = {}
    for n in ACTIVE_SET:
        sel = test.n_k == n
        if np.any(sel):
            per[n] = (
                int(sel.sum()),
                float(np.sqrt(np.mean(err_d[sel] ** 2))),
                float(np.sqrt(np.mean(err_q[sel] ** 2))),
            )
    return Evaluation(per, len(test), float(np.sqrt(np.mean(err_d**2))), float(np.sqrt(np.mean(err_q**2))))
