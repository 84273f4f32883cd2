"""Prediction models x_k -> (i_d, i_q)_{k+1} used by the controller.

Matrix models (first-order white box, exact transition matrix, least-squares
fit) hold one matrix per vector; rows 1-2 act on [i_d, i_q, sin, cos, 1].
The network model wraps either one network conditioned on a one-hot ``n_k``
or one network per vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .discretize import transition_matrices
from .machine import ACTIVE_SET, DriveParameters, OperatingConditions, StateVector, state_columns
from .mlp import build_features, dump_network, parse_network

MATRIX_KINDS = ("first_order", "exact", "ls")


class ModelConfigError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MatrixModel:
    kind: str
    matrices: dict  # n -> (2, 5) or (5, 5)
    t_s: float

    def __post_init__(self):
        if self.kind not in MATRIX_KINDS:
            raise ModelConfigError(f"unknown matrix model kind {self.kind!r}")
        mats = {int(n): np.asarray(m, dtype=float) for n, m in self.matrices.items()}
        for n, m in mats.items():
            if m.ndim != 2 or m.shape[1] != 5 or m.shape[0] not in (2, 5):
                raise ModelConfigError(f"sub-model {n} has shape {m.shape}, expected (2, 5) or (5, 5)")
        object.__setattr__(self, "matrices", mats)
        stack = np.full((9, 2, 5), np.nan)
        for n, m in mats.items():
            if 1 <= n <= 8:
                stack[n] = m[:2]
        object.__setattr__(self, "_stack", stack)

    def rows(self, n: int) -> np.ndarray:
        if n not in self.matrices:
            raise ModelConfigError(f"{self.kind} model has no sub-model for n={n}")
        return self.matrices[n][:2]

    def predict_batch(self, n, i_d, i_q, eps, n_prev=None):
        n = np.asarray(n, dtype=int)
        missing = set(np.unique(n).tolist()) - set(self.matrices)
        if missing:
            raise ModelConfigError(f"{self.kind} model has no sub-model for n={sorted(missing)}")
        x = state_columns(i_d, i_q, eps)  # (5, N)
        k = self._stack[np.broadcast_to(n, x.shape[1:]).reshape(-1)]  # (N, 2, 5)
        out = np.einsum("nij,jn->in", k, x.reshape(5, -1)).reshape((2,) + x.shape[1:])
        return out[0], out[1]


@dataclass(frozen=True, eq=False)
class MlpModel:
    nets: object  # Network, or dict n -> Network for the per-vector ensemble
    t_s: float
    kind: str = "mlp"

    @property
    def ensemble(self) -> bool:
        return isinstance(self.nets, dict)

    def predict_batch(self, n, i_d, i_q, eps, n_prev):
        i_d, i_q, eps, n, n_prev = np.broadcast_arrays(
            np.asarray(i_d, float), np.asarray(i_q, float), np.asarray(eps, float),
            np.asarray(n, int), np.asarray(n_prev, int),
        )
        shape = i_d.shape
        i_d, i_q, eps, n, n_prev = (a.reshape(-1) for a in (i_d, i_q, eps, n, n_prev))
        out = np.empty((i_d.size, 2))
        if not self.ensemble:
            feats = build_features(self.nets.spec.features, i_d, i_q, eps, n, n_prev)
            out[:] = self.nets.forward(feats)
        else:
            for v in np.unique(n).tolist():
                if v not in self.nets:
                    raise ModelConfigError(f"mlp ensemble has no network for n={v}")
                sel = n == v
                net = self.nets[v]
                feats = build_features(net.spec.features, i_d[sel], i_q[sel], eps[sel], n[sel], n_prev[sel])
                out[sel] = net.forward(feats)
        return out[:, 0].reshape(shape), out[:, 1].reshape(shape)


def predict(m, n: int, x: StateVector, n_prev: int = 1) -> tuple[float, float]:
    """One-step current prediction for vector n from state x."""
    if not (1 <= n <= 7 and 1 <= n_prev <= 7):
        raise ValueError("n and n_prev must be in 1..7")
    d, q = m.predict_batch(np.array([n]), [x.i_d], [x.i_q], [x.angle], np.array([n_prev]))
    return float(d[0]), float(q[0])


def first_order_predictor(p: DriveParameters, cond: OperatingConditions) -> MatrixModel:
    mats = transition_matrices(p, cond.omega_el, cond.t_s, kind="first_order")
    return MatrixModel("first_order", {n: mats[n] for n in ACTIVE_SET}, cond.t_s)


def exact_predictor(p: DriveParameters, cond: OperatingConditions) -> MatrixModel:
    mats = transition_matrices(p, cond.omega_el, cond.t_s, kind="exact")
    return MatrixModel("exact", {n: mats[n] for n in ACTIVE_SET}, cond.t_s)


def save_model(m, path) -> None:
    """Write a model file (plain text, CSV-style header lines)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"kind,{m.kind}\n")
        fh.write(f"t_s,{float(m.t_s)!r}\n")
        if isinstance(m, MatrixModel):
            fh.write("n,rows,cols,entries\n")
            for n in sorted(m.matrices):
                k = m.matrices[n]
                fh.write(f"{n},{k.shape[0]},{k.shape[1]}," + ",".join(repr(float(v)) for v in k.ravel()) + "\n")
        else:
            if m.ensemble:
                fh.write("mode,ensemble\n")
                for n in sorted(m.nets):
                    fh.write(f"net,{n}\n")
                    fh.write(dump_network(m.nets[n]))
            else:
                fh.write("mode,single\n")
                fh.write("net,all\n")
                fh.write(dump_network(m.nets))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh if not line.startswith("#")]
    try:
        key, kind = lines[0].split(",", 1)
        key2, t_s = lines[1].split(",", 1)
    except (IndexError, ValueError):
        raise ModelConfigError(f"{path}: missing 'kind' / 't_s' header lines") from None
    if key != "kind" or key2 != "t_s":
        raise ModelConfigError(f"{path}: missing 'kind' / 't_s' header lines")
    t_s = float(t_s)
    if kind in MATRIX_KINDS:
        mats = {}
        for lineno, line in enumerate(lines[3:], start=4):
            if not line.strip():
                continue
            fields = line.split(",")
            n, rows, cols = int(fields[0]), int(fields[1]), int(fields[2])
            values = np.array(fields[3:], dtype=float)
            if values.size != rows * cols:
                raise ModelConfigError(f"{path}:{lineno}: expected {rows * cols} entries, got {values.size}")
            mats[n] = values.reshape(rows, cols)
        return MatrixModel(kind, mats, t_s)
    if kind == "mlp":
        mode = lines[2].split(",", 1)[1]
        blocks: dict[str, list[str]] = {}
        current = None
        for line in lines[3:]:
            if line.startswith("net,"):
                current = line.split(",", 1)[1]
                blocks[current] = []
            elif current is not None:
                blocks[current].append(line)
        if mode == "single":
            return MlpModel(parse_network(blocks["all"]), t_s)
        return MlpModel({int(n): parse_network(b) for n, b in blocks.items()}, t_s)
    raise ModelConfigError(f"{path}: unknown model kind {kind!r}")
