"""Sample schema, CSV I/O, grid classes and per-class balancing.

A dataset is stored column-wise (one numpy array per schema column). Samples
are partitioned into subsets by the applied vector ``n_k`` and assigned to
classes of an (i_d, i_q, eps) grid using the values at time k only.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .machine import ACTIVE_SET

COLUMNS = ("i_d_k", "i_q_k", "epsilon_k", "n_k", "n_k_prev", "i_d_k1", "i_q_k1")
FLOAT_COLUMNS = ("i_d_k", "i_q_k", "epsilon_k", "i_d_k1", "i_q_k1")
INT_COLUMNS = ("n_k", "n_k_prev")

# Alternative header spellings accepted by ``read_csv`` (lower-cased, stripped).
COLUMN_ALIASES = {
    "i_d_k": ("id_k", "i_d,k", "idk"),
    "i_q_k": ("iq_k", "i_q,k", "iqk"),
    "epsilon_k": ("eps_k", "epsilon", "epsilon_el_k"),
    "n_k": ("nk",),
    "n_k_prev": ("n_k-1", "n_km1", "n_k_1", "n_prev"),
    "i_d_k1": ("id_k1", "i_d_k+1", "id_k+1", "i_d,k+1"),
    "i_q_k1": ("iq_k1", "i_q_k+1", "iq_k+1", "i_q,k+1"),
}


class SchemaError(ValueError):
    """Input file does not match the sample schema."""


class ClassificationError(ValueError):
    """Sample lies outside the grid's operating range."""


@dataclass(frozen=True)
class Sample:
    i_d_k: float
    i_q_k: float
    epsilon_k: float
    n_k: int
    n_k_prev: int
    i_d_k1: float
    i_q_k1: float


class Dataset:
    """Column store of samples; ``subset(n)`` gives the partition of vector n."""

    def __init__(self, i_d_k, i_q_k, epsilon_k, n_k, n_k_prev, i_d_k1, i_q_k1, validate=True):
        self.i_d_k = np.asarray(i_d_k, dtype=float)
        self.i_q_k = np.asarray(i_q_k, dtype=float)
        self.epsilon_k = np.asarray(epsilon_k, dtype=float)
        self.n_k = np.asarray(n_k, dtype=np.int64)
        self.n_k_prev = np.asarray(n_k_prev, dtype=np.int64)
        self.i_d_k1 = np.asarray(i_d_k1, dtype=float)
        self.i_q_k1 = np.asarray(i_q_k1, dtype=float)
        lengths = {getattr(self, c).shape for c in COLUMNS}
        if len(lengths) != 1 or len(next(iter(lengths))) != 1:
            raise SchemaError(f"columns must be 1-d arrays of equal length, got shapes {lengths}")
        if validate:
            self._validate()

    def _validate(self):
        for c in INT_COLUMNS:
            v = getattr(self, c)
            if v.size and (v.min() < 1 or v.max() > 7):
                raise SchemaError(f"column {c} must hold vector indices 1..7")
        for c in FLOAT_COLUMNS:
            if not np.all(np.isfinite(getattr(self, c))):
                raise SchemaError(f"column {c} contains non-finite values")

    @classmethod
    def empty(cls) -> Dataset:
        return cls(*([np.empty(0)] * 3 + [np.empty(0, np.int64)] * 2 + [np.empty(0)] * 2))

    @classmethod
    def from_samples(cls, samples) -> Dataset:
        samples = list(samples)
        if not samples:
            return cls.empty()
        return cls(*(np.array([getattr(s, c) for s in samples]) for c in COLUMNS))

    @classmethod
    def concatenate(cls, parts) -> Dataset:
        parts = list(parts)
        if not parts:
            return cls.empty()
        return cls(*(np.concatenate([getattr(p, c) for p in parts]) for c in COLUMNS), validate=False)

    def __len__(self) -> int:
        return self.n_k.shape[0]

    def __getitem__(self, i: int) -> Sample:
        return Sample(
            float(self.i_d_k[i]),
            float(self.i_q_k[i]),
            float(self.epsilon_k[i]),
            int(self.n_k[i]),
            int(self.n_k_prev[i]),
            float(self.i_d_k1[i]),
            float(self.i_q_k1[i]),
        )

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return all(np.array_equal(getattr(self, c), getattr(other, c)) for c in COLUMNS)

    def take(self, index) -> Dataset:
        index = np.asarray(index)
        return Dataset(*(getattr(self, c)[index] for c in COLUMNS), validate=False)

    def subset(self, n: int) -> Dataset:
        return self.take(np.flatnonzero(self.n_k == n))

    def partitions(self) -> dict[int, np.ndarray]:
        """Row indices per applied vector n in 1..7."""
        return {n: np.flatnonzero(self.n_k == n) for n in ACTIVE_SET}

    def counts(self) -> dict[int, int]:
        c = np.bincount(self.n_k, minlength=8)
        return {n: int(c[n]) for n in ACTIVE_SET}


def write_csv(ds: Dataset, path) -> None:
    """Write with header ``i_d_k,i_q_k,epsilon_k,n_k,n_k_prev,i_d_k1,i_q_k1``.

    Floats use the shortest round-tripping repr (17 significant digits at most).
    """
    cols = [getattr(ds, c).tolist() for c in COLUMNS]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(COLUMNS) + "\n")
        for row in zip(*cols):
            fh.write(
                f"{row[0]!r},{row[1]!r},{row[2]!r},{row[3]},{row[4]},{row[5]!r},{row[6]!r}\n"
            )


def _resolve_columns(header, mapping):
    norm = [h.strip().lower() for h in header]
    index = {}
    for col in COLUMNS:
        if mapping and col in mapping:
            wanted = [mapping[col].strip().lower()]
        else:
            wanted = [col, *COLUMN_ALIASES[col]]
        hit = next((norm.index(w) for w in wanted if w in norm), None)
        if hit is None:
            raise SchemaError(f"line 1: no column for {col!r} in header {header}")
        index[col] = hit
    return index


def read_csv(path, mapping: dict[str, str] | None = None) -> Dataset:
    """Read a sample CSV.

    ``mapping`` maps schema column names to the file's header names; without it
    the schema names and a few common alternatives are recognised. Extra
    columns are ignored. Malformed rows raise ``SchemaError`` with the line
    number.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError("line 1: empty file, expected a header") from None
        index = _resolve_columns(header, mapping)
        width = len(header)
        data = {c: [] for c in COLUMNS}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise SchemaError(f"line {lineno}: expected {width} fields, got {len(row)}")
            for c in COLUMNS:
                field = row[index[c]]
                try:
                    value = float(field)
                except ValueError:
                    raise SchemaError(f"line {lineno}: column {c}: not a number: {field!r}") from None
                if c in INT_COLUMNS:
                    if not (math.isfinite(value) and value == int(value) and 1 <= value <= 7):
                        raise SchemaError(f"line {lineno}: column {c}: vector index must be in 1..7, got {field!r}")
                    value = int(value)
                elif not math.isfinite(value):
                    raise SchemaError(f"line {lineno}: column {c}: non-finite value {field!r}")
                data[c].append(value)
    return Dataset(*(data[c] for c in COLUMNS))


class ClassIndex(NamedTuple):
    d_bin: int
    q_bin: int
    eps_bin: int


@dataclass(frozen=True)
class GridSpec:
    """Class grid over (i_d, i_q, eps); bins count upward from the lower edges."""

    d_lo: float = -240.0
    d_hi: float = 0.0
    d_step: float = 10.0
    q_lo: float = -240.0
    q_hi: float = 0.0
    q_step: float = 10.0
    eps_bins: int = 36  # steps of pi/18 over (-pi, pi]
    i_max: float = 240.0

    def __post_init__(self):
        for lo, hi, step in ((self.d_lo, self.d_hi, self.d_step), (self.q_lo, self.q_hi, self.q_step)):
            if not (step > 0 and hi > lo):
                raise ValueError("grid ranges need hi > lo and step > 0")
            cells = (hi - lo) / step
            if abs(cells - round(cells)) > 1e-9:
                raise ValueError(f"step {step} does not divide range [{lo}, {hi}]")
        if self.eps_bins < 1:
            raise ValueError("eps_bins must be >= 1")

    @property
    def n_d(self) -> int:
        return int(round((self.d_hi - self.d_lo) / self.d_step))

    @property
    def n_q(self) -> int:
        return int(round((self.q_hi - self.q_lo) / self.q_step))

    @property
    def eps_step(self) -> float:
        return 2.0 * math.pi / self.eps_bins

    @property
    def n_classes(self) -> int:
        return self.n_d * self.n_q * self.eps_bins


def _bin(value, lo, hi, step, count):
    b = np.floor((value - lo) / step).astype(np.int64)
    b = np.where(value == hi, count - 1, b)
    ok = (value >= lo) & (value <= hi)
    return np.clip(b, 0, count - 1), ok


def classify(ds: Dataset, g: GridSpec):
    """Vectorised classing: (d_bin, q_bin, eps_bin, in_range mask)."""
    d, ok_d = _bin(ds.i_d_k, g.d_lo, g.d_hi, g.d_step, g.n_d)
    q, ok_q = _bin(ds.i_q_k, g.q_lo, g.q_hi, g.q_step, g.n_q)
    e, ok_e = _bin(ds.epsilon_k, -math.pi, math.pi, g.eps_step, g.eps_bins)
    return d, q, e, ok_d & ok_q & ok_e


def class_of(s: Sample, g: GridSpec) -> ClassIndex:
    """Class of a sample from (i_d_k, i_q_k, epsilon_k); k+1 values are ignored."""
    one = Dataset.from_samples([s])
    d, q, e, ok = classify(one, g)
    if not ok[0]:
        raise ClassificationError(
            f"sample outside grid: i_d={s.i_d_k}, i_q={s.i_q_k}, eps={s.epsilon_k}"
        )
    return ClassIndex(int(d[0]), int(q[0]), int(e[0]))


def valid_dq_mask(g: GridSpec) -> np.ndarray:
    """(n_d, n_q) mask of current cells that overlap the disc |i| < i_max."""
    d_edges = g.d_lo + g.d_step * np.arange(g.n_d + 1)
    q_edges = g.q_lo + g.q_step * np.arange(g.n_q + 1)

    def nearest(lo, hi):
        return np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(np.abs(lo), np.abs(hi)))

    dn = nearest(d_edges[:-1], d_edges[1:])
    qn = nearest(q_edges[:-1], q_edges[1:])
    return np.hypot(dn[:, None], qn[None, :]) < g.i_max


def valid_classes(g: GridSpec = GridSpec()) -> set[ClassIndex]:
    mask = valid_dq_mask(g)
    return {
        ClassIndex(int(d), int(q), e)
        for d, q in zip(*np.nonzero(mask))
        for e in range(g.eps_bins)
    }


def _class_ids(ds: Dataset, g: GridSpec):
    """Flat class id per sample (-1 for rejects: out of range or invalid cell)."""
    d, q, e, ok = classify(ds, g)
    valid = valid_dq_mask(g)[d, q] & ok
    flat = (d * g.n_q + q) * g.eps_bins + e
    return np.where(valid, flat, -1)


class BalanceResult(NamedTuple):
    balanced: Dataset
    remainder: Dataset
    rejects: Dataset


def balance(ds: Dataset, g: GridSpec, cap, seed: int = 0) -> BalanceResult:
    """Keep at most ``cap`` samples per (subset, valid class).

    Kept samples are drawn uniformly at random (seeded); the surplus goes to
    ``remainder`` and samples outside the valid classes to ``rejects``. Each
    output keeps the input's row order. ``cap=None`` or ``math.inf`` keeps all.
    """
    if cap is not None and not (cap >= 1):
        raise ValueError("cap must be >= 1")
    ids = _class_ids(ds, g)
    rejected = ids < 0
    if cap is None or math.isinf(cap):
        keep = ~rejected
    else:
        rng = np.random.default_rng(seed)
        key = np.where(rejected, -1, ds.n_k * g.n_classes + ids)
        order = rng.permutation(len(ds))
        order = order[np.argsort(key[order], kind="stable")]
        sorted_key = key[order]
        starts = np.r_[0, np.flatnonzero(np.diff(sorted_key)) + 1] if len(ds) else np.empty(0, int)
        group_start = np.repeat(starts, np.diff(np.r_[starts, len(ds)]))
        rank = np.arange(len(ds)) - group_start
        keep = np.zeros(len(ds), dtype=bool)
        keep[order[rank < cap]] = True
        keep &= ~rejected
    surplus = ~keep & ~rejected
    return BalanceResult(
        ds.take(np.flatnonzero(keep)),
        ds.take(np.flatnonzero(surplus)),
        ds.take(np.flatnonzero(rejected)),
    )


def class_counts(ds: Dataset, g: GridSpec) -> dict[int, np.ndarray]:
    """Per subset n, sample counts of every valid class (fixed class order)."""
    ids = _class_ids(ds, g)
    valid_flat = np.flatnonzero(np.repeat(valid_dq_mask(g).ravel(), g.eps_bins))
    out = {}
    for n in ACTIVE_SET:
        sel = ids[(ds.n_k == n) & (ids >= 0)]
        out[n] = np.bincount(sel, minlength=g.n_classes)[valid_flat]
    return out


def homogeneity(ds: Dataset, g: GridSpec, cap: float) -> dict[int, float]:
    """Fraction of valid classes holding at least ``cap`` samples, per subset."""
    if not cap >= 1:
        raise ValueError("cap must be >= 1")
    return {n: float(np.mean(c >= cap)) if c.size else 0.0 for n, c in class_counts(ds, g).items()}


def homogeneity_curve(ds: Dataset, g: GridSpec, caps) -> list[tuple[int, dict[int, float]]]:
    counts = class_counts(ds, g)
    rows = []
    for cap in caps:
        if not cap >= 1:
            raise ValueError("cap must be >= 1")
        rows.append((cap, {n: float(np.mean(c >= cap)) if c.size else 0.0 for n, c in counts.items()}))
    return rows


def write_homogeneity_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("cap," + ",".join(f"fraction_n{n}" for n in ACTIVE_SET) + "\n")
        for cap, frac in rows:
            fh.write(f"{cap}," + ",".join(f"{frac[n]:.9f}" for n in ACTIVE_SET) + "\n")
