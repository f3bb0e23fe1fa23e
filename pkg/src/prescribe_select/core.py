"""Shared domain types: datasets, fold partitions, seeded streams, cost tables."""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field

import numpy as np

CALENDAR_FEATURES = (
    "day_of_week",
    "day_of_month",
    "month",
    "day_of_year",
    "is_weekend",
    "is_holiday",
)

#: All serialized fold ids, policy indices and row indices are 0-based.
INDEX_BASE = 0


class FeasibilityError(RuntimeError):
    """A decision violates the feasible set of its problem."""


class SolverError(RuntimeError):
    """Numerical breakdown inside an optimizer (cycling, iteration cap)."""


def derive_seed(master_seed: int, role: str, *indices: int) -> int:
    """Derive a child seed from (master_seed, role, indices).

    The derivation hashes the full key, so streams for distinct roles or
    index tuples never collide by construction of the underlying digest.
    """
    key = f"{int(master_seed)}|{role}|" + "|".join(str(int(i)) for i in indices)
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1  # 63-bit, nonnegative


@dataclass(frozen=True)
class SeedSpec:
    """Root of all randomness in an experiment.

    Every stochastic operation receives a seed derived from the master seed,
    a role string and integer indices, so reruns and parallel schedules
    reproduce identical results.
    """

    master_seed: int

    def derive(self, role: str, *indices: int) -> int:
        return derive_seed(self.master_seed, role, *indices)

    def generator(self, role: str, *indices: int) -> np.random.Generator:
        return np.random.default_rng(self.derive(role, *indices))


def _as_2d_float(a, name: str) -> np.ndarray:
    arr = np.asarray(a, dtype=float)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


@dataclass
class Dataset:
    """Paired covariate and outcome rows, with optional segment labels.

    X holds one covariate vector per row (fixed width, finite values);
    Y holds the nonnegative outcome vector realized on that row.  Segment
    labels are per row (shipment) or per row and output (newsvendor) and
    may be absent for external data.  ``source_indices`` tracks original
    row ids through subsetting, which the pipeline uses for leakage checks.
    """

    X: np.ndarray
    Y: np.ndarray
    day_index: np.ndarray | None = None
    segments: np.ndarray | None = None
    feature_names: tuple[str, ...] = CALENDAR_FEATURES
    source_indices: np.ndarray | None = None

    def __post_init__(self):
        self.X = _as_2d_float(self.X, "X")
        self.Y = _as_2d_float(self.Y, "Y")
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y must have the same number of rows")
        if np.any(self.Y < 0):
            raise ValueError("outcomes must be nonnegative")
        n = self.X.shape[0]
        if self.day_index is None:
            self.day_index = np.arange(n, dtype=np.int64)
        else:
            self.day_index = np.asarray(self.day_index, dtype=np.int64)
            if self.day_index.shape != (n,):
                raise ValueError("day_index must have one entry per row")
        if self.segments is not None:
            self.segments = np.asarray(self.segments, dtype="U1")
            if self.segments.shape not in ((n,), (n, self.Y.shape[1])):
                raise ValueError("segments must be per row or per row and output")
        if len(self.feature_names) != self.X.shape[1]:
            raise ValueError("feature_names must match the covariate width")
        if self.source_indices is None:
            self.source_indices = np.arange(n, dtype=np.int64)
        else:
            self.source_indices = np.asarray(self.source_indices, dtype=np.int64)
            if self.source_indices.shape != (n,):
                raise ValueError("source_indices must have one entry per row")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def d_x(self) -> int:
        return self.X.shape[1]

    @property
    def d_y(self) -> int:
        return self.Y.shape[1]

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            X=self.X[idx],
            Y=self.Y[idx],
            day_index=self.day_index[idx],
            segments=None if self.segments is None else self.segments[idx],
            feature_names=self.feature_names,
            source_indices=self.source_indices[idx],
        )


@dataclass
class FoldPartition:
    """Disjoint index sets covering range(n), sizes differing by at most 1."""

    folds: tuple[np.ndarray, ...]
    n: int

    def __post_init__(self):
        self.folds = tuple(np.asarray(f, dtype=np.int64) for f in self.folds)
        sizes = [len(f) for f in self.folds]
        if any(s == 0 for s in sizes):
            raise ValueError("every fold must be nonempty")
        if max(sizes) - min(sizes) > 1:
            raise ValueError("fold sizes must differ by at most 1")
        merged = np.concatenate(self.folds)
        if len(merged) != self.n or not np.array_equal(np.sort(merged), np.arange(self.n)):
            raise ValueError("folds must partition range(n)")

    @property
    def k(self) -> int:
        return len(self.folds)

    def fold(self, k: int) -> np.ndarray:
        return self.folds[k]

    def complement(self, k: int) -> np.ndarray:
        others = [f for i, f in enumerate(self.folds) if i != k]
        return np.sort(np.concatenate(others))


def make_folds(n: int, k: int, seed) -> FoldPartition:
    """Uniformly shuffled k-fold partition of range(n), round-robin assigned."""
    if k < 2:
        raise ValueError("need at least 2 folds")
    if k > n:
        raise ValueError("cannot make more folds than rows")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    perm = rng.permutation(n)
    folds = tuple(np.sort(perm[i::k]) for i in range(k))
    return FoldPartition(folds=folds, n=n)


@dataclass
class CostTable:
    """Realized out-of-sample cost of each candidate policy on held-out rows."""

    fold_id: int
    row_indices: np.ndarray
    costs: np.ndarray
    policy_names: tuple[str, ...] = ()

    def __post_init__(self):
        self.row_indices = np.asarray(self.row_indices, dtype=np.int64)
        self.costs = np.asarray(self.costs, dtype=float)
        if self.costs.ndim != 2:
            raise ValueError("costs must be a 2-d matrix")
        if self.costs.shape[0] != len(self.row_indices):
            raise ValueError("one cost row per held-out observation")
        if not np.all(np.isfinite(self.costs)):
            raise ValueError("costs must be finite")
        if self.policy_names and len(self.policy_names) != self.costs.shape[1]:
            raise ValueError("one policy name per cost column")

    @property
    def n_policies(self) -> int:
        return self.costs.shape[1]


def build_cost_table(fold_id: int, held_out: Dataset, policies, problem) -> CostTable:
    """Evaluate each fitted policy on each held-out row at its true outcome.

    Policies must have been fitted without access to the held-out rows; this
    function only evaluates, it never fits.
    """
    n = held_out.n_rows
    costs = np.empty((n, len(policies)))
    for m, pol in enumerate(policies):
        name = getattr(pol, "name", str(m))
        prescriptions = pol.prescribe_many(held_out.X)
        for i in range(n):
            try:
                problem.check_feasible(prescriptions[i])
            except FeasibilityError as exc:
                raise FeasibilityError(
                    f"policy {name!r} returned an infeasible decision "
                    f"for held-out row {int(held_out.source_indices[i])}: {exc}"
                ) from exc
            costs[i, m] = problem.cost(prescriptions[i], held_out.Y[i])
    names = tuple(getattr(p, "name", str(m)) for m, p in enumerate(policies))
    return CostTable(
        fold_id=fold_id,
        row_indices=held_out.source_indices.copy(),
        costs=costs,
        policy_names=names,
    )


# ---------------------------------------------------------------------------
# Dataset CSV serialization
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    f = float(v)
    if f == int(f) and abs(f) < 1e15:
        return str(int(f))
    return repr(f)


def write_dataset_csv(ds: Dataset, path, include_segments: bool = True) -> None:
    """Write a dataset as CSV: day_index, features, outcomes, segment labels."""
    d_y = ds.d_y
    header = ["day_index", *ds.feature_names, *[f"y_{j}" for j in range(d_y)]]
    seg = ds.segments if include_segments else None
    if seg is not None:
        if seg.ndim == 1:
            header.append("seg")
        else:
            header.extend(f"seg_{j}" for j in range(d_y))
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n_rows):
            row = [str(int(ds.day_index[i]))]
            row.extend(_fmt(v) for v in ds.X[i])
            row.extend(_fmt(v) for v in ds.Y[i])
            if seg is not None:
                row.extend([seg[i]] if seg.ndim == 1 else list(seg[i]))
            writer.writerow(row)


def read_dataset_csv(path) -> Dataset:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    if header[0] != "day_index":
        raise ValueError("dataset CSV must start with a day_index column")
    y_cols = [i for i, h in enumerate(header) if h.startswith("y_")]
    seg_cols = [i for i, h in enumerate(header) if h == "seg" or h.startswith("seg_")]
    feat_cols = [
        i for i in range(1, len(header)) if i not in y_cols and i not in seg_cols
    ]
    day = np.array([int(r[0]) for r in rows], dtype=np.int64)
    X = np.array([[float(r[i]) for i in feat_cols] for r in rows])
    Y = np.array([[float(r[i]) for i in y_cols] for r in rows])
    segments = None
    if seg_cols:
        seg = np.array([[r[i] for i in seg_cols] for r in rows], dtype="U1")
        segments = seg[:, 0] if len(seg_cols) == 1 and header[seg_cols[0]] == "seg" else seg
    return Dataset(
        X=X,
        Y=Y,
        day_index=day,
        segments=segments,
        feature_names=tuple(header[i] for i in feat_cols),
    )
