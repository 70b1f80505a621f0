"""Low-rank estimation of the users x slots pick-up matrix.

The solver minimizes a (optionally count-weighted) squared loss over the
observed entries plus a nuclear-norm penalty, by iterative soft-thresholded
SVD: fill the unobserved entries with the current estimate, take an SVD,
shrink the singular values, repeat. With unit weights each iteration is the
classic soft-impute step; with pooled counts it is a proximal-gradient step
whose objective is still non-increasing.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Mapping, Sequence

import numpy as np

from .domain import CallLog, N_SLOTS


class TuningError(RuntimeError):
    """Hyperparameter search could not produce a usable fit."""


class ObservationSet:
    """Pooled noisy observations of a matrix: per-cell mean, count, last day.

    Repeated outcomes for one (row, col) cell are pooled into a running
    mean with an integer count instead of being kept as duplicate rows;
    the count doubles as the least-squares weight. A count of zero marks
    an unobserved cell. ``last_day`` tracks the most recent outcome pooled
    into each cell, for recency-based holdout splits.
    """

    __slots__ = ("values", "counts", "last_day")

    def __init__(self, values: np.ndarray, counts: np.ndarray, last_day: np.ndarray | None = None):
        values = np.asarray(values, dtype=float)
        counts = np.asarray(counts, dtype=np.int64)
        if values.shape != counts.shape or values.ndim != 2:
            raise ValueError("values and counts must be matching 2-d arrays")
        if counts.min(initial=0) < 0:
            raise ValueError("counts must be non-negative")
        observed = counts > 0
        if observed.any():
            vals = values[observed]
            if vals.min() < -1e-12 or vals.max() > 1 + 1e-12:
                raise ValueError("observed values must lie in [0, 1]")
        if last_day is None:
            last_day = np.full(values.shape, -1, dtype=np.int32)
        else:
            last_day = np.asarray(last_day, dtype=np.int32)
            if last_day.shape != values.shape:
                raise ValueError("last_day shape mismatch")
        self.values = values
        self.counts = counts
        self.last_day = last_day

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def mask(self) -> np.ndarray:
        return self.counts > 0

    @property
    def n_observed(self) -> int:
        return int(self.mask.sum())

    @classmethod
    def empty(cls, shape: tuple[int, int]) -> ObservationSet:
        return cls(np.zeros(shape), np.zeros(shape, dtype=np.int64))

    @classmethod
    def from_entries(
        cls,
        shape: tuple[int, int],
        entries: Mapping[tuple[int, int], tuple],
    ) -> ObservationSet:
        """Build from a mapping (i, j) -> (value, weight) or (value, weight, day)."""
        values = np.zeros(shape)
        counts = np.zeros(shape, dtype=np.int64)
        days = np.full(shape, -1, dtype=np.int32)
        for (i, j), entry in entries.items():
            values[i, j] = entry[0]
            counts[i, j] = entry[1]
            if len(entry) > 2:
                days[i, j] = entry[2]
        return cls(values, counts, days)

    def items(self) -> Iterator[tuple[tuple[int, int], tuple[float, int]]]:
        for i, j in zip(*np.nonzero(self.mask)):
            yield (int(i), int(j)), (float(self.values[i, j]), int(self.counts[i, j]))

    def add_outcome(self, i: int, j: int, outcome: float, day: int = -1) -> ObservationSet:
        """Pool one 0/1 outcome into cell (i, j); returns a new set."""
        if not (0 <= i < self.shape[0] and 0 <= j < self.shape[1]):
            raise IndexError(f"cell ({i}, {j}) outside {self.shape}")
        values = self.values.copy()
        counts = self.counts.copy()
        days = self.last_day.copy()
        c = counts[i, j]
        values[i, j] = (values[i, j] * c + outcome) / (c + 1)
        counts[i, j] = c + 1
        days[i, j] = max(days[i, j], day)
        # a mean of 0/1 outcomes stays in [0, 1]; skip the full revalidation
        return self._trusted(values, counts, days)

    @classmethod
    def _trusted(cls, values: np.ndarray, counts: np.ndarray, days: np.ndarray) -> ObservationSet:
        obj = object.__new__(cls)
        obj.values = values
        obj.counts = counts
        obj.last_day = days
        return obj


def observations_from_log(log: CallLog) -> ObservationSet:
    """Pool a log's attempted calls into per-(user, slot) means.

    Rows follow ``log.user_table`` order; columns are slot ids 1..7 shifted
    to 0-based indices.
    """
    m = len(log.user_table)
    values = np.zeros((m, N_SLOTS))
    counts = np.zeros((m, N_SLOTS), dtype=np.int64)
    days = np.full((m, N_SLOTS), -1, dtype=np.int32)
    att = log.attempted
    rows = log.user_codes[att]
    cols = log.slots[att].astype(np.int64) - 1
    picked = log.picked[att].astype(float)
    day = log.days[att]
    np.add.at(counts, (rows, cols), 1)
    sums = np.zeros((m, N_SLOTS))
    np.add.at(sums, (rows, cols), picked)
    np.maximum.at(days, (rows, cols), day)
    observed = counts > 0
    values[observed] = sums[observed] / counts[observed]
    return ObservationSet(values, counts, days)


@dataclass(frozen=True)
class CompletedMatrix:
    """Dense estimate returned by the solver, with fit diagnostics."""

    values: np.ndarray
    lam: float
    iterations: int
    objective: float
    converged: bool


def shrink_singular_values(matrix: np.ndarray, threshold: float) -> np.ndarray:
    """Soft-threshold the singular values of a matrix by ``threshold``."""
    u, s, vt = np.linalg.svd(matrix, full_matrices=False)
    shrunk = np.maximum(s - threshold, 0.0)
    return (u * shrunk) @ vt


def objective_value(
    obs: ObservationSet,
    z: np.ndarray,
    lam: float,
    use_weights: bool = True,
) -> float:
    """Weighted squared residual over observed cells plus lam * nuclear norm."""
    z = np.asarray(z, dtype=float)
    if z.shape != obs.shape:
        raise ValueError(f"shape mismatch: estimate {z.shape} vs observations {obs.shape}")
    w = obs.counts if use_weights else obs.mask.astype(np.int64)
    residual = float(np.sum(w * (obs.values - z) ** 2))
    nuclear = float(np.linalg.svd(z, compute_uv=False).sum())
    return residual + lam * nuclear


def complete(
    obs: ObservationSet,
    lam: float,
    tol: float = 1e-6,
    max_iter: int = 500,
    use_weights: bool = True,
) -> CompletedMatrix:
    """Estimate the full matrix from pooled observations.

    Iterates: impute the unobserved cells with the current estimate, SVD,
    shrink singular values, until the relative objective change drops below
    ``tol`` or ``max_iter`` is hit (the result is then flagged, not raised).
    Deterministic for fixed inputs. ``lam == 0`` is permitted only when
    every cell is observed.
    """
    if obs.n_observed == 0:
        raise ValueError("empty observation set")
    if lam < 0:
        raise ValueError("lam must be non-negative")
    fully_observed = obs.n_observed == obs.values.size
    if lam == 0 and not fully_observed:
        raise ValueError("lam == 0 requires a fully observed matrix")

    weights = (obs.counts if use_weights else obs.mask.astype(np.int64)).astype(float)
    w_max = float(weights.max())
    step = weights / w_max
    target = obs.values
    threshold = lam / (2.0 * w_max)

    z = np.zeros(obs.shape)
    objective = _objective(target, weights, z, lam, nuclear=0.0)
    converged = False
    iterations = 0
    for iterations in range(1, max_iter + 1):
        x = z - step * (z - target)
        u, s, vt = np.linalg.svd(x, full_matrices=False)
        shrunk = np.maximum(s - threshold, 0.0)
        z = (u * shrunk) @ vt
        new_objective = _objective(target, weights, z, lam, nuclear=float(shrunk.sum()))
        if abs(objective - new_objective) <= tol * max(objective, 1e-12):
            objective = new_objective
            converged = True
            break
        objective = new_objective
    return CompletedMatrix(
        values=z, lam=lam, iterations=iterations, objective=objective, converged=converged
    )


def _objective(target: np.ndarray, weights: np.ndarray, z: np.ndarray, lam: float, nuclear: float) -> float:
    return float(np.sum(weights * (target - z) ** 2)) + lam * nuclear


def tune_lambda(
    obs: ObservationSet,
    grid: Sequence[float],
    holdout_fraction: float = 0.2,
    recency_key: Mapping[tuple[int, int], int] | None = None,
    tol: float = 1e-6,
    max_iter: int = 500,
    use_weights: bool = True,
) -> tuple[float, dict[float, float]]:
    """Grid-search the regularization weight on a recency holdout.

    The most recent ``holdout_fraction`` of observed cells (by last
    observation day, ties broken by cell index) form the validation set;
    each grid value is fit on the remainder and scored by weighted RMSE on
    the holdout. Returns the best value (ties go to the larger, i.e.
    stronger, regularization) and the full score table.
    """
    if not grid:
        raise ValueError("empty grid")
    if not 0 < holdout_fraction < 1:
        raise ValueError("holdout_fraction must be in (0, 1)")
    cells = [(int(i), int(j)) for i, j in zip(*np.nonzero(obs.mask))]
    if len(cells) < 2:
        raise TuningError("need at least two observed cells to hold one out")
    if recency_key is not None:
        day_of = lambda cell: recency_key[cell]
    else:
        day_of = lambda cell: int(obs.last_day[cell])
    cells.sort(key=lambda cell: (day_of(cell), cell))
    n_holdout = int(round(holdout_fraction * len(cells)))
    n_holdout = min(max(n_holdout, 1), len(cells) - 1)
    holdout = cells[len(cells) - n_holdout :]

    train_counts = obs.counts.copy()
    holdout_mask = np.zeros(obs.shape, dtype=bool)
    for cell in holdout:
        train_counts[cell] = 0
        holdout_mask[cell] = True
    if train_counts.max() == 0:
        raise TuningError("degenerate split: no training cells left")
    train = ObservationSet(
        np.where(train_counts > 0, obs.values, 0.0), train_counts, obs.last_day
    )

    val_w = (obs.counts if use_weights else obs.mask.astype(np.int64))[holdout_mask].astype(float)
    val_m = obs.values[holdout_mask]

    scores: dict[float, float] = {}
    converged: dict[float, bool] = {}
    for lam in grid:
        fit = complete(train, lam, tol=tol, max_iter=max_iter, use_weights=use_weights)
        err = fit.values[holdout_mask] - val_m
        scores[lam] = float(np.sqrt(np.sum(val_w * err**2) / val_w.sum()))
        converged[lam] = fit.converged
    if not any(converged.values()):
        raise TuningError(f"no grid value converged within {max_iter} iterations")

    best = None
    for lam in sorted(set(grid)):
        if best is None or scores[lam] <= scores[best]:
            best = lam
    return best, scores


def write_matrix_csv(values: np.ndarray, path: str | Path) -> None:
    """Dense debugging dump: one row per user, one column per slot."""
    values = np.asarray(values)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"slot_{j}" for j in range(1, values.shape[1] + 1)])
        for row in values:
            writer.writerow([repr(float(x)) for x in row])


def read_matrix_csv(path: str | Path) -> np.ndarray:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        rows = [[float(x) for x in row] for row in reader if row]
    return np.asarray(rows)


def write_observations_csv(obs: ObservationSet, path: str | Path) -> None:
    """Sparse dump of the observed cells: i,j,value,weight,last_day."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "value", "weight", "last_day"])
        for i, j in zip(*np.nonzero(obs.mask)):
            writer.writerow(
                [
                    int(i),
                    int(j),
                    repr(float(obs.values[i, j])),
                    int(obs.counts[i, j]),
                    int(obs.last_day[i, j]),
                ]
            )


def read_observations_csv(path: str | Path, shape: tuple[int, int]) -> ObservationSet:
    entries: dict[tuple[int, int], tuple[float, int, int]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["i", "j", "value", "weight", "last_day"]:
            raise ValueError(f"{path}: unexpected header {header}")
        for row in reader:
            if not row:
                continue
            entries[(int(row[0]), int(row[1]))] = (float(row[2]), int(row[3]), int(row[4]))
    return ObservationSet.from_entries(shape, entries)
