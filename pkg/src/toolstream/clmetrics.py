"""Stage-by-block accuracy matrices and continual-learning summary statistics.

The matrix R holds fractions in [0, 1]: R[i][j] is accuracy on block j+1
after training through stage i+1. Stage 0 (the untrained base model) is
kept separately as the baseline vector used by forward transfer.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "EvalMatrix",
    "BaselineVector",
    "CLSummary",
    "MetricsError",
    "average_accuracy",
    "bwt",
    "fwt",
    "avg_forgetting",
    "aulc",
    "summarize",
    "write_matrix_csv",
    "read_matrix_csv",
    "matrix_from_rows",
]


class MetricsError(Exception):
    pass


@dataclass(frozen=True)
class EvalMatrix:
    values: tuple[tuple[float, ...], ...]
    metric_tag: str = "exact"

    def __post_init__(self):
        rows = tuple(tuple(float(v) for v in row) for row in self.values)
        object.__setattr__(self, "values", rows)
        T = len(rows)
        if T == 0 or any(len(row) != T for row in rows):
            raise MetricsError("evaluation matrix must be square and nonempty")
        if any(not (0.0 <= v <= 1.0) for row in rows for v in row):
            raise MetricsError("matrix entries must be fractions in [0, 1]")

    @property
    def T(self) -> int:
        return len(self.values)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=float)


@dataclass(frozen=True)
class BaselineVector:
    values: tuple[float, ...]

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        object.__setattr__(self, "values", vals)
        if any(not (0.0 <= v <= 1.0) for v in vals):
            raise MetricsError("baseline entries must be fractions in [0, 1]")

    def __len__(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class CLSummary:
    final_aa: float
    bwt: float
    fwt: float
    avg_forgetting: float
    aulc: float

    def to_dict(self) -> dict[str, float]:
        return {
            "final_aa": self.final_aa,
            "bwt": self.bwt,
            "fwt": self.fwt,
            "avg_forgetting": self.avg_forgetting,
            "aulc": self.aulc,
        }


def _require_multistage(matrix: EvalMatrix) -> None:
    if matrix.T < 2:
        raise MetricsError("transfer statistics are undefined for fewer than 2 stages")


def average_accuracy(matrix: EvalMatrix) -> float:
    """Mean accuracy over all blocks at the final stage."""
    return float(np.mean(matrix.as_array()[-1, :]))


def bwt(matrix: EvalMatrix) -> float:
    """Mean final-minus-diagonal accuracy change on earlier blocks."""
    _require_multistage(matrix)
    R = matrix.as_array()
    T = matrix.T
    return float(np.mean([R[-1, j] - R[j, j] for j in range(T - 1)]))


def fwt(matrix: EvalMatrix, baseline: BaselineVector) -> float:
    """Mean prior-stage-minus-baseline accuracy on not-yet-trained blocks."""
    _require_multistage(matrix)
    if len(baseline) != matrix.T:
        raise MetricsError(
            f"baseline length {len(baseline)} does not match T={matrix.T}"
        )
    R = matrix.as_array()
    b = np.asarray(baseline.values, dtype=float)
    T = matrix.T
    return float(np.mean([R[j - 1, j] - b[j] for j in range(1, T)]))


def avg_forgetting(matrix: EvalMatrix) -> float:
    """Mean drop from each earlier block's peak (diagonal onward, before the
    final stage) to its final-stage accuracy."""
    _require_multistage(matrix)
    R = matrix.as_array()
    T = matrix.T
    drops = [np.max(R[j : T - 1, j]) - R[-1, j] for j in range(T - 1)]
    return float(np.mean(drops))


def aulc(matrix: EvalMatrix, seen_only: bool = True) -> float:
    """Area under the learning curve: mean over stages of the stage's
    average accuracy. The default averages only blocks seen so far;
    seen_only=False averages every block at every stage."""
    R = matrix.as_array()
    T = matrix.T
    if seen_only:
        stage_means = [float(np.mean(R[i, : i + 1])) for i in range(T)]
    else:
        stage_means = [float(np.mean(R[i, :])) for i in range(T)]
    return float(np.mean(stage_means))


def summarize(matrix: EvalMatrix, baseline: BaselineVector) -> CLSummary:
    """All five continual-learning statistics for one accuracy matrix."""
    _require_multistage(matrix)
    return CLSummary(
        final_aa=average_accuracy(matrix),
        bwt=bwt(matrix),
        fwt=fwt(matrix, baseline),
        avg_forgetting=avg_forgetting(matrix),
        aulc=aulc(matrix),
    )


def write_matrix_csv(
    path: str | Path,
    T: int,
    rows: Mapping[int, Sequence[float]],
    block_ids: Sequence[int] | None = None,
) -> None:
    """Write stage rows (stage 0 allowed as the baseline row) as CSV.

    Values are written with Python's shortest round-trip float
    representation so reading the file back is lossless.
    """
    ids = list(block_ids) if block_ids is not None else list(range(1, T + 1))
    if len(ids) != T:
        raise MetricsError(f"expected {T} block ids, got {len(ids)}")
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage"] + [f"block_{b}" for b in ids])
        for stage in sorted(rows):
            row = list(rows[stage])
            if len(row) != T:
                raise MetricsError(f"stage {stage} row has {len(row)} values, expected {T}")
            writer.writerow([stage] + [repr(float(v)) for v in row])


def read_matrix_csv(path: str | Path) -> tuple[int, dict[int, list[float]], list[int]]:
    """Read a matrix CSV back as (T, stage -> row values, block ids)."""
    with Path(path).open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise MetricsError(f"{path}: empty matrix file") from None
        if not header or header[0] != "stage":
            raise MetricsError(f"{path}: matrix header must start with 'stage'")
        try:
            block_ids = [int(col.removeprefix("block_")) for col in header[1:]]
        except ValueError as exc:
            raise MetricsError(f"{path}: bad block column header: {exc}") from exc
        T = len(block_ids)
        rows: dict[int, list[float]] = {}
        for line in reader:
            if not line:
                continue
            try:
                stage = int(line[0])
                values = [float(v) for v in line[1:]]
            except ValueError as exc:
                raise MetricsError(f"{path}: bad matrix row {line!r}: {exc}") from exc
            if len(values) != T:
                raise MetricsError(f"{path}: stage {stage} row has {len(values)} values, expected {T}")
            rows[stage] = values
    return T, rows, block_ids


def matrix_from_rows(
    rows: Mapping[int, Sequence[float]], T: int, metric_tag: str = "exact"
) -> tuple[EvalMatrix, BaselineVector | None]:
    """Assemble an EvalMatrix (stages 1..T required) and the optional
    stage-0 baseline from stage-indexed rows."""
    missing = [s for s in range(1, T + 1) if s not in rows]
    if missing:
        raise MetricsError(f"matrix is missing stage rows: {missing}")
    matrix = EvalMatrix(
        values=tuple(tuple(rows[s]) for s in range(1, T + 1)),
        metric_tag=metric_tag,
    )
    baseline = BaselineVector(tuple(rows[0])) if 0 in rows else None
    return matrix, baseline
