"""Dataset pooling analysis: improvement matrices, partner quality, selection.

An accuracy table holds, for each dataset, its standalone accuracy, the
accuracy of every (evaluated, partner) joint-training pair, and its chance
level.  The improvement matrix is joint minus standalone per evaluated row
with a zero diagonal.  Partner quality correlates each dataset's standalone
accuracy with the mean off-diagonal improvement it confers on the others
(column means; row means, the improvement a dataset receives, are available
behind a flag).  Significance comes from the two-sided t-distribution test
on the Pearson correlation with n - 2 degrees of freedom.

Table file format (UTF-8, whitespace-separated):

    datasets    <name> <name> ...
    standalone  <value per dataset>
    joint <evaluated-name> <value per partner, '-' allowed on the diagonal>
    ...                          (one joint row per dataset, header order)
    chance      <value per dataset>
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import LatticeFormatError

__all__ = [
    "AccuracyTable",
    "improvement_matrix",
    "quality_correlation",
    "select_pool",
    "welch_t_test",
    "save_table_file",
    "load_table_file",
]


@dataclass(frozen=True)
class AccuracyTable:
    """Standalone, pairwise-joint, and chance accuracies for named datasets."""

    datasets: tuple[str, ...]
    standalone: tuple[float, ...]
    joint: tuple[tuple[float, ...], ...]  # joint[i][j]: dataset i trained with partner j
    chance: tuple[float, ...]

    def __post_init__(self):
        n = len(self.datasets)
        if n < 2:
            raise ValueError("an accuracy table needs at least two datasets")
        if len(set(self.datasets)) != n:
            raise ValueError("dataset names must be unique")
        if len(self.standalone) != n or len(self.chance) != n:
            raise ValueError("standalone and chance rows must cover every dataset")
        if len(self.joint) != n or any(len(row) != n for row in self.joint):
            raise ValueError(f"joint matrix must be {n}x{n}")

    def index_of(self, name: str) -> int:
        try:
            return self.datasets.index(name)
        except ValueError:
            raise KeyError(f"unknown dataset {name!r}") from None


def improvement_matrix(table: AccuracyTable) -> np.ndarray:
    """joint minus standalone per evaluated row; diagonal is zero."""
    n = len(table.datasets)
    joint = np.asarray(table.joint, dtype=np.float64)
    standalone = np.asarray(table.standalone, dtype=np.float64)
    delta = joint - standalone[:, None]
    np.fill_diagonal(delta, 0.0)
    return delta


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = math.sqrt(float((xc**2).sum()) * float((yc**2).sum()))
    if denom == 0.0:
        raise ValueError("correlation is undefined for constant inputs")
    return float((xc * yc).sum()) / denom


def quality_correlation(table: AccuracyTable, direction: str = "conferred") -> tuple[float, float]:
    """Pearson r and two-sided p between standalone accuracy and improvement.

    ``conferred`` (default) uses the mean off-diagonal improvement each
    dataset gives the others as a partner (column means of the improvement
    matrix); ``received`` uses row means instead.
    """
    if direction not in ("conferred", "received"):
        raise ValueError(f"unknown direction {direction!r}")
    n = len(table.datasets)
    if n < 3:
        raise ValueError("correlation significance needs at least three datasets")
    delta = improvement_matrix(table)
    mask = ~np.eye(n, dtype=bool)
    if direction == "conferred":
        means = np.array([delta[:, j][mask[:, j]].mean() for j in range(n)])
    else:
        means = np.array([delta[i, :][mask[i, :]].mean() for i in range(n)])
    x = np.asarray(table.standalone, dtype=np.float64)
    r = _pearson(x, means)
    df = n - 2
    if abs(r) >= 1.0:
        return r, 0.0
    t = r * math.sqrt(df / (1.0 - r * r))
    p = 2.0 * float(stats.t.sf(abs(t), df))
    return r, p


def select_pool(table: AccuracyTable, target: str, k: int) -> list[str]:
    """Top ``k`` partners for ``target`` by standalone accuracy, ties by name."""
    if k < 0:
        raise ValueError(f"k must be >= 0, got {k}")
    target_index = table.index_of(target)
    partners = [
        (name, table.standalone[i])
        for i, name in enumerate(table.datasets)
        if i != target_index
    ]
    if k > len(partners):
        raise ValueError(f"cannot select {k} partners from {len(partners)}")
    partners.sort(key=lambda pair: (-pair[1], pair[0]))
    return [name for name, _ in partners[:k]]


def welch_t_test(a: Sequence[float], b: Sequence[float]) -> tuple[float, float]:
    """Two-sample unequal-variance t statistic and two-sided p value."""
    x = np.asarray(a, dtype=np.float64)
    y = np.asarray(b, dtype=np.float64)
    if x.size < 2 or y.size < 2:
        raise ValueError("each sample needs at least two observations")
    result = stats.ttest_ind(x, y, equal_var=False)
    return float(result.statistic), float(result.pvalue)


def save_table_file(table: AccuracyTable, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("datasets " + " ".join(table.datasets) + "\n")
        fh.write("standalone " + " ".join(f"{v:.6f}" for v in table.standalone) + "\n")
        for i, name in enumerate(table.datasets):
            cells = []
            for j in range(len(table.datasets)):
                cells.append("-" if i == j else f"{table.joint[i][j]:.6f}")
            fh.write(f"joint {name} " + " ".join(cells) + "\n")
        fh.write("chance " + " ".join(f"{v:.6f}" for v in table.chance) + "\n")


def _parse_values(cells: list[str], n: int, line_number: int, what: str) -> tuple[float, ...]:
    if len(cells) != n:
        raise LatticeFormatError(
            f"{what} row has {len(cells)} values, expected {n}", line_number
        )
    try:
        return tuple(float(c) for c in cells)
    except ValueError:
        raise LatticeFormatError(f"{what} row contains a non-numeric value", line_number)


def load_table_file(path) -> AccuracyTable:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    rows = [
        (number, line.split())
        for number, line in enumerate(lines, start=1)
        if line.strip()
    ]
    if not rows:
        raise LatticeFormatError("table file is empty", 1)
    number, cells = rows[0]
    if not cells or cells[0] != "datasets" or len(cells) < 3:
        raise LatticeFormatError("first row must be 'datasets <name> <name> ...'", number)
    datasets = tuple(cells[1:])
    n = len(datasets)
    standalone: tuple[float, ...] | None = None
    chance: tuple[float, ...] | None = None
    joint_rows: dict[str, tuple[float, ...]] = {}
    standalone_by_name: dict[str, float] = {}
    for number, cells in rows[1:]:
        kind = cells[0]
        if kind == "standalone":
            standalone = _parse_values(cells[1:], n, number, "standalone")
            standalone_by_name = dict(zip(datasets, standalone))
        elif kind == "chance":
            chance = _parse_values(cells[1:], n, number, "chance")
        elif kind == "joint":
            if len(cells) < 2:
                raise LatticeFormatError("joint row is missing its dataset name", number)
            name = cells[1]
            if name not in datasets:
                raise LatticeFormatError(f"joint row names unknown dataset {name!r}", number)
            if name in joint_rows:
                raise LatticeFormatError(f"duplicate joint row for {name!r}", number)
            if standalone is None:
                raise LatticeFormatError("joint rows must come after the standalone row", number)
            raw = cells[2:]
            if len(raw) != n:
                raise LatticeFormatError(
                    f"joint row has {len(raw)} values, expected {n}", number
                )
            values = []
            for j, cell in enumerate(raw):
                if cell == "-":
                    if datasets[j] != name:
                        raise LatticeFormatError(
                            f"'-' is only allowed on the diagonal, found in column {j}", number
                        )
                    values.append(standalone_by_name[name])
                else:
                    try:
                        values.append(float(cell))
                    except ValueError:
                        raise LatticeFormatError(
                            f"joint row contains non-numeric value {cell!r}", number
                        )
            joint_rows[name] = tuple(values)
        else:
            raise LatticeFormatError(f"unknown row kind {kind!r}", number)
    if standalone is None:
        raise LatticeFormatError("table is missing its standalone row", 1)
    if chance is None:
        raise LatticeFormatError("table is missing its chance row", 1)
    missing = [name for name in datasets if name not in joint_rows]
    if missing:
        raise LatticeFormatError(f"table is missing joint rows for {missing}", 1)
    return AccuracyTable(
        datasets=datasets,
        standalone=standalone,
        joint=tuple(joint_rows[name] for name in datasets),
        chance=chance,
    )
