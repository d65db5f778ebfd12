"""Paired comparison of classifiers across datasets.

The Wilcoxon signed-rank test drops zero differences, ranks the absolute
differences with average ranks for ties, and reports a two-sided p-value:
exact (by the null distribution of the positive rank sum under random
signs) for up to :data:`EXACT_MAX_N` non-zero pairs, and a tie-corrected
normal approximation with continuity correction above that.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ContractError, ParseError

EXACT_MAX_N = 12


@dataclass(frozen=True)
class WilcoxonResult:
    n_effective: int
    w_plus: float
    w_minus: float
    p_value: float
    method: str  # "exact", "normal-approx" or "degenerate"


def average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks of ``x`` with ties sharing their mean rank."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    return ranks


def _tie_sizes(x: np.ndarray) -> np.ndarray:
    _, counts = np.unique(x, return_counts=True)
    return counts


def _exact_p(ranks: np.ndarray, w_plus: float) -> float:
    # Ranks are multiples of 1/2, so doubled ranks are integers and the null
    # distribution of 2*W+ is a convolution over {0, 2r_i} per pair.
    doubled = np.rint(2 * ranks).astype(np.int64)
    total = int(doubled.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in doubled:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts = counts + shifted
    counts /= counts.sum()
    # Two-sided: P(|2W - total/2| >= |2w - total/2|), compared in 4x units to stay integral.
    support = np.arange(total + 1)
    obs = abs(4 * int(round(2 * w_plus)) - 2 * total)
    dev = np.abs(4 * support - 2 * total)
    return float(min(1.0, counts[dev >= obs].sum()))


def _normal_p(n: int, w_plus: float, ties: np.ndarray) -> float:
    mu = n * (n + 1) / 4.0
    var = (n * (n + 1) * (2 * n + 1) - np.sum(ties**3 - ties) / 2.0) / 24.0
    if var <= 0:
        return 1.0
    z = max(0.0, abs(w_plus - mu) - 0.5) / math.sqrt(var)
    return float(min(1.0, math.erfc(z / math.sqrt(2.0))))


def wilcoxon_signed_rank(a: Sequence[float], b: Sequence[float], *, exact_max_n: int = EXACT_MAX_N) -> WilcoxonResult:
    """Two-sided Wilcoxon signed-rank test on the paired differences ``a - b``.

    NaN entries (missing results) are dropped pairwise.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"paired samples must be equal-length vectors, got {a.shape} and {b.shape}")
    if a.size < 1:
        raise ContractError("need at least one pair")
    keep = ~(np.isnan(a) | np.isnan(b))
    d = a[keep] - b[keep]
    d = d[d != 0]
    n = d.size
    if n == 0:
        return WilcoxonResult(0, 0.0, 0.0, 1.0, "degenerate")
    absd = np.abs(d)
    ranks = average_ranks(absd)
    w_plus = float(ranks[d > 0].sum())
    w_minus = float(ranks[d < 0].sum())
    if n <= exact_max_n:
        return WilcoxonResult(n, w_plus, w_minus, _exact_p(ranks, w_plus), "exact")
    return WilcoxonResult(n, w_plus, w_minus, _normal_p(n, w_plus, _tie_sizes(absd)), "normal-approx")


# ---------------------------------------------------------------------------
# results tables


@dataclass
class ResultsTable:
    """Datasets x models accuracy matrix; ``nan`` marks a missing result."""

    datasets: list[str]
    models: list[str]
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (len(self.datasets), len(self.models)):
            raise ContractError(f"values {self.values.shape} do not match {len(self.datasets)} x {len(self.models)}")
        for kind, names in (("dataset", self.datasets), ("model", self.models)):
            if len(set(names)) != len(names):
                raise ContractError(f"duplicate {kind} names")
        present = self.values[~np.isnan(self.values)]
        if np.any((present < 0) | (present > 1)):
            raise ContractError("accuracies must lie in [0, 1]")

    def column(self, model: str) -> np.ndarray:
        try:
            return self.values[:, self.models.index(model)]
        except ValueError:
            raise KeyError(f"unknown model {model!r}") from None

    def rows_where_present(self, model: str) -> "ResultsTable":
        keep = ~np.isnan(self.column(model))
        return ResultsTable([d for d, k in zip(self.datasets, keep) if k], list(self.models), self.values[keep])

    def with_best_of(self, name: str, models: Sequence[str]) -> "ResultsTable":
        """Append a column holding the per-dataset maximum over ``models``."""
        cols = np.stack([self.column(m) for m in models], axis=1)
        with np.errstate(all="ignore"):
            best = np.where(np.all(np.isnan(cols), axis=1), np.nan, np.nanmax(np.where(np.isnan(cols), -np.inf, cols), axis=1))
        return ResultsTable(list(self.datasets), self.models + [name], np.column_stack([self.values, best]))


def parse_results_csv(text: str, source=None) -> ResultsTable:
    rows = list(csv.reader(io.StringIO(text)))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if len(rows) < 2:
        raise ParseError("need a header row and at least one dataset row", path=source)
    header = [h.strip() for h in rows[0]]
    models = header[1:]
    if not models:
        raise ParseError("header has no model columns", path=source, line=1)
    datasets, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise ParseError(f"row has {len(row)} cells, header has {len(header)}", path=source, line=lineno)
        datasets.append(row[0].strip())
        vals = []
        for model, cell in zip(models, row[1:]):
            cell = cell.strip()
            if cell in ("", "-"):
                vals.append(np.nan)
                continue
            try:
                v = float(cell)
            except ValueError:
                raise ParseError(f"non-numeric accuracy {cell!r} for {model}", path=source, line=lineno) from None
            if not 0 <= v <= 1:
                raise ParseError(f"accuracy {v} for {model} outside [0, 1]", path=source, line=lineno)
            vals.append(v)
        values.append(vals)
    try:
        return ResultsTable(datasets, models, np.array(values))
    except ContractError as exc:
        raise ParseError(str(exc), path=source) from None


def read_results_csv(path) -> ResultsTable:
    return parse_results_csv(Path(path).read_text(), source=path)


def pairwise_matrix(table: ResultsTable) -> np.ndarray:
    """Lower-triangular matrix of pairwise Wilcoxon p-values.

    Entry ``[i, j]`` for ``i > j`` compares models ``i`` and ``j`` over the
    datasets where both have results (``nan`` if there are none). The
    diagonal is 0 and the upper triangle ``nan``.
    """
    k = len(table.models)
    if k < 2:
        raise ContractError("need at least two models")
    out = np.full((k, k), np.nan)
    np.fill_diagonal(out, 0.0)
    for i in range(k):
        for j in range(i):
            a, b = table.values[:, i], table.values[:, j]
            both = ~(np.isnan(a) | np.isnan(b))
            if both.sum() >= 1:
                out[i, j] = wilcoxon_signed_rank(a[both], b[both]).p_value
    return out


def format_matrix_csv(models: Sequence[str], matrix: np.ndarray) -> str:
    """Square CSV, models in input order; 6 significant digits, blank for missing."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([""] + list(models))
    for name, row in zip(models, matrix):
        w.writerow([name] + ["" if np.isnan(v) else f"{v:.6g}" for v in row])
    return buf.getvalue()


@dataclass(frozen=True)
class Summary:
    sota_wins: int
    sota_ties: int
    losses: int


def summarize(table: ResultsTable, model: str, baselines: Sequence[str]) -> Summary:
    """Count datasets where ``model`` beats, ties, or trails the best present baseline."""
    mine = table.column(model)
    base = np.stack([table.column(b) for b in baselines], axis=1)
    wins = ties = losses = 0
    for x, row in zip(mine, base):
        row = row[~np.isnan(row)]
        if row.size == 0 or np.isnan(x):
            continue
        top = row.max()
        if x > top:
            wins += 1
        elif x == top:
            ties += 1
        else:
            losses += 1
    return Summary(wins, ties, losses)
