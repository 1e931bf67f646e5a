"""Reconstruction error, Wilcoxon signed-rank test and result tables."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, fields

import numpy as np
from scipy.stats import rankdata

from tdbm.deep import StackedModel, reconstruct
from tdbm.errors import DataError, DimensionError, InsufficientDataError

EXACT_MAX_N = 25
MIN_PAIRS = 5


@dataclass(frozen=True)
class RunResult:
    model_kind: str
    algorithm: str
    temperature: float
    run_index: int
    test_mse: float

    @property
    def row_label(self) -> str:
        return f"{self.model_kind}-{self.algorithm}"


@dataclass(frozen=True)
class WilcoxonOutcome:
    statistic: float
    n_effective: int
    p_value: float
    significant: bool


def mse(original, reconstruction) -> float:
    v = np.asarray(original, dtype=np.float64)
    r = np.asarray(reconstruction, dtype=np.float64)
    if v.shape != r.shape:
        raise DimensionError(f"original {v.shape} vs reconstruction {r.shape}")
    return float(np.mean((v - r) ** 2))


def dataset_mse(model: StackedModel, test, binarize_reconstruction: bool = False,
                fixed_point_iters: int = 0) -> float:
    """Average per-item MSE of ``reconstruct`` over a test set."""
    test = np.asarray(test, dtype=np.float64)
    if test.ndim != 2 or len(test) == 0:
        raise InsufficientDataError("dataset_mse needs a non-empty 2-D test set")
    rec = reconstruct(model, test, fixed_point_iters=fixed_point_iters)
    if binarize_reconstruction:
        rec = (rec > 0.5).astype(np.float64)
    return float(np.mean(np.mean((test - rec) ** 2, axis=1)))


# -- Wilcoxon signed-rank ----------------------------------------------------

def _doubled_ranks(d: np.ndarray) -> np.ndarray:
    # Mid-ranks are multiples of 1/2; doubling keeps the exact null integral.
    return np.rint(2 * rankdata(np.abs(d))).astype(np.int64)


def signed_rank_null_counts(ranks2: np.ndarray) -> np.ndarray:
    """``counts[s]`` = number of sign assignments whose doubled W+ equals ``s``."""
    counts = np.zeros(int(ranks2.sum()) + 1, dtype=np.int64)
    counts[0] = 1
    hi = 0
    for r in ranks2:
        counts[r:hi + r + 1] = counts[r:hi + r + 1] + counts[: hi + 1]
        hi += r
    return counts


def normal_approx_p(ranks: np.ndarray, statistic: float) -> float:
    """Two-sided p-value of ``statistic`` under the tie-corrected normal law."""
    n = len(ranks)
    mean = n * (n + 1) / 4
    _, ties = np.unique(ranks, return_counts=True)
    var = n * (n + 1) * (2 * n + 1) / 24 - (ties**3 - ties).sum() / 48
    z = (statistic - mean + 0.5) / math.sqrt(var)
    return min(1.0, math.erfc(-z / math.sqrt(2)))


def wilcoxon_signed_rank(x, y, alpha: float = 0.05) -> WilcoxonOutcome:
    """Two-sided paired Wilcoxon signed-rank test.

    Zero differences are dropped and tied magnitudes get mid-ranks.  The
    statistic is ``min(W+, W-)``.  Up to 25 non-zero pairs the p-value comes
    from the exact permutation distribution of the observed ranks; above that
    a normal approximation with tie and continuity corrections is used.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise DimensionError(f"paired samples must be equal-length vectors, got {x.shape} and {y.shape}")
    d = x - y
    d = d[d != 0]
    n = len(d)
    if n < MIN_PAIRS:
        raise InsufficientDataError(f"{n} non-zero paired differences; need at least {MIN_PAIRS}")
    ranks2 = _doubled_ranks(d)
    w_plus2 = int(ranks2[d > 0].sum())
    total2 = int(ranks2.sum())
    stat2 = min(w_plus2, total2 - w_plus2)

    if n <= EXACT_MAX_N:
        counts = signed_rank_null_counts(ranks2)
        p = min(1.0, 2 * int(counts[: stat2 + 1].sum()) / 2**n)
    else:
        p = normal_approx_p(ranks2 / 2, stat2 / 2)
    return WilcoxonOutcome(stat2 / 2, n, p, p < alpha)


def mark_best_group(columns: dict, alpha: float = 0.05) -> set:
    """Keys of the lowest-mean column and every column statistically tied to it.

    ``columns`` maps a key (e.g. a temperature) to per-run values paired by
    run index.  Columns whose differences to the best are all zero count as
    tied.
    """
    if len(columns) < 2:
        raise InsufficientDataError("need at least two columns to compare")
    lengths = {len(v) for v in columns.values()}
    if len(lengths) != 1 or lengths.pop() < MIN_PAIRS:
        raise InsufficientDataError(f"every column needs the same number (>= {MIN_PAIRS}) of runs")
    means = {k: float(np.mean(v)) for k, v in columns.items()}
    best = min(means, key=means.get)
    group = {best}
    for key, vals in columns.items():
        if key == best:
            continue
        try:
            tied = not wilcoxon_signed_rank(columns[best], vals, alpha).significant
        except InsufficientDataError:
            tied = True
        if tied:
            group.add(key)
    return group


# -- result files ------------------------------------------------------------

RESULT_FIELDS = [f.name for f in fields(RunResult)]


def results_sort_key(r: RunResult):
    return (r.model_kind, r.algorithm, r.temperature, r.run_index)


def write_results_csv(path, results) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(RESULT_FIELDS)
        for r in sorted(results, key=results_sort_key):
            w.writerow([r.model_kind, r.algorithm, repr(r.temperature), r.run_index, repr(r.test_mse)])


def read_results_csv(path) -> list[RunResult]:
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    try:
        return [RunResult(r["model_kind"], r["algorithm"], float(r["temperature"]),
                          int(r["run_index"]), float(r["test_mse"])) for r in rows]
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: malformed results file ({exc})") from exc


def result_to_dict(r: RunResult) -> dict:
    return asdict(r)


def render_table(results, alpha: float = 0.05, title: str = "Average MSE over the test set") -> str:
    """Rows per model-algorithm, one column per temperature, best group starred.

    Stars are only assigned when a row has at least five runs per temperature
    and at least two temperatures.
    """
    grid: dict[str, dict[float, dict[int, float]]] = {}
    for r in results:
        grid.setdefault(r.row_label, {}).setdefault(r.temperature, {})[r.run_index] = r.test_mse
    temps = sorted({r.temperature for r in results})
    width = 10
    lines = [title, " " * 10 + "".join(f"{t:>{width}g}" for t in temps)]
    for label in sorted(grid):
        row = grid[label]
        runs = sorted(set.intersection(*(set(c) for c in row.values())))
        best = set()
        if len(row) >= 2 and len(runs) >= MIN_PAIRS:
            best = mark_best_group({t: [row[t][i] for i in runs] for t in row}, alpha)
        cells = []
        for t in temps:
            if t not in row:
                cells.append(f"{'-':>{width}}")
                continue
            mark = "*" if t in best else " "
            cells.append(f"{np.mean(list(row[t].values())):>{width - 1}.5f}{mark}")
        lines.append(f"{label:<10}" + "".join(cells))
    lines.append("* best group (Wilcoxon signed-rank, alpha = %g)" % alpha)
    return "\n".join(lines) + "\n"
