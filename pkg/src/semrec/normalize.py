"""Per-relation additive and scale normalization.

Heterogeneous relationship types carry incomparable weight scales, so each
relation's adjacency is normalized on its own before aggregation: a baseline
(global, row, column, or combined mean of the stored entries) is subtracted,
then the result is divided by a power-iteration estimate of its spectral norm
so every normalized block contributes O(1) spectral mass. Mode "none" is the
exact identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import SparseMatrix, fmt_real

MODES = ("none", "global_mean", "row_mean", "col_mean", "row_col")

SCALE_FLOOR = 1e-12
POWER_ITERATIONS = 30


class NormalizationError(ValueError):
    pass


@dataclass
class NormalizationParams:
    """Fitted baseline and scale for one relation's adjacency matrix."""

    rel: str
    mode: str
    rows: int
    cols: int
    global_mean: float = 0.0
    row_means: np.ndarray | None = None
    col_means: np.ndarray | None = None
    scale: float = 1.0

    def baseline(self, row: int, col: int) -> float:
        """The subtracted approximation for position (row, col)."""
        if self.mode == "none":
            return 0.0
        if self.mode == "global_mean":
            return self.global_mean
        if self.mode == "row_mean":
            return float(self.row_means[row])
        if self.mode == "col_mean":
            return float(self.col_means[col])
        # row_col: global + row offset + column offset
        return float(self.row_means[row] + self.col_means[col] - self.global_mean)


def default_mode(weight_range: str) -> str:
    """Weighted relations get the global-mean baseline; the rest pass through."""
    return "global_mean" if weight_range == "weighted" else "none"


def spectral_norm_estimate(matrix: SparseMatrix, iterations: int = POWER_ITERATIONS) -> float:
    """Largest singular value via power iteration on M^T M, deterministic start."""
    r, c, v = matrix.to_arrays()
    if len(v) == 0 or not np.any(v):
        return 0.0
    rng = np.random.default_rng(0)
    x = rng.standard_normal(matrix.cols)
    x /= np.linalg.norm(x)
    for _ in range(iterations):
        y = np.zeros(matrix.rows)
        np.add.at(y, r, v * x[c])
        z = np.zeros(matrix.cols)
        np.add.at(z, c, v * y[r])
        nz = np.linalg.norm(z)
        if nz == 0.0:
            return 0.0
        x = z / nz
    y = np.zeros(matrix.rows)
    np.add.at(y, r, v * x[c])
    return float(np.linalg.norm(y))


def fit(matrix: SparseMatrix, mode: str, rel: str = "") -> NormalizationParams:
    """Fit baseline means over the stored entries, then the scale divisor.

    Means ignore absent positions entirely. Rows or columns with no stored
    entries fall back to the global mean. The scale is the spectral norm of
    the baseline-subtracted matrix, floored to stay a valid divisor.
    """
    if mode not in MODES:
        raise NormalizationError(f"unknown normalization mode {mode!r}")
    if mode == "none":
        return NormalizationParams(rel=rel, mode=mode, rows=matrix.rows, cols=matrix.cols)
    if matrix.nnz == 0:
        raise NormalizationError(f"cannot fit mode {mode!r} on an empty matrix")

    r, c, v = matrix.to_arrays()
    g = float(v.mean())
    params = NormalizationParams(rel=rel, mode=mode, rows=matrix.rows, cols=matrix.cols,
                                 global_mean=g)
    if mode in ("row_mean", "row_col"):
        sums = np.zeros(matrix.rows)
        counts = np.zeros(matrix.rows)
        np.add.at(sums, r, v)
        np.add.at(counts, r, 1.0)
        means = np.full(matrix.rows, g)
        seen = counts > 0
        means[seen] = sums[seen] / counts[seen]
        params.row_means = means
    if mode in ("col_mean", "row_col"):
        sums = np.zeros(matrix.cols)
        counts = np.zeros(matrix.cols)
        np.add.at(sums, c, v)
        np.add.at(counts, c, 1.0)
        means = np.full(matrix.cols, g)
        seen = counts > 0
        means[seen] = sums[seen] / counts[seen]
        params.col_means = means

    centered = SparseMatrix(matrix.rows, matrix.cols)
    for i, j, a in matrix.items():
        centered.set(i, j, a - params.baseline(i, j))
    params.scale = max(spectral_norm_estimate(centered), SCALE_FLOOR)
    return params


def apply(matrix: SparseMatrix, params: NormalizationParams) -> SparseMatrix:
    """Transform stored entries to (value - baseline) / scale.

    The sparsity pattern is preserved exactly: entries that land on the
    baseline stay in the pattern with value 0, and absent positions stay
    absent, so observed-vs-missing survives normalization.
    """
    if (matrix.rows, matrix.cols) != (params.rows, params.cols):
        raise NormalizationError(
            f"params fitted on {params.rows}x{params.cols}, "
            f"matrix is {matrix.rows}x{matrix.cols}")
    if params.mode == "none":
        return matrix
    out = SparseMatrix(matrix.rows, matrix.cols)
    for i, j, a in matrix.items():
        out.set(i, j, (a - params.baseline(i, j)) / params.scale)
    return out


def denormalize(score: float, params: NormalizationParams,
                row: int | None = None, col: int | None = None) -> float:
    """Map a normalized score back to the original scale: score * scale + baseline."""
    if params.mode == "none":
        return float(score)
    if params.mode in ("row_mean", "row_col") and row is None:
        raise NormalizationError(f"mode {params.mode!r} needs the row index to denormalize")
    if params.mode in ("col_mean", "row_col") and col is None:
        raise NormalizationError(f"mode {params.mode!r} needs the column index to denormalize")
    return float(score) * params.scale + params.baseline(row if row is not None else 0,
                                                         col if col is not None else 0)


# -- model-file serialization ----------------------------------------------

def params_to_lines(params: NormalizationParams) -> list[str]:
    lines = [f"norm {params.rel} {params.mode} {fmt_real(params.global_mean)} "
             f"{fmt_real(params.scale)} {params.rows} {params.cols}"]
    if params.row_means is not None:
        lines.append("rowmeans " + " ".join(fmt_real(x) for x in params.row_means))
    if params.col_means is not None:
        lines.append("colmeans " + " ".join(fmt_real(x) for x in params.col_means))
    return lines


def params_from_lines(header: str, extra: list[str]) -> NormalizationParams:
    tok = header.split()
    if tok[0] != "norm" or len(tok) != 7:
        raise NormalizationError(f"bad normalization header: {header!r}")
    params = NormalizationParams(rel=tok[1], mode=tok[2], rows=int(tok[5]), cols=int(tok[6]),
                                 global_mean=float(tok[3]), scale=float(tok[4]))
    for line in extra:
        key, _, rest = line.partition(" ")
        values = np.array([float(x) for x in rest.split()]) if rest else np.zeros(0)
        if key == "rowmeans":
            params.row_means = values
        elif key == "colmeans":
            params.col_means = values
        else:
            raise NormalizationError(f"bad normalization line: {line!r}")
    return params
