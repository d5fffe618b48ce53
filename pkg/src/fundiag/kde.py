"""Two-dimensional Gaussian kernel density estimation.

The estimate at a query point x for samples X_1..X_N is

    p_hat(x) = 1 / (N * 2*pi * |S|^(1/2)) * sum_i exp(-(x - X_i)' S^-1 (x - X_i) / 2)

with S a symmetric positive-definite 2x2 bandwidth matrix.  The default
bandwidth is the two-dimensional normal-reference diagonal rule
S_ii = (sigma_i * N^(-1/6))^2, with a fixed-diagonal override for
reproducible runs.  Mode finding is grid-based: strict local maxima over
8-neighborhoods with non-maximum suppression.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BandwidthMatrix:
    """Symmetric positive-definite 2x2 bandwidth (covariance) matrix."""

    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (2, 2):
            raise ValueError("bandwidth matrix must be 2x2")
        if not np.allclose(m, m.T, rtol=0, atol=1e-12):
            raise ValueError("bandwidth matrix must be symmetric")
        if np.linalg.eigvalsh(m).min() <= 0:
            raise ValueError("bandwidth matrix must be positive definite")
        object.__setattr__(self, "matrix", m)

    @classmethod
    def fixed_diagonal(cls, h1: float, h2: float) -> "BandwidthMatrix":
        """diag(h1^2, h2^2) from per-axis kernel widths h1, h2."""
        if not (h1 > 0 and h2 > 0):
            raise ValueError("kernel widths must be positive")
        return cls(np.diag([h1 * h1, h2 * h2]))

    @property
    def axis_widths(self) -> tuple[float, float]:
        """Per-axis kernel standard deviations sqrt(S_ii)."""
        return (math.sqrt(self.matrix[0, 0]), math.sqrt(self.matrix[1, 1]))


def rule_of_thumb_bandwidth(points) -> BandwidthMatrix:
    """Normal-reference diagonal rule for d=2: S_ii = (sigma_i * N^(-1/6))^2.

    ``sigma_i`` is the per-axis sample standard deviation (ddof=1).
    Requires N >= 2 and non-degenerate axes.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n < 2:
        raise ValueError("need at least 2 points for the rule of thumb")
    sigma = pts.std(axis=0, ddof=1)
    if np.any(sigma <= 0):
        raise ValueError("degenerate axis: zero sample variance")
    h = sigma * n ** (-1.0 / 6.0)
    return BandwidthMatrix(np.diag(h * h))


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (N, 2) array")
    if pts.shape[0] < 1:
        raise ValueError("need at least one point")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


@dataclass(frozen=True)
class KdeModel:
    """An immutable Gaussian KDE over 2-d sample points."""

    points: np.ndarray
    bandwidth: BandwidthMatrix
    normalization: float

    def __post_init__(self) -> None:
        pts = _as_points(self.points)
        object.__setattr__(self, "points", pts)
        closed = _normalization(pts.shape[0], self.bandwidth.matrix)
        if abs(self.normalization - closed) > 1e-12 * closed:
            raise ValueError("stored normalization disagrees with closed form")

    @classmethod
    def fit(cls, points, bandwidth: BandwidthMatrix | None = None) -> "KdeModel":
        pts = _as_points(points)
        if bandwidth is None:
            bandwidth = rule_of_thumb_bandwidth(pts)
        return cls(pts, bandwidth, _normalization(pts.shape[0], bandwidth.matrix))


def _normalization(n: int, sigma: np.ndarray) -> float:
    det = float(np.linalg.det(sigma))
    return 1.0 / (n * 2.0 * math.pi * math.sqrt(det))


def evaluate(model: KdeModel, x) -> float:
    """The density estimate at one query point."""
    q = np.asarray(x, dtype=float).reshape(2)
    inv = np.linalg.inv(model.bandwidth.matrix)
    diff = model.points - q
    dist2 = np.einsum("ij,jk,ik->i", diff, inv, diff)
    return float(model.normalization * np.exp(-0.5 * dist2).sum())


@dataclass(frozen=True)
class DensityGrid:
    """Density evaluations over a rectangular grid.

    ``values[i, j]`` is the estimate at ``(x[i], y[j])``; rows follow the
    x axis, columns the y axis (row-major when flattened).
    """

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        if self.values.shape != (len(self.x), len(self.y)):
            raise ValueError("values shape must be (len(x), len(y))")
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be non-negative and finite")


def evaluate_grid(model: KdeModel, x_range, y_range, n_x: int, n_y: int) -> DensityGrid:
    """Evaluate the KDE on an n_x-by-n_y grid spanning the given ranges."""
    if n_x < 2 or n_y < 2:
        raise ValueError("grid resolution must be at least 2 per axis")
    x_lo, x_hi = map(float, x_range)
    y_lo, y_hi = map(float, y_range)
    if not (x_hi > x_lo and y_hi > y_lo):
        raise ValueError("grid ranges must be non-degenerate")
    xs = np.linspace(x_lo, x_hi, n_x)
    ys = np.linspace(y_lo, y_hi, n_y)
    inv = np.linalg.inv(model.bandwidth.matrix)
    values = np.empty((n_x, n_y))
    # one x-row at a time keeps the (n_y, N) broadcast within memory
    for i, xv in enumerate(xs):
        diff = np.stack([np.full(n_y, xv), ys], axis=1)[:, None, :] - model.points[None, :, :]
        dist2 = np.einsum("gij,jk,gik->gi", diff, inv, diff)
        values[i] = model.normalization * np.exp(-0.5 * dist2).sum(axis=1)
    return DensityGrid(x=xs, y=ys, values=values)


def default_grid_ranges(model: KdeModel, pad_bandwidths: float = 8.0):
    """Axis ranges covering all points plus a bandwidth margin."""
    h1, h2 = model.bandwidth.axis_widths
    lo = model.points.min(axis=0)
    hi = model.points.max(axis=0)
    return ((lo[0] - pad_bandwidths * h1, hi[0] + pad_bandwidths * h1),
            (lo[1] - pad_bandwidths * h2, hi[1] + pad_bandwidths * h2))


def grid_integral(grid: DensityGrid) -> float:
    """Trapezoid-rule integral of the grid values over its rectangle."""
    return float(np.trapezoid(np.trapezoid(grid.values, grid.y, axis=1), grid.x))


def find_modes(grid: DensityGrid, min_separation: int = 1) -> list[tuple[tuple[float, float], float]]:
    """Local maxima of the grid, strongest first.

    A cell is a candidate when its value is >= all existing 8-neighbors
    and carries non-negligible density (above 1e-12 of the grid maximum,
    which keeps flat underflow plateaus in far tails from registering).
    Candidates within ``min_separation`` grid cells (Euclidean, in cell
    units) of a stronger candidate are suppressed; on exact value ties
    the first cell in row-major order wins.  Returns ((x, y), density)
    pairs sorted by density descending.
    """
    v = grid.values
    n_x, n_y = v.shape
    padded = np.full((n_x + 2, n_y + 2), -np.inf)
    padded[1:-1, 1:-1] = v
    is_max = v > v.max() * 1e-12
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == 0 and dj == 0:
                continue
            is_max &= v >= padded[1 + di:n_x + 1 + di, 1 + dj:n_y + 1 + dj]
    cand = np.argwhere(is_max)
    order = np.lexsort((cand[:, 0] * n_y + cand[:, 1], -v[cand[:, 0], cand[:, 1]]))
    kept: list[tuple[int, int]] = []
    out = []
    for idx in order:
        i, j = int(cand[idx, 0]), int(cand[idx, 1])
        if any((i - ki) ** 2 + (j - kj) ** 2 <= min_separation ** 2 for ki, kj in kept):
            continue
        kept.append((i, j))
        out.append(((float(grid.x[i]), float(grid.y[j])), float(v[i, j])))
    return out


def integrated_squared_error(estimate, reference: DensityGrid) -> float:
    """Trapezoid integral of the squared difference to a reference grid.

    ``estimate`` may be a KdeModel (evaluated on the reference's axes) or
    a DensityGrid, which must share the reference's axes exactly.
    """
    if isinstance(estimate, KdeModel):
        est = evaluate_grid(estimate, (reference.x[0], reference.x[-1]),
                            (reference.y[0], reference.y[-1]),
                            len(reference.x), len(reference.y))
    else:
        est = estimate
        if not (np.array_equal(est.x, reference.x) and np.array_equal(est.y, reference.y)):
            raise ValueError("grids are not aligned")
    diff2 = (est.values - reference.values) ** 2
    return float(np.trapezoid(np.trapezoid(diff2, reference.y, axis=1), reference.x))


def grid_to_csv(grid: DensityGrid, path) -> None:
    """Write ``x,y,density`` rows in row-major order (x outer, y inner)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "density"])
        for i, xv in enumerate(grid.x):
            for j, yv in enumerate(grid.y):
                writer.writerow([repr(float(xv)), repr(float(yv)),
                                 repr(float(grid.values[i, j]))])


def grid_to_json_dict(grid: DensityGrid) -> dict:
    """JSON envelope with axis metadata and row-major values."""
    return {
        "x_range": [float(grid.x[0]), float(grid.x[-1])],
        "y_range": [float(grid.y[0]), float(grid.y[-1])],
        "n_x": len(grid.x),
        "n_y": len(grid.y),
        "ordering": "row-major (x outer, y inner)",
        "values": [[float(v) for v in row] for row in grid.values],
    }
