"""Multi-start bounded least-squares fitting of fundamental diagrams.

Each fit minimizes the sum of squared flow residuals with a bounded
derivative-free simplex search (Nelder-Mead), restarted from ``n_starts``
random points drawn uniformly inside the parameter box.  The search runs
in box-normalized coordinates with the objective scaled by the total sum
of squares, so tolerances behave uniformly across models and units, and
the piecewise-linear kink of the triangular diagram needs no gradients.
The best converged start is polished by deterministic simplex restarts
until the relative objective decrease falls below the tolerance.

Start points come from independently spawned seed sequences, so results
are reproducible for a fixed seed, independent of evaluation order, and
the best pre-polish objective is non-increasing in ``n_starts``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .models import (
    _FLUX,
    DataSummary,
    FdModelKind,
    FdModelParams,
    PARAM_NAMES,
    default_bounds,
    n_params,
)
from .traffic import FlowDensityPoint

_XATOL = 1e-10  # simplex tolerance in box-normalized coordinates
_FATOL = 1e-8   # objective-spread tolerance on the scaled objective
_MAX_POLISH_ROUNDS = 10


class FitError(RuntimeError):
    """Raised when a fit cannot produce a converged result."""

    def __init__(self, message: str, per_start: list | None = None):
        super().__init__(message)
        self.per_start = per_start or []


@dataclass(frozen=True)
class FitConfig:
    """Multi-start settings; defaults follow the 100-restart protocol."""

    n_starts: int = 100
    rng_seed: int | tuple[int, ...] = 0
    max_iterations: int = 5000
    tol: float = 1e-10  # relative objective-decrease convergence threshold
    bounds: dict[str, tuple[float, float]] | None = None

    def __post_init__(self) -> None:
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


@dataclass(frozen=True)
class GoodnessOfFit:
    sse: float
    rmse: float
    r_squared: float | None  # None when all observed flows are identical


@dataclass(frozen=True)
class FitResult:
    kind: FdModelKind
    best_params: FdModelParams
    sse: float
    rmse: float
    r_squared: float | None
    per_start_objectives: tuple[float, ...]
    converged_starts: int
    best_start_index: int

    def to_json_dict(self) -> dict:
        return {
            "model": self.kind.value,
            "params": {n: self.best_params.values[n] for n in PARAM_NAMES[self.kind]},
            "sse": self.sse,
            "rmse": self.rmse,
            "r2": self.r_squared,
            "n_starts": len(self.per_start_objectives),
            "converged": self.converged_starts,
        }


def coerce_points(points) -> tuple[np.ndarray, np.ndarray]:
    """Accept FlowDensityPoint lists or an (N, 2) array of (density, flow)."""
    if len(points) and isinstance(points[0], FlowDensityPoint):
        rho = np.array([p.density for p in points], dtype=float)
        q = np.array([p.flow for p in points], dtype=float)
        return rho, q
    arr = np.asarray(points, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError("points must be FlowDensityPoints or an (N, 2) array")
    return arr[:, 0].copy(), arr[:, 1].copy()


def goodness(params: FdModelParams, points) -> GoodnessOfFit:
    """SSE, RMSE and R-squared of a parameter set on the given points."""
    rho, q = coerce_points(points)
    if rho.size < 2:
        raise ValueError("need at least 2 points")
    resid = q - _FLUX[params.kind](params.values, rho)
    sse = float(resid @ resid)
    sst = float(np.sum((q - q.mean()) ** 2))
    r2 = None if sst == 0.0 else 1.0 - sse / sst
    return GoodnessOfFit(sse=sse, rmse=float(np.sqrt(sse / rho.size)), r_squared=r2)


def _resolve_bounds(kind: FdModelKind, config: FitConfig,
                    rho: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if config.bounds is not None:
        box = config.bounds
        missing = [n for n in PARAM_NAMES[kind] if n not in box]
        if missing:
            raise ValueError(f"bounds missing parameters: {missing}")
    else:
        box = default_bounds(kind, DataSummary.from_arrays(rho, q))
    lo = np.array([box[n][0] for n in PARAM_NAMES[kind]], dtype=float)
    hi = np.array([box[n][1] for n in PARAM_NAMES[kind]], dtype=float)
    if np.any(lo >= hi):
        raise ValueError("each bound must satisfy low < high")
    return lo, hi


def _nelder_mead(fun, z0, max_iterations: int, simplex_size: float | None = None):
    options = {"maxiter": max_iterations, "maxfev": 2 * max_iterations,
               "xatol": _XATOL, "fatol": _FATOL}
    if simplex_size is not None:
        d = len(z0)
        sim = np.repeat(z0[None, :], d + 1, axis=0)
        for i in range(d):
            sim[i + 1, i] = min(1.0, max(0.0, z0[i] + simplex_size))
            if sim[i + 1, i] == z0[i]:
                sim[i + 1, i] = z0[i] - simplex_size
        options["initial_simplex"] = sim
    return minimize(
        fun, z0, method="Nelder-Mead",
        bounds=[(0.0, 1.0)] * len(z0),
        options=options,
    )


def fit(kind: FdModelKind, points, config: FitConfig = FitConfig()) -> FitResult:
    """Fit one model kind; deterministic for a fixed seed.

    The reported parameters minimize the SSE over all converged starts
    (ties to the lower start index) after polish; ``per_start_objectives``
    holds each start's final pre-polish SSE.  Raises :class:`FitError`
    on degenerate data or when no start converges.
    """
    rho, q = coerce_points(points)
    d = n_params(kind)
    if rho.size < d + 1:
        raise FitError(f"{kind.value}: need at least {d + 1} points, got {rho.size}")
    if np.unique(rho).size < 2:
        raise FitError(f"{kind.value}: need at least 2 distinct densities")
    if np.any(rho < 0):
        raise FitError("densities must be non-negative")
    lo, hi = _resolve_bounds(kind, config, rho, q)
    span = hi - lo

    sst = float(np.sum((q - q.mean()) ** 2))
    f_scale = sst if sst > 0 else max(float(q @ q), 1.0)
    names = PARAM_NAMES[kind]
    flux_fn = _FLUX[kind]

    def objective(z: np.ndarray) -> float:
        theta = lo + z * span
        resid = q - flux_fn(dict(zip(names, theta)), rho)
        return float(resid @ resid) / f_scale

    seeds = np.random.SeedSequence(config.rng_seed).spawn(config.n_starts)
    per_start = []
    best = None  # (objective, start index, z)
    converged = 0
    for index, seq in enumerate(seeds):
        z0 = np.random.default_rng(seq).uniform(size=d)
        res = _nelder_mead(objective, z0, config.max_iterations)
        per_start.append((float(res.fun), bool(res.success)))
        if res.success:
            converged += 1
            if best is None or res.fun < best[0]:
                best = (float(res.fun), index, np.asarray(res.x))
    if best is None:
        lines = [f"  start {i}: objective={f:.6g} converged={s}"
                 for i, (f, s) in enumerate(per_start)]
        raise FitError(
            f"{kind.value}: no start converged within {config.max_iterations} "
            "iterations\n" + "\n".join(lines),
            per_start=per_start,
        )

    # polish: restarted simplex runs from the incumbent, with progressively
    # smaller initial simplexes, until the relative decrease stalls
    f_best, best_index, z_best = best
    simplex_size = 5e-2
    for _ in range(_MAX_POLISH_ROUNDS):
        res = _nelder_mead(objective, z_best, config.max_iterations, simplex_size)
        simplex_size = max(simplex_size * 1e-2, 1e-9)
        if res.fun < f_best:
            decrease = (f_best - res.fun) / max(f_best, 1e-300)
            f_best, z_best = float(res.fun), np.asarray(res.x)
            if decrease < config.tol:
                break

    theta = lo + z_best * span
    best_params = FdModelParams.from_array(kind, theta)
    quality = goodness(best_params, np.column_stack([rho, q]))
    return FitResult(
        kind=kind,
        best_params=best_params,
        sse=quality.sse,
        rmse=quality.rmse,
        r_squared=quality.r_squared,
        per_start_objectives=tuple(f * f_scale for f, _ in per_start),
        converged_starts=converged,
        best_start_index=best_index,
    )


@dataclass(frozen=True)
class ModelRanking:
    """Per-model fits sorted by RMSE (ties to fewer parameters)."""

    results: tuple[FitResult, ...]
    failures: dict[FdModelKind, str] = field(default_factory=dict)

    @property
    def best(self) -> FitResult:
        return self.results[0]


def compare_models(points, kinds=tuple(FdModelKind), config: FitConfig = FitConfig()) -> ModelRanking:
    """Fit every requested kind and rank by RMSE ascending.

    Models that fail to fit are excluded and reported in ``failures``.
    """
    results = []
    failures = {}
    for kind in kinds:
        try:
            results.append(fit(kind, points, config))
        except FitError as exc:
            failures[kind] = str(exc)
    results.sort(key=lambda r: (r.rmse, n_params(r.kind)))
    return ModelRanking(results=tuple(results), failures=failures)


@dataclass(frozen=True)
class SegmentedFits:
    """Per-limit model rankings; undersized segments are reported."""

    by_limit: dict
    skipped: dict

    def to_json_dict(self) -> dict:
        return {
            str(limit): [r.to_json_dict() for r in ranking.results]
            for limit, ranking in self.by_limit.items()
        }


def fit_segmented(segments, kinds=tuple(FdModelKind), config: FitConfig = FitConfig()) -> SegmentedFits:
    """Rank models on each speed-limit segment independently.

    Every segment is fit with the same config (and seed), so two segments
    holding identical data produce identical results.  Segments failing
    the fit preconditions for every kind are skipped with a reason rather
    than failing the run.
    """
    by_limit = {}
    skipped = {}
    for limit, points in segments.items():
        ranking = compare_models(points, kinds, config)
        if ranking.results:
            by_limit[limit] = ranking
        else:
            reasons = "; ".join(sorted(set(ranking.failures.values())))
            skipped[limit] = reasons or "no models requested"
    return SegmentedFits(by_limit=by_limit, skipped=skipped)
