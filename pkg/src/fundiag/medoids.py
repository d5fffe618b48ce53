"""k-medoids clustering for locating the two modes of a flow-density diagram.

Two routes are provided: exhaustive enumeration (the oracle, feasible for
small instances only) and CLARA, which solves PAM-style swap local search
on fixed-size samples over many seeded restarts and scores candidate
medoids on the full point set.  Distances are Euclidean and inputs are
expected on scaled coordinates, so costs are dimensionless.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MedoidResult:
    """Medoid indices into the input, per-point assignments, total cost.

    ``assignments[i]`` is the slot (0..k-1) of the nearest medoid;
    ``total_cost`` is the sum of Euclidean point-to-medoid distances.
    """

    points: np.ndarray
    medoid_indices: tuple[int, ...]
    assignments: np.ndarray
    total_cost: float

    @property
    def medoids(self) -> np.ndarray:
        """Medoid coordinates; always rows of the input set."""
        return self.points[list(self.medoid_indices)]

    def cluster_members(self, slot: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == slot)

    def member_distances(self, slot: int) -> np.ndarray:
        members = self.points[self.assignments == slot]
        medoid = self.points[self.medoid_indices[slot]]
        return np.linalg.norm(members - medoid, axis=1)


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2:
        raise ValueError("points must be a 2-d array (N, d)")
    if not np.all(np.isfinite(pts)):
        raise ValueError("points must be finite")
    return pts


def _result(pts: np.ndarray, dist: np.ndarray, medoids) -> MedoidResult:
    cols = dist[:, list(medoids)]
    assignments = np.argmin(cols, axis=1)
    cost = float(cols.min(axis=1).sum())
    return MedoidResult(points=pts, medoid_indices=tuple(int(m) for m in medoids),
                        assignments=assignments, total_cost=cost)


# C(60, 2) = 1770 candidate pairs: the largest instance the exhaustive
# route accepts, whatever the k.
_MAX_CANDIDATE_SETS = 1770


def exact_kmedoids(points, k: int) -> MedoidResult:
    """Globally optimal k-medoids by exhaustive enumeration.

    Feasible only while C(N, k) <= C(60, 2); larger instances raise and
    should use :func:`clara`.  Cost ties resolve to the lexicographically
    first medoid index set.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if not 1 <= k <= n:
        raise ValueError("k must be in [1, N]")
    if math.comb(n, k) > _MAX_CANDIDATE_SETS:
        raise ValueError(
            f"C({n}, {k}) candidate sets exceed the exhaustive limit "
            f"{_MAX_CANDIDATE_SETS}; use clara() instead"
        )
    dist = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2)
    best_combo = None
    best_cost = np.inf
    for combo in itertools.combinations(range(n), k):
        cost = dist[:, combo].min(axis=1).sum()
        if cost < best_cost:
            best_cost = cost
            best_combo = combo
    return _result(pts, dist, best_combo)


@dataclass(frozen=True)
class ClaraConfig:
    """Sampling and restart settings for :func:`clara`."""

    sample_size: int | None = None  # default 200 + 2k
    n_restarts: int = 50
    rng_seed: int | tuple[int, ...] = 0

    def resolved_sample_size(self, k: int) -> int:
        return self.sample_size if self.sample_size is not None else 200 + 2 * k


def _pam_swap(dist: np.ndarray, medoids: list[int]) -> tuple[list[int], float]:
    """Steepest-descent swap local search until no improving swap exists.

    Deterministic: the best (then first in slot/candidate order) strictly
    improving swap is taken each round.
    """
    medoids = list(medoids)
    n = dist.shape[0]
    cost = float(dist[:, medoids].min(axis=1).sum())
    while True:
        best_cost = cost
        best_swap = None
        for slot in range(len(medoids)):
            others = medoids[:slot] + medoids[slot + 1:]
            if others:
                dmin_other = dist[:, others].min(axis=1)
            else:
                dmin_other = np.full(n, np.inf)
            trial_costs = np.minimum(dmin_other[:, None], dist).sum(axis=0)
            trial_costs[medoids] = np.inf
            cand = int(np.argmin(trial_costs))
            if trial_costs[cand] < best_cost:
                best_cost = float(trial_costs[cand])
                best_swap = (slot, cand)
        if best_swap is None:
            return medoids, cost
        medoids[best_swap[0]] = best_swap[1]
        cost = best_cost


def clara(points, k: int = 2, config: ClaraConfig = ClaraConfig()) -> MedoidResult:
    """CLARA k-medoids: sampled PAM restarts scored on the full set.

    Each restart draws min(sample_size, N) points without replacement,
    runs swap local search on the sample from random initial medoids,
    then assigns all points to the candidate medoids and scores the full
    cost.  The best (cost, restart index) wins, so results are seed-
    deterministic and independent of restart execution order.
    """
    pts = _as_points(points)
    n = pts.shape[0]
    if n < k:
        raise ValueError("need at least k points")
    if np.unique(pts, axis=0).shape[0] < k:
        raise ValueError(f"need at least {k} distinct points")
    ss = min(config.resolved_sample_size(k), n)
    dist_full = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=2) \
        if n <= 2048 else None

    best: MedoidResult | None = None
    for seq in np.random.SeedSequence(config.rng_seed).spawn(config.n_restarts):
        rng = np.random.default_rng(seq)
        sample = np.sort(rng.choice(n, size=ss, replace=False))
        sub = pts[sample]
        dist = np.linalg.norm(sub[:, None, :] - sub[None, :, :], axis=2)
        init = rng.choice(ss, size=k, replace=False)
        local, _ = _pam_swap(dist, list(int(i) for i in init))
        medoids = [int(sample[m]) for m in local]
        if dist_full is not None:
            result = _result(pts, dist_full, medoids)
        else:
            cols = np.linalg.norm(pts[:, None, :] - pts[medoids][None, :, :], axis=2)
            assignments = np.argmin(cols, axis=1)
            result = MedoidResult(points=pts, medoid_indices=tuple(medoids),
                                  assignments=assignments,
                                  total_cost=float(cols.min(axis=1).sum()))
        if best is None or result.total_cost < best.total_cost:
            best = result
    return best


@dataclass(frozen=True)
class ModeStat:
    """One mode's location and the spread of its cluster."""

    density: float
    flow: float
    std: float  # root-mean-square member-to-medoid distance, dimensionless
    point_index: int
    n_members: int


@dataclass(frozen=True)
class ModeEntry:
    limit: object  # SpeedLimit; kept duck-typed so arrays can be tested alone
    low: ModeStat
    high: ModeStat


@dataclass(frozen=True)
class ModeTrajectory:
    """Per-segment low/high density modes, in segment key order."""

    entries: tuple[ModeEntry, ...]
    skipped: tuple[tuple[object, str], ...] = ()


def cluster_std(result: MedoidResult, slot: int) -> float:
    """Root-mean-square member-to-medoid distance of one cluster."""
    d = result.member_distances(slot)
    return float(np.sqrt(np.mean(d * d)))


def mode_trajectory(segments, config: ClaraConfig = ClaraConfig()) -> ModeTrajectory:
    """Two-mode CLARA per segment; the smaller-density medoid is 'low'.

    ``segments`` maps a segment key (speed-limit state) to an (N, 2)
    array of scaled (density, flow) points.  Every segment is clustered
    with the same config (and seed), so identical segments give identical
    entries.  Degenerate segments (fewer than 2 distinct points, or
    equal-density medoids) are skipped with a reason.
    """
    entries = []
    skipped = []
    for key, seg_points in segments.items():
        pts = _as_points(seg_points)
        if pts.shape[1] != 2:
            raise ValueError("segment points must be (N, 2) arrays of (density, flow)")
        try:
            result = clara(pts, k=2, config=config)
        except ValueError as exc:
            skipped.append((key, str(exc)))
            continue
        m0, m1 = result.medoids
        if m0[0] == m1[0]:
            skipped.append((key, "medoids have equal density"))
            continue
        slots = (0, 1) if m0[0] < m1[0] else (1, 0)
        stats = []
        for slot in slots:
            coords = result.medoids[slot]
            stats.append(ModeStat(
                density=float(coords[0]),
                flow=float(coords[1]),
                std=cluster_std(result, slot),
                point_index=result.medoid_indices[slot],
                n_members=int(np.sum(result.assignments == slot)),
            ))
        entries.append(ModeEntry(limit=key, low=stats[0], high=stats[1]))
    return ModeTrajectory(entries=tuple(entries), skipped=tuple(skipped))


@dataclass(frozen=True)
class DistanceDistribution:
    """Empirical member-to-medoid distances of one cluster, sorted."""

    distances: np.ndarray
    quantiles: dict[float, float]


def distance_distribution(result: MedoidResult, slot: int) -> DistanceDistribution:
    """Sorted distances and the 0.5 / 0.9 / 0.99 quantiles.

    No distributional model is fitted; only the empirical distribution
    is reported.
    """
    d = np.sort(result.member_distances(slot))
    if d.size == 0:
        raise ValueError("cluster is empty")
    qs = {q: float(np.quantile(d, q)) for q in (0.5, 0.9, 0.99)}
    return DistanceDistribution(distances=d, quantiles=qs)
