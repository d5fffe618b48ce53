"""Hierarchical agglomerative clustering of per-link parameter vectors.

Ward linkage with Euclidean distance: the merge cost between clusters A
and B is the increase in total within-cluster variance,

    cost(A, B) = |A| |B| / (|A| + |B|) * ||centroid_A - centroid_B||^2

(0.5 * squared distance for two singletons).  Merging proceeds greedily
by minimum cost; ties break on the smallest lexicographic (label_a,
label_b) pair.  Leaves are labeled 0..N-1 and each merge creates label
N, N+1, ... in order, as in the usual linkage-matrix convention.

Costs are maintained with the Lance-Williams recurrence, which is exact
for Ward linkage.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .traffic import ABNORMAL_CATEGORIES, INCIDENT_CATEGORIES, LinkSeries, count_events


@dataclass(frozen=True)
class ParameterVector:
    """One link's fitted parameters after per-feature rescaling."""

    link_id: str
    features: np.ndarray

    def __post_init__(self) -> None:
        f = np.asarray(self.features, dtype=float)
        if f.ndim != 1 or not np.all(np.isfinite(f)):
            raise ValueError("features must be a finite 1-d vector")
        object.__setattr__(self, "features", f)


def rescale_parameter_vectors(raw: dict[str, np.ndarray]) -> list[ParameterVector]:
    """Divide each feature by its maximum across links (maps into (0, 1]).

    Removes the dominance of large-magnitude parameters before
    clustering.  Orders output by link_id.
    """
    if not raw:
        raise ValueError("no parameter vectors given")
    ids = sorted(raw)
    matrix = np.array([np.asarray(raw[i], dtype=float) for i in ids])
    if matrix.ndim != 2:
        raise ValueError("parameter vectors must share a dimension")
    maxima = matrix.max(axis=0)
    if np.any(maxima <= 0):
        raise ValueError("each feature needs a positive maximum to rescale")
    scaled = matrix / maxima
    return [ParameterVector(link_id=i, features=row) for i, row in zip(ids, scaled)]


@dataclass(frozen=True)
class MergeRecord:
    a: int
    b: int
    height: float
    size: int


@dataclass(frozen=True)
class Dendrogram:
    """Full merge history; leaves 0..n_leaves-1, merges create new labels."""

    n_leaves: int
    merges: tuple[MergeRecord, ...]
    leaf_ids: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if len(self.merges) != self.n_leaves - 1:
            raise ValueError("a dendrogram over n leaves has n-1 merges")
        for prev, cur in zip(self.merges, self.merges[1:]):
            if cur.height < prev.height:
                raise ValueError("merge heights must be non-decreasing")

    def to_json_list(self) -> list[dict]:
        return [{"a": m.a, "b": m.b, "height": m.height, "size": m.size}
                for m in self.merges]


def hac_ward(vectors: list[ParameterVector]) -> Dendrogram:
    """Agglomerate under Ward's minimum-variance criterion."""
    n = len(vectors)
    if n < 2:
        raise ValueError("need at least 2 vectors")
    dims = {v.features.shape[0] for v in vectors}
    if len(dims) != 1:
        raise ValueError("vectors must share a dimension")

    x = np.array([v.features for v in vectors])
    size = {i: 1 for i in range(n)}
    cost: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            d = x[i] - x[j]
            cost[(i, j)] = 0.5 * float(d @ d)

    merges = []
    next_label = n
    for _ in range(n - 1):
        (a, b) = min(cost, key=lambda pair: (cost[pair], pair))
        height = cost[(a, b)]
        merged_size = size[a] + size[b]
        merges.append(MergeRecord(a=a, b=b, height=height, size=merged_size))

        others = [c for c in size if c not in (a, b)]
        for c in others:
            t = size[a] + size[b] + size[c]
            new = ((size[a] + size[c]) * cost[_pair(a, c)]
                   + (size[b] + size[c]) * cost[_pair(b, c)]
                   - size[c] * height) / t
            cost[_pair(next_label, c)] = new
        for c in others:
            del cost[_pair(a, c)]
            del cost[_pair(b, c)]
        del cost[(a, b)]
        del size[a]
        del size[b]
        size[next_label] = merged_size
        next_label += 1

    return Dendrogram(n_leaves=n, merges=tuple(merges),
                      leaf_ids=tuple(v.link_id for v in vectors))


def _pair(a: int, b: int) -> tuple[int, int]:
    return (a, b) if a < b else (b, a)


def cut(dendrogram: Dendrogram, k: int) -> dict[int, int]:
    """Leaf index -> cluster label (1..k) after undoing the last k-1 merges.

    Cluster labels are assigned in order of each cluster's smallest leaf
    index, so the labeling is deterministic.
    """
    n = dendrogram.n_leaves
    if not 1 <= k <= n:
        raise ValueError(f"k must be between 1 and {n}")
    members: dict[int, list[int]] = {i: [i] for i in range(n)}
    next_label = n
    for record in dendrogram.merges[: n - k]:
        members[next_label] = members.pop(record.a) + members.pop(record.b)
        next_label += 1
    clusters = sorted(members.values(), key=min)
    return {leaf: label for label, leaves in enumerate(clusters, start=1)
            for leaf in leaves}


def cut_by_id(dendrogram: Dendrogram, k: int) -> dict[str, int]:
    """Like :func:`cut`, keyed by link_id (requires leaf_ids)."""
    if not dendrogram.leaf_ids:
        raise ValueError("dendrogram carries no leaf ids")
    by_leaf = cut(dendrogram, k)
    return {dendrogram.leaf_ids[leaf]: label for leaf, label in by_leaf.items()}


@dataclass(frozen=True)
class FiveNumber:
    min: float
    q1: float
    median: float
    q3: float
    max: float

    @classmethod
    def of(cls, values) -> "FiveNumber":
        v = np.asarray(values, dtype=float)
        lo, q1, med, q3, hi = np.percentile(v, [0, 25, 50, 75, 100])
        return cls(float(lo), float(q1), float(med), float(q3), float(hi))


@dataclass(frozen=True)
class ClusterSummary:
    """One cluster's members, parameter spread, and event counts.

    Parameter summaries are on unscaled values for interpretability.
    Event counts are per member link, split into accidents+obstructions
    and abnormal-traffic, index-aligned with ``members``.
    """

    label: int
    members: tuple[str, ...]
    parameter_summary: dict[str, FiveNumber]
    incident_counts: tuple[int, ...]
    abnormal_counts: tuple[int, ...]

    def to_json_dict(self) -> dict:
        return {
            "cluster": self.label,
            "members": list(self.members),
            "parameters": {
                name: {"min": s.min, "q1": s.q1, "median": s.median,
                       "q3": s.q3, "max": s.max}
                for name, s in self.parameter_summary.items()
            },
            "incident_counts": list(self.incident_counts),
            "abnormal_counts": list(self.abnormal_counts),
        }


def summarize(
    assignments: dict[str, int],
    params_by_link: dict[str, dict[str, float]],
    series_by_link: dict[str, LinkSeries],
) -> list[ClusterSummary]:
    """Per-cluster five-number parameter summaries and event counts."""
    labels = sorted(set(assignments.values()))
    out = []
    for label in labels:
        members = tuple(sorted(i for i, c in assignments.items() if c == label))
        names = list(params_by_link[members[0]])
        summary = {
            name: FiveNumber.of([params_by_link[i][name] for i in members])
            for name in names
        }
        incidents = tuple(count_events(series_by_link[i], INCIDENT_CATEGORIES)
                          for i in members)
        abnormal = tuple(count_events(series_by_link[i], ABNORMAL_CATEGORIES)
                         for i in members)
        out.append(ClusterSummary(label=label, members=members,
                                  parameter_summary=summary,
                                  incident_counts=incidents,
                                  abnormal_counts=abnormal))
    return out
