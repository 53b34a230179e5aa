"""Retrieval and supervision-quality metrics plus the k-means baseline.

All metrics are brute force and deterministic: exact nearest neighbors by
full distance sort, label purity as the mean majority fraction over groups,
and Pearson correlation between continuous similarities and the binary
same-class indicator. The k-means baseline (Lloyd with k-means++ seeding)
lives here so comparisons never depend on an external implementation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .manifold import LinearNeighborhood, ManifoldConfig, fit_all_neighborhoods
from .similarity import SimilarityConfig, pairwise_similarity_matrix

# Above this many points, correlations switch from all pairs to a sample.
ALL_PAIRS_LIMIT = 2000
PAIR_SAMPLE_SIZE = 1_000_000
KMEANS_MAX_ITER = 100


def _pairwise_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(a**2, axis=1)[:, None]
        - 2.0 * a @ b.T
        + np.sum(b**2, axis=1)[None, :]
    )
    return np.sqrt(np.maximum(d2, 0.0))


def recall_at_k(
    embeddings: np.ndarray, labels: np.ndarray, k_values: Sequence[int]
) -> dict[int, float]:
    """Percentage of queries with a same-class sample among their K nearest.

    Exact Euclidean neighbors, query excluded from its own candidates, ties
    broken toward the lower index. Returns {K: percentage}.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if labels is None:
        raise ValueError("recall requires labels")
    labels = np.asarray(labels)
    n = embeddings.shape[0]
    k_values = [int(k) for k in k_values]
    if not k_values or min(k_values) < 1:
        raise ValueError("K values must be positive")
    if n < max(k_values) + 1:
        raise ValueError(f"need at least max(K)+1 = {max(k_values) + 1} points, got {n}")
    dist = _pairwise_distances(embeddings, embeddings)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")[:, : max(k_values)]
    neighbor_labels = labels[order]
    match = neighbor_labels == labels[:, None]
    out = {}
    for k in sorted(k_values):
        out[k] = float(np.mean(np.any(match[:, :k], axis=1)) * 100.0)
    return out


def group_purity(groups: Sequence[np.ndarray], labels: np.ndarray) -> float:
    """Mean majority-label fraction over groups of indices."""
    labels = np.asarray(labels)
    if len(groups) == 0:
        raise ValueError("need at least one group")
    fractions = []
    for members in groups:
        members = np.asarray(members, dtype=np.int64)
        if members.size == 0:
            raise ValueError("empty group")
        counts = np.bincount(labels[members])
        fractions.append(counts.max() / members.size)
    return float(np.mean(fractions))


def neighborhood_purity(
    neighborhoods: Sequence[LinearNeighborhood], labels: np.ndarray
) -> float:
    """Purity of fitted neighborhoods: majority fraction, averaged over anchors."""
    if labels is None:
        raise ValueError("purity requires labels")
    return group_purity([nb.member_indices for nb in neighborhoods], labels)


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centers: np.ndarray
    n_iter: int
    inertia: float
    inertia_history: list[float] = field(default_factory=list)


def _kmeans_pp_centers(
    points: np.ndarray, n_clusters: int, rng: np.random.Generator
) -> np.ndarray:
    n = points.shape[0]
    chosen = [int(rng.integers(n))]
    min_d2 = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    while len(chosen) < n_clusters:
        total = float(min_d2.sum())
        if total > 0.0:
            nxt = int(rng.choice(n, p=min_d2 / total))
        else:
            # All remaining mass is zero (duplicate points); fall back to the
            # lowest index not yet chosen.
            nxt = int(next(i for i in range(n) if i not in chosen))
        chosen.append(nxt)
        min_d2 = np.minimum(min_d2, np.sum((points - points[nxt]) ** 2, axis=1))
    return points[chosen].copy()


def kmeans_baseline(
    embeddings: np.ndarray, n_clusters: int, seed: int | np.random.SeedSequence
) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding, capped at 100 iterations.

    Empty clusters are refilled with the point currently farthest from its
    assigned center. The within-cluster sum of squares is tracked every
    iteration and verified non-increasing.
    """
    points = np.asarray(embeddings, dtype=np.float64)
    n = points.shape[0]
    if not 1 <= n_clusters <= n:
        raise ValueError(f"n_clusters={n_clusters} out of range for {n} points")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp_centers(points, n_clusters, rng)
    assignments = np.full(n, -1, dtype=np.int64)
    history: list[float] = []
    n_iter = 0
    for n_iter in range(1, KMEANS_MAX_ITER + 1):
        dist = _pairwise_distances(points, centers)
        new_assignments = np.argmin(dist, axis=1)
        point_cost = dist[np.arange(n), new_assignments] ** 2
        for cluster in range(n_clusters):
            if np.any(new_assignments == cluster):
                continue
            stray = int(np.argmax(point_cost))
            centers[cluster] = points[stray]
            new_assignments[stray] = cluster
            point_cost[stray] = 0.0
        inertia = float(
            np.sum(np.sum((points - centers[new_assignments]) ** 2, axis=1))
        )
        if history and inertia > history[-1] + 1e-9:
            raise RuntimeError(
                f"k-means objective increased at iteration {n_iter}: "
                f"{history[-1]} -> {inertia}"
            )
        history.append(inertia)
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
        for cluster in range(n_clusters):
            centers[cluster] = points[assignments == cluster].mean(axis=0)
    final_inertia = float(
        np.sum(np.sum((points - centers[assignments]) ** 2, axis=1))
    )
    return KMeansResult(assignments, centers, n_iter, final_inertia, history)


def sample_pairs(
    n: int, seed: int | np.random.SeedSequence
) -> tuple[np.ndarray, np.ndarray]:
    """Index pairs for correlation: all unordered pairs, or a seeded sample.

    Up to ALL_PAIRS_LIMIT points every unordered pair is used; beyond that a
    uniform sample of PAIR_SAMPLE_SIZE pairs (i != j) is drawn.
    """
    if n < 2:
        raise ValueError("need at least two points to form pairs")
    if n <= ALL_PAIRS_LIMIT:
        return np.triu_indices(n, k=1)
    rng = np.random.default_rng(seed)
    first = np.empty(0, dtype=np.int64)
    second = np.empty(0, dtype=np.int64)
    while first.size < PAIR_SAMPLE_SIZE:
        draw = PAIR_SAMPLE_SIZE - first.size
        i = rng.integers(n, size=draw + draw // 8 + 16)
        j = rng.integers(n, size=i.size)
        keep = i != j
        first = np.concatenate([first, i[keep]])
        second = np.concatenate([second, j[keep]])
    return first[:PAIR_SAMPLE_SIZE], second[:PAIR_SAMPLE_SIZE]


def similarity_correlation(similarity_values: np.ndarray, same_class: np.ndarray) -> float:
    """Pearson correlation between similarities and the same-class indicator.

    With a binary indicator this is the point-biserial correlation. Raises
    when either side is constant, where the correlation is undefined.
    """
    values = np.asarray(similarity_values, dtype=np.float64)
    indicator = np.asarray(same_class, dtype=np.float64)
    if values.shape != indicator.shape or values.ndim != 1:
        raise ValueError("similarity values and indicators must be equal-length vectors")
    if values.size < 2:
        raise ValueError("need at least two pairs")
    if np.std(values) == 0.0 or np.std(indicator) == 0.0:
        raise ValueError("correlation undefined: zero variance in similarities or labels")
    return float(np.corrcoef(values, indicator)[0, 1])


@dataclass
class EvalReport:
    """Flat record of one evaluation run."""

    n_samples: int
    n_classes: int
    recall_at: dict[int, float]
    neighborhood_purity: float | None = None
    kmeans_purity: float | None = None
    similarity_correlation: float | None = None
    kmeans_correlation: float | None = None

    def __post_init__(self) -> None:
        ks = sorted(self.recall_at)
        values = [self.recall_at[k] for k in ks]
        if any(b < a for a, b in zip(values, values[1:])):
            raise ValueError("recall must be non-decreasing in K")
        if any(not 0.0 <= v <= 100.0 for v in values):
            raise ValueError("recall percentages must lie in [0, 100]")

    def to_text(self) -> str:
        lines = [f"n_samples={self.n_samples}", f"n_classes={self.n_classes}"]
        for k in sorted(self.recall_at):
            lines.append(f"recall@{k}={self.recall_at[k]:.4f}")
        for name in (
            "neighborhood_purity",
            "kmeans_purity",
            "similarity_correlation",
            "kmeans_correlation",
        ):
            value = getattr(self, name)
            if value is not None:
                lines.append(f"{name}={value:.6f}")
        return "\n".join(lines)


def evaluate_embeddings(
    embeddings: np.ndarray,
    labels: np.ndarray,
    manifold_config: ManifoldConfig,
    similarity_config: SimilarityConfig,
    recall_ks: Sequence[int] = (1, 2, 4, 8),
    seed: int = 0,
) -> EvalReport:
    """Full labeled evaluation: retrieval, purity, and supervision quality.

    Fits neighborhoods on the given embeddings, compares their purity and
    similarity-vs-label correlation against a k-means baseline run with
    n_clusters equal to the true class count, over the same sampled pairs.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if labels is None:
        raise ValueError("labeled evaluation requires labels")
    labels = np.asarray(labels)
    n = embeddings.shape[0]
    classes = np.unique(labels)
    recall = recall_at_k(embeddings, labels, recall_ks)
    neighborhoods = fit_all_neighborhoods(embeddings, manifold_config)
    nbhd_purity = neighborhood_purity(neighborhoods, labels)
    km = kmeans_baseline(embeddings, len(classes), seed)
    km_groups = [np.flatnonzero(km.assignments == c) for c in range(len(classes))]
    km_purity = group_purity(km_groups, labels)
    first, second = sample_pairs(n, seed)
    sims = pairwise_similarity_matrix(embeddings, neighborhoods, similarity_config)
    ours_values = sims[first, second]
    same_class = (labels[first] == labels[second]).astype(np.float64)
    same_cluster = (km.assignments[first] == km.assignments[second]).astype(np.float64)
    return EvalReport(
        n_samples=n,
        n_classes=len(classes),
        recall_at=recall,
        neighborhood_purity=nbhd_purity,
        kmeans_purity=km_purity,
        similarity_correlation=similarity_correlation(ours_values, same_class),
        kmeans_correlation=similarity_correlation(same_cluster, same_class),
    )
