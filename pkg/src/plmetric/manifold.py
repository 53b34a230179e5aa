"""Piecewise-linear manifold structure over an embedded point set.

Around each anchor point we fit a local linear neighborhood: a small plane
(dimension ``dim``) through a subset of the anchor's nearest neighbors,
grown greedily so that every member stays well reconstructed by the plane.
Proxies are a compact learnable stand-in for the full neighborhood set: each
proxy carries a location on the unit sphere plus its own plane frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import linalg
from .linalg import OrthonormalBasis

# Frames whose Gram matrix is already this close to identity are left
# untouched by maintenance passes, keeping no-op steps bit-stable.
FRAME_DRIFT_TOL = 1e-12


@dataclass(frozen=True)
class ManifoldConfig:
    """Neighborhood fitting parameters.

    Attributes:
        dim: dimension of each local plane, at least 2.
        quality_threshold: acceptance threshold T in percent; a candidate
            set is kept only when every member has reconstruction quality
            >= T / 100.
        pool_size: how many nearest neighbors are scanned per anchor.
        knn_only: ablation that accepts the whole pool without any fit test.
    """

    dim: int = 3
    quality_threshold: float = 90.0
    pool_size: int = 10
    knn_only: bool = False

    def __post_init__(self) -> None:
        if self.dim < 2:
            raise ValueError("dim must be at least 2")
        if not 0.0 < self.quality_threshold <= 100.0:
            raise ValueError("quality_threshold must be in (0, 100]")
        if self.pool_size < self.dim:
            raise ValueError("pool_size must be at least dim")


@dataclass(frozen=True)
class LinearNeighborhood:
    """A fitted plane around one anchor.

    ``member_indices`` keeps insertion order (anchor first, then accepted
    neighbors in scan order) and always contains the anchor.
    """

    anchor_index: int
    member_indices: np.ndarray
    basis: OrthonormalBasis
    centroid: np.ndarray

    def __post_init__(self) -> None:
        members = np.asarray(self.member_indices, dtype=np.int64)
        if members.ndim != 1 or members.size < 1:
            raise ValueError("member_indices must be a non-empty 1-d array")
        if self.anchor_index not in members:
            raise ValueError(f"anchor {self.anchor_index} missing from member set")
        centroid = np.asarray(self.centroid, dtype=np.float64)
        if centroid.shape != (self.basis.ambient_dim,):
            raise ValueError("centroid does not match the basis ambient dimension")
        members.setflags(write=False)
        centroid.setflags(write=False)
        object.__setattr__(self, "member_indices", members)
        object.__setattr__(self, "centroid", centroid)

    @property
    def size(self) -> int:
        return int(self.member_indices.size)


def reconstruction_quality(
    points: np.ndarray, vectors: np.ndarray, centroid: np.ndarray
) -> np.ndarray:
    """Per-point plane fit quality, 1 - |residual| / |x - centroid|.

    Points coinciding with the centroid score 1 by convention. Quality is 1
    for points exactly on the plane and decreases toward 0 (and below, for
    points further off-plane than their centroid distance is long).
    """
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    diffs = pts - centroid
    base = np.linalg.norm(diffs, axis=1)
    _, orth = linalg.decompose_batch(diffs, vectors)
    quality = np.ones(len(pts))
    nz = base > 0.0
    quality[nz] = 1.0 - orth[nz] / base[nz]
    return quality


def fit_neighborhood(
    embeddings: np.ndarray,
    anchor: int,
    neighbor_order: Sequence[int],
    config: ManifoldConfig,
) -> LinearNeighborhood:
    """Grow a plane around ``anchor`` by scanning neighbors once, nearest first.

    Args:
        embeddings: (n, d) point set the indices refer to.
        anchor: index of the anchor point.
        neighbor_order: candidate neighbor indices sorted by ascending
            distance from the anchor; must hold at least ``config.dim``.
        config: fitting parameters.

    The seed set is the anchor plus the first dim - 1 candidates. Each
    remaining candidate is tentatively added; a fresh plane is fitted to the
    enlarged set and the candidate is kept only if every member then has
    reconstruction quality >= quality_threshold / 100. Rejected candidates
    are never revisited. With ``knn_only`` the whole pool is accepted and no
    fit test runs.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    order = [int(i) for i in neighbor_order]
    if len(order) < config.dim:
        raise ValueError(
            f"need at least dim={config.dim} neighbor candidates, got {len(order)}"
        )
    if anchor in order:
        raise ValueError("anchor must not appear in its own neighbor pool")
    if config.knn_only:
        members = [anchor] + order
    else:
        threshold = config.quality_threshold / 100.0
        members = [anchor] + order[: config.dim - 1]
        for cand in order[config.dim - 1 :]:
            trial = members + [cand]
            vectors, centroid = linalg._pca_vectors(embeddings[trial], config.dim)
            quality = reconstruction_quality(embeddings[trial], vectors, centroid)
            if np.all(quality >= threshold):
                members = trial
    basis, centroid = linalg.pca_top_m(embeddings[members], config.dim)
    return LinearNeighborhood(anchor, np.asarray(members, dtype=np.int64), basis, centroid)


def neighbor_lists(embeddings: np.ndarray, n_neighbors: int) -> np.ndarray:
    """(n, n_neighbors) nearest-neighbor indices, ascending distance, self excluded.

    Ties break deterministically toward the lower index (stable sort on
    squared distances).
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    n = embeddings.shape[0]
    if not 1 <= n_neighbors <= n - 1:
        raise ValueError(f"n_neighbors={n_neighbors} out of range for {n} points")
    sq = np.sum(embeddings**2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (embeddings @ embeddings.T)
    np.fill_diagonal(d2, np.inf)
    order = np.argsort(d2, axis=1, kind="stable")
    return order[:, :n_neighbors].astype(np.int64)


def _batched_accepts(
    embeddings: np.ndarray,
    trial: np.ndarray,
    n_components: int,
    threshold: float,
) -> np.ndarray:
    # Accept test for many trial sets of equal size at once. Result is
    # decision-identical to running linalg._pca_vectors plus
    # reconstruction_quality per set: the batched route only covers the
    # full-rank covariance case, whose arithmetic it mirrors operation for
    # operation; everything else falls back to the reference code.
    points = embeddings[trial]
    n_sets, set_size, ambient = points.shape
    centroid = points.mean(axis=1)
    centered = points - centroid[:, None, :]
    if set_size <= ambient:
        mats = np.matmul(centered, centered.transpose(0, 2, 1))
    else:
        mats = np.matmul(centered.transpose(0, 2, 1), centered)
    evals, evecs = np.linalg.eigh(mats)
    order = np.argsort(evals, axis=1)[:, ::-1]
    evals = np.take_along_axis(evals, order, axis=1)
    evecs = np.take_along_axis(evecs, order[:, None, :], axis=2)
    accept = np.empty(n_sets, dtype=bool)
    if set_size <= ambient or n_components > evals.shape[1]:
        fallback = np.ones(n_sets, dtype=bool)
    else:
        lead = evals[:, :n_components]
        rank_tol = (
            max(set_size, ambient)
            * np.finfo(np.float64).eps
            * np.maximum(evals[:, 0], 0.0)
        )
        fallback = np.any(lead <= rank_tol[:, None], axis=1) | np.any(lead <= 0.0, axis=1)
        direct = np.flatnonzero(~fallback)
        if direct.size:
            columns = evecs[direct][:, :, :n_components]
            norms = np.linalg.norm(columns, axis=1)
            vectors = np.ascontiguousarray(
                (columns / norms[:, None, :]).transpose(0, 2, 1)
            )
            diffs = centered[direct]
            base = np.linalg.norm(diffs, axis=2)
            coords = np.matmul(diffs, vectors.transpose(0, 2, 1))
            resid = diffs - np.matmul(coords, vectors)
            orth = np.linalg.norm(resid, axis=2)
            quality = np.ones((direct.size, set_size))
            nonzero = base > 0.0
            quality[nonzero] = 1.0 - orth[nonzero] / base[nonzero]
            accept[direct] = np.all(quality >= threshold, axis=1)
    for g in np.flatnonzero(fallback):
        pts = points[g]
        vectors, cent = linalg._pca_vectors(pts, n_components)
        quality = reconstruction_quality(pts, vectors, cent)
        accept[g] = bool(np.all(quality >= threshold))
    return accept


def _scan_pools(
    embeddings: np.ndarray, pools: np.ndarray, config: ManifoldConfig
) -> list[list[int]]:
    # All greedy scans advanced in lockstep so the per-candidate fits can be
    # batched across anchors. Anchors are grouped by current member count to
    # keep every reduction the same length it has in the one-anchor loop.
    n, _ = embeddings.shape
    plane_dim = config.dim
    threshold = config.quality_threshold / 100.0
    pool_size = pools.shape[1]
    members = np.empty((n, pool_size + 1), dtype=np.int64)
    members[:, 0] = np.arange(n)
    members[:, 1:plane_dim] = pools[:, : plane_dim - 1]
    sizes = np.full(n, plane_dim, dtype=np.int64)
    for ci in range(plane_dim - 1, pool_size):
        cands = pools[:, ci]
        snapshot = sizes.copy()
        for size in np.unique(snapshot):
            rows = np.flatnonzero(snapshot == size)
            trial = np.concatenate([members[rows, :size], cands[rows, None]], axis=1)
            accept = _batched_accepts(embeddings, trial, plane_dim, threshold)
            grown = rows[accept]
            members[grown, size] = cands[grown]
            sizes[grown] += 1
    return [members[i, : sizes[i]].tolist() for i in range(n)]


def fit_all_neighborhoods(
    embeddings: np.ndarray, config: ManifoldConfig
) -> list[LinearNeighborhood]:
    """Fit one LinearNeighborhood per point, pools drawn from the same set.

    Matches calling fit_neighborhood per point exactly; the scans just run
    in lockstep so their fit tests batch across anchors.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    n = embeddings.shape[0]
    if n <= config.pool_size:
        raise ValueError(
            f"need more than pool_size={config.pool_size} points, got {n}"
        )
    pools = neighbor_lists(embeddings, config.pool_size)
    if config.knn_only:
        return [
            fit_neighborhood(embeddings, i, pools[i], config) for i in range(n)
        ]
    out = []
    for i, mem in enumerate(_scan_pools(embeddings, pools, config)):
        basis, centroid = linalg.pca_top_m(embeddings[mem], config.dim)
        out.append(
            LinearNeighborhood(i, np.asarray(mem, dtype=np.int64), basis, centroid)
        )
    return out


@dataclass
class ProxySet:
    """Learnable proxies: unit-norm locations with one plane frame each.

    ``locations`` is (P, d); ``frames`` is (P, dim, d) with orthonormal rows
    per proxy. Both are plain mutable arrays because the optimizer updates
    them in place between maintenance passes.
    """

    locations: np.ndarray
    frames: np.ndarray

    def __post_init__(self) -> None:
        self.locations = np.asarray(self.locations, dtype=np.float64)
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.locations.ndim != 2:
            raise ValueError("locations must be (n_proxies, dim)")
        if self.frames.ndim != 3 or self.frames.shape[0] != self.locations.shape[0]:
            raise ValueError("frames must be (n_proxies, plane_dim, dim)")
        if self.frames.shape[2] != self.locations.shape[1]:
            raise ValueError("frame ambient dim does not match locations")

    @property
    def n_proxies(self) -> int:
        return self.locations.shape[0]

    def frame_basis(self, j: int) -> OrthonormalBasis:
        return OrthonormalBasis(self.frames[j])

    def renormalize_locations(self) -> None:
        """Project locations back to the unit sphere, skipping clean rows."""
        norms = np.linalg.norm(self.locations, axis=1)
        if np.any(norms <= 0.0):
            raise ValueError("cannot renormalize a zero proxy location")
        drifted = np.abs(norms - 1.0) > FRAME_DRIFT_TOL
        if np.any(drifted):
            self.locations[drifted] /= norms[drifted, None]

    def reorthonormalize_frames(self) -> None:
        """Restore frame orthonormality, skipping frames still within tolerance."""
        for j in range(self.n_proxies):
            frame = self.frames[j]
            gram = frame @ frame.T
            if np.max(np.abs(gram - np.eye(frame.shape[0]))) <= FRAME_DRIFT_TOL:
                continue
            basis, _ = linalg.reorthonormalize(frame)
            self.frames[j] = basis.vectors

    def validate(self) -> None:
        """Assert the maintained invariants; used by tests and checkpoints."""
        norms = np.linalg.norm(self.locations, axis=1)
        if np.max(np.abs(norms - 1.0)) > linalg.UNIT_NORM_TOL:
            raise ValueError("proxy locations are not unit norm")
        for j in range(self.n_proxies):
            self.frame_basis(j)

    def copy(self) -> "ProxySet":
        return ProxySet(self.locations.copy(), self.frames.copy())


def init_proxies(
    embeddings: np.ndarray,
    neighborhoods: Sequence[LinearNeighborhood],
    n_proxies: int,
    seed: int | np.random.SeedSequence,
) -> ProxySet:
    """Seed proxies by farthest-point sampling over the embedded points.

    The first proxy is a uniformly random point; each next proxy is the
    point maximizing the distance to the closest already-chosen one (ties to
    the lowest index). Every chosen point donates its embedding as the proxy
    location and its fitted neighborhood frame as the proxy frame.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    n = embeddings.shape[0]
    if not 1 <= n_proxies <= n:
        raise ValueError(f"n_proxies={n_proxies} out of range for {n} points")
    if len(neighborhoods) != n:
        raise ValueError("need exactly one neighborhood per point")
    rng = np.random.default_rng(seed)
    first = int(rng.integers(n))
    chosen = [first]
    min_d2 = np.sum((embeddings - embeddings[first]) ** 2, axis=1)
    while len(chosen) < n_proxies:
        nxt = int(np.argmax(min_d2))
        chosen.append(nxt)
        d2 = np.sum((embeddings - embeddings[nxt]) ** 2, axis=1)
        min_d2 = np.minimum(min_d2, d2)
    locations = embeddings[chosen].copy()
    frames = np.stack([neighborhoods[i].basis.vectors for i in chosen])
    return ProxySet(locations, frames)
