"""Geometric similarity between points, neighborhoods, and proxies.

A directed similarity from x toward a target plane decomposes the difference
vector into an orthogonal distance o and an in-plane distance p, and maps
them through two decay curves:

    orthogonal_decay(o) = (1 + o/2) ** -orth_exponent
    inplane_decay(p)    = (1 + p) ** -inplane_exponent

The product is the directed similarity; averaging the two directions makes
it symmetric. Orthogonal drift is meant to be punished much harder than
in-plane drift, hence separate exponents.

The proxy path also returns analytic partial derivatives with respect to
proxy locations and frames, since the training losses treat similarities as
differentiable functions of the proxies (but never of the encoder).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .linalg import OrthonormalBasis, decompose_batch
from .manifold import LinearNeighborhood, ProxySet


@dataclass(frozen=True)
class SimilarityConfig:
    """Decay exponents plus the binary-similarity ablation switch."""

    orth_exponent: float = 4.0
    inplane_exponent: float = 0.5
    binary: bool = False

    def __post_init__(self) -> None:
        if self.orth_exponent < 0.0 or self.inplane_exponent < 0.0:
            raise ValueError("decay exponents must be non-negative")
        if not self.binary and self.orth_exponent <= self.inplane_exponent:
            warnings.warn(
                "orth_exponent <= inplane_exponent: orthogonal deviations decay "
                "no faster than in-plane ones, which defeats the planar geometry",
                stacklevel=2,
            )


def orthogonal_decay(distance, exponent: float):
    """Similarity factor for the orthogonal component, (1 + o/2) ** -exponent."""
    distance = np.asarray(distance, dtype=np.float64)
    if np.any(distance < 0.0):
        raise ValueError("orthogonal distance must be non-negative")
    out = (1.0 + distance / 2.0) ** (-exponent)
    return float(out) if out.ndim == 0 else out


def inplane_decay(distance, exponent: float):
    """Similarity factor for the in-plane component, (1 + p) ** -exponent."""
    distance = np.asarray(distance, dtype=np.float64)
    if np.any(distance < 0.0):
        raise ValueError("in-plane distance must be non-negative")
    out = (1.0 + distance) ** (-exponent)
    return float(out) if out.ndim == 0 else out


def directed_similarity(
    x_embed: np.ndarray,
    target_embed: np.ndarray,
    target_basis: OrthonormalBasis,
    config: SimilarityConfig,
) -> float:
    """Similarity of x as seen from the target's plane.

    Decomposes x - target on the target's frame and multiplies the two decay
    factors. Equal points give exactly 1. The continuous form only; binary
    ablation is resolved by the callers that know membership.
    """
    diff = np.asarray(x_embed, dtype=np.float64) - np.asarray(target_embed, dtype=np.float64)
    p, o = decompose_batch(diff[None, :], target_basis.vectors)
    return float(
        orthogonal_decay(o[0], config.orth_exponent)
        * inplane_decay(p[0], config.inplane_exponent)
    )


def symmetric_similarity(
    i: int,
    j: int,
    embeddings: np.ndarray,
    neighborhoods: Sequence[LinearNeighborhood],
    config: SimilarityConfig,
) -> float:
    """Average of the two directed similarities between points i and j.

    With the binary ablation, each direction is the membership indicator
    (is i inside j's neighborhood set), so the average lands in {0, 0.5, 1}.
    """
    if config.binary:
        fwd = float(i in neighborhoods[j].member_indices)
        rev = float(j in neighborhoods[i].member_indices)
        return (fwd + rev) / 2.0
    embeddings = np.asarray(embeddings, dtype=np.float64)
    fwd = directed_similarity(embeddings[i], embeddings[j], neighborhoods[j].basis, config)
    rev = directed_similarity(embeddings[j], embeddings[i], neighborhoods[i].basis, config)
    return (fwd + rev) / 2.0


def pairwise_similarity_matrix(
    embeddings: np.ndarray,
    neighborhoods: Sequence[LinearNeighborhood],
    config: SimilarityConfig,
) -> np.ndarray:
    """(n, n) symmetric similarity matrix over one embedded point set."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    n = embeddings.shape[0]
    if len(neighborhoods) != n:
        raise ValueError("need one neighborhood per embedding row")
    directed = np.empty((n, n))
    if config.binary:
        for j, nbhd in enumerate(neighborhoods):
            member = np.zeros(n)
            member[nbhd.member_indices] = 1.0
            directed[:, j] = member
    else:
        for j, nbhd in enumerate(neighborhoods):
            diffs = embeddings - embeddings[j]
            p, o = decompose_batch(diffs, nbhd.basis.vectors)
            directed[:, j] = orthogonal_decay(o, config.orth_exponent) * inplane_decay(
                p, config.inplane_exponent
            )
    return (directed + directed.T) / 2.0


def nearest_proxy_indices(embeddings: np.ndarray, locations: np.ndarray) -> np.ndarray:
    """Index of the closest proxy per embedding row, ties to the lowest index."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    locations = np.asarray(locations, dtype=np.float64)
    d2 = (
        np.sum(embeddings**2, axis=1)[:, None]
        - 2.0 * embeddings @ locations.T
        + np.sum(locations**2, axis=1)[None, :]
    )
    return np.argmin(d2, axis=1)


@dataclass
class ProxySimilarities:
    """Symmetric point-proxy similarities with optional analytic partials.

    values:   (n, P) similarity of point i to proxy j.
    d_loc:    (n, P, d) partial of values[i, j] w.r.t. the proxy location,
              or None when gradients were not requested.
    d_frames: (n, P, m, d) partial w.r.t. the proxy frame rows, or None.
    """

    values: np.ndarray
    d_loc: np.ndarray | None = None
    d_frames: np.ndarray | None = None


def _decay_pair(p: np.ndarray, o: np.ndarray, config: SimilarityConfig):
    # Returns the two factors and their derivatives w.r.t. their distances.
    a = (1.0 + o / 2.0) ** (-config.orth_exponent)
    b = (1.0 + p) ** (-config.inplane_exponent)
    da = -(config.orth_exponent / 2.0) * (1.0 + o / 2.0) ** (-config.orth_exponent - 1.0)
    db = -config.inplane_exponent * (1.0 + p) ** (-config.inplane_exponent - 1.0)
    return a, b, da, db


def _inv_or_zero(values: np.ndarray) -> np.ndarray:
    # 1/x with the subgradient-zero convention at x == 0.
    out = np.zeros_like(values)
    nz = values > 0.0
    out[nz] = 1.0 / values[nz]
    return out


def proxy_similarity_batch(
    embeddings: np.ndarray,
    point_bases: np.ndarray,
    proxies: ProxySet,
    config: SimilarityConfig,
    with_grads: bool = True,
) -> ProxySimilarities:
    """All symmetric point-proxy similarities for one batch.

    Args:
        embeddings: (n, d) embedded batch (momentum encoder output).
        point_bases: (n, m, d) stacked neighborhood frames, one per point.
        proxies: current proxy locations and frames.
        config: decay exponents / binary switch.
        with_grads: also compute partials w.r.t. proxy parameters.

    The forward direction measures the point from the proxy's plane, the
    reverse direction measures the proxy from the point's neighborhood
    plane; the result is their average. In binary mode the similarity is the
    nearest-proxy indicator and all partials are zero (the indicator is
    piecewise constant).
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    point_bases = np.asarray(point_bases, dtype=np.float64)
    n, dim = embeddings.shape
    n_prox, plane_dim, _ = proxies.frames.shape
    if point_bases.shape != (n, plane_dim, dim):
        raise ValueError(
            f"point_bases shape {point_bases.shape} does not match "
            f"({n}, {plane_dim}, {dim})"
        )
    if config.binary:
        values = np.zeros((n, n_prox))
        values[np.arange(n), nearest_proxy_indices(embeddings, proxies.locations)] = 1.0
        if with_grads:
            return ProxySimilarities(
                values, np.zeros((n, n_prox, dim)), np.zeros((n, n_prox, plane_dim, dim))
            )
        return ProxySimilarities(values)

    values = np.empty((n, n_prox))
    d_loc = np.zeros((n, n_prox, dim)) if with_grads else None
    d_frames = np.zeros((n, n_prox, plane_dim, dim)) if with_grads else None

    # Forward direction: each proxy's plane sees the whole batch at once.
    for j in range(n_prox):
        frame = proxies.frames[j]
        diffs = embeddings - proxies.locations[j]
        coords = diffs @ frame.T
        inplane_vec = coords @ frame
        p = np.linalg.norm(coords, axis=1)
        ovec = diffs - inplane_vec
        o = np.linalg.norm(ovec, axis=1)
        a, b, da, db = _decay_pair(p, o, config)
        values[:, j] = a * b
        if with_grads:
            inv_o = _inv_or_zero(o)
            inv_p = _inv_or_zero(p)
            ds_ddiff = (da * b * inv_o)[:, None] * ovec + (a * db * inv_p)[:, None] * inplane_vec
            d_loc[:, j, :] -= 0.5 * ds_ddiff
            # d s / d psi_k splits across the two decay factors: the in-plane
            # distance varies along the full difference vector, the orthogonal
            # distance only along the off-plane residual.
            plane_part = np.einsum("nk,nd->nkd", coords * (a * db * inv_p)[:, None], diffs)
            orth_part = np.einsum("nk,nd->nkd", coords * (da * b * inv_o)[:, None], ovec)
            d_frames[:, j, :, :] += 0.5 * (plane_part - orth_part)

    # Reverse direction: each point's neighborhood plane sees all proxies.
    for i in range(n):
        frame = point_bases[i]
        diffs = proxies.locations - embeddings[i]
        coords = diffs @ frame.T
        inplane_vec = coords @ frame
        p = np.linalg.norm(coords, axis=1)
        ovec = diffs - inplane_vec
        o = np.linalg.norm(ovec, axis=1)
        a, b, da, db = _decay_pair(p, o, config)
        values[i, :] = (values[i, :] + a * b) / 2.0
        if with_grads:
            inv_o = _inv_or_zero(o)
            inv_p = _inv_or_zero(p)
            ds_ddiff = (da * b * inv_o)[:, None] * ovec + (a * db * inv_p)[:, None] * inplane_vec
            d_loc[i, :, :] += 0.5 * ds_ddiff
    return ProxySimilarities(values, d_loc, d_frames)
