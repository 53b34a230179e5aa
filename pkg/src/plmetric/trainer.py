"""Training loop: losses, batch sampling, parameter updates, checkpoints.

Each step embeds the batch twice. The momentum twin produces the embeddings
that neighborhoods, similarities, and proxies are measured against; the
trained network produces the embeddings whose pairwise distances are pulled
toward the similarity targets. Gradients are routed strictly: the encoder
learns only from the point and proxy distance losses, the proxies learn only
from the proxy and neighborhood losses.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import embedder, manifold, similarity
from .data import FeatureDataset
from .embedder import AdamState, EmbedderPair, MLPParams
from .manifold import ManifoldConfig, ProxySet
from .similarity import ProxySimilarities, SimilarityConfig

CHECKPOINT_MAGIC = b"PLCK"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(Exception):
    """Raised when a checkpoint file cannot be parsed."""


@dataclass(frozen=True)
class SamplerConfig:
    """Seed-and-neighbors batch construction.

    A batch is ``n_seeds`` random distinct seed points, each bringing its
    ``batch_size / n_seeds - 1`` nearest neighbors under the current epoch's
    momentum embeddings, so local structure is always present in a batch.
    """

    batch_size: int = 100
    n_seeds: int = 10
    augment_sigma: float = 0.0

    def __post_init__(self) -> None:
        if self.batch_size < 1 or self.n_seeds < 1:
            raise ValueError("batch_size and n_seeds must be positive")
        if self.batch_size % self.n_seeds != 0:
            raise ValueError("batch_size must be divisible by n_seeds")
        if self.augment_sigma < 0.0:
            raise ValueError("augment_sigma must be non-negative")

    @property
    def group_size(self) -> int:
        return self.batch_size // self.n_seeds


@dataclass(frozen=True)
class LossConfig:
    """Loss weights and the target distance scale.

    ``distance_scale`` stretches dissimilarity into embedding distance: a
    pair with similarity s is pulled toward distance distance_scale * (1-s).
    ``stopgrad_similarity`` treats similarities as constants even for the
    proxy parameters (ablation).
    """

    distance_scale: float = 2.0
    point_weight: float = 1.0
    proxy_weight: float = 1.0
    neighborhood_weight: float = 1.0
    stopgrad_similarity: bool = False

    def __post_init__(self) -> None:
        if self.distance_scale <= 0.0:
            raise ValueError("distance_scale must be positive")
        for name in ("point_weight", "proxy_weight", "neighborhood_weight"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class TrainConfig:
    """Everything needed to reproduce a run from a root seed."""

    manifold: ManifoldConfig = field(default_factory=ManifoldConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    hidden_sizes: tuple[int, ...] = (256,)
    embed_dim: int = 32
    init_gain: float = 1.0
    momentum: float = 0.999
    lr: float = 5e-4
    proxy_lr_scale: float = 100.0
    n_proxies: int = 100
    epochs: int = 200
    seed: int = 0

    def __post_init__(self) -> None:
        if self.embed_dim < 1 or any(h < 1 for h in self.hidden_sizes):
            raise ValueError("network sizes must be positive")
        if self.embed_dim <= self.manifold.dim:
            raise ValueError("embed_dim must exceed the neighborhood dimension")
        if self.lr <= 0.0 or self.proxy_lr_scale <= 0.0:
            raise ValueError("learning rates must be positive")
        if self.n_proxies < 1:
            raise ValueError("n_proxies must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.init_gain <= 0.0:
            raise ValueError("init_gain must be positive")
        if self.sampler.batch_size <= self.manifold.pool_size:
            raise ValueError("batch_size must exceed the neighborhood pool_size")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))


@dataclass(frozen=True)
class StepMetrics:
    """Loss breakdown for one optimization step."""

    epoch: int
    step: int
    point: float
    proxy: float
    neighborhood: float
    total: float

    def as_record(self) -> dict:
        rec = {"kind": "step"}
        rec.update(asdict(self))
        return rec


def _first_non_finite(arr: np.ndarray) -> tuple:
    bad = np.argwhere(~np.isfinite(arr))
    return tuple(int(v) for v in bad[0])


def _check_terms(name: str, terms: np.ndarray) -> None:
    if not np.all(np.isfinite(terms)):
        idx = _first_non_finite(terms)
        raise FloatingPointError(f"non-finite {name} loss term at index {idx}")


def point_loss(
    embeddings: np.ndarray,
    similarities: np.ndarray,
    config: LossConfig,
    with_grads: bool = True,
) -> tuple[float, np.ndarray | None]:
    """Mean squared gap between target and actual pairwise distances.

    For every ordered pair i != j the target distance is
    distance_scale * (1 - s_ij); the residual against |e_i - e_j| is squared
    and averaged. Returns the loss and its gradient w.r.t. the embeddings
    (None when ``with_grads`` is off). Similarities are taken as constants.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    s = np.asarray(similarities, dtype=np.float64)
    n = e.shape[0]
    if s.shape != (n, n):
        raise ValueError(f"similarity matrix shape {s.shape} does not match {n} embeddings")
    if n < 2:
        raise ValueError("point loss needs at least two embeddings")
    diff_sq = np.sum(e**2, axis=1)[:, None] + np.sum(e**2, axis=1)[None, :] - 2.0 * e @ e.T
    dist = np.sqrt(np.maximum(diff_sq, 0.0))
    np.fill_diagonal(dist, 0.0)
    resid = config.distance_scale * (1.0 - s) - dist
    np.fill_diagonal(resid, 0.0)
    _check_terms("point", resid)
    count = n * (n - 1)
    value = float(np.sum(resid**2) / count)
    if not with_grads:
        return value, None
    # d value / d dist, symmetrized over the two ordered copies of each pair.
    d_dist = -2.0 * resid / count
    np.fill_diagonal(d_dist, 0.0)
    coef = d_dist + d_dist.T
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dist > 0.0, coef / np.where(dist > 0.0, dist, 1.0), 0.0)
    grad = ratio.sum(axis=1)[:, None] * e - ratio @ e
    return value, grad


def proxy_loss(
    embeddings: np.ndarray,
    proxies: ProxySet,
    proxy_sims: ProxySimilarities,
    config: LossConfig,
    with_grads: bool = True,
) -> tuple[float, np.ndarray | None, np.ndarray | None, np.ndarray | None]:
    """Point-to-proxy analog of the point loss.

    Every (point, proxy) pair contributes the squared gap between the target
    distance distance_scale * (1 - s_ij) and |e_i - rho_j|. Returns the loss
    and gradients w.r.t. embeddings, proxy locations, and proxy frames. The
    proxy parameters feel the loss both through the distances and, unless
    ``stopgrad_similarity`` is set, through the similarities themselves.
    """
    e = np.asarray(embeddings, dtype=np.float64)
    locations = proxies.locations
    s = proxy_sims.values
    n, n_prox = s.shape
    if e.shape[0] != n or locations.shape[0] != n_prox:
        raise ValueError("similarity table does not match embeddings/proxies")
    diff_sq = (
        np.sum(e**2, axis=1)[:, None]
        - 2.0 * e @ locations.T
        + np.sum(locations**2, axis=1)[None, :]
    )
    dist = np.sqrt(np.maximum(diff_sq, 0.0))
    resid = config.distance_scale * (1.0 - s) - dist
    _check_terms("proxy", resid)
    count = n * n_prox
    value = float(np.sum(resid**2) / count)
    if not with_grads:
        return value, None, None, None
    d_dist = -2.0 * resid / count
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dist > 0.0, d_dist / np.where(dist > 0.0, dist, 1.0), 0.0)
    grad_e = ratio.sum(axis=1)[:, None] * e - ratio @ locations
    grad_loc = ratio.sum(axis=0)[:, None] * locations - ratio.T @ e
    grad_frames = np.zeros_like(proxies.frames)
    if not config.stopgrad_similarity:
        if proxy_sims.d_loc is None or proxy_sims.d_frames is None:
            raise ValueError("proxy similarities were computed without gradients")
        d_sim = -2.0 * config.distance_scale * resid / count
        grad_loc = grad_loc + np.einsum("np,npd->pd", d_sim, proxy_sims.d_loc)
        grad_frames = np.einsum("np,npkd->pkd", d_sim, proxy_sims.d_frames)
    return value, grad_e, grad_loc, grad_frames


def neighborhood_loss(
    point_bases: np.ndarray,
    proxies: ProxySet,
    proxy_sims: ProxySimilarities,
    config: LossConfig,
    with_grads: bool = True,
) -> tuple[float, np.ndarray | None, np.ndarray | None]:
    """Alignment loss between proxy frames and nearby point planes.

    For point i, proxy j, and frame row k, the cosine of the angle between
    frame vector psi_jk and the point's plane is |P_i psi_jk| (psi_jk is unit
    norm). The loss pushes that cosine toward the point-proxy similarity, so
    frames of proxies near a point rotate into the point's local plane.
    Returns the loss and gradients w.r.t. proxy frames and locations (the
    latter only through the similarities).
    """
    bases = np.asarray(point_bases, dtype=np.float64)
    s = proxy_sims.values
    n, plane_dim, dim = bases.shape
    n_prox = proxies.n_proxies
    if s.shape != (n, n_prox):
        raise ValueError("similarity table does not match embeddings/proxies")
    frames_flat = proxies.frames.reshape(n_prox * plane_dim, dim)
    count = n * n_prox * plane_dim
    value = 0.0
    grad_frames = np.zeros_like(proxies.frames)
    d_sim = np.zeros((n, n_prox))
    for i in range(n):
        coords = frames_flat @ bases[i].T
        cosines = np.linalg.norm(coords, axis=1).reshape(n_prox, plane_dim)
        resid = s[i][:, None] - cosines
        _check_terms("neighborhood", resid)
        value += float(np.sum(resid**2))
        if not with_grads:
            continue
        d_cos = -2.0 * resid / count
        d_sim[i] = np.sum(2.0 * resid / count, axis=1)
        # d cos / d psi = P_i psi / cos, with the zero-cosine subgradient 0.
        inv_cos = np.zeros_like(cosines)
        nz = cosines > 0.0
        inv_cos[nz] = 1.0 / cosines[nz]
        scale = (d_cos * inv_cos).reshape(n_prox * plane_dim, 1)
        grad_frames += (scale * (coords @ bases[i])).reshape(n_prox, plane_dim, dim)
    value /= count
    if not with_grads:
        return value, None, None
    grad_loc = np.zeros_like(proxies.locations)
    if not config.stopgrad_similarity:
        if proxy_sims.d_loc is None or proxy_sims.d_frames is None:
            raise ValueError("proxy similarities were computed without gradients")
        grad_loc = np.einsum("np,npd->pd", d_sim, proxy_sims.d_loc)
        grad_frames = grad_frames + np.einsum("np,npkd->pkd", d_sim, proxy_sims.d_frames)
    return value, grad_loc, grad_frames


def sample_batch(
    neighbor_pools: np.ndarray, config: SamplerConfig, rng: np.random.Generator
) -> np.ndarray:
    """Draw one batch of indices: distinct seeds plus their neighbor groups."""
    n = neighbor_pools.shape[0]
    if n < config.n_seeds:
        raise ValueError(f"cannot draw {config.n_seeds} distinct seeds from {n} points")
    group = config.group_size
    if group > 1 and neighbor_pools.shape[1] < group - 1:
        raise ValueError("neighbor pools are narrower than the group size")
    seeds = rng.choice(n, size=config.n_seeds, replace=False)
    parts = []
    for seed in seeds:
        parts.append([int(seed)] + [int(v) for v in neighbor_pools[seed, : group - 1]])
    return np.asarray([i for part in parts for i in part], dtype=np.int64)


@dataclass
class LossBreakdown:
    point: float
    proxy: float
    neighborhood: float
    total: float


class Trainer:
    """Owns all mutable training state and advances it epoch by epoch."""

    def __init__(
        self,
        dataset: FeatureDataset,
        config: TrainConfig,
        pair: EmbedderPair,
        proxies: ProxySet,
        adam_encoder: AdamState,
        adam_proxies: AdamState,
        rng_sampler: np.random.Generator,
        rng_augment: np.random.Generator,
        epoch: int = 0,
        global_step: int = 0,
        history: list | None = None,
    ):
        if dataset.n_samples < config.sampler.batch_size:
            raise ValueError("dataset is smaller than one batch")
        self.dataset = dataset
        self.config = config
        self.pair = pair
        self.proxies = proxies
        self.adam_encoder = adam_encoder
        self.adam_proxies = adam_proxies
        self.rng_sampler = rng_sampler
        self.rng_augment = rng_augment
        self.epoch = epoch
        self.global_step = global_step
        self.history = history if history is not None else []

    @classmethod
    def initialize(cls, dataset: FeatureDataset, config: TrainConfig) -> "Trainer":
        """Build fresh state from the root seed.

        The root seed is split into independent streams for weight init,
        proxy placement, batch sampling, and augmentation noise, so toggling
        one consumer never shifts another.
        """
        if config.n_proxies > dataset.n_samples:
            raise ValueError("n_proxies cannot exceed the dataset size")
        root = np.random.SeedSequence(config.seed)
        init_seq, proxy_seq, sampler_seq, augment_seq = root.spawn(4)
        layer_sizes = (dataset.dim, *config.hidden_sizes, config.embed_dim)
        pair = EmbedderPair.initialize(
            layer_sizes, init_seq, momentum=config.momentum, gain=config.init_gain
        )
        start_embeds = embedder.forward(pair.averaged, dataset.features)
        neighborhoods = manifold.fit_all_neighborhoods(start_embeds, config.manifold)
        proxies = manifold.init_proxies(start_embeds, neighborhoods, config.n_proxies, proxy_seq)
        adam_encoder = AdamState.for_tensors(pair.trained.tensors(), config.lr)
        adam_proxies = AdamState.for_tensors(
            [proxies.locations, proxies.frames], config.lr * config.proxy_lr_scale
        )
        return cls(
            dataset,
            config,
            pair,
            proxies,
            adam_encoder,
            adam_proxies,
            np.random.default_rng(sampler_seq),
            np.random.default_rng(augment_seq),
        )

    # -- one optimization step -------------------------------------------

    def _forward_losses(self, x_batch: np.ndarray, with_grads: bool):
        cfg = self.config
        anchor_embeds = embedder.forward(self.pair.averaged, x_batch)
        neighborhoods = manifold.fit_all_neighborhoods(anchor_embeds, cfg.manifold)
        bases = np.stack([nb.basis.vectors for nb in neighborhoods])
        point_sims = similarity.pairwise_similarity_matrix(
            anchor_embeds, neighborhoods, cfg.similarity
        )
        proxy_sims = similarity.proxy_similarity_batch(
            anchor_embeds,
            bases,
            self.proxies,
            cfg.similarity,
            with_grads=with_grads and not cfg.loss.stopgrad_similarity,
        )
        if with_grads:
            trained_embeds, cache = embedder.forward_cached(self.pair.trained, x_batch)
        else:
            trained_embeds = embedder.forward(self.pair.trained, x_batch)
            cache = None
        l_point, g_point = point_loss(trained_embeds, point_sims, cfg.loss, with_grads)
        l_proxy, g_proxy_e, g_loc_p, g_frames_p = proxy_loss(
            trained_embeds, self.proxies, proxy_sims, cfg.loss, with_grads
        )
        l_nbhd, g_loc_n, g_frames_n = neighborhood_loss(
            bases, self.proxies, proxy_sims, cfg.loss, with_grads
        )
        w = cfg.loss
        losses = LossBreakdown(
            l_point,
            l_proxy,
            l_nbhd,
            w.point_weight * l_point + w.proxy_weight * l_proxy + w.neighborhood_weight * l_nbhd,
        )
        if not with_grads:
            return losses, None, None, None
        # Routing: the encoder feels only the two distance losses, the proxy
        # parameters only the proxy and neighborhood losses.
        grad_embeds = w.point_weight * g_point + w.proxy_weight * g_proxy_e
        encoder_grads = embedder.backward(self.pair.trained, cache, grad_embeds)
        grad_loc = w.proxy_weight * g_loc_p + w.neighborhood_weight * g_loc_n
        grad_frames = w.proxy_weight * g_frames_p + w.neighborhood_weight * g_frames_n
        return losses, encoder_grads, grad_loc, grad_frames

    def loss_values(self, x_batch: np.ndarray) -> LossBreakdown:
        """Pure loss evaluation at the current state, no gradients."""
        losses, _, _, _ = self._forward_losses(np.asarray(x_batch, dtype=np.float64), False)
        return losses

    def step_gradients(self, x_batch: np.ndarray):
        """Losses plus analytic gradients, without touching any state.

        Returns (losses, encoder_grads, grad_locations, grad_frames) where
        encoder_grads aligns with ``pair.trained.tensors()``.
        """
        return self._forward_losses(np.asarray(x_batch, dtype=np.float64), True)

    def _augment(self, x_batch: np.ndarray) -> np.ndarray:
        sigma = self.config.sampler.augment_sigma
        if sigma == 0.0:
            return x_batch
        # Two independently perturbed views replace each clean row.
        doubled = np.repeat(x_batch, 2, axis=0)
        return doubled + sigma * self.rng_augment.standard_normal(doubled.shape)

    def train_step(self, batch_indices: np.ndarray, step_in_epoch: int = 0) -> StepMetrics:
        """One full update: gradients, Adam, proxy maintenance, EMA."""
        x_batch = self._augment(self.dataset.features[batch_indices])
        losses, encoder_grads, grad_loc, grad_frames = self.step_gradients(x_batch)
        embedder.adam_step(self.adam_encoder, self.pair.trained.tensors(), encoder_grads)
        embedder.adam_step(
            self.adam_proxies,
            [self.proxies.locations, self.proxies.frames],
            [grad_loc, grad_frames],
        )
        self.proxies.renormalize_locations()
        self.proxies.reorthonormalize_frames()
        self.pair.ema_update()
        self.global_step += 1
        return StepMetrics(
            self.epoch, step_in_epoch, losses.point, losses.proxy, losses.neighborhood, losses.total
        )

    # -- epoch loop --------------------------------------------------------

    def run_epoch(self, log_fn=None) -> list[StepMetrics]:
        """One pass over the data: refresh pools, then ceil(n / B) steps."""
        cfg = self.config
        pool_embeds = embedder.forward(self.pair.averaged, self.dataset.features)
        group = cfg.sampler.group_size
        if group > 1:
            pools = manifold.neighbor_lists(pool_embeds, group - 1)
        else:
            pools = np.zeros((self.dataset.n_samples, 0), dtype=np.int64)
        n_steps = -(-self.dataset.n_samples // cfg.sampler.batch_size)
        metrics = []
        for step in range(n_steps):
            batch = sample_batch(pools, cfg.sampler, self.rng_sampler)
            m = self.train_step(batch, step)
            metrics.append(m)
            self.history.append(m.as_record())
            if log_fn is not None:
                log_fn(m)
        self.epoch += 1
        return metrics

    def run(self, log_fn=None, on_epoch_end=None) -> None:
        """Advance to ``config.epochs``; hooks fire after every epoch."""
        while self.epoch < self.config.epochs:
            self.run_epoch(log_fn)
            if on_epoch_end is not None:
                on_epoch_end(self)

    def embed(self, features: np.ndarray, averaged: bool = False) -> np.ndarray:
        """Embed arbitrary features with the trained (or averaged) network."""
        params = self.pair.averaged if averaged else self.pair.trained
        return embedder.forward(params, np.asarray(features, dtype=np.float64))


# -- checkpoint serialization ---------------------------------------------


def _config_to_dict(config: TrainConfig) -> dict:
    return asdict(config)


def _config_from_dict(raw: dict) -> TrainConfig:
    return TrainConfig(
        manifold=ManifoldConfig(**raw["manifold"]),
        similarity=SimilarityConfig(**raw["similarity"]),
        sampler=SamplerConfig(**raw["sampler"]),
        loss=LossConfig(**raw["loss"]),
        hidden_sizes=tuple(raw["hidden_sizes"]),
        embed_dim=raw["embed_dim"],
        init_gain=raw["init_gain"],
        momentum=raw["momentum"],
        lr=raw["lr"],
        proxy_lr_scale=raw["proxy_lr_scale"],
        n_proxies=raw["n_proxies"],
        epochs=raw["epochs"],
        seed=raw["seed"],
    )


def _tensor_entries(trainer: Trainer) -> list[tuple[str, np.ndarray]]:
    entries: list[tuple[str, np.ndarray]] = []
    for idx, tensor in enumerate(trainer.pair.trained.tensors()):
        entries.append((f"trained.{idx}", tensor))
    for idx, tensor in enumerate(trainer.pair.averaged.tensors()):
        entries.append((f"averaged.{idx}", tensor))
    for idx, tensor in enumerate(trainer.adam_encoder.m):
        entries.append((f"adam_encoder.m.{idx}", tensor))
    for idx, tensor in enumerate(trainer.adam_encoder.v):
        entries.append((f"adam_encoder.v.{idx}", tensor))
    entries.append(("proxies.locations", trainer.proxies.locations))
    entries.append(("proxies.frames", trainer.proxies.frames))
    for idx, tensor in enumerate(trainer.adam_proxies.m):
        entries.append((f"adam_proxies.m.{idx}", tensor))
    for idx, tensor in enumerate(trainer.adam_proxies.v):
        entries.append((f"adam_proxies.v.{idx}", tensor))
    return entries


def save_checkpoint(trainer: Trainer, path: str | Path) -> None:
    """Serialize the full training state, bit-exactly, to one file.

    Layout: magic, u16 version, u64 manifest length, JSON manifest, then the
    raw float64 little-endian tensor payloads in manifest order.
    """
    entries = _tensor_entries(trainer)
    manifest = {
        "version": CHECKPOINT_VERSION,
        "epoch": trainer.epoch,
        "global_step": trainer.global_step,
        "config": _config_to_dict(trainer.config),
        "adam_encoder_steps": trainer.adam_encoder.step_count,
        "adam_proxies_steps": trainer.adam_proxies.step_count,
        "rng_sampler": trainer.rng_sampler.bit_generator.state,
        "rng_augment": trainer.rng_augment.bit_generator.state,
        "history": trainer.history,
        "tensors": [{"name": name, "shape": list(t.shape)} for name, t in entries],
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for _, tensor in entries:
            fh.write(np.ascontiguousarray(tensor, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Read a checkpoint into (manifest, {tensor name: float64 array})."""
    blob = Path(path).read_bytes()
    header = 4 + struct.calcsize("<HQ")
    if len(blob) < header or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointFormatError(f"{path}: not a checkpoint file")
    version, manifest_len = struct.unpack_from("<HQ", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"{path}: unsupported checkpoint version {version}")
    if len(blob) < header + manifest_len:
        raise CheckpointFormatError(f"{path}: truncated manifest")
    manifest = json.loads(blob[header : header + manifest_len].decode("utf-8"))
    offset = header + manifest_len
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        nbytes = size * 8
        if len(blob) < offset + nbytes:
            raise CheckpointFormatError(f"{path}: truncated tensor {entry['name']}")
        tensors[entry["name"]] = (
            np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
            .reshape(shape)
            .astype(np.float64)
        )
        offset += nbytes
    if offset != len(blob):
        raise CheckpointFormatError(f"{path}: {len(blob) - offset} trailing bytes")
    return manifest, tensors


def _params_from_tensors(prefix: str, tensors: dict) -> MLPParams:
    weights = []
    biases = []
    idx = 0
    while f"{prefix}.{idx}" in tensors:
        weights.append(tensors[f"{prefix}.{idx}"].copy())
        biases.append(tensors[f"{prefix}.{idx + 1}"].copy())
        idx += 2
    if not weights:
        raise CheckpointFormatError(f"checkpoint is missing {prefix} tensors")
    return MLPParams(weights, biases)


def _restore_rng(state: dict) -> np.random.Generator:
    rng = np.random.default_rng()
    rng.bit_generator.state = state
    return rng


def trainer_from_checkpoint(path: str | Path, dataset: FeatureDataset) -> Trainer:
    """Rebuild a Trainer mid-run; resuming continues the exact step stream."""
    manifest, tensors = load_checkpoint(path)
    config = _config_from_dict(manifest["config"])
    trained = _params_from_tensors("trained", tensors)
    averaged = _params_from_tensors("averaged", tensors)
    if trained.layer_sizes[0] != dataset.dim:
        raise ValueError(
            f"checkpoint expects input dim {trained.layer_sizes[0]}, dataset has {dataset.dim}"
        )
    pair = EmbedderPair(trained, averaged, momentum=config.momentum)
    proxies = ProxySet(tensors["proxies.locations"].copy(), tensors["proxies.frames"].copy())
    adam_encoder = AdamState.for_tensors(pair.trained.tensors(), config.lr)
    adam_encoder.step_count = manifest["adam_encoder_steps"]
    adam_encoder.m = [_grab(tensors, f"adam_encoder.m.{i}") for i in range(len(adam_encoder.m))]
    adam_encoder.v = [_grab(tensors, f"adam_encoder.v.{i}") for i in range(len(adam_encoder.v))]
    adam_proxies = AdamState.for_tensors(
        [proxies.locations, proxies.frames], config.lr * config.proxy_lr_scale
    )
    adam_proxies.step_count = manifest["adam_proxies_steps"]
    adam_proxies.m = [_grab(tensors, f"adam_proxies.m.{i}") for i in range(2)]
    adam_proxies.v = [_grab(tensors, f"adam_proxies.v.{i}") for i in range(2)]
    return Trainer(
        dataset,
        config,
        pair,
        proxies,
        adam_encoder,
        adam_proxies,
        _restore_rng(manifest["rng_sampler"]),
        _restore_rng(manifest["rng_augment"]),
        epoch=manifest["epoch"],
        global_step=manifest["global_step"],
        history=list(manifest["history"]),
    )


def _grab(tensors: dict, name: str) -> np.ndarray:
    if name not in tensors:
        raise CheckpointFormatError(f"checkpoint is missing tensor {name}")
    return tensors[name].copy()
