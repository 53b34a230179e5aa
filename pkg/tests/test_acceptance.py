"""Acceptance gate: one test per shipped criterion, run as ordinary pytest.

Each test prints a single "criterion N: PASS/FAIL" line with the measured
quantities, so the suite output doubles as the acceptance report. Criteria
6 and 7 share fifteen full training runs on the synthetic benchmark and
dominate the suite's runtime (about ten minutes single threaded).
"""

from __future__ import annotations

import dataclasses
import json
import subprocess
import sys
import time
from contextlib import nullcontext

import numpy as np
import pytest

from plmetric import data, embedder, evaluation, linalg, manifold, similarity, trainer
from plmetric.data import FeatureDataset, SyntheticSpec
from plmetric.manifold import ManifoldConfig
from plmetric.similarity import SimilarityConfig
from plmetric.trainer import (
    LossConfig,
    SamplerConfig,
    TrainConfig,
    Trainer,
    neighborhood_loss,
    point_loss,
    proxy_loss,
)

from oracles import (
    central_difference_gradient,
    greedy_plane_scan,
    relative_gradient_error,
    top_subspace_projector,
)
from test_manifold import make_planted_fixture

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # the BLAS thread cap is best-effort outside the CLI

    def threadpool_limits(limits=None):
        return nullcontext()


def _report(num: int, passed: bool, detail: str) -> None:
    print(f"criterion {num}: {'PASS' if passed else 'FAIL'} - {detail}")
    assert passed, f"criterion {num}: {detail}"


# The synthetic-benchmark training recipe used by criteria 6 and 7: a narrow
# deep encoder with a hot init so the untrained embedding genuinely scrambles
# the classes, and a learning rate that moves it within 200 epochs.
BENCHMARK_RECIPE = dict(
    hidden_sizes=(64,) * 6,
    embed_dim=4,
    init_gain=12.0,
    epochs=200,
    lr=1e-2,
    momentum=0.99,
)
BENCHMARK_SEEDS = range(5)
TRAIN_CLASSES = 3


def _benchmark_split(seed: int) -> tuple[FeatureDataset, FeatureDataset]:
    ds = data.generate_synthetic(SyntheticSpec(seed=seed))
    held_in = ds.labels < TRAIN_CLASSES
    return (
        FeatureDataset(ds.features[held_in], ds.labels[held_in]),
        FeatureDataset(ds.features[~held_in], ds.labels[~held_in]),
    )


def _train_benchmark(seed: int, knn_only: bool = False, binary: bool = False):
    """One benchmark run; returns (untrained R@1, trained R@1, seconds)."""
    config = TrainConfig(
        manifold=ManifoldConfig(pool_size=20, knn_only=knn_only),
        seed=seed,
        **BENCHMARK_RECIPE,
    )
    if binary:
        config = dataclasses.replace(
            config, similarity=dataclasses.replace(config.similarity, binary=True)
        )
    train, held_out = _benchmark_split(seed)
    run = Trainer.initialize(train, config)
    before = evaluation.recall_at_k(run.embed(held_out.features), held_out.labels, (1,))[1]
    start = time.perf_counter()
    for _ in range(config.epochs):
        run.run_epoch()
    elapsed = time.perf_counter() - start
    after = evaluation.recall_at_k(run.embed(held_out.features), held_out.labels, (1,))[1]
    return before, after, elapsed


@pytest.fixture(scope="module")
def benchmark_outcomes():
    out = {}
    with threadpool_limits(limits=1):
        for tag, kwargs in (
            ("full", {}),
            ("knn", {"knn_only": True}),
            ("binary", {"binary": True}),
        ):
            out[tag] = [_train_benchmark(seed, **kwargs) for seed in BENCHMARK_SEEDS]
    return out


def _fd_instance():
    """4 points, 2 proxies, 6-dim input and embedding, 2-dim planes."""
    rng = np.random.default_rng(42)
    features = rng.standard_normal((4, 6))
    config = TrainConfig(
        manifold=ManifoldConfig(dim=2, quality_threshold=60.0, pool_size=3),
        sampler=SamplerConfig(batch_size=4, n_seeds=2),
        hidden_sizes=(8,),
        embed_dim=6,
        n_proxies=2,
        seed=7,
    )
    run = Trainer.initialize(FeatureDataset(features), config)
    # Move the proxies off the data points: at init they coincide with
    # embeddings, parking the distance terms on their sqrt kink where
    # central differences are meaningless.
    loc = rng.standard_normal(run.proxies.locations.shape)
    run.proxies.locations[:] = loc / np.linalg.norm(loc, axis=1, keepdims=True)
    return run, features.copy()


def test_criterion_01_full_loss_gradients_match_finite_differences():
    start = time.perf_counter()
    run, batch = _fd_instance()
    config = run.config
    _, encoder_grads, grad_loc, grad_frames = run.step_gradients(batch)

    def total(_):
        return run.loss_values(batch).total

    errors = {}
    errors["theta"] = max(
        relative_gradient_error(analytic, central_difference_gradient(total, tensor))
        for tensor, analytic in zip(run.pair.trained.tensors(), encoder_grads)
    )
    errors["rho"] = relative_gradient_error(
        grad_loc, central_difference_gradient(total, run.proxies.locations)
    )
    errors["psi"] = relative_gradient_error(
        grad_frames, central_difference_gradient(total, run.proxies.frames)
    )

    # Gradient w.r.t. the embeddings themselves, with every input to the
    # losses except the trained embedding held fixed.
    anchor = embedder.forward(run.pair.averaged, batch)
    neighborhoods = manifold.fit_all_neighborhoods(anchor, config.manifold)
    bases = np.stack([nb.basis.vectors for nb in neighborhoods])
    point_sims = similarity.pairwise_similarity_matrix(anchor, neighborhoods, config.similarity)
    proxy_sims = similarity.proxy_similarity_batch(anchor, bases, run.proxies, config.similarity)
    embeds = embedder.forward(run.pair.trained, batch)
    w = config.loss

    def total_of_embeds(e):
        return (
            w.point_weight * point_loss(e, point_sims, w, False)[0]
            + w.proxy_weight * proxy_loss(e, run.proxies, proxy_sims, w, False)[0]
            + w.neighborhood_weight * neighborhood_loss(bases, run.proxies, proxy_sims, w, False)[0]
        )

    analytic_e = (
        w.point_weight * point_loss(embeds, point_sims, w, True)[1]
        + w.proxy_weight * proxy_loss(embeds, run.proxies, proxy_sims, w, True)[1]
    )
    errors["embeddings"] = relative_gradient_error(
        analytic_e, central_difference_gradient(total_of_embeds, embeds.copy())
    )
    elapsed = time.perf_counter() - start

    worst = max(errors.values())
    _report(
        1,
        worst <= 1e-3 and elapsed < 5.0,
        "max relative gradient error "
        + ", ".join(f"{k}={v:.2e}" for k, v in errors.items())
        + f" (limit 1e-3), {elapsed:.2f}s (limit 5s)",
    )


def test_criterion_02_pca_matches_brute_force_eigendecomposition():
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        dim = int(rng.integers(3, 10))
        n = int(rng.integers(dim + 2, 40))
        n_components = int(rng.integers(1, dim))
        points = rng.standard_normal((n, dim)) * rng.uniform(0.5, 3.0)
        basis, _ = linalg.pca_top_m(points, n_components)
        projector = basis.vectors.T @ basis.vectors
        reference = top_subspace_projector(points, n_components)
        worst = max(worst, float(np.linalg.norm(projector - reference)))
    elapsed = time.perf_counter() - start
    _report(
        2,
        worst <= 1e-6 and elapsed < 5.0,
        f"worst projector Frobenius gap {worst:.2e} over 50 matrices "
        f"(limit 1e-6), {elapsed:.2f}s (limit 5s)",
    )


def test_criterion_03_similarity_closed_forms_and_symmetry():
    alpha = similarity.orthogonal_decay(2.0, 4.0)
    beta = similarity.inplane_decay(1.0, 0.5)
    err_alpha = abs(alpha - 0.0625)
    err_beta = abs(beta - np.sqrt(0.5))  # 0.707107 to six decimals

    rng = np.random.default_rng(33)
    embeds = rng.standard_normal((200, 6))
    embeds /= np.linalg.norm(embeds, axis=1, keepdims=True)
    config = ManifoldConfig(dim=2, quality_threshold=50.0, pool_size=8)
    neighborhoods = manifold.fit_all_neighborhoods(embeds, config)
    sim_config = SimilarityConfig()
    worst_asym = 0.0
    for _ in range(1000):
        i, j = rng.choice(200, size=2, replace=False)
        fwd = similarity.symmetric_similarity(int(i), int(j), embeds, neighborhoods, sim_config)
        rev = similarity.symmetric_similarity(int(j), int(i), embeds, neighborhoods, sim_config)
        worst_asym = max(worst_asym, abs(fwd - rev))

    _report(
        3,
        err_alpha <= 1e-9 and err_beta <= 1e-9 and worst_asym <= 1e-12,
        f"alpha(2;4)={alpha} (err {err_alpha:.1e}), beta(1;0.5)={beta:.9f} "
        f"(err {err_beta:.1e}, limit 1e-9), worst asymmetry {worst_asym:.1e} "
        f"over 1000 pairs (limit 1e-12)",
    )


def test_criterion_04_planted_plane_selection_matches_residual_oracle():
    # Recovery is only decidable when the four nearest candidates lie in the
    # plane: sets of three points are exactly coplanar with any candidate,
    # so the scan cannot discriminate before the plane is pinned down.
    # Recovery is asserted on the first 20 such fixtures; oracle equality is
    # asserted on every fixture either way.
    start = time.perf_counter()
    n_plane = 8
    checked = 0
    seed = 0
    while checked < 20:
        points, anchor, order = make_planted_fixture(seed, n_plane=n_plane, n_off=4, dim=8)
        config = ManifoldConfig(dim=2, quality_threshold=90.0, pool_size=len(order))
        fitted = manifold.fit_neighborhood(points, anchor, order, config)
        expected = greedy_plane_scan(points, anchor, order, 2, 90.0)
        assert fitted.member_indices.tolist() == expected, f"fixture {seed} diverged"
        if all(i < n_plane for i in order[:4]):
            assert set(map(int, fitted.member_indices)) == set(range(n_plane)), (
                f"fixture {seed}: members {sorted(fitted.member_indices)} are not "
                f"exactly the planted plane"
            )
            checked += 1
        seed += 1
    elapsed = time.perf_counter() - start
    _report(
        4,
        elapsed < 10.0,
        f"{checked} fixtures (of {seed} scanned) recover the planted plane "
        f"exactly and every fixture matches the residual-oracle scan, "
        f"{elapsed:.2f}s (limit 10s)",
    )


def test_criterion_05_untrained_probe_beats_kmeans_supervision():
    ours_purity, kmeans_purity, ours_corr, kmeans_corr = [], [], [], []
    with threadpool_limits(limits=1):
        for seed in BENCHMARK_SEEDS:
            ds = data.generate_synthetic(SyntheticSpec(seed=seed))
            probe = embedder.MLPParams.initialize(
                (ds.dim, 64, 64, 64, 64, 64, 64, 4), seed=1000 + seed, gain=10.0
            )
            embeds = embedder.forward(probe, ds.features)
            report = evaluation.evaluate_embeddings(
                embeds,
                ds.labels,
                ManifoldConfig(pool_size=20),
                SimilarityConfig(),
                seed=seed,
            )
            ours_purity.append(report.neighborhood_purity)
            kmeans_purity.append(report.kmeans_purity)
            ours_corr.append(report.similarity_correlation)
            kmeans_corr.append(report.kmeans_correlation)
    med = np.median
    purity_gap = med(ours_purity) - med(kmeans_purity)
    corr_gap = med(ours_corr) - med(kmeans_corr)
    _report(
        5,
        purity_gap >= 0.05 and corr_gap >= 0.05,
        f"median purity {med(ours_purity):.3f} vs kmeans {med(kmeans_purity):.3f} "
        f"(gap {purity_gap:+.3f}), median correlation {med(ours_corr):.3f} vs "
        f"kmeans {med(kmeans_corr):.3f} (gap {corr_gap:+.3f}), limits >= 0.05",
    )


def test_criterion_06_training_improves_heldout_retrieval(benchmark_outcomes):
    runs = benchmark_outcomes["full"]
    deltas = [after - before for before, after, _ in runs]
    slowest = max(elapsed for _, _, elapsed in runs)
    med = float(np.median(deltas))
    _report(
        6,
        med >= 5.0 and slowest < 180.0,
        f"median R@1 gain {med:+.1f} points over the untrained encoder "
        f"(limit +5.0; per-seed {[round(d, 1) for d in deltas]}), "
        f"slowest run {slowest:.0f}s (limit 180s)",
    )


def test_criterion_07_full_method_beats_ablations(benchmark_outcomes):
    finals = {
        tag: float(np.median([after for _, after, _ in runs]))
        for tag, runs in benchmark_outcomes.items()
    }
    _report(
        7,
        finals["full"] >= finals["knn"] and finals["full"] >= finals["binary"],
        f"median final R@1: full {finals['full']:.1f} vs knn-only {finals['knn']:.1f} "
        f"and binary {finals['binary']:.1f} (full must be >= both)",
    )


def test_criterion_08_loss_gating_routes_updates_exactly():
    rng = np.random.default_rng(5)
    ds = FeatureDataset(rng.standard_normal((40, 8)))

    def build(loss: LossConfig) -> Trainer:
        return Trainer.initialize(
            ds,
            TrainConfig(
                manifold=ManifoldConfig(dim=2, quality_threshold=60.0, pool_size=4),
                sampler=SamplerConfig(batch_size=20, n_seeds=4),
                loss=loss,
                hidden_sizes=(16,),
                embed_dim=6,
                n_proxies=6,
                seed=11,
            ),
        )

    batch = ds.features[:20]
    _, theta_full, _, _ = build(LossConfig()).step_gradients(batch)
    _, theta_gated, _, _ = build(LossConfig(neighborhood_weight=0.0)).step_gradients(batch)
    theta_identical = all(np.array_equal(a, b) for a, b in zip(theta_full, theta_gated))

    _, _, loc_full, frames_full = build(LossConfig()).step_gradients(batch)
    _, _, loc_gated, frames_gated = build(LossConfig(point_weight=0.0)).step_gradients(batch)
    psi_identical = np.array_equal(frames_full, frames_gated) and np.array_equal(
        loc_full, loc_gated
    )
    _report(
        8,
        theta_identical and psi_identical,
        "encoder gradients bit-identical with the neighborhood loss zeroed: "
        f"{theta_identical}; proxy gradients bit-identical with the point "
        f"loss zeroed: {psi_identical}",
    )


def test_criterion_09_cli_fixed_seed_runs_are_byte_identical(tmp_path):
    def cli(*args):
        proc = subprocess.run(
            [sys.executable, "-m", "plmetric", "--threads", "1", *args],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0, proc.stderr
        return proc

    dataset = tmp_path / "bench.plmf"
    cli(
        "gen", "--classes", "4", "--points-per-class", "40", "--ambient-dim", "16",
        "--seed", "7", "--out", str(dataset),
    )
    config = tmp_path / "run.json"
    config.write_text(
        json.dumps(
            {
                "dataset": str(dataset),
                "manifold_dim": 2,
                "quality_threshold": 60.0,
                "pool_size": 6,
                "batch_size": 20,
                "n_seeds": 4,
                "hidden_sizes": [16],
                "embed_dim": 6,
                "n_proxies": 10,
                "lr": 1e-3,
                "epochs": 3,
                "seed": 5,
            }
        )
    )
    cli("train", "--config", str(config), "--out-dir", str(tmp_path / "a"))
    cli("train", "--config", str(config), "--out-dir", str(tmp_path / "b"))
    blob_a = (tmp_path / "a" / "checkpoint.plck").read_bytes()
    blob_b = (tmp_path / "b" / "checkpoint.plck").read_bytes()
    _report(
        9,
        blob_a == blob_b,
        f"two --threads 1 CLI runs from one seed wrote identical "
        f"{len(blob_a)}-byte checkpoints",
    )


def test_criterion_10_resume_at_epoch_3_of_6_is_bit_exact(tmp_path):
    rng = np.random.default_rng(5)
    ds = FeatureDataset(rng.standard_normal((40, 8)))
    config = TrainConfig(
        manifold=ManifoldConfig(dim=2, quality_threshold=60.0, pool_size=4),
        sampler=SamplerConfig(batch_size=20, n_seeds=4),
        hidden_sizes=(16,),
        embed_dim=6,
        lr=1e-3,
        proxy_lr_scale=10.0,
        n_proxies=6,
        epochs=6,
        seed=11,
    )
    straight = Trainer.initialize(ds, config)
    straight.run()

    paused = Trainer.initialize(ds, config)
    for _ in range(3):
        paused.run_epoch()
    trainer.save_checkpoint(paused, tmp_path / "pause.plck")
    resumed = trainer.trainer_from_checkpoint(tmp_path / "pause.plck", ds)
    resumed.run()

    epoch4_straight = [r for r in straight.history if r["epoch"] == 4]
    epoch4_resumed = [r for r in resumed.history if r["epoch"] == 4]
    first_losses_match = (
        bool(epoch4_straight)
        and epoch4_straight[0]["total"] == epoch4_resumed[0]["total"]
    )
    _report(
        10,
        first_losses_match and straight.history == resumed.history,
        f"epoch-4 losses after resuming at 3 of 6 match bit-exactly "
        f"(first step total {epoch4_straight[0]['total']!r}); full step "
        f"histories identical",
    )
