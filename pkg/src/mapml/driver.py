"""Alternating trainer: latent stage, metric stage, loss monitoring.

The monitored loss after outer iteration k is the hinge loss over the
full latent-triplet universe with margins computed under the previous
metric (the objective the two stages actually optimized). The loss
sequence is expected to be non-increasing; violations beyond tolerance
are logged, not fatal, since SGD only approximately minimizes the stage
upper bound.
"""

import logging
import time
from dataclasses import dataclass

import numpy as np

from . import core
from .core import Dataset, Metric, TrainConfig, full_loss_all
from .latent import (LatentModel, assign_membership, compute_margins,
                     init_latents, run_latent_stage)
from .metric import proximal_hinge_sgd, psd_project, run_metric_stage

logger = logging.getLogger(__name__)

# Relative slack allowed before a loss increase is reported.
MONOTONE_RTOL = 1e-6


@dataclass
class TrainResult:
    """Everything a training run produces.

    loss_trace has outer_iters + 1 entries (after init, then after each
    iteration); wall_times is (outer_iters, 2) seconds per stage
    (latent, metric). The baseline trainer leaves loss_trace empty: it
    has no latent objective to monitor.
    """

    metric: Metric
    latent_model: LatentModel
    loss_trace: np.ndarray
    wall_times: np.ndarray
    config: TrainConfig = None


def _seed_streams(seed: int, count: int) -> list:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(count)]


def train_mapml(data: Dataset, cfg: TrainConfig, log_sink=None) -> TrainResult:
    """Alternate the latent and metric stages for cfg.outer_iters rounds.

    ``log_sink``, when given, receives one dict per outer iteration with
    keys k, loss, active_set_size, latent_seconds, metric_seconds,
    active_set_seconds.
    """
    seeds = _seed_streams(cfg.rng_seed, 1 + cfg.outer_iters)
    metric = Metric.identity(data.d)
    model = init_latents(data, cfg.tau, seeds[0])
    losses = [full_loss_all(metric, model)]
    if not np.isfinite(losses[0]):
        raise FloatingPointError("non-finite loss after initialization")
    times = np.zeros((cfg.outer_iters, 2))
    for k in range(1, cfg.outer_iters + 1):
        if core.DEBUG_CHECKS:
            before = compute_margins(
                data, assign_membership(data, model, metric, cfg.tie_tolerance), metric)
            loss_before = full_loss_all(metric, before)

        t0 = time.perf_counter()
        model = run_latent_stage(data, model, metric, cfg)
        t_latent = time.perf_counter() - t0

        if core.DEBUG_CHECKS:
            loss_mid = full_loss_all(metric, model)
            if loss_mid > loss_before + MONOTONE_RTOL * abs(loss_before):
                logger.warning("latent stage raised the loss at k=%d: %.12g -> %.12g",
                               k, loss_before, loss_mid)

        stats = {}
        t0 = time.perf_counter()
        new_metric = run_metric_stage(model, metric, cfg, seed=seeds[k], stats=stats)
        t_metric = time.perf_counter() - t0

        loss_k = full_loss_all(new_metric, model)
        if not np.isfinite(loss_k):
            raise FloatingPointError(f"non-finite loss at outer iteration {k}")
        if core.DEBUG_CHECKS:
            loss_mid = full_loss_all(metric, model)
            if loss_k > loss_mid + MONOTONE_RTOL * abs(loss_mid):
                logger.warning("metric stage raised the loss at k=%d: %.12g -> %.12g",
                               k, loss_mid, loss_k)
        if loss_k > losses[-1] + MONOTONE_RTOL * abs(losses[-1]):
            logger.warning("loss increased at outer iteration %d: %.12g -> %.12g",
                           k, losses[-1], loss_k)
        metric = new_metric
        losses.append(loss_k)
        times[k - 1] = (t_latent, t_metric)
        if log_sink is not None:
            log_sink({
                "k": k,
                "loss": loss_k,
                "active_set_size": stats.get("active_set_size", 0),
                "latent_seconds": t_latent,
                "metric_seconds": t_metric,
                "active_set_seconds": stats.get("active_set_seconds", 0.0),
            })
    if cfg.outer_iters == 0:
        metric = psd_project(metric.matrix)
    return TrainResult(metric=metric, latent_model=model,
                       loss_trace=np.asarray(losses), wall_times=times, config=cfg)


def _trivial_latent_model(data: Dataset) -> LatentModel:
    """Each original example as its own latent, margins zero."""
    counts = np.bincount(data.labels, minlength=data.n_classes)
    order = np.argsort(data.labels, kind="stable")
    rank = np.empty(data.n, dtype=np.int64)
    rank[order] = np.arange(data.n)
    return LatentModel(
        latents=data.features[order],
        latent_labels=data.labels[order],
        membership=rank,
        cluster_margins=np.zeros(data.n),
        per_class_counts=counts,
    )


def train_random_triplet_baseline(data: Dataset, cfg: TrainConfig,
                                  steps=None) -> TrainResult:
    """Random-triplet SGD baseline over the original examples.

    Samples ``steps`` (default cfg.inner_iters) triplets (x_i, x_j, x_k)
    with y_i = y_j != y_k uniformly from the data, runs the same proximal
    hinge SGD as the metric stage with a fixed margin of 1 anchored at the
    identity, and PSD-projects once at the end. With zero steps the
    identity metric is returned. The returned latent model is the trivial
    identity assignment.
    """
    S = cfg.inner_iters if steps is None else int(steps)
    if S % 2 != 0:
        raise ValueError(f"steps must be even, got {S}")
    counts = np.bincount(data.labels, minlength=data.n_classes)
    if (counts < 2).any():
        bad = int(np.argmin(counts))
        raise ValueError(f"class {data.label_names[bad]!r} has fewer than 2 examples")
    t0 = time.perf_counter()
    model = _trivial_latent_model(data)
    if S == 0:
        metric = Metric.identity(data.d)
    else:
        rng = np.random.default_rng(cfg.rng_seed)
        y = data.labels
        class_rows = [data.class_indices(r) for r in range(data.n_classes)]
        other_rows = [np.nonzero(y != r)[0] for r in range(data.n_classes)]
        triplets = np.empty((S, 3), dtype=np.int64)
        for s in range(S):
            i = int(rng.integers(data.n))
            r = int(y[i])
            rows = class_rows[r]
            j = i
            while j == i:
                j = int(rows[rng.integers(rows.size)])
            k = int(other_rows[r][rng.integers(other_rows[r].size)])
            triplets[s] = (i, j, k)
        avg = proximal_hinge_sgd(data.features, triplets, np.zeros(data.n),
                                 np.eye(data.d), cfg.lam, cfg.delta)
        metric = psd_project(avg)
    elapsed = time.perf_counter() - t0
    return TrainResult(metric=metric, latent_model=model,
                       loss_trace=np.empty(0), wall_times=np.array([[0.0, elapsed]]),
                       config=cfg)
