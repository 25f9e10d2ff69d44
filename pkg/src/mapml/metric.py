"""Metric stage: active-triplet SGD on the proximal hinge upper bound.

One stage solves, over the Frobenius ball of radius delta,

    lam/2 ||M - M_prev||_F^2
      + sum_t [1 + margin(o_t) - (D^2_M(z_o, z_q) - D^2_M(z_o, z_p))]_+

by strongly-convex SGD over the set of triplets that violate their margin
under M_prev, with step 1/(lam * s), a Frobenius-ball check every step,
suffix averaging of the last half of the iterates, and a single PSD
projection at the end. Margins are frozen under M_prev for the whole
stage; intermediate iterates may be indefinite.
"""

import time
from dataclasses import dataclass

import numpy as np

from . import core
from .core import Metric, TrainConfig, pairwise_mahalanobis_sq
from .latent import LatentModel


@dataclass
class ActiveSet:
    """Triplets violating their margin under the construction-time metric.

    ``triplets`` is an (T, 3) int array of (anchor, same-class,
    other-class) latent indices; ``margins_snapshot`` holds the per-latent
    margins frozen at construction.
    """

    triplets: np.ndarray
    margins_snapshot: np.ndarray

    def __len__(self):
        return self.triplets.shape[0]


def _sample_without_replacement(total: int, size: int, rng: np.random.Generator) -> np.ndarray:
    """Sorted uniform sample of ``size`` distinct ints from range(total)."""
    if size >= total:
        return np.arange(total, dtype=np.int64)
    if total <= 4 * size:
        return np.sort(rng.permutation(total)[:size].astype(np.int64))
    # sparse regime: rejection sampling converges in a couple of rounds
    picked = np.empty(0, dtype=np.int64)
    while picked.size < size:
        need = size - picked.size
        draw = rng.integers(0, total, size=int(need * 1.2) + 16)
        picked = np.union1d(picked, draw)
    # union1d sorts; drop a uniform choice of the surplus to stay unbiased
    if picked.size > size:
        drop = rng.permutation(picked.size)[: picked.size - size]
        picked = np.delete(picked, np.sort(drop))
    return picked


def build_active_set(model: LatentModel, metric_prev: Metric, cap: int, seed: int) -> ActiveSet:
    """Enumerate margin-violating triplets under ``metric_prev``.

    Scans all (o, p, q) with label(p) = label(o), p != o, label(q) !=
    label(o) in ascending order and keeps those with a strictly positive
    hinge. If more than ``cap`` violate, a uniform subsample without
    replacement (driven by ``seed``) is retained, preserving enumeration
    order. An empty result is legal.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    E = pairwise_mahalanobis_sq(metric_prev, model.latents)
    labels = model.latent_labels
    margins = model.cluster_margins
    m = model.m
    classes = np.unique(labels)
    same_list = {int(r): np.nonzero(labels == r)[0] for r in classes}
    diff_list = {int(r): np.nonzero(labels != r)[0] for r in classes}

    def anchor_mask(o):
        r = int(labels[o])
        same = same_list[r]
        same = same[same != o]
        diff = diff_list[r]
        if same.size == 0 or diff.size == 0:
            return None, None, None
        # hinge > 0  <=>  E[o,q] - E[o,p] < 1 + margin(o)
        mask = (E[o, diff][None, :] - E[o, same][:, None]) < (1.0 + margins[o])
        return mask, same, diff

    # single scan; keep materialized rows as long as they fit under the cap
    counts = np.zeros(m, dtype=np.int64)
    rows = []
    total = 0
    for o in range(m):
        mask, same, diff = anchor_mask(o)
        if mask is None:
            continue
        c = int(mask.sum())
        counts[o] = c
        total += c
        if rows is not None and c:
            if total <= cap:
                p_idx, q_idx = np.nonzero(mask)
                rows.append(np.column_stack([
                    np.full(c, o, dtype=np.int64), same[p_idx], diff[q_idx]]))
            else:
                rows = None  # over the cap: fall back to sampled second pass
    if total == 0:
        return ActiveSet(np.empty((0, 3), dtype=np.int64), margins.copy())
    if rows is not None:
        return ActiveSet(np.concatenate(rows, axis=0), margins.copy())

    rng = np.random.default_rng(seed)
    ranks = _sample_without_replacement(total, cap, rng)
    rows = []
    base = 0
    for o in range(m):
        if counts[o] == 0:
            continue
        hi = base + counts[o]
        sel = ranks[(ranks >= base) & (ranks < hi)]
        base = hi
        if sel.size == 0:
            continue
        local = sel - (hi - counts[o])
        mask, same, diff = anchor_mask(o)
        p_idx, q_idx = np.nonzero(mask)
        rows.append(np.column_stack([
            np.full(local.size, o, dtype=np.int64),
            same[p_idx[local]], diff[q_idx[local]]]))
    return ActiveSet(np.concatenate(rows, axis=0), margins.copy())


def hinge_subgradient(metric: Metric, metric_prev: Metric, triplet,
                      model: LatentModel, lam: float) -> np.ndarray:
    """Subgradient of one triplet's term of the stage objective at ``metric``.

    Always contains the proximal part lam * (M - M_prev); the rank-2 hinge
    part (z_o - z_p)(z_o - z_p)^T - (z_o - z_q)(z_o - z_q)^T is added only
    when the hinge argument is positive under the *current* metric (the
    margin stays frozen under ``metric_prev``).
    """
    o, p, q = (int(v) for v in triplet)
    z = model.latents
    u = z[o] - z[p]
    v = z[o] - z[q]
    M = metric.matrix
    arg = (1.0 + model.cluster_margins[o]) - (float(v @ M @ v) - float(u @ M @ u))
    g = lam * (metric.matrix - metric_prev.matrix)
    if arg > 0.0:
        g = g + np.outer(u, u) - np.outer(v, v)
    return g


def frobenius_project(M: np.ndarray, delta: float) -> np.ndarray:
    """Scale M back onto the Frobenius ball of radius delta if outside."""
    if delta <= 0:
        raise ValueError(f"delta must be > 0, got {delta}")
    M = np.asarray(M, dtype=np.float64)
    norm = np.linalg.norm(M)
    if norm <= delta:
        return M
    return M * (delta / norm)


def psd_project(M: np.ndarray) -> Metric:
    """Nearest PSD matrix: symmetrize, clamp negative eigenvalues to zero."""
    M = np.asarray(M, dtype=np.float64)
    sym = 0.5 * (M + M.T)
    w, V = np.linalg.eigh(sym)
    np.maximum(w, 0.0, out=w)
    out = (V * w) @ V.T
    return Metric(0.5 * (out + out.T))


def alpha_suffix_average(iterates, S: int) -> np.ndarray:
    """Mean of the iterates with (1-based) index in (S/2, S]."""
    if S % 2 != 0:
        raise ValueError(f"S must be even, got {S}")
    mats = list(iterates)
    if len(mats) != S:
        raise ValueError(f"expected {S} iterates, got {len(mats)}")
    half = S // 2
    acc = np.zeros_like(np.asarray(mats[0], dtype=np.float64))
    for M in mats[half:]:
        acc += np.asarray(M, dtype=np.float64)
    return acc * (2.0 / S)


def proximal_hinge_sgd(points: np.ndarray, step_triplets: np.ndarray,
                       margins: np.ndarray, M_prev: np.ndarray,
                       lam: float, delta: float) -> np.ndarray:
    """Projected SGD on the proximal hinge objective; returns the suffix average.

    Visits ``step_triplets`` rows (o, p, q into ``points``) in order, one
    per step s = 1..S, with step size 1/(lam*s), a Frobenius-ball check
    after every update, and the mean of the last S/2 iterates as output
    (not yet PSD-projected). The metric stage and the random-triplet
    baseline share this loop; only the triplet stream and margins differ.
    """
    S = step_triplets.shape[0]
    Mp = M_prev
    M = Mp.copy()
    buf = np.empty_like(M)
    accum = np.zeros_like(M)
    half = S // 2
    delta2 = delta * delta
    for s in range(1, S + 1):
        o, p, q = step_triplets[s - 1]
        u = points[o] - points[p]
        v = points[o] - points[q]
        du = float(u @ M @ u)
        dv = float(v @ M @ v)
        active = (1.0 + margins[o]) - (dv - du) > 0.0
        # M <- (1 - 1/s) M + (1/s) M_prev - 1/(lam s) * hinge part
        inv_s = 1.0 / s
        M *= 1.0 - inv_s
        np.multiply(Mp, inv_s, out=buf)
        M += buf
        if active:
            coef = 1.0 / (lam * s)
            np.outer(u, u, out=buf)
            buf *= coef
            M -= buf
            np.outer(v, v, out=buf)
            buf *= coef
            M += buf
        norm2 = float(np.dot(M.ravel(), M.ravel()))
        if norm2 > delta2:
            M *= delta / np.sqrt(norm2)
        if core.DEBUG_CHECKS:
            assert np.linalg.norm(M) <= delta * (1 + 1e-12), "iterate left the Frobenius ball"
            assert np.abs(M - M.T).max() <= core.SYMMETRY_TOL, "iterate lost symmetry"
        if s > half:
            accum += M
    accum *= 2.0 / S
    return accum


def run_metric_stage(model: LatentModel, metric_prev: Metric, cfg: TrainConfig,
                     seed=None, stats=None) -> Metric:
    """One metric stage: active-set SGD, suffix average, terminal PSD projection.

    Samples uniformly with replacement from the active set built under
    ``metric_prev``. If the active set is empty (or the step budget is
    zero) the previous metric is PSD-projected and returned unchanged.
    ``stats``, when given a dict, receives the active-set size and build
    time. Identical seeds give bitwise-identical outputs.
    """
    if seed is None:
        seed = cfg.rng_seed
    s_build, s_sgd = np.random.SeedSequence(seed).spawn(2)
    t0 = time.perf_counter()
    aset = build_active_set(model, metric_prev, cfg.active_set_cap,
                            int(s_build.generate_state(1)[0]))
    build_seconds = time.perf_counter() - t0
    if stats is not None:
        stats["active_set_size"] = len(aset)
        stats["active_set_seconds"] = build_seconds
    S = cfg.inner_iters
    if len(aset) == 0 or S == 0:
        return psd_project(metric_prev.matrix)
    rng = np.random.default_rng(s_sgd)
    picks = rng.integers(0, len(aset), size=S)
    avg = proximal_hinge_sgd(model.latents, aset.triplets[picks],
                             aset.margins_snapshot, metric_prev.matrix,
                             cfg.lam, cfg.delta)
    return psd_project(avg)


def stage_objective(metric: Metric, metric_prev: Metric, aset: ActiveSet,
                    model: LatentModel, lam: float) -> float:
    """Exact stage objective over an active set (for tests and diagnostics)."""
    diff = metric.matrix - metric_prev.matrix
    val = 0.5 * lam * float(np.dot(diff.ravel(), diff.ravel()))
    if len(aset) == 0:
        return val
    t = aset.triplets
    z = model.latents
    M = metric.matrix
    dop = z[t[:, 0]] - z[t[:, 1]]
    doq = z[t[:, 0]] - z[t[:, 2]]
    dp = np.einsum("ij,ij->i", dop @ M, dop)
    dq = np.einsum("ij,ij->i", doq @ M, doq)
    args = (1.0 + aset.margins_snapshot[t[:, 0]]) - (dq - dp)
    return val + float(np.sum(args[args > 0.0]))
