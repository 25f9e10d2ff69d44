"""Core types and the squared Mahalanobis distance kernel.

Everything downstream (latent estimation, metric SGD, kNN evaluation)
works in terms of the types defined here. All distance computations are
double precision; there is no single-precision fast path.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

# Squared distances above this threshold are treated as rounding noise and
# clamped to zero; anything more negative signals a genuinely indefinite
# matrix and is propagated untouched (legal mid-optimization).
NEG_CLAMP = -1e-9

# Symmetry tolerance for metric matrices (absolute, per entry).
SYMMETRY_TOL = 1e-9

# When True, stages run extra per-step invariant checks (symmetry, norm
# bounds, loss half-inequalities). Off by default: the checks are O(d^2)
# per SGD step.
DEBUG_CHECKS = False


class Dataset:
    """Labeled feature vectors: an (n, d) matrix plus one label per row.

    Labels are re-indexed to 0..C-1 internally; the original label values
    are kept in ``label_names`` for reporting (``label_names[labels[i]]``
    recovers the input label of row i).
    """

    def __init__(self, features, labels):
        features = np.array(features, dtype=np.float64, order="C")
        if features.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {features.shape}")
        if features.shape[0] < 1 or features.shape[1] < 1:
            raise ValueError(f"features must be non-empty, got shape {features.shape}")
        if not np.isfinite(features).all():
            raise ValueError("features contain non-finite entries")
        labels = np.asarray(labels)
        if labels.ndim != 1 or labels.shape[0] != features.shape[0]:
            raise ValueError(
                f"labels must be 1-D with one entry per row: "
                f"{labels.shape} vs {features.shape[0]} rows"
            )
        self.features = features
        self.label_names, self.labels = np.unique(labels, return_inverse=True)
        self.labels = self.labels.astype(np.int64)
        self.features.flags.writeable = False
        self.labels.flags.writeable = False

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def class_indices(self, r: int) -> np.ndarray:
        """Row indices of class ``r`` (internal label)."""
        return np.nonzero(self.labels == r)[0]

    def __repr__(self):
        return f"Dataset(n={self.n}, d={self.d}, classes={self.n_classes})"


class Metric:
    """A symmetric d x d matrix defining a squared Mahalanobis distance.

    The matrix may be indefinite mid-optimization (one-projection
    paradigm); a finalized metric has min eigenvalue >= -1e-9.
    """

    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=np.float64, order="C")
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"metric matrix must be square, got {matrix.shape}")
        if not np.isfinite(matrix).all():
            raise ValueError("metric matrix contains non-finite entries")
        asym = np.abs(matrix - matrix.T).max()
        if asym > SYMMETRY_TOL:
            raise ValueError(f"metric matrix is asymmetric (max |M - M^T| = {asym:g})")
        self.matrix = matrix
        self.matrix.flags.writeable = False

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def identity(cls, d: int) -> "Metric":
        return cls(np.eye(d))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def __repr__(self):
        return f"Metric(dim={self.dim})"


class TripletConstraint(NamedTuple):
    """Latent-index triple: anchor ``o``, same-class ``p``, other-class ``q``."""

    o: int
    p: int
    q: int


@dataclass
class TrainConfig:
    """Hyperparameters for the alternating trainer.

    tau             percent ratio of latent to original examples (0 < tau <= 100)
    gamma           proximal weight anchoring latents to the previous outer
                    iterate (>= 0)
    lam             strong-convexity weight of the metric subproblem (> 0)
    delta           Frobenius-norm bound on the metric (> 0)
    outer_iters     alternations of the latent and metric stages (K)
    inner_iters     SGD steps per metric stage (S, even: the suffix average
                    covers the last S/2 iterates)
    latent_em_iters assignment/update sweeps per latent stage
    active_set_cap  maximum number of retained violated triplets
    tie_tolerance   absolute tolerance on squared distances when breaking
                    assignment ties toward the smaller latent index
    """

    tau: float = 10.0
    gamma: float = 1.0
    lam: float = 10.0
    delta: float = 100.0
    outer_iters: int = 10
    inner_iters: int = 10_000
    latent_em_iters: int = 10
    rng_seed: int = 0
    active_set_cap: int = 200_000
    tie_tolerance: float = 1e-12

    def __post_init__(self):
        if not 0.0 < self.tau <= 100.0:
            raise ValueError(f"tau must be in (0, 100], got {self.tau}")
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if self.lam <= 0:
            raise ValueError(f"lam must be > 0, got {self.lam}")
        if self.delta <= 0:
            raise ValueError(f"delta must be > 0, got {self.delta}")
        if self.outer_iters < 0:
            raise ValueError(f"outer_iters must be >= 0, got {self.outer_iters}")
        if self.inner_iters < 0 or self.inner_iters % 2 != 0:
            raise ValueError(f"inner_iters must be even and >= 0, got {self.inner_iters}")
        if self.latent_em_iters < 1:
            raise ValueError(f"latent_em_iters must be >= 1, got {self.latent_em_iters}")
        if self.active_set_cap < 1:
            raise ValueError(f"active_set_cap must be >= 1, got {self.active_set_cap}")
        if self.tie_tolerance < 0:
            raise ValueError(f"tie_tolerance must be >= 0, got {self.tie_tolerance}")


def mahalanobis_sq(metric: Metric, a, b) -> float:
    """Squared Mahalanobis distance (a - b)^T M (a - b).

    Tiny negative results (rounding noise above NEG_CLAMP) are clamped to
    zero; larger negatives are returned as-is since they signal an
    indefinite M, which is legal mid-optimization.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    d = metric.dim
    if a.shape != (d,) or b.shape != (d,):
        raise ValueError(f"expected vectors of dim {d}, got {a.shape} and {b.shape}")
    diff = a - b
    val = float(diff @ metric.matrix @ diff)
    if NEG_CLAMP < val < 0.0:
        return 0.0
    return val


def pairwise_mahalanobis_sq(metric: Metric, A, B=None) -> np.ndarray:
    """All squared Mahalanobis distances between rows of A and rows of B.

    Uses the expansion a^T M a + b^T M b - 2 a^T M b (M symmetric), with
    the same tiny-negative clamping as :func:`mahalanobis_sq`.
    """
    A = np.asarray(A, dtype=np.float64)
    B = A if B is None else np.asarray(B, dtype=np.float64)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != metric.dim or B.shape[1] != metric.dim:
        raise ValueError(
            f"expected 2-D arrays with {metric.dim} columns, got {A.shape} and {B.shape}"
        )
    AM = A @ metric.matrix
    qa = np.einsum("ij,ij->i", AM, A)
    if B is A:
        BM, qb = AM, qa
    else:
        BM = B @ metric.matrix
        qb = np.einsum("ij,ij->i", BM, B)
    out = qa[:, None] + qb[None, :] - 2.0 * (AM @ B.T)
    np.copyto(out, 0.0, where=(out > NEG_CLAMP) & (out < 0.0))
    return out


def triplet_universe(latent_labels) -> np.ndarray:
    """All valid (o, p, q) rows: label(p) = label(o), p != o, label(q) != label(o).

    Enumeration is in ascending (o, p, q) order. The universe is cubic in
    the number of latents; callers at scale should prefer
    :func:`full_loss_all`, which never materializes it.
    """
    labels = np.asarray(latent_labels)
    m = labels.shape[0]
    rows = []
    for o in range(m):
        same = np.nonzero(labels == labels[o])[0]
        same = same[same != o]
        diff = np.nonzero(labels != labels[o])[0]
        if same.size == 0 or diff.size == 0:
            continue
        p = np.repeat(same, diff.size)
        q = np.tile(diff, same.size)
        rows.append(np.column_stack([np.full(p.size, o, dtype=np.int64), p, q]))
    if not rows:
        return np.empty((0, 3), dtype=np.int64)
    return np.concatenate(rows, axis=0)


def hinge_arguments(metric: Metric, latent_model, triplets) -> np.ndarray:
    """Per-triplet hinge arguments 1 + margin(o) - (D^2(o,q) - D^2(o,p))."""
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    if t.size == 0:
        return np.zeros(0)
    m = latent_model.m
    if t.min() < 0 or t.max() >= m:
        raise IndexError(f"triplet index out of range [0, {m})")
    z = latent_model.latents
    M = metric.matrix
    dop = z[t[:, 0]] - z[t[:, 1]]
    doq = z[t[:, 0]] - z[t[:, 2]]
    dp = np.einsum("ij,ij->i", dop @ M, dop)
    dq = np.einsum("ij,ij->i", doq @ M, doq)
    np.copyto(dp, 0.0, where=(dp > NEG_CLAMP) & (dp < 0.0))
    np.copyto(dq, 0.0, where=(dq > NEG_CLAMP) & (dq < 0.0))
    return (1.0 + latent_model.cluster_margins[t[:, 0]]) - (dq - dp)


def full_loss(metric: Metric, latent_model, triplets) -> float:
    """Total hinge loss of the given triplet constraints.

    Margins come from ``latent_model.cluster_margins`` and must have been
    computed under the metric of the current outer iterate (the driver
    maintains this).
    """
    args = hinge_arguments(metric, latent_model, triplets)
    if args.size == 0:
        return 0.0
    if not np.isfinite(args).all():
        return float("nan")
    return float(np.sum(args[args > 0.0]))


def full_loss_all(metric: Metric, latent_model) -> float:
    """Hinge loss over the full triplet universe, without materializing it.

    Equivalent to ``full_loss(metric, latent_model,
    triplet_universe(latent_model.latent_labels))`` but runs anchor by
    anchor off the pairwise latent distance matrix.
    """
    E = pairwise_mahalanobis_sq(metric, latent_model.latents)
    if not np.isfinite(E).all():
        return float("nan")
    labels = latent_model.latent_labels
    margins = latent_model.cluster_margins
    total = 0.0
    for r in np.unique(labels):
        same = np.nonzero(labels == r)[0]
        diff = np.nonzero(labels != r)[0]
        if same.size < 2 or diff.size == 0:
            continue
        for o in same:
            a = E[o, same[same != o]]
            b = E[o, diff]
            h = (1.0 + margins[o]) + a[:, None] - b[None, :]
            total += float(np.sum(h[h > 0.0]))
    return total
